#pragma once

// Canonical on-disk form of corpora and training files, plus corpus statistics.
//
// Corpus file layout (UTF-8, "\n" line endings):
//   line 1   header  {"format","schema_version","task_id","template_version",
//                     "prompt_set_fingerprint","provenance","instances","n_samples","body_sha256"}
//   line 2.. samples {"instance_id","sample_index","raw_text","rationale","predicted",
//                     "parse_status","mean_logprob","teacher":{"model_id","temperature","max_tokens"}}
// Keys are sorted; body_sha256 covers every byte after the header line.

#include "scotd/corpus.hpp"
#include "scotd/detail/format.hpp"
#include "scotd/detail/hash.hpp"
#include "scotd/error.hpp"
#include "scotd/filters.hpp"
#include "scotd/task.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace scotd {

inline constexpr std::string_view kCorpusFormat = "scotd-corpus";
inline constexpr int kCorpusSchemaVersion = 1;

inline json sample_to_json(const CoTSample& s) {
    return json{{"instance_id", s.instance_id},
                {"sample_index", s.sample_index},
                {"raw_text", s.raw_text},
                {"rationale", s.parsed.rationale_text},
                {"predicted", s.parsed.predicted_label ? json(*s.parsed.predicted_label) : json(nullptr)},
                {"parse_status", std::string(to_string(s.parsed.parse_status))},
                {"mean_logprob", s.mean_logprob ? json(detail::round_sig6(*s.mean_logprob)) : json(nullptr)},
                {"teacher", json{{"model_id", s.teacher.model_id},
                                 {"temperature", s.teacher.temperature},
                                 {"max_tokens", s.teacher.max_tokens}}}};
}

inline CoTSample sample_from_json(const json& j) {
    try {
        CoTSample s;
        s.instance_id = j.at("instance_id").get<std::string>();
        s.sample_index = j.at("sample_index").get<int>();
        s.raw_text = j.at("raw_text").get<std::string>();
        s.parsed.rationale_text = j.at("rationale").get<std::string>();
        if (!j.at("predicted").is_null()) s.parsed.predicted_label = j.at("predicted").get<std::string>();
        s.parsed.parse_status = parse_status_from_string(j.at("parse_status").get<std::string>());
        if (s.parsed.ok() != s.parsed.predicted_label.has_value()) {
            throw DataError("parse_status and predicted label disagree");
        }
        if (!j.at("mean_logprob").is_null()) s.mean_logprob = j.at("mean_logprob").get<double>();
        const auto& t = j.at("teacher");
        s.teacher = TeacherParams{t.at("model_id").get<std::string>(), t.at("temperature").get<double>(),
                                  t.at("max_tokens").get<int>()};
        return s;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed sample: ") + e.what());
    }
}

inline std::string serialize_corpus(const DistillationCorpus& corpus) {
    std::string body;
    json ids = json::array();
    std::size_t n = 0;
    for (const auto& [id, samples] : corpus.entries) {
        ids.push_back(id);
        for (const auto& s : samples) {
            body += sample_to_json(s).dump();
            body += '\n';
            ++n;
        }
    }
    json provenance = json::array();
    for (const auto& p : corpus.provenance) provenance.push_back(to_json(p));
    const json header{{"format", std::string(kCorpusFormat)},
                      {"schema_version", kCorpusSchemaVersion},
                      {"task_id", corpus.task_id},
                      {"template_version", corpus.template_version},
                      {"prompt_set_fingerprint", corpus.prompt_set_fingerprint},
                      {"provenance", provenance},
                      {"instances", ids},
                      {"n_samples", n},
                      {"body_sha256", detail::sha256_hex(body)}};
    return header.dump() + "\n" + body;
}

inline DistillationCorpus parse_corpus(std::string_view text, const std::string& origin = "corpus") {
    const auto nl = text.find('\n');
    if (nl == std::string_view::npos) throw DataError(origin + ": missing header line");
    json header;
    try {
        header = json::parse(text.substr(0, nl));
    } catch (const json::parse_error& e) {
        throw DataError(origin + ": malformed header: " + e.what());
    }
    const auto body = text.substr(nl + 1);
    DistillationCorpus corpus;
    try {
        if (header.at("format").get<std::string>() != kCorpusFormat) throw DataError(origin + ": not a corpus file");
        const int version = header.at("schema_version").get<int>();
        if (version != kCorpusSchemaVersion) {
            throw DataError(origin + ": schema version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCorpusSchemaVersion) + ")");
        }
        if (header.at("body_sha256").get<std::string>() != detail::sha256_hex(body)) {
            throw DataError(origin + ": checksum mismatch (file truncated or modified)");
        }
        corpus.task_id = header.at("task_id").get<std::string>();
        corpus.template_version = header.at("template_version").get<int>();
        corpus.prompt_set_fingerprint = header.at("prompt_set_fingerprint").get<std::string>();
        for (const auto& p : header.at("provenance")) corpus.provenance.push_back(provenance_from_json(p));
        for (const auto& id : header.at("instances")) corpus.entries[id.get<std::string>()];
    } catch (const json::exception& e) {
        throw DataError(origin + ": malformed header: " + e.what());
    }
    std::size_t n = 0;
    detail::for_each_jsonl(body, origin, [&](const json& j, std::size_t) {
        auto s = sample_from_json(j);
        auto it = corpus.entries.find(s.instance_id);
        if (it == corpus.entries.end()) throw DataError("sample for unlisted instance '" + s.instance_id + "'");
        it->second.push_back(std::move(s));
        ++n;
    });
    if (n != header.at("n_samples").get<std::size_t>()) throw DataError(origin + ": sample count mismatch");
    for (const auto& [id, samples] : corpus.entries) {
        std::set<int> seen;
        for (const auto& s : samples) {
            if (!seen.insert(s.sample_index).second) throw DataError(origin + ": duplicate sample index under '" + id + "'");
        }
    }
    return corpus;
}

namespace detail {

// Writes `content` to `path` atomically while holding an exclusive advisory lock on "<path>.lock".
inline void write_file_locked(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto lock_path = path.string() + ".lock";
    const int fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd < 0) throw DataError("cannot open lock file " + lock_path);
    // The lock file is left in place: unlinking it would let a waiting writer and a new one
    // lock different inodes.
    struct Unlock {
        int fd;
        ~Unlock() {
            ::flock(fd, LOCK_UN);
            ::close(fd);
        }
    } unlock{fd};
    if (::flock(fd, LOCK_EX) != 0) throw DataError("cannot lock " + lock_path);
    const auto tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp);
        out << content;
        if (!out.flush()) throw DataError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void write_corpus(const DistillationCorpus& corpus, const std::filesystem::path& path) {
    detail::write_file_locked(path, serialize_corpus(corpus));
}

inline DistillationCorpus read_corpus(const std::filesystem::path& path) {
    return parse_corpus(detail::read_file(path.string()), path.string());
}

inline std::string serialize_training_examples(const std::vector<TrainingExample>& examples) {
    std::string out;
    for (const auto& e : examples) {
        out += to_json(e).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<TrainingExample> parse_training_examples(std::string_view text, const std::string& origin = "training") {
    std::vector<TrainingExample> out;
    detail::for_each_jsonl(text, origin, [&](const json& j, std::size_t) {
        try {
            out.push_back({j.at("prompt").get<std::string>(), j.at("completion").get<std::string>(),
                           j.at("instance_id").get<std::string>(), j.value("provenance", json::object())});
        } catch (const json::exception& e) {
            throw DataError(std::string("malformed training example: ") + e.what());
        }
    });
    return out;
}

inline void write_training_examples(const std::vector<TrainingExample>& examples, const std::filesystem::path& path) {
    detail::write_file_locked(path, serialize_training_examples(examples));
}

// ---- statistics ----

struct CorpusStats {
    std::size_t n_instances = 0;
    std::size_t n_samples = 0;
    std::size_t min_samples_per_instance = 0;
    double mean_samples_per_instance = 0.0;
    std::size_t max_samples_per_instance = 0;
    double parse_ok_rate = 0.0;
    // Correct among parseable samples; present only when every instance has a gold label.
    std::optional<double> correct_rate;
    // Highest unique-bigram score in each of the lower four open-endedness bins (empty below 5 instances).
    std::vector<std::size_t> unique_bigram_quintile_edges;

    friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

inline CorpusStats stats(const DistillationCorpus& corpus, const std::vector<Instance>& instances) {
    CorpusStats st;
    st.n_instances = corpus.entries.size();
    std::map<std::string, const Instance*> by_id;
    for (const auto& inst : instances) by_id[inst.instance_id] = &inst;

    bool all_gold = !corpus.entries.empty();
    std::size_t ok = 0, correct = 0;
    bool first = true;
    for (const auto& [id, samples] : corpus.entries) {
        const auto n = samples.size();
        st.n_samples += n;
        st.min_samples_per_instance = first ? n : std::min(st.min_samples_per_instance, n);
        st.max_samples_per_instance = std::max(st.max_samples_per_instance, n);
        first = false;
        const auto it = by_id.find(id);
        const Instance* inst = it == by_id.end() ? nullptr : it->second;
        if (!inst || !inst->gold_label) all_gold = false;
        for (const auto& s : samples) {
            if (!s.parsed.ok()) continue;
            ++ok;
            if (inst && inst->gold_label && *s.parsed.predicted_label == *inst->gold_label) ++correct;
        }
    }
    if (st.n_instances > 0) st.mean_samples_per_instance = static_cast<double>(st.n_samples) / static_cast<double>(st.n_instances);
    if (st.n_samples > 0) st.parse_ok_rate = static_cast<double>(ok) / static_cast<double>(st.n_samples);
    if (all_gold && ok > 0) st.correct_rate = static_cast<double>(correct) / static_cast<double>(ok);

    if (corpus.entries.size() >= kOpenEndednessBudgets.size()) {
        const auto ranks = open_endedness_bins(corpus);
        for (std::size_t b = 0; b + 1 < kOpenEndednessBudgets.size(); ++b) {
            std::size_t edge = 0;
            for (const auto& r : ranks) {
                if (r.bin == b) edge = std::max(edge, r.unique_bigrams);
            }
            st.unique_bigram_quintile_edges.push_back(edge);
        }
    }
    return st;
}

inline json to_json(const CorpusStats& s) {
    return json{{"n_instances", s.n_instances},
                {"n_samples", s.n_samples},
                {"samples_per_instance",
                 json{{"min", s.min_samples_per_instance}, {"mean", s.mean_samples_per_instance}, {"max", s.max_samples_per_instance}}},
                {"parse_ok_rate", s.parse_ok_rate},
                {"correct_rate", s.correct_rate ? json(*s.correct_rate) : json(nullptr)},
                {"unique_bigram_quintile_edges", s.unique_bigram_quintile_edges}};
}

}  // namespace scotd
