#pragma once

// Correctness filtering and budgeted downsampling of a distillation corpus.
//
// Every filter returns a subset of its input, leaves each instance's samples in
// sample_index order, and appends exactly one provenance step.

#include "scotd/clustering.hpp"
#include "scotd/corpus.hpp"
#include "scotd/detail/random.hpp"
#include "scotd/detail/text.hpp"
#include "scotd/embedder.hpp"
#include "scotd/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace scotd {

enum class FilterKind { correct_label, random_k, diversity_k, likelihood_top_k, open_endedness, parseable };

inline std::string_view to_string(FilterKind k) {
    switch (k) {
        case FilterKind::correct_label: return "correct_label";
        case FilterKind::random_k: return "random_k";
        case FilterKind::diversity_k: return "diversity_k";
        case FilterKind::likelihood_top_k: return "likelihood_top_k";
        case FilterKind::open_endedness: return "open_endedness";
        case FilterKind::parseable: return "parseable";
    }
    return "random_k";
}

inline FilterKind filter_kind_from_string(std::string_view s) {
    for (auto k : {FilterKind::correct_label, FilterKind::random_k, FilterKind::diversity_k,
                   FilterKind::likelihood_top_k, FilterKind::open_endedness, FilterKind::parseable}) {
        if (to_string(k) == s) return k;
    }
    throw InvalidArgument("unknown filter kind '" + std::string(s) + "'");
}

inline constexpr std::array<int, 5> kOpenEndednessBudgets{1, 3, 5, 7, 9};
inline constexpr int kOpenEndednessAverageBudget = 5;
inline constexpr int kDefaultDownsampleBudget = 5;

struct FilterSpec {
    FilterKind kind = FilterKind::random_k;
    int budget = kDefaultDownsampleBudget;
    std::uint64_t seed = 0;

    friend bool operator==(const FilterSpec&, const FilterSpec&) = default;
};

inline json to_json(const FilterSpec& f) {
    return json{{"kind", std::string(to_string(f.kind))}, {"budget", f.budget}, {"seed", f.seed}};
}

inline FilterSpec filter_spec_from_json(const json& j) {
    FilterSpec f;
    f.kind = filter_kind_from_string(j.at("kind").get<std::string>());
    f.budget = j.value("budget", f.kind == FilterKind::open_endedness ? kOpenEndednessAverageBudget : kDefaultDownsampleBudget);
    f.seed = j.value("seed", std::uint64_t{0});
    if (f.budget < 1) throw InvalidArgument("filter budget must be >= 1");
    return f;
}

namespace detail {

inline ProvenanceStep filter_step(FilterKind kind, std::optional<std::int64_t> budget, std::optional<std::int64_t> seed,
                                  json params = json::object()) {
    return ProvenanceStep{std::string(to_string(kind)), budget, seed, std::move(params)};
}

inline std::vector<CoTSample> pick(const std::vector<CoTSample>& samples, std::vector<std::size_t> positions) {
    std::sort(positions.begin(), positions.end());
    std::vector<CoTSample> out;
    out.reserve(positions.size());
    for (auto p : positions) out.push_back(samples[p]);
    return out;
}

inline std::vector<CoTSample> random_subset(const std::string& instance_id, const std::vector<CoTSample>& samples,
                                            std::size_t k, std::uint64_t seed) {
    if (samples.size() <= k) return samples;
    Rng rng(derive_seed(seed, instance_id));
    return pick(samples, rng.choose(samples.size(), k));
}

inline std::string embedding_text(const CoTSample& s) {
    return detail::trim(s.parsed.rationale_text).empty() ? s.raw_text : s.parsed.rationale_text;
}

}  // namespace detail

// Supervised setting: keep parseable samples whose label equals the gold label.
inline DistillationCorpus filter_correct(const DistillationCorpus& corpus, const std::vector<Instance>& instances) {
    std::map<std::string, const Instance*> by_id;
    for (const auto& inst : instances) by_id[inst.instance_id] = &inst;
    DistillationCorpus out = corpus;
    for (auto& [id, samples] : out.entries) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("corpus instance '" + id + "' is not in the instance set");
        if (!it->second->gold_label) throw InvalidArgument("correctness filter needs a gold label for instance '" + id + "'");
        const auto& gold = *it->second->gold_label;
        std::erase_if(samples, [&](const CoTSample& s) { return !s.parsed.ok() || *s.parsed.predicted_label != gold; });
    }
    out.provenance.push_back(detail::filter_step(FilterKind::correct_label, std::nullopt, std::nullopt));
    return out;
}

// Drops samples whose answer could not be parsed.
inline DistillationCorpus filter_parseable(const DistillationCorpus& corpus) {
    DistillationCorpus out = corpus;
    for (auto& [_, samples] : out.entries) std::erase_if(samples, [](const CoTSample& s) { return !s.parsed.ok(); });
    out.provenance.push_back(detail::filter_step(FilterKind::parseable, std::nullopt, std::nullopt));
    return out;
}

// Per instance, min(k, available) samples uniformly without replacement.
inline DistillationCorpus filter_random_k(const DistillationCorpus& corpus, int k, std::uint64_t seed) {
    if (k < 1) throw InvalidArgument("k must be >= 1");
    DistillationCorpus out = corpus;
    for (auto& [id, samples] : out.entries) samples = detail::random_subset(id, samples, static_cast<std::size_t>(k), seed);
    out.provenance.push_back(detail::filter_step(FilterKind::random_k, k, static_cast<std::int64_t>(seed)));
    return out;
}

// Per instance: cluster rationale embeddings (average linkage, cosine distance) into
// min(k, available) clusters and keep one uniformly chosen member of each.
inline DistillationCorpus filter_diversity_k(const DistillationCorpus& corpus, int k, std::uint64_t seed, Embedder& embedder,
                                             std::string_view embedder_name = "fallback") {
    if (k < 1) throw InvalidArgument("k must be >= 1");
    DistillationCorpus out = corpus;
    for (auto& [id, samples] : out.entries) {
        if (samples.size() <= static_cast<std::size_t>(k)) continue;
        std::vector<std::string> texts;
        texts.reserve(samples.size());
        for (const auto& s : samples) texts.push_back(detail::embedding_text(s));
        std::vector<Embedding> points;
        try {
            points = embedder.embed_batch(texts);
        } catch (...) {
            rethrow_with_context("instance '" + id + "'");
        }
        const auto labels = agglomerative_average_linkage(DistanceMatrix::cosine(points), static_cast<std::size_t>(k));
        std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
        detail::Rng rng(detail::derive_seed(seed, id));
        std::vector<std::size_t> chosen;
        for (const auto& m : members) chosen.push_back(m[rng.below(m.size())]);
        samples = detail::pick(samples, std::move(chosen));
    }
    out.provenance.push_back(detail::filter_step(FilterKind::diversity_k, k, static_cast<std::int64_t>(seed),
                                                 json{{"embedder", std::string(embedder_name)},
                                                      {"linkage", "average"},
                                                      {"metric", "cosine"}}));
    return out;
}

// Per instance, the k samples with the highest mean token log-probability (ties: lower index).
inline DistillationCorpus filter_likelihood_top_k(const DistillationCorpus& corpus, int k) {
    if (k < 1) throw InvalidArgument("k must be >= 1");
    DistillationCorpus out = corpus;
    for (auto& [id, samples] : out.entries) {
        for (const auto& s : samples) {
            if (!s.mean_logprob) {
                throw DataError("likelihood filter: sample " + std::to_string(s.sample_index) + " of instance '" + id +
                                "' has no log-probabilities");
            }
        }
        if (samples.size() <= static_cast<std::size_t>(k)) continue;
        std::vector<std::size_t> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (*samples[a].mean_logprob != *samples[b].mean_logprob) return *samples[a].mean_logprob > *samples[b].mean_logprob;
            return samples[a].sample_index < samples[b].sample_index;
        });
        order.resize(static_cast<std::size_t>(k));
        samples = detail::pick(samples, std::move(order));
    }
    out.provenance.push_back(detail::filter_step(FilterKind::likelihood_top_k, k, std::nullopt));
    return out;
}

struct OpenEndednessRank {
    std::string instance_id;
    std::size_t unique_bigrams = 0;
    std::size_t bin = 0;  // 0..4, ascending open-endedness
    int budget = 0;
};

// Number of distinct word bigrams pooled over all samples' rationales.
inline std::size_t unique_bigram_count(const std::vector<CoTSample>& samples) {
    std::set<detail::Bigram> bigrams;
    for (const auto& s : samples) detail::collect_bigrams(s.parsed.rationale_text, bigrams);
    return bigrams.size();
}

// Ranks instances by unique bigram count (ties by instance_id) and splits the ranking into five
// bins of equal size; remainder instances go to the lowest bins.
inline std::vector<OpenEndednessRank> open_endedness_bins(const DistillationCorpus& corpus) {
    std::vector<OpenEndednessRank> ranks;
    for (const auto& [id, samples] : corpus.entries) ranks.push_back({id, unique_bigram_count(samples), 0, 0});
    std::stable_sort(ranks.begin(), ranks.end(), [](const auto& a, const auto& b) {
        if (a.unique_bigrams != b.unique_bigrams) return a.unique_bigrams < b.unique_bigrams;
        return a.instance_id < b.instance_id;
    });
    const std::size_t bins = kOpenEndednessBudgets.size();
    const std::size_t base = ranks.size() / bins;
    const std::size_t rem = ranks.size() % bins;
    std::size_t pos = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t size = base + (b < rem ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i, ++pos) {
            ranks[pos].bin = b;
            ranks[pos].budget = kOpenEndednessBudgets[b];
        }
    }
    return ranks;
}

// Budgets 1/3/5/7/9 by open-endedness quintile, random selection within each instance.
inline DistillationCorpus filter_open_endedness(const DistillationCorpus& corpus, std::uint64_t seed) {
    if (corpus.entries.size() < kOpenEndednessBudgets.size()) {
        throw InvalidArgument("open_endedness filter needs at least 5 instances");
    }
    DistillationCorpus out = corpus;
    for (const auto& r : open_endedness_bins(corpus)) {
        auto& samples = out.entries.at(r.instance_id);
        samples = detail::random_subset(r.instance_id, samples, static_cast<std::size_t>(r.budget), seed);
    }
    out.provenance.push_back(detail::filter_step(FilterKind::open_endedness, kOpenEndednessAverageBudget,
                                                 static_cast<std::int64_t>(seed), json{{"ladder", kOpenEndednessBudgets}}));
    return out;
}

inline DistillationCorpus apply_filter(const DistillationCorpus& corpus, const FilterSpec& spec,
                                       const std::vector<Instance>& instances, Embedder* embedder,
                                       std::string_view embedder_name = "fallback") {
    switch (spec.kind) {
        case FilterKind::correct_label: return filter_correct(corpus, instances);
        case FilterKind::parseable: return filter_parseable(corpus);
        case FilterKind::random_k: return filter_random_k(corpus, spec.budget, spec.seed);
        case FilterKind::diversity_k: {
            if (!embedder) throw InvalidArgument("diversity filter needs an embedder");
            return filter_diversity_k(corpus, spec.budget, spec.seed, *embedder, embedder_name);
        }
        case FilterKind::likelihood_top_k: return filter_likelihood_top_k(corpus, spec.budget);
        case FilterKind::open_endedness: return filter_open_endedness(corpus, spec.seed);
    }
    throw InvalidArgument("unknown filter kind");
}

inline DistillationCorpus apply_filters(DistillationCorpus corpus, const std::vector<FilterSpec>& chain,
                                        const std::vector<Instance>& instances, Embedder* embedder,
                                        std::string_view embedder_name = "fallback") {
    for (const auto& spec : chain) corpus = apply_filter(corpus, spec, instances, embedder, embedder_name);
    return corpus;
}

}  // namespace scotd
