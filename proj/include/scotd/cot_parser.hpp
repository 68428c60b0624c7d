#pragma once

// Answer extraction from free-text chains of thought, and its inverse.

#include "scotd/detail/text.hpp"
#include "scotd/error.hpp"
#include "scotd/task.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scotd {

enum class ParseStatus { ok, no_answer_phrase, label_not_in_options };

inline std::string_view to_string(ParseStatus s) {
    switch (s) {
        case ParseStatus::ok: return "ok";
        case ParseStatus::no_answer_phrase: return "no_answer_phrase";
        case ParseStatus::label_not_in_options: return "label_not_in_options";
    }
    return "ok";
}

inline ParseStatus parse_status_from_string(std::string_view s) {
    if (s == "ok") return ParseStatus::ok;
    if (s == "no_answer_phrase") return ParseStatus::no_answer_phrase;
    if (s == "label_not_in_options") return ParseStatus::label_not_in_options;
    throw DataError("unknown parse_status '" + std::string(s) + "'");
}

struct ParsedCoT {
    std::string rationale_text;
    std::optional<OptionKey> predicted_label;
    ParseStatus parse_status = ParseStatus::no_answer_phrase;

    bool ok() const { return parse_status == ParseStatus::ok; }

    friend bool operator==(const ParsedCoT&, const ParsedCoT&) = default;
};

namespace detail {

inline bool is_word_char(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u >= 0x80 || c == '_';
}

// Phrase words, lowercased, with the trailing colon dropped ("So the answer is:" -> so/the/answer/is).
inline std::vector<std::string> phrase_words(std::string_view phrase) {
    std::vector<std::string> words;
    for (auto w : split_whitespace(phrase)) words.push_back(to_lower(w));
    while (!words.empty()) {
        auto& last = words.back();
        while (!last.empty() && last.back() == ':') last.pop_back();
        if (!last.empty()) break;
        words.pop_back();
    }
    return words;
}

struct PhraseMatch {
    std::size_t begin;
    std::size_t end;
};

inline std::optional<std::size_t> match_phrase_at(std::string_view text, std::size_t pos,
                                                  const std::vector<std::string>& words) {
    for (std::size_t k = 0; k < words.size(); ++k) {
        const auto& w = words[k];
        if (text.size() - pos < w.size()) return std::nullopt;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (to_lower_ascii(text[pos + i]) != w[i]) return std::nullopt;
        }
        pos += w.size();
        if (k + 1 < words.size()) {
            if (pos >= text.size() || !is_space(text[pos])) return std::nullopt;
            while (pos < text.size() && is_space(text[pos])) ++pos;
        }
    }
    if (pos < text.size() && is_word_char(text[pos]) && is_word_char(text[pos - 1])) return std::nullopt;
    return pos;
}

inline std::optional<PhraseMatch> find_last_phrase(std::string_view text, const std::vector<std::string>& words) {
    if (words.empty() || text.empty()) return std::nullopt;
    for (std::size_t pos = text.size(); pos-- > 0;) {
        if (pos > 0 && is_word_char(text[pos - 1]) && is_word_char(text[pos])) continue;
        if (auto end = match_phrase_at(text, pos, words)) return PhraseMatch{pos, *end};
    }
    return std::nullopt;
}

// Resolves the first token of `tail` ("(a)", "a.", "(A)" ...) to an option key.
inline std::optional<OptionKey> resolve_label_token(std::string_view tail, const TaskSpec& task) {
    std::size_t i = 0;
    while (i < tail.size() && (is_space(tail[i]) || tail[i] == ':')) ++i;
    std::size_t j = i;
    while (j < tail.size() && !is_space(tail[j])) ++j;
    std::string_view token = tail.substr(i, j - i);
    while (!token.empty() && (token.front() == '(' || token.front() == '[')) token.remove_prefix(1);
    const std::string_view trailing = ".,;:!?)]\"'";
    while (!token.empty() && trailing.find(token.back()) != std::string_view::npos) token.remove_suffix(1);
    if (token.empty()) return std::nullopt;
    const auto key = to_lower(token);
    if (task.has_key(key)) return key;
    if (task.kind == TaskKind::binary_classification && key.size() == 1 && (key[0] == 'a' || key[0] == 'b')) {
        return task.option_keys[static_cast<std::size_t>(key[0] - 'a')];
    }
    return std::nullopt;
}

}  // namespace detail

// The label is taken from the token right after the last occurrence of the task's answer phrase.
// Matching ignores case, whitespace runs inside the phrase, and the colon after it.
inline ParsedCoT parse_cot(std::string_view raw, const TaskSpec& task) {
    ParsedCoT out;
    const auto match = detail::find_last_phrase(raw, detail::phrase_words(task.answer_phrase));
    if (!match) {
        out.rationale_text = std::string(detail::trim_right(raw));
        out.parse_status = ParseStatus::no_answer_phrase;
        return out;
    }
    out.rationale_text = std::string(detail::trim_right(raw.substr(0, match->begin)));
    if (auto label = detail::resolve_label_token(raw.substr(match->end), task)) {
        out.predicted_label = std::move(label);
        out.parse_status = ParseStatus::ok;
    } else {
        out.parse_status = ParseStatus::label_not_in_options;
    }
    return out;
}

// For label-only completions ("(b)" or "So the answer is: (b)").
inline ParsedCoT parse_direct_answer(std::string_view raw, const TaskSpec& task) {
    auto parsed = parse_cot(raw, task);
    if (parsed.parse_status != ParseStatus::no_answer_phrase) return parsed;
    ParsedCoT out;
    if (detail::trim(raw).empty()) return out;
    if (auto label = detail::resolve_label_token(raw, task)) {
        out.predicted_label = std::move(label);
        out.parse_status = ParseStatus::ok;
    } else {
        out.parse_status = ParseStatus::label_not_in_options;
    }
    return out;
}

inline std::string render_answer(const OptionKey& label, const TaskSpec& task) {
    return task.answer_phrase + " (" + display_key(task, label) + ")";
}

// "{rationale} {answer_phrase} ({label})"; trailing whitespace of the rationale is dropped
// so that parse_cot recovers it exactly.
inline std::string render_target(std::string_view rationale, const OptionKey& label, const TaskSpec& task) {
    if (!task.has_key(label)) throw InvalidArgument("label '" + label + "' not in option set");
    if (rationale.find(kBlockSeparator) != std::string_view::npos) {
        throw InvalidArgument("rationale contains the prompt separator");
    }
    const auto body = detail::trim_right(rationale);
    if (body.empty()) throw InvalidArgument("rationale is empty");
    std::string out(body);
    out += ' ';
    out += render_answer(label, task);
    return out;
}

}  // namespace scotd
