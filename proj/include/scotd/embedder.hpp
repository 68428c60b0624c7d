#pragma once

// Sentence embeddings for the diversity filter.

#include "scotd/content_store.hpp"
#include "scotd/detail/hash.hpp"
#include "scotd/detail/text.hpp"
#include "scotd/error.hpp"
#include "scotd/http.hpp"

#include <json.hpp>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace scotd {

enum class EmbeddingSource { remote, fallback };

struct Embedding {
    std::vector<double> vector;
    std::size_t dim = 0;
    EmbeddingSource source = EmbeddingSource::fallback;

    friend bool operator==(const Embedding&, const Embedding&) = default;
};

inline double cosine_distance(const Embedding& a, const Embedding& b) {
    if (a.dim != b.dim || a.vector.size() != b.vector.size()) throw InvalidArgument("embedding dimension mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.vector.size(); ++i) dot += a.vector[i] * b.vector[i];
    return 1.0 - dot;
}

namespace detail {

inline void normalize_in_place(std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw DataError("cannot normalize a zero or non-finite embedding");
    for (double& x : v) x /= norm;
}

}  // namespace detail

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) = 0;
};

// Hashed bag of word bigrams. Sentence boundaries are padded with markers so every text,
// even a single word, yields at least one bigram.
class FallbackEmbedder : public Embedder {
public:
    static constexpr std::size_t kDim = 256;

    static Embedding embed_one(const std::string& text) {
        auto words = detail::normalized_words(text);
        words.insert(words.begin(), "<s>");
        words.emplace_back("</s>");
        std::vector<double> v(kDim, 0.0);
        for (std::size_t i = 1; i < words.size(); ++i) {
            const auto h = detail::fnv1a64(words[i], detail::fnv1a64("\x1f", detail::fnv1a64(words[i - 1])));
            v[h % kDim] += 1.0;
        }
        detail::normalize_in_place(v);
        return Embedding{std::move(v), kDim, EmbeddingSource::fallback};
    }

    std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) override {
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            if (t.empty()) throw InvalidArgument("cannot embed an empty text");
            out.push_back(embed_one(t));
        }
        return out;
    }
};

// Calls {"model","input":[...]} -> {"data":[{"embedding":[...]}]} and caches each vector
// in the shared content store.
class RemoteEmbedder : public Embedder {
public:
    RemoteEmbedder(std::shared_ptr<Transport> transport, std::string model, std::shared_ptr<ContentStore> cache,
                   RetryPolicy retry = {})
        : transport_(std::move(transport)),
          model_(std::move(model)),
          cache_(cache ? std::move(cache) : std::make_shared<ContentStore>()),
          retry_(retry) {}

    std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) override {
        std::vector<std::optional<Embedding>> slots(texts.size());
        std::vector<std::size_t> missing;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            if (texts[i].empty()) throw InvalidArgument("cannot embed an empty text");
            if (auto raw = cache_->get(key(texts[i]))) {
                slots[i] = from_vector(nlohmann::json::parse(*raw).get<std::vector<double>>());
            } else {
                missing.push_back(i);
            }
        }
        if (!missing.empty()) {
            nlohmann::json input = nlohmann::json::array();
            for (auto i : missing) input.push_back(texts[i]);
            const auto body = post_with_retries(*transport_, nlohmann::json{{"model", model_}, {"input", input}}.dump(), retry_);
            std::vector<std::vector<double>> vectors;
            try {
                const auto j = nlohmann::json::parse(body);
                for (const auto& d : j.at("data")) vectors.push_back(d.at("embedding").get<std::vector<double>>());
            } catch (const nlohmann::json::exception& e) {
                throw UpstreamError(std::string("malformed embedding response: ") + e.what());
            }
            if (vectors.size() != missing.size()) throw UpstreamError("embedding service returned the wrong number of vectors");
            for (std::size_t j = 0; j < missing.size(); ++j) {
                cache_->put(key(texts[missing[j]]), nlohmann::json(vectors[j]).dump());
                slots[missing[j]] = from_vector(std::move(vectors[j]));
            }
        }
        std::vector<Embedding> out;
        out.reserve(slots.size());
        for (auto& s : slots) {
            if (!out.empty() && s->dim != out.front().dim) throw UpstreamError("embedding dimension drift within a batch");
            out.push_back(std::move(*s));
        }
        return out;
    }

private:
    std::string key(const std::string& text) const {
        return ContentStore::key_for(nlohmann::json{{"embedding_model", model_}, {"text", text}}.dump());
    }

    static Embedding from_vector(std::vector<double> v) {
        if (v.empty()) throw UpstreamError("empty embedding vector");
        detail::normalize_in_place(v);
        const auto dim = v.size();
        return Embedding{std::move(v), dim, EmbeddingSource::remote};
    }

    std::shared_ptr<Transport> transport_;
    std::string model_;
    std::shared_ptr<ContentStore> cache_;
    RetryPolicy retry_;
};

}  // namespace scotd
