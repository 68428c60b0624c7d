#pragma once

// Content-addressed store for raw service responses (completions and embeddings).

#include "scotd/detail/hash.hpp"
#include "scotd/error.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

namespace scotd {

class ContentStore {
public:
    // In-memory store.
    ContentStore() = default;
    // On-disk store rooted at `dir` (created on demand).
    explicit ContentStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    static std::string key_for(std::string_view canonical) { return detail::sha256_hex(canonical); }

    std::optional<std::string> get(const std::string& key) const {
        {
            std::lock_guard lock(mu_);
            if (auto it = memory_.find(key); it != memory_.end()) return it->second;
        }
        if (!dir_) return std::nullopt;
        std::ifstream in(path_for(key), std::ios::binary);
        if (!in) return std::nullopt;
        std::ostringstream ss;
        ss << in.rdbuf();
        auto value = ss.str();
        std::lock_guard lock(mu_);
        memory_.emplace(key, value);
        return value;
    }

    void put(const std::string& key, const std::string& value) {
        std::lock_guard lock(mu_);
        memory_[key] = value;
        if (!dir_) return;
        const auto target = path_for(key);
        std::error_code ec;
        std::filesystem::create_directories(target.parent_path(), ec);
        auto tmp = target;
        tmp += ".tmp" + std::to_string(++tmp_counter_);
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw DataError("cannot write cache entry " + tmp.string());
            out << value;
        }
        std::filesystem::rename(tmp, target, ec);
        if (ec) throw DataError("cannot commit cache entry " + target.string() + ": " + ec.message());
    }

    bool on_disk() const { return dir_.has_value(); }

private:
    std::filesystem::path path_for(const std::string& key) const {
        return *dir_ / key.substr(0, 2) / (key + ".json");
    }

    std::optional<std::filesystem::path> dir_;
    mutable std::mutex mu_;
    mutable std::map<std::string, std::string> memory_;
    std::uint64_t tmp_counter_ = 0;
};

}  // namespace scotd
