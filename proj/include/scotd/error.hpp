#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace scotd {

// Process exit codes used by the command-line front end.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    upstream = 3,
    data = 4,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept = 0;
    virtual const char* kind() const noexcept = 0;
};

// Caller supplied an argument that violates a documented precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::config; }
    const char* kind() const noexcept override { return "invalid_argument"; }
};

// Configuration validation failure; carries every problem found, not just the first.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}
    explicit ConfigError(const std::string& problem) : ConfigError(std::vector<std::string>{problem}) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }
    ExitCode exit_code() const noexcept override { return ExitCode::config; }
    const char* kind() const noexcept override { return "config_error"; }

private:
    static std::string join(const std::vector<std::string>& problems) {
        std::string out;
        for (const auto& p : problems) {
            if (!out.empty()) out += "; ";
            out += p;
        }
        return out;
    }

    std::vector<std::string> problems_;
};

// Remote completion or embedding service failed (transport, rate limit, bad body).
class UpstreamError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::upstream; }
    const char* kind() const noexcept override { return "upstream_error"; }
};

// Input data is malformed or violates a type invariant.
class DataError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::data; }
    const char* kind() const noexcept override { return "data_error"; }
};

// Rethrows the in-flight scotd::Error with `context` prefixed, keeping its category.
[[noreturn]] inline void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const ConfigError& e) {
        auto problems = e.problems();
        for (auto& p : problems) p = context + ": " + p;
        throw ConfigError(std::move(problems));
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(context + ": " + e.what());
    } catch (const UpstreamError& e) {
        throw UpstreamError(context + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(context + ": " + e.what());
    }
}

}  // namespace scotd
