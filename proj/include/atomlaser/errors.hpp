#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace atomlaser {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A physical or numerical parameter violates its invariant.
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// A function was evaluated outside of its mathematical domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A numerical method failed to reach its tolerance or became unstable.
class NumericalFailure : public Error {
public:
    explicit NumericalFailure(const std::string& what, double achieved = 0.0)
        : Error(what), achieved_(achieved) {}

    /// Tolerance (or error measure) actually reached, when meaningful.
    double achieved() const noexcept { return achieved_; }

private:
    double achieved_;
};

/// Malformed scenario configuration; carries the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

using WarningHandler = std::function<void(std::string_view)>;

/// Installs a sink for non-fatal diagnostics and returns the previous one.
/// The default handler prints to stderr.
WarningHandler set_warning_handler(WarningHandler handler);

void warn(std::string_view message);

}  // namespace atomlaser
