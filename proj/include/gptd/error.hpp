#pragma once

#include <stdexcept>
#include <string>

namespace gptd {

// Base for every error the toolkit raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller passed something outside an operation's contract.
class InvalidInput : public Error {
public:
    using Error::Error;
};

enum class LoadErrorKind { Io, Corrupt, MissingTensor, ShapeMismatch, NonFinite };

class LoadError : public Error {
public:
    LoadError(LoadErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
    LoadErrorKind kind() const noexcept { return kind_; }

private:
    LoadErrorKind kind_;
};

// A metric is undefined for the given data (single class, zero variance).
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

}  // namespace gptd
