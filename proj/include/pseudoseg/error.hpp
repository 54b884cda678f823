#pragma once

#include <stdexcept>
#include <string>

namespace pseudoseg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input: bad shapes, bad arguments, bad files.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Experiment configuration failed validation.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage found its upstream artifact missing, stale or produced
/// under a different configuration.
class ArtifactError : public Error {
public:
    using Error::Error;
};

/// Non-finite values during training or evaluation.
class NumericalError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw InvalidArgument(what);
}

} // namespace pseudoseg
