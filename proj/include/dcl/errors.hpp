#pragma once

#include <stdexcept>
#include <string>

namespace dcl {

// Base for every error the library raises. Callers that only care about
// "something went wrong" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad magic, unknown version, malformed manifest.
class FormatError : public Error {
public:
    using Error::Error;
};

// File shorter than its header promises, or payload that fails to parse.
class CorruptionError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Non-finite activations or losses, zero-norm vectors where cosine is needed.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace dcl
