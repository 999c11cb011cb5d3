#pragma once

#include <stdexcept>
#include <string>

namespace auditforge {

// Base for every error raised by the library. The CLI maps these to a
// non-zero exit status and prints what().
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed input data: a bad record, a missing field, a schema mismatch.
class FormatError : public Error {
public:
    using Error::Error;
};

// A domain invariant or operation precondition does not hold.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace auditforge
