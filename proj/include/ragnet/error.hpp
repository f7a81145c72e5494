#pragma once

#include <stdexcept>
#include <string>

namespace ragnet {

// Base of every error the library throws. The CLI maps the concrete type to
// an exit code (see exit_code()).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments or shape mismatches at an API boundary.
class ArgumentError : public Error {
public:
    using Error::Error;
};

// A file does not follow the expected on-disk layout.
class FormatError : public Error {
public:
    using Error::Error;
};

// A file ended before its declared payload.
class LengthError : public FormatError {
public:
    using FormatError::FormatError;
};

// Two related inputs disagree (image/label counts, label ranges).
class ConsistencyError : public FormatError {
public:
    using FormatError::FormatError;
};

// A precondition between components was violated (config vs. data, missing
// gradients, checkpoint/config mismatch).
class ContractError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Training exhausted its restart budget.
class TrainingFailure : public Error {
public:
    using Error::Error;
};

// 0 ok, 1 usage, 2 I/O, 3 contract/format.
inline int exit_code(const Error& e) {
    if (dynamic_cast<const IoError*>(&e)) return 2;
    if (dynamic_cast<const ArgumentError*>(&e)) return 1;
    return 3;
}

}  // namespace ragnet
