#pragma once

#include <stdexcept>
#include <string>

namespace tpseg {

// Error taxonomy maps onto the CLI exit codes: validation-type errors
// (shape, format, bad config/arguments) exit 1, numeric failures exit 2.

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace tpseg
