#pragma once

#include <stdexcept>
#include <string>

namespace cforge {

/// Base for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Array lengths or basis ranks disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A parameter value is outside its domain (NaN rotation, bad camera, ...).
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// An index or count is outside the permitted range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Caller broke an interface contract (mismatched render output, empty input, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

/// Requested more distinct items than the generator can produce.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Remote endpoint unreachable or replied with garbage.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Malformed input file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Optimization diverged or collapsed.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace cforge
