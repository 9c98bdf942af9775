#pragma once

#include <stdexcept>
#include <string>

namespace uveqfed {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
public:
    using Error::Error;
};

// A bit stream could not be parsed back into symbols.
class DecodeError : public Error {
public:
    using Error::Error;
};

// No admissible quantizer resolution fits the bit budget.
class RateInfeasibleError : public Error {
public:
    using Error::Error;
};

// Training produced non-finite values or blew past the divergence guard.
class DivergedError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk data (IDX files, serialized updates).
class FormatError : public Error {
public:
    using Error::Error;
};

class UnsupportedError : public Error {
public:
    using Error::Error;
};

}  // namespace uveqfed
