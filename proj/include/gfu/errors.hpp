#pragma once

#include <stdexcept>
#include <string>

namespace gfu {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input/config problems (bad env file, bad JSON, bad field value).
class ValidationError : public Error {
public:
    using Error::Error;
};

class CycleDetected : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class UnreachableState : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DeadEnd : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InvalidState : public Error {
public:
    using Error::Error;
};

class CapExceeded : public Error {
public:
    using Error::Error;
};

class ZeroMass : public Error {
public:
    using Error::Error;
};

class NonFiniteLoss : public Error {
public:
    NonFiniteLoss(const std::string& msg, int step) : Error(msg), step(step) {}
    int step;
};

class WrongSpec : public Error {
public:
    using Error::Error;
};

class NonInvertible : public Error {
public:
    using Error::Error;
};

class NoConvergence : public Error {
public:
    using Error::Error;
};

class DegenerateD : public Error {
public:
    using Error::Error;
};

}  // namespace gfu
