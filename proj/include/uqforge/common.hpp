#pragma once

#include <stdexcept>
#include <string>

namespace uqforge {

/// Operand dimensions do not line up (also raised for empty batches/inputs).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A scalar or argument left its mathematical domain.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// File could not be read or its contents violate the declared format.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// User-supplied configuration is malformed or incomplete.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An identity that must hold by construction was violated; indicates a bug.
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace uqforge
