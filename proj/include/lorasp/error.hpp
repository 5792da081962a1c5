// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lorasp {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible matrix/mask shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Argument outside its documented domain (negative std, odd cols, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent run configuration.
class ConfigError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

// NaN/Inf observed in a loss, gradient or activation.
class NumericError : public Error {
public:
    using Error::Error;
};

// Object used in the wrong lifecycle state (e.g. a consumed tape).
class StateError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// A cross-module invariant check failed during a run.
class CrossCheckError : public Error {
public:
    using Error::Error;
};

}  // namespace lorasp
