#pragma once

#include <stdexcept>
#include <string>

namespace userreward {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimension mismatches and invalid parameter bundles.
class ConfigurationError : public Error {
public:
    using Error::Error;
};

/// An (s, a) pair without support was used where a distribution is required.
class UnsupportedActionError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class EncodingError : public Error {
public:
    using Error::Error;
};

class SegmentationError : public Error {
public:
    using Error::Error;
};

/// Empty inputs to estimators.
class EstimationError : public Error {
public:
    using Error::Error;
};

/// The model cannot produce a trajectory the caller asked for.
class ModelingError : public Error {
public:
    using Error::Error;
};

/// Observed data is impossible under the model.
class DataMismatchError : public Error {
public:
    using Error::Error;
};

class ComparisonError : public Error {
public:
    using Error::Error;
};

class ScoringError : public Error {
public:
    using Error::Error;
};

}  // namespace userreward
