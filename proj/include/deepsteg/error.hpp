#pragma once

#include <stdexcept>
#include <string>

namespace deepsteg {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class DatasetError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Raised when a loss or gradient stops being finite during training.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace deepsteg
