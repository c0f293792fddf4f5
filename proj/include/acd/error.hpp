#pragma once

#include <stdexcept>
#include <string>

namespace acd {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data, unreadable files, malformed models.
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class ModelFormatError : public DataError {
 public:
  using DataError::DataError;
};

class VersionError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};

class OffsetError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};

class TruncatedBlobError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};

class UnsupportedLayerError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values or an operation that cannot produce a usable number.
class NumericError : public Error {
 public:
  using Error::Error;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace acd
