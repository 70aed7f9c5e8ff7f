#pragma once

#include <stdexcept>
#include <string>

namespace csdn {

// Invalid configuration values or combinations. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed manifests, unreadable images, infeasible sampling. CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Retrieval protocol cannot be satisfied (e.g. empty gallery). CLI exit code 3.
class ProtocolError : public DataError {
 public:
  using DataError::DataError;
};

// Corrupt or mismatched checkpoint archives. CLI exit code 4.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A training stage was requested before its prerequisites ran. CLI exit code 4.
class SequencingError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Shape or enum violations on operation inputs.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace csdn
