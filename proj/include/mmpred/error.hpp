#pragma once

#include <stdexcept>
#include <string>

namespace mmpred {

// Invalid user-supplied configuration (CLI exit code 2).
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape mismatch.
class dim_error : public std::runtime_error {
 public:
  explicit dim_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed clinical code or text encoding problem.
class encode_error : public std::runtime_error {
 public:
  explicit encode_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Model fitting rejected its inputs or diverged.
class fit_error : public std::runtime_error {
 public:
  explicit fit_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Inference called with data the model was not trained for.
class inference_error : public std::runtime_error {
 public:
  explicit inference_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Degenerate split request (missing class, empty holdout, ...).
class split_error : public std::runtime_error {
 public:
  explicit split_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Anything else that aborts a pipeline stage (CLI exit code 3).
class pipeline_error : public std::runtime_error {
 public:
  explicit pipeline_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mmpred
