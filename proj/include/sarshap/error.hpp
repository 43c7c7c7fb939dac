#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sarshap {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Raised when a Shapley value ratio is requested for an all-zero vector.
class UndefinedRatio : public Error {
 public:
  UndefinedRatio() : Error("shapley value ratio undefined: all values are zero") {}
};

// Raised when the signal-to-clutter ratio of an image cannot be computed.
class UndefinedScr : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A game oracle or evaluator failed while valuing a specific coalition.
class CoalitionError : public Error {
 public:
  CoalitionError(std::uint64_t coalition, const std::string& what)
      : Error("coalition " + std::to_string(coalition) + ": " + what), coalition_(coalition) {}

  std::uint64_t coalition() const noexcept { return coalition_; }

 private:
  std::uint64_t coalition_;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

}  // namespace sarshap
