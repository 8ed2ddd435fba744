#pragma once

#include <stdexcept>
#include <string>

namespace relevance {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or record (carries a line number when known).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A record parsed fine but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor / layer extents disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or layout mismatch detected while loading a model.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace relevance
