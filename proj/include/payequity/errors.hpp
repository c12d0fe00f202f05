#pragma once

#include <stdexcept>
#include <string>

namespace payequity {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
  using Error::Error;
};

/// Input file is readable but does not have the required shape.
class SchemaError : public Error {
  using Error::Error;
};

class EmptyDatasetError : public Error {
  using Error::Error;
};

class ConfigError : public Error {
  using Error::Error;
};

/// A caller broke an operation's documented precondition.
class PreconditionError : public Error {
  using Error::Error;
};

/// A density or gradient evaluated to a non-finite value.
class NumericError : public Error {
public:
  NumericError(const std::string& block, const std::string& what)
      : Error(what), block_(block) {}
  const std::string& block() const { return block_; }

private:
  std::string block_;
};

class AdaptationError : public Error {
  using Error::Error;
};

/// A persisted artifact failed its checksum or could not be decoded.
class IntegrityError : public Error {
  using Error::Error;
};

}  // namespace payequity
