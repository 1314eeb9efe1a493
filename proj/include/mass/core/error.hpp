#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mass {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// exit codes (usage vs data errors).
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
  public:
    using Error::Error;
};

class ShapeError : public Error {
  public:
    using Error::Error;
};

class FormatError : public Error {
  public:
    using Error::Error;
};

class ChecksumError : public Error {
  public:
    ChecksumError(std::string const& what, int64_t mask_index = -1)
        : Error(what), mask_index_(mask_index) {}
    int64_t mask_index() const { return mask_index_; }

  private:
    int64_t mask_index_;
};

class VersionMismatch : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class BackendError : public Error {
  public:
    using Error::Error;
};

class PlacementError : public Error {
  public:
    using Error::Error;
};

class PreconditionError : public Error {
  public:
    using Error::Error;
};

class EpisodeRejected : public Error {
  public:
    using Error::Error;
};

class NonFiniteLoss : public Error {
  public:
    using Error::Error;
};

} // namespace mass
