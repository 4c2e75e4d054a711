#pragma once

#include <stdexcept>
#include <string>

namespace trajlab {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / stream failures (missing file, unwritable directory).
class IoError : public Error {
  public:
    using Error::Error;
};

// Structurally invalid on-disk data: bad magic, unknown version, malformed
// records, unparsable text.
class FormatError : public Error {
  public:
    using Error::Error;
};

// A file that starts out well-formed but ends early.
class TruncatedError : public Error {
  public:
    using Error::Error;
};

// Tensor or config dimensions that do not line up.
class ShapeMismatchError : public Error {
  public:
    using Error::Error;
};

// Invalid argument values or preconditions.
class ValueError : public Error {
  public:
    using Error::Error;
};

// Problems in run configuration files.
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Aborted training runs (e.g. non-finite loss).
class TrainingError : public Error {
  public:
    using Error::Error;
};

} // namespace trajlab
