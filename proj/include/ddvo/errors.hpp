#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ddvo {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GridTooSmall : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// Normal equations are numerically singular (untextured input).
class SingularSystem : public Error {
 public:
  using Error::Error;
};

// Fewer than a quarter of the reference pixels land inside the source view.
class DegenerateOverlap : public Error {
 public:
  using Error::Error;
};

// Mean (or median) depth collapsed to zero.
class DegenerateDepth : public Error {
 public:
  using Error::Error;
};

class TapeMismatch : public Error {
 public:
  using Error::Error;
};

class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

class NoValidPixels : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// I/O or format failure; carries the file and the byte offset where parsing
// stopped.
class ImageIoError : public Error {
 public:
  ImageIoError(std::string path, std::size_t offset, const std::string& what)
      : Error(path + " (byte " + std::to_string(offset) + "): " + what),
        path_(std::move(path)),
        offset_(offset) {}

  const std::string& path() const { return path_; }
  std::size_t offset() const { return offset_; }

 private:
  std::string path_;
  std::size_t offset_;
};

}  // namespace ddvo
