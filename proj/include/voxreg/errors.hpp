#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace voxreg {

/// Two operands live on different grids, or a grid is malformed.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A label code outside [0, K).
class LabelError : public std::invalid_argument {
 public:
  LabelError(const std::string& what, std::size_t voxel)
      : std::invalid_argument(what), voxel_(voxel) {}
  std::size_t voxel() const noexcept { return voxel_; }

 private:
  std::size_t voxel_;
};

/// Reader/writer failures. Every failure carries a kind and the byte offset at
/// which it was detected.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { malformed_header, unsupported_datatype, truncated, version_mismatch, dims_mismatch, invalid_value, io };

  FormatError(Kind kind, std::size_t offset, const std::string& what)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

/// Loss or gradient became NaN/Inf during optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace voxreg
