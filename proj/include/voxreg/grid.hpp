#pragma once

// Spatial grid types shared by every module.
//
// Layout contract: a grid with extents (d0, d1[, d2]) is flattened row-major,
// i.e. the LAST axis varies fastest:
//     index = (i0 * d1 + i1) * d2 + i2
// Multi-channel quantities (displacement components, segmentation channels)
// are stored planar: channel c occupies [c * voxel_count, (c + 1) * voxel_count).
// Displacement component c is the offset along axis c, in voxel units.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace voxreg {

using Coord = std::array<int, 3>;

class GridGeometry {
 public:
  GridGeometry() = default;
  /// Throws GeometryError unless 2 <= dims.size() <= 3 and every extent >= 2.
  explicit GridGeometry(std::vector<int> dims);

  int rank() const noexcept { return static_cast<int>(dims_.size()); }
  int dim(int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  const std::vector<int>& dims() const noexcept { return dims_; }
  std::size_t voxel_count() const noexcept { return voxel_count_; }
  /// Distance in the flat array between neighbours along `axis`.
  std::size_t stride(int axis) const { return strides_.at(static_cast<std::size_t>(axis)); }

  std::size_t flat_index(const Coord& c) const noexcept {
    std::size_t idx = 0;
    for (std::size_t a = 0; a < dims_.size(); ++a) idx += static_cast<std::size_t>(c[a]) * strides_[a];
    return idx;
  }
  /// Unused trailing entries of the returned coordinate are zero.
  Coord coords(std::size_t index) const noexcept {
    Coord c{0, 0, 0};
    for (std::size_t a = 0; a < dims_.size(); ++a) {
      c[a] = static_cast<int>(index / strides_[a]);
      index %= strides_[a];
    }
    return c;
  }
  bool contains(const Coord& c) const noexcept {
    for (std::size_t a = 0; a < dims_.size(); ++a)
      if (c[a] < 0 || c[a] >= dims_[a]) return false;
    return true;
  }

  bool operator==(const GridGeometry& o) const noexcept { return dims_ == o.dims_; }

 private:
  std::vector<int> dims_;
  std::vector<std::size_t> strides_;
  std::size_t voxel_count_ = 0;
};

/// Throws GeometryError naming `what` when the geometries differ.
void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what);

/// Scalar intensity field. Values are finite.
class GridImage {
 public:
  GridImage() = default;
  /// Zero-filled.
  explicit GridImage(GridGeometry geom);
  GridImage(GridGeometry geom, std::vector<double> values);

  const GridGeometry& geometry() const noexcept { return geom_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double at(const Coord& c) const { return values_[geom_.flat_index(c)]; }

  bool operator==(const GridImage& o) const noexcept { return geom_ == o.geom_ && values_ == o.values_; }

 private:
  GridGeometry geom_;
  std::vector<double> values_;
};

/// Displacement u with phi = Id + u. One planar component per axis.
class DisplacementField {
 public:
  DisplacementField() = default;
  /// Zero field.
  explicit DisplacementField(GridGeometry geom);
  DisplacementField(GridGeometry geom, std::vector<double> components);

  const GridGeometry& geometry() const noexcept { return geom_; }
  int rank() const noexcept { return geom_.rank(); }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> component(int axis) const {
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(axis) * geom_.voxel_count(),
                                                  geom_.voxel_count());
  }
  std::span<double> component(int axis) {
    return std::span<double>(data_).subspan(static_cast<std::size_t>(axis) * geom_.voxel_count(),
                                            geom_.voxel_count());
  }

  bool operator==(const DisplacementField& o) const noexcept { return geom_ == o.geom_ && data_ == o.data_; }

 private:
  GridGeometry geom_;
  std::vector<double> data_;
};

/// K-channel soft label map. Channel k is stored planar.
class SegmentationMap {
 public:
  SegmentationMap() = default;
  SegmentationMap(GridGeometry geom, int channels);
  SegmentationMap(GridGeometry geom, int channels, std::vector<double> weights);

  const GridGeometry& geometry() const noexcept { return geom_; }
  int channels() const noexcept { return channels_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> channel(int k) const {
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(k) * geom_.voxel_count(),
                                                  geom_.voxel_count());
  }
  std::span<double> channel(int k) {
    return std::span<double>(data_).subspan(static_cast<std::size_t>(k) * geom_.voxel_count(), geom_.voxel_count());
  }

  bool operator==(const SegmentationMap& o) const noexcept {
    return geom_ == o.geom_ && channels_ == o.channels_ && data_ == o.data_;
  }

 private:
  GridGeometry geom_;
  int channels_ = 0;
  std::vector<double> data_;
};

DisplacementField identity_displacement(const GridGeometry& geom);

/// Exact one-hot encoding of an integer label image. Throws LabelError with the
/// offending voxel when a code is non-integral or outside [0, K).
SegmentationMap onehot_from_labels(const GridImage& labels, int num_labels);

/// Channel j is the indicator of `labels` being in `groups[j]`. Rows may be all
/// zero (unobserved structures). Used for subset and coarse training labels.
SegmentationMap structure_channels(const GridImage& labels, std::span<const std::vector<int>> groups);

/// Per-voxel argmax; ties go to the lowest channel index.
GridImage argmax_labels(const SegmentationMap& seg);

}  // namespace voxreg
