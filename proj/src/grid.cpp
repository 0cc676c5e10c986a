#include "voxreg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "voxreg/errors.hpp"

namespace voxreg {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw std::invalid_argument(std::string(what) + ": non-finite value at index " + std::to_string(i));
  }
}

}  // namespace

GridGeometry::GridGeometry(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2 || dims_.size() > 3)
    throw GeometryError("grid rank must be 2 or 3, got " + std::to_string(dims_.size()));
  for (int d : dims_)
    if (d < 2) throw GeometryError("every grid extent must be >= 2, got " + std::to_string(d));
  strides_.assign(dims_.size(), 1);
  for (int a = static_cast<int>(dims_.size()) - 2; a >= 0; --a)
    strides_[a] = strides_[a + 1] * static_cast<std::size_t>(dims_[a + 1]);
  voxel_count_ = strides_[0] * static_cast<std::size_t>(dims_[0]);
}

void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what) {
  if (!(a == b)) throw GeometryError(std::string(what) + ": geometry mismatch");
}

GridImage::GridImage(GridGeometry geom) : geom_(std::move(geom)), values_(geom_.voxel_count(), 0.0) {}

GridImage::GridImage(GridGeometry geom, std::vector<double> values)
    : geom_(std::move(geom)), values_(std::move(values)) {
  if (values_.size() != geom_.voxel_count()) throw GeometryError("GridImage: value count does not match geometry");
  require_finite(values_, "GridImage");
}

DisplacementField::DisplacementField(GridGeometry geom)
    : geom_(std::move(geom)), data_(geom_.voxel_count() * static_cast<std::size_t>(geom_.rank()), 0.0) {}

DisplacementField::DisplacementField(GridGeometry geom, std::vector<double> components)
    : geom_(std::move(geom)), data_(std::move(components)) {
  if (data_.size() != geom_.voxel_count() * static_cast<std::size_t>(geom_.rank()))
    throw GeometryError("DisplacementField: component count does not match geometry");
  require_finite(data_, "DisplacementField");
}

SegmentationMap::SegmentationMap(GridGeometry geom, int channels)
    : geom_(std::move(geom)), channels_(channels) {
  if (channels_ < 1) throw std::invalid_argument("SegmentationMap: need at least one channel");
  data_.assign(geom_.voxel_count() * static_cast<std::size_t>(channels_), 0.0);
}

SegmentationMap::SegmentationMap(GridGeometry geom, int channels, std::vector<double> weights)
    : geom_(std::move(geom)), channels_(channels), data_(std::move(weights)) {
  if (channels_ < 1) throw std::invalid_argument("SegmentationMap: need at least one channel");
  if (data_.size() != geom_.voxel_count() * static_cast<std::size_t>(channels_))
    throw GeometryError("SegmentationMap: weight count does not match geometry");
  require_finite(data_, "SegmentationMap");
}

DisplacementField identity_displacement(const GridGeometry& geom) { return DisplacementField(geom); }

SegmentationMap onehot_from_labels(const GridImage& labels, int num_labels) {
  if (num_labels < 1) throw std::invalid_argument("onehot_from_labels: K must be >= 1");
  SegmentationMap seg(labels.geometry(), num_labels);
  const std::size_t nvox = labels.geometry().voxel_count();
  for (std::size_t i = 0; i < nvox; ++i) {
    const double v = labels[i];
    const double code = std::round(v);
    if (code != v || code < 0 || code >= num_labels)
      throw LabelError("label " + std::to_string(v) + " at voxel " + std::to_string(i) + " is not in [0, " +
                           std::to_string(num_labels) + ")",
                       i);
    seg.channel(static_cast<int>(code))[i] = 1.0;
  }
  return seg;
}

SegmentationMap structure_channels(const GridImage& labels, std::span<const std::vector<int>> groups) {
  if (groups.empty()) throw std::invalid_argument("structure_channels: no groups given");
  SegmentationMap seg(labels.geometry(), static_cast<int>(groups.size()));
  const std::size_t nvox = labels.geometry().voxel_count();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto ch = seg.channel(static_cast<int>(g));
    for (std::size_t i = 0; i < nvox; ++i) {
      const int code = static_cast<int>(std::lround(labels[i]));
      if (std::find(groups[g].begin(), groups[g].end(), code) != groups[g].end()) ch[i] = 1.0;
    }
  }
  return seg;
}

GridImage argmax_labels(const SegmentationMap& seg) {
  GridImage out(seg.geometry());
  const std::size_t nvox = seg.geometry().voxel_count();
  for (std::size_t i = 0; i < nvox; ++i) {
    int best = 0;
    double best_w = seg.channel(0)[i];
    for (int k = 1; k < seg.channels(); ++k) {
      if (seg.channel(k)[i] > best_w) {
        best_w = seg.channel(k)[i];
        best = k;
      }
    }
    out[i] = best;
  }
  return out;
}

}  // namespace voxreg
