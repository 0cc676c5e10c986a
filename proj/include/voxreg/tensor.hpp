#pragma once

#include <cstddef>
#include <vector>

namespace voxreg {

/// Dense multi-channel feature map on an n-D grid (n = 2 or 3), planar,
/// last spatial axis fastest. Extents may be 1 (coarse feature levels). A
/// scalar is a tensor with no spatial axes and one channel.
struct Tensor {
  std::vector<int> dims;
  int channels = 0;
  std::vector<double> data;

  static Tensor zeros(std::vector<int> dims, int channels);
  static Tensor scalar(double v);

  std::size_t spatial_size() const noexcept {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
  bool same_shape(const Tensor& o) const noexcept { return dims == o.dims && channels == o.channels; }
};

}  // namespace voxreg
