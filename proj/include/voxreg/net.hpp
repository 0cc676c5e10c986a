#pragma once

// Amortized registration function g_theta(f, m) -> u: a UNet-style
// encoder/decoder.
//
//   input  = concat(m, f)                              2 channels, full res
//   enc_i  = lrelu(conv_s2(enc_{i-1}))                 level i+1 (1/2^(i+1))
//   dec_0  = lrelu(conv(enc_{d-1}))                    level d
//   dec_j  = lrelu(conv(concat(up(dec_{j-1}), skip)))  level d-j, skip = enc at that level
//   full   = concat(up(dec_{d-1}), input) -> lrelu(conv) per full_res filter
//   u      = conv(full)                                rank channels, no activation
//
// All convolutions use kernel 3 with zero "same" padding.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxreg/grid.hpp"
#include "voxreg/tape.hpp"

namespace voxreg {

struct NetConfig {
  int spatial_dims = 2;
  std::vector<int> encoder_filters{8, 16, 16};
  std::vector<int> decoder_filters{16, 16, 16};
  std::vector<int> full_res_filters{8};
  int kernel_size = 3;
  int stride = 2;
  double leaky_slope = 0.2;
  int feature_multiplier = 1;
  /// Scale applied to the He-uniform init of the output layer so that the
  /// initial field is close to the identity.
  double output_init_scale = 1e-2;

  int depth() const noexcept { return static_cast<int>(encoder_filters.size()); }
  /// Throws std::invalid_argument for inconsistent configurations.
  void validate() const;
  /// Throws GeometryError unless every extent is divisible by 2^depth.
  void check_extents(const GridGeometry& geom) const;

  /// Full-size widths: encoder 16-32-32-32, decoder 32-32-32-32, full-res 8.
  static NetConfig full_scale(int spatial_dims);
};

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weights;  ///< [out][in][k^n]
  std::vector<double> bias;     ///< [out]
};

struct NetParams {
  NetConfig config;
  std::vector<ConvLayer> layers;  ///< encoder, decoder, full-res, output

  std::size_t parameter_count() const;
  bool operator==(const NetParams& o) const;
};

/// Allocates layers with zero weights and biases.
NetParams zero_params(const NetConfig& config);
/// He-uniform weights (fan-in, leaky slope aware), zero biases, output layer
/// scaled by config.output_init_scale. Deterministic in `seed`.
NetParams init_params(const NetConfig& config, std::uint64_t seed);

/// Records the network on `tape`. `params` must hold one (weights, bias) pair
/// of tape variables per layer. Returns the displacement tensor.
Tape::Var record_network(Tape& tape, const NetParams& params, const std::vector<Tape::Var>& layer_vars, Tape::Var fixed,
                         Tape::Var moving);

/// Pushes every layer's weights and bias as parameters (alternating w, b).
std::vector<Tape::Var> record_parameters(Tape& tape, const NetParams& params);

Tensor image_tensor(const GridImage& img);
Tensor field_tensor(const DisplacementField& u);
Tensor seg_tensor(const SegmentationMap& seg);
DisplacementField tensor_to_field(const GridGeometry& geom, const Tensor& t);

DisplacementField forward(const NetParams& params, const GridImage& fixed, const GridImage& moving);

// Binary model container, little endian:
//   "VXNP" | u32 version=1 | u32 spatial_dims | u32 kernel | u32 stride
//   | f64 leaky_slope | u32 multiplier | f64 output_init_scale
//   | u32 n_enc | i32[n_enc] | u32 n_dec | i32[n_dec] | u32 n_full | i32[n_full]
//   | u32 n_layers | per layer: u32 in | u32 out | u32 n_weights | f32[n_weights]
//                              | u32 n_bias | f32[n_bias]
// Weights are stored as float32; writing rounds to nearest float.
void write_params(const std::filesystem::path& path, const NetParams& params);
NetParams read_params(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_params(const NetParams& params);
NetParams decode_params(const std::vector<std::uint8_t>& bytes);

}  // namespace voxreg
