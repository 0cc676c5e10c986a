#include "voxreg/net.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "binary.hpp"
#include "voxreg/errors.hpp"

namespace voxreg {

namespace {

std::size_t kernel_taps(const NetConfig& c) {
  std::size_t t = 1;
  for (int a = 0; a < c.spatial_dims; ++a) t *= static_cast<std::size_t>(c.kernel_size);
  return t;
}

std::vector<int> scaled(const std::vector<int>& v, int mult) {
  std::vector<int> out;
  for (int x : v) out.push_back(x * mult);
  return out;
}

struct LayerPlan {
  int in, out;
};

std::vector<LayerPlan> plan_layers(const NetConfig& c) {
  const auto enc = scaled(c.encoder_filters, c.feature_multiplier);
  const auto dec = scaled(c.decoder_filters, c.feature_multiplier);
  const auto full = scaled(c.full_res_filters, c.feature_multiplier);
  const int d = c.depth();
  std::vector<LayerPlan> plan;
  for (int i = 0; i < d; ++i) plan.push_back({i == 0 ? 2 : enc[i - 1], enc[i]});
  for (int j = 0; j < d; ++j) plan.push_back({j == 0 ? enc[d - 1] : dec[j - 1] + enc[d - j - 1], dec[j]});
  int ch = dec[d - 1] + 2;
  for (int f : full) {
    plan.push_back({ch, f});
    ch = f;
  }
  plan.push_back({ch, c.spatial_dims});
  return plan;
}

}  // namespace

void NetConfig::validate() const {
  if (spatial_dims != 2 && spatial_dims != 3) throw std::invalid_argument("NetConfig: spatial_dims must be 2 or 3");
  if (encoder_filters.empty()) throw std::invalid_argument("NetConfig: need at least one encoder level");
  if (decoder_filters.size() != encoder_filters.size())
    throw std::invalid_argument("NetConfig: decoder and encoder must have the same number of levels");
  auto positive = [](const std::vector<int>& v) {
    for (int x : v)
      if (x < 1) return false;
    return true;
  };
  if (!positive(encoder_filters) || !positive(decoder_filters) || !positive(full_res_filters))
    throw std::invalid_argument("NetConfig: filter counts must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("NetConfig: kernel size must be odd");
  if (stride != 2) throw std::invalid_argument("NetConfig: encoder stride must be 2");
  if (feature_multiplier < 1) throw std::invalid_argument("NetConfig: feature multiplier must be >= 1");
  if (!(leaky_slope >= 0.0)) throw std::invalid_argument("NetConfig: leaky slope must be >= 0");
}

void NetConfig::check_extents(const GridGeometry& geom) const {
  if (geom.rank() != spatial_dims)
    throw GeometryError("network expects " + std::to_string(spatial_dims) + "-D inputs, got " +
                        std::to_string(geom.rank()) + "-D");
  const int factor = 1 << depth();
  for (int d : geom.dims())
    if (d % factor != 0)
      throw GeometryError("extent " + std::to_string(d) + " is not divisible by 2^" + std::to_string(depth()));
}

NetConfig NetConfig::full_scale(int spatial_dims) {
  NetConfig c;
  c.spatial_dims = spatial_dims;
  c.encoder_filters = {16, 32, 32, 32};
  c.decoder_filters = {32, 32, 32, 32};
  c.full_res_filters = {8};
  return c;
}

std::size_t NetParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

bool NetParams::operator==(const NetParams& o) const {
  if (layers.size() != o.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = o.layers[i];
    if (a.in_channels != b.in_channels || a.out_channels != b.out_channels || a.weights != b.weights ||
        a.bias != b.bias)
      return false;
  }
  return true;
}

NetParams zero_params(const NetConfig& config) {
  config.validate();
  NetParams p;
  p.config = config;
  const std::size_t taps = kernel_taps(config);
  for (const auto& lp : plan_layers(config)) {
    ConvLayer l;
    l.in_channels = lp.in;
    l.out_channels = lp.out;
    l.weights.assign(static_cast<std::size_t>(lp.in) * lp.out * taps, 0.0);
    l.bias.assign(static_cast<std::size_t>(lp.out), 0.0);
    p.layers.push_back(std::move(l));
  }
  return p;
}

NetParams init_params(const NetConfig& config, std::uint64_t seed) {
  NetParams p = zero_params(config);
  std::mt19937_64 rng(seed);
  const std::size_t taps = kernel_taps(config);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    auto& l = p.layers[li];
    const double fan_in = static_cast<double>(l.in_channels) * static_cast<double>(taps);
    double bound = std::sqrt(6.0 / ((1.0 + config.leaky_slope * config.leaky_slope) * fan_in));
    if (li + 1 == p.layers.size()) bound *= config.output_init_scale;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : l.weights) w = dist(rng);
  }
  return p;
}

std::vector<Tape::Var> record_parameters(Tape& tape, const NetParams& params) {
  std::vector<Tape::Var> vars;
  vars.reserve(params.layers.size() * 2);
  for (const auto& l : params.layers) {
    Tensor w;
    w.channels = 1;
    w.data = l.weights;
    Tensor b;
    b.channels = 1;
    b.data = l.bias;
    vars.push_back(tape.parameter(std::move(w)));
    vars.push_back(tape.parameter(std::move(b)));
  }
  return vars;
}

Tape::Var record_network(Tape& tape, const NetParams& params, const std::vector<Tape::Var>& layer_vars, Tape::Var fixed,
                         Tape::Var moving) {
  const NetConfig& c = params.config;
  if (layer_vars.size() != params.layers.size() * 2)
    throw std::invalid_argument("record_network: expected one (weights, bias) pair per layer");
  const int d = c.depth();
  std::size_t layer = 0;
  auto conv = [&](Tape::Var x, int stride) {
    const auto w = layer_vars[2 * layer];
    const auto b = layer_vars[2 * layer + 1];
    ++layer;
    return tape.conv(x, w, b, c.kernel_size, stride);
  };
  auto act = [&](Tape::Var x) { return tape.leaky_relu(x, c.leaky_slope); };

  const Tape::Var input = tape.concat(moving, fixed);
  std::vector<Tape::Var> enc;
  Tape::Var x = input;
  for (int i = 0; i < d; ++i) {
    x = act(conv(x, c.stride));
    enc.push_back(x);
  }
  for (int j = 0; j < d; ++j) {
    if (j > 0) x = tape.concat(tape.upsample2x(x), enc[static_cast<std::size_t>(d - j - 1)]);
    x = act(conv(x, 1));
  }
  x = tape.concat(tape.upsample2x(x), input);
  for (std::size_t k = 0; k < c.full_res_filters.size(); ++k) x = act(conv(x, 1));
  return conv(x, 1);
}

Tensor image_tensor(const GridImage& img) {
  Tensor t;
  t.dims = img.geometry().dims();
  t.channels = 1;
  t.data.assign(img.values().begin(), img.values().end());
  return t;
}

Tensor field_tensor(const DisplacementField& u) {
  Tensor t;
  t.dims = u.geometry().dims();
  t.channels = u.rank();
  t.data.assign(u.data().begin(), u.data().end());
  return t;
}

Tensor seg_tensor(const SegmentationMap& seg) {
  Tensor t;
  t.dims = seg.geometry().dims();
  t.channels = seg.channels();
  t.data.assign(seg.data().begin(), seg.data().end());
  return t;
}

DisplacementField tensor_to_field(const GridGeometry& geom, const Tensor& t) {
  if (t.dims != geom.dims() || t.channels != geom.rank())
    throw GeometryError("network output does not match the input geometry");
  for (double v : t.data)
    if (!std::isfinite(v)) throw NumericalError("network produced a non-finite displacement");
  return DisplacementField(geom, t.data);
}

DisplacementField forward(const NetParams& params, const GridImage& fixed, const GridImage& moving) {
  require_same_geometry(fixed.geometry(), moving.geometry(), "forward");
  params.config.check_extents(fixed.geometry());
  Tape tape;
  const auto vars = record_parameters(tape, params);
  const auto f = tape.input(image_tensor(fixed));
  const auto m = tape.input(image_tensor(moving));
  const auto u = record_network(tape, params, vars, f, m);
  return tensor_to_field(fixed.geometry(), tape.value(u));
}

namespace {
constexpr char kMagic[4] = {'V', 'X', 'N', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_ints(detail::ByteWriter& w, const std::vector<int>& v) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
  for (int x : v) w.put<std::int32_t>(x);
}

std::vector<int> get_ints(detail::ByteReader& r, const char* what) {
  const auto n = r.get<std::uint32_t>(what);
  if (n > 64) throw FormatError(FormatError::Kind::malformed_header, r.pos(), std::string("implausible ") + what);
  std::vector<int> v;
  for (std::uint32_t i = 0; i < n; ++i) v.push_back(r.get<std::int32_t>(what));
  return v;
}

void put_floats(detail::ByteWriter& w, const std::vector<double>& v) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
  for (double x : v) w.put<float>(static_cast<float>(x));
}

std::vector<double> get_floats(detail::ByteReader& r, std::size_t expected, const char* what) {
  const std::size_t at = r.pos();
  const auto n = r.get<std::uint32_t>(what);
  if (n != expected) throw FormatError(FormatError::Kind::dims_mismatch, at, std::string("unexpected size of ") + what);
  if (r.remaining() < static_cast<std::size_t>(n) * 4)
    throw FormatError(FormatError::Kind::truncated, r.pos(), std::string("truncated ") + what);
  std::vector<double> v(n);
  for (auto& x : v) x = r.get<float>(what);
  return v;
}
}  // namespace

std::vector<std::uint8_t> encode_params(const NetParams& params) {
  const NetConfig& c = params.config;
  detail::ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.spatial_dims));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.kernel_size));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.stride));
  w.put<double>(c.leaky_slope);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.feature_multiplier));
  w.put<double>(c.output_init_scale);
  put_ints(w, c.encoder_filters);
  put_ints(w, c.decoder_filters);
  put_ints(w, c.full_res_filters);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.in_channels));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.out_channels));
    put_floats(w, l.weights);
    put_floats(w, l.bias);
  }
  return std::move(w.bytes());
}

NetParams decode_params(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(FormatError::Kind::malformed_header, 0, "not a voxreg model file (bad magic)");
  const std::size_t vpos = r.pos();
  if (r.get<std::uint32_t>("version") != kVersion)
    throw FormatError(FormatError::Kind::version_mismatch, vpos, "unsupported model version");
  NetConfig c;
  c.spatial_dims = static_cast<int>(r.get<std::uint32_t>("spatial_dims"));
  c.kernel_size = static_cast<int>(r.get<std::uint32_t>("kernel_size"));
  c.stride = static_cast<int>(r.get<std::uint32_t>("stride"));
  c.leaky_slope = r.get<double>("leaky_slope");
  c.feature_multiplier = static_cast<int>(r.get<std::uint32_t>("feature_multiplier"));
  c.output_init_scale = r.get<double>("output_init_scale");
  c.encoder_filters = get_ints(r, "encoder filters");
  c.decoder_filters = get_ints(r, "decoder filters");
  c.full_res_filters = get_ints(r, "full-res filters");
  const std::size_t cfg_end = r.pos();
  NetParams p;
  try {
    p = zero_params(c);
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatError::Kind::malformed_header, cfg_end, std::string("invalid network config: ") + e.what());
  }
  const std::size_t lpos = r.pos();
  if (r.get<std::uint32_t>("layer count") != p.layers.size())
    throw FormatError(FormatError::Kind::dims_mismatch, lpos, "layer count does not match config");
  for (auto& l : p.layers) {
    const std::size_t at = r.pos();
    const auto in = static_cast<int>(r.get<std::uint32_t>("layer in"));
    const auto out = static_cast<int>(r.get<std::uint32_t>("layer out"));
    if (in != l.in_channels || out != l.out_channels)
      throw FormatError(FormatError::Kind::dims_mismatch, at, "layer shape does not match config");
    l.weights = get_floats(r, l.weights.size(), "weights");
    l.bias = get_floats(r, l.bias.size(), "bias");
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::dims_mismatch, r.pos(), "trailing bytes in model file");
  return p;
}

void write_params(const std::filesystem::path& path, const NetParams& params) {
  detail::write_file_bytes(path, encode_params(params));
}

NetParams read_params(const std::filesystem::path& path) { return decode_params(detail::read_file_bytes(path)); }

}  // namespace voxreg
