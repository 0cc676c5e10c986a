#include "voxreg/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "binary.hpp"
#include "voxreg/errors.hpp"

namespace voxreg {

using Kind = FormatError::Kind;

namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Kind::io, 0, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(Kind::io, 0, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(Kind::io, 0, "write failed for " + path.string());
}

}  // namespace detail

// ---- PGM ------------------------------------------------------------------

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class PgmHeaderParser {
 public:
  explicit PgmHeaderParser(const std::vector<std::uint8_t>& b) : b_(b) {}

  // Skips whitespace and comments, then reads a decimal integer that must be
  // followed by one whitespace byte.
  long number(const char* what) {
    for (;;) {
      if (pos_ >= b_.size()) throw FormatError(Kind::truncated, pos_, std::string("PGM header ends before ") + what);
      if (is_space(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000) throw FormatError(Kind::malformed_header, start, std::string("PGM ") + what + " too large");
      ++pos_;
    }
    if (pos_ == start) throw FormatError(Kind::malformed_header, start, std::string("PGM expected ") + what);
    if (pos_ >= b_.size()) throw FormatError(Kind::truncated, pos_, std::string("PGM header ends after ") + what);
    if (!is_space(b_[pos_])) throw FormatError(Kind::malformed_header, pos_, std::string("PGM bad delimiter after ") + what);
    return v;
  }
  std::size_t pos() const noexcept { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

GridImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2) throw FormatError(Kind::truncated, bytes.size(), "PGM magic missing");
  if (bytes[0] != 'P' || bytes[1] != '5') throw FormatError(Kind::malformed_header, 0, "not a binary PGM (P5)");
  PgmHeaderParser p(bytes);
  p.skip(2);
  if (p.pos() >= bytes.size()) throw FormatError(Kind::truncated, p.pos(), "PGM header ends after magic");
  if (!is_space(bytes[p.pos()])) throw FormatError(Kind::malformed_header, p.pos(), "PGM magic not followed by whitespace");
  const std::size_t wpos = p.pos();
  const long width = p.number("width");
  const long height = p.number("height");
  const std::size_t mpos = p.pos();
  const long maxval = p.number("maxval");
  if (width < 2 || height < 2) throw FormatError(Kind::malformed_header, wpos, "PGM extents must be >= 2");
  if (maxval < 1 || maxval > 65535) throw FormatError(Kind::unsupported_datatype, mpos, "PGM maxval out of range");
  p.skip(1);  // single whitespace after maxval
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t nvox = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - p.pos() < nvox * bpp)
    throw FormatError(Kind::truncated, bytes.size(), "PGM payload shorter than width*height");
  std::vector<double> vals(nvox);
  const std::uint8_t* d = bytes.data() + p.pos();
  for (std::size_t i = 0; i < nvox; ++i) {
    const unsigned v = bpp == 1 ? d[i] : (static_cast<unsigned>(d[2 * i]) << 8) | d[2 * i + 1];
    if (v > static_cast<unsigned>(maxval))
      throw FormatError(Kind::invalid_value, p.pos() + i * bpp, "PGM sample exceeds maxval");
    vals[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return GridImage(GridGeometry({static_cast<int>(height), static_cast<int>(width)}), std::move(vals));
}

std::vector<std::uint8_t> encode_pgm(const GridImage& img, int maxval) {
  if (img.geometry().rank() != 2) throw GeometryError("PGM holds 2-D images only");
  if (maxval < 1 || maxval > 65535) throw std::invalid_argument("PGM maxval must be in [1, 65535]");
  const std::string header = "P5\n" + std::to_string(img.geometry().dim(1)) + " " +
                             std::to_string(img.geometry().dim(0)) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : img.values()) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (maxval > 255) {
      out.push_back(static_cast<std::uint8_t>(q >> 8));
      out.push_back(static_cast<std::uint8_t>(q & 0xff));
    } else {
      out.push_back(static_cast<std::uint8_t>(q));
    }
  }
  return out;
}

// ---- NIfTI-1 --------------------------------------------------------------

namespace {

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::size_t kNiftiDataOffset = 352;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffMagic = 344;

template <typename T>
T load(const std::uint8_t* base, std::size_t off) {
  T v;
  std::memcpy(&v, base + off, sizeof(T));
  return v;
}

template <typename T>
void store(std::uint8_t* base, std::size_t off, T v) {
  std::memcpy(base + off, &v, sizeof(T));
}

std::size_t datatype_bytes(NiftiDatatype t) {
  switch (t) {
    case NiftiDatatype::uint8:
      return 1;
    case NiftiDatatype::int16:
      return 2;
    case NiftiDatatype::float32:
      return 4;
  }
  return 0;
}

}  // namespace

NiftiVolume decode_nifti(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kNiftiHeaderSize) throw FormatError(Kind::truncated, bytes.size(), "NIfTI header truncated");
  const std::uint8_t* h = bytes.data();
  if (load<std::int32_t>(h, 0) != 348)
    throw FormatError(Kind::malformed_header, 0, "NIfTI sizeof_hdr is not 348 (or not little endian)");
  if (std::memcmp(h + kOffMagic, "n+1\0", 4) != 0)
    throw FormatError(Kind::malformed_header, kOffMagic, "NIfTI magic is not \"n+1\"");

  const auto ndim = load<std::int16_t>(h, kOffDim);
  if (ndim < 1 || ndim > 7) throw FormatError(Kind::malformed_header, kOffDim, "NIfTI dim[0] out of range");
  std::vector<int> extents;
  for (int i = 1; i <= ndim; ++i) {
    const auto d = load<std::int16_t>(h, kOffDim + 2 * static_cast<std::size_t>(i));
    if (d < 1) throw FormatError(Kind::malformed_header, kOffDim + 2 * static_cast<std::size_t>(i), "NIfTI extent < 1");
    extents.push_back(d);
  }
  // Trailing unit axes (e.g. a single time frame) are dropped.
  while (extents.size() > 2 && extents.back() == 1) extents.pop_back();
  if (extents.size() < 2 || extents.size() > 3)
    throw FormatError(Kind::dims_mismatch, kOffDim, "only single-frame 2-D/3-D NIfTI volumes are supported");
  std::vector<int> dims(extents.rbegin(), extents.rend());
  for (int d : dims)
    if (d < 2) throw FormatError(Kind::dims_mismatch, kOffDim, "NIfTI extents must be >= 2");

  const auto dt = load<std::int16_t>(h, kOffDatatype);
  NiftiDatatype datatype;
  switch (dt) {
    case 2:
      datatype = NiftiDatatype::uint8;
      break;
    case 4:
      datatype = NiftiDatatype::int16;
      break;
    case 16:
      datatype = NiftiDatatype::float32;
      break;
    default:
      throw FormatError(Kind::unsupported_datatype, kOffDatatype,
                        "unsupported NIfTI datatype " + std::to_string(dt));
  }
  const float vox_offset = load<float>(h, kOffVoxOffset);
  if (!(vox_offset >= static_cast<float>(kNiftiDataOffset)) || vox_offset > 1e9f || vox_offset != std::floor(vox_offset))
    throw FormatError(Kind::malformed_header, kOffVoxOffset, "NIfTI vox_offset invalid");
  const auto data_off = static_cast<std::size_t>(vox_offset);

  GridGeometry geom(dims);
  const std::size_t nvox = geom.voxel_count();
  const std::size_t bpv = datatype_bytes(datatype);
  if (bytes.size() < data_off || bytes.size() - data_off < nvox * bpv)
    throw FormatError(Kind::truncated, bytes.size(), "NIfTI payload truncated");

  const float slope = load<float>(h, kOffSclSlope);
  const float inter = load<float>(h, kOffSclInter);
  const bool scaled = slope != 0.0f && std::isfinite(slope) && std::isfinite(inter) && !(slope == 1.0f && inter == 0.0f);
  std::vector<double> vals(nvox);
  const std::uint8_t* d = bytes.data() + data_off;
  for (std::size_t i = 0; i < nvox; ++i) {
    double v = 0;
    switch (datatype) {
      case NiftiDatatype::uint8:
        v = d[i];
        break;
      case NiftiDatatype::int16:
        v = load<std::int16_t>(d, 2 * i);
        break;
      case NiftiDatatype::float32:
        v = load<float>(d, 4 * i);
        break;
    }
    if (scaled) v = v * slope + inter;
    if (!std::isfinite(v)) throw FormatError(Kind::invalid_value, data_off + i * bpv, "non-finite NIfTI sample");
    vals[i] = v;
  }
  NiftiVolume vol{GridImage(geom, std::move(vals)), datatype, {}};
  std::copy_n(h, kNiftiHeaderSize, vol.header.begin());
  return vol;
}

std::vector<std::uint8_t> encode_nifti(const GridImage& img, NiftiDatatype datatype,
                                       const NiftiHeaderBytes* header_template) {
  const GridGeometry& g = img.geometry();
  std::vector<std::uint8_t> out(kNiftiDataOffset, 0);
  std::uint8_t* h = out.data();
  if (header_template) std::copy(header_template->begin(), header_template->end(), out.begin());
  store<std::int32_t>(h, 0, 348);
  for (int i = 0; i < 8; ++i) store<std::int16_t>(h, kOffDim + 2 * static_cast<std::size_t>(i), 1);
  store<std::int16_t>(h, kOffDim, static_cast<std::int16_t>(g.rank()));
  for (int a = 0; a < g.rank(); ++a)
    store<std::int16_t>(h, kOffDim + 2 * static_cast<std::size_t>(a + 1),
                        static_cast<std::int16_t>(g.dim(g.rank() - 1 - a)));
  store<std::int16_t>(h, kOffDatatype, static_cast<std::int16_t>(datatype));
  store<std::int16_t>(h, kOffBitpix, static_cast<std::int16_t>(8 * datatype_bytes(datatype)));
  if (!header_template) {
    store<float>(h, kOffPixdim, 1.0f);
    for (int a = 1; a <= 3; ++a) store<float>(h, kOffPixdim + 4 * static_cast<std::size_t>(a), 1.0f);
  }
  store<float>(h, kOffVoxOffset, static_cast<float>(kNiftiDataOffset));
  store<float>(h, kOffSclSlope, 0.0f);
  store<float>(h, kOffSclInter, 0.0f);
  std::memcpy(h + kOffMagic, "n+1\0", 4);
  std::fill(out.begin() + kNiftiHeaderSize, out.end(), 0);  // no extensions

  const std::size_t bpv = datatype_bytes(datatype);
  out.resize(kNiftiDataOffset + g.voxel_count() * bpv);
  std::uint8_t* d = out.data() + kNiftiDataOffset;
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    const double v = img[i];
    switch (datatype) {
      case NiftiDatatype::uint8:
        d[i] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
        break;
      case NiftiDatatype::int16:
        store<std::int16_t>(d, 2 * i, static_cast<std::int16_t>(std::clamp(std::round(v), -32768.0, 32767.0)));
        break;
      case NiftiDatatype::float32:
        store<float>(d, 4 * i, static_cast<float>(v));
        break;
    }
  }
  return out;
}

// ---- displacement container -----------------------------------------------

namespace {
constexpr char kFieldMagic[4] = {'V', 'X', 'D', 'F'};
constexpr std::uint8_t kFieldVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_field(const DisplacementField& u) {
  detail::ByteWriter w;
  w.put_bytes(kFieldMagic, 4);
  w.put<std::uint8_t>(kFieldVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(u.rank()));
  for (int d : u.geometry().dims()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (double v : u.data()) w.put<float>(static_cast<float>(v));
  return std::move(w.bytes());
}

DisplacementField decode_field(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4, "field magic");
  if (std::memcmp(magic, kFieldMagic, 4) != 0)
    throw FormatError(Kind::malformed_header, 0, "not a displacement field container (bad magic)");
  const auto version = r.get<std::uint8_t>("field version");
  if (version != kFieldVersion)
    throw FormatError(Kind::version_mismatch, 4, "unsupported field container version " + std::to_string(version));
  const auto n = r.get<std::uint8_t>("field rank");
  if (n != 2 && n != 3)
    throw FormatError(Kind::dims_mismatch, 5, "field rank must be 2 or 3, got " + std::to_string(n));
  std::vector<int> dims;
  for (int a = 0; a < n; ++a) {
    const std::size_t at = r.pos();
    const auto d = r.get<std::uint32_t>("field extent");
    if (d < 2 || d > (1u << 20)) throw FormatError(Kind::dims_mismatch, at, "field extent out of range");
    dims.push_back(static_cast<int>(d));
  }
  GridGeometry geom(dims);
  const std::size_t count = geom.voxel_count() * n;
  if (r.remaining() < count * 4) throw FormatError(Kind::truncated, bytes.size(), "field payload truncated");
  if (r.remaining() > count * 4)
    throw FormatError(Kind::dims_mismatch, r.pos() + count * 4, "field payload longer than dims imply");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = r.get<float>("field payload");
    if (!std::isfinite(v)) throw FormatError(Kind::invalid_value, r.pos() - 4, "non-finite displacement");
    data[i] = v;
  }
  return DisplacementField(geom, std::move(data));
}

// ---- path-based -----------------------------------------------------------

namespace {
bool has_ext(const std::filesystem::path& p, const char* ext) { return p.extension() == ext; }
}  // namespace

GridImage read_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (has_ext(path, ".pgm")) return decode_pgm(bytes);
  if (has_ext(path, ".nii")) return decode_nifti(bytes).image;
  throw FormatError(Kind::unsupported_datatype, 0, "unknown image extension for " + path.string());
}

void write_image(const std::filesystem::path& path, const GridImage& img, NiftiDatatype datatype) {
  if (has_ext(path, ".pgm")) {
    detail::write_file_bytes(path, encode_pgm(img, 65535));
  } else if (has_ext(path, ".nii")) {
    detail::write_file_bytes(path, encode_nifti(img, datatype));
  } else {
    throw FormatError(Kind::unsupported_datatype, 0, "unknown image extension for " + path.string());
  }
}

DisplacementField read_field(const std::filesystem::path& path) { return decode_field(detail::read_file_bytes(path)); }

void write_field(const std::filesystem::path& path, const DisplacementField& u) {
  detail::write_file_bytes(path, encode_field(u));
}

}  // namespace voxreg
