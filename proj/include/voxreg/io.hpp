#pragma once

// File formats.
//
// 2D images: binary PGM (P5). maxval <= 255 uses one byte per pixel, larger
// maxval two bytes, most significant first (Netpbm convention). Reading
// rescales to [0, 1] (value / maxval); writing clamps to [0, 1] and rounds
// value * maxval to the nearest integer. Grid dims are (height, width).
//
// 2D/3D volumes: single-file NIfTI-1 ("n+1"), uncompressed, little endian,
// single frame, datatypes uint8 / int16 / float32. NIfTI dim[1] is the
// fastest axis, i.e. our last axis. scl_slope/scl_inter are applied on read
// when slope is non-zero. Orientation fields are carried verbatim but not
// interpreted. Writing integer datatypes rounds to nearest and clamps to the
// type's range.
//
// Displacement fields ("VXDF" container), little endian:
//   "VXDF" | u8 version = 1 | u8 n (2 or 3) | u32 dims[n]
//   | f32 payload: n planes (component 0 first), each in grid order.
// A short payload is `truncated`; any excess is `dims_mismatch`.
//
// Every reader reports failures as FormatError with the byte offset.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "voxreg/grid.hpp"

namespace voxreg {

enum class NiftiDatatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

using NiftiHeaderBytes = std::array<std::uint8_t, 348>;

struct NiftiVolume {
  GridImage image;
  NiftiDatatype datatype = NiftiDatatype::float32;
  NiftiHeaderBytes header{};  ///< raw header as read
};

GridImage decode_pgm(const std::vector<std::uint8_t>& bytes);
/// maxval in [1, 65535].
std::vector<std::uint8_t> encode_pgm(const GridImage& img, int maxval = 255);

NiftiVolume decode_nifti(const std::vector<std::uint8_t>& bytes);
/// When `header_template` is given its bytes are kept except for the fields
/// describing shape, datatype, scaling, offset and magic.
std::vector<std::uint8_t> encode_nifti(const GridImage& img, NiftiDatatype datatype,
                                       const NiftiHeaderBytes* header_template = nullptr);

DisplacementField decode_field(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_field(const DisplacementField& u);

/// Dispatches on extension: ".pgm" or ".nii".
GridImage read_image(const std::filesystem::path& path);
/// PGM is written 16-bit; NIfTI uses `datatype`.
void write_image(const std::filesystem::path& path, const GridImage& img,
                 NiftiDatatype datatype = NiftiDatatype::float32);

DisplacementField read_field(const std::filesystem::path& path);
void write_field(const std::filesystem::path& path, const DisplacementField& u);

}  // namespace voxreg
