#include "voxreg/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "voxreg/errors.hpp"
#include "voxreg/io.hpp"

namespace voxreg {

namespace fs = std::filesystem;

MemoryPairSource::MemoryPairSource(int num_labels, std::vector<std::string> ids, std::vector<ImagePair> images,
                                   std::vector<LabelPair> labels)
    : num_labels_(num_labels), ids_(std::move(ids)), images_(std::move(images)), labels_(std::move(labels)) {
  if (ids_.size() != images_.size() || (!labels_.empty() && labels_.size() != images_.size()))
    throw std::invalid_argument("MemoryPairSource: ids, images and labels differ in length");
}

MemoryPairSource MemoryPairSource::from_synth(const std::vector<SynthPair>& pairs) {
  std::vector<std::string> ids;
  std::vector<ImagePair> images;
  std::vector<LabelPair> labels;
  int num_labels = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ids.push_back(pair_id(i));
    images.push_back({pairs[i].fixed, pairs[i].moving});
    labels.push_back({pairs[i].fixed_labels, pairs[i].moving_labels});
    num_labels = std::max(num_labels, pairs[i].num_labels);
  }
  return MemoryPairSource(num_labels, std::move(ids), std::move(images), std::move(labels));
}

const LabelPair& MemoryPairSource::labels(std::size_t i) const {
  ++label_reads_;
  if (labels_.empty()) throw std::invalid_argument("MemoryPairSource: no segmentations available");
  return labels_.at(i);
}

DirectoryPairSource::DirectoryPairSource(fs::path dir) : dir_(std::move(dir)) {
  const fs::path index = dir_ / "dataset.txt";
  std::ifstream in(index);
  if (!in) throw FormatError(FormatError::Kind::io, 0, "cannot open " + index.string());
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(FormatError::Kind::malformed_header, line_offset, "dataset index: expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "num_labels") {
      try {
        num_labels_ = std::stoi(value);
      } catch (const std::exception&) {
        throw FormatError(FormatError::Kind::invalid_value, line_offset, "dataset index: bad num_labels");
      }
    } else if (key == "pair") {
      ids_.push_back(value);
    }
  }
  if (num_labels_ < 1) throw FormatError(FormatError::Kind::malformed_header, 0, "dataset index: missing num_labels");
  if (ids_.empty()) throw FormatError(FormatError::Kind::malformed_header, 0, "dataset index: no pairs");
  for (const auto& id : ids_)
    images_.push_back({read_image(dir_ / (id + "_fixed.nii")), read_image(dir_ / (id + "_moving.nii"))});
  labels_.resize(ids_.size());
}

const LabelPair& DirectoryPairSource::labels(std::size_t i) const {
  ++label_reads_;
  auto& slot = labels_.at(i);
  if (!slot) {
    const std::string& id = ids_[i];
    slot = LabelPair{read_image(dir_ / (id + "_fixed_seg.nii")), read_image(dir_ / (id + "_moving_seg.nii"))};
  }
  return *slot;
}

std::string pair_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%04zu", index);
  return buf;
}

void write_dataset_pair(const fs::path& dir, const std::string& id, const SynthPair& pair) {
  write_image(dir / (id + "_fixed.nii"), pair.fixed, NiftiDatatype::float32);
  write_image(dir / (id + "_moving.nii"), pair.moving, NiftiDatatype::float32);
  write_image(dir / (id + "_fixed_seg.nii"), pair.fixed_labels, NiftiDatatype::uint8);
  write_image(dir / (id + "_moving_seg.nii"), pair.moving_labels, NiftiDatatype::uint8);
  write_field(dir / (id + "_truth.vxdf"), pair.truth);
}

void write_dataset_index(const fs::path& dir, int num_labels, const std::vector<std::string>& ids) {
  std::ostringstream os;
  os << "num_labels=" << num_labels << '\n';
  for (const auto& id : ids) os << "pair=" << id << '\n';
  const std::string s = os.str();
  std::ofstream out(dir / "dataset.txt", std::ios::binary);
  if (!out || !out.write(s.data(), static_cast<std::streamsize>(s.size())))
    throw FormatError(FormatError::Kind::io, 0, "cannot write " + (dir / "dataset.txt").string());
}

}  // namespace voxreg
