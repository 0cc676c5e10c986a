#pragma once

// Registration datasets.
//
// On-disk layout of a dataset directory:
//   dataset.txt                 "num_labels=K" then one "pair=ID" line per pair
//   ID_fixed.nii, ID_moving.nii           float32 intensities
//   ID_fixed_seg.nii, ID_moving_seg.nii   uint8 hard labels in [0, K)
//   ID_truth.vxdf                         generating field (optional)

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voxreg/grid.hpp"
#include "voxreg/synth.hpp"

namespace voxreg {

struct ImagePair {
  GridImage fixed;
  GridImage moving;
};

struct LabelPair {
  GridImage fixed;
  GridImage moving;
};

/// Random-access pair collection. Label access is separate from image access
/// so that callers can prove which paths touch segmentations.
class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::string id(std::size_t i) const = 0;
  virtual const ImagePair& images(std::size_t i) const = 0;
  virtual const LabelPair& labels(std::size_t i) const = 0;
  virtual int num_labels() const = 0;
  /// Number of labels() calls so far.
  std::size_t label_reads() const noexcept { return label_reads_; }

 protected:
  mutable std::size_t label_reads_ = 0;
};

class MemoryPairSource final : public PairSource {
 public:
  MemoryPairSource(int num_labels, std::vector<std::string> ids, std::vector<ImagePair> images,
                   std::vector<LabelPair> labels);
  static MemoryPairSource from_synth(const std::vector<SynthPair>& pairs);

  std::size_t size() const override { return images_.size(); }
  std::string id(std::size_t i) const override { return ids_.at(i); }
  const ImagePair& images(std::size_t i) const override { return images_.at(i); }
  const LabelPair& labels(std::size_t i) const override;
  int num_labels() const override { return num_labels_; }

 private:
  int num_labels_;
  std::vector<std::string> ids_;
  std::vector<ImagePair> images_;
  std::vector<LabelPair> labels_;
};

/// Reads intensities eagerly and label maps on first request.
class DirectoryPairSource final : public PairSource {
 public:
  explicit DirectoryPairSource(std::filesystem::path dir);

  std::size_t size() const override { return ids_.size(); }
  std::string id(std::size_t i) const override { return ids_.at(i); }
  const ImagePair& images(std::size_t i) const override { return images_.at(i); }
  const LabelPair& labels(std::size_t i) const override;
  int num_labels() const override { return num_labels_; }
  const std::filesystem::path& directory() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  int num_labels_ = 0;
  std::vector<std::string> ids_;
  std::vector<ImagePair> images_;
  mutable std::vector<std::optional<LabelPair>> labels_;
};

std::string pair_id(std::size_t index);
void write_dataset_pair(const std::filesystem::path& dir, const std::string& id, const SynthPair& pair);
void write_dataset_index(const std::filesystem::path& dir, int num_labels, const std::vector<std::string>& ids);

}  // namespace voxreg
