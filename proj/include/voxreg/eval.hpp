#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "voxreg/grid.hpp"

namespace voxreg {

/// Hard Dice per structure. Label 0 is background and is never scored;
/// structures 1..K-1 absent from both maps have no score and are skipped
/// from the mean.
struct DiceReport {
  std::vector<std::optional<double>> per_structure;  ///< index k-1 holds label k
  double mean = 0.0;
  int scored = 0;  ///< structures contributing to the mean
};

/// Warps one_hot(moving_labels) by u, hardens by argmax (ties to the lowest
/// label) and scores the overlap with fixed_labels.
DiceReport dice_eval(const GridImage& fixed_labels, const GridImage& moving_labels, const DisplacementField& u,
                     int num_labels);

/// Dice of two hard label maps without warping.
DiceReport dice_labels(const GridImage& a, const GridImage& b, int num_labels);

struct RegularityReport {
  std::size_t folding_count = 0;
  double folding_fraction = 0.0;
  std::size_t evaluated_voxel_count = 0;
  GridImage det_field;
};

/// det(I + grad u) per voxel, central differences inside, one-sided at the
/// boundary. Voxels with det <= 0 inside `mask` (non-zero voxels; all voxels
/// when absent) are counted as folding.
RegularityReport jacobian_report(const DisplacementField& u, const GridImage* mask = nullptr);

/// Spatial derivative du_c/dx_a at voxel idx with the stencil above.
double field_derivative(const DisplacementField& u, int component, int axis, std::size_t idx);

/// Tab-separated report. Columns: pair_id, dice_1 .. dice_{K-1}, mean_dice,
/// folding_count, folding_fraction. Absent structures print as "nan".
struct EvalRow {
  std::string pair_id;
  DiceReport dice;
  RegularityReport regularity;
};
void write_report_header(std::ostream& os, int num_labels);
void write_report_row(std::ostream& os, const EvalRow& row);
/// Human-readable summary.
void write_report_text(std::ostream& os, const EvalRow& row);

}  // namespace voxreg
