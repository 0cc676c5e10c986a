#include "voxreg/eval.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "voxreg/errors.hpp"
#include "voxreg/warp.hpp"

namespace voxreg {

DiceReport dice_labels(const GridImage& a, const GridImage& b, int num_labels) {
  require_same_geometry(a.geometry(), b.geometry(), "dice");
  // Validates codes.
  const SegmentationMap sa = onehot_from_labels(a, num_labels);
  const SegmentationMap sb = onehot_from_labels(b, num_labels);
  DiceReport r;
  double acc = 0.0;
  for (int k = 1; k < num_labels; ++k) {
    const auto ca = sa.channel(k);
    const auto cb = sb.channel(k);
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < ca.size(); ++i) {
      const bool ia = ca[i] > 0.5, ib = cb[i] > 0.5;
      na += ia;
      nb += ib;
      inter += ia && ib;
    }
    if (na + nb == 0) {
      r.per_structure.emplace_back(std::nullopt);
      continue;
    }
    const double d = 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
    r.per_structure.emplace_back(d);
    acc += d;
    ++r.scored;
  }
  r.mean = r.scored > 0 ? acc / r.scored : 0.0;
  return r;
}

DiceReport dice_eval(const GridImage& fixed_labels, const GridImage& moving_labels, const DisplacementField& u,
                     int num_labels) {
  require_same_geometry(fixed_labels.geometry(), moving_labels.geometry(), "dice_eval");
  require_same_geometry(fixed_labels.geometry(), u.geometry(), "dice_eval field");
  const SegmentationMap warped = warp_segmentation(onehot_from_labels(moving_labels, num_labels), u);
  return dice_labels(fixed_labels, argmax_labels(warped), num_labels);
}

double field_derivative(const DisplacementField& u, int component, int axis, std::size_t idx) {
  const GridGeometry& g = u.geometry();
  const auto uc = u.component(component);
  const int pos = g.coords(idx)[axis];
  const std::size_t st = g.stride(axis);
  if (pos == 0) return uc[idx + st] - uc[idx];
  if (pos == g.dim(axis) - 1) return uc[idx] - uc[idx - st];
  return 0.5 * (uc[idx + st] - uc[idx - st]);
}

RegularityReport jacobian_report(const DisplacementField& u, const GridImage* mask) {
  const GridGeometry& g = u.geometry();
  if (mask) require_same_geometry(g, mask->geometry(), "jacobian_report mask");
  const int n = g.rank();
  RegularityReport r;
  std::vector<double> det(g.voxel_count());
  for (std::size_t idx = 0; idx < g.voxel_count(); ++idx) {
    double j[3][3] = {};
    for (int c = 0; c < n; ++c)
      for (int a = 0; a < n; ++a) j[c][a] = (c == a ? 1.0 : 0.0) + field_derivative(u, c, a, idx);
    double d;
    if (n == 2) {
      d = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    } else {
      d = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
          j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    }
    det[idx] = d;
    if (mask && (*mask)[idx] == 0.0) continue;
    ++r.evaluated_voxel_count;
    if (d <= 0.0) ++r.folding_count;
  }
  r.folding_fraction = r.evaluated_voxel_count > 0
                           ? static_cast<double>(r.folding_count) / static_cast<double>(r.evaluated_voxel_count)
                           : 0.0;
  r.det_field = GridImage(g, std::move(det));
  return r;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

void write_report_header(std::ostream& os, int num_labels) {
  os << "pair_id";
  for (int k = 1; k < num_labels; ++k) os << "\tdice_" << k;
  os << "\tmean_dice\tfolding_count\tfolding_fraction\n";
}

void write_report_row(std::ostream& os, const EvalRow& row) {
  os << row.pair_id;
  for (const auto& d : row.dice.per_structure) os << '\t' << (d ? fmt(*d) : std::string("nan"));
  os << '\t' << fmt(row.dice.mean) << '\t' << row.regularity.folding_count << '\t'
     << fmt(row.regularity.folding_fraction) << '\n';
}

void write_report_text(std::ostream& os, const EvalRow& row) {
  os << "pair " << row.pair_id << '\n';
  for (std::size_t k = 0; k < row.dice.per_structure.size(); ++k) {
    os << "  structure " << (k + 1) << ": ";
    if (row.dice.per_structure[k])
      os << "dice " << fmt(*row.dice.per_structure[k]) << '\n';
    else
      os << "absent\n";
  }
  os << "  mean dice: " << fmt(row.dice.mean) << " over " << row.dice.scored << " structures\n";
  os << "  non-positive jacobian: " << row.regularity.folding_count << " of " << row.regularity.evaluated_voxel_count
     << " voxels (" << fmt(100.0 * row.regularity.folding_fraction) << "%)\n";
}

}  // namespace voxreg
