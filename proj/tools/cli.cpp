#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "voxreg/dataset.hpp"
#include "voxreg/errors.hpp"
#include "voxreg/eval.hpp"
#include "voxreg/io.hpp"
#include "voxreg/net.hpp"
#include "voxreg/optimize.hpp"
#include "voxreg/synth.hpp"
#include "voxreg/warp.hpp"

namespace voxreg::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = VOXREG_VERSION;

// Options that are switches rather than valued options.
const std::set<std::string> kFlags{"no-model", "labels-mode", "append"};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<int> parse_int_list(const std::string& s, char sep, const char* what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != tok.size()) throw std::invalid_argument(std::string("cannot parse ") + what + ": '" + s + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument(std::string("empty ") + what);
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Similarity parse_loss(const std::string& s) {
  if (s == "mse") return Similarity::mse;
  if (s == "cc") return Similarity::cc;
  throw std::invalid_argument("--loss must be mse or cc");
}

// CC default: largest lambda on the validation-Dice plateau of the desk setup.
double resolve_lambda(const std::string& s, Similarity sim) {
  if (s == "auto") return sim == Similarity::mse ? 0.02 : 0.25;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("cannot parse --lambda");
  return v;
}

AuxWeight parse_gamma(const std::string& s) {
  if (s == "seg-only") return AuxWeight::seg_only();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != s.size()) throw std::invalid_argument("--gamma must be a number or seg-only");
  return AuxWeight::weight(v);
}

void ensure_parent(const fs::path& p) {
  const fs::path parent = p.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw FormatError(FormatError::Kind::io, 0, "cannot create directory " + parent.string());
}

std::string path_plus(const std::string& p, const char* suffix) { return p + suffix; }

int max_label(const GridImage& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, v);
  return static_cast<int>(std::lround(m));
}

bool is_nifti(const fs::path& p) { return p.extension() == ".nii"; }

// ---------------------------------------------------------------- synth

struct SynthOpts {
  std::string out;
  int count = 10;
  std::string dims = "64x64";
  double amplitude = 5.0;
  double spacing = 20.0;
  int structures = 3;
  double noise = 0.01;
  double blur = 1.5;
  std::uint64_t seed = 0;
  int depth = 3;
};

void add_synth(CLI::App& app, SynthOpts& o) {
  app.add_option("--out", o.out, "Output dataset directory")->required();
  app.add_option("--count", o.count, "Number of pairs")->check(CLI::PositiveNumber);
  app.add_option("--dims", o.dims, "Grid extents, e.g. 64x64 or 32x32x32");
  app.add_option("--amplitude", o.amplitude, "Largest generating displacement, voxels")->check(CLI::NonNegativeNumber);
  app.add_option("--spacing", o.spacing, "Control point spacing, voxels")->check(CLI::PositiveNumber);
  app.add_option("--structures", o.structures, "Labelled shapes per image")->check(CLI::Range(1, 254));
  app.add_option("--noise", o.noise, "Intensity noise sigma on the fixed image")->check(CLI::NonNegativeNumber);
  app.add_option("--blur", o.blur, "Gaussian blur sigma of the painted shapes")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", o.seed, "Run seed");
  app.add_option("--depth", o.depth, "Network depth to check the extents against")->check(CLI::NonNegativeNumber);
}

Manifest manifest_of(const SynthOpts& o) {
  return {kVersion,
          "synth",
          {{"out", o.out},
           {"count", std::to_string(o.count)},
           {"dims", o.dims},
           {"amplitude", fmt_double(o.amplitude)},
           {"spacing", fmt_double(o.spacing)},
           {"structures", std::to_string(o.structures)},
           {"noise", fmt_double(o.noise)},
           {"blur", fmt_double(o.blur)},
           {"seed", std::to_string(o.seed)},
           {"depth", std::to_string(o.depth)}}};
}

int run_synth(const SynthOpts& o, std::ostream& out, std::ostream& err) {
  SynthSpec spec;
  spec.dims = parse_int_list(o.dims, 'x', "--dims");
  spec.amplitude = o.amplitude;
  spec.control_spacing = o.spacing;
  spec.structures = o.structures;
  spec.noise_sigma = o.noise;
  spec.blur_sigma = o.blur;
  const GridGeometry geom(spec.dims);
  const int div = 1 << o.depth;
  for (int d : spec.dims)
    if (d % div != 0) {
      err << "warning: extent " << d << " is not divisible by 2^" << o.depth << " = " << div
          << "; a depth-" << o.depth << " network cannot be trained on this data\n";
      break;
    }

  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError(FormatError::Kind::io, 0, "cannot create directory " + o.out);

  std::vector<std::string> ids;
  int num_labels = o.structures + 1;
  for (int i = 0; i < o.count; ++i) {
    spec.seed = splitmix64(splitmix64(o.seed) + static_cast<std::uint64_t>(i));
    const SynthPair p = generate_pair(spec);
    const std::string id = pair_id(static_cast<std::size_t>(i));
    write_dataset_pair(dir, id, p);
    ids.push_back(id);
  }
  write_dataset_index(dir, num_labels, ids);
  write_manifest(dir / "manifest.txt", manifest_of(o));
  out << "wrote " << o.count << " pairs to " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainOpts {
  std::string data;
  std::string val_data;
  std::string loss = "mse";
  std::string lambda = "auto";
  std::string gamma = "0";
  std::string observed = "all";
  std::string coarse_map;
  int cc_window = 9;
  int iters = 5000;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::string out;
  std::string log;
  int val_every = 500;
  int log_every = 100;
  int checkpoint_every = 0;
  std::string encoder = "8,16,16";
  std::string decoder = "16,16,16";
  std::string full_res = "8";
  int multiplier = 1;
};

void add_train(CLI::App& app, TrainOpts& o) {
  app.add_option("--data", o.data, "Training dataset directory")->required();
  app.add_option("--val-data", o.val_data, "Validation dataset directory (best-Dice checkpoint)");
  app.add_option("--loss", o.loss, "Image similarity: mse or cc");
  app.add_option("--lambda", o.lambda, "Smoothness weight (auto: 0.02 for mse, 0.25 for cc)");
  app.add_option("--gamma", o.gamma, "Segmentation weight, or seg-only");
  app.add_option("--observed-labels", o.observed, "Structures seen by the segmentation term: all or a list like 1,3");
  app.add_option("--coarse-map", o.coarse_map, "File of 'label group' lines merging structures into groups");
  app.add_option("--cc-window", o.cc_window, "Local CC window");
  app.add_option("--iters", o.iters, "Training iterations")->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "Run seed");
  app.add_option("--lr", o.lr, "ADAM learning rate")->check(CLI::PositiveNumber);
  app.add_option("--out", o.out, "Output model file")->required();
  app.add_option("--log", o.log, "Training log (default: <out>.log)");
  app.add_option("--val-every", o.val_every, "Validation cadence in iterations");
  app.add_option("--log-every", o.log_every, "Loss log cadence in iterations");
  app.add_option("--checkpoint-every", o.checkpoint_every, "Checkpoint cadence (written to <out>.ckpt)");
  app.add_option("--encoder", o.encoder, "Encoder widths, comma separated");
  app.add_option("--decoder", o.decoder, "Decoder widths, comma separated");
  app.add_option("--full-res", o.full_res, "Full-resolution widths, comma separated");
  app.add_option("--multiplier", o.multiplier, "Feature multiplier")->check(CLI::PositiveNumber);
}

Manifest manifest_of(const TrainOpts& o) {
  const Similarity sim = parse_loss(o.loss);
  const std::string log = o.log.empty() ? path_plus(o.out, ".log") : o.log;
  return {kVersion,
          "train",
          {{"data", o.data},
           {"val-data", o.val_data},
           {"loss", o.loss},
           {"lambda", fmt_double(resolve_lambda(o.lambda, sim))},
           {"gamma", o.gamma},
           {"observed-labels", o.observed},
           {"coarse-map", o.coarse_map},
           {"cc-window", std::to_string(o.cc_window)},
           {"iters", std::to_string(o.iters)},
           {"seed", std::to_string(o.seed)},
           {"lr", fmt_double(o.lr)},
           {"out", o.out},
           {"log", log},
           {"val-every", std::to_string(o.val_every)},
           {"log-every", std::to_string(o.log_every)},
           {"checkpoint-every", std::to_string(o.checkpoint_every)},
           {"encoder", o.encoder},
           {"decoder", o.decoder},
           {"full-res", o.full_res},
           {"multiplier", std::to_string(o.multiplier)}}};
}

std::vector<std::vector<int>> read_coarse_map(const fs::path& path, int num_labels) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::io, 0, "cannot open coarse map " + path.string());
  std::vector<std::vector<int>> groups;
  std::vector<int> group_ids;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int label = 0, group = 0;
    if (!(ls >> label >> group))
      throw FormatError(FormatError::Kind::malformed_header, at, "coarse map: expected 'label group'");
    if (label < 0 || label >= num_labels)
      throw FormatError(FormatError::Kind::invalid_value, at, "coarse map: label out of range");
    if (group <= 0) continue;  // background
    auto it = std::find(group_ids.begin(), group_ids.end(), group);
    if (it == group_ids.end()) {
      group_ids.push_back(group);
      groups.emplace_back();
      it = group_ids.end() - 1;
    }
    groups[static_cast<std::size_t>(it - group_ids.begin())].push_back(label);
  }
  // Channels ordered by group id.
  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return group_ids[a] < group_ids[b]; });
  std::vector<std::vector<int>> sorted;
  for (std::size_t i : order) sorted.push_back(groups[i]);
  if (sorted.empty()) throw FormatError(FormatError::Kind::invalid_value, 0, "coarse map: no foreground groups");
  return sorted;
}

int run_train(const TrainOpts& o, std::ostream& out, std::ostream& err) {
  const Manifest manifest = manifest_of(o);
  TrainConfig cfg;
  cfg.sim = parse_loss(o.loss);
  cfg.weights.lambda = resolve_lambda(o.lambda, cfg.sim);
  cfg.weights.gamma = parse_gamma(o.gamma);
  cfg.weights.cc_window = o.cc_window;
  cfg.iterations = o.iters;
  cfg.seed = o.seed;
  cfg.adam.lr = o.lr;
  cfg.validation_every = o.val_data.empty() ? 0 : o.val_every;
  cfg.log_every = o.log_every;
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.checkpoint_path = path_plus(o.out, ".ckpt");
  cfg.validate();

  NetConfig net;
  net.encoder_filters = parse_int_list(o.encoder, ',', "--encoder");
  net.decoder_filters = parse_int_list(o.decoder, ',', "--decoder");
  net.full_res_filters = parse_int_list(o.full_res, ',', "--full-res");
  net.feature_multiplier = o.multiplier;

  const DirectoryPairSource data{fs::path(o.data)};
  net.spatial_dims = data.images(0).fixed.geometry().rank();
  net.validate();
  net.check_extents(data.images(0).fixed.geometry());
  const int k = data.num_labels();

  if (!o.coarse_map.empty() && o.observed != "all")
    throw std::invalid_argument("--coarse-map and --observed-labels are mutually exclusive");
  if (!o.coarse_map.empty()) {
    cfg.seg_groups = read_coarse_map(o.coarse_map, k);
  } else if (o.observed != "all") {
    for (int label : parse_int_list(o.observed, ',', "--observed-labels")) {
      if (label < 1 || label >= k)
        throw std::invalid_argument("--observed-labels: structure " + std::to_string(label) + " outside 1.." +
                                    std::to_string(k - 1));
      cfg.seg_groups.push_back({label});
    }
  }
  if (cfg.weights.gamma.active()) {
    for (std::size_t i = 0; i < data.size(); ++i)
      for (const char* suffix : {"_fixed_seg.nii", "_moving_seg.nii"}) {
        const fs::path p = fs::path(o.data) / (data.id(i) + suffix);
        if (!fs::exists(p))
          throw FormatError(FormatError::Kind::io, 0, "segmentation term active but " + p.string() + " is missing");
      }
  }

  std::unique_ptr<DirectoryPairSource> val;
  if (!o.val_data.empty()) val = std::make_unique<DirectoryPairSource>(fs::path(o.val_data));

  const std::string log_path = *manifest.find("log");
  ensure_parent(o.out);
  ensure_parent(log_path);
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw FormatError(FormatError::Kind::io, 0, "cannot write " + log_path);

  const TrainResult r = train(net, data, val.get(), cfg, &log);
  write_params(o.out, r.final_params);
  write_params(path_plus(o.out, ".best"), r.best_params);
  write_manifest(path_plus(o.out, ".manifest"), manifest);
  out << "final_loss=" << fmt_short(r.steps.back().loss.total) << " best_iteration=" << r.best_iteration;
  if (!r.validation.empty()) {
    double best = r.validation.front().mean_dice;
    for (const auto& v : r.validation) best = std::max(best, v.mean_dice);
    out << " best_val_dice=" << fmt_short(best);
  }
  out << "\n";
  (void)err;
  return kExitOk;
}

// ---------------------------------------------------------------- register

struct RegisterOpts {
  std::string model;
  bool no_model = false;
  std::string fixed;
  std::string moving;
  int instance_iters = -1;
  double lr = 0.1;
  std::string loss = "mse";
  std::string lambda = "auto";
  int cc_window = 9;
  std::string out_field;
  std::string out_warped;
  std::string moving_seg;
  std::string out_warped_seg;
};

void add_register(CLI::App& app, RegisterOpts& o) {
  app.add_option("--model", o.model, "Trained model file");
  app.add_flag("--no-model", o.no_model, "Instance optimization from the zero field");
  app.add_option("--fixed", o.fixed, "Fixed image")->required();
  app.add_option("--moving", o.moving, "Moving image")->required();
  app.add_option("--instance-iters", o.instance_iters,
                 "Instance optimization iterations (default 0 with --model, 100 with --no-model)");
  app.add_option("--lr", o.lr, "Instance optimization step size")->check(CLI::PositiveNumber);
  app.add_option("--loss", o.loss, "Image similarity: mse or cc");
  app.add_option("--lambda", o.lambda, "Smoothness weight (auto: 0.02 for mse, 0.25 for cc)");
  app.add_option("--cc-window", o.cc_window, "Local CC window");
  app.add_option("--out-field", o.out_field, "Output displacement field")->required();
  app.add_option("--out-warped", o.out_warped, "Output warped moving image");
  app.add_option("--moving-seg", o.moving_seg, "Moving label map to warp along");
  app.add_option("--out-warped-seg", o.out_warped_seg, "Output warped label map (.nii)");
}

int resolved_iters(const RegisterOpts& o) {
  if (o.instance_iters >= 0) return o.instance_iters;
  return o.no_model ? 100 : 0;
}

Manifest manifest_of(const RegisterOpts& o) {
  const Similarity sim = parse_loss(o.loss);
  return {kVersion,
          "register",
          {{"model", o.model},
           {"no-model", o.no_model ? "true" : "false"},
           {"fixed", o.fixed},
           {"moving", o.moving},
           {"instance-iters", std::to_string(resolved_iters(o))},
           {"lr", fmt_double(o.lr)},
           {"loss", o.loss},
           {"lambda", fmt_double(resolve_lambda(o.lambda, sim))},
           {"cc-window", std::to_string(o.cc_window)},
           {"out-field", o.out_field},
           {"out-warped", o.out_warped},
           {"moving-seg", o.moving_seg},
           {"out-warped-seg", o.out_warped_seg}}};
}

GridImage warp_labels(const GridImage& labels, const DisplacementField& u, int num_labels) {
  return argmax_labels(warp_segmentation(onehot_from_labels(labels, num_labels), u));
}

int run_register(const RegisterOpts& o, std::ostream& out, std::ostream& err) {
  if (o.no_model == !o.model.empty()) throw std::invalid_argument("give exactly one of --model and --no-model");
  if (!o.out_warped_seg.empty() && o.moving_seg.empty())
    throw std::invalid_argument("--out-warped-seg needs --moving-seg");
  if (!o.out_warped_seg.empty() && !is_nifti(o.out_warped_seg))
    throw std::invalid_argument("--out-warped-seg must be a .nii file");
  const Manifest manifest = manifest_of(o);
  const Similarity sim = parse_loss(o.loss);
  LossWeights w;
  w.lambda = resolve_lambda(o.lambda, sim);
  w.cc_window = o.cc_window;
  w.validate();

  const GridImage fixed = read_image(o.fixed);
  const GridImage moving = read_image(o.moving);
  require_same_geometry(fixed.geometry(), moving.geometry(), "register --fixed/--moving");

  DisplacementField u = identity_displacement(fixed.geometry());
  if (!o.model.empty()) {
    const NetParams params = read_params(o.model);
    params.config.check_extents(fixed.geometry());
    u = forward(params, fixed, moving);
  }
  const int iters = resolved_iters(o);
  double initial = unsup_loss(fixed, moving, u, w, sim).total;
  double final_loss = initial;
  if (iters > 0) {
    const InstanceResult r = optimize_instance(fixed, moving, u, w, sim, {iters, o.lr});
    u = r.field;
    initial = r.initial_loss();
    final_loss = r.best_loss();
  }

  ensure_parent(o.out_field);
  write_field(o.out_field, u);
  if (!o.out_warped.empty()) {
    ensure_parent(o.out_warped);
    write_image(o.out_warped, warp_image(moving, u));
  }
  if (!o.moving_seg.empty()) {
    const GridImage labels = read_image(o.moving_seg);
    require_same_geometry(fixed.geometry(), labels.geometry(), "register --moving-seg");
    if (!o.out_warped_seg.empty()) {
      ensure_parent(o.out_warped_seg);
      write_image(o.out_warped_seg, warp_labels(labels, u, max_label(labels) + 1), NiftiDatatype::uint8);
    }
  }
  write_manifest(path_plus(o.out_field, ".manifest"), manifest);
  out << "initial_loss=" << fmt_double(initial) << " final_loss=" << fmt_double(final_loss)
      << " instance_iters=" << iters << "\n";
  (void)err;
  return kExitOk;
}

// ---------------------------------------------------------------- warp

struct WarpOpts {
  std::string moving;
  std::string field;
  std::string out;
  bool labels = false;
};

void add_warp(CLI::App& app, WarpOpts& o) {
  app.add_option("--moving", o.moving, "Image or label map to warp")->required();
  app.add_option("--field", o.field, "Displacement field")->required();
  app.add_option("--out", o.out, "Output file")->required();
  app.add_flag("--labels-mode", o.labels, "Treat the input as hard labels (one-hot warp, argmax)");
}

Manifest manifest_of(const WarpOpts& o) {
  return {kVersion,
          "warp",
          {{"moving", o.moving}, {"field", o.field}, {"out", o.out}, {"labels-mode", o.labels ? "true" : "false"}}};
}

int run_warp(const WarpOpts& o, std::ostream& out, std::ostream&) {
  const GridImage moving = read_image(o.moving);
  const DisplacementField u = read_field(o.field);
  require_same_geometry(moving.geometry(), u.geometry(), "warp --moving/--field");
  ensure_parent(o.out);
  if (o.labels) {
    if (!is_nifti(o.out)) throw std::invalid_argument("label output must be a .nii file");
    write_image(o.out, warp_labels(moving, u, max_label(moving) + 1), NiftiDatatype::uint8);
  } else {
    write_image(o.out, warp_image(moving, u));
  }
  write_manifest(path_plus(o.out, ".manifest"), manifest_of(o));
  out << "wrote " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
  std::string fixed_seg;
  std::string moving_seg;
  std::string field;
  std::string mask;
  std::string report;
  std::string pair_id = "pair";
  int labels = 0;
  bool append = false;
};

void add_eval(CLI::App& app, EvalOpts& o) {
  app.add_option("--fixed-seg", o.fixed_seg, "Fixed label map")->required();
  app.add_option("--moving-seg", o.moving_seg, "Moving label map")->required();
  app.add_option("--field", o.field, "Displacement field")->required();
  app.add_option("--mask", o.mask, "Foreground mask for folding counts (non-zero voxels)");
  app.add_option("--report", o.report, "Tab-separated report file");
  app.add_option("--pair-id", o.pair_id, "Row identifier");
  app.add_option("--labels", o.labels, "Label count K (default: largest label + 1)");
  app.add_flag("--append", o.append, "Append a row to an existing report");
}

Manifest manifest_of(const EvalOpts& o) {
  return {kVersion,
          "eval",
          {{"fixed-seg", o.fixed_seg},
           {"moving-seg", o.moving_seg},
           {"field", o.field},
           {"mask", o.mask},
           {"report", o.report},
           {"pair-id", o.pair_id},
           {"labels", std::to_string(o.labels)},
           {"append", o.append ? "true" : "false"}}};
}

int run_eval(const EvalOpts& o, std::ostream& out, std::ostream&) {
  const GridImage sf = read_image(o.fixed_seg);
  const GridImage sm = read_image(o.moving_seg);
  const DisplacementField u = read_field(o.field);
  require_same_geometry(sf.geometry(), sm.geometry(), "eval --fixed-seg/--moving-seg");
  require_same_geometry(sf.geometry(), u.geometry(), "eval --field");
  const int k = o.labels > 0 ? o.labels : std::max(max_label(sf), max_label(sm)) + 1;

  EvalRow row;
  row.pair_id = o.pair_id;
  row.dice = dice_eval(sf, sm, u, k);
  if (o.mask.empty()) {
    row.regularity = jacobian_report(u);
  } else {
    const GridImage mask = read_image(o.mask);
    row.regularity = jacobian_report(u, &mask);
  }
  write_report_text(out, row);
  if (!o.report.empty()) {
    ensure_parent(o.report);
    const bool header = !(o.append && fs::exists(o.report));
    std::ofstream rep(o.report, o.append ? std::ios::app : std::ios::trunc);
    if (!rep) throw FormatError(FormatError::Kind::io, 0, "cannot write " + o.report);
    if (header) write_report_header(rep, k);
    write_report_row(rep, row);
    write_manifest(path_plus(o.report, ".manifest"), manifest_of(o));
  }
  return kExitOk;
}

// ---------------------------------------------------------------- replay

std::vector<std::string> args_from_manifest(const Manifest& m) {
  std::vector<std::string> args{"voxreg", m.subcommand};
  for (const auto& [key, value] : m.entries) {
    if (kFlags.count(key)) {
      if (value == "true") args.push_back("--" + key);
      else if (value != "false") throw FormatError(FormatError::Kind::invalid_value, 0, "manifest: bad flag " + key);
      continue;
    }
    if (value.empty()) continue;
    args.push_back("--" + key);
    args.push_back(value);
  }
  return args;
}

int dispatch(CLI::App& app, int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace

const std::string* Manifest::find(const std::string& key) const {
  for (const auto& e : entries)
    if (e.first == key) return &e.second;
  return nullptr;
}

void Manifest::set(const std::string& key, const std::string& value) {
  for (auto& e : entries)
    if (e.first == key) {
      e.second = value;
      return;
    }
  entries.emplace_back(key, value);
}

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ostringstream os;
  os << "voxreg_version=" << m.version << "\n";
  os << "subcommand=" << m.subcommand << "\n";
  for (const auto& [k, v] : m.entries) os << k << "=" << v << "\n";
  const std::string s = os.str();
  ensure_parent(path);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !f.write(s.data(), static_cast<std::streamsize>(s.size())))
    throw FormatError(FormatError::Kind::io, 0, "cannot write manifest " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatError::Kind::io, 0, "cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(f, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(FormatError::Kind::malformed_header, at, "manifest: expected key=value");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "voxreg_version") m.version = value;
    else if (key == "subcommand") m.subcommand = value;
    else m.entries.emplace_back(std::move(key), std::move(value));
  }
  if (m.version.empty() || m.subcommand.empty())
    throw FormatError(FormatError::Kind::malformed_header, 0, "manifest: missing version or subcommand");
  if (m.version != kVersion)
    throw FormatError(FormatError::Kind::version_mismatch, 0,
                      "manifest written by version " + m.version + ", this is " + kVersion);
  return m;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deformable image registration toolkit", "voxreg"};
  return dispatch(app, argc, argv, out, err);
}

namespace {

int dispatch(CLI::App& app, int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  SynthOpts synth;
  TrainOpts trn;
  RegisterOpts reg;
  WarpOpts wrp;
  EvalOpts evl;
  std::string manifest_path;
  std::vector<std::string> overrides;

  auto* s_synth = app.add_subcommand("synth", "Generate synthetic registration pairs with known deformations");
  add_synth(*s_synth, synth);
  auto* s_train = app.add_subcommand("train", "Train a registration network");
  add_train(*s_train, trn);
  auto* s_reg = app.add_subcommand("register", "Register a pair (network and/or instance optimization)");
  add_register(*s_reg, reg);
  auto* s_warp = app.add_subcommand("warp", "Warp an image or label map by a displacement field");
  add_warp(*s_warp, wrp);
  auto* s_eval = app.add_subcommand("eval", "Dice and folding report for a registration");
  add_eval(*s_eval, evl);
  auto* s_replay = app.add_subcommand("replay", "Re-run a subcommand from its manifest");
  s_replay->add_option("manifest", manifest_path, "Manifest file")->required();
  s_replay->add_option("--set", overrides, "Override a manifest entry, key=value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s_synth) return run_synth(synth, out, err);
    if (*s_train) return run_train(trn, out, err);
    if (*s_reg) return run_register(reg, out, err);
    if (*s_warp) return run_warp(wrp, out, err);
    if (*s_eval) return run_eval(evl, out, err);
    if (*s_replay) {
      Manifest m = read_manifest(manifest_path);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value");
        m.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (m.subcommand == "replay") throw std::invalid_argument("a manifest cannot replay another manifest");
      return run(args_from_manifest(m), out, err);
    }
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const GeometryError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const LabelError& e) {
    err << "data error: " << e.what() << " (voxel " << e.voxel() << ")\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitUsage;
}

}  // namespace

}  // namespace voxreg::cli
