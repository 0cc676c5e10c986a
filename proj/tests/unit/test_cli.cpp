#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "voxreg/dataset.hpp"
#include "voxreg/eval.hpp"
#include "voxreg/io.hpp"

using namespace voxreg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result voxreg_run(std::vector<std::string> args) {
  args.insert(args.begin(), "voxreg");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double field_after(const std::string& out, const std::string& key) {
  const auto at = out.find(key + "=");
  REQUIRE(at != std::string::npos);
  return std::stod(out.substr(at + key.size() + 1));
}

class Scratch {
 public:
  explicit Scratch(const std::string& name) : dir_(fs::temp_directory_path() / name) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Scratch() { fs::remove_all(dir_); }
  std::string operator/(const std::string& leaf) const { return (dir_ / leaf).string(); }

 private:
  fs::path dir_;
};

}  // namespace

TEST_CASE("synth is deterministic and writes a manifest") {
  Scratch s("voxreg_cli_synth");
  const std::vector<std::string> common{"--count", "3", "--dims", "32x32", "--seed", "9"};
  auto args = common;
  args.insert(args.begin(), {"synth", "--out", s / "a"});
  REQUIRE(voxreg_run(args).code == 0);
  args = common;
  args.insert(args.begin(), {"synth", "--out", s / "b"});
  REQUIRE(voxreg_run(args).code == 0);
  for (const char* leaf : {"pair_0000_fixed.nii", "pair_0002_moving.nii", "pair_0001_moving_seg.nii",
                           "pair_0002_truth.vxdf", "dataset.txt"})
    CHECK(slurp(s / (std::string("a/") + leaf)) == slurp(s / (std::string("b/") + leaf)));
  CHECK(slurp(s / "a/manifest.txt").find("subcommand=synth\n") != std::string::npos);
  CHECK(DirectoryPairSource(s / "a").size() == 3);
}

TEST_CASE("synth warns about extents a network cannot use") {
  Scratch s("voxreg_cli_warn");
  const auto r = voxreg_run({"synth", "--out", s / "d", "--count", "1", "--dims", "36x36", "--depth", "3"});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(voxreg_run({"synth", "--out", s / "e", "--count", "1", "--dims", "32x32"}).err.empty());
}

TEST_CASE("zero amplitude synthesizes a zero truth field") {
  Scratch s("voxreg_cli_zero");
  REQUIRE(voxreg_run({"synth", "--out", s / "d", "--count", "1", "--dims", "32x32", "--amplitude", "0"}).code == 0);
  const auto truth = read_field(s / "d/pair_0000_truth.vxdf");
  for (double v : truth.data()) CHECK(v == 0.0);
}

TEST_CASE("classical registration loop without a model") {
  Scratch s("voxreg_cli_register");
  REQUIRE(voxreg_run({"synth", "--out", s / "d", "--count", "1", "--dims", "64x64", "--seed", "4"}).code == 0);
  const std::string f = s / "d/pair_0000_fixed.nii", m = s / "d/pair_0000_moving.nii";
  const std::string sf = s / "d/pair_0000_fixed_seg.nii", sm = s / "d/pair_0000_moving_seg.nii";

  SUBCASE("identical images give a near-zero field") {
    const auto r = voxreg_run({"register", "--no-model", "--fixed", f, "--moving", f, "--out-field", s / "u.vxdf",
                               "--out-warped", s / "w.nii"});
    REQUIRE(r.code == 0);
    const auto u = read_field(s / "u.vxdf");
    for (double v : u.data()) CHECK(std::abs(v) < 1e-3);
    const auto w = read_image(s / "w.nii"), fi = read_image(f);
    for (std::size_t i = 0; i < fi.values().size(); ++i) CHECK(w[i] == doctest::Approx(fi[i]).epsilon(1e-3));
  }
  SUBCASE("registration improves segmentation overlap and eval reports it") {
    const auto r = voxreg_run({"register", "--no-model", "--fixed", f, "--moving", m, "--instance-iters", "200",
                               "--out-field", s / "u.vxdf", "--moving-seg", sm, "--out-warped-seg", s / "ws.nii"});
    REQUIRE(r.code == 0);
    CHECK(field_after(r.out, "final_loss") < field_after(r.out, "initial_loss"));
    const auto fixed_labels = read_image(sf);
    const double before = dice_labels(fixed_labels, read_image(sm), 4).mean;
    const double after = dice_labels(fixed_labels, read_image(s / "ws.nii"), 4).mean;
    CHECK(after > before);

    const auto e = voxreg_run({"eval", "--fixed-seg", sf, "--moving-seg", sm, "--field", s / "u.vxdf", "--report",
                               s / "rep.tsv", "--pair-id", "pair_0000", "--labels", "4"});
    REQUIRE(e.code == 0);
    CHECK(e.out.find("mean dice") != std::string::npos);
    std::istringstream rep(slurp(s / "rep.tsv"));
    std::string header, row;
    std::getline(rep, header);
    std::getline(rep, row);
    CHECK(header == "pair_id\tdice_1\tdice_2\tdice_3\tmean_dice\tfolding_count\tfolding_fraction");
    CHECK(row.rfind("pair_0000\t", 0) == 0);
    CHECK(field_after("mean_dice=" + row.substr(row.find('\t', row.find("\t", row.find("\t", 10) + 1) + 1) + 1),
                      "mean_dice") == doctest::Approx(after).epsilon(1e-5));
  }
}

TEST_CASE("eval of zero and folding fields against the golden report") {
  Scratch s("voxreg_cli_eval");
  const GridGeometry g({4, 4});
  GridImage labels(g);
  for (std::size_t i = 0; i < 8; ++i) labels[i] = 1;
  for (std::size_t i = 8; i < 12; ++i) labels[i] = 2;
  write_image(s / "seg.nii", labels, NiftiDatatype::uint8);
  write_field(s / "zero.vxdf", identity_displacement(g));
  // Reflection along the last axis; each label band is constant along it,
  // so overlap is untouched while every voxel folds.
  DisplacementField fold(g);
  for (std::size_t i = 0; i < 16; ++i) fold.component(1)[i] = -2.0 * g.coords(i)[1];
  write_field(s / "fold.vxdf", fold);

  REQUIRE(voxreg_run({"eval", "--fixed-seg", s / "seg.nii", "--moving-seg", s / "seg.nii", "--field", s / "zero.vxdf",
                      "--report", s / "r.tsv", "--pair-id", "a"})
              .code == 0);
  REQUIRE(voxreg_run({"eval", "--fixed-seg", s / "seg.nii", "--moving-seg", s / "seg.nii", "--field", s / "fold.vxdf",
                      "--report", s / "r.tsv", "--pair-id", "b", "--append"})
              .code == 0);
  CHECK(slurp(s / "r.tsv") ==
        "pair_id\tdice_1\tdice_2\tmean_dice\tfolding_count\tfolding_fraction\n"
        "a\t1.000000\t1.000000\t1.000000\t0\t0.000000\n"
        "b\t1.000000\t1.000000\t1.000000\t16\t1.000000\n");
}

TEST_CASE("training, amortized registration and refinement") {
  Scratch s("voxreg_cli_train");
  REQUIRE(voxreg_run({"synth", "--out", s / "d", "--count", "4", "--dims", "32x32", "--seed", "2"}).code == 0);
  REQUIRE(voxreg_run({"synth", "--out", s / "v", "--count", "2", "--dims", "32x32", "--seed", "3"}).code == 0);
  const std::vector<std::string> net{"--encoder", "4,8", "--decoder", "8,8", "--full-res", "4", "--iters", "40",
                                     "--val-every", "20", "--seed", "1"};
  auto args = net;
  args.insert(args.begin(), {"train", "--data", s / "d", "--val-data", s / "v", "--out", s / "m.bin"});
  const auto t = voxreg_run(args);
  REQUIRE(t.code == 0);
  CHECK(fs::exists(s / "m.bin"));
  CHECK(fs::exists(s / "m.bin.best"));
  CHECK(fs::exists(s / "m.bin.manifest"));
  const auto log = slurp(s / "m.bin.log");
  CHECK(log.find("iter=1 total=") != std::string::npos);
  CHECK(log.find("val iter=40 dice=") != std::string::npos);

  // An explicit zero gamma is the unsupervised default.
  args = net;
  args.insert(args.begin(), {"train", "--data", s / "d", "--out", s / "g0.bin", "--gamma", "0"});
  REQUIRE(voxreg_run(args).code == 0);
  args = net;
  args.insert(args.begin(), {"train", "--data", s / "d", "--out", s / "plain.bin"});
  REQUIRE(voxreg_run(args).code == 0);
  CHECK(slurp(s / "g0.bin") == slurp(s / "plain.bin"));

  const std::string f = s / "v/pair_0000_fixed.nii", m = s / "v/pair_0000_moving.nii";
  const auto amortized =
      voxreg_run({"register", "--model", s / "m.bin", "--fixed", f, "--moving", m, "--out-field", s / "u0.vxdf"});
  REQUIRE(amortized.code == 0);
  const auto refined = voxreg_run({"register", "--model", s / "m.bin", "--fixed", f, "--moving", m,
                                   "--instance-iters", "30", "--out-field", s / "u1.vxdf"});
  REQUIRE(refined.code == 0);
  CHECK(field_after(refined.out, "final_loss") <= field_after(amortized.out, "final_loss"));
  CHECK(field_after(refined.out, "initial_loss") == field_after(amortized.out, "final_loss"));
}

TEST_CASE("auxiliary training needs segmentations and honours label subsets") {
  Scratch s("voxreg_cli_aux");
  REQUIRE(voxreg_run({"synth", "--out", s / "d", "--count", "2", "--dims", "32x32", "--seed", "5"}).code == 0);
  const std::vector<std::string> net{"--encoder", "4,8", "--decoder", "8,8", "--full-res", "4", "--iters", "10"};
  auto args = net;
  args.insert(args.begin(), {"train", "--data", s / "d", "--out", s / "one.bin", "--gamma", "0.01",
                             "--observed-labels", "1"});
  CHECK(voxreg_run(args).code == 0);
  CHECK(slurp(s / "one.bin.manifest").find("observed-labels=1\n") != std::string::npos);

  std::ofstream(s / "coarse.txt") << "1 1\n2 1\n3 2\n";
  args = net;
  args.insert(args.begin(), {"train", "--data", s / "d", "--out", s / "coarse.bin", "--gamma", "seg-only",
                             "--coarse-map", s / "coarse.txt"});
  CHECK(voxreg_run(args).code == 0);

  fs::remove(s / "d/pair_0001_moving_seg.nii");
  fs::remove(s / "d/pair_0000_moving_seg.nii");
  args = net;
  args.insert(args.begin(), {"train", "--data", s / "d", "--out", s / "x.bin", "--gamma", "0.01"});
  CHECK(voxreg_run(args).code == cli::kExitData);
  args = net;
  args.insert(args.begin(), {"train", "--data", s / "d", "--out", s / "y.bin"});
  CHECK(voxreg_run(args).code == 0);
}

TEST_CASE("replay reproduces outputs byte for byte") {
  Scratch s("voxreg_cli_replay");
  REQUIRE(voxreg_run({"synth", "--out", s / "d", "--count", "2", "--dims", "32x32", "--seed", "8"}).code == 0);
  const std::string f = s / "d/pair_0000_fixed.nii", m = s / "d/pair_0000_moving.nii";
  REQUIRE(voxreg_run({"register", "--no-model", "--fixed", f, "--moving", m, "--instance-iters", "25",
                      "--out-field", s / "u.vxdf"})
              .code == 0);
  REQUIRE(voxreg_run({"replay", s / "u.vxdf.manifest", "--set", "out-field=" + s / "again.vxdf"}).code == 0);
  CHECK(slurp(s / "u.vxdf") == slurp(s / "again.vxdf"));

  REQUIRE(voxreg_run({"train", "--data", s / "d", "--out", s / "m.bin", "--encoder", "4,8", "--decoder", "8,8",
                      "--full-res", "4", "--iters", "15", "--seed", "3"})
              .code == 0);
  REQUIRE(voxreg_run({"replay", s / "m.bin.manifest", "--set", "out=" + s / "m2.bin"}).code == 0);
  CHECK(slurp(s / "m.bin") == slurp(s / "m2.bin"));
  CHECK(slurp(s / "m.bin.best") == slurp(s / "m2.bin.best"));
}

TEST_CASE("exit codes") {
  Scratch s("voxreg_cli_exit");
  CHECK(voxreg_run({}).code == cli::kExitUsage);
  CHECK(voxreg_run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(voxreg_run({"register", "--no-model", "--fixed", "a.nii"}).code == cli::kExitUsage);
  CHECK(voxreg_run({"synth", "--out", s / "d", "--count", "0"}).code == cli::kExitUsage);
  CHECK(voxreg_run({"register", "--fixed", "a.nii", "--moving", "b.nii", "--out-field", "u.vxdf"}).code ==
        cli::kExitUsage);
  CHECK(voxreg_run({"register", "--no-model", "--fixed", s / "missing.nii", "--moving", s / "missing.nii",
                    "--out-field", s / "u.vxdf"})
            .code == cli::kExitData);

  write_image(s / "a.nii", GridImage(GridGeometry({4, 4})));
  write_image(s / "b.nii", GridImage(GridGeometry({4, 6})));
  CHECK(voxreg_run({"register", "--no-model", "--fixed", s / "a.nii", "--moving", s / "b.nii", "--out-field",
                    s / "u.vxdf"})
            .code == cli::kExitData);
  std::ofstream(s / "junk.nii") << "not a volume";
  CHECK(voxreg_run({"warp", "--moving", s / "junk.nii", "--field", s / "u.vxdf", "--out", s / "o.nii"}).code ==
        cli::kExitData);
  CHECK(voxreg_run({"register", "--no-model", "--fixed", s / "a.nii", "--moving", s / "a.nii", "--out-field",
                    s / "u.vxdf", "--lambda", "-1"})
            .code == cli::kExitUsage);
}
