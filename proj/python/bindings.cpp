#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>

#include "voxreg/errors.hpp"
#include "voxreg/eval.hpp"
#include "voxreg/io.hpp"
#include "voxreg/losses.hpp"
#include "voxreg/net.hpp"
#include "voxreg/optimize.hpp"
#include "voxreg/synth.hpp"
#include "voxreg/warp.hpp"

namespace py = pybind11;
using namespace voxreg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<int> shape_of(const Array& a, int skip) {
  std::vector<int> dims;
  for (py::ssize_t i = skip; i < a.ndim(); ++i) dims.push_back(static_cast<int>(a.shape(i)));
  return dims;
}

GridImage to_image(const Array& a) {
  return GridImage(GridGeometry(shape_of(a, 0)), std::vector<double>(a.data(), a.data() + a.size()));
}

/// Field arrays have shape (rank, *dims).
DisplacementField to_field(const Array& a) {
  if (a.ndim() < 3) throw GeometryError("field array must have shape (rank, *dims)");
  GridGeometry g(shape_of(a, 1));
  if (a.shape(0) != g.rank()) throw GeometryError("field array leading extent must equal the grid rank");
  return DisplacementField(g, std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_image(const GridImage& img) {
  const auto& dims = img.geometry().dims();
  Array out(std::vector<py::ssize_t>(dims.begin(), dims.end()));
  std::copy(img.values().begin(), img.values().end(), out.mutable_data());
  return out;
}

Array from_field(const DisplacementField& u) {
  const auto& dims = u.geometry().dims();
  std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(dims.size())};
  shape.insert(shape.end(), dims.begin(), dims.end());
  Array out(shape);
  std::copy(u.data().begin(), u.data().end(), out.mutable_data());
  return out;
}

Similarity parse_similarity(const std::string& s) {
  if (s == "mse") return Similarity::mse;
  if (s == "cc") return Similarity::cc;
  throw std::invalid_argument("loss must be 'mse' or 'cc'");
}

}  // namespace

PYBIND11_MODULE(_voxreg, m) {
  m.doc() = "Native core of voxreg";
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("warp_image", [](const Array& moving, const Array& u) { return from_image(warp_image(to_image(moving), to_field(u))); },
        py::arg("moving"), py::arg("field"), "Linear interpolation of moving at p + u(p), clamped to the grid.");
  m.def("mse", [](const Array& f, const Array& w) { return mse(to_image(f), to_image(w)); }, py::arg("fixed"),
        py::arg("warped"));
  m.def("local_cc", [](const Array& f, const Array& w, int window) { return local_cc(to_image(f), to_image(w), window); },
        py::arg("fixed"), py::arg("warped"), py::arg("window") = 9, "Sum of per-voxel squared local correlations.");
  m.def("smoothness", [](const Array& u) { return smoothness(to_field(u)); }, py::arg("field"));

  m.def(
      "dice",
      [](const Array& fixed_labels, const Array& moving_labels, std::optional<Array> u, int num_labels) {
        const GridImage fl = to_image(fixed_labels), ml = to_image(moving_labels);
        const DiceReport r = u ? dice_eval(fl, ml, to_field(*u), num_labels) : dice_labels(fl, ml, num_labels);
        return py::make_tuple(r.mean, r.per_structure);
      },
      py::arg("fixed_labels"), py::arg("moving_labels"), py::arg("field") = py::none(), py::arg("num_labels"),
      "Returns (mean, per_structure); structures absent from both maps are None.");
  m.def(
      "jacobian",
      [](const Array& u, std::optional<Array> mask) {
        const auto field = to_field(u);
        std::optional<GridImage> mk;
        if (mask) mk = to_image(*mask);
        const auto r = jacobian_report(field, mk ? &*mk : nullptr);
        return py::make_tuple(from_image(r.det_field), r.folding_count, r.folding_fraction);
      },
      py::arg("field"), py::arg("mask") = py::none(), "Returns (det, folding_count, folding_fraction).");

  m.def(
      "register",
      [](const Array& fixed, const Array& moving, std::optional<std::filesystem::path> model, int iterations,
         const std::string& loss, double lambda, double lr, int cc_window) {
        const GridImage f = to_image(fixed), mv = to_image(moving);
        DisplacementField init = model ? forward(read_params(*model), f, mv) : identity_displacement(f.geometry());
        LossWeights w;
        w.lambda = lambda;
        w.cc_window = cc_window;
        InstanceConfig cfg;
        cfg.iterations = iterations;
        cfg.lr = lr;
        const auto r = optimize_instance(f, mv, init, w, parse_similarity(loss), cfg);
        return py::make_tuple(from_field(r.field), r.initial_loss(), r.best_loss());
      },
      py::arg("fixed"), py::arg("moving"), py::arg("model") = py::none(), py::arg("iterations") = 100,
      py::arg("loss") = "mse", py::arg("lam") = 0.02, py::arg("lr") = 0.1, py::arg("cc_window") = 9,
      "Network prediction (or zero field) refined by instance optimization. Returns (field, initial_loss, final_loss).");

  m.def(
      "synth_pair",
      [](std::vector<int> dims, std::uint64_t seed, int structures, double amplitude) {
        SynthSpec s;
        s.dims = std::move(dims);
        s.seed = seed;
        s.structures = structures;
        s.amplitude = amplitude;
        const auto p = generate_pair(s);
        py::dict d;
        d["fixed"] = from_image(p.fixed);
        d["moving"] = from_image(p.moving);
        d["fixed_labels"] = from_image(p.fixed_labels);
        d["moving_labels"] = from_image(p.moving_labels);
        d["truth"] = from_field(p.truth);
        d["num_labels"] = p.num_labels;
        return d;
      },
      py::arg("dims") = std::vector<int>{64, 64}, py::arg("seed") = 0, py::arg("structures") = 3,
      py::arg("amplitude") = 5.0);

  m.def("read_image", [](const std::filesystem::path& p) { return from_image(read_image(p)); }, py::arg("path"));
  m.def("write_image", [](const std::filesystem::path& p, const Array& img) { write_image(p, to_image(img)); },
        py::arg("path"), py::arg("image"));
  m.def("read_field", [](const std::filesystem::path& p) { return from_field(read_field(p)); }, py::arg("path"));
  m.def("write_field", [](const std::filesystem::path& p, const Array& u) { write_field(p, to_field(u)); },
        py::arg("path"), py::arg("field"));
}
