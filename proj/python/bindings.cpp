#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "storm/cli.hpp"
#include "storm/compression.hpp"
#include "storm/errors.hpp"
#include "storm/pipeline.hpp"
#include "storm/projector.hpp"
#include "storm/ssm_scan.hpp"
#include "storm/verify.hpp"

namespace py = pybind11;
using namespace storm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Sequence to_sequence(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array [length, width]");
  const auto len = static_cast<std::size_t>(a.shape(0));
  const auto width = static_cast<std::size_t>(a.shape(1));
  return {len, width, std::vector<double>(a.data(), a.data() + a.size())};
}

TokenTensor to_tensor(const Array& a) {
  if (a.ndim() != 3) throw ShapeError("expected a 3-D array [frames, tokens, channels]");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          static_cast<std::size_t>(a.shape(2)), std::vector<double>(a.data(), a.data() + a.size())};
}

Array from_values(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array from_sequence(const Sequence& s) {
  return from_values(s.values, {static_cast<py::ssize_t>(s.length), static_cast<py::ssize_t>(s.width)});
}

Array from_tensor(const TokenTensor& t) {
  return from_values(std::vector<double>(t.values().begin(), t.values().end()),
                     {static_cast<py::ssize_t>(t.frames()),
                      static_cast<py::ssize_t>(t.tokens_per_frame()),
                      static_cast<py::ssize_t>(t.channels())});
}

ScanState to_state(const std::optional<Array>& h0, const SelectiveScanWeights& w) {
  ScanState s(w.channels, w.state_dim);
  if (!h0) return s;
  if (h0->ndim() != 2 || static_cast<std::size_t>(h0->shape(0)) != w.channels ||
      static_cast<std::size_t>(h0->shape(1)) != w.state_dim) {
    throw ShapeError("h0 must have shape [channels, state_dim]");
  }
  s.h.assign(h0->data(), h0->data() + h0->size());
  return s;
}

Array from_state(const ScanState& s) {
  return from_values(s.h, {static_cast<py::ssize_t>(s.channels),
                           static_cast<py::ssize_t>(s.state_dim)});
}

ScanDirection direction_of(bool reverse) {
  return reverse ? ScanDirection::reverse : ScanDirection::forward;
}

}  // namespace

PYBIND11_MODULE(_storm, m) {
  m.doc() = "Selective-scan temporal projector, token compression and latency tools";

  auto base = py::register_exception<Error>(m, "StormError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ModeError>(m, "ModeError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<SelectiveScanWeights>(m, "ScanWeights")
      .def_static(
          "random",
          [](std::size_t channels, std::size_t state_dim, std::uint64_t seed, double scale) {
            Rng rng(seed);
            return SelectiveScanWeights::random(rng, channels, state_dim, scale);
          },
          py::arg("channels"), py::arg("state_dim"), py::arg("seed") = 42, py::arg("scale") = 0.1)
      .def_static("zeros", &SelectiveScanWeights::zeros, py::arg("channels"), py::arg("state_dim"))
      .def_readonly("channels", &SelectiveScanWeights::channels)
      .def_readonly("state_dim", &SelectiveScanWeights::state_dim)
      .def_property_readonly("a_log", [](const SelectiveScanWeights& w) {
        return from_values(w.a_log, {static_cast<py::ssize_t>(w.channels),
                                     static_cast<py::ssize_t>(w.state_dim)});
      });

  m.def(
      "scan",
      [](const Array& x, const SelectiveScanWeights& w, std::optional<Array> h0, bool reverse,
         bool parallel) {
        const auto seq = to_sequence(x);
        const auto state = to_state(h0, w);
        const auto r = parallel ? scan_parallel(seq, w, state, direction_of(reverse))
                                : scan_sequential(seq, w, state, direction_of(reverse));
        return py::make_tuple(from_sequence(r.y), from_state(r.h_final));
      },
      py::arg("x"), py::arg("weights"), py::arg("h0") = py::none(), py::arg("reverse") = false,
      py::arg("parallel") = true, "Selective scan over x [length, channels]; returns (y, h_final).");

  m.def(
      "scan_backward",
      [](const Array& x, const SelectiveScanWeights& w, const Array& grad_y,
         std::optional<Array> h0, bool reverse) {
        const auto g = scan_backward(to_sequence(x), w, to_state(h0, w), to_sequence(grad_y),
                                     direction_of(reverse));
        py::dict out;
        out["grad_x"] = from_sequence(g.grad_x);
        out["grad_h0"] = from_state(g.grad_h0);
        out["grad_a_log"] = from_values(g.grad_weights.a_log,
                                        {static_cast<py::ssize_t>(w.channels),
                                         static_cast<py::ssize_t>(w.state_dim)});
        return out;
      },
      py::arg("x"), py::arg("weights"), py::arg("grad_y"), py::arg("h0") = py::none(),
      py::arg("reverse") = false);

  py::enum_<DirectionMode>(m, "DirectionMode")
      .value("bidirectional", DirectionMode::bidirectional)
      .value("unidirectional", DirectionMode::unidirectional);

  py::class_<ProjectorConfig>(m, "ProjectorConfig")
      .def(py::init<>())
      .def_readwrite("raw_tokens_per_frame", &ProjectorConfig::raw_tokens_per_frame)
      .def_readwrite("downsample_ratio", &ProjectorConfig::downsample_ratio)
      .def_readwrite("input_channels", &ProjectorConfig::input_channels)
      .def_readwrite("channels", &ProjectorConfig::channels)
      .def_readwrite("layers", &ProjectorConfig::layers)
      .def_readwrite("state_dim", &ProjectorConfig::state_dim)
      .def_readwrite("grid_rows", &ProjectorConfig::grid_rows)
      .def_readwrite("grid_cols", &ProjectorConfig::grid_cols)
      .def_readwrite("direction_mode", &ProjectorConfig::direction_mode)
      .def("tokens_per_frame", &ProjectorConfig::tokens_per_frame)
      .def("validate", &ProjectorConfig::validate);

  py::class_<ProjectorWeights>(m, "ProjectorWeights")
      .def_static("random", &ProjectorWeights::random, py::arg("config"), py::arg("seed") = 42,
                  py::arg("scale") = 0.1)
      .def_static("zero_mixers", &ProjectorWeights::zero_mixers, py::arg("config"),
                  py::arg("seed") = 42)
      .def("save",
           [](const ProjectorWeights& w, const std::string& path, const ProjectorConfig& c) {
             save_weights(path, c, w);
           })
      .def_static("load", [](const std::string& path) { return load_weights(path); });

  m.def(
      "downsample",
      [](const Array& raw, const ProjectorWeights& w, const ProjectorConfig& c) {
        return from_tensor(downsample_video(to_tensor(raw), w, c));
      },
      py::arg("raw"), py::arg("weights"), py::arg("config"));
  m.def(
      "projector_forward",
      [](const Array& x, const ProjectorWeights& w, const ProjectorConfig& c) {
        return from_tensor(projector_forward(to_tensor(x), w, c));
      },
      py::arg("x"), py::arg("weights"), py::arg("config"));
  m.def(
      "projector_stream",
      [](const Array& x, const ProjectorWeights& w, const ProjectorConfig& c) {
        const auto t = to_tensor(x);
        auto stream = ProjectorStream::start(c);
        TokenTensor out(t.frames(), t.tokens_per_frame(), t.channels());
        for (std::size_t f = 0; f < t.frames(); ++f) {
          const auto y = projector_stream_step(t.frame(f), w, c, stream);
          std::copy(y.begin(), y.end(), out.frame(f).begin());
        }
        return from_tensor(out);
      },
      py::arg("x"), py::arg("weights"), py::arg("config"),
      "Feeds x frame by frame through a streaming (unidirectional) projector.");
  m.def(
      "sensitivity_matrix",
      [](const ProjectorWeights& w, const ProjectorConfig& c, std::size_t frames,
         double probe_scale, std::uint64_t seed) {
        return sensitivity_matrix(w, c, frames, probe_scale, seed);
      },
      py::arg("weights"), py::arg("config"), py::arg("frames"), py::arg("probe_scale") = 1e-3,
      py::arg("seed") = 42);

  m.def("compression_ratio",
        [](std::size_t k, std::size_t p, std::size_t s) { return compression_ratio({k, p, s}); },
        py::arg("k") = 1, py::arg("p") = 1, py::arg("s") = 1);
  m.def("round_percent", &round_percent);
  m.def(
      "token_budget",
      [](std::size_t frames, std::size_t tokens, std::size_t k, std::size_t p, std::size_t s,
         std::size_t budget) {
        const auto r = token_budget_check(frames, tokens, {k, p, s}, budget);
        py::dict out;
        out["frames_out"] = r.frames_out;
        out["tokens_out"] = r.tokens_out;
        out["total_tokens"] = r.total_tokens;
        out["ratio_percent"] = r.ratio_percent;
        out["within_budget"] = r.within_budget;
        return out;
      },
      py::arg("frames"), py::arg("tokens"), py::arg("k") = 1, py::arg("p") = 1, py::arg("s") = 1,
      py::arg("budget") = 8192);
  m.def(
      "temporal_pool", [](const Array& x, std::size_t k) { return from_tensor(temporal_pool(to_tensor(x), k)); },
      py::arg("x"), py::arg("k"));
  m.def(
      "spatial_pool",
      [](const Array& x, std::size_t rows, std::size_t cols, std::size_t p) {
        return from_tensor(spatial_pool(to_tensor(x), rows, cols, p));
      },
      py::arg("x"), py::arg("grid_rows"), py::arg("grid_cols"), py::arg("p"));
  m.def(
      "temporal_sample",
      [](const Array& x, std::size_t s) { return from_tensor(temporal_sample(to_tensor(x), s)); },
      py::arg("x"), py::arg("s"));

  m.def(
      "scan_check",
      [](std::uint64_t seed, std::size_t instances) {
        const auto r = verify::scan_check(seed, instances);
        py::dict out;
        out["passed"] = r.passed;
        out["worst_scaled_error"] = r.worst_scaled_error;
        out["causal"] = r.causal;
        return out;
      },
      py::arg("seed") = 42, py::arg("instances") = 50);
  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t instances) {
        const auto r = verify::gradcheck(seed, instances);
        py::dict out;
        out["passed"] = r.passed;
        out["worst_rel_error"] = r.worst_rel_error;
        out["entries"] = r.entries;
        return out;
      },
      py::arg("seed") = 42, py::arg("instances") = 20);

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "storm");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the storm command line in-process; returns (exit_code, stdout, stderr).");
}
