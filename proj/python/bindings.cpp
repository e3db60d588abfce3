// Python bindings: configuration, the pipeline commands and a few of the
// numerical kernels, for scripting and notebooks.

#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "muvfs/a3m.hpp"
#include "muvfs/commands.hpp"
#include "muvfs/config.hpp"
#include "muvfs/contrastive.hpp"
#include "muvfs/gradcheck.hpp"
#include "muvfs/metalearn.hpp"
#include "muvfs/mining.hpp"

namespace py = pybind11;
using namespace muvfs;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict run(const std::string& name, const config::RunConfig& c) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = commands::run_command(name, c, out, err);
  }
  py::dict d;
  d["exit_code"] = code;
  d["stdout"] = out.str();
  d["stderr"] = err.str();
  return d;
}

}  // namespace

PYBIND11_MODULE(_muvfs, m) {
  m.doc() = "Unsupervised few-shot video classification pipeline";

  py::register_exception<config::ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<config::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", &config::RunConfig::parse, py::arg("text"), py::arg("origin") = "<config>")
      .def_static("load", [](const std::string& path) { return config::RunConfig::load(path); })
      .def("set", &config::RunConfig::set)
      .def("get", &config::RunConfig::get)
      .def("validate", &config::RunConfig::validate)
      .def("canonical", &config::RunConfig::canonical)
      .def("digest", &config::RunConfig::digest)
      .def("__getitem__", &config::RunConfig::get)
      .def("__setitem__", &config::RunConfig::set);

  m.def("known_keys", &config::known_keys);
  m.def("command_names", &commands::command_names);
  m.def("run_command", &run, py::arg("name"), py::arg("config"),
        "Runs a pipeline command; returns exit_code, stdout and stderr.");

  m.def(
      "gradcheck",
      [](std::size_t seeds, std::vector<std::string> only) {
        gradcheck::GradcheckOptions o;
        o.seeds = seeds;
        o.only = std::move(only);
        return gradcheck::run(o).to_json().dump();
      },
      py::arg("seeds") = 100, py::arg("only") = std::vector<std::string>{}, "Gradient check report as a JSON string.");

  m.def(
      "nt_xent", [](const Array& z, double tau) { return contrastive::nt_xent(to_tensor(z), tau).item(); }, py::arg("z"),
      py::arg("tau"), "NT-Xent over rows where (2k, 2k+1) are positive pairs.");
  m.def(
      "symmetric_kl", [](const Array& p, const Array& q) { return contrastive::symmetric_kl(to_tensor(p), to_tensor(q)).item(); },
      py::arg("p"), py::arg("q"));
  m.def(
      "attend",
      [](const Array& frames, const Array& act, const Array& K, const Array& V, const Array& Q) {
        a3m::A3MParameters p;
        p.K = to_tensor(K), p.V = to_tensor(V), p.Q = to_tensor(Q);
        const auto r = a3m::attend(to_tensor(frames), to_tensor(act), p);
        return py::make_tuple(to_array(r.a), to_array(r.h));
      },
      py::arg("frames"), py::arg("act"), py::arg("K"), py::arg("V"), py::arg("Q"),
      "Attention weights and attended value for per-frame appearance rows and an action embedding.");
  m.def(
      "mine_hard",
      [](std::vector<std::int64_t> ids, std::vector<double> ap, std::vector<double> act, std::size_t n, double exploration,
         std::uint64_t seed) {
        mining::MiningConfig cfg;
        cfg.n = n;
        cfg.mining_batch = ids.size();
        cfg.exploration_fraction = exploration;
        Rng rng(seed);
        const auto pool = mining::mine_hard({std::move(ids), std::move(ap), std::move(act)}, cfg, rng);
        py::list out;
        for (const auto& mbr : pool.members) out.append(py::make_tuple(mbr.video_id, mbr.selected_by));
        return out;
      },
      py::arg("ids"), py::arg("ap"), py::arg("act"), py::arg("n"), py::arg("exploration") = 0.10, py::arg("seed") = 0);
  m.def(
      "accuracy_ci",
      [](const std::vector<double>& xs) {
        const auto ci = metalearn::accuracy_ci(xs);
        return py::make_tuple(ci.mean, ci.halfwidth);
      },
      py::arg("per_episode"), "Mean accuracy and 95% half-width, both in percent.");
}
