// Python extension: systems, maps, training, analysis and presets. Point sets cross the
// boundary as rows (k x n numpy arrays); JSON crosses as strings and is decoded in the
// Python package.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dform/analysis.hpp"
#include "dform/experiments.hpp"
#include "dform/io.hpp"
#include "dform/trainer.hpp"

namespace py = pybind11;
using namespace dform;
using nlohmann::json;

namespace {

struct PySystem {
  SystemPtr ptr;
};

json parse(const std::string& s) { return s.empty() ? json::object() : json::parse(s); }

Mat rows_in(const Mat& X, Index n, const char* what) {
  if (X.cols() != n)
    throw DimensionError(std::string(what) + ": expected " + std::to_string(n) + " columns, got " +
                         std::to_string(X.cols()));
  return X.transpose();
}

PySystem wrap(SystemPtr p) { return PySystem{std::move(p)}; }

}  // namespace

PYBIND11_MODULE(_dform, m) {
  m.doc() = "Diffeomorphic alignment of dynamical systems (C++ core)";

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  py::class_<PySystem>(m, "System")
      .def_static("from_json", [](const std::string& s) { return wrap(system_from_json(parse(s))); })
      .def("to_json", [](const PySystem& s) { return s.ptr->to_json().dump(); })
      .def_property_readonly("dim", [](const PySystem& s) { return s.ptr->dim(); })
      .def_property_readonly("kind", [](const PySystem& s) { return s.ptr->kind(); })
      .def("eval", [](const PySystem& s, const Mat& X) {
        return Mat(s.ptr->eval_batch(rows_in(X, s.ptr->dim(), "eval")).transpose());
      }, "Field values at the rows of X.")
      .def("jacobian", [](const PySystem& s, const Vec& x) { return s.ptr->jacobian(x); })
      .def_property_readonly("mixing", [](const PySystem& s) -> py::object {
        if (auto c = std::dynamic_pointer_cast<const CompositeSystem>(s.ptr)) return py::cast(c->O());
        return py::none();
      }, "Orthogonal mixing matrix of a composite system, else None.");

  m.def("linear", [](const Mat& A) { return wrap(std::make_shared<LinearSystem>(A)); });
  m.def("rnn", [](const Mat& W) { return wrap(std::make_shared<RnnSystem>(W)); });
  m.def("vdp", [](double mu) { return wrap(std::make_shared<VanDerPol>(mu)); }, py::arg("mu") = 1.0);
  m.def("hopf", [](double mu) { return wrap(std::make_shared<HopfSystem>(mu)); }, py::arg("mu") = 1.0);
  m.def("snic", [](double mu) { return wrap(std::make_shared<SnicSystem>(mu)); }, py::arg("mu") = 0.5);
  m.def("bla", [](double w1, double w2) { return wrap(std::make_shared<BlaSystem>(w1, w2)); });
  m.def("synth_mindy", [](Index n, std::uint64_t seed, const std::string& cls) {
    return wrap(synth_mindy(n, seed, cls));
  });
  m.def("composite_and_mix", [](const PySystem& low, const PySystem& high, std::uint64_t seed) {
    return wrap(composite_and_mix(low.ptr, high.ptr, seed));
  });
  m.def("affine_transformed", [](const PySystem& f, const Mat& H, const Vec& b) {
    return wrap(std::make_shared<AffineTransformedSystem>(f.ptr, H, b));
  });

  m.def("random_linear", &random_linear);
  m.def("linear_with_signature", [](int p, int q, int r, std::uint64_t seed) {
    return linear_with_signature({p, q, r}, seed);
  });
  m.def("signature", [](const Mat& A) {
    const Signature s = signature(A);
    return py::make_tuple(s.p, s.q, s.r);
  });
  m.def("random_orthogonal", &random_orthogonal_seeded);
  m.def("random_general", &random_general_seeded);
  m.def("low_rank_rnn", [](Index n, std::uint64_t seed) { return low_rank_rnn(n, seed).W; });
  m.def("monostable_rnn", &monostable_rnn);

  py::class_<Diffeomorphism>(m, "Diffeomorphism")
      .def_static("from_json", [](const std::string& s) { return Diffeomorphism::from_json(parse(s)); })
      .def_static("affine", [](const Mat& H, const Vec& b) { return Diffeomorphism::affine_only(H, b); })
      .def("to_json", [](const Diffeomorphism& d) { return d.to_json().dump(); })
      .def_property_readonly("dim", &Diffeomorphism::dim)
      .def_property_readonly("H", &Diffeomorphism::H)
      .def_property_readonly("b", &Diffeomorphism::b)
      .def_property_readonly("has_flow", &Diffeomorphism::has_flow)
      .def("forward", [](const Diffeomorphism& d, const Mat& X) {
        return Mat(d.forward(rows_in(X, d.dim(), "forward"), Solver::Dopri5).transpose());
      })
      .def("inverse", [](const Diffeomorphism& d, const Mat& Y) {
        return Mat(d.inverse(rows_in(Y, d.dim(), "inverse"), Solver::Dopri5).transpose());
      })
      .def("jacobian", &Diffeomorphism::jacobian);

  m.def("align", [](const PySystem& f, const PySystem& g, const std::string& config,
                    const std::string& px, const std::string& py_) {
    const TrainConfig c = TrainConfig::from_json(parse(config));
    const TrainProblem p{f.ptr, g.ptr,
                         px.empty() ? DistPtr(std::make_shared<StandardNormal>(f.ptr->dim()))
                                    : distribution_from_json(parse(px)),
                         py_.empty() ? DistPtr(std::make_shared<StandardNormal>(g.ptr->dim()))
                                     : distribution_from_json(parse(py_))};
    TrainReport r;
    {
      py::gil_scoped_release release;
      r = train_multi(p, c);
    }
    return py::make_tuple(r.to_json().dump(), r.best().phi);
  }, py::arg("f"), py::arg("g"), py::arg("config") = "", py::arg("px") = "", py::arg("py") = "");

  m.def("alignment_scores", [](const PySystem& f, const PySystem& g, const Diffeomorphism& phi,
                               const Mat& xs, const Mat& ys) {
    return alignment_scores(*f.ptr, *g.ptr, phi, rows_in(xs, f.ptr->dim(), "xs"),
                            rows_in(ys, g.ptr->dim(), "ys"))
        .to_json()
        .dump();
  });
  m.def("jacobian_similarity", [](const PySystem& f, const PySystem& g, const Diffeomorphism& phi) {
    return jacobian_similarity_at_origin(*f.ptr, *g.ptr, phi);
  });
  m.def("fixed_points", [](const PySystem& f, std::uint64_t seed) {
    FixedPointOptions o;
    o.seed = seed;
    const FixedPointSet s = find_fixed_points(*f.ptr, o);
    Mat P(Index(s.points.size()), f.ptr->dim());
    std::vector<std::string> st;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      P.row(Index(i)) = s.points[i].transpose();
      st.push_back(stability_name(s.stability[i]));
    }
    return py::make_tuple(P, st);
  }, py::arg("f"), py::arg("seed") = 0);
  m.def("reconstruct_feature", [](const Diffeomorphism& phi, const Mat& Y) {
    return Mat(reconstruct_feature(phi, Y.transpose()).transpose());
  });
  m.def("concordance", &concordance);

  m.def("preset_ids", &preset_ids);
  m.def("preset_parameters", [](const std::string& id, const std::string& scale) {
    return preset_parameters(id, scale_from_name(scale)).dump();
  });
  m.def("run_experiment", [](const std::string& id, const std::string& scale, std::uint64_t seed,
                             const std::string& out_dir, const std::string& overrides, bool verbose) {
    ExperimentOptions o;
    o.scale = scale_from_name(scale);
    o.seed = seed;
    o.out_dir = out_dir;
    o.overrides = parse(overrides);
    o.verbose = verbose;
    py::gil_scoped_release release;
    return run_experiment(id, o).dump();
  }, py::arg("preset"), py::arg("scale") = "desk", py::arg("seed") = 0, py::arg("out_dir") = "",
     py::arg("overrides") = "", py::arg("verbose") = false);
}
