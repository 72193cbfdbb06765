#include <sstream>

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mwi/array.hpp"
#include "mwi/cli.hpp"
#include "mwi/entangle.hpp"
#include "mwi/error.hpp"
#include "mwi/montecarlo.hpp"
#include "mwi/noisefield.hpp"
#include "mwi/oracle.hpp"
#include "mwi/wavepacket.hpp"

namespace py = pybind11;
using namespace mwi;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <class F>
Array map_over(const Array& xs, F&& f) {
  Array out(xs.request().shape);
  auto in = xs.unchecked();
  auto dst = out.mutable_data();
  const double* src = xs.data();
  for (py::ssize_t i = 0; i < in.size(); ++i) dst[i] = f(src[i]);
  return out;
}

Array to_array(const std::vector<double>& v) { return Array(static_cast<py::ssize_t>(v.size()), v.data()); }

py::dict histogram_dict(const Histogram& h) {
  py::dict d;
  d["centers"] = to_array(h.centers());
  d["density"] = to_array(h.density());
  std::vector<double> counts(h.counts.begin(), h.counts.end());
  d["counts"] = to_array(counts);
  d["lo"] = h.lo;
  d["hi"] = h.hi;
  d["total"] = h.total;
  d["outside"] = h.outside;
  return d;
}

Histogram histogram_from(const py::dict& d) {
  Histogram h = make_histogram(py::len(d["counts"]), d["lo"].cast<double>(), d["hi"].cast<double>());
  const auto counts = d["counts"].cast<std::vector<double>>();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    h.counts[i] = static_cast<std::uint64_t>(counts[i]);
    h.total += h.counts[i];
  }
  return h;
}

py::object json_to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json python_to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_mwi, m) {
  m.doc() = "Matter-wave interferometer arrays: closed forms, Monte Carlo and grid oracle";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      PyErr_SetObject(exc.ptr(), py::make_tuple(e.what(), to_string(e.kind())).ptr());
    } catch (const cli::ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::class_<InterferometerSpec>(m, "InterferometerSpec")
      .def(py::init([](std::complex<double> alpha, double mass, double frequency, double hbar) {
             InterferometerSpec s;
             s.alpha = alpha;
             s.mass = mass;
             s.frequency = frequency;
             s.hbar = hbar;
             return s;
           }),
           py::arg("alpha"), py::arg("mass") = 0.5, py::arg("frequency") = 1.0, py::arg("hbar") = 1.0)
      .def_readwrite("alpha", &InterferometerSpec::alpha)
      .def_readwrite("mass", &InterferometerSpec::mass)
      .def_readwrite("frequency", &InterferometerSpec::frequency)
      .def_readwrite("hbar", &InterferometerSpec::hbar)
      .def("__repr__", [](const InterferometerSpec& s) {
        std::ostringstream os;
        os << "InterferometerSpec(alpha=" << s.alpha << ", mass=" << s.mass << ", frequency=" << s.frequency << ")";
        return os.str();
      });

  m.def("derive_scales", [](const InterferometerSpec& s) {
    const auto sc = derive_scales(s);
    return py::make_tuple(sc.x0, sc.p0);
  });
  m.def("overlap_time", &overlap_time);
  m.def("spec_for_pattern", &spec_for_pattern, py::arg("wavenumber"), py::arg("width"), py::arg("mass") = 0.5,
        py::arg("frequency") = 1.0, py::arg("hbar") = 1.0);
  m.def("matched_spec", &matched_spec);
  m.def(
      "position_pdf",
      [](const InterferometerSpec& s, double t, const Array& xs, double displacement) {
        const auto pdf = position_pdf(s, t, displacement);
        return map_over(xs, pdf);
      },
      py::arg("spec"), py::arg("t"), py::arg("x"), py::arg("displacement") = 0.0);

  py::class_<FringePattern>(m, "FringePattern")
      .def(py::init<double, double, double, double>(), py::arg("offset") = 1.0, py::arg("width") = 1.0,
           py::arg("wavenumber") = 0.0, py::arg("center") = 0.0)
      .def_readwrite("offset", &FringePattern::offset)
      .def_readwrite("width", &FringePattern::width)
      .def_readwrite("wavenumber", &FringePattern::wavenumber)
      .def_readwrite("center", &FringePattern::center)
      .def_property_readonly("visibility", &FringePattern::visibility)
      .def("__call__", [](const FringePattern& p, const Array& xs) {
        validate(p);
        return map_over(xs, p);
      });
  m.def("pattern_at_overlap", &pattern_at_overlap, py::arg("spec"), py::arg("displacement") = 0.0);
  m.def("pattern_normalization", &pattern_normalization);
  m.def(
      "averaged_pdf",
      [](const FringePattern& p, double s, const Array& xs) {
        const auto avg = averaged_pdf(p, s);
        return map_over(xs, avg);
      },
      py::arg("pattern"), py::arg("displacement_std"), py::arg("x"));
  m.def("suppression", [](const FringePattern& p, double s) { return averaged_pdf(p, s).suppression; });

  m.def("newtonian_acceleration",
        [](double mass, double distance) { return newtonian_acceleration({mass, distance}); });
  m.def("finite_difference_sensitivity", [](double mass, double distance, double h, int q) {
    return finite_difference_sensitivity({mass, distance}, h, q);
  });
  m.def("solve_standoff_distance", &solve_standoff_distance, py::arg("mass"), py::arg("h"), py::arg("q"),
        py::arg("delta_a"));

  m.def("difference_weights", &difference_weights);
  m.def("difference_variable", [](const std::vector<double>& x, int n, int q) {
    return difference_variable(x, n, q);
  });
  m.def(
      "pair_difference_pdf",
      [](const FringePattern& a, const FringePattern& b, const Array& xs) {
        const auto d = convolve_patterns(a, b);
        return py::make_tuple(map_over(xs, d), d.eta());
      },
      "Exact density of (x1 - x2)/2 and the overlap factor eta");
  m.def(
      "reduce_order",
      [](const FringePattern& a, const FringePattern& b, double tol) {
        const auto r = reduce_order(a, b, tol);
        return py::make_tuple(r.pattern, r.eta);
      },
      py::arg("first"), py::arg("second"), py::arg("eta_tolerance") = kDefaultEtaTolerance);
  m.def(
      "recursive_pattern",
      [](const std::vector<InterferometerSpec>& devices, double spacing, int q, double tol) {
        return recursive_pattern(ArraySpec{devices, spacing}, q, tol);
      },
      py::arg("devices"), py::arg("spacing"), py::arg("q"), py::arg("eta_tolerance") = kDefaultEtaTolerance);

  m.def(
      "run_experiment",
      [](const std::vector<InterferometerSpec>& devices, double spacing, int order, std::uint64_t shots,
         std::uint64_t seed, double noise_std, bool shared_sites, unsigned threads) {
        NoiseModel model;
        if (noise_std > 0.0) model.orders = {ShotConstantProcess{0.0, noise_std}};
        ExperimentOptions o;
        o.order = order;
        o.shots = shots;
        o.seed = seed;
        o.threads = threads;
        o.construction = shared_sites ? Construction::shared_sites : Construction::independent_tree;
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(ArraySpec{devices, spacing}, model, o);
        }
        py::dict d;
        d["difference"] = histogram_dict(r.difference);
        py::list sites;
        for (const auto& h : r.sites) sites.append(histogram_dict(h));
        d["sites"] = sites;
        d["overlap_time"] = r.overlap_time;
        d["difference_wavenumber"] = r.difference_wavenumber;
        d["difference_width"] = r.difference_width;
        return d;
      },
      py::arg("devices"), py::arg("spacing") = 1.0, py::arg("order") = 1, py::arg("shots") = 100000,
      py::arg("seed") = 1, py::arg("noise_std") = 0.0, py::arg("shared_sites") = false, py::arg("threads") = 1,
      "Shot-constant common-mode noise with acceleration spread noise_std");
  m.def(
      "fit_fringe",
      [](const py::dict& hist, double k_hint) {
        const auto f = fit_fringe(histogram_from(hist), k_hint);
        py::dict d;
        d["visibility"] = f.visibility;
        d["wavenumber"] = f.wavenumber;
        d["width"] = f.width;
        d["center"] = f.center;
        d["phase"] = f.phase;
        return d;
      },
      py::arg("histogram"), py::arg("k_hint"));

  py::class_<PhaseDistribution>(m, "PhaseDistribution")
      .def_static("uniform", &PhaseDistribution::uniform)
      .def_static("gaussian", &PhaseDistribution::gaussian, py::arg("sigma"), py::arg("mean") = 0.0)
      .def_static("point", &PhaseDistribution::point);
  m.def("log_negativity", [](const Eigen::MatrixXcd& rho) {
    const int qubits = static_cast<int>(std::lround(std::log2(static_cast<double>(rho.rows()))));
    if (rho.rows() != rho.cols() || qubits % 2 != 0 || (Eigen::Index{1} << qubits) != rho.rows()) {
      throw Error(ErrorKind::invalid_state, "density matrix must be 4^d x 4^d");
    }
    return log_negativity(ArmState::mixed(qubits / 2, rho.sparseView(0.0, 0.0)));
  });
  m.def("recovered_entanglement", &recovered_entanglement);
  m.def("measured_entanglement", &measured_entanglement);
  m.def("averaged_density", [](int copies, const PhaseDistribution& phi, const PhaseDistribution& dphi) {
    const PhaseDistribution d[] = {phi, dphi};
    return Eigen::MatrixXcd(average_over_phases(gradient_family(copies), d).density());
  });

  m.def(
      "oracle_compare",
      [](const InterferometerSpec& spec, double g, std::size_t points, double spacing) {
        const double tk = overlap_time(spec);
        const auto initial = prepare_cat(spec, GridParameters{points, spacing});
        const int steps = minimum_split_steps(initial, tk);
        NoisePath path;
        path.times = time_grid(tk, tk / steps);
        path.values = {std::vector<double>(path.times.size(), g)};
        const auto evolved = evolve_split_step(initial, path, tk, steps);
        const double xg = displacement_coefficients(path, tk).values[0];
        auto analytic = evolved.probability();
        const auto pdf = position_pdf(spec, tk, xg);
        for (std::size_t j = 0; j < analytic.size(); ++j) analytic.values[j] = pdf(analytic.x(j));
        const auto d = compare_distributions(evolved.probability(), analytic);
        py::dict out;
        out["l1"] = d.l1;
        out["linf"] = d.linf;
        out["centroid"] = evolved.centroid();
        out["x_gamma"] = xg;
        return out;
      },
      py::arg("spec"), py::arg("g"), py::arg("points") = 4096, py::arg("spacing") = 0.125,
      "Grid-evolved versus closed-form density at t_k under a constant acceleration g");

  m.def(
      "run",
      [](const py::object& config, const std::string& out_dir) {
        auto c = cli::parse_config(python_to_json(config));
        c.out_dir = out_dir;
        std::ostringstream log;
        const auto r = cli::run(c, log);
        return json_to_python(r.summary);
      },
      py::arg("config"), py::arg("out_dir"), "Runs a CLI configuration dict and returns its summary");
  m.def("default_config", [](const std::string& mode) { return json_to_python(cli::default_config(cli::parse_mode(mode))); });
}
