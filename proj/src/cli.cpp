#include "mwi/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "mwi/error.hpp"

namespace mwi::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw ConfigError(what); }

// Runs a module precondition and reports it by operation name.
template <class F>
void require(const std::string& operation, const std::string& subject, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    config_error(operation + " precondition failed for " + subject + ": " + e.what());
  }
}

const std::map<Mode, std::set<std::string>>& allowed_keys() {
  static const std::set<std::string> common{"mode", "seed", "threads", "out"};
  static const std::set<std::string> experiment{"shots",      "order", "tolerance_eta",       "devices",  "spacing",
                                                "construction", "noise", "injected_polynomial", "path_step", "histogram"};
  static const std::map<Mode, std::set<std::string>> keys = [] {
    std::map<Mode, std::set<std::string>> k;
    for (Mode m : {Mode::single, Mode::pair, Mode::array}) {
      k[m] = common;
      k[m].insert(experiment.begin(), experiment.end());
    }
    k[Mode::entangle] = common;
    k[Mode::entangle].insert({"copies", "phi", "dphi"});
    k[Mode::oracle] = common;
    k[Mode::oracle].insert({"devices", "noise", "paths", "grid", "steps"});
    k[Mode::scenario] = common;
    k[Mode::scenario].insert({"order", "orders", "source_mass", "site_spacing", "delta_a", "reference_distance"});
    return k;
  }();
  return keys;
}

void check_keys(const json& object, const std::set<std::string>& allowed, const std::string& where) {
  if (!object.is_object()) config_error(where + " must be an object");
  for (const auto& item : object.items()) {
    if (!allowed.count(item.key())) config_error("unknown key '" + item.key() + "' in " + where);
  }
}

double number(const json& j, const std::string& key) {
  if (!j.contains(key)) config_error("missing key '" + key + "'");
  if (!j.at(key).is_number()) config_error("'" + key + "' must be a number");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) config_error("'" + key + "' must be finite");
  return v;
}

double number_or(const json& j, const std::string& key, double fallback) {
  return j.contains(key) ? number(j, key) : fallback;
}

template <class Int>
Int integer(const json& j, const std::string& key, Int lo) {
  if (!j.at(key).is_number_integer()) config_error("'" + key + "' must be an integer");
  if (j.at(key).is_number_unsigned()) {
    const auto v = j.at(key).get<std::uint64_t>();
    if (static_cast<double>(v) < static_cast<double>(lo)) config_error("'" + key + "' is below its minimum");
    return static_cast<Int>(v);
  }
  const auto v = j.at(key).get<std::int64_t>();
  if (v < static_cast<std::int64_t>(lo)) {
    config_error("'" + key + "' must be >= " + std::to_string(static_cast<std::int64_t>(lo)));
  }
  return static_cast<Int>(v);
}

std::vector<double> number_list(const json& j, const std::string& key) {
  if (!j.at(key).is_array()) config_error("'" + key + "' must be an array");
  std::vector<double> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_number() || !std::isfinite(v.get<double>())) config_error("'" + key + "' must hold finite numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<int> int_list(const json& j, const std::string& key, int lo, int hi) {
  if (!j.at(key).is_array() || j.at(key).empty()) config_error("'" + key + "' must be a non-empty array");
  std::vector<int> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_number_integer()) config_error("'" + key + "' must hold integers");
    const auto x = v.get<std::int64_t>();
    if (x < lo || x > hi) {
      config_error("'" + key + "' entries must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    out.push_back(static_cast<int>(x));
  }
  return out;
}

std::vector<InterferometerSpec> parse_devices(const json& j, int needed) {
  std::vector<InterferometerSpec> devices;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& d = j[i];
      check_keys(d, {"mass", "frequency", "alpha", "hbar", "site"}, "devices[" + std::to_string(i) + "]");
      InterferometerSpec s;
      s.mass = number_or(d, "mass", s.mass);
      s.frequency = number_or(d, "frequency", s.frequency);
      s.hbar = number_or(d, "hbar", s.hbar);
      if (d.contains("site")) s.site = integer<int>(d, "site", 0);
      const auto alpha = number_list(d, "alpha");
      if (alpha.size() != 2) config_error("devices[" + std::to_string(i) + "].alpha must be [re, im]");
      s.alpha = {alpha[0], alpha[1]};
      devices.push_back(s);
    }
  } else if (j.is_object()) {
    check_keys(j, {"wavenumber", "width", "mass", "masses", "count"}, "devices");
    if (j.contains("masses") && (j.contains("count") || j.contains("mass"))) {
      config_error("devices: give either 'masses' or 'mass' with 'count'");
    }
    std::vector<double> masses;
    if (j.contains("masses")) {
      masses = number_list(j, "masses");
    } else {
      const int count = j.contains("count") ? integer<int>(j, "count", 1) : needed;
      masses.assign(static_cast<std::size_t>(std::max(count, 1)), number_or(j, "mass", 0.5));
    }
    if (masses.empty()) config_error("devices: 'masses' is empty");
    const double k = number(j, "wavenumber");
    const double width = number(j, "width");
    InterferometerSpec reference;
    require("spec_for_pattern", "devices", [&] { reference = spec_for_pattern(k, width, masses[0]); });
    for (std::size_t i = 0; i < masses.size(); ++i) {
      require("matched_spec", "device " + std::to_string(i), [&] {
        devices.push_back(i == 0 ? reference : matched_spec(reference, masses[i]));
      });
    }
  } else {
    config_error("'devices' must be an array of devices or a pattern object");
  }
  if (devices.empty()) config_error("no devices given");
  for (std::size_t i = 0; i < devices.size(); ++i) {
    devices[i].site = static_cast<int>(i);
    const std::string name = "device " + std::to_string(i);
    require("validate", name, [&] { validate(devices[i]); });
    require("overlap_time", name, [&] { overlap_time(devices[i]); });
  }
  return devices;
}

NoiseModel parse_noise(const json& j, double tk) {
  if (!j.is_array()) config_error("'noise' must be an array indexed by expansion order");
  NoiseModel model;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const std::string where = "noise[" + std::to_string(i) + "]";
    if (!e.is_object() || !e.contains("process") || !e.at("process").is_string()) {
      config_error(where + " needs a 'process' name");
    }
    const auto kind = e.at("process").get<std::string>();
    if (kind == "zero") {
      check_keys(e, {"process"}, where);
      model.orders.emplace_back(ZeroProcess{});
    } else if (kind == "shot_constant") {
      check_keys(e, {"process", "std", "mean", "displacement_std"}, where);
      if (e.contains("std") == e.contains("displacement_std")) {
        config_error(where + ": give exactly one of 'std' and 'displacement_std'");
      }
      ShotConstantProcess p{number_or(e, "mean", 0.0), 0.0};
      // x_gamma = -g t^2 / 2, so a displacement spread s needs std(g) = 2 s / t^2.
      p.std = e.contains("std") ? number(e, "std") : 2.0 * number(e, "displacement_std") / (tk * tk);
      if (e.contains("displacement_std") && !(tk > 0.0)) config_error(where + ": displacement_std needs t_k > 0");
      model.orders.emplace_back(p);
    } else if (kind == "ou") {
      check_keys(e, {"process", "std", "relaxation_time"}, where);
      model.orders.emplace_back(OrnsteinUhlenbeckProcess{number(e, "relaxation_time"), number(e, "std")});
    } else if (kind == "band_limited") {
      check_keys(e, {"process", "std", "correlation_step"}, where);
      model.orders.emplace_back(BandLimitedWhiteProcess{number(e, "std"), number(e, "correlation_step")});
    } else {
      config_error(where + ": unknown process '" + kind + "' (zero, shot_constant, ou, band_limited)");
    }
  }
  require("validate", "noise", [&] { validate(model); });
  return model;
}

json noise_to_json(const NoiseModel& model) {
  json out = json::array();
  for (const auto& p : model.orders) {
    if (std::holds_alternative<ZeroProcess>(p)) {
      out.push_back({{"process", "zero"}});
    } else if (const auto* c = std::get_if<ShotConstantProcess>(&p)) {
      out.push_back({{"process", "shot_constant"}, {"std", c->std}, {"mean", c->mean}});
    } else if (const auto* o = std::get_if<OrnsteinUhlenbeckProcess>(&p)) {
      out.push_back({{"process", "ou"}, {"std", o->std}, {"relaxation_time", o->relaxation_time}});
    } else if (const auto* b = std::get_if<BandLimitedWhiteProcess>(&p)) {
      out.push_back({{"process", "band_limited"}, {"std", b->std}, {"correlation_step", b->correlation_step}});
    }
  }
  return out;
}

bool constant_noise(const NoiseModel& model) {
  return std::all_of(model.orders.begin(), model.orders.end(), [](const ProcessSpec& p) {
    return std::holds_alternative<ZeroProcess>(p) || std::holds_alternative<ShotConstantProcess>(p);
  });
}

PhaseDistribution parse_phase(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("distribution") || !j.at("distribution").is_string()) {
    config_error(where + " needs a 'distribution' name");
  }
  const auto kind = j.at("distribution").get<std::string>();
  if (kind == "uniform") {
    check_keys(j, {"distribution"}, where);
    return PhaseDistribution::uniform();
  }
  if (kind == "gaussian") {
    check_keys(j, {"distribution", "sigma", "mean"}, where);
    const double sigma = number(j, "sigma");
    if (!(sigma >= 0.0)) config_error(where + ": sigma must be >= 0");
    return PhaseDistribution::gaussian(sigma, number_or(j, "mean", 0.0));
  }
  if (kind == "point") {
    check_keys(j, {"distribution", "value"}, where);
    return PhaseDistribution::point(number(j, "value"));
  }
  config_error(where + ": unknown distribution '" + kind + "' (uniform, gaussian, point)");
}

json phase_to_json(const PhaseDistribution& d) {
  switch (d.kind) {
    case PhaseDistribution::Kind::uniform: return {{"distribution", "uniform"}};
    case PhaseDistribution::Kind::gaussian: return {{"distribution", "gaussian"}, {"sigma", d.sigma}, {"mean", d.value}};
    case PhaseDistribution::Kind::point: return {{"distribution", "point"}, {"value", d.value}};
  }
  return {};
}

bool experiment_mode(Mode m) { return m == Mode::single || m == Mode::pair || m == Mode::array; }

json pattern_devices(double k, double width, json masses) {
  return {{"wavenumber", k}, {"width", width}, {"masses", std::move(masses)}};
}

}  // namespace

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::single: return "single";
    case Mode::pair: return "pair";
    case Mode::array: return "array";
    case Mode::entangle: return "entangle";
    case Mode::oracle: return "oracle";
    case Mode::scenario: return "scenario";
  }
  return "unknown";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::single, Mode::pair, Mode::array, Mode::entangle, Mode::oracle, Mode::scenario}) {
    if (name == to_string(m)) return m;
  }
  config_error("unknown mode '" + name + "' (single, pair, array, entangle, oracle, scenario)");
}

json default_config(Mode mode) {
  const double k = 1e-3, width = 1e4;
  const json fig2_noise = json::array({{{"process", "shot_constant"}, {"displacement_std", 5.0 / k}}});
  json j{{"mode", to_string(mode)}, {"seed", 1}};
  switch (mode) {
    case Mode::single:
      j.update({{"order", 0}, {"shots", 100000}, {"devices", pattern_devices(k, width, {0.5})}, {"noise", fig2_noise}});
      break;
    case Mode::pair:
      j.update({{"order", 1}, {"shots", 100000}, {"devices", pattern_devices(k, width, {0.5, 0.5})},
                {"noise", fig2_noise}});
      break;
    case Mode::array:
      j.update({{"order", 2},
                {"shots", 100000},
                {"devices", {{"wavenumber", k}, {"width", width}}},
                {"noise", fig2_noise}});
      break;
    case Mode::entangle:
      j.update({{"copies", {1, 2, 4}}, {"phi", {{"distribution", "uniform"}}}, {"dphi", {{"distribution", "uniform"}}}});
      break;
    case Mode::oracle:
      j.update({{"devices", json::array({{{"mass", 0.5}, {"frequency", 1.0}, {"alpha", {-4.0, 2.0}}}})},
                {"noise", json::array({{{"process", "ou"}, {"std", 1.0}, {"relaxation_time", 0.5}}})},
                {"paths", 20},
                {"grid", {{"points", kReferenceGridPoints}, {"spacing", 0.125}}}});
      break;
    case Mode::scenario:
      j.update({{"source_mass", 1.0}, {"site_spacing", 0.1}, {"delta_a", 6.67e-17}, {"reference_distance", 1000.0},
                {"orders", {0, 1, 2}}});
      break;
  }
  return j;
}

RunConfig parse_config(const json& in) {
  if (!in.is_object()) config_error("config must be a JSON object");
  if (!in.contains("mode") || !in.at("mode").is_string()) config_error("config needs a 'mode'");
  RunConfig c;
  c.mode = parse_mode(in.at("mode").get<std::string>());
  check_keys(in, allowed_keys().at(c.mode), std::string(to_string(c.mode)) + " config");

  if (in.contains("seed")) c.seed = integer<std::uint64_t>(in, "seed", 0);
  if (in.contains("threads")) c.threads = integer<unsigned>(in, "threads", 1);
  if (in.contains("out")) {
    if (!in.at("out").is_string()) config_error("'out' must be a path string");
    c.out_dir = in.at("out").get<std::string>();
  }

  if (experiment_mode(c.mode)) {
    const int fixed = c.mode == Mode::single ? 0 : 1;
    c.order = in.contains("order") ? integer<int>(in, "order", 0) : (c.mode == Mode::array ? 2 : fixed);
    if (c.mode != Mode::array && c.order != fixed) {
      config_error(std::string(to_string(c.mode)) + " mode is order " + std::to_string(fixed));
    }
    if (c.order > 6) config_error("order must be <= 6");
    if (in.contains("shots")) c.shots = integer<std::uint64_t>(in, "shots", 1);
    c.tolerance_eta = number_or(in, "tolerance_eta", c.tolerance_eta);
    if (!(c.tolerance_eta >= 0.0)) config_error("'tolerance_eta' must be >= 0");
    if (!in.contains("devices")) config_error("missing key 'devices'");
    c.devices = parse_devices(in.at("devices"), c.order + 1);
    if (c.devices.size() < static_cast<std::size_t>(c.order) + 1) {
      config_error("order " + std::to_string(c.order) + " needs " + std::to_string(c.order + 1) + " devices, got " +
                   std::to_string(c.devices.size()));
    }
    c.spacing = number_or(in, "spacing", c.spacing);
    if (!(c.spacing > 0.0)) config_error("'spacing' must be positive");
    ArraySpec spec{c.devices, c.spacing};
    require("validate_matched_wavenumbers", "devices", [&] { validate_matched_wavenumbers(spec); });
    if (in.contains("construction")) {
      const auto name = in.at("construction").is_string() ? in.at("construction").get<std::string>() : "";
      if (name == "independent_tree") {
        c.construction = Construction::independent_tree;
      } else if (name == "shared_sites") {
        c.construction = Construction::shared_sites;
      } else {
        config_error("'construction' must be independent_tree or shared_sites");
      }
    }
    const double tk = overlap_time(c.devices[0]);
    if (in.contains("noise")) c.noise = parse_noise(in.at("noise"), tk);
    c.path_step = number_or(in, "path_step", constant_noise(c.noise) ? 0.0 : tk / 256.0);
    if (!(c.path_step >= 0.0)) config_error("'path_step' must be >= 0");
    if (!constant_noise(c.noise)) {
      require("time_grid", "path_step", [&] { time_grid(tk, c.path_step); });
    }
    if (in.contains("injected_polynomial")) c.injected_polynomial = number_list(in, "injected_polynomial");
    if (in.contains("histogram")) {
      const auto& h = in.at("histogram");
      check_keys(h, {"bins_per_period", "half_width_sigmas"}, "histogram");
      c.bins_per_period = number_or(h, "bins_per_period", c.bins_per_period);
      c.half_width_sigmas = number_or(h, "half_width_sigmas", c.half_width_sigmas);
    }
    const auto p0 = pattern_at_overlap(c.devices[0]);
    require("fringe_layout", "histogram", [&] {
      fringe_layout(0.0, p0.width, p0.wavenumber, c.half_width_sigmas, c.bins_per_period);
    });
  } else if (c.mode == Mode::entangle) {
    if (in.contains("copies")) c.copies = int_list(in, "copies", 1, kMaxDevices);
    if (in.contains("phi")) c.phi = parse_phase(in.at("phi"), "phi");
    if (in.contains("dphi")) c.dphi = parse_phase(in.at("dphi"), "dphi");
  } else if (c.mode == Mode::oracle) {
    if (!in.contains("devices")) config_error("missing key 'devices'");
    c.devices = parse_devices(in.at("devices"), 1);
    if (c.devices.size() != 1) config_error("oracle mode evolves exactly one device");
    const double tk = overlap_time(c.devices[0]);
    if (!(tk > 0.0)) config_error("oracle mode needs t_k > 0 (alpha_r and alpha_i of opposite sign)");
    if (in.contains("noise")) c.noise = parse_noise(in.at("noise"), tk);
    if (c.noise.orders.size() > 1) config_error("oracle mode uses a uniform field: give at most one noise order");
    if (in.contains("paths")) c.paths = integer<int>(in, "paths", 1);
    if (in.contains("grid")) {
      const auto& g = in.at("grid");
      check_keys(g, {"points", "spacing"}, "grid");
      if (g.contains("points")) c.grid.points = integer<std::size_t>(g, "points", 16);
      c.grid.spacing = number_or(g, "spacing", c.grid.spacing);
    }
    require("prepare_cat", "grid", [&] { prepare_cat(c.devices[0], c.grid); });
    GridState probe;
    probe.spacing = c.grid.spacing;
    probe.mass = c.devices[0].mass;
    probe.hbar = c.devices[0].hbar;
    const int minimum = minimum_split_steps(probe, tk);
    if (in.contains("steps")) c.steps = integer<int>(in, "steps", 0);
    if (c.steps == 0) c.steps = minimum;
    if (c.steps < minimum) {
      config_error("evolve_split_step precondition failed: " + std::to_string(c.steps) + " steps, need at least " +
                   std::to_string(minimum));
    }
  } else {
    c.source_mass = number_or(in, "source_mass", c.source_mass);
    c.site_spacing = number_or(in, "site_spacing", c.site_spacing);
    c.delta_a = number_or(in, "delta_a", c.delta_a);
    c.reference_distance = number_or(in, "reference_distance", c.reference_distance);
    if (in.contains("orders")) c.orders = int_list(in, "orders", 0, 12);
    if (in.contains("order")) c.orders = {integer<int>(in, "order", 0)};
    if (!(c.source_mass > 0.0) || !(c.site_spacing > 0.0) || !(c.delta_a > 0.0) || !(c.reference_distance > 0.0)) {
      config_error("scenario inputs must be positive");
    }
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j{{"mode", to_string(c.mode)}, {"seed", c.seed}};
  if (experiment_mode(c.mode) || c.mode == Mode::oracle) {
    json devices = json::array();
    for (const auto& d : c.devices) {
      devices.push_back({{"mass", d.mass},
                         {"frequency", d.frequency},
                         {"hbar", d.hbar},
                         {"alpha", {d.alpha.real(), d.alpha.imag()}}});
    }
    j["devices"] = devices;
    j["noise"] = noise_to_json(c.noise);
  }
  if (experiment_mode(c.mode)) {
    j.update({{"order", c.order},
              {"shots", c.shots},
              {"tolerance_eta", c.tolerance_eta},
              {"spacing", c.spacing},
              {"construction",
               c.construction == Construction::independent_tree ? "independent_tree" : "shared_sites"},
              {"path_step", c.path_step},
              {"injected_polynomial", c.injected_polynomial},
              {"histogram", {{"bins_per_period", c.bins_per_period}, {"half_width_sigmas", c.half_width_sigmas}}}});
  } else if (c.mode == Mode::entangle) {
    j.update({{"copies", c.copies}, {"phi", phase_to_json(c.phi)}, {"dphi", phase_to_json(c.dphi)}});
  } else if (c.mode == Mode::oracle) {
    j.update({{"paths", c.paths}, {"grid", {{"points", c.grid.points}, {"spacing", c.grid.spacing}}}, {"steps", c.steps}});
  } else if (c.mode == Mode::scenario) {
    j.update({{"source_mass", c.source_mass},
              {"site_spacing", c.site_spacing},
              {"delta_a", c.delta_a},
              {"reference_distance", c.reference_distance},
              {"orders", c.orders}});
  }
  return j;
}

std::string format_number(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

void write_density_csv(const fs::path& path, const std::vector<double>& centers, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) config_error("cannot write " + path.string());
  out << kCsvHeader << '\n';
  for (std::size_t i = 0; i < centers.size(); ++i) out << format_number(centers[i]) << ',' << format_number(values[i]) << '\n';
  if (!out) config_error("failed writing " + path.string());
}

namespace {

struct Writer {
  fs::path dir;
  std::vector<fs::path> files;

  void density(const std::string& name, const std::vector<double>& x, const std::vector<double>& y) {
    files.push_back(dir / (name + ".csv"));
    write_density_csv(files.back(), x, y);
  }

  void table(const std::string& name, const std::string& header, const std::vector<std::vector<double>>& rows) {
    files.push_back(dir / (name + ".csv"));
    std::ofstream out(files.back(), std::ios::binary);
    if (!out) config_error("cannot write " + files.back().string());
    out << header << '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
      out << '\n';
    }
  }

  void document(const std::string& name, const json& j) {
    files.push_back(dir / name);
    std::ofstream out(files.back(), std::ios::binary);
    if (!out) config_error("cannot write " + files.back().string());
    out << j.dump(2) << '\n';
  }
};

json fit_to_json(const Histogram& hist, double k_hint) {
  try {
    const auto f = fit_fringe(hist, k_hint);
    return {{"visibility", f.visibility}, {"wavenumber", f.wavenumber}, {"width", f.width}, {"center", f.center},
            {"phase", f.phase},           {"residual_norm", f.residual_norm}, {"iterations", f.iterations}};
  } catch (const Error& e) {
    return {{"error", e.what()}};
  }
}

// Mean and std of the noise displacement sum_p c_p x_gamma^(p) at the overlap time.
std::pair<double, double> displacement_moments(const NoiseModel& model, const std::vector<double>& c, double tk) {
  double mean = 0.0, var = 0.0;
  for (std::size_t p = 0; p < model.orders.size() && p < c.size(); ++p) {
    mean += c[p] * displacement_mean(model.orders[p], tk);
    var += c[p] * c[p] * displacement_variance(model.orders[p], tk);
  }
  return {mean, std::sqrt(var)};
}

double injected_shift(const std::vector<double>& poly, int site) {
  double shift = 0.0, power = 1.0;
  for (double c : poly) {
    shift += c * power;
    power *= site;
  }
  return shift;
}

struct Tracked {
  std::string name;
  const Histogram* histogram;
  WeightedSumDensity analytic;
  double wavenumber;  // noiseless fringe wavenumber
};

json report(Writer& w, const Tracked& t) {
  const auto centers = t.histogram->centers();
  std::vector<double> analytic(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) analytic[i] = t.analytic(centers[i]);
  w.density(t.name, centers, t.histogram->density());
  w.density(t.name + "_analytic", centers, analytic);

  const auto agree = compare_histogram(*t.histogram, [&](double x) { return t.analytic(x); });
  // Smearing by an independent Gaussian rescales the wavenumber by V / (V + s^2).
  const double base_width = t.analytic.envelope_width();
  json j{{"shots_in_range", t.histogram->total},
         {"outside_range", t.histogram->outside},
         {"bins", t.histogram->bins()},
         {"range", {t.histogram->lo, t.histogram->hi}},
         {"analytic_envelope_width", base_width},
         {"agreement", {{"chi2_per_bin", agree.chi2_per_bin}, {"bins_used", agree.bins_used}, {"ks", agree.ks}}},
         {"fit", fit_to_json(*t.histogram, t.wavenumber)}};
  return j;
}

double analytic_visibility(const WeightedSumDensity& noiseless, const WeightedSumDensity& smeared, double k) {
  const double v = noiseless.envelope_width() * noiseless.envelope_width();
  const double s = smeared.envelope_width() * smeared.envelope_width();
  return smeared.visibility_at(k * v / s);
}

json run_experiment_mode(const RunConfig& c, Writer& w, std::ostream& log) {
  ArraySpec spec{c.devices, c.spacing};
  const int q = c.order;
  const double tk = overlap_time(c.devices[0]);
  json summary;

  // Truncation checks come before any sampling.
  if (c.mode == Mode::pair) {
    const auto p1 = pattern_at_overlap(c.devices[0]);
    const auto p2 = pattern_at_overlap(c.devices[1]);
    const auto pair = convolve_patterns(p1, p2);
    const auto step = reduce_order(p1, p2, c.tolerance_eta);
    summary["pair"] = {{"eta", pair.eta()},
                       {"sigma_plus", pair.sigma_plus()},
                       {"leading", {{"offset", step.pattern.offset},
                                    {"width", step.pattern.width},
                                    {"wavenumber", step.pattern.wavenumber},
                                    {"visibility", step.pattern.visibility()}}}};
  }
  if (c.mode == Mode::array && c.construction == Construction::independent_tree) {
    json ladder = json::array();
    auto state = initial_recursion_state(spec);
    auto entry = [&](const PatternRecursionState& s) {
      json e{{"order", s.order},
             {"offset", s.patterns[0].offset},
             {"visibility", s.patterns[0].visibility()},
             {"width", s.patterns[0].width},
             {"wavenumber", s.patterns[0].wavenumber}};
      if (s.order > 0) e["eta"] = s.etas[static_cast<std::size_t>(s.order - 1)];
      return e;
    };
    ladder.push_back(entry(state));
    for (int r = 1; r <= q; ++r) {
      state = advance(state, c.tolerance_eta);
      ladder.push_back(entry(state));
    }
    summary["recursion"] = ladder;
  }

  ExperimentOptions options;
  options.order = q;
  options.shots = c.shots;
  options.seed = c.seed;
  options.construction = c.construction;
  options.threads = c.threads;
  options.path_step = c.path_step;
  options.injected_polynomial = c.injected_polynomial;
  options.half_width_sigmas = c.half_width_sigmas;
  options.bins_per_period = c.bins_per_period;
  log << to_string(c.mode) << ": " << c.shots << " shots, order " << q << '\n';
  const auto result = run_experiment(spec, c.noise, options);

  const std::size_t orders = c.noise.orders.size();
  std::vector<Tracked> tracked;
  json variables;
  const auto site_analytic = [&](int n) {
    const std::vector<FringePattern> one{result.site_patterns[static_cast<std::size_t>(n)]};
    const std::vector<double> unit{1.0};
    std::vector<double> coeff(orders);
    for (std::size_t p = 0; p < orders; ++p) coeff[p] = std::pow(n * c.spacing, static_cast<double>(p));
    const auto [mean, std] = displacement_moments(c.noise, coeff, tk);
    const WeightedSumDensity base(one, unit);
    return std::pair{base, base.smeared(std, mean + injected_shift(c.injected_polynomial, n))};
  };

  const auto difference_noiseless = difference_density(spec, q, c.construction);
  std::vector<double> coeff(orders, 0.0);
  double injected = 0.0;
  for (const auto& leaf : result.leaves) {
    for (std::size_t p = 0; p < orders; ++p) coeff[p] += leaf.weight * std::pow(leaf.site * c.spacing, static_cast<double>(p));
    injected += leaf.weight * injected_shift(c.injected_polynomial, leaf.site);
  }
  const auto [diff_mean, diff_std] = displacement_moments(c.noise, coeff, tk);
  const auto difference_smeared = difference_noiseless.smeared(diff_std, diff_mean + injected);

  const auto add_site = [&](const std::string& name, int n) {
    const auto [base, smeared] = site_analytic(n);
    const double k = result.site_patterns[static_cast<std::size_t>(n)].wavenumber;
    tracked.push_back({name, &result.sites[static_cast<std::size_t>(n)], smeared, k});
    auto j = report(w, tracked.back());
    j["analytic_visibility"] = analytic_visibility(base, smeared, k);
    j["noiseless_visibility"] = base.visibility_at(k);
    variables[name] = j;
  };
  const auto add_difference = [&](const std::string& name) {
    tracked.push_back({name, &result.difference, difference_smeared, result.difference_wavenumber});
    auto j = report(w, tracked.back());
    j["analytic_visibility"] = analytic_visibility(difference_noiseless, difference_smeared, result.difference_wavenumber);
    j["noiseless_visibility"] = difference_noiseless.visibility_at(result.difference_wavenumber);
    j["residual_displacement_std"] = diff_std;
    variables[name] = j;
  };

  if (c.mode == Mode::single) {
    add_site("x", 0);
  } else if (c.mode == Mode::pair) {
    add_site("x_1", 0);
    add_site("x_2", 1);
    add_difference("x_minus");
  } else {
    for (int n = 0; n <= q; ++n) add_site("site_" + std::to_string(n), n);
    add_difference("x_difference");
  }

  summary["variables"] = variables;
  summary["overlap_time"] = tk;
  summary["wavenumber"] = result.site_patterns[0].wavenumber;
  summary["difference_wavenumber"] = result.difference_wavenumber;
  summary["leaves"] = result.leaves.size();
  return summary;
}

json run_entangle(const RunConfig& c, Writer& w, std::ostream& log) {
  json summary;
  summary["bell"] = log_negativity(device_state(1, 0.0, 0.0));
  json per_copy = json::array();
  std::vector<std::vector<double>> rows;
  for (int copies : c.copies) {
    const double recovered = recovered_entanglement(copies, c.phi, c.dphi);
    json e{{"copies", copies}, {"log_negativity", recovered}};
    double measured = std::nan("");
    if (copies == 1 || copies == 2 || copies == 4) {
      measured = measured_entanglement(copies, c.phi, c.dphi);
      e["measured_log_negativity"] = measured;
    }
    if (copies == 2) {
      const PhaseDistribution d[] = {c.phi, c.dphi};
      const auto outcomes = local_measurement(average_over_phases(gradient_family(2), d));
      // Outcome 2 leaves (|LL>|RR> + e^{-i dphi}|RR>|LL>)/sqrt 2 over devices 0 and 1.
      Eigen::VectorXcd target = Eigen::VectorXcd::Zero(16);
      target(0b0011) = std::sqrt(0.5);
      target(0b1100) = std::polar(std::sqrt(0.5), c.dphi.kind == PhaseDistribution::Kind::uniform ? 0.0 : -c.dphi.value);
      const auto reference = ArmState::pure(2, target);
      json table = json::array();
      for (const auto& o : outcomes) {
        table.push_back({{"outcome", o.outcome},
                         {"probability", o.probability},
                         {"log_negativity", log_negativity(o.post_state)},
                         {"fidelity_with_exchange_state", fidelity(o.post_state, reference)}});
      }
      e["measurement"] = table;
    }
    log << "entangle: " << copies << " copies, E_N = " << format_number(recovered) << '\n';
    per_copy.push_back(e);
    rows.push_back({static_cast<double>(copies), recovered, measured});
  }
  summary["copies"] = per_copy;
  w.table("entanglement", "copies,log_negativity,measured_log_negativity", rows);
  return summary;
}

json run_oracle(const RunConfig& c, Writer& w, std::ostream& log) {
  const auto& spec = c.devices[0];
  const double tk = overlap_time(spec);
  const auto initial = prepare_cat(spec, c.grid);
  const auto times = time_grid(tk, tk / c.steps);

  struct PathResult {
    double l1 = 0, linf = 0, ks = 0, centroid = 0, x_gamma = 0, phase = 0;
    std::complex<double> gamma;
    GridDensity grid, analytic;
  };
  std::vector<PathResult> results(static_cast<std::size_t>(c.paths));
  std::vector<std::exception_ptr> failures(results.size());
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < c.paths; i = next++) {
      try {
        CounterStream stream(c.seed, static_cast<std::uint64_t>(i));
        const auto path = sample_path(c.noise.orders.empty() ? NoiseModel{{ZeroProcess{}}} : c.noise, times, stream);
        const auto evolved = evolve_split_step(initial, path, tk, c.steps);
        auto& r = results[static_cast<std::size_t>(i)];
        r.x_gamma = displacement_coefficients(path, tk).values[0];
        r.grid = evolved.probability();
        const auto pdf = position_pdf(spec, tk, r.x_gamma);
        r.analytic = r.grid;
        for (std::size_t j = 0; j < r.analytic.size(); ++j) r.analytic.values[j] = pdf(r.analytic.x(j));
        const auto d = compare_distributions(r.grid, r.analytic);
        r.l1 = d.l1;
        r.linf = d.linf;
        r.ks = d.ks;
        r.centroid = evolved.centroid();
        const auto m = magnus_quantities(path, spec, tk);
        r.gamma = m.gamma;
        r.phase = m.phase;
        if (i > 0) r.grid = r.analytic = {};
      } catch (...) {
        failures[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(c.threads, static_cast<unsigned>(c.paths)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  json paths = json::array();
  double worst_l1 = 0.0, worst_centroid = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const double rel = std::abs(r.centroid - r.x_gamma) / std::max(std::abs(r.x_gamma), 1e-300);
    worst_l1 = std::max(worst_l1, r.l1);
    worst_centroid = std::max(worst_centroid, rel);
    paths.push_back({{"path", i},
                     {"l1", r.l1},
                     {"linf", r.linf},
                     {"ks", r.ks},
                     {"x_gamma", r.x_gamma},
                     {"centroid", r.centroid},
                     {"centroid_relative_error", rel},
                     {"gamma", {r.gamma.real(), r.gamma.imag()}},
                     {"phase", r.phase}});
  }
  log << "oracle: " << c.paths << " paths, worst L1 " << format_number(worst_l1) << '\n';
  std::vector<double> xs(results[0].grid.size());
  for (std::size_t j = 0; j < xs.size(); ++j) xs[j] = results[0].grid.x(j);
  w.density("oracle_density", xs, results[0].grid.values);
  w.density("oracle_density_analytic", xs, results[0].analytic.values);
  return {{"overlap_time", tk},
          {"steps", c.steps},
          {"paths", paths},
          {"worst_l1", worst_l1},
          {"worst_centroid_relative_error", worst_centroid}};
}

json run_scenario(const RunConfig& c, Writer& w, std::ostream& log) {
  json standoff = json::array();
  std::vector<std::vector<double>> rows;
  for (int q : c.orders) {
    const double r = solve_standoff_distance(c.source_mass, c.site_spacing, q, c.delta_a);
    char line[96];
    std::snprintf(line, sizeof line, "order %d: R = %.4f m\n", q, r);
    log << line;
    standoff.push_back({{"order", q}, {"distance_m", r}});
    rows.push_back({static_cast<double>(q), r});
  }
  w.table("standoff", "order,distance_m", rows);
  return {{"acceleration_at_reference", newtonian_acceleration({c.source_mass, c.reference_distance})},
          {"standoff", standoff}};
}

}  // namespace

RunResult run(const RunConfig& config, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) config_error("cannot create output directory " + config.out_dir.string() + ": " + ec.message());
  Writer w{config.out_dir, {}};

  json body;
  switch (config.mode) {
    case Mode::single:
    case Mode::pair:
    case Mode::array: body = run_experiment_mode(config, w, log); break;
    case Mode::entangle: body = run_entangle(config, w, log); break;
    case Mode::oracle: body = run_oracle(config, w, log); break;
    case Mode::scenario: body = run_scenario(config, w, log); break;
  }

  RunResult result;
  result.summary = {{"mode", to_string(config.mode)}, {"seed", config.seed}, {"config", to_json(config)},
                    {"results", body}};
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.timing = {{"mode", to_string(config.mode)}, {"threads", config.threads}, {"seconds", seconds}};
  w.document("summary.json", result.summary);
  w.document("timing.json", result.timing);
  result.files = w.files;
  return result;
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Matter-wave interferometer array simulations"};
  std::string mode_name, config_path, out_dir;
  std::uint64_t seed = 0, shots = 0;
  int order = 0;
  double tolerance = 0.0;
  unsigned threads = 1;
  app.add_option("mode", mode_name, "single | pair | array | entangle | oracle | scenario");
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  auto* shots_opt = app.add_option("--shots", shots, "Monte Carlo shots")->check(CLI::PositiveNumber);
  auto* order_opt = app.add_option("--order", order, "Cancellation order q")->check(CLI::NonNegativeNumber);
  auto* out_opt = app.add_option("--out", out_dir, std::string("Output directory (default $") + kOutDirVariable + ")");
  auto* tol_opt = app.add_option("--tolerance-eta", tolerance, "Largest discarded overlap factor")
                      ->check(CLI::NonNegativeNumber);
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    json user = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      try {
        user = json::parse(in);
      } catch (const json::exception& e) {
        config_error("cannot parse " + config_path + ": " + e.what());
      }
      if (!user.is_object()) config_error("config must be a JSON object");
    }
    if (mode_name.empty()) {
      if (!user.contains("mode") || !user.at("mode").is_string()) config_error("no mode given");
      mode_name = user.at("mode").get<std::string>();
    }
    const Mode mode = parse_mode(mode_name);
    json merged = default_config(mode);
    user["mode"] = mode_name;
    merged.merge_patch(user);

    const auto& keys = allowed_keys().at(mode);
    auto apply = [&](CLI::Option* opt, const char* flag, const char* key, json value) {
      if (opt->count() == 0) return;
      if (!keys.count(key)) config_error(std::string(flag) + " does not apply to " + to_string(mode) + " mode");
      merged[key] = std::move(value);
    };
    apply(seed_opt, "--seed", "seed", seed);
    apply(shots_opt, "--shots", "shots", shots);
    apply(order_opt, "--order", "order", order);
    apply(tol_opt, "--tolerance-eta", "tolerance_eta", tolerance);
    apply(threads_opt, "--threads", "threads", threads);

    RunConfig config = parse_config(merged);
    if (out_opt->count()) {
      config.out_dir = out_dir;
    } else if (config.out_dir.empty()) {
      const char* env = std::getenv(kOutDirVariable);
      config.out_dir = env && *env ? env : "mwi_out";
    }
    const auto result = run(config, out);
    out << "wrote " << result.files.size() << " files to " << config.out_dir.string() << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << (is_numerical(e.kind()) ? "numerical error: " : "config error: ") << e.what() << '\n';
    return is_numerical(e.kind()) ? kExitNumerical : kExitConfig;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace mwi::cli
