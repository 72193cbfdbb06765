#include "mwi/entangle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "mwi/error.hpp"

namespace mwi {

namespace {

using cplx = std::complex<double>;
using Triplet = Eigen::Triplet<cplx>;

constexpr std::size_t kMaxBlock = 4096;

void check_devices(int devices) {
  if (devices < 1 || devices > kMaxDevices) {
    std::ostringstream os;
    os << devices << " devices requested; supported range is 1.." << kMaxDevices;
    throw Error(ErrorKind::capacity, os.str());
  }
}

int qubit_shift(int devices, int qubit) { return 2 * devices - 1 - qubit; }

SparseDensity from_triplets(std::size_t dim, const std::vector<Triplet>& triplets) {
  SparseDensity m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

// Eigenvalues of a Hermitian sparse matrix, one dense solve per connected
// component of its sparsity graph. Indices without entries contribute zeros,
// which are omitted.
std::vector<double> hermitian_eigenvalues(const SparseDensity& m) {
  const auto n = static_cast<std::size_t>(m.rows());
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::vector<char> used(n, 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
    for (SparseDensity::InnerIterator it(m, k); it; ++it) {
      if (it.value() == cplx(0.0)) continue;
      const auto r = static_cast<std::size_t>(it.row());
      const auto c = static_cast<std::size_t>(it.col());
      used[r] = used[c] = 1;
      const std::size_t a = find(r), b = find(c);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::map<std::size_t, std::vector<std::size_t>> blocks;
  for (std::size_t i = 0; i < n; ++i) {
    if (used[i]) blocks[find(i)].push_back(i);
  }

  std::vector<double> eigenvalues;
  std::vector<std::size_t> position(n, 0);
  for (const auto& [root, members] : blocks) {
    if (members.size() > kMaxBlock) {
      std::ostringstream os;
      os << "coupled block of dimension " << members.size() << " exceeds " << kMaxBlock;
      throw Error(ErrorKind::capacity, os.str());
    }
    for (std::size_t i = 0; i < members.size(); ++i) position[members[i]] = i;
    const auto size = static_cast<Eigen::Index>(members.size());
    Eigen::MatrixXcd block = Eigen::MatrixXcd::Zero(size, size);
    for (const std::size_t col : members) {
      for (SparseDensity::InnerIterator it(m, static_cast<Eigen::Index>(col)); it; ++it) {
        block(static_cast<Eigen::Index>(position[static_cast<std::size_t>(it.row())]),
              static_cast<Eigen::Index>(position[col])) = it.value();
      }
    }
    if (size == 1) {
      eigenvalues.push_back(block(0, 0).real());
      continue;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(block, Eigen::EigenvaluesOnly);
    for (Eigen::Index i = 0; i < size; ++i) eigenvalues.push_back(solver.eigenvalues()(i));
  }
  return eigenvalues;
}

SparseDensity partial_transpose_a(const SparseDensity& rho, int devices) {
  const std::uint32_t mask = a_side_mask(devices);
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(rho.nonZeros()));
  for (Eigen::Index k = 0; k < rho.outerSize(); ++k) {
    for (SparseDensity::InnerIterator it(rho, k); it; ++it) {
      const auto r = static_cast<std::uint32_t>(it.row());
      const auto c = static_cast<std::uint32_t>(it.col());
      const std::uint32_t r2 = (r & ~mask) | (c & mask);
      const std::uint32_t c2 = (c & ~mask) | (r & mask);
      triplets.emplace_back(r2, c2, it.value());
    }
  }
  return from_triplets(static_cast<std::size_t>(rho.rows()), triplets);
}

std::uint32_t both_arms_right(int devices, int device) {
  return (1u << qubit_shift(devices, 2 * device)) | (1u << qubit_shift(devices, 2 * device + 1));
}

struct Nodes {
  std::vector<double> points;
  std::vector<double> weights;
};

Nodes quadrature_nodes(const PhaseDistribution& d, const PhaseQuadrature& rule) {
  Nodes nodes;
  if (d.kind == PhaseDistribution::Kind::point ||
      (d.kind == PhaseDistribution::Kind::gaussian && d.sigma == 0.0)) {
    nodes.points = {d.value};
    nodes.weights = {1.0};
    return nodes;
  }
  if (d.kind == PhaseDistribution::Kind::uniform) {
    if (rule.uniform_points < 1) throw Error(ErrorKind::configuration, "uniform quadrature needs at least one point");
    for (int k = 0; k < rule.uniform_points; ++k) {
      nodes.points.push_back(2.0 * std::numbers::pi * k / rule.uniform_points);
      nodes.weights.push_back(1.0 / rule.uniform_points);
    }
    return nodes;
  }
  if (rule.gaussian_points < 3) throw Error(ErrorKind::configuration, "gaussian quadrature needs at least three points");
  const double h = 24.0 * d.sigma / (rule.gaussian_points - 1);
  double total = 0.0;
  for (int k = 0; k < rule.gaussian_points; ++k) {
    const double u = -12.0 * d.sigma + k * h;
    const double w = (k == 0 || k + 1 == rule.gaussian_points ? 0.5 : 1.0) * std::exp(-0.5 * u * u / (d.sigma * d.sigma));
    nodes.points.push_back(d.value + u);
    nodes.weights.push_back(w);
    total += w;
  }
  for (auto& w : nodes.weights) w /= total;
  return nodes;
}

void validate_distribution(const PhaseDistribution& d) {
  if (!(d.sigma >= 0.0) || !std::isfinite(d.sigma) || !std::isfinite(d.value)) {
    throw Error(ErrorKind::invalid_spec, "phase distribution needs finite sigma >= 0");
  }
}

}  // namespace

std::uint32_t a_side_mask(int devices) {
  check_devices(devices);
  std::uint32_t mask = 0;
  for (int j = 0; j < devices; ++j) mask |= 1u << qubit_shift(devices, 2 * j);
  return mask;
}

std::uint32_t a_configuration(std::uint32_t index, int devices) {
  std::uint32_t a = 0;
  for (int j = 0; j < devices; ++j) a = (a << 1) | ((index >> qubit_shift(devices, 2 * j)) & 1u);
  return a;
}

ArmState ArmState::pure(int devices, Eigen::VectorXcd amplitudes) {
  check_devices(devices);
  ArmState s(devices, true);
  if (static_cast<std::size_t>(amplitudes.size()) != s.dimension()) {
    throw Error(ErrorKind::invalid_state, "amplitude vector does not match the device count");
  }
  s.amplitudes_ = std::move(amplitudes);
  return s;
}

ArmState ArmState::mixed(int devices, SparseDensity rho) {
  check_devices(devices);
  ArmState s(devices, false);
  if (static_cast<std::size_t>(rho.rows()) != s.dimension() || rho.rows() != rho.cols()) {
    throw Error(ErrorKind::invalid_state, "density matrix does not match the device count");
  }
  s.rho_ = std::move(rho);
  s.rho_.makeCompressed();
  return s;
}

SparseDensity ArmState::density() const {
  if (!pure_) return rho_;
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < amplitudes_.size(); ++i) {
    if (amplitudes_(i) != cplx(0.0)) support.push_back(i);
  }
  std::vector<Triplet> triplets;
  triplets.reserve(support.size() * support.size());
  for (const auto r : support) {
    for (const auto c : support) triplets.emplace_back(r, c, amplitudes_(r) * std::conj(amplitudes_(c)));
  }
  return from_triplets(dimension(), triplets);
}

ArmState device_state(int j, double phi, double dphi) {
  if (j < 1) throw Error(ErrorKind::invalid_spec, "device index j must be >= 1");
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(4);
  v(0) = std::numbers::sqrt2 / 2.0;
  v(3) = std::polar(std::numbers::sqrt2 / 2.0, phi + (j - 1) * dphi);
  return ArmState::pure(1, std::move(v));
}

ArmState tensor_combine(std::span<const ArmState> states) {
  if (states.empty()) throw Error(ErrorKind::invalid_state, "nothing to combine");
  int devices = 0;
  const bool pure = states.front().is_pure();
  for (const auto& s : states) {
    if (s.is_pure() != pure) throw Error(ErrorKind::invalid_state, "cannot combine pure and mixed states");
    devices += s.devices();
  }
  check_devices(devices);

  if (pure) {
    Eigen::VectorXcd v = states.front().amplitudes();
    for (std::size_t i = 1; i < states.size(); ++i) {
      const auto& w = states[i].amplitudes();
      Eigen::VectorXcd next(v.size() * w.size());
      for (Eigen::Index a = 0; a < v.size(); ++a) next.segment(a * w.size(), w.size()) = v(a) * w;
      v = std::move(next);
    }
    return ArmState::pure(devices, std::move(v));
  }

  SparseDensity rho = states.front().density();
  for (std::size_t i = 1; i < states.size(); ++i) {
    const SparseDensity w = states[i].density();
    std::vector<Triplet> triplets;
    triplets.reserve(static_cast<std::size_t>(rho.nonZeros() * w.nonZeros()));
    for (Eigen::Index k = 0; k < rho.outerSize(); ++k) {
      for (SparseDensity::InnerIterator a(rho, k); a; ++a) {
        for (Eigen::Index l = 0; l < w.outerSize(); ++l) {
          for (SparseDensity::InnerIterator b(w, l); b; ++b) {
            triplets.emplace_back(a.row() * w.rows() + b.row(), a.col() * w.cols() + b.col(), a.value() * b.value());
          }
        }
      }
    }
    rho = from_triplets(static_cast<std::size_t>(rho.rows() * w.rows()), triplets);
  }
  return ArmState::mixed(devices, std::move(rho));
}

void validate_density(const ArmState& state) {
  if (state.is_pure()) {
    const double n = state.amplitudes().squaredNorm();
    if (std::abs(n - 1.0) > 1e-10) {
      std::ostringstream os;
      os << "pure state has norm^2 " << n;
      throw Error(ErrorKind::invalid_state, os.str());
    }
    return;
  }
  const SparseDensity rho = state.density();
  cplx trace = 0.0;
  for (Eigen::Index k = 0; k < rho.outerSize(); ++k) {
    for (SparseDensity::InnerIterator it(rho, k); it; ++it) {
      if (it.row() == it.col()) trace += it.value();
    }
  }
  const SparseDensity skew = rho - SparseDensity(rho.adjoint());
  double asymmetry = 0.0;
  for (Eigen::Index k = 0; k < skew.outerSize(); ++k) {
    for (SparseDensity::InnerIterator it(skew, k); it; ++it) asymmetry = std::max(asymmetry, std::abs(it.value()));
  }
  std::ostringstream os;
  if (std::abs(trace - 1.0) > 1e-10) {
    os << "density matrix has trace " << trace;
    throw Error(ErrorKind::invalid_state, os.str());
  }
  if (asymmetry > 1e-10) {
    os << "density matrix is not Hermitian (max |rho - rho^dagger| = " << asymmetry << ")";
    throw Error(ErrorKind::invalid_state, os.str());
  }
  const auto ev = hermitian_eigenvalues(rho);
  const double lowest = ev.empty() ? 0.0 : *std::min_element(ev.begin(), ev.end());
  if (lowest < -1e-12) {
    os << "density matrix has eigenvalue " << lowest;
    throw Error(ErrorKind::invalid_state, os.str());
  }
}

double fidelity(const ArmState& state, const ArmState& reference) {
  if (!reference.is_pure()) throw Error(ErrorKind::invalid_state, "fidelity reference must be pure");
  if (state.devices() != reference.devices()) throw Error(ErrorKind::invalid_state, "device counts differ");
  const Eigen::VectorXcd& psi = reference.amplitudes();
  if (state.is_pure()) return std::norm(psi.dot(state.amplitudes()));
  const SparseDensity rho = state.density();
  const Eigen::VectorXcd r = rho * psi;
  return psi.dot(r).real();
}

std::complex<double> PhaseDistribution::characteristic(int m) const {
  switch (kind) {
    case Kind::uniform:
      return m == 0 ? 1.0 : 0.0;
    case Kind::gaussian:
      return std::polar(std::exp(-0.5 * m * m * sigma * sigma), m * value);
    case Kind::point:
      return std::polar(1.0, m * value);
  }
  return 0.0;
}

ArmState PhaseFamily::at(std::span<const double> phases) const {
  if (static_cast<int>(phases.size()) != variables) {
    throw Error(ErrorKind::configuration, "phase count does not match the family");
  }
  check_devices(devices);
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(std::size_t{1} << (2 * devices)));
  for (const auto& term : terms) {
    double theta = 0.0;
    for (int k = 0; k < variables; ++k) theta += term.multipliers[static_cast<std::size_t>(k)] * phases[static_cast<std::size_t>(k)];
    v(term.index) += term.coefficient * std::polar(1.0, theta);
  }
  return ArmState::pure(devices, std::move(v));
}

PhaseFamily gradient_family(int copies) {
  check_devices(copies);
  PhaseFamily f;
  f.devices = copies;
  f.variables = 2;
  const double amp = std::pow(std::numbers::sqrt2 / 2.0, copies);
  for (std::uint32_t config = 0; config < (1u << copies); ++config) {
    PhaseFamily::Term t;
    t.coefficient = amp;
    t.multipliers = {0, 0};
    for (int j = 0; j < copies; ++j) {
      if ((config >> (copies - 1 - j)) & 1u) {
        t.index |= both_arms_right(copies, j);
        t.multipliers[0] += 1;
        t.multipliers[1] += j;
      }
    }
    f.terms.push_back(std::move(t));
  }
  return f;
}

PhaseFamily independent_family(int copies) {
  check_devices(copies);
  PhaseFamily f;
  f.devices = copies;
  f.variables = copies;
  const double amp = std::pow(std::numbers::sqrt2 / 2.0, copies);
  for (std::uint32_t config = 0; config < (1u << copies); ++config) {
    PhaseFamily::Term t;
    t.coefficient = amp;
    t.multipliers.assign(static_cast<std::size_t>(copies), 0);
    for (int j = 0; j < copies; ++j) {
      if ((config >> (copies - 1 - j)) & 1u) {
        t.index |= both_arms_right(copies, j);
        t.multipliers[static_cast<std::size_t>(j)] = 1;
      }
    }
    f.terms.push_back(std::move(t));
  }
  return f;
}

ArmState average_over_phases(const PhaseFamily& family, std::span<const PhaseDistribution> distributions) {
  check_devices(family.devices);
  if (static_cast<int>(distributions.size()) != family.variables) {
    throw Error(ErrorKind::configuration, "need one distribution per phase variable");
  }
  for (const auto& d : distributions) validate_distribution(d);
  const std::size_t dim = std::size_t{1} << (2 * family.devices);
  std::vector<Triplet> triplets;
  for (const auto& s : family.terms) {
    for (const auto& t : family.terms) {
      cplx w = s.coefficient * std::conj(t.coefficient);
      for (int k = 0; k < family.variables && w != cplx(0.0); ++k) {
        const auto kk = static_cast<std::size_t>(k);
        w *= distributions[kk].characteristic(s.multipliers[kk] - t.multipliers[kk]);
      }
      if (w != cplx(0.0)) triplets.emplace_back(s.index, t.index, w);
    }
  }
  return ArmState::mixed(family.devices, from_triplets(dim, triplets));
}

ArmState average_over_phases(const std::function<ArmState(std::span<const double>)>& family, int devices,
                             std::span<const PhaseDistribution> distributions, const PhaseQuadrature& rule) {
  check_devices(devices);
  if (distributions.empty()) throw Error(ErrorKind::configuration, "no phase distributions given");
  std::vector<Nodes> nodes;
  for (const auto& d : distributions) {
    validate_distribution(d);
    nodes.push_back(quadrature_nodes(d, rule));
  }
  const std::size_t dim = std::size_t{1} << (2 * devices);
  std::unordered_map<std::uint64_t, cplx> sum;
  std::vector<std::size_t> counter(nodes.size(), 0);
  std::vector<double> phases(nodes.size());
  for (;;) {
    double weight = 1.0;
    for (std::size_t v = 0; v < nodes.size(); ++v) {
      phases[v] = nodes[v].points[counter[v]];
      weight *= nodes[v].weights[counter[v]];
    }
    const ArmState s = family(phases);
    if (s.devices() != devices) throw Error(ErrorKind::invalid_state, "family returned the wrong device count");
    const SparseDensity rho = s.density();
    for (Eigen::Index k = 0; k < rho.outerSize(); ++k) {
      for (SparseDensity::InnerIterator it(rho, k); it; ++it) {
        sum[static_cast<std::uint64_t>(it.row()) * dim + static_cast<std::uint64_t>(it.col())] += weight * it.value();
      }
    }
    std::size_t v = 0;
    while (v < nodes.size() && ++counter[v] == nodes[v].points.size()) counter[v++] = 0;
    if (v == nodes.size()) break;
  }
  std::vector<Triplet> triplets;
  triplets.reserve(sum.size());
  for (const auto& [key, value] : sum) {
    // cancellations that leave pure rounding are dropped so the block structure stays exact
    if (std::abs(value) > 1e-14) {
      triplets.emplace_back(static_cast<Eigen::Index>(key / dim), static_cast<Eigen::Index>(key % dim), value);
    }
  }
  return ArmState::mixed(devices, from_triplets(dim, triplets));
}

double log_negativity(const ArmState& state) {
  validate_density(state);
  const SparseDensity pt = partial_transpose_a(state.density(), state.devices());
  double trace_norm = 0.0;
  for (const double e : hermitian_eigenvalues(pt)) trace_norm += std::abs(e);
  return std::max(0.0, std::log2(trace_norm));
}

std::vector<MeasurementOutcome> measure_a_side(const ArmState& state,
                                               const std::function<int(std::uint32_t)>& classifier) {
  const int d = state.devices();
  const SparseDensity rho = state.density();
  std::map<int, std::vector<Triplet>> parts;
  std::map<int, double> probability;
  for (Eigen::Index k = 0; k < rho.outerSize(); ++k) {
    for (SparseDensity::InnerIterator it(rho, k); it; ++it) {
      const int r = classifier(a_configuration(static_cast<std::uint32_t>(it.row()), d));
      const int c = classifier(a_configuration(static_cast<std::uint32_t>(it.col()), d));
      if (r != c) continue;
      parts[r].emplace_back(it.row(), it.col(), it.value());
      if (it.row() == it.col()) probability[r] += it.value().real();
    }
  }
  std::vector<MeasurementOutcome> outcomes;
  for (auto& [outcome, triplets] : parts) {
    const double p = probability[outcome];
    if (!(p > 1e-15)) continue;
    for (auto& t : triplets) t = Triplet(t.row(), t.col(), t.value() / p);
    MeasurementOutcome m;
    m.outcome = outcome;
    m.probability = p;
    m.post_state = ArmState::mixed(d, from_triplets(state.dimension(), triplets));
    outcomes.push_back(std::move(m));
  }
  return outcomes;
}

std::vector<MeasurementOutcome> local_measurement(const ArmState& state) {
  if (state.devices() != 2) throw Error(ErrorKind::configuration, "O_A acts on two devices");
  return measure_a_side(state, [](std::uint32_t a) { return 1 + std::popcount(a); });
}

double average_post_measurement_entanglement(const std::vector<MeasurementOutcome>& outcomes) {
  double sum = 0.0;
  for (const auto& o : outcomes) sum += o.probability * log_negativity(o.post_state);
  return sum;
}

double recovered_entanglement(int copies, const PhaseDistribution& phi, const PhaseDistribution& dphi) {
  const PhaseDistribution d[] = {phi, dphi};
  return log_negativity(average_over_phases(gradient_family(copies), d));
}

double measured_entanglement(int copies, const PhaseDistribution& phi, const PhaseDistribution& dphi) {
  if (copies != 1 && copies != 2 && copies != 4) {
    throw Error(ErrorKind::configuration, "measurement recovery is defined for 1, 2 or 4 copies");
  }
  const PhaseDistribution d[] = {phi, dphi};
  const ArmState rho = average_over_phases(gradient_family(copies), d);
  if (copies == 1) return log_negativity(rho);
  if (copies == 2) return average_post_measurement_entanglement(local_measurement(rho));
  // Pair-level outcome 2 leaves |RL> or |LR>; the second bit of the pair names which.
  auto nested = [](std::uint32_t a) {
    const int first = 1 + std::popcount(a >> 2);
    const int second = 1 + std::popcount(a & 3u);
    int logical = 0;
    if (first == 2 && second == 2) logical = 1 + static_cast<int>((a >> 2) & 1u) + static_cast<int>(a & 1u);
    return 100 * first + 10 * second + logical;
  };
  return average_post_measurement_entanglement(measure_a_side(rho, nested));
}

}  // namespace mwi
