#include "semiblind/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace semiblind {

namespace {

const std::vector<std::string>& catalog() {
  static const std::vector<std::string> names = {
      "methanol", "ethanol",      "acetonitrile", "ethylene-glycol", "acetone",     "isopropanol",
      "toluene",  "cyclohexane",  "benzene",      "hexane",          "nitromethane", "dimethyl-sulfoxide"};
  return names;
}

// Portable draws: the standard distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 gen_;
};

struct SourcePeaks {
  std::string name;
  PeakSpec main;
  std::vector<PeakSpec> peaks;  // main first
};

std::vector<double> normalized(const Spectrum& s) {
  std::vector<double> v(s.intensities().begin(), s.intensities().end());
  const double mx = *std::max_element(v.begin(), v.end());
  if (mx > 0.0)
    for (double& x : v) x /= mx;
  return v;
}

}  // namespace

Spectrum gen_source_spectrum(std::span<const PeakSpec> peaks, const SpectralGrid& grid, std::string label,
                             double cutoff_widths) {
  if (peaks.empty()) throw std::invalid_argument("gen_source_spectrum: need at least one peak");
  for (const auto& pk : peaks) {
    if (!(pk.width > 0.0) || !(pk.amplitude > 0.0)) throw std::invalid_argument("peak width and amplitude must be > 0");
    if (pk.center < grid.front() || pk.center > grid.back())
      throw std::invalid_argument("peak center " + format_double(pk.center) + " lies outside the grid");
  }
  std::vector<double> v(grid.size(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double x = grid[i];
    for (const auto& pk : peaks) {
      const double d = x - pk.center;
      if (std::abs(d) > cutoff_widths * pk.width) continue;
      v[i] += pk.amplitude * pk.width * pk.width / (d * d + pk.width * pk.width);
    }
  }
  return Spectrum(grid, std::move(v), std::move(label));
}

std::vector<StandaloneVerdict> verify_standalone_peaks(const Eigen::MatrixXd& w, double threshold) {
  std::vector<StandaloneVerdict> out(static_cast<std::size_t>(w.cols()));
  const double others_limit = threshold * 1e-3;
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    double best = -1.0;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      if (!(w(i, j) > threshold)) continue;
      bool exclusive = true;
      for (Eigen::Index k = 0; k < w.cols() && exclusive; ++k)
        if (k != j && w(i, k) > others_limit) exclusive = false;
      if (exclusive && w(i, j) > best) {
        best = w(i, j);
        out[static_cast<std::size_t>(j)] = {true, static_cast<std::size_t>(i)};
      }
    }
  }
  return out;
}

void BenchmarkConfig::validate() const {
  if (p < 16) throw std::invalid_argument("benchmark: p must be at least 16");
  if (!(wavenumber_hi > wavenumber_lo)) throw std::invalid_argument("benchmark: empty wavenumber range");
  if (m < 1) throw std::invalid_argument("benchmark: need at least one mixture");
  if (knowns.empty() && unknowns.empty()) throw std::invalid_argument("benchmark: need at least one source");
  if (unknowns.size() > m) throw std::invalid_argument("benchmark: more unknown sources than mixtures");
  if (!unknown_weights.empty() && unknown_weights.size() != unknowns.size())
    throw std::invalid_argument("benchmark: one weight per unknown required");
  for (double wgt : unknown_weights)
    if (!(wgt > 0.0)) throw std::invalid_argument("benchmark: unknown weights must be > 0");
  for (const auto& k : knowns) {
    if (!(k.bound >= 0.0)) throw std::invalid_argument("benchmark: bounds must be >= 0");
    if (!(k.fill >= 0.0 && k.fill <= 1.0)) throw std::invalid_argument("benchmark: fill must lie in [0, 1]");
  }
  if (total_bound) {
    if (!(*total_bound > 0.0)) throw std::invalid_argument("benchmark: total bound must be > 0");
    if (total_shares.size() != knowns.size()) throw std::invalid_argument("benchmark: one total share per known");
    const double sum = std::accumulate(total_shares.begin(), total_shares.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("benchmark: total shares must sum to 1");
    for (std::size_t i = 0; i < knowns.size(); ++i)
      if (total_shares[i] * *total_bound > knowns[i].bound + 1e-12)
        throw std::invalid_argument("benchmark: share of '" + knowns[i].name + "' exceeds its bound");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("benchmark: noise sigma must be >= 0");
  if (!(peak_cutoff > 0.0)) throw std::invalid_argument("benchmark: peak cutoff must be > 0");
  std::vector<std::string> all;
  for (const auto& k : knowns) all.push_back(k.name);
  all.insert(all.end(), unknowns.begin(), unknowns.end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end())
    throw std::invalid_argument("benchmark: substance names must be distinct");
}

BenchmarkConfig benchmark_preset(int id) {
  BenchmarkConfig c;
  switch (id) {
    case 1:
      c.knowns = {{"methanol", 1.0 / 3.0, 1.0}};
      c.unknowns = {"ethanol", "acetonitrile"};
      c.unknown_weights = {1.0, 0.8};
      return c;
    case 2:
      c.knowns = {{"methanol", 0.5, 1.0}, {"ethanol", 0.5, 1.0}};
      c.total_bound = 0.5;
      c.total_shares = {0.6, 0.4};
      c.unknowns = {"acetonitrile", "ethylene-glycol"};
      c.unknown_weights = {1.0, 0.05};
      return c;
    default:
      throw std::invalid_argument("unknown benchmark " + std::to_string(id));
  }
}

Benchmark gen_benchmark(const BenchmarkConfig& config) {
  config.validate();
  const SpectralGrid grid = SpectralGrid::uniform(config.wavenumber_lo, config.wavenumber_hi, config.p);
  const double spacing = (config.wavenumber_hi - config.wavenumber_lo) / static_cast<double>(config.p - 1);
  Rng rng(config.seed);

  std::vector<std::string> mixture_names;
  for (const auto& k : config.knowns) mixture_names.push_back(k.name);
  mixture_names.insert(mixture_names.end(), config.unknowns.begin(), config.unknowns.end());
  std::vector<std::string> distractor_names;
  for (const auto& name : catalog()) {
    if (distractor_names.size() == config.distractors) break;
    if (std::find(mixture_names.begin(), mixture_names.end(), name) == mixture_names.end())
      distractor_names.push_back(name);
  }
  for (std::size_t k = distractor_names.size(); k < config.distractors; ++k)
    distractor_names.push_back("distractor-" + std::to_string(k + 1));

  // Main peaks of mixture sources sit in disjoint slots in shuffled order.
  const double margin = std::min(100.0, 0.05 * (config.wavenumber_hi - config.wavenumber_lo));
  const double lo = config.wavenumber_lo + margin;
  const double hi = config.wavenumber_hi - margin;
  const std::size_t n_mix = mixture_names.size();
  std::vector<std::size_t> slot(n_mix);
  std::iota(slot.begin(), slot.end(), 0);
  for (std::size_t i = n_mix; i > 1; --i) std::swap(slot[i - 1], slot[rng.index(i)]);
  const double slot_width = (hi - lo) / static_cast<double>(std::max<std::size_t>(n_mix, 1));

  std::vector<SourcePeaks> sources;
  for (std::size_t s = 0; s < n_mix; ++s) {
    SourcePeaks sp;
    sp.name = mixture_names[s];
    const double start = lo + slot_width * static_cast<double>(slot[s]);
    sp.main = {start + slot_width * rng.uniform(0.3, 0.7), rng.uniform(6.0, 12.0), 1.0};
    sp.peaks.push_back(sp.main);
    sources.push_back(std::move(sp));
  }
  for (std::size_t a = 0; a < n_mix; ++a)
    for (std::size_t b = 0; b < n_mix; ++b)
      if (a != b && std::abs(sources[a].main.center - sources[b].main.center) <=
                        config.peak_cutoff * sources[b].main.width + 2.0 * spacing)
        throw std::runtime_error("benchmark infeasible: stand-alone peaks cannot be separated on this grid");

  // Secondary lines may go anywhere except over another source's stand-alone peak.
  auto clear_of_others = [&](std::size_t owner, const PeakSpec& pk) {
    for (std::size_t o = 0; o < sources.size(); ++o) {
      if (o == owner) continue;
      if (std::abs(pk.center - sources[o].main.center) <= config.peak_cutoff * pk.width + 2.0 * spacing) return false;
    }
    return true;
  };
  for (std::size_t s = 0; s < n_mix; ++s) {
    const std::size_t count = 2 + rng.index(3);
    for (std::size_t k = 0; k < count; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        PeakSpec pk{rng.uniform(lo, hi), rng.uniform(5.0, 15.0), rng.uniform(0.15, 0.8)};
        if (clear_of_others(s, pk)) {
          sources[s].peaks.push_back(pk);
          placed = true;
        }
      }
      if (!placed) throw std::runtime_error("benchmark infeasible: no room for secondary lines");
    }
  }
  for (const auto& name : distractor_names) {
    SourcePeaks sp;
    sp.name = name;
    const std::size_t count = 3 + rng.index(3);
    for (std::size_t k = 0; k < count; ++k)
      sp.peaks.push_back({rng.uniform(lo, hi), rng.uniform(5.0, 15.0), k == 0 ? 1.0 : rng.uniform(0.15, 0.8)});
    sp.main = sp.peaks.front();
    sources.push_back(std::move(sp));
  }

  ReferenceLibrary library(grid);
  for (const auto& sp : sources)
    library.add(sp.name, normalized(gen_source_spectrum(sp.peaks, grid, sp.name, config.peak_cutoff)));

  const auto m = static_cast<Eigen::Index>(config.m);
  std::vector<double> lasers(config.m);
  for (std::size_t j = 0; j < config.m; ++j)
    lasers[j] = config.laser_start_nm + config.laser_step_nm * static_cast<double>(j);

  // Resonance-style mixing profiles: a Gaussian bump over laser wavelength on a floor.
  GroundTruth truth;
  truth.source_names = config.unknowns;
  truth.noise_sigma = config.noise_sigma;
  truth.seed = config.seed;
  const auto n = static_cast<Eigen::Index>(config.unknowns.size());
  truth.mixing.resize(n, m);
  const double lmin = lasers.front(), lmax = lasers.back();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double weight = config.unknown_weights.empty() ? 1.0 : config.unknown_weights[static_cast<std::size_t>(k)];
    const double centre = rng.uniform(lmin - 6.0, lmax + 6.0);
    const double spread = rng.uniform(3.0, 8.0);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = lasers[static_cast<std::size_t>(j)] - centre;
      truth.mixing(k, j) = weight * (0.25 + 0.75 * std::exp(-d * d / (2.0 * spread * spread)));
    }
  }
  truth.sources = library.matrix(config.unknowns);

  ConcentrationBounds bounds;
  for (const auto& k : config.knowns) {
    truth.known_names.push_back(k.name);
    bounds.per_substance[k.name] = k.bound;
  }
  bounds.total_bound = config.total_bound;
  const auto nk = static_cast<Eigen::Index>(config.knowns.size());
  truth.known_concentrations.resize(nk, m);
  for (Eigen::Index i = 0; i < nk; ++i) {
    const auto& k = config.knowns[static_cast<std::size_t>(i)];
    const double c = config.total_bound ? config.total_shares[static_cast<std::size_t>(i)] * *config.total_bound
                                        : k.fill * k.bound;
    truth.known_concentrations.row(i).setConstant(c);
  }

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(config.p), m);
  if (nk > 0) x += library.matrix(truth.known_names) * truth.known_concentrations;
  if (n > 0) x += truth.sources * truth.mixing;

  // Stand-alone peaks are checked over every source present in the mixtures.
  Eigen::MatrixXd present(x.rows(), nk + n);
  if (nk > 0) present.leftCols(nk) = library.matrix(truth.known_names);
  if (n > 0) present.rightCols(n) = truth.sources;
  for (Eigen::Index c = 0; c < present.cols(); ++c) {
    const double threshold = 1e-6 * present.col(c).maxCoeff();
    auto verdict = verify_standalone_peaks(present, threshold)[static_cast<std::size_t>(c)];
    if (!verdict.passes)
      throw std::runtime_error("benchmark infeasible: source '" + mixture_names[static_cast<std::size_t>(c)] +
                               "' has no stand-alone peak");
    if (c >= nk) truth.witnesses.push_back(*verdict.witness);
  }

  if (config.noise_sigma > 0.0) {
    const double sigma = config.noise_sigma * x.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        x(i, j) += sigma * rng.normal();
        if (config.nonnegative_noise) x(i, j) = std::max(0.0, x(i, j));
      }
  }

  return Benchmark{MixtureMatrix(grid, std::move(x), std::move(lasers)), std::move(library), std::move(bounds),
                   std::move(truth)};
}

std::vector<double> matched_cosines(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate) {
  if (truth.rows() != estimate.rows()) throw std::invalid_argument("matched_cosines: row count mismatch");
  const auto n = truth.cols(), k = estimate.cols();
  Eigen::MatrixXd cos = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      const double d = truth.col(i).norm() * estimate.col(j).norm();
      cos(i, j) = d > 0.0 ? truth.col(i).dot(estimate.col(j)) / d : 0.0;
    }
  if (n > 8 || k > 8) throw std::invalid_argument("matched_cosines: at most 8 columns per side");

  // Exhaustive search over injective assignments; -1 marks an unassigned truth column.
  std::vector<double> best(static_cast<std::size_t>(n), 0.0), cur(static_cast<std::size_t>(n), 0.0);
  double best_total = -std::numeric_limits<double>::infinity();
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  auto search = [&](auto&& self, Eigen::Index i, double total) -> void {
    if (i == n) {
      if (total > best_total) {
        best_total = total;
        best = cur;
      }
      return;
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = true;
      cur[static_cast<std::size_t>(i)] = cos(i, j);
      self(self, i + 1, total + cos(i, j));
      used[static_cast<std::size_t>(j)] = false;
    }
    cur[static_cast<std::size_t>(i)] = 0.0;
    self(self, i + 1, total);
  };
  search(search, 0, 0.0);
  return best;
}

}  // namespace semiblind
