#pragma once

// Synthetic Raman-like benchmarks with full ground truth. Sources are sums of
// Lorentzian lines; every source placed in a mixture owns a stand-alone peak
// (a wavenumber where all other sources are exactly zero), so the cone
// method's working assumption holds by construction and can be checked.

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semiblind/spectra.hpp"

namespace semiblind {

struct PeakSpec {
  double center = 0;     ///< cm^-1
  double width = 1;      ///< half-width at half maximum, cm^-1
  double amplitude = 1;
};

/// Sum of amplitude * w^2 / ((x - center)^2 + w^2). With a finite
/// `cutoff_widths`, each line is zero farther than cutoff_widths * width from its center.
Spectrum gen_source_spectrum(std::span<const PeakSpec> peaks, const SpectralGrid& grid, std::string label = {},
                             double cutoff_widths = std::numeric_limits<double>::infinity());

struct StandaloneVerdict {
  bool passes = false;
  std::optional<std::size_t> witness;  ///< grid index where only this column is present
};

/// Column j passes when some row has W(i,j) > threshold while every other
/// column is <= threshold * 1e-3 there. The witness is the qualifying row
/// with the largest W(i,j).
std::vector<StandaloneVerdict> verify_standalone_peaks(const Eigen::MatrixXd& w, double threshold);

struct KnownSpec {
  std::string name;
  double bound = 1;
  double fill = 1;  ///< true concentration as a fraction of `bound` (ignored under a total bound)
};

struct BenchmarkConfig {
  std::size_t p = 1024;
  double wavenumber_lo = 300;
  double wavenumber_hi = 3100;
  std::size_t m = 5;
  double laser_start_nm = 248;
  double laser_step_nm = 2;

  std::vector<KnownSpec> knowns;
  std::optional<double> total_bound;
  std::vector<double> total_shares;  ///< share of the total held by each known; sums to 1

  std::vector<std::string> unknowns;
  std::vector<double> unknown_weights;  ///< mixing scale per unknown; empty means all 1

  std::size_t distractors = 4;     ///< extra library entries absent from the mixtures
  double noise_sigma = 0;          ///< Gaussian noise std, as a fraction of the noiseless maximum
  bool nonnegative_noise = true;   ///< truncate noisy intensities at zero
  double peak_cutoff = 8;          ///< line support, in half-widths
  std::uint64_t seed = 7;

  void validate() const;
};

/// Preset 1: one known (bound 1/3), two unknowns of similar weight, five mixtures.
/// Preset 2: two knowns under a total bound of 1/2, two unknowns, the second
/// with mixing weights a twentieth of the first's.
BenchmarkConfig benchmark_preset(int id);

struct GroundTruth {
  std::vector<std::string> source_names;  ///< unknowns, in config order
  Eigen::MatrixXd sources;                ///< p x n, unit-maximum spectra
  Eigen::MatrixXd mixing;                 ///< n x m
  std::vector<std::string> known_names;
  Eigen::MatrixXd known_concentrations;   ///< n_known x m
  std::vector<std::size_t> witnesses;     ///< stand-alone peak row of each source
  double noise_sigma = 0;
  std::uint64_t seed = 0;
};

struct Benchmark {
  MixtureMatrix x;
  ReferenceLibrary library;
  ConcentrationBounds bounds;
  GroundTruth truth;
};

/// Cosine of each truth column with its estimate column under the assignment
/// (one estimate per truth column, each used once) maximising the total.
/// Truth columns left without an estimate get 0.
std::vector<double> matched_cosines(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate);

/// X = A*S0 + W0*M0 (+ noise). Throws std::runtime_error when the stand-alone
/// peaks cannot be placed on the grid.
Benchmark gen_benchmark(const BenchmarkConfig& config);

}  // namespace semiblind
