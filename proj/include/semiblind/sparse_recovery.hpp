#pragma once

// Source recovery given the mixing rows: each row of W solves a
// nonnegative l1-regularized fit, computed by linearized Bregman iteration.
// The pseudo-inverse and plain NNLS recoveries are kept as baselines.

#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "semiblind/cls_fit.hpp"
#include "semiblind/cone.hpp"

namespace semiblind {

/// One-sided soft threshold: v - mu when v > mu, otherwise 0.
inline double shrink_plus(double v, double mu) { return v > mu ? v - mu : 0.0; }

struct BregmanConfig {
  double mu = 0.09;              ///< l1 weight
  std::optional<double> delta;   ///< step size; empty: 1 / ||B||_2^2 by power iteration
  int max_iter = 20000;
  double fit_tol = 1e-4;         ///< stop when ||Bu - f|| / ||f|| <= fit_tol
  /// Nesterov momentum on the accumulated residual (with adaptive restart).
  /// Same fixed point; far fewer steps when B is ill-conditioned.
  bool accelerate = false;

  void validate() const;
};

struct BregmanResult {
  Eigen::VectorXd u;
  int iterations = 0;
  double final_fit = 0;  ///< relative fit ||Bu - f|| / ||f||, 0 when f = 0
  bool converged = false;
};

/// Raised when the relative fit blows up, which points at a step size that is too large.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Largest eigenvalue of B'B, from `steps` rounds of power iteration.
double spectral_norm_sq(const Eigen::MatrixXd& b, int steps = 20);

/// v <- v - B'(Bu - f);  u <- delta * shrink_plus(v, mu), from u = v = 0.
BregmanResult linearized_bregman(const Eigen::MatrixXd& b, const Eigen::VectorXd& f, const BregmanConfig& cfg);

enum class RecoveryMethod { bregman, pinv, nnls };
std::string to_string(RecoveryMethod m);
RecoveryMethod recovery_method_from_string(const std::string& s);

struct SourceMatrix {
  SpectralGrid grid;
  Eigen::MatrixXd values;  ///< p x n, column k is the spectrum of source k
  RecoveryMethod method = RecoveryMethod::bregman;
  std::size_t negative_count = 0;
  int max_iterations = 0;        ///< bregman: slowest row
  std::size_t unconverged_rows = 0;  ///< bregman: rows that hit max_iter
};

/// Row i of W solves min_{u>=0} mu*|u|_1 + 0.5*||f - B u||^2 with f = R^i', B = M'.
/// Rows of M are rescaled to unit maximum before the solve; W is scaled back.
SourceMatrix recover_sources(const ResidualMatrix& r, const MixingEstimate& m, const BregmanConfig& cfg = {});

/// W = R * pinv(M). Throws when M is not of full row rank.
SourceMatrix pinv_recover(const ResidualMatrix& r, const MixingEstimate& m);

/// Row-wise nonnegative least squares against the rows of M.
SourceMatrix nnls_recover(const ResidualMatrix& r, const MixingEstimate& m);

}  // namespace semiblind
