#include "semiblind/sparse_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semiblind {

void BregmanConfig::validate() const {
  if (!(mu > 0.0) || !std::isfinite(mu)) throw std::invalid_argument("bregman: mu must be > 0");
  if (delta && (!(*delta > 0.0) || !std::isfinite(*delta))) throw std::invalid_argument("bregman: delta must be > 0");
  if (max_iter < 1) throw std::invalid_argument("bregman: max_iter must be >= 1");
  if (!(fit_tol >= 0.0)) throw std::invalid_argument("bregman: fit_tol must be >= 0");
}

double spectral_norm_sq(const Eigen::MatrixXd& b, int steps) {
  if (b.size() == 0) return 0.0;
  Eigen::VectorXd x = Eigen::VectorXd::Ones(b.cols()) / std::sqrt(static_cast<double>(b.cols()));
  double lambda = 0.0;
  for (int k = 0; k < steps; ++k) {
    Eigen::VectorXd y = b.transpose() * (b * x);
    lambda = y.norm();
    if (lambda == 0.0) return 0.0;
    x = y / lambda;
  }
  return x.dot(b.transpose() * (b * x));
}

BregmanResult linearized_bregman(const Eigen::MatrixXd& b, const Eigen::VectorXd& f, const BregmanConfig& cfg) {
  cfg.validate();
  if (b.rows() != f.size()) throw std::invalid_argument("bregman: dimension mismatch between B and f");
  double delta = 0.0;
  if (cfg.delta) {
    delta = *cfg.delta;
  } else {
    const double l = spectral_norm_sq(b);
    if (!(l > 0.0)) throw std::invalid_argument("bregman: B is zero, step size undefined");
    delta = 1.0 / l;
  }

  BregmanResult out;
  const Eigen::Index n = b.cols();
  out.u = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  const double fnorm = f.norm();
  Eigen::VectorXd resid = b * out.u - f;
  double best_fit = fnorm > 0.0 ? 1.0 : 0.0;

  // v = B'y with y the accumulated residual; momentum acts on y and the
  // step is taken from the look-ahead point y_look with residual look_resid.
  Eigen::VectorXd y = Eigen::VectorXd::Zero(f.size()), y_prev = y, y_look = y, look_resid = resid;
  Eigen::VectorXd u_look(n);
  double theta = 1.0;
  for (int j = 1; j <= cfg.max_iter; ++j) {
    if (cfg.accelerate) {
      y_prev = y;
      y = y_look - look_resid;
      v.noalias() = b.transpose() * y;
    } else {
      v.noalias() -= b.transpose() * resid;
    }
    for (Eigen::Index k = 0; k < n; ++k) out.u[k] = delta * shrink_plus(v[k], cfg.mu);
    resid.noalias() = b * out.u - f;
    const double fit = fnorm > 0.0 ? resid.norm() / fnorm : 0.0;
    out.iterations = j;
    out.final_fit = fit;
    if (!std::isfinite(fit) || (fit > 10.0 * best_fit && fit > 1.0)) {
      throw DivergenceError("linearized Bregman diverged at iteration " + std::to_string(j) + " (relative fit " +
                            std::to_string(fit) + ", best " + std::to_string(best_fit) +
                            "); the step size delta is probably too large");
    }
    best_fit = std::min(best_fit, fit);
    if (fit <= cfg.fit_tol) {
      out.converged = true;
      return out;
    }
    if (cfg.accelerate) {
      // Restart when the step stops pointing uphill on the dual.
      if (look_resid.dot(y - y_prev) > 0.0) theta = 1.0;
      const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
      y_look = y + ((theta - 1.0) / next) * (y - y_prev);
      theta = next;
      const Eigen::VectorXd v_look = b.transpose() * y_look;
      for (Eigen::Index k = 0; k < n; ++k) u_look[k] = delta * shrink_plus(v_look[k], cfg.mu);
      look_resid.noalias() = b * u_look - f;
    }
  }
  return out;
}

std::string to_string(RecoveryMethod m) {
  switch (m) {
    case RecoveryMethod::bregman: return "bregman";
    case RecoveryMethod::pinv: return "pinv";
    case RecoveryMethod::nnls: return "nnls";
  }
  return "unknown";
}

RecoveryMethod recovery_method_from_string(const std::string& s) {
  if (s == "bregman") return RecoveryMethod::bregman;
  if (s == "pinv") return RecoveryMethod::pinv;
  if (s == "nnls") return RecoveryMethod::nnls;
  throw std::invalid_argument("unknown recovery method '" + s + "'");
}

namespace {

void check_shapes(const ResidualMatrix& r, const MixingEstimate& m) {
  if (m.rows.rows() < 1) throw std::invalid_argument("recovery: mixing estimate has no rows");
  if (m.rows.cols() != r.values.cols()) throw std::invalid_argument("recovery: mixing rows and residual differ in width");
}

std::size_t count_negative(const Eigen::MatrixXd& w) { return static_cast<std::size_t>((w.array() < 0.0).count()); }

}  // namespace

SourceMatrix recover_sources(const ResidualMatrix& r, const MixingEstimate& m, const BregmanConfig& cfg) {
  cfg.validate();
  check_shapes(r, m);
  const Eigen::Index n = m.rows.rows();
  Eigen::VectorXd scale(n);
  Eigen::MatrixXd scaled = m.rows;
  for (Eigen::Index k = 0; k < n; ++k) {
    scale[k] = m.rows.row(k).cwiseAbs().maxCoeff();
    if (!(scale[k] > 0.0)) throw std::invalid_argument("recovery: mixing row " + std::to_string(k) + " is zero");
    scaled.row(k) /= scale[k];
  }
  const Eigen::MatrixXd b = scaled.transpose();
  BregmanConfig row_cfg = cfg;
  if (!row_cfg.delta) row_cfg.delta = 1.0 / spectral_norm_sq(b);

  SourceMatrix out{r.grid, Eigen::MatrixXd::Zero(r.values.rows(), n), RecoveryMethod::bregman};
  for (Eigen::Index i = 0; i < r.values.rows(); ++i) {
    BregmanResult res;
    try {
      res = linearized_bregman(b, r.values.row(i).transpose(), row_cfg);
    } catch (const DivergenceError& e) {
      throw DivergenceError("row " + std::to_string(i) + ": " + e.what());
    }
    out.values.row(i) = res.u.transpose().cwiseQuotient(scale.transpose());
    out.max_iterations = std::max(out.max_iterations, res.iterations);
    if (!res.converged) ++out.unconverged_rows;
  }
  out.negative_count = count_negative(out.values);
  return out;
}

SourceMatrix pinv_recover(const ResidualMatrix& r, const MixingEstimate& m) {
  check_shapes(r, m);
  if (m.rows.rows() > m.rows.cols()) throw std::invalid_argument("pinv recovery: M has more rows than columns");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.rows, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (!(sv.minCoeff() > 1e-12 * sv.maxCoeff())) throw std::invalid_argument("pinv recovery: M is rank deficient");
  const Eigen::MatrixXd pinv = svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  SourceMatrix out{r.grid, r.values * pinv, RecoveryMethod::pinv};
  out.negative_count = count_negative(out.values);
  return out;
}

SourceMatrix nnls_recover(const ResidualMatrix& r, const MixingEstimate& m) {
  check_shapes(r, m);
  SourceMatrix out{r.grid, Eigen::MatrixXd::Zero(r.values.rows(), m.rows.rows()), RecoveryMethod::nnls};
  const Eigen::MatrixXd columns = m.rows.transpose();
  const std::vector<bool> all(static_cast<std::size_t>(m.rows.rows()), true);
  for (Eigen::Index i = 0; i < r.values.rows(); ++i)
    out.values.row(i) = nnls_columns(columns, r.values.row(i).transpose(), all).lambda.transpose();
  return out;
}

}  // namespace semiblind
