#include "semiblind/cls_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace semiblind {

void BoxLsOptions::validate() const {
  if (!(tol >= 0.0)) throw std::invalid_argument("box LS tolerance must be >= 0");
  if (max_iter < 1) throw std::invalid_argument("box LS max_iter must be >= 1");
}

ColumnBox ColumnBox::from_bounds(const ConcentrationBounds& bounds, std::span<const std::string> names) {
  bounds.validate();
  ColumnBox box;
  box.upper.resize(static_cast<Eigen::Index>(names.size()));
  box.total_mask.assign(names.size(), false);
  for (std::size_t i = 0; i < names.size(); ++i) {
    box.upper[static_cast<Eigen::Index>(i)] = bounds.bound(names[i]);
    box.total_mask[i] = bounds.in_total(names[i]);
  }
  box.total = bounds.total_bound;
  return box;
}

Eigen::VectorXd ColumnBox::project(const Eigen::VectorXd& y) const {
  Eigen::VectorXd s = y.cwiseMax(0.0).cwiseMin(upper);
  if (!total) return s;
  auto masked_sum = [&](const Eigen::VectorXd& v) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (total_mask[static_cast<std::size_t>(i)]) acc += v[i];
    return acc;
  };
  if (masked_sum(s) <= *total) return s;

  // Exact projection onto box ∩ half-space: s_i = clamp(y_i - tau, 0, u_i)
  // on the masked coordinates, tau > 0 chosen so the masked sum hits the cap.
  auto shifted = [&](double tau) {
    Eigen::VectorXd v = s;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (total_mask[static_cast<std::size_t>(i)]) v[i] = std::clamp(y[i] - tau, 0.0, upper[i]);
    }
    return v;
  };
  double lo = 0.0, hi = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (total_mask[static_cast<std::size_t>(i)]) hi = std::max(hi, y[i]);
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (masked_sum(shifted(mid)) > *total) lo = mid;
    else hi = mid;
  }
  return shifted(hi);
}

bool ColumnBox::contains(const Eigen::VectorXd& s, double slack) const {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] < -slack || s[i] > upper[i] + slack) return false;
    if (total_mask[static_cast<std::size_t>(i)]) acc += s[i];
  }
  return !total || acc <= *total + slack;
}

namespace {

// 0.5 s'Gs - b's: the LS objective minus the constant 0.5||x||^2.
double reduced_objective(const Eigen::MatrixXd& gram, const Eigen::VectorXd& atx, const Eigen::VectorXd& s) {
  return 0.5 * s.dot(gram * s) - atx.dot(s);
}

double stationarity_of(const ColumnBox& box, const Eigen::VectorXd& s, const Eigen::VectorXd& g) {
  return (box.project(s - g) - s).lpNorm<Eigen::Infinity>();
}

// Newton step on the coordinates strictly inside their bounds, holding the
// rest fixed; the total cap, when tight, is kept as an equality.
Eigen::VectorXd free_set_newton(const Eigen::MatrixXd& gram, const Eigen::VectorXd& g, const ColumnBox& box,
                                const Eigen::VectorXd& s) {
  const double slack = 1e-12;
  std::vector<Eigen::Index> free;
  double masked = 0.0;
  bool any_masked_free = false;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const bool masked_i = box.total_mask[static_cast<std::size_t>(i)];
    if (masked_i) masked += s[i];
    if (s[i] > slack && s[i] < box.upper[i] - slack) {
      free.push_back(i);
      any_masked_free = any_masked_free || masked_i;
    }
  }
  if (free.empty()) return s;
  const bool cap_tight = box.total && any_masked_free && masked >= *box.total - 1e-10;
  const auto n = static_cast<Eigen::Index>(free.size());
  const Eigen::Index dim = n + (cap_tight ? 1 : 0);
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs(dim);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) kkt(a, b) = gram(free[a], free[b]);
    rhs[a] = -g[free[a]];
    if (cap_tight && box.total_mask[static_cast<std::size_t>(free[a])]) kkt(a, n) = kkt(n, a) = 1.0;
  }
  if (cap_tight) rhs[n] = 0.0;
  const Eigen::VectorXd d = kkt.colPivHouseholderQr().solve(rhs);
  if (!d.allFinite()) return s;
  Eigen::VectorXd out = s;
  for (Eigen::Index a = 0; a < n; ++a) out[free[a]] += d[a];
  return box.project(out);
}

}  // namespace

ColumnFit solve_box_column(const Eigen::MatrixXd& gram, const Eigen::VectorXd& atx, const ColumnBox& box,
                           const Eigen::VectorXd& start, const BoxLsOptions& opts) {
  ColumnFit fit;
  Eigen::VectorXd s = box.project(start);
  Eigen::VectorXd g = gram * s - atx;
  double f = reduced_objective(gram, atx, s);
  const double lipschitz = std::max(gram.diagonal().sum(), std::numeric_limits<double>::min());
  double step = 1.0 / lipschitz;

  Eigen::VectorXd best = s;
  double best_stat = stationarity_of(box, s, g);
  fit.stationarity = best_stat;
  if (best_stat <= opts.tol) {
    fit.s = s;
    fit.converged = true;
    return fit;
  }

  for (int it = 1; it <= opts.max_iter; ++it) {
    fit.iterations = it;
    double alpha = step;
    Eigen::VectorXd trial;
    double f_trial = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      trial = box.project(s - alpha * g);
      f_trial = reduced_objective(gram, atx, trial);
      if (trial == s) break;
      if (f_trial <= f + 1e-4 * g.dot(trial - s)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // The objective no longer resolves progress; finish on the free set.
      Eigen::VectorXd polished = free_set_newton(gram, g, box, s);
      Eigen::VectorXd g_pol = gram * polished - atx;
      const double stat_pol = stationarity_of(box, polished, g_pol);
      if (!(stat_pol < stationarity_of(box, s, g))) break;
      trial = std::move(polished);
      f_trial = reduced_objective(gram, atx, trial);
    }

    Eigen::VectorXd ds = trial - s;
    Eigen::VectorXd g_new = gram * trial - atx;
    Eigen::VectorXd dg = g_new - g;
    s = std::move(trial);
    g = std::move(g_new);
    f = f_trial;

    const double curvature = ds.dot(dg);
    step = curvature > 0.0 ? std::clamp(ds.squaredNorm() / curvature, 1e-3 / lipschitz, 1e3 / lipschitz)
                           : 1.0 / lipschitz;

    const double stat = stationarity_of(box, s, g);
    if (stat < best_stat) {
      best_stat = stat;
      best = s;
    }
    if (stat <= opts.tol) {
      fit.s = s;
      fit.stationarity = stat;
      fit.converged = true;
      return fit;
    }
  }
  fit.s = best;
  fit.stationarity = best_stat;
  fit.converged = best_stat <= opts.tol;
  return fit;
}

ConcentrationMatrix box_constrained_ls(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a,
                                       std::vector<std::string> names, const ConcentrationBounds& bounds,
                                       const BoxLsOptions& opts) {
  return box_constrained_ls(x, a, std::move(names), bounds, opts,
                            Eigen::MatrixXd::Zero(a.cols(), x.cols()));
}

ConcentrationMatrix box_constrained_ls(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a,
                                       std::vector<std::string> names, const ConcentrationBounds& bounds,
                                       const BoxLsOptions& opts, const Eigen::MatrixXd& start) {
  opts.validate();
  if (a.rows() != x.rows()) throw std::invalid_argument("dimension mismatch: references and mixtures differ in length");
  if (a.cols() < 1) throw std::invalid_argument("need at least one reference spectrum");
  if (static_cast<std::size_t>(a.cols()) != names.size())
    throw std::invalid_argument("dimension mismatch: one name per reference column required");
  if (start.rows() != a.cols() || start.cols() != x.cols())
    throw std::invalid_argument("dimension mismatch: start point has the wrong shape");

  const ColumnBox box = ColumnBox::from_bounds(bounds, names);
  const Eigen::MatrixXd gram = a.transpose() * a;
  const Eigen::MatrixXd atx = a.transpose() * x;

  ConcentrationMatrix out;
  out.values.resize(a.cols(), x.cols());
  out.substance_names = std::move(names);
  out.bounds = bounds;
  // Columns are independent problems.
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    ColumnFit col = solve_box_column(gram, atx.col(j), box, start.col(j), opts);
    out.values.col(j) = col.s;
    out.converged = out.converged && col.converged;
    out.stationarity = std::max(out.stationarity, col.stationarity);
    out.iterations = std::max(out.iterations, col.iterations);
  }
  return out;
}

ConcentrationMatrix box_constrained_ls(const MixtureMatrix& x, const ReferenceLibrary& library,
                                       std::vector<std::string> names, const ConcentrationBounds& bounds,
                                       const BoxLsOptions& opts) {
  if (!(library.grid() == x.grid())) throw std::invalid_argument("library and mixtures are on different grids");
  const Eigen::MatrixXd a = library.matrix(names);
  return box_constrained_ls(x.values(), a, std::move(names), bounds, opts);
}

double ls_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a, const Eigen::MatrixXd& s) {
  return (x - a * s).squaredNorm();
}

ResidualMatrix compute_residual(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a, const Eigen::MatrixXd& s,
                                const SpectralGrid& grid, bool clamp) {
  if (a.rows() != x.rows() || a.cols() != s.rows() || s.cols() != x.cols())
    throw std::invalid_argument("dimension mismatch in residual computation");
  if (static_cast<std::size_t>(x.rows()) != grid.size()) throw std::invalid_argument("residual rows do not match the grid");
  ResidualMatrix r{grid, a.cols() == 0 ? Eigen::MatrixXd(x) : Eigen::MatrixXd(x - a * s)};
  const auto total = static_cast<double>(r.values.size());
  const auto negatives = static_cast<double>((r.values.array() < 0.0).count());
  r.negative_fraction = total > 0 ? negatives / total : 0.0;
  r.negative_min = std::min(0.0, r.values.size() ? r.values.minCoeff() : 0.0);
  return clamp ? clamp_nonnegative(r) : r;
}

ResidualMatrix compute_residual(const MixtureMatrix& x, const Eigen::MatrixXd& a, const ConcentrationMatrix& s,
                                bool clamp) {
  return compute_residual(x.values(), a, s.values, x.grid(), clamp);
}

ResidualMatrix clamp_nonnegative(const ResidualMatrix& r) {
  ResidualMatrix out = r;
  out.values = r.values.cwiseMax(0.0);
  out.clamped = true;
  return out;
}

}  // namespace semiblind
