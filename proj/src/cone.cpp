#include "semiblind/cone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace semiblind {

namespace {

// Unconstrained LS over the passive columns.
Eigen::VectorXd passive_solve(const Eigen::MatrixXd& columns, const std::vector<Eigen::Index>& passive,
                              const Eigen::VectorXd& y) {
  Eigen::MatrixXd cp(columns.rows(), static_cast<Eigen::Index>(passive.size()));
  for (std::size_t k = 0; k < passive.size(); ++k) cp.col(static_cast<Eigen::Index>(k)) = columns.col(passive[k]);
  return cp.colPivHouseholderQr().solve(y);
}

}  // namespace

NnlsResult nnls_columns(const Eigen::MatrixXd& columns, const Eigen::VectorXd& y, const std::vector<bool>& allowed,
                        double tol) {
  if (columns.rows() != y.size()) throw std::invalid_argument("nnls: dimension mismatch");
  if (allowed.size() != static_cast<std::size_t>(columns.cols())) throw std::invalid_argument("nnls: mask size mismatch");
  const Eigen::Index k = columns.cols();
  NnlsResult out;
  out.lambda = Eigen::VectorXd::Zero(k);
  if (k == 0 || y.squaredNorm() == 0.0) {
    out.residual_norm = y.norm();
    return out;
  }

  // KKT threshold relative to the problem's scale.
  const double scale = std::max(columns.cwiseAbs().maxCoeff() * y.norm(), 1e-300);
  const double kkt_tol = tol * scale;

  std::vector<bool> in_passive(static_cast<std::size_t>(k), false);
  std::vector<Eigen::Index> passive;
  Eigen::VectorXd& x = out.lambda;
  Eigen::VectorXd resid = y;
  const int max_outer = static_cast<int>(3 * std::max<Eigen::Index>(k, columns.rows())) + 10;

  for (int outer = 0; outer < max_outer; ++outer) {
    out.iterations = outer + 1;
    Eigen::VectorXd w = columns.transpose() * resid;
    Eigen::Index t = -1;
    double wmax = kkt_tol;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (!allowed[static_cast<std::size_t>(j)] || in_passive[static_cast<std::size_t>(j)]) continue;
      if (w[j] > wmax) {
        wmax = w[j];
        t = j;
      }
    }
    if (t < 0) break;

    passive.push_back(t);
    in_passive[static_cast<std::size_t>(t)] = true;

    bool entered = true;
    for (int inner = 0; inner < 3 * static_cast<int>(k) + 10; ++inner) {
      Eigen::VectorXd z = passive_solve(columns, passive, y);
      bool all_positive = true;
      for (Eigen::Index q = 0; q < z.size(); ++q)
        if (z[q] <= 0.0) all_positive = false;
      if (all_positive) {
        for (std::size_t q = 0; q < passive.size(); ++q) x[passive[q]] = z[static_cast<Eigen::Index>(q)];
        break;
      }
      if (inner == 0 && z[static_cast<Eigen::Index>(passive.size() - 1)] <= 0.0) {
        // The entering column cannot take a positive weight: rounding in w.
        entered = false;
        break;
      }
      double alpha = 1.0;
      for (std::size_t q = 0; q < passive.size(); ++q) {
        const double zq = z[static_cast<Eigen::Index>(q)];
        if (zq <= 0.0) {
          const double xq = x[passive[q]];
          alpha = std::min(alpha, xq / (xq - zq));
        }
      }
      for (std::size_t q = 0; q < passive.size(); ++q) {
        const double xq = x[passive[q]];
        x[passive[q]] = xq + alpha * (z[static_cast<Eigen::Index>(q)] - xq);
      }
      std::vector<Eigen::Index> kept;
      for (auto j : passive) {
        if (x[j] <= 1e-15 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
          x[j] = 0.0;
          in_passive[static_cast<std::size_t>(j)] = false;
        } else {
          kept.push_back(j);
        }
      }
      passive.swap(kept);
      if (passive.empty()) break;
    }
    if (!entered) {
      in_passive[static_cast<std::size_t>(t)] = false;
      passive.pop_back();
      break;
    }
    resid = y - columns * x;
  }
  out.residual_norm = (y - columns * x).norm();
  return out;
}

NnlsResult nnls(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y, double tol) {
  if (basis.rows() < 1) throw std::invalid_argument("nnls: need at least one basis row");
  if (basis.cols() != y.size()) throw std::invalid_argument("nnls: dimension mismatch");
  return nnls_columns(basis.transpose(), y, std::vector<bool>(static_cast<std::size_t>(basis.rows()), true), tol);
}

std::vector<RowScore> score_rows(const Eigen::MatrixXd& r, const ScoreOptions& opts) {
  if (r.rows() < 2) throw std::invalid_argument("score_rows: need at least 2 rows");
  if (r.size() > 0 && r.minCoeff() < 0.0) throw std::invalid_argument("score_rows: residual must be nonnegative (clamp first)");
  const auto p = static_cast<std::size_t>(r.rows());
  const Eigen::VectorXd norms = r.rowwise().norm();
  const double cutoff = opts.prefilter_ratio * norms.maxCoeff();
  const Eigen::MatrixXd columns = r.transpose();

  std::vector<RowScore> scores(p);
  std::vector<bool> allowed(p, true);
  for (std::size_t l = 0; l < p; ++l) {
    scores[l].row_index = l;
    const auto li = static_cast<Eigen::Index>(l);
    if (norms[li] == 0.0 || norms[li] < cutoff) continue;
    allowed[l] = false;
    scores[l].score = nnls_columns(columns, columns.col(li), allowed, opts.nnls_tol).residual_norm;
    allowed[l] = true;
  }
  return scores;
}

std::vector<RowScore> score_rows(const ResidualMatrix& r, const ScoreOptions& opts) {
  return score_rows(r.values, opts);
}

namespace {

std::vector<RowScore> ranked(std::span<const RowScore> scores) {
  std::vector<RowScore> order(scores.begin(), scores.end());
  std::stable_sort(order.begin(), order.end(), [](const RowScore& a, const RowScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row_index < b.row_index;
  });
  return order;
}

}  // namespace

MixingEstimate select_vertices(std::span<const RowScore> scores, const Eigen::MatrixXd& r, std::size_t n) {
  if (n < 1 || n > scores.size() || n > static_cast<std::size_t>(r.rows()))
    throw std::invalid_argument("select_vertices: n out of range");
  auto order = ranked(scores);
  MixingEstimate est;
  est.rows.resize(static_cast<Eigen::Index>(n), r.cols());
  for (std::size_t k = 0; k < n; ++k) {
    const auto idx = order[k].row_index;
    if (idx >= static_cast<std::size_t>(r.rows())) throw std::invalid_argument("select_vertices: row index out of range");
    est.rows.row(static_cast<Eigen::Index>(k)) = r.row(static_cast<Eigen::Index>(idx));
    est.source_indices.push_back(idx);
    est.scores.push_back(order[k].score);
  }
  return est;
}

std::size_t estimate_source_count(std::span<const RowScore> scores, std::size_t max_n, double noise_floor) {
  if (scores.size() <= 1 || max_n <= 1) return 1;
  auto order = ranked(scores);
  const double top = order.front().score;
  if (!(top > 0.0)) return 1;
  const double floor = std::max(noise_floor * top, 1e-300);
  std::size_t best_n = 1;
  double best_ratio = 1.0;
  const std::size_t limit = std::min(order.size() - 1, max_n);
  for (std::size_t k = 0; k < limit; ++k) {
    const double here = std::max(order[k].score, floor);
    const double next = std::max(order[k + 1].score, floor);
    const double ratio = here / next;
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best_n = k + 1;
    }
  }
  return best_n;
}

DirectionGroups group_parallel_rows(const Eigen::MatrixXd& r, double cos_tol) {
  const auto p = static_cast<std::size_t>(r.rows());
  const Eigen::VectorXd norms = r.rowwise().norm();
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return norms[static_cast<Eigen::Index>(a)] > norms[static_cast<Eigen::Index>(b)];
  });

  Eigen::MatrixXd unit = r;
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    if (norms[i] > 0.0) unit.row(i) /= norms[i];

  DirectionGroups groups;
  groups.group_of.assign(p, -1);
  std::vector<std::size_t> reps_by_norm;
  for (auto i : order) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (norms[ii] == 0.0) continue;
    bool placed = false;
    for (std::size_t g = 0; g < reps_by_norm.size(); ++g) {
      if (unit.row(ii).dot(unit.row(static_cast<Eigen::Index>(reps_by_norm[g]))) >= 1.0 - cos_tol) {
        groups.group_of[i] = static_cast<std::ptrdiff_t>(g);
        placed = true;
        break;
      }
    }
    if (!placed) {
      groups.group_of[i] = static_cast<std::ptrdiff_t>(reps_by_norm.size());
      reps_by_norm.push_back(i);
    }
  }
  // Renumber groups so representatives are in ascending row order.
  std::vector<std::size_t> sorted = reps_by_norm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::ptrdiff_t> remap(reps_by_norm.size());
  for (std::size_t g = 0; g < reps_by_norm.size(); ++g)
    remap[g] = std::lower_bound(sorted.begin(), sorted.end(), reps_by_norm[g]) - sorted.begin();
  for (auto& g : groups.group_of)
    if (g >= 0) g = remap[static_cast<std::size_t>(g)];
  groups.representatives = std::move(sorted);
  return groups;
}

ConeExtraction extract_mixing(const Eigen::MatrixXd& r, const ConeOptions& opts) {
  if (r.rows() < 2) throw std::invalid_argument("extract_mixing: need at least 2 rows");
  if (opts.n && *opts.n < 1) throw std::invalid_argument("extract_mixing: n must be >= 1");
  if (opts.max_n < 1) throw std::invalid_argument("extract_mixing: max_n must be >= 1");
  if (r.size() > 0 && r.minCoeff() < 0.0) throw std::invalid_argument("extract_mixing: residual must be nonnegative");

  ConeExtraction out;
  DirectionGroups groups = group_parallel_rows(r, opts.parallel_tol);
  out.distinct_directions = groups.representatives.size();
  out.scores.resize(static_cast<std::size_t>(r.rows()));
  for (std::size_t i = 0; i < out.scores.size(); ++i) out.scores[i] = {i, 0.0};
  if (groups.representatives.empty()) throw std::invalid_argument("extract_mixing: residual is identically zero");

  std::vector<RowScore> rep_scores;
  if (groups.representatives.size() == 1) {
    const auto only = groups.representatives.front();
    rep_scores.push_back({only, r.row(static_cast<Eigen::Index>(only)).norm()});
  } else {
    Eigen::MatrixXd reduced(static_cast<Eigen::Index>(groups.representatives.size()), r.cols());
    for (std::size_t g = 0; g < groups.representatives.size(); ++g)
      reduced.row(static_cast<Eigen::Index>(g)) = r.row(static_cast<Eigen::Index>(groups.representatives[g]));
    auto reduced_scores = score_rows(reduced, opts.scoring);
    for (std::size_t g = 0; g < reduced_scores.size(); ++g)
      rep_scores.push_back({groups.representatives[g], reduced_scores[g].score});
  }
  for (const auto& s : rep_scores) out.scores[s.row_index] = s;

  if (opts.n) {
    if (*opts.n > rep_scores.size())
      throw std::invalid_argument("extract_mixing: n exceeds the number of distinct row directions (" +
                                  std::to_string(rep_scores.size()) + ")");
    out.n = *opts.n;
  } else {
    out.n = std::min(estimate_source_count(out.scores, opts.max_n, opts.noise_floor), rep_scores.size());
    out.n_estimated = true;
  }
  out.estimate = select_vertices(rep_scores, r, out.n);
  return out;
}

ConeExtraction extract_mixing(const ResidualMatrix& r, const ConeOptions& opts) {
  return extract_mixing(r.values, opts);
}

}  // namespace semiblind
