#pragma once

// Mixing-matrix identification from a nonnegative residual R = W*M.
//
// When every source owns a stand-alone peak, each row of M appears (up to a
// positive scale) as a row of R, and every other row of R is a nonnegative
// combination of those. The rows of M are therefore the generators of the
// smallest convex cone enclosing the rows of R. Each row is scored by how
// badly the remaining rows can reproduce it under nonnegative weights; the
// highest scorers are the cone's extreme rays.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "semiblind/cls_fit.hpp"

namespace semiblind {

struct NnlsResult {
  Eigen::VectorXd lambda;
  double residual_norm = 0;
  int iterations = 0;
};

/// Lawson-Hanson active set: min ||lambda' * basis - y||_2 over lambda >= 0,
/// where `basis` holds one candidate row per row (k x m) and y has length m.
NnlsResult nnls(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y, double tol = 1e-10);

/// Same problem with the basis given as the columns of `columns` (m x k),
/// restricted to the columns flagged in `allowed`.
NnlsResult nnls_columns(const Eigen::MatrixXd& columns, const Eigen::VectorXd& y, const std::vector<bool>& allowed,
                        double tol = 1e-10);

struct RowScore {
  std::size_t row_index = 0;
  double score = 0;  ///< distance from the row to the cone of the other rows
};

struct ScoreOptions {
  /// Rows with norm below this fraction of the largest row norm are scored 0 without solving.
  double prefilter_ratio = 1e-3;
  double nnls_tol = 1e-10;
};

/// One score per row of `r` (entries must be >= 0), in row order.
std::vector<RowScore> score_rows(const Eigen::MatrixXd& r, const ScoreOptions& opts = {});
std::vector<RowScore> score_rows(const ResidualMatrix& r, const ScoreOptions& opts = {});

struct MixingEstimate {
  Eigen::MatrixXd rows;                     ///< n x m, copied from R
  std::vector<std::size_t> source_indices;  ///< row of R each came from
  std::vector<double> scores;               ///< non-increasing
};

/// The n highest-scoring rows of `r`, ties broken by lower row index.
MixingEstimate select_vertices(std::span<const RowScore> scores, const Eigen::MatrixXd& r, std::size_t n);

/// Source count at the largest ratio gap in the descending score sequence.
/// Scores below `noise_floor` times the top score are treated as the floor.
std::size_t estimate_source_count(std::span<const RowScore> scores, std::size_t max_n, double noise_floor = 1e-2);

/// Rows grouped by direction. Each nonzero row belongs to exactly one group;
/// the group's representative is its largest-norm member.
struct DirectionGroups {
  std::vector<std::size_t> representatives;  ///< ascending row order
  std::vector<std::ptrdiff_t> group_of;      ///< index into representatives, -1 for zero rows
};

/// Groups rows whose unit vectors have cosine >= 1 - `cos_tol`.
DirectionGroups group_parallel_rows(const Eigen::MatrixXd& r, double cos_tol = 1e-9);

struct ConeOptions {
  std::optional<std::size_t> n;  ///< empty: estimate from the scores
  std::size_t max_n = 5;
  double noise_floor = 1e-2;
  double parallel_tol = 1e-9;
  ScoreOptions scoring;
};

struct ConeExtraction {
  MixingEstimate estimate;
  std::vector<RowScore> scores;  ///< one per row of R; rows outside the scored set carry 0
  std::size_t n = 0;
  bool n_estimated = false;
  std::size_t distinct_directions = 0;
};

/// Collapses parallel rows to one representative each, scores the
/// representatives against one another, and selects the top n.
ConeExtraction extract_mixing(const ResidualMatrix& r, const ConeOptions& opts = {});
ConeExtraction extract_mixing(const Eigen::MatrixXd& r, const ConeOptions& opts = {});

}  // namespace semiblind
