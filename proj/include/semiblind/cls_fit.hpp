#pragma once

// Fits known reference spectra to the mixtures under concentration bounds
// and computes the fitting residual X - A*S.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semiblind/spectra.hpp"

namespace semiblind {

struct BoxLsOptions {
  double tol = 1e-8;      ///< max-norm of the projected gradient at exit
  int max_iter = 10000;   ///< per mixture column

  void validate() const;
};

/// Fitted concentrations, n_known x m.
struct ConcentrationMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> substance_names;
  ConcentrationBounds bounds;
  bool converged = true;    ///< false: `values` is the best iterate found
  double stationarity = 0;  ///< worst column's projected-gradient max-norm
  int iterations = 0;       ///< worst column's iteration count
};

struct ResidualMatrix {
  SpectralGrid grid;
  Eigen::MatrixXd values;
  double negative_fraction = 0;  ///< measured before clamping
  double negative_min = 0;       ///< most negative entry before clamping, 0 if none
  bool clamped = false;
};

/// Feasible set of a single mixture column: 0 <= s <= upper, and optionally
/// sum(s[i] for i in total_mask) <= total.
struct ColumnBox {
  Eigen::VectorXd upper;
  std::vector<bool> total_mask;
  std::optional<double> total;

  Eigen::VectorXd project(const Eigen::VectorXd& y) const;
  bool contains(const Eigen::VectorXd& s, double slack = 1e-12) const;

  static ColumnBox from_bounds(const ConcentrationBounds& bounds, std::span<const std::string> names);
};

struct ColumnFit {
  Eigen::VectorXd s;
  int iterations = 0;
  double stationarity = 0;
  bool converged = false;
};

/// Minimizes 0.5*||x - A s||^2 over `box` by projected gradient with a
/// Barzilai-Borwein trial step and Armijo backtracking, starting from `start`.
ColumnFit solve_box_column(const Eigen::MatrixXd& gram, const Eigen::VectorXd& atx, const ColumnBox& box,
                           const Eigen::VectorXd& start, const BoxLsOptions& opts);

/// Columns of `a` are the references named in `names`; one bound per name.
ConcentrationMatrix box_constrained_ls(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a,
                                       std::vector<std::string> names, const ConcentrationBounds& bounds,
                                       const BoxLsOptions& opts = {});

/// Same, warm-started from `start` (projected onto the feasible set first).
ConcentrationMatrix box_constrained_ls(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a,
                                       std::vector<std::string> names, const ConcentrationBounds& bounds,
                                       const BoxLsOptions& opts, const Eigen::MatrixXd& start);

ConcentrationMatrix box_constrained_ls(const MixtureMatrix& x, const ReferenceLibrary& library,
                                       std::vector<std::string> names, const ConcentrationBounds& bounds,
                                       const BoxLsOptions& opts = {});

double ls_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a, const Eigen::MatrixXd& s);

ResidualMatrix compute_residual(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a, const Eigen::MatrixXd& s,
                                const SpectralGrid& grid, bool clamp = false);
ResidualMatrix compute_residual(const MixtureMatrix& x, const Eigen::MatrixXd& a, const ConcentrationMatrix& s,
                                bool clamp = false);

/// Copy with negative entries set to zero; statistics are kept from `r`.
ResidualMatrix clamp_nonnegative(const ResidualMatrix& r);

}  // namespace semiblind
