#pragma once

// Lee-Seung multiplicative-update NMF, the comparison baseline for the cone method.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "semiblind/cls_fit.hpp"

namespace semiblind {

struct NmfConfig {
  std::size_t n = 1;
  int max_iter = 2000;
  std::uint64_t seed = 1;
  double tol = 1e-10;  ///< stop when the relative objective decrease falls below this

  void validate() const;
};

struct NmfResult {
  Eigen::MatrixXd w;  ///< p x n
  Eigen::MatrixXd m;  ///< n x m
  std::vector<double> objective_history;  ///< ||R - W M||_F^2, initial value first
  int iterations = 0;
};

NmfResult nmf_factorize(const Eigen::MatrixXd& r, const NmfConfig& cfg);
NmfResult nmf_factorize(const ResidualMatrix& r, const NmfConfig& cfg);

}  // namespace semiblind
