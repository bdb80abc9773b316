#include "semiblind/nmf.hpp"

#include <random>
#include <stdexcept>

namespace semiblind {

namespace {

constexpr double kGuard = 1e-12;

// Uniform on (0, 1] from the top 53 bits; independent of the standard
// library's distribution implementation.
double unit_interval(std::mt19937_64& gen) {
  return 1.0 - static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace

void NmfConfig::validate() const {
  if (n < 1) throw std::invalid_argument("nmf: rank n must be >= 1");
  if (max_iter < 1) throw std::invalid_argument("nmf: max_iter must be >= 1");
  if (!(tol >= 0.0)) throw std::invalid_argument("nmf: tol must be >= 0");
}

NmfResult nmf_factorize(const Eigen::MatrixXd& r, const NmfConfig& cfg) {
  cfg.validate();
  if (r.size() > 0 && r.minCoeff() < 0.0) throw std::invalid_argument("nmf: input must be nonnegative");
  const auto n = static_cast<Eigen::Index>(cfg.n);
  NmfResult out;
  if (r.size() == 0 || r.cwiseAbs().maxCoeff() == 0.0) {
    out.w = Eigen::MatrixXd::Zero(r.rows(), n);
    out.m = Eigen::MatrixXd::Zero(n, r.cols());
    out.objective_history.push_back(0.0);
    return out;
  }

  std::mt19937_64 gen(cfg.seed);
  out.w.resize(r.rows(), n);
  out.m.resize(n, r.cols());
  for (Eigen::Index j = 0; j < out.w.cols(); ++j)
    for (Eigen::Index i = 0; i < out.w.rows(); ++i) out.w(i, j) = unit_interval(gen);
  for (Eigen::Index j = 0; j < out.m.cols(); ++j)
    for (Eigen::Index i = 0; i < out.m.rows(); ++i) out.m(i, j) = unit_interval(gen);

  auto objective = [&] { return (r - out.w * out.m).squaredNorm(); };
  double prev = objective();
  out.objective_history.push_back(prev);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const Eigen::MatrixXd wt_r = out.w.transpose() * r;
    const Eigen::MatrixXd wt_w_m = (out.w.transpose() * out.w) * out.m;
    out.m.array() *= wt_r.array() / (wt_w_m.array() + kGuard);
    const Eigen::MatrixXd r_mt = r * out.m.transpose();
    const Eigen::MatrixXd w_m_mt = out.w * (out.m * out.m.transpose());
    out.w.array() *= r_mt.array() / (w_m_mt.array() + kGuard);

    const double cur = objective();
    out.objective_history.push_back(cur);
    out.iterations = it;
    if (prev - cur <= cfg.tol * prev) break;
    prev = cur;
  }
  return out;
}

NmfResult nmf_factorize(const ResidualMatrix& r, const NmfConfig& cfg) { return nmf_factorize(r.values, cfg); }

}  // namespace semiblind
