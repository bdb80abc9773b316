#include <doctest.h>

#include <random>

#include "semiblind/nmf.hpp"

using namespace semiblind;

namespace {

Eigen::MatrixXd random_nonneg(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = u(gen);
  return out;
}

}  // namespace

TEST_CASE("rank-one input is reconstructed") {
  const Eigen::VectorXd w = random_nonneg(40, 1, 1).col(0);
  const Eigen::VectorXd m = random_nonneg(5, 1, 2).col(0);
  const Eigen::MatrixXd r = w * m.transpose();
  NmfConfig cfg;
  cfg.n = 1;
  cfg.max_iter = 5000;
  cfg.tol = 0.0;
  auto out = nmf_factorize(r, cfg);
  CHECK((r - out.w * out.m).norm() <= 1e-6);
}

TEST_CASE("zero input gives zero factors") {
  NmfConfig cfg;
  cfg.n = 2;
  auto out = nmf_factorize(Eigen::MatrixXd::Zero(6, 3), cfg);
  CHECK(out.w.rows() == 6);
  CHECK(out.m.cols() == 3);
  CHECK(out.w.isZero(0.0));
  CHECK(out.m.isZero(0.0));
  CHECK(out.objective_history == std::vector<double>{0.0});
}

TEST_CASE("objective never increases and factors stay nonnegative") {
  const Eigen::MatrixXd r = random_nonneg(30, 6, 3) * random_nonneg(6, 8, 4);
  NmfConfig cfg;
  cfg.n = 3;
  cfg.max_iter = 400;
  cfg.tol = 0.0;
  auto out = nmf_factorize(r, cfg);
  CHECK(out.iterations == 400);
  REQUIRE(out.objective_history.size() == 401);
  for (std::size_t i = 1; i < out.objective_history.size(); ++i)
    CHECK(out.objective_history[i] <= out.objective_history[i - 1] + 1e-12);
  CHECK(out.w.minCoeff() >= 0.0);
  CHECK(out.m.minCoeff() >= 0.0);
  CHECK(out.objective_history.back() == doctest::Approx((r - out.w * out.m).squaredNorm()));
}

TEST_CASE("seeded runs are bitwise identical") {
  const Eigen::MatrixXd r = random_nonneg(20, 5, 9);
  NmfConfig cfg;
  cfg.n = 2;
  cfg.seed = 42;
  auto a = nmf_factorize(r, cfg), b = nmf_factorize(r, cfg);
  CHECK(a.w == b.w);
  CHECK(a.m == b.m);
  CHECK(a.objective_history == b.objective_history);
  cfg.seed = 43;
  CHECK_FALSE(nmf_factorize(r, cfg).w == a.w);
}

TEST_CASE("nmf errors") {
  NmfConfig cfg;
  Eigen::MatrixXd neg = Eigen::MatrixXd::Ones(3, 3);
  neg(1, 1) = -1e-9;
  CHECK_THROWS_AS(nmf_factorize(neg, cfg), std::invalid_argument);
  cfg.n = 0;
  CHECK_THROWS_AS(nmf_factorize(Eigen::MatrixXd::Ones(3, 3), cfg), std::invalid_argument);
  cfg = {};
  cfg.max_iter = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
