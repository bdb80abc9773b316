#include <doctest.h>

#include <cmath>

#include "semiblind/synth.hpp"

using namespace semiblind;

TEST_CASE("Lorentzian lines") {
  const auto grid = SpectralGrid::uniform(0, 100, 101);
  const std::vector<PeakSpec> one{{50.0, 2.0, 3.0}};
  auto s = gen_source_spectrum(one, grid);
  CHECK(s.intensities()[50] == doctest::Approx(3.0));
  CHECK(s.intensities()[48] == doctest::Approx(1.5));
  CHECK(s.intensities()[52] == doctest::Approx(1.5));
  CHECK(s.intensities()[0] == doctest::Approx(3.0 * 4.0 / (2500.0 + 4.0)));

  const std::vector<PeakSpec> a{{20.0, 1.0, 1.0}}, b{{80.0, 1.5, 2.0}}, both{{20.0, 1.0, 1.0}, {80.0, 1.5, 2.0}};
  auto sa = gen_source_spectrum(a, grid), sb = gen_source_spectrum(b, grid), sab = gen_source_spectrum(both, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(sab.intensities()[i] == doctest::Approx(sa.intensities()[i] + sb.intensities()[i]));
    CHECK(sab.intensities()[i] >= 0.0);
  }

  auto cut = gen_source_spectrum(one, grid, "x", 8.0);
  CHECK(cut.intensities()[50] == doctest::Approx(3.0));
  CHECK(cut.intensities()[66] > 0.0);
  CHECK(cut.intensities()[67] == 0.0);
  CHECK(cut.intensities()[33] == 0.0);

  const std::vector<PeakSpec> outside{{150.0, 1.0, 1.0}}, flat{{50.0, 0.0, 1.0}};
  CHECK_THROWS_AS(gen_source_spectrum(outside, grid), std::invalid_argument);
  CHECK_THROWS_AS(gen_source_spectrum(flat, grid), std::invalid_argument);
  CHECK_THROWS_AS(gen_source_spectrum({}, grid), std::invalid_argument);
}

TEST_CASE("stand-alone peak verification") {
  SUBCASE("distinct spikes pass with their positions as witnesses") {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(6, 3);
    w(1, 0) = 1.0;
    w(4, 1) = 2.0;
    w(2, 2) = 0.5;
    auto v = verify_standalone_peaks(w, 1e-6);
    CHECK(v[0].passes);
    CHECK(*v[0].witness == 1);
    CHECK(*v[1].witness == 4);
    CHECK(*v[2].witness == 2);
  }
  SUBCASE("identical columns both fail") {
    Eigen::MatrixXd w(4, 2);
    w << 1, 1, 0, 0, 2, 2, 0, 0;
    auto v = verify_standalone_peaks(w, 1e-6);
    CHECK_FALSE(v[0].passes);
    CHECK_FALSE(v[1].passes);
    CHECK_FALSE(v[0].witness);
  }
  SUBCASE("separated truncated Lorentzians pass") {
    const auto grid = SpectralGrid::uniform(0, 500, 501);
    const std::vector<PeakSpec> a{{100.0, 3.0, 1.0}}, b{{140.0, 3.0, 1.0}};
    Eigen::MatrixXd w(501, 2);
    w.col(0) = gen_source_spectrum(a, grid, "a", 8.0).vector();
    w.col(1) = gen_source_spectrum(b, grid, "b", 8.0).vector();
    auto v = verify_standalone_peaks(w, 1e-6);
    CHECK(v[0].passes);
    CHECK(v[1].passes);
    CHECK(*v[0].witness == 100);
    CHECK(*v[1].witness == 140);
  }
}

TEST_CASE("benchmark presets") {
  for (int id : {1, 2}) {
    CAPTURE(id);
    auto cfg = benchmark_preset(id);
    auto bench = gen_benchmark(cfg);
    const auto& t = bench.truth;
    CHECK(bench.x.rows() == 1024);
    CHECK(bench.x.cols() == 5);
    CHECK(bench.x.laser_wavelengths() == std::vector<double>{248, 250, 252, 254, 256});
    CHECK(bench.x.values().minCoeff() >= 0.0);
    CHECK(t.mixing.minCoeff() >= 0.0);
    CHECK(t.sources.cols() == 2);
    for (auto& v : verify_standalone_peaks(t.sources, 1e-6 * t.sources.maxCoeff())) CHECK(v.passes);

    const Eigen::MatrixXd a = bench.library.matrix(t.known_names);
    const Eigen::MatrixXd unknown_part = bench.x.values() - a * t.known_concentrations;
    CHECK((unknown_part - t.sources * t.mixing).cwiseAbs().maxCoeff() <= 1e-12);
    for (const auto& name : t.source_names) CHECK(bench.library.contains(name));
    CHECK(bench.library.names().size() == t.known_names.size() + t.source_names.size() + cfg.distractors);
  }
  auto b1 = gen_benchmark(benchmark_preset(1));
  CHECK(b1.bounds.bound("methanol") == doctest::Approx(1.0 / 3.0));
  CHECK(b1.truth.known_concentrations.maxCoeff() <= 1.0 / 3.0);
  auto b2 = gen_benchmark(benchmark_preset(2));
  CHECK(*b2.bounds.total_bound == 0.5);
  CHECK(b2.truth.known_concentrations.colwise().sum().maxCoeff() <= 0.5 + 1e-15);
  CHECK(b2.truth.mixing.row(1).maxCoeff() <= 0.05 * b2.truth.mixing.row(0).maxCoeff() / 0.25);
  CHECK_THROWS_AS(benchmark_preset(9), std::invalid_argument);
}

TEST_CASE("knowns only") {
  auto cfg = benchmark_preset(1);
  cfg.unknowns.clear();
  cfg.unknown_weights.clear();
  auto bench = gen_benchmark(cfg);
  const Eigen::MatrixXd a = bench.library.matrix(bench.truth.known_names);
  CHECK(bench.x.values() == a * bench.truth.known_concentrations);
}

TEST_CASE("generation is deterministic per seed") {
  auto cfg = benchmark_preset(2);
  cfg.noise_sigma = 0.01;
  auto a = gen_benchmark(cfg), b = gen_benchmark(cfg);
  CHECK(a.x == b.x);
  CHECK(a.truth.mixing == b.truth.mixing);
  CHECK(a.library.entries() == b.library.entries());
  cfg.seed = 8;
  CHECK_FALSE(gen_benchmark(cfg).x == a.x);
}

TEST_CASE("config validation") {
  auto cfg = benchmark_preset(1);
  cfg.unknowns = {"a", "b", "c", "d", "e", "f"};
  cfg.unknown_weights.clear();
  CHECK_THROWS_AS(gen_benchmark(cfg), std::invalid_argument);
  cfg = benchmark_preset(2);
  cfg.total_shares = {0.5, 0.6};
  CHECK_THROWS_AS(gen_benchmark(cfg), std::invalid_argument);
  cfg = benchmark_preset(1);
  cfg.noise_sigma = -1;
  CHECK_THROWS_AS(gen_benchmark(cfg), std::invalid_argument);
  cfg = benchmark_preset(1);
  cfg.peak_cutoff = 1e4;
  CHECK_THROWS_AS(gen_benchmark(cfg), std::runtime_error);
}

TEST_CASE("matched cosines") {
  Eigen::MatrixXd truth(3, 2), est(3, 3);
  truth << 1, 0, 0, 1, 0, 0;
  est << 0, 2, 1, 3, 0, 1, 0, 0, 0;
  auto c = matched_cosines(truth, est);
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] == doctest::Approx(1.0));
  auto partial = matched_cosines(truth, est.leftCols(1));
  CHECK(partial[0] == 0.0);
  CHECK(partial[1] == doctest::Approx(1.0));
  CHECK(matched_cosines(truth, Eigen::MatrixXd::Zero(3, 0)) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(matched_cosines(truth, Eigen::MatrixXd::Zero(4, 1)), std::invalid_argument);
}
