// Acceptance run: one PASS/FAIL line per primary criterion; exit status 1 when any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "semiblind/cli.hpp"
#include "semiblind/cls_fit.hpp"
#include "semiblind/cone.hpp"
#include "semiblind/nmf.hpp"
#include "semiblind/pipeline.hpp"
#include "semiblind/session_json.hpp"
#include "semiblind/sparse_recovery.hpp"
#include "semiblind/synth.hpp"

using namespace semiblind;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  " << detail << "\n" << std::flush;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

double min_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); }

std::string list(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : "/") + fmt(x);
  return out;
}

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) /= m.row(i).norm();
  return out;
}

ResidualMatrix as_residual(const Benchmark& b, const Eigen::MatrixXd& v) { return {b.x.grid(), v}; }

struct Cli {
  int code;
  std::string out;
};

Cli cli(std::vector<std::string> args) {
  args.insert(args.begin(), "semiblind");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::istringstream in;
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), in, out, err);
  return {code, out.str()};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("semiblind_acceptance_" + name);
  fs::remove_all(dir);
  return dir;
}

bool same_files(const fs::path& a, const fs::path& b) {
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || read_file(e.path()) != read_file(other)) return false;
  }
  return true;
}

void exact_cone_recovery() {
  bool ok = true;
  double worst = 0, slowest = 0;
  for (int preset : {1, 2}) {
    const auto b = gen_benchmark(benchmark_preset(preset));
    const auto& t = b.truth;
    for (const auto& v : verify_standalone_peaks(t.sources, 1e-6 * t.sources.maxCoeff())) ok = ok && v.passes;
    const Eigen::MatrixXd r = t.sources * t.mixing;
    ConeOptions opts;
    opts.n = static_cast<std::size_t>(t.mixing.rows());
    const auto t0 = Clock::now();
    const auto ex = extract_mixing(r, opts);
    slowest = std::max(slowest, seconds_since(t0));
    const Eigen::MatrixXd want = unit_rows(t.mixing), got = unit_rows(ex.estimate.rows);
    for (Eigen::Index i = 0; i < want.rows(); ++i) {
      double best = INFINITY;
      for (Eigen::Index j = 0; j < got.rows(); ++j) best = std::min(best, (want.row(i) - got.row(j)).norm());
      worst = std::max(worst, best);
    }
    ok = ok && r.rows() == 1024 && r.cols() == 5 && t.mixing.rows() == 2;
  }
  ok = ok && worst <= 1e-6 && slowest <= 5.0;
  report(ok, "exact cone recovery", "max unit-row error " + fmt(worst) + " (<= 1e-6), " + fmt(slowest) + " s (<= 5 s)");
}

void sparse_recovery_fidelity() {
  const auto b = gen_benchmark(benchmark_preset(1));
  const auto& t = b.truth;
  const Eigen::MatrixXd clean = t.sources * t.mixing;
  ConeOptions opts;
  opts.n = static_cast<std::size_t>(t.mixing.rows());

  const auto r0 = as_residual(b, clean);
  const auto mixing = extract_mixing(r0, opts).estimate;
  const auto noiseless = matched_cosines(t.sources, recover_sources(r0, mixing).values);

  std::mt19937_64 gen(99);
  std::normal_distribution<double> z(0.0, 0.01 * clean.maxCoeff());
  Eigen::MatrixXd noisy = clean;
  for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += z(gen);
  const auto r1 = clamp_nonnegative(compute_residual(noisy, Eigen::MatrixXd::Zero(noisy.rows(), 0),
                                                     Eigen::MatrixXd::Zero(0, noisy.cols()), b.x.grid()));
  const auto with_noise = matched_cosines(t.sources, recover_sources(r1, mixing).values);

  const bool ok = min_of(noiseless) >= 0.99 && min_of(with_noise) >= 0.95;
  report(ok, "sparse recovery fidelity",
         "cosines noiseless " + list(noiseless) + " (>= 0.99), sigma 1% " + list(with_noise) + " (>= 0.95)");
}

void bregman_oracle_equivalence() {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  int unconverged = 0;
  const int instances = 60;
  for (int trial = 0; trial < instances; ++trial) {
    const Eigen::Index m = 4 + static_cast<Eigen::Index>(gen() % 7), n = 10 + static_cast<Eigen::Index>(gen() % 11);
    Eigen::MatrixXd bm(m, n);
    for (Eigen::Index i = 0; i < bm.size(); ++i) bm.data()[i] = u(gen);
    Eigen::VectorXd u0 = Eigen::VectorXd::Zero(n);
    const int k = 1 + static_cast<int>(gen() % static_cast<std::uint64_t>(std::min<Eigen::Index>(m - 1, 4)));
    for (int i = 0; i < k; ++i) u0[static_cast<Eigen::Index>(gen() % static_cast<std::uint64_t>(n))] = 0.5 + u(gen);
    const Eigen::VectorXd f = bm * u0;
    BregmanConfig cfg;
    cfg.fit_tol = 1e-9;
    cfg.max_iter = 200000;
    cfg.accelerate = true;
    const auto r = linearized_bregman(bm, f, cfg);
    if (!r.converged) ++unconverged;
    const Eigen::VectorXd ref = oracle::constrained_l1_l2(bm, f, cfg.mu, 1.0 / spectral_norm_sq(bm));
    worst = std::max(worst, (r.u - ref).norm());
  }
  report(worst <= 1e-3 && unconverged == 0, "Bregman-oracle equivalence",
         std::to_string(instances) + " instances (<= 20 unknowns), max 2-norm gap " + fmt(worst) + " (<= 1e-3), " +
             std::to_string(unconverged) + " unconverged");
}

std::vector<std::string> names(std::size_t k) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back("s" + std::to_string(i));
  return out;
}

ConcentrationBounds bounds(const std::vector<double>& c, std::optional<double> total = std::nullopt) {
  ConcentrationBounds b;
  for (std::size_t i = 0; i < c.size(); ++i) b.per_substance["s" + std::to_string(i)] = c[i];
  b.total_bound = total;
  return b;
}

void constrained_ls_correctness() {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double interior = 0, violation = 0;
  int beaten = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index p = 60, k = 4, m = 5;
    Eigen::MatrixXd a(p, k), s0(k, m);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(gen);
    for (Eigen::Index i = 0; i < s0.size(); ++i) s0.data()[i] = 0.1 + 0.8 * u(gen);
    const auto s = box_constrained_ls(a * s0, a, names(k), bounds(std::vector<double>(k, 1.0)));
    interior = std::max(interior, (s.values - s0).norm() / s0.norm());
  }
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index p = 40, k = 3, m = 4;
    Eigen::MatrixXd a(p, k), x(p, m);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(gen);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * u(gen);
    const std::vector<double> upper{1.0 / 3.0, 0.5, 2.0};
    const std::optional<double> total = trial % 2 ? std::optional<double>(0.6) : std::nullopt;
    const auto s = box_constrained_ls(x, a, names(k), bounds(upper, total));
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = 0; i < k; ++i) {
        violation = std::max(violation, -s.values(i, j));
        violation = std::max(violation, s.values(i, j) - upper[static_cast<std::size_t>(i)]);
      }
      if (total) violation = std::max(violation, s.values.col(j).sum() - *total);
    }
    const double best = ls_objective(x, a, s.values);
    for (int n = 0; n < 1000; ++n) {
      Eigen::MatrixXd sp(k, m);
      for (Eigen::Index j = 0; j < m; ++j) {
        double room = total.value_or(INFINITY);
        for (Eigen::Index i = 0; i < k; ++i) {
          sp(i, j) = std::min(upper[static_cast<std::size_t>(i)], room) * u(gen);
          room -= sp(i, j);
        }
      }
      if (ls_objective(x, a, sp) < best) ++beaten;
    }
  }
  const auto b1 = gen_benchmark(benchmark_preset(1));
  const auto third = box_constrained_ls(b1.x, b1.library, {"methanol"}, b1.bounds);
  violation = std::max({violation, third.values.maxCoeff() - 1.0 / 3.0, -third.values.minCoeff()});

  const bool ok = interior <= 1e-6 && beaten == 0 && violation <= 1e-12 && third.converged;
  report(ok, "constrained LS correctness",
         "interior rel. error " + fmt(interior) + " (<= 1e-6), random feasible points beating the fit " +
             std::to_string(beaten) + " of 10000, worst bound violation " + fmt(violation) +
             " (<= 1e-12, bound 1/3 case included)");
}

struct BenchRun {
  Benchmark bench;
  PipelineRun run;
  double seconds = 0;
};

BenchRun auto_run(int preset) {
  const auto t0 = Clock::now();
  auto bench = gen_benchmark(benchmark_preset(preset));
  std::vector<InitialKnown> knowns;
  for (const auto& name : bench.truth.known_names) knowns.push_back({name, bench.bounds.bound(name)});
  auto run = run_pipeline(make_session("acceptance", bench.x, bench.library, knowns, bench.bounds.total_bound),
                          auto_confirmer(0.9));
  const double s = seconds_since(t0);
  return {std::move(bench), std::move(run), s};
}

double truth_cosine(const BenchRun& b, const std::string& name) {
  const auto& t = b.bench.truth;
  const auto pos = std::find(t.source_names.begin(), t.source_names.end(), name) - t.source_names.begin();
  for (const auto& k : b.run.session.known) {
    if (k.name != name || pos == static_cast<std::ptrdiff_t>(t.source_names.size())) continue;
    const Eigen::VectorXd col = t.sources.col(pos);
    return cosine_similarity(k.reference, std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
  }
  return 0.0;
}

void two_iteration_pipeline(const BenchRun& b) {
  const auto& s = b.run.session;
  auto iteration_of = [&](const std::string& name) {
    for (const auto& k : s.known)
      if (k.name == name && k.origin == Origin::confirmed) return k.confirmed_iteration;
    return 0;
  };
  const auto& u = b.bench.truth.source_names;
  const double c1 = truth_cosine(b, u[0]), c2 = truth_cosine(b, u[1]);
  const bool ok = s.status == SessionStatus::converged && iteration_of(u[0]) == 1 && iteration_of(u[1]) == 2 &&
                  c1 >= 0.95 && c2 >= 0.95;
  report(ok, "two-iteration pipeline",
         u[0] + " confirmed in iteration " + std::to_string(iteration_of(u[0])) + ", " + u[1] + " in iteration " +
             std::to_string(iteration_of(u[1])) + ", cosines " + fmt(c1) + "/" + fmt(c2) + " (>= 0.95), status " +
             to_string(s.status));
}

void end_to_end_runtime(const BenchRun& b1, const BenchRun& b2) {
  report(b1.seconds < 10.0 && b2.seconds < 10.0, "end-to-end runtime",
         "benchmark 1 " + fmt(b1.seconds, 3) + " s, benchmark 2 " + fmt(b2.seconds, 3) + " s (< 10 s each)");
}

void baseline_contrast() {
  const auto dir = scratch("compare");
  bool ok = cli({"gen", "--benchmark", "1", "-o", dir.string()}).code == 0;
  const auto r = cli({"compare-nmf", "--data", (dir / "mixtures.csv").string(), "--lib", (dir / "library").string(),
                      "--known", "methanol:1/3", "--truth", (dir / "truth.json").string()});
  std::vector<double> cb, nmf;
  if (ok && r.code == 0) {
    const auto j = Json::parse(r.out);
    for (const auto& [k, v] : j.at("cone_bregman").at("cosine_to_truth").items()) cb.push_back(v.get<double>());
    for (const auto& [k, v] : j.at("nmf").at("cosine_to_truth").items()) nmf.push_back(v.get<double>());
  }
  ok = ok && r.code == 0 && cb.size() == 2 && nmf.size() == 2 && min_of(cb) >= 0.95;
  report(ok, "baseline contrast", "cone+Bregman " + list(cb) + " (>= 0.95), NMF " + list(nmf) + " (reported)");
  fs::remove_all(dir);
}

void determinism() {
  const auto a = scratch("det_a"), b = scratch("det_b");
  bool gen_ok = true, report_ok = true;
  for (const auto& bench : {"1", "2"}) {
    gen_ok = gen_ok && cli({"gen", "--benchmark", bench, "--seed", "7", "-o", a.string()}).code == 0 &&
             cli({"gen", "--benchmark", bench, "--seed", "7", "-o", b.string()}).code == 0 && same_files(a, b);
    auto pipeline = [&](const fs::path& dir) {
      std::vector<std::string> args{"pipeline", "--data", (dir / "mixtures.csv").string(), "--lib",
                                    (dir / "library").string()};
      const auto truth = Json::parse(read_file(dir / "truth.json"));
      for (const auto& name : truth.at("known_names"))
        args.push_back("--known=" + name.get<std::string>() + ":" + fmt(truth.at("bounds").at(name.get<std::string>()).get<double>(), 17));
      if (!truth.at("total_bound").is_null()) args.push_back("--total-bound=" + fmt(truth.at("total_bound").get<double>(), 17));
      return cli(args);
    };
    const auto ra = pipeline(a), rb = pipeline(b);
    report_ok = report_ok && ra.code == 0 && !ra.out.empty() && ra.out == rb.out;
  }

  const auto bench = gen_benchmark(benchmark_preset(1));
  const auto r = as_residual(bench, bench.truth.sources * bench.truth.mixing);
  NmfConfig nc;
  nc.n = 2;
  nc.seed = 3;
  const auto n1 = nmf_factorize(r, nc), n2 = nmf_factorize(r, nc);
  const bool nmf_ok = n1.w == n2.w && n1.m == n2.m && n1.objective_history == n2.objective_history;

  report(gen_ok && nmf_ok && report_ok, "determinism",
         std::string("generator ") + (gen_ok ? "identical" : "differs") + ", NMF " + (nmf_ok ? "identical" : "differs") +
             ", pipeline report " + (report_ok ? "identical" : "differs"));
  fs::remove_all(a);
  fs::remove_all(b);
}

}  // namespace

int main() {
  try {
    exact_cone_recovery();
    sparse_recovery_fidelity();
    bregman_oracle_equivalence();
    constrained_ls_correctness();
    const auto b1 = auto_run(1);
    const auto b2 = auto_run(2);
    two_iteration_pipeline(b2);
    end_to_end_runtime(b1, b2);
    baseline_contrast();
    determinism();
  } catch (const std::exception& e) {
    std::cout << "FAIL  acceptance run aborted  " << e.what() << "\n";
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria met" : std::to_string(failures) + " criterion(s) not met") << "\n";
  return failures == 0 ? 0 : 1;
}
