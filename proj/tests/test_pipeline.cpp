#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "semiblind/pipeline.hpp"
#include "semiblind/session_json.hpp"
#include "semiblind/synth.hpp"

using namespace semiblind;

namespace {

struct Fixture {
  Benchmark bench;
  Session session;
};

Fixture preset_session(int id, const std::function<void(BenchmarkConfig&)>& tweak = {}) {
  auto cfg = benchmark_preset(id);
  if (tweak) tweak(cfg);
  auto bench = gen_benchmark(cfg);
  std::vector<InitialKnown> knowns;
  for (const auto& k : cfg.knowns) knowns.push_back({k.name, bench.bounds.bound(k.name)});
  auto session = make_session("s" + std::to_string(id), bench.x, bench.library, knowns, bench.bounds.total_bound);
  return {std::move(bench), std::move(session)};
}

double truth_cosine(const Fixture& f, const KnownComponent& k) {
  const auto& names = f.bench.truth.source_names;
  const auto pos = std::find(names.begin(), names.end(), k.name) - names.begin();
  REQUIRE(pos < static_cast<std::ptrdiff_t>(names.size()));
  const Eigen::VectorXd t = f.bench.truth.sources.col(pos);
  return cosine_similarity(k.reference, std::span<const double>(t.data(), static_cast<std::size_t>(t.size())));
}

const KnownComponent* find_known(const Session& s, const std::string& name) {
  for (const auto& k : s.known)
    if (k.name == name) return &k;
  return nullptr;
}

// Session JSON without the wall-clock fields.
Json untimed(const Session& s) {
  Json j = to_json(s);
  for (auto& rec : j["log"]) rec.erase("seconds");
  return j;
}

}  // namespace

TEST_CASE("library matching") {
  SpectralGrid g({1, 2, 3});
  ReferenceLibrary lib(g);
  lib.add("a", {1, 0, 0});
  lib.add("b", {0, 1, 0});
  lib.add("c", {1, 1, 0});
  auto m = match_library(Spectrum(g, {3, 0, 0}), lib, 5, 4);
  CHECK(m.candidate_index == 4);
  REQUIRE(m.ranked.size() == 3);
  CHECK(m.ranked[0].name == "a");
  CHECK(m.ranked[0].similarity == doctest::Approx(1.0));
  CHECK(m.ranked[1].name == "c");
  CHECK(m.ranked[1].similarity == doctest::Approx(std::sqrt(0.5)));
  CHECK(m.ranked[2].name == "b");
  CHECK(m.ranked[2].similarity == 0.0);
  CHECK(match_library(Spectrum(g, {0, 2, 0}), lib, 1).ranked.size() == 1);
  CHECK_THROWS_AS(match_library(Spectrum(g, {0, 0, 0}), lib, 3), std::invalid_argument);
  CHECK_THROWS_AS(match_library(Spectrum(SpectralGrid({1, 2}), {1, 0}), lib, 3), std::invalid_argument);
}

TEST_CASE("benchmark 1 resolves both unknowns in one iteration") {
  auto f = preset_session(1);
  auto run = run_pipeline(f.session, auto_confirmer(0.9));
  CHECK_FALSE(run.report.error);
  CHECK(run.session.status == SessionStatus::converged);
  for (const auto& name : f.bench.truth.source_names) {
    const auto* k = find_known(run.session, name);
    REQUIRE(k);
    CHECK(k->origin == Origin::confirmed);
    CHECK(k->confirmed_iteration == 1);
    CHECK(k->match_score >= 0.95);
    CHECK(truth_cosine(f, *k) >= 0.95);
  }
  CHECK(run.session.known.size() == 3);
}

TEST_CASE("benchmark 2 needs the feedback loop") {
  auto f = preset_session(2);
  auto run = run_pipeline(f.session, auto_confirmer(0.9));
  CHECK(run.session.status == SessionStatus::converged);
  const auto* first = find_known(run.session, "acetonitrile");
  const auto* second = find_known(run.session, "ethylene-glycol");
  REQUIRE(first);
  REQUIRE(second);
  CHECK(first->confirmed_iteration == 1);
  CHECK(second->confirmed_iteration == 2);
  CHECK(truth_cosine(f, *first) >= 0.95);
  CHECK(truth_cosine(f, *second) >= 0.95);
  const auto& it1 = run.session.log.front();
  for (const auto& c : it1.candidates)
    if (!c.match.ranked.empty() && c.match.ranked.front().name == "ethylene-glycol")
      CHECK(c.match.ranked.front().similarity < 0.9);

  SUBCASE("feeding back never raises the residual") {
    for (std::size_t i = 1; i < run.session.log.size(); ++i)
      CHECK(run.session.log[i].residual_norm_ratio <= run.session.log[i - 1].residual_norm_ratio + 1e-12);
  }
  SUBCASE("initial knowns keep the total bound") {
    const auto& s = run.session.log.back().concentrations;
    for (Eigen::Index j = 0; j < s.cols(); ++j) CHECK(s(0, j) + s(1, j) <= 0.5 + 1e-12);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        CHECK(s(i, j) >= 0.0);
        CHECK(s(i, j) <= run.session.known[static_cast<std::size_t>(i)].bound + 1e-12);
      }
  }
  SUBCASE("report lists every substance with its provenance") {
    const auto& subs = run.report.substances;
    REQUIRE(subs.size() == 4);
    for (const auto& s : subs) {
      if (s.origin == Origin::confirmed) {
        CHECK(s.iteration >= 1);
        CHECK(s.match_score >= 0.9);
      }
    }
    CHECK(run.report.residual_norm_ratios.size() == run.session.log.size());
  }
}

TEST_CASE("nothing unknown converges at once") {
  auto f = preset_session(1, [](BenchmarkConfig& c) {
    c.unknowns.clear();
    c.unknown_weights.clear();
  });
  auto run = run_pipeline(f.session, auto_confirmer(0.9));
  CHECK(run.session.status == SessionStatus::converged);
  CHECK(run.session.log.size() == 1);
  CHECK(run.session.log[0].candidates.empty());
  CHECK(run.report.substances.size() == 1);
}

TEST_CASE("scripted decisions reproduce auto mode") {
  auto f = preset_session(2);
  auto automatic = run_pipeline(f.session, auto_confirmer(0.9));
  std::vector<std::vector<Decision>> script;
  for (std::size_t i = 1; i < automatic.session.log.size(); ++i) script.push_back(automatic.session.log[i].applied);
  auto scripted = run_pipeline(f.session, scripted_confirmer(script));
  CHECK(untimed(scripted.session) == untimed(automatic.session));
  CHECK(report_to_json(scripted.session, scripted.report) == report_to_json(automatic.session, automatic.report));
}

TEST_CASE("replay is bit-exact") {
  auto f = preset_session(2);
  auto run = run_pipeline(f.session, auto_confirmer(0.9));
  auto again = replay(run.session);
  CHECK(again.status == run.session.status);
  REQUIRE(again.log.size() == run.session.log.size());
  for (std::size_t i = 0; i < again.log.size(); ++i) {
    CHECK(again.log[i].concentrations == run.session.log[i].concentrations);
    CHECK(again.log[i].residual_norm_ratio == run.session.log[i].residual_norm_ratio);
    CHECK(again.log[i].applied == run.session.log[i].applied);
  }
  for (std::size_t i = 0; i < again.known.size(); ++i) CHECK(again.known[i].reference == run.session.known[i].reference);
}

TEST_CASE("rejecting everything exhausts the session") {
  auto f = preset_session(1);
  auto s = run_iteration(f.session, {});
  REQUIRE(s.status == SessionStatus::awaiting_confirmation);
  REQUIRE(s.log[0].candidates.size() == 2);
  s = run_iteration(s, {Decision::reject(0), Decision::reject(1)});
  CHECK(s.status == SessionStatus::exhausted);
  CHECK(s.log.size() == 2);
  CHECK_FALSE(s.log[1].refit);
  CHECK(s.log[1].applied == std::vector<Decision>{Decision::reject(0), Decision::reject(1)});
  CHECK_THROWS_AS(run_iteration(s, {}), std::logic_error);
}

TEST_CASE("iteration cap") {
  auto f = preset_session(1);
  f.session.config.max_iterations = 1;
  auto s = run_iteration(f.session, {});
  CHECK(s.status == SessionStatus::exhausted);
  CHECK_FALSE(s.log[0].candidates.empty());
}

TEST_CASE("decision validation") {
  auto f = preset_session(1);
  auto s = run_iteration(f.session, {});
  CHECK_THROWS_AS(run_iteration(s, {Decision::reject(7)}), std::invalid_argument);
  CHECK_THROWS_AS(run_iteration(s, {Decision::confirm(0, "methanol")}), std::invalid_argument);
  CHECK_THROWS_AS(run_iteration(s, {Decision::confirm(0, "")}), std::invalid_argument);
  CHECK_THROWS_AS(run_iteration(s, {Decision::reject(0), Decision::reject(0)}), std::invalid_argument);
  CHECK_THROWS_AS(run_iteration(s, {Decision::confirm(0, "x"), Decision::confirm(1, "x")}), std::invalid_argument);

  SUBCASE("pending decisions are applied with the step") {
    s.pending.emplace(0, Decision::confirm(0, "ethanol"));
    CHECK(s.undecided() == std::vector<std::size_t>{1});
    CHECK_THROWS_AS(run_iteration(s, {Decision::reject(0)}), std::invalid_argument);
    auto next = run_iteration(s, {Decision::reject(1)});
    CHECK(next.log[1].applied == std::vector<Decision>{Decision::confirm(0, "ethanol"), Decision::reject(1)});
    CHECK(next.pending.empty());
    CHECK(find_known(next, "ethanol"));
  }
}

TEST_CASE("session construction errors") {
  auto f = preset_session(2);
  const auto& lib = f.bench.library;
  const auto& x = f.bench.x;
  CHECK_THROWS_AS(make_session("e", x, lib, {{"nope", 0.5}}, std::nullopt), std::invalid_argument);
  CHECK_THROWS_AS(make_session("e", x, lib, {{"methanol", 0.5}, {"methanol", 0.5}}, std::nullopt),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_session("e", x, lib, {{"methanol", -1.0}}, std::nullopt), std::invalid_argument);
  CHECK_THROWS_AS(make_session("e", x, lib, {}, 0.5), std::invalid_argument);
  ReferenceLibrary other(SpectralGrid({0, 1}));
  CHECK_THROWS_AS(make_session("e", x, other, {}, std::nullopt), std::invalid_argument);
  PipelineConfig bad;
  bad.auto_threshold = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("session json round trip") {
  auto f = preset_session(2);
  auto s = run_iteration(f.session, {});
  s.pending.emplace(1, Decision::reject(1));
  const auto path = std::filesystem::temp_directory_path() / "semiblind_test_pipeline_session.json";
  save_session(path, s);
  auto back = load_session(path);
  CHECK(to_json(back) == to_json(s));
  CHECK(back.log[0].concentrations == s.log[0].concentrations);
  CHECK(back.data == s.data);
  CHECK(back.pending.at(1) == Decision::reject(1));
  auto cont_a = run_iteration(s, {Decision::confirm(0, "acetonitrile")});
  auto cont_b = run_iteration(back, {Decision::confirm(0, "acetonitrile")});
  CHECK(untimed(cont_a) == untimed(cont_b));
  std::filesystem::remove(path);

  const auto cfg = config_from_json(to_json(s.config));
  CHECK(to_json(cfg) == to_json(s.config));
  CHECK(decision_from_json(to_json(Decision::confirm(2, "x"))) == Decision::confirm(2, "x"));
  CHECK_THROWS(decision_from_json(Json{{"candidate", 0}, {"decision", "maybe"}}));
}
