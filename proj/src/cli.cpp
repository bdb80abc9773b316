#include "semiblind/cli.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "semiblind/cls_fit.hpp"
#include "semiblind/cone.hpp"
#include "semiblind/nmf.hpp"
#include "semiblind/pipeline.hpp"
#include "semiblind/service.hpp"
#include "semiblind/session_json.hpp"
#include "semiblind/sparse_recovery.hpp"
#include "semiblind/synth.hpp"

namespace semiblind::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

double parse_number(const std::string& text) {
  auto parse = [&](const std::string& t) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      throw UsageError("not a number: '" + text + "'");
    }
    if (used != t.size()) throw UsageError("not a number: '" + text + "'");
    return v;
  };
  if (const auto slash = text.find('/'); slash != std::string::npos) {
    const double den = parse(text.substr(slash + 1));
    if (den == 0.0) throw UsageError("zero denominator in '" + text + "'");
    return parse(text.substr(0, slash)) / den;
  }
  return parse(text);
}

InitialKnown parse_known(const std::string& spec) {
  const auto colon = spec.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size())
    throw UsageError("--known expects name:bound, got '" + spec + "'");
  const double bound = parse_number(spec.substr(colon + 1));
  if (!(bound >= 0.0) || !std::isfinite(bound)) throw UsageError("bound of '" + spec.substr(0, colon) + "' must be >= 0");
  return {spec.substr(0, colon), bound};
}

std::vector<InitialKnown> parse_knowns(const std::vector<std::string>& specs) {
  std::vector<InitialKnown> out;
  for (const auto& s : specs) out.push_back(parse_known(s));
  return out;
}

std::optional<std::size_t> parse_n(const std::string& text) {
  if (text == "auto") return std::nullopt;
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    throw UsageError("--n expects a positive integer or 'auto', got '" + text + "'");
  }
  if (used != text.size() || v < 1) throw UsageError("--n expects a positive integer or 'auto', got '" + text + "'");
  return static_cast<std::size_t>(v);
}

ConcentrationBounds bounds_of(const std::vector<InitialKnown>& knowns, std::optional<double> total) {
  ConcentrationBounds b;
  for (const auto& k : knowns) b.per_substance[k.name] = k.bound;
  b.total_bound = total;
  return b;
}

std::vector<std::string> names_of(const std::vector<InitialKnown>& knowns) {
  std::vector<std::string> out;
  for (const auto& k : knowns) out.push_back(k.name);
  return out;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  if (!f.flush()) throw std::runtime_error("cannot write " + path);
}

// Shared numeric flags of the steps that extract candidates.
struct ExtractFlags {
  std::string n = "auto";
  std::size_t max_n = ConeOptions{}.max_n;
  double noise_floor = ConeOptions{}.noise_floor;
  double mu = BregmanConfig{}.mu;
  std::optional<double> delta;
  int bregman_iter = BregmanConfig{}.max_iter;
  double fit_tol = BregmanConfig{}.fit_tol;
  bool accelerate = false;

  void add(CLI::App* app) {
    app->add_option("--n", n, "number of sources, or 'auto'")->capture_default_str();
    app->add_option("--max-n", max_n, "largest n considered by 'auto'")->capture_default_str();
    app->add_option("--noise-floor", noise_floor, "score floor for 'auto', relative to the top score")->capture_default_str();
    app->add_option("--mu", mu, "l1 weight of the sparse recovery")->capture_default_str();
    app->add_option("--delta", delta, "Bregman step size (default 1/||M||^2)");
    app->add_option("--bregman-iter", bregman_iter, "Bregman iteration cap")->capture_default_str();
    app->add_option("--fit-tol", fit_tol, "Bregman relative fit tolerance")->capture_default_str();
    app->add_flag("--accelerate", accelerate, "Bregman iteration with Nesterov momentum");
  }

  ConeOptions cone() const {
    ConeOptions c;
    c.n = parse_n(n);
    c.max_n = max_n;
    c.noise_floor = noise_floor;
    if (max_n < 1) throw UsageError("--max-n must be >= 1");
    if (!(noise_floor >= 0.0 && noise_floor < 1.0)) throw UsageError("--noise-floor must lie in [0, 1)");
    return c;
  }

  BregmanConfig bregman() const {
    BregmanConfig b;
    b.mu = mu;
    b.delta = delta;
    b.max_iter = bregman_iter;
    b.fit_tol = fit_tol;
    b.accelerate = accelerate;
    try {
      b.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return b;
  }
};

struct FitFlags {
  std::vector<std::string> known;
  std::optional<double> total_bound;
  double tol = BoxLsOptions{}.tol;
  int max_iter = BoxLsOptions{}.max_iter;

  void add(CLI::App* app) {
    app->add_option("--known", known, "known substance and bound, name:bound (repeatable; bound may be a fraction)");
    app->add_option("--total-bound", total_bound, "cap on the summed concentration of the knowns");
    app->add_option("--ls-tol", tol, "projected-gradient tolerance")->capture_default_str();
    app->add_option("--ls-iter", max_iter, "projected-gradient iteration cap")->capture_default_str();
  }

  BoxLsOptions ls() const {
    BoxLsOptions o{tol, max_iter};
    try {
      o.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (total_bound && !(*total_bound > 0.0)) throw UsageError("--total-bound must be > 0");
    return o;
  }
};

// Known-reference fit and clamped residual, shared by fit and compare-nmf.
struct Fitted {
  MixtureMatrix x;
  std::optional<ConcentrationMatrix> s;
  ResidualMatrix residual;
};

Fitted fit_knowns(const MixtureMatrix& x, const ReferenceLibrary& lib, const std::vector<InitialKnown>& knowns,
                  const FitFlags& flags) {
  const auto opts = flags.ls();
  if (knowns.empty()) return {x, std::nullopt, compute_residual(x.values(), Eigen::MatrixXd::Zero(x.rows(), 0), Eigen::MatrixXd::Zero(0, x.cols()), x.grid())};
  for (const auto& k : knowns)
    if (!lib.contains(k.name)) throw std::runtime_error("known substance '" + k.name + "' is not in the library");
  auto s = box_constrained_ls(x, lib, names_of(knowns), bounds_of(knowns, flags.total_bound), opts);
  const auto names = names_of(knowns);
  auto r = compute_residual(x, lib.matrix(names), s);
  return {x, std::move(s), std::move(r)};
}

Json vec_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

int cmd_gen(int benchmark, std::optional<std::uint64_t> seed, std::optional<double> noise, std::optional<std::size_t> p,
            std::optional<std::size_t> m, const std::string& out_dir, std::ostream& err) {
  BenchmarkConfig cfg;
  try {
    cfg = benchmark_preset(benchmark);
    if (seed) cfg.seed = *seed;
    if (noise) cfg.noise_sigma = *noise;
    if (p) cfg.p = *p;
    if (m) cfg.m = *m;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto b = gen_benchmark(cfg);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  save_spectra_csv(dir / "mixtures.csv", b.x);
  fs::remove_all(dir / "library");
  save_library_dir(dir / "library", b.library);
  Json truth = to_json(b.truth);
  Json bounds = Json::object();
  for (const auto& [name, v] : b.bounds.per_substance) bounds[name] = v;
  truth["bounds"] = bounds;
  truth["total_bound"] = b.bounds.total_bound ? Json(*b.bounds.total_bound) : Json(nullptr);
  truth["benchmark"] = benchmark;
  write_file_atomic(dir / "truth.json", truth.dump(2) + "\n");
  err << "wrote " << (dir / "mixtures.csv").string() << ", " << (dir / "library").string() << "/ ("
      << b.library.size() << " entries), " << (dir / "truth.json").string() << "\n";
  return 0;
}

int cmd_fit(const std::string& data, const std::string& lib_dir, const FitFlags& flags, bool clamp,
            const std::string& out_path, std::ostream& out) {
  const auto knowns = parse_knowns(flags.known);
  if (knowns.empty()) throw UsageError("fit needs at least one --known");
  flags.ls();
  const auto x = load_spectra_csv(data);
  const auto lib = load_library_dir(lib_dir, x.grid());
  auto fitted = fit_knowns(x, lib, knowns, flags);
  const auto& s = *fitted.s;
  Json subs = Json::array();
  for (std::size_t i = 0; i < s.substance_names.size(); ++i)
    subs.push_back({{"name", s.substance_names[i]}, {"concentrations", vec_json(s.values.row(static_cast<Eigen::Index>(i)).transpose())}});
  const double xn = x.values().norm();
  Json report = {{"substances", std::move(subs)},
                 {"converged", s.converged},
                 {"stationarity", s.stationarity},
                 {"residual_norm_ratio", xn > 0 ? fitted.residual.values.norm() / xn : 0.0},
                 {"negative_fraction", fitted.residual.negative_fraction},
                 {"negative_min", fitted.residual.negative_min}};
  out << report.dump(2) << "\n";
  if (!out_path.empty()) {
    const auto r = clamp ? clamp_nonnegative(fitted.residual) : fitted.residual;
    emit(to_csv(MixtureMatrix(x.grid(), r.values, x.labels(), x.laser_wavelengths())), out_path, out);
  }
  return 0;
}

ResidualMatrix load_residual(const std::string& path, std::ostream& err) {
  const auto x = load_spectra_csv(path);
  auto r = compute_residual(x.values(), Eigen::MatrixXd::Zero(x.rows(), 0), Eigen::MatrixXd::Zero(0, x.cols()), x.grid());
  if (r.negative_fraction > 0.0)
    err << "clamping " << r.negative_fraction * 100.0 << "% negative entries (min " << r.negative_min << ")\n";
  return clamp_nonnegative(r);
}

int cmd_score(const std::string& data, std::size_t top, bool raw, const ExtractFlags& flags, const std::string& out_path,
              std::ostream& out, std::ostream& err) {
  const auto cone_opts = flags.cone();
  const auto r = load_residual(data, err);
  std::vector<RowScore> scores;
  Json extra = Json::object();
  if (raw) {
    scores = score_rows(r, cone_opts.scoring);
  } else {
    const auto c = extract_mixing(r, cone_opts);
    scores = c.scores;
    extra = {{"n", c.n}, {"n_estimated", c.n_estimated}, {"distinct_directions", c.distinct_directions}};
  }
  std::stable_sort(scores.begin(), scores.end(), [](const RowScore& a, const RowScore& b) { return a.score > b.score; });
  if (top > 0 && scores.size() > top) scores.resize(top);
  Json list = Json::array();
  for (const auto& s : scores) list.push_back({{"row", s.row_index}, {"wavenumber", r.grid[s.row_index]}, {"score", s.score}});
  Json report = {{"rows", r.values.rows()}, {"scores", std::move(list)}};
  report.update(extra);
  emit(report.dump(2) + "\n", out_path, out);
  return 0;
}

int cmd_extract(const std::string& data, const ExtractFlags& flags, const std::string& method, const std::string& out_path,
                std::ostream& out, std::ostream& err) {
  const auto cone_opts = flags.cone();
  const auto bregman = flags.bregman();
  RecoveryMethod how;
  try {
    how = recovery_method_from_string(method);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto r = load_residual(data, err);
  const auto c = extract_mixing(r, cone_opts);
  const SourceMatrix w = how == RecoveryMethod::bregman ? recover_sources(r, c.estimate, bregman)
                         : how == RecoveryMethod::pinv  ? pinv_recover(r, c.estimate)
                                                        : nnls_recover(r, c.estimate);
  std::vector<std::string> labels;
  for (std::size_t j = 0; j < c.n; ++j) labels.push_back("candidate" + std::to_string(j));
  emit(to_csv(MixtureMatrix(r.grid, w.values, labels, std::vector<double>(c.n, std::numeric_limits<double>::quiet_NaN()))),
       out_path, out);
  Json rows = Json::array();
  for (std::size_t j = 0; j < c.n; ++j)
    rows.push_back({{"candidate", j},
                    {"row", c.estimate.source_indices[j]},
                    {"score", c.estimate.scores[j]},
                    {"mixing", vec_json(c.estimate.rows.row(static_cast<Eigen::Index>(j)).transpose())}});
  Json summary = {{"n", c.n},
                  {"n_estimated", c.n_estimated},
                  {"method", to_string(w.method)},
                  {"negative_count", w.negative_count},
                  {"unconverged_rows", w.unconverged_rows},
                  {"candidates", std::move(rows)}};
  (out_path.empty() ? err : out) << summary.dump(2) << "\n";
  return 0;
}

int cmd_match(const std::string& candidates, const std::string& lib_dir, std::size_t top_k, const std::string& out_path,
              std::ostream& out) {
  if (top_k < 1) throw UsageError("--top-k must be >= 1");
  const auto x = load_spectra_csv(candidates);
  const auto lib = load_library_dir(lib_dir, x.grid());
  Json list = Json::array();
  for (std::size_t j = 0; j < x.cols(); ++j) {
    Json ranked = Json::array();
    for (const auto& m : match_library(x.column(j), lib, top_k, j).ranked)
      ranked.push_back({{"name", m.name}, {"similarity", m.similarity}});
    list.push_back({{"candidate", j}, {"label", x.labels()[j]}, {"matches", std::move(ranked)}});
  }
  emit(Json{{"matches", std::move(list)}}.dump(2) + "\n", out_path, out);
  return 0;
}

std::vector<std::vector<Decision>> load_script(const std::string& path) {
  const auto j = Json::parse(read_file(path));
  if (!j.is_array()) throw std::runtime_error("decisions file must hold an array (one list per iteration)");
  std::vector<std::vector<Decision>> script;
  for (const auto& step : j) {
    std::vector<Decision> ds;
    for (const auto& d : step) ds.push_back(decision_from_json(d));
    script.push_back(std::move(ds));
  }
  return script;
}

// One line per candidate: empty accepts the best not-yet-known match, '-'
// or 'reject' rejects, anything else confirms under that name.
Confirmer interactive_confirmer(std::istream& in, std::ostream& err) {
  return [&in, &err](const Session& s) {
    std::vector<Decision> out;
    std::set<std::string> taken;
    const auto* rec = s.latest();
    for (const auto& c : rec->candidates) {
      std::string suggestion;
      err << "iteration " << rec->index << ", candidate " << c.index << " (row " << c.source_row << "):";
      for (const auto& m : c.match.ranked) {
        err << " " << m.name << "=" << m.similarity;
        if (suggestion.empty() && !s.has_known(m.name) && !taken.contains(m.name)) suggestion = m.name;
      }
      err << "\n  name to confirm [" << (suggestion.empty() ? "-" : suggestion) << "], '-' rejects: " << std::flush;
      std::string line;
      if (!std::getline(in, line)) line = "-";
      line.erase(0, line.find_first_not_of(" \t"));
      line.erase(line.find_last_not_of(" \t\r") + 1);
      if (line.empty()) line = suggestion.empty() ? "-" : suggestion;
      if (line == "-" || line == "reject" || s.has_known(line) || taken.contains(line)) {
        out.push_back(Decision::reject(c.index));
      } else {
        taken.insert(line);
        out.push_back(Decision::confirm(c.index, line));
      }
    }
    return out;
  };
}

struct PipelineFlags {
  std::string data, lib, report, session, summary;
  FitFlags fit;
  ExtractFlags extract;
  std::optional<double> auto_threshold;
  std::string decisions;
  bool interactive = false;
  double converge = PipelineConfig{}.converge_ratio;
  int max_iterations = PipelineConfig{}.max_iterations;
  std::size_t top_k = PipelineConfig{}.top_k;
  double bound_slack = PipelineConfig{}.bound_slack;
  bool timings = false;
};

int cmd_pipeline(const PipelineFlags& f, std::istream& in, std::ostream& out, std::ostream& err) {
  const int modes = (f.auto_threshold ? 1 : 0) + (f.decisions.empty() ? 0 : 1) + (f.interactive ? 1 : 0);
  if (modes > 1) throw UsageError("choose one of --auto, --decisions, --interactive");
  PipelineConfig cfg;
  cfg.ls = f.fit.ls();
  cfg.cone = f.extract.cone();
  cfg.bregman = f.extract.bregman();
  cfg.auto_threshold = f.auto_threshold.value_or(cfg.auto_threshold);
  cfg.converge_ratio = f.converge;
  cfg.max_iterations = f.max_iterations;
  cfg.top_k = f.top_k;
  cfg.bound_slack = f.bound_slack;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto knowns = parse_knowns(f.fit.known);

  Confirmer confirmer = auto_confirmer(cfg.auto_threshold);
  if (!f.decisions.empty()) confirmer = scripted_confirmer(load_script(f.decisions));
  if (f.interactive) confirmer = interactive_confirmer(in, err);

  auto write_report = [&](const Json& report) { emit(report.dump(2) + "\n", f.report, out); };
  std::optional<PipelineRun> run;
  try {
    const auto x = load_spectra_csv(f.data);
    const auto lib = load_library_dir(f.lib, x.grid());
    auto session = make_session("cli", x, lib, knowns, f.fit.total_bound, cfg);
    run = run_pipeline(std::move(session), confirmer);
  } catch (const std::exception& e) {
    write_report(Json{{"status", "failed"}, {"error", e.what()}, {"substances", Json::array()}, {"iterations", Json::array()}});
    throw;
  }
  write_report(report_to_json(run->session, run->report, f.timings));
  if (!f.session.empty()) save_session(f.session, run->session);
  const auto summary = text_summary(run->session, run->report);
  err << summary;
  if (!f.summary.empty()) emit(summary, f.summary, out);
  if (run->report.error) {
    err << "error: " << *run->report.error << "\n";
    return 1;
  }
  return 0;
}

struct CompareFlags {
  std::string data, lib, truth, out;
  FitFlags fit;
  ExtractFlags extract;
  std::uint64_t nmf_seed = NmfConfig{}.seed;
  int nmf_iter = NmfConfig{}.max_iter;
};

int cmd_compare_nmf(const CompareFlags& f, std::ostream& out, std::ostream& err) {
  const auto cone_opts = f.extract.cone();
  const auto bregman = f.extract.bregman();
  const auto knowns = parse_knowns(f.fit.known);
  if (f.nmf_iter < 1) throw UsageError("--nmf-iter must be >= 1");
  const auto x = load_spectra_csv(f.data);
  const auto lib = load_library_dir(f.lib, x.grid());
  const auto fitted = fit_knowns(x, lib, knowns, f.fit);
  const auto r = clamp_nonnegative(fitted.residual);

  const auto cone = extract_mixing(r, cone_opts);
  const auto w = recover_sources(r, cone.estimate, bregman);
  NmfConfig nc;
  nc.n = cone.n;
  nc.seed = f.nmf_seed;
  nc.max_iter = f.nmf_iter;
  const auto nmf = nmf_factorize(r, nc);

  std::optional<GroundTruth> truth;
  if (!f.truth.empty()) {
    if (fs::exists(f.truth))
      truth = truth_from_json(Json::parse(read_file(f.truth)));
    else
      err << "no ground truth at " << f.truth << "; similarities unavailable\n";
  }
  auto method = [&](const Eigen::MatrixXd& est) {
    Json j = Json::object();
    if (truth && truth->sources.rows() == est.rows()) {
      const auto cos = matched_cosines(truth->sources, est);
      Json per = Json::object();
      for (std::size_t i = 0; i < cos.size(); ++i) per[truth->source_names[i]] = cos[i];
      j["cosine_to_truth"] = std::move(per);
    } else {
      j["cosine_to_truth"] = "unavailable";
    }
    return j;
  };
  Json cb = method(w.values);
  cb["unconverged_rows"] = w.unconverged_rows;
  cb["negative_count"] = w.negative_count;
  Json nm = method(nmf.w);
  nm["iterations"] = nmf.iterations;
  nm["objective"] = nmf.objective_history.back();
  nm["seed"] = f.nmf_seed;
  Json report = {{"n", cone.n},
                 {"n_estimated", cone.n_estimated},
                 {"negative_fraction", r.negative_fraction},
                 {"cone_bregman", std::move(cb)},
                 {"nmf", std::move(nm)}};
  emit(report.dump(2) + "\n", f.out, out);
  return 0;
}

AnalystService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const std::string& data_dir, const std::string& lib_dir, const std::string& host, int port,
              const std::string& static_dir, std::ostream& err) {
  if (port < 0 || port > 65535) throw UsageError("--port must lie in [0, 65535]");
  ServiceOptions opts;
  opts.data_dir = data_dir;
  opts.library = load_library_dir(lib_dir);
  if (!static_dir.empty()) opts.static_dir = static_dir;
  AnalystService service(std::move(opts));
  const int bound = service.bind(host, port);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  err << "listening on http://" << host << ":" << bound << "\n" << std::flush;
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const bool ok = service.run();
  g_service = nullptr;
  return ok ? 0 : 1;
}

}  // namespace

int run(int argc, char** argv) { return run(argc, argv, std::cin, std::cout, std::cerr); }

int run(int argc, char** argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-blind Raman unmixing: bounded fit of known references, cone extraction of unknowns, library matching."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto* gen = app.add_subcommand("gen", "write a synthetic benchmark (mixtures.csv, library/, truth.json)");
  int benchmark = 1;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise;
  std::optional<std::size_t> gen_p, gen_m;
  std::string gen_out;
  gen->add_option("--benchmark", benchmark, "preset: 1 or 2")->capture_default_str();
  gen->add_option("--seed", seed, "generator seed (preset default 7)");
  gen->add_option("--noise", noise, "noise sigma as a fraction of the maximum intensity");
  gen->add_option("--p", gen_p, "grid points");
  gen->add_option("--m", gen_m, "mixtures");
  gen->add_option("-o,--out", gen_out, "output directory")->required();

  auto* fit = app.add_subcommand("fit", "bounded least-squares fit of known references; residual CSV with -o");
  std::string fit_data, fit_lib, fit_out;
  FitFlags fit_flags;
  bool fit_clamp = false;
  fit->add_option("--data", fit_data, "mixture CSV")->required();
  fit->add_option("--lib", fit_lib, "library directory")->required();
  fit_flags.add(fit);
  fit->add_flag("--clamp", fit_clamp, "clamp negative residual entries in the written CSV");
  fit->add_option("-o,--out", fit_out, "residual CSV");

  auto* score = app.add_subcommand("score", "row scores of a residual CSV");
  std::string score_data, score_out;
  std::size_t score_top = 10;
  bool score_raw = false;
  ExtractFlags score_flags;
  score->add_option("--data", score_data, "residual CSV (negatives are clamped)")->required();
  score->add_option("--top", score_top, "rows to list, 0 for all")->capture_default_str();
  score->add_flag("--raw", score_raw, "score every row against all others, without collapsing parallel rows");
  score_flags.add(score);
  score->add_option("-o,--out", score_out, "output JSON");

  auto* extract = app.add_subcommand("extract", "mixing rows and source spectra from a residual CSV");
  std::string ex_data, ex_out, ex_method = "bregman";
  ExtractFlags ex_flags;
  extract->add_option("--data", ex_data, "residual CSV (negatives are clamped)")->required();
  ex_flags.add(extract);
  extract->add_option("--method", ex_method, "bregman, pinv or nnls")->capture_default_str();
  extract->add_option("-o,--out", ex_out, "source spectra CSV (one column per candidate)");

  auto* match = app.add_subcommand("match", "cosine match of candidate spectra against a library");
  std::string m_cand, m_lib, m_out;
  std::size_t m_top = PipelineConfig{}.top_k;
  match->add_option("--candidates", m_cand, "spectra CSV, one candidate per column")->required();
  match->add_option("--lib", m_lib, "library directory")->required();
  match->add_option("--top-k", m_top, "matches per candidate")->capture_default_str();
  match->add_option("-o,--out", m_out, "output JSON");

  auto* pipe = app.add_subcommand("pipeline", "full identification loop; report JSON to --report or stdout");
  PipelineFlags pf;
  pipe->add_option("--data", pf.data, "mixture CSV")->required();
  pipe->add_option("--lib", pf.lib, "library directory")->required();
  pf.fit.add(pipe);
  pf.extract.add(pipe);
  pipe->add_option("--auto", pf.auto_threshold, "auto-confirm at this cosine threshold (default mode, 0.9)");
  pipe->add_option("--decisions", pf.decisions, "JSON file with one decision list per iteration");
  pipe->add_flag("--interactive", pf.interactive, "ask for each candidate on standard input");
  pipe->add_option("--converge", pf.converge, "stop when ||R||/||X|| falls to this")->capture_default_str();
  pipe->add_option("--max-iterations", pf.max_iterations, "iteration cap")->capture_default_str();
  pipe->add_option("--top-k", pf.top_k, "library matches kept per candidate")->capture_default_str();
  pipe->add_option("--bound-slack", pf.bound_slack, "bound of a confirmed component, times its peak concentration")
      ->capture_default_str();
  pipe->add_option("--report", pf.report, "report JSON path");
  pipe->add_option("--session", pf.session, "also save the full session JSON here");
  pipe->add_option("--summary", pf.summary, "also write the text summary here");
  pipe->add_flag("--timings", pf.timings, "include wall-clock timings in the report");

  auto* cmp = app.add_subcommand("compare-nmf", "cone + sparse recovery against NMF on the same residual");
  CompareFlags cf;
  cmp->add_option("--data", cf.data, "mixture CSV")->required();
  cmp->add_option("--lib", cf.lib, "library directory")->required();
  cmp->add_option("--truth", cf.truth, "ground-truth JSON written by gen");
  cf.fit.add(cmp);
  cf.extract.add(cmp);
  cmp->add_option("--nmf-seed", cf.nmf_seed, "NMF initialisation seed")->capture_default_str();
  cmp->add_option("--nmf-iter", cf.nmf_iter, "NMF iteration cap")->capture_default_str();
  cmp->add_option("-o,--out", cf.out, "output JSON");

  auto* serve = app.add_subcommand("serve", "analyst HTTP service");
  std::string sv_data, sv_lib, sv_host = "127.0.0.1", sv_static;
  int sv_port = 8080;
  serve->add_option("--data-dir", sv_data, "session storage directory")->required();
  serve->add_option("--lib", sv_lib, "library directory")->required();
  serve->add_option("--host", sv_host, "bind address")->capture_default_str();
  serve->add_option("--port", sv_port, "port, 0 for any free port")->capture_default_str();
  serve->add_option("--static", sv_static, "directory of static UI assets served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(benchmark, seed, noise, gen_p, gen_m, gen_out, err);
    if (fit->parsed()) return cmd_fit(fit_data, fit_lib, fit_flags, fit_clamp, fit_out, out);
    if (score->parsed()) return cmd_score(score_data, score_top, score_raw, score_flags, score_out, out, err);
    if (extract->parsed()) return cmd_extract(ex_data, ex_flags, ex_method, ex_out, out, err);
    if (match->parsed()) return cmd_match(m_cand, m_lib, m_top, m_out, out);
    if (pipe->parsed()) return cmd_pipeline(pf, in, out, err);
    if (cmp->parsed()) return cmd_compare_nmf(cf, out, err);
    if (serve->parsed()) return cmd_serve(sv_data, sv_lib, sv_host, sv_port, sv_static, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace semiblind::cli
