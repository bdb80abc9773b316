#include "semiblind/session_json.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace semiblind {

namespace {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_from(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

Json vec(std::span<const double> v) {
  Json out = Json::array();
  for (double x : v) out.push_back(number(x));
  return out;
}

std::vector<double> vec_from(const Json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) out.push_back(number_from(x));
  return out;
}

// Row-major array of rows.
Json mat(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(number(m(i, k)));
    out.push_back(std::move(row));
  }
  return out;
}

Eigen::MatrixXd mat_from(const Json& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : cols_if_empty;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw std::invalid_argument("ragged matrix in JSON");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = number_from(row.at(static_cast<std::size_t>(k)));
  }
  return m;
}

Json scores_json(const std::vector<RowScore>& s) {
  Json out = Json::array();
  for (const auto& r : s) out.push_back({{"row", r.row_index}, {"score", number(r.score)}});
  return out;
}

Json match_json(const MatchResult& m) {
  Json ranked = Json::array();
  for (const auto& r : m.ranked) ranked.push_back({{"name", r.name}, {"similarity", number(r.similarity)}});
  return ranked;
}

}  // namespace

Json to_json(const PipelineConfig& c) {
  Json cone = {{"n", c.cone.n ? Json(*c.cone.n) : Json(nullptr)},
               {"max_n", c.cone.max_n},
               {"noise_floor", c.cone.noise_floor},
               {"parallel_tol", c.cone.parallel_tol},
               {"prefilter_ratio", c.cone.scoring.prefilter_ratio},
               {"nnls_tol", c.cone.scoring.nnls_tol}};
  Json bregman = {{"mu", c.bregman.mu},
                  {"delta", c.bregman.delta ? Json(*c.bregman.delta) : Json(nullptr)},
                  {"max_iter", c.bregman.max_iter},
                  {"fit_tol", c.bregman.fit_tol},
                  {"accelerate", c.bregman.accelerate}};
  return {{"ls", {{"tol", c.ls.tol}, {"max_iter", c.ls.max_iter}}},
          {"cone", std::move(cone)},
          {"bregman", std::move(bregman)},
          {"auto_threshold", c.auto_threshold},
          {"converge_ratio", c.converge_ratio},
          {"max_iterations", c.max_iterations},
          {"top_k", c.top_k},
          {"bound_slack", c.bound_slack},
          {"score_report", c.score_report}};
}

PipelineConfig config_from_json(const Json& j, PipelineConfig c) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  if (auto ls = j.find("ls"); ls != j.end()) {
    c.ls.tol = ls->value("tol", c.ls.tol);
    c.ls.max_iter = ls->value("max_iter", c.ls.max_iter);
  }
  if (auto cone = j.find("cone"); cone != j.end()) {
    if (auto n = cone->find("n"); n != cone->end())
      c.cone.n = n->is_null() ? std::nullopt : std::optional<std::size_t>(n->get<std::size_t>());
    c.cone.max_n = cone->value("max_n", c.cone.max_n);
    c.cone.noise_floor = cone->value("noise_floor", c.cone.noise_floor);
    c.cone.parallel_tol = cone->value("parallel_tol", c.cone.parallel_tol);
    c.cone.scoring.prefilter_ratio = cone->value("prefilter_ratio", c.cone.scoring.prefilter_ratio);
    c.cone.scoring.nnls_tol = cone->value("nnls_tol", c.cone.scoring.nnls_tol);
  }
  if (auto b = j.find("bregman"); b != j.end()) {
    c.bregman.mu = b->value("mu", c.bregman.mu);
    if (auto d = b->find("delta"); d != b->end())
      c.bregman.delta = d->is_null() ? std::nullopt : std::optional<double>(d->get<double>());
    c.bregman.max_iter = b->value("max_iter", c.bregman.max_iter);
    c.bregman.fit_tol = b->value("fit_tol", c.bregman.fit_tol);
    c.bregman.accelerate = b->value("accelerate", c.bregman.accelerate);
  }
  c.auto_threshold = j.value("auto_threshold", c.auto_threshold);
  c.converge_ratio = j.value("converge_ratio", c.converge_ratio);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.top_k = j.value("top_k", c.top_k);
  c.bound_slack = j.value("bound_slack", c.bound_slack);
  c.score_report = j.value("score_report", c.score_report);
  c.validate();
  return c;
}

Json to_json(const Decision& d) {
  if (d.kind == Decision::Kind::confirm) return {{"candidate", d.candidate}, {"decision", "confirm"}, {"name", d.name}};
  return {{"candidate", d.candidate}, {"decision", "reject"}};
}

Decision decision_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("decision must be a JSON object");
  const auto candidate = j.at("candidate").get<std::size_t>();
  const auto kind = j.at("decision").get<std::string>();
  if (kind == "confirm") {
    auto name = j.at("name").get<std::string>();
    if (name.empty()) throw std::invalid_argument("confirm needs a non-empty name");
    return Decision::confirm(candidate, std::move(name));
  }
  if (kind == "reject") return Decision::reject(candidate);
  throw std::invalid_argument("decision must be 'confirm' or 'reject', got '" + kind + "'");
}

Json to_json(const Candidate& c) {
  return {{"index", c.index},
          {"source_row", c.source_row},
          {"score", number(c.score)},
          {"peak_concentration", number(c.peak_concentration)},
          {"mixing", vec(c.mixing)},
          {"spectrum", vec(c.spectrum)},
          {"matches", match_json(c.match)}};
}

namespace {

Candidate candidate_from_json(const Json& j) {
  Candidate c;
  c.index = j.at("index").get<std::size_t>();
  c.source_row = j.at("source_row").get<std::size_t>();
  c.score = number_from(j.at("score"));
  c.peak_concentration = number_from(j.at("peak_concentration"));
  c.mixing = vec_from(j.at("mixing"));
  c.spectrum = vec_from(j.at("spectrum"));
  c.match.candidate_index = c.index;
  for (const auto& m : j.at("matches")) c.match.ranked.push_back({m.at("name").get<std::string>(), number_from(m.at("similarity"))});
  return c;
}

IterationRecord record_from_json(const Json& j, Eigen::Index m) {
  IterationRecord r;
  r.index = j.at("index").get<int>();
  for (const auto& d : j.at("applied")) r.applied.push_back(decision_from_json(d));
  r.refit = j.at("refit").get<bool>();
  r.known_names = j.at("known_names").get<std::vector<std::string>>();
  r.concentrations = mat_from(j.at("concentrations"), m);
  r.fit_converged = j.at("fit_converged").get<bool>();
  r.residual_norm_ratio = number_from(j.at("residual_norm_ratio"));
  r.negative_fraction = number_from(j.at("negative_fraction"));
  r.negative_min = number_from(j.at("negative_min"));
  r.n_sources = j.at("n_sources").get<std::size_t>();
  r.n_estimated = j.at("n_estimated").get<bool>();
  for (const auto& s : j.at("top_scores")) r.top_scores.push_back({s.at("row").get<std::size_t>(), number_from(s.at("score"))});
  for (const auto& c : j.at("candidates")) r.candidates.push_back(candidate_from_json(c));
  r.status_after = status_from_string(j.at("status_after").get<std::string>());
  r.seconds = j.value("seconds", 0.0);
  return r;
}

}  // namespace

Json to_json(const IterationRecord& r, bool timings) {
  Json applied = Json::array();
  for (const auto& d : r.applied) applied.push_back(to_json(d));
  Json candidates = Json::array();
  for (const auto& c : r.candidates) candidates.push_back(to_json(c));
  Json out = {{"index", r.index},
              {"applied", std::move(applied)},
              {"refit", r.refit},
              {"known_names", r.known_names},
              {"concentrations", mat(r.concentrations)},
              {"fit_converged", r.fit_converged},
              {"residual_norm_ratio", number(r.residual_norm_ratio)},
              {"negative_fraction", number(r.negative_fraction)},
              {"negative_min", number(r.negative_min)},
              {"n_sources", r.n_sources},
              {"n_estimated", r.n_estimated},
              {"top_scores", scores_json(r.top_scores)},
              {"candidates", std::move(candidates)},
              {"status_after", to_string(r.status_after)}};
  if (timings) out["seconds"] = r.seconds;
  return out;
}

Json to_json(const Session& s) {
  Json known = Json::array();
  for (const auto& k : s.known) {
    Json e = {{"name", k.name}, {"bound", number(k.bound)}, {"origin", to_string(k.origin)}};
    if (k.origin == Origin::confirmed) {
      e["iteration"] = k.confirmed_iteration;
      e["candidate"] = k.candidate_index;
      e["match_score"] = number(k.match_score);
    }
    e["reference"] = vec(k.reference);
    known.push_back(std::move(e));
  }
  Json library = Json::object();
  for (const auto& [name, v] : s.library.entries()) library[name] = vec(v);
  Json log = Json::array();
  for (const auto& r : s.log) log.push_back(to_json(r, true));
  Json pending = Json::array();
  for (const auto& [k, d] : s.pending) pending.push_back(to_json(d));
  Json wl = Json::array();
  for (double w : s.data.laser_wavelengths()) wl.push_back(number(w));
  return {{"id", s.id},
          {"status", to_string(s.status)},
          {"total_bound", s.total_bound ? Json(*s.total_bound) : Json(nullptr)},
          {"config", to_json(s.config)},
          {"data",
           {{"wavenumbers", vec(s.data.grid().wavenumbers())},
            {"labels", s.data.labels()},
            {"laser_wavelengths", std::move(wl)},
            {"values", mat(s.data.values())}}},
          {"library", std::move(library)},
          {"known", std::move(known)},
          {"log", std::move(log)},
          {"pending", std::move(pending)}};
}

Session session_from_json(const Json& j) {
  const auto& d = j.at("data");
  SpectralGrid grid(vec_from(d.at("wavenumbers")));
  const auto labels = d.at("labels").get<std::vector<std::string>>();
  MixtureMatrix data(grid, mat_from(d.at("values"), static_cast<Eigen::Index>(labels.size())), labels,
                     vec_from(d.at("laser_wavelengths")));
  ReferenceLibrary library(grid);
  for (const auto& [name, v] : j.at("library").items()) library.add(name, vec_from(v));

  Session s{j.at("id").get<std::string>(), std::move(data), std::move(library), {}, std::nullopt,
            config_from_json(j.at("config")), {}, {}, status_from_string(j.at("status").get<std::string>())};
  if (!j.at("total_bound").is_null()) s.total_bound = j.at("total_bound").get<double>();
  for (const auto& e : j.at("known")) {
    KnownComponent k;
    k.name = e.at("name").get<std::string>();
    k.bound = number_from(e.at("bound"));
    k.origin = origin_from_string(e.at("origin").get<std::string>());
    if (k.origin == Origin::confirmed) {
      k.confirmed_iteration = e.at("iteration").get<int>();
      k.candidate_index = e.at("candidate").get<std::size_t>();
      k.match_score = number_from(e.at("match_score"));
    }
    k.reference = vec_from(e.at("reference"));
    if (k.reference.size() != s.data.rows()) throw std::invalid_argument("reference of '" + k.name + "' has the wrong length");
    s.known.push_back(std::move(k));
  }
  const auto m = static_cast<Eigen::Index>(s.data.cols());
  for (const auto& r : j.at("log")) s.log.push_back(record_from_json(r, m));
  for (const auto& p : j.at("pending")) {
    auto dec = decision_from_json(p);
    s.pending.emplace(dec.candidate, std::move(dec));
  }
  return s;
}

void save_session(const std::filesystem::path& path, const Session& s) { write_file_atomic(path, to_json(s).dump()); }

Session load_session(const std::filesystem::path& path) { return session_from_json(Json::parse(read_file(path))); }

Json report_to_json(const Session& s, const PipelineReport& r, bool timings) {
  Json substances = Json::array();
  for (const auto& sub : r.substances) {
    Json e = {{"name", sub.name}, {"origin", to_string(sub.origin)}, {"bound", number(sub.bound)}};
    if (sub.origin == Origin::confirmed) {
      e["iteration"] = sub.iteration;
      e["match_score"] = number(sub.match_score);
    }
    e["concentrations"] = vec(sub.concentrations);
    substances.push_back(std::move(e));
  }
  Json iterations = Json::array();
  for (const auto& rec : s.log) {
    Json it = to_json(rec, timings);
    // Spectra are bulky; the report keeps only their match summaries.
    for (auto& c : it["candidates"]) c.erase("spectrum");
    iterations.push_back(std::move(it));
  }
  Json out = {{"session", s.id},
              {"status", to_string(r.status)},
              {"error", r.error ? Json(*r.error) : Json(nullptr)},
              {"substances", std::move(substances)},
              {"residual_norm_ratios", vec(r.residual_norm_ratios)},
              {"iterations", std::move(iterations)}};
  if (timings) out["total_seconds"] = r.total_seconds;
  return out;
}

Json to_json(const GroundTruth& t) {
  Json wit = Json::array();
  for (auto w : t.witnesses) wit.push_back(w);
  return {{"source_names", t.source_names},
          {"sources", mat(t.sources.transpose())},
          {"mixing", mat(t.mixing)},
          {"known_names", t.known_names},
          {"known_concentrations", mat(t.known_concentrations)},
          {"witnesses", std::move(wit)},
          {"noise_sigma", t.noise_sigma},
          {"seed", t.seed}};
}

GroundTruth truth_from_json(const Json& j) {
  GroundTruth t;
  t.source_names = j.at("source_names").get<std::vector<std::string>>();
  t.sources = mat_from(j.at("sources")).transpose();
  t.mixing = mat_from(j.at("mixing"));
  t.known_names = j.at("known_names").get<std::vector<std::string>>();
  t.known_concentrations = mat_from(j.at("known_concentrations"));
  t.witnesses = j.at("witnesses").get<std::vector<std::size_t>>();
  t.noise_sigma = j.at("noise_sigma").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace semiblind
