#include "semiblind/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace semiblind {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

MatchResult match_library(const Spectrum& candidate, const ReferenceLibrary& library, std::size_t top_k,
                          std::size_t candidate_index) {
  if (!(candidate.grid() == library.grid())) throw std::invalid_argument("match_library: candidate and library grids differ");
  const auto c = candidate.intensities();
  if (std::all_of(c.begin(), c.end(), [](double v) { return v == 0.0; }))
    throw std::invalid_argument("match_library: zero-norm candidate");
  MatchResult out;
  out.candidate_index = candidate_index;
  for (const auto& [name, spectrum] : library.entries())
    out.ranked.push_back({name, cosine_similarity(c, spectrum)});
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const LibraryMatch& a, const LibraryMatch& b) { return a.similarity > b.similarity; });
  if (out.ranked.size() > top_k) out.ranked.resize(top_k);
  return out;
}

std::string to_string(Origin o) { return o == Origin::initial ? "initial" : "confirmed"; }

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::awaiting_confirmation: return "awaiting_confirmation";
    case SessionStatus::converged: return "converged";
    case SessionStatus::exhausted: return "exhausted";
  }
  return "?";
}

Origin origin_from_string(const std::string& s) {
  if (s == "initial") return Origin::initial;
  if (s == "confirmed") return Origin::confirmed;
  throw std::invalid_argument("unknown origin '" + s + "'");
}

SessionStatus status_from_string(const std::string& s) {
  if (s == "awaiting_confirmation") return SessionStatus::awaiting_confirmation;
  if (s == "converged") return SessionStatus::converged;
  if (s == "exhausted") return SessionStatus::exhausted;
  throw std::invalid_argument("unknown status '" + s + "'");
}

void PipelineConfig::validate() const {
  ls.validate();
  bregman.validate();
  if (cone.n && *cone.n < 1) throw std::invalid_argument("pipeline: n must be >= 1");
  if (cone.max_n < 1) throw std::invalid_argument("pipeline: max_n must be >= 1");
  if (!(auto_threshold >= -1.0 && auto_threshold <= 1.0))
    throw std::invalid_argument("pipeline: auto threshold must lie in [-1, 1]");
  if (!(converge_ratio >= 0.0)) throw std::invalid_argument("pipeline: convergence ratio must be >= 0");
  if (max_iterations < 1) throw std::invalid_argument("pipeline: max_iterations must be >= 1");
  if (top_k < 1) throw std::invalid_argument("pipeline: top_k must be >= 1");
  if (!(bound_slack >= 1.0)) throw std::invalid_argument("pipeline: bound slack must be >= 1");
}

bool Session::has_known(const std::string& name) const {
  return std::any_of(known.begin(), known.end(), [&](const KnownComponent& k) { return k.name == name; });
}

std::vector<std::size_t> Session::undecided() const {
  std::vector<std::size_t> out;
  if (const auto* rec = latest())
    for (const auto& c : rec->candidates)
      if (!pending.contains(c.index)) out.push_back(c.index);
  return out;
}

ConcentrationBounds Session::bounds() const {
  ConcentrationBounds b;
  for (const auto& k : known) {
    b.per_substance[k.name] = k.bound;
    if (k.origin == Origin::initial) b.total_members.insert(k.name);
  }
  b.total_bound = total_bound;
  return b;
}

Session make_session(std::string id, MixtureMatrix data, const ReferenceLibrary& library,
                     const std::vector<InitialKnown>& knowns, std::optional<double> total_bound,
                     PipelineConfig config) {
  config.validate();
  if (!(library.grid() == data.grid())) throw std::invalid_argument("library grid differs from the data grid");
  if (total_bound) {
    if (!(*total_bound >= 0.0) || !std::isfinite(*total_bound))
      throw std::invalid_argument("total bound must be finite and >= 0");
    if (knowns.empty()) throw std::invalid_argument("a total bound needs at least one known substance");
  }
  Session s{std::move(id), std::move(data), library, {}, total_bound, std::move(config), {}, {},
            SessionStatus::awaiting_confirmation};
  for (const auto& k : knowns) {
    if (!library.contains(k.name)) throw std::invalid_argument("known substance '" + k.name + "' is not in the library");
    if (s.has_known(k.name)) throw std::invalid_argument("known substance '" + k.name + "' listed twice");
    if (!(k.bound >= 0.0) || !std::isfinite(k.bound))
      throw std::invalid_argument("bound of '" + k.name + "' must be finite and >= 0");
    const auto spectrum = library.at(k.name);
    const auto ref = spectrum.intensities();
    s.known.push_back({k.name, k.bound, Origin::initial, {ref.begin(), ref.end()}, 0, 0, 0.0});
  }
  return s;
}

Eigen::MatrixXd reference_matrix(const Session& session) {
  const auto p = static_cast<Eigen::Index>(session.data.rows());
  Eigen::MatrixXd a(p, static_cast<Eigen::Index>(session.known.size()));
  for (std::size_t j = 0; j < session.known.size(); ++j)
    a.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(session.known[j].reference.data(), p);
  return a;
}

namespace {

// Latest record that carries a fit.
const IterationRecord* latest_fit(const Session& session) {
  for (auto it = session.log.rbegin(); it != session.log.rend(); ++it)
    if (it->refit) return &*it;
  return nullptr;
}

std::vector<std::string> known_names(const Session& session) {
  std::vector<std::string> names;
  for (const auto& k : session.known) names.push_back(k.name);
  return names;
}

}  // namespace

ResidualMatrix current_residual(const Session& session) {
  const auto* fit = latest_fit(session);
  if (!fit || fit->concentrations.rows() == 0)
    return compute_residual(session.data.values(), Eigen::MatrixXd::Zero(session.data.rows(), 0),
                            Eigen::MatrixXd::Zero(0, session.data.cols()), session.data.grid());
  return compute_residual(session.data.values(), reference_matrix(session), fit->concentrations, session.data.grid());
}

void validate_decisions(const Session& session, const std::vector<Decision>& decisions) {
  const auto* rec = session.latest();
  std::set<std::size_t> seen;
  std::set<std::string> names;
  for (const auto& d : decisions) {
    if (!rec || d.candidate >= rec->candidates.size())
      throw std::invalid_argument("decision references unknown candidate " + std::to_string(d.candidate));
    if (!seen.insert(d.candidate).second || session.pending.contains(d.candidate))
      throw std::invalid_argument("candidate " + std::to_string(d.candidate) + " decided twice");
    if (d.kind == Decision::Kind::confirm) {
      if (d.name.empty()) throw std::invalid_argument("confirmation of candidate " + std::to_string(d.candidate) + " needs a name");
      if (session.has_known(d.name)) throw std::invalid_argument("'" + d.name + "' is already known");
      if (!names.insert(d.name).second) throw std::invalid_argument("'" + d.name + "' confirmed twice");
    }
  }
  for (const auto& [k, d] : session.pending)
    if (d.kind == Decision::Kind::confirm && names.contains(d.name))
      throw std::invalid_argument("'" + d.name + "' confirmed twice");
}

Session run_iteration(Session session, const std::vector<Decision>& decisions) {
  const auto started = std::chrono::steady_clock::now();
  if (session.status != SessionStatus::awaiting_confirmation)
    throw std::logic_error("session is " + to_string(session.status) + "; no further iterations");
  validate_decisions(session, decisions);
  session.config.validate();

  std::map<std::size_t, Decision> all = std::move(session.pending);
  session.pending.clear();
  for (const auto& d : decisions) all.emplace(d.candidate, d);

  IterationRecord rec;
  rec.index = static_cast<int>(session.log.size()) + 1;
  if (const auto* prev = session.latest()) {
    for (const auto& c : prev->candidates) {
      auto it = all.find(c.index);
      rec.applied.push_back(it != all.end() ? it->second : Decision::reject(c.index));
    }
  }

  bool any_confirm = false;
  for (const auto& d : rec.applied) {
    if (d.kind != Decision::Kind::confirm) continue;
    const auto& c = session.latest()->candidates[d.candidate];
    const double peak = *std::max_element(c.spectrum.begin(), c.spectrum.end());
    if (!(peak > 0.0)) throw std::invalid_argument("candidate " + std::to_string(d.candidate) + " has no positive intensity");
    KnownComponent k;
    k.name = d.name;
    k.origin = Origin::confirmed;
    k.reference.resize(c.spectrum.size());
    std::transform(c.spectrum.begin(), c.spectrum.end(), k.reference.begin(), [&](double v) { return v / peak; });
    k.bound = session.config.bound_slack * c.peak_concentration;
    k.confirmed_iteration = session.latest()->index;
    k.candidate_index = c.index;
    k.match_score = 0.0;
    for (const auto& m : c.match.ranked)
      if (m.name == d.name) k.match_score = m.similarity;
    session.known.push_back(std::move(k));
    any_confirm = true;
  }

  if (!session.log.empty() && !any_confirm) {
    // Nothing new to feed back: the loop has run dry.
    const auto* prev = session.latest();
    rec.refit = false;
    rec.known_names = prev->known_names;
    rec.fit_converged = prev->fit_converged;
    rec.residual_norm_ratio = prev->residual_norm_ratio;
    rec.negative_fraction = prev->negative_fraction;
    rec.negative_min = prev->negative_min;
    rec.status_after = SessionStatus::exhausted;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    session.status = rec.status_after;
    session.log.push_back(std::move(rec));
    return session;
  }

  const auto& x = session.data.values();
  const Eigen::MatrixXd a = reference_matrix(session);
  rec.known_names = known_names(session);
  ResidualMatrix residual{session.data.grid(), x, 0, 0, false};
  if (a.cols() > 0) {
    // Warm start: the previous solution padded with zeros is feasible for the
    // augmented problem, so the refit cannot raise the residual.
    Eigen::MatrixXd start = Eigen::MatrixXd::Zero(a.cols(), x.cols());
    if (const auto* fit = latest_fit(session))
      for (std::size_t i = 0; i < fit->known_names.size(); ++i) {
        const auto pos = std::find(rec.known_names.begin(), rec.known_names.end(), fit->known_names[i]) -
                         rec.known_names.begin();
        start.row(pos) = fit->concentrations.row(static_cast<Eigen::Index>(i));
      }
    auto s = box_constrained_ls(x, a, rec.known_names, session.bounds(), session.config.ls, start);
    rec.concentrations = s.values;
    rec.fit_converged = s.converged;
    residual = compute_residual(x, a, s.values, session.data.grid());
  } else {
    rec.concentrations = Eigen::MatrixXd::Zero(0, x.cols());
    residual = compute_residual(x, a, rec.concentrations, session.data.grid());
  }

  const double xnorm = x.norm();
  rec.residual_norm_ratio = xnorm > 0.0 ? residual.values.norm() / xnorm : 0.0;
  rec.negative_fraction = residual.negative_fraction;
  rec.negative_min = residual.negative_min;

  const auto finish = [&](SessionStatus status) {
    rec.status_after = status;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    session.status = status;
    session.log.push_back(std::move(rec));
    return session;
  };

  if (rec.residual_norm_ratio <= session.config.converge_ratio) return finish(SessionStatus::converged);
  const ResidualMatrix clamped = clamp_nonnegative(residual);
  if (clamped.values.maxCoeff() <= 0.0) return finish(SessionStatus::exhausted);

  const ConeExtraction cone = extract_mixing(clamped, session.config.cone);
  rec.n_sources = cone.n;
  rec.n_estimated = cone.n_estimated;
  std::vector<RowScore> ranked = cone.scores;
  std::stable_sort(ranked.begin(), ranked.end(), [](const RowScore& l, const RowScore& r) { return l.score > r.score; });
  if (ranked.size() > session.config.score_report) ranked.resize(session.config.score_report);
  rec.top_scores = std::move(ranked);

  const SourceMatrix w = recover_sources(clamped, cone.estimate, session.config.bregman);
  for (std::size_t j = 0; j < cone.n; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    Candidate c;
    c.index = j;
    c.spectrum.assign(w.values.col(jj).data(), w.values.col(jj).data() + w.values.rows());
    const Eigen::VectorXd mix = cone.estimate.rows.row(jj).transpose();
    c.mixing.assign(mix.data(), mix.data() + mix.size());
    c.source_row = cone.estimate.source_indices[j];
    c.score = cone.estimate.scores[j];
    c.peak_concentration = w.values.col(jj).maxCoeff() * mix.maxCoeff();
    c.match.candidate_index = j;
    if (w.values.col(jj).maxCoeff() > 0.0)
      c.match = match_library(Spectrum(session.data.grid(), c.spectrum), session.library, session.config.top_k, j);
    rec.candidates.push_back(std::move(c));
  }
  const bool last = rec.index >= session.config.max_iterations;
  return finish(last ? SessionStatus::exhausted : SessionStatus::awaiting_confirmation);
}

Confirmer auto_confirmer(double threshold) {
  return [threshold](const Session& session) {
    std::vector<Decision> out;
    const auto* rec = session.latest();
    if (!rec) return out;
    struct Pick {
      std::size_t candidate;
      std::string name;
      double similarity;
    };
    std::vector<Pick> picks;
    for (const auto& c : rec->candidates)
      for (const auto& m : c.match.ranked)
        if (!session.has_known(m.name)) {
          picks.push_back({c.index, m.name, m.similarity});
          break;
        }
    std::stable_sort(picks.begin(), picks.end(), [](const Pick& a, const Pick& b) { return a.similarity > b.similarity; });
    std::set<std::string> taken;
    std::set<std::size_t> confirmed;
    for (const auto& p : picks)
      if (p.similarity >= threshold && taken.insert(p.name).second) confirmed.insert(p.candidate);
    for (const auto& c : rec->candidates) {
      if (!confirmed.contains(c.index)) {
        out.push_back(Decision::reject(c.index));
        continue;
      }
      const auto it = std::find_if(picks.begin(), picks.end(), [&](const Pick& p) { return p.candidate == c.index; });
      out.push_back(Decision::confirm(c.index, it->name));
    }
    return out;
  };
}

Confirmer scripted_confirmer(std::vector<std::vector<Decision>> script) {
  return [script = std::move(script)](const Session& session) {
    const auto k = session.log.size();
    if (k == 0 || k > script.size()) return std::vector<Decision>{};
    return script[k - 1];
  };
}

Session replay(const Session& session) {
  Session fresh = session;
  fresh.log.clear();
  fresh.pending.clear();
  fresh.status = SessionStatus::awaiting_confirmation;
  std::erase_if(fresh.known, [](const KnownComponent& k) { return k.origin != Origin::initial; });
  for (const auto& rec : session.log) fresh = run_iteration(std::move(fresh), rec.applied);
  fresh.pending = session.pending;
  return fresh;
}

PipelineReport make_report(const Session& session) {
  PipelineReport r;
  r.status = session.status;
  const auto* fit = latest_fit(session);
  for (const auto& k : session.known) {
    IdentifiedSubstance s;
    s.name = k.name;
    s.origin = k.origin;
    s.iteration = k.confirmed_iteration;
    s.match_score = k.match_score;
    s.bound = k.bound;
    if (fit) {
      const auto it = std::find(fit->known_names.begin(), fit->known_names.end(), k.name);
      if (it != fit->known_names.end()) {
        const auto row = fit->concentrations.row(it - fit->known_names.begin());
        s.concentrations.assign(row.begin(), row.end());
      }
    }
    r.substances.push_back(std::move(s));
  }
  for (const auto& rec : session.log) {
    r.residual_norm_ratios.push_back(rec.residual_norm_ratio);
    r.total_seconds += rec.seconds;
  }
  return r;
}

PipelineRun run_pipeline(Session session, const Confirmer& confirmer) {
  const auto started = std::chrono::steady_clock::now();
  std::optional<std::string> error;
  try {
    std::vector<Decision> decisions;
    while (session.status == SessionStatus::awaiting_confirmation) {
      session = run_iteration(std::move(session), decisions);
      if (session.status != SessionStatus::awaiting_confirmation) break;
      decisions = confirmer(session);
      std::erase_if(decisions, [&](const Decision& d) { return session.pending.contains(d.candidate); });
    }
  } catch (const std::exception& e) {
    error = e.what();
  }
  PipelineRun run{std::move(session), {}};
  run.report = make_report(run.session);
  run.report.error = error;
  run.report.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return run;
}

std::string text_summary(const Session& session, const PipelineReport& report) {
  std::ostringstream out;
  out << "session " << session.id << ": " << to_string(report.status) << " after " << session.log.size()
      << " iteration(s), " << std::fixed << std::setprecision(3) << report.total_seconds << " s\n";
  if (report.error) out << "error: " << *report.error << "\n";
  for (const auto& rec : session.log) {
    out << "iteration " << rec.index << ": ";
    if (!rec.refit) {
      out << "no confirmations, stopped\n";
      continue;
    }
    out << std::setprecision(4) << "residual " << rec.residual_norm_ratio << ", negative " << rec.negative_fraction
        << ", " << rec.candidates.size() << " candidate(s)" << (rec.n_estimated ? " (n estimated)" : "") << ", "
        << std::setprecision(3) << rec.seconds << " s\n";
    for (const auto& c : rec.candidates) {
      out << "  candidate " << c.index << " (row " << c.source_row << ")";
      if (!c.match.ranked.empty())
        out << std::setprecision(4) << ": " << c.match.ranked.front().name << " " << c.match.ranked.front().similarity;
      out << "\n";
    }
  }
  out << "substances:\n";
  for (const auto& s : report.substances) {
    out << "  " << s.name << " [" << to_string(s.origin);
    if (s.origin == Origin::confirmed) out << std::setprecision(4) << " in iteration " << s.iteration << ", match " << s.match_score;
    out << "]";
    if (!s.concentrations.empty()) {
      out << std::setprecision(4) << " max concentration "
          << *std::max_element(s.concentrations.begin(), s.concentrations.end());
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace semiblind
