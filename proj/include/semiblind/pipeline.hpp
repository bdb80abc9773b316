#pragma once

// The semi-blind identification loop: fit the known references under their
// bounds, extract candidate spectra from the clamped residual, match them
// against the library, and feed confirmed candidates back as new references.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semiblind/cls_fit.hpp"
#include "semiblind/cone.hpp"
#include "semiblind/sparse_recovery.hpp"
#include "semiblind/spectra.hpp"

namespace semiblind {

struct LibraryMatch {
  std::string name;
  double similarity = 0;
};

struct MatchResult {
  std::size_t candidate_index = 0;
  std::vector<LibraryMatch> ranked;  ///< similarity descending, ties by name
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Cosine similarity of `candidate` against every library entry; the best `top_k` are kept.
MatchResult match_library(const Spectrum& candidate, const ReferenceLibrary& library, std::size_t top_k,
                          std::size_t candidate_index = 0);

enum class Origin { initial, confirmed };
enum class SessionStatus { awaiting_confirmation, converged, exhausted };
std::string to_string(Origin o);
std::string to_string(SessionStatus s);
Origin origin_from_string(const std::string& s);
SessionStatus status_from_string(const std::string& s);

struct KnownComponent {
  std::string name;
  double bound = 0;
  Origin origin = Origin::initial;
  std::vector<double> reference;  ///< on the session grid
  int confirmed_iteration = 0;    ///< iteration whose candidate was confirmed (confirmed only)
  std::size_t candidate_index = 0;
  double match_score = 0;         ///< library similarity at confirmation
};

struct Candidate {
  std::size_t index = 0;
  std::vector<double> spectrum;   ///< recovered column of W
  std::vector<double> mixing;     ///< selected residual row
  std::size_t source_row = 0;
  double score = 0;
  double peak_concentration = 0;  ///< max over mixtures of max(spectrum) * mixing
  MatchResult match;
};

struct Decision {
  enum class Kind { confirm, reject };
  std::size_t candidate = 0;
  Kind kind = Kind::reject;
  std::string name;  ///< confirm only

  static Decision confirm(std::size_t candidate, std::string name) { return {candidate, Kind::confirm, std::move(name)}; }
  static Decision reject(std::size_t candidate) { return {candidate, Kind::reject, {}}; }
  friend bool operator==(const Decision&, const Decision&) = default;
};

struct IterationRecord {
  int index = 0;                        ///< 1-based
  std::vector<Decision> applied;        ///< decisions on the previous iteration's candidates
  bool refit = true;                    ///< false when no decision changed the known set
  std::vector<std::string> known_names;
  Eigen::MatrixXd concentrations;       ///< fitted S, known_names x m
  bool fit_converged = true;
  double residual_norm_ratio = 0;       ///< ||R||_F / ||X||_F, before clamping
  double negative_fraction = 0;
  double negative_min = 0;
  std::size_t n_sources = 0;
  bool n_estimated = false;
  std::vector<RowScore> top_scores;     ///< highest row scores, descending
  std::vector<Candidate> candidates;
  SessionStatus status_after = SessionStatus::awaiting_confirmation;
  double seconds = 0;                   ///< wall time; not part of the deterministic report
};

struct PipelineConfig {
  BoxLsOptions ls;
  ConeOptions cone;
  BregmanConfig bregman;
  double auto_threshold = 0.9;
  double converge_ratio = 0.02;
  int max_iterations = 10;
  std::size_t top_k = 5;
  double bound_slack = 1.1;
  std::size_t score_report = 10;

  void validate() const;
};

struct Session {
  std::string id;
  MixtureMatrix data;
  ReferenceLibrary library;  ///< on the data grid
  std::vector<KnownComponent> known;
  std::optional<double> total_bound;  ///< covers the initial knowns only
  PipelineConfig config;
  std::vector<IterationRecord> log;
  std::map<std::size_t, Decision> pending;  ///< decisions on the latest candidates, not yet applied
  SessionStatus status = SessionStatus::awaiting_confirmation;

  const IterationRecord* latest() const { return log.empty() ? nullptr : &log.back(); }
  bool has_known(const std::string& name) const;
  /// Candidates of the latest iteration without a pending decision.
  std::vector<std::size_t> undecided() const;
  ConcentrationBounds bounds() const;
};

struct InitialKnown {
  std::string name;
  double bound = 0;
};

/// A fresh session: no fit has been run yet.
Session make_session(std::string id, MixtureMatrix data, const ReferenceLibrary& library,
                     const std::vector<InitialKnown>& knowns, std::optional<double> total_bound,
                     PipelineConfig config = {});

/// Checks `decisions` against the latest candidates; throws std::invalid_argument on a problem.
void validate_decisions(const Session& session, const std::vector<Decision>& decisions);

/// One loop turn: applies `decisions`, refits the (possibly augmented) known
/// set, extracts and matches new candidates, appends a record and sets the status.
Session run_iteration(Session session, const std::vector<Decision>& decisions);

/// Reference spectra of the known set as columns, in `known` order.
Eigen::MatrixXd reference_matrix(const Session& session);

/// X - A*S for the latest fit (X itself before the first iteration), unclamped.
ResidualMatrix current_residual(const Session& session);

/// Rebuilds the session from its inputs by re-applying the logged decisions.
Session replay(const Session& session);

/// Decides on the latest candidates. Returning no decisions for a candidate rejects it.
using Confirmer = std::function<std::vector<Decision>(const Session&)>;

/// Confirms every candidate whose best match among not-yet-known names
/// reaches `threshold`, best first, each name at most once.
Confirmer auto_confirmer(double threshold);

/// Replays decisions iteration by iteration: element k answers iteration k+1.
Confirmer scripted_confirmer(std::vector<std::vector<Decision>> script);

struct IdentifiedSubstance {
  std::string name;
  Origin origin = Origin::initial;
  int iteration = 0;
  double match_score = 0;
  double bound = 0;
  std::vector<double> concentrations;
};

struct PipelineReport {
  SessionStatus status = SessionStatus::awaiting_confirmation;
  std::vector<IdentifiedSubstance> substances;
  std::vector<double> residual_norm_ratios;
  std::optional<std::string> error;  ///< set when the run stopped on an exception
  double total_seconds = 0;
};

PipelineReport make_report(const Session& session);

struct PipelineRun {
  Session session;
  PipelineReport report;
};

/// Loops run_iteration with `confirmer` until the session stops awaiting confirmation.
/// Exceptions are captured into the report together with the partial session.
PipelineRun run_pipeline(Session session, const Confirmer& confirmer);

std::string text_summary(const Session& session, const PipelineReport& report);

}  // namespace semiblind
