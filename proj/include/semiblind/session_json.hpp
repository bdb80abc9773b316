#pragma once

// JSON forms of sessions, pipeline reports and the generator's ground-truth
// sidecar. Doubles are written in shortest round-trip form, so a saved
// session reloads bit-for-bit; NaN and infinities are written as null.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "semiblind/pipeline.hpp"
#include "semiblind/synth.hpp"

namespace semiblind {

using Json = nlohmann::ordered_json;

Json to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const Json& j, PipelineConfig base = {});

Json to_json(const Decision& d);
Decision decision_from_json(const Json& j);

Json to_json(const Candidate& c);
Json to_json(const IterationRecord& rec, bool timings = false);

/// Complete session state, data and library included.
Json to_json(const Session& s);
Session session_from_json(const Json& j);

void save_session(const std::filesystem::path& path, const Session& s);
Session load_session(const std::filesystem::path& path);

/// The report schema shared by the CLI and the analyst service.
Json report_to_json(const Session& s, const PipelineReport& r, bool timings = false);

Json to_json(const GroundTruth& t);
GroundTruth truth_from_json(const Json& j);

/// Writes `text` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

}  // namespace semiblind
