#pragma once

// Local HTTP/JSON service over persisted pipeline sessions.
//
//   POST /sessions                              create (201); Idempotency-Key header honoured
//   GET  /sessions/{id}                         session view
//   POST /sessions/{id}/step                    run one iteration as a job (202)
//   GET  /jobs/{id}                             202 while running, 200 when finished
//   POST /sessions/{id}/candidates/{k}/decision {"decision": "confirm", "name": ...} | {"decision": "reject"}
//   GET  /sessions/{id}/residual.csv            full-resolution residual of the latest fit
//   GET  /sessions/{id}/report                  report JSON (same schema as the CLI)
//   GET  /library, GET /library/{name}

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "semiblind/session_json.hpp"
#include "semiblind/spectra.hpp"

namespace semiblind {

struct ServiceOptions {
  std::filesystem::path data_dir;
  ReferenceLibrary library{SpectralGrid({0.0, 1.0})};
  std::optional<std::filesystem::path> static_dir;
  std::size_t max_body_bytes = std::size_t{64} << 20;
  std::size_t view_points = 2048;  ///< spectra in views are downsampled to at most this many points
};

/// Evenly spaced indices into [0, p), first and last included; all of them when p <= points.
std::vector<std::size_t> downsample_indices(std::size_t p, std::size_t points);

/// The API projection of a session.
Json session_view(const Session& s, std::size_t view_points = 2048);

class AnalystService {
 public:
  explicit AnalystService(ServiceOptions opts);
  ~AnalystService();
  AnalystService(const AnalystService&) = delete;
  AnalystService& operator=(const AnalystService&) = delete;

  /// Binds to host:port; port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  bool run();
  void stop();
  /// Blocks until no step job is running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace semiblind
