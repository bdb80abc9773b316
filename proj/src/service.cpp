#include "semiblind/service.hpp"

#include <cmath>
#include <cstdio>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace semiblind {

namespace fs = std::filesystem;

std::vector<std::size_t> downsample_indices(std::size_t p, std::size_t points) {
  if (points < 2) throw std::invalid_argument("downsample: need at least 2 points");
  std::vector<std::size_t> out;
  if (p <= points) {
    for (std::size_t i = 0; i < p; ++i) out.push_back(i);
    return out;
  }
  for (std::size_t i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) * static_cast<double>(p - 1) / static_cast<double>(points - 1);
    out.push_back(static_cast<std::size_t>(std::llround(t)));
  }
  return out;
}

namespace {

Json sampled(std::span<const double> x, std::span<const double> y, const std::vector<std::size_t>& idx) {
  Json xs = Json::array(), ys = Json::array();
  for (auto i : idx) {
    xs.push_back(x[i]);
    ys.push_back(y[i]);
  }
  return {{"wavenumbers", std::move(xs)}, {"intensities", std::move(ys)}};
}

}  // namespace

Json session_view(const Session& s, std::size_t view_points) {
  const auto wn = s.data.grid().wavenumbers();
  const auto idx = downsample_indices(wn.size(), view_points);

  Json iterations = Json::array();
  for (const auto& r : s.log) {
    Json applied = Json::array();
    for (const auto& d : r.applied) applied.push_back(to_json(d));
    iterations.push_back({{"index", r.index},
                          {"refit", r.refit},
                          {"residual_norm_ratio", r.residual_norm_ratio},
                          {"negative_fraction", r.negative_fraction},
                          {"candidate_count", r.candidates.size()},
                          {"known_names", r.known_names},
                          {"applied", std::move(applied)},
                          {"status_after", to_string(r.status_after)}});
  }

  Json known = Json::array();
  for (const auto& k : s.known) {
    Json e = {{"name", k.name}, {"bound", k.bound}, {"origin", to_string(k.origin)}};
    if (k.origin == Origin::confirmed) {
      e["iteration"] = k.confirmed_iteration;
      e["match_score"] = k.match_score;
    }
    known.push_back(std::move(e));
  }

  Json candidates = Json::array();
  if (const auto* rec = s.latest()) {
    for (const auto& c : rec->candidates) {
      Json matches = Json::array();
      for (const auto& m : c.match.ranked) matches.push_back({{"name", m.name}, {"similarity", m.similarity}});
      const auto it = s.pending.find(c.index);
      candidates.push_back({{"index", c.index},
                            {"score", c.score},
                            {"source_row", c.source_row},
                            {"mixing", c.mixing},
                            {"spectrum", sampled(wn, c.spectrum, idx)},
                            {"matches", std::move(matches)},
                            {"decision", it == s.pending.end() ? Json(nullptr) : to_json(it->second)}});
    }
  }
  Json undecided = Json::array();
  for (auto k : s.undecided()) undecided.push_back(k);
  return {{"id", s.id},
          {"status", to_string(s.status)},
          {"iterations", std::move(iterations)},
          {"known", std::move(known)},
          {"candidates", std::move(candidates)},
          {"undecided", std::move(undecided)},
          {"grid_points", wn.size()},
          {"view_points", idx.size()}};
}

struct AnalystService::Impl {
  ServiceOptions opts;
  httplib::Server server;
  std::mutex state_mu;  // guards the maps below
  std::map<std::string, std::shared_ptr<std::mutex>> session_locks;
  std::map<std::string, std::string> busy;  // session id -> running job id

  struct Job {
    std::string session;
    std::string state = "running";  // running | done | failed
    std::string error;
    Json view;
  };
  std::map<std::string, Job> jobs;
  std::vector<std::thread> workers;
  std::condition_variable idle_cv;
  std::mt19937_64 ids{std::random_device{}()};

  explicit Impl(ServiceOptions o) : opts(std::move(o)) {
    fs::create_directories(opts.data_dir / "sessions");
    fs::create_directories(opts.data_dir / "keys");
    routes();
  }

  ~Impl() {
    server.stop();
    wait_idle();
    for (auto& t : workers)
      if (t.joinable()) t.join();
  }

  void wait_idle() {
    std::unique_lock lk(state_mu);
    idle_cv.wait(lk, [&] { return busy.empty(); });
  }

  std::string new_id() {
    std::lock_guard lk(state_mu);
    return random_id_locked();
  }

  fs::path session_path(const std::string& id) const { return opts.data_dir / "sessions" / (id + ".json"); }

  std::shared_ptr<std::mutex> lock_for(const std::string& id) {
    std::lock_guard lk(state_mu);
    auto& m = session_locks[id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
  }

  std::optional<std::string> busy_job(const std::string& id) {
    std::lock_guard lk(state_mu);
    auto it = busy.find(id);
    if (it == busy.end()) return std::nullopt;
    return it->second;
  }

  static void reply(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, Json{{"error", message}});
  }

  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  fs::path key_path(const std::string& key) const {
    std::ostringstream ss;
    ss << std::hex << fnv1a(key);
    return opts.data_dir / "keys" / (ss.str() + ".json");
  }

  // Callers hold state_mu.
  std::string random_id_locked() {
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(ids()),
                  static_cast<unsigned long long>(ids()));
    return buf;
  }

  void create_session(const httplib::Request& req, httplib::Response& res) {
    const auto key = req.get_header_value("Idempotency-Key");
    std::unique_lock key_lock(state_mu, std::defer_lock);
    if (!key.empty()) {
      key_lock.lock();
      if (fs::exists(key_path(key))) {
        const auto stored = Json::parse(read_file(key_path(key)));
        if (stored.at("key").get<std::string>() == key) {
          reply(res, 200, Json{{"id", stored.at("id")}, {"created", false}});
          return;
        }
      }
    }

    Json body;
    try {
      body = Json::parse(req.body);
    } catch (const std::exception& e) {
      return error(res, 400, std::string("malformed JSON body: ") + e.what());
    }
    try {
      if (!body.is_object()) throw std::invalid_argument("body must be a JSON object");
      const auto data = parse_spectra_csv(body.at("csv").get<std::string>());
      std::vector<InitialKnown> knowns;
      if (auto k = body.find("knowns"); k != body.end())
        for (const auto& e : *k) knowns.push_back({e.at("name").get<std::string>(), e.at("bound").get<double>()});
      std::optional<double> total;
      if (auto t = body.find("total_bound"); t != body.end() && !t->is_null()) total = t->get<double>();
      PipelineConfig cfg;
      if (auto c = body.find("config"); c != body.end()) cfg = config_from_json(*c);
      const auto library = opts.library.resampled(data.grid());
      auto id = key_lock.owns_lock() ? random_id_locked() : new_id();
      auto session = make_session(id, data, library, knowns, total, cfg);
      save_session(session_path(id), session);
      if (!key.empty()) write_file_atomic(key_path(key), Json{{"key", key}, {"id", id}}.dump());
      res.set_header("Location", "/sessions/" + id);
      reply(res, 201, Json{{"id", id}, {"created", true}});
    } catch (const ParseError& e) {
      error(res, 400, e.what());
    } catch (const Json::exception& e) {
      error(res, 400, std::string("malformed request: ") + e.what());
    } catch (const std::invalid_argument& e) {
      error(res, 400, e.what());
    } catch (const std::runtime_error& e) {
      error(res, 400, e.what());
    }
  }

  std::optional<Session> load(const std::string& id, httplib::Response& res) {
    if (!fs::exists(session_path(id))) {
      error(res, 404, "no session " + id);
      return std::nullopt;
    }
    return load_session(session_path(id));
  }

  void step(const std::string& id, httplib::Response& res) {
    auto lock = lock_for(id);
    std::unique_lock lk(*lock);
    auto s = load(id, res);
    if (!s) return;
    if (auto job = busy_job(id)) {
      reply(res, 409, Json{{"error", "a step is already running"}, {"job", *job}});
      return;
    }
    if (s->status != SessionStatus::awaiting_confirmation) {
      reply(res, 200, session_view(*s, opts.view_points));
      return;
    }
    if (const auto undecided = s->undecided(); !undecided.empty()) {
      reply(res, 409, Json{{"error", "undecided candidates block the step"}, {"undecided", undecided}});
      return;
    }
    const auto job_id = new_id();
    {
      std::lock_guard g(state_mu);
      Job job;
      job.session = id;
      jobs[job_id] = std::move(job);
      busy[id] = job_id;
      workers.emplace_back([this, id, job_id, session = std::move(*s)]() mutable { run_step(id, job_id, std::move(session)); });
    }
    res.set_header("Location", "/jobs/" + job_id);
    reply(res, 202, Json{{"job", job_id}, {"session", id}, {"state", "running"}});
  }

  void run_step(const std::string& id, const std::string& job_id, Session session) {
    Job result;
    result.session = id;
    try {
      auto lock = lock_for(id);
      std::lock_guard lk(*lock);
      session = run_iteration(std::move(session), {});
      save_session(session_path(id), session);
      result.state = "done";
      result.view = session_view(session, opts.view_points);
    } catch (const std::exception& e) {
      result.state = "failed";
      result.error = e.what();
    }
    std::lock_guard g(state_mu);
    jobs[job_id] = std::move(result);
    busy.erase(id);
    idle_cv.notify_all();
  }

  void decide(const std::string& id, std::size_t k, const httplib::Request& req, httplib::Response& res) {
    auto lock = lock_for(id);
    std::lock_guard lk(*lock);
    auto s = load(id, res);
    if (!s) return;
    if (busy_job(id)) return error(res, 409, "a step is running");
    const auto* rec = s->latest();
    if (!rec || k >= rec->candidates.size()) return error(res, 404, "no candidate " + std::to_string(k));
    if (s->status != SessionStatus::awaiting_confirmation)
      return error(res, 409, "session is " + to_string(s->status));
    if (s->pending.contains(k)) return error(res, 409, "candidate " + std::to_string(k) + " already decided");
    Decision d;
    try {
      auto body = Json::parse(req.body);
      if (body.is_object() && !body.contains("candidate")) body["candidate"] = k;
      d = decision_from_json(body);
      if (d.candidate != k) throw std::invalid_argument("candidate index in body differs from the path");
      validate_decisions(*s, {d});
    } catch (const std::exception& e) {
      return error(res, 400, e.what());
    }
    s->pending.emplace(k, d);
    save_session(session_path(id), *s);
    reply(res, 200, session_view(*s, opts.view_points));
  }

  void routes() {
    server.set_payload_max_length(opts.max_body_bytes);
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        error(res, 500, e.what());
      } catch (...) {
        error(res, 500, "unknown error");
      }
    });

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) { create_session(req, res); });

    server.Get(R"(/sessions/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      auto lock = lock_for(id);
      std::lock_guard lk(*lock);
      if (auto s = load(id, res)) reply(res, 200, session_view(*s, opts.view_points));
    });

    server.Post(R"(/sessions/([0-9a-f]+)/step)", [this](const httplib::Request& req, httplib::Response& res) {
      step(req.matches[1], res);
    });

    server.Get(R"(/jobs/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      std::lock_guard g(state_mu);
      auto it = jobs.find(id);
      if (it == jobs.end()) return error(res, 404, "no job " + id);
      const auto& job = it->second;
      Json body = {{"job", id}, {"session", job.session}, {"state", job.state}};
      if (job.state == "done") body["view"] = job.view;
      if (job.state == "failed") body["error"] = job.error;
      reply(res, job.state == "running" ? 202 : 200, body);
    });

    server.Post(R"(/sessions/([0-9a-f]+)/candidates/(\d+)/decision)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  std::size_t k = 0;
                  try {
                    k = std::stoul(req.matches[2]);
                  } catch (const std::exception&) {
                    return error(res, 404, "no candidate " + std::string(req.matches[2]));
                  }
                  decide(req.matches[1], k, req, res);
                });

    server.Get(R"(/sessions/([0-9a-f]+)/residual\.csv)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      auto lock = lock_for(id);
      std::lock_guard lk(*lock);
      auto s = load(id, res);
      if (!s) return;
      const auto r = current_residual(*s);
      res.set_content(to_csv(MixtureMatrix(s->data.grid(), r.values, s->data.labels(), s->data.laser_wavelengths())),
                      "text/csv");
    });

    server.Get(R"(/sessions/([0-9a-f]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      auto lock = lock_for(id);
      std::lock_guard lk(*lock);
      if (auto s = load(id, res)) reply(res, 200, report_to_json(*s, make_report(*s)));
    });

    server.Get("/library", [this](const httplib::Request&, httplib::Response& res) {
      const auto& g = opts.library.grid();
      reply(res, 200,
            Json{{"names", opts.library.names()},
                 {"grid", {{"points", g.size()}, {"min", g.front()}, {"max", g.back()}}}});
    });

    server.Get(R"(/library/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = req.matches[1];
      if (!opts.library.contains(name)) return error(res, 404, "no library entry " + name);
      const auto spectrum = opts.library.at(name);
      const auto idx = downsample_indices(spectrum.grid().size(), opts.view_points);
      Json body = sampled(spectrum.grid().wavenumbers(), spectrum.intensities(), idx);
      body["name"] = name;
      reply(res, 200, body);
    });

    if (opts.static_dir) server.set_mount_point("/", opts.static_dir->string());
  }
};

AnalystService::AnalystService(ServiceOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}
AnalystService::~AnalystService() = default;

int AnalystService::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool AnalystService::run() { return impl_->server.listen_after_bind(); }
void AnalystService::stop() { impl_->server.stop(); }
void AnalystService::wait_idle() { impl_->wait_idle(); }

}  // namespace semiblind
