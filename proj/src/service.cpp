#include "brickseq/service.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <vector>

#include <spdlog/spdlog.h>

#include "brickseq/datasets.hpp"
#include "brickseq/errors.hpp"
#include "brickseq/oracle.hpp"
#include "httplib.h"

namespace brickseq {

using nlohmann::json;

std::string_view to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::single_track: return "single_track";
    case GuidanceMode::multi_track: return "multi_track";
    case GuidanceMode::on_demand: return "on_demand";
  }
  return "?";
}

GuidanceMode parse_guidance_mode(std::string_view name) {
  for (auto m : {GuidanceMode::single_track, GuidanceMode::multi_track, GuidanceMode::on_demand})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "'");
}

namespace {

HttpResponse fail(int status, const std::string& message) {
  return {status, {{"ok", false}, {"error", message}}};
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

long long millis(std::chrono::system_clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

// Raised inside handlers for request-shape problems.
struct BadRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::int64_t require_int(const json& body, const char* key) {
  if (!body.contains(key) || !body[key].is_number_integer())
    throw BadRequest(std::string("field '") + key + "' must be an integer");
  return body[key].get<std::int64_t>();
}

}  // namespace

GuidanceService::GuidanceService(ServiceOptions options) : options_(std::move(options)) {
  if (options_.checkpoint) default_lm_ = language_model(options_.checkpoint->string());
  if (options_.snapshot && std::filesystem::exists(*options_.snapshot)) restore(load_json(*options_.snapshot));
}

GuidanceService::~GuidanceService() { stop(); }

std::shared_ptr<const GuidanceService::LanguageModel> GuidanceService::language_model(const std::string& path) {
  {
    std::shared_lock lock(registry_mutex_);
    if (auto it = checkpoints_.find(path); it != checkpoints_.end()) return it->second;
  }
  Checkpoint ck = load_checkpoint(path);
  if (!ck.vocab) throw CheckpointError("checkpoint " + path + " carries no vocabulary");
  auto lm = std::make_shared<LanguageModel>(
      LanguageModel{std::move(ck.params), std::make_shared<const Vocabulary>(std::move(*ck.vocab))});
  std::unique_lock lock(registry_mutex_);
  return checkpoints_.emplace(path, std::move(lm)).first->second;
}

std::shared_ptr<GuidanceService::SessionRecord> GuidanceService::find_session(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpResponse GuidanceService::handle_request(std::string_view method, std::string_view path,
                                             const std::map<std::string, std::string>& query,
                                             std::string_view body, std::string_view content_type) {
  const auto parts = split_path(path);
  try {
    json payload;
    if (method == "POST") {
      if (content_type.find("application/json") == std::string_view::npos)
        return fail(400, "content-type must be application/json");
      payload = body.empty() ? json::object() : json::parse(body);
      if (!payload.is_object()) return fail(400, "body must be a JSON object");
    }

    if (method == "GET" && parts.size() == 1 && parts[0] == "health") return {200, {{"ok", true}}};
    if (method == "POST" && parts.size() == 1 && parts[0] == "models") return post_model(payload);
    if (method == "POST" && parts.size() == 1 && parts[0] == "sessions") return post_session(payload);

    if (parts.size() == 3 && parts[0] == "sessions") {
      auto session = find_session(parts[1]);
      if (!session) return fail(404, "unknown session " + parts[1]);
      // Operations on one session never interleave.
      std::lock_guard lock(session->mutex);
      const std::string& op = parts[2];
      if (method == "GET" && op == "candidates") return get_candidates(*session, query);
      if (method == "GET" && op == "state") return get_state(*session);
      if (method == "POST" && op == "step") return post_step(*session, payload);
      if (method == "POST" && op == "undo") return post_undo(*session, payload);
    }
    return fail(404, "no route for " + std::string(method) + " " + std::string(path));
  } catch (const json::exception& e) {
    return fail(400, std::string("malformed JSON: ") + e.what());
  } catch (const BadRequest& e) {
    return fail(400, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(400, e.what());
  } catch (const InvalidModel& e) {
    return fail(400, e.what());
  } catch (const InvalidChoice& e) {
    return fail(409, e.what());
  } catch (const Error& e) {
    return fail(400, e.what());
  } catch (const std::exception& e) {
    return fail(500, e.what());
  }
}

HttpResponse GuidanceService::post_model(const json& body) {
  auto model = std::make_shared<const BrickModel>(model_from_json(body));
  try {
    order_sequence(*model, 0, OrderStrategy::deterministic);
  } catch (const NoValidOrdering&) {
    return fail(400, "model cannot be built without overhangs");
  }
  std::unique_lock lock(registry_mutex_);
  const std::string id = "model-" + std::to_string(next_model_++);
  models_.emplace(id, std::move(model));
  return {200, {{"ok", true}, {"model_id", id}}};
}

HttpResponse GuidanceService::post_session(const json& body) {
  if (!body.contains("model_id") || !body["model_id"].is_string()) throw BadRequest("model_id is required");
  const std::string model_id = body["model_id"].get<std::string>();
  std::shared_ptr<const BrickModel> model;
  {
    std::shared_lock lock(registry_mutex_);
    auto it = models_.find(model_id);
    if (it == models_.end()) return fail(404, "unknown model " + model_id);
    model = it->second;
  }
  auto record = std::make_shared<SessionRecord>();
  record->model_id = model_id;
  record->mode = parse_guidance_mode(body.value("mode", std::string("multi_track")));
  record->k = body.contains("k") ? static_cast<std::size_t>(require_int(body, "k")) : options_.default_k;
  if (record->k < 1) throw BadRequest("k must be >= 1");
  if (body.contains("checkpoint") && !body["checkpoint"].is_null()) {
    record->checkpoint = body["checkpoint"].get<std::string>();
    record->lm = language_model(record->checkpoint);
  } else {
    record->lm = default_lm_;
  }
  record->state.emplace(model, record->lm ? record->lm->vocab : nullptr);
  record->created = record->updated = std::chrono::system_clock::now();

  std::unique_lock lock(registry_mutex_);
  const std::uint64_t serial = next_session_++;
  record->id = "sess-" + std::to_string(serial) + "-" + hex(std::hash<std::string>{}(model_id) ^ serial).substr(0, 8);
  sessions_.emplace(record->id, record);
  return {200,
          {{"ok", true}, {"session_id", record->id}, {"n_total", model->size()}, {"step", 0},
           {"mode", std::string(to_string(record->mode))}}};
}

CandidateSet GuidanceService::candidates_for(const SessionRecord& s, std::size_t k, std::string& source) const {
  if (s.lm) {
    source = "model";
    return next_brick_candidates(s.lm->params, *s.state, k, options_.generation);
  }
  source = "oracle";
  return oracle_candidates(*s.state, k);
}

json GuidanceService::candidates_json(const SessionRecord& s, const CandidateSet& set) const {
  json out = json::array();
  for (std::size_t r = 0; r < set.candidates.size(); ++r) {
    const auto& c = set.candidates[r];
    out.push_back({{"placement", placement_json(s.state->model().placements[static_cast<std::size_t>(c.placement)])},
                   {"index", c.placement},
                   {"prob", c.prob},
                   {"rank", r + 1}});
  }
  return out;
}

HttpResponse GuidanceService::get_candidates(SessionRecord& s, const std::map<std::string, std::string>& query) {
  std::size_t k = s.k;
  if (auto it = query.find("k"); it != query.end()) {
    try {
      k = static_cast<std::size_t>(std::stoul(it->second));
    } catch (const std::exception&) {
      throw BadRequest("k must be a positive integer");
    }
  }
  if (k < 1) throw BadRequest("k must be >= 1");
  if (s.mode == GuidanceMode::single_track) k = 1;

  const std::size_t step = s.state->prefix().size();
  json body{{"ok", true}, {"step", step}, {"completed", s.state->complete()}, {"candidates", json::array()}};
  if (s.state->complete()) return {200, body};
  try {
    std::string source;
    const auto set = candidates_for(s, k, source);
    body["candidates"] = candidates_json(s, set);
    body["truncated"] = set.truncated;
    body["source"] = source;
    return {200, body};
  } catch (const NoValidCandidate& e) {
    HttpResponse r = fail(422, e.what());
    r.body["step"] = step;
    if (options_.fallback_oracle) {
      // The oracle frontier is the only other source; it is empty here too
      // unless the model ranking failed for a reason other than legality.
      try {
        r.body["fallback"] = candidates_json(s, oracle_candidates(*s.state, k));
      } catch (const NoValidCandidate&) {
        r.body["fallback"] = json::array();
      }
    }
    return r;
  }
}

HttpResponse GuidanceService::post_step(SessionRecord& s, const json& body) {
  const auto client_step = require_int(body, "step");
  const auto step = static_cast<std::int64_t>(s.state->prefix().size());
  if (client_step != step)
    return fail(409, "stale step counter " + std::to_string(client_step) + ", server is at " + std::to_string(step));
  if (s.state->complete()) return fail(409, "session already completed");

  int choice = -1;
  if (body.contains("index")) {
    choice = static_cast<int>(require_int(body, "index"));
  } else if (body.contains("placement")) {
    const auto& p = body["placement"];
    const auto& pos = p.at("pos");
    const Placement want{p.at("part_id").get<int>(), {pos.at(0).get<int>(), pos.at(1).get<int>(), pos.at(2).get<int>()},
                         rotation_from_degrees(p.value("rot", 0))};
    const auto& placements = s.state->model().placements;
    for (std::size_t i = 0; i < placements.size(); ++i) {
      if (placements[i] == want && !s.state->is_used(static_cast<int>(i))) {
        choice = static_cast<int>(i);
        break;
      }
    }
    if (choice < 0) throw InvalidChoice("placement does not match any unplaced brick");
  } else {
    std::int64_t rank = 1;
    if (body.contains("rank")) rank = require_int(body, "rank");
    else if (s.mode != GuidanceMode::single_track) throw BadRequest("one of rank, placement or index is required");
    if (rank < 1) throw BadRequest("rank must be >= 1");
    std::string source;
    const auto set = candidates_for(s, std::max<std::size_t>(s.k, static_cast<std::size_t>(rank)), source);
    if (static_cast<std::size_t>(rank) > set.candidates.size()) throw InvalidChoice("rank beyond the candidate list");
    choice = set.candidates[static_cast<std::size_t>(rank - 1)].placement;
  }
  s.state->commit(choice);
  s.updated = std::chrono::system_clock::now();

  json out{{"ok", true}, {"step", s.state->prefix().size()}, {"completed", s.state->complete()}, {"index", choice}};
  if (s.mode != GuidanceMode::on_demand && !s.state->complete()) {
    try {
      std::string source;
      const std::size_t k = s.mode == GuidanceMode::single_track ? 1 : s.k;
      out["candidates"] = candidates_json(s, candidates_for(s, k, source));
    } catch (const NoValidCandidate&) {
      out["candidates"] = json::array();
    }
  }
  return {200, out};
}

HttpResponse GuidanceService::post_undo(SessionRecord& s, const json& body) {
  const auto client_step = require_int(body, "step");
  const auto step = static_cast<std::int64_t>(s.state->prefix().size());
  if (client_step != step)
    return fail(409, "stale step counter " + std::to_string(client_step) + ", server is at " + std::to_string(step));
  s.state->undo();
  s.updated = std::chrono::system_clock::now();
  return {200, {{"ok", true}, {"step", s.state->prefix().size()}}};
}

HttpResponse GuidanceService::get_state(SessionRecord& s) const {
  const auto& st = *s.state;
  json placements = json::array();
  for (int idx : st.prefix()) placements.push_back(placement_json(st.model().placements[static_cast<std::size_t>(idx)]));
  std::vector<Vec3> cells(st.occupied().begin(), st.occupied().end());
  std::sort(cells.begin(), cells.end());
  json occupied = json::array();
  for (Vec3 c : cells) occupied.push_back({c.x, c.y, c.z});
  return {200,
          {{"ok", true},
           {"session_id", s.id},
           {"model_id", s.model_id},
           {"mode", std::string(to_string(s.mode))},
           {"k", s.k},
           {"step", st.prefix().size()},
           {"n_total", st.model().size()},
           {"completed", st.complete()},
           {"prefix", std::vector<int>(st.prefix().begin(), st.prefix().end())},
           {"placements", placements},
           {"occupied", occupied},
           {"state_hash", hex(st.state_hash())},
           {"created_ms", millis(s.created)},
           {"updated_ms", millis(s.updated)}}};
}

json GuidanceService::snapshot() const {
  std::shared_lock lock(registry_mutex_);
  json models = json::object();
  for (const auto& [id, m] : models_) models[id] = to_json(*m);
  json sessions = json::array();
  for (const auto& [id, s] : sessions_) {
    std::lock_guard slock(s->mutex);
    sessions.push_back({{"id", id},
                        {"model_id", s->model_id},
                        {"mode", std::string(to_string(s->mode))},
                        {"k", s->k},
                        {"checkpoint", s->checkpoint},
                        {"prefix", std::vector<int>(s->state->prefix().begin(), s->state->prefix().end())}});
  }
  return {{"models", models}, {"sessions", sessions}, {"next_model", next_model_}, {"next_session", next_session_}};
}

void GuidanceService::restore(const json& snap) {
  for (const auto& [id, m] : snap.at("models").items()) {
    std::unique_lock lock(registry_mutex_);
    models_[id] = std::make_shared<const BrickModel>(model_from_json(m));
  }
  for (const auto& js : snap.at("sessions")) {
    auto record = std::make_shared<SessionRecord>();
    record->id = js.at("id").get<std::string>();
    record->model_id = js.at("model_id").get<std::string>();
    record->mode = parse_guidance_mode(js.at("mode").get<std::string>());
    record->k = js.at("k").get<std::size_t>();
    record->checkpoint = js.at("checkpoint").get<std::string>();
    record->lm = record->checkpoint.empty() ? default_lm_ : language_model(record->checkpoint);
    std::shared_ptr<const BrickModel> model;
    {
      std::shared_lock lock(registry_mutex_);
      model = models_.at(record->model_id);
    }
    record->state.emplace(model, record->lm ? record->lm->vocab : nullptr);
    for (int idx : js.at("prefix").get<std::vector<int>>()) record->state->commit(idx);
    record->created = record->updated = std::chrono::system_clock::now();
    std::unique_lock lock(registry_mutex_);
    sessions_[record->id] = record;
  }
  std::unique_lock lock(registry_mutex_);
  next_model_ = snap.at("next_model").get<std::uint64_t>();
  next_session_ = snap.at("next_session").get<std::uint64_t>();
}

void GuidanceService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto adapt = [this](const char* method) {
    return [this, method](const httplib::Request& req, httplib::Response& res) {
      std::map<std::string, std::string> query;
      for (const auto& [k, v] : req.params) query[k] = v;
      const auto r = handle_request(method, req.path, query, req.body, req.get_header_value("Content-Type"));
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
  };
  server_->Get(".*", adapt("GET"));
  server_->Post(".*", adapt("POST"));
}

bool GuidanceService::listen(const std::string& host, int port) {
  install_routes();
  spdlog::info("guidance service listening on {}:{}", host, port);
  const bool ok = server_->listen(host, port);
  if (options_.snapshot) save_json(*options_.snapshot, snapshot());
  return ok;
}

int GuidanceService::start_background() {
  install_routes();
  const int port = server_->bind_to_any_port("127.0.0.1");
  if (port < 0) throw std::runtime_error("could not bind a port");
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void GuidanceService::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) {
    server_thread_.join();
    if (options_.snapshot) save_json(*options_.snapshot, snapshot());
  }
}

}  // namespace brickseq
