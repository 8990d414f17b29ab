#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>

#include "brickseq/checkpoint.hpp"
#include "brickseq/generate.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace brickseq {

enum class GuidanceMode { single_track, multi_track, on_demand };

std::string_view to_string(GuidanceMode mode);
GuidanceMode parse_guidance_mode(std::string_view name);

struct ServiceOptions {
  std::optional<std::filesystem::path> checkpoint;
  // On NoValidCandidate, answer 422 together with the oracle frontier.
  bool fallback_oracle = false;
  std::size_t default_k = 3;
  GenerationConfig generation{};
  std::optional<std::filesystem::path> snapshot;  // written on shutdown, read on start
};

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

// Route table (all bodies JSON, all responses {"ok": bool, ...}):
//   POST /models                      brick-model JSON -> {model_id}
//   POST /sessions                    {model_id, mode, k?, checkpoint?} -> {session_id, n_total, step}
//   GET  /sessions/{id}/candidates?k= -> {step, completed, candidates}
//   POST /sessions/{id}/step          {rank | placement | index, step} -> {step, completed}
//   POST /sessions/{id}/undo          {step} -> {step}
//   GET  /sessions/{id}/state         -> prefix, placements, occupied cells
//   GET  /health                      -> {ok}
class GuidanceService {
 public:
  explicit GuidanceService(ServiceOptions options);
  ~GuidanceService();

  GuidanceService(const GuidanceService&) = delete;
  GuidanceService& operator=(const GuidanceService&) = delete;

  HttpResponse handle_request(std::string_view method, std::string_view path,
                              const std::map<std::string, std::string>& query, std::string_view body,
                              std::string_view content_type = "application/json");

  // Blocking.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port on 127.0.0.1 and serves from a background thread.
  int start_background();
  void stop();

  nlohmann::json snapshot() const;
  void restore(const nlohmann::json& snap);

 private:
  struct LanguageModel {
    LMParams params;
    std::shared_ptr<const Vocabulary> vocab;
  };

  struct SessionRecord {
    std::mutex mutex;
    std::string id;
    std::string model_id;
    GuidanceMode mode = GuidanceMode::multi_track;
    std::size_t k = 3;
    std::shared_ptr<const LanguageModel> lm;
    std::string checkpoint;  // empty: service default
    std::optional<SessionState> state;
    std::chrono::system_clock::time_point created, updated;
  };

  HttpResponse post_model(const nlohmann::json& body);
  HttpResponse post_session(const nlohmann::json& body);
  HttpResponse get_candidates(SessionRecord& s, const std::map<std::string, std::string>& query);
  HttpResponse post_step(SessionRecord& s, const nlohmann::json& body);
  HttpResponse post_undo(SessionRecord& s, const nlohmann::json& body);
  HttpResponse get_state(SessionRecord& s) const;

  CandidateSet candidates_for(const SessionRecord& s, std::size_t k, std::string& source) const;
  nlohmann::json candidates_json(const SessionRecord& s, const CandidateSet& set) const;
  std::shared_ptr<const LanguageModel> language_model(const std::string& path);
  std::shared_ptr<SessionRecord> find_session(const std::string& id) const;
  void install_routes();

  ServiceOptions options_;
  std::shared_ptr<const LanguageModel> default_lm_;

  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<const BrickModel>> models_;
  std::map<std::string, std::shared_ptr<SessionRecord>> sessions_;
  std::map<std::string, std::shared_ptr<const LanguageModel>> checkpoints_;
  std::uint64_t next_model_ = 1;
  std::uint64_t next_session_ = 1;

  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
};

}  // namespace brickseq
