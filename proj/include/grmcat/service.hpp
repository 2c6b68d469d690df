#pragma once

// HTTP session API over AdaptiveSession.
//
//   POST /sessions                  {"kind"?, "seed"?}        -> 201 {session_id, n_items, scale_name}
//   GET  /sessions/{id}/next                                  -> 200 {item_id, text, n_levels, step, ...}
//                                                                 | 200 {finished: true, estimate}
//   POST /sessions/{id}/responses   {"item_id", "category"}   -> 200 {step, estimate {mean, sd}, finished}
//   GET  /sessions/{id}/estimate                              -> 200 {mean, sd, entropy, step, density}
//
// Item ids on the wire are the bank's external ids. Errors carry {"error": message}.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <utility>

#include "grmcat/bankio.hpp"
#include "grmcat/session.hpp"
#include "httplib.h"

namespace grmcat {

struct ServiceConfig {
  SelectorSpec default_selector{SelectorKind::StochasticEntropy};
  StoppingRule stopping{20};
  PriorSpec prior;
  GridSpec grid;
  std::string cors_origin = "*";
  std::optional<std::filesystem::path> log_dir;  // one session log per session, rewritten on each change
};

class SessionService {
 public:
  struct Resource {
    std::string id;
    AdaptiveSession session;
    std::chrono::system_clock::time_point created;
    std::optional<ItemId> proposed;
    std::mutex mutex;

    Resource(std::string id_, AdaptiveSession s)
        : id(std::move(id_)), session(std::move(s)), created(std::chrono::system_clock::now()) {}
  };

  SessionService(ItemBank bank, ServiceConfig config)
      : config_(std::move(config)),
        model_(make_model(std::move(bank), build_grid(config_.grid.lo, config_.grid.hi, config_.grid.n_points))),
        prior_(gaussian_prior(model_->grid(), config_.prior.mean, config_.prior.sd)) {
    config_.stopping.max_items = std::min(config_.stopping.max_items, model_->size());
    config_.stopping.validate(model_->size());
    if (config_.log_dir) std::filesystem::create_directories(*config_.log_dir);
  }

  const Model& model() const noexcept { return *model_; }
  const ServiceConfig& config() const noexcept { return config_; }

  std::size_t session_count() const {
    std::shared_lock lock(sessions_mutex_);
    return sessions_.size();
  }

  /// Reloads every persisted log in log_dir. Returns the number restored.
  std::size_t restore_sessions() {
    if (!config_.log_dir) return 0;
    std::size_t n = 0;
    for (const auto& entry : std::filesystem::directory_iterator(*config_.log_dir)) {
      if (entry.path().extension() != ".json") continue;
      const auto log = load_session_log(entry.path(), model_->bank());
      auto res = std::make_shared<Resource>(entry.path().stem().string(), replay_session(log, model_));
      std::unique_lock lock(sessions_mutex_);
      sessions_[res->id] = std::move(res);
      ++n;
    }
    return n;
  }

  std::shared_ptr<Resource> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  void register_routes(httplib::Server& server) {
    const std::string origin = config_.cors_origin;
    server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
      if (!origin.empty()) res.set_header("Access-Control-Allow-Origin", origin);
    });
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return create(req.body); });
    });
    server.Get(R"(/sessions/([A-Za-z0-9]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return next(req.matches[1]); });
    });
    server.Post(R"(/sessions/([A-Za-z0-9]+)/responses)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return respond(req.matches[1], req.body); });
    });
    server.Get(R"(/sessions/([A-Za-z0-9]+)/estimate)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return estimate_of(req.matches[1]); });
    });
  }

  struct Reply {
    int status = 200;
    Json body;
  };

  Reply create(const std::string& body) {
    SelectorSpec spec = config_.default_selector;
    spec.seed.reset();
    if (!body.empty()) {
      const Json req = parse_body(body);
      if (!req.is_object()) return error(400, "request body must be an object");
      if (req.contains("kind") && !req["kind"].is_null()) {
        if (!req["kind"].is_string()) return error(400, "kind must be a string");
        const auto kind = parse_selector_kind(req["kind"].get<std::string>());
        if (!kind) {
          return error(400, "unknown selector '" + req["kind"].get<std::string>() + "'; valid: " + valid_selector_names());
        }
        spec.kind = *kind;
      }
      if (req.contains("seed") && !req["seed"].is_null()) {
        if (!req["seed"].is_number_unsigned()) return error(400, "seed must be a non-negative integer");
        spec.seed = req["seed"].get<std::uint64_t>();
      }
    }
    auto res = std::make_shared<Resource>(new_token(), AdaptiveSession(model_, prior_, spec, config_.stopping));
    {
      std::lock_guard lock(res->mutex);
      persist(*res);
    }
    {
      std::unique_lock lock(sessions_mutex_);
      sessions_[res->id] = res;
    }
    Json out;
    out["session_id"] = res->id;
    out["n_items"] = model_->size();
    out["scale_name"] = model_->bank().scale_name;
    out["selector"] = std::string(selector_name(spec.kind));
    return {201, std::move(out)};
  }

  Reply next(const std::string& id) {
    auto res = find(id);
    if (!res) return error(404, "unknown session");
    std::lock_guard lock(res->mutex);
    if (!res->proposed) res->proposed = res->session.next_item();
    if (!res->proposed) {
      Json out;
      out["finished"] = true;
      out["estimate"] = estimate_json(res->session.estimate());
      return {200, std::move(out)};
    }
    const ItemBank& bank = model_->bank();
    const ItemId item = *res->proposed;
    Json out;
    out["finished"] = false;
    out["item_id"] = bank.external_ids[item];
    out["text"] = bank.texts[item] ? Json(*bank.texts[item]) : Json(nullptr);
    out["n_levels"] = bank[item].n_levels();
    if (bank.level_labels.size() == bank[item].n_levels()) out["level_labels"] = bank.level_labels;
    out["step"] = res->session.state().step();
    return {200, std::move(out)};
  }

  Reply respond(const std::string& id, const std::string& body) {
    auto res = find(id);
    if (!res) return error(404, "unknown session");
    const Json req = parse_body(body);
    if (!req.is_object() || !req.contains("item_id") || !req["item_id"].is_number_integer() ||
        !req.contains("category") || !req["category"].is_number_integer()) {
      return error(400, "body needs integer item_id and category");
    }
    std::lock_guard lock(res->mutex);
    const auto item = model_->bank().find_external(req["item_id"].get<std::int64_t>());
    if (!res->proposed || !item || *item != *res->proposed) {
      return error(409, "item " + std::to_string(req["item_id"].get<std::int64_t>()) + " is not the proposed item");
    }
    const auto cat = req["category"].get<std::int64_t>();
    if (cat < 0 || static_cast<std::size_t>(cat) >= model_->bank()[*item].n_levels()) {
      return error(400, "category " + std::to_string(cat) + " out of range [0, " +
                            std::to_string(model_->bank()[*item].n_levels() - 1) + "]");
    }
    res->session.submit(*item, static_cast<std::size_t>(cat));
    res->proposed.reset();
    persist(*res);
    const Estimate e = res->session.estimate();
    Json out;
    out["step"] = e.step;
    out["estimate"] = {{"mean", e.mean}, {"sd", e.sd}};
    out["finished"] = res->session.finished();
    return {200, std::move(out)};
  }

  Reply estimate_of(const std::string& id) {
    auto res = find(id);
    if (!res) return error(404, "unknown session");
    std::lock_guard lock(res->mutex);
    return {200, estimate_json(res->session.estimate())};
  }

  static Json estimate_json(const Estimate& e) {
    Json out;
    out["mean"] = e.mean;
    out["sd"] = e.sd;
    out["entropy"] = e.entropy;
    out["step"] = e.step;
    out["density"] = {{"points", e.density.grid().points()}, {"values", e.density.values()}};
    return out;
  }

 private:
  struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  static Reply error(int status, const std::string& message) { return {status, Json{{"error", message}}}; }

  static Json parse_body(const std::string& body) {
    try {
      return Json::parse(body);
    } catch (const Json::exception&) {
      throw BadRequest("request body is not valid JSON");
    }
  }

  template <class F>
  static void handle(httplib::Response& res, F&& f) {
    Reply r;
    try {
      r = f();
    } catch (const BadRequest& e) {
      r = error(400, e.what());
    } catch (const std::exception& e) {
      r = error(500, e.what());
    }
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  std::string new_token() {
    std::lock_guard lock(token_mutex_);
    for (;;) {
      char buf[33];
      std::snprintf(buf, sizeof buf, "%08x%08x%08x%08x", token_source_(), token_source_(), token_source_(),
                    token_source_());
      std::string token(buf);
      if (!find(token)) return token;
    }
  }

  // Caller holds the resource mutex.
  void persist(const Resource& res) const {
    if (!config_.log_dir) return;
    const auto path = *config_.log_dir / (res.id + ".json");
    const auto tmp = *config_.log_dir / (res.id + ".json.tmp");
    save_session_log(make_session_log(res.session, config_.prior, config_.grid), model_->bank(), tmp);
    std::filesystem::rename(tmp, path);
  }

  ServiceConfig config_;
  ModelPtr model_;
  Density prior_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Resource>> sessions_;
  std::mutex token_mutex_;
  std::random_device token_source_;
};

}  // namespace grmcat
