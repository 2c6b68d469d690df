#pragma once

// Durable documents. All four are versioned JSON:
//
//   bank         {"format": "grmcat-bank", "version": 1, "scale_name", "level_labels"?,
//                 "items": [{"id", "discrimination", "thresholds", "n_levels", "text"?}]}
//   config       {"format": "grmcat-simulation-config", "version": 1, "theta_values", "replicates",
//                 "test_lengths", "selectors", "prior": {"mean", "sd"}, "grid": {"lo", "hi", "n_points"},
//                 "seed"}   (every field but format/version optional)
//   session log  {"format": "grmcat-session-log", "version": 1, "scale_name", "n_items",
//                 "selector": {"kind", "tie_break", "seed"}, "stopping": {"max_items", "sd_threshold"},
//                 "prior": {"mean", "sd"}, "grid": {"lo", "hi", "n_points"},
//                 "responses": [{"item_id", "category"}]}
//   report       {"format": "grmcat-report", "version": 1, "n_items", "master_seed", "rows", "bands"}
//
// Item ids in files are the bank's external ids; categories are 0-based.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "grmcat/errors.hpp"
#include "grmcat/format.hpp"
#include "grmcat/grm.hpp"
#include "grmcat/selectors.hpp"
#include "grmcat/session.hpp"
#include "grmcat/simulate.hpp"

namespace grmcat {

using Json = nlohmann::ordered_json;

inline constexpr int kBankVersion = 1;
inline constexpr int kConfigVersion = 1;
inline constexpr int kSessionLogVersion = 1;
inline constexpr int kReportVersion = 1;

namespace io_detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline Json parse(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw LoadError(what + ": malformed document: " + e.what());
  }
}

inline void check_header(const Json& doc, std::string_view format, int version, const std::string& what) {
  if (!doc.is_object()) throw LoadError(what + ": expected a JSON object");
  if (!doc.contains("format") || doc["format"] != format) {
    throw LoadError(what + ": not a " + std::string(format) + " document");
  }
  if (!doc.contains("version") || !doc["version"].is_number_integer()) {
    throw LoadError(what + ": missing version");
  }
  if (doc["version"].get<int>() != version) {
    throw LoadError(what + ": unsupported version " + doc["version"].dump() + " (expected " +
                    std::to_string(version) + ")");
  }
}

inline std::string dump(const Json& doc) { return doc.dump(2) + "\n"; }

inline Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline double number_or_nan(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Bank

inline Json bank_to_json(const ItemBank& bank) {
  Json doc;
  doc["format"] = "grmcat-bank";
  doc["version"] = kBankVersion;
  doc["scale_name"] = bank.scale_name;
  if (!bank.level_labels.empty()) doc["level_labels"] = bank.level_labels;
  Json items = Json::array();
  for (ItemId i = 0; i < bank.size(); ++i) {
    Json item;
    item["id"] = bank.external_ids.at(i);
    item["discrimination"] = bank[i].discrimination();
    item["thresholds"] = bank[i].thresholds();
    item["n_levels"] = bank[i].n_levels();
    if (bank.texts.at(i)) item["text"] = *bank.texts[i];
    items.push_back(std::move(item));
  }
  doc["items"] = std::move(items);
  return doc;
}

/// Parses and validates a bank document. Items get dense ids in file order;
/// bank.external_ids maps them back to the ids in the file.
inline ItemBank bank_from_json(const Json& doc, const std::string& what = "bank") {
  io_detail::check_header(doc, "grmcat-bank", kBankVersion, what);
  ItemBank bank;
  if (doc.contains("scale_name")) {
    if (!doc["scale_name"].is_string()) throw LoadError(what + ": scale_name must be a string");
    bank.scale_name = doc["scale_name"].get<std::string>();
  }
  if (doc.contains("level_labels")) {
    try {
      bank.level_labels = doc["level_labels"].get<std::vector<std::string>>();
    } catch (const Json::exception&) {
      throw LoadError(what + ": level_labels must be a list of strings");
    }
  }
  if (!doc.contains("items") || !doc["items"].is_array()) throw LoadError(what + ": missing items list");
  if (doc["items"].empty()) throw LoadError(what + ": bank has no items");

  std::size_t position = 0;
  for (const auto& item : doc["items"]) {
    std::string label = "item #" + std::to_string(position);
    try {
      if (!item.is_object()) throw LoadError("not an object");
      if (!item.contains("id") || !item["id"].is_number_integer()) throw LoadError("missing integer id");
      const auto ext = item["id"].get<std::int64_t>();
      label = "item " + std::to_string(ext);
      if (bank.find_external(ext)) throw LoadError("duplicate id");
      if (!item.contains("discrimination") || !item["discrimination"].is_number()) {
        throw LoadError("missing discrimination");
      }
      if (!item.contains("thresholds") || !item["thresholds"].is_array()) throw LoadError("missing thresholds");
      const auto a = item["discrimination"].get<double>();
      const auto b = item["thresholds"].get<std::vector<double>>();
      if (!(a > 0.0)) throw LoadError("discrimination must be > 0");
      for (std::size_t k = 1; k < b.size(); ++k) {
        if (!(b[k - 1] < b[k])) throw LoadError("thresholds must be strictly increasing");
      }
      if (item.contains("n_levels")) {
        if (!item["n_levels"].is_number_integer() || item["n_levels"].get<std::int64_t>() !=
                                                          static_cast<std::int64_t>(b.size() + 1)) {
          throw LoadError("n_levels must equal the number of thresholds + 1");
        }
      }
      std::optional<std::string> text;
      if (item.contains("text")) {
        if (!item["text"].is_string()) throw LoadError("text must be a string");
        text = item["text"].get<std::string>();
      }
      bank.items.emplace_back(a, b);
      bank.external_ids.push_back(ext);
      bank.texts.push_back(std::move(text));
    } catch (const LoadError& e) {
      throw LoadError(what + ": " + label + ": " + e.what());
    } catch (const std::exception& e) {
      throw LoadError(what + ": " + label + ": " + e.what());
    }
    ++position;
  }
  return bank;
}

inline ItemBank load_bank(const std::filesystem::path& path) {
  return bank_from_json(io_detail::parse(io_detail::read_file(path), path.string()), path.string());
}

inline void save_bank(const ItemBank& bank, const std::filesystem::path& path) {
  io_detail::write_file(path, io_detail::dump(bank_to_json(bank)));
}

// ---------------------------------------------------------------------------
// Selector specs

inline std::string_view tie_break_name(TieBreak t) noexcept { return t == TieBreak::Random ? "random" : "lowest-id"; }

inline Json selector_to_json(const SelectorSpec& spec) {
  Json j;
  j["kind"] = std::string(selector_name(spec.kind));
  j["tie_break"] = std::string(tie_break_name(spec.tie_break));
  j["seed"] = spec.seed ? Json(*spec.seed) : Json(nullptr);
  return j;
}

/// Accepts a bare kind name or {"kind", "tie_break"?, "seed"?}.
inline SelectorSpec selector_from_json(const Json& j) {
  SelectorSpec spec;
  const Json& kind = j.is_object() ? j.value("kind", Json()) : j;
  if (!kind.is_string()) throw std::invalid_argument("selector kind must be a string");
  const auto parsed = parse_selector_kind(kind.get<std::string>());
  if (!parsed) {
    throw std::invalid_argument("unknown selector '" + kind.get<std::string>() + "'; valid: " + valid_selector_names());
  }
  spec.kind = *parsed;
  if (j.is_object()) {
    if (j.contains("tie_break")) {
      const auto tb = j["tie_break"].get<std::string>();
      if (tb == "random") spec.tie_break = TieBreak::Random;
      else if (tb == "lowest-id") spec.tie_break = TieBreak::LowestId;
      else throw std::invalid_argument("unknown tie_break '" + tb + "'; valid: lowest-id, random");
    }
    if (j.contains("seed") && !j["seed"].is_null()) spec.seed = j["seed"].get<std::uint64_t>();
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Simulation config

inline SimulationConfig config_from_json(const Json& doc) {
  const std::string what = "config";
  io_detail::check_header(doc, "grmcat-simulation-config", kConfigVersion, what);
  SimulationConfig c;
  try {
    if (doc.contains("theta_values")) c.theta_values = doc["theta_values"].get<std::vector<double>>();
    if (doc.contains("replicates")) c.replicates = doc["replicates"].get<std::size_t>();
    if (doc.contains("test_lengths")) c.test_lengths = doc["test_lengths"].get<std::vector<std::size_t>>();
    if (doc.contains("selectors")) {
      for (const auto& s : doc["selectors"]) c.selectors.push_back(selector_from_json(s));
    }
    if (doc.contains("prior")) {
      c.prior_mean = doc["prior"].value("mean", c.prior_mean);
      c.prior_sd = doc["prior"].value("sd", c.prior_sd);
    }
    if (doc.contains("grid")) {
      c.grid_lo = doc["grid"].value("lo", c.grid_lo);
      c.grid_hi = doc["grid"].value("hi", c.grid_hi);
      c.grid_points = doc["grid"].value("n_points", c.grid_points);
    }
    if (doc.contains("seed")) c.master_seed = doc["seed"].get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw std::invalid_argument(what + ": " + e.what());
  }
  return c;
}

inline Json config_to_json(const SimulationConfig& c) {
  Json doc;
  doc["format"] = "grmcat-simulation-config";
  doc["version"] = kConfigVersion;
  doc["theta_values"] = c.theta_values;
  doc["replicates"] = c.replicates;
  doc["test_lengths"] = c.test_lengths;
  Json sel = Json::array();
  for (const auto& s : c.selectors) sel.push_back(selector_to_json(s));
  doc["selectors"] = std::move(sel);
  doc["prior"] = {{"mean", c.prior_mean}, {"sd", c.prior_sd}};
  doc["grid"] = {{"lo", c.grid_lo}, {"hi", c.grid_hi}, {"n_points", c.grid_points}};
  doc["seed"] = c.master_seed;
  return doc;
}

inline SimulationConfig load_config(const std::filesystem::path& path) {
  return config_from_json(io_detail::parse(io_detail::read_file(path), path.string()));
}

// ---------------------------------------------------------------------------
// Session log

struct PriorSpec {
  double mean = 0.0;
  double sd = std::sqrt(2.0);
};

struct GridSpec {
  double lo = -6.0;
  double hi = 6.0;
  std::size_t n_points = 200;
};

/// Everything needed to replay a session bit-identically against its bank.
/// Responses use dense item ids; the document stores external ids.
struct SessionLog {
  std::string scale_name;
  std::size_t n_items = 0;
  SelectorSpec selector;  // seed always set
  StoppingRule stopping;
  PriorSpec prior;
  GridSpec grid;
  std::vector<ResponseRecord> responses;
};

inline SessionLog make_session_log(const AdaptiveSession& session, PriorSpec prior, GridSpec grid) {
  SessionLog log;
  log.scale_name = session.state().bank().scale_name;
  log.n_items = session.state().bank().size();
  log.selector = session.spec();
  log.selector.seed = session.seed();
  log.stopping = session.rule();
  log.prior = prior;
  log.grid = grid;
  log.responses.assign(session.state().administered().begin(), session.state().administered().end());
  return log;
}

inline Json session_log_to_json(const SessionLog& log, const ItemBank& bank) {
  Json doc;
  doc["format"] = "grmcat-session-log";
  doc["version"] = kSessionLogVersion;
  doc["scale_name"] = log.scale_name;
  doc["n_items"] = log.n_items;
  doc["selector"] = selector_to_json(log.selector);
  doc["stopping"] = {{"max_items", log.stopping.max_items},
                     {"sd_threshold", log.stopping.sd_threshold ? Json(*log.stopping.sd_threshold) : Json(nullptr)}};
  doc["prior"] = {{"mean", log.prior.mean}, {"sd", log.prior.sd}};
  doc["grid"] = {{"lo", log.grid.lo}, {"hi", log.grid.hi}, {"n_points", log.grid.n_points}};
  Json responses = Json::array();
  for (const auto& r : log.responses) {
    responses.push_back({{"item_id", bank.external_ids.at(r.item_id)}, {"category", r.category}});
  }
  doc["responses"] = std::move(responses);
  return doc;
}

inline SessionLog session_log_from_json(const Json& doc, const ItemBank& bank, const std::string& what = "session log") {
  io_detail::check_header(doc, "grmcat-session-log", kSessionLogVersion, what);
  SessionLog log;
  try {
    log.scale_name = doc.at("scale_name").get<std::string>();
    log.n_items = doc.at("n_items").get<std::size_t>();
    log.selector = selector_from_json(doc.at("selector"));
    const auto& st = doc.at("stopping");
    log.stopping.max_items = st.at("max_items").get<std::size_t>();
    if (!st.at("sd_threshold").is_null()) log.stopping.sd_threshold = st["sd_threshold"].get<double>();
    log.prior = {doc.at("prior").at("mean").get<double>(), doc.at("prior").at("sd").get<double>()};
    log.grid = {doc.at("grid").at("lo").get<double>(), doc.at("grid").at("hi").get<double>(),
                doc.at("grid").at("n_points").get<std::size_t>()};
    for (const auto& r : doc.at("responses")) {
      const auto ext = r.at("item_id").get<std::int64_t>();
      const auto id = bank.find_external(ext);
      if (!id) throw LoadError("response references unknown item " + std::to_string(ext));
      log.responses.push_back({*id, r.at("category").get<std::size_t>()});
      check_response(bank, log.responses.back());
    }
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw LoadError(what + ": " + e.what());
  }
  if (!log.selector.seed) throw LoadError(what + ": selector seed is required for replay");
  if (log.n_items != bank.size() || log.scale_name != bank.scale_name) {
    throw LoadError(what + ": recorded for a different bank");
  }
  return log;
}

inline void save_session_log(const SessionLog& log, const ItemBank& bank, const std::filesystem::path& path) {
  io_detail::write_file(path, io_detail::dump(session_log_to_json(log, bank)));
}

inline SessionLog load_session_log(const std::filesystem::path& path, const ItemBank& bank) {
  return session_log_from_json(io_detail::parse(io_detail::read_file(path), path.string()), bank, path.string());
}

/// Rebuilds the session by resubmitting every logged response in order.
inline AdaptiveSession replay_session(const SessionLog& log, const ModelPtr& model) {
  const GridPtr& grid = model->grid();
  if (!(*grid == AbilityGrid(log.grid.lo, log.grid.hi, log.grid.n_points))) {
    throw LoadError("session log grid differs from the model grid");
  }
  AdaptiveSession session(model, gaussian_prior(grid, log.prior.mean, log.prior.sd), log.selector, log.stopping);
  for (const auto& r : log.responses) session.submit(r.item_id, r.category);
  return session;
}

// ---------------------------------------------------------------------------
// Report

inline constexpr const char* kReportColumns[] = {
    "selector",         "theta",          "test_length",         "sessions",
    "kl_mean",          "kl_sd",          "abs_error_full_mean", "abs_error_full_sd",
    "abs_error_true_mean", "abs_error_true_sd", "posterior_sd_mean", "posterior_sd_sd",
    "exposure"};

inline Json report_row_to_json(const ReportRow& r, bool band) {
  using io_detail::number_or_null;
  Json j;
  j["selector"] = r.selector;
  if (band) j["band"] = r.group;
  else j["theta"] = r.theta;
  j["test_length"] = r.test_length;
  j["sessions"] = r.sessions;
  j["kl_mean"] = number_or_null(r.kl.mean);
  j["kl_sd"] = number_or_null(r.kl.sd);
  j["abs_error_full_mean"] = number_or_null(r.abs_error_full.mean);
  j["abs_error_full_sd"] = number_or_null(r.abs_error_full.sd);
  j["abs_error_true_mean"] = number_or_null(r.abs_error_true.mean);
  j["abs_error_true_sd"] = number_or_null(r.abs_error_true.sd);
  j["posterior_sd_mean"] = number_or_null(r.posterior_sd.mean);
  j["posterior_sd_sd"] = number_or_null(r.posterior_sd.sd);
  j["exposure"] = r.exposure;
  return j;
}

inline ReportRow report_row_from_json(const Json& j, bool band) {
  using io_detail::number_or_nan;
  ReportRow r;
  r.selector = j.at("selector").get<std::string>();
  if (band) {
    r.group = j.at("band").get<std::string>();
    r.theta = std::nan("");
  } else {
    r.theta = j.at("theta").get<double>();
    r.group = format_theta(r.theta);
  }
  r.test_length = j.at("test_length").get<std::size_t>();
  r.sessions = j.at("sessions").get<std::size_t>();
  r.kl = {number_or_nan(j.at("kl_mean")), number_or_nan(j.at("kl_sd"))};
  r.abs_error_full = {number_or_nan(j.at("abs_error_full_mean")), number_or_nan(j.at("abs_error_full_sd"))};
  r.abs_error_true = {number_or_nan(j.at("abs_error_true_mean")), number_or_nan(j.at("abs_error_true_sd"))};
  r.posterior_sd = {number_or_nan(j.at("posterior_sd_mean")), number_or_nan(j.at("posterior_sd_sd"))};
  r.exposure = j.at("exposure").get<std::size_t>();
  return r;
}

inline Json report_to_json(const SimulationReport& report) {
  Json doc;
  doc["format"] = "grmcat-report";
  doc["version"] = kReportVersion;
  doc["n_items"] = report.n_items;
  doc["master_seed"] = report.master_seed;
  Json rows = Json::array();
  for (const auto& r : report.rows) rows.push_back(report_row_to_json(r, false));
  Json bands = Json::array();
  for (const auto& r : report.bands) bands.push_back(report_row_to_json(r, true));
  doc["rows"] = std::move(rows);
  doc["bands"] = std::move(bands);
  return doc;
}

inline SimulationReport report_from_json(const Json& doc, const std::string& what = "report") {
  io_detail::check_header(doc, "grmcat-report", kReportVersion, what);
  SimulationReport report;
  try {
    report.n_items = doc.at("n_items").get<std::size_t>();
    report.master_seed = doc.at("master_seed").get<std::uint64_t>();
    for (const auto& r : doc.at("rows")) report.rows.push_back(report_row_from_json(r, false));
    for (const auto& r : doc.at("bands")) report.bands.push_back(report_row_from_json(r, true));
  } catch (const std::exception& e) {
    throw LoadError(what + ": " + e.what());
  }
  return report;
}

/// Comma-separated table, one row per (selector, theta or band, test length).
inline std::string report_csv(const std::vector<ReportRow>& rows, bool band) {
  std::string out;
  for (std::size_t c = 0; c < std::size(kReportColumns); ++c) {
    if (c) out += ',';
    out += (band && c == 1) ? "band" : kReportColumns[c];
  }
  out += '\n';
  for (const auto& r : rows) {
    out += r.selector + ',' + (band ? r.group : format_double(r.theta)) + ',' + std::to_string(r.test_length) + ',' +
           std::to_string(r.sessions);
    for (double x : {r.kl.mean, r.kl.sd, r.abs_error_full.mean, r.abs_error_full.sd, r.abs_error_true.mean,
                     r.abs_error_true.sd, r.posterior_sd.mean, r.posterior_sd.sd}) {
      out += ',' + format_double(x);
    }
    out += ',' + std::to_string(r.exposure) + '\n';
  }
  return out;
}

/// Writes report.csv, report_bands.csv and report.json into dir.
inline void save_report(const SimulationReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io_detail::write_file(dir / "report.csv", report_csv(report.rows, false));
  io_detail::write_file(dir / "report_bands.csv", report_csv(report.bands, true));
  io_detail::write_file(dir / "report.json", io_detail::dump(report_to_json(report)));
}

inline SimulationReport load_report(const std::filesystem::path& json_path) {
  return report_from_json(io_detail::parse(io_detail::read_file(json_path), json_path.string()), json_path.string());
}

// ---------------------------------------------------------------------------
// Response files for standalone scoring: {"responses": [{"item_id", "category"}]}

inline std::vector<ResponseRecord> responses_from_json(const Json& doc, const ItemBank& bank) {
  if (!doc.is_object() || !doc.contains("responses") || !doc["responses"].is_array()) {
    throw LoadError("responses: expected an object with a responses list");
  }
  std::vector<ResponseRecord> out;
  std::vector<bool> seen(bank.size(), false);
  for (const auto& r : doc["responses"]) {
    if (!r.is_object() || !r.contains("item_id") || !r.contains("category") ||
        !r["item_id"].is_number_integer() || !r["category"].is_number_integer()) {
      throw LoadError("responses: each entry needs integer item_id and category");
    }
    const auto ext = r["item_id"].get<std::int64_t>();
    const auto id = bank.find_external(ext);
    if (!id) throw std::invalid_argument("responses: unknown item " + std::to_string(ext));
    const auto cat = r["category"].get<std::int64_t>();
    if (cat < 0 || static_cast<std::size_t>(cat) >= bank[*id].n_levels()) {
      throw std::invalid_argument("responses: category " + std::to_string(cat) + " out of range for item " +
                                  std::to_string(ext));
    }
    if (seen[*id]) throw std::invalid_argument("responses: item " + std::to_string(ext) + " answered twice");
    seen[*id] = true;
    out.push_back({*id, static_cast<std::size_t>(cat)});
  }
  return out;
}

inline std::vector<ResponseRecord> load_responses(const std::filesystem::path& path, const ItemBank& bank) {
  return responses_from_json(io_detail::parse(io_detail::read_file(path), path.string()), bank);
}

}  // namespace grmcat
