// grmcat command-line driver.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration error,
// 3 bank error, 4 the server could not bind its address.

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "grmcat/bankio.hpp"
#include "grmcat/service.hpp"
#include "grmcat/simulate.hpp"

#ifndef GRMCAT_DATA_DIR
#define GRMCAT_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using namespace grmcat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitBank = 3;
constexpr int kExitBind = 4;

constexpr const char* kDefaultBank = "synthetic-50.json";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Explicit paths are used as given. A relative path that does not exist, or
/// no path at all, is looked up in $GRMCAT_BANK_DIR and then the bundled data.
fs::path resolve_bank(const std::string& flag) {
  const fs::path wanted = flag.empty() ? fs::path(kDefaultBank) : fs::path(flag);
  if (!flag.empty() && (wanted.is_absolute() || fs::exists(wanted))) return wanted;
  if (const char* dir = std::getenv("GRMCAT_BANK_DIR"); dir && *dir) {
    if (fs::exists(fs::path(dir) / wanted)) return fs::path(dir) / wanted;
  }
  if (fs::exists(fs::path(GRMCAT_DATA_DIR) / wanted)) return fs::path(GRMCAT_DATA_DIR) / wanted;
  return wanted;
}

ItemBank load_bank_or_throw(const std::string& flag) {
  const fs::path path = resolve_bank(flag);
  ItemBank bank = load_bank(path);
  try {
    bank.validate();
  } catch (const std::invalid_argument& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  return bank;
}

SelectorSpec parse_selector_flag(const std::string& name) {
  const auto kind = parse_selector_kind(name);
  if (!kind) throw UsageError("unknown selector '" + name + "'; valid: " + valid_selector_names());
  return {*kind};
}

// ---------------------------------------------------------------------------

struct SimulateFlags {
  std::string bank, config, out = "report";
  std::vector<double> thetas;
  std::vector<std::size_t> lengths;
  std::vector<std::string> selectors;
  std::optional<std::size_t> replicates, grid_points;
  std::optional<double> prior_mean, prior_sd;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool quiet = false;
};

int cmd_simulate(const SimulateFlags& f) {
  SimulationConfig config;
  if (!f.config.empty()) {
    try {
      config = load_config(f.config);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  if (!f.thetas.empty()) config.theta_values = f.thetas;
  if (!f.lengths.empty()) config.test_lengths = f.lengths;
  if (!f.selectors.empty()) {
    config.selectors.clear();
    for (const auto& s : f.selectors) config.selectors.push_back(parse_selector_flag(s));
  }
  if (config.selectors.empty()) {
    for (auto kind : kAllSelectorKinds) config.selectors.push_back({kind});
  }
  if (f.replicates) config.replicates = *f.replicates;
  if (f.grid_points) config.grid_points = *f.grid_points;
  if (f.prior_mean) config.prior_mean = *f.prior_mean;
  if (f.prior_sd) config.prior_sd = *f.prior_sd;
  if (f.seed) config.master_seed = *f.seed;

  const ItemBank bank = load_bank_or_throw(f.bank);
  try {
    config.validate(bank.size());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::size_t last_reported = 0;
  ProgressCallback progress;
  if (!f.quiet) {
    progress = [&](std::size_t done, std::size_t total) {
      const std::size_t tick = std::max<std::size_t>(1, total / 20);
      if (done == total || done >= last_reported + tick) {
        last_reported = done;
        std::fprintf(stderr, "simulate: %zu/%zu respondent cells\n", done, total);
      }
    };
  }
  const SimulationReport report = run_batch(config, bank, f.threads, progress);
  save_report(report, f.out);

  if (!f.quiet) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "%-20s %-5s %4s %10s %10s %9s\n", "selector", "band", "t", "kl", "|err|", "exposure");
    for (const auto& r : report.bands) {
      std::fprintf(stderr, "%-20s %-5s %4zu %10.4f %10.4f %9zu\n", r.selector.c_str(), r.group.c_str(), r.test_length,
                   r.kl.mean, r.abs_error_true.mean, r.exposure);
    }
    std::fprintf(stderr, "simulate: wrote %s in %.1f s\n", fs::path(f.out).string().c_str(), secs);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ScoreFlags {
  std::string bank, responses;
  double prior_mean = 0.0;
  double prior_sd = std::sqrt(2.0);
  std::size_t grid_points = 200;
};

int cmd_score(const ScoreFlags& f) {
  const ItemBank bank = load_bank_or_throw(f.bank);
  if (!(f.prior_sd > 0.0)) throw UsageError("prior sd must be > 0");
  std::vector<ResponseRecord> responses;
  try {
    responses = load_responses(f.responses, bank);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const auto model = make_model(bank, build_grid(-6.0, 6.0, f.grid_points));
  SessionState state(model, gaussian_prior(model->grid(), f.prior_mean, f.prior_sd));
  for (const auto& r : responses) state.submit(r.item_id, r.category);
  const Estimate e = estimate(state);
  Json out;
  out["n_responses"] = e.step;
  out["mean"] = e.mean;
  out["sd"] = e.sd;
  out["entropy"] = e.entropy;
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_validate_bank(const std::string& flag) {
  const ItemBank bank = load_bank_or_throw(flag);
  std::size_t min_k = SIZE_MAX, max_k = 0, with_text = 0;
  for (ItemId i = 0; i < bank.size(); ++i) {
    min_k = std::min(min_k, bank[i].n_levels());
    max_k = std::max(max_k, bank[i].n_levels());
    with_text += bank.texts[i].has_value();
  }
  std::printf("%s: %zu items, %zu-%zu levels, %zu with text\n", bank.scale_name.c_str(), bank.size(), min_k, max_k,
              with_text);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SynthesizeFlags {
  std::size_t items = 50, levels = 5;
  std::uint64_t seed = 1;
  std::string name = "synthetic";
  std::string out;
};

int cmd_synthesize_bank(const SynthesizeFlags& f) {
  ItemBank bank;
  try {
    bank = synthetic_bank(f.items, f.levels, f.seed, f.name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  save_bank(bank, f.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ServeFlags {
  std::string bank;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string selector = "stochastic-entropy";
  std::size_t max_items = 20;
  std::optional<double> sd_threshold;
  double prior_mean = 0.0;
  double prior_sd = std::sqrt(2.0);
  std::string cors_origin = "*";
  std::string log_dir;
  bool restore = false;
};

int cmd_serve(const ServeFlags& f) {
  ServiceConfig cfg;
  cfg.default_selector = parse_selector_flag(f.selector);
  cfg.stopping = {f.max_items, f.sd_threshold};
  cfg.prior = {f.prior_mean, f.prior_sd};
  cfg.cors_origin = f.cors_origin;
  if (!f.log_dir.empty()) cfg.log_dir = f.log_dir;
  if (!(f.prior_sd > 0.0)) throw UsageError("prior sd must be > 0");
  if (f.max_items < 1) throw UsageError("max items must be >= 1");
  if (f.sd_threshold && !(*f.sd_threshold > 0.0)) throw UsageError("sd threshold must be > 0");

  ItemBank bank = load_bank_or_throw(f.bank);
  SessionService service(std::move(bank), cfg);
  if (f.restore) {
    const std::size_t n = service.restore_sessions();
    std::fprintf(stderr, "serve: restored %zu sessions\n", n);
  }

  // Signals go to a dedicated waiter thread; every other thread inherits the mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  httplib::Server server;
  // httplib's default also sets SO_REUSEPORT, which would let a second server
  // share an occupied port instead of failing to bind.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  });
  service.register_routes(server);
  int port = f.port;
  if (port == 0) {
    port = server.bind_to_any_port(f.host);
    if (port < 0) {
      std::fprintf(stderr, "serve: cannot bind %s\n", f.host.c_str());
      return kExitBind;
    }
  } else if (!server.bind_to_port(f.host, port)) {
    std::fprintf(stderr, "serve: cannot bind %s:%d\n", f.host.c_str(), port);
    return kExitBind;
  }

  std::atomic<bool> interrupted{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    interrupted = true;
    server.stop();
  });

  std::fprintf(stderr, "serve: listening on http://%s:%d\n", f.host.c_str(), port);
  std::fflush(stderr);
  const bool ok = server.listen_after_bind();
  if (!interrupted) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  std::fprintf(stderr, "serve: stopped\n");
  return ok || interrupted ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graded Response Model adaptive testing engine"};
  app.require_subcommand(1);

  SimulateFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Run the batch simulation and write report files");
  simulate->add_option("--bank", sim.bank, "Item bank JSON (default: bundled synthetic-50.json)");
  simulate->add_option("--config", sim.config, "Simulation config JSON; flags override its values");
  simulate->add_option("--out", sim.out, "Output directory")->capture_default_str();
  simulate->add_option("--thetas", sim.thetas, "True ability values")->delimiter(',');
  simulate->add_option("--lengths", sim.lengths, "Test lengths")->delimiter(',');
  simulate->add_option("--selectors", sim.selectors, "Selector kinds")->delimiter(',');
  simulate->add_option("--replicates", sim.replicates, "Respondents per ability value");
  simulate->add_option("--grid-points", sim.grid_points, "Quadrature points on [-6, 6]");
  simulate->add_option("--prior-mean", sim.prior_mean, "Prior mean");
  simulate->add_option("--prior-sd", sim.prior_sd, "Prior standard deviation");
  simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_option("--threads", sim.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  simulate->add_flag("--quiet", sim.quiet, "No progress output");

  ScoreFlags sc;
  auto* score = app.add_subcommand("score", "Score one respondent's responses");
  score->add_option("--bank", sc.bank, "Item bank JSON");
  score->add_option("--responses", sc.responses, "Responses JSON {\"responses\": [{item_id, category}]}")->required();
  score->add_option("--prior-mean", sc.prior_mean, "Prior mean")->capture_default_str();
  score->add_option("--prior-sd", sc.prior_sd, "Prior standard deviation")->capture_default_str();
  score->add_option("--grid-points", sc.grid_points, "Quadrature points")->capture_default_str();

  std::string validate_path;
  auto* validate = app.add_subcommand("validate-bank", "Check an item bank file");
  validate->add_option("--bank,bank", validate_path, "Item bank JSON");

  SynthesizeFlags syn;
  auto* synthesize = app.add_subcommand("synthesize-bank", "Write a synthetic item bank");
  synthesize->add_option("--items", syn.items, "Number of items")->capture_default_str();
  synthesize->add_option("--levels", syn.levels, "Response categories per item")->capture_default_str();
  synthesize->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();
  synthesize->add_option("--name", syn.name, "Scale name")->capture_default_str();
  synthesize->add_option("--out", syn.out, "Output path")->required();

  ServeFlags sv;
  auto* serve = app.add_subcommand("serve", "Serve the live session API");
  serve->add_option("--bank", sv.bank, "Item bank JSON");
  serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
  serve->add_option("--port", sv.port, "Port, 0 for any free port")->capture_default_str();
  serve->add_option("--selector", sv.selector, "Default selector kind")->capture_default_str();
  serve->add_option("--max-items", sv.max_items, "Stop after this many items")->capture_default_str();
  serve->add_option("--sd-threshold", sv.sd_threshold, "Stop once the posterior sd falls to this value");
  serve->add_option("--prior-mean", sv.prior_mean, "Prior mean")->capture_default_str();
  serve->add_option("--prior-sd", sv.prior_sd, "Prior standard deviation")->capture_default_str();
  serve->add_option("--cors-origin", sv.cors_origin, "Access-Control-Allow-Origin value")->capture_default_str();
  serve->add_option("--log-dir", sv.log_dir, "Persist session logs here");
  serve->add_flag("--restore", sv.restore, "Reload sessions from --log-dir at startup");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*score) return cmd_score(sc);
    if (*validate) return cmd_validate_bank(validate_path);
    if (*synthesize) return cmd_synthesize_bank(syn);
    if (*serve) return cmd_serve(sv);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const LoadError& e) {
    std::fprintf(stderr, "bank error: %s\n", e.what());
    return kExitBank;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
