// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "grmcat/bankio.hpp"
#include "grmcat/simulate.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace grmcat;
namespace fs = std::filesystem;
using testing_support::uniform;
using testing_support::uniform_int;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int number, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("criterion %2d: %s  %s | %s | %.2f s\n", number, o.pass ? "PASS" : "FAIL", title, o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> trapezoid_weights(const AbilityGrid& g) {
  std::vector<double> w(g.size(), g.step());
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}

// Category probabilities in long double, evaluating each difference on the
// side of the logistic where it does not cancel.
std::vector<long double> probs_ld(long double a, const std::vector<double>& b, long double theta) {
  const std::size_t K = b.size() + 1;
  auto upper = [&](std::size_t k) -> long double {  // S_k
    if (k == 0) return 1.0L;
    if (k == K) return 0.0L;
    return 1.0L / (1.0L + std::exp(-a * (theta - b[k - 1])));
  };
  auto lower = [&](std::size_t k) -> long double {  // 1 - S_k
    if (k == 0) return 0.0L;
    if (k == K) return 1.0L;
    return 1.0L / (1.0L + std::exp(a * (theta - b[k - 1])));
  };
  std::vector<long double> p(K);
  for (std::size_t k = 0; k < K; ++k) {
    const bool high = k > 0 && theta > b[k - 1];
    p[k] = high ? lower(k + 1) - lower(k) : upper(k) - upper(k + 1);
  }
  return p;
}

// Fisher information by Richardson-extrapolated central differences.
double fisher_richardson(double a, const std::vector<double>& b, double theta) {
  const long double h = 1e-3L;
  const auto p = probs_ld(a, b, theta);
  const auto p1 = probs_ld(a, b, theta + h), m1 = probs_ld(a, b, theta - h);
  const auto p2 = probs_ld(a, b, theta + 2 * h), m2 = probs_ld(a, b, theta - 2 * h);
  long double info = 0.0L;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0L) continue;
    const long double d = (8.0L * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0L * h);
    info += d * d / p[k];
  }
  return static_cast<double>(info);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main() {
  const GridPtr grid = build_grid();

  report(1, "discretized Gaussian entropy, variance and KL", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const Density n01 = gaussian_prior(grid, 0.0, 1.0);
    const Density shifted = gaussian_prior(grid, 0.5, 1.0);
    const double h = entropy(n01), v = variance(n01), kl = kl_divergence(n01, shifted);
    const double secs = seconds_since(t0);
    const bool ok = std::abs(h - 1.41894) <= 1e-3 && std::abs(v - 1.0) <= 1e-3 && std::abs(kl - 0.125) <= 1e-3 &&
                    secs < 1.0;
    return Outcome{ok, fmt("H=%.6f var=%.6f KL=%.6f", h, v, kl)};
  });

  report(2, "global information: direct double integral equals decomposed sum", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    testing_support::Rng rng(20201);
    const auto w = trapezoid_weights(*grid);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int bank_i = 0; bank_i < 200; ++bank_i) {
      const ItemBank bank = testing_support::random_bank(rng, uniform_int(rng, 1, 5), 4);
      SessionState state(make_model(bank, grid), testing_support::random_density(grid, rng));
      const std::size_t answered = uniform_int(rng, 0, bank.size() - 1);
      for (ItemId i = 0; i < answered; ++i) state.submit(i, uniform_int(rng, 0, bank[i].n_levels() - 1));
      for (ItemId i : state.remaining()) {
        const double direct = oracle::global_information_direct(grid->points(), w, state.posterior().values(),
                                                                bank[i].discrimination(), bank[i].thresholds());
        worst = std::max(worst, std::abs(direct - score_global_information(state, i).value));
        ++checked;
      }
    }
    const double secs = seconds_since(t0);
    return Outcome{worst <= 1e-6 && secs < 30.0, fmt("%g item checks, max |diff|=%.3g", double(checked), worst)};
  });

  report(3, "leave-one-out KL decomposition over all binary response patterns", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    testing_support::Rng rng(30303);
    const Density prior = gaussian_prior(grid, 0.0, std::sqrt(2.0));
    double worst = 0.0;
    std::size_t checked = 0;
    for (int bank_i = 0; bank_i < 50; ++bank_i) {
      const auto model = make_model(testing_support::random_bank(rng, 4, 2), grid);
      for (unsigned pattern = 0; pattern < 16; ++pattern) {
        std::vector<ResponseRecord> full;
        for (ItemId i = 0; i < 4; ++i) full.push_back({i, (pattern >> i) & 1u});
        for (ItemId item = 0; item < 4; ++item) {
          std::vector<ItemId> others;
          for (ItemId j = 0; j < 4; ++j) {
            if (j != item) others.push_back(j);
          }
          for (std::size_t t = 0; t <= 2; ++t) {
            const auto terms =
                loo_identity_terms(*model, full, prior, item, std::span<const ItemId>(others.data(), t));
            worst = std::max(worst, std::abs(terms.decomposition() - terms.kl_full_next));
            ++checked;
          }
        }
      }
    }
    const double secs = seconds_since(t0);
    return Outcome{worst <= 1e-6 && secs < 60.0,
                   fmt("%g cases, max |diff|=%.3g (full-posterior entropy term excluded)", double(checked), worst)};
  });

  report(4, "expected entropy and expected variance never exceed current values", [&] {
    testing_support::Rng rng(40404);
    double worst_h = -1e300, worst_v = -1e300;
    for (int i = 0; i < 1000; ++i) {
      const Density d = testing_support::random_density(grid, rng);
      const auto item = testing_support::random_item(rng, uniform_int(rng, 2, 6));
      SessionState state(make_model(ItemBank({item}), grid), d);
      worst_h = std::max(worst_h, score_entropy_criterion(state, 0).value - entropy(d));
      worst_v = std::max(worst_v, score_bayesian_variance(state, 0).value - variance(d));
    }
    return Outcome{worst_h <= 1e-9 && worst_v <= 1e-9,
                   fmt("max(delta - H)=%.3g max(EV - var)=%.3g", worst_h, worst_v)};
  });

  report(5, "concentrated prior: greedy-entropy top item equals Fisher top item", [&] {
    testing_support::Rng rng(50505);
    int agree = 0;
    for (int i = 0; i < 500; ++i) {
      const ItemBank bank = testing_support::random_bank(rng, 20, 5);
      SessionState state(make_model(bank, grid), gaussian_prior(grid, uniform(rng, -2.0, 2.0), 0.05));
      Rng sel(0);
      agree += select_next(state, {SelectorKind::GreedyEntropy}, sel) == select_next(state, {SelectorKind::Fisher}, sel);
    }
    return Outcome{agree >= 475, fmt("%g/500 banks agree", agree)};
  });

  report(6, "Fisher information: analytic vs finite differences", [&] {
    testing_support::Rng rng(60606);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const auto item = testing_support::random_item(rng, uniform_int(rng, 2, 6));
      const double theta = uniform(rng, -4.0, 4.0);
      const double analytic = fisher_information(item, theta);
      const double fd = fisher_richardson(item.discrimination(), item.thresholds(), theta);
      worst = std::max(worst, std::abs(analytic - fd) / fd);
    }
    return Outcome{worst <= 1e-6, fmt("max relative diff=%.3g", worst)};
  });

  report(7, "softmax sampler frequencies and shift invariance", [&] {
    const std::vector<ItemId> ids{3, 8, 11};
    const std::vector<double> deltas{1.2, 1.7, 2.9};
    const auto w = stochastic_weights(ids, deltas);
    Rng rng(70707);
    std::vector<int> counts(3, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) counts[sample_index(w.probs, rng)]++;
    double worst_z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double sigma = std::sqrt(draws * w.probs[k] * (1.0 - w.probs[k]));
      worst_z = std::max(worst_z, std::abs(counts[k] - draws * w.probs[k]) / sigma);
    }
    double worst_shift = 0.0;
    for (double c : {-50.0, -3.5, 0.25, 7.0, 400.0}) {
      std::vector<double> shifted(deltas);
      for (double& x : shifted) x += c;
      const auto ws = stochastic_weights(ids, shifted);
      for (std::size_t k = 0; k < 3; ++k) worst_shift = std::max(worst_shift, std::abs(ws.probs[k] - w.probs[k]));
    }
    return Outcome{worst_z <= 3.0 && worst_shift <= 1e-12,
                   fmt("max |z|=%.3f, max shift diff=%.3g", worst_z, worst_shift)};
  });

  const ItemBank bundled = load_bank(fs::path(GRMCAT_DATA_DIR) / "synthetic-50.json");

  report(8, "exposure at t=5 on the 50-item bank: stochastic 50/50, Fisher <= 15", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    SimulationConfig cfg;
    cfg.replicates = 100;
    cfg.test_lengths = {5};
    cfg.selectors = {{SelectorKind::StochasticEntropy}, {SelectorKind::Fisher}};
    cfg.master_seed = 8;
    const auto rep = run_batch(cfg, bundled, 1);
    std::size_t min_stoch = SIZE_MAX, max_fisher = 0;
    for (const auto& r : rep.rows) {
      if (r.selector == "stochastic-entropy") min_stoch = std::min(min_stoch, r.exposure);
      if (r.selector == "fisher") max_fisher = std::max(max_fisher, r.exposure);
    }
    const double secs = seconds_since(t0);
    return Outcome{min_stoch == 50 && max_fisher <= 15 && secs < 120.0,
                   fmt("stochastic min exposure=%g, Fisher max exposure=%g over 13 theta values", double(min_stoch),
                       double(max_fisher))};
  });

  report(9, "at t = N every selector reaches the full-bank posterior", [&] {
    testing_support::Rng rng(90909);
    const Density prior = gaussian_prior(grid, 0.0, std::sqrt(2.0));
    double worst_kl = 0.0, worst_mean = 0.0;
    for (int r = 0; r < 100; ++r) {
      const auto model = make_model(testing_support::random_bank(rng, uniform_int(rng, 3, 12), 5), grid);
      const double theta = uniform(rng, -3.0, 3.0);
      const auto responses = generate_responses({GeneratorKind::ModelImplied, theta, rng(), {}}, model->bank());
      for (std::size_t s = 0; s < kAllSelectorKinds.size(); ++s) {
        const auto tr = run_trajectory(model, responses, prior, {kAllSelectorKinds[s]}, {model->size()}, rng(), theta);
        worst_kl = std::max(worst_kl, std::abs(tr.metrics[0].kl));
        worst_mean = std::max(worst_mean, tr.metrics[0].abs_error_full);
      }
    }
    return Outcome{worst_kl < 1e-9 && worst_mean < 1e-9, fmt("max KL=%.3g max |dmean|=%.3g", worst_kl, worst_mean)};
  });

  report(10, "simulate command output is byte-identical across runs and thread counts", [&] {
    const fs::path dir = fs::temp_directory_path() / ("grmcat-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto run = [&](const std::string& name, int threads) {
      const std::string cmd = std::string(GRMCAT_CLI_PATH) + " simulate --quiet --replicates 10 --seed 7 --threads " +
                              std::to_string(threads) + " --out " + (dir / name).string();
      const int status = std::system(cmd.c_str());
      return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    const int a = run("a", 1), b = run("b", 1), c = run("c", 4);
    bool same = a == 0 && b == 0 && c == 0;
    for (const char* f : {"report.csv", "report_bands.csv", "report.json"}) {
      const std::string ref = slurp(dir / "a" / f);
      same = same && !ref.empty() && ref == slurp(dir / "b" / f) && ref == slurp(dir / "c" / f);
    }
    fs::remove_all(dir);
    return Outcome{same, fmt("exit codes %g/%g/%g; 3 runs (1, 1, 4 threads)", a, b, c)};
  });

  report(11, "accuracy improves with test length for both entropy selectors", [&] {
    SimulationConfig cfg;
    cfg.replicates = 100;
    cfg.test_lengths = {5, 10, 20, bundled.size()};
    cfg.selectors = {{SelectorKind::GreedyEntropy}, {SelectorKind::StochasticEntropy}};
    cfg.master_seed = 11;
    const auto rep = run_batch(cfg, bundled, 1);
    const std::size_t n_len = cfg.test_lengths.size();
    int violations = 0;
    double worst = -1e300;
    for (std::size_t i = 0; i + 1 < rep.rows.size(); ++i) {
      const auto& cur = rep.rows[i];
      const auto& nxt = rep.rows[i + 1];
      if ((i + 1) % n_len == 0) continue;  // next row starts another (selector, theta) group
      const double n = static_cast<double>(cur.sessions);
      const double se = std::sqrt(cur.abs_error_true.sd * cur.abs_error_true.sd / n +
                                  nxt.abs_error_true.sd * nxt.abs_error_true.sd / n);
      const double excess = (nxt.abs_error_true.mean - cur.abs_error_true.mean) / se;
      worst = std::max(worst, excess);
      if (excess > 2.0) ++violations;
    }
    return Outcome{violations == 0, fmt("%g increases beyond 2 SE; largest increase %.2f SE", violations, worst)};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
