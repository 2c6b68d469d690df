#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "grmcat/format.hpp"
#include "grmcat/grid.hpp"
#include "grmcat/posterior.hpp"
#include "grmcat/seeding.hpp"
#include "grmcat/selectors.hpp"
#include "grmcat/session.hpp"
#include "grmcat/state.hpp"

namespace grmcat {

// ---------------------------------------------------------------------------
// Respondents

enum class GeneratorKind { ModelImplied, TableReplay };

/// Source of one respondent's complete response vector. ModelImplied samples
/// each item independently from the GRM at true_theta; TableReplay copies an
/// externally supplied vector (categories indexed by item id).
struct RespondentGenerator {
  GeneratorKind kind = GeneratorKind::ModelImplied;
  double true_theta = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> table;
};

inline std::vector<ResponseRecord> generate_responses(const RespondentGenerator& gen, const ItemBank& bank) {
  std::vector<ResponseRecord> out(bank.size());
  if (gen.kind == GeneratorKind::TableReplay) {
    if (gen.table.size() != bank.size()) {
      throw std::invalid_argument("response table covers " + std::to_string(gen.table.size()) + " of " +
                                  std::to_string(bank.size()) + " items");
    }
    for (ItemId i = 0; i < bank.size(); ++i) {
      out[i] = {i, gen.table[i]};
      check_response(bank, out[i]);
    }
    return out;
  }
  if (!std::isfinite(gen.true_theta)) throw std::invalid_argument("true theta must be finite");
  Rng rng(gen.seed);
  for (ItemId i = 0; i < bank.size(); ++i) {
    const auto probs = grm_category_probs(bank[i], gen.true_theta);
    out[i] = {i, sample_index(probs, rng)};
  }
  return out;
}

/// Synthetic GRM bank: discriminations log-uniform on [0.8, 2.5], thresholds
/// sorted draws from N(0, 1.5^2). n_levels categories per item.
inline ItemBank synthetic_bank(std::size_t n_items, std::size_t n_levels, std::uint64_t seed,
                               std::string scale_name = "synthetic") {
  if (n_items == 0) throw std::invalid_argument("synthetic bank needs at least one item");
  if (n_levels < 2) throw std::invalid_argument("synthetic bank needs n_levels >= 2");
  Rng rng(seed);
  std::uniform_real_distribution<double> log_a(std::log(0.8), std::log(2.5));
  std::normal_distribution<double> threshold(0.0, 1.5);
  std::vector<ItemParameters> items;
  items.reserve(n_items);
  while (items.size() < n_items) {
    const double a = std::exp(log_a(rng));
    std::vector<double> b(n_levels - 1);
    for (double& x : b) x = threshold(rng);
    std::sort(b.begin(), b.end());
    if (std::adjacent_find(b.begin(), b.end()) != b.end()) continue;
    items.emplace_back(a, std::move(b));
  }
  return ItemBank(std::move(items), std::move(scale_name));
}

// ---------------------------------------------------------------------------
// Single respondent

/// Metrics of a running posterior at test length t against the full-bank posterior.
struct CellMetrics {
  std::size_t test_length = 0;
  double kl = 0.0;              // D(full || running)
  double abs_error_full = 0.0;  // |mean_t - mean_full|
  double abs_error_true = 0.0;  // |mean_t - true theta|, NaN when unknown
  double posterior_sd = 0.0;
};

struct Trajectory {
  std::vector<ItemId> items;          // administration order, up to the longest test length
  std::vector<CellMetrics> metrics;   // one per requested length, ascending
};

/// Plays one session against a complete response table, reading each selected
/// item's response from the table, and measures it at every requested length.
inline Trajectory run_trajectory(const ModelPtr& model, std::span<const ResponseRecord> responses,
                                 const Density& prior, const SelectorSpec& spec, std::vector<std::size_t> lengths,
                                 std::uint64_t selector_seed, std::optional<double> true_theta = std::nullopt) {
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
  if (!lengths.empty() && lengths.back() > model->size()) {
    throw std::invalid_argument("test length " + std::to_string(lengths.back()) + " exceeds bank size " +
                                std::to_string(model->size()));
  }
  const auto categories = complete_categories(model->bank(), responses);
  const Density full = full_bank_posterior(*model, responses, prior);
  const double full_mean = mean(full);

  SessionState state(model, prior);
  Trajectory out;
  std::size_t next_length = 0;
  while (next_length < lengths.size()) {
    if (state.step() == lengths[next_length]) {
      const double m = state.point_estimate();
      out.metrics.push_back({state.step(), kl_divergence(full, state.posterior()), std::abs(m - full_mean),
                             true_theta ? std::abs(m - *true_theta) : std::nan(""),
                             std::sqrt(variance(state.posterior()))});
      ++next_length;
      continue;
    }
    Rng rng = step_rng(selector_seed, state.step());
    const ItemId item = select_next(state, spec, rng);
    state.submit(item, categories[item]);
    out.items.push_back(item);
  }
  return out;
}

/// One session of length t for a generated respondent.
inline CellMetrics run_cell(const ModelPtr& model, const RespondentGenerator& gen, const SelectorSpec& spec,
                            std::size_t t, const Density& prior) {
  const auto responses = generate_responses(gen, model->bank());
  const auto seed = spec.seed.value_or(derive_seed(gen.seed, {0x5e1ec7}));
  std::optional<double> truth;
  if (gen.kind == GeneratorKind::ModelImplied) truth = gen.true_theta;
  return run_trajectory(model, responses, prior, spec, {t}, seed, truth).metrics.front();
}

// ---------------------------------------------------------------------------
// Batch

enum class AbilityBand { Low, Mid, High };

inline std::string_view band_name(AbilityBand b) noexcept {
  switch (b) {
    case AbilityBand::Low: return "low";
    case AbilityBand::Mid: return "mid";
    case AbilityBand::High: return "high";
  }
  return "unknown";
}

/// low: θ <= -1.5, mid: -1 <= θ <= 1, high: θ >= 1.5. Values between the bands are rejected.
inline AbilityBand ability_band(double theta) {
  if (theta <= -1.5) return AbilityBand::Low;
  if (theta >= -1.0 && theta <= 1.0) return AbilityBand::Mid;
  if (theta >= 1.5) return AbilityBand::High;
  throw std::invalid_argument("theta " + std::to_string(theta) + " falls between ability bands");
}

struct SimulationConfig {
  std::vector<double> theta_values = {-3.0, -2.5, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  std::size_t replicates = 100;
  std::vector<std::size_t> test_lengths = {5, 10, 20};
  std::vector<SelectorSpec> selectors;
  double prior_mean = 0.0;
  double prior_sd = std::sqrt(2.0);
  double grid_lo = -6.0;
  double grid_hi = 6.0;
  std::size_t grid_points = 200;
  std::uint64_t master_seed = 0;

  void validate(std::size_t n_items) const {
    if (theta_values.empty()) throw std::invalid_argument("config: theta_values is empty");
    if (replicates < 1) throw std::invalid_argument("config: replicates must be >= 1");
    if (test_lengths.empty()) throw std::invalid_argument("config: test_lengths is empty");
    for (auto t : test_lengths) {
      if (t > n_items) {
        throw std::invalid_argument("config: test length " + std::to_string(t) + " exceeds bank size " +
                                    std::to_string(n_items));
      }
    }
    if (selectors.empty()) throw std::invalid_argument("config: no selectors");
    if (!(prior_sd > 0.0)) throw std::invalid_argument("config: prior sd must be > 0");
    for (double th : theta_values) {
      if (!std::isfinite(th)) throw std::invalid_argument("config: theta values must be finite");
      ability_band(th);
    }
  }
};

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single value
};

inline Summary summarize(std::span<const double> xs) {
  Summary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct ReportRow {
  std::string selector;
  std::string group;  // theta value as text, or band name
  double theta = 0.0; // NaN for band rows
  std::size_t test_length = 0;
  std::size_t sessions = 0;
  Summary kl;
  Summary abs_error_full;
  Summary abs_error_true;
  Summary posterior_sd;
  std::size_t exposure = 0;  // unique items in the union of session trajectories
};

struct SimulationReport {
  std::size_t n_items = 0;
  std::uint64_t master_seed = 0;
  std::vector<ReportRow> rows;   // selector-major, then theta, then test length
  std::vector<ReportRow> bands;  // selector-major, then band (low, mid, high), then test length
};

/// Seed of the response table for (theta index, replicate). Shared by every
/// selector so that all of them face the same respondents.
inline std::uint64_t respondent_seed(std::uint64_t master, std::size_t theta_index, std::size_t replicate) {
  return derive_seed(master, {0x7e5, theta_index, replicate});
}

/// Seed of the selector stream for (selector index, theta index, replicate).
inline std::uint64_t selector_seed(std::uint64_t master, std::size_t selector_index, std::size_t theta_index,
                                   std::size_t replicate) {
  return derive_seed(master, {0x5e1, selector_index, theta_index, replicate});
}

using ProgressCallback = std::function<void(std::size_t done, std::size_t total)>;

inline SimulationReport run_batch(const SimulationConfig& config, const ItemBank& bank, std::size_t threads = 1,
                                  const ProgressCallback& progress = {}) {
  config.validate(bank.size());
  const auto model = make_model(bank, build_grid(config.grid_lo, config.grid_hi, config.grid_points));
  const Density prior = gaussian_prior(model->grid(), config.prior_mean, config.prior_sd);

  std::vector<std::size_t> lengths = config.test_lengths;
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());

  const std::size_t n_sel = config.selectors.size();
  const std::size_t n_theta = config.theta_values.size();
  const std::size_t n_rep = config.replicates;
  // trajectories[(sel * n_theta + theta) * n_rep + rep]
  std::vector<Trajectory> trajectories(n_sel * n_theta * n_rep);

  const std::size_t total = n_theta * n_rep;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (std::size_t job = next++; job < total; job = next++) {
      try {
        const std::size_t th = job / n_rep;
        const std::size_t rep = job % n_rep;
        const double theta = config.theta_values[th];
        RespondentGenerator gen{GeneratorKind::ModelImplied, theta, respondent_seed(config.master_seed, th, rep), {}};
        const auto responses = generate_responses(gen, bank);
        for (std::size_t s = 0; s < n_sel; ++s) {
          trajectories[(s * n_theta + th) * n_rep + rep] =
              run_trajectory(model, responses, prior, config.selectors[s], lengths,
                             selector_seed(config.master_seed, s, th, rep), theta);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
      const std::size_t finished = ++done;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(finished, total);
      }
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, total));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  SimulationReport report;
  report.n_items = bank.size();
  report.master_seed = config.master_seed;

  // Aggregates the sessions of one selector over a set of theta indices at length index li.
  auto aggregate = [&](std::size_t s, const std::vector<std::size_t>& theta_indices, std::size_t li) {
    ReportRow row;
    row.selector = std::string(selector_name(config.selectors[s].kind));
    row.test_length = lengths[li];
    std::vector<double> kl, err_full, err_true, sd;
    std::set<ItemId> exposed;
    for (std::size_t th : theta_indices) {
      for (std::size_t rep = 0; rep < n_rep; ++rep) {
        const Trajectory& tr = trajectories[(s * n_theta + th) * n_rep + rep];
        const CellMetrics& m = tr.metrics[li];
        kl.push_back(m.kl);
        err_full.push_back(m.abs_error_full);
        err_true.push_back(m.abs_error_true);
        sd.push_back(m.posterior_sd);
        exposed.insert(tr.items.begin(), tr.items.begin() + static_cast<std::ptrdiff_t>(lengths[li]));
      }
    }
    row.sessions = kl.size();
    row.kl = summarize(kl);
    row.abs_error_full = summarize(err_full);
    row.abs_error_true = summarize(err_true);
    row.posterior_sd = summarize(sd);
    row.exposure = exposed.size();
    return row;
  };

  for (std::size_t s = 0; s < n_sel; ++s) {
    for (std::size_t th = 0; th < n_theta; ++th) {
      for (std::size_t li = 0; li < lengths.size(); ++li) {
        ReportRow row = aggregate(s, {th}, li);
        row.theta = config.theta_values[th];
        row.group = format_theta(row.theta);
        report.rows.push_back(std::move(row));
      }
    }
  }

  std::vector<std::vector<std::size_t>> band_members(3);
  for (std::size_t th = 0; th < n_theta; ++th) {
    band_members[static_cast<std::size_t>(ability_band(config.theta_values[th]))].push_back(th);
  }
  for (std::size_t s = 0; s < n_sel; ++s) {
    for (std::size_t b = 0; b < 3; ++b) {
      if (band_members[b].empty()) continue;
      for (std::size_t li = 0; li < lengths.size(); ++li) {
        ReportRow row = aggregate(s, band_members[b], li);
        row.theta = std::nan("");
        row.group = std::string(band_name(static_cast<AbilityBand>(b)));
        report.bands.push_back(std::move(row));
      }
    }
  }
  return report;
}

}  // namespace grmcat
