#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grmcat/grid.hpp"
#include "grmcat/posterior.hpp"
#include "grmcat/seeding.hpp"
#include "grmcat/selectors.hpp"
#include "grmcat/state.hpp"

namespace grmcat {

struct StoppingRule {
  std::size_t max_items = 1;
  std::optional<double> sd_threshold;

  void validate(std::size_t n_items) const {
    if (max_items < 1 || max_items > n_items) {
      throw std::invalid_argument("stopping rule max_items must be in [1, " + std::to_string(n_items) + "], got " +
                                  std::to_string(max_items));
    }
    if (sd_threshold && !(*sd_threshold > 0.0)) {
      throw std::invalid_argument("stopping rule sd_threshold must be positive");
    }
  }
};

struct Estimate {
  double mean = 0.0;
  double sd = 0.0;
  double entropy = 0.0;
  std::size_t step = 0;
  Density density;
};

inline Estimate estimate(const SessionState& state) {
  const Density& d = state.posterior();
  return {state.point_estimate(), std::sqrt(variance(d)), entropy(d), state.step(), d};
}

/// RNG for the selection made at a given step: one independent stream per
/// (seed, step), so a session replays from its log without carrying RNG state.
inline Rng step_rng(std::uint64_t seed, std::size_t step) { return Rng(derive_seed(seed, {step})); }

/// Adaptive test for one respondent: selector, stopping rule and state.
class AdaptiveSession {
 public:
  AdaptiveSession(ModelPtr model, Density prior, SelectorSpec spec, StoppingRule rule,
                  ImputationModel imputation = {})
      : state_(std::move(model), std::move(prior)),
        spec_(spec),
        rule_(rule),
        seed_(spec.seed ? *spec.seed : std::random_device{}()),
        imputation_(std::move(imputation)) {
    rule_.validate(state_.bank().size());
    spec_.seed = seed_;
  }

  const SessionState& state() const noexcept { return state_; }
  const SelectorSpec& spec() const noexcept { return spec_; }
  const StoppingRule& rule() const noexcept { return rule_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// The max-items cap, the sd threshold, or an empty bank ends the session.
  bool finished() const {
    if (state_.step() >= rule_.max_items || state_.remaining_count() == 0) return true;
    if (rule_.sd_threshold && std::sqrt(variance(state_.posterior())) <= *rule_.sd_threshold) return true;
    return false;
  }

  /// Proposed next item, or nullopt once finished.
  std::optional<ItemId> next_item() const {
    if (finished()) return std::nullopt;
    Rng rng = step_rng(seed_, state_.step());
    return select_next(state_, spec_, rng, imputation_);
  }

  /// Any unadministered item is accepted; callers that must enforce the
  /// proposed item do so themselves.
  void submit(ItemId item_id, std::size_t category) { state_.submit(item_id, category); }

  Estimate estimate() const { return grmcat::estimate(state_); }

 private:
  SessionState state_;
  SelectorSpec spec_;
  StoppingRule rule_;
  std::uint64_t seed_;
  ImputationModel imputation_;
};

inline AdaptiveSession start_session(ModelPtr model, Density prior, SelectorSpec spec, StoppingRule rule) {
  return AdaptiveSession(std::move(model), std::move(prior), spec, rule);
}

/// Per-item count of sessions in which the item was administered.
class ExposureLedger {
 public:
  explicit ExposureLedger(std::size_t n_items = 0) : counts_(n_items, 0) {}

  void record_session(const SessionState& state) {
    if (counts_.size() != state.bank().size()) {
      throw std::invalid_argument("exposure ledger sized for a different bank");
    }
    for (const auto& r : state.administered()) ++counts_[r.item_id];
    ++sessions_;
  }

  /// Componentwise sum; used to combine per-thread ledgers.
  void merge(const ExposureLedger& other) {
    if (other.counts_.size() != counts_.size()) throw std::invalid_argument("merging ledgers of different banks");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    sessions_ += other.sessions_;
  }

  std::size_t unique_exposed() const noexcept {
    std::size_t n = 0;
    for (auto c : counts_) n += c > 0 ? 1 : 0;
    return n;
  }

  std::uint64_t sessions() const noexcept { return sessions_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

 private:
  std::vector<std::uint64_t> counts_;
  std::uint64_t sessions_ = 0;
};

}  // namespace grmcat
