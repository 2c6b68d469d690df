#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "grmcat/errors.hpp"
#include "grmcat/grid.hpp"
#include "grmcat/posterior.hpp"
#include "grmcat/state.hpp"

namespace grmcat {

enum class SelectorKind {
  Fisher,
  BayesianFisher,
  GlobalInformation,
  BayesianVariance,
  GreedyEntropy,
  StochasticEntropy,
};

inline constexpr std::array<SelectorKind, 6> kAllSelectorKinds = {
    SelectorKind::Fisher,           SelectorKind::BayesianFisher, SelectorKind::GlobalInformation,
    SelectorKind::BayesianVariance, SelectorKind::GreedyEntropy,  SelectorKind::StochasticEntropy,
};

inline std::string_view selector_name(SelectorKind kind) noexcept {
  switch (kind) {
    case SelectorKind::Fisher: return "fisher";
    case SelectorKind::BayesianFisher: return "bayesian-fisher";
    case SelectorKind::GlobalInformation: return "global-information";
    case SelectorKind::BayesianVariance: return "bayesian-variance";
    case SelectorKind::GreedyEntropy: return "greedy-entropy";
    case SelectorKind::StochasticEntropy: return "stochastic-entropy";
  }
  return "unknown";
}

inline std::optional<SelectorKind> parse_selector_kind(std::string_view name) noexcept {
  for (auto kind : kAllSelectorKinds) {
    if (selector_name(kind) == name) return kind;
  }
  return std::nullopt;
}

/// "fisher, bayesian-fisher, ..." for error messages.
inline std::string valid_selector_names() {
  std::string out;
  for (auto kind : kAllSelectorKinds) {
    if (!out.empty()) out += ", ";
    out += selector_name(kind);
  }
  return out;
}

enum class TieBreak { LowestId, Random };

struct SelectorSpec {
  SelectorKind kind = SelectorKind::GreedyEntropy;
  TieBreak tie_break = TieBreak::LowestId;
  /// Stochastic selection draws from this seed when set, otherwise from an
  /// ambient source chosen by the caller.
  std::optional<std::uint64_t> seed;
};

enum class Orientation { Maximize, Minimize };

struct ItemScore {
  ItemId item_id = 0;
  double value = 0.0;
  Orientation orientation = Orientation::Maximize;
};

struct SelectionProbabilities {
  std::vector<ItemId> item_ids;
  std::vector<double> probs;
};

using Rng = std::mt19937_64;

/// Predictive distribution over an unobserved item's categories given the
/// current state. The default is the model-implied marginal (predictive_mass).
using ImputationModel = std::function<std::vector<double>(const SessionState&, ItemId)>;

namespace detail {

/// Statistics of the posterior after a hypothetical response k to one item.
struct Branch {
  double mass = 0.0;  // predictive probability p(k)
  double entropy = 0.0;
  double variance = 0.0;
  double kl_to_current = 0.0;  // D(posterior after k || current posterior)
};

inline double trapezoid_weight(std::size_t j, std::size_t n, double step) noexcept {
  return (j == 0 || j + 1 == n) ? 0.5 * step : step;
}

/// Every hypothetical one-item update, evaluated without materializing the
/// updated densities: q_k = d * P_k / p(k), so log q_k = log d + log P_k - log p(k).
inline std::vector<Branch> branches(const SessionState& state, ItemId item_id) {
  const auto& grid = state.posterior().grid();
  const auto& pts = grid.points();
  const auto& d = state.posterior().values();
  const auto logd = state.log_posterior();
  const auto& table = state.model().table(item_id);
  const std::size_t n = grid.size();

  std::vector<Branch> out(table.n_levels());
  std::vector<double> u(n);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto row = table.row(k);
    const auto log_row = table.log_row(k);
    double z = 0.0, first = 0.0, plogp = 0.0, plogl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      u[j] = d[j] * row[j];
      if (!(u[j] > 0.0)) continue;
      const double w = trapezoid_weight(j, n, grid.step()) * u[j];
      z += w;
      first += w * pts[j];
      plogp += w * (logd[j] + log_row[j]);
      plogl += w * log_row[j];
    }
    Branch& b = out[k];
    b.mass = z;
    if (!(z > 0.0)) continue;
    const double logz = std::log(z);
    const double m = first / z;
    double second = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = pts[j] - m;
      second += trapezoid_weight(j, n, grid.step()) * u[j] * c * c;
    }
    b.entropy = logz - plogp / z;
    b.variance = second / z;
    b.kl_to_current = plogl / z - logz;
  }
  return out;
}

inline void require_remaining(const SessionState& state, ItemId item_id) {
  if (!state.is_remaining(item_id)) {
    throw std::invalid_argument("item " + std::to_string(item_id) + " is administered or unknown");
  }
}

}  // namespace detail

/// Local Fisher information at the posterior mean.
inline ItemScore score_fisher(const SessionState& state, ItemId item_id) {
  detail::require_remaining(state, item_id);
  return {item_id, fisher_information(state.bank()[item_id], state.point_estimate()), Orientation::Maximize};
}

/// Fisher information averaged over the current posterior.
inline ItemScore score_bayesian_fisher(const SessionState& state, ItemId item_id) {
  detail::require_remaining(state, item_id);
  const auto info = state.model().table(item_id).information();
  const auto& d = state.posterior();
  std::vector<double> f(d.size());
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = info[j] * d[j];
  return {item_id, d.grid().trapezoid(f), Orientation::Maximize};
}

/// Global information, computed as the expected KL between the next and
/// current posterior plus the discrete KL between the predictive response
/// distribution and the plug-in distribution at the posterior mean.
inline ItemScore score_global_information(const SessionState& state, ItemId item_id) {
  detail::require_remaining(state, item_id);
  const auto bs = detail::branches(state, item_id);
  const auto plug_in = grm_category_probs(state.bank()[item_id], state.point_estimate());
  double expected_kl = 0.0, discrete_kl = 0.0;
  for (std::size_t k = 0; k < bs.size(); ++k) {
    const double p = bs[k].mass;
    if (!(p > 0.0)) continue;
    expected_kl += p * bs[k].kl_to_current;
    discrete_kl += p * (std::log(p) - std::log(std::max(plug_in[k], kDensityFloor)));
  }
  return {item_id, expected_kl + discrete_kl, Orientation::Maximize};
}

/// Predictive-weighted expected posterior variance after administering the item.
inline ItemScore score_bayesian_variance(const SessionState& state, ItemId item_id) {
  detail::require_remaining(state, item_id);
  double value = 0.0;
  for (const auto& b : detail::branches(state, item_id)) {
    if (b.mass > 0.0) value += b.mass * b.variance;
  }
  return {item_id, value, Orientation::Minimize};
}

/// Expected entropy of the next posterior, Σ_k π*(k) H(posterior after k).
/// With no imputation model, π* is the model-implied predictive mass.
inline ItemScore score_entropy_criterion(const SessionState& state, ItemId item_id,
                                         const ImputationModel& imputation = {}) {
  detail::require_remaining(state, item_id);
  const auto bs = detail::branches(state, item_id);
  double value = 0.0;
  if (!imputation) {
    for (const auto& b : bs) {
      if (b.mass > 0.0) value += b.mass * b.entropy;
    }
    return {item_id, value, Orientation::Minimize};
  }
  const auto weights = imputation(state, item_id);
  if (weights.size() != bs.size()) {
    throw std::invalid_argument("imputation model returned the wrong number of categories");
  }
  for (std::size_t k = 0; k < bs.size(); ++k) {
    if (!(weights[k] > 0.0)) continue;
    if (!(bs[k].mass > 0.0)) {
      throw NumericalDegeneracy("imputation puts mass on a response the posterior rules out");
    }
    value += weights[k] * bs[k].entropy;
  }
  return {item_id, value, Orientation::Minimize};
}

inline ItemScore score_item(const SessionState& state, SelectorKind kind, ItemId item_id,
                            const ImputationModel& imputation = {}) {
  switch (kind) {
    case SelectorKind::Fisher: return score_fisher(state, item_id);
    case SelectorKind::BayesianFisher: return score_bayesian_fisher(state, item_id);
    case SelectorKind::GlobalInformation: return score_global_information(state, item_id);
    case SelectorKind::BayesianVariance: return score_bayesian_variance(state, item_id);
    case SelectorKind::GreedyEntropy:
    case SelectorKind::StochasticEntropy: return score_entropy_criterion(state, item_id, imputation);
  }
  throw std::invalid_argument("unknown selector kind");
}

/// Scores of every unadministered item, in ascending item id.
inline std::vector<ItemScore> score_remaining(const SessionState& state, SelectorKind kind,
                                              const ImputationModel& imputation = {}) {
  std::vector<ItemScore> out;
  for (ItemId id : state.remaining()) {
    out.push_back(score_item(state, kind, id, imputation));
    if (!std::isfinite(out.back().value)) {
      throw std::domain_error("selector " + std::string(selector_name(kind)) + " produced a non-finite score for item " +
                              std::to_string(id));
    }
  }
  return out;
}

/// Selection probabilities proportional to exp(-Δ), shifted by min Δ first.
inline SelectionProbabilities stochastic_weights(std::span<const ItemId> item_ids, std::span<const double> deltas) {
  if (deltas.empty()) throw std::invalid_argument("stochastic_weights: no candidate items");
  if (item_ids.size() != deltas.size()) {
    throw std::invalid_argument("stochastic_weights: ids and deltas differ in length");
  }
  double lowest = std::numeric_limits<double>::infinity();
  for (double x : deltas) {
    if (!std::isfinite(x)) throw std::invalid_argument("stochastic_weights: non-finite criterion value");
    lowest = std::min(lowest, x);
  }
  SelectionProbabilities out{{item_ids.begin(), item_ids.end()}, std::vector<double>(deltas.size())};
  double total = 0.0;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    out.probs[i] = std::exp(-(deltas[i] - lowest));
    total += out.probs[i];
  }
  for (double& p : out.probs) p /= total;
  return out;
}

inline SelectionProbabilities stochastic_weights(const SessionState& state, const ImputationModel& imputation = {}) {
  const auto scores = score_remaining(state, SelectorKind::StochasticEntropy, imputation);
  std::vector<ItemId> ids;
  std::vector<double> deltas;
  for (const auto& s : scores) {
    ids.push_back(s.item_id);
    deltas.push_back(s.value);
  }
  return stochastic_weights(ids, deltas);
}

/// Uniform draw in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// One multinomial draw; returns an index into probs.
inline std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cumulative += probs[i];
    if (u < cumulative) return i;
  }
  // Rounding left the cumulative sum just below 1; fall back to the last item with mass.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

/// Best item by a greedy criterion. Exact ties resolve by tie_break.
inline ItemId pick_best(std::span<const ItemScore> scores, TieBreak tie_break, Rng& rng) {
  if (scores.empty()) throw ExhaustedBank("no unadministered items remain");
  auto better = [](const ItemScore& a, const ItemScore& b) {
    return a.orientation == Orientation::Maximize ? a.value > b.value : a.value < b.value;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (better(scores[i], scores[best])) best = i;
  }
  if (tie_break == TieBreak::LowestId) {
    ItemId lowest = scores[best].item_id;
    for (const auto& s : scores) {
      if (s.value == scores[best].value) lowest = std::min(lowest, s.item_id);
    }
    return lowest;
  }
  std::vector<ItemId> tied;
  for (const auto& s : scores) {
    if (s.value == scores[best].value) tied.push_back(s.item_id);
  }
  std::sort(tied.begin(), tied.end());
  return tied[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(tied.size()))];
}

/// Next item for the state under spec. Greedy kinds take the arg-best score;
/// StochasticEntropy draws once from stochastic_weights.
inline ItemId select_next(const SessionState& state, const SelectorSpec& spec, Rng& rng,
                          const ImputationModel& imputation = {}) {
  if (state.remaining_count() == 0) throw ExhaustedBank("no unadministered items remain");
  if (spec.kind == SelectorKind::StochasticEntropy) {
    const auto weights = stochastic_weights(state, imputation);
    return weights.item_ids[sample_index(weights.probs, rng)];
  }
  const auto scores = score_remaining(state, spec.kind, imputation);
  return pick_best(scores, spec.tie_break, rng);
}

/// Terms of the leave-one-out decomposition of D(full || x_t ∪ {x_i}).
struct LooTerms {
  double kl_full_current = 0.0;       // D(π(θ|x) || π(θ|x_t))
  double full_entropy = 0.0;          // S[π(θ|x)]
  double kl_full_loo = 0.0;           // D(π(θ|x) || π(θ|x \ x_i))
  double log_predictive_ratio = 0.0;  // log p_i^(t)(x_i) / p_i^LOO(x_i)
  double kl_full_next = 0.0;          // D(π(θ|x) || π(θ|x_t, x_i)), computed directly

  /// Reconstruction of kl_full_next from the other terms. The full-posterior
  /// entropy cancels out of the expansion and does not enter the sum.
  double decomposition() const noexcept { return kl_full_current - kl_full_loo + log_predictive_ratio; }
};

/// observed lists the items in x_t; item_id must not be among them.
inline LooTerms loo_identity_terms(const Model& model, std::span<const ResponseRecord> full_responses,
                                   const Density& prior, ItemId item_id, std::span<const ItemId> observed) {
  const auto categories = complete_categories(model.bank(), full_responses);
  if (item_id >= model.size()) throw std::invalid_argument("unknown item id " + std::to_string(item_id));
  std::vector<bool> seen(model.size(), false);
  for (ItemId id : observed) {
    if (id >= model.size()) throw std::invalid_argument("unknown item id " + std::to_string(id));
    if (id == item_id) throw std::invalid_argument("left-out item is already observed");
    if (seen[id]) throw std::invalid_argument("observed item listed twice");
    seen[id] = true;
  }

  const Density full = full_bank_posterior(model, full_responses, prior);
  Density current = prior;
  for (ItemId id : observed) current = posterior_update(current, model.table(id), categories[id]);
  Density loo = prior;
  for (ItemId id = 0; id < model.size(); ++id) {
    if (id != item_id) loo = posterior_update(loo, model.table(id), categories[id]);
  }
  const std::size_t x = categories[item_id];
  const Density next = posterior_update(current, model.table(item_id), x);

  LooTerms t;
  t.kl_full_current = kl_divergence(full, current);
  t.full_entropy = entropy(full);
  t.kl_full_loo = kl_divergence(full, loo);
  t.log_predictive_ratio =
      std::log(predictive_mass(model.table(item_id), current)[x]) - std::log(predictive_mass(model.table(item_id), loo)[x]);
  t.kl_full_next = kl_divergence(full, next);
  return t;
}

}  // namespace grmcat
