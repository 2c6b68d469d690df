#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace grmcat {

using ItemId = std::size_t;

inline double logistic(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

/// One Graded Response Model item: discrimination a > 0 and K-1 strictly
/// increasing thresholds for K ordinal categories 0..K-1.
class ItemParameters {
 public:
  ItemParameters(double discrimination, std::vector<double> thresholds)
      : discrimination_(discrimination), thresholds_(std::move(thresholds)) {
    if (!(discrimination_ > 0.0) || !std::isfinite(discrimination_)) {
      throw std::invalid_argument("item discrimination must be finite and > 0");
    }
    if (thresholds_.empty()) {
      throw std::invalid_argument("item needs at least one threshold (K >= 2)");
    }
    for (std::size_t k = 0; k < thresholds_.size(); ++k) {
      if (!std::isfinite(thresholds_[k])) {
        throw std::invalid_argument("item thresholds must be finite");
      }
      if (k > 0 && !(thresholds_[k - 1] < thresholds_[k])) {
        throw std::invalid_argument("item thresholds must be strictly increasing");
      }
    }
  }

  double discrimination() const noexcept { return discrimination_; }
  const std::vector<double>& thresholds() const noexcept { return thresholds_; }
  std::size_t n_levels() const noexcept { return thresholds_.size() + 1; }

  friend bool operator==(const ItemParameters&, const ItemParameters&) = default;

 private:
  double discrimination_;
  std::vector<double> thresholds_;
};

/// Probability of each category at theta. Each difference of adjacent
/// cumulative curves is taken on whichever tail keeps it well conditioned.
inline std::vector<double> grm_category_probs(const ItemParameters& item, double theta) {
  const double a = item.discrimination();
  const auto& b = item.thresholds();
  const std::size_t K = item.n_levels();
  std::vector<double> p(K);
  // Upper cumulative P(X >= k) for k = 0..K, with boundaries 1 and 0.
  auto upper = [&](std::size_t k) { return k == 0 ? 1.0 : k == K ? 0.0 : logistic(a * (theta - b[k - 1])); };
  auto lower = [&](std::size_t k) { return k == 0 ? 0.0 : k == K ? 1.0 : logistic(-a * (theta - b[k - 1])); };
  for (std::size_t k = 0; k < K; ++k) {
    // Far above both thresholds the upper curves are ~1; difference their complements.
    const bool use_lower = k == 0 || theta > b[k - 1];
    const double pk = use_lower ? lower(k + 1) - lower(k) : upper(k) - upper(k + 1);
    p[k] = pk > 0.0 ? pk : 0.0;
  }
  return p;
}

/// Expected Fisher information sum_k P_k'(theta)^2 / P_k(theta).
inline double fisher_information(const ItemParameters& item, double theta) {
  const double a = item.discrimination();
  const auto& b = item.thresholds();
  const std::size_t K = item.n_levels();
  const auto p = grm_category_probs(item, theta);
  // Derivative of the upper cumulative curve: a * S * (1 - S).
  auto dupper = [&](std::size_t k) {
    if (k == 0 || k == K) return 0.0;
    const double s = logistic(a * (theta - b[k - 1]));
    return a * s * (1.0 - s);
  };
  double info = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!(p[k] > 0.0)) continue;
    const double d = dupper(k) - dupper(k + 1);
    info += d * d / p[k];
  }
  return info;
}

/// Calibrated pool of items with dense ids 0..N-1. External ids and item text
/// are carried for I/O and display only.
struct ItemBank {
  std::string scale_name;
  std::vector<ItemParameters> items;
  std::vector<std::int64_t> external_ids;
  std::vector<std::optional<std::string>> texts;
  /// Optional display labels for response categories, shared by the scale.
  std::vector<std::string> level_labels;

  ItemBank() = default;

  explicit ItemBank(std::vector<ItemParameters> params, std::string name = {})
      : scale_name(std::move(name)), items(std::move(params)) {
    external_ids.resize(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) external_ids[i] = static_cast<std::int64_t>(i);
    texts.resize(items.size());
  }

  std::size_t size() const noexcept { return items.size(); }
  const ItemParameters& operator[](ItemId id) const { return items.at(id); }

  /// Dense id of the item with the given external id.
  std::optional<ItemId> find_external(std::int64_t external_id) const noexcept {
    for (ItemId i = 0; i < external_ids.size(); ++i) {
      if (external_ids[i] == external_id) return i;
    }
    return std::nullopt;
  }

  /// Throws std::invalid_argument if the side tables disagree with items.
  void validate() const {
    if (items.empty()) throw std::invalid_argument("item bank is empty");
    if (external_ids.size() != items.size() || texts.size() != items.size()) {
      throw std::invalid_argument("item bank side tables have inconsistent lengths");
    }
  }
};

struct ResponseRecord {
  ItemId item_id = 0;
  std::size_t category = 0;

  friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;
};

inline void check_response(const ItemBank& bank, const ResponseRecord& r) {
  if (r.item_id >= bank.size()) {
    throw std::invalid_argument("unknown item id " + std::to_string(r.item_id));
  }
  if (r.category >= bank[r.item_id].n_levels()) {
    throw std::invalid_argument("category " + std::to_string(r.category) + " out of range for item " +
                                std::to_string(r.item_id) + " with " +
                                std::to_string(bank[r.item_id].n_levels()) + " levels");
  }
}

}  // namespace grmcat
