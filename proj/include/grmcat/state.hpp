#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grmcat/grid.hpp"
#include "grmcat/posterior.hpp"

namespace grmcat {

/// Administered responses x_t, remaining items z_t and the running posterior
/// of one respondent. The administration log is the source of truth; the
/// posterior is always the prior folded over it in administration order.
class SessionState {
 public:
  SessionState(ModelPtr model, Density prior)
      : model_(std::move(model)), prior_(std::move(prior)), posterior_(prior_) {
    if (!model_) throw std::invalid_argument("session needs a model");
    if (!(prior_.grid() == *model_->grid())) {
      throw std::invalid_argument("prior and model use different grids");
    }
    administered_flag_.assign(model_->size(), false);
    refresh_cache();
  }

  const Model& model() const noexcept { return *model_; }
  const ModelPtr& model_ptr() const noexcept { return model_; }
  const ItemBank& bank() const noexcept { return model_->bank(); }
  const Density& prior() const noexcept { return prior_; }
  const Density& posterior() const noexcept { return posterior_; }
  std::span<const ResponseRecord> administered() const noexcept { return administered_; }
  std::size_t step() const noexcept { return administered_.size(); }

  bool is_remaining(ItemId id) const { return id < administered_flag_.size() && !administered_flag_[id]; }
  std::size_t remaining_count() const noexcept { return model_->size() - administered_.size(); }

  /// Unadministered item ids in ascending order.
  std::vector<ItemId> remaining() const {
    std::vector<ItemId> out;
    out.reserve(remaining_count());
    for (ItemId i = 0; i < administered_flag_.size(); ++i) {
      if (!administered_flag_[i]) out.push_back(i);
    }
    return out;
  }

  /// Posterior mean, the running point estimate.
  double point_estimate() const noexcept { return posterior_mean_; }

  /// log of the posterior, -inf where it is 0.
  std::span<const double> log_posterior() const noexcept { return log_posterior_; }

  void submit(ItemId item_id, std::size_t category) {
    const ResponseRecord r{item_id, category};
    check_response(bank(), r);
    if (administered_flag_[item_id]) {
      throw std::invalid_argument("item " + std::to_string(item_id) + " was already administered");
    }
    posterior_ = posterior_update(posterior_, model_->table(item_id), category);
    administered_flag_[item_id] = true;
    administered_.push_back(r);
    refresh_cache();
  }

  /// Prior folded over the administration log from scratch.
  Density recompute() const {
    Density d = prior_;
    for (const auto& r : administered_) d = posterior_update(d, model_->table(r.item_id), r.category);
    return d;
  }

 private:
  void refresh_cache() {
    posterior_mean_ = mean(posterior_);
    log_posterior_.resize(posterior_.size());
    for (std::size_t j = 0; j < posterior_.size(); ++j) {
      const double v = posterior_[j];
      log_posterior_[j] = v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
    }
  }

  ModelPtr model_;
  Density prior_;
  Density posterior_;
  std::vector<ResponseRecord> administered_;
  std::vector<bool> administered_flag_;
  double posterior_mean_ = 0.0;
  std::vector<double> log_posterior_;
};

}  // namespace grmcat
