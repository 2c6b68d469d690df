#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grmcat/errors.hpp"
#include "grmcat/grid.hpp"
#include "grmcat/grm.hpp"

namespace grmcat {

/// One item tabulated on a grid: rows[k][j] = P(k | theta_j), their logs
/// (-inf where P is 0), and the Fisher information at each grid point.
class ItemTable {
 public:
  ItemTable(const ItemParameters& item, const AbilityGrid& grid)
      : rows_(item.n_levels(), std::vector<double>(grid.size())),
        log_rows_(item.n_levels(), std::vector<double>(grid.size())),
        information_(grid.size()) {
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const auto p = grm_category_probs(item, grid[j]);
      for (std::size_t k = 0; k < p.size(); ++k) {
        rows_[k][j] = p[k];
        log_rows_[k][j] = p[k] > 0.0 ? std::log(p[k]) : -std::numeric_limits<double>::infinity();
      }
      information_[j] = fisher_information(item, grid[j]);
    }
  }

  std::size_t n_levels() const noexcept { return rows_.size(); }
  std::span<const double> row(std::size_t k) const { return rows_.at(k); }
  std::span<const double> log_row(std::size_t k) const { return log_rows_.at(k); }
  std::span<const double> information() const noexcept { return information_; }

 private:
  std::vector<std::vector<double>> rows_;
  std::vector<std::vector<double>> log_rows_;
  std::vector<double> information_;
};

/// A bank bound to a quadrature grid, with every item's response curves
/// tabulated once. Immutable; share through ModelPtr.
class Model {
 public:
  Model(ItemBank bank, GridPtr grid) : bank_(std::move(bank)), grid_(std::move(grid)) {
    bank_.validate();
    tables_.reserve(bank_.size());
    for (const auto& item : bank_.items) tables_.emplace_back(item, *grid_);
  }

  const ItemBank& bank() const noexcept { return bank_; }
  const GridPtr& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return bank_.size(); }
  const ItemTable& table(ItemId id) const { return tables_.at(id); }

 private:
  ItemBank bank_;
  GridPtr grid_;
  std::vector<ItemTable> tables_;
};

using ModelPtr = std::shared_ptr<const Model>;

inline ModelPtr make_model(ItemBank bank, GridPtr grid = build_grid()) {
  return std::make_shared<const Model>(std::move(bank), std::move(grid));
}

/// current * likelihood, renormalized. Accumulated in log space and shifted by
/// the maximum before exponentiation.
inline Density update_with_likelihood(const Density& current, std::span<const double> likelihood) {
  const std::size_t n = current.size();
  if (likelihood.size() != n) throw std::invalid_argument("likelihood length does not match grid");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> logv(n);
  double peak = kNegInf;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = current[j];
    const double l = likelihood[j];
    logv[j] = (v > 0.0 && l > 0.0) ? std::log(v) + std::log(l) : kNegInf;
    peak = std::max(peak, logv[j]);
  }
  if (peak == kNegInf) {
    throw NumericalDegeneracy("posterior vanished on every grid point (impossible response pattern)");
  }
  for (double& x : logv) x = std::exp(x - peak);
  return Density::normalized(current.grid_ptr(), std::move(logv));
}

inline Density posterior_update(const Density& current, const ItemTable& table, std::size_t category) {
  if (category >= table.n_levels()) {
    throw std::invalid_argument("category " + std::to_string(category) + " out of range");
  }
  return update_with_likelihood(current, table.row(category));
}

inline Density posterior_update(const Density& current, const ItemParameters& item, std::size_t category) {
  return posterior_update(current, ItemTable(item, current.grid()), category);
}

/// Marginal response distribution p(k) = ∫ P(k | θ) q(θ) dθ. Also the default
/// imputation model for unobserved responses.
inline std::vector<double> predictive_mass(const ItemTable& table, const Density& posterior) {
  const auto& grid = posterior.grid();
  std::vector<double> p(table.n_levels());
  std::vector<double> f(posterior.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto row = table.row(k);
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = row[j] * posterior[j];
    p[k] = grid.trapezoid(f);
  }
  return p;
}

inline std::vector<double> predictive_mass(const ItemParameters& item, const Density& posterior) {
  return predictive_mass(ItemTable(item, posterior.grid()), posterior);
}

/// Categories indexed by item id. Requires exactly one response per bank item.
inline std::vector<std::size_t> complete_categories(const ItemBank& bank,
                                                    std::span<const ResponseRecord> responses) {
  if (responses.size() != bank.size()) {
    throw std::invalid_argument("full-bank scoring needs one response per item: expected " +
                                std::to_string(bank.size()) + ", got " + std::to_string(responses.size()));
  }
  constexpr auto kMissing = static_cast<std::size_t>(-1);
  std::vector<std::size_t> categories(bank.size(), kMissing);
  for (const auto& r : responses) {
    check_response(bank, r);
    if (categories[r.item_id] != kMissing) {
      throw std::invalid_argument("duplicate response for item " + std::to_string(r.item_id));
    }
    categories[r.item_id] = r.category;
  }
  return categories;
}

/// Folds every response into the prior, in item-id order.
inline Density full_bank_posterior(const ItemBank& bank, std::span<const ResponseRecord> responses,
                                   const Density& prior) {
  const auto categories = complete_categories(bank, responses);
  Density d = prior;
  for (ItemId i = 0; i < bank.size(); ++i) d = posterior_update(d, bank[i], categories[i]);
  return d;
}

inline Density full_bank_posterior(const Model& model, std::span<const ResponseRecord> responses,
                                   const Density& prior) {
  const auto categories = complete_categories(model.bank(), responses);
  Density d = prior;
  for (ItemId i = 0; i < model.size(); ++i) d = posterior_update(d, model.table(i), categories[i]);
  return d;
}

}  // namespace grmcat
