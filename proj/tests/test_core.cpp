#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "grmcat/grid.hpp"
#include "grmcat/grm.hpp"
#include "grmcat/posterior.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace grmcat;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const double kGaussianEntropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
}

TEST_CASE("build_grid: spacing and endpoints", "[grid]") {
  const auto g = build_grid(-6.0, 6.0, 200);
  REQUIRE(g->size() == 200);
  CHECK_THAT(g->step(), WithinAbs(12.0 / 199.0, 1e-15));
  CHECK_THAT(g->step(), WithinAbs(0.060301, 1e-6));
  CHECK((*g)[0] == -6.0);
  CHECK((*g)[199] == 6.0);
  for (std::size_t j = 0; j + 1 < g->size(); ++j) {
    CHECK_THAT((*g)[j + 1] - (*g)[j], WithinRel(g->step(), 1e-12));
  }

  const auto small = build_grid(0.0, 1.0, 3);
  CHECK(small->points() == std::vector<double>{0.0, 0.5, 1.0});

  CHECK_THROWS_AS(build_grid(1.0, 1.0, 200), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(2.0, 1.0, 200), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(0.0, 1.0, 2), std::invalid_argument);
}

TEST_CASE("trapezoid rule", "[grid]") {
  const auto unit = build_grid(0.0, 1.0, 200);
  CHECK(unit->trapezoid(std::vector<double>(200, 1.0)) == 1.0);

  const auto sym = build_grid(-1.0, 1.0, 200);
  std::vector<double> odd(200), square(200);
  for (std::size_t j = 0; j < 200; ++j) {
    odd[j] = (*sym)[j];
    square[j] = (*sym)[j] * (*sym)[j];
  }
  CHECK_THAT(sym->trapezoid(odd), WithinAbs(0.0, 1e-14));
  CHECK_THAT(sym->trapezoid(square), WithinAbs(2.0 / 3.0, 1e-4));

  CHECK_THROWS_AS(sym->trapezoid(std::vector<double>(199, 1.0)), std::invalid_argument);
}

TEST_CASE("gaussian_prior", "[grid]") {
  const auto g = build_grid();
  const Density d = gaussian_prior(g, 0.0, 1.0);
  CHECK_THAT(d.integral(), WithinAbs(1.0, 1e-9));
  const auto mode = std::max_element(d.values().begin(), d.values().end()) - d.values().begin();
  CHECK(std::abs((*g)[mode]) <= 0.5 * g->step() + 1e-12);
  CHECK_THAT(entropy(d), WithinAbs(kGaussianEntropy, 1e-3));
  CHECK_THAT(entropy(d), WithinAbs(1.41894, 1e-3));
  CHECK_THAT(variance(d), WithinAbs(1.0, 1e-3));
  CHECK_THAT(mean(d), WithinAbs(0.0, 1e-12));

  CHECK_THAT(variance(gaussian_prior(g, 0.0, std::sqrt(2.0))), WithinAbs(2.0, 1e-3));

  CHECK_THROWS_AS(gaussian_prior(g, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_prior(g, 0.0, -1.0), std::invalid_argument);
}

TEST_CASE("density moments and entropy", "[grid]") {
  const auto g = build_grid();
  CHECK_THAT(entropy(uniform_density(g)), WithinAbs(std::log(12.0), 1e-3));
  CHECK(entropy(point_mass(g, 0.7)) < entropy(gaussian_prior(g, 0.0, 1.0)));
  CHECK_THAT(variance(point_mass(g, 0.7)), WithinAbs(0.0, 1e-12));

  testing_support::Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const Density d = testing_support::random_density(g, rng);
    CHECK_THAT(d.integral(), WithinAbs(1.0, 1e-9));
    CHECK(variance(d) >= 0.0);
  }

  CHECK_THROWS_AS(Density(g, std::vector<double>(200, -1.0)), std::invalid_argument);
  CHECK_THROWS_AS(Density(g, std::vector<double>(10, 1.0)), std::invalid_argument);
  CHECK_THROWS_AS(Density::normalized(g, std::vector<double>(200, 0.0)), NumericalDegeneracy);
}

TEST_CASE("kl_divergence", "[grid]") {
  const auto g = build_grid();
  const Density p = gaussian_prior(g, 0.0, 1.0);
  CHECK_THAT(kl_divergence(p, p), WithinAbs(0.0, 1e-12));
  CHECK_THAT(kl_divergence(p, gaussian_prior(g, 0.5, 1.0)), WithinAbs(0.125, 1e-3));

  testing_support::Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const Density a = testing_support::random_density(g, rng);
    const Density b = testing_support::random_density(g, rng);
    CHECK(kl_divergence(a, b) >= -1e-9);
  }

  const auto other = build_grid(-5.0, 5.0, 200);
  CHECK_THROWS_AS(kl_divergence(p, gaussian_prior(other, 0.0, 1.0)), std::invalid_argument);
}

TEST_CASE("ItemParameters validation", "[grm]") {
  CHECK_THROWS_AS(ItemParameters(0.0, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(ItemParameters(-1.0, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(ItemParameters(1.0, {}), std::invalid_argument);
  CHECK_THROWS_AS(ItemParameters(1.0, {1.0, -1.0}), std::invalid_argument);
  CHECK_THROWS_AS(ItemParameters(1.0, {0.5, 0.5}), std::invalid_argument);
  CHECK(ItemParameters(1.0, {-1.0, 0.0, 2.0}).n_levels() == 4);
}

TEST_CASE("grm_category_probs", "[grm]") {
  const auto half = grm_category_probs(ItemParameters(1.0, {0.0}), 0.0);
  CHECK_THAT(half[0], WithinAbs(0.5, 1e-15));
  CHECK_THAT(half[1], WithinAbs(0.5, 1e-15));

  // (1 - σ(1.5), σ(1.5) - σ(-1.5), σ(-1.5))
  const auto three = grm_category_probs(ItemParameters(1.5, {-1.0, 1.0}), 0.0);
  CHECK_THAT(three[0], WithinAbs(0.18243, 1e-5));
  CHECK_THAT(three[1], WithinAbs(0.63514, 1e-5));
  CHECK_THAT(three[2], WithinAbs(0.18243, 1e-5));

  testing_support::Rng rng(3);
  for (int rep = 0; rep < 500; ++rep) {
    const auto item = testing_support::random_item(rng, testing_support::uniform_int(rng, 2, 7));
    const double theta = testing_support::uniform(rng, -8.0, 8.0);
    const auto p = grm_category_probs(item, theta);
    REQUIRE(p.size() == item.n_levels());
    double total = 0.0;
    for (double x : p) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
      total += x;
    }
    CHECK_THAT(total, WithinAbs(1.0, 1e-12));
    const auto ref = oracle::category_probs(item.discrimination(), item.thresholds(), theta);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK_THAT(p[k], WithinAbs(ref[k], 1e-12));
  }
}

TEST_CASE("grm_category_probs keeps relative precision in the tails", "[grm]") {
  // Far above every threshold the lowest category is σ(-a(θ - b_1)), not a cancelled difference.
  const ItemParameters item(2.0, {-1.0, 0.0});
  const auto p = grm_category_probs(item, 20.0);
  CHECK_THAT(p[0], WithinRel(oracle::sigmoid(-2.0 * 21.0), 1e-12));
  CHECK(p[0] > 0.0);
  CHECK(p[1] > 0.0);
}

TEST_CASE("fisher_information", "[grm]") {
  // 2PL closed form a^2 σ(1-σ) at θ = b.
  CHECK_THAT(fisher_information(ItemParameters(2.0, {0.3}), 0.3), WithinAbs(1.0, 1e-15));
  const ItemParameters bin(1.3, {0.4});
  for (double th : {-2.0, 0.0, 1.7}) {
    const double s = oracle::sigmoid(1.3 * (th - 0.4));
    CHECK_THAT(fisher_information(bin, th), WithinRel(1.3 * 1.3 * s * (1 - s), 1e-12));
  }

  const auto g = build_grid();
  testing_support::Rng rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    const auto item = testing_support::random_item(rng, testing_support::uniform_int(rng, 2, 6));
    for (double th : g->points()) CHECK(fisher_information(item, th) >= 0.0);
    const double theta = testing_support::uniform(rng, -3.0, 3.0);
    const double fd = oracle::fisher_fd(item.discrimination(), item.thresholds(), theta);
    CHECK_THAT(fisher_information(item, theta), WithinRel(fd, 1e-6));
  }
}

TEST_CASE("posterior_update", "[posterior]") {
  const auto g = build_grid();
  const Density prior = gaussian_prior(g, 0.0, 1.0);

  SECTION("no items leaves the prior unchanged") {
    const ItemBank empty;
    const Density d = full_bank_posterior(empty, {}, prior);
    CHECK(d.values() == prior.values());
  }

  SECTION("updates commute") {
    testing_support::Rng rng(23);
    for (int rep = 0; rep < 100; ++rep) {
      const auto a = testing_support::random_item(rng, 3);
      const auto b = testing_support::random_item(rng, 4);
      const std::size_t ka = rep % 3, kb = rep % 4;
      const Density ab = posterior_update(posterior_update(prior, a, ka), b, kb);
      const Density ba = posterior_update(posterior_update(prior, b, kb), a, ka);
      for (std::size_t j = 0; j < g->size(); ++j) CHECK_THAT(ab[j], WithinAbs(ba[j], 1e-12));
    }
  }

  SECTION("informative positive response shifts and sharpens; fine-grid oracle agrees") {
    const ItemParameters item(2.0, {0.0});
    const Density post = posterior_update(prior, item, 1);
    CHECK_THAT(post.integral(), WithinAbs(1.0, 1e-9));
    CHECK(mean(post) > 0.0);
    CHECK(variance(post) < variance(prior));

    const oracle::FineGrid fine(-6.0, 6.0, 20000);
    auto unnorm = fine.normal(0.0, 1.0);
    for (std::size_t j = 0; j < unnorm.size(); ++j) unnorm[j] *= oracle::sigmoid(2.0 * fine.x[j]);
    const double z = fine.sum(unnorm);
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < unnorm.size(); ++j) m += fine.w[j] * fine.x[j] * unnorm[j] / z;
    for (std::size_t j = 0; j < unnorm.size(); ++j) v += fine.w[j] * std::pow(fine.x[j] - m, 2) * unnorm[j] / z;
    CHECK_THAT(mean(post), WithinAbs(m, 1e-4));
    CHECK_THAT(variance(post), WithinAbs(v, 1e-4));
  }

  SECTION("impossible response is a numerical degeneracy") {
    const Density at_edge = point_mass(g, -6.0);
    CHECK_THROWS_AS(posterior_update(at_edge, ItemParameters(1000.0, {0.0}), 1), NumericalDegeneracy);
  }

  SECTION("category out of range") {
    CHECK_THROWS_AS(posterior_update(prior, ItemParameters(1.0, {0.0}), 2), std::invalid_argument);
  }

  SECTION("long response patterns do not underflow") {
    Density d = prior;
    const ItemParameters hard(2.5, {-1.0, 0.0, 1.0});
    for (int i = 0; i < 150; ++i) d = posterior_update(d, hard, 3);
    CHECK_THAT(d.integral(), WithinAbs(1.0, 1e-9));
    CHECK(mean(d) > 2.0);
  }
}

TEST_CASE("full_bank_posterior", "[posterior]") {
  const auto g = build_grid();
  const Density prior = gaussian_prior(g, 0.0, std::sqrt(2.0));
  testing_support::Rng rng(41);
  const ItemBank bank = testing_support::random_bank(rng, 8, 5);
  std::vector<ResponseRecord> responses;
  for (ItemId i = 0; i < bank.size(); ++i) responses.push_back({i, i % bank[i].n_levels()});

  SECTION("equals the sequential chain in any order") {
    const Density full = full_bank_posterior(bank, responses, prior);
    Density chain = prior;
    for (auto it = responses.rbegin(); it != responses.rend(); ++it) {
      chain = posterior_update(chain, bank[it->item_id], it->category);
    }
    for (std::size_t j = 0; j < g->size(); ++j) CHECK_THAT(full[j], WithinAbs(chain[j], 1e-12));
    CHECK_THAT(full.integral(), WithinAbs(1.0, 1e-9));

    const auto model = make_model(bank, g);
    const Density via_model = full_bank_posterior(*model, responses, prior);
    for (std::size_t j = 0; j < g->size(); ++j) CHECK_THAT(full[j], WithinAbs(via_model[j], 1e-12));
  }

  SECTION("missing and duplicate responses are rejected") {
    auto missing = responses;
    missing.pop_back();
    CHECK_THROWS_AS(full_bank_posterior(bank, missing, prior), std::invalid_argument);
    auto dup = responses;
    dup.back() = dup.front();
    CHECK_THROWS_AS(full_bank_posterior(bank, dup, prior), std::invalid_argument);
  }

  SECTION("fifty informative items recover the generating ability") {
    testing_support::Rng sim(99);
    std::vector<ItemParameters> items;
    for (int i = 0; i < 50; ++i) {
      const double b = testing_support::uniform(sim, -1.0, 3.0);
      items.emplace_back(testing_support::uniform(sim, 1.5, 2.5), std::vector<double>{b - 0.5, b + 0.5});
    }
    const ItemBank informative(items);
    std::vector<ResponseRecord> rs;
    for (ItemId i = 0; i < informative.size(); ++i) {
      const auto p = oracle::category_probs(informative[i].discrimination(), informative[i].thresholds(), 1.0);
      std::discrete_distribution<std::size_t> draw(p.begin(), p.end());
      rs.push_back({i, draw(sim)});
    }
    CHECK_THAT(mean(full_bank_posterior(informative, rs, prior)), WithinAbs(1.0, 0.35));
  }
}

TEST_CASE("predictive_mass", "[posterior]") {
  const auto g = build_grid();

  const ItemParameters item(1.7, {-0.5, 0.8});
  const auto point = predictive_mass(item, point_mass(g, 0.9));
  const auto direct = grm_category_probs(item, (*g)[g->nearest(0.9)]);
  for (std::size_t k = 0; k < 3; ++k) CHECK_THAT(point[k], WithinAbs(direct[k], 1e-2));

  const auto sym = predictive_mass(ItemParameters(1.3, {0.0}), gaussian_prior(g, 0.0, 1.0));
  CHECK_THAT(sym[0], WithinAbs(0.5, 1e-9));
  CHECK_THAT(sym[1], WithinAbs(0.5, 1e-9));

  const auto p = predictive_mass(ItemParameters(1.0, {1.0}), gaussian_prior(g, 0.0, 1.0));
  const oracle::FineGrid fine(-6.0, 6.0, 20000);
  const auto q = fine.normal(0.0, 1.0);
  double p1 = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) p1 += fine.w[j] * q[j] * oracle::sigmoid(fine.x[j] - 1.0);
  CHECK_THAT(p[1], WithinAbs(p1, 1e-4));
  CHECK_THAT(p[0], WithinAbs(1.0 - p1, 1e-4));

  testing_support::Rng rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = testing_support::random_density(g, rng);
    const auto it = testing_support::random_item(rng, testing_support::uniform_int(rng, 2, 6));
    const auto m = predictive_mass(it, d);
    CHECK_THAT(std::accumulate(m.begin(), m.end(), 0.0), WithinAbs(1.0, 1e-9));
  }
}

TEST_CASE("expected variance and entropy never exceed the current values", "[posterior][property]") {
  const auto g = build_grid();
  testing_support::Rng rng(2024);
  for (int rep = 0; rep < 300; ++rep) {
    const Density d = testing_support::random_density(g, rng);
    const auto item = testing_support::random_item(rng, testing_support::uniform_int(rng, 2, 6));
    const auto p = predictive_mass(item, d);
    double ev = 0.0, eh = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] <= 0.0) continue;
      const Density post = posterior_update(d, item, k);
      CHECK_THAT(post.integral(), WithinAbs(1.0, 1e-9));
      ev += p[k] * variance(post);
      eh += p[k] * entropy(post);
    }
    CHECK(ev <= variance(d) + 1e-9);
    CHECK(eh <= entropy(d) + 1e-9);
  }
}
