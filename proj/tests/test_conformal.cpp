#include "adaptcal/conformal.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <random>

using namespace adaptcal;
using testing::error_kind_of;

namespace {

IntervalForecast single(double lo, double pt, double hi, Eigen::Index n = 1, Eigen::Index h = 1) {
  return {Eigen::MatrixXd::Constant(n, h, lo), Eigen::MatrixXd::Constant(n, h, pt),
          Eigen::MatrixXd::Constant(n, h, hi)};
}

// Random 2x3 grid of intervals around noisy truths; node 1 is noisier.
CellGrid random_grid(std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  CellGrid g(2, 3);
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const double mid = 10.0 * nd(rng);
        const double y = mid + (1.0 + 3.0 * static_cast<double>(i)) * nd(rng);
        g.at(i, j).add(mid - 1.5, mid + 1.5, y);
      }
  return g;
}

}  // namespace

TEST_CASE("nonconformity score examples") {
  CHECK(nonconformity(4, 8, 10) == 2);
  CHECK(nonconformity(4, 8, 6) == -2);
  CHECK(nonconformity(4, 8, 4) == 0);
}

TEST_CASE("residual collection") {
  CellGrid perfect(1, 2);
  for (int k = 0; k < 5; ++k) {
    perfect.at(0, 0).add(k, k, k);
    perfect.at(0, 1).add(2.0 * k, 2.0 * k, 2.0 * k);
  }
  const auto zero = collect_residuals(perfect);
  for (const auto& cell : zero.scores)
    for (double s : cell) CHECK(s == 0.0);

  const auto store = collect_residuals(random_grid(14, 1));
  for (const auto& cell : store.scores) CHECK(cell.size() == 14);
}

TEST_CASE("percentile candidates") {
  CHECK(quantile_candidates({1, 2, 3, 4, 5}, 5) == std::vector<double>{1, 2, 3, 4, 5});
  CHECK(quantile_candidates({3, 3, 3}, 4) == std::vector<double>{3, 3, 3, 3});
  CHECK(quantile_candidates({0, 10}, 3) == std::vector<double>{0, 5, 10});
  CHECK(quantile_candidates({5, 1, 4, 2, 3}, 5) == std::vector<double>{1, 2, 3, 4, 5});
  CHECK(error_kind_of([] { quantile_candidates({1, 2}, 1); }) == ErrorKind::Config);
}

TEST_CASE("grid candidates versus quantile candidates") {
  const std::vector<double> two{0, 10};
  CHECK(grid_candidates(two, 2) == std::vector<double>{0, 10});
  CHECK(quantile_candidates(two, 2) == std::vector<double>{0, 10});
  const std::vector<double> gap{0, 0, 0, 100};
  CHECK(grid_candidates(gap, 5) == std::vector<double>{0, 25, 50, 75, 100});
  CHECK(quantile_candidates(gap, 5) == std::vector<double>{0, 0, 0, 25, 100});
}

TEST_CASE("percentile candidates are non-decreasing and match the interpolation oracle") {
  std::mt19937_64 rng(5);
  std::cauchy_distribution<double> heavy(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> scores(1 + rng() % 80);
    for (auto& s : scores) s = heavy(rng);
    if (trial % 5 == 0) scores.assign(scores.size(), 0.1 + 0.2);  // ties
    const std::size_t m = 2 + rng() % 100;
    const auto q = quantile_candidates(scores, m);
    REQUIRE(q.size() == m);
    for (std::size_t k = 1; k < m; ++k) CHECK(q[k] >= q[k - 1]);
    for (std::size_t k = 0; k < m; ++k) {
      const double level = static_cast<double>(k) / static_cast<double>(m - 1);
      CHECK(q[k] == doctest::Approx(oracle::empirical_quantile(scores, level)).epsilon(1e-12));
    }
  }
}

TEST_CASE("select_cell_delta objective examples") {
  // Base intervals are [0, 0]; a candidate d gives [-d, d] of width 2d.
  CellData chi2;
  for (double y : {0.05, -0.05, 0.05, -0.05, 0.05, 0.2, -0.2, 0.2, -0.2, 0.4}) chi2.add(0, 0, y);
  const std::vector<double> cands{0.1, 0.25, 0.5};  // (cov, width) = (.5,.2) (.9,.5) (1,1)

  auto raw = select_cell_delta(cands, chi2, 0.5, 1.0, 1.0);
  CHECK(raw.index == 1);
  CHECK(raw.score == doctest::Approx(-0.20));
  CHECK(raw.coverage == doctest::Approx(0.9));
  CHECK(raw.width == doctest::Approx(0.5));

  CHECK(select_cell_delta(cands, chi2, 0.5, 0.9, 1.0).index == 1);
  // lambda = 1: smallest candidate reaching the maximal coverage.
  CHECK(select_cell_delta(cands, chi2, 1.0, 1.0, 1.0).index == 2);
  CHECK(select_cell_delta(std::vector<double>{0.5, 0.6}, chi2, 1.0, 1.0, 1.0).index == 0);
  // lambda = 0: the smallest widening.
  CHECK(select_cell_delta(cands, chi2, 0.0, 1.0, 1.0).index == 0);

  CHECK(error_kind_of([&] { select_cell_delta(cands, CellData{}, 0.5, 1.0, 1.0); }) == ErrorKind::Data);
}

TEST_CASE("select_cell_delta equals the brute-force oracle") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> scores(5 + rng() % 50);
    for (auto& s : scores) s = nd(rng);
    const auto cands = quantile_candidates(scores, 2 + rng() % 60);
    CellData chi2;
    for (std::size_t k = 0, n = 1 + rng() % 40; k < n; ++k) {
      const double mid = nd(rng), half = std::abs(nd(rng));
      chi2.add(mid - half, mid + half, mid + nd(rng));
    }
    const double lambda = (rng() % 101) / 100.0;
    const double norm = std::max(mean_width(chi2), 1e-9);
    CHECK(select_cell_delta(cands, chi2, lambda, 0.9, norm).index ==
          oracle::brute_force_select(cands, chi2.lower, chi2.upper, chi2.truth, lambda, 0.9, norm));
  }
}

TEST_CASE("selected delta is non-decreasing in lambda") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(30);
    for (auto& s : scores) s = 2.0 * nd(rng);
    const auto cands = quantile_candidates(scores, 2 + rng() % 99);
    CellData chi2;
    for (int k = 0; k < 25; ++k) chi2.add(-1, 1, 2.0 * nd(rng));
    for (double cap : {0.9, 1.0}) {
      double prev = -1e300;
      for (int step = 0; step <= 20; ++step) {
        const auto sel = select_cell_delta(cands, chi2, step / 20.0, cap, mean_width(chi2));
        CHECK(sel.delta >= prev);
        prev = sel.delta;
      }
    }
  }
}

TEST_CASE("build_table: perfect forecaster, missing cells, determinism") {
  CellGrid chi1(2, 2), chi2(2, 2);
  for (int k = 0; k < 10; ++k)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        chi1.at(i, j).add(k, k, k);
        chi2.at(i, j).add(k, k, k);
      }
  CalibrationOptions opts;
  const auto t = build_table(chi1, chi2, opts);
  for (const auto& d : t.delta) CHECK(d == std::optional<double>(0.0));
  CHECK(t.missing_cells() == 0);

  CellGrid partial(2, 2);
  for (int k = 0; k < 10; ++k)
    for (std::size_t j = 0; j < 2; ++j) partial.at(0, j).add(k, k, k);
  const auto t2 = build_table(chi1, partial, opts);
  CHECK(t2.lookup(0, 0).has_value());
  CHECK(t2.lookup(0, 1).has_value());
  CHECK_FALSE(t2.lookup(1, 0).has_value());
  CHECK_FALSE(t2.lookup(1, 1).has_value());
  CHECK(t2.missing_cells() == 2);

  const auto a = random_grid(40, 7), b = random_grid(40, 8);
  CHECK(build_table(a, b, opts) == build_table(a, b, opts));
  CHECK(error_kind_of([&] { build_table(CellGrid(2, 3), b, opts); }) == ErrorKind::Data);
}

TEST_CASE("per-cell deltas follow per-node noise") {
  const auto chi1 = random_grid(400, 11), chi2 = random_grid(400, 12);
  const auto t = build_table(chi1, chi2, CalibrationOptions{});
  for (std::size_t j = 0; j < 3; ++j) CHECK(*t.lookup(1, j) > *t.lookup(0, j) + 2.0);
}

TEST_CASE("global delta by split-conformal rank") {
  auto rank_pool = [](std::vector<double> scores) {
    CellGrid g(1, 1);
    for (double s : scores) g.at(0, 0).add(0, 0, s);  // score = y for a [0,0] interval, y >= 0
    return g;
  };
  std::vector<double> one_to_99;
  for (int k = 1; k <= 99; ++k) one_to_99.push_back(k);
  CHECK(fit_global_delta(rank_pool(one_to_99), 0.1).delta == 90.0);
  CHECK(oracle::split_conformal_quantile(one_to_99, 0.1) == 90.0);
  CHECK(fit_global_delta(rank_pool({0, 0, 0, 0}), 0.1).delta == 0.0);
  CHECK(fit_global_delta(rank_pool({7.5}), 0.3).delta == 7.5);
  CHECK(error_kind_of([] { fit_global_delta(CellGrid(1, 1), 0.1); }) == ErrorKind::Data);

  std::mt19937_64 rng(2);
  std::exponential_distribution<double> ex(0.3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> pool(1 + rng() % 300);
    for (auto& v : pool) v = ex(rng);
    const double alpha = 0.01 + (rng() % 90) / 100.0;
    CHECK(conformal_quantile(pool, alpha) == oracle::split_conformal_quantile(pool, alpha));
  }
}

TEST_CASE("apply_adjustment examples and fallback") {
  CalibrationTable table;
  table.nodes = 1;
  table.horizon = 2;
  table.delta = {2.0, std::nullopt};
  table.width_normalizer = {1.0, 0.0};
  const auto f = single(4, 6, 8, 1, 2);
  auto out = apply_adjustment(f, table);
  CHECK(out.lower(0, 0) == 2);
  CHECK(out.upper(0, 0) == 10);
  CHECK(out.lower(0, 1) == 4);  // missing cell unchanged by default
  CHECK(out.upper(0, 1) == 8);
  CHECK(out.point == f.point);

  Fallback global{FallbackPolicy::Global, GlobalDelta{1.0, 0.1, 10}};
  out = apply_adjustment(f, table, global);
  CHECK(out.lower(0, 1) == 3);
  CHECK(out.upper(0, 1) == 9);

  table.delta = {-1.0, -3.0};
  out = apply_adjustment(f, table);
  CHECK((out.lower(0, 0) == 5 && out.upper(0, 0) == 7));
  CHECK((out.lower(0, 1) == 6 && out.upper(0, 1) == 6));

  table.delta = {0.0, 0.0};
  out = apply_adjustment(f, table);
  CHECK(out.lower == f.lower);
  CHECK(out.upper == f.upper);

  const auto g = apply_global(f, GlobalDelta{0.5, 0.1, 3});
  CHECK((g.lower.array() == 3.5).all());
  CHECK((g.upper.array() == 8.5).all());
}

TEST_CASE("widening is monotone in delta for coverage and width") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd(0.0, 1.0);
  CellData cell;
  for (int k = 0; k < 200; ++k) cell.add(-1, 1, 2 * nd(rng));
  double prev_cov = -1, prev_width = -1;
  for (double d = -2.0; d <= 3.0; d += 0.05) {
    double cov = 0, width = 0;
    for (std::size_t k = 0; k < cell.size(); ++k) {
      double lo = cell.lower[k], hi = cell.upper[k];
      widen(lo, hi, d);
      cov += (lo <= cell.truth[k] && cell.truth[k] <= hi) ? 1 : 0;
      width += hi - lo;
    }
    CHECK(cov >= prev_cov);
    CHECK(width >= prev_width);
    prev_cov = cov;
    prev_width = width;
  }
}

TEST_CASE("update_table") {
  const auto chi1 = random_grid(30, 21), chi2 = random_grid(25, 22);
  CalibrationOptions opts;
  opts.quantiles = 20;
  const auto state = CalibrationState::from_build(chi1, chi2, opts);

  SUBCASE("no observations leaves the table unchanged") {
    CHECK(update_table(state, {}, UpdatePolicy{}).table == state.table);
  }

  SUBCASE("a missing cell becomes present after two observations") {
    auto empty = CalibrationState::empty(2, 3, opts);
    std::vector<Observation> one{{1, 2, 0, 1, 0.5}};
    auto after_one = update_table(empty, one, UpdatePolicy{});
    CHECK_FALSE(after_one.table.lookup(1, 2).has_value());
    std::vector<Observation> second{{1, 2, 0, 1, 1.7}};
    auto after_two = update_table(after_one, second, UpdatePolicy{});
    CHECK(after_two.table.lookup(1, 2).has_value());
    CHECK(after_two.table.missing_cells() == 5);
  }

  SUBCASE("malformed observations are skipped and counted") {
    std::vector<Observation> obs{{5, 0, 0, 1, 0}, {0, 0, 2, 1, 0}, {0, 0, 0, 1, NAN}, {0, 0, 0, 1, 3}};
    UpdateStats stats;
    update_table(state, obs, UpdatePolicy{}, &stats);
    CHECK(stats.skipped == 3);
    CHECK(stats.accepted == 1);
  }

  SUBCASE("replaying chi1 then chi2 reproduces the built table") {
    std::vector<Observation> replay;
    for (const auto* grid : {&chi1, &chi2})
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const auto& c = grid->at(i, j);
          for (std::size_t k = 0; k < c.size(); ++k) replay.push_back({i, j, c.lower[k], c.upper[k], c.truth[k]});
        }
    const auto rebuilt = update_table(CalibrationState::empty(2, 3, opts), replay, UpdatePolicy{25});
    CHECK(rebuilt.table.delta == state.table.delta);
    CHECK(rebuilt.table.width_normalizer == state.table.width_normalizer);
  }
}

TEST_CASE("table and global delta serialization round-trip bit-exactly") {
  auto t = build_table(random_grid(50, 31), random_grid(50, 32), CalibrationOptions{});
  t.delta[3] = std::nullopt;
  t.delta[0] = 0.1 + 0.2;
  const auto back = CalibrationTable::deserialize(t.serialize());
  CHECK(back == t);
  CHECK(back.missing_cells() == 1);

  const GlobalDelta g{1.0 / 3.0, 0.1, 77};
  CHECK(GlobalDelta::deserialize(g.serialize()) == g);
  CHECK(error_kind_of([] { CalibrationTable::deserialize("not json"); }) == ErrorKind::Data);
}
