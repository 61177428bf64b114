#include "adaptcal/baselines.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <random>

using namespace adaptcal;
using testing::error_kind_of;

namespace {

// Hourly panel starting on a Monday.
SeriesPanel hourly_panel(std::size_t nodes, std::size_t steps, double value) {
  SeriesPanel p;
  p.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(steps), value);
  for (std::size_t i = 0; i < nodes; ++i) p.node_ids.push_back("n" + std::to_string(i));
  p.start = std::chrono::sys_days{std::chrono::year{2024} / 1 / 1};
  p.interval_minutes = 60;
  return p;
}

std::vector<WindowSample> noisy_windows(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<WindowSample> out(count);
  for (auto& w : out) {
    w.input.resize(2, 3);
    for (Eigen::Index t = 0; t < 3; ++t) w.input.col(t) << 5 + nd(rng), 9 + nd(rng);
    w.target.resize(2, 2);
    w.target << 5 + nd(rng), 5 + nd(rng), 9 + nd(rng), 9 + nd(rng);
  }
  return out;
}

}  // namespace

TEST_CASE("historical profile statistics") {
  auto constant = hourly_panel(2, 48, 7.0);
  const auto prof = fit_profile(constant, 48, Granularity::Daily);
  CHECK(prof.slots == 24);
  for (const auto& s : prof.stats) {
    REQUIRE(s.has_value());
    CHECK(s->mean == 7.0);
    CHECK(s->stddev == 0.0);
    CHECK(s->count == 2);
  }

  auto two = hourly_panel(1, 48, 0.0);
  two.values(0, 5) = 4.0;
  two.values(0, 29) = 6.0;  // same hour of day, next day
  const auto p2 = fit_profile(two, 48, Granularity::Daily);
  CHECK(p2.at(0, 5)->mean == 5.0);
  CHECK(p2.at(0, 5)->stddev == 1.0);
}

TEST_CASE("weekly profile over four weeks has four observations per slot") {
  const auto panel = hourly_panel(1, 4 * 7 * 24, 3.0);
  const auto prof = fit_profile(panel, panel.step_count(), Granularity::Weekly);
  CHECK(prof.slots == 7 * 24);
  for (const auto& s : prof.stats) CHECK(s->count == 4);
  CHECK(error_kind_of([&] { fit_profile(panel, 100, Granularity::Weekly); }) == ErrorKind::Data);
}

TEST_CASE("hist_interval") {
  HistoricalProfile prof;
  prof.granularity = Granularity::Daily;
  prof.slot_minutes = 60;
  prof.slots = 24;
  prof.nodes = 1;
  prof.stats.resize(24);
  prof.stats[10] = SlotStats{50, 5, 3};
  prof.stats[11] = SlotStats{50, 0, 3};
  const Timestamp day = std::chrono::sys_days{std::chrono::year{2024} / 2 / 3};
  const auto a = hist_interval(prof, 0, day + std::chrono::hours(10));
  CHECK((a.lower == 45 && a.point == 50 && a.upper == 55));
  const auto b = hist_interval(prof, 0, day + std::chrono::hours(11));
  CHECK((b.lower == 50 && b.point == 50 && b.upper == 50));
  std::string msg;
  CHECK(error_kind_of([&] { hist_interval(prof, 0, day + std::chrono::hours(12)); }, &msg) == ErrorKind::Data);
  CHECK(msg.find("missing slot") != std::string::npos);
}

TEST_CASE("weekly slots distinguish weekdays") {
  HistoricalProfile prof;
  prof.granularity = Granularity::Weekly;
  prof.slot_minutes = 60;
  const Timestamp monday = std::chrono::sys_days{std::chrono::year{2024} / 1 / 1};
  CHECK(prof.slot_of(monday) == 0);
  CHECK(prof.slot_of(monday + std::chrono::hours(24 + 3)) == 24 + 3);
  CHECK(prof.slot_of(monday + std::chrono::hours(6 * 24)) == 6 * 24);
}

TEST_CASE("ICP radius and intervals") {
  std::vector<WindowSample> cal(99);
  std::vector<IntervalForecast> fc(99);
  for (int k = 0; k < 99; ++k) {
    cal[k].target = Eigen::MatrixXd::Constant(1, 1, 100.0 + (k + 1) * (k % 2 == 0 ? 1 : -1));
    fc[k] = {Eigen::MatrixXd::Constant(1, 1, 90.0), Eigen::MatrixXd::Constant(1, 1, 100.0),
             Eigen::MatrixXd::Constant(1, 1, 110.0)};
  }
  const auto icp = fit_icp(fc, cal, 0.1);
  CHECK(icp.radius == 90.0);
  const IntervalForecast base{Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Constant(2, 2, 3.0),
                              Eigen::MatrixXd::Zero(2, 2)};
  const auto out = icp_interval(icp, base);
  CHECK(((out.upper - out.lower).array() == 180.0).all());
  CHECK((out.lower.array() == -87.0).all());

  for (auto& w : cal) w.target(0, 0) = 100.0;
  CHECK(fit_icp(fc, cal, 0.1).radius == 0.0);
  CHECK(error_kind_of([] { fit_icp({}, {}, 0.1); }) == ErrorKind::Data);
}

TEST_CASE("DQR equals the finalized raw prediction") {
  const auto data = noisy_windows(30, 1);
  MlpForecaster model(2, 3, 2, {8}, 0.0, 4);
  model.fit_normalization(data);
  const auto a = dqr_interval(model, data[0].input);
  const auto b = finalize_interval(predict(model, data[0].input));
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  CHECK(dqr_interval(model, data[0].input).point == a.point);
}

TEST_CASE("MC dropout") {
  const auto data = noisy_windows(100, 2);
  MlpForecaster model(2, 3, 2, {32, 32}, 0.3, 6);
  model.fit_normalization(data);

  McDropoutConfig cfg;
  cfg.samples = 50;
  cfg.seed = 3;
  cfg.dropout_rate = 0.0;
  const auto det = predict(model, data[0].input);
  const auto zero = mc_dropout_interval(model, data[0].input, cfg);
  CHECK(zero.lower.isApprox(det.point, 1e-12));
  CHECK(zero.upper.isApprox(det.point, 1e-12));

  cfg.dropout_rate = 0.5;
  const auto a = mc_dropout_interval(model, data[0].input, cfg);
  const auto b = mc_dropout_interval(model, data[0].input, cfg);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);

  const auto all = mc_dropout_all(model, data, cfg);
  double width = 0;
  for (const auto& f : all) width += (f.upper - f.lower).mean();
  CHECK(width / static_cast<double>(all.size()) > 0.0);

  cfg.samples = 1;
  CHECK(error_kind_of([&] { mc_dropout_interval(model, data[0].input, cfg); }) == ErrorKind::Config);
}

TEST_CASE("MC dropout bounds are empirical percentiles of the draws") {
  const auto data = noisy_windows(10, 3);
  MlpForecaster model(2, 3, 2, {16}, 0.3, 8);
  model.fit_normalization(data);
  McDropoutConfig cfg;
  cfg.samples = 50;
  cfg.seed = 12;
  const auto f = mc_dropout_interval(model, data[0].input, cfg);

  // Recreate the draws with the same generator and check the 5th/95th percentiles.
  const Eigen::MatrixXd x = model.encode_inputs(std::span<const WindowSample>(&data[0], 1));
  std::mt19937_64 rng(cfg.seed);
  const Eigen::MatrixXd out = model.forward(x.col(0).replicate(1, 50), &rng, cfg.dropout_rate);
  std::vector<double> draws;
  for (Eigen::Index k = 0; k < 50; ++k) draws.push_back(model.denormalize(1, out(4 + 1 * 2 + 0, k)));
  CHECK(f.lower(1, 0) == doctest::Approx(oracle::empirical_quantile(draws, 0.05)));
  CHECK(f.upper(1, 0) == doctest::Approx(oracle::empirical_quantile(draws, 0.95)));
}
