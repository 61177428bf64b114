#include "adaptcal/baselines.hpp"

#include "adaptcal/error.hpp"

#include <algorithm>
#include <cmath>

namespace adaptcal {

namespace {

using namespace std::chrono;
using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::size_t slots_per_day(int slot_minutes) {
  require(slot_minutes > 0 && 1440 % slot_minutes == 0, ErrorKind::Data,
          "sampling interval must divide a day evenly");
  return static_cast<std::size_t>(1440 / slot_minutes);
}

}  // namespace

std::size_t HistoricalProfile::slot_of(Timestamp ts) const {
  const auto day_start = floor<days>(ts);
  const auto minute_of_day = static_cast<std::size_t>((ts - day_start).count());
  const std::size_t tod = minute_of_day / static_cast<std::size_t>(slot_minutes);
  if (granularity == Granularity::Daily) return tod;
  const auto weekday_index = static_cast<std::size_t>(weekday{day_start}.iso_encoding() - 1);
  return weekday_index * slots_per_day(slot_minutes) + tod;
}

HistoricalProfile fit_profile(const SeriesPanel& panel, std::size_t step_end, Granularity granularity) {
  HistoricalProfile profile;
  profile.granularity = granularity;
  profile.slot_minutes = panel.interval_minutes;
  profile.nodes = panel.node_count();
  const std::size_t per_day = slots_per_day(panel.interval_minutes);
  profile.slots = granularity == Granularity::Daily ? per_day : 7 * per_day;

  step_end = std::min(step_end, panel.step_count());
  if (step_end < profile.slots) {
    fail(ErrorKind::Data, std::string("training segment shorter than one ") +
                              (granularity == Granularity::Daily ? "day" : "week"));
  }

  std::vector<double> sum(profile.nodes * profile.slots, 0.0);
  std::vector<double> sq(profile.nodes * profile.slots, 0.0);
  std::vector<std::size_t> count(profile.slots, 0);
  std::vector<std::size_t> slot_index(step_end);
  for (std::size_t t = 0; t < step_end; ++t) {
    slot_index[t] = profile.slot_of(panel.timestamp_at(t));
    ++count[slot_index[t]];
    for (std::size_t i = 0; i < profile.nodes; ++i)
      sum[i * profile.slots + slot_index[t]] += panel.values(idx(i), idx(t));
  }
  for (std::size_t t = 0; t < step_end; ++t) {
    for (std::size_t i = 0; i < profile.nodes; ++i) {
      const auto c = i * profile.slots + slot_index[t];
      const double mu = sum[c] / static_cast<double>(count[slot_index[t]]);
      const double d = panel.values(idx(i), idx(t)) - mu;
      sq[c] += d * d;
    }
  }
  profile.stats.resize(profile.nodes * profile.slots);
  for (std::size_t i = 0; i < profile.nodes; ++i) {
    for (std::size_t s = 0; s < profile.slots; ++s) {
      if (count[s] == 0) continue;
      const auto c = i * profile.slots + s;
      const double n = static_cast<double>(count[s]);
      profile.stats[c] = SlotStats{sum[c] / n, std::sqrt(sq[c] / n), count[s]};
    }
  }
  return profile;
}

HistInterval hist_interval(const HistoricalProfile& profile, std::size_t node, Timestamp ts) {
  require(node < profile.nodes, ErrorKind::Contract, "node index out of range");
  const auto slot = profile.slot_of(ts);
  const auto& s = profile.at(node, slot);
  if (!s) fail(ErrorKind::Data, "missing slot " + std::to_string(slot) + " for node " + std::to_string(node));
  return {s->mean - s->stddev, s->mean, s->mean + s->stddev};
}

IntervalForecast dqr_interval(const MlpForecaster& model, const Eigen::MatrixXd& input) {
  return finalize_interval(predict(model, input));
}

IcpCalibration fit_icp(std::span<const IntervalForecast> calibration_forecasts,
                       std::span<const WindowSample> calibration, double alpha) {
  require(calibration_forecasts.size() == calibration.size(), ErrorKind::Contract,
          "forecast and window counts differ");
  require(!calibration.empty(), ErrorKind::Data, "ICP calibration set is empty");
  std::vector<double> pool;
  for (std::size_t s = 0; s < calibration.size(); ++s) {
    const auto& y = calibration[s].target;
    const auto& p = calibration_forecasts[s].point;
    for (Index i = 0; i < y.rows(); ++i)
      for (Index j = 0; j < y.cols(); ++j) pool.push_back(std::abs(y(i, j) - p(i, j)));
  }
  IcpCalibration icp;
  icp.alpha = alpha;
  icp.pool_size = pool.size();
  icp.radius = conformal_quantile(std::move(pool), alpha);
  return icp;
}

IntervalForecast icp_interval(const IcpCalibration& icp, const IntervalForecast& base) {
  IntervalForecast out = base;
  out.lower = base.point.array() - icp.radius;
  out.upper = base.point.array() + icp.radius;
  return out;
}

IntervalForecast icp_interval(const MlpForecaster& point_model,
                              std::span<const WindowSample> calibration, double alpha,
                              const Eigen::MatrixXd& input) {
  auto forecasts = predict_all(point_model, calibration);
  auto icp = fit_icp(forecasts, calibration, alpha);
  return icp_interval(icp, finalize_interval(predict(point_model, input)));
}

void McDropoutConfig::validate() const {
  require(samples >= 2, ErrorKind::Config, "MC dropout needs at least 2 samples");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorKind::Config,
          "MC dropout rate must lie in [0, 1)");
  require(alpha > 0.0 && alpha < 1.0, ErrorKind::Config, "MC dropout alpha must lie in (0, 1)");
}

namespace {

IntervalForecast mc_dropout_one(const MlpForecaster& model, const Eigen::VectorXd& x,
                                const McDropoutConfig& cfg, std::mt19937_64& rng) {
  const Eigen::MatrixXd batch = x.replicate(1, idx(cfg.samples));
  const Eigen::MatrixXd out = model.forward(batch, &rng, cfg.dropout_rate);
  const std::size_t n = model.nodes(), h = model.horizon(), cells = n * h;
  IntervalForecast f;
  f.lower.resize(idx(n), idx(h));
  f.point.resize(idx(n), idx(h));
  f.upper.resize(idx(n), idx(h));
  std::vector<double> draws(cfg.samples);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      const Index row = idx(cells + i * h + j);  // point head
      double sum = 0.0;
      for (std::size_t k = 0; k < cfg.samples; ++k) {
        draws[k] = model.denormalize(i, out(row, idx(k)));
        sum += draws[k];
      }
      std::sort(draws.begin(), draws.end());
      f.lower(idx(i), idx(j)) = interpolated_quantile(draws, cfg.alpha / 2.0);
      f.upper(idx(i), idx(j)) = interpolated_quantile(draws, 1.0 - cfg.alpha / 2.0);
      f.point(idx(i), idx(j)) = sum / static_cast<double>(cfg.samples);
    }
  }
  return f;
}

}  // namespace

IntervalForecast mc_dropout_interval(const MlpForecaster& model, const Eigen::MatrixXd& input,
                                     const McDropoutConfig& cfg) {
  cfg.validate();
  WindowSample w;
  w.input = input;
  const Eigen::MatrixXd x = model.encode_inputs(std::span<const WindowSample>(&w, 1));
  std::mt19937_64 rng(cfg.seed);
  return mc_dropout_one(model, x.col(0), cfg, rng);
}

std::vector<IntervalForecast> mc_dropout_all(const MlpForecaster& model,
                                             std::span<const WindowSample> windows,
                                             const McDropoutConfig& cfg) {
  cfg.validate();
  std::vector<IntervalForecast> out;
  out.reserve(windows.size());
  if (windows.empty()) return out;
  const Eigen::MatrixXd x = model.encode_inputs(windows);
  for (std::size_t s = 0; s < windows.size(); ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    out.push_back(mc_dropout_one(model, x.col(idx(s)), cfg, rng));
  }
  return out;
}

}  // namespace adaptcal
