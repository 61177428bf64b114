#pragma once

#include "adaptcal/conformal.hpp"
#include "adaptcal/dataset.hpp"
#include "adaptcal/forecaster.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace adaptcal {

enum class Granularity { Daily, Weekly };

struct SlotStats {
  double mean = 0.0;
  double stddev = 0.0;  // population divisor
  std::size_t count = 0;
};

/// Per-(node, slot) mean and standard deviation. Slots are time-of-day
/// buckets (daily) or day-of-week x time-of-day buckets (weekly).
struct HistoricalProfile {
  Granularity granularity = Granularity::Daily;
  int slot_minutes = 5;
  std::size_t slots = 0;
  std::size_t nodes = 0;
  std::vector<std::optional<SlotStats>> stats;  // node-major; nullopt = slot never observed

  std::size_t slot_of(Timestamp ts) const;
  const std::optional<SlotStats>& at(std::size_t node, std::size_t slot) const {
    return stats.at(node * slots + slot);
  }
};

struct HistInterval {
  double lower = 0.0;
  double point = 0.0;
  double upper = 0.0;
};

/// Fits on panel steps [0, step_end). The segment must span one full
/// period of the granularity.
HistoricalProfile fit_profile(const SeriesPanel& panel, std::size_t step_end, Granularity granularity);

/// (mu - sigma, mu, mu + sigma); throws a Data error for an unobserved slot.
HistInterval hist_interval(const HistoricalProfile& profile, std::size_t node, Timestamp ts);

/// Raw quantile heads, finalized, with no conformal step.
IntervalForecast dqr_interval(const MlpForecaster& model, const Eigen::MatrixXd& input);

/// Absolute-residual inductive conformal prediction around the point head.
struct IcpCalibration {
  double radius = 0.0;
  double alpha = 0.1;
  std::size_t pool_size = 0;
};

IcpCalibration fit_icp(std::span<const IntervalForecast> calibration_forecasts,
                       std::span<const WindowSample> calibration, double alpha);
IntervalForecast icp_interval(const IcpCalibration& icp, const IntervalForecast& base);
IntervalForecast icp_interval(const MlpForecaster& point_model,
                              std::span<const WindowSample> calibration, double alpha,
                              const Eigen::MatrixXd& input);

struct McDropoutConfig {
  std::size_t samples = 50;
  double dropout_rate = 0.3;
  double alpha = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// `samples` stochastic passes of the point head; bounds are the empirical
/// alpha/2 and 1 - alpha/2 quantiles, the point is the sample mean.
IntervalForecast mc_dropout_interval(const MlpForecaster& model, const Eigen::MatrixXd& input,
                                     const McDropoutConfig& cfg);

/// Batched form; sample k of window s uses a generator seeded from (seed, s).
std::vector<IntervalForecast> mc_dropout_all(const MlpForecaster& model,
                                             std::span<const WindowSample> windows,
                                             const McDropoutConfig& cfg);

}  // namespace adaptcal
