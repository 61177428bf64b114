#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace adaptcal {

using Timestamp = std::chrono::sys_time<std::chrono::minutes>;

// Parses "YYYY-MM-DD HH:MM[:SS]" (space or 'T' separator) or a bare integer
// step count relative to the epoch.
Timestamp parse_timestamp(const std::string& text, int interval_minutes);
std::string format_timestamp(Timestamp ts);

/// Multivariate panel: one row per node, one column per time step.
struct SeriesPanel {
  Eigen::MatrixXd values;  // [N x T]
  std::vector<std::string> node_ids;
  Timestamp start{};
  int interval_minutes = 5;

  std::size_t node_count() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t step_count() const { return static_cast<std::size_t>(values.cols()); }
  Timestamp timestamp_at(std::size_t step) const {
    return start + std::chrono::minutes(static_cast<std::int64_t>(step) * interval_minutes);
  }

  // Throws Data errors on NaN, duplicate/mismatched ids, or non-positive interval.
  void validate() const;
};

struct WindowSample {
  Eigen::MatrixXd input;   // [N x m], steps anchor-m+1 .. anchor
  Eigen::MatrixXd target;  // [N x h], steps anchor+1 .. anchor+h
  std::size_t anchor_index = 0;
  Timestamp anchor_timestamp{};
};

struct SplitSpec {
  double train_frac = 0.7;
  double val_frac = 0.1;
  double test_frac = 0.2;
  double calibration_frac_of_train = 0.4;
  double chi2_frac_of_calibration = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class BaseProfile { SinusoidalDaily, Constant };

struct SyntheticSpec {
  std::size_t node_count = 8;
  std::size_t step_count = 4032;
  int interval_minutes = 5;
  Timestamp start = std::chrono::sys_days{std::chrono::year{2012} / 3 / 1};
  BaseProfile base_profile = BaseProfile::SinusoidalDaily;
  double profile_level = 60.0;
  double profile_amplitude = 10.0;
  std::vector<double> noise_scales;  // one per node; empty means all 1.0
  bool heteroscedastic_by_time = false;
  double rush_hour_gain = 2.5;
  // Sparse heavy-tailed spikes added to a single node. Disabled when the
  // probability is zero.
  int outlier_node = -1;
  double outlier_probability = 0.0;
  double outlier_magnitude = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  double scale_for(std::size_t node) const;
};

// The deterministic part of a synthetic series at a given timestamp.
double synthetic_profile(const SyntheticSpec& spec, Timestamp ts);
// Rush-hour multiplier g_t: rush_hour_gain during 07:00-09:00 and 16:00-19:00.
double rush_hour_gain(const SyntheticSpec& spec, Timestamp ts);

struct LoadOptions {
  std::size_t min_steps = 0;  // usually m + h
  bool forward_fill = false;
  int interval_minutes = 0;  // 0: infer from the first two timestamps
};

SeriesPanel load_panel(const std::filesystem::path& path, const LoadOptions& options = {});
void write_panel(const SeriesPanel& panel, const std::filesystem::path& path);

SeriesPanel generate_synthetic(const SyntheticSpec& spec);

std::vector<WindowSample> make_windows(const SeriesPanel& panel, std::size_t input_steps,
                                       std::size_t horizon);

/// Indices into the window list handed to split_windows. Every set is sorted
/// by position and the five sets partition the input.
struct WindowSplit {
  std::vector<std::size_t> train;  // model-training part of the train pool
  std::vector<std::size_t> chi1;
  std::vector<std::size_t> chi2;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;

  std::vector<std::size_t> calibration() const;  // chi1 ∪ chi2, sorted
};

WindowSplit split_windows(std::span<const WindowSample> samples, const SplitSpec& spec);

std::vector<WindowSample> gather(std::span<const WindowSample> samples,
                                 std::span<const std::size_t> indices);

}  // namespace adaptcal
