#pragma once

#include "adaptcal/baselines.hpp"
#include "adaptcal/conformal.hpp"
#include "adaptcal/dataset.hpp"
#include "adaptcal/forecaster.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace adaptcal {

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods{"hist-d", "hist-w", "icp",       "dqr",
                                                "cqr",    "adaptive", "mc-dropout"};
  return methods;
}

struct DatasetConfig {
  std::string path;  // empty: use <output_dir>/panel.csv written by `generate`
  bool forward_fill = false;
  SyntheticSpec synthetic;
};

struct WindowConfig {
  std::size_t input_steps = 12;
  std::size_t horizon = 12;
  std::size_t max_steps = 12;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{64, 64};
  double dropout_rate = 0.0;
};

struct CalibrationConfig {
  std::size_t quantiles = 100;
  double lambda = 0.9;
  double alpha_cal = 0.1;
  double alpha_target = 0.1;
  FallbackPolicy fallback = FallbackPolicy::Unchanged;
  CandidateSearch search = CandidateSearch::Quantile;
  CoverageCredit credit = CoverageCredit::Capped;
  std::size_t update_window = 200;
};

struct SweepConfig {
  std::vector<double> coverage_levels{0.6, 0.7, 0.8, 0.9, 0.95};
  std::vector<std::pair<int, int>> split_ratios{{6, 1}, {5, 2}, {4, 3}, {1, 1},
                                                {3, 4}, {2, 5}, {1, 6}};
  std::vector<std::size_t> frequencies{10, 20, 40, 60, 80, 100};
};

/// Everything one experiment run needs. A single master seed drives every
/// random stream; component seeds are derived from it.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "adaptcal_out";
  DatasetConfig dataset;
  WindowConfig window;
  SplitSpec split;
  TrainConfig train;
  ModelConfig model;
  QuantileLevels levels;
  CalibrationConfig calibration;
  std::vector<std::string> methods = known_methods();
  McDropoutConfig mc_dropout;
  SweepConfig sweep;

  void validate() const;

  std::string serialize() const;
  static ExperimentConfig parse(const std::string& json_text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Sets one dotted key, e.g. ("calibration.lambda", "0.7"). The value is
  /// JSON; bare words are treated as strings.
  void set(const std::string& dotted_key, const std::string& value);

  bool has_method(const std::string& method) const;

  // Effective component settings with derived seeds.
  SyntheticSpec synthetic_spec() const;
  SplitSpec split_spec() const;
  TrainConfig train_config() const;
  std::uint64_t model_seed() const;
  McDropoutConfig mc_dropout_config() const;
  CalibrationOptions calibration_options() const;

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.serialize() == b.serialize();
  }
};

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace adaptcal
