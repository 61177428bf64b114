#pragma once

#include "adaptcal/baselines.hpp"
#include "adaptcal/config.hpp"
#include "adaptcal/conformal.hpp"
#include "adaptcal/dataset.hpp"
#include "adaptcal/forecaster.hpp"
#include "adaptcal/metrics.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace adaptcal {

// Artifact locations inside the output directory.
namespace artifacts {
inline constexpr const char* kPanel = "panel.csv";
inline constexpr const char* kModel = "model.json";
inline constexpr const char* kMcModel = "model_mc.json";
inline constexpr const char* kLossHistory = "loss_history.csv";
inline constexpr const char* kTrainSummary = "train_summary.json";
inline constexpr const char* kTable = "table.json";
inline constexpr const char* kGlobalDelta = "global_delta.json";
inline constexpr const char* kCalibrationSummary = "calibration_summary.json";
inline constexpr const char* kReports = "reports";
}  // namespace artifacts

struct PreparedData {
  SeriesPanel panel;
  std::vector<WindowSample> windows;
  WindowSplit split;
  std::vector<WindowSample> train;
  std::vector<WindowSample> validation;
  std::vector<WindowSample> chi1;
  std::vector<WindowSample> chi2;
  std::vector<WindowSample> test;

  std::vector<WindowSample> calibration() const;  // chi1 ∪ chi2 in time order
  std::size_t train_segment_end() const;          // first panel step after the train pool
};

std::filesystem::path panel_path(const ExperimentConfig& cfg);
SeriesPanel load_configured_panel(const ExperimentConfig& cfg);
PreparedData prepare_data(const ExperimentConfig& cfg, SeriesPanel panel);
PreparedData prepare_data(const ExperimentConfig& cfg);

struct TrainedModel {
  MlpForecaster model;
  TrainResult result;
};

TrainedModel train_model(const ExperimentConfig& cfg, const PreparedData& data,
                         double dropout_rate);

struct CalibrationArtifacts {
  CalibrationTable table;
  GlobalDelta global;
};

CalibrationArtifacts calibrate(const ExperimentConfig& cfg, const MlpForecaster& model,
                               const PreparedData& data);

struct MethodResult {
  std::vector<IntervalForecast> forecasts;  // empty for timestamp-based methods
  EvalReport report;
};

/// Results of every configured method on the test set. All model-based
/// methods share `dqr`, the finalized test forecasts of the quantile model.
struct Evaluation {
  std::vector<IntervalForecast> dqr;
  std::map<std::string, MethodResult> methods;
};

Evaluation evaluate_methods(const ExperimentConfig& cfg, const PreparedData& data,
                            const MlpForecaster& model, const CalibrationArtifacts& calibration,
                            const MlpForecaster* mc_model = nullptr);

// Subcommands. Each reads and writes artifacts under cfg.output_dir.
std::filesystem::path cmd_generate(const ExperimentConfig& cfg, bool force);
TrainResult cmd_train(const ExperimentConfig& cfg);
CalibrationArtifacts cmd_calibrate(const ExperimentConfig& cfg);
std::vector<std::filesystem::path> cmd_evaluate(const ExperimentConfig& cfg);

enum class SweepKind { CoverageLevels, SplitRatios, GridVsQuantile };

SweepKind sweep_kind_from_string(const std::string& s);
std::string to_string(SweepKind kind);

struct SweepRow {
  std::string setting;  // e.g. "0.9", "6:1", "10"
  std::string method;
  double picp = 0.0;
  double mpiw = 0.0;
  double coverage_deviation = 0.0;  // percentage points
  double alpha_target = 0.1;
};

struct SweepReport {
  SweepKind kind = SweepKind::CoverageLevels;
  std::vector<SweepRow> rows;

  std::string serialize() const;
  void save(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

SweepReport run_sweep(const ExperimentConfig& cfg, SweepKind kind);
std::filesystem::path cmd_sweep(const ExperimentConfig& cfg, SweepKind kind);

/// Renders reports ranked by |coverage deviation|, then MPIW. The best row
/// is marked in bold. Requires at least two reports.
std::string compare_reports(std::vector<EvalReport> reports);
std::string cmd_compare(const std::vector<std::filesystem::path>& report_paths,
                        const std::filesystem::path& out_path);

}  // namespace adaptcal
