#pragma once

#include "adaptcal/dataset.hpp"
#include "adaptcal/forecaster.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace adaptcal {

struct EvalRecord {
  std::size_t node = 0;
  std::size_t horizon = 0;  // 0-based step index
  double truth = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double point = 0.0;
};

std::vector<EvalRecord> make_records(std::span<const IntervalForecast> forecasts,
                                     std::span<const WindowSample> windows);

// Closed-interval coverage fraction.
double picp(std::span<const EvalRecord> records);
double mpiw(std::span<const EvalRecord> records);

struct PointMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;
  std::size_t mape_excluded = 0;  // records with zero truth
};

PointMetrics point_metrics(std::span<const EvalRecord> records);

struct GroupMetrics {
  std::size_t count = 0;
  double picp = 0.0;
  double mpiw = 0.0;
};

struct EvalReport {
  std::string method;
  double alpha_target = 0.1;
  std::size_t n_records = 0;
  double picp = 0.0;
  double mpiw = 0.0;
  PointMetrics point;
  std::map<std::size_t, GroupMetrics> per_node;
  std::map<std::size_t, GroupMetrics> per_horizon;
  std::size_t skipped_records = 0;

  double coverage_deviation() const;  // percentage points
  double per_node_picp_stddev() const;

  std::string serialize() const;
  static EvalReport deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static EvalReport load(const std::filesystem::path& path);
  // Flat tables: one row per node / per horizon.
  void save_group_tables(const std::filesystem::path& per_node_csv,
                         const std::filesystem::path& per_horizon_csv) const;
};

/// picp - (1 - alpha_target), expressed in percentage points.
double coverage_deviation(double picp_value, double alpha_target);

EvalReport evaluate(std::string method, std::span<const EvalRecord> records, double alpha_target);

}  // namespace adaptcal
