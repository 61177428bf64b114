#pragma once

#include "adaptcal/dataset.hpp"
#include "adaptcal/forecaster.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adaptcal {

/// Signed widening needed for [lower, upper] to contain y. Negative when y
/// lies strictly inside the interval.
inline double nonconformity(double lower, double upper, double y) {
  return std::max(lower - y, y - upper);
}

// Shifts both bounds outward by delta. A crossed result collapses to its midpoint.
inline void widen(double& lower, double& upper, double delta) {
  double lo = lower - delta;
  double hi = upper + delta;
  if (hi < lo) lo = hi = 0.5 * (lo + hi);
  lower = lo;
  upper = hi;
}

/// Initial intervals and truths observed for one (node, horizon) cell.
struct CellData {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> truth;

  std::size_t size() const { return truth.size(); }
  bool empty() const { return truth.empty(); }
  void add(double l, double u, double y) {
    lower.push_back(l);
    upper.push_back(u);
    truth.push_back(y);
  }
};

class CellGrid {
 public:
  CellGrid() = default;
  CellGrid(std::size_t nodes, std::size_t horizon)
      : nodes_(nodes), horizon_(horizon), cells_(nodes * horizon) {}

  // Collects (lower, upper, truth) from finalized forecasts and their windows.
  static CellGrid from_forecasts(std::span<const IntervalForecast> forecasts,
                                 std::span<const WindowSample> windows);

  std::size_t nodes() const { return nodes_; }
  std::size_t horizon() const { return horizon_; }
  CellData& at(std::size_t node, std::size_t h) { return cells_.at(node * horizon_ + h); }
  const CellData& at(std::size_t node, std::size_t h) const { return cells_.at(node * horizon_ + h); }

 private:
  std::size_t nodes_ = 0;
  std::size_t horizon_ = 0;
  std::vector<CellData> cells_;
};

/// Nonconformity scores per (node, horizon) cell.
struct ResidualStore {
  std::size_t nodes = 0;
  std::size_t horizon = 0;
  std::vector<std::vector<double>> scores;  // node-major

  const std::vector<double>& cell(std::size_t node, std::size_t h) const {
    return scores.at(node * horizon + h);
  }
};

ResidualStore collect_residuals(const CellGrid& chi1);
ResidualStore collect_residuals(const MlpForecaster& model, std::span<const WindowSample> chi1);

enum class CandidateSearch { Quantile, Grid };

/// Sorted adjustment candidates per cell. Cells without residuals hold an
/// empty list and are listed in `missing`.
struct PercentileCandidates {
  std::size_t nodes = 0;
  std::size_t horizon = 0;
  std::size_t count = 0;
  std::vector<std::vector<double>> values;
  std::vector<std::size_t> missing;  // flat cell indices

  const std::vector<double>& cell(std::size_t node, std::size_t h) const {
    return values.at(node * horizon + h);
  }
};

// Linear interpolation between order statistics of an ascending sample;
// level 0 is the minimum and level 1 the maximum.
double interpolated_quantile(std::span<const double> sorted, double level);

std::vector<double> quantile_candidates(std::vector<double> scores, std::size_t m);
std::vector<double> grid_candidates(std::span<const double> scores, std::size_t bins);

PercentileCandidates build_percentiles(const ResidualStore& store, std::size_t m);
PercentileCandidates build_grid(const ResidualStore& store, std::size_t bins);

enum class CoverageCredit {
  Capped,  // coverage counts only up to the target level 1 - alpha_target
  Raw,     // plain coverage fraction
};

struct CellSelection {
  std::size_t index = 0;
  double delta = 0.0;
  double score = 0.0;
  double coverage = 0.0;
  double width = 0.0;  // normalized
};

double mean_width(const CellData& cell);

/// Minimizes -lambda * credit(coverage) + (1 - lambda) * width / normalizer
/// over the candidates, breaking ties toward the smaller candidate index.
/// `coverage_cap` bounds the credited coverage; pass 1.0 for raw coverage.
CellSelection select_cell_delta(std::span<const double> candidates, const CellData& chi2,
                                double lambda, double coverage_cap, double width_normalizer);

struct CalibrationOptions {
  std::size_t quantiles = 100;  // candidate count for both search modes
  double lambda = 0.9;
  double alpha_target = 0.1;
  CandidateSearch search = CandidateSearch::Quantile;
  CoverageCredit credit = CoverageCredit::Capped;
  std::uint64_t seed = 0;  // recorded as metadata

  void validate() const;
  double coverage_cap() const {
    return credit == CoverageCredit::Capped ? 1.0 - alpha_target : 1.0;
  }
};

struct CalibrationTable {
  std::size_t nodes = 0;
  std::size_t horizon = 0;
  CalibrationOptions options;
  std::vector<std::optional<double>> delta;  // node-major
  std::vector<double> width_normalizer;      // node-major, 0 for absent cells
  std::size_t chi1_size = 0;
  std::size_t chi2_size = 0;

  std::optional<double> lookup(std::size_t node, std::size_t h) const {
    return delta.at(node * horizon + h);
  }
  std::size_t missing_cells() const;

  std::string serialize() const;
  static CalibrationTable deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static CalibrationTable load(const std::filesystem::path& path);

  friend bool operator==(const CalibrationTable&, const CalibrationTable&);
};

/// Builds the per-cell table from chi1 (candidates) and chi2 (selection).
/// Throws when no cell has data in both halves.
CalibrationTable build_table(const CellGrid& chi1, const CellGrid& chi2,
                             const CalibrationOptions& options);
CalibrationTable build_table(const MlpForecaster& model, std::span<const WindowSample> chi1,
                             std::span<const WindowSample> chi2, const CalibrationOptions& options);
CalibrationTable build_table_grid(const MlpForecaster& model, std::span<const WindowSample> chi1,
                                  std::span<const WindowSample> chi2, std::size_t bins,
                                  CalibrationOptions options);

/// Split-conformal finite-sample quantile: the ceil((1-alpha)(n+1))-th
/// smallest score, clamped to the maximum.
double conformal_quantile(std::vector<double> scores, double alpha);

struct GlobalDelta {
  double delta = 0.0;
  double alpha_cal = 0.1;
  std::size_t pool_size = 0;

  std::string serialize() const;
  static GlobalDelta deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static GlobalDelta load(const std::filesystem::path& path);
  friend bool operator==(const GlobalDelta&, const GlobalDelta&) = default;
};

GlobalDelta fit_global_delta(const CellGrid& calibration, double alpha_cal);
GlobalDelta fit_global_delta(const MlpForecaster& model, std::span<const WindowSample> calibration,
                             double alpha_cal);

enum class FallbackPolicy { Unchanged, Global };

struct Fallback {
  FallbackPolicy policy = FallbackPolicy::Unchanged;
  GlobalDelta global;
};

IntervalForecast apply_global(const IntervalForecast& f, const GlobalDelta& global);
IntervalForecast apply_adjustment(const IntervalForecast& f, const CalibrationTable& table,
                                  const Fallback& fallback = {});

struct Observation {
  std::size_t node = 0;
  std::size_t horizon = 0;
  double lower = 0.0;
  double upper = 0.0;
  double truth = 0.0;
};

struct UpdatePolicy {
  std::size_t window = 200;  // recent observations per cell used for selection
};

/// A table plus the per-cell evidence it was selected from: a residual
/// pool (candidate source) and the most recent observations (selection set).
/// Observations enter the recent window; those pushed out of it join the pool.
struct CalibrationState {
  CalibrationTable table;
  std::vector<std::vector<double>> pool;
  std::vector<std::deque<Observation>> recent;

  static CalibrationState empty(std::size_t nodes, std::size_t horizon,
                                const CalibrationOptions& options);
  static CalibrationState from_build(const CellGrid& chi1, const CellGrid& chi2,
                                     const CalibrationOptions& options);
};

struct UpdateStats {
  std::size_t accepted = 0;
  std::size_t skipped = 0;
};

CalibrationState update_table(const CalibrationState& state, std::span<const Observation> observed,
                              const UpdatePolicy& policy, UpdateStats* stats = nullptr);

std::string to_string(CandidateSearch search);
std::string to_string(CoverageCredit credit);
std::string to_string(FallbackPolicy policy);
CandidateSearch candidate_search_from_string(const std::string& s);
CoverageCredit coverage_credit_from_string(const std::string& s);
FallbackPolicy fallback_policy_from_string(const std::string& s);

}  // namespace adaptcal
