#include "adaptcal/conformal.hpp"

#include "adaptcal/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace adaptcal {

namespace {

using Index = Eigen::Index;

constexpr const char* kTableFormat = "adaptcal-table/1";
constexpr const char* kGlobalFormat = "adaptcal-global-delta/1";

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::string read_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingArtifact, what + " not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text << '\n';
}

double width_floor(double w) {
  return std::max(w, std::numeric_limits<double>::epsilon());
}

CellSelection select_for(const std::vector<double>& candidates, const CellData& chi2,
                         const CalibrationOptions& options, double normalizer) {
  return select_cell_delta(candidates, chi2, options.lambda, options.coverage_cap(), normalizer);
}

std::vector<double> candidates_for(std::vector<double> scores, const CalibrationOptions& options) {
  return options.search == CandidateSearch::Grid ? grid_candidates(scores, options.quantiles)
                                                 : quantile_candidates(std::move(scores),
                                                                       options.quantiles);
}

}  // namespace

CellGrid CellGrid::from_forecasts(std::span<const IntervalForecast> forecasts,
                                  std::span<const WindowSample> windows) {
  require(forecasts.size() == windows.size(), ErrorKind::Contract,
          "forecast and window counts differ");
  if (windows.empty()) return {};
  const auto n = static_cast<std::size_t>(windows.front().target.rows());
  const auto h = static_cast<std::size_t>(windows.front().target.cols());
  CellGrid grid(n, h);
  for (std::size_t s = 0; s < windows.size(); ++s) {
    const auto& f = forecasts[s];
    const auto& y = windows[s].target;
    require(f.lower.rows() == idx(n) && f.lower.cols() == idx(h) && y.rows() == idx(n) &&
                y.cols() == idx(h),
            ErrorKind::Contract, "forecast shape differs from target shape");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < h; ++j)
        grid.at(i, j).add(f.lower(idx(i), idx(j)), f.upper(idx(i), idx(j)), y(idx(i), idx(j)));
  }
  return grid;
}

ResidualStore collect_residuals(const CellGrid& chi1) {
  ResidualStore store;
  store.nodes = chi1.nodes();
  store.horizon = chi1.horizon();
  store.scores.resize(store.nodes * store.horizon);
  for (std::size_t i = 0; i < store.nodes; ++i) {
    for (std::size_t j = 0; j < store.horizon; ++j) {
      const auto& cell = chi1.at(i, j);
      auto& out = store.scores[i * store.horizon + j];
      out.reserve(cell.size());
      for (std::size_t k = 0; k < cell.size(); ++k) {
        out.push_back(nonconformity(cell.lower[k], cell.upper[k], cell.truth[k]));
      }
    }
  }
  return store;
}

ResidualStore collect_residuals(const MlpForecaster& model, std::span<const WindowSample> chi1) {
  require(!chi1.empty(), ErrorKind::Data, "chi1 is empty");
  auto forecasts = predict_all(model, chi1);
  return collect_residuals(CellGrid::from_forecasts(forecasts, chi1));
}

double interpolated_quantile(std::span<const double> sorted, double level) {
  require(!sorted.empty(), ErrorKind::Contract, "quantile of an empty sample");
  const double pos = level * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::vector<double> quantile_candidates(std::vector<double> scores, std::size_t m) {
  require(m >= 2, ErrorKind::Config, "candidate count must be at least 2");
  std::sort(scores.begin(), scores.end());
  std::vector<double> out(m);
  for (std::size_t k = 0; k < m; ++k) {
    double level = static_cast<double>(k) / static_cast<double>(m - 1);
    out[k] = interpolated_quantile(scores, level);
  }
  // Interpolation can round below a neighbour on nearly tied data.
  for (std::size_t k = 1; k < m; ++k) out[k] = std::max(out[k], out[k - 1]);
  return out;
}

std::vector<double> grid_candidates(std::span<const double> scores, std::size_t bins) {
  require(bins >= 2, ErrorKind::Config, "grid bin count must be at least 2");
  require(!scores.empty(), ErrorKind::Contract, "grid over an empty sample");
  auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    out[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins - 1);
  }
  out.back() = hi;
  return out;
}

namespace {

PercentileCandidates build_candidates(const ResidualStore& store, std::size_t count,
                                      CandidateSearch search) {
  PercentileCandidates out;
  out.nodes = store.nodes;
  out.horizon = store.horizon;
  out.count = count;
  out.values.resize(store.scores.size());
  for (std::size_t c = 0; c < store.scores.size(); ++c) {
    if (store.scores[c].empty()) {
      out.missing.push_back(c);
      continue;
    }
    out.values[c] = search == CandidateSearch::Grid ? grid_candidates(store.scores[c], count)
                                                    : quantile_candidates(store.scores[c], count);
  }
  return out;
}

}  // namespace

PercentileCandidates build_percentiles(const ResidualStore& store, std::size_t m) {
  return build_candidates(store, m, CandidateSearch::Quantile);
}

PercentileCandidates build_grid(const ResidualStore& store, std::size_t bins) {
  return build_candidates(store, bins, CandidateSearch::Grid);
}

double mean_width(const CellData& cell) {
  if (cell.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < cell.size(); ++k) total += cell.upper[k] - cell.lower[k];
  return total / static_cast<double>(cell.size());
}

CellSelection select_cell_delta(std::span<const double> candidates, const CellData& chi2,
                                double lambda, double coverage_cap, double width_normalizer) {
  require(!candidates.empty(), ErrorKind::Contract, "no candidates to select from");
  require(!chi2.empty(), ErrorKind::Data, "missing cell: no chi2 observations");
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Config, "lambda must lie in [0, 1]");
  require(width_normalizer > 0.0, ErrorKind::Contract, "width normalizer must be positive");
  const double n = static_cast<double>(chi2.size());

  CellSelection best;
  bool have = false;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double q = candidates[k];
    std::size_t covered = 0;
    double width = 0.0;
    for (std::size_t s = 0; s < chi2.size(); ++s) {
      double lo = chi2.lower[s], hi = chi2.upper[s];
      widen(lo, hi, q);
      if (lo <= chi2.truth[s] && chi2.truth[s] <= hi) ++covered;
      width += hi - lo;
    }
    const double coverage = static_cast<double>(covered) / n;
    const double norm_width = width / n / width_normalizer;
    const double score = -lambda * std::min(coverage, coverage_cap) + (1.0 - lambda) * norm_width;
    if (!have || score < best.score) {
      best = {k, q, score, coverage, norm_width};
      have = true;
    }
  }
  return best;
}

void CalibrationOptions::validate() const {
  require(quantiles >= 2, ErrorKind::Config, "calibration quantiles must be at least 2");
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Config, "lambda must lie in [0, 1]");
  require(alpha_target > 0.0 && alpha_target < 1.0, ErrorKind::Config,
          "alpha_target must lie in (0, 1)");
}

std::size_t CalibrationTable::missing_cells() const {
  return static_cast<std::size_t>(
      std::count_if(delta.begin(), delta.end(), [](const auto& d) { return !d.has_value(); }));
}

CalibrationTable build_table(const CellGrid& chi1, const CellGrid& chi2,
                             const CalibrationOptions& options) {
  options.validate();
  require(chi1.nodes() == chi2.nodes() && chi1.horizon() == chi2.horizon(), ErrorKind::Contract,
          "chi1 and chi2 grids differ in shape");
  CalibrationTable table;
  table.nodes = chi1.nodes();
  table.horizon = chi1.horizon();
  table.options = options;
  table.delta.assign(table.nodes * table.horizon, std::nullopt);
  table.width_normalizer.assign(table.nodes * table.horizon, 0.0);

  const ResidualStore store = collect_residuals(chi1);
  std::size_t n1 = 0, n2 = 0;
  for (std::size_t i = 0; i < table.nodes; ++i) {
    for (std::size_t j = 0; j < table.horizon; ++j) {
      const auto c = i * table.horizon + j;
      const auto& selection_set = chi2.at(i, j);
      n1 = std::max(n1, chi1.at(i, j).size());
      n2 = std::max(n2, selection_set.size());
      if (store.scores[c].empty() || selection_set.empty()) continue;
      const double normalizer = width_floor(mean_width(selection_set));
      auto candidates = candidates_for(store.scores[c], options);
      table.delta[c] = select_for(candidates, selection_set, options, normalizer).delta;
      table.width_normalizer[c] = normalizer;
    }
  }
  table.chi1_size = n1;
  table.chi2_size = n2;
  if (table.nodes * table.horizon == 0 || table.missing_cells() == table.nodes * table.horizon) {
    fail(ErrorKind::Data, "calibration table construction failed: every cell is missing data");
  }
  return table;
}

CalibrationTable build_table(const MlpForecaster& model, std::span<const WindowSample> chi1,
                             std::span<const WindowSample> chi2, const CalibrationOptions& options) {
  require(!chi1.empty() && !chi2.empty(), ErrorKind::Data, "chi1 and chi2 must be non-empty");
  auto f1 = predict_all(model, chi1);
  auto f2 = predict_all(model, chi2);
  return build_table(CellGrid::from_forecasts(f1, chi1), CellGrid::from_forecasts(f2, chi2),
                     options);
}

CalibrationTable build_table_grid(const MlpForecaster& model, std::span<const WindowSample> chi1,
                                  std::span<const WindowSample> chi2, std::size_t bins,
                                  CalibrationOptions options) {
  options.search = CandidateSearch::Grid;
  options.quantiles = bins;
  return build_table(model, chi1, chi2, options);
}

double conformal_quantile(std::vector<double> scores, double alpha) {
  require(!scores.empty(), ErrorKind::Data, "conformal quantile of an empty pool");
  require(alpha > 0.0 && alpha < 1.0, ErrorKind::Config, "mis-coverage rate must lie in (0, 1)");
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  // The tolerance keeps exact products such as 0.9 * 100 from rounding up a rank.
  const double rank = std::ceil((1.0 - alpha) * (n + 1.0) - 1e-9);
  if (rank >= n) return scores.back();
  return scores[static_cast<std::size_t>(std::max(rank, 1.0)) - 1];
}

GlobalDelta fit_global_delta(const CellGrid& calibration, double alpha_cal) {
  std::vector<double> pool;
  for (std::size_t i = 0; i < calibration.nodes(); ++i) {
    for (std::size_t j = 0; j < calibration.horizon(); ++j) {
      const auto& cell = calibration.at(i, j);
      for (std::size_t k = 0; k < cell.size(); ++k)
        pool.push_back(nonconformity(cell.lower[k], cell.upper[k], cell.truth[k]));
    }
  }
  GlobalDelta g;
  g.alpha_cal = alpha_cal;
  g.pool_size = pool.size();
  g.delta = conformal_quantile(std::move(pool), alpha_cal);
  return g;
}

GlobalDelta fit_global_delta(const MlpForecaster& model, std::span<const WindowSample> calibration,
                             double alpha_cal) {
  require(!calibration.empty(), ErrorKind::Data, "calibration set is empty");
  auto forecasts = predict_all(model, calibration);
  return fit_global_delta(CellGrid::from_forecasts(forecasts, calibration), alpha_cal);
}

IntervalForecast apply_global(const IntervalForecast& f, const GlobalDelta& global) {
  IntervalForecast out = f;
  for (Index i = 0; i < f.lower.rows(); ++i)
    for (Index j = 0; j < f.lower.cols(); ++j) widen(out.lower(i, j), out.upper(i, j), global.delta);
  return out;
}

IntervalForecast apply_adjustment(const IntervalForecast& f, const CalibrationTable& table,
                                  const Fallback& fallback) {
  require(f.lower.rows() == idx(table.nodes) && f.lower.cols() == idx(table.horizon),
          ErrorKind::Contract, "forecast shape does not match the calibration table");
  IntervalForecast out = f;
  for (std::size_t i = 0; i < table.nodes; ++i) {
    for (std::size_t j = 0; j < table.horizon; ++j) {
      auto d = table.lookup(i, j);
      if (!d && fallback.policy == FallbackPolicy::Global) d = fallback.global.delta;
      if (d) widen(out.lower(idx(i), idx(j)), out.upper(idx(i), idx(j)), *d);
    }
  }
  return out;
}

CalibrationState CalibrationState::empty(std::size_t nodes, std::size_t horizon,
                                         const CalibrationOptions& options) {
  options.validate();
  CalibrationState state;
  state.table.nodes = nodes;
  state.table.horizon = horizon;
  state.table.options = options;
  state.table.delta.assign(nodes * horizon, std::nullopt);
  state.table.width_normalizer.assign(nodes * horizon, 0.0);
  state.pool.resize(nodes * horizon);
  state.recent.resize(nodes * horizon);
  return state;
}

CalibrationState CalibrationState::from_build(const CellGrid& chi1, const CellGrid& chi2,
                                              const CalibrationOptions& options) {
  CalibrationState state = empty(chi1.nodes(), chi1.horizon(), options);
  state.table = build_table(chi1, chi2, options);
  state.pool = collect_residuals(chi1).scores;
  for (std::size_t i = 0; i < chi2.nodes(); ++i) {
    for (std::size_t j = 0; j < chi2.horizon(); ++j) {
      const auto& cell = chi2.at(i, j);
      auto& recent = state.recent[i * chi2.horizon() + j];
      for (std::size_t k = 0; k < cell.size(); ++k)
        recent.push_back({i, j, cell.lower[k], cell.upper[k], cell.truth[k]});
    }
  }
  return state;
}

CalibrationState update_table(const CalibrationState& state, std::span<const Observation> observed,
                              const UpdatePolicy& policy, UpdateStats* stats) {
  require(policy.window > 0, ErrorKind::Config, "update window must be positive");
  CalibrationState next = state;
  auto& table = next.table;
  std::vector<bool> touched(table.nodes * table.horizon, false);
  UpdateStats local;

  for (const auto& obs : observed) {
    bool valid = obs.node < table.nodes && obs.horizon < table.horizon &&
                 std::isfinite(obs.lower) && std::isfinite(obs.upper) &&
                 std::isfinite(obs.truth) && obs.lower <= obs.upper;
    if (!valid) {
      ++local.skipped;
      continue;
    }
    ++local.accepted;
    const auto c = obs.node * table.horizon + obs.horizon;
    auto& recent = next.recent[c];
    recent.push_back(obs);
    while (recent.size() > policy.window) {
      const auto& old = recent.front();
      next.pool[c].push_back(nonconformity(old.lower, old.upper, old.truth));
      recent.pop_front();
    }
    touched[c] = true;
  }

  for (std::size_t c = 0; c < touched.size(); ++c) {
    if (!touched[c]) continue;
    const auto& recent = next.recent[c];
    if (recent.empty()) continue;
    // A cell without a residual pool bootstraps from its own window: the
    // older half supplies candidates, the newer half selects among them.
    std::vector<double> bootstrap;
    std::size_t first = 0;
    if (next.pool[c].empty()) {
      if (recent.size() < 2) continue;
      first = recent.size() / 2;
      for (std::size_t k = 0; k < first; ++k)
        bootstrap.push_back(nonconformity(recent[k].lower, recent[k].upper, recent[k].truth));
    }
    CellData selection_set;
    for (std::size_t k = first; k < recent.size(); ++k)
      selection_set.add(recent[k].lower, recent[k].upper, recent[k].truth);
    const double normalizer = width_floor(mean_width(selection_set));
    auto candidates = candidates_for(bootstrap.empty() ? next.pool[c] : bootstrap, table.options);
    table.delta[c] = select_for(candidates, selection_set, table.options, normalizer).delta;
    table.width_normalizer[c] = normalizer;
  }
  if (stats != nullptr) *stats = local;
  return next;
}

std::string CalibrationTable::serialize() const {
  nlohmann::json j;
  j["format"] = kTableFormat;
  j["nodes"] = nodes;
  j["horizon"] = horizon;
  j["lambda"] = options.lambda;
  j["quantiles"] = options.quantiles;
  j["alpha_target"] = options.alpha_target;
  j["search"] = to_string(options.search);
  j["coverage_credit"] = to_string(options.credit);
  std::vector<int> presence;
  std::vector<double> values;
  for (const auto& d : delta) {
    presence.push_back(d ? 1 : 0);
    values.push_back(d.value_or(0.0));
  }
  j["presence"] = presence;
  j["delta"] = values;
  j["width_normalizer"] = width_normalizer;
  j["metadata"] = {{"seed", options.seed},
                   {"chi1_size", chi1_size},
                   {"chi2_size", chi2_size},
                   {"missing_cells", missing_cells()}};
  return j.dump();
}

CalibrationTable CalibrationTable::deserialize(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    require(j.at("format").get<std::string>() == kTableFormat, ErrorKind::Data,
            "unsupported calibration table format");
    CalibrationTable t;
    t.nodes = j.at("nodes").get<std::size_t>();
    t.horizon = j.at("horizon").get<std::size_t>();
    t.options.lambda = j.at("lambda").get<double>();
    t.options.quantiles = j.at("quantiles").get<std::size_t>();
    t.options.alpha_target = j.at("alpha_target").get<double>();
    t.options.search = candidate_search_from_string(j.at("search").get<std::string>());
    t.options.credit = coverage_credit_from_string(j.at("coverage_credit").get<std::string>());
    const auto& meta = j.at("metadata");
    t.options.seed = meta.at("seed").get<std::uint64_t>();
    t.chi1_size = meta.at("chi1_size").get<std::size_t>();
    t.chi2_size = meta.at("chi2_size").get<std::size_t>();
    auto presence = j.at("presence").get<std::vector<int>>();
    auto values = j.at("delta").get<std::vector<double>>();
    t.width_normalizer = j.at("width_normalizer").get<std::vector<double>>();
    const auto cells = t.nodes * t.horizon;
    require(presence.size() == cells && values.size() == cells && t.width_normalizer.size() == cells,
            ErrorKind::Data, "calibration table arrays do not match N x H");
    t.delta.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      if (presence[c] != 0) t.delta[c] = values[c];
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed calibration table: ") + e.what());
  }
}

void CalibrationTable::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

CalibrationTable CalibrationTable::load(const std::filesystem::path& path) {
  return deserialize(read_file(path, "calibration table"));
}

bool operator==(const CalibrationTable& a, const CalibrationTable& b) {
  return a.nodes == b.nodes && a.horizon == b.horizon && a.options.lambda == b.options.lambda &&
         a.options.quantiles == b.options.quantiles &&
         a.options.alpha_target == b.options.alpha_target && a.options.search == b.options.search &&
         a.options.credit == b.options.credit && a.options.seed == b.options.seed &&
         a.delta == b.delta && a.width_normalizer == b.width_normalizer &&
         a.chi1_size == b.chi1_size && a.chi2_size == b.chi2_size;
}

std::string GlobalDelta::serialize() const {
  nlohmann::json j{{"format", kGlobalFormat},
                   {"delta", delta},
                   {"alpha_cal", alpha_cal},
                   {"pool_size", pool_size}};
  return j.dump();
}

GlobalDelta GlobalDelta::deserialize(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    require(j.at("format").get<std::string>() == kGlobalFormat, ErrorKind::Data,
            "unsupported global delta format");
    GlobalDelta g;
    g.delta = j.at("delta").get<double>();
    g.alpha_cal = j.at("alpha_cal").get<double>();
    g.pool_size = j.at("pool_size").get<std::size_t>();
    return g;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed global delta: ") + e.what());
  }
}

void GlobalDelta::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

GlobalDelta GlobalDelta::load(const std::filesystem::path& path) {
  return deserialize(read_file(path, "global delta"));
}

std::string to_string(CandidateSearch search) {
  return search == CandidateSearch::Grid ? "grid" : "quantile";
}

std::string to_string(CoverageCredit credit) {
  return credit == CoverageCredit::Raw ? "raw" : "capped";
}

std::string to_string(FallbackPolicy policy) {
  return policy == FallbackPolicy::Global ? "global" : "unchanged";
}

CandidateSearch candidate_search_from_string(const std::string& s) {
  if (s == "quantile") return CandidateSearch::Quantile;
  if (s == "grid") return CandidateSearch::Grid;
  fail(ErrorKind::Config, "unknown candidate search '" + s + "'");
}

CoverageCredit coverage_credit_from_string(const std::string& s) {
  if (s == "capped") return CoverageCredit::Capped;
  if (s == "raw") return CoverageCredit::Raw;
  fail(ErrorKind::Config, "unknown coverage credit '" + s + "'");
}

FallbackPolicy fallback_policy_from_string(const std::string& s) {
  if (s == "unchanged") return FallbackPolicy::Unchanged;
  if (s == "global") return FallbackPolicy::Global;
  fail(ErrorKind::Config, "unknown fallback policy '" + s + "'");
}

}  // namespace adaptcal
