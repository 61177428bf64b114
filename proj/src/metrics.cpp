#include "adaptcal/metrics.hpp"

#include "adaptcal/error.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace adaptcal {

namespace {

using Index = Eigen::Index;

constexpr const char* kReportFormat = "adaptcal-report/1";

void require_records(std::span<const EvalRecord> records, const char* metric) {
  if (records.empty()) fail(ErrorKind::Contract, std::string("undefined metric: ") + metric + " of no records");
}

bool covered(const EvalRecord& r) { return r.lower <= r.truth && r.truth <= r.upper; }

nlohmann::json group_json(const std::map<std::size_t, GroupMetrics>& groups) {
  auto arr = nlohmann::json::array();
  for (const auto& [key, g] : groups) {
    arr.push_back({{"index", key}, {"count", g.count}, {"picp", g.picp}, {"mpiw", g.mpiw}});
  }
  return arr;
}

std::map<std::size_t, GroupMetrics> group_from_json(const nlohmann::json& arr) {
  std::map<std::size_t, GroupMetrics> out;
  for (const auto& e : arr) {
    out[e.at("index").get<std::size_t>()] = {e.at("count").get<std::size_t>(),
                                             e.at("picp").get<double>(),
                                             e.at("mpiw").get<double>()};
  }
  return out;
}

void write_group_csv(const std::filesystem::path& path, const char* key,
                     const std::map<std::size_t, GroupMetrics>& groups) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << key << ",count,picp,mpiw\n";
  char buf[128];
  for (const auto& [k, g] : groups) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", k, g.count, g.picp, g.mpiw);
    out << buf;
  }
}

}  // namespace

std::vector<EvalRecord> make_records(std::span<const IntervalForecast> forecasts,
                                     std::span<const WindowSample> windows) {
  require(forecasts.size() == windows.size(), ErrorKind::Contract,
          "forecast and window counts differ");
  std::vector<EvalRecord> out;
  for (std::size_t s = 0; s < windows.size(); ++s) {
    const auto& f = forecasts[s];
    const auto& y = windows[s].target;
    for (Index i = 0; i < y.rows(); ++i) {
      for (Index j = 0; j < y.cols(); ++j) {
        out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), y(i, j),
                       f.lower(i, j), f.upper(i, j), f.point(i, j)});
      }
    }
  }
  return out;
}

double picp(std::span<const EvalRecord> records) {
  require_records(records, "PICP");
  std::size_t hits = 0;
  for (const auto& r : records) hits += covered(r) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double mpiw(std::span<const EvalRecord> records) {
  require_records(records, "MPIW");
  double total = 0.0;
  for (const auto& r : records) total += std::abs(r.upper - r.lower);
  return total / static_cast<double>(records.size());
}

PointMetrics point_metrics(std::span<const EvalRecord> records) {
  require_records(records, "point metrics");
  PointMetrics m;
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  std::size_t pct_count = 0;
  for (const auto& r : records) {
    const double err = r.truth - r.point;
    abs_sum += std::abs(err);
    sq_sum += err * err;
    if (r.truth == 0.0) {
      ++m.mape_excluded;
    } else {
      pct_sum += std::abs(err) / std::abs(r.truth);
      ++pct_count;
    }
  }
  if (pct_count == 0) fail(ErrorKind::Contract, "undefined metric: MAPE with every truth equal to zero");
  const double n = static_cast<double>(records.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.mape = pct_sum / static_cast<double>(pct_count);
  return m;
}

double coverage_deviation(double picp_value, double alpha_target) {
  return (picp_value - (1.0 - alpha_target)) * 100.0;
}

double EvalReport::coverage_deviation() const { return adaptcal::coverage_deviation(picp, alpha_target); }

double EvalReport::per_node_picp_stddev() const {
  if (per_node.empty()) return 0.0;
  double mean = 0.0;
  for (const auto& [_, g] : per_node) mean += g.picp;
  mean /= static_cast<double>(per_node.size());
  double var = 0.0;
  for (const auto& [_, g] : per_node) var += (g.picp - mean) * (g.picp - mean);
  return std::sqrt(var / static_cast<double>(per_node.size()));
}

EvalReport evaluate(std::string method, std::span<const EvalRecord> records, double alpha_target) {
  EvalReport report;
  report.method = std::move(method);
  report.alpha_target = alpha_target;
  report.n_records = records.size();
  report.picp = picp(records);
  report.mpiw = mpiw(records);
  report.point = point_metrics(records);

  std::map<std::size_t, std::pair<std::size_t, double>> node_acc, horizon_acc;  // hits, width
  for (const auto& r : records) {
    auto& gn = report.per_node[r.node];
    auto& gh = report.per_horizon[r.horizon];
    ++gn.count;
    ++gh.count;
    auto& an = node_acc[r.node];
    auto& ah = horizon_acc[r.horizon];
    an.first += covered(r) ? 1 : 0;
    ah.first += covered(r) ? 1 : 0;
    an.second += std::abs(r.upper - r.lower);
    ah.second += std::abs(r.upper - r.lower);
  }
  auto finish = [](std::map<std::size_t, GroupMetrics>& groups,
                   const std::map<std::size_t, std::pair<std::size_t, double>>& acc) {
    for (auto& [k, g] : groups) {
      const auto& a = acc.at(k);
      g.picp = static_cast<double>(a.first) / static_cast<double>(g.count);
      g.mpiw = a.second / static_cast<double>(g.count);
    }
  };
  finish(report.per_node, node_acc);
  finish(report.per_horizon, horizon_acc);
  return report;
}

std::string EvalReport::serialize() const {
  nlohmann::json j;
  j["format"] = kReportFormat;
  j["method"] = method;
  j["alpha_target"] = alpha_target;
  j["n_records"] = n_records;
  j["skipped_records"] = skipped_records;
  j["overall"] = {{"picp", picp},
                  {"mpiw", mpiw},
                  {"mae", point.mae},
                  {"rmse", point.rmse},
                  {"mape", point.mape},
                  {"mape_excluded", point.mape_excluded},
                  {"coverage_deviation_pct", coverage_deviation()},
                  {"per_node_picp_stddev", per_node_picp_stddev()}};
  j["per_node"] = group_json(per_node);
  j["per_horizon"] = group_json(per_horizon);
  return j.dump(2);
}

EvalReport EvalReport::deserialize(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    require(j.at("format").get<std::string>() == kReportFormat, ErrorKind::Data,
            "unsupported report format");
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.alpha_target = j.at("alpha_target").get<double>();
    r.n_records = j.at("n_records").get<std::size_t>();
    r.skipped_records = j.value("skipped_records", std::size_t{0});
    const auto& o = j.at("overall");
    r.picp = o.at("picp").get<double>();
    r.mpiw = o.at("mpiw").get<double>();
    r.point.mae = o.at("mae").get<double>();
    r.point.rmse = o.at("rmse").get<double>();
    r.point.mape = o.at("mape").get<double>();
    r.point.mape_excluded = o.at("mape_excluded").get<std::size_t>();
    r.per_node = group_from_json(j.at("per_node"));
    r.per_horizon = group_from_json(j.at("per_horizon"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed report: ") + e.what());
  }
}

void EvalReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << serialize() << '\n';
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingArtifact, "report not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

void EvalReport::save_group_tables(const std::filesystem::path& per_node_csv,
                                   const std::filesystem::path& per_horizon_csv) const {
  write_group_csv(per_node_csv, "node", per_node);
  write_group_csv(per_horizon_csv, "horizon", per_horizon);
}

}  // namespace adaptcal
