#include "adaptcal/pipeline.hpp"

#include "adaptcal/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace adaptcal {

namespace fs = std::filesystem;

namespace {

using Index = Eigen::Index;

std::string fmt_double(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

std::vector<EvalRecord> hist_records(const HistoricalProfile& profile, const PreparedData& data,
                                     std::size_t& skipped) {
  std::vector<EvalRecord> records;
  const auto interval = std::chrono::minutes(data.panel.interval_minutes);
  for (const auto& w : data.test) {
    for (Index i = 0; i < w.target.rows(); ++i) {
      for (Index j = 0; j < w.target.cols(); ++j) {
        const auto ts = w.anchor_timestamp + interval * (j + 1);
        try {
          auto hi = hist_interval(profile, static_cast<std::size_t>(i), ts);
          records.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), w.target(i, j),
                             hi.lower, hi.upper, hi.point});
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Data) throw;
          ++skipped;
        }
      }
    }
  }
  return records;
}

MethodResult forecast_result(const std::string& method, std::vector<IntervalForecast> forecasts,
                             const PreparedData& data, double alpha_target) {
  MethodResult r;
  auto records = make_records(forecasts, data.test);
  r.report = evaluate(method, records, alpha_target);
  r.forecasts = std::move(forecasts);
  return r;
}

std::vector<IntervalForecast> map_forecasts(const std::vector<IntervalForecast>& base, auto&& fn) {
  std::vector<IntervalForecast> out;
  out.reserve(base.size());
  for (const auto& f : base) out.push_back(fn(f));
  return out;
}

}  // namespace

std::vector<WindowSample> PreparedData::calibration() const {
  return gather(windows, split.calibration());
}

std::size_t PreparedData::train_segment_end() const {
  std::size_t last = 0;
  for (const auto* set : {&split.train, &split.chi1, &split.chi2})
    for (auto k : *set) last = std::max(last, windows[k].anchor_index);
  const auto h = windows.empty() ? 0 : static_cast<std::size_t>(windows.front().target.cols());
  return last + h + 1;
}

fs::path panel_path(const ExperimentConfig& cfg) {
  return cfg.dataset.path.empty() ? fs::path(cfg.output_dir) / artifacts::kPanel
                                  : fs::path(cfg.dataset.path);
}

SeriesPanel load_configured_panel(const ExperimentConfig& cfg) {
  const auto path = panel_path(cfg);
  if (!fs::exists(path)) {
    fail(ErrorKind::MissingArtifact,
         "panel not found at " + path.string() + (cfg.dataset.path.empty() ? " (run `generate` first)" : ""));
  }
  LoadOptions opts;
  opts.min_steps = cfg.window.input_steps + cfg.window.horizon;
  opts.forward_fill = cfg.dataset.forward_fill;
  return load_panel(path, opts);
}

PreparedData prepare_data(const ExperimentConfig& cfg, SeriesPanel panel) {
  PreparedData data;
  data.panel = std::move(panel);
  data.windows = make_windows(data.panel, cfg.window.input_steps, cfg.window.horizon);
  data.split = split_windows(data.windows, cfg.split_spec());
  data.train = gather(data.windows, data.split.train);
  data.validation = gather(data.windows, data.split.validation);
  data.chi1 = gather(data.windows, data.split.chi1);
  data.chi2 = gather(data.windows, data.split.chi2);
  data.test = gather(data.windows, data.split.test);
  return data;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  return prepare_data(cfg, load_configured_panel(cfg));
}

TrainedModel train_model(const ExperimentConfig& cfg, const PreparedData& data, double dropout_rate) {
  TrainedModel out;
  out.model = MlpForecaster(data.panel.node_count(), cfg.window.input_steps, cfg.window.horizon,
                            cfg.model.hidden, dropout_rate, cfg.model_seed());
  out.model.fit_normalization(data.train);
  out.result = train(out.model, data.train, data.validation, cfg.train_config(), cfg.levels);
  return out;
}

CalibrationArtifacts calibrate(const ExperimentConfig& cfg, const MlpForecaster& model,
                               const PreparedData& data) {
  const auto f1 = predict_all(model, data.chi1);
  const auto f2 = predict_all(model, data.chi2);
  const auto grid1 = CellGrid::from_forecasts(f1, data.chi1);
  const auto grid2 = CellGrid::from_forecasts(f2, data.chi2);

  CalibrationArtifacts out;
  out.table = build_table(grid1, grid2, cfg.calibration_options());

  // Standard CQR conformalizes on the whole calibration set.
  CellGrid pooled = grid1;
  for (std::size_t i = 0; i < grid2.nodes(); ++i) {
    for (std::size_t j = 0; j < grid2.horizon(); ++j) {
      const auto& src = grid2.at(i, j);
      for (std::size_t k = 0; k < src.size(); ++k)
        pooled.at(i, j).add(src.lower[k], src.upper[k], src.truth[k]);
    }
  }
  out.global = fit_global_delta(pooled, cfg.calibration.alpha_cal);
  return out;
}

Evaluation evaluate_methods(const ExperimentConfig& cfg, const PreparedData& data,
                            const MlpForecaster& model, const CalibrationArtifacts& calibration,
                            const MlpForecaster* mc_model) {
  require(!data.test.empty(), ErrorKind::Data, "test set is empty");
  Evaluation ev;
  ev.dqr = predict_all(model, data.test);
  const double alpha_target = cfg.calibration.alpha_target;

  for (const auto& method : cfg.methods) {
    if (method == "dqr") {
      ev.methods[method] = forecast_result(method, ev.dqr, data, alpha_target);
    } else if (method == "cqr") {
      auto f = map_forecasts(ev.dqr, [&](const IntervalForecast& x) {
        return apply_global(x, calibration.global);
      });
      ev.methods[method] = forecast_result(method, std::move(f), data, alpha_target);
    } else if (method == "adaptive") {
      const Fallback fallback{cfg.calibration.fallback, calibration.global};
      auto f = map_forecasts(ev.dqr, [&](const IntervalForecast& x) {
        return apply_adjustment(x, calibration.table, fallback);
      });
      ev.methods[method] = forecast_result(method, std::move(f), data, alpha_target);
    } else if (method == "icp") {
      const auto cal = data.calibration();
      const auto icp = fit_icp(predict_all(model, cal), cal, cfg.calibration.alpha_cal);
      auto f = map_forecasts(ev.dqr, [&](const IntervalForecast& x) { return icp_interval(icp, x); });
      ev.methods[method] = forecast_result(method, std::move(f), data, alpha_target);
    } else if (method == "mc-dropout") {
      auto f = mc_dropout_all(mc_model != nullptr ? *mc_model : model, data.test,
                              cfg.mc_dropout_config());
      ev.methods[method] = forecast_result(method, std::move(f), data, alpha_target);
    } else if (method == "hist-d" || method == "hist-w") {
      const auto gran = method == "hist-d" ? Granularity::Daily : Granularity::Weekly;
      const auto profile = fit_profile(data.panel, data.train_segment_end(), gran);
      std::size_t skipped = 0;
      auto records = hist_records(profile, data, skipped);
      if (records.empty()) fail(ErrorKind::Data, method + ": no test slot was observed during training");
      MethodResult r;
      r.report = evaluate(method, records, alpha_target);
      r.report.skipped_records = skipped;
      ev.methods[method] = std::move(r);
    } else {
      fail(ErrorKind::Config, "unknown method '" + method + "'");
    }
  }
  return ev;
}

fs::path cmd_generate(const ExperimentConfig& cfg, bool force) {
  const auto path = panel_path(cfg);
  if (fs::exists(path) && !force) {
    fail(ErrorKind::Io, "refusing to overwrite " + path.string() + " (pass --force)");
  }
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  write_panel(generate_synthetic(cfg.synthetic_spec()), path);
  return path;
}

TrainResult cmd_train(const ExperimentConfig& cfg) {
  const fs::path out(cfg.output_dir);
  ensure_dir(out);
  const auto data = prepare_data(cfg);
  auto trained = train_model(cfg, data, cfg.model.dropout_rate);
  trained.model.save(out / artifacts::kModel);

  std::ostringstream history;
  history << "epoch,train_loss,validation_loss\n";
  for (const auto& e : trained.result.history) {
    history << e.epoch << ',' << fmt_double("%.17g", e.train_loss) << ','
            << fmt_double("%.17g", e.validation_loss) << '\n';
  }
  write_text(out / artifacts::kLossHistory, history.str());

  nlohmann::json summary{{"initial_validation_loss", trained.result.initial_validation_loss},
                         {"best_validation_loss", trained.result.best_validation_loss},
                         {"best_epoch", trained.result.best_epoch},
                         {"epochs_run", trained.result.history.size()},
                         {"stopped_early", trained.result.stopped_early},
                         {"train_windows", data.train.size()},
                         {"validation_windows", data.validation.size()}};
  write_text(out / artifacts::kTrainSummary, summary.dump(2) + "\n");

  if (cfg.has_method("mc-dropout") && cfg.mc_dropout.dropout_rate != cfg.model.dropout_rate) {
    auto mc = train_model(cfg, data, cfg.mc_dropout.dropout_rate);
    mc.model.save(out / artifacts::kMcModel);
  }
  return trained.result;
}

CalibrationArtifacts cmd_calibrate(const ExperimentConfig& cfg) {
  const fs::path out(cfg.output_dir);
  const auto model = MlpForecaster::load(out / artifacts::kModel);
  const auto data = prepare_data(cfg);
  auto cal = calibrate(cfg, model, data);
  cal.table.save(out / artifacts::kTable);
  cal.global.save(out / artifacts::kGlobalDelta);
  nlohmann::json summary{{"nodes", cal.table.nodes},
                         {"horizon", cal.table.horizon},
                         {"missing_cells", cal.table.missing_cells()},
                         {"chi1_windows", data.chi1.size()},
                         {"chi2_windows", data.chi2.size()},
                         {"global_delta", cal.global.delta},
                         {"global_pool_size", cal.global.pool_size}};
  write_text(out / artifacts::kCalibrationSummary, summary.dump(2) + "\n");
  return cal;
}

std::vector<fs::path> cmd_evaluate(const ExperimentConfig& cfg) {
  const fs::path out(cfg.output_dir);
  const auto model = MlpForecaster::load(out / artifacts::kModel);
  CalibrationArtifacts cal{CalibrationTable::load(out / artifacts::kTable),
                           GlobalDelta::load(out / artifacts::kGlobalDelta)};
  std::optional<MlpForecaster> mc_model;
  if (cfg.has_method("mc-dropout") && fs::exists(out / artifacts::kMcModel)) {
    mc_model = MlpForecaster::load(out / artifacts::kMcModel);
  }
  const auto data = prepare_data(cfg);
  const auto ev = evaluate_methods(cfg, data, model, cal, mc_model ? &*mc_model : nullptr);

  const fs::path reports = out / artifacts::kReports;
  ensure_dir(reports);
  std::vector<fs::path> written;
  std::ostringstream summary;
  summary << "method,picp,mpiw,coverage_deviation_pct,mae,rmse,mape,per_node_picp_stddev\n";
  for (const auto& method : cfg.methods) {
    const auto& r = ev.methods.at(method).report;
    const auto json_path = reports / (method + ".json");
    r.save(json_path);
    r.save_group_tables(reports / (method + "_per_node.csv"), reports / (method + "_per_horizon.csv"));
    written.push_back(json_path);
    summary << method << ',' << fmt_double("%.17g", r.picp) << ',' << fmt_double("%.17g", r.mpiw)
            << ',' << fmt_double("%.17g", r.coverage_deviation()) << ','
            << fmt_double("%.17g", r.point.mae) << ',' << fmt_double("%.17g", r.point.rmse) << ','
            << fmt_double("%.17g", r.point.mape) << ','
            << fmt_double("%.17g", r.per_node_picp_stddev()) << '\n';
  }
  write_text(reports / "summary.csv", summary.str());
  return written;
}

SweepKind sweep_kind_from_string(const std::string& s) {
  if (s == "coverage-levels" || s == "coverage") return SweepKind::CoverageLevels;
  if (s == "split-ratios" || s == "split") return SweepKind::SplitRatios;
  if (s == "grid-vs-quantile" || s == "grid") return SweepKind::GridVsQuantile;
  fail(ErrorKind::Config, "unknown sweep '" + s + "' (coverage-levels, split-ratios, grid-vs-quantile)");
}

std::string to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::CoverageLevels: return "coverage-levels";
    case SweepKind::SplitRatios: return "split-ratios";
    default: return "grid-vs-quantile";
  }
}

std::string SweepReport::serialize() const {
  auto rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"setting", r.setting},
                         {"method", r.method},
                         {"picp", r.picp},
                         {"mpiw", r.mpiw},
                         {"coverage_deviation_pct", r.coverage_deviation},
                         {"alpha_target", r.alpha_target}});
  }
  return nlohmann::json{{"sweep", to_string(kind)}, {"rows", rows_json}}.dump(2);
}

void SweepReport::save(const fs::path& json_path, const fs::path& csv_path) const {
  write_text(json_path, serialize() + "\n");
  std::ostringstream csv;
  csv << "setting,method,alpha_target,picp,mpiw,coverage_deviation_pct\n";
  for (const auto& r : rows) {
    csv << r.setting << ',' << r.method << ',' << fmt_double("%.17g", r.alpha_target) << ','
        << fmt_double("%.17g", r.picp) << ',' << fmt_double("%.17g", r.mpiw) << ','
        << fmt_double("%.17g", r.coverage_deviation) << '\n';
  }
  write_text(csv_path, csv.str());
}

namespace {

SweepRow row_from(const std::string& setting, const EvalReport& r) {
  return {setting, r.method, r.picp, r.mpiw, r.coverage_deviation(), r.alpha_target};
}

}  // namespace

SweepReport run_sweep(const ExperimentConfig& base, SweepKind kind) {
  SweepReport report;
  report.kind = kind;
  const auto panel = load_configured_panel(base);

  if (kind == SweepKind::CoverageLevels) {
    for (double level : base.sweep.coverage_levels) {
      ExperimentConfig cfg = base;
      const double alpha = 1.0 - level;
      cfg.levels.alpha_tra = alpha;
      cfg.calibration.alpha_target = alpha;
      cfg.calibration.alpha_cal = alpha;
      cfg.methods = {"dqr", "cqr", "adaptive"};
      const auto data = prepare_data(cfg, panel);
      const auto trained = train_model(cfg, data, cfg.model.dropout_rate);
      const auto cal = calibrate(cfg, trained.model, data);
      const auto ev = evaluate_methods(cfg, data, trained.model, cal);
      for (const auto& m : cfg.methods)
        report.rows.push_back(row_from(fmt_double("%g", level), ev.methods.at(m).report));
    }
  } else if (kind == SweepKind::SplitRatios) {
    for (const auto& [train_part, cal_part] : base.sweep.split_ratios) {
      ExperimentConfig cfg = base;
      cfg.split.calibration_frac_of_train =
          static_cast<double>(cal_part) / static_cast<double>(train_part + cal_part);
      cfg.methods = {"cqr", "adaptive"};
      const auto data = prepare_data(cfg, panel);
      const auto trained = train_model(cfg, data, cfg.model.dropout_rate);
      const auto cal = calibrate(cfg, trained.model, data);
      const auto ev = evaluate_methods(cfg, data, trained.model, cal);
      const auto setting = std::to_string(train_part) + ":" + std::to_string(cal_part);
      for (const auto& m : cfg.methods) report.rows.push_back(row_from(setting, ev.methods.at(m).report));
    }
  } else {
    ExperimentConfig cfg = base;
    cfg.methods = {"adaptive"};
    const auto data = prepare_data(cfg, panel);
    const auto trained = train_model(cfg, data, cfg.model.dropout_rate);
    const auto global = calibrate(cfg, trained.model, data).global;
    const auto grid1 = CellGrid::from_forecasts(predict_all(trained.model, data.chi1), data.chi1);
    const auto grid2 = CellGrid::from_forecasts(predict_all(trained.model, data.chi2), data.chi2);
    const auto test_forecasts = predict_all(trained.model, data.test);
    for (auto freq : base.sweep.frequencies) {
      for (auto search : {CandidateSearch::Quantile, CandidateSearch::Grid}) {
        auto opts = cfg.calibration_options();
        opts.quantiles = freq;
        opts.search = search;
        const auto table = build_table(grid1, grid2, opts);
        const Fallback fallback{cfg.calibration.fallback, global};
        auto f = map_forecasts(test_forecasts, [&](const IntervalForecast& x) {
          return apply_adjustment(x, table, fallback);
        });
        auto result = forecast_result(to_string(search), std::move(f), data, cfg.calibration.alpha_target);
        report.rows.push_back(row_from(std::to_string(freq), result.report));
      }
    }
  }
  return report;
}

fs::path cmd_sweep(const ExperimentConfig& cfg, SweepKind kind) {
  const fs::path out(cfg.output_dir);
  ensure_dir(out);
  const auto report = run_sweep(cfg, kind);
  const auto stem = "sweep_" + to_string(kind);
  const auto json_path = out / (stem + ".json");
  report.save(json_path, out / (stem + ".csv"));
  return json_path;
}

std::string compare_reports(std::vector<EvalReport> reports) {
  require(reports.size() >= 2, ErrorKind::Config, "compare needs at least two reports");
  std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
    const double da = std::abs(a.coverage_deviation()), db = std::abs(b.coverage_deviation());
    if (da != db) return da < db;
    return a.mpiw < b.mpiw;
  });
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-4s  %-16s  %8s  %9s  %10s  %10s  %10s  %8s\n", "rank", "method",
                "PICP(%)", "dev(pts)", "MPIW", "MAE", "RMSE", "MAPE(%)");
  out << line;
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const auto& r = reports[k];
    const std::string name = k == 0 ? "**" + r.method + "**" : r.method;
    std::snprintf(line, sizeof line, "%-4zu  %-16s  %8.2f  %+9.2f  %10.4f  %10.4f  %10.4f  %8.2f\n",
                  k + 1, name.c_str(), r.picp * 100.0, r.coverage_deviation(), r.mpiw, r.point.mae,
                  r.point.rmse, r.point.mape * 100.0);
    out << line;
  }
  return out.str();
}

std::string cmd_compare(const std::vector<fs::path>& report_paths, const fs::path& out_path) {
  require(report_paths.size() >= 2, ErrorKind::Config, "compare needs at least two reports");
  std::vector<EvalReport> reports;
  for (const auto& p : report_paths) reports.push_back(EvalReport::load(p));
  auto text = compare_reports(std::move(reports));
  if (!out_path.empty()) {
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
    write_text(out_path, text);
  }
  return text;
}

}  // namespace adaptcal
