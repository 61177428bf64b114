#include "adaptcal/adaptcal.h"

#include "adaptcal/error.hpp"
#include "adaptcal/pipeline.hpp"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <new>
#include <sstream>

struct adaptcal_config {
  adaptcal::ExperimentConfig cfg;
};

struct adaptcal_model {
  adaptcal::MlpForecaster model;
};

struct adaptcal_table {
  adaptcal::CalibrationTable table;
};

namespace {

thread_local std::string g_last_error;

adaptcal_status status_of(adaptcal::ErrorKind kind) {
  using adaptcal::ErrorKind;
  switch (kind) {
    case ErrorKind::Config: return ADAPTCAL_ERR_CONFIG;
    case ErrorKind::Data: return ADAPTCAL_ERR_DATA;
    case ErrorKind::Divergence: return ADAPTCAL_ERR_DIVERGENCE;
    case ErrorKind::MissingArtifact: return ADAPTCAL_ERR_MISSING_ARTIFACT;
    case ErrorKind::Contract: return ADAPTCAL_ERR_CONTRACT;
    case ErrorKind::Io: return ADAPTCAL_ERR_IO;
  }
  return ADAPTCAL_ERR_INTERNAL;
}

// Runs `fn`, translating exceptions into status codes.
template <class F>
adaptcal_status guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return ADAPTCAL_OK;
  } catch (const adaptcal::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return ADAPTCAL_ERR_INTERNAL;
}

adaptcal_status invalid(const char* what) {
  g_last_error = what;
  return ADAPTCAL_ERR_INVALID_ARGUMENT;
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void maybe_set(char** out, const std::string& s) {
  if (out != nullptr) *out = dup_string(s);
}

}  // namespace

extern "C" {

const char* adaptcal_version(void) { return "0.1.0"; }

const char* adaptcal_last_error(void) { return g_last_error.c_str(); }

const char* adaptcal_status_name(adaptcal_status status) {
  switch (status) {
    case ADAPTCAL_OK: return "ok";
    case ADAPTCAL_ERR_INTERNAL: return "internal error";
    case ADAPTCAL_ERR_CONFIG: return "configuration error";
    case ADAPTCAL_ERR_DATA: return "data error";
    case ADAPTCAL_ERR_DIVERGENCE: return "training divergence";
    case ADAPTCAL_ERR_MISSING_ARTIFACT: return "missing artifact";
    case ADAPTCAL_ERR_CONTRACT: return "contract violation";
    case ADAPTCAL_ERR_IO: return "i/o error";
    case ADAPTCAL_ERR_INVALID_ARGUMENT: return "invalid argument";
  }
  return "unknown status";
}

void adaptcal_string_free(char* s) { std::free(s); }

adaptcal_status adaptcal_config_default(adaptcal_config** out) {
  if (out == nullptr) return invalid("out is null");
  return guarded([&] { *out = new adaptcal_config{}; });
}

adaptcal_status adaptcal_config_load(const char* path, adaptcal_config** out) {
  if (path == nullptr || out == nullptr) return invalid("path and out must be non-null");
  return guarded([&] { *out = new adaptcal_config{adaptcal::ExperimentConfig::load(path)}; });
}

adaptcal_status adaptcal_config_parse(const char* json, adaptcal_config** out) {
  if (json == nullptr || out == nullptr) return invalid("json and out must be non-null");
  return guarded([&] { *out = new adaptcal_config{adaptcal::ExperimentConfig::parse(json)}; });
}

void adaptcal_config_free(adaptcal_config* cfg) { delete cfg; }

adaptcal_status adaptcal_config_set(adaptcal_config* cfg, const char* dotted_key, const char* value) {
  if (cfg == nullptr || dotted_key == nullptr || value == nullptr) return invalid("null argument");
  return guarded([&] { cfg->cfg.set(dotted_key, value); });
}

adaptcal_status adaptcal_config_set_seed(adaptcal_config* cfg, unsigned long long seed) {
  if (cfg == nullptr) return invalid("cfg is null");
  return guarded([&] { cfg->cfg.seed = seed; });
}

adaptcal_status adaptcal_config_set_output_dir(adaptcal_config* cfg, const char* dir) {
  if (cfg == nullptr || dir == nullptr) return invalid("null argument");
  return guarded([&] { cfg->cfg.output_dir = dir; });
}

adaptcal_status adaptcal_config_output_dir(const adaptcal_config* cfg, char** out) {
  if (cfg == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] { *out = dup_string(cfg->cfg.output_dir); });
}

adaptcal_status adaptcal_config_to_json(const adaptcal_config* cfg, char** out) {
  if (cfg == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] { *out = dup_string(cfg->cfg.serialize()); });
}

adaptcal_status adaptcal_generate(const adaptcal_config* cfg, int force, char** out_path) {
  if (cfg == nullptr) return invalid("cfg is null");
  return guarded([&] { maybe_set(out_path, adaptcal::cmd_generate(cfg->cfg, force != 0).string()); });
}

adaptcal_status adaptcal_train(const adaptcal_config* cfg, char** out_summary_json) {
  if (cfg == nullptr) return invalid("cfg is null");
  return guarded([&] {
    const auto r = adaptcal::cmd_train(cfg->cfg);
    nlohmann::json j{{"initial_validation_loss", r.initial_validation_loss},
                     {"best_validation_loss", r.best_validation_loss},
                     {"best_epoch", r.best_epoch},
                     {"epochs_run", r.history.size()},
                     {"stopped_early", r.stopped_early}};
    maybe_set(out_summary_json, j.dump());
  });
}

adaptcal_status adaptcal_calibrate(const adaptcal_config* cfg, size_t* out_missing_cells) {
  if (cfg == nullptr) return invalid("cfg is null");
  return guarded([&] {
    const auto cal = adaptcal::cmd_calibrate(cfg->cfg);
    if (out_missing_cells != nullptr) *out_missing_cells = cal.table.missing_cells();
  });
}

adaptcal_status adaptcal_evaluate(const adaptcal_config* cfg, char** out_summary) {
  if (cfg == nullptr) return invalid("cfg is null");
  return guarded([&] {
    const auto paths = adaptcal::cmd_evaluate(cfg->cfg);
    std::ostringstream text;
    for (const auto& p : paths) text << p.string() << '\n';
    maybe_set(out_summary, text.str());
  });
}

adaptcal_status adaptcal_sweep(const adaptcal_config* cfg, adaptcal_sweep_kind kind, char** out_path) {
  if (cfg == nullptr) return invalid("cfg is null");
  adaptcal::SweepKind k;
  switch (kind) {
    case ADAPTCAL_SWEEP_COVERAGE_LEVELS: k = adaptcal::SweepKind::CoverageLevels; break;
    case ADAPTCAL_SWEEP_SPLIT_RATIOS: k = adaptcal::SweepKind::SplitRatios; break;
    case ADAPTCAL_SWEEP_GRID_VS_QUANTILE: k = adaptcal::SweepKind::GridVsQuantile; break;
    default: return invalid("unknown sweep kind");
  }
  return guarded([&] { maybe_set(out_path, adaptcal::cmd_sweep(cfg->cfg, k).string()); });
}

adaptcal_status adaptcal_sweep_from_name(const char* name, adaptcal_sweep_kind* out) {
  if (name == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] {
    switch (adaptcal::sweep_kind_from_string(name)) {
      case adaptcal::SweepKind::CoverageLevels: *out = ADAPTCAL_SWEEP_COVERAGE_LEVELS; break;
      case adaptcal::SweepKind::SplitRatios: *out = ADAPTCAL_SWEEP_SPLIT_RATIOS; break;
      case adaptcal::SweepKind::GridVsQuantile: *out = ADAPTCAL_SWEEP_GRID_VS_QUANTILE; break;
    }
  });
}

adaptcal_status adaptcal_compare(const char* const* report_paths, size_t count, const char* out_path,
                                 char** out_text) {
  if (report_paths == nullptr && count > 0) return invalid("report_paths is null");
  return guarded([&] {
    std::vector<std::filesystem::path> paths;
    for (size_t k = 0; k < count; ++k) {
      adaptcal::require(report_paths[k] != nullptr, adaptcal::ErrorKind::Contract, "null report path");
      paths.emplace_back(report_paths[k]);
    }
    maybe_set(out_text, adaptcal::cmd_compare(paths, out_path != nullptr ? out_path : ""));
  });
}

adaptcal_status adaptcal_model_load(const char* path, adaptcal_model** out) {
  if (path == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] { *out = new adaptcal_model{adaptcal::MlpForecaster::load(path)}; });
}

void adaptcal_model_free(adaptcal_model* model) { delete model; }

adaptcal_status adaptcal_model_dims(const adaptcal_model* model, size_t* nodes, size_t* input_steps,
                                    size_t* horizon) {
  if (model == nullptr) return invalid("model is null");
  if (nodes != nullptr) *nodes = model->model.nodes();
  if (input_steps != nullptr) *input_steps = model->model.input_steps();
  if (horizon != nullptr) *horizon = model->model.horizon();
  return ADAPTCAL_OK;
}

adaptcal_status adaptcal_model_predict(const adaptcal_model* model, const double* input, double* lower,
                                       double* point, double* upper) {
  if (model == nullptr || input == nullptr || lower == nullptr || point == nullptr || upper == nullptr)
    return invalid("null argument");
  return guarded([&] {
    const auto& m = model->model;
    const auto n = static_cast<Eigen::Index>(m.nodes());
    const auto steps = static_cast<Eigen::Index>(m.input_steps());
    const auto h = static_cast<Eigen::Index>(m.horizon());
    Eigen::MatrixXd x(n, steps);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index t = 0; t < steps; ++t) x(i, t) = input[i * steps + t];
    const auto f = adaptcal::finalize_interval(adaptcal::predict(m, x));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < h; ++j) {
        lower[i * h + j] = f.lower(i, j);
        point[i * h + j] = f.point(i, j);
        upper[i * h + j] = f.upper(i, j);
      }
    }
  });
}

adaptcal_status adaptcal_table_load(const char* path, adaptcal_table** out) {
  if (path == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] { *out = new adaptcal_table{adaptcal::CalibrationTable::load(path)}; });
}

void adaptcal_table_free(adaptcal_table* table) { delete table; }

adaptcal_status adaptcal_table_dims(const adaptcal_table* table, size_t* nodes, size_t* horizon) {
  if (table == nullptr) return invalid("table is null");
  if (nodes != nullptr) *nodes = table->table.nodes;
  if (horizon != nullptr) *horizon = table->table.horizon;
  return ADAPTCAL_OK;
}

adaptcal_status adaptcal_table_lookup(const adaptcal_table* table, size_t node, size_t horizon,
                                      int* present, double* delta) {
  if (table == nullptr || present == nullptr || delta == nullptr) return invalid("null argument");
  if (node >= table->table.nodes || horizon >= table->table.horizon) return invalid("cell out of range");
  const auto d = table->table.lookup(node, horizon);
  *present = d.has_value() ? 1 : 0;
  *delta = d.value_or(0.0);
  return ADAPTCAL_OK;
}

adaptcal_status adaptcal_table_apply(const adaptcal_table* table, double* lower, double* upper) {
  if (table == nullptr || lower == nullptr || upper == nullptr) return invalid("null argument");
  const auto& t = table->table;
  for (size_t i = 0; i < t.nodes; ++i) {
    for (size_t j = 0; j < t.horizon; ++j) {
      if (const auto d = t.lookup(i, j)) adaptcal::widen(lower[i * t.horizon + j], upper[i * t.horizon + j], *d);
    }
  }
  return ADAPTCAL_OK;
}

adaptcal_status adaptcal_pinball_loss(double y, double y_hat, double q, double* out) {
  if (out == nullptr) return invalid("out is null");
  return guarded([&] { *out = adaptcal::pinball_loss(y, y_hat, q); });
}

}  // extern "C"
