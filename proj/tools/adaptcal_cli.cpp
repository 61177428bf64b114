// Command-line front end. Talks to the library exclusively through the C API.
#include "adaptcal/adaptcal.h"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Common {
  std::string config_path;
  std::optional<unsigned long long> seed;
  std::string output_dir;
  std::vector<std::string> overrides;
};

// Owns a C-allocated string.
struct CString {
  char* p = nullptr;
  ~CString() { adaptcal_string_free(p); }
  std::string str() const { return p != nullptr ? p : ""; }
};

struct ConfigHandle {
  adaptcal_config* p = nullptr;
  ~ConfigHandle() { adaptcal_config_free(p); }
};

int report(adaptcal_status st) {
  if (st != ADAPTCAL_OK) {
    std::cerr << "error: " << adaptcal_status_name(st) << ": " << adaptcal_last_error() << '\n';
  }
  return static_cast<int>(st);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON experiment configuration");
  cmd->add_option("--seed", c.seed, "master random seed");
  cmd->add_option("-o,--output-dir", c.output_dir, "artifact directory (overrides ADAPTCAL_OUTPUT_DIR)");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set calibration.lambda=0.7");
}

// Precedence for the output directory: flag, then environment, then config file.
adaptcal_status build_config(const Common& c, ConfigHandle& h) {
  adaptcal_status st = c.config_path.empty() ? adaptcal_config_default(&h.p)
                                             : adaptcal_config_load(c.config_path.c_str(), &h.p);
  if (st != ADAPTCAL_OK) return st;
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      return ADAPTCAL_ERR_CONFIG;
    }
    st = adaptcal_config_set(h.p, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (st != ADAPTCAL_OK) return st;
  }
  if (c.seed) {
    st = adaptcal_config_set_seed(h.p, *c.seed);
    if (st != ADAPTCAL_OK) return st;
  }
  if (!c.output_dir.empty()) return adaptcal_config_set_output_dir(h.p, c.output_dir.c_str());
  if (const char* env = std::getenv("ADAPTCAL_OUTPUT_DIR"); env != nullptr && *env != '\0')
    return adaptcal_config_set_output_dir(h.p, env);
  return ADAPTCAL_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive per-cell conformal calibration for traffic forecasting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(adaptcal_version()));

  Common common;
  bool force = false;
  std::string sweep_name;
  std::vector<std::string> report_paths;
  std::string compare_out;

  auto* gen = app.add_subcommand("generate", "write a synthetic sensor panel");
  add_common(gen, common);
  gen->add_flag("-f,--force", force, "overwrite an existing panel");

  auto* train = app.add_subcommand("train", "fit the quantile forecaster");
  add_common(train, common);

  auto* cal = app.add_subcommand("calibrate", "build the per-cell calibration table");
  add_common(cal, common);

  auto* eval = app.add_subcommand("evaluate", "score every configured method on the test set");
  add_common(eval, common);

  auto* sweep = app.add_subcommand("sweep", "run a parameter sweep");
  add_common(sweep, common);
  sweep->add_option("kind", sweep_name, "coverage-levels | split-ratios | grid-vs-quantile")->required();

  auto* cmp = app.add_subcommand("compare", "rank evaluation reports");
  cmp->add_option("reports", report_paths, "report JSON files")->required()->expected(2, -1);
  cmp->add_option("-o,--out", compare_out, "also write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ADAPTCAL_ERR_INVALID_ARGUMENT);
  }

  if (cmp->parsed()) {
    std::vector<const char*> paths;
    for (const auto& p : report_paths) paths.push_back(p.c_str());
    CString text;
    const auto st = adaptcal_compare(paths.data(), paths.size(),
                                     compare_out.empty() ? nullptr : compare_out.c_str(), &text.p);
    if (st == ADAPTCAL_OK) std::cout << text.str();
    return report(st);
  }

  ConfigHandle cfg;
  if (auto st = build_config(common, cfg); st != ADAPTCAL_OK) return report(st);

  if (gen->parsed()) {
    CString path;
    const auto st = adaptcal_generate(cfg.p, force ? 1 : 0, &path.p);
    if (st == ADAPTCAL_OK) std::cout << "wrote " << path.str() << '\n';
    return report(st);
  }
  if (train->parsed()) {
    CString summary;
    const auto st = adaptcal_train(cfg.p, &summary.p);
    if (st == ADAPTCAL_OK) std::cout << summary.str() << '\n';
    return report(st);
  }
  if (cal->parsed()) {
    size_t missing = 0;
    const auto st = adaptcal_calibrate(cfg.p, &missing);
    if (st == ADAPTCAL_OK) std::cout << "calibration table written; missing cells: " << missing << '\n';
    return report(st);
  }
  if (eval->parsed()) {
    CString written;
    const auto st = adaptcal_evaluate(cfg.p, &written.p);
    if (st == ADAPTCAL_OK) std::cout << written.str();
    return report(st);
  }
  if (sweep->parsed()) {
    adaptcal_sweep_kind kind{};
    auto st = adaptcal_sweep_from_name(sweep_name.c_str(), &kind);
    if (st != ADAPTCAL_OK) return report(st);
    CString path;
    st = adaptcal_sweep(cfg.p, kind, &path.p);
    if (st == ADAPTCAL_OK) std::cout << "wrote " << path.str() << '\n';
    return report(st);
  }
  return report(ADAPTCAL_ERR_INTERNAL);
}
