#include "adaptcal/config.hpp"

#include "adaptcal/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace adaptcal {

namespace {

using nlohmann::json;

std::string profile_name(BaseProfile p) {
  return p == BaseProfile::Constant ? "constant" : "sinusoidal-daily";
}

BaseProfile profile_from(const std::string& s) {
  if (s == "sinusoidal-daily") return BaseProfile::SinusoidalDaily;
  if (s == "constant") return BaseProfile::Constant;
  fail(ErrorKind::Config, "unknown base_profile '" + s + "'");
}

std::string trainable_name(TrainableParams t) {
  return t == TrainableParams::BiasesOnly ? "biases" : "all";
}

TrainableParams trainable_from(const std::string& s) {
  if (s == "all") return TrainableParams::All;
  if (s == "biases") return TrainableParams::BiasesOnly;
  fail(ErrorKind::Config, "unknown trainable setting '" + s + "'");
}

json to_json(const ExperimentConfig& c) {
  const auto& syn = c.dataset.synthetic;
  json ratios = json::array();
  for (const auto& [a, b] : c.sweep.split_ratios) ratios.push_back({a, b});
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dataset",
       {{"path", c.dataset.path},
        {"forward_fill", c.dataset.forward_fill},
        {"synthetic",
         {{"node_count", syn.node_count},
          {"step_count", syn.step_count},
          {"interval_minutes", syn.interval_minutes},
          {"start", format_timestamp(syn.start)},
          {"base_profile", profile_name(syn.base_profile)},
          {"profile_level", syn.profile_level},
          {"profile_amplitude", syn.profile_amplitude},
          {"noise_scales", syn.noise_scales},
          {"heteroscedastic_by_time", syn.heteroscedastic_by_time},
          {"rush_hour_gain", syn.rush_hour_gain},
          {"outlier_node", syn.outlier_node},
          {"outlier_probability", syn.outlier_probability},
          {"outlier_magnitude", syn.outlier_magnitude}}}}},
      {"window",
       {{"input_steps", c.window.input_steps},
        {"horizon", c.window.horizon},
        {"max_steps", c.window.max_steps}}},
      {"split",
       {{"train_frac", c.split.train_frac},
        {"val_frac", c.split.val_frac},
        {"test_frac", c.split.test_frac},
        {"calibration_frac_of_train", c.split.calibration_frac_of_train},
        {"chi2_frac_of_calibration", c.split.chi2_frac_of_calibration}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"min_improvement", c.train.min_improvement},
        {"trainable", trainable_name(c.train.trainable)}}},
      {"model", {{"hidden", c.model.hidden}, {"dropout_rate", c.model.dropout_rate}}},
      {"levels", {{"alpha_tra", c.levels.alpha_tra}}},
      {"calibration",
       {{"quantiles", c.calibration.quantiles},
        {"lambda", c.calibration.lambda},
        {"alpha_cal", c.calibration.alpha_cal},
        {"alpha_target", c.calibration.alpha_target},
        {"fallback", to_string(c.calibration.fallback)},
        {"search", to_string(c.calibration.search)},
        {"coverage_credit", to_string(c.calibration.credit)},
        {"update_window", c.calibration.update_window}}},
      {"methods", c.methods},
      {"mc_dropout",
       {{"samples", c.mc_dropout.samples},
        {"dropout_rate", c.mc_dropout.dropout_rate},
        {"alpha", c.mc_dropout.alpha}}},
      {"sweep",
       {{"coverage_levels", c.sweep.coverage_levels},
        {"split_ratios", ratios},
        {"frequencies", c.sweep.frequencies}}},
  };
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();

  const auto& d = j.at("dataset");
  c.dataset.path = d.at("path").get<std::string>();
  c.dataset.forward_fill = d.at("forward_fill").get<bool>();
  const auto& s = d.at("synthetic");
  auto& syn = c.dataset.synthetic;
  syn.node_count = s.at("node_count").get<std::size_t>();
  syn.step_count = s.at("step_count").get<std::size_t>();
  syn.interval_minutes = s.at("interval_minutes").get<int>();
  syn.start = parse_timestamp(s.at("start").get<std::string>(), syn.interval_minutes);
  syn.base_profile = profile_from(s.at("base_profile").get<std::string>());
  syn.profile_level = s.at("profile_level").get<double>();
  syn.profile_amplitude = s.at("profile_amplitude").get<double>();
  syn.noise_scales = s.at("noise_scales").get<std::vector<double>>();
  syn.heteroscedastic_by_time = s.at("heteroscedastic_by_time").get<bool>();
  syn.rush_hour_gain = s.at("rush_hour_gain").get<double>();
  syn.outlier_node = s.at("outlier_node").get<int>();
  syn.outlier_probability = s.at("outlier_probability").get<double>();
  syn.outlier_magnitude = s.at("outlier_magnitude").get<double>();

  const auto& w = j.at("window");
  c.window.input_steps = w.at("input_steps").get<std::size_t>();
  c.window.horizon = w.at("horizon").get<std::size_t>();
  c.window.max_steps = w.at("max_steps").get<std::size_t>();

  const auto& sp = j.at("split");
  c.split.train_frac = sp.at("train_frac").get<double>();
  c.split.val_frac = sp.at("val_frac").get<double>();
  c.split.test_frac = sp.at("test_frac").get<double>();
  c.split.calibration_frac_of_train = sp.at("calibration_frac_of_train").get<double>();
  c.split.chi2_frac_of_calibration = sp.at("chi2_frac_of_calibration").get<double>();

  const auto& t = j.at("train");
  c.train.learning_rate = t.at("learning_rate").get<double>();
  c.train.batch_size = t.at("batch_size").get<std::size_t>();
  c.train.max_epochs = t.at("max_epochs").get<std::size_t>();
  c.train.patience = t.at("patience").get<std::size_t>();
  c.train.min_improvement = t.at("min_improvement").get<double>();
  c.train.trainable = trainable_from(t.at("trainable").get<std::string>());

  c.model.hidden = j.at("model").at("hidden").get<std::vector<std::size_t>>();
  c.model.dropout_rate = j.at("model").at("dropout_rate").get<double>();
  c.levels.alpha_tra = j.at("levels").at("alpha_tra").get<double>();

  const auto& cal = j.at("calibration");
  c.calibration.quantiles = cal.at("quantiles").get<std::size_t>();
  c.calibration.lambda = cal.at("lambda").get<double>();
  c.calibration.alpha_cal = cal.at("alpha_cal").get<double>();
  c.calibration.alpha_target = cal.at("alpha_target").get<double>();
  c.calibration.fallback = fallback_policy_from_string(cal.at("fallback").get<std::string>());
  c.calibration.search = candidate_search_from_string(cal.at("search").get<std::string>());
  c.calibration.credit = coverage_credit_from_string(cal.at("coverage_credit").get<std::string>());
  c.calibration.update_window = cal.at("update_window").get<std::size_t>();

  c.methods = j.at("methods").get<std::vector<std::string>>();

  const auto& mc = j.at("mc_dropout");
  c.mc_dropout.samples = mc.at("samples").get<std::size_t>();
  c.mc_dropout.dropout_rate = mc.at("dropout_rate").get<double>();
  c.mc_dropout.alpha = mc.at("alpha").get<double>();

  const auto& sw = j.at("sweep");
  c.sweep.coverage_levels = sw.at("coverage_levels").get<std::vector<double>>();
  c.sweep.split_ratios.clear();
  for (const auto& r : sw.at("split_ratios")) {
    require(r.is_array() && r.size() == 2, ErrorKind::Config, "split_ratios entries must be [train, calibration] pairs");
    c.sweep.split_ratios.emplace_back(r[0].get<int>(), r[1].get<int>());
  }
  c.sweep.frequencies = sw.at("frequencies").get<std::vector<std::size_t>>();
  return c;
}

// Rejects keys absent from the defaults, which catches typos in config files.
void check_keys(const json& user, const json& reference, const std::string& prefix) {
  if (!user.is_object() || !reference.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) fail(ErrorKind::Config, "unknown config key '" + path + "'");
    check_keys(value, reference.at(key), path);
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finalizer over (master, stream).
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void ExperimentConfig::validate() const {
  require(!output_dir.empty(), ErrorKind::Config, "output_dir must not be empty");
  if (dataset.path.empty()) dataset.synthetic.validate();
  require(window.input_steps >= 1 && window.horizon >= 1, ErrorKind::Config,
          "window sizes must be at least 1");
  require(window.input_steps <= window.max_steps && window.horizon <= window.max_steps,
          ErrorKind::Config,
          "window sizes must not exceed max_steps (" + std::to_string(window.max_steps) + ")");
  split.validate();
  train.validate();
  levels.validate();
  for (auto h : model.hidden) require(h > 0, ErrorKind::Config, "hidden sizes must be positive");
  require(model.dropout_rate >= 0.0 && model.dropout_rate < 1.0, ErrorKind::Config,
          "model dropout_rate must lie in [0, 1)");
  calibration_options().validate();
  require(calibration.alpha_cal > 0.0 && calibration.alpha_cal < 1.0, ErrorKind::Config,
          "alpha_cal must lie in (0, 1)");
  require(calibration.update_window > 0, ErrorKind::Config, "update_window must be positive");
  require(!methods.empty(), ErrorKind::Config, "methods must not be empty");
  for (const auto& m : methods) {
    require(std::find(known_methods().begin(), known_methods().end(), m) != known_methods().end(),
            ErrorKind::Config, "unknown method '" + m + "'");
  }
  mc_dropout.validate();
  for (double lvl : sweep.coverage_levels)
    require(lvl > 0.0 && lvl < 1.0, ErrorKind::Config, "coverage levels must lie in (0, 1)");
  for (const auto& [a, b] : sweep.split_ratios)
    require(a > 0 && b > 0, ErrorKind::Config, "split ratios must be positive");
  for (auto f : sweep.frequencies) require(f >= 2, ErrorKind::Config, "sweep frequencies must be at least 2");
}

std::string ExperimentConfig::serialize() const { return to_json(*this).dump(2); }

ExperimentConfig ExperimentConfig::parse(const std::string& json_text) {
  json user;
  try {
    user = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  require(user.is_object(), ErrorKind::Config, "config must be a JSON object");
  const json defaults = to_json(ExperimentConfig{});
  check_keys(user, defaults, "");
  json merged = defaults;
  merged.merge_patch(user);
  try {
    auto cfg = from_json(merged);
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("invalid config value: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Config, "cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << serialize() << '\n';
}

void ExperimentConfig::set(const std::string& dotted_key, const std::string& value) {
  json j = to_json(*this);
  json* node = &j;
  std::stringstream keys(dotted_key);
  std::string key;
  while (std::getline(keys, key, '.')) {
    require(node->is_object() && node->contains(key), ErrorKind::Config,
            "unknown config key '" + dotted_key + "'");
    node = &(*node)[key];
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;
  }
  *node = parsed;
  try {
    auto cfg = from_json(j);
    cfg.validate();
    *this = std::move(cfg);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, "invalid value for '" + dotted_key + "': " + e.what());
  }
}

bool ExperimentConfig::has_method(const std::string& method) const {
  return std::find(methods.begin(), methods.end(), method) != methods.end();
}

SyntheticSpec ExperimentConfig::synthetic_spec() const {
  SyntheticSpec s = dataset.synthetic;
  s.seed = derive_seed(seed, 1);
  return s;
}

SplitSpec ExperimentConfig::split_spec() const {
  SplitSpec s = split;
  s.seed = derive_seed(seed, 2);
  return s;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train;
  t.seed = derive_seed(seed, 3);
  return t;
}

std::uint64_t ExperimentConfig::model_seed() const { return derive_seed(seed, 4); }

McDropoutConfig ExperimentConfig::mc_dropout_config() const {
  McDropoutConfig m = mc_dropout;
  m.seed = derive_seed(seed, 5);
  return m;
}

CalibrationOptions ExperimentConfig::calibration_options() const {
  CalibrationOptions o;
  o.quantiles = calibration.quantiles;
  o.lambda = calibration.lambda;
  o.alpha_target = calibration.alpha_target;
  o.search = calibration.search;
  o.credit = calibration.credit;
  o.seed = seed;
  return o;
}

}  // namespace adaptcal
