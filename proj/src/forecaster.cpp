#include "adaptcal/forecaster.hpp"

#include "adaptcal/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace adaptcal {

namespace {

constexpr const char* kModelFormat = "adaptcal-mlp/1";

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::vector<double> to_vector(const Eigen::MatrixXd& m) {
  // Row-major flattening.
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

Eigen::MatrixXd from_vector(const std::vector<double>& v, Index rows, Index cols) {
  require(static_cast<Index>(v.size()) == rows * cols, ErrorKind::Data,
          "checkpoint tensor has the wrong number of elements");
  Eigen::MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  std::size_t step = 0;

  explicit AdamState(const std::vector<DenseLayer>& layers) {
    for (const auto& l : layers) {
      mw.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
      vw.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
      mb.push_back(Eigen::VectorXd::Zero(l.bias.size()));
      vb.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
  }
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEpsilon = 1e-8;

// dL/d(output) for the composite loss averaged over the batch.
double head_level(std::size_t head, const QuantileLevels& levels) {
  switch (head) {
    case 0: return levels.lower_q();
    case 1: return levels.median_q();
    default: return levels.upper_q();
  }
}

}  // namespace

void QuantileLevels::validate() const {
  require(alpha_tra > 0.0 && alpha_tra < 1.0, ErrorKind::Config, "alpha_tra must lie in (0, 1)");
}

double pinball_loss(double y, double y_hat, double q) {
  require(q > 0.0 && q < 1.0, ErrorKind::Contract, "pinball quantile level must lie in (0, 1)");
  double diff = y - y_hat;
  return diff > 0.0 ? q * diff : (1.0 - q) * (-diff);
}

double pinball_gradient(double y, double y_hat, double q) {
  return (y - y_hat) > 0.0 ? -q : 1.0 - q;
}

double composite_loss(const IntervalForecast& f, const Eigen::MatrixXd& target,
                      const QuantileLevels& levels) {
  auto same = [&](const Eigen::MatrixXd& m) {
    return m.rows() == target.rows() && m.cols() == target.cols();
  };
  require(same(f.lower) && same(f.point) && same(f.upper), ErrorKind::Contract,
          "forecast and target shapes differ");
  require(target.size() > 0, ErrorKind::Contract, "empty target");
  double total = 0.0;
  for (Index i = 0; i < target.rows(); ++i) {
    for (Index j = 0; j < target.cols(); ++j) {
      double y = target(i, j);
      total += pinball_loss(y, f.lower(i, j), levels.lower_q()) +
               pinball_loss(y, f.point(i, j), levels.median_q()) +
               pinball_loss(y, f.upper(i, j), levels.upper_q());
    }
  }
  return total / static_cast<double>(target.size());
}

IntervalForecast finalize_interval(const IntervalForecast& f) {
  IntervalForecast out = f;
  for (Index i = 0; i < f.lower.rows(); ++i) {
    for (Index j = 0; j < f.lower.cols(); ++j) {
      double a = f.lower(i, j), b = f.point(i, j), c = f.upper(i, j);
      if (a > b) std::swap(a, b);
      if (b > c) std::swap(b, c);
      if (a > b) std::swap(a, b);
      out.lower(i, j) = a;
      out.point(i, j) = b;
      out.upper(i, j) = c;
    }
  }
  return out;
}

double seasonal_naive_predict(std::span<const double> history, std::size_t horizon,
                              std::size_t period) {
  require(period > 0 && horizon > 0, ErrorKind::Contract, "period and horizon must be positive");
  if (history.size() < period) {
    fail(ErrorKind::Data, "insufficient history: " + std::to_string(history.size()) +
                              " steps for period " + std::to_string(period));
  }
  std::size_t cycles = (horizon + period - 1) / period;
  std::size_t position = history.size() - 1 + horizon - cycles * period;
  return history[position];
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::Config,
          "learning_rate must be non-negative");
  require(batch_size > 0 && max_epochs > 0 && patience > 0, ErrorKind::Config,
          "batch_size, max_epochs and patience must be positive");
}

MlpForecaster::MlpForecaster(std::size_t nodes, std::size_t input_steps, std::size_t horizon,
                             std::vector<std::size_t> hidden, double dropout_rate,
                             std::uint64_t seed)
    : nodes_(nodes),
      input_steps_(input_steps),
      horizon_(horizon),
      hidden_(std::move(hidden)),
      dropout_rate_(dropout_rate),
      seed_(seed) {
  require(nodes > 0 && input_steps > 0 && horizon > 0, ErrorKind::Config,
          "model dimensions must be positive");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorKind::Config,
          "dropout_rate must lie in [0, 1)");
  for (auto h : hidden_) require(h > 0, ErrorKind::Config, "hidden layer sizes must be positive");

  std::mt19937_64 rng(seed);
  auto dims = layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = dims[l], out = dims[l + 1];
    double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer;
    layer.weights.resize(idx(out), idx(in));
    for (Index r = 0; r < layer.weights.rows(); ++r)
      for (Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = dist(rng);
    layer.bias = Eigen::VectorXd::Zero(idx(out));
    layers_.push_back(std::move(layer));
  }
  mean_ = Eigen::VectorXd::Zero(idx(nodes));
  std_ = Eigen::VectorXd::Ones(idx(nodes));
}

std::vector<std::size_t> MlpForecaster::layer_dims() const {
  std::vector<std::size_t> dims{nodes_ * input_steps_};
  dims.insert(dims.end(), hidden_.begin(), hidden_.end());
  dims.push_back(output_dim());
  return dims;
}

void MlpForecaster::fit_normalization(std::span<const WindowSample> train) {
  require(!train.empty(), ErrorKind::Data, "cannot fit normalization on an empty training set");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(idx(nodes_));
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(idx(nodes_));
  double count = 0.0;
  for (const auto& w : train) {
    require(w.target.rows() == idx(nodes_), ErrorKind::Contract, "window node count mismatch");
    sum += w.target.rowwise().sum();
    count += static_cast<double>(w.target.cols());
  }
  mean_ = sum / count;
  for (const auto& w : train) {
    sq += (w.target.colwise() - mean_).array().square().matrix().rowwise().sum();
  }
  std_ = (sq / count).array().sqrt().matrix();
  for (Index i = 0; i < std_.size(); ++i) {
    if (!(std_(i) > 1e-12)) std_(i) = 1.0;
  }
}

void MlpForecaster::set_normalization(Eigen::VectorXd mean, Eigen::VectorXd std) {
  require(mean.size() == idx(nodes_) && std.size() == idx(nodes_), ErrorKind::Contract,
          "normalization vectors must have one entry per node");
  mean_ = std::move(mean);
  std_ = std::move(std);
}

double MlpForecaster::normalize(std::size_t node, double value) const {
  return (value - mean_(idx(node))) / std_(idx(node));
}

double MlpForecaster::denormalize(std::size_t node, double value) const {
  return value * std_(idx(node)) + mean_(idx(node));
}

Eigen::MatrixXd MlpForecaster::encode_inputs(std::span<const WindowSample> samples) const {
  Eigen::MatrixXd x(idx(nodes_ * input_steps_), idx(samples.size()));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& in = samples[s].input;
    require(in.rows() == idx(nodes_) && in.cols() == idx(input_steps_), ErrorKind::Contract,
            "input window shape does not match the model");
    for (std::size_t i = 0; i < nodes_; ++i)
      for (std::size_t k = 0; k < input_steps_; ++k)
        x(idx(i * input_steps_ + k), idx(s)) = normalize(i, in(idx(i), idx(k)));
  }
  return x;
}

Eigen::MatrixXd MlpForecaster::encode_targets(std::span<const WindowSample> samples) const {
  Eigen::MatrixXd y(idx(nodes_ * horizon_), idx(samples.size()));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& t = samples[s].target;
    require(t.rows() == idx(nodes_) && t.cols() == idx(horizon_), ErrorKind::Contract,
            "target window shape does not match the model");
    for (std::size_t i = 0; i < nodes_; ++i)
      for (std::size_t j = 0; j < horizon_; ++j)
        y(idx(i * horizon_ + j), idx(s)) = normalize(i, t(idx(i), idx(j)));
  }
  return y;
}

Eigen::MatrixXd MlpForecaster::forward(const Eigen::MatrixXd& inputs, std::mt19937_64* rng,
                                       double dropout_rate) const {
  require(inputs.rows() == idx(nodes_ * input_steps_), ErrorKind::Contract,
          "input dimension does not match the model");
  const double rate = dropout_rate < 0.0 ? dropout_rate_ : dropout_rate;
  std::bernoulli_distribution keep(1.0 - rate);
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weights * a;
    z.colwise() += layers_[l].bias;
    if (l + 1 == layers_.size()) return z;
    a = z.array().tanh().matrix();
    if (rng != nullptr && rate > 0.0) {
      for (Index c = 0; c < a.cols(); ++c)
        for (Index r = 0; r < a.rows(); ++r) a(r, c) = keep(*rng) ? a(r, c) / (1.0 - rate) : 0.0;
    }
  }
  return a;
}

IntervalForecast MlpForecaster::decode(const Eigen::Ref<const Eigen::VectorXd>& output) const {
  require(output.size() == idx(output_dim()), ErrorKind::Contract, "output dimension mismatch");
  IntervalForecast f;
  f.lower.resize(idx(nodes_), idx(horizon_));
  f.point.resize(idx(nodes_), idx(horizon_));
  f.upper.resize(idx(nodes_), idx(horizon_));
  const std::size_t cells = nodes_ * horizon_;
  for (std::size_t i = 0; i < nodes_; ++i) {
    for (std::size_t j = 0; j < horizon_; ++j) {
      const std::size_t c = i * horizon_ + j;
      f.lower(idx(i), idx(j)) = denormalize(i, output(idx(c)));
      f.point(idx(i), idx(j)) = denormalize(i, output(idx(cells + c)));
      f.upper(idx(i), idx(j)) = denormalize(i, output(idx(2 * cells + c)));
    }
  }
  return f;
}

std::string MlpForecaster::serialize() const {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["nodes"] = nodes_;
  j["input_steps"] = input_steps_;
  j["horizon"] = horizon_;
  j["hidden"] = hidden_;
  j["layer_dims"] = layer_dims();
  j["dropout_rate"] = dropout_rate_;
  j["seed"] = seed_;
  j["alpha_tra"] = levels_.alpha_tra;
  j["norm_mean"] = std::vector<double>(mean_.data(), mean_.data() + mean_.size());
  j["norm_std"] = std::vector<double>(std_.data(), std_.data() + std_.size());
  auto layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"rows", l.weights.rows()},
                      {"cols", l.weights.cols()},
                      {"weights", to_vector(l.weights)},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

MlpForecaster MlpForecaster::deserialize(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed model checkpoint: ") + e.what());
  }
  try {
    require(j.at("format").get<std::string>() == kModelFormat, ErrorKind::Data,
            "unsupported model checkpoint format");
    MlpForecaster m;
    m.nodes_ = j.at("nodes").get<std::size_t>();
    m.input_steps_ = j.at("input_steps").get<std::size_t>();
    m.horizon_ = j.at("horizon").get<std::size_t>();
    m.hidden_ = j.at("hidden").get<std::vector<std::size_t>>();
    m.dropout_rate_ = j.at("dropout_rate").get<double>();
    m.seed_ = j.at("seed").get<std::uint64_t>();
    m.levels_.alpha_tra = j.at("alpha_tra").get<double>();
    auto mean = j.at("norm_mean").get<std::vector<double>>();
    auto sd = j.at("norm_std").get<std::vector<double>>();
    m.mean_ = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Index>(mean.size()));
    m.std_ = Eigen::Map<Eigen::VectorXd>(sd.data(), static_cast<Index>(sd.size()));
    auto dims = m.layer_dims();
    const auto& layers = j.at("layers");
    require(layers.size() + 1 == dims.size(), ErrorKind::Data, "checkpoint layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      DenseLayer layer;
      layer.weights = from_vector(layers[l].at("weights").get<std::vector<double>>(),
                                  idx(dims[l + 1]), idx(dims[l]));
      auto bias = layers[l].at("bias").get<std::vector<double>>();
      require(bias.size() == dims[l + 1], ErrorKind::Data, "checkpoint bias size mismatch");
      layer.bias = Eigen::Map<Eigen::VectorXd>(bias.data(), static_cast<Index>(bias.size()));
      m.layers_.push_back(std::move(layer));
    }
    require(m.mean_.size() == idx(m.nodes_) && m.std_.size() == idx(m.nodes_), ErrorKind::Data,
            "checkpoint normalization size mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed model checkpoint: ") + e.what());
  }
}

void MlpForecaster::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << serialize() << '\n';
}

MlpForecaster MlpForecaster::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingArtifact, "model checkpoint not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

bool operator==(const MlpForecaster& a, const MlpForecaster& b) {
  if (a.nodes_ != b.nodes_ || a.input_steps_ != b.input_steps_ || a.horizon_ != b.horizon_ ||
      a.hidden_ != b.hidden_ || a.dropout_rate_ != b.dropout_rate_ || a.seed_ != b.seed_ ||
      a.levels_.alpha_tra != b.levels_.alpha_tra || a.layers_.size() != b.layers_.size() ||
      a.mean_ != b.mean_ || a.std_ != b.std_) {
    return false;
  }
  for (std::size_t l = 0; l < a.layers_.size(); ++l) {
    if (a.layers_[l].weights != b.layers_[l].weights || a.layers_[l].bias != b.layers_[l].bias)
      return false;
  }
  return true;
}

double evaluate_loss(const MlpForecaster& model, std::span<const WindowSample> samples,
                     const QuantileLevels& levels) {
  require(!samples.empty(), ErrorKind::Contract, "cannot evaluate loss on an empty set");
  const Eigen::MatrixXd out = model.forward(model.encode_inputs(samples));
  const Eigen::MatrixXd y = model.encode_targets(samples);
  const Index cells = y.rows();
  double total = 0.0;
  for (Index s = 0; s < y.cols(); ++s) {
    for (Index c = 0; c < cells; ++c) {
      for (std::size_t head = 0; head < 3; ++head) {
        total += pinball_loss(y(c, s), out(idx(head) * cells + c, s), head_level(head, levels));
      }
    }
  }
  return total / static_cast<double>(cells * y.cols());
}

TrainResult train(MlpForecaster& model, std::span<const WindowSample> train_set,
                  std::span<const WindowSample> validation, const TrainConfig& cfg,
                  const QuantileLevels& levels) {
  cfg.validate();
  levels.validate();
  require(!train_set.empty(), ErrorKind::Data, "training set is empty");
  model.set_levels(levels);

  const Eigen::MatrixXd x_all = model.encode_inputs(train_set);
  const Eigen::MatrixXd y_all = model.encode_targets(train_set);
  const Index cells = y_all.rows();
  const double rate = model.dropout_rate();
  const bool weights_trainable = cfg.trainable == TrainableParams::All;
  auto& layers = model.layers();
  const std::size_t layer_count = layers.size();

  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::bernoulli_distribution keep(1.0 - rate);
  AdamState adam(layers);

  auto monitor = [&]() {
    return validation.empty() ? evaluate_loss(model, train_set, levels)
                              : evaluate_loss(model, validation, levels);
  };

  TrainResult result;
  result.initial_validation_loss = monitor();
  result.best_validation_loss = result.initial_validation_loss;
  std::vector<DenseLayer> best = layers;
  std::size_t stale = 0;

  std::vector<Index> order(static_cast<std::size_t>(x_all.cols()));
  std::iota(order.begin(), order.end(), Index{0});

  std::vector<Eigen::MatrixXd> acts(layer_count);   // inputs to each layer
  std::vector<Eigen::MatrixXd> masks(layer_count);  // dropout scale per hidden unit
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Index b = idx(end - start);
      Eigen::MatrixXd x(x_all.rows(), b), y(cells, b);
      for (Index k = 0; k < b; ++k) {
        x.col(k) = x_all.col(order[start + static_cast<std::size_t>(k)]);
        y.col(k) = y_all.col(order[start + static_cast<std::size_t>(k)]);
      }

      // Forward, keeping activations for backprop.
      acts[0] = x;
      Eigen::MatrixXd out;
      for (std::size_t l = 0; l < layer_count; ++l) {
        Eigen::MatrixXd z = layers[l].weights * acts[l];
        z.colwise() += layers[l].bias;
        if (l + 1 == layer_count) {
          out = std::move(z);
          break;
        }
        Eigen::MatrixXd a = z.array().tanh().matrix();
        masks[l] = Eigen::MatrixXd::Ones(a.rows(), a.cols());
        if (rate > 0.0) {
          for (Index c = 0; c < a.cols(); ++c)
            for (Index r = 0; r < a.rows(); ++r)
              masks[l](r, c) = keep(dropout_rng) ? 1.0 / (1.0 - rate) : 0.0;
        }
        // Store tanh output in acts; mask applied separately for the derivative.
        acts[l + 1] = a.cwiseProduct(masks[l]);
        masks[l] = masks[l].cwiseProduct((1.0 - a.array().square()).matrix());
      }

      Eigen::MatrixXd grad(out.rows(), b);
      double batch_loss = 0.0;
      const double scale = 1.0 / static_cast<double>(cells * b);
      for (Index s = 0; s < b; ++s) {
        for (std::size_t head = 0; head < 3; ++head) {
          const double q = head_level(head, levels);
          for (Index c = 0; c < cells; ++c) {
            const Index o = idx(head) * cells + c;
            batch_loss += pinball_loss(y(c, s), out(o, s), q);
            grad(o, s) = pinball_gradient(y(c, s), out(o, s), q) * scale;
          }
        }
      }
      epoch_loss += batch_loss / static_cast<double>(cells);

      ++adam.step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.step));
      const double lr = cfg.learning_rate;
      Eigen::MatrixXd delta = std::move(grad);
      for (std::size_t l = layer_count; l-- > 0;) {
        Eigen::MatrixXd gw = delta * acts[l].transpose();
        Eigen::VectorXd gb = delta.rowwise().sum();
        if (l > 0) delta = (layers[l].weights.transpose() * delta).cwiseProduct(masks[l - 1]);

        adam.mb[l] = kBeta1 * adam.mb[l] + (1.0 - kBeta1) * gb;
        adam.vb[l] = kBeta2 * adam.vb[l] + (1.0 - kBeta2) * gb.cwiseProduct(gb);
        layers[l].bias.array() -= lr * (adam.mb[l].array() / bc1) /
                                  ((adam.vb[l].array() / bc2).sqrt() + kEpsilon);
        if (weights_trainable) {
          adam.mw[l] = kBeta1 * adam.mw[l] + (1.0 - kBeta1) * gw;
          adam.vw[l] = kBeta2 * adam.vw[l] + (1.0 - kBeta2) * gw.cwiseProduct(gw);
          layers[l].weights.array() -= lr * (adam.mw[l].array() / bc1) /
                                       ((adam.vw[l].array() / bc2).sqrt() + kEpsilon);
        }
      }
    }

    EpochLoss record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / static_cast<double>(order.size());
    record.validation_loss = monitor();
    if (!std::isfinite(record.train_loss) || !std::isfinite(record.validation_loss)) {
      fail(ErrorKind::Divergence, "training diverged at epoch " + std::to_string(epoch));
    }
    result.history.push_back(record);

    if (record.validation_loss < result.best_validation_loss - cfg.min_improvement) {
      result.best_validation_loss = record.validation_loss;
      result.best_epoch = epoch;
      best = layers;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  layers = std::move(best);
  return result;
}

IntervalForecast predict(const MlpForecaster& model, const Eigen::MatrixXd& input,
                         bool dropout_on, std::mt19937_64* rng) {
  require(input.rows() == idx(model.nodes()) && input.cols() == idx(model.input_steps()),
          ErrorKind::Contract, "input shape does not match the model");
  WindowSample w;
  w.input = input;
  const Eigen::MatrixXd x = model.encode_inputs(std::span<const WindowSample>(&w, 1));
  std::mt19937_64 fallback(model.seed());
  std::mt19937_64* gen = dropout_on ? (rng != nullptr ? rng : &fallback) : nullptr;
  const Eigen::MatrixXd out = model.forward(x, gen);
  return model.decode(out.col(0));
}

std::vector<IntervalForecast> predict_all(const MlpForecaster& model,
                                          std::span<const WindowSample> samples) {
  std::vector<IntervalForecast> out;
  out.reserve(samples.size());
  if (samples.empty()) return out;
  const Eigen::MatrixXd raw = model.forward(model.encode_inputs(samples));
  for (Index s = 0; s < raw.cols(); ++s) out.push_back(finalize_interval(model.decode(raw.col(s))));
  return out;
}

}  // namespace adaptcal
