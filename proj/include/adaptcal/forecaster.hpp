#pragma once

#include "adaptcal/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace adaptcal {

/// Quantile levels derived from the training mis-coverage rate.
struct QuantileLevels {
  double alpha_tra = 0.1;

  double lower_q() const { return alpha_tra / 2.0; }
  double median_q() const { return 0.5; }
  double upper_q() const { return 1.0 - alpha_tra / 2.0; }
  void validate() const;
};

struct IntervalForecast {
  Eigen::MatrixXd lower;  // [N x h]
  Eigen::MatrixXd point;
  Eigen::MatrixXd upper;
};

// Pinball loss of prediction y_hat for truth y at quantile level q.
double pinball_loss(double y, double y_hat, double q);
// d/dy_hat of pinball_loss; at y == y_hat this returns the right-hand value 1 - q.
double pinball_gradient(double y, double y_hat, double q);

/// Mean over (node, horizon) cells of the three heads' pinball losses.
double composite_loss(const IntervalForecast& forecast, const Eigen::MatrixXd& target,
                      const QuantileLevels& levels);

/// Per-cell sort of (lower, point, upper) so that lower <= point <= upper.
IntervalForecast finalize_interval(const IntervalForecast& f);

/// Seasonal-naive point forecast `horizon` steps after the last entry of
/// `history`: the most recent observation at the same phase of the period.
double seasonal_naive_predict(std::span<const double> history, std::size_t horizon,
                              std::size_t period);

struct DenseLayer {
  Eigen::MatrixXd weights;  // [out x in]
  Eigen::VectorXd bias;
};

enum class TrainableParams { All, BiasesOnly };

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double min_improvement = 1e-6;
  TrainableParams trainable = TrainableParams::All;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Feed-forward network mapping a flattened [N x m] window to 3*N*h outputs:
/// lower, point and upper heads for every (node, horizon) cell. Inputs and
/// outputs are z-scored per node with statistics from the training windows.
class MlpForecaster {
 public:
  MlpForecaster() = default;
  MlpForecaster(std::size_t nodes, std::size_t input_steps, std::size_t horizon,
                std::vector<std::size_t> hidden, double dropout_rate, std::uint64_t seed);

  std::size_t nodes() const { return nodes_; }
  std::size_t input_steps() const { return input_steps_; }
  std::size_t horizon() const { return horizon_; }
  double dropout_rate() const { return dropout_rate_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }
  std::vector<std::size_t> layer_dims() const;
  std::size_t output_dim() const { return 3 * nodes_ * horizon_; }

  const QuantileLevels& levels() const { return levels_; }
  void set_levels(const QuantileLevels& levels) { levels_ = levels; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  const Eigen::VectorXd& node_mean() const { return mean_; }
  const Eigen::VectorXd& node_std() const { return std_; }

  void fit_normalization(std::span<const WindowSample> train);
  void set_normalization(Eigen::VectorXd mean, Eigen::VectorXd std);

  double normalize(std::size_t node, double value) const;
  double denormalize(std::size_t node, double value) const;

  // Columns of the returned matrix are flattened, normalized windows.
  Eigen::MatrixXd encode_inputs(std::span<const WindowSample> samples) const;
  Eigen::MatrixXd encode_targets(std::span<const WindowSample> samples) const;

  /// Raw network outputs in normalized units, one column per input column.
  /// `rng` enables dropout on hidden activations.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, std::mt19937_64* rng = nullptr,
                          double dropout_rate = -1.0) const;

  IntervalForecast decode(const Eigen::Ref<const Eigen::VectorXd>& output) const;

  void save(const std::filesystem::path& path) const;
  static MlpForecaster load(const std::filesystem::path& path);
  std::string serialize() const;
  static MlpForecaster deserialize(const std::string& text);

  friend bool operator==(const MlpForecaster& a, const MlpForecaster& b);

 private:
  std::size_t nodes_ = 0;
  std::size_t input_steps_ = 0;
  std::size_t horizon_ = 0;
  std::vector<std::size_t> hidden_;
  double dropout_rate_ = 0.0;
  std::uint64_t seed_ = 0;
  QuantileLevels levels_;
  std::vector<DenseLayer> layers_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd std_;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainResult {
  double initial_validation_loss = 0.0;
  std::vector<EpochLoss> history;
  std::size_t best_epoch = 0;  // 0 means the initial parameters were kept
  double best_validation_loss = 0.0;
  bool stopped_early = false;
};

/// Adam on the composite pinball loss with early stopping on validation
/// loss. The model keeps the parameters of the best validation epoch.
/// Normalization must already be fitted. Falls back to training loss when
/// `validation` is empty.
TrainResult train(MlpForecaster& model, std::span<const WindowSample> train_set,
                  std::span<const WindowSample> validation, const TrainConfig& cfg,
                  const QuantileLevels& levels);

/// Mean composite loss in normalized units.
double evaluate_loss(const MlpForecaster& model, std::span<const WindowSample> samples,
                     const QuantileLevels& levels);

IntervalForecast predict(const MlpForecaster& model, const Eigen::MatrixXd& input,
                         bool dropout_on = false, std::mt19937_64* rng = nullptr);

/// Finalized forecasts for every sample, in order.
std::vector<IntervalForecast> predict_all(const MlpForecaster& model,
                                          std::span<const WindowSample> samples);

}  // namespace adaptcal
