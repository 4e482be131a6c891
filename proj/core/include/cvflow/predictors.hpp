#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cvflow/common.hpp"

namespace cvflow {

class TrainingError : public Error {
 public:
  TrainingError(int epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

enum class Arch { lstm, gru, simple };

std::string_view to_string(Arch arch);
Arch arch_from_string(std::string_view s);
/// Number of stacked gate blocks: 4 (LSTM), 3 (GRU), 1 (simple RNN).
int gate_count(Arch arch) noexcept;

/// LSTM gate blocks, in storage order.
enum class LstmGate { input = 0, forget = 1, output = 2, candidate = 3 };
/// GRU gate blocks, in storage order.
enum class GruGate { update = 0, reset = 1, candidate = 2 };

/// Parameters of a single-layer recurrent cell with scalar input and a dense
/// scalar readout, stored in one flat vector:
///
///   [ W (G*H) | U (G*H x H, column-major) | b (G*H) | readout w (H) | readout b ]
///
/// Gate block g occupies rows [g*H, (g+1)*H) of W, U and b.
class RnnWeights {
 public:
  RnnWeights(Arch arch, int hidden);

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)); LSTM forget-gate bias 1.
  static RnnWeights glorot(Arch arch, int hidden, std::uint64_t seed);

  Arch arch() const noexcept { return arch_; }
  int hidden() const noexcept { return hidden_; }
  int gates() const noexcept { return gate_count(arch_); }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }

  Eigen::Map<Eigen::VectorXd> input_weights();
  Eigen::Map<const Eigen::VectorXd> input_weights() const;
  Eigen::Map<Eigen::MatrixXd> recurrent_weights();
  Eigen::Map<const Eigen::MatrixXd> recurrent_weights() const;
  Eigen::Map<Eigen::VectorXd> bias();
  Eigen::Map<const Eigen::VectorXd> bias() const;
  Eigen::Map<Eigen::VectorXd> readout_weights();
  Eigen::Map<const Eigen::VectorXd> readout_weights() const;
  double& readout_bias() noexcept { return params_.back(); }
  double readout_bias() const noexcept { return params_.back(); }

  /// Offsets into params() for gradient bookkeeping.
  std::size_t recurrent_offset() const noexcept;
  std::size_t bias_offset() const noexcept;
  std::size_t readout_offset() const noexcept;

  friend bool operator==(const RnnWeights&, const RnnWeights&) = default;

 private:
  Arch arch_;
  int hidden_;
  std::vector<double> params_;
};

struct CellState {
  Eigen::VectorXd h;
  Eigen::VectorXd c;  ///< LSTM only; empty otherwise

  static CellState zeros(Arch arch, int hidden);
};

/// One LSTM step: input/forget/output gates, candidate, new cell and hidden state.
CellState lstm_cell_forward(double x, const CellState& prev, const RnnWeights& w);
/// One step of any architecture.
CellState cell_forward(double x, const CellState& prev, const RnnWeights& w);
/// Readout of a hidden state.
double readout(const RnnWeights& w, const Eigen::VectorXd& h);

struct Hyperparams {
  int epochs = 400;
  int neurons = 100;
  int batch_size = 50;
  double dropout_rate = 0.2;
  double learning_rate = 0.001;
  int lookback = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t rng_seed = 0;
  /// Carry the hidden state across consecutive samples (see train_rnn).
  bool stateful = true;
};

void validate(const Hyperparams& h);

/// Min-max scaling fitted on training data.
struct Normalization {
  double min = 0.0;
  double max = 1.0;

  /// A constant sample gets max = min + 1 so the map stays invertible.
  static Normalization fit(std::span<const double> values);
  double normalize(double x) const noexcept { return (x - min) / (max - min); }
  double denormalize(double y) const noexcept { return min + y * (max - min); }
};

/// A contiguous normalized stream viewed as supervised pairs:
/// pair k maps stream[k .. k+lookback) to stream[k+lookback].
struct SupervisedSet {
  std::vector<double> stream;
  int lookback = 1;

  std::size_t size() const noexcept {
    return stream.size() > static_cast<std::size_t>(lookback) ? stream.size() - static_cast<std::size_t>(lookback) : 0;
  }
  std::span<const double> window(std::size_t k) const noexcept {
    return std::span<const double>(stream).subspan(k, static_cast<std::size_t>(lookback));
  }
  double target(std::size_t k) const noexcept { return stream[k + static_cast<std::size_t>(lookback)]; }
};

struct SupervisedSplit {
  SupervisedSet train;  ///< train_n - lookback pairs
  SupervisedSet test;   ///< test_n pairs whose targets follow the training range
  Normalization normalization;
};

/// Chronological split with normalization fitted on the first `train_n` values only.
SupervisedSplit prepare_supervised(const TimeSeries& series, int lookback, std::size_t train_n, std::size_t test_n);

struct RnnModel {
  RnnWeights weights;
  Hyperparams hyper;
  Normalization normalization;
  std::vector<double> train_mae;       ///< per epoch, normalized units
  std::vector<double> validation_mae;  ///< per epoch, when a validation set was given

  Arch arch() const noexcept { return weights.arch(); }
};

/// Fits a recurrent one-step predictor by minimizing MSE with ADAM.
///
/// Stateful mode cuts the pairs into batch_size contiguous streams. Mini-batch t
/// holds pair t of each stream, and every stream carries its hidden state from
/// one batch to the next (zeroed each epoch) while gradients are truncated to
/// the lookback window. Without state, each window starts from a zero state
/// and mini-batches are shuffled pairs.
/// Dropout is applied to the hidden state feeding the readout.
RnnModel train_rnn(const SupervisedSet& train, Arch arch, const Hyperparams& hyper,
                   Normalization normalization = {}, const SupervisedSet* validation = nullptr);

/// Teacher-forced one-step-ahead predictions, denormalized. Element i
/// predicts series[i + lookback]; there are size - lookback of them.
TimeSeries predict_series(const RnnModel& model, const TimeSeries& series);

/// Same predictions from a normalized stream, left normalized.
std::vector<double> predict_normalized(const RnnModel& model, std::span<const double> stream);

/// Incremental inference; push() yields the same values as predict_series.
class StreamingPredictor {
 public:
  explicit StreamingPredictor(const RnnModel& model);
  /// Consumes one raw observation; returns the prediction of the next one
  /// once `lookback` observations have been seen.
  std::optional<double> push(double value);

 private:
  const RnnModel* model_;
  CellState state_;
  std::vector<double> window_;  // stateless mode only
  std::size_t seen_ = 0;
};

struct TrainingPair {
  std::vector<double> window;
  double target = 0.0;
};

/// Mean squared error of independent windows (zero initial state, no dropout)
/// and its exact gradient via backpropagation through time.
double loss_and_gradient(const RnnWeights& w, std::span<const TrainingPair> batch, std::vector<double>& gradient);

/// Max over parameters of |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8), comparing
/// the analytic gradient with central differences of step `eps`.
double gradient_check(const RnnWeights& w, std::span<const TrainingPair> batch, double eps = 1e-5);

/// Binary model file: magic, version, arch tag, hyperparameters,
/// normalization bounds and weights, all little-endian.
void save_model(std::ostream& out, const RnnModel& model);
RnnModel load_model(std::istream& in);

}  // namespace cvflow
