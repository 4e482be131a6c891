#include "cvflow/predictors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>

namespace cvflow {

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::lstm: return "lstm";
    case Arch::gru: return "gru";
    case Arch::simple: return "simple";
  }
  return "?";
}

Arch arch_from_string(std::string_view s) {
  if (s == "lstm") return Arch::lstm;
  if (s == "gru") return Arch::gru;
  if (s == "simple") return Arch::simple;
  throw ContractError(fmt::format("unknown recurrent architecture '{}'", s));
}

int gate_count(Arch arch) noexcept {
  switch (arch) {
    case Arch::lstm: return 4;
    case Arch::gru: return 3;
    case Arch::simple: return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Weights

RnnWeights::RnnWeights(Arch arch, int hidden) : arch_(arch), hidden_(hidden) {
  if (hidden < 1) throw ContractError("hidden size must be >= 1");
  const auto gh = static_cast<std::size_t>(gate_count(arch) * hidden);
  const auto h = static_cast<std::size_t>(hidden);
  params_.assign(gh + gh * h + gh + h + 1, 0.0);
}

std::size_t RnnWeights::recurrent_offset() const noexcept { return static_cast<std::size_t>(gates() * hidden_); }
std::size_t RnnWeights::bias_offset() const noexcept {
  return recurrent_offset() + static_cast<std::size_t>(gates() * hidden_ * hidden_);
}
std::size_t RnnWeights::readout_offset() const noexcept {
  return bias_offset() + static_cast<std::size_t>(gates() * hidden_);
}

Eigen::Map<Eigen::VectorXd> RnnWeights::input_weights() { return {params_.data(), gates() * hidden_}; }
Eigen::Map<const Eigen::VectorXd> RnnWeights::input_weights() const { return {params_.data(), gates() * hidden_}; }
Eigen::Map<Eigen::MatrixXd> RnnWeights::recurrent_weights() {
  return {params_.data() + recurrent_offset(), gates() * hidden_, hidden_};
}
Eigen::Map<const Eigen::MatrixXd> RnnWeights::recurrent_weights() const {
  return {params_.data() + recurrent_offset(), gates() * hidden_, hidden_};
}
Eigen::Map<Eigen::VectorXd> RnnWeights::bias() { return {params_.data() + bias_offset(), gates() * hidden_}; }
Eigen::Map<const Eigen::VectorXd> RnnWeights::bias() const {
  return {params_.data() + bias_offset(), gates() * hidden_};
}
Eigen::Map<Eigen::VectorXd> RnnWeights::readout_weights() { return {params_.data() + readout_offset(), hidden_}; }
Eigen::Map<const Eigen::VectorXd> RnnWeights::readout_weights() const {
  return {params_.data() + readout_offset(), hidden_};
}

RnnWeights RnnWeights::glorot(Arch arch, int hidden, std::uint64_t seed) {
  RnnWeights w(arch, hidden);
  std::mt19937_64 rng(seed);
  auto fill = [&](auto&& block, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      for (Eigen::Index i = 0; i < block.rows(); ++i) block(i, j) = u(rng);
    }
  };
  const double h = hidden;
  fill(w.input_weights(), 1.0, h);
  fill(w.recurrent_weights(), h, h);
  fill(w.readout_weights(), h, 1.0);
  if (arch == Arch::lstm) w.bias().segment(static_cast<int>(LstmGate::forget) * hidden, hidden).setOnes();
  return w;
}

CellState CellState::zeros(Arch arch, int hidden) {
  CellState s;
  s.h = Eigen::VectorXd::Zero(hidden);
  if (arch == Arch::lstm) s.c = Eigen::VectorXd::Zero(hidden);
  return s;
}

// ---------------------------------------------------------------------------
// Forward / backward kernels
//
// A trace runs S sequences side by side: column j of every matrix belongs to
// sequence j. Step t maps h[t], c[t] to h[t+1], c[t+1].

namespace {

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

struct Trace {
  std::vector<Eigen::MatrixXd> h;
  std::vector<Eigen::MatrixXd> c;
  std::vector<Eigen::MatrixXd> act;  // activated gate blocks
  std::vector<Eigen::MatrixXd> aux;  // LSTM: tanh(c[t+1]); GRU: r (.) h[t]
  Eigen::MatrixXd x;                 // steps x S

  void reset(const RnnWeights& w, std::size_t steps, Eigen::Index seqs) {
    const int H = w.hidden();
    h.resize(steps + 1);
    act.resize(steps);
    aux.resize(steps);
    c.resize(w.arch() == Arch::lstm ? steps + 1 : 0);
    for (auto& m : h) m.resize(H, seqs);
    for (auto& m : c) m.resize(H, seqs);
    for (auto& m : act) m.resize(w.gates() * H, seqs);
    for (auto& m : aux) m.resize(H, seqs);
    x.resize(static_cast<Eigen::Index>(steps), seqs);
    h[0].setZero();
    if (!c.empty()) c[0].setZero();
  }
  std::size_t steps() const noexcept { return act.size(); }
};

void forward_step(const RnnWeights& w, Trace& tr, std::size_t t) {
  const int H = w.hidden();
  const auto W = w.input_weights();
  const auto U = w.recurrent_weights();
  const auto b = w.bias();
  const auto x = tr.x.row(static_cast<Eigen::Index>(t));
  const auto& h = tr.h[t];
  auto& a = tr.act[t];

  switch (w.arch()) {
    case Arch::lstm: {
      a.noalias() = U * h;
      a.noalias() += W * x;
      a.colwise() += b;
      a.topRows(3 * H) = a.topRows(3 * H).unaryExpr([](double v) { return sigmoid(v); });
      a.bottomRows(H) = a.bottomRows(H).array().tanh().matrix();
      const auto i = a.middleRows(0, H).array();
      const auto f = a.middleRows(H, H).array();
      const auto o = a.middleRows(2 * H, H).array();
      const auto g = a.middleRows(3 * H, H).array();
      tr.c[t + 1].array() = f * tr.c[t].array() + i * g;
      tr.aux[t].array() = tr.c[t + 1].array().tanh();
      tr.h[t + 1].array() = o * tr.aux[t].array();
      break;
    }
    case Arch::gru: {
      auto zr = a.topRows(2 * H);
      zr.noalias() = U.topRows(2 * H) * h;
      zr.noalias() += W.head(2 * H) * x;
      zr.colwise() += b.head(2 * H);
      zr = zr.unaryExpr([](double v) { return sigmoid(v); });
      tr.aux[t].array() = a.middleRows(H, H).array() * h.array();
      auto n = a.bottomRows(H);
      n.noalias() = U.bottomRows(H) * tr.aux[t];
      n.noalias() += W.tail(H) * x;
      n.colwise() += b.tail(H);
      n = n.array().tanh().matrix();
      const auto z = a.middleRows(0, H).array();
      tr.h[t + 1].array() = (1.0 - z) * n.array() + z * h.array();
      break;
    }
    case Arch::simple: {
      a.noalias() = U * h;
      a.noalias() += W * x;
      a.colwise() += b;
      a = a.array().tanh().matrix();
      tr.h[t + 1] = a;
      break;
    }
  }
}

// Gradient views over a flat vector laid out like RnnWeights::params().
struct GradView {
  Eigen::Map<Eigen::VectorXd> W;
  Eigen::Map<Eigen::MatrixXd> U;
  Eigen::Map<Eigen::VectorXd> b;
  Eigen::Map<Eigen::VectorXd> w_out;
  double& b_out;

  GradView(const RnnWeights& w, std::vector<double>& g)
      : W(g.data(), w.gates() * w.hidden()),
        U(g.data() + w.recurrent_offset(), w.gates() * w.hidden(), w.hidden()),
        b(g.data() + w.bias_offset(), w.gates() * w.hidden()),
        w_out(g.data() + w.readout_offset(), w.hidden()),
        b_out(g.back()) {}
};

struct Scratch {
  Eigen::MatrixXd da;
  Eigen::MatrixXd dh;
  Eigen::MatrixXd dc;
  Eigen::MatrixXd tmp;
  Eigen::MatrixXd hidden;
};

// On entry dh/dc hold dL/dh[t+1], dL/dc[t+1]; on exit dL/dh[t], dL/dc[t].
void backward_step(const RnnWeights& w, const Trace& tr, std::size_t t, Scratch& s, GradView& g) {
  const int H = w.hidden();
  const auto U = w.recurrent_weights();
  const auto x = tr.x.row(static_cast<Eigen::Index>(t));
  const auto& a = tr.act[t];
  const auto& h = tr.h[t];
  auto& da = s.da;
  da.resize(a.rows(), a.cols());

  switch (w.arch()) {
    case Arch::lstm: {
      const auto i = a.middleRows(0, H).array();
      const auto f = a.middleRows(H, H).array();
      const auto o = a.middleRows(2 * H, H).array();
      const auto gc = a.middleRows(3 * H, H).array();
      const auto tc = tr.aux[t].array();
      s.dc.array() += s.dh.array() * o * (1.0 - tc * tc);
      da.middleRows(0, H).array() = s.dc.array() * gc * i * (1.0 - i);
      da.middleRows(H, H).array() = s.dc.array() * tr.c[t].array() * f * (1.0 - f);
      da.middleRows(2 * H, H).array() = s.dh.array() * tc * o * (1.0 - o);
      da.middleRows(3 * H, H).array() = s.dc.array() * i * (1.0 - gc * gc);
      s.dc.array() *= f;
      g.W.noalias() += da * x.transpose();
      g.U.noalias() += da * h.transpose();
      g.b += da.rowwise().sum();
      s.dh.noalias() = U.transpose() * da;
      break;
    }
    case Arch::gru: {
      const auto z = a.middleRows(0, H).array();
      const auto r = a.middleRows(H, H).array();
      const auto n = a.middleRows(2 * H, H).array();
      const auto hp = h.array();
      da.middleRows(2 * H, H).array() = s.dh.array() * (1.0 - z) * (1.0 - n * n);
      da.middleRows(0, H).array() = s.dh.array() * (hp - n) * z * (1.0 - z);
      s.tmp.noalias() = U.bottomRows(H).transpose() * da.bottomRows(H);  // dL/d(r (.) h[t])
      da.middleRows(H, H).array() = s.tmp.array() * hp * r * (1.0 - r);
      g.W.noalias() += da * x.transpose();
      g.b += da.rowwise().sum();
      g.U.topRows(2 * H).noalias() += da.topRows(2 * H) * h.transpose();
      g.U.bottomRows(H).noalias() += da.bottomRows(H) * tr.aux[t].transpose();
      s.dh.array() = s.dh.array() * z + s.tmp.array() * r;
      s.dh.noalias() += U.topRows(2 * H).transpose() * da.topRows(2 * H);
      break;
    }
    case Arch::simple: {
      const auto hn = tr.h[t + 1].array();
      da.array() = s.dh.array() * (1.0 - hn * hn);
      g.W.noalias() += da * x.transpose();
      g.U.noalias() += da * h.transpose();
      g.b += da.rowwise().sum();
      s.dh.noalias() = U.transpose() * da;
      break;
    }
  }
}

struct BatchStats {
  double squared = 0.0;
  double absolute = 0.0;
};

// Runs the windows held in tr.x (steps x S) from tr.h[0] / tr.c[0], reads each
// sequence's output after its last step and back-propagates the scaled squared
// error through the whole window. `masks` (H x S) scales the readout input.
BatchStats run_batch(const RnnWeights& w, Trace& tr, std::span<const double> targets, const Eigen::MatrixXd* masks,
                     double loss_scale, std::vector<double>& grad, Scratch& s) {
  const std::size_t T = tr.steps();
  for (std::size_t t = 0; t < T; ++t) forward_step(w, tr, t);

  GradView g(w, grad);
  const auto w_out = w.readout_weights();
  s.hidden = tr.h[T];
  if (masks) s.hidden.array() *= masks->array();
  const Eigen::Map<const Eigen::RowVectorXd> y_true(targets.data(), static_cast<Eigen::Index>(targets.size()));
  const Eigen::RowVectorXd e = (w_out.transpose() * s.hidden).array() + w.readout_bias() - y_true.array();

  BatchStats stats{e.squaredNorm(), e.cwiseAbs().sum()};
  const Eigen::RowVectorXd dy = loss_scale * e;
  g.w_out.noalias() += s.hidden * dy.transpose();
  g.b_out += dy.sum();
  s.dh.noalias() = w_out * dy;
  if (masks) s.dh.array() *= masks->array();
  s.dc.setZero(s.dh.rows(), s.dh.cols());
  for (std::size_t t = T; t-- > 0;) backward_step(w, tr, t, s, g);
  return stats;
}

struct Adam {
  std::vector<double> m, v;
  long step = 0;

  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void update(std::span<double> params, std::span<const double> grad, const Hyperparams& hp) {
    ++step;
    const double c1 = 1.0 - std::pow(hp.adam_beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(hp.adam_beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = hp.adam_beta1 * m[i] + (1.0 - hp.adam_beta1) * grad[i];
      v[i] = hp.adam_beta2 * v[i] + (1.0 - hp.adam_beta2) * grad[i] * grad[i];
      params[i] -= hp.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + hp.adam_eps);
    }
  }
};

// Single-step inference on a rolling one-step trace.
class Stepper {
 public:
  explicit Stepper(const RnnWeights& w) : w_(&w) { reset(); }

  void reset() { tr_.reset(*w_, 1, 1); }

  double step(double x) {
    tr_.x(0, 0) = x;
    forward_step(*w_, tr_, 0);
    tr_.h[0] = tr_.h[1];
    if (w_->arch() == Arch::lstm) tr_.c[0] = tr_.c[1];
    return w_->readout_weights().dot(tr_.h[1].col(0)) + w_->readout_bias();
  }

 private:
  const RnnWeights* w_;
  Trace tr_;
};

double window_prediction(const RnnWeights& w, std::span<const double> window) {
  Stepper st(w);
  double y = 0.0;
  for (double x : window) y = st.step(x);
  return y;
}

}  // namespace

CellState cell_forward(double x, const CellState& prev, const RnnWeights& w) {
  Trace tr;
  tr.reset(w, 1, 1);
  tr.x(0, 0) = x;
  tr.h[0].col(0) = prev.h;
  if (w.arch() == Arch::lstm) tr.c[0].col(0) = prev.c;
  forward_step(w, tr, 0);
  CellState out;
  out.h = tr.h[1].col(0);
  if (w.arch() == Arch::lstm) out.c = tr.c[1].col(0);
  return out;
}

CellState lstm_cell_forward(double x, const CellState& prev, const RnnWeights& w) {
  if (w.arch() != Arch::lstm) throw ContractError("lstm_cell_forward needs LSTM weights");
  if (!std::isfinite(x) || !prev.h.allFinite() || !prev.c.allFinite()) {
    throw NumericError("lstm_cell_forward: non-finite input");
  }
  return cell_forward(x, prev, w);
}

double readout(const RnnWeights& w, const Eigen::VectorXd& h) {
  return w.readout_weights().dot(h) + w.readout_bias();
}

// ---------------------------------------------------------------------------
// Data preparation

void validate(const Hyperparams& h) {
  if (h.epochs < 1 || h.neurons < 1 || h.batch_size < 1 || h.lookback < 1) {
    throw ContractError("hyperparams: epochs, neurons, batch_size and lookback must be positive");
  }
  if (!(h.dropout_rate >= 0.0 && h.dropout_rate < 1.0)) throw ContractError("hyperparams: dropout must be in [0, 1)");
  if (!(h.learning_rate > 0.0) || !(h.adam_eps > 0.0)) {
    throw ContractError("hyperparams: learning rate and epsilon must be positive");
  }
  if (!(h.adam_beta1 > 0.0 && h.adam_beta1 < 1.0 && h.adam_beta2 > 0.0 && h.adam_beta2 < 1.0)) {
    throw ContractError("hyperparams: ADAM betas must be in (0, 1)");
  }
}

Normalization Normalization::fit(std::span<const double> values) {
  if (values.empty()) throw ContractError("cannot fit a normalization on no data");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  Normalization n{*lo, *hi};
  if (!(n.max > n.min)) n.max = n.min + 1.0;
  return n;
}

SupervisedSplit prepare_supervised(const TimeSeries& series, int lookback, std::size_t train_n, std::size_t test_n) {
  if (lookback < 1) throw ContractError("lookback must be >= 1");
  const auto L = static_cast<std::size_t>(lookback);
  if (train_n + test_n > series.size()) {
    throw ContractError(fmt::format("split {}+{} exceeds series length {}", train_n, test_n, series.size()));
  }
  if (train_n <= L) throw ContractError("training split must be longer than the lookback");
  validate(series);

  SupervisedSplit out;
  out.normalization = Normalization::fit(series.view().first(train_n));
  auto norm = [&](std::size_t first, std::size_t last) {
    std::vector<double> v;
    v.reserve(last - first);
    for (std::size_t i = first; i < last; ++i) v.push_back(out.normalization.normalize(series.values[i]));
    return v;
  };
  out.train = SupervisedSet{norm(0, train_n), lookback};
  out.test = SupervisedSet{norm(train_n - L, train_n + test_n), lookback};
  return out;
}

// ---------------------------------------------------------------------------
// Training and inference

std::vector<double> predict_normalized(const RnnModel& model, std::span<const double> stream) {
  const auto L = static_cast<std::size_t>(model.hyper.lookback);
  std::vector<double> out;
  if (stream.size() <= L) return out;
  out.reserve(stream.size() - L);
  if (model.hyper.stateful) {
    Stepper st(model.weights);
    for (std::size_t t = 0; t + 1 < stream.size(); ++t) {
      const double y = st.step(stream[t]);
      if (t + 1 >= L) out.push_back(y);
    }
  } else {
    for (std::size_t t = L; t < stream.size(); ++t) out.push_back(window_prediction(model.weights, stream.subspan(t - L, L)));
  }
  return out;
}

RnnModel train_rnn(const SupervisedSet& train, Arch arch, const Hyperparams& hp, Normalization normalization,
                   const SupervisedSet* validation) {
  validate(hp);
  if (train.lookback != hp.lookback) throw ContractError("training set lookback differs from hyperparams");
  const std::size_t P = train.size();
  if (P == 0) throw ContractError("train_rnn: no training pairs");
  for (double v : train.stream) {
    if (!std::isfinite(v)) throw ContractError("train_rnn: non-finite training value");
  }

  RnnModel model{RnnWeights::glorot(arch, hp.neurons, derive_seed(hp.rng_seed, {1})), hp, normalization, {}, {}};
  auto& w = model.weights;
  const int H = hp.neurons;
  const auto L = static_cast<std::size_t>(hp.lookback);
  const auto B = static_cast<std::size_t>(hp.batch_size);

  std::mt19937_64 rng(derive_seed(hp.rng_seed, {2}));
  std::bernoulli_distribution keep(1.0 - hp.dropout_rate);
  const double keep_scale = 1.0 / (1.0 - hp.dropout_rate);

  Adam adam(w.size());
  std::vector<double> grad(w.size());
  Trace tr;
  Scratch scratch;
  Eigen::MatrixXd masks;
  std::vector<double> targets;

  auto draw_masks = [&](Eigen::Index seqs) -> const Eigen::MatrixXd* {
    if (hp.dropout_rate <= 0.0) return nullptr;
    masks.resize(H, seqs);
    for (Eigen::Index j = 0; j < seqs; ++j) {
      for (int i = 0; i < H; ++i) masks(i, j) = keep(rng) ? keep_scale : 0.0;
    }
    return &masks;
  };
  // Loads pairs `ks` into the trace; returns the loss sums of one ADAM step.
  auto step = [&](std::span<const std::size_t> ks, const Eigen::MatrixXd* h0, const Eigen::MatrixXd* c0) {
    const auto n = static_cast<Eigen::Index>(ks.size());
    tr.reset(w, L, n);
    targets.resize(ks.size());
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto win = train.window(ks[static_cast<std::size_t>(j)]);
      for (std::size_t t = 0; t < L; ++t) tr.x(static_cast<Eigen::Index>(t), j) = win[t];
      targets[static_cast<std::size_t>(j)] = train.target(ks[static_cast<std::size_t>(j)]);
    }
    if (h0) tr.h[0] = *h0;
    if (c0) tr.c[0] = *c0;
    std::fill(grad.begin(), grad.end(), 0.0);
    const auto* m = draw_masks(n);
    const auto r = run_batch(w, tr, targets, m, 2.0 / static_cast<double>(n), grad, scratch);
    adam.update(w.params(), grad, hp);
    return r;
  };

  // Stateful: the pairs form S contiguous streams and batch t holds pair t of
  // every stream, so the state carries exactly from batch to batch.
  const std::size_t S = std::min(B, P);
  auto stream_first = [&](std::size_t st) { return st * P / S; };
  const std::size_t longest = P - stream_first(S - 1);
  const bool lstm = arch == Arch::lstm;
  Eigen::MatrixXd carried_h, carried_c, h0, c0;
  std::vector<std::size_t> ks, active;
  std::vector<std::size_t> order(hp.stateful ? 0 : P);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    double abs_sum = 0.0;
    double sq_sum = 0.0;

    if (hp.stateful) {
      carried_h.setZero(H, static_cast<Eigen::Index>(S));
      if (lstm) carried_c.setZero(H, static_cast<Eigen::Index>(S));
      for (std::size_t t = 0; t < longest; ++t) {
        ks.clear();
        active.clear();
        for (std::size_t st = 0; st < S; ++st) {
          if (stream_first(st) + t < stream_first(st + 1)) ks.push_back(stream_first(st) + t), active.push_back(st);
        }
        const bool all = active.size() == S;
        if (!all) {
          h0 = carried_h(Eigen::all, active);
          if (lstm) c0 = carried_c(Eigen::all, active);
        }
        const auto r = step(ks, all ? &carried_h : &h0, lstm ? (all ? &carried_c : &c0) : nullptr);
        for (std::size_t j = 0; j < active.size(); ++j) {
          const auto col = static_cast<Eigen::Index>(active[j]);
          carried_h.col(col) = tr.h[1].col(static_cast<Eigen::Index>(j));
          if (lstm) carried_c.col(col) = tr.c[1].col(static_cast<Eigen::Index>(j));
        }
        abs_sum += r.absolute;
        sq_sum += r.squared;
      }
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t first = 0; first < P; first += B) {
        const auto r = step(std::span<const std::size_t>(order).subspan(first, std::min(B, P - first)), nullptr, nullptr);
        abs_sum += r.absolute;
        sq_sum += r.squared;
      }
    }

    if (!std::isfinite(sq_sum) || !std::all_of(w.params().begin(), w.params().end(),
                                               [](double v) { return std::isfinite(v); })) {
      throw TrainingError(epoch, "training loss diverged (non-finite)");
    }
    model.train_mae.push_back(abs_sum / static_cast<double>(P));
    if (validation && validation->size() > 0) {
      const auto pred = predict_normalized(model, validation->stream);
      double mae = 0.0;
      for (std::size_t k = 0; k < pred.size(); ++k) mae += std::abs(pred[k] - validation->target(k));
      model.validation_mae.push_back(mae / static_cast<double>(pred.size()));
    }
  }
  return model;
}

TimeSeries predict_series(const RnnModel& model, const TimeSeries& series) {
  const auto L = static_cast<std::size_t>(model.hyper.lookback);
  if (series.size() <= L) throw ContractError("predict_series: series must be longer than the lookback");
  std::vector<double> stream(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!std::isfinite(series.values[i])) throw ContractError(fmt::format("predict_series: non-finite input at {}", i));
    stream[i] = model.normalization.normalize(series.values[i]);
  }
  auto pred = predict_normalized(model, stream);
  for (double& p : pred) p = model.normalization.denormalize(p);
  return series.with_values(std::move(pred));
}

StreamingPredictor::StreamingPredictor(const RnnModel& model)
    : model_(&model), state_(CellState::zeros(model.arch(), model.weights.hidden())) {}

std::optional<double> StreamingPredictor::push(double value) {
  if (!std::isfinite(value)) throw ContractError("StreamingPredictor: non-finite input");
  const double x = model_->normalization.normalize(value);
  const auto L = static_cast<std::size_t>(model_->hyper.lookback);
  ++seen_;
  double y = 0.0;
  if (model_->hyper.stateful) {
    state_ = cell_forward(x, state_, model_->weights);
    y = readout(model_->weights, state_.h);
  } else {
    window_.push_back(x);
    if (window_.size() > L) window_.erase(window_.begin());
    if (window_.size() == L) y = window_prediction(model_->weights, window_);
  }
  if (seen_ < L) return std::nullopt;
  return model_->normalization.denormalize(y);
}

// ---------------------------------------------------------------------------
// Gradient verification

double loss_and_gradient(const RnnWeights& w, std::span<const TrainingPair> batch, std::vector<double>& gradient) {
  if (batch.empty()) throw ContractError("loss_and_gradient: empty batch");
  const std::size_t L = batch.front().window.size();
  if (L == 0 || std::any_of(batch.begin(), batch.end(), [&](const auto& p) { return p.window.size() != L; })) {
    throw ContractError("loss_and_gradient: windows must be non-empty and of equal length");
  }
  gradient.assign(w.size(), 0.0);
  Trace tr;
  Scratch s;
  const auto n = static_cast<Eigen::Index>(batch.size());
  tr.reset(w, L, n);
  std::vector<double> targets(batch.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& pair = batch[static_cast<std::size_t>(j)];
    for (std::size_t t = 0; t < L; ++t) tr.x(static_cast<Eigen::Index>(t), j) = pair.window[t];
    targets[static_cast<std::size_t>(j)] = pair.target;
  }
  const auto st = run_batch(w, tr, targets, nullptr, 2.0 / static_cast<double>(n), gradient, s);
  return st.squared / static_cast<double>(n);
}

double gradient_check(const RnnWeights& w, std::span<const TrainingPair> batch, double eps) {
  std::vector<double> analytic;
  loss_and_gradient(w, batch, analytic);
  std::vector<double> unused;
  RnnWeights probe = w;
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double original = probe.params()[i];
    probe.params()[i] = original + eps;
    const double up = loss_and_gradient(probe, batch, unused);
    probe.params()[i] = original - eps;
    const double down = loss_and_gradient(probe, batch, unused);
    probe.params()[i] = original;
    const double fd = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[8] = {'C', 'V', 'F', 'R', 'N', 'N', '\0', '\x1a'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}
void put_u32(std::ostream& out, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 4);
}
void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
void put_i32(std::ostream& out, int v) { put_u32(out, static_cast<std::uint32_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw IoError("model file is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}
std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw IoError("model file is truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return v;
}
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }
int get_i32(std::istream& in) { return static_cast<int>(get_u32(in)); }

}  // namespace

void save_model(std::ostream& out, const RnnModel& m) {
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kFormatVersion);
  const auto tag = to_string(m.arch());
  put_u32(out, static_cast<std::uint32_t>(tag.size()));
  out.write(tag.data(), static_cast<std::streamsize>(tag.size()));
  put_i32(out, m.weights.hidden());
  const auto& h = m.hyper;
  put_i32(out, h.epochs);
  put_i32(out, h.neurons);
  put_i32(out, h.batch_size);
  put_i32(out, h.lookback);
  put_u32(out, h.stateful ? 1 : 0);
  put_f64(out, h.dropout_rate);
  put_f64(out, h.learning_rate);
  put_f64(out, h.adam_beta1);
  put_f64(out, h.adam_beta2);
  put_f64(out, h.adam_eps);
  put_u64(out, h.rng_seed);
  put_f64(out, m.normalization.min);
  put_f64(out, m.normalization.max);
  put_u64(out, m.weights.size());
  for (double v : m.weights.params()) put_f64(out, v);
  if (!out) throw IoError("failed to write model");
}

RnnModel load_model(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) throw IoError("not a cvflow model file");
  if (const auto version = get_u32(in); version != kFormatVersion) {
    throw IoError(fmt::format("unsupported model format version {}", version));
  }
  const auto tag_len = get_u32(in);
  if (tag_len > 16) throw IoError("corrupt architecture tag");
  std::string tag(tag_len, '\0');
  if (!in.read(tag.data(), tag_len)) throw IoError("model file is truncated");
  const Arch arch = arch_from_string(tag);
  const int hidden = get_i32(in);
  Hyperparams h;
  h.epochs = get_i32(in);
  h.neurons = get_i32(in);
  h.batch_size = get_i32(in);
  h.lookback = get_i32(in);
  h.stateful = get_u32(in) != 0;
  h.dropout_rate = get_f64(in);
  h.learning_rate = get_f64(in);
  h.adam_beta1 = get_f64(in);
  h.adam_beta2 = get_f64(in);
  h.adam_eps = get_f64(in);
  h.rng_seed = get_u64(in);
  Normalization norm{get_f64(in), get_f64(in)};
  RnnWeights w(arch, hidden);
  if (get_u64(in) != w.size()) throw IoError("weight count does not match the architecture");
  for (double& v : w.params()) v = get_f64(in);
  return RnnModel{std::move(w), h, norm, {}, {}};
}

}  // namespace cvflow
