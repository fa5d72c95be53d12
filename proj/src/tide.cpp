#include "dedmpc/tide.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "dedmpc/errors.hpp"

namespace dedmpc {

using Eigen::MatrixXd;
using nlohmann::json;

void TideConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(field, "must be at least 1");
  };
  positive(w, "model.w");
  positive(p, "model.p");
  positive(num_encoder_layers, "model.num_encoder_layers");
  positive(num_decoder_layers, "model.num_decoder_layers");
  positive(decoder_output_dim, "model.decoder_output_dim");
  positive(hidden_size, "model.hidden_size");
  positive(decoder_hidden_size, "model.decoder_hidden_size");
  positive(feature_projection_dim, "model.feature_projection_dim");
  if (target_channels != 1 && target_channels != 2) throw ConfigError("model.target_channels", "must be 1 or 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout", "must be in [0, 1)");
  if (quantiles.empty()) throw ConfigError("model.quantiles", "must not be empty");
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0)) throw ConfigError("model.quantiles", "values must lie in (0, 1)");
    if (i > 0 && !(quantiles[i] > quantiles[i - 1])) throw ConfigError("model.quantiles", "must be strictly increasing");
  }
  median_index();
}

int TideConfig::median_index() const {
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (quantiles[i] == 0.5) return static_cast<int>(i);
  }
  throw ConfigError("model.quantiles", "must contain 0.5");
}

namespace {

constexpr std::size_t kBlockParams = 8;  // W1 b1 W2 b2 Ws bs gain bias

ChannelStats identity_stats(int channels) {
  ChannelStats s;
  s.mean.assign(static_cast<std::size_t>(channels), 0.0);
  s.std.assign(static_cast<std::size_t>(channels), 1.0);
  return s;
}

void check_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw ContractError(std::string(what) + ": non-finite input");
}

}  // namespace

TideModel::TideModel(const TideConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  target_stats_ = identity_stats(cfg_.target_channels);
  covariate_stats_ = identity_stats(kCovariateChannels);
  build_layout();

  std::mt19937_64 rng(seed);
  auto glorot = [&](int in, int out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    MatrixXd m(in, out);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
    }
    return m;
  };
  auto init_block = [&](const ResidualBlockLayout& b) {
    params_[b.first + 0] = glorot(b.in, b.hidden);
    params_[b.first + 1] = MatrixXd::Zero(1, b.hidden);
    params_[b.first + 2] = glorot(b.hidden, b.out);
    params_[b.first + 3] = MatrixXd::Zero(1, b.out);
    params_[b.first + 4] = glorot(b.in, b.out);
    params_[b.first + 5] = MatrixXd::Zero(1, b.out);
    params_[b.first + 6] = MatrixXd::Ones(1, b.out);
    params_[b.first + 7] = MatrixXd::Zero(1, b.out);
  };
  init_block(projection_);
  for (const auto& b : encoder_) init_block(b);
  for (const auto& b : decoder_) init_block(b);
  init_block(temporal_);
  const int out = cfg_.p * cfg_.target_channels * cfg_.num_quantiles();
  params_[skip_] = glorot(cfg_.w * cfg_.target_channels, out);
  params_[skip_ + 1] = MatrixXd::Zero(1, out);
  zero_gradients();
}

void TideModel::build_layout() {
  std::size_t next = 0;
  auto add = [&](int in, int hidden, int out) {
    ResidualBlockLayout b{in, hidden, out, next};
    next += kBlockParams;
    return b;
  };
  const int proj = cfg_.feature_projection_dim;
  projection_ = add(kCovariateChannels, cfg_.hidden_size, proj);
  encoder_.clear();
  decoder_.clear();
  int width = cfg_.w * cfg_.target_channels + cfg_.steps() * proj;
  for (int i = 0; i < cfg_.num_encoder_layers; ++i) {
    encoder_.push_back(add(width, cfg_.hidden_size, cfg_.hidden_size));
    width = cfg_.hidden_size;
  }
  for (int i = 0; i < cfg_.num_decoder_layers; ++i) {
    const bool last = i + 1 == cfg_.num_decoder_layers;
    const int out = last ? cfg_.p * cfg_.decoder_output_dim : cfg_.hidden_size;
    decoder_.push_back(add(width, cfg_.hidden_size, out));
    width = out;
  }
  temporal_ = add(cfg_.decoder_output_dim + proj, cfg_.decoder_hidden_size,
                  cfg_.target_channels * cfg_.num_quantiles());
  skip_ = next;
  next += 2;
  params_.assign(next, MatrixXd());
}

void TideModel::set_normalization(const ChannelStats& targets, const ChannelStats& covariates) {
  auto take = [](const ChannelStats& s, int channels, const char* what) {
    if (s.mean.size() < static_cast<std::size_t>(channels) || s.std.size() < static_cast<std::size_t>(channels)) {
      throw ContractError(std::string(what) + ": too few channels in normalization stats");
    }
    ChannelStats out;
    out.mean.assign(s.mean.begin(), s.mean.begin() + channels);
    out.std.assign(s.std.begin(), s.std.begin() + channels);
    for (double& v : out.std) {
      if (!(v > 1e-8) || !std::isfinite(v)) v = 1.0;
    }
    return out;
  };
  target_stats_ = take(targets, cfg_.target_channels, "targets");
  covariate_stats_ = take(covariates, kCovariateChannels, "covariates");
}

void TideModel::zero_gradients() {
  grads_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) grads_[i] = MatrixXd::Zero(params_[i].rows(), params_[i].cols());
}

std::size_t TideModel::num_weights() const {
  std::size_t n = 0;
  for (const auto& m : params_) n += static_cast<std::size_t>(m.size());
  return n;
}

TideBatch TideModel::make_batch(const MatrixXd& past_targets, const MatrixXd& past_covariates,
                                const MatrixXd& future_covariates) const {
  const int C = cfg_.target_channels;
  if (past_targets.rows() != cfg_.w || past_targets.cols() < C || past_covariates.rows() != cfg_.w ||
      past_covariates.cols() != kCovariateChannels || future_covariates.rows() != cfg_.p ||
      future_covariates.cols() != kCovariateChannels) {
    throw ContractError("tide: input shapes do not match (w, p) and channel counts");
  }
  check_finite(past_targets, "past targets");
  check_finite(past_covariates, "past covariates");
  check_finite(future_covariates, "future covariates");
  TideBatch b;
  b.size = 1;
  b.past_targets.resize(1, cfg_.w * C);
  for (int t = 0; t < cfg_.w; ++t) {
    for (int c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      b.past_targets(0, t * C + c) = (past_targets(t, c) - target_stats_.mean[k]) / target_stats_.std[k];
    }
  }
  b.covariates.resize(cfg_.steps(), kCovariateChannels);
  for (int t = 0; t < cfg_.steps(); ++t) {
    const auto& src = t < cfg_.w ? past_covariates : future_covariates;
    const int r = t < cfg_.w ? t : t - cfg_.w;
    for (int c = 0; c < kCovariateChannels; ++c) {
      const auto k = static_cast<std::size_t>(c);
      b.covariates(t, c) = (src(r, c) - covariate_stats_.mean[k]) / covariate_stats_.std[k];
    }
  }
  return b;
}

TideBatch TideModel::make_batch(const std::vector<const SeriesSegment*>& segments) const {
  const int C = cfg_.target_channels;
  const int n = static_cast<int>(segments.size());
  TideBatch out;
  out.size = n;
  out.past_targets.resize(n, cfg_.w * C);
  out.covariates.resize(static_cast<Eigen::Index>(n) * cfg_.steps(), kCovariateChannels);
  out.future_targets.resize(n, cfg_.p * C);
  for (int b = 0; b < n; ++b) {
    const SeriesSegment& s = *segments[static_cast<std::size_t>(b)];
    TideBatch one = make_batch(s.past_targets, s.past_covariates, s.future_covariates);
    if (s.future_targets.rows() != cfg_.p || s.future_targets.cols() < C) {
      throw ContractError("tide: future target shape does not match p");
    }
    out.past_targets.row(b) = one.past_targets.row(0);
    out.covariates.middleRows(static_cast<Eigen::Index>(b) * cfg_.steps(), cfg_.steps()) = one.covariates;
    for (int i = 0; i < cfg_.p; ++i) {
      for (int c = 0; c < C; ++c) {
        const auto k = static_cast<std::size_t>(c);
        out.future_targets(b, i * C + c) = (s.future_targets(i, c) - target_stats_.mean[k]) / target_stats_.std[k];
      }
    }
  }
  return out;
}

ad::Var TideModel::param(ad::Tape& tape, std::size_t i, bool weight_grads) const {
  return tape.parameter(params_[i], weight_grads ? &grads_[i] : nullptr);
}

ad::Var TideModel::block(ad::Tape& tape, const ResidualBlockLayout& b, ad::Var x, bool training, bool weight_grads,
                         std::mt19937_64* rng) const {
  auto P = [&](std::size_t k) { return param(tape, b.first + k, weight_grads); };
  ad::Var h = tape.relu(tape.add_row(tape.matmul(x, P(0)), P(1)));
  ad::Var y = tape.add_row(tape.matmul(h, P(2)), P(3));
  if (training && cfg_.dropout > 0.0) {
    if (!rng) throw ContractError("tide: training forward needs a dropout generator");
    y = tape.dropout(y, cfg_.dropout, *rng);
  }
  ad::Var skip = tape.add_row(tape.matmul(x, P(4)), P(5));
  ad::Var sum = tape.add(y, skip);
  if (!cfg_.layer_norm) return sum;
  return tape.layer_norm(sum, P(6), P(7));
}

ad::Var TideModel::record(ad::Tape& tape, ad::Var past_targets, ad::Var covariates, int batch, bool training,
                          bool weight_grads, std::mt19937_64* rng) const {
  ++forward_calls_;
  const int T = cfg_.steps();
  if (tape.value(covariates).rows() != static_cast<Eigen::Index>(batch) * T ||
      tape.value(past_targets).rows() != batch) {
    throw ContractError("tide: batch shape mismatch");
  }
  ad::Var proj = block(tape, projection_, covariates, training, weight_grads, rng);
  ad::Var enc = tape.concat_cols(past_targets, tape.fold_rows(proj, T));
  for (const auto& b : encoder_) enc = block(tape, b, enc, training, weight_grads, rng);
  ad::Var dec = enc;
  for (const auto& b : decoder_) dec = block(tape, b, dec, training, weight_grads, rng);
  ad::Var steps = tape.unfold_rows(dec, cfg_.p);
  ad::Var future_proj = tape.slice_groups(proj, T, cfg_.w, cfg_.p);
  ad::Var td = block(tape, temporal_, tape.concat_cols(steps, future_proj), training, weight_grads, rng);
  ad::Var local = tape.fold_rows(td, cfg_.p);
  ad::Var skip = tape.add_row(tape.matmul(past_targets, param(tape, skip_, weight_grads)),
                              param(tape, skip_ + 1, weight_grads));
  return tape.add(local, skip);
}

Forecast TideModel::denormalize(const MatrixXd& normalized_row) const {
  const int C = cfg_.target_channels;
  const int nq = cfg_.num_quantiles();
  Forecast f;
  f.channels = C;
  f.quantiles = nq;
  f.values.resize(cfg_.p, C * nq);
  for (int i = 0; i < cfg_.p; ++i) {
    for (int c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      for (int q = 0; q < nq; ++q) {
        f.values(i, c * nq + q) =
            normalized_row(0, (i * C + c) * nq + q) * target_stats_.std[k] + target_stats_.mean[k];
      }
    }
  }
  return f;
}

Forecast TideModel::forward(const MatrixXd& past_targets, const MatrixXd& past_covariates,
                            const MatrixXd& future_covariates, bool training, std::mt19937_64* rng) const {
  TideBatch b = make_batch(past_targets, past_covariates, future_covariates);
  ad::Tape tape;
  ad::Var out = record(tape, tape.input(std::move(b.past_targets)), tape.input(std::move(b.covariates)), 1, training,
                       false, rng);
  return denormalize(tape.value(out));
}

MatrixXd TideModel::predict_median(const MatrixXd& past_targets, const MatrixXd& past_covariates,
                                   const MatrixXd& future_covariates) const {
  const Forecast f = forward(past_targets, past_covariates, future_covariates, false);
  const int m = cfg_.median_index();
  MatrixXd out(cfg_.p, cfg_.target_channels);
  for (int i = 0; i < cfg_.p; ++i) {
    for (int c = 0; c < cfg_.target_channels; ++c) out(i, c) = f.at(i, c, m);
  }
  return out;
}

namespace {

void check_quantile_shapes(const MatrixXd& y_true, const MatrixXd& y_pred, std::size_t nq) {
  if (nq == 0 || y_true.rows() != y_pred.rows() ||
      y_pred.cols() != y_true.cols() * static_cast<Eigen::Index>(nq)) {
    throw ContractError("quantile_loss: shape mismatch");
  }
}

}  // namespace

double quantile_loss(const MatrixXd& y_true, const MatrixXd& y_pred, const std::vector<double>& quantiles) {
  const std::size_t nq = quantiles.size();
  check_quantile_shapes(y_true, y_pred, nq);
  double sum = 0.0;
  for (Eigen::Index r = 0; r < y_pred.rows(); ++r) {
    for (Eigen::Index j = 0; j < y_pred.cols(); ++j) {
      const double q = quantiles[static_cast<std::size_t>(j) % nq];
      const double e = y_true(r, j / static_cast<Eigen::Index>(nq)) - y_pred(r, j);
      sum += std::max(q * e, (q - 1.0) * e);
    }
  }
  return sum / static_cast<double>(y_pred.size());
}

double TideModel::batch_loss(const TideBatch& batch, bool training, bool weight_grads, std::mt19937_64* rng) const {
  ad::Tape tape;
  ad::Var out = record(tape, tape.input(batch.past_targets), tape.input(batch.covariates), batch.size, training,
                       weight_grads, rng);
  const MatrixXd& pred = tape.value(out);
  const double loss = quantile_loss(batch.future_targets, pred, cfg_.quantiles);
  if (!weight_grads) return loss;

  const auto nq = static_cast<Eigen::Index>(cfg_.quantiles.size());
  MatrixXd seed(pred.rows(), pred.cols());
  const double scale = 1.0 / static_cast<double>(pred.size());
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      const double q = cfg_.quantiles[static_cast<std::size_t>(j % nq)];
      const double e = batch.future_targets(r, j / nq) - pred(r, j);
      const double d = e > 0.0 ? -q : (e < 0.0 ? 1.0 - q : 0.5 - q);
      seed(r, j) = d * scale;
    }
  }
  tape.backward(out, seed);
  return loss;
}

TideSession::TideSession(const TideModel& model, const MatrixXd& past_targets, const MatrixXd& past_covariates,
                         const MatrixXd& future_covariates)
    : model_(model) {
  TideBatch b = model.make_batch(past_targets, past_covariates, future_covariates);
  past_ = tape_.input(std::move(b.past_targets), true);
  covs_ = tape_.input(std::move(b.covariates), true);
  out_ = model.record(tape_, past_, covs_, 1, false, false, nullptr);
  forecast_ = model.denormalize(tape_.value(out_));
}

MatrixXd TideSession::median() const {
  const TideConfig& cfg = model_.config();
  const int m = cfg.median_index();
  MatrixXd out(cfg.p, cfg.target_channels);
  for (int i = 0; i < cfg.p; ++i) {
    for (int c = 0; c < cfg.target_channels; ++c) out(i, c) = forecast_.at(i, c, m);
  }
  return out;
}

TideSession::InputGradients TideSession::backward(const MatrixXd& seed) {
  const TideConfig& cfg = model_.config();
  const int C = cfg.target_channels;
  const int nq = cfg.num_quantiles();
  if (seed.rows() != cfg.p || seed.cols() != C * nq) throw ContractError("tide: seed shape mismatch");
  MatrixXd norm_seed(1, cfg.p * C * nq);
  for (int i = 0; i < cfg.p; ++i) {
    for (int c = 0; c < C; ++c) {
      for (int q = 0; q < nq; ++q) {
        norm_seed(0, (i * C + c) * nq + q) = seed(i, c * nq + q) * model_.target_stats().std[static_cast<std::size_t>(c)];
      }
    }
  }
  tape_.backward(out_, norm_seed);

  InputGradients g;
  const MatrixXd& gp = tape_.grad(past_);
  const MatrixXd& gc = tape_.grad(covs_);
  g.past_targets = MatrixXd::Zero(cfg.w, C);
  g.past_covariates = MatrixXd::Zero(cfg.w, kCovariateChannels);
  g.future_covariates = MatrixXd::Zero(cfg.p, kCovariateChannels);
  if (gp.size()) {
    for (int t = 0; t < cfg.w; ++t) {
      for (int c = 0; c < C; ++c) {
        g.past_targets(t, c) = gp(0, t * C + c) / model_.target_stats().std[static_cast<std::size_t>(c)];
      }
    }
  }
  if (gc.size()) {
    for (int t = 0; t < cfg.steps(); ++t) {
      for (int c = 0; c < kCovariateChannels; ++c) {
        const double v = gc(t, c) / model_.covariate_stats().std[static_cast<std::size_t>(c)];
        if (t < cfg.w) {
          g.past_covariates(t, c) = v;
        } else {
          g.future_covariates(t - cfg.w, c) = v;
        }
      }
    }
  }
  return g;
}

TideSession::InputGradients TideSession::backward_median(const MatrixXd& median_seed) {
  const TideConfig& cfg = model_.config();
  if (median_seed.rows() != cfg.p || median_seed.cols() != cfg.target_channels) {
    throw ContractError("tide: median seed shape mismatch");
  }
  const int nq = cfg.num_quantiles();
  const int m = cfg.median_index();
  MatrixXd seed = MatrixXd::Zero(cfg.p, cfg.target_channels * nq);
  for (int c = 0; c < cfg.target_channels; ++c) seed.col(c * nq + m) = median_seed.col(c);
  return backward(seed);
}

// ---------------------------------------------------------------------------
// Training

double TrainSchedule::rate_at(int epoch) const {
  const int steps = decay_every > 0 ? epoch / decay_every : 0;
  return learning_rate * std::pow(decay, steps);
}

namespace {

std::vector<const SeriesSegment*> pointers(const std::vector<SeriesSegment>& segs, const std::vector<std::size_t>& idx,
                                           std::size_t begin, std::size_t end) {
  std::vector<const SeriesSegment*> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(&segs[idx[i]]);
  return out;
}

constexpr std::size_t kEvalBatch = 256;

}  // namespace

double evaluate_loss(const TideModel& model, const std::vector<SeriesSegment>& segments) {
  if (segments.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> idx(segments.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double sum = 0.0;
  for (std::size_t b = 0; b < segments.size(); b += kEvalBatch) {
    const std::size_t e = std::min(segments.size(), b + kEvalBatch);
    const TideBatch batch = model.make_batch(pointers(segments, idx, b, e));
    sum += model.batch_loss(batch, false, false, nullptr) * static_cast<double>(e - b);
  }
  return sum / static_cast<double>(segments.size());
}

TrainResult train(TideModel& model, const Dataset& dataset, const TrainSchedule& schedule,
                  const EpochCallback& on_epoch) {
  if (dataset.train.empty()) throw TrainingError("training set is empty");
  if (dataset.w != model.config().w || dataset.p != model.config().p) {
    throw ContractError("train: dataset (w, p) does not match the model");
  }
  if (schedule.epochs < 0 || schedule.batch_size < 1) throw ContractError("train: invalid schedule");
  model.set_normalization(dataset.target_stats, dataset.covariate_stats);

  auto& params = model.parameters();
  std::vector<MatrixXd> m1(params.size());
  std::vector<MatrixXd> m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i] = MatrixXd::Zero(params[i].rows(), params[i].cols());
    m2[i] = MatrixXd::Zero(params[i].rows(), params[i].cols());
  }
  std::mt19937_64 shuffle_rng(schedule.seed);
  std::mt19937_64 dropout_rng(schedule.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  result.best_validation_loss = std::numeric_limits<double>::infinity();
  std::vector<MatrixXd> best = params;
  long long adam_step = 0;
  const auto batch_size = static_cast<std::size_t>(schedule.batch_size);

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = schedule.rate_at(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += batch_size, ++batch_index) {
      const std::size_t e = std::min(order.size(), b + batch_size);
      const TideBatch batch = model.make_batch(pointers(dataset.train, order, b, e));
      model.zero_gradients();
      const double loss = model.batch_loss(batch, true, true, &dropout_rng);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batch_index));
      }
      loss_sum += loss * static_cast<double>(e - b);
      ++adam_step;
      const double c1 = 1.0 - std::pow(schedule.beta1, static_cast<double>(adam_step));
      const double c2 = 1.0 - std::pow(schedule.beta2, static_cast<double>(adam_step));
      auto& grads = model.gradients();
      for (std::size_t i = 0; i < params.size(); ++i) {
        const MatrixXd g = grads[i] + schedule.l2 * params[i];
        m1[i] = schedule.beta1 * m1[i] + (1.0 - schedule.beta1) * g;
        m2[i] = schedule.beta2 * m2[i] + (1.0 - schedule.beta2) * g.cwiseProduct(g);
        params[i].array() -= lr * (m1[i].array() / c1) / ((m2[i].array() / c2).sqrt() + schedule.epsilon);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.learning_rate = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.validation_loss = dataset.validation.empty() ? evaluate_loss(model, dataset.train)
                                                     : evaluate_loss(model, dataset.validation);
    if (!std::isfinite(rec.validation_loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch + 1));
    }
    if (rec.validation_loss < result.best_validation_loss) {
      result.best_validation_loss = rec.validation_loss;
      result.best_epoch = rec.epoch;
      best = params;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (schedule.epochs > 0) params = best;
  model.zero_gradients();
  return result;
}

ForecastAccuracy evaluate_accuracy(const TideModel& model, const std::vector<SeriesSegment>& segments,
                                   double depth_floor) {
  const TideConfig& cfg = model.config();
  const int C = cfg.target_channels;
  const int nq = cfg.num_quantiles();
  const int m = cfg.median_index();
  ForecastAccuracy acc;
  double temp_sum = 0.0;
  double depth_sum = 0.0;
  std::size_t temp_n = 0;
  std::size_t crossings = 0;
  std::size_t pairs = 0;
  std::vector<std::size_t> idx(segments.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t b = 0; b < segments.size(); b += kEvalBatch) {
    const std::size_t e = std::min(segments.size(), b + kEvalBatch);
    const TideBatch batch = model.make_batch(pointers(segments, idx, b, e));
    ad::Tape tape;
    ad::Var out = model.record(tape, tape.input(batch.past_targets), tape.input(batch.covariates), batch.size, false,
                               false, nullptr);
    const MatrixXd& pred = tape.value(out);
    for (std::size_t s = b; s < e; ++s) {
      const Forecast f = model.denormalize(pred.row(static_cast<Eigen::Index>(s - b)));
      const MatrixXd& truth = segments[s].future_targets;
      for (int i = 0; i < cfg.p; ++i) {
        temp_sum += std::abs(f.at(i, 0, m) - truth(i, 0)) / std::abs(truth(i, 0));
        ++temp_n;
        if (C > 1 && truth(i, 1) > depth_floor) {
          depth_sum += std::abs(f.at(i, 1, m) - truth(i, 1)) / std::abs(truth(i, 1));
          ++acc.depth_points;
        }
        for (int c = 0; c < C; ++c) {
          for (int q = 1; q < nq; ++q) {
            ++pairs;
            if (f.at(i, c, q) < f.at(i, c, q - 1)) ++crossings;
          }
        }
      }
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  acc.temperature_mape = temp_n ? temp_sum / static_cast<double>(temp_n) : nan;
  acc.depth_mape = acc.depth_points ? depth_sum / static_cast<double>(acc.depth_points) : nan;
  acc.quantile_crossing_rate = pairs ? static_cast<double>(crossings) / static_cast<double>(pairs) : 0.0;
  return acc;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kModelMagic[8] = {'D', 'M', 'P', 'C', 'T', 'I', 'D', 'E'};
constexpr std::uint32_t kModelVersion = 1;

json config_json(const TideConfig& c) {
  return json{{"w", c.w},
              {"p", c.p},
              {"num_encoder_layers", c.num_encoder_layers},
              {"num_decoder_layers", c.num_decoder_layers},
              {"decoder_output_dim", c.decoder_output_dim},
              {"hidden_size", c.hidden_size},
              {"decoder_hidden_size", c.decoder_hidden_size},
              {"dropout", c.dropout},
              {"layer_norm", c.layer_norm},
              {"feature_projection_dim", c.feature_projection_dim},
              {"quantiles", c.quantiles},
              {"target_channels", c.target_channels}};
}

TideConfig config_from_json(const json& j) {
  TideConfig c;
  c.w = j.at("w");
  c.p = j.at("p");
  c.num_encoder_layers = j.at("num_encoder_layers");
  c.num_decoder_layers = j.at("num_decoder_layers");
  c.decoder_output_dim = j.at("decoder_output_dim");
  c.hidden_size = j.at("hidden_size");
  c.decoder_hidden_size = j.at("decoder_hidden_size");
  c.dropout = j.at("dropout");
  c.layer_norm = j.at("layer_norm");
  c.feature_projection_dim = j.at("feature_projection_dim");
  c.quantiles = j.at("quantiles").get<std::vector<double>>();
  c.target_channels = j.at("target_channels");
  return c;
}

}  // namespace

void TideModel::save(const std::filesystem::path& weights_file, const std::filesystem::path& sidecar_file,
                     const std::string& training_metadata_json) const {
  std::ofstream out(weights_file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + weights_file.string());
  out.write(kModelMagic, sizeof kModelMagic);
  const std::uint32_t header[2] = {kModelVersion, static_cast<std::uint32_t>(params_.size())};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  for (const auto& m : params_) {
    const std::uint32_t shape[2] = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    out.write(reinterpret_cast<const char*>(shape), sizeof shape);
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing " + weights_file.string());

  json side;
  side["format_version"] = kModelVersion;
  side["config"] = config_json(cfg_);
  side["seed"] = seed_;
  side["target_stats"] = {{"mean", target_stats_.mean}, {"std", target_stats_.std}};
  side["covariate_stats"] = {{"mean", covariate_stats_.mean}, {"std", covariate_stats_.std}};
  side["training"] = json::parse(training_metadata_json);
  std::ofstream js(sidecar_file);
  if (!js) throw std::runtime_error("cannot write " + sidecar_file.string());
  js << side.dump(2) << '\n';
}

TideModel TideModel::load(const std::filesystem::path& weights_file, const std::filesystem::path& sidecar_file) {
  std::ifstream js(sidecar_file);
  if (!js) throw std::runtime_error("cannot read " + sidecar_file.string());
  const json side = json::parse(js);
  TideModel model(config_from_json(side.at("config")), side.at("seed").get<std::uint64_t>());
  ChannelStats ts{side.at("target_stats").at("mean").get<std::vector<double>>(),
                  side.at("target_stats").at("std").get<std::vector<double>>()};
  ChannelStats cs{side.at("covariate_stats").at("mean").get<std::vector<double>>(),
                  side.at("covariate_stats").at("std").get<std::vector<double>>()};
  model.set_normalization(ts, cs);

  std::ifstream in(weights_file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + weights_file.string());
  char magic[8];
  in.read(magic, sizeof magic);
  std::uint32_t header[2] = {0, 0};
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0 || header[0] != kModelVersion) {
    throw std::runtime_error(weights_file.string() + ": not a model file of a supported version");
  }
  if (header[1] != model.params_.size()) throw std::runtime_error(weights_file.string() + ": layout mismatch");
  for (auto& m : model.params_) {
    std::uint32_t shape[2];
    in.read(reinterpret_cast<char*>(shape), sizeof shape);
    if (!in || shape[0] != m.rows() || shape[1] != m.cols()) {
      throw std::runtime_error(weights_file.string() + ": weight shape mismatch");
    }
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error(weights_file.string() + ": truncated");
  model.zero_gradients();
  return model;
}

}  // namespace dedmpc
