#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dedmpc/autodiff.hpp"
#include "dedmpc/profile_gen.hpp"

namespace dedmpc {

struct TideConfig {
  int w = 20;
  int p = 20;
  int num_encoder_layers = 1;
  int num_decoder_layers = 1;
  int decoder_output_dim = 16;
  int hidden_size = 128;
  int decoder_hidden_size = 32;
  double dropout = 0.2;
  bool layer_norm = true;
  int feature_projection_dim = 4;
  std::vector<double> quantiles{0.1, 0.5, 0.9};
  /// 2 for (x_temp, x_depth), 1 for the temperature-only model.
  int target_channels = 2;

  void validate() const;
  int num_quantiles() const { return static_cast<int>(quantiles.size()); }
  int median_index() const;
  int steps() const { return w + p; }
};

/// dense -> relu -> dense -> dropout, plus a linear skip, then layer norm.
struct ResidualBlockLayout {
  int in = 0;
  int hidden = 0;
  int out = 0;
  std::size_t first = 0;  // index of W1 in the parameter list
};

/// Horizon forecast in physical units: element (i, c, q) is stored at
/// row i, column c*nq + q.
struct Forecast {
  Eigen::MatrixXd values;
  int channels = 0;
  int quantiles = 0;
  double at(int step, int channel, int q) const { return values(step, channel * quantiles + q); }
};

/// Model inputs for a batch, already normalized.
struct TideBatch {
  Eigen::MatrixXd past_targets;  // B x (w*C), column t*C + c
  Eigen::MatrixXd covariates;    // (B*(w+p)) x 4, row b*(w+p) + t
  Eigen::MatrixXd future_targets;  // B x (p*C), column i*C + c
  int size = 0;
};

class TideModel {
 public:
  TideModel() = default;
  TideModel(const TideConfig& cfg, std::uint64_t seed);

  const TideConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  const ChannelStats& target_stats() const { return target_stats_; }
  const ChannelStats& covariate_stats() const { return covariate_stats_; }
  void set_normalization(const ChannelStats& targets, const ChannelStats& covariates);

  std::vector<Eigen::MatrixXd>& parameters() { return params_; }
  const std::vector<Eigen::MatrixXd>& parameters() const { return params_; }
  std::vector<Eigen::MatrixXd>& gradients() { return grads_; }
  void zero_gradients();
  std::size_t num_weights() const;

  /// Normalized batch assembly. Segments carry both target channels; the
  /// temperature-only model keeps channel 0.
  TideBatch make_batch(const std::vector<const SeriesSegment*>& segments) const;
  TideBatch make_batch(const Eigen::MatrixXd& past_targets, const Eigen::MatrixXd& past_covariates,
                       const Eigen::MatrixXd& future_covariates) const;

  /// Records the network on `tape`. Returns normalized outputs, B x (p*C*nq)
  /// with column (i*C + c)*nq + q. With `weight_grads` the parameter
  /// gradients accumulate into gradients(); `rng` drives dropout and is only
  /// used when training.
  ad::Var record(ad::Tape& tape, ad::Var past_targets, ad::Var covariates, int batch, bool training,
                 bool weight_grads, std::mt19937_64* rng) const;

  Forecast forward(const Eigen::MatrixXd& past_targets, const Eigen::MatrixXd& past_covariates,
                   const Eigen::MatrixXd& future_covariates, bool training = false,
                   std::mt19937_64* rng = nullptr) const;
  /// p x C forecast of the 0.5 quantile.
  Eigen::MatrixXd predict_median(const Eigen::MatrixXd& past_targets, const Eigen::MatrixXd& past_covariates,
                                 const Eigen::MatrixXd& future_covariates) const;

  /// Mean pinball loss on normalized targets. With `weight_grads`,
  /// gradients() receive d(loss)/d(weights) (not zeroed first).
  double batch_loss(const TideBatch& batch, bool training, bool weight_grads, std::mt19937_64* rng) const;

  /// Number of network evaluations since construction.
  std::size_t forward_calls() const { return forward_calls_; }

  Forecast denormalize(const Eigen::MatrixXd& normalized_row) const;

  void save(const std::filesystem::path& weights_file, const std::filesystem::path& sidecar_file,
            const std::string& training_metadata_json = "{}") const;
  static TideModel load(const std::filesystem::path& weights_file, const std::filesystem::path& sidecar_file);

 private:
  void build_layout();
  ad::Var block(ad::Tape& tape, const ResidualBlockLayout& b, ad::Var x, bool training, bool weight_grads,
                std::mt19937_64* rng) const;
  ad::Var param(ad::Tape& tape, std::size_t i, bool weight_grads) const;

  TideConfig cfg_;
  std::uint64_t seed_ = 0;
  ChannelStats target_stats_;
  ChannelStats covariate_stats_;
  std::vector<Eigen::MatrixXd> params_;
  mutable std::vector<Eigen::MatrixXd> grads_;
  ResidualBlockLayout projection_;
  std::vector<ResidualBlockLayout> encoder_;
  std::vector<ResidualBlockLayout> decoder_;
  ResidualBlockLayout temporal_;
  std::size_t skip_ = 0;
  mutable std::size_t forward_calls_ = 0;
};

/// Mean over all entries of max(q*e, (q-1)*e), e = y_true - y_pred. Columns
/// of y_pred cycle through the quantiles: column j uses quantiles[j % nq],
/// and y_true column j / nq.
double quantile_loss(const Eigen::MatrixXd& y_true, const Eigen::MatrixXd& y_pred, const std::vector<double>& quantiles);

/// Differentiable single-input evaluation used by the MPC: forward once, then
/// pull a physical-unit seed back to the inputs.
class TideSession {
 public:
  TideSession(const TideModel& model, const Eigen::MatrixXd& past_targets, const Eigen::MatrixXd& past_covariates,
              const Eigen::MatrixXd& future_covariates);

  const Forecast& forecast() const { return forecast_; }
  Eigen::MatrixXd median() const;

  struct InputGradients {
    Eigen::MatrixXd past_targets;       // w x C
    Eigen::MatrixXd past_covariates;    // w x 4
    Eigen::MatrixXd future_covariates;  // p x 4
  };
  /// `seed` has the shape of forecast().values, in physical units.
  InputGradients backward(const Eigen::MatrixXd& seed);
  /// Convenience for a seed on the median only (p x C).
  InputGradients backward_median(const Eigen::MatrixXd& median_seed);

 private:
  const TideModel& model_;
  ad::Tape tape_;
  ad::Var past_;
  ad::Var covs_;
  ad::Var out_;
  Forecast forecast_;
};

struct TrainSchedule {
  int epochs = 100;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double decay = 0.95;
  int decay_every = 2;
  double l2 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  double rate_at(int epoch) const;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on the mean pinball loss plus l2/2 * |w|^2; keeps the weights with
/// the lowest validation loss (training loss when there is no validation set).
TrainResult train(TideModel& model, const Dataset& dataset, const TrainSchedule& schedule,
                  const EpochCallback& on_epoch = {});

/// Mean pinball loss over segments, dropout off, normalized space.
double evaluate_loss(const TideModel& model, const std::vector<SeriesSegment>& segments);

struct ForecastAccuracy {
  double temperature_mape = 0.0;
  double depth_mape = 0.0;  // NaN for the temperature-only model
  std::size_t depth_points = 0;
  double quantile_crossing_rate = 0.0;
};

/// Median-forecast MAPE per channel; depth only where the truth exceeds
/// `depth_floor`.
ForecastAccuracy evaluate_accuracy(const TideModel& model, const std::vector<SeriesSegment>& segments,
                                   double depth_floor = 0.02);

}  // namespace dedmpc
