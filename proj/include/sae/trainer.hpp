#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "sae/dataset.hpp"
#include "sae/model.hpp"

namespace sae {

// Gradient container, same shapes as SaeParams.
struct SaeGrads {
  Matrix W_enc;
  std::vector<double> b_enc;
  Matrix W_dec;
  std::vector<double> b_dec;
};

// Exact gradients of loss_components().total for a batch. The TopK /
// BatchTopK selection mask is treated as constant (gradient flows only
// through retained entries); L1 terms use the subgradient sign() with
// sign(0) = 0; ReLU uses subgradient 0 at 0. With ablate_decoder_penalty
// the weight-penalty term skips W_dec (diagnostic knob).
SaeGrads backward(const SaeParams& params, const Matrix& X,
                  const SparsityMechanism& mech, const WeightPenalty& penalty,
                  bool ablate_decoder_penalty = false);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Matrix mW_enc, vW_enc, mW_dec, vW_dec;
  std::vector<double> mb_enc, vb_enc, mb_dec, vb_dec;
  long step = 0;

  static AdamState zeros(std::size_t d, std::size_t m);
};

// One adaptive-moment update. Under unit_norm_decoder each decoder column's
// gradient first loses its component parallel to that column (so the
// optimizer never fights the constraint), and after the update columns are
// renormalized to unit norm; zero columns are left at zero.
void constrained_step(SaeParams& params, const SaeGrads& grads,
                      AdamState& state, const AdamConfig& adam,
                      const TrainingFlags& flags);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t max_steps = 0;  // 0 = no cap; otherwise stop after this many
  std::size_t batch_size = 256;
  AdamConfig adam;
  std::uint64_t seed = 0;
  SparsityMechanism mechanism;
  WeightPenalty penalty;
  TrainingFlags flags;
  std::size_t log_every = 50;
  bool drop_last = false;
  bool ablate_decoder_penalty = false;

  void validate(std::size_t dataset_d, std::size_t m) const;
};

struct LogPoint {
  std::size_t step = 0;
  double recon = 0.0;
  double sparse = 0.0;
  double weight = 0.0;
  double total = 0.0;
  std::size_t alive_count = 0;
};

struct TrainHistory {
  std::vector<LogPoint> points;  // steps strictly increasing
};

// Called at every log point, after the record is taken.
using TrainObserver =
    std::function<void(std::size_t step, const SaeParams& params)>;

// Runs the batch loop; deterministic given (config.seed, dataset). Model
// init, epoch shuffles and any noise use decorrelated streams derived from
// the seed. Throws NumericError when the logged loss stops being finite.
std::pair<SaeParams, TrainHistory> train(const TrainConfig& config,
                                         const Dataset& dataset, std::size_t m,
                                         const TrainObserver& observer = {});

// Per-latent firing behaviour over a full pass of the dataset, plus the
// alive breakdown: nonzero encoder row, nonzero decoder column, and
// encoder-decoder alignment >= 0.1, each reported separately.
struct ActivationStats {
  std::vector<std::size_t> firing_counts;  // samples with z_i > 0
  std::vector<double> mean_activation;     // mean of z_i over all samples
  std::vector<double> alignment;
  std::vector<bool> enc_norm_ok, dec_norm_ok, align_ok, alive;
  std::size_t n_samples = 0;

  std::size_t alive_count() const;
};

ActivationStats activation_stats(const SaeParams& params,
                                 const Dataset& dataset,
                                 const SparsityMechanism& mech,
                                 std::size_t batch_size = 512);

}  // namespace sae
