#include "sae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sae/analysis.hpp"
#include "sae/errors.hpp"
#include "sae/rng.hpp"

namespace sae {

namespace {

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

std::vector<double> column_sums(const Matrix& M) {
  std::vector<double> out(M.cols(), 0.0);
  for (std::size_t i = 0; i < M.rows(); ++i) {
    const auto row = M.row(i);
    for (std::size_t j = 0; j < M.cols(); ++j) out[j] += row[j];
  }
  return out;
}

void add_weight_penalty_grad(Matrix& grad, const Matrix& W,
                             const WeightPenalty& penalty) {
  if (penalty.lambda_w == 0.0) return;
  if (penalty.p == 2) {
    const double c = 2.0 * penalty.lambda_w;
    for (std::size_t i = 0; i < W.size(); ++i) {
      grad.data()[i] += c * W.data()[i];
    }
  } else {
    for (std::size_t i = 0; i < W.size(); ++i) {
      grad.data()[i] += penalty.lambda_w * sign_of(W.data()[i]);
    }
  }
}

}  // namespace

SaeGrads backward(const SaeParams& params, const Matrix& X,
                  const SparsityMechanism& mech, const WeightPenalty& penalty,
                  bool ablate_decoder_penalty) {
  penalty.validate();
  const std::size_t b = X.rows();
  const double inv_b = 1.0 / static_cast<double>(b);

  // Forward. Retained-and-positive entries are exactly those with z > 0,
  // so the combined selection/ReLU mask never needs the pre-activations.
  const Matrix Z = encode(params, X, mech);
  const Matrix Xhat = decode(params, Z);

  Matrix Gx(b, params.d);  // dL/dXhat
  for (std::size_t i = 0; i < Gx.size(); ++i) {
    Gx.data()[i] = 2.0 * inv_b * (Xhat.data()[i] - X.data()[i]);
  }

  SaeGrads g;
  g.b_dec = column_sums(Gx);
  g.W_dec = matmul_tn(Gx, Z);  // d x m

  Matrix Gz = matmul(Gx, params.W_dec);  // b x m
  if (mech.kind == Sparsity::L1Act && mech.lambda_sparse != 0.0) {
    const double c = mech.lambda_sparse * inv_b;
    for (std::size_t i = 0; i < Gz.size(); ++i) {
      Gz.data()[i] += c * sign_of(Z.data()[i]);
    }
  }
  for (std::size_t i = 0; i < Gz.size(); ++i) {
    if (Z.data()[i] <= 0.0) Gz.data()[i] = 0.0;
  }

  g.W_enc = matmul_tn(Gz, X);  // m x d
  g.b_enc = column_sums(Gz);

  add_weight_penalty_grad(g.W_enc, params.W_enc, penalty);
  if (!ablate_decoder_penalty) {
    add_weight_penalty_grad(g.W_dec, params.W_dec, penalty);
  }
  return g;
}

AdamState AdamState::zeros(std::size_t d, std::size_t m) {
  AdamState s;
  s.mW_enc = Matrix(m, d);
  s.vW_enc = Matrix(m, d);
  s.mW_dec = Matrix(d, m);
  s.vW_dec = Matrix(d, m);
  s.mb_enc.assign(m, 0.0);
  s.vb_enc.assign(m, 0.0);
  s.mb_dec.assign(d, 0.0);
  s.vb_dec.assign(d, 0.0);
  return s;
}

namespace {

void adam_update(double* theta, const double* grad, double* m1, double* m2,
                 std::size_t n, const AdamConfig& c, double bc1, double bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m1[i] = c.beta1 * m1[i] + (1.0 - c.beta1) * g;
    m2[i] = c.beta2 * m2[i] + (1.0 - c.beta2) * g * g;
    const double mhat = m1[i] / bc1;
    const double vhat = m2[i] / bc2;
    theta[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.eps);
  }
}

// Removes from each column gradient its component parallel to the column.
void project_out_parallel(Matrix& grad, const Matrix& W) {
  const std::size_t rows = W.rows(), cols = W.cols();
  for (std::size_t j = 0; j < cols; ++j) {
    double dot = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      dot += grad(i, j) * W(i, j);
      sq += W(i, j) * W(i, j);
    }
    if (sq <= 1e-24) continue;
    const double c = dot / sq;
    for (std::size_t i = 0; i < rows; ++i) grad(i, j) -= c * W(i, j);
  }
}

}  // namespace

void constrained_step(SaeParams& params, const SaeGrads& grads,
                      AdamState& state, const AdamConfig& adam,
                      const TrainingFlags& flags) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));

  const Matrix* dec_grad = &grads.W_dec;
  Matrix projected;
  if (flags.unit_norm_decoder) {
    projected = grads.W_dec;
    project_out_parallel(projected, params.W_dec);
    dec_grad = &projected;
  }

  adam_update(params.W_enc.data(), grads.W_enc.data(), state.mW_enc.data(),
              state.vW_enc.data(), params.W_enc.size(), adam, bc1, bc2);
  adam_update(params.b_enc.data(), grads.b_enc.data(), state.mb_enc.data(),
              state.vb_enc.data(), params.b_enc.size(), adam, bc1, bc2);
  adam_update(params.W_dec.data(), dec_grad->data(), state.mW_dec.data(),
              state.vW_dec.data(), params.W_dec.size(), adam, bc1, bc2);
  adam_update(params.b_dec.data(), grads.b_dec.data(), state.mb_dec.data(),
              state.vb_dec.data(), params.b_dec.size(), adam, bc1, bc2);

  if (flags.unit_norm_decoder) {
    params.W_dec = normalize_columns(params.W_dec).matrix;
  }
}

void TrainConfig::validate(std::size_t dataset_d, std::size_t m) const {
  if (adam.learning_rate <= 0.0) {
    throw ConfigError("train.learning_rate must be > 0");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1 && max_steps == 0) {
    throw ConfigError("train.epochs must be >= 1 (or set max_steps)");
  }
  if (log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (dataset_d == 0) throw ConfigError("dataset is empty");
  penalty.validate();
  mechanism.validate(m);
}

std::pair<SaeParams, TrainHistory> train(const TrainConfig& config,
                                         const Dataset& dataset, std::size_t m,
                                         const TrainObserver& observer) {
  config.validate(dataset.d, m);
  if (dataset.n() == 0) throw ConfigError("dataset has no rows");

  SaeParams params = init_params(dataset.d, m, config.seed, config.flags);
  AdamState opt = AdamState::zeros(dataset.d, m);
  TrainHistory history;

  std::size_t step = 0;
  std::size_t last_logged_step = 0;
  Matrix last_batch;
  bool done = false;

  auto log_point = [&](const Matrix& batch) {
    const LossBreakdown lb =
        loss_components(params, batch, config.mechanism, config.penalty);
    if (!std::isfinite(lb.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    std::size_t alive = 0;
    for (bool a : alive_mask(params)) alive += a;
    history.points.push_back({step, lb.recon, lb.sparse, lb.weight, lb.total,
                              alive});
    last_logged_step = step;
    if (observer) observer(step, params);
  };

  for (std::size_t epoch = 0; !done; ++epoch) {
    if (config.max_steps == 0 && epoch >= config.epochs) break;
    BatchIterator batches(dataset.X, config.batch_size,
                          mix_seed(config.seed, 1000 + epoch), true,
                          config.drop_last);
    while (auto batch = batches.next()) {
      const SaeGrads grads =
          backward(params, *batch, config.mechanism, config.penalty,
                   config.ablate_decoder_penalty);
      constrained_step(params, grads, opt, config.adam, config.flags);
      ++step;
      if (step == 1 || step % config.log_every == 0) log_point(*batch);
      last_batch = std::move(*batch);
      if (config.max_steps > 0 && step >= config.max_steps) {
        done = true;
        break;
      }
    }
  }
  if (step > 0 && last_logged_step != step) log_point(last_batch);
  return {std::move(params), std::move(history)};
}

std::size_t ActivationStats::alive_count() const {
  std::size_t n = 0;
  for (bool a : alive) n += a;
  return n;
}

ActivationStats activation_stats(const SaeParams& params,
                                 const Dataset& dataset,
                                 const SparsityMechanism& mech,
                                 std::size_t batch_size) {
  ActivationStats stats;
  stats.firing_counts.assign(params.m, 0);
  stats.mean_activation.assign(params.m, 0.0);
  stats.n_samples = dataset.n();

  BatchIterator batches(dataset.X, batch_size, 0, false);
  while (auto batch = batches.next()) {
    const Matrix Z = encode(params, *batch, mech);
    for (std::size_t i = 0; i < Z.rows(); ++i) {
      const auto row = Z.row(i);
      for (std::size_t j = 0; j < params.m; ++j) {
        if (row[j] > 0.0) {
          ++stats.firing_counts[j];
          stats.mean_activation[j] += row[j];
        }
      }
    }
  }
  if (stats.n_samples > 0) {
    for (double& v : stats.mean_activation) {
      v /= static_cast<double>(stats.n_samples);
    }
  }

  stats.alignment = enc_dec_alignment(params);
  const auto dec_norms = column_l2_norms(params.W_dec);
  stats.enc_norm_ok.resize(params.m);
  stats.dec_norm_ok.resize(params.m);
  stats.align_ok.resize(params.m);
  stats.alive.resize(params.m);
  for (std::size_t i = 0; i < params.m; ++i) {
    double enc_sq = 0.0;
    for (double e : params.W_enc.row(i)) enc_sq += e * e;
    stats.enc_norm_ok[i] = enc_sq > 0.0;
    stats.dec_norm_ok[i] = dec_norms[i] > 0.0;
    stats.align_ok[i] = stats.alignment[i] >= 0.1;
    stats.alive[i] =
        stats.enc_norm_ok[i] && stats.dec_norm_ok[i] && stats.align_ok[i];
  }
  return stats;
}

}  // namespace sae
