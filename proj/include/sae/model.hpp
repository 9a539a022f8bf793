#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sae/matrix.hpp"

namespace sae {

struct TrainingFlags {
  bool tied_init = false;          // W_dec starts as W_enc^T
  bool unit_norm_decoder = false;  // decoder columns held at unit norm

  bool operator==(const TrainingFlags&) const = default;
};

// L1 (p=1) or L2 (p=2) penalty on encoder and decoder weight entries,
// summed over entries (biases excluded).
struct WeightPenalty {
  int p = 2;
  double lambda_w = 0.0;

  static WeightPenalty none() { return {2, 0.0}; }
  static WeightPenalty l1(double lambda) { return {1, lambda}; }
  static WeightPenalty l2(double lambda) { return {2, lambda}; }

  void validate() const;  // p in {1, 2}, lambda_w >= 0
  bool operator==(const WeightPenalty&) const = default;
};

enum class Sparsity { L1Act, TopK, BatchTopK };

struct SparsityMechanism {
  Sparsity kind = Sparsity::L1Act;
  double lambda_sparse = 0.0;  // L1Act only
  std::size_t k = 0;           // TopK / BatchTopK only

  static SparsityMechanism l1(double lambda) {
    return {Sparsity::L1Act, lambda, 0};
  }
  static SparsityMechanism topk(std::size_t k) {
    return {Sparsity::TopK, 0.0, k};
  }
  static SparsityMechanism batch_topk(std::size_t k) {
    return {Sparsity::BatchTopK, 0.0, k};
  }

  void validate(std::size_t m) const;  // throws ConfigError naming the field
  bool operator==(const SparsityMechanism&) const = default;
};

// Encoder/decoder weights and biases. A value object: all operations on it
// are pure; mutation happens only in the trainer.
struct SaeParams {
  Matrix W_enc;               // m x d
  std::vector<double> b_enc;  // m
  Matrix W_dec;               // d x m
  std::vector<double> b_dec;  // d
  std::size_t d = 0;
  std::size_t m = 0;
};

// W_enc entries drawn uniform in [-1/sqrt(d), 1/sqrt(d)], biases zero.
// With tied_init the decoder starts as the exact transpose of the encoder
// (before any normalization); otherwise its entries are drawn from the same
// distribution. unit_norm_decoder normalizes decoder columns afterwards.
SaeParams init_params(std::size_t d, std::size_t m, std::uint64_t seed,
                      TrainingFlags flags);

// Pre-activations X W_enc^T + b_enc (bias broadcast over the batch).
Matrix preactivations(const SaeParams& params, const Matrix& X);

// Latent codes for a batch. L1Act applies ReLU to the pre-activations;
// TopK keeps the k largest pre-activations per row, BatchTopK the b*k
// largest across the whole batch, in both cases zeroing the rest before
// ReLU. Ties break toward the lowest index.
Matrix encode(const SaeParams& params, const Matrix& X,
              const SparsityMechanism& mech);

// Reconstructions Z W_dec^T + b_dec.
Matrix decode(const SaeParams& params, const Matrix& Z);

struct LossBreakdown {
  double recon = 0.0;   // mean over batch of the squared reconstruction error
  double sparse = 0.0;  // lambda_sparse * mean over batch of |z|_1 (L1Act only)
  double weight = 0.0;  // lambda_w * (sum |W_enc|^p + sum |W_dec|^p)
  double total = 0.0;
};

LossBreakdown loss_components(const SaeParams& params, const Matrix& X,
                              const SparsityMechanism& mech,
                              const WeightPenalty& penalty);

// ---------------------------------------------------------------------------
// Weight container. Flat little-endian binary, bit-exact round trip:
//   "SAEW" | u32 version=1 | u64 d | u64 m |
//   W_enc (m*d f64) | b_enc (m f64) | W_dec (d*m f64) | b_dec (d f64)
// A JSON sidecar carries {d, m, flags, mechanism, penalty, seed}.
// ---------------------------------------------------------------------------

void save_weights(const std::filesystem::path& path, const SaeParams& params);
SaeParams load_weights(const std::filesystem::path& path);

struct SaeRunMeta {
  std::size_t d = 0;
  std::size_t m = 0;
  TrainingFlags flags;
  SparsityMechanism mechanism;
  WeightPenalty penalty;
  std::uint64_t seed = 0;
};

void save_sidecar(const std::filesystem::path& path, const SaeRunMeta& meta);
SaeRunMeta load_sidecar(const std::filesystem::path& path);

std::string mechanism_name(const SparsityMechanism& mech);
std::string penalty_name(const WeightPenalty& penalty);

}  // namespace sae
