#pragma once

#include <cstdint>
#include <vector>

#include "sae/matrix.hpp"
#include "sae/model.hpp"

namespace sae {

// Cosine between encoder row i and decoder column i, for every latent.
// Zero-norm sides give 0 by the pairwise_cosine convention.
std::vector<double> enc_dec_alignment(const SaeParams& params);

// A latent is alive when its encoder row and decoder column both have
// nonzero norm and its encoder-decoder alignment is at least 0.1.
std::vector<bool> alive_mask(const SaeParams& params);

struct HungarianResult {
  std::vector<std::size_t> assignment;  // row i -> column assignment[i]
  double total = 0.0;                   // sum of S[i][assignment[i]]
};

// One-to-one assignment maximizing the total similarity of a square matrix.
// Among (near-)optimal assignments the lexicographically smallest one is
// returned; value ties are detected up to a 1e-9 relative slack. Throws
// ShapeError for non-square input.
HungarianResult hungarian_max(const Matrix& S);

struct MatchedPair {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  double enc_sim = 0.0;
  double dec_sim = 0.0;
};

// Cross-seed agreement between two SAEs of equal shape. Decoder columns
// (and encoder rows) act as feature vectors; all similarities are absolute
// cosines, so the metrics are sign- and scale-invariant.
struct ConsistencyReport {
  // Mean over features of the best decoder match, averaged over both
  // directions; computed over all m features.
  double mean_max_cos = 0.0;

  // Fraction of features whose best decoder match exceeds tau, per
  // direction and symmetrized; the _alive variants restrict rows and
  // columns to alive features first.
  double frac_paired = 0.0;
  double frac_paired_a = 0.0;
  double frac_paired_b = 0.0;
  double frac_paired_alive = 0.0;

  // Strict sharing: encoder and decoder assignments agree and both matched
  // similarities exceed tau. The alive variant matches alive x alive
  // submatrices only and divides by the mean alive count.
  double frac_shared_all = 0.0;
  double frac_shared_alive = 0.0;
  std::size_t shared_count_all = 0;
  std::size_t shared_count_alive = 0;
  std::vector<MatchedPair> shared_pairs_alive;

  std::size_t alive_count_a = 0;
  std::size_t alive_count_b = 0;
  double tau = 0.7;
};

ConsistencyReport cross_seed_consistency(const SaeParams& A,
                                         const SaeParams& B, double tau,
                                         const std::vector<bool>& alive_a,
                                         const std::vector<bool>& alive_b);

// Convenience overload using alive_mask(A), alive_mask(B).
ConsistencyReport cross_seed_consistency(const SaeParams& A,
                                         const SaeParams& B,
                                         double tau = 0.7);

// Mean absolute pairwise cosine over distinct selected decoder columns
// (diagonal excluded). Throws ConfigError when fewer than two columns are
// selected.
double c_dec(const Matrix& W_dec, const std::vector<bool>& mask);
double c_dec(const Matrix& W_dec);

struct AblationReport {
  double mse_full = 0.0;
  double mse_top_n = 0.0;
  double mse_random_n = 0.0;
  double mse_complement = 0.0;
  std::size_t n = 0;
  std::vector<std::size_t> top_indices;
  std::vector<std::size_t> random_indices;
  std::uint64_t random_seed = 0;
};

// Reconstruction MSE under four latent selections: all latents, the n with
// the highest encoder-decoder alignment, n random latents (seeded draw,
// recorded), and everything except the top n. Latents outside the selection
// are zeroed after encoding. Throws ConfigError when n exceeds m.
AblationReport mse_ablation(const SaeParams& params, const Matrix& data,
                            const SparsityMechanism& mech, std::size_t n = 250,
                            std::uint64_t random_seed = 0);

// Fixed-width histogram bin counts over [lo, hi); values at hi land in the
// last bin.
std::vector<std::size_t> histogram_counts(const std::vector<double>& values,
                                          double lo, double hi,
                                          std::size_t bins);

}  // namespace sae
