#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sae/matrix.hpp"

namespace sae {

// A set of input vectors, immutable after construction. Iterators are
// independent per consumer, so concurrent reads are safe.
struct Dataset {
  Matrix X;                            // n x d
  std::size_t d = 0;                   // input dimension
  std::vector<int> labels;             // optional, aligned with rows
  std::optional<Matrix> ground_truth;  // m_true x d, unit rows (synthetic only)

  std::size_t n() const { return X.rows(); }

  // Keeps the first n rows.
  void take(std::size_t n);
};

// Loads an IDX image/label pair. Pixel bytes are divided by 255 so every
// entry lands in [0, 1]. Throws FormatError naming the offending field on
// bad magic, header/payload size mismatch, or image/label count mismatch.
Dataset load_mnist_idx(const std::string& images_path,
                       const std::string& labels_path);

// Writers for the same IDX layout (big-endian headers, one byte per pixel).
// Values are clamped to [0, 1] and rounded to the nearest byte, so a
// loaded dataset written back and reloaded reproduces X exactly.
void write_idx_images(const std::string& path, const Matrix& X,
                      std::size_t img_rows, std::size_t img_cols);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

struct SyntheticSpec {
  std::size_t d = 0;       // input dimension
  std::size_t m_true = 0;  // ground-truth feature count
  double p_active = 0.0;   // per-feature activation probability, in (0, 1)
  double amp_lo = 0.5;     // amplitude range for active features
  double amp_hi = 1.0;
  double noise_std = 0.0;  // Gaussian observation noise
  std::size_t n = 0;       // sample count

  void validate() const;  // throws ConfigError naming the field
};

// Samples a ground-truth dictionary G (unit rows), then builds each sample
// as sum_i c_i G_i + noise with c_i = amplitude * Bernoulli(p_active).
// Draw order (fixed for reproducibility): G row by row, then per sample one
// uniform per feature, one amplitude per active feature, then d noise
// deviates when noise_std > 0.
Dataset generate_superposition(const SyntheticSpec& spec, std::uint64_t seed);

// Walks a matrix in batches of row copies; covers every row exactly once
// per pass, the last batch may be short unless drop_last is set. The
// shuffle permutation is determined by the seed.
class BatchIterator {
 public:
  BatchIterator(const Matrix& X, std::size_t batch_size, std::uint64_t seed,
                bool shuffle, bool drop_last = false);

  std::optional<Matrix> next();
  void reset(std::uint64_t seed);  // new pass, new permutation
  std::size_t batches_per_epoch() const;

 private:
  const Matrix* X_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
  bool shuffle_;
  bool drop_last_;
  std::vector<std::size_t> order_;
};

}  // namespace sae
