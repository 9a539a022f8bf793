#include "sae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "sae/errors.hpp"
#include "sae/rng.hpp"

namespace sae {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off,
                        const std::string& field) {
  if (off + 4 > buf.size()) {
    throw FormatError("truncated header while reading " + field);
  }
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void Dataset::take(std::size_t keep) {
  if (keep >= n()) return;
  Matrix trimmed(keep, X.cols());
  std::copy(X.data(), X.data() + keep * X.cols(), trimmed.data());
  X = std::move(trimmed);
  if (!labels.empty()) labels.resize(keep);
}

Dataset load_mnist_idx(const std::string& images_path,
                       const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  const auto img_magic = read_be32(img, 0, "images magic");
  if (img_magic != kImageMagic) {
    throw FormatError("images magic: expected 0x00000803, got 0x" +
                      [&] { char b[16]; std::snprintf(b, sizeof b, "%08x", img_magic); return std::string(b); }());
  }
  const std::size_t n_img = read_be32(img, 4, "images count");
  const std::size_t rows = read_be32(img, 8, "images rows");
  const std::size_t cols = read_be32(img, 12, "images cols");
  const std::size_t d = rows * cols;
  if (img.size() != 16 + n_img * d) {
    throw FormatError("images payload: header promises " +
                      std::to_string(16 + n_img * d) + " bytes, file has " +
                      std::to_string(img.size()));
  }

  const auto lab_magic = read_be32(lab, 0, "labels magic");
  if (lab_magic != kLabelMagic) {
    throw FormatError("labels magic: expected 0x00000801");
  }
  const std::size_t n_lab = read_be32(lab, 4, "labels count");
  if (lab.size() != 8 + n_lab) {
    throw FormatError("labels payload: header promises " +
                      std::to_string(8 + n_lab) + " bytes, file has " +
                      std::to_string(lab.size()));
  }
  if (n_img != n_lab) {
    throw FormatError("image/label count mismatch: " + std::to_string(n_img) +
                      " images vs " + std::to_string(n_lab) + " labels");
  }

  Dataset out;
  out.d = d;
  out.X = Matrix(n_img, d);
  for (std::size_t i = 0; i < n_img * d; ++i) {
    out.X.data()[i] = static_cast<double>(img[16 + i]) / 255.0;
  }
  out.labels.resize(n_lab);
  for (std::size_t i = 0; i < n_lab; ++i) out.labels[i] = lab[8 + i];
  return out;
}

void write_idx_images(const std::string& path, const Matrix& X,
                      std::size_t img_rows, std::size_t img_cols) {
  if (img_rows * img_cols != X.cols()) {
    throw ShapeError("write_idx_images: rows*cols != matrix width");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open file for writing: " + path);
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<std::uint32_t>(X.rows()));
  write_be32(out, static_cast<std::uint32_t>(img_rows));
  write_be32(out, static_cast<std::uint32_t>(img_cols));
  std::vector<unsigned char> bytes(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double v = std::clamp(X.data()[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::llround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open file for writing: " + path);
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    const auto b = static_cast<unsigned char>(l);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

void SyntheticSpec::validate() const {
  if (d == 0) throw ConfigError("synthetic.d must be >= 1");
  if (m_true == 0) throw ConfigError("synthetic.m_true must be >= 1");
  if (!(p_active > 0.0 && p_active < 1.0)) {
    throw ConfigError("synthetic.p_active must lie in (0, 1)");
  }
  if (!(amp_lo <= amp_hi)) {
    throw ConfigError("synthetic.amplitude: lo must be <= hi");
  }
  if (noise_std < 0.0) throw ConfigError("synthetic.noise_std must be >= 0");
  if (n == 0) throw ConfigError("synthetic.n must be >= 1");
}

Dataset generate_superposition(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SeededRng rng(seed);

  Matrix G(spec.m_true, spec.d);
  for (std::size_t i = 0; i < spec.m_true; ++i) {
    double sq = 0.0;
    do {
      sq = 0.0;
      for (std::size_t j = 0; j < spec.d; ++j) {
        const double g = rng.normal();
        G(i, j) = g;
        sq += g * g;
      }
    } while (sq <= 1e-24);
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < spec.d; ++j) G(i, j) *= inv;
  }

  Dataset out;
  out.d = spec.d;
  out.X = Matrix(spec.n, spec.d);
  for (std::size_t s = 0; s < spec.n; ++s) {
    auto x = out.X.row(s);
    for (std::size_t f = 0; f < spec.m_true; ++f) {
      if (rng.uniform() < spec.p_active) {
        const double amp = rng.uniform(spec.amp_lo, spec.amp_hi);
        const auto g = G.row(f);
        for (std::size_t j = 0; j < spec.d; ++j) x[j] += amp * g[j];
      }
    }
    if (spec.noise_std > 0.0) {
      for (std::size_t j = 0; j < spec.d; ++j) {
        x[j] += spec.noise_std * rng.normal();
      }
    }
  }
  out.ground_truth = std::move(G);
  return out;
}

BatchIterator::BatchIterator(const Matrix& X, std::size_t batch_size,
                             std::uint64_t seed, bool shuffle, bool drop_last)
    : X_(&X), batch_size_(batch_size), shuffle_(shuffle), drop_last_(drop_last) {
  if (batch_size_ == 0) throw ConfigError("batch_size must be >= 1");
  order_.resize(X.rows());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_) {
    SeededRng rng(seed);
    rng.shuffle(order_);
  }
}

std::optional<Matrix> BatchIterator::next() {
  const std::size_t n = order_.size();
  if (pos_ >= n) return std::nullopt;
  std::size_t take = std::min(batch_size_, n - pos_);
  if (take < batch_size_ && drop_last_) {
    pos_ = n;
    return std::nullopt;
  }
  Matrix batch(take, X_->cols());
  for (std::size_t i = 0; i < take; ++i) {
    const auto src = X_->row(order_[pos_ + i]);
    std::copy(src.begin(), src.end(), batch.row(i).begin());
  }
  pos_ += take;
  return batch;
}

void BatchIterator::reset(std::uint64_t seed) {
  pos_ = 0;
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_) {
    SeededRng rng(seed);
    rng.shuffle(order_);
  }
}

std::size_t BatchIterator::batches_per_epoch() const {
  const std::size_t n = order_.size();
  return drop_last_ ? n / batch_size_ : (n + batch_size_ - 1) / batch_size_;
}

}  // namespace sae
