#include "sae/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "sae/errors.hpp"
#include "sae/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");
static_assert(sizeof(double) == 8);

namespace sae {

using nlohmann::json;

void WeightPenalty::validate() const {
  if (p != 1 && p != 2) throw ConfigError("penalty.p must be 1 or 2");
  if (lambda_w < 0.0) throw ConfigError("penalty.lambda_w must be >= 0");
}

void SparsityMechanism::validate(std::size_t m) const {
  switch (kind) {
    case Sparsity::L1Act:
      if (lambda_sparse < 0.0) {
        throw ConfigError("mechanism.lambda_sparse must be >= 0");
      }
      break;
    case Sparsity::TopK:
    case Sparsity::BatchTopK:
      if (k < 1) throw ConfigError("mechanism.k must be >= 1");
      if (k > m) {
        throw ConfigError("mechanism.k exceeds latent count m (" +
                          std::to_string(k) + " > " + std::to_string(m) + ")");
      }
      break;
  }
}

SaeParams init_params(std::size_t d, std::size_t m, std::uint64_t seed,
                      TrainingFlags flags) {
  if (d < 1) throw ConfigError("model.d must be >= 1");
  if (m < 1) throw ConfigError("model.m must be >= 1");
  SeededRng rng(mix_seed(seed, 0));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  SaeParams p;
  p.d = d;
  p.m = m;
  p.W_enc = Matrix(m, d);
  for (std::size_t i = 0; i < m * d; ++i) {
    p.W_enc.data()[i] = rng.uniform(-scale, scale);
  }
  p.b_enc.assign(m, 0.0);
  p.b_dec.assign(d, 0.0);

  if (flags.tied_init) {
    p.W_dec = p.W_enc.transposed();
  } else {
    p.W_dec = Matrix(d, m);
    for (std::size_t i = 0; i < d * m; ++i) {
      p.W_dec.data()[i] = rng.uniform(-scale, scale);
    }
  }
  if (flags.unit_norm_decoder) {
    p.W_dec = normalize_columns(p.W_dec).matrix;
  }
  return p;
}

Matrix preactivations(const SaeParams& params, const Matrix& X) {
  if (X.cols() != params.d) {
    throw ShapeError("encode: input width " + std::to_string(X.cols()) +
                     " != d " + std::to_string(params.d));
  }
  Matrix P = matmul_nt(X, params.W_enc);  // b x m
  for (std::size_t i = 0; i < P.rows(); ++i) {
    auto row = P.row(i);
    for (std::size_t j = 0; j < P.cols(); ++j) row[j] += params.b_enc[j];
  }
  return P;
}

namespace {

// Comparator giving a total order on candidate entries: larger value first,
// lower index on ties. Deterministic selection needs the total order.
struct DescByValue {
  const double* v;
  bool operator()(std::size_t a, std::size_t b) const {
    if (v[a] != v[b]) return v[a] > v[b];
    return a < b;
  }
};

void apply_relu(Matrix& P) {
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (P.data()[i] < 0.0) P.data()[i] = 0.0;
  }
}

}  // namespace

Matrix encode(const SaeParams& params, const Matrix& X,
              const SparsityMechanism& mech) {
  mech.validate(params.m);
  Matrix P = preactivations(params, X);
  const std::size_t b = P.rows(), m = P.cols();

  switch (mech.kind) {
    case Sparsity::L1Act:
      apply_relu(P);
      return P;

    case Sparsity::TopK: {
      if (mech.k >= m) {
        apply_relu(P);
        return P;
      }
      std::vector<std::size_t> idx(m);
      std::vector<double> kept(m);
      for (std::size_t i = 0; i < b; ++i) {
        double* row = P.data() + i * m;
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::nth_element(idx.begin(), idx.begin() + (mech.k - 1), idx.end(),
                         DescByValue{row});
        std::copy(row, row + m, kept.begin());
        std::fill(row, row + m, 0.0);
        for (std::size_t r = 0; r < mech.k; ++r) row[idx[r]] = kept[idx[r]];
      }
      apply_relu(P);
      return P;
    }

    case Sparsity::BatchTopK: {
      const std::size_t keep = std::min(b * mech.k, b * m);
      if (keep >= b * m) {
        apply_relu(P);
        return P;
      }
      std::vector<std::size_t> idx(b * m);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::nth_element(idx.begin(), idx.begin() + (keep - 1), idx.end(),
                       DescByValue{P.data()});
      Matrix Z(b, m);
      for (std::size_t r = 0; r < keep; ++r) {
        Z.data()[idx[r]] = P.data()[idx[r]];
      }
      apply_relu(Z);
      return Z;
    }
  }
  throw ConfigError("mechanism.type is invalid");
}

Matrix decode(const SaeParams& params, const Matrix& Z) {
  if (Z.cols() != params.m) {
    throw ShapeError("decode: latent width " + std::to_string(Z.cols()) +
                     " != m " + std::to_string(params.m));
  }
  Matrix X = matmul_nt(Z, params.W_dec);  // b x d
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto row = X.row(i);
    for (std::size_t j = 0; j < X.cols(); ++j) row[j] += params.b_dec[j];
  }
  return X;
}

namespace {

double entry_penalty_sum(const Matrix& W, int p) {
  double acc = 0.0;
  if (p == 1) {
    for (std::size_t i = 0; i < W.size(); ++i) acc += std::fabs(W.data()[i]);
  } else {
    for (std::size_t i = 0; i < W.size(); ++i) {
      acc += W.data()[i] * W.data()[i];
    }
  }
  return acc;
}

}  // namespace

LossBreakdown loss_components(const SaeParams& params, const Matrix& X,
                              const SparsityMechanism& mech,
                              const WeightPenalty& penalty) {
  penalty.validate();
  const Matrix Z = encode(params, X, mech);
  const Matrix Xhat = decode(params, Z);
  const std::size_t b = X.rows();

  LossBreakdown out;
  double recon = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double r = Xhat.data()[i] - X.data()[i];
    recon += r * r;
  }
  out.recon = recon / static_cast<double>(b);

  if (mech.kind == Sparsity::L1Act) {
    double l1 = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) l1 += std::fabs(Z.data()[i]);
    out.sparse = mech.lambda_sparse * l1 / static_cast<double>(b);
  }

  out.weight = penalty.lambda_w * (entry_penalty_sum(params.W_enc, penalty.p) +
                                   entry_penalty_sum(params.W_dec, penalty.p));
  out.total = out.recon + out.sparse + out.weight;
  return out;
}

// --------------------------- weight container -------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'A', 'E', 'W'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ofstream& out, const void* p, std::size_t bytes) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
}

void read_raw(std::ifstream& in, void* p, std::size_t bytes,
              const char* field) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw FormatError(std::string("weights file truncated while reading ") +
                      field);
  }
}

}  // namespace

void save_weights(const std::filesystem::path& path, const SaeParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  write_raw(out, kMagic, 4);
  write_raw(out, &kVersion, 4);
  const std::uint64_t d = params.d, m = params.m;
  write_raw(out, &d, 8);
  write_raw(out, &m, 8);
  write_raw(out, params.W_enc.data(), params.W_enc.size() * 8);
  write_raw(out, params.b_enc.data(), params.b_enc.size() * 8);
  write_raw(out, params.W_dec.data(), params.W_dec.size() * 8);
  write_raw(out, params.b_dec.data(), params.b_dec.size() * 8);
}

SaeParams load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weights file: " + path.string());
  char magic[4];
  read_raw(in, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("weights magic: expected SAEW");
  }
  std::uint32_t version = 0;
  read_raw(in, &version, 4, "version");
  if (version != kVersion) {
    throw FormatError("weights version: expected 1, got " +
                      std::to_string(version));
  }
  std::uint64_t d = 0, m = 0;
  read_raw(in, &d, 8, "d");
  read_raw(in, &m, 8, "m");

  SaeParams p;
  p.d = d;
  p.m = m;
  p.W_enc = Matrix(m, d);
  p.b_enc.resize(m);
  p.W_dec = Matrix(d, m);
  p.b_dec.resize(d);
  read_raw(in, p.W_enc.data(), m * d * 8, "W_enc");
  read_raw(in, p.b_enc.data(), m * 8, "b_enc");
  read_raw(in, p.W_dec.data(), d * m * 8, "W_dec");
  read_raw(in, p.b_dec.data(), d * 8, "b_dec");
  return p;
}

std::string mechanism_name(const SparsityMechanism& mech) {
  switch (mech.kind) {
    case Sparsity::L1Act:
      return "l1";
    case Sparsity::TopK:
      return "topk";
    case Sparsity::BatchTopK:
      return "batch_topk";
  }
  return "?";
}

std::string penalty_name(const WeightPenalty& penalty) {
  if (penalty.lambda_w == 0.0) return "none";
  return (penalty.p == 1 ? "l1w" : "l2w");
}

void save_sidecar(const std::filesystem::path& path, const SaeRunMeta& meta) {
  json j;
  j["format"] = "saew.v1";
  j["d"] = meta.d;
  j["m"] = meta.m;
  j["flags"] = {{"tied_init", meta.flags.tied_init},
                {"unit_norm_decoder", meta.flags.unit_norm_decoder}};
  j["mechanism"] = {{"type", mechanism_name(meta.mechanism)},
                    {"lambda_sparse", meta.mechanism.lambda_sparse},
                    {"k", meta.mechanism.k}};
  j["penalty"] = {{"p", meta.penalty.p}, {"lambda_w", meta.penalty.lambda_w}};
  j["seed"] = meta.seed;
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

SaeRunMeta load_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open sidecar: " + path.string());
  json j = json::parse(in);

  SaeRunMeta meta;
  meta.d = j.at("d").get<std::size_t>();
  meta.m = j.at("m").get<std::size_t>();
  meta.flags.tied_init = j.at("flags").at("tied_init").get<bool>();
  meta.flags.unit_norm_decoder =
      j.at("flags").at("unit_norm_decoder").get<bool>();
  const std::string kind = j.at("mechanism").at("type").get<std::string>();
  if (kind == "l1") {
    meta.mechanism.kind = Sparsity::L1Act;
  } else if (kind == "topk") {
    meta.mechanism.kind = Sparsity::TopK;
  } else if (kind == "batch_topk") {
    meta.mechanism.kind = Sparsity::BatchTopK;
  } else {
    throw FormatError("sidecar mechanism.type: unknown value '" + kind + "'");
  }
  meta.mechanism.lambda_sparse =
      j.at("mechanism").at("lambda_sparse").get<double>();
  meta.mechanism.k = j.at("mechanism").at("k").get<std::size_t>();
  meta.penalty.p = j.at("penalty").at("p").get<int>();
  meta.penalty.lambda_w = j.at("penalty").at("lambda_w").get<double>();
  meta.seed = j.at("seed").get<std::uint64_t>();
  return meta;
}

}  // namespace sae
