#include "sae/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sae/errors.hpp"
#include "sae/rng.hpp"

namespace sae {

namespace {

constexpr double kNormFloor2 = 1e-24;  // squared norm floor, matches 1e-12

double safe_cosine(double dot, double na2, double nb2) {
  if (na2 <= kNormFloor2 || nb2 <= kNormFloor2) return 0.0;
  return std::clamp(dot / std::sqrt(na2 * nb2), -1.0, 1.0);
}

}  // namespace

std::vector<double> enc_dec_alignment(const SaeParams& params) {
  std::vector<double> out(params.m);
  for (std::size_t i = 0; i < params.m; ++i) {
    double dot = 0.0, ne2 = 0.0, nd2 = 0.0;
    const auto enc = params.W_enc.row(i);
    for (std::size_t j = 0; j < params.d; ++j) {
      const double e = enc[j];
      const double w = params.W_dec(j, i);
      dot += e * w;
      ne2 += e * e;
      nd2 += w * w;
    }
    out[i] = safe_cosine(dot, ne2, nd2);
  }
  return out;
}

std::vector<bool> alive_mask(const SaeParams& params) {
  const auto align = enc_dec_alignment(params);
  const auto dec_norms = column_l2_norms(params.W_dec);
  std::vector<bool> alive(params.m);
  for (std::size_t i = 0; i < params.m; ++i) {
    double enc_sq = 0.0;
    for (double e : params.W_enc.row(i)) enc_sq += e * e;
    alive[i] = enc_sq > 0.0 && dec_norms[i] > 0.0 && align[i] >= 0.1;
  }
  return alive;
}

// ---------------------------------------------------------------------------
// Assignment solver. Shortest augmenting paths with potentials on the
// negated matrix (O(n^3)), then a lexicographic pass over the admissible
// subgraph: by duality every optimal assignment uses only edges with zero
// reduced cost, so fixing each row to its smallest admissible column that
// keeps a perfect matching feasible yields the lexicographically smallest
// optimum. Ties are admitted up to a small relative slack.
// ---------------------------------------------------------------------------

namespace {

struct LapSolution {
  std::vector<int> col_of_row;
  std::vector<double> u, v;  // dual potentials, 0-indexed
};

LapSolution lap_min(const Matrix& C) {
  const int n = static_cast<int>(C.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = C(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  LapSolution sol;
  sol.col_of_row.assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j]) sol.col_of_row[p[j] - 1] = j - 1;
  }
  sol.u.assign(n, 0.0);
  sol.v.assign(n, 0.0);
  for (int i = 0; i < n; ++i) sol.u[i] = u[i + 1];
  for (int j = 0; j < n; ++j) sol.v[j] = v[j + 1];
  return sol;
}

class LexRefiner {
 public:
  LexRefiner(const std::vector<std::vector<int>>& adj, std::vector<int> col_of,
             std::vector<int> row_of)
      : adj_(adj),
        col_of_(std::move(col_of)),
        row_of_(std::move(row_of)),
        col_fixed_(adj.size(), 0),
        visited_(adj.size(), 0) {}

  std::vector<int> run() {
    const std::size_t n = adj_.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (int j : adj_[i]) {
        if (col_fixed_[j]) continue;
        if (col_of_[i] == j || try_force(static_cast<int>(i), j)) break;
      }
      col_fixed_[col_of_[i]] = 1;
    }
    return col_of_;
  }

 private:
  bool try_force(int i, int j) {
    const int j_old = col_of_[i];
    const int r = row_of_[j];
    col_of_[i] = j;
    row_of_[j] = i;
    col_of_[r] = -1;
    row_of_[j_old] = -1;
    std::fill(visited_.begin(), visited_.end(), 0);
    if (augment(r)) return true;
    col_of_[i] = j_old;
    row_of_[j_old] = i;
    col_of_[r] = j;
    row_of_[j] = r;
    return false;
  }

  bool augment(int r) {
    for (int j : adj_[r]) {
      if (col_fixed_[j] || visited_[j]) continue;
      visited_[j] = 1;
      if (row_of_[j] == -1 || augment(row_of_[j])) {
        col_of_[r] = j;
        row_of_[j] = r;
        return true;
      }
    }
    return false;
  }

  const std::vector<std::vector<int>>& adj_;
  std::vector<int> col_of_, row_of_;
  std::vector<char> col_fixed_, visited_;
};

}  // namespace

HungarianResult hungarian_max(const Matrix& S) {
  if (S.rows() != S.cols()) {
    throw ShapeError("hungarian_max: matrix is " + std::to_string(S.rows()) +
                     "x" + std::to_string(S.cols()) + ", expected square");
  }
  const std::size_t n = S.rows();
  HungarianResult out;
  if (n == 0) return out;
  if (!S.all_finite()) {
    throw NumericError("hungarian_max: non-finite entry in similarity matrix");
  }

  Matrix C(n, n);
  double max_abs = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    C.data()[i] = -S.data()[i];
    max_abs = std::max(max_abs, std::fabs(S.data()[i]));
  }
  const auto sol = lap_min(C);

  const double tol = 1e-9 * (1.0 + max_abs);
  std::vector<std::vector<int>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (C(i, j) - sol.u[i] - sol.v[j] <= tol) {
        adj[i].push_back(static_cast<int>(j));
      }
    }
  }
  std::vector<int> row_of(n, -1);
  for (std::size_t i = 0; i < n; ++i) row_of[sol.col_of_row[i]] = static_cast<int>(i);

  const auto assignment = LexRefiner(adj, sol.col_of_row, row_of).run();
  out.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.assignment[i] = static_cast<std::size_t>(assignment[i]);
    out.total += S(i, out.assignment[i]);
  }
  return out;
}

// --------------------------- cross-seed metrics ------------------------------

namespace {

Matrix abs_pairwise_cosine(const Matrix& A, const Matrix& B) {
  Matrix S = pairwise_cosine(A, B);
  for (std::size_t i = 0; i < S.size(); ++i) S.data()[i] = std::fabs(S.data()[i]);
  return S;
}

std::vector<std::size_t> mask_indices(const std::vector<bool>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(i);
  }
  return out;
}

// Zero-padded square submatrix S[rows x cols]; padding never exceeds tau.
Matrix padded_submatrix(const Matrix& S, const std::vector<std::size_t>& rows,
                        const std::vector<std::size_t>& cols) {
  const std::size_t s = std::max(rows.size(), cols.size());
  Matrix out(s, s, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(i, j) = S(rows[i], cols[j]);
    }
  }
  return out;
}

double mean_row_max(const Matrix& S) {
  if (S.rows() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < S.rows(); ++i) {
    double best = 0.0;
    for (double x : S.row(i)) best = std::max(best, x);
    acc += best;
  }
  return acc / static_cast<double>(S.rows());
}

double frac_row_max_above(const Matrix& S, double tau,
                          const std::vector<std::size_t>& rows,
                          const std::vector<std::size_t>& cols) {
  if (rows.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : rows) {
    double best = 0.0;
    for (std::size_t j : cols) best = std::max(best, S(i, j));
    if (best > tau) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

}  // namespace

ConsistencyReport cross_seed_consistency(const SaeParams& A,
                                         const SaeParams& B, double tau,
                                         const std::vector<bool>& alive_a,
                                         const std::vector<bool>& alive_b) {
  if (A.m != B.m || A.d != B.d) {
    throw ShapeError("cross_seed_consistency: parameter shapes differ");
  }
  const std::size_t m = A.m;
  ConsistencyReport rep;
  rep.tau = tau;

  const Matrix S_dec =
      abs_pairwise_cosine(A.W_dec.transposed(), B.W_dec.transposed());
  const Matrix S_enc = abs_pairwise_cosine(A.W_enc, B.W_enc);

  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), std::size_t{0});

  const Matrix S_dec_t = S_dec.transposed();
  rep.mean_max_cos = 0.5 * (mean_row_max(S_dec) + mean_row_max(S_dec_t));
  rep.frac_paired_a = frac_row_max_above(S_dec, tau, all, all);
  rep.frac_paired_b = frac_row_max_above(S_dec_t, tau, all, all);
  rep.frac_paired = 0.5 * (rep.frac_paired_a + rep.frac_paired_b);

  const auto h_enc = hungarian_max(S_enc);
  const auto h_dec = hungarian_max(S_dec);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = h_enc.assignment[i];
    if (j == h_dec.assignment[i] && S_enc(i, j) > tau && S_dec(i, j) > tau) {
      ++rep.shared_count_all;
    }
  }
  rep.frac_shared_all =
      static_cast<double>(rep.shared_count_all) / static_cast<double>(m);

  const auto ia = mask_indices(alive_a);
  const auto ib = mask_indices(alive_b);
  rep.alive_count_a = ia.size();
  rep.alive_count_b = ib.size();

  const double fp_a = frac_row_max_above(S_dec, tau, ia, ib);
  const double fp_b = frac_row_max_above(S_dec_t, tau, ib, ia);
  rep.frac_paired_alive = 0.5 * (fp_a + fp_b);

  if (!ia.empty() && !ib.empty()) {
    const Matrix sub_enc = padded_submatrix(S_enc, ia, ib);
    const Matrix sub_dec = padded_submatrix(S_dec, ia, ib);
    const auto ha = hungarian_max(sub_enc);
    const auto hd = hungarian_max(sub_dec);
    for (std::size_t i = 0; i < ia.size(); ++i) {
      const std::size_t j = ha.assignment[i];
      if (j != hd.assignment[i] || j >= ib.size()) continue;
      if (sub_enc(i, j) > tau && sub_dec(i, j) > tau) {
        ++rep.shared_count_alive;
        rep.shared_pairs_alive.push_back(
            {ia[i], ib[j], sub_enc(i, j), sub_dec(i, j)});
      }
    }
    const double denom = 0.5 * static_cast<double>(ia.size() + ib.size());
    rep.frac_shared_alive = static_cast<double>(rep.shared_count_alive) / denom;
  }
  return rep;
}

ConsistencyReport cross_seed_consistency(const SaeParams& A,
                                         const SaeParams& B, double tau) {
  return cross_seed_consistency(A, B, tau, alive_mask(A), alive_mask(B));
}

// ------------------------------- c_dec ---------------------------------------

double c_dec(const Matrix& W_dec, const std::vector<bool>& mask) {
  if (mask.size() != W_dec.cols()) {
    throw ShapeError("c_dec: mask length != column count");
  }
  const auto sel = mask_indices(mask);
  if (sel.size() < 2) {
    throw ConfigError("c_dec: mask selects fewer than 2 columns");
  }
  Matrix F(sel.size(), W_dec.rows());
  for (std::size_t i = 0; i < sel.size(); ++i) {
    for (std::size_t r = 0; r < W_dec.rows(); ++r) F(i, r) = W_dec(r, sel[i]);
  }
  const Matrix S = pairwise_cosine(F, F);
  double acc = 0.0;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    for (std::size_t j = i + 1; j < sel.size(); ++j) acc += std::fabs(S(i, j));
  }
  const double pairs =
      0.5 * static_cast<double>(sel.size()) * static_cast<double>(sel.size() - 1);
  return acc / pairs;
}

double c_dec(const Matrix& W_dec) {
  return c_dec(W_dec, std::vector<bool>(W_dec.cols(), true));
}

// ---------------------------- MSE ablation -----------------------------------

namespace {

double masked_reconstruction_mse(const SaeParams& params, const Matrix& X,
                                 const Matrix& Z_full,
                                 const std::vector<bool>& keep) {
  Matrix Z = Z_full;
  for (std::size_t i = 0; i < Z.rows(); ++i) {
    auto row = Z.row(i);
    for (std::size_t j = 0; j < Z.cols(); ++j) {
      if (!keep[j]) row[j] = 0.0;
    }
  }
  const Matrix Xhat = decode(params, Z);
  double acc = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double r = Xhat.data()[i] - X.data()[i];
    acc += r * r;
  }
  return acc / static_cast<double>(X.rows());
}

}  // namespace

AblationReport mse_ablation(const SaeParams& params, const Matrix& data,
                            const SparsityMechanism& mech, std::size_t n,
                            std::uint64_t random_seed) {
  if (n > params.m) {
    throw ConfigError("ablation.n exceeds latent count m (" +
                      std::to_string(n) + " > " + std::to_string(params.m) +
                      ")");
  }
  if (data.rows() == 0) throw ConfigError("ablation requires nonempty data");

  AblationReport rep;
  rep.n = n;
  rep.random_seed = random_seed;

  // top n by alignment, descending; lower index wins ties
  const auto align = enc_dec_alignment(params);
  std::vector<std::size_t> order(params.m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (align[a] != align[b]) return align[a] > align[b];
                     return a < b;
                   });
  rep.top_indices.assign(order.begin(), order.begin() + n);

  // n distinct random latents, seeded draw
  SeededRng rng(random_seed);
  std::vector<std::size_t> pool(params.m);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(params.m - i);
    std::swap(pool[i], pool[j]);
  }
  rep.random_indices.assign(pool.begin(), pool.begin() + n);

  const Matrix Z = encode(params, data, mech);
  std::vector<bool> keep(params.m, true);
  rep.mse_full = masked_reconstruction_mse(params, data, Z, keep);

  std::fill(keep.begin(), keep.end(), false);
  for (std::size_t i : rep.top_indices) keep[i] = true;
  rep.mse_top_n = masked_reconstruction_mse(params, data, Z, keep);

  std::fill(keep.begin(), keep.end(), false);
  for (std::size_t i : rep.random_indices) keep[i] = true;
  rep.mse_random_n = masked_reconstruction_mse(params, data, Z, keep);

  std::fill(keep.begin(), keep.end(), true);
  for (std::size_t i : rep.top_indices) keep[i] = false;
  rep.mse_complement = masked_reconstruction_mse(params, data, Z, keep);
  return rep;
}

std::vector<std::size_t> histogram_counts(const std::vector<double>& values,
                                          double lo, double hi,
                                          std::size_t bins) {
  std::vector<std::size_t> counts(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    if (v < lo || v > hi) continue;
    auto b = static_cast<std::size_t>((v - lo) / width);
    if (b >= bins) b = bins - 1;
    ++counts[b];
  }
  return counts;
}

}  // namespace sae
