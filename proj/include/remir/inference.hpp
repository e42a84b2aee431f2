#pragma once

// Masking of the entity-pair matrix and the inference stack built from
// inference multi-head self-attention (I-MSA).
//
// Each I-MSA head owns one two-hop inference mode. For query cell (A, B) and
// every bridge index k the head forms a candidate from two cells of its
// channel slice X:
//
//   mode 1  A->k + k->B   [X(A,k), X(k,B)]
//   mode 2  A->k + B->k   [X(A,k), X(B,k)]
//   mode 3  k->A + B->k   [X(k,A), X(B,k)]
//   mode 4  k->A + k->B   [X(k,A), X(k,B)]
//
// reduces it to the head width with the mode's affine map, appends X(A,B)
// itself, and attends from X(A,B) over the N + 1 candidates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "remir/autograd.hpp"
#include "remir/encoder.hpp"
#include "remir/model.hpp"
#include "remir/rng.hpp"

namespace remir {

struct MaskPlan {
  std::vector<std::pair<std::size_t, std::size_t>> cells;  // sorted (s, o), never diagonal
  double rate = 0.0;
  std::uint64_t seed = 0;
};

/// Uniformly samples round(rate * N(N-1)) off-diagonal cells without replacement.
inline MaskPlan sample_mask(std::size_t n, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("sample_mask: rate outside [0, 1]");
  if (n == 0) throw std::invalid_argument("sample_mask: no entities");
  MaskPlan plan;
  plan.rate = rate;
  plan.seed = seed;
  const auto cells = off_diagonal_cells(n);
  const auto k = static_cast<std::size_t>(std::lround(rate * static_cast<double>(cells.size())));
  Rng rng(seed);
  for (std::size_t i : rng.sample_without_replacement(cells.size(), k)) plan.cells.emplace_back(cells[i] / n, cells[i] % n);
  std::sort(plan.cells.begin(), plan.cells.end());
  return plan;
}

/// Copy of M whose planned cells hold the mask vector; M is left untouched.
template <class T>
PairMatrix<T> apply_mask(const PairMatrix<T>& m, const MaskPlan& plan, ag::Var<T> mask_vector) {
  PairMatrix<T> out;
  out.n = m.n;
  out.mask.assign(m.n * m.n, 0);
  std::vector<std::size_t> rows;
  for (const auto& [s, o] : plan.cells) {
    if (s >= m.n || o >= m.n) throw std::logic_error("apply_mask: cell out of bounds");
    if (s == o) throw std::logic_error("apply_mask: diagonal cell in mask plan");
    rows.push_back(m.cell(s, o));
    out.mask[m.cell(s, o)] = 1;
  }
  out.values = rows.empty() ? m.values : ag::replace_rows(m.values, mask_vector, rows);
  return out;
}

// ---------------------------------------------------------------- I-MSA kernels

enum class InferenceMode { a_to_k_to_b = 1, a_to_k_b_to_k = 2, k_to_a_b_to_k = 3, k_to_a_k_to_b = 4 };

/// Cell indices (first, second) that bridge k contributes to query (a, b).
inline std::pair<std::size_t, std::size_t> bridge_cells(InferenceMode mode, std::size_t n, std::size_t a,
                                                        std::size_t b, std::size_t k) {
  switch (mode) {
    case InferenceMode::a_to_k_to_b: return {a * n + k, k * n + b};
    case InferenceMode::a_to_k_b_to_k: return {a * n + k, b * n + k};
    case InferenceMode::k_to_a_b_to_k: return {k * n + a, b * n + k};
    case InferenceMode::k_to_a_k_to_b: return {k * n + a, k * n + b};
  }
  throw std::invalid_argument("unknown inference mode");
}

inline InferenceMode mode_of_head(std::size_t head, std::size_t heads_per_mode) {
  return static_cast<InferenceMode>(1 + head / heads_per_mode);
}

/// Candidate rows for every query cell: row c*(n+1)+k = first[i1] + second[i2] + bias
/// for bridges k < n, and row c*(n+1)+n = self[c].
///
/// `first` and `second` are the two halves of the pair reduction already
/// applied to every cell, since Linear([x, y]) = x W_1 + y W_2 + b.
template <class T>
ag::Var<T> pair_candidates(ag::Var<T> first, ag::Var<T> second, ag::Var<T> bias, ag::Var<T> self, std::size_t n,
                           InferenceMode mode) {
  const std::size_t w = first.cols(), group = n + 1;
  ag::detail::require<T>(first.rows() == n * n && second.rows() == n * n && self.rows() == n * n,
                         "pair_candidates", "inputs must have n*n rows");
  ag::detail::require<T>(second.cols() == w && self.cols() == w && bias.cols() == w, "pair_candidates",
                         "width mismatch");
  auto* t = first.tape;
  Matrix<T> out(n * n * group, w);
  const Matrix<T>& f = first.value();
  const Matrix<T>& s = second.value();
  const Matrix<T>& b = bias.value();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t bb = 0; bb < n; ++bb) {
      const std::size_t c = a * n + bb;
      for (std::size_t k = 0; k < n; ++k) {
        const auto [i1, i2] = bridge_cells(mode, n, a, bb, k);
        auto dst = out.row(c * group + k);
        for (std::size_t j = 0; j < w; ++j) dst[j] = f(i1, j) + s(i2, j) + b[j];
      }
      std::copy(self.value().row(c).begin(), self.value().row(c).end(), out.row(c * group + n).begin());
    }
  return t->push(std::move(out), ag::detail::any_needs(first, second, bias, self),
                 [t, first, second, bias, self, n, mode, id = t->size()] {
                   const Matrix<T>& g = t->grad(id);
                   const std::size_t grp = n + 1, width = g.cols();
                   Matrix<T>* gf = t->needs_grad(first) ? &t->grad(first.id) : nullptr;
                   Matrix<T>* gs = t->needs_grad(second) ? &t->grad(second.id) : nullptr;
                   Matrix<T>* gb = t->needs_grad(bias) ? &t->grad(bias.id) : nullptr;
                   Matrix<T>* gx = t->needs_grad(self) ? &t->grad(self.id) : nullptr;
                   for (std::size_t a = 0; a < n; ++a)
                     for (std::size_t bb = 0; bb < n; ++bb) {
                       const std::size_t c = a * n + bb;
                       for (std::size_t k = 0; k < n; ++k) {
                         const auto [i1, i2] = bridge_cells(mode, n, a, bb, k);
                         auto src = g.row(c * grp + k);
                         for (std::size_t j = 0; j < width; ++j) {
                           if (gf) (*gf)(i1, j) += src[j];
                           if (gs) (*gs)(i2, j) += src[j];
                           if (gb) (*gb)[j] += src[j];
                         }
                       }
                       if (gx) {
                         auto src = g.row(c * grp + n);
                         auto dst = gx->row(c);
                         for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                       }
                     }
                 });
}

/// Softmax weights of query row c over key rows [c*group, (c+1)*group).
template <class T>
Matrix<T> group_attention_weights(const Matrix<T>& query, const Matrix<T>& keys, std::size_t group, T scale) {
  Matrix<T> w(query.rows(), group);
  for (std::size_t c = 0; c < query.rows(); ++c) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < group; ++j) {
      T s = 0;
      for (std::size_t x = 0; x < query.cols(); ++x) s += query(c, x) * keys(c * group + j, x);
      w(c, j) = s * scale;
      mx = std::max(mx, w(c, j));
    }
    T sum = 0;
    for (std::size_t j = 0; j < group; ++j) sum += (w(c, j) = std::exp(w(c, j) - mx));
    for (std::size_t j = 0; j < group; ++j) w(c, j) /= sum;
  }
  return w;
}

/// out[c] = sum_j softmax_j(q_c . k_{c,j} * scale) v_{c,j}, with each query
/// attending only to its own group of `group` key/value rows.
template <class T>
ag::Var<T> group_attention(ag::Var<T> query, ag::Var<T> keys, ag::Var<T> values, std::size_t group, T scale) {
  ag::detail::require<T>(keys.rows() == query.rows() * group && values.rows() == keys.rows(), "group_attention",
                         "key/value rows must equal queries * group");
  ag::detail::require<T>(keys.cols() == query.cols(), "group_attention", "key width mismatch");
  auto* t = query.tape;
  Matrix<T> w = group_attention_weights(query.value(), keys.value(), group, scale);
  const Matrix<T>& v = values.value();
  Matrix<T> out(query.rows(), v.cols());
  for (std::size_t c = 0; c < query.rows(); ++c)
    for (std::size_t j = 0; j < group; ++j) {
      const T a = w(c, j);
      auto src = v.row(c * group + j);
      for (std::size_t x = 0; x < v.cols(); ++x) out(c, x) += a * src[x];
    }
  return t->push(std::move(out), ag::detail::any_needs(query, keys, values),
                 [t, query, keys, values, group, scale, w = std::move(w), id = t->size()] {
                   const Matrix<T>& g = t->grad(id);
                   const Matrix<T>& q = query.value();
                   const Matrix<T>& k = keys.value();
                   const Matrix<T>& v = values.value();
                   Matrix<T>* gq = t->needs_grad(query) ? &t->grad(query.id) : nullptr;
                   Matrix<T>* gk = t->needs_grad(keys) ? &t->grad(keys.id) : nullptr;
                   Matrix<T>* gv = t->needs_grad(values) ? &t->grad(values.id) : nullptr;
                   std::vector<T> ga(group), gs(group);
                   for (std::size_t c = 0; c < q.rows(); ++c) {
                     T dot = 0;
                     for (std::size_t j = 0; j < group; ++j) {
                       T s = 0;
                       for (std::size_t x = 0; x < v.cols(); ++x) s += g(c, x) * v(c * group + j, x);
                       ga[j] = s;
                       dot += w(c, j) * s;
                     }
                     for (std::size_t j = 0; j < group; ++j) gs[j] = w(c, j) * (ga[j] - dot) * scale;
                     for (std::size_t j = 0; j < group; ++j) {
                       const std::size_t r = c * group + j;
                       if (gv)
                         for (std::size_t x = 0; x < v.cols(); ++x) (*gv)(r, x) += w(c, j) * g(c, x);
                       if (gk)
                         for (std::size_t x = 0; x < q.cols(); ++x) (*gk)(r, x) += gs[j] * q(c, x);
                       if (gq)
                         for (std::size_t x = 0; x < q.cols(); ++x) (*gq)(c, x) += gs[j] * k(r, x);
                     }
                   }
                 });
}

// ---------------------------------------------------------------- heads and layers

/// One I-MSA head over its channel slice (n*n x d_head).
template <class T>
ag::Var<T> imsa_head(ag::Var<T> x, std::size_t n, InferenceMode mode, Bound<T>& p, const std::string& prefix) {
  const T scale = T(1) / std::sqrt(static_cast<T>(x.cols()));
  auto first = ag::matmul(x, p(prefix + "red_first"));
  auto second = ag::matmul(x, p(prefix + "red_second"));
  auto candidates = pair_candidates(first, second, p(prefix + "red_bias"), x, n, mode);
  auto q = ag::matmul(x, p(prefix + "wq"));
  auto k = ag::matmul(candidates, p(prefix + "wk"));
  auto v = ag::matmul(candidates, p(prefix + "wv"));
  return group_attention(q, k, v, n + 1, scale);
}

/// Plain self-attention head over all n*n cells (the I-MSA ablation).
template <class T>
ag::Var<T> plain_head(ag::Var<T> x, Bound<T>& p, const std::string& prefix) {
  const T scale = T(1) / std::sqrt(static_cast<T>(x.cols()));
  auto q = ag::matmul(x, p(prefix + "wq"));
  auto k = ag::matmul(x, p(prefix + "wk"));
  auto v = ag::matmul(x, p(prefix + "wv"));
  return ag::matmul(ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), scale)), v);
}

/// Post-norm encoder layer with I-MSA (or plain attention) as the mixer.
template <class T>
ag::Var<T> inference_layer(ag::Var<T> x, std::size_t n, std::size_t layer, Bound<T>& p, const ModelConfig& cfg) {
  if (x.cols() % 4 != 0 || x.cols() != cfg.matrix_width)
    throw std::invalid_argument("inference_layer: width must equal matrix_width and be divisible by 4");
  const std::size_t heads = cfg.inference_heads(), dh = cfg.head_width();
  std::vector<ag::Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto slice = ag::slice_cols(x, h * dh, dh);
    const std::string hp = head_prefix(layer, h);
    outs.push_back(cfg.attention == InferenceAttention::imsa
                       ? imsa_head(slice, n, mode_of_head(h, cfg.heads_per_mode), p, hp)
                       : plain_head(slice, p, hp));
  }
  const std::string lp = inference_prefix(layer);
  auto mixed = detail::affine(ag::concat_cols(outs), p, lp + "out_w", lp + "out_b");
  auto y = ag::layer_norm(ag::add(x, mixed), p(lp + "ln1_g"), p(lp + "ln1_b"));
  auto ff = detail::affine(ag::activate(detail::affine(y, p, lp + "ff1_w", lp + "ff1_b"), cfg.activation), p,
                           lp + "ff2_w", lp + "ff2_b");
  return ag::layer_norm(ag::add(y, ff), p(lp + "ln2_g"), p(lp + "ln2_b"));
}

/// `depth` untied layers applied in sequence.
template <class T>
ag::Var<T> inference_stack(ag::Var<T> x, std::size_t n, std::size_t depth, Bound<T>& p, const ModelConfig& cfg) {
  for (std::size_t l = 0; l < depth; ++l) x = inference_layer(x, n, l, p, cfg);
  return x;
}

}  // namespace remir
