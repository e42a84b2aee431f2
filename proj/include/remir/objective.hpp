#pragma once

// Classifier head, threshold decoding, adaptive-thresholding loss and the
// symmetric-KL reconstruction loss.
//
// Logits carry R relation classes followed by one threshold (TH) class.
// Decoding and the classification loss compare raw logits against TH; the
// reconstruction loss compares per-cell softmax distributions over all R + 1
// classes.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "remir/autograd.hpp"
#include "remir/corpus.hpp"
#include "remir/encoder.hpp"
#include "remir/model.hpp"

namespace remir {

inline constexpr double kProbabilityFloor = 1e-12;

template <class T>
struct LabelScores {
  ag::Var<T> logits;  // n*n x (R+1)
  std::size_t n = 0;
  std::vector<std::size_t> valid;  // off-diagonal cells

  std::size_t threshold_class() const { return logits.cols() - 1; }
};

struct LossBreakdown {
  double reconstruction = 0.0;   // L_R
  double classification = 0.0;   // L_C
  double alpha = 1.0;
  double beta = 1.0;
  double total = 0.0;
};

inline LossBreakdown total_loss(double reconstruction, double classification, double alpha = 1.0, double beta = 1.0) {
  return {reconstruction, classification, alpha, beta, alpha * reconstruction + beta * classification};
}

template <class T>
LabelScores<T> classify(ag::Var<T> corrected, std::size_t n, Bound<T>& p) {
  return {ag::add_row(ag::matmul(corrected, p("cls.w")), p("cls.b")), n, off_diagonal_cells(n)};
}

/// Triples (s, o, r) with logit_r strictly above the TH logit, over valid cells.
/// Entity indices are matrix rows.
template <class T>
std::vector<Triple> decode(const Matrix<T>& logits, std::size_t n) {
  std::vector<Triple> out;
  const std::size_t th = logits.cols() - 1;
  for (std::size_t c : off_diagonal_cells(n)) {
    for (std::size_t r = 0; r < th; ++r)
      if (logits(c, r) > logits(c, th)) out.push_back(Triple{c / n, c % n, r, {}, Provenance::none});
  }
  return out;
}

template <class T>
std::vector<Triple> decode(const LabelScores<T>& scores) {
  return decode(scores.logits.value(), scores.n);
}

/// Softmax over all R + 1 classes for every row.
template <class T>
Matrix<T> cell_distributions(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    T m = -std::numeric_limits<T>::infinity();
    for (T v : logits.row(r)) m = std::max(m, v);
    T s = 0;
    for (std::size_t c = 0; c < logits.cols(); ++c) s += (p(r, c) = std::exp(logits(r, c) - m));
    for (std::size_t c = 0; c < logits.cols(); ++c) p(r, c) /= s;
  }
  return p;
}

/// Mean over `rows` of (KL(p||q) + KL(q||p)) / 2, natural log, probabilities floored at 1e-12.
template <class T>
T loss_recon(const Matrix<T>& p, const Matrix<T>& q, const std::vector<std::size_t>& rows) {
  if (!p.same_shape(q)) throw std::invalid_argument("loss_recon: shape mismatch");
  if (rows.empty()) return T(0);
  const T floor = static_cast<T>(kProbabilityFloor);
  T total = 0;
  for (std::size_t r : rows)
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const T a = std::max(p(r, c), floor), b = std::max(q(r, c), floor);
      total += (p(r, c) - q(r, c)) * (std::log(a) - std::log(b));
    }
  return total / (T(2) * static_cast<T>(rows.size()));
}

namespace detail {

template <class T>
void log_softmax_row(std::span<const T> z, std::vector<T>& lp, std::vector<T>& p) {
  T m = -std::numeric_limits<T>::infinity();
  for (T v : z) m = std::max(m, v);
  T s = 0;
  for (T v : z) s += std::exp(v - m);
  const T lse = m + std::log(s);
  const T floor = std::log(static_cast<T>(kProbabilityFloor));
  lp.resize(z.size());
  p.resize(z.size());
  for (std::size_t c = 0; c < z.size(); ++c) {
    p[c] = std::exp(z[c] - lse);
    lp[c] = std::max(z[c] - lse, floor);
  }
}

}  // namespace detail

/// Differentiable loss_recon on logits of the two paths.
template <class T>
ag::Var<T> reconstruction_loss(ag::Var<T> logits_a, ag::Var<T> logits_b, std::vector<std::size_t> rows) {
  ag::detail::require<T>(logits_a.value().same_shape(logits_b.value()), "reconstruction_loss", "shape mismatch");
  auto* t = logits_a.tape;
  const std::size_t k = logits_a.cols();
  std::vector<T> lp, p, lq, q;
  T total = 0;
  for (std::size_t r : rows) {
    detail::log_softmax_row(logits_a.value().row(r), lp, p);
    detail::log_softmax_row(logits_b.value().row(r), lq, q);
    for (std::size_t c = 0; c < k; ++c) total += (p[c] - q[c]) * (lp[c] - lq[c]);
  }
  const T value = rows.empty() ? T(0) : total / (T(2) * static_cast<T>(rows.size()));
  return t->push(Matrix<T>(1, 1, value), ag::detail::any_needs(logits_a, logits_b),
                 [t, logits_a, logits_b, rows = std::move(rows), id = t->size()] {
                   if (rows.empty()) return;
                   const T g = t->grad(id)[0] / (T(2) * static_cast<T>(rows.size()));
                   const std::size_t k = logits_a.cols();
                   std::vector<T> lp, p, lq, q;
                   for (std::size_t r : rows) {
                     detail::log_softmax_row(logits_a.value().row(r), lp, p);
                     detail::log_softmax_row(logits_b.value().row(r), lq, q);
                     T kl_pq = 0, kl_qp = 0;
                     for (std::size_t c = 0; c < k; ++c) {
                       kl_pq += p[c] * (lp[c] - lq[c]);
                       kl_qp += q[c] * (lq[c] - lp[c]);
                     }
                     if (t->needs_grad(logits_a)) {
                       auto ga = t->grad(logits_a.id).row(r);
                       for (std::size_t c = 0; c < k; ++c)
                         ga[c] += g * (p[c] * (lp[c] - lq[c]) - p[c] * kl_pq + p[c] - q[c]);
                     }
                     if (t->needs_grad(logits_b)) {
                       auto gb = t->grad(logits_b.id).row(r);
                       for (std::size_t c = 0; c < k; ++c)
                         gb[c] += g * (q[c] * (lq[c] - lp[c]) - q[c] * kl_qp + q[c] - p[c]);
                     }
                   }
                 });
}

/// Adaptive-thresholding loss, averaged over `rows`.
///
/// Per cell with positive set P and negatives N (TH is the last class):
///   L1 = -sum_{r in P} log softmax_{P + TH}(r),  L2 = -log softmax_{N + TH}(TH).
template <class T>
ag::Var<T> loss_atl(ag::Var<T> logits, std::vector<std::vector<std::size_t>> positives, std::vector<std::size_t> rows) {
  auto* t = logits.tape;
  const std::size_t k = logits.cols(), th = k - 1;
  ag::detail::require<T>(positives.size() == logits.rows(), "loss_atl", "one positive list per row required");

  // Per-row softmax weights over S1 = P + TH and S2 = N + TH.
  auto row_terms = [k, th](std::span<const T> z, const std::vector<std::size_t>& pos, std::vector<char>& is_pos,
                           std::vector<T>& s1, std::vector<T>& s2) {
    is_pos.assign(k, 0);
    for (std::size_t r : pos) is_pos[r] = 1;
    T m1 = z[th], m2 = z[th];
    for (std::size_t c = 0; c < th; ++c) (is_pos[c] ? m1 : m2) = std::max(is_pos[c] ? m1 : m2, z[c]);
    T sum1 = 0, sum2 = 0;
    s1.assign(k, 0);
    s2.assign(k, 0);
    for (std::size_t c = 0; c < k; ++c) {
      if (c == th || is_pos[c]) sum1 += (s1[c] = std::exp(z[c] - m1));
      if (c == th || !is_pos[c]) sum2 += (s2[c] = std::exp(z[c] - m2));
    }
    for (std::size_t c = 0; c < k; ++c) {
      s1[c] /= sum1;
      s2[c] /= sum2;
    }
    const T lse1 = m1 + std::log(sum1), lse2 = m2 + std::log(sum2);
    T loss = lse2 - z[th];
    for (std::size_t r : pos) loss += lse1 - z[r];
    return loss;
  };

  std::vector<char> is_pos;
  std::vector<T> s1, s2;
  T total = 0;
  for (std::size_t r : rows) total += row_terms(logits.value().row(r), positives[r], is_pos, s1, s2);
  const T value = rows.empty() ? T(0) : total / static_cast<T>(rows.size());
  return t->push(Matrix<T>(1, 1, value), ag::detail::any_needs(logits),
                 [t, logits, positives = std::move(positives), rows = std::move(rows), row_terms, th, id = t->size()] {
                   if (rows.empty()) return;
                   const T g = t->grad(id)[0] / static_cast<T>(rows.size());
                   std::vector<char> is_pos;
                   std::vector<T> s1, s2;
                   Matrix<T>& gl = t->grad(logits.id);
                   for (std::size_t r : rows) {
                     row_terms(logits.value().row(r), positives[r], is_pos, s1, s2);
                     const T npos = static_cast<T>(positives[r].size());
                     auto dst = gl.row(r);
                     for (std::size_t c = 0; c < dst.size(); ++c) {
                       T d = s2[c] - (c == th ? T(1) : T(0));
                       d += npos * s1[c] - (is_pos[c] ? T(1) : T(0));
                       dst[c] += g * d;
                     }
                   }
                 });
}

/// Positive relation lists per cell of an n x n grid. `entity_row` maps
/// document entity ids to matrix rows (or -1 when the entity is absent).
inline std::vector<std::vector<std::size_t>> cell_positives(const std::vector<Triple>& gold, std::size_t n,
                                                            const std::vector<long>& entity_row) {
  std::vector<std::vector<std::size_t>> pos(n * n);
  for (const Triple& t : gold) {
    const long h = entity_row.at(t.head), o = entity_row.at(t.tail);
    if (h < 0 || o < 0) continue;
    pos[static_cast<std::size_t>(h) * n + static_cast<std::size_t>(o)].push_back(t.relation);
  }
  for (auto& p : pos) {
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
  }
  return pos;
}

}  // namespace remir
