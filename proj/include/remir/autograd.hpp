#pragma once

// Reverse-mode differentiation over Matrix values.
//
// A Tape records every operation of one forward pass. Each node owns its
// value, a lazily allocated gradient and a closure that pushes the node's
// gradient into its inputs. Nodes are appended in topological order, so
// backward() just walks the tape in reverse.

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "remir/tensor.hpp"

namespace remir::ag {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T scalar() const { return value()[0]; }
};

template <class T>
class Tape {
 public:
  Tape() { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> v) { return push(std::move(v), false, nullptr); }
  Var<T> variable(Matrix<T> v) { return push(std::move(v), true, nullptr); }

  Var<T> push(Matrix<T> v, bool needs_grad, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(v), {}, needs_grad, std::move(backward)});
    return Var<T>{this, nodes_.size() - 1};
  }

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var<T>& v) const { return nodes_[v.id].needs_grad; }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty() || nodes_[id].value.empty(); }

  /// Gradient buffer of a node, zero-initialised on first access.
  Matrix<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(const Var<T>& root) {
    if (root.value().size() != 1) throw std::invalid_argument("backward: root must be 1x1");
    grad(root.id)[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.needs_grad && !n.grad.empty()) n.backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool needs_grad;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
void require(bool ok, const char* op, const char* what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <class T, class... Vs>
bool any_needs(const Var<T>& a, const Vs&... rest) {
  return (a.tape->needs_grad(a) || ... || rest.tape->needs_grad(rest));
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require<T>(a.cols() == b.rows(), "matmul", "inner dimension mismatch");
  Tape<T>* t = a.tape;
  Matrix<T> out(a.rows(), b.cols());
  as_eigen(out).noalias() = as_eigen(a.value()) * as_eigen(b.value());
  return t->push(std::move(out), detail::any_needs(a, b), [t, a, b, id = t->size()] {
    const auto g = as_eigen(t->grad(id));
    if (t->needs_grad(a)) as_eigen(t->grad(a.id)).noalias() += g * as_eigen(b.value()).transpose();
    if (t->needs_grad(b)) as_eigen(t->grad(b.id)).noalias() += as_eigen(a.value()).transpose() * g;
  });
}

/// a * b^T
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::require<T>(a.cols() == b.cols(), "matmul_nt", "inner dimension mismatch");
  Tape<T>* t = a.tape;
  Matrix<T> out(a.rows(), b.rows());
  as_eigen(out).noalias() = as_eigen(a.value()) * as_eigen(b.value()).transpose();
  return t->push(std::move(out), detail::any_needs(a, b), [t, a, b, id = t->size()] {
    const auto g = as_eigen(t->grad(id));
    if (t->needs_grad(a)) as_eigen(t->grad(a.id)).noalias() += g * as_eigen(b.value());
    if (t->needs_grad(b)) as_eigen(t->grad(b.id)).noalias() += g.transpose() * as_eigen(a.value());
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require<T>(a.value().same_shape(b.value()), "add", "shape mismatch");
  Tape<T>* t = a.tape;
  Matrix<T> out = a.value();
  as_eigen(out) += as_eigen(b.value());
  return t->push(std::move(out), detail::any_needs(a, b), [t, a, b, id = t->size()] {
    const auto g = as_eigen(t->grad(id));
    if (t->needs_grad(a)) as_eigen(t->grad(a.id)) += g;
    if (t->needs_grad(b)) as_eigen(t->grad(b.id)) += g;
  });
}

/// Broadcast-adds a 1 x c row to every row of a.
template <class T>
Var<T> add_row(Var<T> a, Var<T> bias) {
  detail::require<T>(bias.rows() == 1 && bias.cols() == a.cols(), "add_row", "bias shape mismatch");
  Tape<T>* t = a.tape;
  Matrix<T> out = a.value();
  as_eigen(out).rowwise() += as_eigen(bias.value()).row(0);
  return t->push(std::move(out), detail::any_needs(a, bias), [t, a, bias, id = t->size()] {
    const auto g = as_eigen(t->grad(id));
    if (t->needs_grad(a)) as_eigen(t->grad(a.id)) += g;
    if (t->needs_grad(bias)) as_eigen(t->grad(bias.id)) += g.colwise().sum();
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>* t = a.tape;
  Matrix<T> out = a.value();
  as_eigen(out) *= s;
  return t->push(std::move(out), detail::any_needs(a), [t, a, s, id = t->size()] {
    as_eigen(t->grad(a.id)) += s * as_eigen(t->grad(id));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require<T>(a.value().same_shape(b.value()), "mul", "shape mismatch");
  Tape<T>* t = a.tape;
  Matrix<T> out = a.value();
  as_eigen(out).array() *= as_eigen(b.value()).array();
  return t->push(std::move(out), detail::any_needs(a, b), [t, a, b, id = t->size()] {
    const auto g = as_eigen(t->grad(id)).array();
    if (t->needs_grad(a)) as_eigen(t->grad(a.id)).array() += g * as_eigen(b.value()).array();
    if (t->needs_grad(b)) as_eigen(t->grad(b.id)).array() += g * as_eigen(a.value()).array();
  });
}

// ---------------------------------------------------------------- nonlinearities

enum class Activation { gelu, tanh };

template <class T>
Var<T> activate(Var<T> a, Activation kind) {
  Tape<T>* t = a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  Matrix<T> deriv(x.rows(), x.cols());
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (kind == Activation::gelu) {
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      out[i] = v * cdf;
      deriv[i] = cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
    } else {
      const T th = std::tanh(v);
      out[i] = th;
      deriv[i] = T(1) - th * th;
    }
  }
  return t->push(std::move(out), detail::any_needs(a), [t, a, d = std::move(deriv), id = t->size()] {
    as_eigen(t->grad(a.id)).array() += as_eigen(t->grad(id)).array() * as_eigen(d).array();
  });
}

/// Row-wise softmax with max shift.
template <class T>
Var<T> softmax_rows(Var<T> a) {
  Tape<T>* t = a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    T m = -std::numeric_limits<T>::infinity();
    for (T v : in) m = std::max(m, v);
    T s = 0;
    for (std::size_t c = 0; c < in.size(); ++c) s += (out[c] = std::exp(in[c] - m));
    for (T& v : out) v /= s;
  }
  return t->push(std::move(y), detail::any_needs(a), [t, a, id = t->size()] {
    const Matrix<T>& yv = t->value(id);
    const Matrix<T>& g = t->grad(id);
    Matrix<T>& ga = t->grad(a.id);
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < yv.cols(); ++c) dot += g(r, c) * yv(r, c);
      for (std::size_t c = 0; c < yv.cols(); ++c) ga(r, c) += yv(r, c) * (g(r, c) - dot);
    }
  });
}

template <class T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  const std::size_t n = a.cols();
  detail::require<T>(gain.cols() == n && bias.cols() == n, "layer_norm", "parameter width mismatch");
  Tape<T>* t = a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> xhat(x.rows(), n);
  std::vector<T> inv_std(x.rows());
  Matrix<T> out(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T mean = 0;
    for (T v : x.row(r)) mean += v;
    mean /= static_cast<T>(n);
    T var = 0;
    for (T v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<T>(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (x(r, c) - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gain.value()[c] + bias.value()[c];
    }
  }
  return t->push(std::move(out), detail::any_needs(a, gain, bias),
                 [t, a, gain, bias, xh = std::move(xhat), is = std::move(inv_std), id = t->size()] {
                   const Matrix<T>& g = t->grad(id);
                   const std::size_t w = g.cols();
                   if (t->needs_grad(gain) || t->needs_grad(bias)) {
                     for (std::size_t r = 0; r < g.rows(); ++r)
                       for (std::size_t c = 0; c < w; ++c) {
                         if (t->needs_grad(gain)) t->grad(gain.id)[c] += g(r, c) * xh(r, c);
                         if (t->needs_grad(bias)) t->grad(bias.id)[c] += g(r, c);
                       }
                   }
                   if (!t->needs_grad(a)) return;
                   Matrix<T>& ga = t->grad(a.id);
                   const Matrix<T>& gv = gain.value();
                   std::vector<T> dxh(w);
                   for (std::size_t r = 0; r < g.rows(); ++r) {
                     T sum = 0, sum_x = 0;
                     for (std::size_t c = 0; c < w; ++c) {
                       dxh[c] = g(r, c) * gv[c];
                       sum += dxh[c];
                       sum_x += dxh[c] * xh(r, c);
                     }
                     const T k = is[r] / static_cast<T>(w);
                     for (std::size_t c = 0; c < w; ++c)
                       ga(r, c) += k * (static_cast<T>(w) * dxh[c] - sum - xh(r, c) * sum_x);
                   }
                 });
}

// ---------------------------------------------------------------- indexing

template <class T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> idx) {
  Tape<T>* t = a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require<T>(idx[i] < x.rows(), "gather_rows", "index out of range");
    std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
  }
  return t->push(std::move(out), detail::any_needs(a), [t, a, idx = std::move(idx), id = t->size()] {
    const Matrix<T>& g = t->grad(id);
    Matrix<T>& ga = t->grad(a.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = ga.row(idx[i]);
      auto src = g.row(i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

/// Places row i of a at row idx[i] of an otherwise-zero (rows x cols) result.
template <class T>
Var<T> scatter_rows(Var<T> a, std::vector<std::size_t> idx, std::size_t rows) {
  detail::require<T>(idx.size() == a.rows(), "scatter_rows", "index count mismatch");
  Tape<T>* t = a.tape;
  Matrix<T> out(rows, a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require<T>(idx[i] < rows, "scatter_rows", "index out of range");
    auto dst = out.row(idx[i]);
    auto src = a.value().row(i);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
  }
  return t->push(std::move(out), detail::any_needs(a), [t, a, idx = std::move(idx), id = t->size()] {
    const Matrix<T>& g = t->grad(id);
    Matrix<T>& ga = t->grad(a.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = ga.row(i);
      auto src = g.row(idx[i]);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require<T>(!parts.empty(), "concat_cols", "no inputs");
  Tape<T>* t = parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool needs = false;
  for (const auto& p : parts) {
    detail::require<T>(p.rows() == rows, "concat_cols", "row count mismatch");
    cols += p.cols();
    needs = needs || t->needs_grad(p);
  }
  Matrix<T> out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    as_eigen(out).middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(p.cols())) =
        as_eigen(p.value());
    off += p.cols();
  }
  return t->push(std::move(out), needs, [t, parts, id = t->size()] {
    const auto g = as_eigen(t->grad(id));
    std::size_t o = 0;
    for (const auto& p : parts) {
      if (t->needs_grad(p))
        as_eigen(t->grad(p.id)) +=
            g.middleCols(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(p.cols()));
      o += p.cols();
    }
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t width) {
  detail::require<T>(start + width <= a.cols(), "slice_cols", "range out of bounds");
  Tape<T>* t = a.tape;
  Matrix<T> out(a.rows(), width);
  as_eigen(out) =
      as_eigen(a.value()).middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(width));
  return t->push(std::move(out), detail::any_needs(a), [t, a, start, width, id = t->size()] {
    as_eigen(t->grad(a.id)).middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(width)) +=
        as_eigen(t->grad(id));
  });
}

/// Replaces the listed rows of a with the 1 x c row `fill`; other rows pass through.
template <class T>
Var<T> replace_rows(Var<T> a, Var<T> fill, std::vector<std::size_t> rows) {
  detail::require<T>(fill.rows() == 1 && fill.cols() == a.cols(), "replace_rows", "fill shape mismatch");
  Tape<T>* t = a.tape;
  Matrix<T> out = a.value();
  std::vector<char> hit(a.rows(), 0);
  for (std::size_t r : rows) {
    detail::require<T>(r < a.rows(), "replace_rows", "row out of range");
    hit[r] = 1;
    std::copy(fill.value().row(0).begin(), fill.value().row(0).end(), out.row(r).begin());
  }
  return t->push(std::move(out), detail::any_needs(a, fill), [t, a, fill, hit = std::move(hit), id = t->size()] {
    const Matrix<T>& g = t->grad(id);
    const bool need_a = t->needs_grad(a), need_fill = t->needs_grad(fill);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      if (hit[r] ? !need_fill : !need_a) continue;
      auto d = hit[r] ? t->grad(fill.id).row(0) : t->grad(a.id).row(r);
      auto s = g.row(r);
      for (std::size_t c = 0; c < s.size(); ++c) d[c] += s[c];
    }
  });
}

// ---------------------------------------------------------------- segment reductions

using Groups = std::vector<std::vector<std::size_t>>;

/// out[g] = log sum_{r in groups[g]} exp(a[r]), column-wise with max shift.
template <class T>
Var<T> segment_logsumexp(Var<T> a, Groups groups) {
  Tape<T>* t = a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> out(groups.size(), x.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    detail::require<T>(!groups[g].empty(), "segment_logsumexp", "empty group");
    for (std::size_t c = 0; c < x.cols(); ++c) {
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t r : groups[g]) m = std::max(m, x(r, c));
      T s = 0;
      for (std::size_t r : groups[g]) s += std::exp(x(r, c) - m);
      out(g, c) = m + std::log(s);
    }
  }
  return t->push(std::move(out), detail::any_needs(a), [t, a, groups = std::move(groups), id = t->size()] {
    const Matrix<T>& y = t->value(id);
    const Matrix<T>& gy = t->grad(id);
    const Matrix<T>& xv = a.value();
    Matrix<T>& ga = t->grad(a.id);
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (std::size_t r : groups[g])
        for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) += gy(g, c) * std::exp(xv(r, c) - y(g, c));
  });
}

template <class T>
Var<T> segment_mean(Var<T> a, Groups groups) {
  Tape<T>* t = a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> out(groups.size(), x.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    detail::require<T>(!groups[g].empty(), "segment_mean", "empty group");
    const T w = T(1) / static_cast<T>(groups[g].size());
    for (std::size_t r : groups[g])
      for (std::size_t c = 0; c < x.cols(); ++c) out(g, c) += w * x(r, c);
  }
  return t->push(std::move(out), detail::any_needs(a), [t, a, groups = std::move(groups), id = t->size()] {
    const Matrix<T>& gy = t->grad(id);
    Matrix<T>& ga = t->grad(a.id);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const T w = T(1) / static_cast<T>(groups[g].size());
      for (std::size_t r : groups[g])
        for (std::size_t c = 0; c < gy.cols(); ++c) ga(r, c) += w * gy(g, c);
    }
  });
}

/// Divides each row by its sum.
template <class T>
Var<T> normalize_rows(Var<T> a) {
  Tape<T>* t = a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  std::vector<T> sums(x.rows(), 0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (T v : x.row(r)) sums[r] += v;
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / sums[r];
  }
  return t->push(std::move(out), detail::any_needs(a), [t, a, sums = std::move(sums), id = t->size()] {
    const Matrix<T>& y = t->value(id);
    const Matrix<T>& g = t->grad(id);
    Matrix<T>& ga = t->grad(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += (g(r, c) - dot) / sums[r];
    }
  });
}

template <class T>
Var<T> sum_all(Var<T> a) {
  Tape<T>* t = a.tape;
  Matrix<T> out(1, 1, as_eigen(a.value()).sum());
  return t->push(std::move(out), detail::any_needs(a), [t, a, id = t->size()] {
    as_eigen(t->grad(a.id)).array() += t->grad(id)[0];
  });
}

/// Weighted sum of 1x1 scalars.
template <class T>
Var<T> combine(const std::vector<std::pair<Var<T>, T>>& terms) {
  detail::require<T>(!terms.empty(), "combine", "no terms");
  Tape<T>* t = terms.front().first.tape;
  T v = 0;
  bool needs = false;
  for (const auto& [x, w] : terms) {
    detail::require<T>(x.value().size() == 1, "combine", "terms must be scalars");
    v += w * x.scalar();
    needs = needs || t->needs_grad(x);
  }
  return t->push(Matrix<T>(1, 1, v), needs, [t, terms, id = t->size()] {
    const T g = t->grad(id)[0];
    for (const auto& [x, w] : terms)
      if (t->needs_grad(x)) t->grad(x.id)[0] += w * g;
  });
}

}  // namespace remir::ag
