#pragma once

// Model hyper-parameters and the flat, named parameter store.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "remir/autograd.hpp"
#include "remir/rng.hpp"
#include "remir/tensor.hpp"

namespace remir {

enum class InferenceAttention { imsa, plain };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t num_relations = 0;  // R, excluding the threshold class
  std::size_t hidden = 128;        // h
  std::size_t encoder_layers = 2;
  std::size_t encoder_heads = 4;
  std::size_t pair_width = 128;    // output width of W_s / W_o
  std::size_t matrix_width = 256;  // d
  std::size_t inference_depth = 3;
  std::size_t heads_per_mode = 1;
  std::size_t max_tokens = 512;
  std::size_t max_entity_id = 64;
  ag::Activation activation = ag::Activation::gelu;
  InferenceAttention attention = InferenceAttention::imsa;
  double qk_identity_gain = 2.0;  // encoder W_q, W_k start at gain * I + 0.1 * random; 0 keeps plain random

  std::size_t num_classes() const { return num_relations + 1; }
  std::size_t threshold_class() const { return num_relations; }
  std::size_t inference_heads() const { return 4 * heads_per_mode; }
  std::size_t head_width() const { return matrix_width / inference_heads(); }

  void check() const {
    if (vocab_size == 0) throw std::invalid_argument("ModelConfig: empty vocabulary");
    if (hidden % encoder_heads != 0) throw std::invalid_argument("ModelConfig: hidden not divisible by encoder_heads");
    if (heads_per_mode == 0 || matrix_width % inference_heads() != 0)
      throw std::invalid_argument("ModelConfig: matrix_width must be divisible by 4 * heads_per_mode");
  }
};

template <class T>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Matrix<T> value;
  };

  void add(std::string name, Matrix<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    total_ += value.size();
    entries_.push_back({std::move(name), std::move(value)});
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  Matrix<T>& at(const std::string& name) { return entries_[index_of(name)].value; }
  const Matrix<T>& at(const std::string& name) const { return entries_[index_of(name)].value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Total scalar count; parameters are flat-indexable in entry order.
  std::size_t flat_size() const { return total_; }

  T& flat(std::size_t i) {
    auto [e, off] = locate(i);
    return entries_[e].value[off];
  }
  T flat(std::size_t i) const {
    auto [e, off] = locate(i);
    return entries_[e].value[off];
  }
  std::string flat_name(std::size_t i) const {
    auto [e, off] = locate(i);
    return entries_[e].name + "[" + std::to_string(off) + "]";
  }

  /// Zero-valued parameters of identical shapes (gradient / optimiser buffers).
  ModelParams zeros_like() const {
    ModelParams out;
    for (const auto& e : entries_) out.add(e.name, Matrix<T>(e.value.rows(), e.value.cols()));
    return out;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& e : entries_) out.add(e.name, remir::cast<U>(e.value));
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) return false;
    return true;
  }

 private:
  std::pair<std::size_t, std::size_t> locate(std::size_t i) const {
    for (std::size_t e = 0; e < entries_.size(); ++e) {
      if (i < entries_[e].value.size()) return {e, i};
      i -= entries_[e].value.size();
    }
    throw std::out_of_range("flat parameter index out of range");
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::size_t total_ = 0;
};

inline bool is_encoder_param(const std::string& name) { return name.rfind("enc.", 0) == 0; }

inline std::string inference_prefix(std::size_t layer) { return "inf." + std::to_string(layer) + "."; }
inline std::string head_prefix(std::size_t layer, std::size_t head) {
  return inference_prefix(layer) + "h" + std::to_string(head) + ".";
}

namespace detail {

template <class T>
Matrix<T> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(stddev * rng.normal());
  return m;
}

template <class T>
void add_weight(ModelParams<T>& p, Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  p.add(name, random_matrix<T>(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
}

template <class T>
void add_bias(ModelParams<T>& p, const std::string& name, std::size_t n, T value = T(0)) {
  p.add(name, Matrix<T>(1, n, value));
}

}  // namespace detail

/// Parameters for the inference layers [first, first + count).
template <class T>
void add_inference_params(ModelParams<T>& p, const ModelConfig& cfg, Rng& rng, std::size_t first, std::size_t count) {
  using detail::add_bias;
  using detail::add_weight;
  const std::size_t d = cfg.matrix_width, dh = cfg.head_width();
  for (std::size_t l = first; l < first + count; ++l) {
    for (std::size_t h = 0; h < cfg.inference_heads(); ++h) {
      const std::string hp = head_prefix(l, h);
      add_weight(p, rng, hp + "wq", dh, dh);
      add_weight(p, rng, hp + "wk", dh, dh);
      add_weight(p, rng, hp + "wv", dh, dh);
      if (cfg.attention == InferenceAttention::imsa) {
        // Pair reduction: [x_first, x_second] (2*dh) -> dh, stored as two blocks.
        add_weight(p, rng, hp + "red_first", dh, dh);
        add_weight(p, rng, hp + "red_second", dh, dh);
        add_bias(p, hp + "red_bias", dh);
      }
    }
    const std::string lp = inference_prefix(l);
    add_weight(p, rng, lp + "out_w", d, d);
    add_bias(p, lp + "out_b", d);
    add_bias(p, lp + "ln1_g", d, T(1));
    add_bias(p, lp + "ln1_b", d);
    add_weight(p, rng, lp + "ff1_w", d, 4 * d);
    add_bias(p, lp + "ff1_b", 4 * d);
    add_weight(p, rng, lp + "ff2_w", 4 * d, d);
    add_bias(p, lp + "ff2_b", d);
    add_bias(p, lp + "ln2_g", d, T(1));
    add_bias(p, lp + "ln2_b", d);
  }
}

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  using detail::add_bias;
  using detail::add_weight;
  cfg.check();
  Rng rng(derive_seed(seed, 0x9a7a));
  ModelParams<T> p;
  const std::size_t h = cfg.hidden, u = cfg.pair_width, d = cfg.matrix_width;

  p.add("enc.tok_emb", detail::random_matrix<T>(rng, cfg.vocab_size, h, 0.5));
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    const std::string lp = "enc." + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      add_weight(p, rng, lp + w, h, h);
      const std::string name(w);
      if (cfg.qk_identity_gain > 0.0 && (name == "wq" || name == "wk")) {
        Matrix<T>& m = p.at(lp + name);
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < h; ++j)
            m(i, j) = static_cast<T>(0.1) * m(i, j) + (i == j ? static_cast<T>(cfg.qk_identity_gain) : T(0));
      }
      if (name != "wk") add_bias(p, lp + "b" + name.substr(1), h);
    }
    add_bias(p, lp + "ln1_g", h, T(1));
    add_bias(p, lp + "ln1_b", h);
    add_weight(p, rng, lp + "ff1_w", h, 4 * h);
    add_bias(p, lp + "ff1_b", 4 * h);
    add_weight(p, rng, lp + "ff2_w", 4 * h, h);
    add_bias(p, lp + "ff2_b", h);
    add_bias(p, lp + "ln2_g", h, T(1));
    add_bias(p, lp + "ln2_b", h);
  }

  add_weight(p, rng, "pair.ws", 3 * h, u);
  add_weight(p, rng, "pair.wo", 3 * h, u);
  add_weight(p, rng, "pair.ff1_w", 2 * u, d);
  add_bias(p, "pair.ff1_b", d);
  add_weight(p, rng, "pair.ff2_w", d, d);
  add_bias(p, "pair.ff2_b", d);

  add_inference_params(p, cfg, rng, 0, cfg.inference_depth);
  p.add("mask_vec", detail::random_matrix<T>(rng, 1, d, 0.5));

  add_weight(p, rng, "cls.w", d, cfg.num_classes());
  add_bias(p, "cls.b", cfg.num_classes());
  return p;
}

/// Lazily binds parameters onto a tape, so parameters a forward pass never
/// touches never appear on it.
template <class T>
class Bound {
 public:
  Bound(ag::Tape<T>& tape, const ModelParams<T>& params, bool trainable = true)
      : tape_(tape), params_(params), trainable_(trainable), vars_(params.entries().size()),
        bound_(params.entries().size(), 0) {}

  ag::Var<T> operator()(const std::string& name) {
    const std::size_t i = params_.index_of(name);
    if (!bound_[i]) {
      const Matrix<T>& v = params_.entries()[i].value;
      vars_[i] = trainable_ ? tape_.variable(v) : tape_.constant(v);
      bound_[i] = 1;
    }
    return vars_[i];
  }

  bool is_bound(std::size_t i) const { return bound_[i] != 0; }

  /// Inverted dropout for later dropout() calls; masks come from `seed`.
  void enable_dropout(double rate, std::uint64_t seed) {
    dropout_rate_ = rate;
    dropout_rng_ = Rng(seed);
  }

  ag::Var<T> dropout(ag::Var<T> a) {
    if (dropout_rate_ <= 0.0) return a;
    Matrix<T> mask(a.rows(), a.cols());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout_rate_));
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = dropout_rng_.uniform() < dropout_rate_ ? T(0) : keep_scale;
    return ag::mul(a, tape_.constant(std::move(mask)));
  }
  ag::Tape<T>& tape() { return tape_; }
  const ModelParams<T>& params() const { return params_; }

  /// Adds d(root)/d(param) of every bound parameter into `grads` (after backward).
  void accumulate_grads(ModelParams<T>& grads, T weight = T(1)) {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (!bound_[i] || !trainable_) continue;
      const Matrix<T>& g = tape_.grad(vars_[i].id);
      Matrix<T>& dst = grads.entries()[i].value;
      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += weight * g[k];
    }
  }

 private:
  ag::Tape<T>& tape_;
  const ModelParams<T>& params_;
  bool trainable_;
  std::vector<ag::Var<T>> vars_;
  std::vector<char> bound_;
  double dropout_rate_ = 0.0;
  Rng dropout_rng_;
};

}  // namespace remir
