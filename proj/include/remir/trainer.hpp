#pragma once

// Dual-path training (original and masked matrix), AdamW with warmup and
// linear decay, checkpoints, evaluation and finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "remir/corpus.hpp"
#include "remir/encoder.hpp"
#include "remir/inference.hpp"
#include "remir/metrics.hpp"
#include "remir/model.hpp"
#include "remir/objective.hpp"
#include "remir/rng.hpp"
#include "remir/synth.hpp"

namespace remir {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AblationMode { full, no_mir, only_mask_path, masked_cells_only_recon, no_imsa_plain_msa, no_inference_module };

inline const std::vector<std::pair<AblationMode, std::string>>& ablation_names() {
  static const std::vector<std::pair<AblationMode, std::string>> names{
      {AblationMode::full, "full"},
      {AblationMode::no_mir, "no_mir"},
      {AblationMode::only_mask_path, "only_mask_path"},
      {AblationMode::masked_cells_only_recon, "masked_cells_only_recon"},
      {AblationMode::no_imsa_plain_msa, "no_imsa_plain_msa"},
      {AblationMode::no_inference_module, "no_inference_module"}};
  return names;
}

inline std::string to_string(AblationMode m) {
  for (const auto& [mode, name] : ablation_names())
    if (mode == m) return name;
  return "?";
}

inline AblationMode ablation_from_string(const std::string& s) {
  std::string known;
  for (const auto& [mode, name] : ablation_names()) {
    if (name == s) return mode;
    known += " " + name;
  }
  throw ConfigError("unknown ablation mode '" + s + "'; expected one of:" + known);
}

struct TrainConfig {
  double mask_rate = 0.2;
  std::size_t inference_depth = 3;
  double alpha = 1.0;
  double beta = 1.0;
  std::size_t batch_size = 4;
  std::size_t epochs = 30;
  double lr_encoder = 1e-3;
  double lr_rest = 1e-3;
  double weight_decay = 0.2;
  double dropout = 0.1;  // encoder only, training graph only
  double warmup_fraction = 0.06;
  double max_grad_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  AblationMode ablation = AblationMode::full;
  int precision = 64;

  std::size_t hidden = 64;
  std::size_t encoder_layers = 1;
  std::size_t encoder_heads = 2;
  std::size_t pair_width = 64;
  std::size_t matrix_width = 64;
  std::size_t heads_per_mode = 1;
  std::size_t max_tokens = kDefaultMaxTokens;
  std::size_t max_entity_id = kDefaultMaxEntityId;
  ag::Activation activation = ag::Activation::gelu;
  double qk_identity_gain = 2.0;

  /// Depth actually built: the no_inference_module ablation has none.
  std::size_t effective_depth() const {
    return ablation == AblationMode::no_inference_module ? 0 : inference_depth;
  }
};

inline void check(const TrainConfig& c) {
  if (!(c.mask_rate >= 0.0 && c.mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in [0, 1]");
  if (c.inference_depth == 0 && c.ablation != AblationMode::no_inference_module)
    throw ConfigError("inference_depth 0 is only valid with ablation no_inference_module");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.precision != 32 && c.precision != 64) throw ConfigError("precision must be 32 or 64");
  if (!(c.warmup_fraction >= 0.0 && c.warmup_fraction <= 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1]");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (c.lr_encoder < 0.0 || c.lr_rest < 0.0 || c.weight_decay < 0.0 || c.max_grad_norm < 0.0)
    throw ConfigError("learning rates, weight decay and max_grad_norm must be non-negative");
  if (c.qk_identity_gain < 0.0) throw ConfigError("qk_identity_gain must be non-negative");
  if (c.encoder_heads == 0 || c.hidden % c.encoder_heads != 0)
    throw ConfigError("hidden must be divisible by encoder_heads");
  if (c.heads_per_mode == 0 || c.matrix_width % (4 * c.heads_per_mode) != 0)
    throw ConfigError("matrix_width must be divisible by 4 * heads_per_mode");
}

inline ModelConfig model_config(const TrainConfig& c, std::size_t vocab_size, std::size_t num_relations) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.num_relations = num_relations;
  m.hidden = c.hidden;
  m.encoder_layers = c.encoder_layers;
  m.encoder_heads = c.encoder_heads;
  m.pair_width = c.pair_width;
  m.matrix_width = c.matrix_width;
  m.inference_depth = c.effective_depth();
  m.heads_per_mode = c.heads_per_mode;
  m.max_tokens = c.max_tokens;
  m.max_entity_id = c.max_entity_id;
  m.activation = c.activation;
  m.qk_identity_gain = c.qk_identity_gain;
  m.attention = c.ablation == AblationMode::no_imsa_plain_msa ? InferenceAttention::plain : InferenceAttention::imsa;
  return m;
}

inline std::string to_string(ag::Activation a) { return a == ag::Activation::gelu ? "gelu" : "tanh"; }

inline ag::Activation activation_from_string(const std::string& s) {
  if (s == "gelu") return ag::Activation::gelu;
  if (s == "tanh") return ag::Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'; expected gelu or tanh");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"mask_rate", c.mask_rate},
          {"inference_depth", c.inference_depth},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr_encoder", c.lr_encoder},
          {"lr_rest", c.lr_rest},
          {"weight_decay", c.weight_decay},
          {"dropout", c.dropout},
          {"warmup_fraction", c.warmup_fraction},
          {"max_grad_norm", c.max_grad_norm},
          {"seed", c.seed},
          {"ablation", to_string(c.ablation)},
          {"precision", c.precision},
          {"hidden", c.hidden},
          {"encoder_layers", c.encoder_layers},
          {"encoder_heads", c.encoder_heads},
          {"pair_width", c.pair_width},
          {"matrix_width", c.matrix_width},
          {"heads_per_mode", c.heads_per_mode},
          {"max_tokens", c.max_tokens},
          {"max_entity_id", c.max_entity_id},
          {"activation", to_string(c.activation)},
          {"qk_identity_gain", c.qk_identity_gain}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.mask_rate = j.at("mask_rate").get<double>();
  c.inference_depth = j.at("inference_depth").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.lr_encoder = j.at("lr_encoder").get<double>();
  c.lr_rest = j.at("lr_rest").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.warmup_fraction = j.at("warmup_fraction").get<double>();
  c.max_grad_norm = j.at("max_grad_norm").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
  c.precision = j.at("precision").get<int>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.encoder_heads = j.at("encoder_heads").get<std::size_t>();
  c.pair_width = j.at("pair_width").get<std::size_t>();
  c.matrix_width = j.at("matrix_width").get<std::size_t>();
  c.heads_per_mode = j.at("heads_per_mode").get<std::size_t>();
  c.max_tokens = j.at("max_tokens").get<std::size_t>();
  c.max_entity_id = j.at("max_entity_id").get<std::size_t>();
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.qk_identity_gain = j.at("qk_identity_gain").get<double>();
  return c;
}

// ---------------------------------------------------------------- prepared documents

struct PreparedDoc {
  std::size_t index = 0;  // position in its corpus
  MarkedDocument marked;
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> row_entity;  // matrix row -> document entity id
  std::vector<long> entity_row;         // document entity id -> matrix row, -1 if truncated away
  std::vector<std::vector<std::size_t>> positives;

  std::size_t n() const { return row_entity.size(); }
  bool trainable() const { return n() >= 2; }
};

inline PreparedDoc prepare(const Document& doc, std::size_t index, const Vocab& vocab,
                           const std::vector<std::string>& types, const ModelConfig& mc) {
  PreparedDoc p;
  p.index = index;
  p.marked = insert_markers(doc, types, mc.max_entity_id, mc.max_tokens);
  p.token_ids = vocab.ids(p.marked.tokens);
  p.entity_row.assign(doc.entities.size(), -1);
  for (std::size_t e = 0; e < p.marked.entity_mentions.size(); ++e) {
    if (p.marked.entity_mentions[e].empty()) continue;
    p.entity_row[e] = static_cast<long>(p.row_entity.size());
    p.row_entity.push_back(e);
  }
  p.positives = cell_positives(doc.triples, p.n(), p.entity_row);
  return p;
}

inline std::vector<PreparedDoc> prepare_corpus(const Corpus& corpus, const Vocab& vocab,
                                               const std::vector<std::string>& types, const ModelConfig& mc) {
  std::vector<PreparedDoc> out;
  out.reserve(corpus.documents.size());
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) out.push_back(prepare(corpus.documents[i], i, vocab, types, mc));
  return out;
}

/// Worker count from REMIR_THREADS (default 1).
inline std::size_t worker_count() {
  const char* env = std::getenv("REMIR_THREADS");
  if (!env) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n > 0 ? static_cast<std::size_t>(n) : 1;
}

/// Runs fn(i) for i in [0, n); each index writes only its own output slot.
template <class Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------- forward

template <class T>
struct StepGraph {
  ag::Var<T> total;
  LossBreakdown breakdown;
  std::optional<ag::Var<T>> original;  // logits of the original path
  std::optional<ag::Var<T>> masked;    // logits of the mask path
  MaskPlan plan;
};

/// Builds both paths and the loss on `p`'s tape. The mask plan and the
/// encoder dropout masks derive from `mask_seed`.
template <class T>
StepGraph<T> build_step(const PreparedDoc& doc, Bound<T>& p, const ModelConfig& mc, const TrainConfig& tc,
                        std::uint64_t mask_seed) {
  if (!doc.trainable()) throw std::invalid_argument("build_step: document needs at least two entities");
  if (tc.dropout > 0.0) p.enable_dropout(tc.dropout, derive_seed(mask_seed, 0xd1));
  auto enc = encode(doc.token_ids, p, mc);
  auto ents = entity_states(enc, doc.marked);
  auto m = build_pair_matrix(ents, enc, p, mc);
  const auto valid = off_diagonal_cells(m.n);
  const auto mode = tc.ablation;
  const bool use_original = mode != AblationMode::only_mask_path;
  const bool use_masked = mode != AblationMode::no_mir && mode != AblationMode::no_inference_module;

  StepGraph<T> g;
  if (use_original) g.original = classify(inference_stack(m.values, m.n, mc.inference_depth, p, mc), m.n, p).logits;
  if (use_masked) {
    g.plan = sample_mask(m.n, tc.mask_rate, mask_seed);
    auto masked = apply_mask(m, g.plan, p("mask_vec"));
    g.masked = classify(inference_stack(masked.values, m.n, mc.inference_depth, p, mc), m.n, p).logits;
  }

  const T share = T(1) / static_cast<T>(int(use_original) + int(use_masked));
  std::vector<std::pair<ag::Var<T>, T>> classification;
  if (g.original) classification.emplace_back(loss_atl(*g.original, doc.positives, valid), share);
  if (g.masked) classification.emplace_back(loss_atl(*g.masked, doc.positives, valid), share);
  auto lc = ag::combine(classification);

  std::vector<std::pair<ag::Var<T>, T>> terms{{lc, static_cast<T>(tc.beta)}};
  double lr_value = 0.0;
  if (g.original && g.masked) {
    std::vector<std::size_t> rows = valid;
    if (mode == AblationMode::masked_cells_only_recon) {
      rows.clear();
      for (const auto& [s, o] : g.plan.cells) rows.push_back(s * m.n + o);
    }
    auto lr = reconstruction_loss(*g.original, *g.masked, rows);
    lr_value = static_cast<double>(lr.scalar());
    terms.emplace_back(lr, static_cast<T>(tc.alpha));
  }
  g.total = ag::combine(terms);
  g.breakdown = total_loss(lr_value, static_cast<double>(lc.scalar()), tc.alpha, tc.beta);
  g.breakdown.total = static_cast<double>(g.total.scalar());
  return g;
}

template <class T>
struct StepResult {
  bool skipped = false;
  LossBreakdown breakdown;
  std::optional<Matrix<T>> original_logits;
  std::optional<Matrix<T>> masked_logits;
  MaskPlan plan;
};

/// Loss and both paths' logits for one document; the mask seed is drawn from `rng`.
/// Documents with fewer than two surviving entities are skipped and counted.
template <class T>
StepResult<T> forward_step(const PreparedDoc& doc, const ModelParams<T>& params, const ModelConfig& mc,
                           const TrainConfig& tc, Rng& rng, std::size_t* skipped = nullptr) {
  StepResult<T> out;
  const std::uint64_t mask_seed = rng.next();
  if (!doc.trainable()) {
    out.skipped = true;
    if (skipped) ++*skipped;
    return out;
  }
  ag::Tape<T> tape;
  Bound<T> p(tape, params, false);
  auto g = build_step(doc, p, mc, tc, mask_seed);
  out.breakdown = g.breakdown;
  if (g.original) out.original_logits = g.original->value();
  if (g.masked) out.masked_logits = g.masked->value();
  out.plan = g.plan;
  return out;
}

/// Adds d(total)/d(params) into `grads` and returns the loss breakdown.
template <class T>
LossBreakdown loss_and_grad(const PreparedDoc& doc, const ModelParams<T>& params, const ModelConfig& mc,
                            const TrainConfig& tc, std::uint64_t mask_seed, ModelParams<T>& grads) {
  ag::Tape<T> tape;
  Bound<T> p(tape, params);
  auto g = build_step(doc, p, mc, tc, mask_seed);
  tape.backward(g.total);
  p.accumulate_grads(grads);
  return g.breakdown;
}

/// Logits used for prediction: the original path at rate 0, otherwise the
/// matrix masked at `eval_mask_rate` with the plan drawn from `mask_seed`.
template <class T>
Matrix<T> predict_logits(const PreparedDoc& doc, const ModelParams<T>& params, const ModelConfig& mc,
                         double eval_mask_rate, std::uint64_t mask_seed) {
  ag::Tape<T> tape;
  Bound<T> p(tape, params, false);
  auto enc = encode(doc.token_ids, p, mc);
  auto ents = entity_states(enc, doc.marked);
  auto m = build_pair_matrix(ents, enc, p, mc);
  ag::Var<T> x = m.values;
  if (eval_mask_rate > 0.0) x = apply_mask(m, sample_mask(m.n, eval_mask_rate, mask_seed), p("mask_vec")).values;
  return classify(inference_stack(x, m.n, mc.inference_depth, p, mc), m.n, p).logits.value();
}

/// Decoded triples in document entity ids.
template <class T>
std::vector<Triple> predict_document(const PreparedDoc& doc, const ModelParams<T>& params, const ModelConfig& mc,
                                     double eval_mask_rate, std::uint64_t mask_seed) {
  if (!doc.trainable()) return {};
  auto triples = decode(predict_logits(doc, params, mc, eval_mask_rate, mask_seed), doc.n());
  for (Triple& t : triples) {
    t.head = doc.row_entity[t.head];
    t.tail = doc.row_entity[t.tail];
  }
  normalize_triples(triples);
  return triples;
}

inline std::uint64_t eval_mask_seed(std::uint64_t seed, std::size_t doc_index) {
  return derive_seed(derive_seed(seed, 0xe7a1), doc_index);
}

template <class T>
std::vector<std::vector<Triple>> predict_corpus(const std::vector<PreparedDoc>& docs, const ModelParams<T>& params,
                                                const ModelConfig& mc, double eval_mask_rate, std::uint64_t seed) {
  std::vector<std::vector<Triple>> out(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    out[i] = predict_document(docs[i], params, mc, eval_mask_rate, eval_mask_seed(seed, docs[i].index));
  });
  return out;
}

// ---------------------------------------------------------------- optimiser

inline double schedule_factor(std::size_t step, std::size_t total_steps, double warmup_fraction) {
  if (total_steps == 0) return 0.0;
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (step >= total_steps) return 0.0;
  return static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

template <class T>
struct AdamW {
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ModelParams<T> m, v;
  std::size_t step = 0;

  explicit AdamW(const ModelParams<T>& params) : m(params.zeros_like()), v(params.zeros_like()) {}

  /// One update; biases, gains and the mask vector (single-row parameters) are not decayed.
  void update(ModelParams<T>& params, const ModelParams<T>& grads, double lr_encoder, double lr_rest,
              double weight_decay) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    auto& entries = params.entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const double lr = is_encoder_param(entries[e].name) ? lr_encoder : lr_rest;
      const bool decay = entries[e].value.rows() > 1;
      Matrix<T>& w = entries[e].value;
      const Matrix<T>& g = grads.entries()[e].value;
      Matrix<T>& me = m.entries()[e].value;
      Matrix<T>& ve = v.entries()[e].value;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        me[k] = static_cast<T>(beta1 * static_cast<double>(me[k]) + (1.0 - beta1) * gk);
        ve[k] = static_cast<T>(beta2 * static_cast<double>(ve[k]) + (1.0 - beta2) * gk * gk);
        const double mh = static_cast<double>(me[k]) / c1, vh = static_cast<double>(ve[k]) / c2;
        double wk = static_cast<double>(w[k]);
        if (decay) wk -= lr * weight_decay * wk;
        wk -= lr * mh / (std::sqrt(vh) + eps);
        w[k] = static_cast<T>(wk);
      }
    }
  }
};

template <class T>
double global_norm(const ModelParams<T>& p) {
  double s = 0.0;
  for (const auto& e : p.entries())
    for (std::size_t k = 0; k < e.value.size(); ++k) s += static_cast<double>(e.value[k]) * static_cast<double>(e.value[k]);
  return std::sqrt(s);
}

// ---------------------------------------------------------------- checkpoints

struct HistoryRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0, reconstruction = 0.0, classification = 0.0;
  double dev_f1 = 0.0, dev_ign_f1 = 0.0, dev_inter_f1 = 0.0, dev_infer_f1 = 0.0;
};

inline nlohmann::json to_json(const HistoryRecord& h) {
  return {{"epoch", h.epoch},   {"train_loss", h.train_loss}, {"L_R", h.reconstruction},
          {"L_C", h.classification}, {"dev_f1", h.dev_f1},     {"dev_ign_f1", h.dev_ign_f1},
          {"dev_inter_f1", h.dev_inter_f1}, {"dev_infer_f1", h.dev_infer_f1}};
}

inline HistoryRecord history_from_json(const nlohmann::json& j) {
  return {j.at("epoch").get<std::size_t>(),  j.at("train_loss").get<double>(), j.at("L_R").get<double>(),
          j.at("L_C").get<double>(),         j.at("dev_f1").get<double>(),     j.at("dev_ign_f1").get<double>(),
          j.at("dev_inter_f1").get<double>(), j.at("dev_infer_f1").get<double>()};
}

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  TrainConfig config;
  ModelConfig model;
  std::vector<std::string> vocab;
  std::vector<std::string> types;
  std::vector<std::string> relations;
  ModelParams<double> params;
  ModelParams<double> adam_m, adam_v;
  std::size_t adam_step = 0;
  std::size_t epoch = 0;  // completed epochs
  std::string rng_state;
  double best_dev_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<HistoryRecord> history;
};

namespace detail {

inline nlohmann::json params_to_json(const ModelParams<double>& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : p.entries())
    arr.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}, {"data", e.value.storage()}});
  return arr;
}

inline ModelParams<double> params_from_json(const nlohmann::json& arr) {
  ModelParams<double> p;
  for (const auto& e : arr) {
    Matrix<double> m(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>());
    const auto data = e.at("data").get<std::vector<double>>();
    if (data.size() != m.size()) throw ParseError("checkpoint: parameter '" + e.at("name").get<std::string>() + "' has wrong size");
    for (std::size_t k = 0; k < data.size(); ++k) m[k] = data[k];
    p.add(e.at("name").get<std::string>(), std::move(m));
  }
  return p;
}

inline nlohmann::json model_to_json(const ModelConfig& m) {
  return {{"vocab_size", m.vocab_size},         {"num_relations", m.num_relations},
          {"hidden", m.hidden},                 {"encoder_layers", m.encoder_layers},
          {"encoder_heads", m.encoder_heads},   {"pair_width", m.pair_width},
          {"matrix_width", m.matrix_width},     {"inference_depth", m.inference_depth},
          {"heads_per_mode", m.heads_per_mode}, {"max_tokens", m.max_tokens},
          {"max_entity_id", m.max_entity_id},   {"activation", to_string(m.activation)},
          {"attention", m.attention == InferenceAttention::imsa ? "imsa" : "plain"}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.vocab_size = j.at("vocab_size").get<std::size_t>();
  m.num_relations = j.at("num_relations").get<std::size_t>();
  m.hidden = j.at("hidden").get<std::size_t>();
  m.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  m.encoder_heads = j.at("encoder_heads").get<std::size_t>();
  m.pair_width = j.at("pair_width").get<std::size_t>();
  m.matrix_width = j.at("matrix_width").get<std::size_t>();
  m.inference_depth = j.at("inference_depth").get<std::size_t>();
  m.heads_per_mode = j.at("heads_per_mode").get<std::size_t>();
  m.max_tokens = j.at("max_tokens").get<std::size_t>();
  m.max_entity_id = j.at("max_entity_id").get<std::size_t>();
  m.activation = activation_from_string(j.at("activation").get<std::string>());
  m.attention = j.at("attention").get<std::string>() == "plain" ? InferenceAttention::plain : InferenceAttention::imsa;
  return m;
}

}  // namespace detail

inline nlohmann::json to_json(const Checkpoint& c) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : c.history) history.push_back(to_json(h));
  return {{"format_version", Checkpoint::kFormatVersion},
          {"config", to_json(c.config)},
          {"model", detail::model_to_json(c.model)},
          {"vocab", c.vocab},
          {"types", c.types},
          {"relations", c.relations},
          {"epoch", c.epoch},
          {"rng_state", c.rng_state},
          {"best_dev_f1", c.best_dev_f1},
          {"best_epoch", c.best_epoch},
          {"history", history},
          {"adam_step", c.adam_step},
          {"params", detail::params_to_json(c.params)},
          {"adam_m", detail::params_to_json(c.adam_m)},
          {"adam_v", detail::params_to_json(c.adam_v)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != Checkpoint::kFormatVersion)
    throw ParseError("checkpoint format version " + std::to_string(version) + " is not supported");
  Checkpoint c;
  c.config = train_config_from_json(j.at("config"));
  c.model = detail::model_from_json(j.at("model"));
  c.vocab = j.at("vocab").get<std::vector<std::string>>();
  c.types = j.at("types").get<std::vector<std::string>>();
  c.relations = j.at("relations").get<std::vector<std::string>>();
  c.epoch = j.at("epoch").get<std::size_t>();
  c.rng_state = j.at("rng_state").get<std::string>();
  c.best_dev_f1 = j.at("best_dev_f1").get<double>();
  c.best_epoch = j.at("best_epoch").get<std::size_t>();
  for (const auto& h : j.at("history")) c.history.push_back(history_from_json(h));
  c.adam_step = j.at("adam_step").get<std::size_t>();
  c.params = detail::params_from_json(j.at("params"));
  c.adam_m = detail::params_from_json(j.at("adam_m"));
  c.adam_v = detail::params_from_json(j.at("adam_v"));
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) { write_file(path, to_json(c).dump() + "\n"); }

inline Checkpoint load_checkpoint(const std::string& path) {
  try {
    return checkpoint_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------- training

struct TrainOutcome {
  std::optional<Checkpoint> best;  // set when some epoch improved dev F1
  Checkpoint last;
  std::vector<HistoryRecord> history;
  std::size_t skipped = 0;  // per-step skips of documents with < 2 entities
};

/// Called after every epoch with the new record and the end-of-epoch state.
using EpochCallback = std::function<void(const HistoryRecord&, const Checkpoint& last, bool improved)>;

namespace detail {

template <class T>
Checkpoint snapshot(const TrainConfig& tc, const ModelConfig& mc, const Vocab& vocab,
                    const std::vector<std::string>& types, const std::vector<std::string>& relations,
                    const ModelParams<T>& params, const AdamW<T>& adam, std::size_t epoch, const Rng& rng,
                    double best_f1, std::size_t best_epoch, const std::vector<HistoryRecord>& history) {
  Checkpoint c;
  c.config = tc;
  c.model = mc;
  c.vocab = vocab.tokens();
  c.types = types;
  c.relations = relations;
  c.params = params.template cast<double>();
  c.adam_m = adam.m.template cast<double>();
  c.adam_v = adam.v.template cast<double>();
  c.adam_step = adam.step;
  c.epoch = epoch;
  c.rng_state = rng.state();
  c.best_dev_f1 = best_f1;
  c.best_epoch = best_epoch;
  c.history = history;
  return c;
}

template <class T>
TrainOutcome train_impl(Corpus train, Corpus dev, const TrainConfig& tc, const Checkpoint* resume,
                        const EpochCallback& on_epoch) {
  const std::vector<std::string> relations = resume ? resume->relations : train.relations;
  remap_relations(train, relations);
  remap_relations(dev, relations);
  const std::vector<std::string> types = resume ? resume->types : collect_types({&train, &dev});
  const Vocab vocab = resume ? Vocab::from_tokens(resume->vocab) : Vocab::build({&train}, types, tc.max_entity_id);
  const ModelConfig mc = resume ? resume->model : model_config(tc, vocab.size(), relations.size());
  const auto docs = prepare_corpus(train, vocab, types, mc);
  const auto dev_docs = prepare_corpus(dev, vocab, types, mc);
  const FactSet train_facts = collect_facts(train);

  ModelParams<T> params = resume ? resume->params.template cast<T>() : init_params<T>(mc, tc.seed);
  AdamW<T> adam(params);
  Rng rng(derive_seed(tc.seed, 0x7a11));
  TrainOutcome out;
  double best_f1 = -1.0;
  std::size_t best_epoch = 0, start_epoch = 0;
  if (resume) {
    adam.m = resume->adam_m.template cast<T>();
    adam.v = resume->adam_v.template cast<T>();
    adam.step = resume->adam_step;
    rng.set_state(resume->rng_state);
    best_f1 = resume->best_dev_f1;
    best_epoch = resume->best_epoch;
    start_epoch = resume->epoch;
    out.history = resume->history;
  }

  const std::size_t steps_per_epoch = (docs.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = steps_per_epoch * tc.epochs;

  for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(docs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double sum_total = 0.0, sum_lr = 0.0, sum_lc = 0.0;
    std::size_t counted = 0;

    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t begin = b * tc.batch_size, end = std::min(order.size(), begin + tc.batch_size);
      std::vector<std::size_t> batch;
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = begin; i < end; ++i) {
        seeds.push_back(rng.next());
        if (docs[order[i]].trainable()) {
          batch.push_back(order[i]);
        } else {
          seeds.pop_back();
          ++out.skipped;
        }
      }
      if (batch.empty()) continue;

      std::vector<ModelParams<T>> doc_grads(batch.size());
      std::vector<LossBreakdown> losses(batch.size());
      parallel_for(batch.size(), [&](std::size_t i) {
        doc_grads[i] = params.zeros_like();
        losses[i] = loss_and_grad(docs[batch[i]], params, mc, tc, seeds[i], doc_grads[i]);
      });

      const std::size_t step = epoch * steps_per_epoch + b;
      for (std::size_t i = 0; i < batch.size(); ++i)
        if (!std::isfinite(losses[i].total))
          throw DivergenceError("loss is not finite at step " + std::to_string(step) + " (document '" +
                                train.documents[batch[i]].doc_id + "'); parameter norm " +
                                std::to_string(global_norm(params)));

      ModelParams<T> grads = params.zeros_like();
      const T inv = T(1) / static_cast<T>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        auto& dst = grads.entries();
        const auto& src = doc_grads[i].entries();
        for (std::size_t e = 0; e < dst.size(); ++e)
          for (std::size_t k = 0; k < dst[e].value.size(); ++k) dst[e].value[k] += src[e].value[k];
        sum_total += losses[i].total;
        sum_lr += losses[i].reconstruction;
        sum_lc += losses[i].classification;
        ++counted;
      }
      for (auto& e : grads.entries())
        for (std::size_t k = 0; k < e.value.size(); ++k) e.value[k] *= inv;
      if (tc.max_grad_norm > 0.0) {
        const double norm = global_norm(grads);
        if (norm > tc.max_grad_norm) {
          const T s = static_cast<T>(tc.max_grad_norm / norm);
          for (auto& e : grads.entries())
            for (std::size_t k = 0; k < e.value.size(); ++k) e.value[k] *= s;
        }
      }
      const double f = schedule_factor(step, total_steps, tc.warmup_fraction);
      adam.update(params, grads, f * tc.lr_encoder, f * tc.lr_rest, tc.weight_decay);
    }

    HistoryRecord rec;
    rec.epoch = epoch + 1;
    if (counted > 0) {
      rec.train_loss = sum_total / static_cast<double>(counted);
      rec.reconstruction = sum_lr / static_cast<double>(counted);
      rec.classification = sum_lc / static_cast<double>(counted);
    }
    const auto report = f1_report(predict_corpus(dev_docs, params, mc, 0.0, tc.seed), dev, train_facts);
    rec.dev_f1 = report.f1();
    rec.dev_ign_f1 = report.ign_f1();
    rec.dev_inter_f1 = report.inter_f1();
    rec.dev_infer_f1 = report.infer_f1();
    out.history.push_back(rec);

    const bool improved = rec.dev_f1 > best_f1;
    if (improved) {
      best_f1 = rec.dev_f1;
      best_epoch = rec.epoch;
    }
    out.last = snapshot(tc, mc, vocab, types, relations, params, adam, epoch + 1, rng, best_f1, best_epoch, out.history);
    if (improved) out.best = out.last;
    if (on_epoch) on_epoch(rec, out.last, improved);
  }
  if (start_epoch >= tc.epochs)
    out.last = snapshot(tc, mc, vocab, types, relations, params, adam, start_epoch, rng, best_f1, best_epoch, out.history);
  return out;
}

}  // namespace detail

/// Trains on `train`, selecting by dev F1. With `resume`, continues from its
/// recorded epoch using its vocabulary, parameters, optimiser and RNG state.
inline TrainOutcome train(const Corpus& train, const Corpus& dev, const TrainConfig& tc,
                          const Checkpoint* resume = nullptr, const EpochCallback& on_epoch = {}) {
  check(tc);
  return tc.precision == 32 ? detail::train_impl<float>(train, dev, tc, resume, on_epoch)
                            : detail::train_impl<double>(train, dev, tc, resume, on_epoch);
}

// ---------------------------------------------------------------- evaluation

struct Evaluation {
  MetricsReport report;
  std::vector<std::vector<Triple>> predictions;  // per document, in document entity ids
  Corpus corpus;                                 // relations remapped to the checkpoint vocabulary
};

/// Scores a checkpoint on `corpus`. Throws ValidationError listing relations
/// the checkpoint does not know.
inline Evaluation evaluate(const Checkpoint& ckpt, const Corpus& corpus, double eval_mask_rate = 0.0,
                           const FactSet& train_facts = {}) {
  if (!(eval_mask_rate >= 0.0 && eval_mask_rate <= 1.0)) throw ConfigError("eval mask rate must lie in [0, 1]");
  Evaluation ev;
  ev.corpus = corpus;
  remap_relations(ev.corpus, ckpt.relations);
  const Vocab vocab = Vocab::from_tokens(ckpt.vocab);
  const auto docs = prepare_corpus(ev.corpus, vocab, ckpt.types, ckpt.model);
  if (ckpt.config.precision == 32)
    ev.predictions = predict_corpus(docs, ckpt.params.cast<float>(), ckpt.model, eval_mask_rate, ckpt.config.seed);
  else
    ev.predictions = predict_corpus(docs, ckpt.params, ckpt.model, eval_mask_rate, ckpt.config.seed);
  ev.report = f1_report(ev.predictions, ev.corpus, train_facts);
  return ev;
}

// ---------------------------------------------------------------- gradient check

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;
};

/// Central differences against the analytic gradient of the total loss on
/// `samples` random coordinates among those the document can influence
/// (embedding rows of its tokens and every parameter on the graph).
inline GradCheckResult grad_check(const ModelParams<double>& params, const PreparedDoc& doc, const ModelConfig& mc,
                                  const TrainConfig& tc, double epsilon = 1e-5, std::size_t samples = 256,
                                  std::uint64_t seed = 7) {
  const std::uint64_t mask_seed = derive_seed(seed, 0x6c);
  ModelParams<double> grads = params.zeros_like();
  std::vector<char> bound(params.entries().size(), 0);
  {
    ag::Tape<double> tape;
    Bound<double> p(tape, params);
    auto g = build_step(doc, p, mc, tc, mask_seed);
    tape.backward(g.total);
    p.accumulate_grads(grads);
    for (std::size_t i = 0; i < bound.size(); ++i) bound[i] = p.is_bound(i);
  }

  std::vector<char> used_token(mc.vocab_size, 0);
  for (std::size_t t : doc.token_ids) used_token[t] = 1;
  std::vector<std::size_t> pool;
  std::size_t offset = 0;
  for (std::size_t e = 0; e < params.entries().size(); ++e) {
    const auto& entry = params.entries()[e];
    if (bound[e])
      for (std::size_t k = 0; k < entry.value.size(); ++k)
        if (entry.name != "enc.tok_emb" || used_token[k / entry.value.cols()]) pool.push_back(offset + k);
    offset += entry.value.size();
  }

  Rng rng(seed);
  GradCheckResult res;
  ModelParams<double> probe = params;
  auto loss_at = [&]() {
    ag::Tape<double> tape;
    Bound<double> p(tape, probe, false);
    return build_step(doc, p, mc, tc, mask_seed).total.scalar();
  };
  for (std::size_t i : rng.sample_without_replacement(pool.size(), samples)) {
    const std::size_t flat = pool[i];
    const double original = probe.flat(flat);
    probe.flat(flat) = original + epsilon;
    const double up = loss_at();
    probe.flat(flat) = original - epsilon;
    const double down = loss_at();
    probe.flat(flat) = original;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grads.flat(flat);
    const double err = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    ++res.coordinates;
    if (err > res.max_error) {
      res.max_error = err;
      res.worst = params.flat_name(flat);
    }
  }
  return res;
}

}  // namespace remir
