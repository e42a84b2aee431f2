#pragma once

// Context encoder and the path from token states to the entity-pair matrix.
//
// The encoder is a small post-norm transformer (token embedding plus
// sinusoidal positions). On top of it:
//   mention     = mean of the states at its type marker and id marker
//   entity      = logsumexp over its mentions
//   A_e         = mean over its mentions of the last-layer, head-averaged
//                 attention row at the type marker, renormalised
//   c_{s,o}     = H^T softmax(A_s * A_o)
//   M_{s,o}     = FFN([W_s [h_s, h_doc, c_so], W_o [h_o, h_doc, c_so]])

#include <cmath>
#include <string>
#include <vector>

#include "remir/autograd.hpp"
#include "remir/corpus.hpp"
#include "remir/model.hpp"

namespace remir {

template <class T>
struct EncoderOutput {
  ag::Var<T> states;     // H, L x h
  ag::Var<T> attention;  // L x L, row-stochastic
  ag::Var<T> doc_state;  // 1 x h, row 0 of H
};

template <class T>
struct EntityStates {
  ag::Var<T> embed;      // N x h
  ag::Var<T> attention;  // N x L
  std::vector<std::size_t> entities;  // row -> document entity id
};

/// N x N x d field stored as N*N rows; mask[s*N + o] marks masked cells.
template <class T>
struct PairMatrix {
  ag::Var<T> values;
  std::size_t n = 0;
  std::vector<char> mask;

  std::size_t cell(std::size_t s, std::size_t o) const { return s * n + o; }
  std::size_t width() const { return values.cols(); }
};

/// Off-diagonal cells of an n x n grid, row-major.
inline std::vector<std::size_t> off_diagonal_cells(std::size_t n) {
  std::vector<std::size_t> cells;
  cells.reserve(n * (n > 0 ? n - 1 : 0));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < n; ++o)
      if (s != o) cells.push_back(s * n + o);
  return cells;
}

template <class T>
Matrix<T> sinusoidal_positions(std::size_t length, std::size_t width) {
  Matrix<T> pe(length, width);
  for (std::size_t p = 0; p < length; ++p)
    for (std::size_t i = 0; i < width; ++i) {
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(p, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

namespace detail {

template <class T>
ag::Var<T> affine(ag::Var<T> x, Bound<T>& p, const std::string& w, const std::string& b) {
  return ag::add_row(ag::matmul(x, p(w)), p(b));
}

}  // namespace detail

/// Runs the encoder on token ids (unknown tokens already mapped to UNK).
template <class T>
EncoderOutput<T> encode(const std::vector<std::size_t>& token_ids, Bound<T>& p, const ModelConfig& cfg) {
  if (token_ids.empty()) throw std::invalid_argument("encode: empty input");
  if (token_ids.size() > cfg.max_tokens) throw std::invalid_argument("encode: input longer than max_tokens");
  auto& tape = p.tape();
  const std::size_t L = token_ids.size(), h = cfg.hidden, heads = cfg.encoder_heads, dh = h / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  ag::Var<T> x = p.dropout(ag::add(ag::gather_rows(p("enc.tok_emb"), token_ids), tape.constant(sinusoidal_positions<T>(L, h))));
  ag::Var<T> attention = tape.constant(Matrix<T>(L, L));
  if (cfg.encoder_layers == 0) {
    Matrix<T> eye(L, L);
    for (std::size_t i = 0; i < L; ++i) eye(i, i) = T(1);
    attention = tape.constant(std::move(eye));
  }
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    const std::string lp = "enc." + std::to_string(l) + ".";
    ag::Var<T> q = detail::affine(x, p, lp + "wq", lp + "bq");
    ag::Var<T> k = ag::matmul(x, p(lp + "wk"));
    ag::Var<T> v = detail::affine(x, p, lp + "wv", lp + "bv");
    std::vector<ag::Var<T>> contexts;
    std::vector<std::pair<ag::Var<T>, T>> probs;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      auto qh = ag::slice_cols(q, hd * dh, dh);
      auto kh = ag::slice_cols(k, hd * dh, dh);
      auto vh = ag::slice_cols(v, hd * dh, dh);
      auto a = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
      contexts.push_back(ag::matmul(a, vh));
      probs.emplace_back(a, T(1) / static_cast<T>(heads));
    }
    if (l + 1 == cfg.encoder_layers) {
      attention = probs.front().first;
      if (heads > 1) {
        attention = ag::scale(probs.front().first, probs.front().second);
        for (std::size_t hd = 1; hd < heads; ++hd) attention = ag::add(attention, ag::scale(probs[hd].first, probs[hd].second));
      }
    }
    auto attended = p.dropout(detail::affine(ag::concat_cols(contexts), p, lp + "wo", lp + "bo"));
    x = ag::layer_norm(ag::add(x, attended), p(lp + "ln1_g"), p(lp + "ln1_b"));
    auto ff = p.dropout(detail::affine(ag::activate(detail::affine(x, p, lp + "ff1_w", lp + "ff1_b"), cfg.activation),
                                       p, lp + "ff2_w", lp + "ff2_b"));
    x = ag::layer_norm(ag::add(x, ff), p(lp + "ln2_g"), p(lp + "ln2_b"));
  }
  return {x, attention, ag::gather_rows(x, {0})};
}

template <class T>
EncoderOutput<T> encode(const MarkedDocument& marked, const Vocab& vocab, Bound<T>& p, const ModelConfig& cfg) {
  return encode(vocab.ids(marked.tokens), p, cfg);
}

/// (H[open] + H[close]) / 2 for one mention, 1 x h.
template <class T>
ag::Var<T> mention_repr(const EncoderOutput<T>& enc, const MarkedDocument& marked, std::size_t mention) {
  const MarkedMention& m = marked.mentions.at(mention);
  return ag::scale(ag::add(ag::gather_rows(enc.states, {m.open}), ag::gather_rows(enc.states, {m.close})), T(0.5));
}

/// Coordinatewise logsumexp over the rows of `mentions` (k x h), 1 x h.
template <class T>
ag::Var<T> entity_pool(ag::Var<T> mentions) {
  std::vector<std::size_t> all(mentions.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return ag::segment_logsumexp(mentions, {all});
}

/// Mean of the attention rows at the entity's opening markers, renormalised, 1 x L.
template <class T>
ag::Var<T> entity_attention(const EncoderOutput<T>& enc, std::size_t entity, const MarkedDocument& marked) {
  const auto& ms = marked.entity_mentions.at(entity);
  if (ms.empty()) throw std::logic_error("entity_attention: entity has no surviving mention");
  std::vector<std::size_t> opens;
  for (std::size_t m : ms) opens.push_back(marked.mentions[m].open);
  std::vector<std::size_t> all(opens.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return ag::normalize_rows(ag::segment_mean(ag::gather_rows(enc.attention, opens), {all}));
}

/// c_so = H^T softmax(A_s * A_o); A_s and A_o are k x L (one pair per row), result k x h.
template <class T>
ag::Var<T> pair_context(const EncoderOutput<T>& enc, ag::Var<T> subject_attention, ag::Var<T> object_attention) {
  return ag::matmul(ag::softmax_rows(ag::mul(subject_attention, object_attention)), enc.states);
}

/// Batched mention / entity aggregation over every entity with a surviving mention.
template <class T>
EntityStates<T> entity_states(const EncoderOutput<T>& enc, const MarkedDocument& marked) {
  std::vector<std::size_t> opens, closes;
  for (const MarkedMention& m : marked.mentions) {
    opens.push_back(m.open);
    closes.push_back(m.close);
  }
  EntityStates<T> out;
  ag::Groups groups;
  for (std::size_t e = 0; e < marked.entity_mentions.size(); ++e) {
    if (marked.entity_mentions[e].empty()) continue;
    out.entities.push_back(e);
    groups.push_back(marked.entity_mentions[e]);
  }
  if (groups.empty()) throw std::invalid_argument("entity_states: no entity survives");
  auto mentions = ag::scale(ag::add(ag::gather_rows(enc.states, opens), ag::gather_rows(enc.states, closes)), T(0.5));
  out.embed = ag::segment_logsumexp(mentions, groups);
  out.attention = ag::normalize_rows(ag::segment_mean(ag::gather_rows(enc.attention, opens), groups));
  return out;
}

/// Builds M for every ordered pair of entity rows; diagonal cells are zero.
template <class T>
PairMatrix<T> build_pair_matrix(const EntityStates<T>& ents, const EncoderOutput<T>& enc, Bound<T>& p,
                                const ModelConfig& cfg) {
  const std::size_t n = ents.entities.size();
  PairMatrix<T> out;
  out.n = n;
  out.mask.assign(n * n, 0);
  const auto cells = off_diagonal_cells(n);
  if (cells.empty()) {
    out.values = p.tape().constant(Matrix<T>(n * n, cfg.matrix_width));
    return out;
  }
  std::vector<std::size_t> subj, obj;
  for (std::size_t c : cells) {
    subj.push_back(c / n);
    obj.push_back(c % n);
  }
  auto context = pair_context(enc, ag::gather_rows(ents.attention, subj), ag::gather_rows(ents.attention, obj));
  auto doc = ag::gather_rows(enc.doc_state, std::vector<std::size_t>(cells.size(), 0));
  auto us = ag::matmul(ag::concat_cols<T>({ag::gather_rows(ents.embed, subj), doc, context}), p("pair.ws"));
  auto uo = ag::matmul(ag::concat_cols<T>({ag::gather_rows(ents.embed, obj), doc, context}), p("pair.wo"));
  auto hidden = ag::activate(detail::affine(ag::concat_cols<T>({us, uo}), p, "pair.ff1_w", "pair.ff1_b"), cfg.activation);
  auto values = detail::affine(hidden, p, "pair.ff2_w", "pair.ff2_b");
  out.values = ag::scatter_rows(values, cells, n * n);
  return out;
}

}  // namespace remir
