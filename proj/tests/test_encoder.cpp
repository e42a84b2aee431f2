#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace remir;
using namespace remir::testing;

namespace {

struct Fixture {
  Corpus corpus = small_corpus(1);
  std::vector<std::string> types{"LOC", "ORG", "PER"};
  Vocab vocab = Vocab::build({&corpus}, types, 8);
  ModelConfig cfg;
  MarkedDocument marked;

  Fixture() {
    cfg.vocab_size = vocab.size();
    cfg.num_relations = 3;
    cfg.hidden = 8;
    cfg.encoder_layers = 2;
    cfg.encoder_heads = 2;
    cfg.pair_width = 6;
    cfg.matrix_width = 8;
    cfg.inference_depth = 1;
    cfg.max_entity_id = 8;
    marked = insert_markers(corpus.documents[0], types, 8);
  }
};

}  // namespace

TEST(Encoder, AttentionRowsAreStochastic) {
  Fixture f;
  const auto params = init_params<float>(f.cfg, 3);
  ag::Tape<float> tape;
  Bound<float> p(tape, params);
  const auto enc = encode(f.marked, f.vocab, p, f.cfg);
  const auto& a = enc.attention.value();
  ASSERT_EQ(a.rows(), f.marked.length());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    float s = 0;
    for (float v : a.row(r)) {
      EXPECT_GE(v, 0.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0f, 1e-5f);
  }
}

TEST(Encoder, NoLayersGivesIdentityAttention) {
  Fixture f;
  f.cfg.encoder_layers = 0;
  const auto params = init_params<double>(f.cfg, 3);
  ag::Tape<double> tape;
  Bound<double> p(tape, params);
  const auto enc = encode(f.marked, f.vocab, p, f.cfg);
  EXPECT_DOUBLE_EQ(enc.attention.value()(4, 4), 1.0);
  EXPECT_DOUBLE_EQ(enc.attention.value()(4, 5), 0.0);
}

TEST(Encoder, SinusoidalPositions) {
  const auto pe = sinusoidal_positions<double>(5, 6);
  EXPECT_DOUBLE_EQ(pe(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pe(0, 1), 1.0);
  EXPECT_NEAR(pe(3, 2), std::sin(3.0 / std::pow(10000.0, 2.0 / 6.0)), 1e-15);
  EXPECT_NEAR(pe(3, 5), std::cos(3.0 / std::pow(10000.0, 4.0 / 6.0)), 1e-15);
}

TEST(Encoder, MentionIsMeanOfMarkerStates) {
  Fixture f;
  const auto params = init_params<double>(f.cfg, 5);
  ag::Tape<double> tape;
  Bound<double> p(tape, params);
  const auto enc = encode(f.marked, f.vocab, p, f.cfg);
  const auto& h = enc.states.value();
  for (std::size_t m = 0; m < f.marked.mentions.size(); ++m) {
    const auto rep = mention_repr(enc, f.marked, m).value();
    const auto& mm = f.marked.mentions[m];
    for (std::size_t c = 0; c < h.cols(); ++c) EXPECT_NEAR(rep(0, c), 0.5 * (h(mm.open, c) + h(mm.close, c)), 1e-15);
  }
}

TEST(Encoder, EntityStatesMatchLoopRecomputation) {
  Fixture f;
  const auto params = init_params<double>(f.cfg, 6);
  ag::Tape<double> tape;
  Bound<double> p(tape, params);
  const auto enc = encode(f.marked, f.vocab, p, f.cfg);
  const auto ents = entity_states(enc, f.marked);
  const auto& h = enc.states.value();
  const auto& att = enc.attention.value();
  ASSERT_EQ(ents.entities.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    const auto& ms = f.marked.entity_mentions[e];
    for (std::size_t c = 0; c < h.cols(); ++c) {
      double s = 0;
      for (std::size_t m : ms) {
        const auto& mm = f.marked.mentions[m];
        s += std::exp(0.5 * (h(mm.open, c) + h(mm.close, c)));
      }
      EXPECT_NEAR(ents.embed.value()(e, c), std::log(s), 1e-12);
    }
    std::vector<double> row(att.cols(), 0.0);
    double total = 0;
    for (std::size_t m : ms)
      for (std::size_t j = 0; j < att.cols(); ++j) row[j] += att(f.marked.mentions[m].open, j) / ms.size();
    for (double v : row) total += v;
    for (std::size_t j = 0; j < att.cols(); ++j) EXPECT_NEAR(ents.attention.value()(e, j), row[j] / total, 1e-14);
    const auto single = entity_attention(enc, e, f.marked).value();
    for (std::size_t j = 0; j < att.cols(); ++j) EXPECT_NEAR(single(0, j), row[j] / total, 1e-14);
  }
}

TEST(PairContext, OneHotProductClosedForm) {
  const std::size_t L = 7, i = 2;
  ag::Tape<double> tape;
  Mat onehot(1, L);
  onehot(0, i) = 1.0;
  Rng rng(4);
  EncoderOutput<double> enc{tape.constant(random_mat(rng, L, 3)), tape.constant(Mat(L, L)), {}};
  const auto c = pair_context(enc, tape.constant(onehot), tape.constant(onehot)).value();
  const double a_i = std::exp(1.0) / (std::exp(1.0) + static_cast<double>(L - 1));
  const double a_other = 1.0 / (std::exp(1.0) + static_cast<double>(L - 1));
  for (std::size_t col = 0; col < 3; ++col) {
    double expect = 0;
    for (std::size_t k = 0; k < L; ++k) expect += (k == i ? a_i : a_other) * enc.states.value()(k, col);
    EXPECT_NEAR(c(0, col), expect, 1e-14);
  }
}

TEST(PairContext, RandomMatchesWeightedSumLoop) {
  Rng rng(8);
  const std::size_t L = 9, h = 4;
  ag::Tape<double> tape;
  Mat as(2, L), ao(2, L);
  for (std::size_t k = 0; k < as.size(); ++k) {
    as[k] = rng.uniform();
    ao[k] = rng.uniform();
  }
  EncoderOutput<double> enc{tape.constant(random_mat(rng, L, h)), tape.constant(Mat(L, L)), {}};
  const auto c = pair_context(enc, tape.constant(as), tape.constant(ao)).value();
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> w(L);
    double z = 0;
    for (std::size_t k = 0; k < L; ++k) z += (w[k] = std::exp(as(r, k) * ao(r, k)));
    for (std::size_t col = 0; col < h; ++col) {
      double s = 0;
      for (std::size_t k = 0; k < L; ++k) s += w[k] / z * enc.states.value()(k, col);
      EXPECT_NEAR(c(r, col), s, 1e-14);
    }
  }
}

TEST(PairMatrix, CellMatchesStepwiseRecomputation) {
  Fixture f;
  const auto params = init_params<double>(f.cfg, 9);
  ag::Tape<double> tape;
  Bound<double> p(tape, params);
  const auto enc = encode(f.marked, f.vocab, p, f.cfg);
  const auto ents = entity_states(enc, f.marked);
  const auto m = build_pair_matrix(ents, enc, p, f.cfg);
  ASSERT_EQ(m.n, 4u);
  ASSERT_EQ(m.values.rows(), 16u);
  for (std::size_t e = 0; e < 4; ++e)
    for (double v : m.values.value().row(m.cell(e, e))) EXPECT_EQ(v, 0.0);

  const std::size_t s = 1, o = 2;
  const auto& H = enc.states.value();
  const auto& A = ents.attention.value();
  const std::size_t L = H.rows(), h = H.cols();
  std::vector<double> w(L);
  double z = 0;
  for (std::size_t k = 0; k < L; ++k) z += (w[k] = std::exp(A(s, k) * A(o, k)));
  std::vector<double> ctx(h, 0.0);
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t c = 0; c < h; ++c) ctx[c] += w[k] / z * H(k, c);
  auto project = [&](std::size_t ent, const Mat& W) {
    std::vector<double> in;
    for (std::size_t c = 0; c < h; ++c) in.push_back(ents.embed.value()(ent, c));
    for (std::size_t c = 0; c < h; ++c) in.push_back(H(0, c));
    in.insert(in.end(), ctx.begin(), ctx.end());
    std::vector<double> out(W.cols(), 0.0);
    for (std::size_t i = 0; i < in.size(); ++i)
      for (std::size_t j = 0; j < W.cols(); ++j) out[j] += in[i] * W(i, j);
    return out;
  };
  auto us = project(s, params.at("pair.ws"));
  const auto uo = project(o, params.at("pair.wo"));
  us.insert(us.end(), uo.begin(), uo.end());
  const Mat& w1 = params.at("pair.ff1_w");
  const Mat& b1 = params.at("pair.ff1_b");
  const Mat& w2 = params.at("pair.ff2_w");
  const Mat& b2 = params.at("pair.ff2_b");
  std::vector<double> hidden(w1.cols());
  for (std::size_t j = 0; j < w1.cols(); ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < us.size(); ++i) a += us[i] * w1(i, j);
    hidden[j] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
  }
  for (std::size_t j = 0; j < w2.cols(); ++j) {
    double a = b2[j];
    for (std::size_t i = 0; i < hidden.size(); ++i) a += hidden[i] * w2(i, j);
    EXPECT_NEAR(m.values.value()(m.cell(s, o), j), a, 1e-12);
  }
}
