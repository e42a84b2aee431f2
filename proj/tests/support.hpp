#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "remir/remir.hpp"

namespace remir::testing {

using Mat = Matrix<double>;
using VarD = ag::Var<double>;

inline Mat random_mat(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Mat m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = scale * rng.normal();
  return m;
}

/// Largest |analytic - numeric| / max(1, |analytic| + |numeric|) over every
/// input coordinate. `f` maps the input variables to a 1x1 result.
inline double fd_error(std::vector<Mat> inputs, const std::function<VarD(ag::Tape<double>&, std::vector<VarD>&)>& f,
                       double eps = 1e-6) {
  std::vector<Mat> analytic;
  {
    ag::Tape<double> tape;
    std::vector<VarD> vars;
    for (const Mat& m : inputs) vars.push_back(tape.variable(m));
    tape.backward(f(tape, vars));
    for (const VarD& v : vars) {
      Mat g = tape.grad(v.id);
      if (g.empty()) g = Mat(v.rows(), v.cols());
      analytic.push_back(g);
    }
  }
  auto eval = [&](const std::vector<Mat>& in) {
    ag::Tape<double> tape;
    std::vector<VarD> vars;
    for (const Mat& m : in) vars.push_back(tape.constant(m));
    return f(tape, vars).scalar();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double x = inputs[i][k];
      inputs[i][k] = x + eps;
      const double up = eval(inputs);
      inputs[i][k] = x - eps;
      const double down = eval(inputs);
      inputs[i][k] = x;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[i][k];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric)));
    }
  return worst;
}

/// Scalar probe <out, weights> with fixed pseudo-random weights.
inline VarD probe(ag::Tape<double>& tape, VarD out, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ag::sum_all(ag::mul(out, tape.constant(random_mat(rng, out.rows(), out.cols()))));
}

inline Mention mention(std::size_t entity, std::size_t sentence, std::size_t start, std::size_t end) {
  return Mention{entity, sentence, start, end, {}};
}

/// Three sentences, four entities, three triples.
inline Document small_document(const std::string& id = "doc-a") {
  Document d;
  d.doc_id = id;
  d.sentences = {{"Alba", "founded", "Brill", "in", "Corva", "."},
                 {"Brill", "trades", "with", "Dunmore", "."},
                 {"Alba", "visited", "Dunmore", "."}};
  const std::vector<std::string> names{"Alba", "Brill", "Corva", "Dunmore"};
  const std::vector<std::string> types{"PER", "ORG", "LOC", "ORG"};
  for (std::size_t e = 0; e < 4; ++e) d.entities.push_back(Entity{e, types[e], {}, names[e]});
  d.entities[0].mentions = {mention(0, 0, 0, 1), mention(0, 2, 0, 1)};
  d.entities[1].mentions = {mention(1, 0, 2, 3), mention(1, 1, 0, 1)};
  d.entities[2].mentions = {mention(2, 0, 4, 5)};
  d.entities[3].mentions = {mention(3, 1, 3, 4), mention(3, 2, 2, 3)};
  for (auto& e : d.entities)
    for (auto& m : e.mentions) {
      const auto& s = d.sentences[m.sentence_index];
      m.surface.assign(s.begin() + static_cast<long>(m.token_start), s.begin() + static_cast<long>(m.token_end));
    }
  d.triples = {Triple{0, 1, 0, {0}, Provenance::base_intra}, Triple{1, 3, 1, {1}, Provenance::base_intra},
               Triple{0, 3, 2, {}, Provenance::composed}};
  normalize_triples(d.triples);
  return d;
}

inline Corpus small_corpus(std::size_t docs = 2) {
  Corpus c;
  c.relations = {"founded", "trades", "partner"};
  for (std::size_t i = 0; i < docs; ++i) c.documents.push_back(small_document("doc-" + std::to_string(i)));
  return c;
}

/// Synthetic splits with a tiny model config for fast tests.
inline RunConfig tiny_run(std::size_t train = 10, std::size_t dev = 5, std::size_t test = 5) {
  RunConfig cfg;
  cfg.split = {train, dev, test};
  cfg.synth.max_entities = 5;
  cfg.train.epochs = 2;
  cfg.train.hidden = 16;
  cfg.train.pair_width = 16;
  cfg.train.matrix_width = 16;
  cfg.train.encoder_heads = 2;
  cfg.train.inference_depth = 1;
  return cfg;
}

}  // namespace remir::testing
