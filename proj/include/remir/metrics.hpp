#pragma once

// Triple-level scoring: F1, IgnF1, intra/inter-sentence F1 and the two-hop
// reasoning subset (Infer-F1).

#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "remir/corpus.hpp"

namespace remir {

struct Tally {
  std::size_t tp = 0, fp = 0, fn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  Tally& operator+=(const Tally& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct MetricsReport {
  Tally overall, ign, intra, inter, infer;
  std::size_t documents = 0;
  std::size_t infer_subset = 0;       // gold triples with a two-hop chain
  std::size_t composed_gold = 0;      // gold triples with composed provenance
  std::size_t accidental_chains = 0;  // in the subset without composed provenance

  double precision() const { return overall.precision(); }
  double recall() const { return overall.recall(); }
  double f1() const { return overall.f1(); }
  double ign_f1() const { return ign.f1(); }
  double intra_f1() const { return intra.f1(); }
  double inter_f1() const { return inter.f1(); }
  double infer_f1() const { return infer.f1(); }
};

/// (head canonical name, tail canonical name, relation name).
using Fact = std::tuple<std::string, std::string, std::string>;
using FactSet = std::set<Fact>;

inline Fact fact_of(const Triple& t, const Document& doc, const std::vector<std::string>& relations) {
  return {doc.entities.at(t.head).canonical_name, doc.entities.at(t.tail).canonical_name, relations.at(t.relation)};
}

inline FactSet collect_facts(const Corpus& corpus) {
  FactSet out;
  for (const Document& d : corpus.documents)
    for (const Triple& t : d.triples) out.insert(fact_of(t, d, corpus.relations));
  return out;
}

enum class Locality { intra, inter };

inline bool same_sentence(std::size_t head, std::size_t tail, const Document& doc) {
  std::set<std::size_t> hs;
  for (const Mention& m : doc.entities.at(head).mentions) hs.insert(m.sentence_index);
  for (const Mention& m : doc.entities.at(tail).mentions)
    if (hs.count(m.sentence_index)) return true;
  return false;
}

inline Locality classify_locality(const Triple& t, const Document& doc) {
  return same_sentence(t.head, t.tail, doc) ? Locality::intra : Locality::inter;
}

/// Ordered pairs (h, t) joined by some h -> b -> t path in the gold graph, b not in {h, t}.
inline std::set<std::pair<std::size_t, std::size_t>> two_hop_pairs(const std::vector<Triple>& gold) {
  std::map<std::size_t, std::set<std::size_t>> out_edges;
  for (const Triple& t : gold) out_edges[t.head].insert(t.tail);
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& [h, mids] : out_edges)
    for (std::size_t b : mids) {
      auto it = out_edges.find(b);
      if (it == out_edges.end()) continue;
      for (std::size_t t : it->second)
        if (t != h && b != t) pairs.emplace(h, t);
    }
  return pairs;
}

inline std::vector<Triple> infer_subset(const std::vector<Triple>& gold) {
  const auto pairs = two_hop_pairs(gold);
  std::vector<Triple> out;
  for (const Triple& t : gold)
    if (pairs.count({t.head, t.tail})) out.push_back(t);
  normalize_triples(out);
  return out;
}

namespace detail {

inline Tally tally(const std::set<Triple>& pred, const std::set<Triple>& gold) {
  Tally t;
  for (const Triple& p : pred) (gold.count(p) ? t.tp : t.fp) += 1;
  t.fn = gold.size() - t.tp;
  return t;
}

template <class Keep>
std::set<Triple> filter(const std::set<Triple>& s, Keep keep) {
  std::set<Triple> out;
  for (const Triple& t : s)
    if (keep(t)) out.insert(t);
  return out;
}

}  // namespace detail

/// Scores per-document predictions (aligned with corpus.documents) against the corpus gold.
inline MetricsReport f1_report(const std::vector<std::vector<Triple>>& predictions, const Corpus& corpus,
                               const FactSet& train_facts) {
  if (predictions.size() != corpus.documents.size())
    throw ValidationError("predictions cover " + std::to_string(predictions.size()) + " documents, corpus has " +
                          std::to_string(corpus.documents.size()));
  MetricsReport rep;
  rep.documents = corpus.documents.size();
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    const Document& doc = corpus.documents[d];
    for (const Triple& t : predictions[d])
      if (t.head >= doc.entities.size() || t.tail >= doc.entities.size() || t.relation >= corpus.relations.size())
        throw ValidationError("prediction out of range in document '" + doc.doc_id + "'");
    const std::set<Triple> pred(predictions[d].begin(), predictions[d].end());
    const std::set<Triple> gold(doc.triples.begin(), doc.triples.end());
    rep.overall += detail::tally(pred, gold);

    auto unseen = [&](const Triple& t) { return !train_facts.count(fact_of(t, doc, corpus.relations)); };
    rep.ign += detail::tally(detail::filter(pred, unseen), detail::filter(gold, unseen));

    auto intra = [&](const Triple& t) { return classify_locality(t, doc) == Locality::intra; };
    auto inter = [&](const Triple& t) { return !intra(t); };
    rep.intra += detail::tally(detail::filter(pred, intra), detail::filter(gold, intra));
    rep.inter += detail::tally(detail::filter(pred, inter), detail::filter(gold, inter));

    const auto chained = two_hop_pairs(doc.triples);
    auto reasoning = [&](const Triple& t) { return chained.count({t.head, t.tail}) > 0; };
    const auto gold_infer = detail::filter(gold, reasoning);
    rep.infer += detail::tally(detail::filter(pred, reasoning), gold_infer);

    rep.infer_subset += gold_infer.size();
    for (const Triple& t : doc.triples) rep.composed_gold += t.provenance == Provenance::composed;
    for (const Triple& t : gold_infer) rep.accidental_chains += t.provenance != Provenance::composed;
  }
  return rep;
}

inline nlohmann::json to_json(const Tally& t) {
  return {{"tp", t.tp}, {"fp", t.fp}, {"fn", t.fn}, {"precision", t.precision()}, {"recall", t.recall()}, {"f1", t.f1()}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"documents", r.documents},
          {"precision", r.precision()},
          {"recall", r.recall()},
          {"f1", r.f1()},
          {"ign_f1", r.ign_f1()},
          {"intra_f1", r.intra_f1()},
          {"inter_f1", r.inter_f1()},
          {"infer_f1", r.infer_f1()},
          {"infer_precision", r.infer.precision()},
          {"infer_recall", r.infer.recall()},
          {"counts",
           {{"overall", to_json(r.overall)},
            {"ign", to_json(r.ign)},
            {"intra", to_json(r.intra)},
            {"inter", to_json(r.inter)},
            {"infer", to_json(r.infer)}}},
          {"infer_subset", r.infer_subset},
          {"composed_gold", r.composed_gold},
          {"accidental_chains", r.accidental_chains}};
}

inline std::string to_text(const MetricsReport& r) {
  std::string out = "metric        P        R        F1      TP     FP     FN\n";
  char line[128];
  auto row = [&](const char* name, const Tally& t) {
    std::snprintf(line, sizeof line, "%-8s %8.4f %8.4f %8.4f %7zu %6zu %6zu\n", name, t.precision(), t.recall(), t.f1(),
                  t.tp, t.fp, t.fn);
    out += line;
  };
  row("all", r.overall);
  row("ign", r.ign);
  row("intra", r.intra);
  row("inter", r.inter);
  row("infer", r.infer);
  std::snprintf(line, sizeof line, "infer subset %zu (composed %zu, accidental chains %zu)\n", r.infer_subset,
                r.composed_gold, r.accidental_chains);
  out += line;
  return out;
}

// ------------------------------------------------------ prediction files

inline nlohmann::json predictions_to_json(const std::vector<std::vector<Triple>>& predictions, const Corpus& corpus) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t d = 0; d < predictions.size(); ++d)
    for (const Triple& t : predictions[d])
      arr.push_back({{"title", corpus.documents.at(d).doc_id},
                     {"h_idx", t.head},
                     {"t_idx", t.tail},
                     {"r", corpus.relations.at(t.relation)}});
  return arr;
}

inline std::vector<std::vector<Triple>> predictions_from_json(const nlohmann::json& arr, const Corpus& corpus) {
  std::map<std::string, std::size_t> by_title;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) by_title[corpus.documents[d].doc_id] = d;
  std::map<std::string, std::size_t> by_rel;
  for (std::size_t r = 0; r < corpus.relations.size(); ++r) by_rel[corpus.relations[r]] = r;

  std::vector<std::vector<Triple>> out(corpus.documents.size());
  if (!arr.is_array()) throw ValidationError("prediction file must hold a JSON array");
  for (const auto& p : arr) {
    const std::string title = p.at("title").get<std::string>();
    auto d = by_title.find(title);
    if (d == by_title.end()) throw ValidationError("prediction references unknown document '" + title + "'");
    const std::string rel = p.at("r").get<std::string>();
    auto r = by_rel.find(rel);
    if (r == by_rel.end()) throw ValidationError("prediction references unknown relation '" + rel + "'");
    Triple t{p.at("h_idx").get<std::size_t>(), p.at("t_idx").get<std::size_t>(), r->second, {}, Provenance::none};
    const auto n = corpus.documents[d->second].entities.size();
    if (t.head >= n || t.tail >= n) throw ValidationError("prediction entity index out of range in '" + title + "'");
    out[d->second].push_back(t);
  }
  for (auto& v : out) normalize_triples(v);
  return out;
}

}  // namespace remir
