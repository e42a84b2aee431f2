#pragma once

// Synthetic compositional-relation corpus.
//
// Each document is a small random graph of base relations, each expressed by
// a template sentence ("A cue C ."), plus composed relations r3(A, B) implied
// by single-step rules r1(A, C) & r2(C, B) -> r3(A, B). Composed triples are
// gold labels but never receive a surface sentence, so recovering them takes
// reasoning over other pairs.
//
// Base pairs picked for inter-sentence expression are split over two
// sentences joined by a document-local reference token:
//   "A cue ref3 ." ... "ref3 is C ."

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "remir/corpus.hpp"
#include "remir/rng.hpp"

namespace remir {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CompositionRule {
  std::size_t first = 0;    // r1(A, C)
  std::size_t second = 0;   // r2(C, B)
  std::size_t composed = 0; // r3(A, B)
  friend bool operator==(const CompositionRule&, const CompositionRule&) = default;
};

struct SynthConfig {
  std::size_t num_docs = 300;
  std::size_t min_entities = 4;
  std::size_t max_entities = 8;
  std::size_t base_relations = 6;
  std::vector<CompositionRule> composition_rules{{0, 1, 6}, {2, 3, 7}, {4, 5, 8}};
  double surface_noise = 0.05;
  double inter_fraction = 0.1;
  std::size_t min_chains = 1;  // planted rule chains per document
  std::size_t max_chains = 2;
  std::size_t name_pool = 400;
  std::size_t num_types = 4;
  bool unique_base_relations = true;  // each base label at most once per document
  std::uint64_t seed = 13;

  std::size_t num_relations() const {
    std::size_t r = base_relations;
    for (const auto& rule : composition_rules) r = std::max(r, rule.composed + 1);
    return r;
  }
};

inline std::string relation_name(std::size_t r) {
  std::string s = std::to_string(r);
  return "rel_" + std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s;
}

inline void validate(const SynthConfig& cfg) {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(cfg.surface_noise) || !prob_ok(cfg.inter_fraction))
    throw ConfigError("probabilities must lie in [0, 1]");
  if (cfg.min_entities < 2 || cfg.min_entities > cfg.max_entities)
    throw ConfigError("entity range must satisfy 2 <= min <= max");
  if (cfg.base_relations == 0) throw ConfigError("base_relations must be positive");
  if (cfg.min_chains > cfg.max_chains) throw ConfigError("min_chains > max_chains");
  if (cfg.name_pool < cfg.max_entities) throw ConfigError("name_pool smaller than max_entities");
  if (cfg.num_types == 0) throw ConfigError("num_types must be positive");
  if (!cfg.composition_rules.empty() && cfg.min_entities < 3)
    throw ConfigError("composition rules need at least 3 entities per document");
  std::set<std::size_t> antecedents;
  for (const auto& r : cfg.composition_rules) {
    if (r.first >= cfg.base_relations || r.second >= cfg.base_relations)
      throw ConfigError("rule antecedents must be base relations");
    if (r.composed == r.first || r.composed == r.second)
      throw ConfigError("composed relation must differ from its antecedents");
    antecedents.insert(r.first);
    antecedents.insert(r.second);
  }
  for (const auto& r : cfg.composition_rules)
    if (antecedents.count(r.composed))
      throw ConfigError("relation " + std::to_string(r.composed) +
                        " is both composed and an antecedent; only single-step composition is allowed");
}

namespace detail {

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words{"the", "of", "and", "also", "then", "some",
                                              "very", "later", "in", "with", "near", "once"};
  return words;
}

inline const std::vector<std::string>& type_names() {
  static const std::vector<std::string> names{"PER", "ORG", "LOC", "MISC", "TIME", "NUM"};
  return names;
}

struct Slot {
  std::string token;
  long entity = -1;  // >= 0 marks a single-token mention
};

inline Document generate_document(const SynthConfig& cfg, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, index));
  Document doc;
  doc.doc_id = "synth-" + std::to_string(index);

  const std::size_t n =
      static_cast<std::size_t>(rng.between(static_cast<long long>(cfg.min_entities), static_cast<long long>(cfg.max_entities)));
  const auto name_ids = rng.sample_without_replacement(cfg.name_pool, n);
  doc.entities.resize(n);
  for (std::size_t e = 0; e < n; ++e) {
    std::string num = std::to_string(name_ids[e]);
    doc.entities[e].entity_id = e;
    doc.entities[e].canonical_name = "name" + std::string(num.size() < 3 ? 3 - num.size() : 0, '0') + num;
    doc.entities[e].entity_type = type_names()[rng.below(std::min(cfg.num_types, type_names().size()))];
  }

  // Base graph: at most one base relation per ordered pair.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> base;
  std::set<std::size_t> used;
  auto free_pair = [&](std::size_t h, std::size_t t) { return h != t && !base.count({h, t}); };
  auto free_label = [&](std::size_t r) { return !cfg.unique_base_relations || !used.count(r); };

  if (!cfg.composition_rules.empty()) {
    const auto chains = static_cast<std::size_t>(
        rng.between(static_cast<long long>(cfg.min_chains), static_cast<long long>(cfg.max_chains)));
    for (std::size_t c = 0, tries = 0; c < chains && tries < 50; ++tries) {
      const auto& rule = cfg.composition_rules[rng.below(cfg.composition_rules.size())];
      const auto abc = rng.sample_without_replacement(n, 3);
      const std::size_t a = abc[0], mid = abc[1], b = abc[2];
      if (!free_pair(a, mid) || !free_pair(mid, b) || !free_label(rule.first) || !free_label(rule.second)) continue;
      base[{a, mid}] = rule.first;
      base[{mid, b}] = rule.second;
      used.insert(rule.first);
      used.insert(rule.second);
      ++c;
    }
  }
  const auto extras = static_cast<std::size_t>(rng.between(static_cast<long long>(n / 2), static_cast<long long>(n)));
  for (std::size_t c = 0, tries = 0; c < extras && tries < 20 * n; ++tries) {
    const std::size_t h = rng.below(n), t = rng.below(n);
    const std::size_t r = rng.below(cfg.base_relations);
    if (!free_pair(h, t) || !free_label(r)) continue;
    base[{h, t}] = r;
    used.insert(r);
    ++c;
  }

  // Surface realisation.
  std::vector<std::vector<Slot>> sents;
  std::vector<std::vector<std::size_t>> evidence_of;  // parallel to base order, indices into sents
  std::vector<std::pair<std::pair<std::size_t, std::size_t>, std::size_t>> base_list(base.begin(), base.end());
  std::vector<std::size_t> order(base_list.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  evidence_of.resize(base_list.size());
  std::vector<char> mentioned(n, 0);
  std::size_t next_ref = 0;
  for (std::size_t i : order) {
    const auto [pair, rel] = base_list[i];
    const std::string cue = "cue" + std::to_string(rel) + "_" + std::to_string(rng.below(2));
    const std::string h = doc.entities[pair.first].canonical_name;
    const std::string t = doc.entities[pair.second].canonical_name;
    mentioned[pair.first] = mentioned[pair.second] = 1;
    if (rng.bernoulli(cfg.inter_fraction)) {
      const std::string ref = "ref" + std::to_string(next_ref++);
      sents.push_back({{h, static_cast<long>(pair.first)}, {cue}, {ref}, {"."}});
      sents.push_back({{ref}, {"is"}, {t, static_cast<long>(pair.second)}, {"."}});
      evidence_of[i] = {sents.size() - 2, sents.size() - 1};
    } else {
      sents.push_back({{h, static_cast<long>(pair.first)}, {cue}, {t, static_cast<long>(pair.second)}, {"."}});
      evidence_of[i] = {sents.size() - 1};
    }
  }
  for (std::size_t e = 0; e < n; ++e)
    if (!mentioned[e]) sents.push_back({{doc.entities[e].canonical_name, static_cast<long>(e)}, {"appears"}, {"."}});

  std::vector<std::size_t> perm(sents.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<std::size_t> new_pos(sents.size());
  for (std::size_t k = 0; k < perm.size(); ++k) new_pos[perm[k]] = k;

  for (std::size_t k = 0; k < perm.size(); ++k) {
    std::vector<Slot> noisy;
    for (const Slot& s : sents[perm[k]]) {
      if (cfg.surface_noise > 0 && rng.bernoulli(cfg.surface_noise))
        noisy.push_back({filler_words()[rng.below(filler_words().size())]});
      noisy.push_back(s);
    }
    std::vector<std::string> tokens;
    for (std::size_t p = 0; p < noisy.size(); ++p) {
      tokens.push_back(noisy[p].token);
      if (noisy[p].entity >= 0) {
        Mention m;
        m.entity_index = static_cast<std::size_t>(noisy[p].entity);
        m.sentence_index = k;
        m.token_start = p;
        m.token_end = p + 1;
        m.surface = {noisy[p].token};
        doc.entities[m.entity_index].mentions.push_back(std::move(m));
      }
    }
    doc.sentences.push_back(std::move(tokens));
  }
  for (Entity& e : doc.entities)
    std::sort(e.mentions.begin(), e.mentions.end(), [](const Mention& a, const Mention& b) {
      return std::tie(a.sentence_index, a.token_start) < std::tie(b.sentence_index, b.token_start);
    });

  auto sentence_set = [&](std::size_t e) {
    std::set<std::size_t> s;
    for (const Mention& m : doc.entities[e].mentions) s.insert(m.sentence_index);
    return s;
  };
  auto share_sentence = [&](std::size_t a, std::size_t b) {
    const auto sa = sentence_set(a), sb = sentence_set(b);
    for (std::size_t x : sa)
      if (sb.count(x)) return true;
    return false;
  };

  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> base_evidence;
  for (std::size_t i = 0; i < base_list.size(); ++i) {
    const auto [pair, rel] = base_list[i];
    Triple t;
    t.head = pair.first;
    t.tail = pair.second;
    t.relation = rel;
    for (std::size_t s : evidence_of[i]) t.evidence.push_back(new_pos[s]);
    std::sort(t.evidence.begin(), t.evidence.end());
    t.provenance = share_sentence(t.head, t.tail) ? Provenance::base_intra : Provenance::base_inter;
    base_evidence[pair] = t.evidence;
    doc.triples.push_back(std::move(t));
  }

  // Single-step closure over the base graph.
  std::set<Triple> composed;
  for (const auto& rule : cfg.composition_rules)
    for (const auto& [p1, r1] : base)
      if (r1 == rule.first)
        for (const auto& [p2, r2] : base)
          if (r2 == rule.second && p2.first == p1.second && p1.first != p2.second) {
            Triple t;
            t.head = p1.first;
            t.tail = p2.second;
            t.relation = rule.composed;
            if (base.count({t.head, t.tail}) && base.at({t.head, t.tail}) == t.relation) continue;
            if (composed.count(t)) continue;
            std::set<std::size_t> ev(base_evidence[p1].begin(), base_evidence[p1].end());
            ev.insert(base_evidence[p2].begin(), base_evidence[p2].end());
            t.evidence.assign(ev.begin(), ev.end());
            t.provenance = Provenance::composed;
            composed.insert(t);
          }
  doc.triples.insert(doc.triples.end(), composed.begin(), composed.end());
  normalize_triples(doc.triples);
  return doc;
}

}  // namespace detail

/// Pure function of the config: document i draws from a stream derived from
/// (seed, i), so documents can be produced in any order.
inline Corpus generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  Corpus corpus;
  for (std::size_t r = 0; r < cfg.num_relations(); ++r) corpus.relations.push_back(relation_name(r));
  corpus.documents.reserve(cfg.num_docs);
  for (std::size_t i = 0; i < cfg.num_docs; ++i) {
    corpus.documents.push_back(detail::generate_document(cfg, i));
    remir::validate(corpus.documents.back(), corpus.relations.size());
  }
  return corpus;
}

/// Documents [begin, end) of a corpus, sharing its relation vocabulary.
inline Corpus slice(const Corpus& c, std::size_t begin, std::size_t end) {
  Corpus out;
  out.relations = c.relations;
  end = std::min(end, c.documents.size());
  for (std::size_t i = begin; i < end; ++i) out.documents.push_back(c.documents[i]);
  return out;
}

inline std::size_t count_provenance(const Corpus& c, Provenance p) {
  std::size_t n = 0;
  for (const auto& d : c.documents)
    for (const auto& t : d.triples) n += t.provenance == p;
  return n;
}

}  // namespace remir
