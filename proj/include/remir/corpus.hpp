#pragma once

// Documents, DocRED-style JSON ingestion, entity-marker insertion and the
// token vocabulary.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace remir {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Mention {
  std::size_t entity_index = 0;
  std::size_t sentence_index = 0;
  std::size_t token_start = 0;  // inclusive
  std::size_t token_end = 0;    // exclusive
  std::vector<std::string> surface;
};

struct Entity {
  std::size_t entity_id = 0;
  std::string entity_type;
  std::vector<Mention> mentions;
  std::string canonical_name;
};

enum class Provenance { none, base_intra, base_inter, composed };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::base_intra: return "base-intra";
    case Provenance::base_inter: return "base-inter";
    case Provenance::composed: return "composed";
    case Provenance::none: break;
  }
  return "";
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "base-intra") return Provenance::base_intra;
  if (s == "base-inter") return Provenance::base_inter;
  if (s == "composed") return Provenance::composed;
  throw ValidationError("unknown provenance '" + s + "'");
}

/// Ordered and compared on (head, tail, relation) only.
struct Triple {
  std::size_t head = 0;
  std::size_t tail = 0;
  std::size_t relation = 0;
  std::vector<std::size_t> evidence;
  Provenance provenance = Provenance::none;

  auto key() const { return std::tie(head, tail, relation); }
  friend bool operator<(const Triple& a, const Triple& b) { return a.key() < b.key(); }
  friend bool operator==(const Triple& a, const Triple& b) { return a.key() == b.key(); }
};

struct Document {
  std::string doc_id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<Entity> entities;
  std::vector<Triple> triples;  // sorted, unique

  std::size_t num_entities() const { return entities.size(); }
  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }
};

struct Corpus {
  std::vector<Document> documents;
  std::vector<std::string> relations;  // index -> relation name

  std::size_t num_relations() const { return relations.size(); }
  std::size_t num_triples() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.triples.size();
    return n;
  }
};

inline void normalize_triples(std::vector<Triple>& triples) {
  std::sort(triples.begin(), triples.end());
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
}

/// Throws ValidationError on any broken invariant of a document.
inline void validate(const Document& doc, std::size_t num_relations) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("document '" + doc.doc_id + "': " + what);
  };
  if (doc.entities.empty()) fail("no entities");
  for (std::size_t e = 0; e < doc.entities.size(); ++e) {
    const Entity& ent = doc.entities[e];
    if (ent.entity_id != e) fail("entity ids must equal their index");
    if (ent.mentions.empty()) fail("entity " + std::to_string(e) + " has no mentions");
    for (const Mention& m : ent.mentions) {
      if (m.entity_index != e) fail("mention entity index mismatch");
      if (m.sentence_index >= doc.sentences.size()) fail("mention sentence index out of range");
      if (!(m.token_start < m.token_end && m.token_end <= doc.sentences[m.sentence_index].size()))
        fail("mention span [" + std::to_string(m.token_start) + "," + std::to_string(m.token_end) +
             ") out of bounds of sentence " + std::to_string(m.sentence_index));
    }
  }
  for (const Triple& t : doc.triples) {
    if (t.head >= doc.entities.size() || t.tail >= doc.entities.size()) fail("triple entity out of range");
    if (t.head == t.tail) fail("triple with head == tail");
    if (t.relation >= num_relations) fail("triple relation out of range");
  }
}

// ---------------------------------------------------------------- DocRED JSON

namespace detail {

inline Document parse_document(const nlohmann::json& j, std::size_t index,
                               std::vector<std::pair<Triple, std::string>>& raw_labels) {
  Document doc;
  try {
    doc.doc_id = j.at("title").get<std::string>();
    doc.sentences = j.at("sents").get<std::vector<std::vector<std::string>>>();
    const auto& vs = j.at("vertexSet");
    for (std::size_t e = 0; e < vs.size(); ++e) {
      Entity ent;
      ent.entity_id = e;
      for (const auto& mj : vs[e]) {
        Mention m;
        m.entity_index = e;
        m.sentence_index = mj.at("sent_id").get<std::size_t>();
        const auto pos = mj.at("pos").get<std::vector<long long>>();
        if (pos.size() != 2 || pos[0] < 0 || pos[1] < 0)
          throw ValidationError("document '" + doc.doc_id + "': malformed mention pos");
        m.token_start = static_cast<std::size_t>(pos[0]);
        m.token_end = static_cast<std::size_t>(pos[1]);
        if (m.sentence_index < doc.sentences.size() && m.token_start < m.token_end &&
            m.token_end <= doc.sentences[m.sentence_index].size()) {
          const auto& s = doc.sentences[m.sentence_index];
          m.surface.assign(s.begin() + static_cast<long>(m.token_start), s.begin() + static_cast<long>(m.token_end));
        }
        if (ent.mentions.empty()) {
          ent.entity_type = mj.at("type").get<std::string>();
          ent.canonical_name = mj.at("name").get<std::string>();
        }
        ent.mentions.push_back(std::move(m));
      }
      doc.entities.push_back(std::move(ent));
    }
    if (j.contains("labels")) {
      for (const auto& lj : j.at("labels")) {
        Triple t;
        t.head = lj.at("h").get<std::size_t>();
        t.tail = lj.at("t").get<std::size_t>();
        if (lj.contains("evidence")) t.evidence = lj.at("evidence").get<std::vector<std::size_t>>();
        if (lj.contains("provenance")) t.provenance = provenance_from_string(lj.at("provenance").get<std::string>());
        raw_labels.emplace_back(std::move(t), lj.at("r").get<std::string>());
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError("document " + std::to_string(index) + ": " + ex.what());
  }
  return doc;
}

/// Index of the top-level array element containing byte offset `byte`.
inline std::size_t document_index_at(const std::string& text, std::size_t byte) {
  std::size_t index = 0;
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = 0; i < text.size() && i < byte; ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '[' || c == '{') ++depth;
    else if (c == ']' || c == '}') --depth;
    else if (c == ',' && depth == 1) ++index;
  }
  return index;
}

}  // namespace detail

/// Parses a DocRED-style JSON array. The relation vocabulary is the sorted
/// set of relation strings observed in the labels.
inline Corpus parse_docred_string(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ParseError("document " + std::to_string(detail::document_index_at(text, ex.byte)) +
                     ": malformed JSON: " + ex.what());
  }
  if (!root.is_array()) throw ParseError("document 0: top level must be a JSON array of documents");

  Corpus corpus;
  std::vector<std::vector<std::pair<Triple, std::string>>> labels(root.size());
  std::set<std::string> relation_names;
  for (std::size_t i = 0; i < root.size(); ++i) {
    if (!root[i].is_object()) throw ParseError("document " + std::to_string(i) + ": not an object");
    corpus.documents.push_back(detail::parse_document(root[i], i, labels[i]));
    for (const auto& [t, r] : labels[i]) relation_names.insert(r);
  }
  corpus.relations.assign(relation_names.begin(), relation_names.end());
  std::map<std::string, std::size_t> rel_index;
  for (std::size_t r = 0; r < corpus.relations.size(); ++r) rel_index[corpus.relations[r]] = r;

  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    Document& doc = corpus.documents[i];
    for (auto& [t, r] : labels[i]) {
      t.relation = rel_index.at(r);
      doc.triples.push_back(std::move(t));
    }
    normalize_triples(doc.triples);
    validate(doc, corpus.relations.size());
  }
  return corpus;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

inline Corpus parse_docred(const std::string& path) { return parse_docred_string(read_file(path)); }

inline nlohmann::json to_json(const Document& doc, const std::vector<std::string>& relations) {
  nlohmann::json vs = nlohmann::json::array();
  for (const Entity& e : doc.entities) {
    nlohmann::json group = nlohmann::json::array();
    for (const Mention& m : e.mentions) {
      std::string name;
      for (std::size_t k = 0; k < m.surface.size(); ++k) name += (k ? " " : "") + m.surface[k];
      if (&m == &e.mentions.front() || name.empty()) name = e.canonical_name;
      group.push_back({{"name", name},
                       {"sent_id", m.sentence_index},
                       {"pos", {m.token_start, m.token_end}},
                       {"type", e.entity_type}});
    }
    vs.push_back(std::move(group));
  }
  nlohmann::json labels = nlohmann::json::array();
  for (const Triple& t : doc.triples) {
    nlohmann::json l = {{"h", t.head}, {"t", t.tail}, {"r", relations.at(t.relation)}, {"evidence", t.evidence}};
    if (t.provenance != Provenance::none) l["provenance"] = to_string(t.provenance);
    labels.push_back(std::move(l));
  }
  return {{"title", doc.doc_id}, {"sents", doc.sentences}, {"vertexSet", std::move(vs)}, {"labels", std::move(labels)}};
}

/// Canonical serialisation: sorted keys, labels in triple order, no whitespace.
inline std::string serialize_docred(const Corpus& corpus, int indent = -1) {
  nlohmann::json root = nlohmann::json::array();
  for (const Document& d : corpus.documents) root.push_back(to_json(d, corpus.relations));
  return root.dump(indent);
}

/// Re-indexes every triple onto `vocab` by relation name. Throws listing
/// every relation absent from `vocab`.
inline void remap_relations(Corpus& corpus, const std::vector<std::string>& vocab) {
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < vocab.size(); ++r) index[vocab[r]] = r;
  std::vector<std::string> unknown;
  for (const std::string& r : corpus.relations)
    if (!index.count(r)) unknown.push_back(r);
  if (!unknown.empty()) {
    std::string msg = "relation vocabulary mismatch; unknown relations:";
    for (const auto& u : unknown) msg += " " + u;
    throw ValidationError(msg);
  }
  for (Document& d : corpus.documents) {
    for (Triple& t : d.triples) t.relation = index.at(corpus.relations[t.relation]);
    normalize_triples(d.triples);
  }
  corpus.relations = vocab;
}

/// Sorted set of entity types appearing in the corpora.
inline std::vector<std::string> collect_types(const std::vector<const Corpus*>& corpora) {
  std::set<std::string> types;
  for (const Corpus* c : corpora)
    for (const Document& d : c->documents)
      for (const Entity& e : d.entities) types.insert(e.entity_type);
  return {types.begin(), types.end()};
}

// ---------------------------------------------------------------- markers

inline constexpr std::size_t kDefaultMaxEntityId = 64;
inline constexpr std::size_t kDefaultMaxTokens = 512;
inline const std::string kDocToken = "[DOC]";
inline const std::string kUnkToken = "[UNK]";

inline std::string open_marker(const std::string& type) { return "<t:" + type + ">"; }
inline std::string close_marker(std::size_t id) { return "</e:" + std::to_string(id) + ">"; }

struct MarkedMention {
  std::size_t entity = 0;
  std::size_t sentence = 0;
  std::size_t open = 0;   // position of the entity-type marker
  std::size_t close = 0;  // position of the entity-id marker
};

struct MarkedDocument {
  std::vector<std::string> tokens;  // tokens[0] is the document-start token
  std::vector<char> is_marker;      // true for the start token and every marker
  std::vector<MarkedMention> mentions;
  std::vector<std::vector<std::size_t>> entity_mentions;  // per entity, indices into mentions
  std::vector<std::string> warnings;
  const Document* origin = nullptr;

  std::size_t length() const { return tokens.size(); }
  bool entity_survives(std::size_t e) const { return !entity_mentions[e].empty(); }
};

/// Inserts an entity-type marker before and an entity-id marker after every
/// mention, and prepends the document-start token.
///
/// At a shared boundary, closing markers come before opening markers; within
/// each kind, ties go by entity id ascending. Overlapping spans of the same
/// entity are merged (with a warning). If the marked document is longer than
/// `max_tokens`, whole trailing sentences are dropped along with their mentions.
inline MarkedDocument insert_markers(const Document& doc, const std::vector<std::string>& type_vocab,
                                     std::size_t max_id = kDefaultMaxEntityId,
                                     std::size_t max_tokens = kDefaultMaxTokens) {
  MarkedDocument out;
  out.origin = &doc;
  out.entity_mentions.resize(doc.entities.size());

  struct Span {
    std::size_t entity, sentence, start, end;  // flat token coordinates
  };
  std::vector<std::size_t> sent_offset(doc.sentences.size() + 1, 0);
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) sent_offset[s + 1] = sent_offset[s] + doc.sentences[s].size();

  std::vector<Span> spans;
  for (const Entity& e : doc.entities) {
    if (std::find(type_vocab.begin(), type_vocab.end(), e.entity_type) == type_vocab.end())
      throw std::invalid_argument("insert_markers: entity type '" + e.entity_type + "' not in type vocabulary");
    if (e.entity_id >= max_id)
      throw std::invalid_argument("insert_markers: entity id " + std::to_string(e.entity_id) + " >= max_id " +
                                  std::to_string(max_id));
    std::vector<Span> own;
    for (const Mention& m : e.mentions)
      own.push_back({e.entity_id, m.sentence_index, sent_offset[m.sentence_index] + m.token_start,
                     sent_offset[m.sentence_index] + m.token_end});
    std::sort(own.begin(), own.end(), [](const Span& a, const Span& b) {
      return std::tie(a.start, a.end) < std::tie(b.start, b.end);
    });
    std::vector<Span> merged;
    for (const Span& s : own) {
      if (!merged.empty() && s.start < merged.back().end) {
        out.warnings.push_back("document '" + doc.doc_id + "': merged overlapping mentions of entity " +
                               std::to_string(e.entity_id));
        merged.back().end = std::max(merged.back().end, s.end);
      } else {
        merged.push_back(s);
      }
    }
    spans.insert(spans.end(), merged.begin(), merged.end());
  }

  // Sentence-level truncation: marked length of the first k sentences.
  std::vector<std::size_t> markers_in_sentence(doc.sentences.size(), 0);
  for (const Span& s : spans) markers_in_sentence[s.sentence] += 2;
  std::size_t keep = 0, length = 1;
  while (keep < doc.sentences.size() &&
         length + doc.sentences[keep].size() + markers_in_sentence[keep] <= max_tokens) {
    length += doc.sentences[keep].size() + markers_in_sentence[keep];
    ++keep;
  }
  if (keep < doc.sentences.size()) {
    std::size_t dropped = 0;
    for (const Span& s : spans) dropped += s.sentence >= keep;
    out.warnings.push_back("document '" + doc.doc_id + "': truncated to " + std::to_string(keep) +
                           " sentences; dropped " + std::to_string(dropped) + " mentions");
    std::erase_if(spans, [keep](const Span& s) { return s.sentence >= keep; });
  }
  const std::size_t flat_len = sent_offset[keep];

  // Events at each flat boundary.
  std::vector<std::vector<std::size_t>> opens(flat_len + 1), closes(flat_len + 1);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    opens[spans[i].start].push_back(i);
    closes[spans[i].end].push_back(i);
  }
  auto by_entity = [&](std::size_t a, std::size_t b) {
    return std::tie(spans[a].entity, spans[a].start, spans[a].end) <
           std::tie(spans[b].entity, spans[b].start, spans[b].end);
  };

  std::vector<std::string> flat;
  flat.reserve(flat_len);
  for (std::size_t s = 0; s < keep; ++s) flat.insert(flat.end(), doc.sentences[s].begin(), doc.sentences[s].end());

  out.mentions.resize(spans.size());
  out.tokens.push_back(kDocToken);
  out.is_marker.push_back(1);
  for (std::size_t pos = 0; pos <= flat_len; ++pos) {
    std::sort(closes[pos].begin(), closes[pos].end(), by_entity);
    std::sort(opens[pos].begin(), opens[pos].end(), by_entity);
    for (std::size_t i : closes[pos]) {
      out.mentions[i].close = out.tokens.size();
      out.tokens.push_back(close_marker(spans[i].entity));
      out.is_marker.push_back(1);
    }
    for (std::size_t i : opens[pos]) {
      out.mentions[i].open = out.tokens.size();
      out.tokens.push_back(open_marker(doc.entities[spans[i].entity].entity_type));
      out.is_marker.push_back(1);
    }
    if (pos < flat_len) {
      out.tokens.push_back(flat[pos]);
      out.is_marker.push_back(0);
    }
  }
  for (std::size_t i = 0; i < spans.size(); ++i) {
    out.mentions[i].entity = spans[i].entity;
    out.mentions[i].sentence = spans[i].sentence;
  }
  // Mention order: by entity, then position.
  std::vector<std::size_t> order(spans.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(out.mentions[a].entity, out.mentions[a].open) < std::tie(out.mentions[b].entity, out.mentions[b].open);
  });
  std::vector<MarkedMention> sorted;
  for (std::size_t i : order) sorted.push_back(out.mentions[i]);
  out.mentions = std::move(sorted);
  for (std::size_t i = 0; i < out.mentions.size(); ++i) out.entity_mentions[out.mentions[i].entity].push_back(i);
  for (std::size_t e = 0; e < doc.entities.size(); ++e)
    if (out.entity_mentions[e].empty())
      out.warnings.push_back("document '" + doc.doc_id + "': entity " + std::to_string(e) +
                             " has no surviving mention");
  return out;
}

/// Removes the start token and every marker.
inline std::vector<std::string> strip_markers(const MarkedDocument& marked) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < marked.tokens.size(); ++i)
    if (!marked.is_marker[i]) out.push_back(marked.tokens[i]);
  return out;
}

inline std::vector<std::string> flat_tokens(const Document& doc) {
  std::vector<std::string> out;
  for (const auto& s : doc.sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

// ---------------------------------------------------------------- vocabulary

class Vocab {
 public:
  Vocab() = default;

  /// Specials, every type marker, every id marker below max_id, then corpus words.
  static Vocab build(const std::vector<const Corpus*>& corpora, const std::vector<std::string>& types,
                     std::size_t max_id = kDefaultMaxEntityId) {
    Vocab v;
    v.add(kUnkToken);
    v.add(kDocToken);
    for (const auto& t : types) v.add(open_marker(t));
    for (std::size_t i = 0; i < max_id; ++i) v.add(close_marker(i));
    std::set<std::string> words;
    for (const Corpus* c : corpora)
      for (const Document& d : c->documents)
        for (const auto& s : d.sentences) words.insert(s.begin(), s.end());
    for (const auto& w : words) v.add(w);
    return v;
  }

  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    Vocab v;
    for (const auto& t : tokens) v.add(t);
    return v;
  }

  std::size_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
  }
  std::vector<std::size_t> ids(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& t) {
    if (index_.emplace(t, tokens_.size()).second) tokens_.push_back(t);
  }
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> tokens_;
};

}  // namespace remir
