#pragma once

// Run configuration files: one `name:type = value` entry per line, `#`
// starts a comment line. Types are int, real, bool and string. Unknown
// names, type mismatches and malformed values are ConfigErrors carrying the
// line number.

#include <charconv>
#include <functional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "remir/corpus.hpp"
#include "remir/synth.hpp"
#include "remir/trainer.hpp"

namespace remir {

struct SplitSizes {
  std::size_t train = 200;
  std::size_t dev = 50;
  std::size_t test = 50;

  std::size_t total() const { return train + dev + test; }
};

struct RunConfig {
  SynthConfig synth;
  SplitSizes split;
  TrainConfig train;
};

enum class FieldType { integer, real, boolean, string };

inline const char* to_string(FieldType t) {
  switch (t) {
    case FieldType::integer: return "int";
    case FieldType::real: return "real";
    case FieldType::boolean: return "bool";
    case FieldType::string: return "string";
  }
  return "?";
}

struct ConfigField {
  std::string name;
  FieldType type;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

namespace detail {

inline std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::uint64_t parse_unsigned(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("expected a real number, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

template <class Get>
ConfigField size_field(std::string name, std::string doc, Get member) {
  return {std::move(name), FieldType::integer, std::move(doc),
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& v) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_unsigned(v));
          }};
}

template <class Get>
ConfigField real_field(std::string name, std::string doc, Get member) {
  return {std::move(name), FieldType::real, std::move(doc),
          [member](const RunConfig& c) { return format_real(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& v) { member(c) = parse_real(v); }};
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// "0+1>6;2+3>7": r1 + r2 > composed, separated by semicolons.
inline std::string rules_to_string(const std::vector<CompositionRule>& rules) {
  std::string out;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(rules[i].first) + "+" + std::to_string(rules[i].second) + ">" +
           std::to_string(rules[i].composed);
  }
  return out;
}

inline std::vector<CompositionRule> rules_from_string(const std::string& s) {
  std::vector<CompositionRule> rules;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ';')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    const auto plus = item.find('+'), gt = item.find('>');
    if (plus == std::string::npos || gt == std::string::npos || gt < plus)
      throw ConfigError("composition rule '" + item + "' is not of the form r1+r2>r3");
    rules.push_back({detail::parse_unsigned(detail::trim(item.substr(0, plus))),
                     detail::parse_unsigned(detail::trim(item.substr(plus + 1, gt - plus - 1))),
                     detail::parse_unsigned(detail::trim(item.substr(gt + 1)))});
  }
  return rules;
}

inline const std::vector<ConfigField>& config_fields() {
  using detail::real_field;
  using detail::size_field;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(size_field("synth.seed", "generator seed", [](RunConfig& c) -> auto& { return c.synth.seed; }));
    f.push_back(size_field("synth.min_entities", "fewest entities per document",
                           [](RunConfig& c) -> auto& { return c.synth.min_entities; }));
    f.push_back(size_field("synth.max_entities", "most entities per document",
                           [](RunConfig& c) -> auto& { return c.synth.max_entities; }));
    f.push_back(size_field("synth.base_relations", "relations expressed by template sentences",
                           [](RunConfig& c) -> auto& { return c.synth.base_relations; }));
    f.push_back({"synth.composition_rules", FieldType::string, "r1+r2>r3 rules separated by ';'",
                 [](const RunConfig& c) { return rules_to_string(c.synth.composition_rules); },
                 [](RunConfig& c, const std::string& v) { c.synth.composition_rules = rules_from_string(v); }});
    f.push_back(real_field("synth.surface_noise", "probability of a distractor token between words",
                           [](RunConfig& c) -> auto& { return c.synth.surface_noise; }));
    f.push_back(real_field("synth.inter_fraction", "fraction of base pairs stated across sentences",
                           [](RunConfig& c) -> auto& { return c.synth.inter_fraction; }));
    f.push_back(size_field("synth.min_chains", "fewest planted rule chains per document",
                           [](RunConfig& c) -> auto& { return c.synth.min_chains; }));
    f.push_back(size_field("synth.max_chains", "most planted rule chains per document",
                           [](RunConfig& c) -> auto& { return c.synth.max_chains; }));
    f.push_back(size_field("synth.name_pool", "distinct entity names",
                           [](RunConfig& c) -> auto& { return c.synth.name_pool; }));
    f.push_back(size_field("synth.num_types", "entity types", [](RunConfig& c) -> auto& { return c.synth.num_types; }));
    f.push_back({"synth.unique_base_relations", FieldType::boolean, "each base relation at most once per document",
                 [](const RunConfig& c) { return std::string(c.synth.unique_base_relations ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) { c.synth.unique_base_relations = detail::parse_bool(v); }});

    f.push_back(size_field("split.train", "training documents", [](RunConfig& c) -> auto& { return c.split.train; }));
    f.push_back(size_field("split.dev", "development documents", [](RunConfig& c) -> auto& { return c.split.dev; }));
    f.push_back(size_field("split.test", "test documents", [](RunConfig& c) -> auto& { return c.split.test; }));

    f.push_back(real_field("train.mask_rate", "fraction of off-diagonal cells masked on the mask path",
                           [](RunConfig& c) -> auto& { return c.train.mask_rate; }));
    f.push_back(size_field("train.inference_depth", "stacked inference layers",
                           [](RunConfig& c) -> auto& { return c.train.inference_depth; }));
    f.push_back(real_field("train.alpha", "weight of the reconstruction loss",
                           [](RunConfig& c) -> auto& { return c.train.alpha; }));
    f.push_back(real_field("train.beta", "weight of the classification loss",
                           [](RunConfig& c) -> auto& { return c.train.beta; }));
    f.push_back(size_field("train.batch_size", "documents per step",
                           [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    f.push_back(size_field("train.epochs", "passes over the training set",
                           [](RunConfig& c) -> auto& { return c.train.epochs; }));
    f.push_back(real_field("train.lr_encoder", "peak learning rate of encoder parameters",
                           [](RunConfig& c) -> auto& { return c.train.lr_encoder; }));
    f.push_back(real_field("train.lr_rest", "peak learning rate of all other parameters",
                           [](RunConfig& c) -> auto& { return c.train.lr_rest; }));
    f.push_back(real_field("train.weight_decay", "decoupled weight decay on matrices",
                           [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
    f.push_back(real_field("train.dropout", "encoder dropout during training",
                           [](RunConfig& c) -> auto& { return c.train.dropout; }));
    f.push_back(real_field("train.warmup_fraction", "share of steps with linear warmup",
                           [](RunConfig& c) -> auto& { return c.train.warmup_fraction; }));
    f.push_back(real_field("train.max_grad_norm", "global gradient norm clip, 0 disables",
                           [](RunConfig& c) -> auto& { return c.train.max_grad_norm; }));
    f.push_back(size_field("train.seed", "initialisation, shuffling and mask seed",
                           [](RunConfig& c) -> auto& { return c.train.seed; }));
    f.push_back({"train.ablation", FieldType::string, "full, no_mir, only_mask_path, masked_cells_only_recon, "
                                                      "no_imsa_plain_msa or no_inference_module",
                 [](const RunConfig& c) { return to_string(c.train.ablation); },
                 [](RunConfig& c, const std::string& v) { c.train.ablation = ablation_from_string(v); }});
    f.push_back({"train.precision", FieldType::integer, "32 or 64 bit arithmetic",
                 [](const RunConfig& c) { return std::to_string(c.train.precision); },
                 [](RunConfig& c, const std::string& v) { c.train.precision = static_cast<int>(detail::parse_unsigned(v)); }});
    f.push_back(size_field("train.hidden", "encoder width", [](RunConfig& c) -> auto& { return c.train.hidden; }));
    f.push_back(size_field("train.encoder_layers", "encoder layers",
                           [](RunConfig& c) -> auto& { return c.train.encoder_layers; }));
    f.push_back(size_field("train.encoder_heads", "encoder attention heads",
                           [](RunConfig& c) -> auto& { return c.train.encoder_heads; }));
    f.push_back(size_field("train.pair_width", "width of the subject and object projections",
                           [](RunConfig& c) -> auto& { return c.train.pair_width; }));
    f.push_back(size_field("train.matrix_width", "entity-pair matrix width",
                           [](RunConfig& c) -> auto& { return c.train.matrix_width; }));
    f.push_back(size_field("train.heads_per_mode", "inference heads per composition mode",
                           [](RunConfig& c) -> auto& { return c.train.heads_per_mode; }));
    f.push_back(size_field("train.max_tokens", "longest marked document",
                           [](RunConfig& c) -> auto& { return c.train.max_tokens; }));
    f.push_back(size_field("train.max_entity_id", "closing-marker ids available",
                           [](RunConfig& c) -> auto& { return c.train.max_entity_id; }));
    f.push_back({"train.activation", FieldType::string, "gelu or tanh",
                 [](const RunConfig& c) { return to_string(c.train.activation); },
                 [](RunConfig& c, const std::string& v) { c.train.activation = activation_from_string(v); }});
    f.push_back(real_field("train.qk_identity_gain", "identity added to initial encoder query/key maps",
                           [](RunConfig& c) -> auto& { return c.train.qk_identity_gain; }));
    return f;
  }();
  return fields;
}

inline const ConfigField* find_field(const std::string& name) {
  for (const auto& f : config_fields())
    if (f.name == name) return &f;
  return nullptr;
}

/// Sets one field from its textual value; throws ConfigError on unknown names or bad values.
inline void set_field(RunConfig& cfg, const std::string& name, const std::string& value) {
  const ConfigField* f = find_field(name);
  if (!f) throw ConfigError("unknown config key '" + name + "'");
  try {
    f->set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

inline void check(const RunConfig& cfg) {
  validate(cfg.synth);
  check(cfg.train);
  if (cfg.split.train == 0) throw ConfigError("split.train must be positive");
}

/// Parses `text` on top of `base` (defaults when omitted).
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::stringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = detail::trim(raw);
    if (s.empty() || s[0] == '#') continue;
    auto fail = [&](const std::string& what) {
      throw ConfigError("config line " + std::to_string(line) + ": " + what);
    };
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected 'name:type = value'");
    const std::string lhs = detail::trim(s.substr(0, eq)), value = detail::trim(s.substr(eq + 1));
    const auto colon = lhs.find(':');
    if (colon == std::string::npos) fail("missing type in '" + lhs + "'");
    const std::string name = detail::trim(lhs.substr(0, colon)), type = detail::trim(lhs.substr(colon + 1));
    const ConfigField* f = find_field(name);
    if (!f) fail("unknown config key '" + name + "'");
    if (type != to_string(f->type))
      fail("'" + name + "' has type " + to_string(f->type) + ", file declares " + type);
    try {
      f->set(base, value);
    } catch (const ConfigError& e) {
      fail(name + ": " + e.what());
    }
  }
  check(base);
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  return parse_config(read_file(path), std::move(base));
}

/// Every field with its value; parse_config(dump_config(c)) == c.
inline std::string dump_config(const RunConfig& cfg, bool with_docs = true) {
  std::string out;
  for (const auto& f : config_fields()) {
    if (with_docs) out += "# " + f.doc + "\n";
    out += f.name + ":" + to_string(f.type) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

/// SynthConfig sized for the three splits.
inline SynthConfig generator_config(const RunConfig& cfg) {
  SynthConfig s = cfg.synth;
  s.num_docs = cfg.split.total();
  return s;
}

}  // namespace remir
