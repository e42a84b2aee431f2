#pragma once

// Command implementations behind tools/remir: gen, train, eval, ablate and
// print-config. Each command writes a manifest.json recording its config,
// seed and input digests.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "remir/config.hpp"
#include "remir/corpus.hpp"
#include "remir/metrics.hpp"
#include "remir/rng.hpp"
#include "remir/synth.hpp"
#include "remir/trainer.hpp"

namespace remir {

namespace fs = std::filesystem;

inline std::string file_digest(const std::string& path) { return hex64(fnv1a(read_file(path))); }

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path.string(), j.dump(2) + "\n"); }

// ---------------------------------------------------------------- gen

struct SplitCounts {
  std::size_t documents = 0, triples = 0, composed = 0, infer_subset = 0, accidental_chains = 0;
};

inline SplitCounts split_counts(const Corpus& c) {
  SplitCounts s;
  s.documents = c.documents.size();
  for (const Document& d : c.documents) {
    s.triples += d.triples.size();
    const auto subset = infer_subset(d.triples);
    s.infer_subset += subset.size();
    for (const Triple& t : d.triples) s.composed += t.provenance == Provenance::composed;
    for (const Triple& t : subset) s.accidental_chains += t.provenance != Provenance::composed;
  }
  return s;
}

struct GeneratedSplits {
  Corpus train, dev, test;
};

inline GeneratedSplits generate_splits(const RunConfig& cfg) {
  const Corpus all = generate_synthetic(generator_config(cfg));
  const std::size_t a = cfg.split.train, b = a + cfg.split.dev;
  return {slice(all, 0, a), slice(all, a, b), slice(all, b, cfg.split.total())};
}

/// Writes train.json, dev.json, test.json and manifest.json into `out_dir`.
inline nlohmann::json cmd_gen(const RunConfig& cfg, const fs::path& out_dir) {
  check(cfg);
  const GeneratedSplits s = generate_splits(cfg);
  fs::create_directories(out_dir);
  nlohmann::json manifest{{"command", "gen"},
                          {"config", dump_config(cfg, false)},
                          {"seed", cfg.synth.seed},
                          {"relations", s.train.relations},
                          {"composition_rules", rules_to_string(cfg.synth.composition_rules)}};
  const std::pair<const char*, const Corpus*> splits[] = {{"train", &s.train}, {"dev", &s.dev}, {"test", &s.test}};
  for (const auto& [name, corpus] : splits) {
    const fs::path path = out_dir / (std::string(name) + ".json");
    write_file(path.string(), serialize_docred(*corpus));
    const SplitCounts c = split_counts(*corpus);
    manifest["splits"][name] = {{"file", path.filename().string()},
                                {"digest", file_digest(path.string())},
                                {"documents", c.documents},
                                {"triples", c.triples},
                                {"composed", c.composed},
                                {"infer_subset", c.infer_subset},
                                {"accidental_chains", c.accidental_chains}};
  }
  write_json(out_dir / "manifest.json", manifest);
  return manifest;
}

// ---------------------------------------------------------------- train

struct TrainPaths {
  fs::path train, dev;
};

inline TrainPaths data_paths(const fs::path& data_dir) { return {data_dir / "train.json", data_dir / "dev.json"}; }

/// Tiny sizes for a quick end-to-end check.
inline void apply_smoke(TrainConfig& tc) {
  tc.epochs = 2;
  tc.hidden = 16;
  tc.pair_width = 16;
  tc.matrix_width = 16;
  tc.encoder_layers = 1;
  tc.encoder_heads = 2;
  tc.inference_depth = 1;
}

inline void write_history(const fs::path& path, const std::vector<HistoryRecord>& history) {
  std::string text;
  for (const auto& h : history) text += to_json(h).dump() + "\n";
  write_file(path.string(), text);
}

/// Trains and writes history.jsonl, last.ckpt.json, best.ckpt.json and
/// manifest.json. Throws DivergenceError on a non-finite loss.
inline TrainOutcome cmd_train(const TrainConfig& tc, const Corpus& train, const Corpus& dev, const fs::path& out_dir,
                              const nlohmann::json& inputs = {}, const Checkpoint* resume = nullptr,
                              std::ostream* log = nullptr) {
  check(tc);
  fs::create_directories(out_dir);
  const fs::path history_path = out_dir / "history.jsonl";
  write_json(out_dir / "manifest.json", {{"command", "train"},
                                         {"config", to_json(tc)},
                                         {"inputs", inputs},
                                         {"resumed_from_epoch", resume ? resume->epoch : 0}});
  std::vector<HistoryRecord> history = resume ? resume->history : std::vector<HistoryRecord>{};
  write_history(history_path, history);
  auto on_epoch = [&](const HistoryRecord& rec, const Checkpoint& last, bool improved) {
    history.push_back(rec);
    write_history(history_path, history);
    save_checkpoint(last, (out_dir / "last.ckpt.json").string());
    if (improved) save_checkpoint(last, (out_dir / "best.ckpt.json").string());
    if (log) {
      char line[200];
      std::snprintf(line, sizeof line, "epoch %zu  loss %.4f  L_R %.4f  L_C %.4f  dev F1 %.4f  Infer-F1 %.4f%s\n",
                    rec.epoch, rec.train_loss, rec.reconstruction, rec.classification, rec.dev_f1, rec.dev_infer_f1,
                    improved ? "  *" : "");
      *log << line << std::flush;
    }
  };
  TrainOutcome out = remir::train(train, dev, tc, resume, on_epoch);
  save_checkpoint(out.last, (out_dir / "last.ckpt.json").string());
  if (!out.best && !fs::exists(out_dir / "best.ckpt.json"))
    save_checkpoint(out.last, (out_dir / "best.ckpt.json").string());
  return out;
}

// ---------------------------------------------------------------- eval

struct SweepRow {
  double rate = 0.0;
  MetricsReport report;
};

/// Rates start, start + step, ... up to stop inclusive ("0:0.8:0.1").
inline std::vector<double> parse_sweep(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream in(spec);
  std::string p;
  while (std::getline(in, p, ':')) parts.push_back(p);
  if (parts.size() != 3) throw ConfigError("sweep must be start:stop:step, got '" + spec + "'");
  const double start = detail::parse_real(parts[0]), stop = detail::parse_real(parts[1]),
               step = detail::parse_real(parts[2]);
  if (!(step > 0.0) || stop < start) throw ConfigError("sweep needs step > 0 and stop >= start");
  std::vector<double> rates;
  const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
  for (std::size_t i = 0; i <= count; ++i) rates.push_back(start + static_cast<double>(i) * step);
  return rates;
}

inline std::vector<SweepRow> mask_sweep(const Checkpoint& ckpt, const Corpus& corpus, const std::vector<double>& rates,
                                        const FactSet& train_facts = {}) {
  std::vector<SweepRow> rows;
  for (double r : rates) rows.push_back({r, evaluate(ckpt, corpus, r, train_facts).report});
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "rate,f1,ign_f1\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%.2f,%.17g,%.17g\n", r.rate, r.report.f1(), r.report.ign_f1());
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------- ablate

struct AblationRun {
  AblationMode mode = AblationMode::full;
  std::size_t depth = 0;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  MetricsReport dev, test;
};

struct AblationPlan {
  std::vector<AblationMode> modes{AblationMode::full};
  std::vector<std::size_t> depths;  // empty: the base config's depth
  std::size_t seeds = 3;
  std::uint64_t base_seed = 1;
};

/// Every (mode, depth) pair trains with seeds base_seed + i on the same data,
/// so rows are paired across modes.
inline std::vector<AblationRun> run_ablation(const TrainConfig& base, const Corpus& train, const Corpus& dev,
                                             const Corpus& test, const AblationPlan& plan,
                                             const std::function<void(const AblationRun&)>& on_run = {}) {
  const std::vector<std::size_t> depths = plan.depths.empty() ? std::vector<std::size_t>{base.inference_depth} : plan.depths;
  const FactSet train_facts = collect_facts(train);
  std::vector<AblationRun> runs;
  for (std::size_t depth : depths)
    for (AblationMode mode : plan.modes)
      for (std::size_t i = 0; i < plan.seeds; ++i) {
        TrainConfig tc = base;
        tc.ablation = mode;
        tc.inference_depth = depth;
        tc.seed = plan.base_seed + i;
        const TrainOutcome out = remir::train(train, dev, tc);
        const Checkpoint& ckpt = out.best ? *out.best : out.last;
        AblationRun run{mode, tc.effective_depth(), tc.seed, ckpt.epoch,
                        evaluate(ckpt, dev, 0.0, train_facts).report, {}};
        if (!test.documents.empty()) run.test = evaluate(ckpt, test, 0.0, train_facts).report;
        runs.push_back(run);
        if (on_run) on_run(run);
      }
  return runs;
}

struct MeanSd {
  double mean = 0.0, sd = 0.0;
  std::size_t n = 0;
};

/// Mean and sample standard deviation (0 for a single value).
inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) m.sd += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(m.sd / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct AblationSummaryRow {
  AblationMode mode;
  std::size_t depth;
  MeanSd f1, ign_f1, infer_f1, intra_f1, inter_f1, test_f1, test_infer_f1;
};

inline std::vector<AblationSummaryRow> summarize(const std::vector<AblationRun>& runs) {
  std::vector<AblationSummaryRow> rows;
  std::vector<std::pair<AblationMode, std::size_t>> keys;
  for (const auto& r : runs)
    if (std::find(keys.begin(), keys.end(), std::make_pair(r.mode, r.depth)) == keys.end())
      keys.emplace_back(r.mode, r.depth);
  for (const auto& [mode, depth] : keys) {
    std::vector<double> f1, ign, infer, intra, inter, tf1, tinfer;
    for (const auto& r : runs) {
      if (r.mode != mode || r.depth != depth) continue;
      f1.push_back(r.dev.f1());
      ign.push_back(r.dev.ign_f1());
      infer.push_back(r.dev.infer_f1());
      intra.push_back(r.dev.intra_f1());
      inter.push_back(r.dev.inter_f1());
      tf1.push_back(r.test.f1());
      tinfer.push_back(r.test.infer_f1());
    }
    rows.push_back({mode, depth, mean_sd(f1), mean_sd(ign), mean_sd(infer), mean_sd(intra), mean_sd(inter),
                    mean_sd(tf1), mean_sd(tinfer)});
  }
  return rows;
}

inline std::string runs_csv(const std::vector<AblationRun>& runs) {
  std::string out =
      "mode,depth,seed,best_epoch,dev_f1,dev_ign_f1,dev_infer_f1,dev_intra_f1,dev_inter_f1,test_f1,test_infer_f1\n";
  char line[320];
  for (const auto& r : runs) {
    std::snprintf(line, sizeof line, "%s,%zu,%llu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", to_string(r.mode).c_str(),
                  r.depth, static_cast<unsigned long long>(r.seed), r.best_epoch, r.dev.f1(), r.dev.ign_f1(),
                  r.dev.infer_f1(), r.dev.intra_f1(), r.dev.inter_f1(), r.test.f1(), r.test.infer_f1());
    out += line;
  }
  return out;
}

inline std::string summary_csv(const std::vector<AblationSummaryRow>& rows) {
  std::string out = "mode,depth,runs";
  for (const char* m : {"f1", "ign_f1", "infer_f1", "intra_f1", "inter_f1", "test_f1", "test_infer_f1"})
    out += std::string(",") + m + "_mean," + m + "_sd";
  out += "\n";
  char cell[64];
  for (const auto& r : rows) {
    out += to_string(r.mode) + "," + std::to_string(r.depth) + "," + std::to_string(r.f1.n);
    for (const MeanSd* m : {&r.f1, &r.ign_f1, &r.infer_f1, &r.intra_f1, &r.inter_f1, &r.test_f1, &r.test_infer_f1}) {
      std::snprintf(cell, sizeof cell, ",%.6f,%.6f", m->mean, m->sd);
      out += cell;
    }
    out += "\n";
  }
  return out;
}

/// Dev scores in percent, mean ± sd over seeds.
inline std::string summary_text(const std::vector<AblationSummaryRow>& rows) {
  std::string out = "mode                     depth runs  F1             IgnF1          Infer-F1       Intra-F1       "
                    "Inter-F1\n";
  char line[256];
  auto fmt = [](const MeanSd& m) {
    char b[32];
    std::snprintf(b, sizeof b, "%6.2f ± %-5.2f", 100.0 * m.mean, 100.0 * m.sd);
    return std::string(b);
  };
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-24s %5zu %4zu  %s %s %s %s %s\n", to_string(r.mode).c_str(), r.depth, r.f1.n,
                  fmt(r.f1).c_str(), fmt(r.ign_f1).c_str(), fmt(r.infer_f1).c_str(), fmt(r.intra_f1).c_str(),
                  fmt(r.inter_f1).c_str());
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------- entry point

inline Corpus load_corpus_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("missing corpus file '" + path.string() + "'");
  return parse_docred(path.string());
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!(item = detail::trim(item)).empty()) out.push_back(item);
  return out;
}

inline std::string usage_footer() {
  return "\nConfig files hold one `name:type = value` per line. Defaults:\n\n" + dump_config(RunConfig{}) +
         "\nREMIR_THREADS sets the number of worker threads (default 1).\n";
}

/// Parses argv and runs one command. Returns the process exit code:
/// 0 success, 1 usage or input error, 2 training divergence.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Document-level relation extraction with masked-matrix reconstruction"};
  app.require_subcommand(1);
  app.footer(usage_footer());

  std::string config_path, data_dir, out_dir, ablation, sweep, resume_path, checkpoint_path, split = "dev",
                                                                       modes = "full,no_imsa_plain_msa,no_mir",
                                                                       depths;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  double mask_rate = 0.0;
  std::size_t depth = 0, seeds = 3;
  int precision = 64;
  bool smoke = false;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "config file")->check(CLI::ExistingFile);
    c->add_option("--set", sets, "override one field, name=value (repeatable)");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate the synthetic train/dev/test corpus");
  add_common(gen);
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "generator seed");

  CLI::App* tr = app.add_subcommand("train", "train a model");
  add_common(tr);
  tr->add_option("--data-dir", data_dir, "directory with train.json and dev.json");
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--mask-rate", mask_rate, "training mask rate");
  tr->add_option("--depth", depth, "inference depth");
  tr->add_option("--ablation", ablation, "ablation mode");
  tr->add_option("--precision", precision, "32 or 64");
  tr->add_option("--resume", resume_path, "checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_flag("--smoke", smoke, "tiny model, 2 epochs; generates a 10/5/5 corpus when --data-dir is absent");

  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data-dir", data_dir, "corpus directory")->required();
  ev->add_option("--split", split, "split to score: train, dev or test");
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--mask-rate", mask_rate, "evaluation mask rate");
  ev->add_option("--sweep", sweep, "mask-rate sweep start:stop:step, e.g. 0:0.8:0.1");

  CLI::App* ab = app.add_subcommand("ablate", "train modes x seeds and tabulate");
  add_common(ab);
  ab->add_option("--data-dir", data_dir, "directory with train/dev/test.json")->required();
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--modes", modes, "comma-separated ablation modes");
  ab->add_option("--seeds", seeds, "seeds per mode; seed_i = base + i");
  ab->add_option("--seed", seed, "base seed");
  ab->add_option("--depths", depths, "comma-separated inference depths (depth sweep)");
  ab->add_option("--precision", precision, "32 or 64");

  CLI::App* pc = app.add_subcommand("print-config", "print every config field and its value");
  add_common(pc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects name=value, got '" + s + "'");
      set_field(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }

    if (*pc) {
      check(cfg);
      out << dump_config(cfg);
      return 0;
    }

    if (*gen) {
      if (gen->count("--seed")) cfg.synth.seed = seed;
      const auto manifest = cmd_gen(cfg, out_dir);
      for (const char* s : {"train", "dev", "test"}) {
        const auto& m = manifest["splits"][s];
        out << s << ": " << m["documents"] << " documents, " << m["triples"] << " triples, " << m["composed"]
            << " composed, " << m["accidental_chains"] << " accidental chains\n";
      }
      return 0;
    }

    if (*tr) {
      TrainConfig& tc = cfg.train;
      if (smoke) apply_smoke(tc);
      if (tr->count("--seed")) tc.seed = seed;
      if (tr->count("--mask-rate")) tc.mask_rate = mask_rate;
      if (tr->count("--depth")) tc.inference_depth = depth;
      if (tr->count("--ablation")) tc.ablation = ablation_from_string(ablation);
      if (tr->count("--precision")) tc.precision = precision;
      check(tc);
      Corpus train_c, dev_c;
      nlohmann::json inputs;
      if (data_dir.empty()) {
        if (!smoke) throw ConfigError("train needs --data-dir (or --smoke)");
        RunConfig small = cfg;
        small.split = {10, 5, 5};
        auto s = generate_splits(small);
        train_c = std::move(s.train);
        dev_c = std::move(s.dev);
        inputs = {{"generated", dump_config(small, false)}};
      } else {
        const TrainPaths paths = data_paths(data_dir);
        train_c = load_corpus_file(paths.train);
        dev_c = load_corpus_file(paths.dev);
        inputs = {{"train", {{"path", paths.train.string()}, {"digest", file_digest(paths.train.string())}}},
                  {"dev", {{"path", paths.dev.string()}, {"digest", file_digest(paths.dev.string())}}}};
      }
      std::optional<Checkpoint> resume;
      if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        const TrainConfig saved = resume->config;
        if (saved.precision != tc.precision || saved.ablation != tc.ablation || saved.seed != tc.seed)
          throw ConfigError("resume config differs from the checkpoint's (seed, ablation or precision)");
        tc = saved;
        inputs["resume"] = {{"path", resume_path}, {"digest", file_digest(resume_path)}};
      }
      const TrainOutcome res = cmd_train(tc, train_c, dev_c, out_dir, inputs, resume ? &*resume : nullptr, &out);
      out << "best dev F1 " << res.last.best_dev_f1 << " at epoch " << res.last.best_epoch << "\n";
      if (res.skipped > 0) out << "skipped " << res.skipped << " document steps with fewer than 2 entities\n";
      return 0;
    }

    if (*ev) {
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      if (split != "train" && split != "dev" && split != "test") throw ConfigError("--split must be train, dev or test");
      const fs::path corpus_path = fs::path(data_dir) / (split + ".json");
      const Corpus corpus = load_corpus_file(corpus_path);
      FactSet train_facts;
      if (fs::exists(fs::path(data_dir) / "train.json"))
        train_facts = collect_facts(load_corpus_file(fs::path(data_dir) / "train.json"));
      fs::create_directories(out_dir);
      nlohmann::json manifest{{"command", "eval"},
                              {"checkpoint", {{"path", checkpoint_path}, {"digest", file_digest(checkpoint_path)}}},
                              {"corpus", {{"path", corpus_path.string()}, {"digest", file_digest(corpus_path.string())}}}};
      if (!sweep.empty()) {
        const auto rows = mask_sweep(ckpt, corpus, parse_sweep(sweep), train_facts);
        write_file((fs::path(out_dir) / "sweep.csv").string(), sweep_csv(rows));
        manifest["sweep"] = sweep;
        out << sweep_csv(rows);
      } else {
        const Evaluation e = evaluate(ckpt, corpus, mask_rate, train_facts);
        write_json(fs::path(out_dir) / "report.json", to_json(e.report));
        write_json(fs::path(out_dir) / "predictions.json", predictions_to_json(e.predictions, e.corpus));
        write_file((fs::path(out_dir) / "report.txt").string(), to_text(e.report));
        manifest["mask_rate"] = mask_rate;
        out << to_text(e.report);
      }
      write_json(fs::path(out_dir) / "manifest.json", manifest);
      return 0;
    }

    if (*ab) {
      TrainConfig& tc = cfg.train;
      if (ab->count("--precision")) tc.precision = precision;
      AblationPlan plan;
      plan.modes.clear();
      for (const auto& m : split_list(modes)) plan.modes.push_back(ablation_from_string(m));
      for (const auto& d : split_list(depths)) plan.depths.push_back(detail::parse_unsigned(d));
      plan.seeds = seeds;
      plan.base_seed = ab->count("--seed") ? seed : tc.seed;
      check(tc);
      const TrainPaths paths = data_paths(data_dir);
      const fs::path test_path = fs::path(data_dir) / "test.json";
      const Corpus train_c = load_corpus_file(paths.train), dev_c = load_corpus_file(paths.dev);
      const Corpus test_c = fs::exists(test_path) ? load_corpus_file(test_path) : Corpus{};
      fs::create_directories(out_dir);
      std::vector<std::uint64_t> seed_list;
      for (std::size_t i = 0; i < plan.seeds; ++i) seed_list.push_back(plan.base_seed + i);
      write_json(fs::path(out_dir) / "manifest.json",
                 {{"command", "ablate"},
                  {"config", dump_config(cfg, false)},
                  {"modes", split_list(modes)},
                  {"depths", plan.depths},
                  {"seeds", seed_list},
                  {"inputs",
                   {{"train", file_digest(paths.train.string())}, {"dev", file_digest(paths.dev.string())}}}});
      const auto runs = run_ablation(tc, train_c, dev_c, test_c, plan, [&](const AblationRun& r) {
        char line[160];
        std::snprintf(line, sizeof line, "%-24s depth %zu seed %llu  dev F1 %.4f  Infer-F1 %.4f\n",
                      to_string(r.mode).c_str(), r.depth, static_cast<unsigned long long>(r.seed), r.dev.f1(),
                      r.dev.infer_f1());
        out << line << std::flush;
      });
      const auto rows = summarize(runs);
      write_file((fs::path(out_dir) / "runs.csv").string(), runs_csv(runs));
      write_file((fs::path(out_dir) / "summary.csv").string(), summary_csv(rows));
      write_file((fs::path(out_dir) / "summary.txt").string(), summary_text(rows));
      out << summary_text(rows);
      return 0;
    }
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace remir
