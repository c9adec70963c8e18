// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/commands.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "diffcap/error.hpp"
#include "diffcap/manifest.hpp"
#include "diffcap/model.hpp"
#include "diffcap/training.hpp"

namespace diffcap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadError::Kind::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::kParse, path.string() + ": " + e.what());
  }
}

fs::path resolve_against(const fs::path& base_dir, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(LoadError::Kind::kIo, "cannot write " + path.string());
  return out;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

void run_make_toy_data(const ToyDataCommand& cmd) {
  if (cmd.scenes < 2) throw ArgumentError("--scenes must be >= 2");
  if (cmd.dim < 1) throw ArgumentError("--dim must be >= 1");
  if (cmd.out.empty()) throw ArgumentError("--out is required");
  RunManifest m;
  m.command = "make-toy-data";
  m.seed = cmd.seed;
  m.started_at = utc_timestamp();
  m.config = {{"scenes", cmd.scenes}, {"dim", cmd.dim}, {"seed", cmd.seed}};
  m.outputs = {{"captions", (cmd.out / "captions.jsonl").string()},
               {"features", (cmd.out / "features.cdlf").string()},
               {"heldout", (cmd.out / "heldout.txt").string()},
               {"vocab", (cmd.out / "vocab.txt").string()}};
  m.write(cmd.out, true);
  ToyCorpusOptions opts;
  opts.num_scenes = cmd.scenes;
  opts.dim = cmd.dim;
  opts.seed = cmd.seed;
  make_toy_corpus(opts, cmd.out);
}

Config resolve_config(const fs::path& path, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed) {
  json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  for (const auto& o : overrides) apply_override(j, o);
  Config cfg = config_from_json(j);
  apply_env_seed(cfg);
  if (seed) cfg.train.seed = *seed;
  const fs::path base = path.parent_path();
  cfg.data.jsonl = resolve_against(base, cfg.data.jsonl).string();
  cfg.data.features = resolve_against(base, cfg.data.features).string();
  cfg.data.heldout = resolve_against(base, cfg.data.heldout).string();
  cfg.data.vocab = resolve_against(base, cfg.data.vocab).string();
  cfg.validate();
  return cfg;
}

TrainSummary run_train(const TrainCommand& cmd) {
  if (cmd.out.empty()) throw ArgumentError("--out is required");
  const Config cfg = resolve_config(cmd.config, cmd.overrides, cmd.seed);
  if (cfg.data.jsonl.empty() || cfg.data.features.empty())
    throw ConfigError("data", "data.jsonl and data.features are required");

  const Dataset ds = load_dataset(cfg.data.jsonl, cfg.data.features);
  const Split sp = cfg.data.heldout.empty()
                       ? split(ds.records, cfg.data.val_fraction, cfg.train.seed)
                       : split_by_keys(ds.records, read_key_list(cfg.data.heldout));

  const fs::path ckpt = cmd.out / layout::kCheckpoints;
  const fs::path last = ckpt / "last";
  if (cmd.resume && !fs::exists(last / "optimizer.json"))
    throw LoadError(LoadError::Kind::kIo, "nothing to resume under " + last.string());

  if (!cmd.resume || !fs::exists(cmd.out / layout::kManifest)) {
    RunManifest m;
    m.command = "train";
    m.config = config_to_json(cfg);
    m.seed = cfg.train.seed;
    m.started_at = utc_timestamp();
    m.hash_input(cfg.data.jsonl);
    m.hash_input(cfg.data.features);
    if (!cfg.data.heldout.empty()) m.hash_input(cfg.data.heldout);
    if (!cfg.data.vocab.empty()) m.hash_input(cfg.data.vocab);
    m.outputs = {{"metrics", (cmd.out / layout::kMetrics).string()},
                 {"checkpoint", (ckpt / "final").string()},
                 {"last", last.string()}};
    m.write(cmd.out, true);
  }

  Vocab vocab;
  if (!cfg.data.vocab.empty()) {
    vocab = Vocab::load(cfg.data.vocab);
  } else {
    std::vector<std::string> texts;
    for (const auto& r : sp.train) texts.insert(texts.end(), r.captions.begin(), r.captions.end());
    vocab = Vocab::from_texts(texts);
  }
  CaptionModel model = make_caption_model(cfg, std::move(vocab), static_cast<int>(ds.features.dim));

  FitOptions opts;
  opts.out_dir = cmd.out;
  if (cmd.resume) opts.resume_from = last;
  const FitResult r = fit(model, sp.train, sp.val, ds.features, opts);

  TrainSummary s;
  s.epochs_run = static_cast<int>(r.epochs.size());
  s.steps = static_cast<int>(r.steps.size());
  s.stopped_early = r.stopped_early;
  s.best_epoch = r.best_epoch;
  s.checkpoint = ckpt / "final";
  return s;
}

size_t run_generate(const GenerateCommand& cmd) {
  if (cmd.out.empty()) throw ArgumentError("--out is required");
  const CaptionModel model = load_checkpoint(cmd.checkpoint);
  const FeatureFile features = read_features(cmd.features);
  if (static_cast<int>(features.dim) != model.denoiser.config().d_clip)
    throw ArgumentError("feature width " + std::to_string(features.dim) +
                        " does not match the checkpoint's " +
                        std::to_string(model.denoiser.config().d_clip));
  std::vector<CaptionRecord> records = read_records(cmd.keys);
  for (const auto& r : records)
    if (r.feature_row < 0 || static_cast<std::uint32_t>(r.feature_row) >= features.count)
      throw LoadError(LoadError::Kind::kIndex, "record '" + r.key + "' has no feature row");
  if (!cmd.only.empty()) {
    std::map<std::string, const CaptionRecord*> by_key;
    for (const auto& r : records) by_key[r.key] = &r;
    std::vector<CaptionRecord> picked;
    for (const auto& k : cmd.only) {
      auto it = by_key.find(k);
      if (it == by_key.end()) throw ArgumentError("unknown key '" + k + "'");
      picked.push_back(*it->second);
    }
    records = std::move(picked);
  }

  GenConfig g = model.cfg.gen_config();
  if (cmd.stages) g.stages = *cmd.stages;
  if (cmd.deterministic) g.deterministic = *cmd.deterministic;
  if (cmd.w) g.w = *cmd.w;
  g.validate();

  RunManifest m;
  m.command = "generate";
  m.config = config_to_json(model.cfg);
  m.config["infer"]["stages"] = g.stages;
  m.config["infer"]["deterministic"] = g.deterministic;
  m.config["guidance"]["w"] = g.w;
  m.seed = cmd.seed;
  m.started_at = utc_timestamp();
  m.hash_input(cmd.features);
  m.hash_input(cmd.keys);
  m.hash_input(cmd.checkpoint / "model.bin");
  m.outputs = {{"captions", (cmd.out / layout::kCaptions).string()}};
  m.write(cmd.out, true);

  std::ofstream out = open_out(cmd.out / layout::kCaptions);
  for (size_t i = 0; i < records.size(); ++i) {
    const GenResult res = generate(model, condition_for(records[i], features), g, cmd.seed + i);
    out << json{{"key", records[i].key}, {"caption", res.caption}}.dump() << '\n';
  }
  return records.size();
}

EvalReport run_evaluate(const EvaluateCommand& cmd) {
  if (cmd.out.empty()) throw ArgumentError("--out is required");
  const CaptionModel model = load_checkpoint(cmd.checkpoint);
  const Dataset ds = load_dataset(cmd.dataset, cmd.features);
  if (ds.records.empty()) throw ArgumentError("evaluate: empty dataset");
  GenConfig g = model.cfg.gen_config();
  if (cmd.stages) g.stages = *cmd.stages;

  RunManifest m;
  m.command = "evaluate";
  m.config = config_to_json(model.cfg);
  m.config["infer"]["stages"] = g.stages;
  m.seed = cmd.seed;
  m.started_at = utc_timestamp();
  m.hash_input(cmd.dataset);
  m.hash_input(cmd.features);
  m.hash_input(cmd.checkpoint / "model.bin");
  m.outputs = {{"report", (cmd.out / layout::kReport).string()},
               {"sentences", (cmd.out / layout::kSentences).string()}};
  m.write(cmd.out, true);

  const EvalReport rep = evaluate(model, ds.records, ds.features, g, cmd.seed);
  {
    std::ofstream out = open_out(cmd.out / layout::kReport);
    out << json{{"bleu4", rep.bleu.score}, {"n", rep.n}, {"brevity_penalty", rep.bleu.brevity_penalty}}
               .dump(2)
        << '\n';
  }
  std::ofstream csv = open_out(cmd.out / layout::kSentences);
  csv << "key,bleu4,candidate\n";
  char buf[64];
  for (const auto& s : rep.sentences) {
    std::snprintf(buf, sizeof buf, "%.9g", s.bleu4);
    csv << csv_quote(s.key) << ',' << buf << ',' << csv_quote(s.candidate) << '\n';
  }
  return rep;
}

std::string schedule_table(const Config& cfg) {
  const NoiseSchedule s = build_schedule(cfg.schedule);
  std::string out = "t\tbeta\talpha\talpha_bar\n";
  char buf[128];
  for (int t = 1; t <= s.T(); ++t) {
    std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%.17g\n", t, s.beta(t), s.alpha(t),
                  s.alpha_bar(t));
    out += buf;
  }
  return out;
}

}  // namespace diffcap
