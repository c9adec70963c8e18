// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "diffcap/error.hpp"

namespace diffcap {

LrKind parse_lr_kind(std::string_view name) {
  if (name == "constant") return LrKind::kConstant;
  if (name == "linear") return LrKind::kLinear;
  if (name == "log") return LrKind::kLog;
  if (name == "cosine") return LrKind::kCosine;
  throw ConfigError("train.lr_kind", "unknown kind '" + std::string(name) + "'");
}

LambdaKind parse_lambda_kind(std::string_view name) {
  if (name == "constant") return LambdaKind::kConstant;
  if (name == "dynamic") return LambdaKind::kDynamic;
  throw ConfigError("train.lambda_kind", "unknown kind '" + std::string(name) + "'");
}

Renoise parse_renoise(std::string_view name) {
  if (name == "ddim") return Renoise::kDdim;
  if (name == "zero") return Renoise::kZero;
  throw ConfigError("infer.renoise", "expected ddim or zero, got '" + std::string(name) + "'");
}

std::string_view to_string(LrKind k) {
  switch (k) {
    case LrKind::kConstant: return "constant";
    case LrKind::kLinear: return "linear";
    case LrKind::kLog: return "log";
    case LrKind::kCosine: return "cosine";
  }
  return "constant";
}

std::string_view to_string(LambdaKind k) {
  return k == LambdaKind::kConstant ? "constant" : "dynamic";
}

std::string_view to_string(Renoise r) { return r == Renoise::kDdim ? "ddim" : "zero"; }

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (epochs_max < 0) throw ConfigError("train.epochs_max", "must be >= 0");
  if (!(lr_end > 0.0)) throw ConfigError("train.lr_end", "must be > 0");
  if (!(lr_start >= lr_end)) throw ConfigError("train.lr_start", "must be >= train.lr_end");
  if (!(lambda_value >= 0.0)) throw ConfigError("train.lambda_value", "must be >= 0");
  if (!(dynamic_C >= 0.0)) throw ConfigError("train.dynamic_C", "must be >= 0");
  if (!(guidance.p_uncond >= 0.0 && guidance.p_uncond <= 1.0))
    throw ConfigError("guidance.p_uncond", "must lie in [0, 1]");
  if (!(guidance.w >= 0.0)) throw ConfigError("guidance.w", "must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip", "must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
  if (bleu_every < 0) throw ConfigError("train.bleu_every", "must be >= 0");
}

void GenConfig::validate() const {
  if (stages < 1) throw ConfigError("infer.stages", "must be >= 1");
  if (!(w >= 0.0)) throw ConfigError("guidance.w", "must be >= 0");
}

void Config::validate() const {
  if (schedule.T < 1) throw ConfigError("schedule.T", "must be >= 1");
  if (schedule.subset_count < 1 || schedule.subset_count > schedule.T)
    throw ConfigError("schedule.subset_count", "must lie in [1, schedule.T]");
  if (diffusion.n < 1) throw ConfigError("diffusion.n", "must be >= 1");
  if (model.max_len < 2) throw ConfigError("model.max_len", "must be >= 2");
  if (model.d_word % model.heads != 0) throw ConfigError("model.heads", "must divide model.d_word");
  if (!(data.val_fraction > 0.0 && data.val_fraction < 1.0))
    throw ConfigError("data.val_fraction", "must lie in (0, 1)");
  train.validate();
  infer.validate();
  if (schedule.subset_count < infer.stages)
    throw ConfigError("infer.stages", "must not exceed schedule.subset_count");
}

GenConfig Config::gen_config() const {
  GenConfig g = infer;
  g.w = generation_w();
  return g;
}

namespace {

using nlohmann::json;

// Reads known keys from one section and rejects anything else.
class Section {
 public:
  Section(const json& root, const char* name) : name_(name) {
    if (root.contains(name)) {
      node_ = &root.at(name);
      if (!node_->is_object()) throw ConfigError(name, "must be an object");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string(name_) + "." + key, e.what());
    }
  }

  template <typename E, typename Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    std::string s;
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    get(key, s);
    out = parse(s);
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [k, _] : node_->items())
      if (!seen_.contains(k)) throw ConfigError(std::string(name_) + "." + k, "unknown key");
  }

 private:
  const char* name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

Config config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  static const std::set<std::string> kSections = {"schedule", "diffusion", "loss",  "model",
                                                  "embedding", "guidance", "train", "infer",
                                                  "data"};
  for (const auto& [k, _] : j.items())
    if (!kSections.contains(k)) throw ConfigError(k, "unknown config section");

  Config c;
  {
    Section s(j, "schedule");
    s.get_enum("kind", c.schedule.kind, parse_schedule_kind);
    s.get("T", c.schedule.T);
    s.get("beta_start", c.schedule.beta_start);
    s.get("beta_end", c.schedule.beta_end);
    s.get("subset_count", c.schedule.subset_count);
    s.finish();
  }
  {
    Section s(j, "diffusion");
    s.get_enum("mode", c.diffusion.mode, parse_prediction_mode);
    s.get("n", c.diffusion.n);
    s.get_enum("noise_coeff", c.diffusion.noise_coeff, parse_noise_coeff);
    s.finish();
  }
  {
    Section s(j, "loss");
    s.get("x1_every_step", c.diffusion.x1_every_step);
    s.finish();
  }
  {
    Section s(j, "model");
    s.get("layers", c.model.layers);
    s.get("heads", c.model.heads);
    s.get("d_word", c.model.d_word);
    s.get("ff_mult", c.model.ff_mult);
    s.get_enum("fusion", c.model.fusion, parse_fusion);
    s.get("max_len", c.model.max_len);
    s.finish();
  }
  {
    Section s(j, "embedding");
    s.get("trainable", c.embedding.trainable);
    s.finish();
  }
  {
    Section s(j, "guidance");
    s.get("enabled", c.train.guidance.enabled);
    s.get("p_uncond", c.train.guidance.p_uncond);
    s.get("w", c.train.guidance.w);
    s.finish();
  }
  {
    Section s(j, "train");
    s.get("batch_size", c.train.batch_size);
    s.get("epochs_max", c.train.epochs_max);
    s.get_enum("lr_kind", c.train.lr_kind, parse_lr_kind);
    s.get("lr_start", c.train.lr_start);
    s.get("lr_end", c.train.lr_end);
    s.get_enum("lambda_kind", c.train.lambda_kind, parse_lambda_kind);
    s.get("lambda_value", c.train.lambda_value);
    s.get("dynamic_C", c.train.dynamic_C);
    s.get("seed", c.train.seed);
    s.get("grad_clip", c.train.grad_clip);
    s.get("early_stop", c.train.early_stop);
    s.get("weight_decay", c.train.weight_decay);
    s.get("adam_beta1", c.train.adam_beta1);
    s.get("adam_beta2", c.train.adam_beta2);
    s.get("adam_eps", c.train.adam_eps);
    s.get("bleu_every", c.train.bleu_every);
    s.finish();
  }
  {
    Section s(j, "infer");
    s.get("stages", c.infer.stages);
    s.get("deterministic", c.infer.deterministic);
    s.get("dedup", c.infer.dedup);
    s.get("reembed_between_stages", c.infer.reembed_between_stages);
    s.get_enum("renoise", c.infer.renoise, parse_renoise);
    s.finish();
  }
  {
    Section s(j, "data");
    s.get("jsonl", c.data.jsonl);
    s.get("features", c.data.features);
    s.get("heldout", c.data.heldout);
    s.get("vocab", c.data.vocab);
    s.get("val_fraction", c.data.val_fraction);
    s.finish();
  }
  c.validate();
  return c;
}

json config_to_json(const Config& c) {
  json j;
  j["schedule"] = {{"kind", to_string(c.schedule.kind)},
                   {"T", c.schedule.T},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end},
                   {"subset_count", c.schedule.subset_count}};
  j["diffusion"] = {{"mode", to_string(c.diffusion.mode)},
                    {"n", c.diffusion.n},
                    {"noise_coeff", to_string(c.diffusion.noise_coeff)}};
  j["loss"] = {{"x1_every_step", c.diffusion.x1_every_step}};
  j["model"] = {{"layers", c.model.layers},   {"heads", c.model.heads},
                {"d_word", c.model.d_word},   {"ff_mult", c.model.ff_mult},
                {"fusion", to_string(c.model.fusion)}, {"max_len", c.model.max_len}};
  j["embedding"] = {{"trainable", c.embedding.trainable}};
  j["guidance"] = {{"enabled", c.train.guidance.enabled},
                   {"p_uncond", c.train.guidance.p_uncond},
                   {"w", c.train.guidance.w}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"epochs_max", c.train.epochs_max},
                {"lr_kind", to_string(c.train.lr_kind)},
                {"lr_start", c.train.lr_start},
                {"lr_end", c.train.lr_end},
                {"lambda_kind", to_string(c.train.lambda_kind)},
                {"lambda_value", c.train.lambda_value},
                {"dynamic_C", c.train.dynamic_C},
                {"seed", c.train.seed},
                {"grad_clip", c.train.grad_clip},
                {"early_stop", c.train.early_stop},
                {"weight_decay", c.train.weight_decay},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_eps", c.train.adam_eps},
                {"bleu_every", c.train.bleu_every}};
  j["infer"] = {{"stages", c.infer.stages},
                {"deterministic", c.infer.deterministic},
                {"dedup", c.infer.dedup},
                {"reembed_between_stages", c.infer.reembed_between_stages},
                {"renoise", to_string(c.infer.renoise)}};
  j["data"] = {{"jsonl", c.data.jsonl},
               {"features", c.data.features},
               {"heldout", c.data.heldout},
               {"vocab", c.data.vocab},
               {"val_fraction", c.data.val_fraction}};
  return j;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadError::Kind::kIo, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(LoadError::Kind::kParse, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq)
    throw ConfigError(std::string(assignment), "override must look like section.key=value");
  const std::string section(assignment.substr(0, dot));
  const std::string key(assignment.substr(dot + 1, eq - dot - 1));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  j[section][key] = value;
}

void apply_env_seed(Config& cfg) {
  if (const char* s = std::getenv("DIFFCAP_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') throw ConfigError("DIFFCAP_SEED", "must be a non-negative integer");
    cfg.train.seed = v;
  }
}

}  // namespace diffcap
