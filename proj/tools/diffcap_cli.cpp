// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "diffcap/diffcap.h"

namespace {

constexpr int kUsage = 1;

int report(diffcap_status s) {
  if (s != DIFFCAP_OK)
    std::cerr << "error (" << diffcap_status_name(s) << "): " << diffcap_last_error() << '\n';
  return diffcap_exit_code(s);
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion caption model: toy data, training, generation and evaluation"};
  app.set_version_flag("--version", std::string(diffcap_version()));
  app.require_subcommand(1);

  struct {
    int scenes = 16, dim = 16;
    std::uint64_t seed = 0;
    std::string out;
  } toy;
  auto* cmd_toy = app.add_subcommand("make-toy-data", "Write a synthetic caption corpus");
  cmd_toy->add_option("--scenes", toy.scenes, "Number of scenes (records)")->capture_default_str();
  cmd_toy->add_option("--dim", toy.dim, "Feature width")->capture_default_str();
  cmd_toy->add_option("--seed", toy.seed, "Random seed")->capture_default_str();
  cmd_toy->add_option("--out", toy.out, "Output directory")->required();

  struct {
    std::string config, out;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    bool resume = false;
  } train;
  auto* cmd_train = app.add_subcommand("train", "Train a model from a JSON config");
  cmd_train->add_option("--config", train.config, "Config file")->required();
  cmd_train->add_option("--out", train.out, "Output directory")->required();
  cmd_train->add_option("--set", train.sets, "Override, section.key=value (repeatable)");
  cmd_train->add_option("--seed", train.seed, "Override train.seed");
  cmd_train->add_flag("--resume", train.resume, "Continue from <out>/checkpoints/last");

  struct {
    std::string checkpoint, features, keys, only, out;
    int stages = 5;
    std::uint64_t seed = 0;
    bool stochastic = false;
    std::optional<double> w;
  } gen;
  auto* cmd_gen = app.add_subcommand("generate", "Caption every record of a JSONL key file");
  cmd_gen->add_option("--checkpoint", gen.checkpoint, "Checkpoint directory")->required();
  cmd_gen->add_option("--features", gen.features, "CDLF feature file")->required();
  cmd_gen->add_option("--keys", gen.keys, "JSONL records (key, feature_row)")->required();
  cmd_gen->add_option("--only", gen.only, "Comma-separated subset of keys");
  cmd_gen->add_option("--stages", gen.stages, "Refinement stages")->capture_default_str();
  cmd_gen->add_option("--seed", gen.seed, "Seed for x_T (record i uses seed + i)")
      ->capture_default_str();
  cmd_gen->add_flag("--stochastic", gen.stochastic, "Fresh noise between stages");
  cmd_gen->add_option("--w", gen.w, "Guidance weight");
  cmd_gen->add_option("--out", gen.out, "Output directory")->required();

  struct {
    std::string checkpoint, dataset, features, out;
    int stages = 0;
    std::uint64_t seed = 0;
  } eval;
  auto* cmd_eval = app.add_subcommand("evaluate", "Corpus BLEU-4 of generated captions");
  cmd_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
  cmd_eval->add_option("--dataset", eval.dataset, "JSONL records with reference captions")
      ->required();
  cmd_eval->add_option("--features", eval.features, "CDLF feature file")->required();
  cmd_eval->add_option("--stages", eval.stages, "Refinement stages (0: checkpoint default)");
  cmd_eval->add_option("--seed", eval.seed, "Seed for x_T")->capture_default_str();
  cmd_eval->add_option("--out", eval.out, "Output directory")->required();

  struct {
    std::string config, out;
  } sched;
  auto* cmd_sched = app.add_subcommand("inspect-schedule", "Print beta / alpha / alpha_bar");
  cmd_sched->add_option("--config", sched.config, "Config file")->required();
  cmd_sched->add_option("--out", sched.out, "Also write schedule.tsv and a manifest here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  if (*cmd_toy) return report(diffcap_make_toy_data(toy.scenes, toy.dim, toy.seed, toy.out.c_str()));

  if (*cmd_train) {
    const auto sets = c_strings(train.sets);
    diffcap_train_result r{};
    const std::uint64_t seed = train.seed.value_or(0);
    const diffcap_status s =
        diffcap_train(train.config.c_str(), train.out.c_str(), sets.data(), sets.size(),
                      train.seed ? &seed : nullptr, train.resume ? 1 : 0, &r);
    if (s == DIFFCAP_OK)
      std::cout << "epochs " << r.epochs_run << ", steps " << r.steps << ", best epoch "
                << r.best_epoch << (r.stopped_early ? ", stopped early" : "") << '\n';
    return report(s);
  }

  if (*cmd_gen) {
    diffcap_gen_options o;
    diffcap_gen_options_init(&o);
    o.stages = gen.stages;
    o.deterministic = gen.stochastic ? 0 : 1;
    if (gen.w) o.w = *gen.w;
    o.seed = gen.seed;
    const auto only_s = split_commas(gen.only);
    const auto only = c_strings(only_s);
    size_t n = 0;
    const diffcap_status s =
        diffcap_generate(gen.checkpoint.c_str(), gen.features.c_str(), gen.keys.c_str(),
                         only.data(), only.size(), &o, gen.out.c_str(), &n);
    if (s == DIFFCAP_OK) std::cout << n << " captions written\n";
    return report(s);
  }

  if (*cmd_eval) {
    diffcap_eval_result r{};
    const diffcap_status s =
        diffcap_evaluate(eval.checkpoint.c_str(), eval.dataset.c_str(), eval.features.c_str(),
                         eval.stages, eval.seed, eval.out.c_str(), &r);
    if (s == DIFFCAP_OK)
      std::cout << "bleu4 " << r.bleu4 << " (n " << r.n << ", brevity penalty "
                << r.brevity_penalty << ")\n";
    return report(s);
  }

  diffcap_schedule* schedule = nullptr;
  diffcap_status s = diffcap_schedule_from_config(sched.config.c_str(), &schedule);
  if (s != DIFFCAP_OK) return report(s);
  size_t needed = 0;
  diffcap_schedule_table(schedule, nullptr, 0, &needed);
  std::string table(needed, '\0');
  s = diffcap_schedule_table(schedule, table.data(), table.size(), &needed);
  diffcap_schedule_free(schedule);
  if (s != DIFFCAP_OK) return report(s);
  table.resize(needed - 1);
  std::cout << table;
  if (!sched.out.empty()) s = diffcap_inspect_schedule(sched.config.c_str(), sched.out.c_str());
  return report(s);
}
