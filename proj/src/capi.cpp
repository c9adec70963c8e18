// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/diffcap.h"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <exception>
#include <new>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffcap/commands.hpp"
#include "diffcap/error.hpp"
#include "diffcap/infer.hpp"
#include "diffcap/manifest.hpp"
#include "diffcap/model.hpp"
#include "diffcap/schedule.hpp"

struct diffcap_schedule {
  diffcap::NoiseSchedule schedule;
};

struct diffcap_model {
  diffcap::CaptionModel model;
};

namespace {

thread_local std::string g_last_error;

diffcap_status fail(diffcap_status s, const std::string& what) {
  g_last_error = what;
  return s;
}

template <typename F>
diffcap_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return DIFFCAP_OK;
  } catch (const diffcap::DivergenceError& e) {
    return fail(DIFFCAP_ERR_DIVERGENCE, e.what());
  } catch (const diffcap::ConfigError& e) {
    return fail(DIFFCAP_ERR_CONFIG, e.what());
  } catch (const diffcap::ArgumentError& e) {
    return fail(DIFFCAP_ERR_ARGUMENT, e.what());
  } catch (const diffcap::LoadError& e) {
    return fail(e.kind() == diffcap::LoadError::Kind::kIo ? DIFFCAP_ERR_IO : DIFFCAP_ERR_FORMAT,
                e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(DIFFCAP_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DIFFCAP_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DIFFCAP_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DIFFCAP_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw diffcap::ArgumentError(what);
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
}

diffcap::GenConfig gen_config(const diffcap::CaptionModel& m, const diffcap_gen_options* o) {
  diffcap::GenConfig g = m.cfg.gen_config();
  if (o) {
    if (o->stages > 0) g.stages = o->stages;
    if (o->deterministic >= 0) g.deterministic = o->deterministic != 0;
    if (o->w >= 0.0) g.w = o->w;
  }
  g.validate();
  return g;
}

}  // namespace

extern "C" {

const char* diffcap_last_error(void) { return g_last_error.c_str(); }

const char* diffcap_status_name(diffcap_status status) {
  switch (status) {
    case DIFFCAP_OK: return "ok";
    case DIFFCAP_ERR_ARGUMENT: return "argument";
    case DIFFCAP_ERR_CONFIG: return "config";
    case DIFFCAP_ERR_IO: return "io";
    case DIFFCAP_ERR_FORMAT: return "format";
    case DIFFCAP_ERR_DIVERGENCE: return "divergence";
    case DIFFCAP_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int diffcap_exit_code(diffcap_status status) {
  if (status == DIFFCAP_OK) return 0;
  return status == DIFFCAP_ERR_DIVERGENCE ? 2 : 1;
}

const char* diffcap_version(void) { return "0.1.0"; }

diffcap_status diffcap_schedule_create(const char* kind, int T, double beta_start, double beta_end,
                                       diffcap_schedule** out) {
  return guarded([&] {
    require(kind && out, "diffcap_schedule_create: null argument");
    *out = nullptr;
    auto s = diffcap::build_schedule(diffcap::parse_schedule_kind(kind), T, beta_start, beta_end);
    *out = new diffcap_schedule{std::move(s)};
  });
}

diffcap_status diffcap_schedule_from_config(const char* config_path, diffcap_schedule** out) {
  return guarded([&] {
    require(config_path && out, "diffcap_schedule_from_config: null argument");
    *out = nullptr;
    const diffcap::Config cfg = diffcap::resolve_config(config_path, {});
    *out = new diffcap_schedule{diffcap::build_schedule(cfg.schedule)};
  });
}

void diffcap_schedule_free(diffcap_schedule* s) { delete s; }

int diffcap_schedule_length(const diffcap_schedule* s) { return s ? s->schedule.T() : 0; }

diffcap_status diffcap_schedule_at(const diffcap_schedule* s, int t, double* beta, double* alpha,
                                   double* alpha_bar) {
  return guarded([&] {
    require(s != nullptr, "diffcap_schedule_at: null schedule");
    require(t >= 1 && t <= s->schedule.T(), "diffcap_schedule_at: t out of range");
    if (beta) *beta = s->schedule.beta(t);
    if (alpha) *alpha = s->schedule.alpha(t);
    if (alpha_bar) *alpha_bar = s->schedule.alpha_bar(t);
  });
}

diffcap_status diffcap_schedule_table(const diffcap_schedule* s, char* buf, size_t cap,
                                      size_t* needed) {
  return guarded([&] {
    require(s != nullptr, "diffcap_schedule_table: null schedule");
    std::string out = "t\tbeta\talpha\talpha_bar\n";
    char line[128];
    for (int t = 1; t <= s->schedule.T(); ++t) {
      std::snprintf(line, sizeof line, "%d\t%.17g\t%.17g\t%.17g\n", t, s->schedule.beta(t),
                    s->schedule.alpha(t), s->schedule.alpha_bar(t));
      out += line;
    }
    copy_out(out, buf, cap, needed);
  });
}

void diffcap_gen_options_init(diffcap_gen_options* opts) {
  if (!opts) return;
  opts->stages = 0;
  opts->deterministic = -1;
  opts->w = -1.0;
  opts->seed = 0;
}

diffcap_status diffcap_model_load(const char* checkpoint_dir, diffcap_model** out) {
  return guarded([&] {
    require(checkpoint_dir && out, "diffcap_model_load: null argument");
    *out = nullptr;
    *out = new diffcap_model{diffcap::load_checkpoint(checkpoint_dir)};
  });
}

void diffcap_model_free(diffcap_model* m) { delete m; }

int diffcap_model_feature_dim(const diffcap_model* m) {
  return m ? m->model.denoiser.config().d_clip : 0;
}

int diffcap_model_vocab_size(const diffcap_model* m) { return m ? m->model.vocab.size() : 0; }

diffcap_status diffcap_model_caption(const diffcap_model* m, const float* features, size_t dim,
                                     const diffcap_gen_options* opts, char* buf, size_t cap,
                                     size_t* needed, uint64_t* forward_passes) {
  return guarded([&] {
    require(m && features, "diffcap_model_caption: null argument");
    require(static_cast<int>(dim) == m->model.denoiser.config().d_clip,
            "diffcap_model_caption: feature width does not match the model");
    diffcap::CondFeatures c;
    c.image.resize(static_cast<Eigen::Index>(dim));
    for (size_t i = 0; i < dim; ++i) c.image(static_cast<Eigen::Index>(i)) = features[i];
    const auto res =
        diffcap::generate(m->model, c, gen_config(m->model, opts), opts ? opts->seed : 0);
    if (forward_passes) *forward_passes = res.forward_passes;
    copy_out(res.caption, buf, cap, needed);
  });
}

diffcap_status diffcap_make_toy_data(int scenes, int dim, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require(out_dir != nullptr, "diffcap_make_toy_data: null out_dir");
    diffcap::run_make_toy_data({scenes, dim, seed, out_dir});
  });
}

diffcap_status diffcap_train(const char* config_path, const char* out_dir,
                             const char* const* overrides, size_t n_overrides,
                             const uint64_t* seed, int resume, diffcap_train_result* result) {
  return guarded([&] {
    require(config_path && out_dir, "diffcap_train: null argument");
    require(n_overrides == 0 || overrides, "diffcap_train: null overrides");
    diffcap::TrainCommand cmd;
    cmd.config = config_path;
    cmd.out = out_dir;
    for (size_t i = 0; i < n_overrides; ++i) {
      require(overrides[i] != nullptr, "diffcap_train: null override");
      cmd.overrides.emplace_back(overrides[i]);
    }
    if (seed) cmd.seed = *seed;
    cmd.resume = resume != 0;
    const auto s = diffcap::run_train(cmd);
    if (result) *result = {s.epochs_run, s.steps, s.stopped_early ? 1 : 0, s.best_epoch};
  });
}

diffcap_status diffcap_generate(const char* checkpoint_dir, const char* features_path,
                                const char* keys_path, const char* const* only, size_t n_only,
                                const diffcap_gen_options* opts, const char* out_dir,
                                size_t* written) {
  return guarded([&] {
    require(checkpoint_dir && features_path && keys_path && out_dir,
            "diffcap_generate: null argument");
    require(n_only == 0 || only, "diffcap_generate: null key list");
    diffcap::GenerateCommand cmd;
    cmd.checkpoint = checkpoint_dir;
    cmd.features = features_path;
    cmd.keys = keys_path;
    for (size_t i = 0; i < n_only; ++i) {
      require(only[i] != nullptr, "diffcap_generate: null key");
      cmd.only.emplace_back(only[i]);
    }
    if (opts) {
      if (opts->stages > 0) cmd.stages = opts->stages;
      if (opts->deterministic >= 0) cmd.deterministic = opts->deterministic != 0;
      if (opts->w >= 0.0) cmd.w = opts->w;
      cmd.seed = opts->seed;
    }
    cmd.out = out_dir;
    const size_t n = diffcap::run_generate(cmd);
    if (written) *written = n;
  });
}

diffcap_status diffcap_evaluate(const char* checkpoint_dir, const char* dataset_path,
                                const char* features_path, int stages, uint64_t seed,
                                const char* out_dir, diffcap_eval_result* result) {
  return guarded([&] {
    require(checkpoint_dir && dataset_path && features_path && out_dir,
            "diffcap_evaluate: null argument");
    diffcap::EvaluateCommand cmd;
    cmd.checkpoint = checkpoint_dir;
    cmd.dataset = dataset_path;
    cmd.features = features_path;
    if (stages > 0) cmd.stages = stages;
    cmd.seed = seed;
    cmd.out = out_dir;
    const auto rep = diffcap::run_evaluate(cmd);
    if (result) *result = {rep.bleu.score, rep.bleu.brevity_penalty, rep.n};
  });
}

diffcap_status diffcap_inspect_schedule(const char* config_path, const char* out_dir) {
  return guarded([&] {
    require(config_path != nullptr, "diffcap_inspect_schedule: null config");
    const diffcap::Config cfg = diffcap::resolve_config(config_path, {});
    if (!out_dir) return;
    const std::filesystem::path out(out_dir);
    diffcap::RunManifest m;
    m.command = "inspect-schedule";
    m.config = diffcap::config_to_json(cfg);
    m.seed = cfg.train.seed;
    m.started_at = diffcap::utc_timestamp();
    m.hash_input(config_path);
    m.outputs = {{"schedule", (out / diffcap::layout::kSchedule).string()}};
    m.write(out, true);
    std::ofstream f(out / diffcap::layout::kSchedule, std::ios::binary | std::ios::trunc);
    if (!f) throw diffcap::LoadError(diffcap::LoadError::Kind::kIo, "cannot write schedule table");
    f << diffcap::schedule_table(cfg);
  });
}

}  // extern "C"
