#pragma once
// Alternating discriminator / generator optimization with a step-decayed
// learning rate, checkpoints and a JSON-lines loss log.
//
//   <out>/train_config.json      resolved config
//   <out>/losses.jsonl           one line per iteration
//   <out>/ckpt_<iter>.bin        every `checkpoint_every` iterations and at the end
//   <out>/ckpt_<iter>.json       config echo for that checkpoint

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "nirsfs/checkpoint.hpp"
#include "nirsfs/losses.hpp"
#include "nirsfs/synth.hpp"

namespace nirsfs {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::uint64_t total_iterations = 46000;
  double lr0 = 2e-4;
  double lr_decay = 0.95;
  std::uint64_t lr_decay_every = 5000;
  double beta1 = 0.5;
  double beta2 = 0.999;
  LossWeights weights;
  std::uint64_t seed = 1;
  std::uint64_t checkpoint_every = 5000;
  std::size_t d_steps_per_g = 1;
  NetConfig generator;
  NetConfig discriminator;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (total_iterations < 1) throw ConfigError("total_iterations must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must be in [0, 1)");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (d_steps_per_g < 1) throw ConfigError("d_steps_per_g must be >= 1");
    weights.validate();
    generator.validate();
    discriminator.validate();
  }
};

inline nlohmann::json to_json(const NetConfig& c) {
  return {{"width_scale", c.width_scale}, {"pair_conditioning", c.pair_conditioning},
          {"leaky_slope", c.leaky_slope}, {"bn_momentum", c.bn_momentum}, {"bn_epsilon", c.bn_epsilon}};
}

inline nlohmann::json to_json(const LossWeights& w) {
  return {{"lambda_adv", w.lambda_adv}, {"lambda_p", w.lambda_p}, {"lambda_ang", w.lambda_ang},
          {"lambda_curl", w.lambda_curl}, {"p_norm", w.p_norm}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"version", 1},
          {"batch_size", c.batch_size},
          {"total_iterations", c.total_iterations},
          {"lr0", c.lr0},
          {"lr_decay", c.lr_decay},
          {"lr_decay_every", c.lr_decay_every},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weights", to_json(c.weights)},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"d_steps_per_g", c.d_steps_per_g},
          {"generator", to_json(c.generator)},
          {"discriminator", to_json(c.discriminator)}};
}

namespace detail {

inline void net_config_from_json(const nlohmann::json& j, NetConfig& c, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  reject_unknown(j, {"width_scale", "pair_conditioning", "leaky_slope", "bn_momentum", "bn_epsilon"}, where);
  read_key(j, "width_scale", c.width_scale);
  read_key(j, "pair_conditioning", c.pair_conditioning);
  read_key(j, "leaky_slope", c.leaky_slope);
  read_key(j, "bn_momentum", c.bn_momentum);
  read_key(j, "bn_epsilon", c.bn_epsilon);
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  detail::reject_unknown(j,
                         {"version", "batch_size", "total_iterations", "lr0", "lr_decay", "lr_decay_every", "beta1",
                          "beta2", "weights", "seed", "checkpoint_every", "d_steps_per_g", "generator",
                          "discriminator"},
                         "train config");
  TrainConfig c;
  int version = 1;
  detail::read_key(j, "version", version);
  if (version != 1) throw ConfigError("unsupported train config version " + std::to_string(version));
  detail::read_key(j, "batch_size", c.batch_size);
  detail::read_key(j, "total_iterations", c.total_iterations);
  detail::read_key(j, "lr0", c.lr0);
  detail::read_key(j, "lr_decay", c.lr_decay);
  detail::read_key(j, "lr_decay_every", c.lr_decay_every);
  detail::read_key(j, "beta1", c.beta1);
  detail::read_key(j, "beta2", c.beta2);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "checkpoint_every", c.checkpoint_every);
  detail::read_key(j, "d_steps_per_g", c.d_steps_per_g);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    if (!w.is_object()) throw ConfigError("weights must be an object");
    detail::reject_unknown(w, {"lambda_adv", "lambda_p", "lambda_ang", "lambda_curl", "p_norm"}, "weights");
    detail::read_key(w, "lambda_adv", c.weights.lambda_adv);
    detail::read_key(w, "lambda_p", c.weights.lambda_p);
    detail::read_key(w, "lambda_ang", c.weights.lambda_ang);
    detail::read_key(w, "lambda_curl", c.weights.lambda_curl);
    detail::read_key(w, "p_norm", c.weights.p_norm);
  }
  if (j.contains("generator")) detail::net_config_from_json(j.at("generator"), c.generator, "generator");
  if (j.contains("discriminator")) detail::net_config_from_json(j.at("discriminator"), c.discriminator, "discriminator");
  c.validate();
  return c;
}

/// lr0 · decay^floor(iteration / decay_every), iteration counted from 0.
inline double lr_schedule(std::uint64_t iteration, const TrainConfig& c) {
  return c.lr0 * std::pow(c.lr_decay, double(iteration / c.lr_decay_every));
}

/// Stateless stratified sampler. Draw number s = (t−1)·B + j (iteration t,
/// slot j) takes its light group from s mod L, cycling through the L lights
/// present in the split; within a group, draws walk a fresh permutation each
/// epoch. Any L·k consecutive draws therefore hit every light exactly k times,
/// and resuming needs nothing but the iteration number.
class BalancedSampler {
 public:
  BalancedSampler(const std::vector<int>& lights, std::uint64_t seed) : seed_(seed) {
    if (lights.empty()) throw ConfigError("cannot sample from an empty split");
    std::map<int, std::vector<std::size_t>> by_light;
    for (std::size_t i = 0; i < lights.size(); ++i) by_light[lights[i]].push_back(i);
    for (auto& [light, members] : by_light) {
      group_lights_.push_back(light);
      groups_.push_back(std::move(members));
    }
  }

  std::size_t num_groups() const { return groups_.size(); }

  std::size_t draw(std::uint64_t s) const {
    const std::size_t g = std::size_t(s % groups_.size());
    const std::uint64_t k = s / groups_.size();
    const auto& members = groups_[g];
    const std::uint64_t epoch = k / members.size();
    const auto perm = permutation(g, epoch);
    return members[perm[std::size_t(k % members.size())]];
  }

  /// Split positions for 1-based iteration `t`.
  std::vector<std::size_t> batch(std::uint64_t t, std::size_t batch_size) const {
    std::vector<std::size_t> out(batch_size);
    for (std::size_t j = 0; j < batch_size; ++j) out[j] = draw((t - 1) * batch_size + j);
    return out;
  }

 private:
  std::vector<std::size_t> permutation(std::size_t g, std::uint64_t epoch) const {
    if (cache_group_ == g && cache_epoch_ == epoch) return cache_;
    std::vector<std::size_t> p(groups_[g].size());
    std::iota(p.begin(), p.end(), 0);
    std::mt19937_64 rng(splitmix64(seed_ ^ splitmix64((std::uint64_t(g) << 40) ^ epoch)));
    std::shuffle(p.begin(), p.end(), rng);
    cache_group_ = g;
    cache_epoch_ = epoch;
    cache_ = p;
    return p;
  }

  std::uint64_t seed_;
  std::vector<int> group_lights_;
  std::vector<std::vector<std::size_t>> groups_;
  mutable std::size_t cache_group_ = std::size_t(-1);
  mutable std::uint64_t cache_epoch_ = 0;
  mutable std::vector<std::size_t> cache_;
};

struct StepReport {
  std::uint64_t iteration = 0;
  double learning_rate = 0;
  double d_loss = 0;
  double g_total = 0;
  double g_bce = 0, l_p = 0, l_ang = 0, l_curl = 0;
};

inline nlohmann::json to_json(const StepReport& r) {
  return {{"iteration", r.iteration}, {"d_loss", r.d_loss}, {"g_bce", r.g_bce},
          {"l_p", r.l_p},             {"l_ang", r.l_ang},   {"l_curl", r.l_curl}};
}

namespace detail {

inline void check_finite(double v, const char* what, std::uint64_t iteration) {
  if (!std::isfinite(v))
    throw DivergedTraining(std::string(what) + " is not finite at iteration " + std::to_string(iteration),
                           long(iteration));
}

}  // namespace detail

/// One iteration: D update(s) on (z, y) vs (z, G(z)) with G frozen, then one G
/// update with D frozen and its batch-norm layers in eval mode.
template <typename T>
StepReport train_step(TrainingState<T>& st, const Tensor<T>& z, const Tensor<T>& y, const TrainConfig& cfg,
                      std::uint64_t iteration) {
  StepReport rep;
  rep.iteration = iteration;
  rep.learning_rate = lr_schedule(iteration - 1, cfg);
  for (auto* opt : {&st.opt_gen, &st.opt_dis}) {
    opt->learning_rate = rep.learning_rate;
    opt->beta1 = cfg.beta1;
    opt->beta2 = cfg.beta2;
  }
  auto gen_params = st.gen.parameters();
  auto dis_params = st.dis.parameters();

  const Tensor<T> g = st.gen.forward(z, NormMode::Train);
  const Tensor<T> g_fixed = g.detach();

  for (std::size_t r = 0; r < cfg.d_steps_per_g; ++r) {
    const Tensor<T> d_real = st.dis.forward(z, y, NormMode::Train);
    const Tensor<T> d_fake = st.dis.forward(z, g_fixed, NormMode::Train);
    const Tensor<T> ld = loss_discriminator(d_real, d_fake);
    rep.d_loss = double(ld.item());
    detail::check_finite(rep.d_loss, "discriminator loss", iteration);
    zero_grads(dis_params);
    ld.backward();
    adam_step(dis_params, st.opt_dis);
  }

  set_requires_grad(dis_params, false);
  try {
    const Tensor<T> d_fake = st.dis.forward(z, g, NormMode::Eval);
    const GeneratorLoss<T> gl = loss_generator(d_fake, y, g, cfg.weights);
    rep.g_total = double(gl.total.item());
    rep.g_bce = gl.bce;
    rep.l_p = gl.l_p;
    rep.l_ang = gl.l_ang;
    rep.l_curl = gl.l_curl;
    detail::check_finite(rep.g_total, "generator loss", iteration);
    zero_grads(gen_params);
    if (gl.total.requires_grad()) gl.total.backward();
    adam_step(gen_params, st.opt_gen);
  } catch (DivergedTraining& e) {
    set_requires_grad(dis_params, true);
    if (e.iteration() < 0) throw DivergedTraining(std::string(e.what()) + " at iteration " + std::to_string(iteration), long(iteration));
    throw;
  } catch (...) {
    set_requires_grad(dis_params, true);
    throw;
  }
  set_requires_grad(dis_params, true);
  st.iteration = iteration;
  return rep;
}

/// Seeds for network initialization derived from the run seed.
inline std::uint64_t generator_init_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x67656eULL); }
inline std::uint64_t discriminator_init_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x646973ULL); }
inline std::uint64_t sampler_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x73616dULL); }

template <typename T>
TrainingState<T> make_training_state(const TrainConfig& cfg) {
  TrainingState<T> st(cfg.generator, cfg.discriminator);
  st.gen.init_weights(generator_init_seed(cfg.seed));
  st.dis.init_weights(discriminator_init_seed(cfg.seed));
  return st;
}

inline std::string checkpoint_name(std::uint64_t iteration) {
  return "ckpt_" + std::to_string(iteration) + ".bin";
}

/// Iterations at which `train` writes a checkpoint.
inline std::vector<std::uint64_t> checkpoint_schedule(std::uint64_t start, std::uint64_t total, std::uint64_t every) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t t = start + 1; t <= total; ++t)
    if (t % every == 0 || t == total) out.push_back(t);
  return out;
}

struct TrainOptions {
  std::string resume;  // checkpoint path, empty for a fresh run
  std::function<void(const StepReport&)> on_step;
};

struct TrainResult {
  std::uint64_t start_iteration = 0;
  std::uint64_t final_iteration = 0;
  std::string final_checkpoint;
  std::vector<std::string> checkpoints;
  StepReport last;
};

namespace detail {

/// Keeps the log lines whose iteration is <= `keep_through`.
inline void truncate_log(const std::filesystem::path& path, std::uint64_t keep_through) {
  std::ifstream is(path);
  if (!is) return;
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(is, line)) {
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("iteration").get<std::uint64_t>() <= keep_through) kept.push_back(line);
    } catch (const std::exception&) {
    }
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  for (const auto& l : kept) os << l << '\n';
}

}  // namespace detail

/// Full run on the "train" split of the dataset at `dataset_dir`.
inline TrainResult train(const TrainConfig& cfg, const std::filesystem::path& dataset_dir,
                         const std::filesystem::path& out_dir, const TrainOptions& opts = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  const DatasetIndex ds = open_dataset(dataset_dir);
  if (ds.split("train").empty()) throw ConfigError("dataset has an empty train split: " + dataset_dir.string());

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory", out_dir.string());
  const nlohmann::json echo = to_json(cfg);
  write_json_file(out_dir / "train_config.json", echo);

  const SplitCache cache = cache_split(ds, "train");
  const BalancedSampler sampler(cache.lights, sampler_seed(cfg.seed));

  TrainingState<float> st = make_training_state<float>(cfg);
  TrainResult res;
  const fs::path log_path = out_dir / "losses.jsonl";
  if (!opts.resume.empty()) {
    load_checkpoint(opts.resume, st);
    res.start_iteration = st.iteration;
    if (st.iteration > cfg.total_iterations)
      throw ConfigError("checkpoint iteration " + std::to_string(st.iteration) + " exceeds total_iterations");
    detail::truncate_log(log_path, st.iteration);
  } else {
    std::ofstream(log_path, std::ios::trunc);
  }

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open loss log", log_path.string());
  const std::string echo_text = echo.dump();
  for (std::uint64_t t = res.start_iteration + 1; t <= cfg.total_iterations; ++t) {
    const Batch b = cache.gather(sampler.batch(t, cfg.batch_size));
    res.last = train_step(st, b.nir, b.normals, cfg, t);
    log << to_json(res.last).dump() << '\n';
    log.flush();
    if (opts.on_step) opts.on_step(res.last);
    if (t % cfg.checkpoint_every == 0 || t == cfg.total_iterations) {
      const fs::path ck = out_dir / checkpoint_name(t);
      save_checkpoint(ck.string(), st, echo_text);
      nlohmann::json side = echo;
      side["iteration"] = t;
      side["arch_hash"] = st.arch();
      write_json_file(fs::path(ck).replace_extension(".json"), side);
      res.checkpoints.push_back(ck.string());
      res.final_checkpoint = ck.string();
    }
  }
  res.final_iteration = st.iteration;
  return res;
}

/// Networks sized from a checkpoint's config echo, with its weights loaded.
inline TrainingState<float> load_trained(const std::string& ckpt_path) {
  const CheckpointInfo info = read_checkpoint_info(ckpt_path);
  TrainConfig cfg;
  try {
    cfg = train_config_from_json(nlohmann::json::parse(info.config));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint config echo is corrupt (") + e.what() + ")", ckpt_path);
  }
  TrainingState<float> st(cfg.generator, cfg.discriminator);
  load_checkpoint(ckpt_path, st);
  return st;
}

}  // namespace nirsfs
