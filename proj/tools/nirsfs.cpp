// nirsfs: dataset generation, training, evaluation, inference, integration
// and loss plotting.
//
// Exit codes: 0 ok, 1 other failure, 2 bad configuration or arguments,
// 3 I/O failure, 4 checkpoint/architecture mismatch, 5 empty loss log.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "nirsfs/nirsfs.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nirsfs;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kArch = 4, kEmpty = 5 };

struct Globals {
  std::optional<std::uint64_t> seed;
  bool json_out = false;
};

/// JSON parse failure with the line number of the offending byte.
class ParseFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json load_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open", path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + long(upto), '\n');
    throw ParseFailure(path + ":" + std::to_string(line) + ": JSON parse error: " + e.what());
  }
}

fs::path parent_or_cwd(const fs::path& p) {
  const fs::path parent = p.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

void echo_config(const fs::path& dir, const std::string& name, const json& cfg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory (" + ec.message() + ")", dir.string());
  write_json_file(dir / name, cfg);
}

void emit(const Globals& g, const json& summary) {
  if (g.json_out) std::cout << summary.dump() << std::endl;
}

// ---------------------------------------------------------------------------

int cmd_generate(const Globals& g, const std::string& manifest_path, const std::string& out) {
  DatasetManifest m = manifest_path.empty() ? DatasetManifest{} : manifest_from_json(load_json(manifest_path));
  if (g.seed) m.seed = *g.seed;
  m.validate();
  echo_config(out, "generate_config.json", to_json(m));
  const BuildReport r = build_dataset(m, out);
  std::cerr << "generated " << r.files << " files in " << out << "\n";
  emit(g, json{{"command", "generate"}, {"out", out}, {"report", to_json(r)}});
  return kOk;
}

int cmd_train(const Globals& g, const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& resume, bool quiet) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : train_config_from_json(load_json(config_path));
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  echo_config(out, "train_config.json", to_json(cfg));
  TrainOptions opts;
  opts.resume = resume;
  opts.on_step = [&](const StepReport& r) {
    if (!quiet && (r.iteration % 50 == 0 || r.iteration == cfg.total_iterations))
      std::cerr << "iter " << r.iteration << " d=" << r.d_loss << " bce=" << r.g_bce << " l_p=" << r.l_p
                << " l_ang=" << r.l_ang << " l_curl=" << r.l_curl << "\n";
  };
  const TrainResult res = train(cfg, data, out, opts);
  emit(g, json{{"command", "train"},
               {"out", out},
               {"start_iteration", res.start_iteration},
               {"final_iteration", res.final_iteration},
               {"final_checkpoint", res.final_checkpoint},
               {"checkpoints", res.checkpoints},
               {"last", to_json(res.last)}});
  return kOk;
}

/// Networks from `ckpt`; with `config_path`, sized from that train config
/// instead of the checkpoint's own echo (a mismatch is an ArchMismatch).
TrainingState<float> load_networks(const std::string& ckpt, const std::string& config_path) {
  if (config_path.empty()) return load_trained(ckpt);
  const TrainConfig cfg = train_config_from_json(load_json(config_path));
  TrainingState<float> st(cfg.generator, cfg.discriminator);
  load_checkpoint(ckpt, st);
  return st;
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& config_path, const std::string& data,
             const std::string& split, const std::string& out, double sigma, bool baseline) {
  const SmoothingOptions smoothing{sigma, 13};
  json echo{{"version", 1},   {"ckpt", ckpt},        {"config", config_path}, {"data", data},
            {"split", split}, {"out", out},          {"sigma", sigma},        {"kernel", smoothing.kernel},
            {"thresholds", kDefaultThresholds},      {"baseline", baseline}};
  echo_config(parent_or_cwd(out), "eval_config.json", echo);
  const DatasetIndex ds = open_dataset(data);
  MetricsReport rep;
  json report;
  if (baseline) {
    rep = evaluate(constant_predictor(), ds, split, smoothing);
    report = to_json(rep);
    report["predictor"] = "constant-001";
  } else {
    TrainingState<float> st = load_networks(ckpt, config_path);
    rep = evaluate(generator_predictor(st.gen), ds, split, smoothing);
    report = to_json(rep);
    report["predictor"] = "generator";
    report["checkpoint"] = ckpt;
    report["iteration"] = st.iteration;
  }
  write_json_file(out, report);
  std::cerr << "mean angular error " << rep.raw.angular_mean << " deg over " << rep.pixels << " pixels\n";
  emit(g, report);
  return kOk;
}

int cmd_infer(const Globals& g, const std::string& ckpt, const std::string& config_path, const std::string& input,
              const std::string& prefix, bool mesh, double scale) {
  json echo{{"version", 1}, {"ckpt", ckpt}, {"config", config_path}, {"input", input},
            {"out", prefix}, {"mesh", mesh}, {"scale", scale}};
  echo_config(parent_or_cwd(prefix), fs::path(prefix).filename().string() + "_config.json", echo);
  TrainingState<float> st = load_networks(ckpt, config_path);
  const NirImage nir = io::read_nir(input).as_normalized();
  if (nir.width() < 16 || nir.height() < 16)
    throw ConfigError("input must be at least 16x16, got " + std::to_string(nir.width()) + "x" +
                      std::to_string(nir.height()));
  std::vector<float> z(nir.field.values.begin(), nir.field.values.end());
  const Tensor<float> in(Shape{1, 1, nir.height(), nir.width()}, std::move(z));
  const Tensor<float> out = generator_predictor(st.gen)(in);
  const NormalMap n = decode_normals(out).normals;
  const std::string nrm = prefix + "_nrm.png";
  io::write_normal_png(nrm, n);
  json summary{{"command", "infer"}, {"normals", nrm}, {"width", n.width()}, {"height", n.height()}};
  if (mesh) {
    const DepthMap d = integrate_normals(n);
    const std::string obj = prefix + ".obj";
    export_mesh(d, obj, {scale});
    summary["mesh"] = obj;
  }
  emit(g, summary);
  return kOk;
}

int cmd_integrate(const Globals& g, const std::string& normals, const std::string& mask_path,
                  const std::string& prefix, double scale, bool depth_pfm) {
  json echo{{"version", 1}, {"normals", normals}, {"mask", mask_path}, {"out", prefix},
            {"scale", scale}, {"depth_pfm", depth_pfm}};
  echo_config(parent_or_cwd(prefix), fs::path(prefix).filename().string() + "_config.json", echo);
  const NormalMap n = io::read_normal_png(normals);
  std::vector<std::uint8_t> mask;
  if (!mask_path.empty()) {
    const io::PngImage m = io::read_png(mask_path);
    if (m.width != n.width() || m.height != n.height()) throw IoError("mask extent differs from normal map", mask_path);
    mask.resize(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) mask[i] = m.samples[i * m.channels] != 0;
  }
  const DepthMap d = integrate_normals(n, mask.empty() ? nullptr : &mask);
  const std::string obj = prefix + ".obj";
  export_mesh(d, obj, {scale});
  json summary{{"command", "integrate"}, {"mesh", obj}};
  if (depth_pfm) {
    write_depth_pfm(prefix + "_depth.pfm", d);
    summary["depth"] = prefix + "_depth.pfm";
  }
  emit(g, summary);
  return kOk;
}

int cmd_plot(const Globals& g, const std::string& log, const std::string& out) {
  echo_config(parent_or_cwd(out), fs::path(out).stem().string() + "_config.json",
              json{{"version", 1}, {"log", log}, {"out", out}, {"terms", kLossTerms}});
  const PlotReport r = plot_losses(log, out);
  for (const auto& t : r.missing) std::cerr << "warning: term '" << t << "' absent from log, curve omitted\n";
  if (r.corrupt_lines) std::cerr << "warning: skipped " << r.corrupt_lines << " corrupt line(s)\n";
  emit(g, json{{"command", "plot"},
               {"out", out},
               {"records", r.records},
               {"plotted", r.plotted},
               {"missing", r.missing},
               {"corrupt_lines", r.corrupt_lines}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Surface normals from single NIR images: data, training, evaluation, reconstruction"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random choice of this invocation");
  app.add_flag("--json", g.json_out, "Print a machine-readable JSON summary on stdout");

  std::string manifest, out, config, data, resume, ckpt, split = "test", input, normals, mask, log;
  double sigma = 3.0, scale = 1.0;
  bool baseline = false, mesh = false, depth_pfm = false, quiet = false;

  auto* gen = app.add_subcommand("generate", "Render a synthetic dataset");
  gen->add_option("--manifest", manifest, "Dataset manifest (JSON); defaults used when omitted");
  gen->add_option("--out", out, "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train generator and discriminator");
  tr->add_option("--config", config, "Train config (JSON); defaults used when omitted");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_option("--resume", resume, "Checkpoint to resume from");
  tr->add_flag("--quiet", quiet, "No progress lines");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  ev->add_option("--ckpt", ckpt, "Checkpoint file");
  ev->add_option("--config", config, "Train config the checkpoint must match");
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "Split name")->capture_default_str();
  ev->add_option("--out", out, "Report path (JSON)")->required();
  ev->add_option("--sigma", sigma, "Detail-map smoothing sigma (0 = identity)")->capture_default_str();
  ev->add_flag("--baseline", baseline, "Evaluate the constant (0,0,1) predictor instead of a checkpoint");

  auto* inf = app.add_subcommand("infer", "Estimate normals for one NIR image");
  inf->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  inf->add_option("--config", config, "Train config the checkpoint must match");
  inf->add_option("--input", input, "NIR image (PNG or PFM)")->required();
  inf->add_option("--out", out, "Output prefix")->required();
  inf->add_flag("--mesh", mesh, "Also integrate and write <prefix>.obj");
  inf->add_option("--scale", scale, "Mesh scale")->capture_default_str();

  auto* integ = app.add_subcommand("integrate", "Integrate a normal map into depth and an OBJ mesh");
  integ->add_option("--normals", normals, "Normal map PNG")->required();
  integ->add_option("--mask", mask, "Optional mask PNG (nonzero = valid)");
  integ->add_option("--out", out, "Output prefix")->required();
  integ->add_option("--scale", scale, "Mesh scale")->capture_default_str();
  integ->add_flag("--depth-pfm", depth_pfm, "Also write <prefix>_depth.pfm");

  auto* pl = app.add_subcommand("plot", "Render loss curves from losses.jsonl");
  pl->add_option("--log", log, "losses.jsonl")->required();
  pl->add_option("--out", out, "Output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*gen) return cmd_generate(g, manifest, out);
    if (*tr) return cmd_train(g, config, data, out, resume, quiet);
    if (*ev) {
      if (!baseline && ckpt.empty()) throw ConfigError("eval needs --ckpt unless --baseline is given");
      return cmd_eval(g, ckpt, config, data, split, out, sigma, baseline);
    }
    if (*inf) return cmd_infer(g, ckpt, config, input, out, mesh, scale);
    if (*integ) return cmd_integrate(g, normals, mask, out, scale, depth_pfm);
    if (*pl) return cmd_plot(g, log, out);
  } catch (const ParseFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const json::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const ArchMismatch& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return kArch;
  } catch (const EmptyInput& e) {
    std::cerr << "empty input: " << e.what() << "\n";
    return kEmpty;
  } catch (const PartialOutput& e) {
    std::cerr << "I/O error: " << e.what() << " (last completed index " << e.last_completed() << ")\n";
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const DivergedTraining& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
