// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "gradcheck_suite.hpp"
#include "nirsfs/evaluator.hpp"
#include "nirsfs/geometry.hpp"
#include "nirsfs/runtime.hpp"
#include "nirsfs/trainer.hpp"

using namespace nirsfs;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and limits.
constexpr double kGradRelTol = gradcheck::kRelTol;
constexpr double kGradSeconds = 120.0;
constexpr int kPsSurfaces = 50;
constexpr int kPsLights = 12;
constexpr double kPsMaxDeg = 0.1;
constexpr double kPsSeconds = 60.0;
constexpr int kCurlSurfaces = 40;
constexpr double kCurlMax = 1e-3;
constexpr double kSwirlValue = 2.0;
constexpr double kSwirlTol = 1e-6;
constexpr int kIntegrateSurfaces = 12;
constexpr double kIntegrateMaxDeg = 2.0;
constexpr double kPlaneMaxDev = 1e-3;
constexpr double kSmokeMaxDeg = 15.0;
constexpr double kSmokeMinGain = 0.30;
constexpr double kSmokeSeconds = 30.0 * 60.0;
constexpr std::uint64_t kOrderingSeeds[3] = {1, 2, 3};
constexpr double kDetailTol = 1e-6;
constexpr std::uint64_t kResumeIterations = 200;
constexpr std::uint64_t kResumeAt = 100;
constexpr double kResumeTol = 1e-6;
constexpr double kObjTol = 1e-5;
constexpr double kPngMaxDeg = 1e-2;  // one 16-bit step is about 2e-3 deg
constexpr double kCodecTol = 1e-6;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot open", p.string());
  return nlohmann::json::parse(is);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double mean_error(const NormalMap& a, const NormalMap& b) { return mean_of(angular_error_map(a, b).valid_values()); }

double max_component_diff(const NormalMap& a, const NormalMap& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max({worst, std::abs(a[i].x - b[i].x), std::abs(a[i].y - b[i].y), std::abs(a[i].z - b[i].z)});
  return worst;
}

double max_angle(const NormalMap& a, const NormalMap& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, angle_deg(a[i], b[i]));
  return worst;
}

NormalMap random_map(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  NormalMap n(w, h);
  for (std::size_t i = 0; i < n.size(); ++i) n[i] = Vec3{u(rng), u(rng), std::abs(u(rng)) + 0.2}.normalized();
  return n;
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  const auto cases = gradcheck::suite();
  double worst = 0.0;
  std::string worst_case, failing;
  for (const auto& c : cases) {
    const gradcheck::Result r = gradcheck::run_case(c);
    if (r.rel_error >= worst) {
      worst = r.rel_error;
      worst_case = c.name + " " + r.where;
    }
    if (!(r.rel_error < kGradRelTol)) failing += " " + c.name;
  }
  const double secs = seconds_since(t0);
  return {failing.empty() && secs < kGradSeconds,
          fmt("%zu cases x %d seeds, worst rel err %.2e (%s), tol %.0e, %.1f s (limit %.0f s)%s", cases.size(),
              gradcheck::kSeeds, worst, worst_case.c_str(), kGradRelTol, secs, kGradSeconds,
              failing.empty() ? "" : (", failing:" + failing).c_str())};
}

Verdict photometric_round_trip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double total = 0.0;
  std::size_t count = 0;
  for (int s = 0; s < kPsSurfaces; ++s) {
    const Surface surf = generate_surface({SurfaceKind(s % 4), 1.0, 3.0, rng()}, 32);
    const ScalarField albedo = piecewise_albedo(32, 32, 2, 0.5, 1.0, rng());
    std::vector<LightDirection> lights;
    std::vector<NirImage> imgs;
    for (int k = 0; k < kPsLights; ++k) {
      lights.push_back(random_light(rng, deg2rad(60.0)));
      imgs.push_back(render_lambertian_raw(surf.normals, albedo, lights.back()));
    }
    const auto res = photometric_stereo(imgs, lights);
    for (std::size_t i = 0; i < res.valid.size(); ++i)
      if (res.valid[i]) {
        total += angle_deg(res.normals[i], surf.normals[i]);
        ++count;
      }
  }
  const double err = count ? total / double(count) : INFINITY;
  const double secs = seconds_since(t0);
  return {err < kPsMaxDeg && secs < kPsSeconds,
          fmt("%d surfaces x %d lights, mean error %.2e deg over %zu pixels (limit %.1f), %.1f s (limit %.0f s)",
              kPsSurfaces, kPsLights, err, count, kPsMaxDeg, secs, kPsSeconds)};
}

Verdict integrability() {
  double total = 0.0, worst = 0.0;
  for (int s = 0; s < kCurlSurfaces; ++s) {
    const Surface surf = generate_surface({SurfaceKind(s % 4), 1.5, 2.5, std::uint64_t(s)}, 64);
    const double c = loss_curl(reshape(encode_normals<double>(surf.normals), Shape{1, 3, 64, 64})).item();
    total += c;
    worst = std::max(worst, c);
  }
  const double mean = total / kCurlSurfaces;
  // Swirl field: p = -(y - c), q = x - c, so dp/dy - dq/dx = -2 everywhere.
  const std::size_t n = 16;
  std::vector<double> v(3 * n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double p = -(double(y) - 7.5), q = double(x) - 7.5;
      const Vec3 nn = Vec3{-p, -q, 1.0}.normalized();
      v[y * n + x] = nn.x;
      v[n * n + y * n + x] = nn.y;
      v[2 * n * n + y * n + x] = nn.z;
    }
  const double swirl = loss_curl(Tensor<double>(Shape{1, 3, n, n}, std::move(v))).item();
  return {mean < kCurlMax && std::abs(swirl - kSwirlValue) <= kSwirlTol,
          fmt("ground truth mean curl %.2e (max %.2e) over %d surfaces, limit %.0e; swirl %.9f, want %.1f +- %.0e",
              mean, worst, kCurlSurfaces, kCurlMax, swirl, kSwirlValue, kSwirlTol)};
}

Verdict integration_round_trip() {
  double worst = 0.0;
  for (int s = 0; s < kIntegrateSurfaces; ++s) {
    const Surface surf = generate_surface({SurfaceKind(s % 4), 1.5, 3.0, std::uint64_t(100 + s)}, 64);
    const DepthMap d = integrate_normals(surf.normals);
    worst = std::max(worst, mean_error(surf.normals, normals_from_heights(d.z)));
  }
  const std::size_t w = 48, h = 40;
  NormalMap plane(w, h);
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = Vec3{-0.1, 0.0, 1.0}.normalized();
  const DepthMap d = integrate_normals(plane);
  const double cx = 0.1 * (double(w) - 1.0) / 2.0;
  double dev = 0.0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) dev = std::max(dev, std::abs(d.z.at(x, y) - (0.1 * double(x) - cx)));
  return {worst < kIntegrateMaxDeg && dev < kPlaneMaxDev,
          fmt("worst per-surface mean error %.3f deg over %d surfaces (limit %.1f); plane interior max deviation "
              "%.2e (limit %.0e)",
              worst, kIntegrateSurfaces, kIntegrateMaxDeg, dev, kPlaneMaxDev)};
}

// ---------------------------------------------------------------------------
// Training protocol shared by criteria 5, 6 and 8.

struct Protocol {
  fs::path work;
  DatasetManifest manifest;
  TrainConfig train;
  fs::path data() const { return work / "smoke_data"; }
};

struct RunOutcome {
  double angular_mean = 0;
  double seconds = 0;
};

std::map<std::string, RunOutcome> g_runs;

RunOutcome train_and_eval(const Protocol& p, const TrainConfig& cfg, const std::string& tag) {
  if (auto it = g_runs.find(tag); it != g_runs.end()) return it->second;
  const auto t0 = Clock::now();
  std::cerr << "  training " << tag << " (" << cfg.total_iterations << " iterations)\n";
  const TrainResult res = train(cfg, p.data(), p.work / tag);
  TrainingState<float> st = load_trained(res.final_checkpoint);
  const MetricsReport rep = evaluate(generator_predictor(st.gen), open_dataset(p.data()), "test");
  RunOutcome out{rep.raw.angular_mean, seconds_since(t0)};
  std::cerr << "  " << tag << ": " << out.angular_mean << " deg, " << out.seconds << " s\n";
  g_runs[tag] = out;
  return out;
}

void ensure_dataset(const Protocol& p) {
  if (fs::exists(p.data() / "manifest.json")) return;
  std::cerr << "  generating smoke dataset\n";
  build_dataset(p.manifest, p.data());
}

Verdict smoke(const Protocol& p) {
  const auto t0 = Clock::now();
  ensure_dataset(p);
  const double base = evaluate(constant_predictor(), open_dataset(p.data()), "test").raw.angular_mean;
  const RunOutcome run = train_and_eval(p, p.train, "l2ang_seed" + std::to_string(p.train.seed));
  const double gain = 1.0 - run.angular_mean / base;
  const double secs = seconds_since(t0);
  return {run.angular_mean < kSmokeMaxDeg && gain >= kSmokeMinGain && secs <= kSmokeSeconds,
          fmt("held-out mean %.2f deg (limit %.0f), constant baseline %.2f deg, gain %.1f%% (need %.0f%%), %.0f s "
              "(limit %.0f s)",
              run.angular_mean, kSmokeMaxDeg, base, 100.0 * gain, 100.0 * kSmokeMinGain, secs, kSmokeSeconds)};
}

Verdict ordering(const Protocol& p) {
  ensure_dataset(p);
  std::vector<double> with_ang, without;
  for (std::uint64_t seed : kOrderingSeeds) {
    TrainConfig a = p.train;
    a.seed = seed;
    with_ang.push_back(train_and_eval(p, a, "l2ang_seed" + std::to_string(seed)).angular_mean);
    TrainConfig b = a;
    b.weights.lambda_ang = 0.0;
    without.push_back(train_and_eval(p, b, "l2_seed" + std::to_string(seed)).angular_mean);
  }
  const double ma = median_of(with_ang), mb = median_of(without);
  return {ma <= mb, fmt("median over seeds: L2+ang %.2f deg [%.2f %.2f %.2f], L2 %.2f deg [%.2f %.2f %.2f]", ma,
                        with_ang[0], with_ang[1], with_ang[2], mb, without[0], without[1], without[2])};
}

Verdict detail_identities() {
  // Random maps plus a generated surface paired with a rougher one.
  std::vector<std::pair<NormalMap, NormalMap>> pairs;
  for (std::uint64_t s = 0; s < 4; ++s) pairs.emplace_back(random_map(32, 24, 2 * s), random_map(32, 24, 2 * s + 1));
  pairs.emplace_back(generate_surface({SurfaceKind::GaussianBumps, 1.5, 3.0, 1}, 64).normals,
                     generate_surface({SurfaceKind::FractalNoise, 1.5, 2.0, 2}, 64).normals);
  double id_vs_g = 0.0, id_vs_y = 0.0, perfect = 0.0;
  for (const auto& [y, g] : pairs) {
    const NormalMap m = detail_map(y, g, {0.0, 13});
    id_vs_g = std::max(id_vs_g, max_component_diff(m, g));
    id_vs_y = std::max(id_vs_y, max_component_diff(m, y));
    perfect = std::max(perfect, max_component_diff(detail_map(y, y), y));
  }
  const bool first = id_vs_g <= kDetailTol, second = perfect <= kDetailTol;
  return {first && second,
          fmt("f=identity => M=G: max deviation %.3e (tol %.0e) %s; f(Y)+G-f(G) with f=identity reduces to Y, "
              "measured max |M-Y| %.2e; Y=G => M=Y: max deviation %.2e %s",
              id_vs_g, kDetailTol, first ? "ok" : "not met", id_vs_y, perfect, second ? "ok" : "not met")};
}

std::vector<nlohmann::json> read_log(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

Verdict determinism(const Protocol& p) {
  ensure_dataset(p);
  TrainConfig cfg = p.train;
  cfg.total_iterations = kResumeIterations;
  cfg.checkpoint_every = kResumeAt;
  const fs::path a = p.work / "det_a", b = p.work / "det_b", c = p.work / "det_resume";
  std::cerr << "  determinism runs\n";
  train(cfg, p.data(), a);
  train(cfg, p.data(), b);
  train(cfg, p.data(), c, {.resume = (a / checkpoint_name(kResumeAt)).string()});
  const bool identical = read_bytes(a / "losses.jsonl") == read_bytes(b / "losses.jsonl") &&
                         read_bytes(a / checkpoint_name(kResumeIterations)) ==
                             read_bytes(b / checkpoint_name(kResumeIterations));
  const auto full = read_log(a / "losses.jsonl"), resumed = read_log(c / "losses.jsonl");
  double worst = 0.0;
  bool aligned = full.size() == kResumeIterations && resumed.size() == kResumeIterations - kResumeAt;
  for (std::size_t i = 0; aligned && i < resumed.size(); ++i) {
    const auto& x = full[kResumeAt + i];
    const auto& y = resumed[i];
    aligned = x.at("iteration") == y.at("iteration");
    for (const auto& [k, v] : x.items())
      if (v.is_number()) worst = std::max(worst, std::abs(v.get<double>() - y.at(k).get<double>()));
  }
  return {identical && aligned && worst <= kResumeTol,
          fmt("two %llu-iteration runs %s; resume at %llu: %s, max log deviation %.2e (tol %.0e)",
              (unsigned long long)kResumeIterations, identical ? "byte-identical (log and checkpoint)" : "DIFFER",
              (unsigned long long)kResumeAt, aligned ? "iterations aligned" : "iterations misaligned", worst,
              kResumeTol)};
}

Verdict formats(const Protocol& p) {
  const fs::path dir = p.work / "formats";
  fs::create_directories(dir);
  std::vector<std::string> problems;

  // Normal-map PNG: stored components re-encode byte-identically; renormalized
  // read is within 16-bit quantization.
  const Surface s = generate_surface({SurfaceKind::Composite, 1.5, 2.5, 5}, 48);
  io::write_normal_png((dir / "n1.png").string(), s.normals);
  std::size_t w = 0, h = 0;
  const auto comps = io::read_normal_components((dir / "n1.png").string(), w, h);
  io::write_normal_components((dir / "n2.png").string(), w, h, comps);
  const bool png_bytes = read_bytes(dir / "n1.png") == read_bytes(dir / "n2.png");
  const double png_err = max_angle(s.normals, io::read_normal_png((dir / "n1.png").string()));
  const auto codec = decode_normals(encode_normals<float>(s.normals));
  const double codec_err = max_component_diff(codec.normals, s.normals);
  if (!png_bytes) problems.push_back("png re-encode differs");
  if (!(png_err <= kPngMaxDeg)) problems.push_back("png values");
  if (!(codec_err <= kCodecTol)) problems.push_back("tensor codec");

  // Checkpoint: save, load into a fresh state, save again.
  TrainConfig cfg = p.train;
  TrainingState<float> st = make_training_state<float>(cfg);
  save_checkpoint((dir / "a.bin").string(), st, to_json(cfg).dump());
  TrainingState<float> st2 = make_training_state<float>(cfg);
  load_checkpoint((dir / "a.bin").string(), st2);
  save_checkpoint((dir / "b.bin").string(), st2, to_json(cfg).dump());
  const bool ckpt_bytes = read_bytes(dir / "a.bin") == read_bytes(dir / "b.bin");
  if (!ckpt_bytes) problems.push_back("checkpoint re-save differs");

  // OBJ: export, parse, compare.
  const DepthMap d = integrate_normals(s.normals);
  const Mesh m = build_mesh(d);
  export_mesh(d, (dir / "m.obj").string());
  const Mesh r = read_obj((dir / "m.obj").string());
  double obj_dev = r.vertices.size() == m.vertices.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; std::isfinite(obj_dev) && i < m.vertices.size(); ++i)
    obj_dev = std::max({obj_dev, std::abs(r.vertices[i].x - m.vertices[i].x),
                        std::abs(r.vertices[i].y - m.vertices[i].y), std::abs(r.vertices[i].z - m.vertices[i].z)});
  if (!(obj_dev <= kObjTol) || r.faces != m.faces) problems.push_back("obj");

  std::string joined;
  for (const auto& x : problems) joined += " " + x;
  return {problems.empty(),
          fmt("png re-encode %s, png max angular error %.2e deg (tol %.0e), tensor codec %.1e; checkpoint re-save %s; obj %zu "
              "vertices, max deviation %.1e (tol %.0e)%s",
              png_bytes ? "byte-identical" : "differs", png_err, kPngMaxDeg, codec_err, ckpt_bytes ? "byte-identical" : "differs",
              r.vertices.size(), obj_dev, kObjTol, joined.empty() ? "" : (", failing:" + joined).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string configs = NIRSFS_CONFIG_DIR, workdir, report;
  std::vector<int> only;
  bool strict = false, keep = false;
  app.add_option("--configs", configs, "Directory holding smoke_manifest.json and smoke_train.json");
  app.add_option("--workdir", workdir, "Scratch directory (default: a fresh temporary directory)");
  app.add_option("--report", report, "Also write the verdict lines to this file");
  app.add_option("--only", only, "Criteria to run")->check(CLI::Range(1, 9));
  app.add_flag("--strict", strict, "Exit 1 if any criterion fails");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  tune_allocator();
  Protocol p;
  try {
    p.manifest = manifest_from_json(read_json(fs::path(configs) / "smoke_manifest.json"));
    p.train = train_config_from_json(read_json(fs::path(configs) / "smoke_train.json"));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  const bool temp = workdir.empty();
  p.work = temp ? fs::temp_directory_path() / ("nirsfs_acceptance_" + std::to_string(::getpid())) : fs::path(workdir);
  fs::create_directories(p.work);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradients},
      {"photometric stereo round trip", photometric_round_trip},
      {"integrability coherence", integrability},
      {"integration round trip", integration_round_trip},
      {"training smoke test", [&] { return smoke(p); }},
      {"loss-term ordering", [&] { return ordering(p); }},
      {"detail-map identities", detail_identities},
      {"determinism and resume", [&] { return determinism(p); }},
      {"format round trips", [&] { return formats(p); }},
  };
  std::ofstream report_file;
  if (!report.empty()) {
    report_file.open(report, std::ios::trunc);
    if (!report_file) {
      std::cerr << "error: cannot write " << report << '\n';
      return 3;
    }
  }
  auto say = [&](const std::string& line) {
    std::cout << line << std::endl;
    if (report_file) report_file << line << std::endl;
  };
  int passed = 0, run = 0;
  std::string failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    ++run;
    passed += v.pass;
    if (!v.pass) failed += " " + std::to_string(id);
    say(std::string(v.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + " (" + criteria[i].first +
        "): " + v.detail);
  }
  say("summary: " + std::to_string(passed) + "/" + std::to_string(run) + " pass" +
      (failed.empty() ? "" : "; failing:" + failed));
  if (temp && !keep) fs::remove_all(p.work);
  return strict && passed != run ? 1 : 0;
}
