// dsfec: analysis, inference, benchmarking, evaluation and synthetic data.
//
// Exit codes: 0 ok, 2 usage/config, 3 weights, 4 input data, 5 eval inputs,
// 6 I/O, 1 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dsfec/dsfec.hpp"

namespace fs = std::filesystem;
using namespace dsfec;

namespace {

struct ModelArgs {
  std::string preset;
  std::string config;
};

void add_model_args(CLI::App* cmd, ModelArgs& m) {
  auto* p = cmd->add_option("--preset", m.preset, "Model preset: baseline, dsfec-l, dsfec-m, dsfec-s");
  auto* c = cmd->add_option("--config", m.config, "Flat JSON config file (may name a \"preset\" to override)");
  p->excludes(c);
}

ModelConfig resolve_model(const ModelArgs& m) {
  if (!m.config.empty()) return load_config(m.config);
  if (!m.preset.empty()) return preset(m.preset);
  throw ConfigError("one of --preset or --config is required");
}

std::uint64_t parse_seed(const std::string& text, const char* source) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(std::string(source) + ": not an unsigned integer: '" + text + "'");
  return v;
}

/// --seed wins, then DSFEC_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::string>& flag) {
  if (flag) return parse_seed(*flag, "--seed");
  if (const char* env = std::getenv("DSFEC_SEED")) return parse_seed(env, "DSFEC_SEED");
  return 0;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("short write to '" + path + "'");
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty())
    std::cout << text;
  else
    write_text(path, text);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The exception of the
/// lowest failing index is rethrown so errors do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    int v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
      throw ConfigError(what + ": not an integer: '" + item + "'");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  ModelArgs model;
  std::string format = "text";
  std::string ablate;
  std::string out;
  bool summary = false;
  std::optional<int> grid_h, grid_w, pillars, points;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const ModelConfig config = resolve_model(a.model);
  const bool json = a.format == "json";
  if (!a.ablate.empty()) {
    const auto eq = a.ablate.find('=');
    if (eq == std::string::npos) throw ConfigError("--ablate: expected axis=v1,v2,...");
    const auto axis = parse_ablation_axis(a.ablate.substr(0, eq));
    const auto rows = ablation_report(config, axis, parse_int_list(a.ablate.substr(eq + 1), "--ablate"));
    emit(a.out, json ? ablation_to_json(config, axis, rows).dump(2) + "\n" : ablation_to_text(config, axis, rows));
    return 0;
  }
  InputDims dims = build_graph(config).dims;
  if (a.grid_h) dims.grid_h = *a.grid_h;
  if (a.grid_w) dims.grid_w = *a.grid_w;
  if (a.pillars) dims.pillars = *a.pillars;
  if (a.points) dims.points_per_pillar = *a.points;
  const auto report = analyze(config, dims);
  emit(a.out, json ? report_to_json(report, !a.summary).dump(2) + "\n" : report_to_text(report, !a.summary));
  return 0;
}

struct InferArgs {
  ModelArgs model;
  std::string weights;
  std::vector<std::string> inputs;
  std::string out;
  double score_threshold = 0.05;
  double iou_threshold = 0.3;
  bool global_nms = false;
  int jobs = 1;
};

int cmd_infer(const InferArgs& a) {
  const Detector det(resolve_model(a.model), load_weights(a.weights));
  const DetectOptions opt{a.score_threshold, a.iou_threshold, !a.global_nms};
  std::vector<FrameDetections> frames(a.inputs.size());
  parallel_for(a.inputs.size(), a.jobs, [&](std::size_t i) {
    const RadarFrame frame = read_frame_csv(a.inputs[i]);
    frames[i] = {fs::path(a.inputs[i]).stem().string(), det.detect(frame, opt)};
  });
  std::size_t count = 0;
  for (const auto& f : frames) count += f.detections.size();
  const std::string text = detections_to_json(frames).dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
    std::cerr << count << " detections\n";
  } else {
    write_text(a.out, text);
    std::cout << count << " detections written to " << a.out << "\n";
  }
  return 0;
}

struct BenchArgs {
  ModelArgs model;
  std::string weights;
  std::vector<std::string> inputs;
  int synthetic = 0;
  int reps = 1;
  int warmup = 1;
  std::optional<std::string> seed;
  std::string format = "text";
  int jobs = 1;
};

int cmd_bench(const BenchArgs& a) {
  const ModelConfig config = resolve_model(a.model);
  if (a.reps < 1) throw ConfigError("--reps must be >= 1");
  if (a.warmup < 0) throw ConfigError("--warmup must be >= 0");
  if (a.synthetic < 0) throw ConfigError("--synthetic must be >= 0");
  const std::uint64_t seed = resolve_seed(a.seed);
  const std::size_t n = a.inputs.size() + static_cast<std::size_t>(a.synthetic);
  if (n == 0) throw ConfigError("bench: no frames (use --synthetic N or --input)");
  const Detector det(config, a.weights.empty() ? init_weights(build_graph(config), seed) : load_weights(a.weights));
  // Frame preparation runs before, and outside, the timed section.
  std::vector<RadarFrame> frames(n);
  SceneSpec scene;
  scene.seed = seed;
  scene.grid = config.grid;
  scene.feature_count = config.point_features;
  parallel_for(n, a.jobs, [&](std::size_t i) {
    frames[i] = i < a.inputs.size() ? read_frame_csv(a.inputs[i])
                                    : generate_frame(scene, static_cast<int>(i - a.inputs.size())).frame;
  });
  const auto stats = benchmark(det, frames, a.warmup, a.reps);
  if (a.format == "json") {
    auto j = bench_to_json(stats);
    j["model"] = config.name;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "model      " << config.name << "\n"
              << "frames     " << stats.frames << "\n"
              << "reps       " << stats.reps << " (warmup " << stats.warmup << ")\n"
              << "runs       " << stats.runs << "\n"
              << "mean_ms    " << detail::fmt("%.3f", stats.mean_ms) << "\n"
              << "median_ms  " << detail::fmt("%.3f", stats.median_ms) << "\n"
              << "p95_ms     " << detail::fmt("%.3f", stats.p95_ms) << "\n"
              << "fps        " << detail::fmt("%.2f", stats.fps) << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string gt;
  std::string det;
  std::string format = "text";
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const auto gts = read_ground_truth(a.gt);
  const auto dets = read_detections(a.det);
  const auto r = evaluate(dets, gts);
  emit(a.out, a.format == "json" ? eval_to_json(r).dump(2) + "\n" : eval_to_text(r));
  return 0;
}

struct SynthArgs {
  std::optional<std::string> seed;
  int frames = 1;
  std::string out = ".";
  std::array<int, 4> objects = SceneSpec{}.objects;
  int clutter = SceneSpec{}.clutter_points;
  double min_separation = SceneSpec{}.min_separation;
  std::optional<double> oracle_noise;
};

int cmd_synth(const SynthArgs& a) {
  if (a.frames < 1) throw ConfigError("--frames must be >= 1");
  SceneSpec spec;
  spec.seed = resolve_seed(a.seed);
  spec.objects = a.objects;
  spec.clutter_points = a.clutter;
  spec.min_separation = a.min_separation;
  spec.validate();
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec || !fs::is_directory(a.out)) throw IoError("cannot create output directory '" + a.out + "'");
  std::vector<FrameGroundTruth> gts;
  std::vector<FrameDetections> oracle;
  for (int i = 0; i < a.frames; ++i) {
    const auto scene = generate_frame(spec, i);
    const std::string id = synth_frame_id(i);
    write_frame_csv((fs::path(a.out) / (id + ".csv")).string(), scene.frame);
    gts.push_back({id, scene.boxes});
    if (a.oracle_noise)
      oracle.push_back({id, oracle_detector(scene.boxes, {*a.oracle_noise, derive_seed(spec.seed, i), {}})});
  }
  write_text((fs::path(a.out) / "gt.json").string(), ground_truth_to_json(gts).dump(2) + "\n");
  if (a.oracle_noise)
    write_text((fs::path(a.out) / "oracle_dets.json").string(), detections_to_json(oracle).dump(2) + "\n");
  std::cout << a.frames << " frames written to " << a.out << "\n";
  return 0;
}

struct InitArgs {
  ModelArgs model;
  std::optional<std::string> seed;
  std::string out;
};

int cmd_init_weights(const InitArgs& a) {
  const ModelConfig config = resolve_model(a.model);
  const auto store = init_weights(build_graph(config), resolve_seed(a.seed));
  save_weights(a.out, store);
  std::cout << store.tensors().size() << " tensors written to " << a.out << "\n";
  return 0;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const WeightError*>(&e)) return 3;
  if (dynamic_cast<const InputError*>(&e)) return 4;
  if (dynamic_cast<const EvalError*>(&e)) return 5;
  if (dynamic_cast<const IoError*>(&e)) return 6;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar BEV detector toolkit: cost analysis, inference, benchmarking, evaluation, synthetic data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dsfec 0.1.0");

  AnalyzeArgs analyze_args;
  auto* analyze_cmd = app.add_subcommand("analyze", "Parameter, FLOP and activation-memory report");
  add_model_args(analyze_cmd, analyze_args.model);
  analyze_cmd->add_option("--format", analyze_args.format, "Output format")->check(CLI::IsMember({"text", "json"}));
  analyze_cmd->add_option("--ablate", analyze_args.ablate,
                          "Sweep one axis instead: stem_filters=32,16,12,8 or blocks_stage2=6,3");
  analyze_cmd->add_flag("--summary", analyze_args.summary, "Totals only, no per-layer rows");
  analyze_cmd->add_option("--grid-h", analyze_args.grid_h, "Pseudo-image rows (default: from the grid)");
  analyze_cmd->add_option("--grid-w", analyze_args.grid_w, "Pseudo-image columns (default: from the grid)");
  analyze_cmd->add_option("--pillars", analyze_args.pillars, "Pillar budget for the encoder (default: every cell)");
  analyze_cmd->add_option("--points-per-pillar", analyze_args.points, "Points per pillar (default: the config cap)");
  analyze_cmd->add_option("-o,--out", analyze_args.out, "Write here instead of stdout");

  InferArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer", "Run detection on radar frame CSV files");
  add_model_args(infer_cmd, infer_args.model);
  infer_cmd->add_option("--weights", infer_args.weights, "DSFW weight file")->required();
  infer_cmd->add_option("-i,--input", infer_args.inputs, "Frame CSV (repeatable; frame id = file stem)")->required();
  infer_cmd->add_option("-o,--out", infer_args.out, "Detections JSON path (default: stdout)");
  infer_cmd->add_option("--score-threshold", infer_args.score_threshold, "Minimum score kept, in [0,1]")
      ->capture_default_str();
  infer_cmd->add_option("--iou-threshold", infer_args.iou_threshold, "NMS IoU threshold, in (0,1]")
      ->capture_default_str();
  infer_cmd->add_flag("--global-nms", infer_args.global_nms, "Suppress across classes");
  infer_cmd->add_option("-j,--jobs", infer_args.jobs, "Frames processed in parallel")->capture_default_str();

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "End-to-end latency over a set of frames");
  add_model_args(bench_cmd, bench_args.model);
  bench_cmd->add_option("--weights", bench_args.weights, "DSFW weight file (default: seeded init)");
  bench_cmd->add_option("-i,--input", bench_args.inputs, "Frame CSV (repeatable)");
  bench_cmd->add_option("--synthetic", bench_args.synthetic, "Number of seeded synthetic frames to add");
  bench_cmd->add_option("--reps", bench_args.reps, "Timed passes over the frames")->capture_default_str();
  bench_cmd->add_option("--warmup", bench_args.warmup, "Untimed passes first")->capture_default_str();
  bench_cmd->add_option("--seed", bench_args.seed, "Seed for weights and frames (fallback: DSFEC_SEED, then 0)");
  bench_cmd->add_option("--format", bench_args.format, "Output format")->check(CLI::IsMember({"text", "json"}));
  bench_cmd->add_option("-j,--jobs", bench_args.jobs, "Threads for frame preparation (never timed)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Center-distance AP of detections against ground truth");
  eval_cmd->add_option("--gt", eval_args.gt, "Ground-truth JSON")->required();
  eval_cmd->add_option("--det", eval_args.det, "Detections JSON")->required();
  eval_cmd->add_option("--format", eval_args.format, "Output format")->check(CLI::IsMember({"text", "json"}));
  eval_cmd->add_option("-o,--out", eval_args.out, "Write here instead of stdout");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write seeded synthetic frames and their ground truth");
  synth_cmd->add_option("--seed", synth_args.seed, "Scene seed (fallback: DSFEC_SEED, then 0)");
  synth_cmd->add_option("--frames", synth_args.frames, "Frame count")->capture_default_str();
  synth_cmd->add_option("-o,--out", synth_args.out, "Output directory")->capture_default_str();
  synth_cmd->add_option("--cars", synth_args.objects[0], "Cars per frame")->capture_default_str();
  synth_cmd->add_option("--trucks", synth_args.objects[1], "Trucks per frame")->capture_default_str();
  synth_cmd->add_option("--pedestrians", synth_args.objects[2], "Pedestrians per frame")->capture_default_str();
  synth_cmd->add_option("--bicycles", synth_args.objects[3], "Bicycles per frame")->capture_default_str();
  synth_cmd->add_option("--clutter", synth_args.clutter, "Clutter points per frame")->capture_default_str();
  synth_cmd->add_option("--min-separation", synth_args.min_separation, "Minimum object center distance, m")
      ->capture_default_str();
  synth_cmd->add_option("--oracle-noise", synth_args.oracle_noise,
                        "Also write oracle_dets.json: GT boxes shifted by this many meters");

  InitArgs init_args;
  auto* init_cmd = app.add_subcommand("init-weights", "Write deterministic untrained weights");
  add_model_args(init_cmd, init_args.model);
  init_cmd->add_option("--seed", init_args.seed, "Seed (fallback: DSFEC_SEED, then 0)");
  init_cmd->add_option("-o,--out", init_args.out, "Weight file path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*analyze_cmd) return cmd_analyze(analyze_args);
    if (*infer_cmd) return cmd_infer(infer_args);
    if (*bench_cmd) return cmd_bench(bench_args);
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*synth_cmd) return cmd_synth(synth_args);
    if (*init_cmd) return cmd_init_weights(init_args);
  } catch (const std::exception& e) {
    std::cerr << "dsfec: " << e.what() << "\n";
    return exit_code(e);
  }
  return 2;
}
