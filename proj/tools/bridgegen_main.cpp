// Command-line front end: selfcheck, make-data, train, sample, eval.
// Exit codes: 0 success, 1 validation/check failure, 2 I/O failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bridgegen/bridgegen.hpp"

namespace fs = std::filesystem;
using namespace bridgegen;

namespace {

Tensor read_data_tensor(const std::string& path) {
  fs::path p(path);
  if (p.extension() == ".pgm") return read_pgm(path);
  if (p.extension() == ".ppm") return read_ppm(path);
  return load_tensor(path);
}

void write_data_tensor(const std::string& path, const Tensor& t) {
  fs::path p(path);
  if (p.extension() == ".pgm") {
    write_pgm(path, t);
  } else if (p.extension() == ".ppm") {
    write_ppm(path, t);
  } else {
    save_tensor(path, t);
  }
}

// Condition grammar: "none" | "label:<int>" | "mask:<file.pgm>" |
// "semantic:<file.pgm>". Map files are 8-bit PGMs whose raw pixel values
// are class ids (a layout mask uses ids 0 and 1).
ConditionPayload parse_condition(const std::string& spec, const CondEncoderConfig& cfg) {
  if (spec == "none") return ConditionPayload::make_none();
  auto colon = spec.find(':');
  if (colon == std::string::npos || colon + 1 == spec.size())
    throw ValueError("bad condition spec '" + spec +
                     "'; expected none, label:<int>, mask:<file> or semantic:<file>");
  std::string kind = spec.substr(0, colon);
  std::string arg = spec.substr(colon + 1);
  if (kind == "label") {
    int v = 0;
    try {
      std::size_t used = 0;
      v = std::stoi(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
    } catch (const std::exception&) {
      throw ValueError("bad label value '" + arg + "'");
    }
    return ConditionPayload::make_label(v);
  }
  if (kind == "mask") return ConditionPayload::make_layout(read_pgm_labels(arg));
  if (kind == "semantic")
    return ConditionPayload::make_semantic(read_pgm_labels(arg), cfg.num_classes);
  throw ValueError("unknown condition kind '" + kind + "'");
}

int cmd_selfcheck(bool flip) {
  SelfcheckOptions opts;
  opts.flip_ceps_sign = flip;
  bool all = true;
  for (const CheckResult& r : run_selfcheck(opts)) {
    std::printf("[%s] %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    all = all && r.pass;
  }
  return all ? 0 : 1;
}

int cmd_make_data(const std::string& task, std::size_t n, const std::string& out,
                  std::uint64_t seed, std::size_t height, std::size_t width, double noise) {
  RngState rng{seed, 0};
  std::vector<PairedSample> data;
  if (task == "points") {
    data = make_pointcloud_dataset(n, rng);
  } else if (task == "scenes") {
    data = make_scene_dataset(n, height, width, rng, noise);
  } else {
    throw ValueError("unknown task '" + task + "'; expected points or scenes");
  }
  write_dataset(out, data);
  std::printf("wrote %zu %s records to %s\n", data.size(), task.c_str(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume_path,
              const std::string& data_path, const std::string& out_dir) {
  std::vector<PairedSample> data = read_dataset(data_path);
  TrainState st;
  if (!resume_path.empty()) {
    st = load_checkpoint(resume_path);
    std::printf("resuming from %s at step %llu\n", resume_path.c_str(),
                static_cast<unsigned long long>(st.step));
  } else {
    TrainConfig cfg = load_train_config(config_path);
    st = make_train_state(cfg, data);
  }
  std::vector<LatentSample> latents = encode_dataset(st.codec, data);
  run_training(st, latents, out_dir, &std::cout);
  std::printf("finished at step %llu; checkpoint in %s\n",
              static_cast<unsigned long long>(st.step), out_dir.c_str());
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& pre_path,
               const std::string& cond_spec, int steps, bool stochastic, std::uint64_t seed,
               const std::string& out_path) {
  TrainState st = load_checkpoint(ckpt_path);
  Tensor pre = read_data_tensor(pre_path);
  Tensor z_a = codec_encode(st.codec, pre);
  ConditionPayload cond = parse_condition(cond_spec, st.model.cond.cfg);
  ConditionTokens tokens = encode_condition(st.model.cond, cond);
  int S = steps > 0 ? steps : std::max(1, st.cfg.T / 5);
  RngState rng{seed, 0};
  DenoiserFn fn = make_denoiser_fn(st.model.den);
  SampleTrace trace = sample(st.sched, fn, z_a, tokens, S, stochastic, rng);
  Tensor post = codec_decode(st.codec, trace.result());
  write_data_tensor(out_path, post);
  std::printf("sampled %d steps -> %s\n", S, out_path.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& out,
             std::size_t n, int steps, std::uint64_t seed, double threshold, bool stochastic) {
  TrainState st = load_checkpoint(ckpt_path);
  std::vector<PairedSample> data = read_dataset(data_path);
  if (n == 0 || n > data.size()) n = data.size();
  int S = steps > 0 ? steps : std::max(1, st.cfg.T / 5);
  RngState rng{seed, 0};
  DenoiserFn fn = make_denoiser_fn(st.model.den);

  std::vector<Tensor> pres, gens;
  std::vector<int> labels;
  double iou_sum = 0.0;
  std::size_t iou_count = 0;
  CondKind kind = data[0].cond.kind;
  for (std::size_t i = 0; i < n; ++i) {
    const PairedSample& s = data[i];
    if (s.cond.kind != kind) throw ValueError("eval: dataset mixes condition kinds");
    Tensor z_a = codec_encode(st.codec, s.pre);
    ConditionTokens tokens = encode_condition(st.model.cond, s.cond);
    SampleTrace trace = sample(st.sched, fn, z_a, tokens, S, stochastic, rng);
    Tensor gen = codec_decode(st.codec, trace.result());
    if (kind == CondKind::label) {
      pres.push_back(s.pre);
      gens.push_back(gen);
      labels.push_back(s.cond.label);
    } else if (kind == CondKind::layout || kind == CondKind::semantic) {
      iou_sum += layout_iou(gen, s.pre, s.cond.map, threshold);
      ++iou_count;
    }
  }

  nlohmann::json report;
  report["checkpoint"] = ckpt_path;
  report["data"] = data_path;
  report["kind"] = cond_kind_name(kind);
  report["n"] = n;
  report["steps"] = S;
  if (kind == CondKind::label) {
    report["mode_accuracy"] = mode_accuracy(pres, gens, labels);
    // Reference posts from records not used for generation, when available.
    std::vector<Tensor> real;
    for (std::size_t i = n; i < std::min(data.size(), 2 * n); ++i) real.push_back(data[i].post);
    if (real.size() < 2)
      for (std::size_t i = 0; i < n; ++i) real.push_back(data[i].post);
    double bw = median_heuristic_bandwidth(gens, real);
    report["mmd_bandwidth"] = bw;
    report["mmd_gen_vs_real"] = mmd_squared(gens, real, bw);
    report["mmd_pre_vs_real"] = mmd_squared(pres, real, bw);
  } else if (iou_count > 0) {
    report["mean_layout_iou"] = iou_sum / static_cast<double>(iou_count);
    report["iou_threshold"] = threshold;
  }

  std::ofstream os(out);
  if (!os) throw IoError("cannot open for writing: " + out);
  os << report.dump(2) << "\n";
  os.flush();
  if (!os) throw IoError("write failed: " + out);
  std::printf("%s\n", report.dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional bridge generation toolkit"};
  app.require_subcommand(1);

  auto* sc_selfcheck = app.add_subcommand("selfcheck", "run the internal consistency battery");
  bool flip = false;
  sc_selfcheck->add_flag("--inject-ceps-signflip", flip)->group("");  // fault-injection hook

  auto* sc_make = app.add_subcommand("make-data", "generate a synthetic paired dataset");
  std::string task, out_path;
  std::size_t count = 1000, height = 16, width = 16;
  std::uint64_t seed = 1;
  double noise = 0.05;
  sc_make->add_option("--task", task, "points or scenes")->required();
  sc_make->add_option("--n", count, "record count");
  sc_make->add_option("--out", out_path, "output dataset file")->required();
  sc_make->add_option("--seed", seed, "generator seed");
  sc_make->add_option("--height", height, "scene height");
  sc_make->add_option("--width", width, "scene width");
  sc_make->add_option("--noise", noise, "scene pixel noise");

  auto* sc_train = app.add_subcommand("train", "train a model");
  std::string config_path, data_path, train_out, resume_path;
  sc_train->add_option("--config", config_path, "training config JSON");
  sc_train->add_option("--data", data_path, "dataset file")->required();
  sc_train->add_option("--out", train_out, "output directory")->required();
  sc_train->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* sc_sample = app.add_subcommand("sample", "generate a post-event tensor from a pre-event input");
  std::string ckpt_path, pre_path, cond_spec = "none", sample_out;
  int steps = 0;
  bool stochastic = false;
  std::uint64_t sample_seed = 7;
  sc_sample->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  sc_sample->add_option("--pre", pre_path, "pre-event input (.pgm/.ppm/tensor)")->required();
  sc_sample->add_option("--cond", cond_spec,
                        "condition: none | label:<int> | mask:<file.pgm> | semantic:<file.pgm>");
  sc_sample->add_option("--steps", steps, "reverse steps (default T/5)");
  sc_sample->add_flag("--stochastic", stochastic, "add posterior noise during sampling");
  sc_sample->add_option("--seed", sample_seed, "sampler seed");
  sc_sample->add_option("--out", sample_out, "output path")->required();

  auto* sc_eval = app.add_subcommand("eval", "sample over a dataset and score it");
  std::string eval_ckpt, eval_data, eval_out;
  std::size_t eval_n = 0;
  int eval_steps = 0;
  std::uint64_t eval_seed = 11;
  double threshold = 0.3;
  bool eval_stochastic = false;
  sc_eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  sc_eval->add_option("--data", eval_data, "evaluation dataset")->required();
  sc_eval->add_option("--out", eval_out, "report JSON path")->required();
  sc_eval->add_option("--n", eval_n, "records to evaluate (default all)");
  sc_eval->add_option("--steps", eval_steps, "reverse steps (default T/5)");
  sc_eval->add_option("--seed", eval_seed, "sampler seed");
  sc_eval->add_option("--threshold", threshold, "change threshold for layout IoU");
  sc_eval->add_flag("--stochastic", eval_stochastic, "add posterior noise during sampling");

  try {
    app.parse(argc, argv);
    if (sc_selfcheck->parsed()) return cmd_selfcheck(flip);
    if (sc_make->parsed()) return cmd_make_data(task, count, out_path, seed, height, width, noise);
    if (sc_train->parsed()) {
      if (config_path.empty() == resume_path.empty())
        throw ValueError("train needs exactly one of --config or --resume");
      return cmd_train(config_path, resume_path, data_path, train_out);
    }
    if (sc_sample->parsed())
      return cmd_sample(ckpt_path, pre_path, cond_spec, steps, stochastic, sample_seed,
                        sample_out);
    if (sc_eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_out, eval_n, eval_steps, eval_seed, threshold,
                      eval_stochastic);
    return 0;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
