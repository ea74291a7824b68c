// Command-line front end: generate-data, train, eval, infer, benchmark.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpft/commands.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("-c,--config", common.config_path, "Run configuration file (key = value lines)");
  cmd->add_option("-s,--set", common.overrides, "Override a config key, e.g. --set train.lr=0.0001")
      ->allow_extra_args(false);
}

// defaults < config file < DPFT_DATA_ROOT < --set overrides
dpft::RunConfig resolve_config(const Common& common) {
  dpft::RunConfig config;
  if (!common.config_path.empty()) config = dpft::load_config(common.config_path);
  if (const char* root = std::getenv(dpft::kDataRootEnv); root && *root) config.data_root = root;
  dpft::apply_overrides(config, common.overrides);
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera + 4D radar query-based fusion detector"};
  app.require_subcommand(1);

  Common gen_common, train_common, eval_common, infer_common, bench_common;

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic dataset");
  add_common(gen, gen_common);
  std::string gen_out;
  std::optional<int> gen_count;
  std::optional<std::uint64_t> gen_seed;
  bool gen_force = false;
  gen->add_option("-o,--out", gen_out, "Output directory (default: paths.data_root)");
  gen->add_option("-n,--count", gen_count, "Number of scenes (default: data.count)")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "Root seed (default: seed)");
  gen->add_flag("-f,--force", gen_force, "Replace a non-empty output directory");

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, train_common);
  std::string train_data, train_out, train_resume, train_modalities;
  train->add_option("-d,--data", train_data, "Dataset directory (default: paths.data_root)");
  train->add_option("-o,--out", train_out, "Run directory (default: paths.output_dir)");
  train->add_option("--resume", train_resume, "Continue from this checkpoint");
  train->add_option("-m,--modalities", train_modalities, "Input set: C, R, RA, AE, C+RA, C+AE, C+R");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, eval_common);
  std::string eval_ckpt, eval_data, eval_out, eval_fail = "none", eval_label = "model";
  eval->add_option("-k,--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("-d,--data", eval_data, "Dataset directory (default: paths.data_root)");
  eval->add_option("-o,--out", eval_out, "Report directory (default: <paths.output_dir>/eval)");
  eval->add_option("--fail-modality", eval_fail, "Zero one input: none, camera or radar")
      ->check(CLI::IsMember({"none", "camera", "radar"}));
  eval->add_option("--label", eval_label, "Row label in the CSV report");

  auto* infer = app.add_subcommand("infer", "Write detections as JSON");
  add_common(infer, infer_common);
  std::string infer_ckpt, infer_data, infer_out;
  double infer_min_score = 0.05;
  infer->add_option("-k,--checkpoint", infer_ckpt, "Checkpoint file")->required();
  infer->add_option("-d,--data", infer_data, "Dataset or scene directory (default: paths.data_root)");
  infer->add_option("-o,--out", infer_out, "Output JSON file (default: stdout)");
  infer->add_option("--min-score", infer_min_score, "Drop detections below this score");

  auto* bench = app.add_subcommand("benchmark", "Time forward passes on one frame");
  add_common(bench, bench_common);
  std::string bench_ckpt, bench_scene;
  std::optional<int> bench_runs, bench_warmup;
  bench->add_option("-k,--checkpoint", bench_ckpt, "Checkpoint file (default: freshly initialised model)");
  bench->add_option("--scene", bench_scene, "Scene directory (default: a synthesised scene)");
  bench->add_option("-r,--runs", bench_runs, "Timed runs (default: benchmark.runs)")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", bench_warmup, "Untimed warm-up runs (default: benchmark.warmup)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    nlohmann::json result;
    if (*gen) {
      dpft::RunConfig config = resolve_config(gen_common);
      dpft::GenerateOptions opt;
      opt.out = gen_out.empty() ? config.data_root : gen_out;
      opt.count = gen_count.value_or(config.data_count);
      opt.seed = gen_seed.value_or(config.seed);
      opt.force = gen_force;
      result = dpft::generate_dataset(config, opt);
    } else if (*train) {
      dpft::RunConfig config = resolve_config(train_common);
      if (!train_modalities.empty()) {
        config.model.sensors = dpft::parse_modalities(train_modalities);
        config.validate();
      }
      dpft::TrainOptions opt;
      opt.data = train_data.empty() ? config.data_root : train_data;
      opt.out = train_out.empty() ? config.output_dir : train_out;
      if (!train_resume.empty()) opt.resume = train_resume;
      result = dpft::run_training(config, opt);
    } else if (*eval) {
      dpft::RunConfig config = resolve_config(eval_common);
      dpft::EvalOptions opt;
      opt.checkpoint = eval_ckpt;
      opt.data = eval_data.empty() ? config.data_root : eval_data;
      opt.out = eval_out.empty() ? std::filesystem::path(config.output_dir) / "eval" : std::filesystem::path(eval_out);
      opt.failure = dpft::parse_failure(eval_fail);
      opt.label = eval_label;
      result = dpft::run_evaluation(config, opt);
    } else if (*infer) {
      dpft::RunConfig config = resolve_config(infer_common);
      dpft::InferOptions opt;
      opt.checkpoint = infer_ckpt;
      opt.data = infer_data.empty() ? config.data_root : infer_data;
      opt.out = infer_out;
      opt.min_score = infer_min_score;
      result = dpft::run_inference_command(config, opt);
      if (!infer_out.empty()) result = {{"out", infer_out}, {"frames", result["frames"].size()}};
    } else if (*bench) {
      dpft::RunConfig config = resolve_config(bench_common);
      dpft::BenchmarkOptions opt;
      if (!bench_ckpt.empty()) opt.checkpoint = bench_ckpt;
      if (!bench_scene.empty()) opt.scene = bench_scene;
      opt.runs = bench_runs.value_or(config.benchmark_runs);
      opt.warmup = bench_warmup.value_or(config.benchmark_warmup);
      result = dpft::run_benchmark(config, opt);
    }
    std::cout << result.dump(2) << std::endl;
    return 0;
  } catch (const dpft::ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}
