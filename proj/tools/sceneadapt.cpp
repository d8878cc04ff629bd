// Command-line front end: gen, train, eval, ablate, report.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 I/O error,
// 3 data or checkpoint error, 4 numeric or internal failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sceneadapt/experiments.hpp"

namespace sa = sceneadapt;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string out;
  std::size_t jobs = 1;
};

void add_common(CLI::App* app, Common& c, bool with_jobs = true) {
  app->add_option("--config", c.config, "JSON configuration file");
  app->add_option("--seed", c.seed, "Seed (overrides the configuration)");
  app->add_option("--set", c.sets, "Override a configuration key: key=value (repeatable)");
  app->add_option("--out", c.out, "Output directory (SCENEADAPT_OUT takes precedence)");
  if (with_jobs) app->add_option("--jobs", c.jobs, "Parallel workers")->check(CLI::PositiveNumber);
}

// SCENEADAPT_OUT, then --out, then `fallback`.
std::string output_dir(const Common& c, const std::string& fallback) {
  if (const char* env = std::getenv("SCENEADAPT_OUT"); env && *env) return env;
  return c.out.empty() ? fallback : c.out;
}

std::optional<sa::fs::path> config_path(const Common& c) {
  if (c.config.empty()) return std::nullopt;
  return sa::fs::path(c.config);
}

sa::ExperimentConfig experiment_config(const Common& c) {
  auto cfg = sa::resolve_experiment_config(config_path(c), c.sets, c.seed);
  cfg.out = output_dir(c, cfg.out);
  return cfg;
}

std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < count; ++i) s.push_back(first + i);
  return s;
}

void print_result(const sa::RunResult& r) {
  std::cout << sa::run_name(r.config) << ": target " << r.config.target << " m_iou "
            << sa::format_metric(r.target_test.m_iou.mean) << " c_acc " << sa::format_metric(r.target_test.c_acc.mean)
            << " | source " << r.config.source << " m_iou " << sa::format_metric(r.source_test.m_iou.mean) << "\n";
}

int cmd_gen(const Common& c) {
  sa::ConfigSource src = c.config.empty() ? sa::ConfigSource{} : sa::load_config_file(c.config);
  for (const auto& o : c.sets) sa::apply_override(src.doc, o);
  if (c.seed) src.doc["seed"] = *c.seed;
  const sa::GenConfig g = sa::parse_gen_config(src);
  const sa::fs::path out = output_dir(c, "data");
  const auto m = sa::generate_dataset(g, out, c.jobs);
  std::cout << "wrote " << m.frames.size() << " frames to " << (out / "manifest.json").string() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& matrix, std::size_t seeds) {
  const auto base = experiment_config(c);
  if (matrix.empty()) {
    print_result(sa::run_experiment(base, base.out));
    return 0;
  }
  const sa::fs::path root = base.out;
  const auto seed_values = seed_list(base.seed, seeds);
  std::vector<sa::MatrixEntry> entries;
  if (matrix == "view")
    entries = sa::expand(base, {sa::Method::NA, sa::Method::WARP, sa::Method::SceneAdapt, sa::Method::FT},
                         sa::view_pairs(), seed_values, root);
  else if (matrix == "scene")
    entries = sa::expand(base, {sa::Method::NA, sa::Method::SceneAdapt, sa::Method::FT}, sa::scene_pairs(),
                         seed_values, root);
  else if (matrix == "source")
    entries = sa::source_domain_matrix(base, seed_values, root);
  else
    throw sa::ConfigError("field 'matrix': unknown matrix '" + matrix + "' (expected view, scene or source)");
  sa::ensure_directory(root);
  sa::atomic_write(root / "base_config.json", sa::config_to_json(base).dump(2) + "\n");
  std::vector<sa::fs::path> dirs;
  for (const auto& e : entries) dirs.push_back(e.out_dir);
  sa::run_matrix(entries, c.jobs, print_result);
  for (const auto& f : sa::write_report(sa::read_runs(dirs), root)) std::cout << "wrote " << f.string() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& dataset, const std::string& subset,
             const std::string& split) {
  if (split != "train" && split != "val" && split != "test")
    throw sa::ConfigError("field 'split': expected train, val or test, got '" + split + "'");
  sa::fs::path manifest_path = dataset;
  if (sa::fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  const auto m = sa::load_manifest(manifest_path);
  if (!m.has_subset(subset)) throw sa::ConfigError("field 'subset': subset " + subset + " is not in the dataset");
  const auto r = sa::evaluate(sa::fs::path(checkpoint), m, subset, split);
  const std::string csv = sa::metrics_csv(m.classes, r.confusion);
  const std::string out = output_dir(c, "");
  if (!out.empty()) {
    sa::ensure_directory(out);
    sa::atomic_write(sa::fs::path(out) / ("eval_" + subset + "_" + split + ".csv"), csv);
  }
  std::cout << csv;
  return 0;
}

int cmd_ablate(const Common& c, std::size_t seeds) {
  auto base = experiment_config(c);
  if (base.supervised()) throw sa::ConfigError("field 'method': ablate expands SceneAdapt runs, got " + sa::to_string(base.method));
  const sa::fs::path root = base.out;
  const auto entries = sa::ablation_matrix(base, seed_list(base.seed, seeds), root);
  sa::ensure_directory(root);
  sa::atomic_write(root / "base_config.json", sa::config_to_json(base).dump(2) + "\n");
  std::vector<sa::fs::path> dirs;
  for (const auto& e : entries) dirs.push_back(e.out_dir);
  sa::run_matrix(entries, c.jobs, print_result);
  const auto runs = sa::read_runs(dirs);
  sa::atomic_write(root / "ablation.csv", sa::ablation_table(runs));
  std::cout << sa::ablation_table(runs);
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs) {
  std::vector<sa::fs::path> dirs;
  for (const auto& in : inputs) {
    const auto found = sa::find_runs(in);
    if (found.empty()) throw sa::DataError("no run results under " + in);
    dirs.insert(dirs.end(), found.begin(), found.end());
  }
  for (const auto& f : sa::write_report(sa::read_runs(dirs), output_dir(c, "report")))
    std::cout << "wrote " << f.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale segmentation domain adaptation lab"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, ablate_opts, report_opts;
  auto* gen = app.add_subcommand("gen", "Generate the synthetic multi-view dataset");
  add_common(gen, gen_opts);

  auto* train = app.add_subcommand("train", "Train one run, or a matrix of runs");
  add_common(train, train_opts);
  std::string matrix;
  std::size_t train_seeds = 1;
  train->add_option("--matrix", matrix, "Run a pair matrix: view, scene or source");
  train->add_option("--seeds", train_seeds, "Number of consecutive seeds per matrix entry")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  add_common(eval, eval_opts, false);
  std::string checkpoint, dataset = "data", subset, split = "test";
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--dataset", dataset, "Dataset directory or manifest");
  eval->add_option("--subset", subset, "Subset id, e.g. B1")->required();
  eval->add_option("--split", split, "train, val or test");

  auto* ablate = app.add_subcommand("ablate", "Run the loss ablation for a view pair and a scene pair");
  add_common(ablate, ablate_opts);
  std::size_t ablate_seeds = 1;
  ablate->add_option("--seeds", ablate_seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Merge finished runs into per-class tables");
  add_common(report, report_opts, false);
  std::vector<std::string> inputs;
  report->add_option("runs", inputs, "Run directories or directories containing runs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(gen_opts);
    if (*train) return cmd_train(train_opts, matrix, train_seeds);
    if (*eval) return cmd_eval(eval_opts, checkpoint, dataset, subset, split);
    if (*ablate) return cmd_ablate(ablate_opts, ablate_seeds);
    if (*report) return cmd_report(report_opts, inputs);
  } catch (const sa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const sa::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const sa::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const sa::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
