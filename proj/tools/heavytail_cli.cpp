// Command-line front end: synthetic dataset generation, training,
// evaluation, method comparison, component ablation and embedding export.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "heavytail/heavytail.hpp"

namespace fs = std::filesystem;
using namespace heavytail;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "runs";
  std::vector<std::uint64_t> seeds{1};
};

Config load_config(const CommonArgs& args) {
  Config cfg;
  if (!args.config_path.empty()) cfg = Config::from_file(args.config_path);
  cfg.apply_overrides(args.overrides);
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_seed = true) {
  cmd->add_option("--config", args.config_path,
                  "Configuration file (key=value with [sections])");
  cmd->add_option("--set", args.overrides,
                  "Override a config key, e.g. --set train.lr=0.05")
      ->take_all();
  cmd->add_option("--out", args.out_dir, "Output directory");
  if (with_seed) {
    cmd->add_option("--seed", args.seeds, "Seed list, e.g. --seed 1,2,3")
        ->delimiter(',');
  }
}

void print_histogram(const LongTailDataset& ds, std::ostream& out) {
  const std::size_t max_count = ds.n_max();
  out << "classes: " << ds.num_classes() << ", examples: " << ds.size()
      << ", N_max/N_min: " << ds.n_max() << "/" << ds.n_min() << "\n";
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    const std::size_t n = ds.count(c);
    const std::size_t bar =
        max_count == 0 ? 0 : (n * 50 + max_count - 1) / max_count;
    out << "class " << c << ": " << n << " " << std::string(bar, '#') << "\n";
  }
}

fs::path run_dir(const std::string& out, const std::string& method,
                 std::uint64_t seed) {
  return fs::path(out) / method / std::to_string(seed);
}

HeadTailPartition partition_from_config(const LongTailDataset& train,
                                        const TrainConfig& tc) {
  std::size_t k = tc.partition_threshold;
  if (tc.partition_rule == PartitionRule::CountThreshold && k == 0) {
    k = static_cast<std::size_t>(std::llround(
        std::sqrt(static_cast<double>(train.n_min()) *
                  static_cast<double>(train.n_max()))));
  }
  return partition_head_tail(train, tc.partition_rule, k);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << text;
}

void save_run(const TrainResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  save_checkpoint(result.model, (dir / "checkpoint.ckpt").string());
  save_run_record(result.record, (dir / "run_record.jsonl").string());
}

EvalReport evaluate_and_save(const Model& model, const LongTailDataset& test,
                             const HeadTailPartition& part,
                             const std::string& label, std::uint64_t seed,
                             const fs::path& dir) {
  EvalReport report = evaluate(model, test, part, label, {seed});
  fs::create_directories(dir);
  write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(dir / "report.txt", render_comparison({report}));
  return report;
}

// Independent runs; one thread each when jobs > 1. Results keep input order.
void run_jobs(std::vector<std::function<void()>>& jobs,
              unsigned jobs_in_flight) {
  if (jobs_in_flight <= 1) {
    for (auto& j : jobs) j();
    return;
  }
  std::size_t next = 0;
  while (next < jobs.size()) {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs_in_flight && next < jobs.size();
         ++t, ++next) {
      pool.emplace_back(jobs[next]);
    }
    for (auto& th : pool) th.join();
  }
}

int cmd_generate(const CommonArgs& args, const std::string& out_file) {
  const Config cfg = load_config(args);
  const GenerateParams p = generate_params_from(cfg);
  SyntheticOpts opts;
  opts.separation = p.separation;
  opts.cluster_seed = p.cluster_seed;
  const LongTailDataset ds = generate_synthetic(
      p.num_classes, p.n_max, p.imbalance_factor, p.feature_dim, p.seed, opts);
  const fs::path out(out_file);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(ds, out_file);
  print_histogram(ds, std::cout);
  std::cout << "wrote " << out_file << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_path,
              const std::string& method) {
  const Config cfg = load_config(args);
  const LongTailDataset ds = load_dataset(data_path);
  TrainConfig tc = train_config_from(cfg);
  if (!method.empty()) tc.method = method_from_name(method);
  for (std::uint64_t seed : args.seeds) {
    tc.seed = seed;
    TrainResult result = train(ds, tc);
    const fs::path dir = run_dir(args.out_dir, tc.method_label(), seed);
    save_run(result, dir);
    std::cout << "trained " << tc.method_label() << " seed " << seed << " -> "
              << dir.string() << "\n";
  }
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             const std::string& test_path, const std::string& train_path) {
  const Config cfg = load_config(args);
  const TrainConfig tc = train_config_from(cfg);
  const Model model = load_checkpoint(checkpoint);
  const LongTailDataset test = load_dataset(test_path);
  const LongTailDataset train_ds = load_dataset(train_path);
  const HeadTailPartition part = partition_from_config(train_ds, tc);
  const fs::path dir = args.out_dir.empty()
                           ? fs::path(checkpoint).parent_path()
                           : fs::path(args.out_dir);
  const EvalReport report =
      evaluate_and_save(model, test, part, "eval", tc.seed, dir);
  std::cout << render_comparison({report});
  return 0;
}

int cmd_compare(const CommonArgs& args, const std::string& train_path,
                const std::string& test_path, unsigned jobs) {
  const Config cfg = load_config(args);
  const LongTailDataset train_ds = load_dataset(train_path);
  const LongTailDataset test_ds = load_dataset(test_path);
  const TrainConfig base = train_config_from(cfg);
  const HeadTailPartition part = partition_from_config(train_ds, base);

  const std::vector<Method> methods{Method::BaselineCe, Method::Ros,
                                    Method::Rus, Method::Ours};
  struct Arm {
    TrainConfig tc;
    std::optional<EvalReport> report;
  };
  std::vector<Arm> arms;
  for (Method m : methods) {
    for (std::uint64_t seed : args.seeds) {
      TrainConfig tc = base;
      tc.method = m;
      tc.label.clear();
      tc.seed = seed;
      arms.push_back({tc, std::nullopt});
    }
  }
  std::vector<std::function<void()>> work;
  work.reserve(arms.size());
  for (auto& arm : arms) {
    work.push_back([&arm, &train_ds, &test_ds, &part, &args] {
      TrainResult result = train(train_ds, arm.tc);
      const fs::path dir =
          run_dir(args.out_dir, arm.tc.method_label(), arm.tc.seed);
      save_run(result, dir);
      arm.report = evaluate_and_save(result.model, test_ds, part,
                                     arm.tc.method_label(), arm.tc.seed, dir);
    });
  }
  run_jobs(work, jobs);
  std::vector<EvalReport> reports;
  reports.reserve(arms.size());
  for (auto& arm : arms) reports.push_back(std::move(*arm.report));
  const std::string table = render_comparison(reports);
  fs::create_directories(args.out_dir);
  write_text(fs::path(args.out_dir) / "comparison_table.txt", table);
  write_text(fs::path(args.out_dir) / "comparison_table.json",
             comparison_json(reports).dump(2) + "\n");
  std::cout << table;
  return 0;
}

int cmd_ablation(const CommonArgs& args, const std::string& train_path,
                 const std::string& test_path, unsigned jobs) {
  const Config cfg = load_config(args);
  const LongTailDataset train_ds = load_dataset(train_path);
  const LongTailDataset test_ds = load_dataset(test_path);
  const TrainConfig base = train_config_from(cfg);
  const HeadTailPartition part = partition_from_config(train_ds, base);

  struct ArmSpec {
    bool eis, cn, iloss;
    const char* label;
  };
  const std::vector<ArmSpec> specs{{false, false, false, "baseline"},
                                   {true, false, false, "eis"},
                                   {false, true, false, "cn"},
                                   {false, true, true, "cn_iloss"},
                                   {true, true, true, "eis_cn_iloss"}};
  struct Arm {
    ArmSpec spec;
    TrainConfig tc;
    std::optional<EvalReport> report;
  };
  std::vector<Arm> arms;
  for (const auto& spec : specs) {
    for (std::uint64_t seed : args.seeds) {
      TrainConfig tc = base;
      tc.method = Method::Ours;
      tc.eis = spec.eis;
      tc.cn = spec.cn;
      tc.iloss = spec.iloss;
      tc.label = spec.label;
      tc.seed = seed;  // shared initial weights per seed across arms
      arms.push_back({spec, tc, std::nullopt});
    }
  }
  std::vector<std::function<void()>> work;
  work.reserve(arms.size());
  for (auto& arm : arms) {
    work.push_back([&arm, &train_ds, &test_ds, &part, &args] {
      TrainResult result = train(train_ds, arm.tc);
      const fs::path dir =
          run_dir(args.out_dir, arm.tc.method_label(), arm.tc.seed);
      save_run(result, dir);
      arm.report = evaluate_and_save(result.model, test_ds, part,
                                     arm.tc.method_label(), arm.tc.seed, dir);
    });
  }
  run_jobs(work, jobs);

  std::vector<AblationRow> rows;
  std::vector<EvalReport> all_reports;
  for (const auto& spec : specs) {
    AblationRow row;
    row.eis = spec.eis;
    row.cn = spec.cn;
    row.iloss = spec.iloss;
    for (auto& arm : arms) {
      if (std::string(arm.spec.label) == spec.label) {
        row.reports.push_back(*arm.report);
        all_reports.push_back(*arm.report);
      }
    }
    rows.push_back(std::move(row));
  }
  const std::string table = render_ablation(rows);
  fs::create_directories(args.out_dir);
  write_text(fs::path(args.out_dir) / "ablation_table.txt", table);
  write_text(fs::path(args.out_dir) / "ablation_table.json",
             comparison_json(all_reports).dump(2) + "\n");
  std::cout << table;
  return 0;
}

int cmd_export_embeddings(const std::string& checkpoint,
                          const std::string& data_path,
                          const std::string& classes_csv,
                          const std::string& out_file) {
  const Model model = load_checkpoint(checkpoint);
  const LongTailDataset ds = load_dataset(data_path);
  std::set<int> filter;
  if (!classes_csv.empty()) {
    std::istringstream ss(classes_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      filter.insert(static_cast<int>(detail::parse_int(tok, 0)));
    }
  }
  const fs::path out(out_file);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  export_embeddings(model, ds, filter, out_file);
  std::cout << "wrote " << out_file << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-stage heavy-tailed classification workbench"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, cmp_args, abl_args;
  std::string gen_out = "dataset.ltds";
  std::string train_data, train_method;
  std::string eval_ckpt, eval_test, eval_train;
  std::string cmp_train, cmp_test, abl_train, abl_test;
  unsigned cmp_jobs = 1, abl_jobs = 1;
  std::string emb_ckpt, emb_data, emb_classes, emb_out = "embeddings.emb";

  auto* gen =
      app.add_subcommand("generate", "Generate a synthetic long-tail dataset");
  add_common(gen, gen_args, false);
  gen->add_option("--out-file", gen_out, "Output dataset file")
      ->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train one method");
  add_common(tr, train_args);
  tr->add_option("--data", train_data, "Training dataset file")->required();
  tr->add_option("--method", train_method,
                 "baseline_ce | ros | rus | ours (default from config)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, eval_args);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", eval_test, "Balanced test dataset")->required();
  ev->add_option("--train-data", eval_train,
                 "Training dataset (defines the head/tail split)")
      ->required();

  auto* cmp = app.add_subcommand(
      "compare", "Train and evaluate baseline_ce, ros, rus and ours");
  add_common(cmp, cmp_args);
  cmp->add_option("--train-data", cmp_train, "Training dataset")->required();
  cmp->add_option("--test-data", cmp_test, "Balanced test dataset")
      ->required();
  cmp->add_option("--jobs", cmp_jobs, "Parallel runs");

  auto* abl =
      app.add_subcommand("ablation", "Run the five EIS/CN/I-Loss toggle arms");
  add_common(abl, abl_args);
  abl->add_option("--train-data", abl_train, "Training dataset")->required();
  abl->add_option("--test-data", abl_test, "Balanced test dataset")
      ->required();
  abl->add_option("--jobs", abl_jobs, "Parallel runs");

  auto* emb = app.add_subcommand("export-embeddings",
                                 "Write normalized features with labels");
  emb->add_option("--checkpoint", emb_ckpt, "Checkpoint file")->required();
  emb->add_option("--data", emb_data, "Dataset file")->required();
  emb->add_option("--classes", emb_classes,
                  "Comma-separated class filter (default: all)");
  emb->add_option("--out-file", emb_out, "Output embedding file")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_args, gen_out);
    if (tr->parsed()) return cmd_train(train_args, train_data, train_method);
    if (ev->parsed())
      return cmd_eval(eval_args, eval_ckpt, eval_test, eval_train);
    if (cmp->parsed())
      return cmd_compare(cmp_args, cmp_train, cmp_test, cmp_jobs);
    if (abl->parsed())
      return cmd_ablation(abl_args, abl_train, abl_test, abl_jobs);
    if (emb->parsed()) {
      return cmd_export_embeddings(emb_ckpt, emb_data, emb_classes, emb_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
