#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>
#include <vector>

#include "eqsplit/checkpoint.hpp"
#include "eqsplit/experiment.hpp"
#include "eqsplit/qanalysis.hpp"
#include "eqsplit/verify.hpp"

namespace {

using namespace eqsplit;

int cmd_run(const std::string& config_path) {
  const RunConfig config = load_config(config_path);
  const RunResult result = run_experiment(config);
  std::cout << kMetricsCsvHeader << '\n' << to_csv(result.final_row) << '\n';
  std::cout << "checkpoint: " << result.checkpoint_path << '\n';
  return 0;
}

int cmd_sweep(const std::vector<std::string>& config_paths, int workers) {
  std::vector<std::string> queue = config_paths;
  std::mutex mutex;
  std::size_t next = 0;
  bool failed = false;

  auto worker = [&]() {
    for (;;) {
      std::string path;
      {
        std::lock_guard<std::mutex> lock(mutex);
        if (next >= queue.size() || failed) return;
        path = queue[next++];
      }
      try {
        const RunConfig config = load_config(path);
        const RunResult result = run_experiment(config);
        std::lock_guard<std::mutex> lock(mutex);
        std::cout << path << ": " << to_csv(result.final_row) << '\n';
      } catch (const std::exception& error) {
        std::lock_guard<std::mutex> lock(mutex);
        std::cerr << path << ": " << error.what() << '\n';
        failed = true;
      }
    }
  };

  const int count = std::max(1, std::min<int>(workers, static_cast<int>(queue.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < count; ++w) pool.emplace_back(worker);
  for (auto& thread : pool) thread.join();
  return failed ? 1 : 0;
}

int cmd_verify(const std::string& suite, const std::string& csv_path) {
  const SuiteReport report = run_suite(suite);
  for (const auto& check : report.checks) {
    std::cout << (check.pass ? "[PASS] " : "[FAIL] ") << report.suite << '/' << check.name
              << "  observed=" << check.observed << "  tolerance=" << check.tolerance << '\n';
  }
  const std::string path = csv_path.empty() ? "verify_" + suite + ".csv" : csv_path;
  write_suite_csv(report, path);
  std::cout << (report.pass() ? "suite passed" : "suite FAILED") << "  (residuals: " << path
            << ")\n";
  return report.pass() ? 0 : 1;
}

GroupSpec parse_group_spec(const std::string& text) {
  // "shift:WxH", "dihedral:S", "trivial:N"
  GroupSpec spec;
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw CLI::ValidationError("group spec must be kind:dims");
  spec.kind = text.substr(0, colon);
  const std::string dims = text.substr(colon + 1);
  if (spec.kind == "shift") {
    const auto x = dims.find('x');
    if (x == std::string::npos) throw CLI::ValidationError("shift spec must be shift:WxH");
    spec.width = std::stol(dims.substr(0, x));
    spec.height = std::stol(dims.substr(x + 1));
  } else if (spec.kind == "dihedral") {
    spec.side = std::stol(dims);
  } else if (spec.kind == "trivial") {
    spec.n = std::stol(dims);
  } else {
    throw CLI::ValidationError("unknown group kind " + spec.kind);
  }
  return spec;
}

int cmd_qscan(const std::string& operator_path, const std::string& group_text,
              const std::string& rule_kind, double keep_prob, const std::string& csv_path) {
  const ForwardOperator op = load_operator(operator_path);
  const GroupAction action = build_group(parse_group_spec(group_text));
  SplitRule rule;
  if (rule_kind == "bernoulli") {
    rule.keep_prob = keep_prob;
  } else if (rule_kind == "empty-full") {
    // always enumerable; the empty class pools every g, so its Q equals Q-bar
    rule.family = SplitFamily::FixedPartition;
    rule.partitions.push_back({});
    std::vector<Index> all(op.m);
    for (Index r = 0; r < op.m; ++r) all[r] = r;
    rule.partitions.push_back(all);
    rule.min_rows = 0;
  } else {
    throw CLI::ValidationError("unknown qscan rule " + rule_kind);
  }

  std::vector<std::string> keys;
  const auto reports = q_reports(op, action, rule, &keys);
  const QReport bar = q_bar(op, action, rule);

  std::cout << "classes: " << reports.size() << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& [prob, report] = reports[i];
    std::cout << "class " << i << "  p=" << prob << "  rank=" << report.rank << "/" << op.n
              << "  min_eig=" << report.min_eigenvalue << '\n';
  }
  std::cout << "Q-bar rank " << bar.rank << "/" << op.n
            << (bar.rank == op.n ? "  (identifiable)" : "  (rank deficient)") << '\n';

  auto all = reports;
  all.emplace_back(1.0, bar);
  write_qscan_csv(all, csv_path);
  std::cout << "wrote " << csv_path << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path, Index splits) {
  const RunConfig config = load_config(config_path);
  Problem problem = build_problem(config);
  problem.data.op = &problem.op;

  auto model = build_model(config.model, problem);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (!model->params() || model->params()->size() != ckpt.params.size())
    throw std::runtime_error("checkpoint parameter count does not match the configured model");
  *model->params() = ckpt.params;

  const MetricRow row = evaluate_model(*model, problem, config, splits);
  std::cout << kMetricsCsvHeader << '\n' << to_csv(row) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equivariant-splitting experiment runner"};
  app.require_subcommand(1);

  auto* fetch = app.add_subcommand("fetch", "download MNIST IDX files");
  std::string data_dir = "data/mnist";
  fetch->add_option("--dir", data_dir, "target directory");

  auto* run = app.add_subcommand("run", "train and evaluate one configuration");
  std::string run_config;
  run->add_option("config", run_config, "JSON run configuration")->required();

  auto* sweep = app.add_subcommand("sweep", "run several configurations");
  std::vector<std::string> sweep_configs;
  int sweep_workers = static_cast<int>(std::thread::hardware_concurrency());
  sweep->add_option("configs", sweep_configs, "JSON run configurations")->required();
  sweep->add_option("--workers", sweep_workers, "parallel workers");

  auto* verify = app.add_subcommand("verify", "run a property suite");
  std::string suite;
  std::string verify_csv;
  verify->add_option("suite", suite, "one of: groups equivariance reduction mmse qrank aggregation r2r gradcheck")
      ->required();
  verify->add_option("--csv", verify_csv, "residual CSV path (default verify_<suite>.csv)");

  auto* qscan = app.add_subcommand("qscan", "identifiability scan of a saved operator");
  std::string qscan_operator, qscan_group, qscan_csv = "qscan.csv";
  std::string qscan_rule = "empty-full";
  double qscan_keep = 0.5;
  qscan->add_option("operator", qscan_operator, "operator file (EQOP)")->required();
  qscan->add_option("group", qscan_group, "group spec, e.g. shift:4x4 or dihedral:8")->required();
  qscan->add_option("--rule", qscan_rule, "split rule: empty-full (any size) or bernoulli");
  qscan->add_option("--keep-prob", qscan_keep, "Bernoulli row keep probability");
  qscan->add_option("--csv", qscan_csv, "CSV output path");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_checkpoint, eval_config;
  Index eval_splits = 0;
  eval->add_option("checkpoint", eval_checkpoint, "checkpoint file (EQCK)")->required();
  eval->add_option("--config", eval_config, "JSON run configuration")->required();
  eval->add_option("--splits", eval_splits, "test-time average over J random splits");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fetch) {
      eqsplit::fetch_mnist(data_dir);
      std::cout << "MNIST files ready under " << data_dir << '\n';
      return 0;
    }
    if (*run) return cmd_run(run_config);
    if (*sweep) return cmd_sweep(sweep_configs, sweep_workers);
    if (*verify) return cmd_verify(suite, verify_csv);
    if (*qscan) return cmd_qscan(qscan_operator, qscan_group, qscan_rule, qscan_keep, qscan_csv);
    if (*eval) return cmd_eval(eval_checkpoint, eval_config, eval_splits);
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << '\n';
    return 1;
  }
  return 0;
}
