// Command-line front end: data generation, training, evaluation, gradient
// verification, the full experiment suite and result re-rendering.
//
// Exit codes: 0 success, 1 failed check or runtime error, 2 usage error.
// Seed precedence: --seed flag > config file > MHML_SEED env > built-in.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mhml/mhml.hpp"

namespace {

using namespace mhml;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed,
                           const std::optional<std::uint64_t>& config_seed,
                           std::uint64_t fallback) {
  if (flag_seed) return *flag_seed;
  if (config_seed) return *config_seed;
  if (const char* env = std::getenv("MHML_SEED")) {
    char* end = nullptr;
    const std::uint64_t v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return v;
    std::cerr << "warning: ignoring unparsable MHML_SEED='" << env << "'\n";
  }
  return fallback;
}

void echo_config(const nlohmann::json& j) {
  std::cout << "resolved config:\n" << j.dump(2) << "\n";
}

std::string with_member_suffix(const std::string& path, std::size_t member) {
  const std::size_t dot = path.rfind('.');
  const std::string tag = ".member" + std::to_string(member);
  if (dot == std::string::npos || dot == 0) return path + tag;
  return path.substr(0, dot) + tag + path.substr(dot);
}

struct SuiteFileConfig {
  bench::SuiteConfig suite;
  std::optional<std::uint64_t> config_seed;
};

SuiteFileConfig load_suite_config(const std::string& path) {
  SuiteFileConfig out;
  if (path.empty()) {
    out.suite = bench::default_suite_config();
    return out;
  }
  const nlohmann::json j = bench::read_json_file(path);
  out.suite = j.get<bench::SuiteConfig>();
  if (j.contains("spec") && j.at("spec").contains("seed")) {
    out.config_seed = j.at("spec").at("seed").get<std::uint64_t>();
  }
  return out;
}

int run_gen_data(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
                 std::optional<std::size_t> k, std::optional<std::size_t> dim,
                 const std::string& out_path) {
  SuiteFileConfig cfg = load_suite_config(config_path);
  bench::SyntheticSpec spec = cfg.suite.spec;
  if (k) spec.k = *k;
  if (dim) spec.dim = *dim;
  if (k && spec.priors.size() != spec.k) spec.priors.clear();
  spec.seed = resolve_seed(seed_flag, cfg.config_seed, spec.seed);
  spec.priors = bench::resolved_priors(spec);

  echo_config(nlohmann::json(spec));
  const bench::Dataset ds = bench::gen_gaussian_mixture(spec);
  bench::write_dataset_csv(ds, out_path);
  std::cout << "wrote " << ds.total() << " rows (" << ds.n_train << " train, " << ds.n_val
            << " val, " << ds.n_test << " test) to " << out_path << "\n";
  return 0;
}

int run_train(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
              std::string method_name, std::optional<std::size_t> heads,
              std::optional<std::size_t> epochs, std::optional<double> lr,
              const std::string& data_path, std::size_t bins, const std::string& out_path,
              bool percent) {
  SuiteFileConfig cfg = load_suite_config(config_path);
  if (method_name.empty() && heads) {
    switch (*heads) {
      case 1: method_name = "SL1H"; break;
      case 2: method_name = "2HML"; break;
      case 4: method_name = "4HML"; break;
      default:
        std::cerr << "--heads must be 1, 2 or 4 (mapping to SL1H, 2HML, 4HML)\n";
        return 2;
    }
  }
  if (method_name.empty()) method_name = "SL1H";
  const bench::MethodKind kind = bench::method_kind_from_string(method_name);

  bench::MethodConfig mc;
  for (const bench::MethodConfig& candidate : cfg.suite.methods) {
    if (candidate.kind == kind) mc = candidate;
  }
  mc.kind = kind;
  if (epochs) mc.epochs = *epochs;
  if (lr) mc.lr = *lr;

  bench::SyntheticSpec spec = cfg.suite.spec;
  const std::uint64_t seed = resolve_seed(seed_flag, cfg.config_seed, spec.seed);
  spec.seed = seed;
  mc.seed = seed + 1;
  spec.priors = bench::resolved_priors(spec);

  echo_config(nlohmann::json{{"spec", spec}, {"method", mc}});

  const bench::Dataset ds = data_path.empty()
                                ? bench::gen_gaussian_mixture(spec)
                                : bench::read_dataset_csv(data_path, spec.n_train, spec.n_val,
                                                          spec.n_test);
  const bench::TrainedMethod tm = bench::train_method(mc, ds);

  if (tm.models.size() == 1) {
    save_checkpoint(tm.models[0], out_path);
    std::cout << "checkpoint: " << out_path << "\n";
  } else {
    for (std::size_t e = 0; e < tm.models.size(); ++e) {
      const std::string p = with_member_suffix(out_path, e);
      save_checkpoint(tm.models[e], p);
      std::cout << "checkpoint: " << p << "\n";
    }
  }

  const metrics::CalibrationReport report = bench::evaluate(
      bench::make_predictor(tm), ds.test_x(), ds.test_y(), bins, method_name, "test");
  const std::string report_path = out_path + ".report.json";
  bench::write_json_file(report_path, nlohmann::json(report));
  std::cout << "report: " << report_path << "\n\n" << bench::render_report(report, percent);
  return 0;
}

int run_eval(const std::string& preds_path, const std::string& ckpt_path,
             const std::string& data_path, std::size_t bins, const std::string& out_path,
             const std::string& preds_out, bool percent) {
  metrics::CalibrationReport report;
  if (!preds_path.empty()) {
    const auto [probs, labels] = bench::read_predictions_csv(preds_path);
    report = bench::report_from_probs(probs, labels, bins, "predictions", preds_path);
  } else if (!ckpt_path.empty()) {
    if (data_path.empty()) {
      std::cerr << "eval --ckpt needs --data with evaluation rows\n";
      return 2;
    }
    const MultiHeadModel model = load_checkpoint(ckpt_path);
    const auto [x, labels] = bench::read_feature_csv(data_path);
    const Prediction pred = predict(model, x);
    report = bench::report_from_probs(pred.probs, labels, bins, "checkpoint", data_path);
    if (!preds_out.empty()) {
      bench::write_predictions_csv(pred.probs, labels, preds_out);
      std::cout << "predictions: " << preds_out << "\n";
    }
  } else {
    std::cerr << "eval needs --preds or --ckpt\n";
    return 2;
  }
  if (!out_path.empty()) {
    bench::write_json_file(out_path, nlohmann::json(report));
    std::cout << "report: " << out_path << "\n";
  }
  std::cout << bench::render_report(report, percent);
  return 0;
}

int run_gradcheck(std::size_t trials, double tol, std::optional<std::uint64_t> seed_flag,
                  double corruption) {
  gradcheck::HarnessOptions opt;
  opt.master_seed = resolve_seed(seed_flag, std::nullopt, opt.master_seed);
  opt.corruption = corruption;
  echo_config(nlohmann::json{{"trials", trials}, {"tol", tol}, {"seed", opt.master_seed}});

  struct Row {
    const char* name;
    gradcheck::GradCheckReport report;
  };
  const Row rows[] = {
      {"property1", gradcheck::verify_property1(trials, tol, opt)},
      {"property2", gradcheck::verify_property2(trials, tol, opt)},
      {"symmetry", gradcheck::verify_symmetry(trials, opt)},
  };

  std::printf("%-10s %8s %14s %14s %9s\n", "harness", "trials", "max_abs_err", "max_rel_err",
              "failures");
  bool ok = true;
  for (const Row& row : rows) {
    std::printf("%-10s %8zu %14.3e %14.3e %9zu\n", row.name, row.report.trials,
                row.report.max_abs_err, row.report.max_rel_err, row.report.failures.size());
    ok = ok && row.report.ok();
  }
  for (const Row& row : rows) {
    for (const gradcheck::Failure& f : row.report.failures) {
      std::printf("  FAIL %s trial-seed=%llu coordinate=%zu analytic=%.9e numeric=%.9e\n",
                  row.name, static_cast<unsigned long long>(f.trial_seed), f.coordinate,
                  f.analytic, f.numeric);
    }
  }
  std::cout << (ok ? "gradcheck: all harnesses passed\n" : "gradcheck: FAILURES detected\n");
  return ok ? 0 : 1;
}

int run_suite_cmd(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
                  std::size_t jobs, std::optional<std::size_t> epochs, std::size_t bins_override,
                  const std::string& out_path, bool percent) {
  SuiteFileConfig cfg = load_suite_config(config_path);
  bench::SuiteConfig suite = cfg.suite;
  if (seed_flag) {
    suite.spec.seed = *seed_flag;
    for (std::size_t i = 0; i < suite.seeds.size(); ++i) suite.seeds[i] = *seed_flag + 1 + i;
  }
  if (epochs) {
    for (bench::MethodConfig& mc : suite.methods) mc.epochs = *epochs;
  }
  if (bins_override != 0) suite.n_bins = bins_override;
  suite.spec.priors = bench::resolved_priors(suite.spec);

  echo_config(nlohmann::json(suite));
  const bench::ExperimentResult result = bench::run_suite(suite, jobs);
  const nlohmann::json doc = bench::result_to_json(result);
  bench::write_json_file(out_path, doc);
  const std::string table = bench::render_table(result, percent);
  bench::write_text_file(out_path + ".txt", table);
  std::cout << "result: " << out_path << "\n" << "table: " << out_path << ".txt\n\n" << table;

  for (const bench::SuiteCell& cell : result.cells) {
    if (!cell.ok) return 1;
  }
  return 0;
}

int run_report(const std::string& in_path, bool percent) {
  const bench::ExperimentResult result = bench::result_from_json(bench::read_json_file(in_path));
  std::cout << bench::render_table(result, percent);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mhml: multi-head multi-loss calibration lab"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed_flag;
  std::string config_path;
  bool percent = true;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset CSV");
  std::optional<std::size_t> gen_k, gen_dim;
  std::string gen_out = "data.csv";
  gen->add_option("--config", config_path, "config file (JSON)");
  gen->add_option("--seed", seed_flag, "master seed");
  gen->add_option("--k", gen_k, "class count");
  gen->add_option("--dim", gen_dim, "feature dimension");
  gen->add_option("--out", gen_out, "output CSV path");

  auto* train = app.add_subcommand("train", "train one method, write checkpoint + report");
  std::string train_method_name;
  std::optional<std::size_t> train_heads, train_epochs;
  std::optional<double> train_lr;
  std::string train_data, train_out = "model.json";
  std::size_t train_bins = 15;
  train->add_option("--config", config_path, "config file (JSON)");
  train->add_option("--seed", seed_flag, "master seed");
  train->add_option("--method", train_method_name,
                    "method kind: SL1H, LS, D-Ens, 2HSL, 2HML, 4HML");
  train->add_option("--heads", train_heads,
                    "pick the family by head count: 1, 2 or 4 (ignored with --method)");
  train->add_option("--epochs", train_epochs, "training epochs");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--data", train_data, "dataset CSV (defaults to the generator)");
  train->add_option("--bins", train_bins, "calibration bins");
  train->add_option("--out", train_out, "checkpoint path");
  train->add_flag("--percent,!--no-percent", percent, "display ACC/ECE/NLL x100");

  auto* eval = app.add_subcommand("eval", "score a predictions file or a checkpoint");
  std::string eval_preds, eval_ckpt, eval_data, eval_out, eval_preds_out;
  std::size_t eval_bins = 15;
  eval->add_option("--preds", eval_preds, "predictions CSV (p0..pK-1,label)");
  eval->add_option("--ckpt", eval_ckpt, "model checkpoint JSON");
  eval->add_option("--data", eval_data, "evaluation rows CSV (with --ckpt)");
  eval->add_option("--bins", eval_bins, "calibration bins");
  eval->add_option("--out", eval_out, "write the report JSON here");
  eval->add_option("--preds-out", eval_preds_out, "dump checkpoint predictions CSV");
  eval->add_flag("--percent,!--no-percent", percent, "display ACC/ECE/NLL x100");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification harnesses");
  std::size_t gc_trials = 100;
  double gc_tol = 1e-6;
  double gc_corrupt = 0.0;
  gc->add_option("--trials", gc_trials, "trials per harness");
  gc->add_option("--tol", gc_tol, "relative tolerance");
  gc->add_option("--seed", seed_flag, "master seed");
  gc->add_option("--corrupt", gc_corrupt, "")->group("");  // test hook

  auto* suite = app.add_subcommand("suite", "run the full method roster");
  std::string suite_out = "result.json";
  std::size_t suite_jobs = 1, suite_bins = 0;
  std::optional<std::size_t> suite_epochs;
  suite->add_option("--config", config_path, "suite config file (JSON)");
  suite->add_option("--seed", seed_flag, "master seed (overrides all seeds)");
  suite->add_option("--jobs", suite_jobs, "parallel cells");
  suite->add_option("--epochs", suite_epochs, "override epochs for every method");
  suite->add_option("--bins", suite_bins, "calibration bins");
  suite->add_option("--out", suite_out, "result document path");
  suite->add_flag("--percent,!--no-percent", percent, "display ACC/ECE/NLL x100");

  auto* report = app.add_subcommand("report", "re-render an existing result document");
  std::string report_in;
  report->add_option("document", report_in, "result JSON path")->required();
  report->add_flag("--percent,!--no-percent", percent, "display ACC/ECE/NLL x100");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(config_path, seed_flag, gen_k, gen_dim, gen_out);
    if (train->parsed()) {
      return run_train(config_path, seed_flag, train_method_name, train_heads, train_epochs,
                       train_lr, train_data, train_bins, train_out, percent);
    }
    if (eval->parsed()) {
      return run_eval(eval_preds, eval_ckpt, eval_data, eval_bins, eval_out, eval_preds_out,
                      percent);
    }
    if (gc->parsed()) return run_gradcheck(gc_trials, gc_tol, seed_flag, gc_corrupt);
    if (suite->parsed()) {
      return run_suite_cmd(config_path, seed_flag, suite_jobs, suite_epochs, suite_bins, suite_out,
                           percent);
    }
    if (report->parsed()) return run_report(report_in, percent);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
