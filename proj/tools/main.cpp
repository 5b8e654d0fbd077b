// Command-line front door for the offsite-tuning sandbox. Subcommands map
// one-to-one onto pipeline stages; every option mirrors a RunConfig key so a
// run is reproducible from its shell history.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "sotc/checkpoint.hpp"
#include "sotc/corpus.hpp"
#include "sotc/emulator.hpp"
#include "sotc/layerreplace.hpp"
#include "sotc/protocol.hpp"
#include "sotc/runconfig.hpp"

namespace fs = std::filesystem;
using namespace sotc;

namespace {

// exit codes: 0 ok, 2 config error, 3 artifact error, 4 contract violation
int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::kIo:
    case Error::Kind::kBadMagic:
    case Error::Kind::kVersion:
    case Error::Kind::kTruncated:
    case Error::Kind::kChecksum:
      return 3;
    case Error::Kind::kContract:
      return 4;
    default:
      return 2;
  }
}

struct Cli {
  std::string config_path;
  std::string out_dir = ".";
  std::map<std::string, std::string> overrides;

  RunConfig build() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::from_file(config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return cfg;
  }
};

CorpusSplit load_downstream(const RunConfig& cfg) {
  if (cfg.downstream_path.empty())
    throw Error(Error::Kind::kDomain, "downstream_path is not set");
  return load_corpus(cfg.downstream_path, cfg.context_len, cfg.train_frac, cfg.val_frac);
}

CorpusSplit load_pretrain(const RunConfig& cfg) {
  if (cfg.pretrain_path.empty())
    throw Error(Error::Kind::kDomain, "pretrain_path is not set");
  return load_corpus(cfg.pretrain_path, cfg.context_len, cfg.train_frac, cfg.val_frac);
}

EstimationSchedule schedule_from(const RunConfig& cfg) {
  EstimationSchedule s;
  s.total_steps = cfg.est_total_steps;
  s.rl_interval = cfg.est_rl_interval;
  s.n_candidates = cfg.est_candidates;
  s.n_groups = cfg.est_groups;
  s.lr = cfg.est_lr;
  s.batch_size = cfg.batch_size;
  s.val_batch_size = cfg.est_val_batch;
  return s;
}

int cmd_pretrain(const Cli& cli) {
  RunConfig cfg = cli.build();
  CorpusSplit corpus = load_pretrain(cfg);
  fs::create_directories(cli.out_dir);

  RngStream init_rng(cfg.seed, 0);
  Model model = Model::random_init(cfg.model_config(), init_rng);
  std::vector<double> losses;
  train_lm(model, corpus.train, cfg.pretrain_steps, cfg.pretrain_lr, cfg.batch_size,
           [](const std::string&) { return true; }, cfg.seed, 10, &losses);

  const std::string ckpt_path = cli.out_dir + "/model.sotc";
  model_to_checkpoint(model).save(ckpt_path);
  std::ofstream log(cli.out_dir + "/pretrain_log.csv", std::ios::trunc);
  log << "step,loss\n";
  log.precision(17);
  for (size_t i = 0; i < losses.size(); ++i) log << i + 1 << "," << losses[i] << "\n";
  std::cout << "wrote " << ckpt_path << " (" << losses.size() << " steps";
  if (!losses.empty()) std::cout << ", final loss " << losses.back();
  std::cout << ")\n";
  return 0;
}

int cmd_estimate(const Cli& cli, const std::string& model_path) {
  RunConfig cfg = cli.build();
  CorpusSplit corpus = load_pretrain(cfg);
  fs::create_directories(cli.out_dir);

  Model model = model_from_checkpoint(Checkpoint::load(model_path));
  EstimationSchedule sched = schedule_from(cfg);
  EstimationOutput est = run_estimation(model, corpus.train, corpus.val, sched, cfg.seed);

  ImportanceArtifact art{est.table, est.harmonizers, file_crc32(model_path)};
  const std::string out_path = cli.out_dir + "/importance.sotc";
  save_importance(out_path, art);
  write_estimation_log(cli.out_dir + "/estimation_log.csv", est.log, sched.n_candidates);

  auto groups = est.table.groups();
  std::cout << "importance scores (by group):\n";
  for (size_t j = 0; j < groups.size(); ++j) {
    std::cout << "  g" << j << ":";
    for (int i : groups[j]) {
      std::cout << " layer" << i << "=";
      std::cout.precision(6);
      std::cout << est.table.scores[i];
    }
    std::cout << "\n";
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_emit_emulator(const Cli& cli, const std::string& model_path,
                      const std::string& importance_path) {
  RunConfig cfg = cli.build();
  fs::create_directories(cli.out_dir);
  RoleContext owner{RoleContext::Role::kModelOwner, cli.out_dir, cli.out_dir};
  EmulatorPlan plan = owner_prepare(owner, model_path, importance_path,
                                    cfg.emu_n_adapter, cfg.emu_alpha, cfg.emu_beta);

  ImportanceArtifact imp = load_importance(importance_path);
  std::ostringstream summary;
  summary << "emulator plan: n_adapter=" << plan.n_adapter << " alpha=" << plan.alpha
          << " beta=" << plan.beta << "\n";
  summary << "slot  role        score\n";
  for (int i = 0; i < imp.table.n_layers(); ++i) {
    const char* role = plan.role_of(i) == SlotRole::kAdapter ? "adapter"
                       : plan.role_of(i) == SlotRole::kHarmonizer ? "harmonizer"
                                                                  : "compressed";
    summary << "  " << i << "    " << role << "    " << imp.table.scores[i] << "\n";
  }
  std::ofstream plan_file(cli.out_dir + "/plan.txt", std::ios::trunc);
  plan_file << summary.str();
  std::cout << summary.str();
  std::cout << "wrote " << owner.emulator_path() << "\n";
  return 0;
}

int cmd_finetune(const Cli& cli, const std::string& emulator_path) {
  RunConfig cfg = cli.build();
  CorpusSplit downstream = load_downstream(cfg);
  fs::create_directories(cli.out_dir);

  const std::string exchange = fs::path(emulator_path).parent_path().string();
  RoleContext data_owner{RoleContext::Role::kDataOwner, cli.out_dir,
                         exchange.empty() ? "." : exchange};
  if (fs::path(emulator_path).filename() != "emulator.sotc")
    throw Error(Error::Kind::kDomain, "finetune: emulator file must be named emulator.sotc");

  const bool lora_mode = cfg.tune_mode == "lora";
  FinetuneResult result =
      data_finetune(data_owner, downstream, cfg.tune_steps, cfg.tune_lr, lora_mode,
                    cfg.lora_rank, cfg.batch_size, cfg.seed, cfg.eval_max_windows);

  std::ofstream frag(cli.out_dir + "/finetune_metrics.txt", std::ios::trunc);
  frag.precision(17);
  frag << result.emulator_zs << " " << result.emulator_ft << "\n";
  std::cout.precision(10);
  std::cout << "emulator_zs=" << result.emulator_zs
            << " emulator_ft=" << result.emulator_ft << "\n";
  std::cout << "wrote " << data_owner.adapter_return_path() << "\n";
  return 0;
}

int cmd_plugin_eval(const Cli& cli, const std::string& model_path,
                    const std::string& adapter_path, const std::string& emulator_path,
                    const std::string& metrics_path) {
  RunConfig cfg = cli.build();
  CorpusSplit downstream = load_downstream(cfg);
  fs::create_directories(cli.out_dir);

  EmulatorPlan plan = load_emulator(emulator_path).plan;
  std::vector<std::vector<int>> eval_windows = downstream.eval_windows;
  if (cfg.eval_max_windows > 0 &&
      static_cast<int>(eval_windows.size()) > cfg.eval_max_windows)
    eval_windows.resize(cfg.eval_max_windows);

  PlugInResult plugged = owner_plug_in(model_path, adapter_path, plan, eval_windows);

  MetricsReport report;
  {
    Model original = model_from_checkpoint(Checkpoint::load(model_path));
    report.zs = evaluate_perplexity(original, eval_windows);
    Model ft_model = original;
    train_lm(ft_model, downstream.train, cfg.tune_steps, cfg.tune_lr, cfg.batch_size,
             [](const std::string&) { return true; }, cfg.seed, 20);
    report.ft = evaluate_perplexity(ft_model, eval_windows);
  }
  {
    std::ifstream frag(metrics_path);
    if (!frag) throw Error(Error::Kind::kIo, "plugin-eval: cannot open " + metrics_path);
    frag >> report.emulator_zs >> report.emulator_ft;
    if (!frag) throw Error(Error::Kind::kIo, "plugin-eval: malformed metrics fragment");
  }
  report.plug_in = plugged.perplexity;
  report = check_conditions(report, cfg.cond3_tol);

  std::cout.precision(10);
  std::cout << "zs          " << report.zs << "\n"
            << "ft          " << report.ft << "\n"
            << "emulator_zs " << report.emulator_zs << "\n"
            << "emulator_ft " << report.emulator_ft << "\n"
            << "plug_in     " << report.plug_in << "\n"
            << "delta       " << report.delta << "\n"
            << "cond1 (plug_in < zs):           " << (report.cond1 ? "pass" : "fail") << "\n"
            << "cond2 (plug_in < emulator_ft):  " << (report.cond2 ? "pass" : "fail") << "\n"
            << "cond3 (plug_in <= 1.1 ft):      " << (report.cond3 ? "pass" : "fail") << "\n"
            << "verdict: " << (report.verdict ? "PASS" : "FAIL") << "\n";

  std::ofstream csv(cli.out_dir + "/report.csv", std::ios::trunc);
  csv << MetricsReport::csv_header() << "\n" << report.csv_fields() << "\n";
  return 0;
}

int cmd_sweep(const Cli& cli) {
  RunConfig cfg = cli.build();
  fs::create_directories(cli.out_dir);
  SweepGrid grid = run_sweep(cfg, cli.out_dir + "/work", cli.out_dir + "/sweep.csv");
  int failures = 0;
  for (const auto& cell : grid.cells)
    if (cell.status != "ok") ++failures;
  std::cout << "sweep: " << grid.cells.size() << " cells, " << failures
            << " failed; wrote " << cli.out_dir << "/sweep.csv\n";
  return failures == 0 ? 0 : 5;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale offsite tuning: importance-aware layer replacement, "
               "rank-compressed emulators, adapter plug-in"};
  app.require_subcommand(1);

  Cli cli;
  app.add_option("--config", cli.config_path, "flat key = value config file");
  app.add_option("--out", cli.out_dir, "output directory");
  for (const auto& key : RunConfig::keys()) {
    if (key == "seed") continue;  // added below with its own help text
    app.add_option_function<std::string>(
        "--" + key, [&cli, key](const std::string& v) { cli.overrides[key] = v; },
        "override config key " + key);
  }
  app.add_option_function<std::string>(
      "--seed", [&cli](const std::string& v) { cli.overrides["seed"] = v; }, "run seed");

  auto* pretrain = app.add_subcommand("pretrain", "train the base model from scratch");
  auto* estimate =
      app.add_subcommand("estimate", "run importance estimation + harmonizer training");
  auto* emit = app.add_subcommand("emit-emulator", "build and write the emulator");
  auto* finetune = app.add_subcommand("finetune", "data-owner adapter fine-tuning");
  auto* plugin = app.add_subcommand("plugin-eval", "plug adapter back in and report metrics");
  auto* sweep = app.add_subcommand("sweep", "alpha/beta/seed grid sweep");
  for (auto* sub : {pretrain, estimate, emit, finetune, plugin, sweep}) sub->fallthrough();

  std::string model_path, importance_path, emulator_path, adapter_path, metrics_path;
  estimate->add_option("--model", model_path, "model checkpoint")->required();
  emit->add_option("--model", model_path, "model checkpoint")->required();
  emit->add_option("--importance", importance_path, "importance artifact")->required();
  finetune->add_option("--emulator", emulator_path, "emulator file")->required();
  plugin->add_option("--model", model_path, "model checkpoint")->required();
  plugin->add_option("--adapter", adapter_path, "adapter return file")->required();
  plugin->add_option("--emulator", emulator_path, "emulator file (plan source)")->required();
  plugin->add_option("--metrics", metrics_path, "finetune metrics fragment")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) return cmd_pretrain(cli);
    if (estimate->parsed()) return cmd_estimate(cli, model_path);
    if (emit->parsed()) return cmd_emit_emulator(cli, model_path, importance_path);
    if (finetune->parsed()) return cmd_finetune(cli, emulator_path);
    if (plugin->parsed())
      return cmd_plugin_eval(cli, model_path, adapter_path, emulator_path, metrics_path);
    if (sweep->parsed()) return cmd_sweep(cli);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
