#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sotc/checkpoint.hpp"
#include "sotc/emulator.hpp"
#include "sotc/layerreplace.hpp"
#include "sotc/model.hpp"
#include "sotc/protocol.hpp"
#include "sotc/rng.hpp"
#include "sotc/runconfig.hpp"

using namespace sotc;
namespace fs = std::filesystem;

#ifndef SOTC_BIN
#error "SOTC_BIN must point at the CLI binary"
#endif

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("sotc_cli_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
  std::string cmd = std::string(SOTC_BIN) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_corpus(const std::string& path, uint64_t seed, size_t bytes) {
  RngStream rng(seed, 0);
  std::string text;
  const std::string words = "pack my box with five dozen liquor jugs now ";
  while (text.size() < bytes) {
    size_t start = rng.index(words.size() - 4);
    text.append(words.substr(start, 4));
  }
  std::ofstream out(path, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(bytes));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// tiny shared configuration written as a config file
std::string write_tiny_config(const TempDir& dir) {
  RunConfig cfg;
  cfg.n_layers = 4;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.context_len = 16;
  cfg.harmonizer_rank = 4;
  cfg.pretrain_steps = 15;
  cfg.batch_size = 2;
  cfg.est_total_steps = 10;
  cfg.est_rl_interval = 5;
  cfg.est_groups = 2;
  cfg.emu_n_adapter = 2;
  cfg.emu_alpha = 0.5;
  cfg.emu_beta = 0.8;
  cfg.tune_steps = 4;
  cfg.eval_max_windows = 8;
  cfg.seed = 11;
  cfg.pretrain_path = dir.file("pretrain.bin");
  cfg.downstream_path = dir.file("downstream.bin");
  write_corpus(cfg.pretrain_path, 31, 8000);
  write_corpus(cfg.downstream_path, 32, 4000);
  std::string path = dir.file("run.cfg");
  cfg.save(path);
  return path;
}

RunConfig config_of(const TempDir& dir) {
  return RunConfig::from_file((dir.path / "run.cfg").string());
}

}  // namespace

TEST_CASE("pretrain writes a loadable checkpoint; delegation parity with train_lm") {
  TempDir dir;
  std::string cfg_path = write_tiny_config(dir);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("o1") + " pretrain") == 0);
  REQUIRE(fs::exists(dir.file("o1/model.sotc")));
  REQUIRE(fs::exists(dir.file("o1/pretrain_log.csv")));

  // direct call with the same config and seed must be bit-identical
  RunConfig cfg = config_of(dir);
  CorpusSplit corpus = load_corpus(cfg.pretrain_path, cfg.context_len, cfg.train_frac,
                                   cfg.val_frac);
  RngStream init_rng(cfg.seed, 0);
  Model model = Model::random_init(cfg.model_config(), init_rng);
  train_lm(model, corpus.train, cfg.pretrain_steps, cfg.pretrain_lr, cfg.batch_size,
           [](const std::string&) { return true; }, cfg.seed, 10);
  model_to_checkpoint(model).save(dir.file("direct.sotc"));
  CHECK(slurp(dir.file("o1/model.sotc")) == slurp(dir.file("direct.sotc")));

  // same seed twice -> bit-identical checkpoints
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("o2") + " pretrain") == 0);
  CHECK(slurp(dir.file("o1/model.sotc")) == slurp(dir.file("o2/model.sotc")));
}

TEST_CASE("estimate delegates to run_estimation and logs the schedule") {
  TempDir dir;
  std::string cfg_path = write_tiny_config(dir);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("o") + " pretrain") == 0);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("o") +
                  " estimate --model " + dir.file("o/model.sotc")) == 0);
  REQUIRE(fs::exists(dir.file("o/importance.sotc")));

  // parity with a direct call
  RunConfig cfg = config_of(dir);
  CorpusSplit corpus = load_corpus(cfg.pretrain_path, cfg.context_len, cfg.train_frac,
                                   cfg.val_frac);
  Model model = model_from_checkpoint(Checkpoint::load(dir.file("o/model.sotc")));
  EstimationSchedule sched;
  sched.total_steps = cfg.est_total_steps;
  sched.rl_interval = cfg.est_rl_interval;
  sched.n_candidates = cfg.est_candidates;
  sched.n_groups = cfg.est_groups;
  sched.lr = cfg.est_lr;
  sched.batch_size = cfg.batch_size;
  sched.val_batch_size = cfg.est_val_batch;
  EstimationOutput est = run_estimation(model, corpus.train, corpus.val, sched, cfg.seed);
  ImportanceArtifact direct{est.table, est.harmonizers, file_crc32(dir.file("o/model.sotc"))};
  save_importance(dir.file("direct_imp.sotc"), direct);
  CHECK(slurp(dir.file("o/importance.sotc")) == slurp(dir.file("direct_imp.sotc")));

  // log row count: one per dl step
  std::ifstream log(dir.file("o/estimation_log.csv"));
  std::string line;
  int rows = 0;
  std::getline(log, line);  // header
  while (std::getline(log, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cfg.est_total_steps);

  // malformed checkpoint -> artifact error exit code
  std::ofstream bad(dir.file("bad.sotc"), std::ios::binary);
  bad << "NOPE";
  bad.close();
  CHECK(run_cli("--config " + cfg_path + " --out " + dir.file("o") + " estimate --model " +
                dir.file("bad.sotc")) == 3);
}

TEST_CASE("emit-emulator, finetune and plugin-eval complete the cycle") {
  TempDir dir;
  std::string cfg_path = write_tiny_config(dir);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("o") + " pretrain") == 0);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("o") +
                  " estimate --model " + dir.file("o/model.sotc")) == 0);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("ex") +
                  " emit-emulator --model " + dir.file("o/model.sotc") +
                  " --importance " + dir.file("o/importance.sotc")) == 0);
  REQUIRE(fs::exists(dir.file("ex/emulator.sotc")));
  REQUIRE(fs::exists(dir.file("ex/plan.txt")));

  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("data") +
                  " finetune --emulator " + dir.file("ex/emulator.sotc")) == 0);
  REQUIRE(fs::exists(dir.file("ex/adapter_return.sotc")));
  REQUIRE(fs::exists(dir.file("data/finetune_metrics.txt")));

  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("rep") +
                  " plugin-eval --model " + dir.file("o/model.sotc") + " --adapter " +
                  dir.file("ex/adapter_return.sotc") + " --emulator " +
                  dir.file("ex/emulator.sotc") + " --metrics " +
                  dir.file("data/finetune_metrics.txt")) == 0);
  REQUIRE(fs::exists(dir.file("rep/report.csv")));

  // the report row parses back into a MetricsReport
  std::ifstream csv(dir.file("rep/report.csv"));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header == MetricsReport::csv_header());
  MetricsReport r = MetricsReport::parse_csv_fields(row);
  CHECK(r.zs > 1.0);
  CHECK(r.plug_in > 1.0);
}

TEST_CASE("lora mode emits a much smaller adapter return") {
  TempDir dir;
  std::string cfg_path = write_tiny_config(dir);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("o") + " pretrain") == 0);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("o") +
                  " estimate --model " + dir.file("o/model.sotc")) == 0);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("exf") +
                  " emit-emulator --model " + dir.file("o/model.sotc") +
                  " --importance " + dir.file("o/importance.sotc")) == 0);
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("d1") +
                  " finetune --emulator " + dir.file("exf/emulator.sotc")) == 0);
  auto full_size = fs::file_size(dir.file("exf/adapter_return.sotc"));

  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("exl") +
                  " emit-emulator --model " + dir.file("o/model.sotc") +
                  " --importance " + dir.file("o/importance.sotc")) == 0);
  REQUIRE(run_cli("--config " + cfg_path + " --tune_mode lora --out " + dir.file("d2") +
                  " finetune --emulator " + dir.file("exl/emulator.sotc")) == 0);
  auto lora_size = fs::file_size(dir.file("exl/adapter_return.sotc"));
  CHECK(lora_size * 2 < full_size);  // r=4 at d_model=16 is much smaller

  AdapterReturn ret = load_adapter_return(dir.file("exl/adapter_return.sotc"));
  CHECK(ret.lora);
  CHECK(ret.layers.empty());  // no full adapter tensors in lora mode
  CHECK(ret.lora_deltas.size() == ret.indices.size());
}

TEST_CASE("flag > file > default precedence for every field kind") {
  TempDir dir;
  std::string cfg_path = write_tiny_config(dir);  // file sets n_layers=4
  // default (no config, no flag): RunConfig default 16
  RunConfig defaults;
  CHECK(defaults.n_layers == 16);

  // file wins over default: pretrain with file config produced a 4-layer model
  Model m = model_from_checkpoint(Checkpoint::load([&] {
    run_cli("--config " + cfg_path + " --out " + dir.file("p1") + " pretrain");
    return dir.file("p1/model.sotc");
  }()));
  CHECK(m.config.n_layers == 4);

  // flag wins over file
  REQUIRE(run_cli("--config " + cfg_path +
                  " --n_layers 2 --pretrain_steps 0 --out " + dir.file("p2") +
                  " pretrain") == 0);
  Model m2 = model_from_checkpoint(Checkpoint::load(dir.file("p2/model.sotc")));
  CHECK(m2.config.n_layers == 2);

  // flag placement after the subcommand also works (fallthrough)
  REQUIRE(run_cli("--config " + cfg_path + " --out " + dir.file("p3") +
                  " pretrain --n_layers 2 --pretrain_steps 0") == 0);
  Model m3 = model_from_checkpoint(Checkpoint::load(dir.file("p3/model.sotc")));
  CHECK(m3.config.n_layers == 2);
}

TEST_CASE("exit codes: config errors vs artifact errors") {
  TempDir dir;
  std::string cfg_path = write_tiny_config(dir);
  // unknown flag -> CLI parse failure (nonzero)
  CHECK(run_cli("--definitely_not_a_flag 1 pretrain") != 0);
  // missing corpus -> config/domain error (2)
  CHECK(run_cli("--pretrain_steps 0 --out " + dir.file("x") + " pretrain") == 2);
  // unreadable config file -> i/o error code
  CHECK(run_cli("--config " + dir.file("missing.cfg") + " pretrain") == 3);
  // bad value for a numeric key
  CHECK(run_cli("--config " + cfg_path + " --n_layers banana pretrain") == 2);
}

TEST_CASE("sweep subcommand writes a deterministic CSV and resumes") {
  TempDir dir;
  std::string cfg_path = write_tiny_config(dir);
  std::string args = "--config " + cfg_path +
                     " --sweep_alphas 0.5 --sweep_betas 0,0.8 --sweep_seeds 11 --out " +
                     dir.file("s");
  REQUIRE(run_cli(args + " sweep") == 0);
  std::string first = slurp(dir.file("s/sweep.csv"));
  REQUIRE(!first.empty());
  CHECK(first.substr(0, first.find('\n')) == sweep_csv_header());
  // resume: rerun reuses the rows
  REQUIRE(run_cli(args + " sweep") == 0);
  CHECK(slurp(dir.file("s/sweep.csv")) == first);
  // a failing cell (quota violation at alpha=1) flips the exit code to 5
  REQUIRE(run_cli("--config " + cfg_path +
                  " --sweep_alphas 1 --sweep_betas 0.8 --sweep_seeds 11 --out " +
                  dir.file("s2") + " sweep") == 5);
}
