#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sotc/model.hpp"

namespace sotc {

// Flat key = value configuration; every field has exactly one key and one
// CLI flag. Precedence: flag > file > default.
struct RunConfig {
  // model
  int n_layers = 16;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 256;
  int context_len = 128;
  int vocab_size = 259;
  int harmonizer_rank = 16;
  // pretraining
  int pretrain_steps = 2000;
  double pretrain_lr = 1e-3;
  int batch_size = 4;
  // estimation
  int est_candidates = 3;
  int est_groups = 4;
  int est_total_steps = 2000;
  int est_rl_interval = 10;
  double est_lr = 1e-3;
  int est_val_batch = 2;
  // emulator
  int emu_n_adapter = 4;
  double emu_alpha = 0.25;
  double emu_beta = 0.8;
  // offsite tuning
  int tune_steps = 500;
  double tune_lr = 1e-3;
  std::string tune_mode = "full";  // full | lora
  int lora_rank = 4;
  // data
  std::string pretrain_path;
  std::string downstream_path;
  double train_frac = 0.8;
  double val_frac = 0.1;
  // evaluation
  double cond3_tol = 0.10;
  int eval_max_windows = 64;  // cap on eval windows per split (0 = all)
  // sweep grids (comma-separated)
  std::string sweep_alphas = "0,0.25,0.5";
  std::string sweep_betas = "0,0.4,0.8";
  std::string sweep_seeds = "1,2,3";

  uint64_t seed = 1;

  ModelConfig model_config() const;

  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
  static const std::vector<std::string>& keys();

  static RunConfig from_file(const std::string& path);
  void save(const std::string& path) const;
};

std::vector<double> parse_double_list(const std::string& csv);
std::vector<uint64_t> parse_seed_list(const std::string& csv);

}  // namespace sotc
