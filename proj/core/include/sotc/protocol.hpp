#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sotc/corpus.hpp"
#include "sotc/emulator.hpp"
#include "sotc/runconfig.hpp"

namespace sotc {

// One side of the offsite-tuning exchange. The model owner never sees the
// downstream corpus; the data owner never sees the full-model checkpoint.
// Only two artifacts cross the boundary, both through exchange_dir.
struct RoleContext {
  enum class Role { kModelOwner, kDataOwner };
  Role role = Role::kModelOwner;
  std::string workdir;
  std::string exchange_dir;

  std::string emulator_path() const { return exchange_dir + "/emulator.sotc"; }
  std::string adapter_return_path() const { return exchange_dir + "/adapter_return.sotc"; }
};

// Perplexities (lower is better). delta = emulator_ft - plug_in: positive
// when the plugged model beats the fine-tuned emulator.
struct MetricsReport {
  double zs = 0, ft = 0, emulator_zs = 0, emulator_ft = 0, plug_in = 0;
  double delta = 0;
  bool cond1 = false, cond2 = false, cond3 = false, verdict = false;

  static std::string csv_header();
  std::string csv_fields() const;  // zs..cond3, no grid key
  static MetricsReport parse_csv_fields(const std::string& fields);
};

// exp(mean over windows of per-window mean NLL); deterministic.
double evaluate_perplexity(const Model& model,
                           const std::vector<std::vector<int>>& windows);

// cond1: plug_in < zs; cond2: plug_in < emulator_ft; cond3: plug_in <=
// ft * (1 + tol). Fills delta and verdict too.
MetricsReport check_conditions(MetricsReport r, double tol);

// Generic next-token training loop over a window pool. Returns final-step loss.
double train_lm(Model& model, const std::vector<std::vector<int>>& windows,
                int steps, double lr, int batch_size, const TrainableFilter& filter,
                uint64_t seed, uint64_t stream, std::vector<double>* loss_log = nullptr);

// Model-owner side: verify fingerprints, build the plan from the importance
// artifact, assemble and write the emulator into the exchange directory.
EmulatorPlan owner_prepare(const RoleContext& owner, const std::string& model_ckpt_path,
                           const std::string& importance_path, int n_adapter,
                           double alpha, double beta);

struct FinetuneResult {
  double emulator_zs = 0;
  double emulator_ft = 0;
};

// Data-owner side: fine-tune adapter slots (or LoRA factors) of the shipped
// emulator on the private corpus, write the adapter return. Frozen slots are
// hash-checked before/after; any drift is a hard contract failure.
FinetuneResult data_finetune(const RoleContext& data_owner, const CorpusSplit& downstream,
                             int steps, double lr, bool lora_mode, int lora_rank,
                             int batch_size, uint64_t seed, int eval_max_windows);

// Model-owner side: plug the returned adapter into the original model and
// evaluate. Returns the plugged model and its perplexity on eval_windows.
struct PlugInResult {
  Model plugged;
  double perplexity = 0;
};
PlugInResult owner_plug_in(const std::string& model_ckpt_path,
                           const std::string& adapter_return_path,
                           const EmulatorPlan& plan,
                           const std::vector<std::vector<int>>& eval_windows);

// Full owner -> data -> owner cycle for one (alpha, beta, seed) cell.
// Seed-level artifacts (pretrained model, importance artifact, zs/ft
// metrics) are cached under work_dir and reused across cells.
struct PipelineResult {
  MetricsReport report;
  std::string model_ckpt;
  std::string importance_path;
  EmulatorPlan plan;
};
PipelineResult run_pipeline(const RunConfig& cfg, const std::string& work_dir,
                            double alpha, double beta, uint64_t seed);

struct SweepCell {
  double alpha = 0, beta = 0;
  uint64_t seed = 0;
  std::optional<MetricsReport> report;  // empty on cell failure
  std::string status = "ok";
};

struct SweepGrid {
  std::vector<double> alphas, betas;
  std::vector<uint64_t> seeds;
  std::vector<SweepCell> cells;  // rectangular, (alpha, beta, seed) order
};

// Runs every cell (resuming past completed rows found in csv_path) and
// rewrites the CSV in deterministic (alpha, beta, seed) order.
SweepGrid run_sweep(const RunConfig& cfg, const std::string& work_dir,
                    const std::string& csv_path);

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepCell& cell);

}  // namespace sotc
