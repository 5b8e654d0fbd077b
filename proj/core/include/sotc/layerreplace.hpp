#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sotc/checkpoint.hpp"
#include "sotc/model.hpp"
#include "sotc/optimizer.hpp"
#include "sotc/rng.hpp"

namespace sotc {

// Per-layer importance scores plus the contiguous grouping used for
// sampling and quota arithmetic. Scores start at 0 (sigmoid 0.5: no prior).
struct ImportanceTable {
  std::vector<double> scores;
  int n_groups = 4;
  int step_count = 0;

  static ImportanceTable init(int n_layers, int n_groups);

  // Contiguous, disjoint cover of 0..n-1; sizes differ by at most one
  // (larger groups first).
  std::vector<std::vector<int>> groups() const;
  int n_layers() const { return static_cast<int>(scores.size()); }
};

struct HarmonizerSet {
  std::vector<Harmonizer> items;

  static HarmonizerSet fresh(const ModelConfig& cfg, RngStream& rng);
  int size() const { return static_cast<int>(items.size()); }
};

struct CandidateSample {
  std::vector<double> probs;
  std::vector<int> keep_set;  // sorted ascending
  uint64_t stream_id = 0;
};

// p_i ~ U(0, sigmoid(s_i)), one draw per layer.
std::vector<double> sample_probs(const ImportanceTable& table, RngStream& rng);

// Per group keep exactly floor(|g|/2) indices: sort by p descending,
// lower index wins ties. Realizes the median rule deterministically.
std::vector<int> select_keep_set(const std::vector<double>& probs,
                                 const std::vector<std::vector<int>>& groups);

CandidateSample sample_candidate(const ImportanceTable& table, RngStream& rng);

// A composed candidate network: original layer at kept indices, harmonizer
// elsewhere. Pure view over the model and harmonizer set; nothing is copied.
struct CandidateView {
  const Model* model = nullptr;
  const HarmonizerSet* harmonizers = nullptr;
  std::vector<bool> keep;

  Tape::NodeId forward_tape(Tape& tape, const std::vector<int>& tokens) const;
  Tape::NodeId window_loss_tape(Tape& tape, const std::vector<int>& window) const;
  double window_loss(const std::vector<int>& window) const;
  double mean_loss(const std::vector<std::vector<int>>& windows) const;
};

CandidateView compose_candidate(const Model& model, const HarmonizerSet& harmonizers,
                                const std::vector<int>& keep_set);

struct EstimationSchedule {
  int total_steps = 2000;
  int rl_interval = 10;
  int n_candidates = 3;
  int n_groups = 4;
  double lr = 1e-3;
  int batch_size = 4;
  int val_batch_size = 2;
};

struct EstimationLogRow {
  int step = 0;
  double dl_loss = 0.0;
  bool rl = false;
  std::vector<double> cand_losses;
  std::vector<double> rewards;
};

// Internal deterministic stream bookkeeping for one estimation run.
struct EstimationRun {
  uint64_t seed = 0;
  uint64_t next_stream = 0;
  RngStream fresh_stream() { return RngStream(seed, next_stream++); }
};

// One gradient step: sample one candidate, train the harmonizers inside it
// (indices outside the keep set) on the batch. Returns candidate loss.
double dl_step(const Model& model, HarmonizerSet& harmonizers,
               const ImportanceTable& table,
               const std::vector<std::vector<int>>& batch, EstimationRun& run,
               AdamW& opt);

struct RlResult {
  bool applied = false;
  std::vector<double> cand_losses;  // NaN for excluded candidates
  std::vector<double> rewards;      // zero-sum over finite candidates
};

// Mean-centered exp(-loss) rewards over n_candidates samples, applied to the
// scores of kept layers in candidate order. Non-finite candidates are
// excluded and the mean recentred; fewer than 2 finite -> skipped.
RlResult rl_step(const Model& model, const HarmonizerSet& harmonizers,
                 ImportanceTable& table,
                 const std::vector<std::vector<int>>& val_batch, int n_candidates,
                 EstimationRun& run);

// Rewards alone (pure, for tests and rl_step).
std::vector<double> mean_centered_rewards(const std::vector<double>& losses);

struct EstimationOutput {
  ImportanceTable table;
  HarmonizerSet harmonizers;
  std::vector<EstimationLogRow> log;
};

EstimationOutput run_estimation(const Model& model,
                                const std::vector<std::vector<int>>& corpus_train,
                                const std::vector<std::vector<int>>& corpus_val,
                                const EstimationSchedule& schedule, uint64_t seed);

// Importance artifact container (checkpoint format): scores, grouping,
// step count, harmonizer tensors, and the source-model fingerprint.
struct ImportanceArtifact {
  ImportanceTable table;
  HarmonizerSet harmonizers;
  uint32_t fingerprint = 0;
};

void save_importance(const std::string& path, const ImportanceArtifact& art);
ImportanceArtifact load_importance(const std::string& path);

void write_estimation_log(const std::string& path,
                          const std::vector<EstimationLogRow>& rows, int n_candidates);

}  // namespace sotc
