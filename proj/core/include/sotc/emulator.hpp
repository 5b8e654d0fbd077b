#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sotc/layerreplace.hpp"
#include "sotc/model.hpp"
#include "sotc/svd.hpp"

namespace sotc {

enum class SlotRole { kAdapter, kHarmonizer, kCompressed };

// The (N_a, alpha, beta) split of layer indices: phi_adapter gets the
// per-group top scores, phi_harmonizer the per-group bottom scores among the
// rest, everything outside phi_adapter forms the emulator.
struct EmulatorPlan {
  int n_adapter = 4;
  double alpha = 0.25;
  double beta = 0.8;
  std::vector<int> phi_adapter;     // sorted
  std::vector<int> phi_emulator;    // complement of phi_adapter
  std::vector<int> phi_harmonizer;  // subset of phi_emulator
  int k = 0;      // adapters per group
  int kappa = 0;  // harmonizers per group
  uint32_t fingerprint = 0;  // CRC-32 of the source model checkpoint (0 = unset)

  SlotRole role_of(int layer) const;
};

// max(1, ceil((1 - beta) * dim)); beta outside [0,1] rejected.
int retained_rank(double beta, int dim);

// Rank-compresses the four attention projections; FFN weights, norms and
// any adapters are bit-unchanged. beta == 0 returns the layer bit-identical.
LayerWeights src_compress(const LayerWeights& layer, double beta);

EmulatorPlan build_plan(const ImportanceTable& table, int n_adapter, double alpha,
                        double beta);

struct EmulatorArtifact {
  Model model;  // runnable stack: adapter + compressed layers, harmonizer slots
  std::vector<SlotRole> roles;
  EmulatorPlan plan;
  uint32_t fingerprint = 0;

  // names of the trainable parameters under the given tuning mode
  bool is_trainable(const std::string& param_name, bool lora_mode) const;
};

EmulatorArtifact assemble_emulator(const Model& model, const HarmonizerSet& harmonizers,
                                   const EmulatorPlan& plan, uint32_t model_fingerprint);

struct AdapterReturn {
  std::vector<int> indices;  // must equal plan.phi_adapter
  bool lora = false;
  int lora_rank = 0;
  std::vector<LayerWeights> layers;  // full mode: one per index
  struct LoraDelta {
    LoraPair q, v;
  };
  std::vector<LoraDelta> lora_deltas;  // lora mode: one per index
  uint32_t fingerprint = 0;
};

AdapterReturn extract_adapter(const EmulatorArtifact& emulator, bool lora_mode);

// New full model: returned adapter weights at phi_adapter (LoRA deltas
// merged), every other layer bit-identical to the original.
Model plug_in(const Model& original, const AdapterReturn& ret, const EmulatorPlan& plan);

void save_emulator(const std::string& path, const EmulatorArtifact& art);
EmulatorArtifact load_emulator(const std::string& path);

void save_adapter_return(const std::string& path, const AdapterReturn& ret);
AdapterReturn load_adapter_return(const std::string& path);

}  // namespace sotc
