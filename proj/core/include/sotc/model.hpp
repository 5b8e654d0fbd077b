#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sotc/optimizer.hpp"
#include "sotc/rng.hpp"
#include "sotc/tape.hpp"
#include "sotc/tensor.hpp"

namespace sotc {

// byte-level vocabulary: 256 raw bytes + specials
constexpr int kBosId = 256;
constexpr int kEosId = 257;
constexpr int kPadId = 258;

struct ModelConfig {
  int n_layers = 16;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 256;
  int context_len = 128;
  int vocab_size = 259;
  int harmonizer_rank = 16;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LoraPair {
  Tensor a;  // d_model x r, gaussian init
  Tensor b;  // r x d_model, zero init
};

// Pre-norm decoder block. Zeroing w_o and w_out reduces the block to the
// identity map (residual path only).
struct LayerWeights {
  Tensor w_q, w_k, w_v, w_o;  // d_model x d_model
  Tensor w_in;                // d_model x d_ffn
  Tensor w_out;               // d_ffn x d_model
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;  // 1 x d_model
  bool lora_attached = false;
  int lora_rank = 0;
  LoraPair lora_q, lora_v;
};

// Residual low-rank FFN replacement: x + relu(x w_down) w_up. With w_up
// zero-initialized a fresh harmonizer is exactly the identity map.
struct Harmonizer {
  Tensor w_down;  // d_model x r
  Tensor w_up;    // r x d_model

  static Harmonizer fresh(int d_model, int rank, RngStream& rng);
};

struct Slot {
  enum class Kind { kLayer, kHarmonizer };
  Kind kind = Kind::kLayer;
  LayerWeights layer;
  Harmonizer harm;
};

// Decoder-only byte LM with learned positional embeddings and output head
// weight-tied to the token embedding.
struct Model {
  ModelConfig config;
  Tensor tok_embed;  // vocab x d_model
  Tensor pos_embed;  // context_len x d_model
  std::vector<Slot> slots;
  Tensor final_g, final_b;  // 1 x d_model

  static Model random_init(const ModelConfig& cfg, RngStream& rng);

  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<std::pair<std::string, const Tensor*>> named_params() const;
  Tensor* find_param(const std::string& name);

  // Records the full forward pass for a token window on the tape and
  // returns the logits node (one row per input position).
  Tape::NodeId forward_tape(Tape& tape, const std::vector<int>& tokens) const;

  Tensor forward(const std::vector<int>& tokens) const;

  // Mean next-token NLL of one window (inputs w[0..n-2], targets w[1..n-1]).
  // Window must have >= 2 tokens.
  Tape::NodeId window_loss_tape(Tape& tape, const std::vector<int>& window) const;
  double window_loss(const std::vector<int>& window) const;
};

// Tape builders shared by Model and candidate-network forwards so that a
// candidate keeping every original layer is bit-identical to the model.
Tape::NodeId embed_block(Tape& tape, Tape::NodeId tok_leaf, Tape::NodeId pos_leaf,
                         const std::vector<int>& tokens);
Tape::NodeId layer_block(Tape& tape, Tape::NodeId x, const LayerWeights& l,
                         int n_heads, const std::string& prefix);
Tape::NodeId harmonizer_block(Tape& tape, Tape::NodeId x, const Harmonizer& h,
                              const std::string& prefix);

void attach_lora(LayerWeights& layer, int r, int d_model, RngStream& rng);
void merge_lora(LayerWeights& layer);  // folds a*b into the base weight

std::vector<int> tokenize_bytes(const std::string& bytes);
std::vector<std::vector<int>> split_windows(const std::vector<int>& ids, int context_len);

double nll_loss(const Tensor& logits, const std::vector<int>& targets);

using TrainableFilter = std::function<bool(const std::string&)>;

// One AdamW step over the mean loss of the batch. Only parameters accepted
// by the filter move; everything else is bit-unchanged. Throws kDomain if
// the filter selects nothing.
double train_step(Model& model, const std::vector<std::vector<int>>& batch,
                  const TrainableFilter& trainable, AdamW& opt);

}  // namespace sotc
