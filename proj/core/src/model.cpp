#include "sotc/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sotc {

void ModelConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ffn < 1 || context_len < 2 ||
      vocab_size < 259 || harmonizer_rank < 1)
    throw Error(Error::Kind::kDomain, "ModelConfig: non-positive dimension");
  if (d_model % n_heads != 0)
    throw Error(Error::Kind::kDomain, "ModelConfig: d_model not divisible by n_heads");
  if (d_ffn < 2 * d_model)
    throw Error(Error::Kind::kDomain, "ModelConfig: d_ffn must be >= 2*d_model");
}

namespace {

Tensor gaussian(int r, int c, double stddev, RngStream& rng) {
  Tensor t(r, c);
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

Tensor ones_row(int c) {
  Tensor t(1, c);
  for (double& v : t.data) v = 1.0;
  return t;
}

constexpr double kInitStd = 0.02;

}  // namespace

Harmonizer Harmonizer::fresh(int d_model, int rank, RngStream& rng) {
  Harmonizer h;
  h.w_down = gaussian(d_model, rank, kInitStd, rng);
  h.w_up = Tensor(rank, d_model);  // zero: identity map until trained
  return h;
}

Model Model::random_init(const ModelConfig& cfg, RngStream& rng) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.tok_embed = gaussian(cfg.vocab_size, cfg.d_model, kInitStd, rng);
  m.pos_embed = gaussian(cfg.context_len, cfg.d_model, kInitStd, rng);
  m.slots.resize(cfg.n_layers);
  for (auto& slot : m.slots) {
    slot.kind = Slot::Kind::kLayer;
    LayerWeights& l = slot.layer;
    l.w_q = gaussian(cfg.d_model, cfg.d_model, kInitStd, rng);
    l.w_k = gaussian(cfg.d_model, cfg.d_model, kInitStd, rng);
    l.w_v = gaussian(cfg.d_model, cfg.d_model, kInitStd, rng);
    l.w_o = gaussian(cfg.d_model, cfg.d_model, kInitStd, rng);
    l.w_in = gaussian(cfg.d_model, cfg.d_ffn, kInitStd, rng);
    l.w_out = gaussian(cfg.d_ffn, cfg.d_model, kInitStd, rng);
    l.ln1_g = ones_row(cfg.d_model);
    l.ln1_b = Tensor(1, cfg.d_model);
    l.ln2_g = ones_row(cfg.d_model);
    l.ln2_b = Tensor(1, cfg.d_model);
  }
  m.final_g = ones_row(cfg.d_model);
  m.final_b = Tensor(1, cfg.d_model);
  return m;
}

template <typename ModelT, typename TensorPtr>
static std::vector<std::pair<std::string, TensorPtr>> collect_params(ModelT& m) {
  std::vector<std::pair<std::string, TensorPtr>> out;
  out.emplace_back("embed.tok", &m.tok_embed);
  out.emplace_back("embed.pos", &m.pos_embed);
  for (size_t i = 0; i < m.slots.size(); ++i) {
    std::string p = "layer." + std::to_string(i) + ".";
    auto& slot = m.slots[i];
    if (slot.kind == Slot::Kind::kLayer) {
      auto& l = slot.layer;
      out.emplace_back(p + "w_q", &l.w_q);
      out.emplace_back(p + "w_k", &l.w_k);
      out.emplace_back(p + "w_v", &l.w_v);
      out.emplace_back(p + "w_o", &l.w_o);
      out.emplace_back(p + "w_in", &l.w_in);
      out.emplace_back(p + "w_out", &l.w_out);
      out.emplace_back(p + "ln1_g", &l.ln1_g);
      out.emplace_back(p + "ln1_b", &l.ln1_b);
      out.emplace_back(p + "ln2_g", &l.ln2_g);
      out.emplace_back(p + "ln2_b", &l.ln2_b);
      if (l.lora_attached) {
        out.emplace_back(p + "lora_q.a", &l.lora_q.a);
        out.emplace_back(p + "lora_q.b", &l.lora_q.b);
        out.emplace_back(p + "lora_v.a", &l.lora_v.a);
        out.emplace_back(p + "lora_v.b", &l.lora_v.b);
      }
    } else {
      out.emplace_back(p + "h.w_down", &slot.harm.w_down);
      out.emplace_back(p + "h.w_up", &slot.harm.w_up);
    }
  }
  out.emplace_back("final.g", &m.final_g);
  out.emplace_back("final.b", &m.final_b);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_params() {
  return collect_params<Model, Tensor*>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_params() const {
  return collect_params<const Model, const Tensor*>(*this);
}

Tensor* Model::find_param(const std::string& name) {
  for (auto& [n, t] : named_params())
    if (n == name) return t;
  return nullptr;
}

Tape::NodeId embed_block(Tape& tape, Tape::NodeId tok_leaf, Tape::NodeId pos_leaf,
                         const std::vector<int>& tokens) {
  const int L = static_cast<int>(tokens.size());
  std::vector<int> iota(L);
  std::iota(iota.begin(), iota.end(), 0);
  return tape.add(tape.gather_rows(tok_leaf, tokens), tape.gather_rows(pos_leaf, iota));
}

Tape::NodeId layer_block(Tape& tape, Tape::NodeId x, const LayerWeights& l,
                         int n_heads, const std::string& p) {
  auto h = tape.layer_norm(x, tape.leaf(l.ln1_g, p + "ln1_g"),
                           tape.leaf(l.ln1_b, p + "ln1_b"));
  auto wq = tape.leaf(l.w_q, p + "w_q");
  auto wv = tape.leaf(l.w_v, p + "w_v");
  if (l.lora_attached) {
    wq = tape.add(wq, tape.matmul(tape.leaf(l.lora_q.a, p + "lora_q.a"),
                                  tape.leaf(l.lora_q.b, p + "lora_q.b")));
    wv = tape.add(wv, tape.matmul(tape.leaf(l.lora_v.a, p + "lora_v.a"),
                                  tape.leaf(l.lora_v.b, p + "lora_v.b")));
  }
  auto q = tape.matmul(h, wq);
  auto k = tape.matmul(h, tape.leaf(l.w_k, p + "w_k"));
  auto v = tape.matmul(h, wv);
  auto att = tape.causal_attention(q, k, v, n_heads);
  x = tape.add(x, tape.matmul(att, tape.leaf(l.w_o, p + "w_o")));
  auto h2 = tape.layer_norm(x, tape.leaf(l.ln2_g, p + "ln2_g"),
                            tape.leaf(l.ln2_b, p + "ln2_b"));
  auto ffn = tape.matmul(tape.relu(tape.matmul(h2, tape.leaf(l.w_in, p + "w_in"))),
                         tape.leaf(l.w_out, p + "w_out"));
  return tape.add(x, ffn);
}

Tape::NodeId harmonizer_block(Tape& tape, Tape::NodeId x, const Harmonizer& h,
                              const std::string& p) {
  auto hid = tape.relu(tape.matmul(x, tape.leaf(h.w_down, p + "w_down")));
  return tape.add(x, tape.matmul(hid, tape.leaf(h.w_up, p + "w_up")));
}

Tape::NodeId Model::forward_tape(Tape& tape, const std::vector<int>& tokens) const {
  if (static_cast<int>(tokens.size()) > config.context_len)
    throw Error(Error::Kind::kDomain, "forward: sequence longer than context_len");
  if (tokens.empty()) throw Error(Error::Kind::kDomain, "forward: empty sequence");
  for (int t : tokens)
    if (t < 0 || t >= config.vocab_size)
      throw Error(Error::Kind::kDomain, "forward: token id out of vocab range");

  auto tok_leaf = tape.leaf(tok_embed, "embed.tok");
  auto pos_leaf = tape.leaf(pos_embed, "embed.pos");
  auto x = embed_block(tape, tok_leaf, pos_leaf, tokens);

  for (size_t i = 0; i < slots.size(); ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    const Slot& slot = slots[i];
    if (slot.kind == Slot::Kind::kLayer) {
      x = layer_block(tape, x, slot.layer, config.n_heads, p);
    } else {
      x = harmonizer_block(tape, x, slot.harm, p + "h.");
    }
  }
  x = tape.layer_norm(x, tape.leaf(final_g, "final.g"), tape.leaf(final_b, "final.b"));
  return tape.matmul_nt(x, tok_leaf);  // tied output head
}

Tensor Model::forward(const std::vector<int>& tokens) const {
  Tape tape;
  return tape.value(forward_tape(tape, tokens));
}

Tape::NodeId Model::window_loss_tape(Tape& tape, const std::vector<int>& window) const {
  if (window.size() < 2)
    throw Error(Error::Kind::kDomain, "window_loss: window needs >= 2 tokens");
  std::vector<int> inputs(window.begin(), window.end() - 1);
  std::vector<int> targets(window.begin() + 1, window.end());
  auto logits = forward_tape(tape, inputs);
  return tape.mean_nll(logits, std::move(targets));
}

double Model::window_loss(const std::vector<int>& window) const {
  Tape tape;
  return tape.scalar(window_loss_tape(tape, window));
}

void attach_lora(LayerWeights& layer, int r, int d_model, RngStream& rng) {
  if (layer.lora_attached)
    throw Error(Error::Kind::kContract, "attach_lora: adapter already attached");
  if (r < 1 || r > d_model)
    throw Error(Error::Kind::kDomain, "attach_lora: rank out of range");
  layer.lora_attached = true;
  layer.lora_rank = r;
  layer.lora_q.a = gaussian(d_model, r, kInitStd, rng);
  layer.lora_q.b = Tensor(r, d_model);
  layer.lora_v.a = gaussian(d_model, r, kInitStd, rng);
  layer.lora_v.b = Tensor(r, d_model);
}

void merge_lora(LayerWeights& layer) {
  if (!layer.lora_attached)
    throw Error(Error::Kind::kContract, "merge_lora: no adapter attached");
  layer.w_q = add(layer.w_q, matmul(layer.lora_q.a, layer.lora_q.b));
  layer.w_v = add(layer.w_v, matmul(layer.lora_v.a, layer.lora_v.b));
  layer.lora_attached = false;
  layer.lora_rank = 0;
  layer.lora_q = {};
  layer.lora_v = {};
}

std::vector<int> tokenize_bytes(const std::string& bytes) {
  std::vector<int> ids;
  ids.reserve(bytes.size() + 1);
  ids.push_back(kBosId);
  for (unsigned char c : bytes) ids.push_back(static_cast<int>(c));
  return ids;
}

std::vector<std::vector<int>> split_windows(const std::vector<int>& ids, int context_len) {
  if (context_len < 2)
    throw Error(Error::Kind::kDomain, "split_windows: context_len too small");
  const int stride = context_len / 2;
  const int n = static_cast<int>(ids.size());
  std::vector<std::vector<int>> out;
  for (int start = 0;; start += stride) {
    int end = std::min(start + context_len, n);
    out.emplace_back(ids.begin() + start, ids.begin() + end);
    if (end == n) break;
  }
  return out;
}

double nll_loss(const Tensor& logits, const std::vector<int>& targets) {
  Tape tape;
  auto l = tape.leaf(logits);
  return tape.scalar(tape.mean_nll(l, targets));
}

double train_step(Model& model, const std::vector<std::vector<int>>& batch,
                  const TrainableFilter& trainable, AdamW& opt) {
  if (batch.empty()) throw Error(Error::Kind::kDomain, "train_step: empty batch");
  auto params = model.named_params();
  std::vector<std::string> selected;
  for (auto& [name, ptr] : params)
    if (trainable(name)) selected.push_back(name);
  if (selected.empty())
    throw Error(Error::Kind::kDomain, "train_step: trainable filter selects no parameters");

  std::map<std::string, Tensor> total;
  double loss_sum = 0.0;
  for (const auto& window : batch) {
    Tape tape;
    auto loss = model.window_loss_tape(tape, window);
    loss_sum += tape.scalar(loss);
    auto grads = tape.backward(loss);
    for (const auto& name : selected) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      auto acc = total.find(name);
      if (acc == total.end()) {
        total.emplace(name, it->second);
      } else {
        for (size_t i = 0; i < acc->second.size(); ++i)
          acc->second.data[i] += it->second.data[i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& name : selected) {
    auto it = total.find(name);
    if (it == total.end()) continue;
    Tensor g = scale(it->second, inv);
    Tensor* p = model.find_param(name);
    opt.update(name, *p, g);
    check_finite(*p, "train_step: " + name);
  }
  return loss_sum * inv;
}

}  // namespace sotc
