#include "sotc/layerreplace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace sotc {

ImportanceTable ImportanceTable::init(int n_layers, int n_groups) {
  if (n_layers < 1 || n_groups < 1 || n_groups > n_layers)
    throw Error(Error::Kind::kDomain, "ImportanceTable: invalid n_layers/n_groups");
  ImportanceTable t;
  t.scores.assign(n_layers, 0.0);
  t.n_groups = n_groups;
  return t;
}

std::vector<std::vector<int>> ImportanceTable::groups() const {
  const int n = n_layers();
  const int base = n / n_groups;
  const int rem = n % n_groups;
  std::vector<std::vector<int>> gs(n_groups);
  int idx = 0;
  for (int j = 0; j < n_groups; ++j) {
    int size = base + (j < rem ? 1 : 0);
    for (int k = 0; k < size; ++k) gs[j].push_back(idx++);
  }
  return gs;
}

HarmonizerSet HarmonizerSet::fresh(const ModelConfig& cfg, RngStream& rng) {
  HarmonizerSet hs;
  hs.items.reserve(cfg.n_layers);
  for (int i = 0; i < cfg.n_layers; ++i)
    hs.items.push_back(Harmonizer::fresh(cfg.d_model, cfg.harmonizer_rank, rng));
  return hs;
}

std::vector<double> sample_probs(const ImportanceTable& table, RngStream& rng) {
  std::vector<double> probs(table.scores.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    double s = table.scores[i];
    if (!std::isfinite(s))
      throw Error(Error::Kind::kDomain, "sample_probs: non-finite score");
    probs[i] = rng.uniform(0.0, sigmoid(s));
  }
  return probs;
}

std::vector<int> select_keep_set(const std::vector<double>& probs,
                                 const std::vector<std::vector<int>>& groups) {
  std::vector<int> keep;
  for (const auto& g : groups) {
    std::vector<int> order = g;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (probs[a] != probs[b]) return probs[a] > probs[b];
      return a < b;
    });
    const int take = static_cast<int>(g.size()) / 2;
    keep.insert(keep.end(), order.begin(), order.begin() + take);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

CandidateSample sample_candidate(const ImportanceTable& table, RngStream& rng) {
  CandidateSample c;
  c.stream_id = rng.stream_id();
  c.probs = sample_probs(table, rng);
  c.keep_set = select_keep_set(c.probs, table.groups());
  return c;
}

CandidateView compose_candidate(const Model& model, const HarmonizerSet& harmonizers,
                                const std::vector<int>& keep_set) {
  const int n = model.config.n_layers;
  if (harmonizers.size() != n)
    throw Error(Error::Kind::kShape, "compose_candidate: harmonizer count != n_layers");
  for (const auto& h : harmonizers.items)
    if (h.w_down.rows != model.config.d_model)
      throw Error(Error::Kind::kShape, "compose_candidate: harmonizer width mismatch");
  CandidateView v;
  v.model = &model;
  v.harmonizers = &harmonizers;
  v.keep.assign(n, false);
  for (int i : keep_set) {
    if (i < 0 || i >= n)
      throw Error(Error::Kind::kDomain, "compose_candidate: keep index out of range");
    v.keep[i] = true;
  }
  return v;
}

Tape::NodeId CandidateView::forward_tape(Tape& tape, const std::vector<int>& tokens) const {
  const Model& m = *model;
  auto tok_leaf = tape.leaf(m.tok_embed, "embed.tok");
  auto pos_leaf = tape.leaf(m.pos_embed, "embed.pos");
  auto x = embed_block(tape, tok_leaf, pos_leaf, tokens);
  for (int i = 0; i < m.config.n_layers; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    if (keep[i]) {
      if (m.slots[i].kind != Slot::Kind::kLayer)
        throw Error(Error::Kind::kContract, "candidate: kept slot is not an original layer");
      x = layer_block(tape, x, m.slots[i].layer, m.config.n_heads, p);
    } else {
      x = harmonizer_block(tape, x, harmonizers->items[i], p + "h.");
    }
  }
  x = tape.layer_norm(x, tape.leaf(m.final_g, "final.g"), tape.leaf(m.final_b, "final.b"));
  return tape.matmul_nt(x, tok_leaf);
}

Tape::NodeId CandidateView::window_loss_tape(Tape& tape, const std::vector<int>& window) const {
  if (window.size() < 2)
    throw Error(Error::Kind::kDomain, "candidate loss: window needs >= 2 tokens");
  std::vector<int> inputs(window.begin(), window.end() - 1);
  std::vector<int> targets(window.begin() + 1, window.end());
  auto logits = forward_tape(tape, inputs);
  return tape.mean_nll(logits, std::move(targets));
}

double CandidateView::window_loss(const std::vector<int>& window) const {
  Tape tape;
  return tape.scalar(window_loss_tape(tape, window));
}

double CandidateView::mean_loss(const std::vector<std::vector<int>>& windows) const {
  if (windows.empty())
    throw Error(Error::Kind::kDomain, "candidate mean_loss: no windows");
  double s = 0.0;
  for (const auto& w : windows) s += window_loss(w);
  return s / static_cast<double>(windows.size());
}

double dl_step(const Model& model, HarmonizerSet& harmonizers,
               const ImportanceTable& table,
               const std::vector<std::vector<int>>& batch, EstimationRun& run,
               AdamW& opt) {
  RngStream rng = run.fresh_stream();
  CandidateSample cand = sample_candidate(table, rng);
  CandidateView view = compose_candidate(model, harmonizers, cand.keep_set);

  // accumulate harmonizer gradients over the batch
  std::map<std::string, Tensor> total;
  double loss_sum = 0.0;
  for (const auto& window : batch) {
    Tape tape;
    auto loss = view.window_loss_tape(tape, window);
    loss_sum += tape.scalar(loss);
    auto grads = tape.backward(loss);
    for (auto& [name, g] : grads) {
      if (name.find(".h.") == std::string::npos) continue;
      auto it = total.find(name);
      if (it == total.end()) {
        total.emplace(name, g);
      } else {
        for (size_t i = 0; i < g.size(); ++i) it->second.data[i] += g.data[i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (int i = 0; i < model.config.n_layers; ++i) {
    if (view.keep[i]) continue;  // kept original layers: their harmonizers idle
    const std::string p = "layer." + std::to_string(i) + ".h.";
    for (const char* suffix : {"w_down", "w_up"}) {
      auto it = total.find(p + suffix);
      if (it == total.end()) continue;
      Tensor g = scale(it->second, inv);
      Tensor& param = std::string(suffix) == "w_down" ? harmonizers.items[i].w_down
                                                      : harmonizers.items[i].w_up;
      opt.update(p + suffix, param, g);
      check_finite(param, "dl_step: " + p + suffix);
    }
  }
  return loss_sum * inv;
}

std::vector<double> mean_centered_rewards(const std::vector<double>& losses) {
  std::vector<double> r(losses.size(), 0.0);
  double mean = 0.0;
  int finite = 0;
  for (double l : losses)
    if (std::isfinite(l)) {
      mean += std::exp(-l);
      ++finite;
    }
  if (finite == 0) return r;
  mean /= finite;
  for (size_t j = 0; j < losses.size(); ++j)
    r[j] = std::isfinite(losses[j]) ? std::exp(-losses[j]) - mean : 0.0;
  return r;
}

RlResult rl_step(const Model& model, const HarmonizerSet& harmonizers,
                 ImportanceTable& table,
                 const std::vector<std::vector<int>>& val_batch, int n_candidates,
                 EstimationRun& run) {
  if (n_candidates < 2)
    throw Error(Error::Kind::kDomain, "rl_step: n_candidates must be >= 2");
  RlResult out;
  std::vector<CandidateSample> cands;
  cands.reserve(n_candidates);
  out.cand_losses.reserve(n_candidates);
  for (int j = 0; j < n_candidates; ++j) {
    RngStream rng = run.fresh_stream();
    cands.push_back(sample_candidate(table, rng));
    CandidateView view = compose_candidate(model, harmonizers, cands.back().keep_set);
    double loss;
    try {
      loss = view.mean_loss(val_batch);
    } catch (const Error&) {
      loss = std::nan("");
    }
    if (!std::isfinite(loss)) loss = std::nan("");
    out.cand_losses.push_back(loss);
  }
  int finite = 0;
  for (double l : out.cand_losses)
    if (std::isfinite(l)) ++finite;
  out.rewards = mean_centered_rewards(out.cand_losses);
  if (finite < 2) {
    std::cerr << "rl_step: fewer than 2 finite candidate losses, step skipped\n";
    return out;
  }
  // sequential application in candidate order
  for (int j = 0; j < n_candidates; ++j) {
    if (!std::isfinite(out.cand_losses[j])) continue;
    for (int i : cands[j].keep_set) {
      double sg = sigmoid(table.scores[i]);
      table.scores[i] += out.rewards[j] * sg * (1.0 - sg);
    }
  }
  ++table.step_count;
  out.applied = true;
  return out;
}

namespace {

std::vector<std::vector<int>> pick_windows(const std::vector<std::vector<int>>& pool,
                                           int count, RngStream& rng) {
  std::vector<std::vector<int>> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(pool[rng.index(pool.size())]);
  return out;
}

}  // namespace

EstimationOutput run_estimation(const Model& model,
                                const std::vector<std::vector<int>>& corpus_train,
                                const std::vector<std::vector<int>>& corpus_val,
                                const EstimationSchedule& schedule, uint64_t seed) {
  if (corpus_train.empty() || corpus_val.empty())
    throw Error(Error::Kind::kDomain, "run_estimation: empty corpus split");

  EstimationOutput out;
  out.table = ImportanceTable::init(model.config.n_layers, schedule.n_groups);
  EstimationRun run{seed, 1000};
  RngStream init_rng(seed, 1);
  out.harmonizers = HarmonizerSet::fresh(model.config, init_rng);
  RngStream batch_rng(seed, 2);
  RngStream val_rng(seed, 3);
  AdamW opt(AdamW::Hyper{.lr = schedule.lr});

  for (int step = 1; step <= schedule.total_steps; ++step) {
    auto batch = pick_windows(corpus_train, schedule.batch_size, batch_rng);
    EstimationLogRow row;
    row.step = step;
    row.dl_loss = dl_step(model, out.harmonizers, out.table, batch, run, opt);
    if (schedule.rl_interval > 0 && step % schedule.rl_interval == 0) {
      auto val_batch = pick_windows(corpus_val, schedule.val_batch_size, val_rng);
      RlResult rl = rl_step(model, out.harmonizers, out.table, val_batch,
                            schedule.n_candidates, run);
      row.rl = true;
      row.cand_losses = rl.cand_losses;
      row.rewards = rl.rewards;
    }
    out.log.push_back(std::move(row));
  }
  return out;
}

void save_importance(const std::string& path, const ImportanceArtifact& art) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "importance";
  ckpt.meta["n_layers"] = std::to_string(art.table.n_layers());
  ckpt.meta["n_groups"] = std::to_string(art.table.n_groups);
  ckpt.meta["step_count"] = std::to_string(art.table.step_count);
  ckpt.meta["fingerprint"] = std::to_string(art.fingerprint);
  Tensor scores(1, art.table.n_layers());
  std::copy(art.table.scores.begin(), art.table.scores.end(), scores.data.begin());
  ckpt.add("importance.scores", scores);
  for (int i = 0; i < art.harmonizers.size(); ++i) {
    ckpt.add("h." + std::to_string(i) + ".w_down", art.harmonizers.items[i].w_down);
    ckpt.add("h." + std::to_string(i) + ".w_up", art.harmonizers.items[i].w_up);
  }
  ckpt.save(path);
}

ImportanceArtifact load_importance(const std::string& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.require_meta("kind") != "importance")
    throw Error(Error::Kind::kTruncated, "importance artifact: wrong kind");
  ImportanceArtifact art;
  const int n = std::stoi(ckpt.require_meta("n_layers"));
  art.table.n_groups = std::stoi(ckpt.require_meta("n_groups"));
  art.table.step_count = std::stoi(ckpt.require_meta("step_count"));
  art.fingerprint = static_cast<uint32_t>(std::stoul(ckpt.require_meta("fingerprint")));
  const Tensor& scores = ckpt.require("importance.scores");
  art.table.scores.assign(scores.data.begin(), scores.data.end());
  if (art.table.n_layers() != n)
    throw Error(Error::Kind::kTruncated, "importance artifact: score length mismatch");
  art.harmonizers.items.resize(n);
  for (int i = 0; i < n; ++i) {
    art.harmonizers.items[i].w_down = ckpt.require("h." + std::to_string(i) + ".w_down");
    art.harmonizers.items[i].w_up = ckpt.require("h." + std::to_string(i) + ".w_up");
  }
  return art;
}

void write_estimation_log(const std::string& path,
                          const std::vector<EstimationLogRow>& rows, int n_candidates) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(Error::Kind::kIo, "estimation log: cannot open " + path);
  f << "step,dl_loss";
  for (int j = 0; j < n_candidates; ++j) f << ",val_loss_" << j;
  for (int j = 0; j < n_candidates; ++j) f << ",reward_" << j;
  f << "\n";
  f.precision(17);
  for (const auto& row : rows) {
    f << row.step << "," << row.dl_loss;
    for (int j = 0; j < n_candidates; ++j) {
      f << ",";
      if (row.rl && j < static_cast<int>(row.cand_losses.size())) f << row.cand_losses[j];
    }
    for (int j = 0; j < n_candidates; ++j) {
      f << ",";
      if (row.rl && j < static_cast<int>(row.rewards.size())) f << row.rewards[j];
    }
    f << "\n";
  }
}

}  // namespace sotc
