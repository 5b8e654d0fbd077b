#include "sotc/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sotc {

SlotRole EmulatorPlan::role_of(int layer) const {
  if (std::binary_search(phi_adapter.begin(), phi_adapter.end(), layer))
    return SlotRole::kAdapter;
  if (std::binary_search(phi_harmonizer.begin(), phi_harmonizer.end(), layer))
    return SlotRole::kHarmonizer;
  return SlotRole::kCompressed;
}

int retained_rank(double beta, int dim) {
  if (beta < 0.0 || beta > 1.0)
    throw Error(Error::Kind::kDomain, "retained_rank: beta outside [0,1]");
  if (dim < 1) throw Error(Error::Kind::kDomain, "retained_rank: dim < 1");
  return std::max(1, static_cast<int>(std::ceil((1.0 - beta) * dim)));
}

LayerWeights src_compress(const LayerWeights& layer, double beta) {
  if (beta < 0.0 || beta > 1.0)
    throw Error(Error::Kind::kDomain, "src_compress: beta outside [0,1]");
  LayerWeights out = layer;
  if (beta == 0.0) return out;  // bit-identical fast path
  const int d = layer.w_q.rows;
  const int r = retained_rank(beta, std::min(layer.w_q.rows, layer.w_q.cols));
  (void)d;
  out.w_q = rank_r_approx(layer.w_q, r);
  out.w_k = rank_r_approx(layer.w_k, r);
  out.w_v = rank_r_approx(layer.w_v, r);
  out.w_o = rank_r_approx(layer.w_o, r);
  return out;
}

EmulatorPlan build_plan(const ImportanceTable& table, int n_adapter, double alpha,
                        double beta) {
  if (alpha < 0.0 || alpha > 1.0)
    throw Error(Error::Kind::kDomain, "build_plan: alpha outside [0,1]");
  if (beta < 0.0 || beta > 1.0)
    throw Error(Error::Kind::kDomain, "build_plan: beta outside [0,1]");
  const int n_groups = table.n_groups;
  if (n_adapter < 0 || n_adapter % n_groups != 0)
    throw Error(Error::Kind::kDomain,
                "build_plan: n_adapter must be divisible by n_groups");

  EmulatorPlan plan;
  plan.n_adapter = n_adapter;
  plan.alpha = alpha;
  plan.beta = beta;
  plan.k = n_adapter / n_groups;

  auto groups = table.groups();
  for (size_t j = 0; j < groups.size(); ++j) {
    const auto& g = groups[j];
    const int k = plan.k;
    const int kappa = static_cast<int>(std::floor(g.size() * alpha + 0.5));
    if (j == 0) plan.kappa = kappa;
    if (k + kappa > static_cast<int>(g.size())) {
      std::ostringstream os;
      os << "build_plan: quota violation in group " << j << " (k=" << k
         << ", kappa=" << kappa << ", |g|=" << g.size() << ")";
      throw Error(Error::Kind::kDomain, os.str());
    }

    // adapters: k largest scores, lower index wins ties
    std::vector<int> order = g;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (table.scores[a] != table.scores[b]) return table.scores[a] > table.scores[b];
      return a < b;
    });
    std::vector<int> adapters(order.begin(), order.begin() + k);
    plan.phi_adapter.insert(plan.phi_adapter.end(), adapters.begin(), adapters.end());

    // harmonizers: kappa smallest scores among the remainder, lower index first
    std::vector<int> rest(order.begin() + k, order.end());
    std::stable_sort(rest.begin(), rest.end(), [&](int a, int b) {
      if (table.scores[a] != table.scores[b]) return table.scores[a] < table.scores[b];
      return a < b;
    });
    plan.phi_harmonizer.insert(plan.phi_harmonizer.end(), rest.begin(),
                               rest.begin() + kappa);
  }

  std::sort(plan.phi_adapter.begin(), plan.phi_adapter.end());
  std::sort(plan.phi_harmonizer.begin(), plan.phi_harmonizer.end());
  for (int i = 0; i < table.n_layers(); ++i)
    if (!std::binary_search(plan.phi_adapter.begin(), plan.phi_adapter.end(), i))
      plan.phi_emulator.push_back(i);
  return plan;
}

bool EmulatorArtifact::is_trainable(const std::string& name, bool lora_mode) const {
  for (int idx : plan.phi_adapter) {
    const std::string p = "layer." + std::to_string(idx) + ".";
    if (name.rfind(p, 0) != 0) continue;
    if (lora_mode) return name.find(".lora_") != std::string::npos;
    return name.find(".h.") == std::string::npos;
  }
  return false;
}

EmulatorArtifact assemble_emulator(const Model& model, const HarmonizerSet& harmonizers,
                                   const EmulatorPlan& plan, uint32_t model_fingerprint) {
  const int n = model.config.n_layers;
  if (harmonizers.size() != n)
    throw Error(Error::Kind::kShape, "assemble_emulator: harmonizer count mismatch");
  if (!plan.phi_adapter.empty() &&
      (plan.phi_adapter.back() >= n || plan.phi_adapter.front() < 0))
    throw Error(Error::Kind::kDomain, "assemble_emulator: plan index out of range");
  if (plan.fingerprint != 0 && model_fingerprint != 0 &&
      plan.fingerprint != model_fingerprint)
    throw Error(Error::Kind::kContract,
                "assemble_emulator: plan fingerprint does not match the model");

  EmulatorArtifact art;
  art.plan = plan;
  art.fingerprint = model_fingerprint;
  art.model.config = model.config;
  art.model.tok_embed = model.tok_embed;
  art.model.pos_embed = model.pos_embed;
  art.model.final_g = model.final_g;
  art.model.final_b = model.final_b;
  art.model.slots.resize(n);
  art.roles.resize(n);
  for (int i = 0; i < n; ++i) {
    if (model.slots[i].kind != Slot::Kind::kLayer)
      throw Error(Error::Kind::kContract, "assemble_emulator: source slot is not a layer");
    SlotRole role = plan.role_of(i);
    art.roles[i] = role;
    Slot& s = art.model.slots[i];
    switch (role) {
      case SlotRole::kAdapter:
        s.kind = Slot::Kind::kLayer;
        s.layer = model.slots[i].layer;
        break;
      case SlotRole::kHarmonizer:
        s.kind = Slot::Kind::kHarmonizer;
        s.harm = harmonizers.items[i];
        break;
      case SlotRole::kCompressed:
        s.kind = Slot::Kind::kLayer;
        s.layer = src_compress(model.slots[i].layer, plan.beta);
        break;
    }
  }
  return art;
}

AdapterReturn extract_adapter(const EmulatorArtifact& emulator, bool lora_mode) {
  AdapterReturn ret;
  ret.indices = emulator.plan.phi_adapter;
  ret.lora = lora_mode;
  ret.fingerprint = emulator.fingerprint;
  for (int idx : ret.indices) {
    const LayerWeights& l = emulator.model.slots[idx].layer;
    if (lora_mode) {
      if (!l.lora_attached)
        throw Error(Error::Kind::kContract, "extract_adapter: lora mode without adapters");
      ret.lora_rank = l.lora_rank;
      ret.lora_deltas.push_back({l.lora_q, l.lora_v});
    } else {
      LayerWeights copy = l;
      if (copy.lora_attached) merge_lora(copy);
      ret.layers.push_back(std::move(copy));
    }
  }
  return ret;
}

Model plug_in(const Model& original, const AdapterReturn& ret, const EmulatorPlan& plan) {
  if (ret.indices != plan.phi_adapter)
    throw Error(Error::Kind::kContract, "plug_in: adapter index set does not match plan");
  Model plugged = original;
  for (size_t j = 0; j < ret.indices.size(); ++j) {
    int idx = ret.indices[j];
    if (idx < 0 || idx >= original.config.n_layers)
      throw Error(Error::Kind::kDomain, "plug_in: index out of range");
    Slot& s = plugged.slots[idx];
    if (s.kind != Slot::Kind::kLayer)
      throw Error(Error::Kind::kContract, "plug_in: target slot is not a layer");
    if (ret.lora) {
      const auto& d = ret.lora_deltas[j];
      s.layer.w_q = add(s.layer.w_q, matmul(d.q.a, d.q.b));
      s.layer.w_v = add(s.layer.w_v, matmul(d.v.a, d.v.b));
    } else {
      const LayerWeights& nl = ret.layers[j];
      if (!nl.w_q.same_shape(s.layer.w_q))
        throw Error(Error::Kind::kShape, "plug_in: returned layer shape mismatch");
      s.layer = nl;
    }
  }
  return plugged;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_plan_meta(Checkpoint& ckpt, const EmulatorPlan& plan) {
  ckpt.meta["plan.n_adapter"] = std::to_string(plan.n_adapter);
  ckpt.meta["plan.alpha"] = fmt_double(plan.alpha);
  ckpt.meta["plan.beta"] = fmt_double(plan.beta);
  ckpt.meta["plan.k"] = std::to_string(plan.k);
  ckpt.meta["plan.kappa"] = std::to_string(plan.kappa);
  ckpt.meta["plan.phi_adapter"] = join_ints(plan.phi_adapter);
  ckpt.meta["plan.phi_emulator"] = join_ints(plan.phi_emulator);
  ckpt.meta["plan.phi_harmonizer"] = join_ints(plan.phi_harmonizer);
  ckpt.meta["plan.fingerprint"] = std::to_string(plan.fingerprint);
}

EmulatorPlan read_plan_meta(const Checkpoint& ckpt) {
  EmulatorPlan plan;
  plan.n_adapter = std::stoi(ckpt.require_meta("plan.n_adapter"));
  plan.alpha = std::stod(ckpt.require_meta("plan.alpha"));
  plan.beta = std::stod(ckpt.require_meta("plan.beta"));
  plan.k = std::stoi(ckpt.require_meta("plan.k"));
  plan.kappa = std::stoi(ckpt.require_meta("plan.kappa"));
  plan.phi_adapter = parse_ints(ckpt.require_meta("plan.phi_adapter"));
  plan.phi_emulator = parse_ints(ckpt.require_meta("plan.phi_emulator"));
  plan.phi_harmonizer = parse_ints(ckpt.require_meta("plan.phi_harmonizer"));
  plan.fingerprint = static_cast<uint32_t>(std::stoul(ckpt.require_meta("plan.fingerprint")));
  return plan;
}

}  // namespace

void save_emulator(const std::string& path, const EmulatorArtifact& art) {
  Checkpoint ckpt = model_to_checkpoint(art.model);
  ckpt.meta["kind"] = "emulator";
  std::string roles;
  for (SlotRole r : art.roles)
    roles += r == SlotRole::kAdapter ? 'A' : (r == SlotRole::kHarmonizer ? 'H' : 'C');
  ckpt.meta["roles"] = roles;
  ckpt.meta["fingerprint"] = std::to_string(art.fingerprint);
  write_plan_meta(ckpt, art.plan);
  ckpt.save(path);
}

EmulatorArtifact load_emulator(const std::string& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.require_meta("kind") != "emulator")
    throw Error(Error::Kind::kTruncated, "emulator file: wrong kind");
  EmulatorArtifact art;
  art.model = model_from_checkpoint(ckpt);
  art.plan = read_plan_meta(ckpt);
  art.fingerprint = static_cast<uint32_t>(std::stoul(ckpt.require_meta("fingerprint")));
  for (char c : ckpt.require_meta("roles"))
    art.roles.push_back(c == 'A' ? SlotRole::kAdapter
                                 : (c == 'H' ? SlotRole::kHarmonizer : SlotRole::kCompressed));
  if (art.roles.size() != static_cast<size_t>(art.model.config.n_layers))
    throw Error(Error::Kind::kTruncated, "emulator file: role table length mismatch");
  return art;
}

void save_adapter_return(const std::string& path, const AdapterReturn& ret) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "adapter_return";
  ckpt.meta["indices"] = join_ints(ret.indices);
  ckpt.meta["lora"] = ret.lora ? "1" : "0";
  ckpt.meta["lora_rank"] = std::to_string(ret.lora_rank);
  ckpt.meta["fingerprint"] = std::to_string(ret.fingerprint);
  for (size_t j = 0; j < ret.indices.size(); ++j) {
    const std::string p = "layer." + std::to_string(ret.indices[j]) + ".";
    if (ret.lora) {
      const auto& d = ret.lora_deltas[j];
      ckpt.add(p + "lora_q.a", d.q.a);
      ckpt.add(p + "lora_q.b", d.q.b);
      ckpt.add(p + "lora_v.a", d.v.a);
      ckpt.add(p + "lora_v.b", d.v.b);
    } else {
      const LayerWeights& l = ret.layers[j];
      ckpt.add(p + "w_q", l.w_q);
      ckpt.add(p + "w_k", l.w_k);
      ckpt.add(p + "w_v", l.w_v);
      ckpt.add(p + "w_o", l.w_o);
      ckpt.add(p + "w_in", l.w_in);
      ckpt.add(p + "w_out", l.w_out);
      ckpt.add(p + "ln1_g", l.ln1_g);
      ckpt.add(p + "ln1_b", l.ln1_b);
      ckpt.add(p + "ln2_g", l.ln2_g);
      ckpt.add(p + "ln2_b", l.ln2_b);
    }
  }
  ckpt.save(path);
}

AdapterReturn load_adapter_return(const std::string& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.require_meta("kind") != "adapter_return")
    throw Error(Error::Kind::kTruncated, "adapter return: wrong kind");
  AdapterReturn ret;
  ret.indices = parse_ints(ckpt.require_meta("indices"));
  ret.lora = ckpt.require_meta("lora") == "1";
  ret.lora_rank = std::stoi(ckpt.require_meta("lora_rank"));
  ret.fingerprint = static_cast<uint32_t>(std::stoul(ckpt.require_meta("fingerprint")));
  for (int idx : ret.indices) {
    const std::string p = "layer." + std::to_string(idx) + ".";
    if (ret.lora) {
      AdapterReturn::LoraDelta d;
      d.q.a = ckpt.require(p + "lora_q.a");
      d.q.b = ckpt.require(p + "lora_q.b");
      d.v.a = ckpt.require(p + "lora_v.a");
      d.v.b = ckpt.require(p + "lora_v.b");
      ret.lora_deltas.push_back(std::move(d));
    } else {
      LayerWeights l;
      l.w_q = ckpt.require(p + "w_q");
      l.w_k = ckpt.require(p + "w_k");
      l.w_v = ckpt.require(p + "w_v");
      l.w_o = ckpt.require(p + "w_o");
      l.w_in = ckpt.require(p + "w_in");
      l.w_out = ckpt.require(p + "w_out");
      l.ln1_g = ckpt.require(p + "ln1_g");
      l.ln1_b = ckpt.require(p + "ln1_b");
      l.ln2_g = ckpt.require(p + "ln2_g");
      l.ln2_b = ckpt.require(p + "ln2_b");
      ret.layers.push_back(std::move(l));
    }
  }
  return ret;
}

}  // namespace sotc
