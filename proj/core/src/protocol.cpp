#include "sotc/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sotc/checkpoint.hpp"

namespace fs = std::filesystem;

namespace sotc {

std::string MetricsReport::csv_header() {
  return "zs,ft,emulator_zs,emulator_ft,plug_in,delta,cond1,cond2,cond3";
}

std::string MetricsReport::csv_fields() const {
  std::ostringstream os;
  os.precision(17);
  os << zs << "," << ft << "," << emulator_zs << "," << emulator_ft << ","
     << plug_in << "," << delta << "," << cond1 << "," << cond2 << "," << cond3;
  return os.str();
}

MetricsReport MetricsReport::parse_csv_fields(const std::string& fields) {
  std::istringstream is(fields);
  std::string item;
  std::vector<std::string> parts;
  while (std::getline(is, item, ',')) parts.push_back(item);
  if (parts.size() != 9)
    throw Error(Error::Kind::kDomain, "MetricsReport: expected 9 CSV fields");
  MetricsReport r;
  r.zs = std::stod(parts[0]);
  r.ft = std::stod(parts[1]);
  r.emulator_zs = std::stod(parts[2]);
  r.emulator_ft = std::stod(parts[3]);
  r.plug_in = std::stod(parts[4]);
  r.delta = std::stod(parts[5]);
  r.cond1 = parts[6] == "1";
  r.cond2 = parts[7] == "1";
  r.cond3 = parts[8] == "1";
  r.verdict = r.cond1 && r.cond2 && r.cond3;
  return r;
}

double evaluate_perplexity(const Model& model,
                           const std::vector<std::vector<int>>& windows) {
  if (windows.empty())
    throw Error(Error::Kind::kDomain, "evaluate_perplexity: empty split");
  double sum = 0.0;
  for (const auto& w : windows) sum += model.window_loss(w);
  return std::exp(sum / static_cast<double>(windows.size()));
}

MetricsReport check_conditions(MetricsReport r, double tol) {
  r.delta = r.emulator_ft - r.plug_in;
  r.cond1 = r.plug_in < r.zs;
  r.cond2 = r.plug_in < r.emulator_ft;
  r.cond3 = r.plug_in <= r.ft * (1.0 + tol);
  r.verdict = r.cond1 && r.cond2 && r.cond3;
  return r;
}

double train_lm(Model& model, const std::vector<std::vector<int>>& windows,
                int steps, double lr, int batch_size, const TrainableFilter& filter,
                uint64_t seed, uint64_t stream, std::vector<double>* loss_log) {
  if (windows.empty()) throw Error(Error::Kind::kDomain, "train_lm: no windows");
  RngStream batch_rng(seed, stream);
  AdamW opt(AdamW::Hyper{.lr = lr});
  double loss = 0.0;
  for (int step = 0; step < steps; ++step) {
    std::vector<std::vector<int>> batch;
    batch.reserve(batch_size);
    for (int b = 0; b < batch_size; ++b)
      batch.push_back(windows[batch_rng.index(windows.size())]);
    loss = train_step(model, batch, filter, opt);
    if (loss_log) loss_log->push_back(loss);
  }
  return loss;
}

EmulatorPlan owner_prepare(const RoleContext& owner, const std::string& model_ckpt_path,
                           const std::string& importance_path, int n_adapter,
                           double alpha, double beta) {
  if (owner.role != RoleContext::Role::kModelOwner)
    throw Error(Error::Kind::kContract, "owner_prepare: caller is not the model owner");
  const uint32_t fingerprint = file_crc32(model_ckpt_path);
  ImportanceArtifact importance = load_importance(importance_path);
  if (importance.fingerprint != 0 && importance.fingerprint != fingerprint)
    throw Error(Error::Kind::kContract,
                "owner_prepare: importance artifact was computed for a different model");
  Model model = model_from_checkpoint(Checkpoint::load(model_ckpt_path));

  EmulatorPlan plan = build_plan(importance.table, n_adapter, alpha, beta);
  plan.fingerprint = fingerprint;
  EmulatorArtifact emulator =
      assemble_emulator(model, importance.harmonizers, plan, fingerprint);
  fs::create_directories(owner.exchange_dir);
  save_emulator(owner.emulator_path(), emulator);
  return plan;
}

namespace {

std::vector<std::vector<int>> cap_windows(const std::vector<std::vector<int>>& w,
                                          int limit) {
  if (limit <= 0 || static_cast<int>(w.size()) <= limit) return w;
  return {w.begin(), w.begin() + limit};
}

// Concatenated bytes of every non-trainable tensor, for freeze auditing.
std::string frozen_blob(const EmulatorArtifact& art, bool lora_mode) {
  std::string blob;
  for (const auto& [name, t] : art.model.named_params()) {
    if (art.is_trainable(name, lora_mode)) continue;
    const char* p = reinterpret_cast<const char*>(t->data.data());
    blob.append(p, t->size() * sizeof(double));
  }
  return blob;
}

}  // namespace

FinetuneResult data_finetune(const RoleContext& data_owner, const CorpusSplit& downstream,
                             int steps, double lr, bool lora_mode, int lora_rank,
                             int batch_size, uint64_t seed, int eval_max_windows) {
  if (data_owner.role != RoleContext::Role::kDataOwner)
    throw Error(Error::Kind::kContract, "data_finetune: caller is not the data owner");
  EmulatorArtifact emulator = load_emulator(data_owner.emulator_path());

  if (lora_mode) {
    RngStream lora_rng(seed, 77);
    for (int idx : emulator.plan.phi_adapter)
      attach_lora(emulator.model.slots[idx].layer, lora_rank,
                  emulator.model.config.d_model, lora_rng);
  }

  auto eval_windows = cap_windows(downstream.eval_windows, eval_max_windows);
  FinetuneResult result;
  result.emulator_zs = evaluate_perplexity(emulator.model, eval_windows);

  const std::string before = frozen_blob(emulator, lora_mode);
  if (steps > 0) {
    train_lm(emulator.model, downstream.train, steps, lr, batch_size,
             [&](const std::string& name) { return emulator.is_trainable(name, lora_mode); },
             seed, 50);
  }
  if (frozen_blob(emulator, lora_mode) != before)
    throw Error(Error::Kind::kContract,
                "data_finetune: frozen emulator slots were modified");

  result.emulator_ft = evaluate_perplexity(emulator.model, eval_windows);
  AdapterReturn ret = extract_adapter(emulator, lora_mode);
  save_adapter_return(data_owner.adapter_return_path(), ret);
  return result;
}

PlugInResult owner_plug_in(const std::string& model_ckpt_path,
                           const std::string& adapter_return_path,
                           const EmulatorPlan& plan,
                           const std::vector<std::vector<int>>& eval_windows) {
  Model original = model_from_checkpoint(Checkpoint::load(model_ckpt_path));
  AdapterReturn ret = load_adapter_return(adapter_return_path);
  if (ret.fingerprint != 0 && plan.fingerprint != 0 && ret.fingerprint != plan.fingerprint)
    throw Error(Error::Kind::kContract,
                "owner_plug_in: adapter return was tuned against a different model");
  PlugInResult out{plug_in(original, ret, plan), 0.0};
  out.perplexity = evaluate_perplexity(out.plugged, eval_windows);
  return out;
}

namespace {

// Seed-level cache: pretrained checkpoint, importance artifact, zs/ft.
struct SeedArtifacts {
  std::string model_ckpt;
  std::string importance_path;
  double zs = 0, ft = 0;
};

SeedArtifacts prepare_seed(const RunConfig& cfg, const std::string& work_dir,
                           uint64_t seed) {
  fs::create_directories(work_dir);
  SeedArtifacts art;
  art.model_ckpt = work_dir + "/model_seed" + std::to_string(seed) + ".sotc";
  art.importance_path = work_dir + "/importance_seed" + std::to_string(seed) + ".sotc";
  const std::string metrics_path = work_dir + "/base_metrics_seed" + std::to_string(seed) + ".txt";

  CorpusSplit pretrain = load_corpus(cfg.pretrain_path, cfg.context_len,
                                     cfg.train_frac, cfg.val_frac);
  CorpusSplit downstream = load_corpus(cfg.downstream_path, cfg.context_len,
                                       cfg.train_frac, cfg.val_frac);
  auto eval_windows = cap_windows(downstream.eval_windows, cfg.eval_max_windows);

  if (!fs::exists(art.model_ckpt)) {
    RngStream init_rng(seed, 0);
    Model model = Model::random_init(cfg.model_config(), init_rng);
    train_lm(model, pretrain.train, cfg.pretrain_steps, cfg.pretrain_lr,
             cfg.batch_size, [](const std::string&) { return true; }, seed, 10);
    model_to_checkpoint(model).save(art.model_ckpt);
  }
  if (!fs::exists(art.importance_path)) {
    Model model = model_from_checkpoint(Checkpoint::load(art.model_ckpt));
    EstimationSchedule sched;
    sched.total_steps = cfg.est_total_steps;
    sched.rl_interval = cfg.est_rl_interval;
    sched.n_candidates = cfg.est_candidates;
    sched.n_groups = cfg.est_groups;
    sched.lr = cfg.est_lr;
    sched.batch_size = cfg.batch_size;
    sched.val_batch_size = cfg.est_val_batch;
    EstimationOutput est = run_estimation(model, pretrain.train, pretrain.val, sched, seed);
    ImportanceArtifact imp{est.table, est.harmonizers, file_crc32(art.model_ckpt)};
    save_importance(art.importance_path, imp);
    write_estimation_log(work_dir + "/estimation_seed" + std::to_string(seed) + ".csv",
                         est.log, sched.n_candidates);
  }
  if (fs::exists(metrics_path)) {
    std::ifstream f(metrics_path);
    f >> art.zs >> art.ft;
    if (!f) throw Error(Error::Kind::kIo, "pipeline: corrupt base metrics cache");
  } else {
    Model model = model_from_checkpoint(Checkpoint::load(art.model_ckpt));
    art.zs = evaluate_perplexity(model, eval_windows);
    Model ft_model = model;
    train_lm(ft_model, downstream.train, cfg.tune_steps, cfg.tune_lr, cfg.batch_size,
             [](const std::string&) { return true; }, seed, 20);
    art.ft = evaluate_perplexity(ft_model, eval_windows);
    std::ofstream f(metrics_path, std::ios::trunc);
    f.precision(17);
    f << art.zs << " " << art.ft << "\n";
  }
  return art;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const std::string& work_dir,
                            double alpha, double beta, uint64_t seed) {
  SeedArtifacts base = prepare_seed(cfg, work_dir, seed);

  std::ostringstream cell;
  cell << work_dir << "/cell_a" << alpha << "_b" << beta << "_s" << seed;
  const std::string owner_dir = cell.str() + "/owner";
  const std::string data_dir = cell.str() + "/data";
  const std::string exchange = cell.str() + "/exchange";
  fs::create_directories(owner_dir);
  fs::create_directories(data_dir);
  fs::create_directories(exchange);

  RoleContext owner{RoleContext::Role::kModelOwner, owner_dir, exchange};
  RoleContext data_owner{RoleContext::Role::kDataOwner, data_dir, exchange};

  EmulatorPlan plan = owner_prepare(owner, base.model_ckpt, base.importance_path,
                                    cfg.emu_n_adapter, alpha, beta);

  CorpusSplit downstream = load_corpus(cfg.downstream_path, cfg.context_len,
                                       cfg.train_frac, cfg.val_frac);
  const bool lora_mode = cfg.tune_mode == "lora";
  FinetuneResult ft = data_finetune(data_owner, downstream, cfg.tune_steps, cfg.tune_lr,
                                    lora_mode, cfg.lora_rank, cfg.batch_size, seed,
                                    cfg.eval_max_windows);

  auto eval_windows = cap_windows(downstream.eval_windows, cfg.eval_max_windows);
  PlugInResult plugged = owner_plug_in(base.model_ckpt, data_owner.adapter_return_path(),
                                       plan, eval_windows);

  MetricsReport report;
  report.zs = base.zs;
  report.ft = base.ft;
  report.emulator_zs = ft.emulator_zs;
  report.emulator_ft = ft.emulator_ft;
  report.plug_in = plugged.perplexity;
  report = check_conditions(report, cfg.cond3_tol);

  PipelineResult out;
  out.report = report;
  out.model_ckpt = base.model_ckpt;
  out.importance_path = base.importance_path;
  out.plan = plan;
  return out;
}

std::string sweep_csv_header() {
  return "alpha,beta,seed," + MetricsReport::csv_header() + ",status";
}

std::string sweep_csv_row(const SweepCell& cell) {
  std::ostringstream os;
  os.precision(17);
  os << cell.alpha << "," << cell.beta << "," << cell.seed << ",";
  if (cell.report) {
    os << cell.report->csv_fields();
  } else {
    os << ",,,,,,,,";
  }
  os << "," << cell.status;
  return os.str();
}

SweepGrid run_sweep(const RunConfig& cfg, const std::string& work_dir,
                    const std::string& csv_path) {
  SweepGrid grid;
  grid.alphas = parse_double_list(cfg.sweep_alphas);
  grid.betas = parse_double_list(cfg.sweep_betas);
  grid.seeds = parse_seed_list(cfg.sweep_seeds);
  if (grid.alphas.empty() || grid.betas.empty() || grid.seeds.empty())
    throw Error(Error::Kind::kDomain, "run_sweep: empty grid axis");

  // resume: completed cells keyed by (alpha, beta, seed)
  std::map<std::string, std::string> done;
  if (fs::exists(csv_path)) {
    std::ifstream f(csv_path);
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      auto p3 = line.find(',', line.find(',', line.find(',') + 1) + 1);
      if (p3 == std::string::npos) continue;
      if (line.substr(line.rfind(',') + 1) != "ok") continue;  // retry failures
      done[line.substr(0, p3)] = line;
    }
  }

  for (double alpha : grid.alphas) {
    for (double beta : grid.betas) {
      for (uint64_t seed : grid.seeds) {
        SweepCell cell;
        cell.alpha = alpha;
        cell.beta = beta;
        cell.seed = seed;
        std::ostringstream key;
        key.precision(17);
        key << alpha << "," << beta << "," << seed;
        auto it = done.find(key.str());
        if (it != done.end()) {
          auto p3 = it->second.find(',', it->second.find(',', it->second.find(',') + 1) + 1);
          auto last = it->second.rfind(',');
          cell.report =
              MetricsReport::parse_csv_fields(it->second.substr(p3 + 1, last - p3 - 1));
          cell.status = "ok";
        } else {
          try {
            cell.report = run_pipeline(cfg, work_dir, alpha, beta, seed).report;
          } catch (const std::exception& e) {
            std::string msg = e.what();
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            cell.status = msg;
          }
        }
        grid.cells.push_back(std::move(cell));
        // rewrite after every cell so interrupts lose at most one cell
        std::ofstream f(csv_path, std::ios::trunc);
        f << sweep_csv_header() << "\n";
        for (const auto& c : grid.cells) f << sweep_csv_row(c) << "\n";
      }
    }
  }
  return grid;
}

}  // namespace sotc
