#include "sotc/runconfig.hpp"

#include <fstream>
#include <sstream>
#include <variant>

namespace sotc {

namespace {

using Member = std::variant<int RunConfig::*, double RunConfig::*,
                            std::string RunConfig::*, uint64_t RunConfig::*>;

struct Field {
  const char* key;
  Member member;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"n_layers", &RunConfig::n_layers},
      {"d_model", &RunConfig::d_model},
      {"n_heads", &RunConfig::n_heads},
      {"d_ffn", &RunConfig::d_ffn},
      {"context_len", &RunConfig::context_len},
      {"vocab_size", &RunConfig::vocab_size},
      {"harmonizer_rank", &RunConfig::harmonizer_rank},
      {"pretrain_steps", &RunConfig::pretrain_steps},
      {"pretrain_lr", &RunConfig::pretrain_lr},
      {"batch_size", &RunConfig::batch_size},
      {"est_candidates", &RunConfig::est_candidates},
      {"est_groups", &RunConfig::est_groups},
      {"est_total_steps", &RunConfig::est_total_steps},
      {"est_rl_interval", &RunConfig::est_rl_interval},
      {"est_lr", &RunConfig::est_lr},
      {"est_val_batch", &RunConfig::est_val_batch},
      {"emu_n_adapter", &RunConfig::emu_n_adapter},
      {"emu_alpha", &RunConfig::emu_alpha},
      {"emu_beta", &RunConfig::emu_beta},
      {"tune_steps", &RunConfig::tune_steps},
      {"tune_lr", &RunConfig::tune_lr},
      {"tune_mode", &RunConfig::tune_mode},
      {"lora_rank", &RunConfig::lora_rank},
      {"pretrain_path", &RunConfig::pretrain_path},
      {"downstream_path", &RunConfig::downstream_path},
      {"train_frac", &RunConfig::train_frac},
      {"val_frac", &RunConfig::val_frac},
      {"cond3_tol", &RunConfig::cond3_tol},
      {"eval_max_windows", &RunConfig::eval_max_windows},
      {"sweep_alphas", &RunConfig::sweep_alphas},
      {"sweep_betas", &RunConfig::sweep_betas},
      {"sweep_seeds", &RunConfig::sweep_seeds},
      {"seed", &RunConfig::seed},
  };
  return f;
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.n_layers = n_layers;
  m.d_model = d_model;
  m.n_heads = n_heads;
  m.d_ffn = d_ffn;
  m.context_len = context_len;
  m.vocab_size = vocab_size;
  m.harmonizer_rank = harmonizer_rank;
  return m;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key != f.key) continue;
    try {
      std::visit(
          [&](auto member) {
            using T = std::remove_reference_t<decltype(this->*member)>;
            if constexpr (std::is_same_v<T, int>) {
              this->*member = std::stoi(value);
            } else if constexpr (std::is_same_v<T, double>) {
              this->*member = std::stod(value);
            } else if constexpr (std::is_same_v<T, uint64_t>) {
              this->*member = std::stoull(value);
            } else {
              this->*member = value;
            }
          },
          f.member);
      return;
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error(Error::Kind::kDomain, "config: bad value for " + key + ": " + value);
    }
  }
  throw Error(Error::Kind::kDomain, "config: unknown key: " + key);
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const Field& f : fields()) {
    std::ostringstream os;
    os.precision(17);
    std::visit([&](auto member) { os << this->*member; }, f.member);
    out[f.key] = os.str();
  }
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> v;
    for (const Field& f : fields()) v.push_back(f.key);
    return v;
  }();
  return k;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Error::Kind::kIo, "config: cannot open " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Error::Kind::kDomain,
                  "config: line " + std::to_string(lineno) + " is not key = value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(Error::Kind::kIo, "config: cannot write " + path);
  for (const auto& [k, v] : to_map()) f << k << " = " << v << "\n";
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      size_t used = 0;
      double v = std::stod(item, &used);
      if (item.find_first_not_of(" \t", used) != std::string::npos)
        throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw Error(Error::Kind::kDomain, "bad number in list: '" + item + "'");
    }
  }
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<uint64_t> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      size_t used = 0;
      uint64_t v = std::stoull(item, &used);
      if (item.find_first_not_of(" \t", used) != std::string::npos)
        throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw Error(Error::Kind::kDomain, "bad seed in list: '" + item + "'");
    }
  }
  return out;
}

}  // namespace sotc
