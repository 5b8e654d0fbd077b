#include "sotc/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <tuple>

namespace sotc {

namespace {

constexpr char kMagic[4] = {'S', 'O', 'T', 'C'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

uint64_t get_u64(const std::string& s, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

void put_f64_le(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

double get_f64_le(const std::string& s, size_t off) {
  uint64_t bits = get_u64(s, off);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& Checkpoint::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw Error(Error::Kind::kTruncated, "checkpoint: missing tensor " + name);
  return *t;
}

const std::string& Checkpoint::require_meta(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end())
    throw Error(Error::Kind::kTruncated, "checkpoint: missing metadata key " + key);
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  // payload + directory
  std::string payload;
  std::ostringstream dir;
  uint64_t offset = 0;
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, t] = tensors[i];
    dir << "tensor." << i << "=" << name << " " << t.rows << " " << t.cols
        << " " << offset << "\n";
    for (double d : t.data) put_f64_le(payload, d);
    offset += t.size() * 8;
  }

  std::ostringstream ms;
  ms << "tensor_count=" << tensors.size() << "\n";
  for (const auto& [k, v] : meta) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw Error(Error::Kind::kDomain, "checkpoint: metadata key/value contains '=' or newline");
    ms << k << "=" << v << "\n";
  }
  ms << dir.str();
  const std::string meta_bytes = ms.str();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, meta_bytes.size());
  out += meta_bytes;
  put_u64(out, payload.size());
  out += payload;
  uint32_t crc = static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
  put_u32(out, crc);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Error::Kind::kIo, "checkpoint: cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(Error::Kind::kIo, "checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Error::Kind::kIo, "checkpoint: cannot open: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string s = buf.str();

  if (s.size() < 4 || std::memcmp(s.data(), kMagic, 4) != 0)
    throw Error(Error::Kind::kBadMagic, "checkpoint: bad magic in " + path);
  if (s.size() < 16) throw Error(Error::Kind::kTruncated, "checkpoint: header truncated");
  uint32_t version = get_u32(s, 4);
  if (version != kVersion)
    throw Error(Error::Kind::kVersion,
                "checkpoint: unsupported version " + std::to_string(version));
  uint64_t meta_len = get_u64(s, 8);
  size_t pos = 16;
  if (s.size() < pos + meta_len + 8)
    throw Error(Error::Kind::kTruncated, "checkpoint: metadata truncated");
  const std::string meta_bytes = s.substr(pos, meta_len);
  pos += meta_len;
  uint64_t payload_len = get_u64(s, pos);
  pos += 8;
  if (s.size() < pos + payload_len + 4)
    throw Error(Error::Kind::kTruncated, "checkpoint: payload truncated");
  const size_t payload_start = pos;
  pos += payload_len;
  uint32_t stored_crc = get_u32(s, pos);
  uint32_t actual_crc = static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(pos)));
  if (stored_crc != actual_crc)
    throw Error(Error::Kind::kChecksum, "checkpoint: CRC mismatch in " + path);

  Checkpoint ckpt;
  std::vector<std::tuple<std::string, int, int, uint64_t>> dir;
  std::istringstream ms(meta_bytes);
  std::string line;
  size_t tensor_count = 0;
  while (std::getline(ms, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Error::Kind::kTruncated, "checkpoint: malformed metadata line");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "tensor_count") {
      tensor_count = std::stoull(val);
    } else if (key.rfind("tensor.", 0) == 0) {
      std::istringstream vs(val);
      std::string name;
      int rows, cols;
      uint64_t off;
      if (!(vs >> name >> rows >> cols >> off))
        throw Error(Error::Kind::kTruncated, "checkpoint: malformed tensor entry");
      dir.emplace_back(name, rows, cols, off);
    } else {
      ckpt.meta[key] = val;
    }
  }
  if (dir.size() != tensor_count)
    throw Error(Error::Kind::kTruncated, "checkpoint: tensor directory incomplete");

  for (auto& [name, rows, cols, off] : dir) {
    Tensor t(rows, cols);
    uint64_t need = off + t.size() * 8;
    if (need > payload_len)
      throw Error(Error::Kind::kTruncated, "checkpoint: tensor exceeds payload: " + name);
    for (size_t i = 0; i < t.size(); ++i)
      t.data[i] = get_f64_le(s, payload_start + off + i * 8);
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  return ckpt;
}

Checkpoint model_to_checkpoint(const Model& m) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "model";
  ckpt.meta["n_layers"] = std::to_string(m.config.n_layers);
  ckpt.meta["d_model"] = std::to_string(m.config.d_model);
  ckpt.meta["n_heads"] = std::to_string(m.config.n_heads);
  ckpt.meta["d_ffn"] = std::to_string(m.config.d_ffn);
  ckpt.meta["context_len"] = std::to_string(m.config.context_len);
  ckpt.meta["vocab_size"] = std::to_string(m.config.vocab_size);
  ckpt.meta["harmonizer_rank"] = std::to_string(m.config.harmonizer_rank);
  ckpt.meta["head"] = "tied";
  std::string kinds, lora;
  for (const auto& slot : m.slots) {
    kinds += slot.kind == Slot::Kind::kLayer ? 'L' : 'H';
    lora += slot.kind == Slot::Kind::kLayer && slot.layer.lora_attached
                ? std::to_string(slot.layer.lora_rank)
                : "0";
    lora += ',';
  }
  ckpt.meta["slot_kinds"] = kinds;
  ckpt.meta["lora_ranks"] = lora;
  for (const auto& [name, t] : m.named_params()) ckpt.add(name, *t);
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg;
  cfg.n_layers = std::stoi(ckpt.require_meta("n_layers"));
  cfg.d_model = std::stoi(ckpt.require_meta("d_model"));
  cfg.n_heads = std::stoi(ckpt.require_meta("n_heads"));
  cfg.d_ffn = std::stoi(ckpt.require_meta("d_ffn"));
  cfg.context_len = std::stoi(ckpt.require_meta("context_len"));
  cfg.vocab_size = std::stoi(ckpt.require_meta("vocab_size"));
  cfg.harmonizer_rank = std::stoi(ckpt.require_meta("harmonizer_rank"));
  cfg.validate();

  const std::string kinds = ckpt.require_meta("slot_kinds");
  if (static_cast<int>(kinds.size()) != cfg.n_layers)
    throw Error(Error::Kind::kTruncated, "checkpoint: slot_kinds length mismatch");
  std::vector<int> lora_ranks;
  {
    std::istringstream ls(ckpt.require_meta("lora_ranks"));
    std::string item;
    while (std::getline(ls, item, ',')) lora_ranks.push_back(std::stoi(item));
  }

  Model m;
  m.config = cfg;
  m.slots.resize(cfg.n_layers);
  for (int i = 0; i < cfg.n_layers; ++i) {
    Slot& slot = m.slots[i];
    if (kinds[i] == 'H') {
      slot.kind = Slot::Kind::kHarmonizer;
    } else {
      slot.kind = Slot::Kind::kLayer;
      if (lora_ranks[i] > 0) {
        slot.layer.lora_attached = true;
        slot.layer.lora_rank = lora_ranks[i];
        // shapes filled below from the directory
        slot.layer.lora_q.a = Tensor(cfg.d_model, lora_ranks[i]);
        slot.layer.lora_q.b = Tensor(lora_ranks[i], cfg.d_model);
        slot.layer.lora_v.a = Tensor(cfg.d_model, lora_ranks[i]);
        slot.layer.lora_v.b = Tensor(lora_ranks[i], cfg.d_model);
      }
    }
  }
  for (auto& [name, ptr] : m.named_params()) *ptr = ckpt.require(name);
  return m;
}

uint32_t file_crc32(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Error::Kind::kIo, "file_crc32: cannot open: " + path);
  uint32_t crc = static_cast<uint32_t>(::crc32(0L, Z_NULL, 0));
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    std::streamsize n = f.gcount();
    if (n > 0)
      crc = static_cast<uint32_t>(
          ::crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(n)));
  }
  return crc;
}

}  // namespace sotc
