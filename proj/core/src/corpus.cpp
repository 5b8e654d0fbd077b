#include "sotc/corpus.hpp"

#include <fstream>
#include <sstream>

namespace sotc {

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Error::Kind::kIo, "corpus: cannot open: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

namespace {

std::vector<std::vector<int>> window_range(const std::string& bytes, size_t begin,
                                           size_t end, int context_len) {
  std::vector<std::vector<int>> out;
  if (begin >= end) return out;
  auto ids = tokenize_bytes(bytes.substr(begin, end - begin));
  for (auto& w : split_windows(ids, context_len))
    if (w.size() >= 2) out.push_back(std::move(w));
  return out;
}

}  // namespace

CorpusSplit split_corpus(const std::string& bytes, int context_len,
                         double train_frac, double val_frac) {
  if (bytes.empty()) throw Error(Error::Kind::kDomain, "corpus: empty input");
  if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac > 1.0)
    throw Error(Error::Kind::kDomain, "corpus: invalid split fractions");
  CorpusSplit cs;
  cs.train_frac = train_frac;
  cs.val_frac = val_frac;
  cs.context_len = context_len;
  const size_t n = bytes.size();
  const size_t train_end = static_cast<size_t>(n * train_frac);
  const size_t val_end = static_cast<size_t>(n * (train_frac + val_frac));
  cs.train_bytes = train_end;
  cs.val_bytes = val_end - train_end;
  cs.eval_bytes = n - val_end;
  cs.train = window_range(bytes, 0, train_end, context_len);
  cs.val = window_range(bytes, train_end, val_end, context_len);
  cs.eval_windows = window_range(bytes, val_end, n, context_len);
  return cs;
}

CorpusSplit load_corpus(const std::string& path, int context_len,
                        double train_frac, double val_frac) {
  CorpusSplit cs = split_corpus(read_file_bytes(path), context_len, train_frac, val_frac);
  cs.source_path = path;
  return cs;
}

}  // namespace sotc
