#pragma once

#include <string>
#include <vector>

#include "sotc/model.hpp"

namespace sotc {

// Byte corpus split into disjoint contiguous ranges (train / val / eval),
// each tokenized and windowed. Contiguous ranges keep the D^T / D^V
// disjointness auditable from the byte accounting alone.
struct CorpusSplit {
  std::string source_path;
  double train_frac = 0.8;
  double val_frac = 0.1;  // eval gets the remainder
  int context_len = 128;
  size_t train_bytes = 0, val_bytes = 0, eval_bytes = 0;
  std::vector<std::vector<int>> train, val, eval_windows;
};

std::string read_file_bytes(const std::string& path);

CorpusSplit split_corpus(const std::string& bytes, int context_len,
                         double train_frac, double val_frac);

CorpusSplit load_corpus(const std::string& path, int context_len,
                        double train_frac, double val_frac);

}  // namespace sotc
