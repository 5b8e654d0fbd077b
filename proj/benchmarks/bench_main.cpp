#include <benchmark/benchmark.h>

#include "sotc/model.hpp"
#include "sotc/rng.hpp"
#include "sotc/svd.hpp"
#include "sotc/tensor.hpp"

namespace {

sotc::Tensor random_tensor(int rows, int cols, sotc::RngStream& rng) {
  sotc::Tensor t(rows, cols);
  for (auto& v : t.data) v = rng.normal(0.0, 1.0);
  return t;
}

void bench_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  sotc::RngStream rng(7, 0);
  sotc::Tensor a = random_tensor(n, n, rng);
  sotc::Tensor b = random_tensor(n, n, rng);
  for (auto _ : state) {
    sotc::Tensor c = sotc::matmul(a, b);
    benchmark::DoNotOptimize(c.data.data());
  }
}
BENCHMARK(bench_matmul)->Arg(64)->Arg(128)->Arg(256);

void bench_svd(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  sotc::RngStream rng(11, 0);
  sotc::Tensor w = random_tensor(n, n, rng);
  for (auto _ : state) {
    sotc::SvdResult r = sotc::svd(w);
    benchmark::DoNotOptimize(r.sigma.data());
  }
}
BENCHMARK(bench_svd)->Arg(32)->Arg(64);

void bench_forward(benchmark::State& state) {
  sotc::ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.d_ffn = 256;
  cfg.context_len = 64;
  sotc::RngStream rng(3, 0);
  sotc::Model model = sotc::Model::random_init(cfg, rng);
  std::vector<int> window(cfg.context_len);
  sotc::RngStream tok(3, 1);
  for (auto& t : window) t = static_cast<int>(tok.index(256));
  for (auto _ : state) {
    double loss = model.window_loss(window);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(bench_forward);

}  // namespace

BENCHMARK_MAIN();
