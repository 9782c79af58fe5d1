// Throughput benchmarks for the kernels the training loop lives in: matrix
// products, a full forward pass, one optimization step of each flavor, and
// autoregressive generation.

#include <benchmark/benchmark.h>

#include <vector>

#include "tinydistill/data.hpp"
#include "tinydistill/distill.hpp"
#include "tinydistill/graph.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/tensor.hpp"
#include "tinydistill/transformer.hpp"

using namespace tinydistill;

namespace {

ModelConfig bench_config(int layers) {
  return ModelConfig{100, 128, 8, layers, 256, 128};
}

std::vector<int> bench_tokens(int n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& t : out) t = rng.uniform_int(vocab);
  return out;
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Graph<float> g;
  g.set_recording(false);
  auto a = make_tensor<float>({n, n}, true);
  auto b = make_tensor<float>({n, n}, true);
  Rng rng(1);
  for (auto& v : a->data) v = static_cast<float>(rng.normal()) * 0.05f;
  for (auto& v : b->data) v = static_cast<float>(rng.normal()) * 0.05f;
  for (auto _ : state) {
    auto c = g.matmul(a, b);
    benchmark::DoNotOptimize(c->data.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);  // FLOPs
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Forward(benchmark::State& state) {
  const int seq = static_cast<int>(state.range(0));
  const auto cfg = bench_config(4);
  auto model = TransformerLM<float>::random_init(cfg, 2);
  const auto tokens = bench_tokens(seq, cfg.vocab_size, 3);
  for (auto _ : state) {
    auto trace = forward(model, std::span<const int>(tokens));
    benchmark::DoNotOptimize(trace.logits->data.data());
  }
  state.SetItemsProcessed(state.iterations() * seq);  // tokens
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(128);

void BM_TrainStep(benchmark::State& state) {
  const auto cfg = bench_config(4);
  auto model = TransformerLM<float>::random_init(cfg, 4);
  auto src = make_source(5, cfg.vocab_size, 1.0);
  const auto corpus = build_stream_corpus(src, 8, 256, 6);
  TrainConfig tc{.steps = 1, .batch_size = 4, .seq_len = 64, .log_interval = 1};
  AdamState<float> opt;
  int step = 0;
  for (auto _ : state) {
    tc.steps = step + 1;  // run exactly one more step
    train_lm(model, corpus, tc, &opt, step);
    ++step;
  }
  state.SetItemsProcessed(state.iterations() * tc.batch_size * tc.seq_len);  // tokens
}
BENCHMARK(BM_TrainStep);

void BM_DistillStep(benchmark::State& state) {
  const auto teacher_cfg = bench_config(8);
  auto teacher = TransformerLM<float>::random_init(teacher_cfg, 7);
  DistillConfig dc;
  dc.map = {2, 1};
  auto student = prune_init(teacher, dc.map, 3);
  auto src = make_source(8, teacher_cfg.vocab_size, 1.0);
  const auto corpus = build_stream_corpus(src, 8, 256, 9);
  TrainConfig tc{.steps = 1, .batch_size = 4, .seq_len = 64, .log_interval = 1};
  AdamState<float> opt;
  int step = 0;
  for (auto _ : state) {
    tc.steps = step + 1;
    distill_train(teacher, student, corpus, dc, tc, &opt, step);
    ++step;
  }
  state.SetItemsProcessed(state.iterations() * tc.batch_size * tc.seq_len);  // tokens
}
BENCHMARK(BM_DistillStep);

void BM_Generate(benchmark::State& state) {
  const auto cfg = bench_config(4);
  auto model = TransformerLM<float>::random_init(cfg, 10);
  const auto prompt = bench_tokens(8, cfg.vocab_size, 11);
  const int n_new = 56;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto out = generate(model, prompt, n_new, 1.0, ++seed);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n_new);  // tokens
}
BENCHMARK(BM_Generate);

}  // namespace

BENCHMARK_MAIN();
