#include <benchmark/benchmark.h>

#include "dtpn/eval.hpp"
#include "dtpn/model.hpp"
#include "dtpn/postprocess.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dtpn;

namespace {

// arg: input dim d; S=5, K_1=16, M=5
void BM_ModelForward(benchmark::State& state) {
  ModelConfig c;
  c.input_dim = static_cast<int>(state.range(0));
  c.num_classes = 5;
  Model m(c);
  m.init(1);
  Rng rng(1);
  const auto p = testing::random_pyramid(rng, 5, 16, c.input_dim);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(p));
}
BENCHMARK(BM_ModelForward)->Arg(32)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ModelForwardBackward(benchmark::State& state) {
  ModelConfig c;
  c.input_dim = 32;
  c.num_classes = 5;
  Model m(c);
  m.init(1);
  Rng rng(1);
  const auto p = testing::random_pyramid(rng, 5, 16, 32);
  for (auto _ : state) {
    auto st = m.forward(p);
    for (auto& h : st.heads) std::fill(h.grad.begin(), h.grad.end(), 1.0f);
    m.backward(st);
  }
}
BENCHMARK(BM_ModelForwardBackward)->Unit(benchmark::kMillisecond);

void BM_TemporalNms(benchmark::State& state) {
  Rng rng(3);
  const auto dets = testing::random_detections(rng, static_cast<std::size_t>(state.range(0)), 5);
  for (auto _ : state) benchmark::DoNotOptimize(temporal_nms(dets, 0.5, 100));
}
BENCHMARK(BM_TemporalNms)->Arg(155)->Arg(2000);

void BM_Evaluate(benchmark::State& state) {
  Rng rng(4);
  Corpus corpus;
  io::DetectionResults results;
  corpus.labels = {"a", "b", "c"};
  for (int v = 0; v < state.range(0); ++v) {
    auto inst = testing::random_eval_instance(rng);
    for (auto& rec : inst.corpus.videos) {
      const std::string id = "v" + std::to_string(corpus.videos.size());
      results[id] = inst.results[rec.meta.id];
      rec.meta.id = id;
      for (auto& g : rec.segments) g.label_index %= 3;
      for (auto& d : results[id]) d.label_index %= 3;
      corpus.videos.push_back(rec);
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(results, corpus));
}
BENCHMARK(BM_Evaluate)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
