#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "spm/encoders.hpp"
#include "spm/interaction.hpp"
#include "spm/models.hpp"
#include "spm/ops.hpp"

using namespace spm;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(n(rng));
  return Tensor::from(std::move(shape), std::move(v), grad);
}

Batch random_batch(std::size_t batch, std::size_t length, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::int64_t>> a(batch), b(batch);
  std::vector<ShiftReduceProgram> ta, tb;
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t t = 0; t < length; ++t) {
      a[i].push_back(1 + static_cast<std::int64_t>(rng() % (vocab - 1)));
      b[i].push_back(1 + static_cast<std::int64_t>(rng() % (vocab - 1)));
    }
    ta.push_back(ShiftReduceProgram::from_tree(BinaryTree::right_branching(length)));
    tb.push_back(ta.back());
  }
  return Batch::assemble(a, b, std::vector<int>(batch, 0), std::vector<Real>(batch, 0), ta, tb);
}

}  // namespace

static void BM_BiLstmForwardBackward(benchmark::State& state) {
  std::size_t L = static_cast<std::size_t>(state.range(0)), h = static_cast<std::size_t>(state.range(1));
  ParameterStore store(1);
  auto params = BiLstmParams::create(store, "enc", 100, h);
  auto x = random_tensor({16, L, 100}, 2);
  auto mask = Tensor::full({16, L}, 1);
  for (auto _ : state) {
    auto out = bilstm(x, params, mask);
    sum_all(out.concat()).backward();
    store.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 16 * static_cast<std::int64_t>(L));
}
BENCHMARK(BM_BiLstmForwardBackward)->Args({10, 64})->Args({20, 64})->Args({20, 300})->Unit(benchmark::kMillisecond);

static void BM_SoftAlign(benchmark::State& state) {
  std::size_t L = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({32, L, 300}, 3), b = random_tensor({32, L, 300}, 4);
  for (auto _ : state) {
    NoGradGuard guard;
    auto r = soft_align(a, b);
    benchmark::DoNotOptimize(r.beta.data().data());
  }
}
BENCHMARK(BM_SoftAlign)->Arg(10)->Arg(30)->Unit(benchmark::kMicrosecond);

static void BM_InteractionTensorWithHardAttention(benchmark::State& state) {
  std::size_t L = static_cast<std::size_t>(state.range(0));
  auto fa = random_tensor({L, 200}, 5), ba = random_tensor({L, 200}, 6);
  auto fb = random_tensor({L, 200}, 7), bb = random_tensor({L, 200}, 8);
  for (auto _ : state) {
    NoGradGuard guard;
    auto t = hard_attention(build_interaction_tensor(fa, ba, fb, bb));
    benchmark::DoNotOptimize(t.hard_weights.data().data());
  }
}
BENCHMARK(BM_InteractionTensorWithHardAttention)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

static void BM_ShiftReduceBatch(benchmark::State& state) {
  std::size_t leaves = static_cast<std::size_t>(state.range(0));
  ParameterStore store(9);
  auto params = TreeLstmParams::create(store, "tree", 100, 100);
  std::vector<ShiftReduceProgram> programs;
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < 16; ++i) {
    programs.push_back(ShiftReduceProgram::from_tree(BinaryTree::right_branching(leaves)));
    inputs.push_back(random_tensor({leaves, 100}, 10 + i));
  }
  for (auto _ : state) {
    NoGradGuard guard;
    auto runs = run_shift_reduce(params, programs, inputs);
    benchmark::DoNotOptimize(runs.front().root.hidden.data().data());
  }
}
BENCHMARK(BM_ShiftReduceBatch)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

// Forward and backward of one training batch at reduced width.
static void BM_ModelTrainStep(benchmark::State& state) {
  auto arch = static_cast<Architecture>(state.range(0));
  auto config = preset(arch, PresetSize::appendix_b, TaskHead::classification, 3);
  config.embedding_dim = 50;
  config.hidden = 64;
  config.stack = {64, 64, 64};
  config.mlp = {64};
  config.projection = 64;
  config.ffn_width = 64;
  config.conv_channels = {32, 32, 32};
  config.crop = 16;
  auto model = make_model(config, random_tensor({200, 50}, 11), 12);
  auto batch = random_batch(16, 12, 200, 13);
  for (auto _ : state) {
    model->loss(batch, true).backward();
    model->store().zero_grad();
  }
  state.SetLabel(to_string(arch));
}
BENCHMARK(BM_ModelTrainStep)->DenseRange(0, 6)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
