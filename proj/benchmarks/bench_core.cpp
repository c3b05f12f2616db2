#include <benchmark/benchmark.h>

#include <defsynth/discriminator.hpp>
#include <defsynth/evaluation.hpp>
#include <defsynth/generator.hpp>
#include <defsynth/inspector.hpp>
#include <defsynth/objectives.hpp>
#include <defsynth/trainer.hpp>

#include <random>
#include <vector>

namespace ad = defsynth::ad;
namespace data = defsynth::data;
namespace eval = defsynth::eval;
namespace gan = defsynth::gan;
namespace insp = defsynth::insp;
namespace train = defsynth::train;
using defsynth::Tensor;

namespace {

Tensor random_images(int64_t n, int64_t c, int64_t s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform({n, c, s, s}, rng, -1.0, 1.0);
}

gan::GeneratorConfig desk_generator(int64_t size) {
  gan::GeneratorConfig cfg;
  cfg.image_size = size;
  cfg.base_width = 16;
  cfg.res_blocks = 2;
  return cfg;
}

gan::DiscriminatorConfig desk_critic(int64_t size) {
  gan::DiscriminatorConfig cfg;
  cfg.image_size = size;
  cfg.base_width = 16;
  cfg.stages = 3;
  return cfg;
}

Tensor single_category_control(int64_t n, int64_t size) {
  std::vector<data::LabelVector> labels(n, data::LabelVector::single(0));
  std::vector<defsynth::ctrl::AttributeControlMap> maps;
  maps.reserve(labels.size());
  for (const auto& label : labels) {
    maps.push_back(defsynth::ctrl::AttributeControlMap::uniform(label, size, size));
  }
  return defsynth::ctrl::AttributeControlMap::batch(maps);
}

train::Trainer& shared_trainer() {
  static train::Trainer* trainer = [] {
    train::TrainConfig cfg = train::desk_preset();
    cfg.iterations = 1'000'000'000;  // schedule never runs out while timing
    train::TrainingSet set;
    set.image_size = cfg.image_size;
    set.normals = random_images(16, 3, cfg.image_size, 11);
    set.defects = random_images(16, 3, cfg.image_size, 12);
    for (int64_t i = 0; i < 16; ++i) {
      set.defect_labels.push_back(data::LabelVector::single(i % (data::kNumCategories - 1)));
    }
    return new train::Trainer(cfg, std::move(set));
  }();
  return *trainer;
}

}  // namespace

static void BM_Compose(benchmark::State& state) {
  const int64_t s = state.range(0);
  ad::Var bg = ad::constant(random_images(1, 3, s, 1));
  ad::Var fg = ad::constant(random_images(1, 3, s, 2));
  std::mt19937_64 rng(3);
  ad::Var blend = ad::constant(Tensor::uniform({1, 1, s, s}, rng, 0.0, 1.0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(gan::compose(bg, fg, blend).value().data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Compose)->Arg(32)->Arg(128);

static void BM_GeneratorDeface(benchmark::State& state) {
  const int64_t s = state.range(0);
  gan::Generator g(desk_generator(s), 5);
  ad::Var image = ad::constant(random_images(1, 3, s, 7));
  Tensor control = single_category_control(1, s);
  defsynth::ad::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(g.deface(image, control, 9).image.value().data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_GeneratorDeface)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_CriticForward(benchmark::State& state) {
  const int64_t s = state.range(0);
  gan::Discriminator d(desk_critic(s), 5);
  ad::Var batch = ad::constant(random_images(4, 3, s, 7));
  defsynth::ad::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(d.forward(batch).src_map.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_CriticForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_GradientPenalty(benchmark::State& state) {
  const int64_t s = 32;
  gan::Discriminator d(desk_critic(s), 5);
  gan::CriticFn critic = [&](const ad::Var& x) { return d.forward(x).src_map; };
  ad::Var real = ad::constant(random_images(4, 3, s, 7));
  ad::Var fake = ad::constant(random_images(4, 3, s, 8));
  for (auto _ : state) {
    benchmark::DoNotOptimize(gan::critic_loss(critic, real, fake, 9).gp.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_GradientPenalty)->Unit(benchmark::kMillisecond);

static void BM_TrainerCriticUpdate(benchmark::State& state) {
  auto& trainer = shared_trainer();
  for (auto _ : state) {
    while (trainer.is_g_step(trainer.next_iteration())) {
      state.PauseTiming();
      trainer.step();
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(trainer.step().report.total_d);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TrainerCriticUpdate)->Unit(benchmark::kMillisecond);

static void BM_TrainerGeneratorUpdate(benchmark::State& state) {
  auto& trainer = shared_trainer();
  for (auto _ : state) {
    while (!trainer.is_g_step(trainer.next_iteration())) {
      state.PauseTiming();
      trainer.step();
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(trainer.step().report.total_g);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TrainerGeneratorUpdate)->Unit(benchmark::kMillisecond);

static void BM_StatsAccumulate(benchmark::State& state) {
  const int64_t dim = state.range(0);
  std::mt19937_64 rng(21);
  std::vector<Tensor> embeddings;
  for (int i = 0; i < 64; ++i) {
    embeddings.push_back(Tensor::randn({dim}, rng, 1.0));
  }
  for (auto _ : state) {
    eval::StatsAccumulator acc(dim);
    for (const auto& e : embeddings) acc.add(e);
    benchmark::DoNotOptimize(acc.count());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_StatsAccumulate)->Arg(64)->Arg(512);

static void BM_FrechetDistance(benchmark::State& state) {
  const int64_t dim = state.range(0);
  std::mt19937_64 rng(22);
  std::vector<Tensor> a, b;
  for (int64_t i = 0; i < 2 * dim; ++i) {
    a.push_back(Tensor::randn({dim}, rng, 1.0));
    b.push_back(Tensor::randn({dim}, rng, 1.5));
  }
  eval::GaussianStats sa = eval::compute_stats(a);
  eval::GaussianStats sb = eval::compute_stats(b);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::frechet_distance(sa, sb));
  }
}
BENCHMARK(BM_FrechetDistance)->Arg(16)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

static void BM_PixelPcaFit(benchmark::State& state) {
  std::vector<Tensor> reference;
  for (int i = 0; i < 64; ++i) {
    reference.push_back(random_images(1, 3, 16, 100 + i).reshape({3, 16, 16}));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::pixel_pca_embedder(reference, 16).dim);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_PixelPcaFit)->Unit(benchmark::kMillisecond);

static void BM_InspectorForward(benchmark::State& state) {
  insp::InspectorConfig cfg = insp::InspectorConfig::desk_preset();
  insp::Inspector model(cfg, 5);
  ad::Var batch = ad::constant(random_images(cfg.batch_size, 3, cfg.input_size, 7));
  defsynth::ad::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(batch, cfg.lambda_grl).categories.value().data());
  }
  state.SetItemsProcessed(state.iterations() * cfg.batch_size);
}
BENCHMARK(BM_InspectorForward)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
