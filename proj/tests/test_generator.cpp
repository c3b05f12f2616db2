#include <doctest.h>

#include <defsynth/generator.hpp>

#include <cmath>
#include <random>
#include <string>

using namespace defsynth;
using ad::Var;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void set_noise_scales(gan::Generator& g, double value) {
  for (const std::string& name : g.params().names())
    if (ends_with(name, ".noise.scale")) g.params().tensor(name).at(0) = value;
}

gan::GeneratorConfig small_config(int64_t size = 16) {
  gan::GeneratorConfig cfg;
  cfg.image_size = size;
  cfg.base_width = 4;
  cfg.res_blocks = 2;
  return cfg;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  gan::GeneratorConfig cfg;
  cfg.image_size = 30;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.image_size = 128;
  cfg.base_width = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.base_width = 64;
  cfg.validate();
}

TEST_CASE("compose endpoints are exact") {
  std::mt19937_64 rng(3);
  Var bg = ad::constant(Tensor::uniform({2, 3, 5, 5}, rng, -1.0, 1.0));
  Var fg = ad::constant(Tensor::uniform({2, 3, 5, 5}, rng, -1.0, 1.0));
  Var zero = ad::constant(Tensor::zeros({2, 1, 5, 5}));
  Var one = ad::constant(Tensor::full({2, 1, 5, 5}, 1.0));

  Tensor at_zero = gan::compose(bg, fg, zero).value();
  Tensor at_one = gan::compose(bg, fg, one).value();
  CHECK(tensors_equal(at_zero, bg.value()));
  CHECK(tensors_equal(at_one, fg.value()));
}

TEST_CASE("compose evaluates the blend formula") {
  Var bg = ad::constant(Tensor::full({1, 3, 4, 4}, 0.2));
  Var fg = ad::constant(Tensor::full({1, 3, 4, 4}, 0.8));
  Var m = ad::constant(Tensor::full({1, 1, 4, 4}, 0.5));
  Tensor out = gan::compose(bg, fg, m).value();
  double oracle = 0.2 * (1.0 - 0.5) + 0.8 * 0.5;
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == oracle);
}

TEST_CASE("compose is linear in the blend map") {
  std::mt19937_64 rng(11);
  Var bg = ad::constant(Tensor::uniform({1, 3, 6, 6}, rng, -1.0, 1.0));
  Var fg = ad::constant(Tensor::uniform({1, 3, 6, 6}, rng, -1.0, 1.0));
  Tensor m = Tensor::uniform({1, 1, 6, 6}, rng, 0.0, 1.0);
  Tensor half = m.clone();
  for (int64_t i = 0; i < half.numel(); ++i) half.at(i) *= 0.5;

  Tensor at_m = gan::compose(bg, fg, ad::constant(m)).value();
  Tensor at_half = gan::compose(bg, fg, ad::constant(half)).value();
  Tensor at_zero = gan::compose(bg, fg, ad::constant(Tensor::zeros({1, 1, 6, 6}))).value();
  for (int64_t i = 0; i < at_m.numel(); ++i)
    CHECK(at_half.at(i) == doctest::Approx(0.5 * (at_zero.at(i) + at_m.at(i))).epsilon(1e-12));
}

TEST_CASE("compose rejects bad blend maps and shapes") {
  Var bg = ad::constant(Tensor::zeros({1, 3, 4, 4}));
  Var fg = ad::constant(Tensor::zeros({1, 3, 4, 4}));
  CHECK_THROWS_AS(gan::compose(bg, fg, ad::constant(Tensor::full({1, 1, 4, 4}, 1.2))),
                  std::invalid_argument);
  CHECK_THROWS_AS(gan::compose(bg, fg, ad::constant(Tensor::full({1, 1, 4, 4}, -0.1))),
                  std::invalid_argument);
  CHECK_THROWS_AS(gan::compose(bg, fg, ad::constant(Tensor::zeros({1, 1, 3, 4}))),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      gan::compose(bg, ad::constant(Tensor::zeros({1, 3, 4, 5})), ad::constant(Tensor::zeros({1, 1, 4, 4}))),
      std::invalid_argument);
}

TEST_CASE("full-size forward keeps shapes") {
  gan::GeneratorConfig cfg;  // 128, six residual blocks
  gan::Generator g(cfg, 1);
  std::mt19937_64 rng(5);
  Var x = ad::constant(Tensor::uniform({1, 3, 128, 128}, rng, -1.0, 1.0));
  Tensor control = ctrl::repeat_label(data::LabelVector::single(0), 128, 128).batch(1);
  gan::GeneratorOutput out = g.forward(x, control, 7);
  CHECK(out.foreground.value().shape() == std::vector<int64_t>{1, 3, 128, 128});
  CHECK(out.blend.value().shape() == std::vector<int64_t>{1, 1, 128, 128});
}

TEST_CASE("frozen noise scales make the pass seed-independent") {
  gan::Generator g(small_config(), 2);
  std::mt19937_64 rng(6);
  Var x = ad::constant(Tensor::uniform({2, 3, 16, 16}, rng, -1.0, 1.0));
  Tensor control = ctrl::repeat_label(data::LabelVector::single(1), 16, 16).batch(2);
  gan::GeneratorOutput a = g.forward(x, control, 100);
  gan::GeneratorOutput b = g.forward(x, control, 200);
  CHECK(tensors_equal(a.foreground.value(), b.foreground.value()));
  CHECK(tensors_equal(a.blend.value(), b.blend.value()));
}

TEST_CASE("live noise scales separate seeds and repeat within a seed") {
  gan::GeneratorConfig cfg = small_config();
  cfg.res_blocks = 1;
  gan::Generator g(cfg, 2);
  set_noise_scales(g, 0.5);
  std::mt19937_64 rng(6);
  Var x = ad::constant(Tensor::uniform({1, 3, 16, 16}, rng, -1.0, 1.0));
  Tensor control = ctrl::repeat_label(data::LabelVector::single(2), 16, 16).batch(1);

  for (uint64_t pair = 0; pair < 5; ++pair) {
    gan::GeneratorOutput a = g.forward(x, control, 2 * pair);
    gan::GeneratorOutput b = g.forward(x, control, 2 * pair + 1);
    CHECK(!tensors_equal(a.foreground.value(), b.foreground.value()));
  }
  gan::GeneratorOutput a = g.forward(x, control, 42);
  gan::GeneratorOutput b = g.forward(x, control, 42);
  CHECK(tensors_equal(a.foreground.value(), b.foreground.value()));
  CHECK(tensors_equal(a.blend.value(), b.blend.value()));
}

TEST_CASE("outputs stay in range over many random inputs") {
  gan::Generator g(small_config(), 3);
  set_noise_scales(g, 0.7);
  std::mt19937_64 rng(8);
  Tensor control = ctrl::repeat_label(data::LabelVector::single(3), 16, 16).batch(100);
  for (int rep = 0; rep < 10; ++rep) {
    Var x = ad::constant(Tensor::uniform({100, 3, 16, 16}, rng, -1.0, 1.0));
    gan::GeneratorOutput out = g.forward(x, control, static_cast<uint64_t>(rep));
    const Tensor& f = out.foreground.value();
    const Tensor& m = out.blend.value();
    for (int64_t i = 0; i < f.numel(); ++i) CHECK(std::abs(f.at(i)) <= 1.0);
    for (int64_t i = 0; i < m.numel(); ++i) {
      CHECK(m.at(i) >= 0.0);
      CHECK(m.at(i) <= 1.0);
    }
  }
}

TEST_CASE("every decoder block carries control-map modulation") {
  gan::GeneratorConfig cfg = small_config();
  cfg.res_blocks = 3;
  gan::Generator g(cfg, 4);
  for (int64_t i = 0; i < cfg.res_blocks; ++i) {
    CHECK(g.params().has("res" + std::to_string(i) + ".n1.gamma.w"));
    CHECK(g.params().has("res" + std::to_string(i) + ".n2.gamma.w"));
  }
  CHECK(g.params().has("up0.norm.gamma.w"));
  CHECK(g.params().has("up1.norm.gamma.w"));
  // One learned noise gain per encoder and decoder block.
  int64_t sites = 0;
  for (const std::string& name : g.params().names())
    if (ends_with(name, ".noise.scale")) ++sites;
  CHECK(sites == cfg.res_blocks + 5);
}

TEST_CASE("control map matters once a modulation weight is nonzero") {
  gan::Generator g(small_config(), 5);
  std::mt19937_64 rng(9);
  Var x = ad::constant(Tensor::uniform({1, 3, 16, 16}, rng, -1.0, 1.0));
  Tensor crack = ctrl::repeat_label(data::LabelVector::single(0), 16, 16).batch(1);
  Tensor normal = ctrl::restoration_map(16, 16).batch(1);

  // Zero-initialized modulation heads: the control map has no influence yet.
  gan::GeneratorOutput a = g.forward(x, crack, 0);
  gan::GeneratorOutput b = g.forward(x, normal, 0);
  CHECK(tensors_equal(a.foreground.value(), b.foreground.value()));

  g.params().tensor("res0.n1.shared.w").fill(0.0);
  g.params().tensor("res0.n1.shared.w").at(0) = 1.0;
  g.params().tensor("res0.n1.gamma.w").at(0) = 1.0;
  gan::GeneratorOutput c = g.forward(x, crack, 0);
  gan::GeneratorOutput d = g.forward(x, normal, 0);
  CHECK(!tensors_equal(c.foreground.value(), d.foreground.value()));
}

TEST_CASE("uniform and spatial control maps share shapes and parameters") {
  gan::Generator g(small_config(), 6);
  int64_t params_before = g.params().total_scalars();
  std::mt19937_64 rng(10);
  Var x = ad::constant(Tensor::uniform({2, 3, 16, 16}, rng, -1.0, 1.0));
  Tensor uniform = ctrl::repeat_label(data::LabelVector::single(4), 16, 16).batch(2);
  Tensor spatial = ctrl::paint_regions({{0, 2, 2, 9, 9, 1.0}, {3, 4, 4, 12, 12, 0.6}}, 16, 16).batch(2);

  gan::GeneratorOutput a = g.forward(x, uniform, 1);
  gan::GeneratorOutput b = g.forward(x, spatial, 1);
  CHECK(a.foreground.value().shape() == b.foreground.value().shape());
  CHECK(a.blend.value().shape() == b.blend.value().shape());
  CHECK(g.params().total_scalars() == params_before);
}

TEST_CASE("defacement output is a valid image and restore mirrors it") {
  gan::Generator g(small_config(), 7);
  std::mt19937_64 rng(11);
  Var n = ad::constant(Tensor::uniform({2, 3, 16, 16}, rng, -1.0, 1.0));
  Tensor control = ctrl::repeat_label(data::LabelVector::single(1), 16, 16).batch(2);

  gan::TranslationResult d = g.deface(n, control, 3);
  CHECK(d.image.value().shape() == n.value().shape());
  for (int64_t i = 0; i < d.image.value().numel(); ++i)
    CHECK(std::abs(d.image.value().at(i)) <= 1.0);

  // restore is deface toward the uniform normal map.
  gan::TranslationResult r = g.restore(d.image, 4);
  Tensor normal = ctrl::restoration_map(16, 16).batch(2);
  gan::TranslationResult same = g.deface(d.image, normal, 4);
  CHECK(tensors_equal(r.image.value(), same.image.value()));
  CHECK(tensors_equal(r.blend.value(), same.blend.value()));
}

TEST_CASE("composition ablation returns the foreground head directly") {
  gan::GeneratorConfig cfg = small_config();
  cfg.composition = false;
  gan::Generator g(cfg, 8);
  std::mt19937_64 rng(12);
  Var x = ad::constant(Tensor::uniform({1, 3, 16, 16}, rng, -1.0, 1.0));
  Tensor control = ctrl::repeat_label(data::LabelVector::single(0), 16, 16).batch(1);
  gan::TranslationResult t = g.deface(x, control, 0);
  CHECK(tensors_equal(t.image.value(), t.foreground.value()));
}

TEST_CASE("zero blend maps make deface then restore the identity") {
  std::mt19937_64 rng(13);
  Var n = ad::constant(Tensor::uniform({1, 3, 8, 8}, rng, -1.0, 1.0));
  Var f1 = ad::constant(Tensor::uniform({1, 3, 8, 8}, rng, -1.0, 1.0));
  Var f2 = ad::constant(Tensor::uniform({1, 3, 8, 8}, rng, -1.0, 1.0));
  Var zero = ad::constant(Tensor::zeros({1, 1, 8, 8}));
  Var d = gan::compose(n, f1, zero);
  Var back = gan::compose(d, f2, zero);
  CHECK(tensors_equal(back.value(), n.value()));
}

TEST_CASE("shape mismatches are rejected") {
  gan::Generator g(small_config(), 9);
  std::mt19937_64 rng(14);
  Var wrong_size = ad::constant(Tensor::uniform({1, 3, 8, 8}, rng, -1.0, 1.0));
  Tensor control16 = ctrl::restoration_map(16, 16).batch(1);
  CHECK_THROWS_AS(g.forward(wrong_size, control16, 0), std::invalid_argument);

  Var x = ad::constant(Tensor::uniform({1, 3, 16, 16}, rng, -1.0, 1.0));
  Tensor control8 = ctrl::restoration_map(8, 8).batch(1);
  CHECK_THROWS_AS(g.forward(x, control8, 0), std::invalid_argument);
  Tensor wrong_batch = ctrl::restoration_map(16, 16).batch(2);
  CHECK_THROWS_AS(g.forward(x, wrong_batch, 0), std::invalid_argument);
}
