#include <doctest.h>

#include <defsynth/autodiff.hpp>
#include <defsynth/checkpoint.hpp>
#include <defsynth/datamodel.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace defsynth;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "defsynth_checkpoint_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool throws_with(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const std::exception& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

gan::GeneratorConfig small_gen_config() {
  gan::GeneratorConfig c;
  c.image_size = 16;
  c.base_width = 4;
  c.res_blocks = 1;
  return c;
}

gan::DiscriminatorConfig small_disc_config() {
  gan::DiscriminatorConfig c;
  c.image_size = 16;
  c.base_width = 4;
  c.stages = 2;
  return c;
}

bool stores_equal(const nn::ParamStore& a, const nn::ParamStore& b) {
  if (a.names() != b.names()) return false;
  for (const std::string& name : a.names()) {
    Tensor ta = a.tensor(name);
    Tensor tb = b.tensor(name);
    if (ta.shape() != tb.shape()) return false;
    for (int64_t i = 0; i < ta.numel(); ++i)
      if (ta.at(i) != tb.at(i)) return false;
  }
  return true;
}

// One Adam step against the gradient of sum_i p_i^2 / numel per parameter.
void square_loss_step(nn::ParamStore& store, optim::Adam& opt, double lr) {
  ad::Var loss;
  for (const std::string& name : store.names()) {
    ad::Var p = store.get(name);
    ad::Var term = ad::mean_all(ad::square(p));
    loss = loss.defined() ? ad::add(loss, term) : term;
  }
  ad::GradMap grads = ad::backward(loss);
  opt.step(grads, lr);
}

}  // namespace

TEST_CASE("parameter blob round trips bit-exactly") {
  fs::path dir = fresh_dir("params_roundtrip");
  gan::Generator a(small_gen_config(), 11);
  gan::Generator b(small_gen_config(), 99);  // different init, same layout
  REQUIRE_FALSE(stores_equal(a.params(), b.params()));

  ckpt::save_params(a.params(), dir / "g.bin");
  ckpt::load_params(b.params(), dir / "g.bin");
  CHECK(stores_equal(a.params(), b.params()));

  // The overwrite goes through the live storage, so graph handles built at
  // construction time see the loaded values.
  std::mt19937_64 rng(3);
  Tensor x = Tensor::uniform({1, 3, 16, 16}, rng, -1.0, 1.0);
  Tensor control = ctrl::restoration_map(16, 16).batch(1);
  ad::NoGradGuard guard;
  gan::GeneratorOutput oa = a.forward(ad::constant(x), control, 7);
  gan::GeneratorOutput ob = b.forward(ad::constant(x), control, 7);
  for (int64_t i = 0; i < oa.foreground.value().numel(); ++i)
    REQUIRE(oa.foreground.value().at(i) == ob.foreground.value().at(i));
  for (int64_t i = 0; i < oa.blend.value().numel(); ++i)
    REQUIRE(oa.blend.value().at(i) == ob.blend.value().at(i));
}

TEST_CASE("parameter blob refuses a mismatched model") {
  fs::path dir = fresh_dir("params_mismatch");
  gan::Generator a(small_gen_config(), 11);
  ckpt::save_params(a.params(), dir / "g.bin");

  gan::GeneratorConfig deeper = small_gen_config();
  deeper.res_blocks = 2;
  gan::Generator c(deeper, 11);
  CHECK(throws_with([&] { ckpt::load_params(c.params(), dir / "g.bin"); },
                    "parameter count"));

  nn::ParamStore sa, sb, sc;
  sa.create("a.w", Tensor::zeros({2, 2}));
  sb.create("b.w", Tensor::zeros({2, 2}));
  sc.create("a.w", Tensor::zeros({2, 3}));
  ckpt::save_params(sa, dir / "sa.bin");
  CHECK(throws_with([&] { ckpt::load_params(sb, dir / "sa.bin"); }, "expected parameter"));
  CHECK(throws_with([&] { ckpt::load_params(sc, dir / "sa.bin"); }, "shape mismatch"));
}

TEST_CASE("corrupt blobs are reported") {
  fs::path dir = fresh_dir("params_corrupt");
  nn::ParamStore s;
  s.create("w", Tensor::full({8}, 1.5));
  ckpt::save_params(s, dir / "w.bin");

  // Truncate to half.
  std::string bytes;
  {
    std::ifstream in(dir / "w.bin", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(dir / "cut.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK(throws_with([&] { ckpt::load_params(s, dir / "cut.bin"); }, "truncated"));
  CHECK(throws_with([&] { ckpt::load_params(s, dir / "none.bin"); }, "cannot open"));

  optim::Adam opt(s, 0.5, 0.999);
  ckpt::save_adam(opt, dir / "adam.bin");
  CHECK(throws_with([&] { ckpt::load_params(s, dir / "adam.bin"); }, "magic"));
  CHECK(throws_with([&] { ckpt::load_adam(opt, s, dir / "w.bin"); }, "magic"));
}

TEST_CASE("optimizer state round trips and resumes identically") {
  fs::path dir = fresh_dir("adam_roundtrip");
  std::mt19937_64 rng(5);
  nn::ParamStore s1, s2;
  s1.create("a", Tensor::uniform({3, 2}, rng, -1.0, 1.0));
  s1.create("b", Tensor::uniform({4}, rng, -1.0, 1.0));
  s2.create("a", Tensor::zeros({3, 2}));
  s2.create("b", Tensor::zeros({4}));

  optim::Adam opt1(s1, 0.5, 0.999);
  for (int i = 0; i < 3; ++i) square_loss_step(s1, opt1, 1e-2);
  ckpt::save_params(s1, dir / "p.bin");
  ckpt::save_adam(opt1, dir / "o.bin");

  ckpt::load_params(s2, dir / "p.bin");
  optim::Adam opt2(s2, 0.5, 0.999);
  ckpt::load_adam(opt2, s2, dir / "o.bin");

  for (const auto& [name, st1] : opt1.state()) {
    const optim::Adam::State& st2 = opt2.state_for(name);
    REQUIRE(st2.t == st1.t);
    for (int64_t i = 0; i < st1.m.numel(); ++i) {
      REQUIRE(st2.m.at(i) == st1.m.at(i));
      REQUIRE(st2.v.at(i) == st1.v.at(i));
    }
  }

  // A further step from restored state matches the uninterrupted run bit for bit.
  square_loss_step(s1, opt1, 1e-2);
  square_loss_step(s2, opt2, 1e-2);
  CHECK(stores_equal(s1, s2));
}

TEST_CASE("optimizer blob refuses unknown parameters") {
  fs::path dir = fresh_dir("adam_unknown");
  nn::ParamStore s1, s2;
  s1.create("only_here", Tensor::zeros({2}));
  s2.create("other", Tensor::zeros({2}));
  optim::Adam opt1(s1, 0.5, 0.999);
  ckpt::save_adam(opt1, dir / "o.bin");
  optim::Adam opt2(s2, 0.5, 0.999);
  CHECK(throws_with([&] { ckpt::load_adam(opt2, s2, dir / "o.bin"); },
                    "unknown parameter"));
}

TEST_CASE("model config json round trips") {
  gan::GeneratorConfig g;
  g.image_size = 32;
  g.base_width = 8;
  g.res_blocks = 3;
  g.categories = 6;
  g.noise_injection = false;
  g.spatial_modulation = true;
  g.composition = false;
  gan::GeneratorConfig g2 = ckpt::generator_config_from_json(ckpt::generator_config_json(g));
  CHECK(g2.image_size == g.image_size);
  CHECK(g2.base_width == g.base_width);
  CHECK(g2.res_blocks == g.res_blocks);
  CHECK(g2.categories == g.categories);
  CHECK(g2.noise_injection == g.noise_injection);
  CHECK(g2.spatial_modulation == g.spatial_modulation);
  CHECK(g2.composition == g.composition);

  gan::DiscriminatorConfig d;
  d.image_size = 64;
  d.base_width = 16;
  d.stages = 3;
  d.categories = 6;
  gan::DiscriminatorConfig d2 =
      ckpt::discriminator_config_from_json(ckpt::discriminator_config_json(d));
  CHECK(d2.image_size == d.image_size);
  CHECK(d2.base_width == d.base_width);
  CHECK(d2.stages == d.stages);
  CHECK(d2.categories == d.categories);

  nlohmann::json bad = ckpt::generator_config_json(g);
  bad["res_blocks"] = -1;
  CHECK_THROWS(ckpt::generator_config_from_json(bad));
  nlohmann::json missing = ckpt::generator_config_json(g);
  missing.erase("base_width");
  CHECK_THROWS(ckpt::generator_config_from_json(missing));
}

TEST_CASE("checkpoint directory round trips models, meta, and rng state") {
  fs::path dir = fresh_dir("dir_roundtrip") / "ckpt_77";
  gan::Generator g(small_gen_config(), 5);
  gan::Discriminator d(small_disc_config(), 6);

  std::mt19937_64 engine(123);
  engine.discard(10);
  std::ostringstream state;
  state << engine;

  ckpt::CheckpointMeta meta;
  meta.iteration = 77;
  meta.categories = data::category_names();
  meta.rng_state = state.str();
  meta.extra = {{"note", "desk"}};
  ckpt::write_checkpoint(dir, meta, g, d);

  ckpt::LoadedModels loaded = ckpt::load_models(dir);
  CHECK(loaded.meta.iteration == 77);
  CHECK(loaded.meta.categories == data::category_names());
  CHECK(loaded.meta.extra.at("note") == "desk");
  CHECK(loaded.generator.config().image_size == 16);
  CHECK(loaded.critic.config().stages == 2);
  CHECK(stores_equal(loaded.generator.params(), g.params()));
  CHECK(stores_equal(loaded.critic.params(), d.params()));

  // The stored engine state continues the original stream.
  std::mt19937_64 restored;
  std::istringstream in(loaded.meta.rng_state);
  in >> restored;
  REQUIRE(restored() == engine());

  ckpt::CheckpointMeta meta_only = ckpt::read_meta(dir);
  CHECK(meta_only.iteration == 77);

  // Forward agreement under no-grad.
  std::mt19937_64 rng(9);
  Tensor x = Tensor::uniform({2, 3, 16, 16}, rng, -1.0, 1.0);
  ad::NoGradGuard guard;
  gan::DiscriminatorOutput da = d.forward(ad::constant(x));
  gan::DiscriminatorOutput db = loaded.critic.forward(ad::constant(x));
  for (int64_t i = 0; i < da.src_map.value().numel(); ++i)
    REQUIRE(da.src_map.value().at(i) == db.src_map.value().at(i));
  for (int64_t i = 0; i < da.cls_logits.value().numel(); ++i)
    REQUIRE(da.cls_logits.value().at(i) == db.cls_logits.value().at(i));
}

TEST_CASE("checkpoint directory restores optimizers for resume") {
  fs::path dir = fresh_dir("dir_optim") / "ckpt_3";
  gan::Generator g(small_gen_config(), 5);
  gan::Discriminator d(small_disc_config(), 6);
  optim::Adam og(g.params(), 0.5, 0.999);
  optim::Adam od(d.params(), 0.5, 0.999);
  square_loss_step(g.params(), og, 1e-3);
  square_loss_step(d.params(), od, 1e-3);

  ckpt::write_checkpoint(dir, ckpt::CheckpointMeta{}, g, d, &og, &od);

  ckpt::LoadedModels loaded = ckpt::load_models(dir);
  optim::Adam og2(loaded.generator.params(), 0.5, 0.999);
  optim::Adam od2(loaded.critic.params(), 0.5, 0.999);
  ckpt::load_optimizers(dir, og2, loaded.generator.params(), od2, loaded.critic.params());

  square_loss_step(g.params(), og, 1e-3);
  square_loss_step(loaded.generator.params(), og2, 1e-3);
  CHECK(stores_equal(g.params(), loaded.generator.params()));
  square_loss_step(d.params(), od, 1e-3);
  square_loss_step(loaded.critic.params(), od2, 1e-3);
  CHECK(stores_equal(d.params(), loaded.critic.params()));
}

TEST_CASE("manifest problems are reported") {
  fs::path base = fresh_dir("manifest_bad");
  CHECK(throws_with([&] { ckpt::read_meta(base / "absent"); }, "cannot load"));

  fs::path junk = base / "junk";
  fs::create_directories(junk);
  std::ofstream(junk / "manifest.json") << "not json";
  CHECK(throws_with([&] { ckpt::read_meta(junk); }, "cannot load"));

  fs::path future = base / "future";
  fs::create_directories(future);
  std::ofstream(future / "manifest.json")
      << R"({"format_version": 99, "iteration": 0, "categories": [], "rng_state": ""})";
  CHECK(throws_with([&] { ckpt::read_meta(future); }, "format version"));
}

TEST_CASE("latest checkpoint picks the highest iteration") {
  fs::path run = fresh_dir("latest");
  CHECK_FALSE(ckpt::latest_checkpoint(run).has_value());
  CHECK_FALSE(ckpt::latest_checkpoint(run / "absent").has_value());

  fs::create_directories(run / "ckpt_10");
  fs::create_directories(run / "ckpt_9");
  fs::create_directories(run / "ckpt_100");
  fs::create_directories(run / "ckpt_abc");
  fs::create_directories(run / "notes");
  auto best = ckpt::latest_checkpoint(run);
  REQUIRE(best.has_value());
  CHECK(best->filename().string() == "ckpt_100");
}
