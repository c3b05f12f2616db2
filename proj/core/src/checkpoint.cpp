#include "defsynth/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace defsynth::ckpt {

namespace {

constexpr char kParamMagic[4] = {'D', 'S', 'C', 'P'};
constexpr char kAdamMagic[4] = {'D', 'S', 'A', 'D'};
constexpr uint32_t kBlobVersion = 1;

void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& os, uint32_t v) { put_bytes(os, &v, sizeof v); }
void put_i64(std::ostream& os, int64_t v) { put_bytes(os, &v, sizeof v); }

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<uint32_t>(t.shape().size()));
  for (int64_t d : t.shape()) put_i64(os, d);
  put_bytes(os, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
}

void take_bytes(std::istream& is, const std::filesystem::path& file, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("truncated checkpoint blob " + file.string());
}

uint32_t take_u32(std::istream& is, const std::filesystem::path& file) {
  uint32_t v;
  take_bytes(is, file, &v, sizeof v);
  return v;
}

int64_t take_i64(std::istream& is, const std::filesystem::path& file) {
  int64_t v;
  take_bytes(is, file, &v, sizeof v);
  return v;
}

std::string take_string(std::istream& is, const std::filesystem::path& file) {
  uint32_t n = take_u32(is, file);
  std::string s(n, '\0');
  take_bytes(is, file, s.data(), n);
  return s;
}

Tensor take_tensor(std::istream& is, const std::filesystem::path& file) {
  uint32_t ndim = take_u32(is, file);
  if (ndim > 8) throw std::runtime_error("corrupt checkpoint blob " + file.string());
  std::vector<int64_t> shape(ndim);
  int64_t numel = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    shape[i] = take_i64(is, file);
    if (shape[i] <= 0 || numel > (int64_t{1} << 40) / std::max<int64_t>(shape[i], 1))
      throw std::runtime_error("corrupt checkpoint blob " + file.string());
    numel *= shape[i];
  }
  Tensor t = Tensor::zeros(std::move(shape));
  take_bytes(is, file, t.data(), static_cast<size_t>(numel) * sizeof(double));
  return t;
}

std::ofstream open_out(const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint file " + file.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& file, const char magic[4],
                      int64_t* count_out) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint file " + file.string());
  char got[4];
  take_bytes(is, file, got, 4);
  if (std::memcmp(got, magic, 4) != 0)
    throw std::runtime_error("checkpoint blob " + file.string() + " has the wrong magic");
  uint32_t version = take_u32(is, file);
  if (version != kBlobVersion)
    throw std::runtime_error("unsupported checkpoint blob version in " + file.string());
  *count_out = take_i64(is, file);
  return is;
}

void require_same_shape(const std::string& name, const Tensor& got, const Tensor& want,
                        const std::filesystem::path& file) {
  if (got.shape() != want.shape())
    throw std::runtime_error("checkpoint blob " + file.string() + ": shape mismatch for '" +
                             name + "'");
}

}  // namespace

void save_params(const nn::ParamStore& store, const std::filesystem::path& file) {
  std::ofstream os = open_out(file);
  put_bytes(os, kParamMagic, 4);
  put_u32(os, kBlobVersion);
  put_i64(os, static_cast<int64_t>(store.names().size()));
  for (const std::string& name : store.names()) {
    put_string(os, name);
    put_tensor(os, store.tensor(name));
  }
  if (!os) throw std::runtime_error("cannot write checkpoint file " + file.string());
}

void load_params(nn::ParamStore& store, const std::filesystem::path& file) {
  int64_t count = 0;
  std::ifstream is = open_in(file, kParamMagic, &count);
  if (count != static_cast<int64_t>(store.names().size()))
    throw std::runtime_error("checkpoint blob " + file.string() +
                             " holds a different parameter count than the model");
  for (int64_t i = 0; i < count; ++i) {
    std::string name = take_string(is, file);
    if (name != store.names()[static_cast<size_t>(i)])
      throw std::runtime_error("checkpoint blob " + file.string() + ": expected parameter '" +
                               store.names()[static_cast<size_t>(i)] + "', found '" + name +
                               "'");
    Tensor loaded = take_tensor(is, file);
    Tensor target = store.tensor(name);
    require_same_shape(name, loaded, target, file);
    std::memcpy(target.data(), loaded.data(),
                static_cast<size_t>(loaded.numel()) * sizeof(double));
  }
}

void save_adam(const optim::Adam& opt, const std::filesystem::path& file) {
  // Sorted for deterministic bytes; the live map is unordered.
  std::map<std::string, const optim::Adam::State*> sorted;
  for (const auto& [name, st] : opt.state()) sorted.emplace(name, &st);

  std::ofstream os = open_out(file);
  put_bytes(os, kAdamMagic, 4);
  put_u32(os, kBlobVersion);
  put_i64(os, static_cast<int64_t>(sorted.size()));
  for (const auto& [name, st] : sorted) {
    put_string(os, name);
    put_i64(os, st->t);
    put_tensor(os, st->m);
    put_tensor(os, st->v);
  }
  if (!os) throw std::runtime_error("cannot write checkpoint file " + file.string());
}

void load_adam(optim::Adam& opt, const nn::ParamStore& store,
               const std::filesystem::path& file) {
  int64_t count = 0;
  std::ifstream is = open_in(file, kAdamMagic, &count);
  for (int64_t i = 0; i < count; ++i) {
    std::string name = take_string(is, file);
    if (!store.has(name))
      throw std::runtime_error("checkpoint blob " + file.string() +
                               " holds optimizer state for unknown parameter '" + name + "'");
    optim::Adam::State& st = opt.state_for(name);
    st.t = take_i64(is, file);
    Tensor m = take_tensor(is, file);
    Tensor v = take_tensor(is, file);
    require_same_shape(name, m, store.tensor(name), file);
    require_same_shape(name, v, store.tensor(name), file);
    st.m = std::move(m);
    st.v = std::move(v);
  }
}

nlohmann::json generator_config_json(const gan::GeneratorConfig& c) {
  return {{"image_size", c.image_size},
          {"base_width", c.base_width},
          {"res_blocks", c.res_blocks},
          {"categories", c.categories},
          {"noise_injection", c.noise_injection},
          {"spatial_modulation", c.spatial_modulation},
          {"composition", c.composition}};
}

gan::GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  gan::GeneratorConfig c;
  c.image_size = j.at("image_size").get<int64_t>();
  c.base_width = j.at("base_width").get<int64_t>();
  c.res_blocks = j.at("res_blocks").get<int64_t>();
  c.categories = j.at("categories").get<int64_t>();
  c.noise_injection = j.at("noise_injection").get<bool>();
  c.spatial_modulation = j.at("spatial_modulation").get<bool>();
  c.composition = j.at("composition").get<bool>();
  c.validate();
  return c;
}

nlohmann::json discriminator_config_json(const gan::DiscriminatorConfig& c) {
  return {{"image_size", c.image_size},
          {"base_width", c.base_width},
          {"stages", c.stages},
          {"categories", c.categories}};
}

gan::DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j) {
  gan::DiscriminatorConfig c;
  c.image_size = j.at("image_size").get<int64_t>();
  c.base_width = j.at("base_width").get<int64_t>();
  c.stages = j.at("stages").get<int64_t>();
  c.categories = j.at("categories").get<int64_t>();
  c.validate();
  return c;
}

void write_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                      const gan::Generator& generator, const gan::Discriminator& critic,
                      const optim::Adam* opt_g, const optim::Adam* opt_d) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"format_version", kFormatVersion},
      {"iteration", meta.iteration},
      {"categories", meta.categories},
      {"rng_state", meta.rng_state},
      {"generator", generator_config_json(generator.config())},
      {"discriminator", discriminator_config_json(critic.config())},
      {"extra", meta.extra},
  };
  {
    std::ofstream os = open_out(dir / "manifest.json");
    os << manifest.dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
  }
  save_params(generator.params(), dir / "generator.bin");
  save_params(critic.params(), dir / "discriminator.bin");
  if (opt_g) save_adam(*opt_g, dir / "opt_g.bin");
  if (opt_d) save_adam(*opt_d, dir / "opt_d.bin");
}

namespace {

nlohmann::json read_manifest_json(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is)
    throw std::runtime_error("cannot load checkpoint manifest from " + dir.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("cannot load checkpoint manifest from " + dir.string() + ": " +
                             e.what());
  }
  if (!j.contains("format_version") ||
      j.at("format_version").get<int64_t>() != kFormatVersion)
    throw std::runtime_error("unsupported checkpoint format version in " + dir.string());
  return j;
}

CheckpointMeta meta_from_manifest(const nlohmann::json& j) {
  CheckpointMeta meta;
  meta.iteration = j.at("iteration").get<int64_t>();
  meta.categories = j.at("categories").get<std::vector<std::string>>();
  meta.rng_state = j.at("rng_state").get<std::string>();
  meta.extra = j.value("extra", nlohmann::json::object());
  return meta;
}

}  // namespace

LoadedModels load_models(const std::filesystem::path& dir) {
  nlohmann::json j = read_manifest_json(dir);
  gan::GeneratorConfig gc = generator_config_from_json(j.at("generator"));
  gan::DiscriminatorConfig dc = discriminator_config_from_json(j.at("discriminator"));
  gan::Generator g(gc, 0);
  gan::Discriminator d(dc, 0);
  load_params(g.params(), dir / "generator.bin");
  load_params(d.params(), dir / "discriminator.bin");
  return LoadedModels{meta_from_manifest(j), std::move(g), std::move(d)};
}

void load_optimizers(const std::filesystem::path& dir, optim::Adam& opt_g,
                     const nn::ParamStore& g_store, optim::Adam& opt_d,
                     const nn::ParamStore& d_store) {
  load_adam(opt_g, g_store, dir / "opt_g.bin");
  load_adam(opt_d, d_store, dir / "opt_d.bin");
}

CheckpointMeta read_meta(const std::filesystem::path& dir) {
  return meta_from_manifest(read_manifest_json(dir));
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir) {
  std::optional<std::filesystem::path> best;
  int64_t best_iter = -1;
  if (!std::filesystem::is_directory(run_dir)) return best;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) != 0) continue;
    std::string tail = name.substr(5);
    if (tail.empty() || !std::all_of(tail.begin(), tail.end(),
                                     [](unsigned char ch) { return std::isdigit(ch); }))
      continue;
    int64_t iter = std::stoll(tail);
    if (iter > best_iter) {
      best_iter = iter;
      best = entry.path();
    }
  }
  return best;
}

}  // namespace defsynth::ckpt
