#include <CLI11.hpp>

#include <defsynth/checkpoint.hpp>
#include <defsynth/controlmap.hpp>
#include <defsynth/datamodel.hpp>
#include <defsynth/evaluation.hpp>
#include <defsynth/imageio.hpp>
#include <defsynth/inspector.hpp>
#include <defsynth/runconfig.hpp>
#include <defsynth/toydata.hpp>
#include <defsynth/trainer.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace defsynth;

namespace {

/// Flags every subcommand shares. Remaining `--key value` arguments become
/// config overrides, so each subcommand enables allow_extras.
struct Common {
  std::string config_path;
  std::string seed_text;
  std::string out = ".";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file");
  sub->add_option("--seed", c.seed_text, "override the config seed");
  sub->add_option("--out", c.out, "output directory (default: current)");
  sub->allow_extras();
  sub->footer("Any config key can be overridden as --<key> <value>.");
}

/// Turns leftover tokens into (key, value) override pairs.
std::vector<std::pair<std::string, std::string>> extras_to_overrides(
    const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (size_t i = 0; i < extras.size(); ++i) {
    const std::string& token = extras[i];
    if (token.rfind("--", 0) != 0)
      throw std::invalid_argument("unexpected argument '" + token + "'");
    std::string key = token.substr(2);
    size_t eq = key.find('=');
    if (eq != std::string::npos) {
      overrides.emplace_back(key.substr(0, eq), key.substr(eq + 1));
      continue;
    }
    if (i + 1 >= extras.size())
      throw std::invalid_argument("missing value for override '--" + key + "'");
    overrides.emplace_back(key, extras[++i]);
  }
  return overrides;
}

json resolve(const CLI::App* sub, const json& defaults, const Common& c,
             std::vector<std::pair<std::string, std::string>> extra_overrides = {}) {
  json file = c.config_path.empty() ? json() : cfg::load_config_file(c.config_path);
  auto overrides = extras_to_overrides(sub->remaining());
  for (auto& kv : extra_overrides) overrides.push_back(std::move(kv));
  if (!c.seed_text.empty()) overrides.emplace_back("seed", c.seed_text);
  return cfg::resolve_config(defaults, file, overrides);
}

uint64_t seed_of(const json& resolved) { return resolved.at("seed").get<uint64_t>(); }

std::string require_path(const json& resolved, const std::string& key,
                         const std::string& what) {
  std::string value = resolved.at(key).get<std::string>();
  if (value.empty())
    throw std::invalid_argument("set --" + key + " to " + what);
  return value;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

// ---------------------------------------------------------------------------

int run_make_toy_data(const CLI::App* sub, const Common& c) {
  const json defaults{{"image_size", 32},       {"samples_per_class", 50},
                      {"seed", 1234},           {"noise_octaves", 3},
                      {"crack_polylines", 1},   {"crack_width", 1.6},
                      {"blob_radius_min", 3.0}, {"blob_radius_max", 7.0},
                      {"patch_brightness", 70.0}};
  json r = resolve(sub, defaults, c);

  toy::ToyDefectSpec spec;
  spec.image_size = r.at("image_size").get<int64_t>();
  spec.samples_per_class = r.at("samples_per_class").get<int64_t>();
  spec.seed = r.at("seed").get<uint64_t>();
  spec.noise_octaves = r.at("noise_octaves").get<int>();
  spec.crack_polylines = r.at("crack_polylines").get<int>();
  spec.crack_width = r.at("crack_width").get<double>();
  spec.blob_radius_min = r.at("blob_radius_min").get<double>();
  spec.blob_radius_max = r.at("blob_radius_max").get<double>();
  spec.patch_brightness = r.at("patch_brightness").get<double>();
  spec.validate();

  data::DatasetManifest manifest = toy::make_toy_dataset(spec, c.out);
  for (const std::string& w : manifest.warnings) std::cerr << "warning: " << w << '\n';
  data::DatasetManifest val = data::load_manifest(c.out, data::Split::val);
  std::cout << "wrote " << manifest.records.size() << " train and " << val.records.size()
            << " val samples under " << c.out << '\n';

  cfg::write_run_manifest(c.out, "make-toy-data", r, seed_of(r),
                          {"index.csv", "index_val.csv", "index_test.csv", "images", "masks"});
  return 0;
}

int run_train(const CLI::App* sub, const Common& c) {
  json defaults = train::train_config_json(train::desk_preset());
  defaults["data"] = "";
  defaults["resume"] = false;
  json r = resolve(sub, defaults, c);

  std::string data_root = require_path(r, "data", "the training dataset root");
  train::TrainConfig config = train::train_config_from_json(r);

  data::DatasetManifest manifest = data::load_manifest(data_root, data::Split::train);
  for (const std::string& w : manifest.warnings) std::cerr << "warning: " << w << '\n';
  train::TrainingSet set = train::TrainingSet::load(manifest, config.image_size);

  train::Trainer trainer(config, std::move(set));
  if (r.at("resume").get<bool>()) {
    auto latest = ckpt::latest_checkpoint(c.out);
    if (!latest)
      throw std::invalid_argument("resume requested but no checkpoint under " + c.out);
    trainer.restore(*latest);
    std::cout << "resumed from " << latest->string() << " at update "
              << trainer.next_iteration() << '\n';
  }
  trainer.run(c.out, &std::cout);

  std::string final_ckpt = "ckpt_" + std::to_string(config.iterations);
  cfg::write_run_manifest(c.out, "train", r, seed_of(r), {"train_log.jsonl", final_ckpt});
  std::cout << "finished " << config.iterations << " updates; log and checkpoints under "
            << c.out << '\n';
  return 0;
}

int run_generate(const CLI::App* sub, const Common& c, const std::string& control_map_file,
                 const std::vector<std::string>& box_flags, bool with_restorations) {
  const json defaults{{"checkpoint", ""},
                      {"data", ""},
                      {"count", 100},
                      {"with_restorations", false},
                      {"seed", 1}};
  std::vector<std::pair<std::string, std::string>> extra;
  if (with_restorations) extra.emplace_back("with_restorations", "true");
  json r = resolve(sub, defaults, c, std::move(extra));

  std::string ckpt_arg = require_path(r, "checkpoint", "a checkpoint or run directory");
  std::string data_root = require_path(r, "data", "the dataset root with normal samples");

  fs::path ckpt_dir(ckpt_arg);
  if (!fs::exists(ckpt_dir / "manifest.json")) {
    auto latest = ckpt::latest_checkpoint(ckpt_dir);
    if (!latest)
      throw std::invalid_argument("no checkpoint found under " + ckpt_arg);
    ckpt_dir = *latest;
  }
  ckpt::LoadedModels models = ckpt::load_models(ckpt_dir);
  int64_t size = models.generator.config().image_size;

  eval::CorpusRequest request;
  request.count = r.at("count").get<int64_t>();
  request.with_restorations = r.at("with_restorations").get<bool>();
  if (!control_map_file.empty() && !box_flags.empty())
    throw std::invalid_argument("give either --control-map or --box flags, not both");
  if (!control_map_file.empty()) {
    request.control = ctrl::load_control_map(control_map_file);
  } else if (!box_flags.empty()) {
    std::vector<ctrl::ControlRegion> regions;
    regions.reserve(box_flags.size());
    for (const std::string& flag : box_flags) regions.push_back(ctrl::parse_region_flag(flag));
    request.control = ctrl::paint_regions(regions, size, size);
  }

  data::DatasetManifest normals = data::load_manifest(data_root, data::Split::train);
  data::DatasetManifest corpus =
      eval::generate_corpus(models.generator, normals, request, c.out, seed_of(r));

  std::vector<std::string> artifacts = {"index.csv", "images/synthetic", "blends"};
  if (request.with_restorations) artifacts.emplace_back("images/restored");
  cfg::write_run_manifest(c.out, "generate", r, seed_of(r), artifacts);
  std::cout << "wrote " << corpus.records.size() << " records (from " << ckpt_dir.string()
            << ") under " << c.out << '\n';
  return 0;
}

int run_eval_fid(const CLI::App* sub, const Common& c) {
  const json defaults{{"real", ""},   {"fake", ""}, {"embedder", "pixel_pca"},
                      {"k", 16},      {"seed", 1},  {"baseline", false}};
  json r = resolve(sub, defaults, c);

  std::string real_root = require_path(r, "real", "the real dataset root");
  std::string fake_root = require_path(r, "fake", "the generated corpus root");

  auto load_images = [](const std::string& root, auto&& keep) {
    data::DatasetManifest m = data::load_manifest(root, data::Split::train);
    std::vector<Tensor> images;
    for (const data::SampleRecord& rec : m.records)
      if (keep(rec)) images.push_back(img::normalize(img::read_image_rgb(rec.path)));
    return images;
  };
  std::vector<Tensor> real_images = load_images(
      real_root, [](const data::SampleRecord& rec) { return !rec.label.is_normal(); });
  std::vector<Tensor> fake_images = load_images(fake_root, [](const data::SampleRecord& rec) {
    return rec.source == data::Source::synthetic;
  });
  if (real_images.size() < 2)
    throw std::invalid_argument("real set holds " + std::to_string(real_images.size()) +
                                " defect images; need at least 2");
  if (fake_images.size() < 2)
    throw std::invalid_argument("fake set holds " + std::to_string(fake_images.size()) +
                                " synthetic images; need at least 2");

  int64_t k = r.at("k").get<int64_t>();
  eval::Embedder embedder =
      eval::make_embedder(r.at("embedder").get<std::string>(), real_images, k);
  double fid = eval::frechet_distance(eval::compute_image_stats(real_images, embedder),
                                      eval::compute_image_stats(fake_images, embedder));

  json report{{"embedder", embedder.id},
              {"k", k},
              {"n_real", real_images.size()},
              {"n_fake", fake_images.size()},
              {"fid", fid},
              {"seed", seed_of(r)}};
  if (r.at("baseline").get<bool>())
    report["ideal_split_fid"] = eval::ideal_split_fid(real_images, embedder, seed_of(r));

  std::cout << report.dump(2) << '\n';
  fs::create_directories(c.out);
  std::ofstream(fs::path(c.out) / "fid_report.json") << report.dump(2) << '\n';
  cfg::write_run_manifest(c.out, "eval-fid", r, seed_of(r), {"fid_report.json"});
  return 0;
}

int run_train_inspector(const CLI::App* sub, const Common& c) {
  json defaults = insp::inspector_config_json(insp::InspectorConfig::desk_preset());
  defaults["real"] = "";
  defaults["augmentation"] = "";
  json r = resolve(sub, defaults, c);

  std::string real_root = require_path(r, "real", "the real dataset root");
  insp::InspectorConfig config = insp::inspector_config_from_json(r);

  data::DatasetManifest real_train = data::load_manifest(real_root, data::Split::train);
  data::DatasetManifest real_val = data::load_manifest(real_root, data::Split::val);

  std::string aug_root = r.at("augmentation").get<std::string>();
  data::DatasetManifest augmentation;
  insp::MixedDataset mixed;
  if (aug_root.empty()) {
    mixed = insp::mix_training_data(real_train, nullptr);
  } else {
    augmentation = data::load_manifest(aug_root, data::Split::train);
    mixed = insp::mix_training_data(real_train, &augmentation);
  }
  std::cout << "training on " << mixed.records.size() << " records (" << mixed.real_count
            << " real, " << mixed.synthetic_count << " synthetic, " << mixed.restored_count
            << " restored)\n";

  insp::InspectorRun run = insp::train_inspector(
      config, mixed, real_val.records, c.out, [](const insp::EpochMetrics& m) {
        std::cout << "epoch " << m.epoch << "  loss " << m.total_loss << "  val "
                  << m.val_exact_match << "%\n";
      });
  for (const std::string& w : run.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "best epoch " << run.best_epoch << " with " << run.best_val_accuracy
            << "% validation exact match\n";

  cfg::write_run_manifest(c.out, "train-inspector", r, seed_of(r),
                          {"metrics.jsonl", "inspector_best.bin", "inspector_meta.json"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional defect synthesis toolkit"};
  app.require_subcommand(1);

  Common toy_c, train_c, gen_c, fid_c, insp_c;
  CLI::App* toy = app.add_subcommand("make-toy-data", "render the procedural toy dataset");
  add_common(toy, toy_c);
  CLI::App* tr = app.add_subcommand("train", "train the synthesis model");
  add_common(tr, train_c);
  CLI::App* gen = app.add_subcommand("generate", "write a synthetic corpus from a checkpoint");
  add_common(gen, gen_c);
  std::string control_map_file;
  std::vector<std::string> box_flags;
  bool with_restorations = false;
  gen->add_option("--control-map", control_map_file, "control map archive to condition on");
  gen->add_option("--box", box_flags, "region as category:x0,y0,x1,y1[:intensity]; repeatable");
  gen->add_flag("--with-restorations", with_restorations,
                "also write restored versions of the synthetic samples");
  CLI::App* fid = app.add_subcommand("eval-fid", "score a corpus against real data");
  add_common(fid, fid_c);
  CLI::App* ins = app.add_subcommand("train-inspector", "train the defect classifier");
  add_common(ins, insp_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (toy->parsed()) return guarded([&] { return run_make_toy_data(toy, toy_c); });
  if (tr->parsed()) return guarded([&] { return run_train(tr, train_c); });
  if (gen->parsed())
    return guarded(
        [&] { return run_generate(gen, gen_c, control_map_file, box_flags, with_restorations); });
  if (fid->parsed()) return guarded([&] { return run_eval_fid(fid, fid_c); });
  if (ins->parsed()) return guarded([&] { return run_train_inspector(ins, insp_c); });
  return 1;
}
