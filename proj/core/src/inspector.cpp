#include "defsynth/inspector.hpp"

#include "defsynth/checkpoint.hpp"
#include "defsynth/imageio.hpp"
#include "defsynth/optim.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace defsynth::insp {

namespace {

using nlohmann::json;

constexpr int64_t kBackboneWidth = 8;  // channels double per stage: 8, 16, 32

}  // namespace

void InspectorConfig::validate() const {
  if (backbone.empty()) throw std::invalid_argument("InspectorConfig: backbone id is empty");
  if (input_size < 8)
    throw std::invalid_argument("InspectorConfig: input size must be at least 8");
  if (!(lr > 0.0)) throw std::invalid_argument("InspectorConfig: lr must be positive");
  if (batch_size < 1)
    throw std::invalid_argument("InspectorConfig: batch size must be positive");
  if (lambda_grl < 0.0)
    throw std::invalid_argument("InspectorConfig: lambda_grl must be non-negative");
  if (epochs < 1) throw std::invalid_argument("InspectorConfig: epochs must be positive");
}

InspectorConfig InspectorConfig::paper_preset() {
  InspectorConfig c;
  c.backbone = "resnet34";
  c.input_size = 224;
  c.epochs = 30;
  return c;
}

InspectorConfig InspectorConfig::desk_preset() {
  InspectorConfig c;
  c.backbone = "small_conv";
  c.input_size = 32;
  c.epochs = 8;
  return c;
}

json inspector_config_json(const InspectorConfig& c) {
  return json{{"backbone", c.backbone}, {"input_size", c.input_size},
              {"lr", c.lr},             {"batch_size", c.batch_size},
              {"lambda_grl", c.lambda_grl}, {"epochs", c.epochs},
              {"seed", c.seed}};
}

InspectorConfig inspector_config_from_json(const json& j) {
  InspectorConfig c;
  c.backbone = j.value("backbone", c.backbone);
  c.input_size = j.value("input_size", c.input_size);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lambda_grl = j.value("lambda_grl", c.lambda_grl);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

MixedDataset mix_training_data(const data::DatasetManifest& real,
                               const data::DatasetManifest* augmentation) {
  if (augmentation && real.categories != augmentation->categories)
    throw std::invalid_argument(
        "mix_training_data: category spaces differ between the manifests");

  MixedDataset mixed;
  mixed.records = real.records;
  if (augmentation) {
    std::unordered_set<std::string> seen;
    for (const data::SampleRecord& rec : real.records) seen.insert(rec.path);
    std::vector<std::string> duplicates;
    for (const data::SampleRecord& rec : augmentation->records)
      if (!seen.insert(rec.path).second) duplicates.push_back(rec.path);
    if (!duplicates.empty()) {
      std::string msg = "mix_training_data: duplicate paths in the training mix:";
      for (const std::string& p : duplicates) msg += " " + p;
      throw std::invalid_argument(msg);
    }
    mixed.records.insert(mixed.records.end(), augmentation->records.begin(),
                         augmentation->records.end());
    mixed.mixed = true;
  }
  for (const data::SampleRecord& rec : mixed.records) {
    switch (rec.source) {
      case data::Source::real: ++mixed.real_count; break;
      case data::Source::synthetic: ++mixed.synthetic_count; break;
      case data::Source::restored: ++mixed.restored_count; break;
    }
  }
  return mixed;
}

Inspector::Inspector(InspectorConfig config, uint64_t init_seed)
    : config_(std::move(config)) {
  config_.validate();
  if (config_.backbone == "resnet34" || config_.backbone == "densenet121")
    throw std::runtime_error("backbone '" + config_.backbone +
                             "' is not bundled; the desk build ships small_conv only");
  if (config_.backbone != "small_conv")
    throw std::invalid_argument("unknown backbone '" + config_.backbone + "'");

  std::mt19937_64 rng(init_seed);
  int64_t in_ch = 3, width = kBackboneWidth;
  for (int stage = 0; stage < 3; ++stage) {
    conv_.emplace_back(store_, "backbone.c" + std::to_string(stage), in_ch, width, 3, 2, 1,
                       true, rng);
    in_ch = width;
    width *= 2;
  }
  feature_dim_ = in_ch;
  category_head_ = std::make_unique<nn::Linear>(store_, "heads.category", feature_dim_,
                                                data::kNumCategories, rng);
  source_head_ = std::make_unique<nn::Linear>(store_, "heads.source", feature_dim_, 1, rng);
}

ad::Var Inspector::features(const ad::Var& images) const {
  ad::Var h = images;
  for (const nn::Conv2d& conv : conv_) h = ad::relu(conv.forward(h));
  h = ad::mean_hw(h);  // (N,C,1,1)
  return ad::reshape(h, {h.value().dim(0), feature_dim_});
}

Inspector::Heads Inspector::forward(const ad::Var& images, double lambda_grl) const {
  ad::Var feat = features(images);
  Heads heads;
  heads.categories = category_head_->forward(feat);
  heads.source = source_head_->forward(ad::gradient_reversal(feat, lambda_grl));
  return heads;
}

double exact_match_accuracy(const std::vector<Tensor>& probabilities,
                            const std::vector<data::LabelVector>& targets,
                            double threshold) {
  if (probabilities.size() != targets.size())
    throw std::invalid_argument("exact_match_accuracy: prediction and target counts differ");
  if (probabilities.empty())
    throw std::invalid_argument("exact_match_accuracy: empty input");
  int64_t hits = 0;
  for (size_t i = 0; i < probabilities.size(); ++i) {
    const Tensor& p = probabilities[i];
    if (p.numel() != data::kNumCategories)
      throw std::invalid_argument("exact_match_accuracy: prediction " + std::to_string(i) +
                                  " has " + std::to_string(p.numel()) + " entries, expected " +
                                  std::to_string(data::kNumCategories));
    bool match = true;
    for (int64_t c = 0; c < data::kNumCategories; ++c) {
      int predicted = p.at(c) >= threshold ? 1 : 0;
      if (predicted != targets[i].bits[static_cast<size_t>(c)]) {
        match = false;
        break;
      }
    }
    if (match) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(probabilities.size());
}

json EpochMetrics::to_json() const {
  return json{{"epoch", epoch},
              {"category_loss", category_loss},
              {"source_loss", source_loss},
              {"total_loss", total_loss},
              {"val_exact_match", val_exact_match}};
}

EpochMetrics epoch_metrics_from_json(const json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int64_t>();
  m.category_loss = j.at("category_loss").get<double>();
  m.source_loss = j.at("source_loss").get<double>();
  m.total_loss = j.at("total_loss").get<double>();
  m.val_exact_match = j.at("val_exact_match").get<double>();
  return m;
}

namespace {

/// Decoded, resized, normalized images keyed by path; shared across epochs.
class ImageCache {
 public:
  explicit ImageCache(int64_t size) : size_(size) {}

  const Tensor& get(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    Tensor raw = img::read_image_rgb(path);
    if (raw.dim(1) != size_ || raw.dim(2) != size_)
      raw = img::resize_bilinear(raw, size_, size_);
    return cache_.emplace(path, img::normalize(raw)).first->second;
  }

 private:
  int64_t size_;
  std::unordered_map<std::string, Tensor> cache_;
};

Tensor batch_images(ImageCache& cache, const std::vector<data::SampleRecord>& records,
                    const std::vector<size_t>& order, size_t begin, size_t end,
                    int64_t size) {
  int64_t n = static_cast<int64_t>(end - begin);
  Tensor x({n, 3, size, size});
  int64_t chw = 3 * size * size;
  for (size_t i = begin; i < end; ++i) {
    const Tensor& im = cache.get(records[order[i]].path);
    std::memcpy(x.data() + static_cast<int64_t>(i - begin) * chw, im.data(),
                static_cast<size_t>(chw) * sizeof(double));
  }
  return x;
}

double evaluate_exact_match(const Inspector& model, ImageCache& cache,
                            const std::vector<data::SampleRecord>& records,
                            int64_t batch_size) {
  ad::NoGradGuard guard;
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<Tensor> probs;
  std::vector<data::LabelVector> labels;
  probs.reserve(records.size());
  labels.reserve(records.size());
  int64_t size = model.config().input_size;
  for (size_t begin = 0; begin < records.size();
       begin += static_cast<size_t>(batch_size)) {
    size_t end = std::min(records.size(), begin + static_cast<size_t>(batch_size));
    Tensor x = batch_images(cache, records, order, begin, end, size);
    Tensor logits = model.forward(ad::constant(x), 0.0).categories.value();
    for (size_t i = begin; i < end; ++i) {
      Tensor row = Tensor::zeros({data::kNumCategories});
      for (int64_t c = 0; c < data::kNumCategories; ++c) {
        double z = logits.at2(static_cast<int64_t>(i - begin), c);
        row.at(c) = 1.0 / (1.0 + std::exp(-z));
      }
      probs.push_back(row);
      labels.push_back(records[i].label);
    }
  }
  return exact_match_accuracy(probs, labels);
}

}  // namespace

InspectorRun train_inspector(const InspectorConfig& config, const MixedDataset& training,
                             const std::vector<data::SampleRecord>& validation,
                             const std::filesystem::path& out_dir,
                             const std::function<void(const EpochMetrics&)>& progress) {
  config.validate();
  if (training.records.empty())
    throw std::invalid_argument("train_inspector: training set is empty");
  if (validation.empty())
    throw std::invalid_argument("train_inspector: validation set is empty");

  InspectorRun run;
  run.model = std::make_unique<Inspector>(config, config.seed);
  Inspector& model = *run.model;

  int64_t real = 0, other = 0;
  for (const data::SampleRecord& rec : training.records)
    (rec.source == data::Source::real ? real : other) += 1;
  bool want_source = config.lambda_grl > 0.0;
  run.source_head_active = want_source && real > 0 && other > 0;
  if (want_source && !run.source_head_active)
    run.warnings.push_back(
        "source head disabled: every training record shares one origin, so "
        "real-vs-generated discrimination has nothing to learn");

  std::filesystem::create_directories(out_dir);
  std::ofstream metrics_out(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics_out)
    throw std::runtime_error("train_inspector: cannot write metrics under " +
                             out_dir.string());

  ImageCache cache(config.input_size);
  optim::Sgd sgd(model.params());
  std::mt19937_64 rng(config.seed);
  std::vector<size_t> order(training.records.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::unordered_map<std::string, Tensor> best_params;
  const int64_t size = config.input_size;

  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double cat_sum = 0.0, src_sum = 0.0;
    int64_t seen = 0;
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(config.batch_size)) {
      size_t end = std::min(order.size(), begin + static_cast<size_t>(config.batch_size));
      int64_t n = static_cast<int64_t>(end - begin);
      Tensor x = batch_images(cache, training.records, order, begin, end, size);
      Tensor cat_target({n, data::kNumCategories});
      Tensor src_target({n, 1});
      for (size_t i = begin; i < end; ++i) {
        const data::SampleRecord& rec = training.records[order[i]];
        Tensor row = rec.label.to_tensor();
        std::memcpy(cat_target.data() + static_cast<int64_t>(i - begin) * data::kNumCategories,
                    row.data(), static_cast<size_t>(data::kNumCategories) * sizeof(double));
        src_target.at(static_cast<int64_t>(i - begin)) =
            rec.source == data::Source::real ? 1.0 : 0.0;
      }

      Inspector::Heads heads = model.forward(ad::constant(x), config.lambda_grl);
      ad::Var cat_loss = ad::bce_with_logits_mean(heads.categories, cat_target);
      ad::Var total = cat_loss;
      double src_value = 0.0;
      if (run.source_head_active) {
        ad::Var src_loss = ad::bce_with_logits_mean(heads.source, src_target);
        src_value = src_loss.value().at(0);
        total = ad::add(cat_loss, src_loss);
      }
      ad::GradMap grads = ad::backward(total);
      sgd.step(grads, config.lr);

      cat_sum += cat_loss.value().at(0) * static_cast<double>(n);
      src_sum += src_value * static_cast<double>(n);
      seen += n;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.category_loss = cat_sum / static_cast<double>(seen);
    m.source_loss = src_sum / static_cast<double>(seen);
    m.total_loss = m.category_loss + m.source_loss;
    m.val_exact_match =
        evaluate_exact_match(model, cache, validation, config.batch_size);
    run.history.push_back(m);
    metrics_out << m.to_json().dump() << '\n';
    metrics_out.flush();
    if (progress) progress(m);

    if (m.val_exact_match > run.best_val_accuracy || run.best_epoch < 0) {
      run.best_epoch = epoch;
      run.best_val_accuracy = m.val_exact_match;
      best_params.clear();
      for (const std::string& name : model.params().names())
        best_params.emplace(name, model.params().tensor(name).clone());
    }
  }

  for (const std::string& name : model.params().names())
    model.params().tensor(name).copy_from(best_params.at(name));
  ckpt::save_params(model.params(), out_dir / "inspector_best.bin");
  json meta{{"format_version", 1},
            {"config", inspector_config_json(config)},
            {"best_epoch", run.best_epoch},
            {"best_val_accuracy", run.best_val_accuracy},
            {"source_head_active", run.source_head_active}};
  std::ofstream meta_out(out_dir / "inspector_meta.json", std::ios::trunc);
  meta_out << meta.dump(2) << '\n';
  return run;
}

std::unique_ptr<Inspector> load_inspector(const std::filesystem::path& dir) {
  std::ifstream in(dir / "inspector_meta.json");
  if (!in)
    throw std::runtime_error("load_inspector: cannot open " +
                             (dir / "inspector_meta.json").string());
  json meta = json::parse(in, nullptr, false);
  if (meta.is_discarded())
    throw std::runtime_error("load_inspector: inspector_meta.json is not valid JSON");
  InspectorConfig config = inspector_config_from_json(meta.at("config"));
  auto model = std::make_unique<Inspector>(config, 0);
  ckpt::load_params(model->params(), dir / "inspector_best.bin");
  return model;
}

}  // namespace defsynth::insp
