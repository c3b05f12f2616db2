#include "defsynth/trainer.hpp"

#include "defsynth/checkpoint.hpp"
#include "defsynth/controlmap.hpp"
#include "defsynth/imageio.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace defsynth::train {

namespace ad = defsynth::ad;

void TrainConfig::validate() const {
  if (iterations <= 0) throw std::invalid_argument("TrainConfig: iterations must be positive");
  if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (n_critic < 1) throw std::invalid_argument("TrainConfig: n_critic must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
  if (!(lr_start > 0.0) || !(lr_end > 0.0))
    throw std::invalid_argument("TrainConfig: learning rates must be positive");
  if (lr_end > lr_start)
    throw std::invalid_argument("TrainConfig: lr_end must not exceed lr_start");
  if (checkpoint_period <= 0)
    throw std::invalid_argument("TrainConfig: checkpoint_period must be positive");
  generator_config().validate();
  discriminator_config().validate();
  weights.validate();
}

gan::GeneratorConfig TrainConfig::generator_config() const {
  gan::GeneratorConfig c;
  c.image_size = image_size;
  c.base_width = base_width;
  c.res_blocks = res_blocks;
  c.categories = data::kNumCategories;
  c.noise_injection = ablation.noise_injection;
  c.spatial_modulation = ablation.spatial_control;
  c.composition = ablation.composition;
  return c;
}

gan::DiscriminatorConfig TrainConfig::discriminator_config() const {
  gan::DiscriminatorConfig c;
  c.image_size = image_size;
  c.base_width = base_width;
  c.stages = disc_stages;
  c.categories = data::kNumCategories;
  return c;
}

TrainConfig paper_preset() {
  TrainConfig c;
  c.iterations = 500000;
  c.image_size = 128;
  c.base_width = 64;
  c.res_blocks = 6;
  c.disc_stages = 6;
  c.checkpoint_period = 10000;
  return c;
}

TrainConfig desk_preset() {
  TrainConfig c;
  c.iterations = 2000;
  c.image_size = 32;
  c.base_width = 16;
  c.res_blocks = 2;
  c.disc_stages = 3;
  c.checkpoint_period = 500;
  return c;
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"n_critic", c.n_critic},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"lr_start", c.lr_start},
          {"lr_end", c.lr_end},
          {"image_size", c.image_size},
          {"base_width", c.base_width},
          {"res_blocks", c.res_blocks},
          {"disc_stages", c.disc_stages},
          {"seed", c.seed},
          {"checkpoint_period", c.checkpoint_period},
          {"scc", c.ablation.spatial_control},
          {"ani", c.ablation.noise_injection},
          {"lwc", c.ablation.composition},
          {"sc", c.ablation.spatial_constraints}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.n_critic = j.value("n_critic", c.n_critic);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.lr_start = j.value("lr_start", c.lr_start);
  c.lr_end = j.value("lr_end", c.lr_end);
  c.image_size = j.value("image_size", c.image_size);
  c.base_width = j.value("base_width", c.base_width);
  c.res_blocks = j.value("res_blocks", c.res_blocks);
  c.disc_stages = j.value("disc_stages", c.disc_stages);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_period = j.value("checkpoint_period", c.checkpoint_period);
  c.ablation.spatial_control = j.value("scc", c.ablation.spatial_control);
  c.ablation.noise_injection = j.value("ani", c.ablation.noise_injection);
  c.ablation.composition = j.value("lwc", c.ablation.composition);
  c.ablation.spatial_constraints = j.value("sc", c.ablation.spatial_constraints);
  c.validate();
  return c;
}

TrainingSet TrainingSet::load(const data::DatasetManifest& manifest, int64_t image_size) {
  std::vector<Tensor> norm, def;
  TrainingSet set;
  set.image_size = image_size;
  for (const data::SampleRecord& rec : manifest.records) {
    rec.label.validate();
    Tensor raw = img::read_image_rgb(rec.path);
    if (raw.dim(1) != image_size || raw.dim(2) != image_size)
      throw std::runtime_error("training image " + rec.path + " is " +
                               std::to_string(raw.dim(1)) + "x" + std::to_string(raw.dim(2)) +
                               ", expected " + std::to_string(image_size) + "x" +
                               std::to_string(image_size));
    Tensor x = img::normalize(raw);
    if (rec.label.is_normal()) {
      norm.push_back(std::move(x));
    } else {
      def.push_back(std::move(x));
      set.defect_labels.push_back(rec.label);
    }
  }
  if (norm.empty()) throw std::runtime_error("training split has no normal samples");
  if (def.empty()) throw std::runtime_error("training split has no defect samples");

  const int64_t per = 3 * image_size * image_size;
  auto pack = [per, image_size](const std::vector<Tensor>& xs) {
    Tensor out = Tensor::zeros({static_cast<int64_t>(xs.size()), 3, image_size, image_size});
    for (size_t i = 0; i < xs.size(); ++i)
      std::memcpy(out.data() + static_cast<int64_t>(i) * per, xs[i].data(),
                  static_cast<size_t>(per) * sizeof(double));
    return out;
  };
  set.normals = pack(norm);
  set.defects = pack(def);
  return set;
}

std::string LossRow::to_json() const {
  nlohmann::json j{{"iteration", iteration},
                   {"kind", std::string(1, kind)},
                   {"lr", lr},
                   {"adv_d", report.adv_d},
                   {"adv_g", report.adv_g},
                   {"gp", report.gp},
                   {"cls_r", report.cls_r},
                   {"cls_f", report.cls_f},
                   {"rec", report.rec},
                   {"sd_cyc", report.sd_cyc},
                   {"sd_con", report.sd_con},
                   {"total_d", report.total_d},
                   {"total_g", report.total_g}};
  return j.dump();
}

LossRow loss_row_from_json(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  LossRow row;
  row.iteration = j.at("iteration").get<int64_t>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind != "d" && kind != "g")
    throw std::runtime_error("loss row has unknown kind '" + kind + "'");
  row.kind = kind[0];
  row.lr = j.at("lr").get<double>();
  row.report.adv_d = j.at("adv_d").get<double>();
  row.report.adv_g = j.at("adv_g").get<double>();
  row.report.gp = j.at("gp").get<double>();
  row.report.cls_r = j.at("cls_r").get<double>();
  row.report.cls_f = j.at("cls_f").get<double>();
  row.report.rec = j.at("rec").get<double>();
  row.report.sd_cyc = j.at("sd_cyc").get<double>();
  row.report.sd_con = j.at("sd_con").get<double>();
  row.report.total_d = j.at("total_d").get<double>();
  row.report.total_g = j.at("total_g").get<double>();
  return row;
}

namespace {

TrainConfig checked(TrainConfig c) {
  c.validate();
  return c;
}

}  // namespace

Trainer::Trainer(TrainConfig config, TrainingSet data)
    : config_(checked(std::move(config))),
      data_(std::move(data)),
      g_(config_.generator_config(), config_.seed),
      d_(config_.discriminator_config(), config_.seed + 1),
      opt_g_(g_.params(), config_.beta1, config_.beta2),
      opt_d_(d_.params(), config_.beta1, config_.beta2),
      rng_(config_.seed + 2) {
  if (data_.image_size != config_.image_size)
    throw std::invalid_argument("training set was decoded at size " +
                                std::to_string(data_.image_size) + ", config trains at " +
                                std::to_string(config_.image_size));
}

bool Trainer::is_g_step(int64_t iteration) const {
  return iteration % (config_.n_critic + 1) == config_.n_critic;
}

double Trainer::lr_at(int64_t iteration) const {
  return optim::linear_lr(iteration, config_.iterations, config_.lr_start, config_.lr_end);
}

CycleBatch Trainer::sample_batch() {
  const int64_t batch = config_.batch_size;
  const int64_t per = 3 * config_.image_size * config_.image_size;
  CycleBatch b;
  b.normals = Tensor::zeros({batch, 3, config_.image_size, config_.image_size});
  b.defects = Tensor::zeros({batch, 3, config_.image_size, config_.image_size});
  // Fixed draw order (defects, then normals) keeps resumed runs aligned.
  std::uniform_int_distribution<int64_t> pick_d(0, data_.defects.dim(0) - 1);
  std::uniform_int_distribution<int64_t> pick_n(0, data_.normals.dim(0) - 1);
  for (int64_t i = 0; i < batch; ++i) {
    int64_t j = pick_d(rng_);
    std::memcpy(b.defects.data() + i * per, data_.defects.data() + j * per,
                static_cast<size_t>(per) * sizeof(double));
    b.defect_labels.push_back(data_.defect_labels[static_cast<size_t>(j)]);
  }
  for (int64_t i = 0; i < batch; ++i) {
    int64_t j = pick_n(rng_);
    std::memcpy(b.normals.data() + i * per, data_.normals.data() + j * per,
                static_cast<size_t>(per) * sizeof(double));
  }
  return b;
}

Tensor Trainer::deface_control(const CycleBatch& batch) const {
  std::vector<ctrl::AttributeControlMap> maps;
  maps.reserve(batch.defect_labels.size());
  for (const data::LabelVector& label : batch.defect_labels)
    maps.push_back(ctrl::repeat_label(label, config_.image_size, config_.image_size));
  // stack_maps validates every map, holding the uniform-conditioning contract
  // for training batches.
  return ctrl::stack_maps(maps);
}

LossRow Trainer::step() {
  if (iteration_ >= config_.iterations)
    throw std::logic_error("training already ran all " + std::to_string(config_.iterations) +
                           " updates");
  CycleBatch batch = sample_batch();
  LossRow row;
  row.iteration = iteration_;
  row.lr = lr_at(iteration_);
  row.kind = is_g_step(iteration_) ? 'g' : 'd';
  try {
    row.report = row.kind == 'g' ? step_g(batch, row.lr) : step_d(batch, row.lr);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("update " + std::to_string(iteration_) + ": " + e.what());
  }
  ++iteration_;
  return row;
}

gan::LossReport Trainer::step_d(const CycleBatch& batch, double lr) {
  // Fakes are produced without a graph; the critic never trains the generator.
  Tensor fake_defect, fake_normal;
  Tensor control = deface_control(batch);
  uint64_t seed_deface = draw_seed();
  uint64_t seed_restore = draw_seed();
  {
    ad::NoGradGuard guard;
    fake_defect = g_.deface(ad::constant(batch.normals), control, seed_deface).image.value();
    fake_normal = g_.restore(ad::constant(batch.defects), seed_restore).image.value();
  }

  gan::CriticFn critic = [this](const ad::Var& x) { return d_.forward(x).src_map; };
  gan::CriticLoss on_defects = gan::critic_loss(critic, ad::constant(batch.defects),
                                                ad::constant(fake_defect), draw_seed());
  gan::CriticLoss on_normals = gan::critic_loss(critic, ad::constant(batch.normals),
                                                ad::constant(fake_normal), draw_seed());
  ad::Var adv = ad::scale(ad::add(on_defects.adv, on_normals.adv), 0.5);
  ad::Var gp = ad::scale(ad::add(on_defects.gp, on_normals.gp), 0.5);

  // The category head learns from both real pools: defect samples carry their
  // labels, normal samples the normal bit.
  Tensor defect_targets = gan::targets_tensor(batch.defect_labels);
  Tensor normal_targets = gan::targets_tensor(std::vector<data::LabelVector>(
      batch.defect_labels.size(), data::LabelVector::normal()));
  ad::Var cls = ad::scale(
      ad::add(gan::classification_loss(d_.forward(ad::constant(batch.defects)).cls_logits,
                                       defect_targets),
              gan::classification_loss(d_.forward(ad::constant(batch.normals)).cls_logits,
                                       normal_targets)),
      0.5);

  gan::LossComponents parts;
  parts.adv_d = adv.value().at(0);
  parts.gp = gp.value().at(0);
  parts.cls_r = cls.value().at(0);
  gan::LossReport report = gan::total_losses(parts, config_.weights);  // finiteness gate

  ad::Var total = gan::critic_total(adv, gp, cls, config_.weights);
  ad::GradMap grads = ad::backward(total);
  opt_d_.step(grads, lr);
  return report;
}

gan::LossReport Trainer::step_g(const CycleBatch& batch, double lr) {
  Tensor control = deface_control(batch);
  ad::Var n = ad::constant(batch.normals);
  ad::Var d_real = ad::constant(batch.defects);
  uint64_t s1 = draw_seed(), s2 = draw_seed(), s3 = draw_seed(), s4 = draw_seed();

  // n -> d -> n and d -> n -> d, the re-defacement conditioned on the real
  // defect's label.
  gan::TranslationResult d_gen = g_.deface(n, control, s1);
  gan::TranslationResult n_cycle = g_.restore(d_gen.image, s2);
  gan::TranslationResult n_gen = g_.restore(d_real, s3);
  gan::TranslationResult d_cycle = g_.deface(n_gen.image, control, s4);

  gan::DiscriminatorOutput on_defect = d_.forward(d_gen.image);
  gan::DiscriminatorOutput on_normal = d_.forward(n_gen.image);
  Tensor deface_targets = gan::targets_tensor(batch.defect_labels);
  Tensor restore_targets = gan::targets_tensor(std::vector<data::LabelVector>(
      batch.defect_labels.size(), data::LabelVector::normal()));

  ad::Var adv = ad::scale(ad::add(gan::generator_adv_loss(on_defect.src_map),
                                  gan::generator_adv_loss(on_normal.src_map)),
                          0.5);
  ad::Var cls = ad::scale(
      ad::add(gan::classification_loss(on_defect.cls_logits, deface_targets),
              gan::classification_loss(on_normal.cls_logits, restore_targets)),
      0.5);
  ad::Var rec = ad::scale(ad::add(gan::reconstruction_loss(n, n_cycle.image),
                                  gan::reconstruction_loss(d_real, d_cycle.image)),
                          0.5);

  // Without composition there are no meaningful blend maps, so both blend
  // losses drop out; the same happens when the constraint ablation is on.
  const bool use_sd = config_.ablation.composition && config_.ablation.spatial_constraints;
  gan::LossWeights weights = config_.weights;
  ad::Var sd_cyc, sd_con;
  if (use_sd) {
    sd_cyc = ad::scale(ad::add(gan::sd_cycle_loss(d_gen.blend, n_cycle.blend),
                               gan::sd_cycle_loss(n_gen.blend, d_cycle.blend)),
                       0.5);
    sd_con = ad::scale(ad::add(gan::sd_region_loss(d_gen.blend, n_cycle.blend),
                               gan::sd_region_loss(n_gen.blend, d_cycle.blend)),
                       0.5);
  } else {
    weights.sd_cyc = 0.0;
    weights.sd_con = 0.0;
    sd_cyc = ad::constant(Tensor::scalar(0.0));
    sd_con = ad::constant(Tensor::scalar(0.0));
  }

  gan::LossComponents parts;
  parts.adv_g = adv.value().at(0);
  parts.cls_f = cls.value().at(0);
  parts.rec = rec.value().at(0);
  parts.sd_cyc = sd_cyc.value().at(0);
  parts.sd_con = sd_con.value().at(0);
  gan::LossReport report = gan::total_losses(parts, weights);  // finiteness gate

  ad::Var total = gan::generator_total(adv, cls, rec, sd_cyc, sd_con, weights);
  ad::GradMap grads = ad::backward(total);
  opt_g_.step(grads, lr);
  return report;
}

void Trainer::write_state(const std::filesystem::path& dir) const {
  std::ostringstream state;
  state << rng_;
  ckpt::CheckpointMeta meta;
  meta.iteration = iteration_;
  meta.categories = data::category_names();
  meta.rng_state = state.str();
  meta.extra = {{"train_config", train_config_json(config_)}};
  ckpt::write_checkpoint(dir, meta, g_, d_, &opt_g_, &opt_d_);
}

std::filesystem::path Trainer::save_checkpoint(const std::filesystem::path& run_dir) const {
  std::filesystem::path dir = run_dir / ("ckpt_" + std::to_string(iteration_));
  write_state(dir);
  return dir;
}

void Trainer::restore(const std::filesystem::path& ckpt_dir) {
  ckpt::CheckpointMeta meta = ckpt::read_meta(ckpt_dir);
  if (meta.iteration > config_.iterations)
    throw std::runtime_error("checkpoint at update " + std::to_string(meta.iteration) +
                             " is past the configured " + std::to_string(config_.iterations));
  try {
    ckpt::load_params(g_.params(), ckpt_dir / "generator.bin");
    ckpt::load_params(d_.params(), ckpt_dir / "discriminator.bin");
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint does not match the configured model: " +
                             std::string(e.what()));
  }
  ckpt::load_optimizers(ckpt_dir, opt_g_, g_.params(), opt_d_, d_.params());
  if (meta.rng_state.empty())
    throw std::runtime_error("checkpoint " + ckpt_dir.string() +
                             " has no RNG state; cannot resume deterministically");
  std::istringstream in(meta.rng_state);
  in >> rng_;
  if (!in)
    throw std::runtime_error("corrupt RNG state in checkpoint " + ckpt_dir.string());
  iteration_ = meta.iteration;
}

void Trainer::run(const std::filesystem::path& run_dir, std::ostream* progress) {
  std::filesystem::create_directories(run_dir);
  std::ofstream log(run_dir / "train_log.jsonl", std::ios::app);
  if (!log)
    throw std::runtime_error("cannot open train log in " + run_dir.string());
  while (iteration_ < config_.iterations) {
    LossRow row;
    try {
      row = step();
    } catch (const std::exception& e) {
      std::filesystem::path diag = run_dir / ("ckpt_diag_" + std::to_string(iteration_));
      write_state(diag);
      throw std::runtime_error(std::string(e.what()) + "; diagnostic state in " +
                               diag.string());
    }
    log << row.to_json() << '\n';
    log.flush();
    if (iteration_ % config_.checkpoint_period == 0 || iteration_ == config_.iterations)
      save_checkpoint(run_dir);
    if (progress && iteration_ % 100 == 0)
      *progress << "update " << iteration_ << "/" << config_.iterations
                << (row.kind == 'g' ? " g total=" : " d total=")
                << (row.kind == 'g' ? row.report.total_g : row.report.total_d) << std::endl;
  }
}

}  // namespace defsynth::train
