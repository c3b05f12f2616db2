#include "defsynth/objectives.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>
#include <stdexcept>

namespace defsynth::gan {

void LossWeights::validate() const {
  for (double v : {cls_r, cls_f, rec, sd_cyc, sd_con, gp})
    if (!(v >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
}

std::string LossReport::to_json() const {
  nlohmann::json j;
  j["adv_d"] = adv_d;
  j["adv_g"] = adv_g;
  j["gp"] = gp;
  j["cls_r"] = cls_r;
  j["cls_f"] = cls_f;
  j["rec"] = rec;
  j["sd_cyc"] = sd_cyc;
  j["sd_con"] = sd_con;
  j["total_d"] = total_d;
  j["total_g"] = total_g;
  return j.dump();
}

CriticLoss critic_loss(const CriticFn& critic, const ad::Var& real, const ad::Var& fake,
                       uint64_t seed) {
  // The penalty differentiates the critic's scores with respect to the
  // interpolates; without recording that inner pass would silently see an
  // empty graph.
  if (!ad::grad_enabled())
    throw std::logic_error("critic_loss requires gradient recording to be enabled");
  const Tensor& r = real.value();
  const Tensor& f = fake.value();
  if (r.shape() != f.shape())
    throw std::invalid_argument("critic_loss: real " + r.shape_str() + " vs fake " +
                                f.shape_str());
  const int64_t n = r.dim(0);

  CriticLoss out;
  out.adv = ad::sub(ad::mean_all(critic(fake)), ad::mean_all(critic(real)));

  // Per-sample interpolates between the real and generated batches.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor mix(r.shape());
  int64_t per_sample = r.numel() / n;
  for (int64_t i = 0; i < n; ++i) {
    double eps = unit(rng);
    for (int64_t k = 0; k < per_sample; ++k) {
      int64_t idx = i * per_sample + k;
      mix.at(idx) = eps * r.at(idx) + (1.0 - eps) * f.at(idx);
    }
  }
  ad::Var interp = ad::leaf(std::move(mix), true);
  ad::Var score = critic(interp);
  // Each sample contributes its mean patch score; the sum's gradient is then
  // that sample's own score gradient.
  int64_t patches = score.value().numel() / n;
  ad::Var objective = ad::sum_all(ad::scale(ad::sum_chw(score), 1.0 / static_cast<double>(patches)));
  ad::GradMap gm = ad::backward(objective, /*create_graph=*/true);
  ad::Var g = ad::grad_in(gm, interp);
  if (!g.defined()) {
    // Input-independent critic: gradient norm is zero everywhere.
    out.gp = ad::constant(Tensor::scalar(1.0));
    return out;
  }
  ad::Var norms = ad::sqrt_(ad::sum_chw(ad::square(g)));
  out.gp = ad::mean_all(ad::square(ad::add_scalar(norms, -1.0)));
  return out;
}

ad::Var generator_adv_loss(const ad::Var& fake_src) { return ad::neg(ad::mean_all(fake_src)); }

ad::Var classification_loss(const ad::Var& cls_logits, const Tensor& targets) {
  return ad::bce_with_logits_mean(cls_logits, targets);
}

Tensor targets_tensor(const std::vector<data::LabelVector>& labels) {
  if (labels.empty()) throw std::invalid_argument("targets_tensor: empty label list");
  Tensor out({static_cast<int64_t>(labels.size()), data::kNumCategories});
  for (size_t i = 0; i < labels.size(); ++i) {
    labels[i].validate();
    for (int64_t c = 0; c < data::kNumCategories; ++c)
      out.at(static_cast<int64_t>(i) * data::kNumCategories + c) =
          static_cast<double>(labels[i].bits[static_cast<size_t>(c)]);
  }
  return out;
}

ad::Var reconstruction_loss(const ad::Var& a, const ad::Var& b) {
  return ad::mean_all(ad::abs_(ad::sub(a, b)));
}

ad::Var sd_cycle_loss(const ad::Var& forward_blend, const ad::Var& backward_blend) {
  return ad::mean_all(ad::abs_(ad::sub(forward_blend, backward_blend)));
}

ad::Var sd_region_loss(const ad::Var& forward_blend, const ad::Var& backward_blend) {
  return ad::add(ad::mean_all(forward_blend), ad::mean_all(backward_blend));
}

ad::Var critic_total(const ad::Var& adv_d, const ad::Var& gp, const ad::Var& cls_r,
                     const LossWeights& w) {
  return ad::add(adv_d, ad::add(ad::scale(gp, w.gp), ad::scale(cls_r, w.cls_r)));
}

ad::Var generator_total(const ad::Var& adv_g, const ad::Var& cls_f, const ad::Var& rec,
                        const ad::Var& sd_cyc, const ad::Var& sd_con, const LossWeights& w) {
  ad::Var tail = ad::add(ad::scale(sd_cyc, w.sd_cyc), ad::scale(sd_con, w.sd_con));
  return ad::add(adv_g, ad::add(ad::scale(cls_f, w.cls_f), ad::add(ad::scale(rec, w.rec), tail)));
}

LossReport total_losses(const LossComponents& c, const LossWeights& w) {
  w.validate();
  auto need_finite = [](double v, const char* name) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string(name) + " non-finite");
  };
  need_finite(c.adv_d, "adv_d");
  need_finite(c.gp, "gp");
  need_finite(c.cls_r, "cls_r");
  need_finite(c.adv_g, "adv_g");
  need_finite(c.cls_f, "cls_f");
  need_finite(c.rec, "rec");
  need_finite(c.sd_cyc, "sd_cyc");
  need_finite(c.sd_con, "sd_con");

  LossReport rep;
  rep.adv_d = c.adv_d;
  rep.gp = c.gp;
  rep.cls_r = c.cls_r;
  rep.adv_g = c.adv_g;
  rep.cls_f = c.cls_f;
  rep.rec = c.rec;
  rep.sd_cyc = c.sd_cyc;
  rep.sd_con = c.sd_con;
  rep.total_d = c.adv_d + w.gp * c.gp + w.cls_r * c.cls_r;
  rep.total_g = c.adv_g + w.cls_f * c.cls_f + w.rec * c.rec + w.sd_cyc * c.sd_cyc +
                w.sd_con * c.sd_con;
  return rep;
}

}  // namespace defsynth::gan
