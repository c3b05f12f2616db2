#pragma once

#include "defsynth/autodiff.hpp"
#include "defsynth/datamodel.hpp"
#include "defsynth/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace defsynth::gan {

namespace ad = defsynth::ad;

/// Weighted sum coefficients for the two training objectives.
struct LossWeights {
  double cls_r = 2.0;   // category loss on real samples (critic side)
  double cls_f = 5.0;   // category loss on generated samples (generator side)
  double rec = 5.0;     // cycle reconstruction
  double sd_cyc = 5.0;  // blend-map cycle consistency
  double sd_con = 1.0;  // blend-map area penalty
  double gp = 10.0;     // gradient penalty
  void validate() const;
};

/// Numeric per-term snapshot of one training step. Totals are the weighted
/// sums actually optimized.
struct LossReport {
  double adv_d = 0.0, adv_g = 0.0, gp = 0.0;
  double cls_r = 0.0, cls_f = 0.0;
  double rec = 0.0, sd_cyc = 0.0, sd_con = 0.0;
  double total_d = 0.0, total_g = 0.0;
  std::string to_json() const;
};

/// Unweighted component values; cycle-paired terms are expected to arrive
/// already averaged over the two translation directions.
struct LossComponents {
  double adv_d = 0.0, gp = 0.0, cls_r = 0.0;
  double adv_g = 0.0, cls_f = 0.0, rec = 0.0, sd_cyc = 0.0, sd_con = 0.0;
};

/// Maps a batch input to its patch score map.
using CriticFn = std::function<ad::Var(const ad::Var&)>;

struct CriticLoss {
  ad::Var adv;  // mean score on fakes minus mean score on reals
  ad::Var gp;   // mean over the batch of (per-sample gradient norm - 1)^2
};

/// Critic objective pieces. The penalty is evaluated at per-sample random
/// interpolates between real and fake (the seed fixes the draw); its gradient
/// graph stays differentiable so the penalty trains the critic.
CriticLoss critic_loss(const CriticFn& critic, const ad::Var& real, const ad::Var& fake,
                       uint64_t seed);

/// Generator's adversarial term: minus the mean of the critic's scores on the
/// generated batch.
ad::Var generator_adv_loss(const ad::Var& fake_src);

/// Mean multi-label binary cross-entropy between (N,C) logits and targets.
ad::Var classification_loss(const ad::Var& cls_logits, const Tensor& targets);

/// Stacks label vectors into an (N,C) target tensor.
Tensor targets_tensor(const std::vector<data::LabelVector>& labels);

/// Mean absolute difference; used for image round trips.
ad::Var reconstruction_loss(const ad::Var& a, const ad::Var& b);

/// Mean absolute difference between the two directions' blend maps.
ad::Var sd_cycle_loss(const ad::Var& forward_blend, const ad::Var& backward_blend);

/// mean(forward_blend) + mean(backward_blend): discourages blanket repaints.
ad::Var sd_region_loss(const ad::Var& forward_blend, const ad::Var& backward_blend);

/// Weighted totals as graph nodes, for backprop.
ad::Var critic_total(const ad::Var& adv_d, const ad::Var& gp, const ad::Var& cls_r,
                     const LossWeights& w);
ad::Var generator_total(const ad::Var& adv_g, const ad::Var& cls_f, const ad::Var& rec,
                        const ad::Var& sd_cyc, const ad::Var& sd_con, const LossWeights& w);

/// Assembles the numeric report; throws naming the term if any component is
/// non-finite.
LossReport total_losses(const LossComponents& c, const LossWeights& w);

}  // namespace defsynth::gan
