#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "timex/explainer.hpp"
#include "timex/masking.hpp"
#include "timex/model.hpp"

namespace txai {

// Per-sample binary keep mask retaining the top (1-fraction) share of cells
// by attribution score: cells scoring below the sample's fraction-quantile
// are dropped. Ties at the cutoff are kept, so at least one cell (the
// maximum) always survives. scores: (T,d) or (B,T,d), fraction in [0,1).
torch::Tensor occlusion_keep_mask(const torch::Tensor& scores, double fraction);

// Reference-model class probabilities after occluding the bottom `fraction`
// of cells per sample: dropped cells are replaced by baseline draws, and in
// attention mode (univariate inputs) dropped timesteps are also excluded
// from attention and pooling. fraction = 0 is the exact identity. The seed
// pins the baseline noise.
torch::Tensor occluded_probs(const ReferenceModel& ref, const torch::Tensor& x,
                             const torch::Tensor& scores, double fraction,
                             const BaselineStats& stats, MaskMode mode,
                             uint64_t seed, int64_t batch = 256);

// Macro one-vs-rest AUROC of the reference model on occluded inputs.
double occlusion_auroc(const ReferenceModel& ref, const torch::Tensor& x,
                       const torch::Tensor& y, const torch::Tensor& scores,
                       double fraction, const BaselineStats& stats,
                       MaskMode mode, uint64_t seed, int64_t batch = 256);

// AUROC across a grid of occlusion fractions for one attribution source.
struct OcclusionCurve {
  std::vector<double> fractions;
  std::vector<double> auroc;
};

OcclusionCurve occlusion_curve(const ReferenceModel& ref,
                               const torch::Tensor& x, const torch::Tensor& y,
                               const torch::Tensor& scores,
                               const std::vector<double>& fractions,
                               const BaselineStats& stats, MaskMode mode,
                               uint64_t seed, int64_t batch = 256);

// Default fraction grid for occlusion sweeps.
std::vector<double> default_occlusion_fractions();

}  // namespace txai
