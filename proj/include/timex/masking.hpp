#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>

namespace txai {

// Per-cell baseline distribution of the training inputs, used to fill
// masked-out cells with plausible values instead of zeros.
struct BaselineStats {
  torch::Tensor mu;     // (T,d)
  torch::Tensor sigma;  // (T,d), population std floored away from zero
};

// X: (N,T,d). Statistics are per (timestep, sensor) cell across samples.
BaselineStats baseline_stats(const torch::Tensor& x);

// Draws a discrete {0,1} mask from per-cell probabilities p with a
// straight-through estimator: the forward value is an exact Bernoulli(p)
// sample (via a Gumbel-noise logistic race), the backward pass uses the
// gradient of the temperature-tau sigmoid relaxation. With training=false
// the mask is the deterministic threshold p >= 0.5 and carries no gradient.
// A seed pins the noise draw (verification hook); otherwise the global
// torch generator is used.
torch::Tensor sample_discrete_mask(const torch::Tensor& p, double tau,
                                   bool training,
                                   std::optional<uint64_t> seed = std::nullopt);

// Both halves of the straight-through sample: the hard {0,1} forward tensor
// (whose backward is the soft gradient) and the soft relaxation itself.
// With a fixed seed the two are deterministic functions of p, which lets a
// finite-difference check of the soft path validate the hard path's grad.
struct MaskSample {
  torch::Tensor ste;
  torch::Tensor soft;
};
MaskSample sample_discrete_mask_detail(const torch::Tensor& p, double tau,
                                       std::optional<uint64_t> seed = std::nullopt);

// x^m = m * x + (1-m) * b with b ~ N(mu, sigma^2) drawn elementwise from the
// baseline stats. x: (B,T,d) or (T,d); m broadcastable to x. A seed pins
// the baseline draw.
torch::Tensor direct_value_mask(const torch::Tensor& x, const torch::Tensor& m,
                                const BaselineStats& stats,
                                std::optional<uint64_t> seed = std::nullopt);

// Multiplies post-softmax attention weights by a per-key mask and
// renormalizes each query's row to sum to one (all-masked rows stay zero).
// weights: (..., Tq, Tk); key_mask: (Tk), (B,Tk), or broadcastable to
// weights with a singleton query dim.
torch::Tensor apply_attention_mask(const torch::Tensor& weights,
                                   const torch::Tensor& key_mask);

}  // namespace txai
