#include "timex/baselines.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "timex/common.hpp"

namespace txai {

torch::Tensor random_explainer(torch::IntArrayRef shape, uint64_t seed) {
  require(!shape.empty(), "random_explainer: shape must be non-empty");
  for (int64_t s : shape) {
    require(s > 0, "random_explainer: shape entries must be positive");
  }
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::rand(shape, gen, torch::kFloat32);
}

torch::Tensor gradient_saliency(const ReferenceModel& ref,
                                const torch::Tensor& x) {
  require(x.dim() == 2 || x.dim() == 3,
          "gradient_saliency: input must be (T,d) or (B,T,d)");
  const bool single = x.dim() == 2;
  auto xb = (single ? x.unsqueeze(0) : x).to(torch::kFloat32).detach();
  require(xb.size(1) == ref.config.t && xb.size(2) == ref.config.d,
          "gradient_saliency: input shape disagrees with the model config");

  ref.eval();
  xb.set_requires_grad(true);
  // The saliency target is the winning class's logit; summing the per-sample
  // maxima gives each sample its own gradient in one backward pass.
  auto logits = ref.logits(xb);
  auto top = std::get<0>(logits.max(/*dim=*/1));
  auto grad = torch::autograd::grad({top.sum()}, {xb})[0].abs();

  auto flat = grad.reshape({grad.size(0), -1});
  auto lo = std::get<0>(flat.min(1)).reshape({-1, 1, 1});
  auto hi = std::get<0>(flat.max(1)).reshape({-1, 1, 1});
  // Constant-gradient samples normalize to all zeros rather than dividing
  // by zero.
  auto scores = (grad - lo) / (hi - lo).clamp_min(1e-12);
  scores = scores.detach();
  return single ? scores.squeeze(0) : scores;
}

}  // namespace txai
