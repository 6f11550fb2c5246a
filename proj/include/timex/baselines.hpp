#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "timex/model.hpp"

namespace txai {

// Reference explainer: i.i.d. uniform [0,1] attribution scores drawn from a
// local generator, so a fixed seed reproduces the draw regardless of the
// global RNG state.
torch::Tensor random_explainer(torch::IntArrayRef shape, uint64_t seed);

// Gradient saliency of the reference model: |d max-logit / d x| per input
// cell, min-max normalized per sample into [0,1]. Accepts (T,d) or (B,T,d)
// and returns scores of the same shape, detached.
torch::Tensor gradient_saliency(const ReferenceModel& ref,
                                const torch::Tensor& x);

}  // namespace txai
