#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>

#include "timex/dataset.hpp"
#include "timex/rng.hpp"

namespace txai {

enum class SyntheticKind { kFreqShapes, kSeqCombUV, kSeqCombMV, kLowVar };

SyntheticKind synthetic_kind_from_string(const std::string& s);
std::string to_string(SyntheticKind kind);

struct SyntheticConfig {
  SyntheticKind kind = SyntheticKind::kFreqShapes;
  int64_t n = 6100;
  uint64_t seed = 0;
  double noise_scale = 1.0;  // std of the background process
  SplitSpec split;           // default 5000/100/1000
  bool do_split = true;
};

// NARMA(order) background noise, z-scored per sensor so the series std is
// exactly the configured scale. Per-sensor independent streams; pure in
// (T, d, seed, order).
torch::Tensor narma_base(int64_t t, int64_t d, uint64_t seed, int64_t order = 10,
                         double noise_scale = 1.0);

// Same process, driven by a caller-owned stream (one sensor).
torch::Tensor narma_sequence(int64_t t, Rng& rng, int64_t order = 10,
                             double noise_scale = 1.0);

// Generates one of the four synthetic benchmarks with ground-truth saliency
// Q, class-balanced labels, and (by default) a stratified 5000/100/1000
// split. Pure in the config.
LabeledDataset generate_synthetic(const SyntheticConfig& config);

// Convenience overload matching the kind/n/seed calling convention.
LabeledDataset generate_synthetic(SyntheticKind kind, int64_t n, uint64_t seed);

// Canonical (T, d, C) for each benchmark.
void synthetic_shape(SyntheticKind kind, int64_t* t, int64_t* d, int64_t* c);

}  // namespace txai
