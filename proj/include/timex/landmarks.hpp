#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <vector>

#include "timex/losses.hpp"

namespace txai {

// Learned landmark explanations in the explanation embedding space.
// `retained` holds the landmark's original row ids after filtration;
// occupancy counts are nearest-neighbor frequencies over a dataset.
struct LandmarkSet {
  torch::Tensor L;           // (n_L, d_z)
  torch::Tensor occupancy;   // (n_L,) int64
  std::vector<int64_t> retained;
  int64_t n_eps = 0;
};

// Class-stratified sample of embedding rows: every class contributes at
// least floor(n_L/C) landmarks when it has that many samples; leftover
// quota spills to classes with spare capacity. Rows are exact copies.
LandmarkSet init_landmarks(const torch::Tensor& z_e, const torch::Tensor& labels,
                           int64_t n_l, uint64_t seed);

// Eq-style assimilation: similarity of the stop-gradded embedding to every
// landmark row, softmax sharpened by 1/tau, then either a deterministic
// convex mixture (hard=false) or a straight-through Gumbel one-hot pick
// (hard=true). Gradient flows into L only. z_e: (d_z) or (N,d_z).
torch::Tensor assimilate(const torch::Tensor& z_e, const torch::Tensor& landmarks,
                         double tau, bool hard,
                         std::optional<uint64_t> seed = std::nullopt);

// Behavior-consistency between reference embeddings and assimilated
// explanation embeddings; updates reach L alone (z_e is stop-gradded).
torch::Tensor landmark_consistency_loss(const torch::Tensor& z, const torch::Tensor& z_e,
                                        const torch::Tensor& landmarks,
                                        const LossConfig& cfg, bool hard = true,
                                        std::optional<uint64_t> seed = std::nullopt);

// Nearest-landmark frequencies by cosine similarity (ties to lower index).
torch::Tensor nearest_landmark_counts(const torch::Tensor& landmarks,
                                      const torch::Tensor& z_e);

// Keeps landmarks whose occupancy is >= n_eps; may return an empty set
// (warns on stderr rather than failing).
LandmarkSet filter_landmarks(const torch::Tensor& landmarks,
                             const torch::Tensor& z_e_train, int64_t n_eps);

// Default occupancy threshold: max(2, n_train / (10 * n_l)).
int64_t default_filtration_threshold(int64_t n_train, int64_t n_l);

struct QueryResult {
  std::vector<int64_t> ids;
  std::vector<double> sims;
};

// Top-k most similar landmark rows for one embedding (descending cosine
// similarity, ties to lower index; k beyond the set size truncates).
QueryResult nearest_landmarks(const LandmarkSet& lm, const torch::Tensor& z_e,
                              int64_t k);

// Inverse query: top-k most similar sample embeddings for one landmark row.
QueryResult nearest_samples(const torch::Tensor& z_e_all, const torch::Tensor& landmark,
                            int64_t k);

}  // namespace txai
