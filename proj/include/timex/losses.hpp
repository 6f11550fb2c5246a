#pragma once

#include <torch/torch.h>

#include <string>

namespace txai {

enum class Ablation { kFull, kNoSte, kMbcOnly, kLcOnly, kSimclr };

Ablation ablation_from_string(const std::string& tag);
std::string to_string(Ablation a);

struct LossConfig {
  double r = 0.5;            // target mask-keep rate
  double lambda_lc = 1.0;    // label-consistency weight
  double lambda_e = 2.0;     // explanation (mask) regularizer weight
  double lambda_con = 2.0;   // connectedness weight inside the regularizer
  double tau = 1.0;          // Gumbel-Softmax temperature
  bool distance_normalize = false;
  int64_t n_neg = 32;        // contrastive negatives (SimCLR ablation)
};

// KL(Bern(p) || Bern(r)) summed over all entries (0*log0 = 0).
torch::Tensor mask_kl_loss(const torch::Tensor& p, double r);
// Per-entry mean of the same divergence; the form used in the training
// objective so its scale is independent of T*d and batch size.
torch::Tensor mask_kl_mean(const torch::Tensor& p, double r);

// Mean absolute difference of temporally adjacent mask probabilities,
// (1/(T*d)) sum_k sum_t |p[t,k]-p[t+1,k]|; batched input averages samples.
torch::Tensor connectedness_loss(const torch::Tensor& p);

// Pairwise cosine similarities (N,N); rejects zero-norm rows.
torch::Tensor cosine_similarity_matrix(const torch::Tensor& z);

// Mean squared difference of the two embeddings' pairwise cosine
// similarities over all N^2 ordered pairs; optionally divided by the
// variance of the reference pair similarities.
torch::Tensor mbc_loss(const torch::Tensor& z, const torch::Tensor& z_e,
                       bool distance_normalize = false);

// Pairwise Jensen-Shannon divergences (natural log) between rows of a
// probability matrix (N,C) -> (N,N).
torch::Tensor js_divergence_matrix(const torch::Tensor& probs);

// Mean squared difference between the two predictors' pairwise JS
// divergences, computed on softmax(logits), over all N^2 ordered pairs.
torch::Tensor lc_loss(const torch::Tensor& logits_ref, const torch::Tensor& logits_exp);

// Contrastive alternative to the similarity matching: pulls z^E_i toward
// z_i against n_neg sampled negatives z_j (j != i). A seed pins the
// negative sampling.
torch::Tensor simclr_ablation_loss(const torch::Tensor& z, const torch::Tensor& z_e,
                                   int64_t n_neg = 32,
                                   std::optional<uint64_t> seed = std::nullopt);

// Weighted combination of precomputed components. `consistency` is the
// embedding-space term (MBC, or the contrastive loss under the SimCLR
// ablation); ablation modes zero out the terms they drop.
struct LossParts {
  torch::Tensor consistency;
  torch::Tensor lc;
  torch::Tensor mask;
  torch::Tensor con;
  torch::Tensor total;
};

LossParts combine_losses(const torch::Tensor& consistency, const torch::Tensor& lc,
                         const torch::Tensor& mask_mean, const torch::Tensor& con,
                         const LossConfig& cfg, Ablation ablation);

}  // namespace txai
