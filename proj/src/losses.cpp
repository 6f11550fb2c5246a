#include "timex/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "timex/common.hpp"

namespace txai {

namespace {
constexpr double kVarEps = 1e-12;
}

Ablation ablation_from_string(const std::string& tag) {
  if (tag == "full") return Ablation::kFull;
  if (tag == "no_ste") return Ablation::kNoSte;
  if (tag == "mbc_only") return Ablation::kMbcOnly;
  if (tag == "lc_only") return Ablation::kLcOnly;
  if (tag == "simclr") return Ablation::kSimclr;
  fail("unknown ablation tag '" + tag +
       "' (expected full|no_ste|mbc_only|lc_only|simclr)");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoSte: return "no_ste";
    case Ablation::kMbcOnly: return "mbc_only";
    case Ablation::kLcOnly: return "lc_only";
    case Ablation::kSimclr: return "simclr";
  }
  fail("invalid ablation enum value");
}

namespace {
torch::Tensor bernoulli_kl(const torch::Tensor& p, double r) {
  require(r > 0.0 && r < 1.0, "mask KL: r must be in (0,1)");
  auto pd = p.to(torch::kDouble);
  // xlogy treats 0*log(0) as 0, covering p=0 and p=1 exactly.
  return torch::xlogy(pd, pd / r) + torch::xlogy(1.0 - pd, (1.0 - pd) / (1.0 - r));
}
}  // namespace

torch::Tensor mask_kl_loss(const torch::Tensor& p, double r) {
  return bernoulli_kl(p, r).sum();
}

torch::Tensor mask_kl_mean(const torch::Tensor& p, double r) {
  return bernoulli_kl(p, r).mean();
}

torch::Tensor connectedness_loss(const torch::Tensor& p) {
  require(p.dim() == 2 || p.dim() == 3,
          "connectedness: p must be (T,d) or (B,T,d)");
  auto pb = p.dim() == 2 ? p.unsqueeze(0) : p;
  auto t = pb.size(1);
  auto d = pb.size(2);
  require(t >= 2, "connectedness: needs at least 2 timesteps");
  using torch::indexing::Slice;
  auto diffs = (pb.index({Slice(), Slice(1)}) - pb.index({Slice(), Slice(0, t - 1)}))
                   .abs()
                   .sum({1, 2}) /
               static_cast<double>(t * d);
  return diffs.mean();
}

torch::Tensor cosine_similarity_matrix(const torch::Tensor& z) {
  require(z.dim() == 2, "cosine similarity: z must be (N,d_z)");
  auto norms = z.norm(2, -1, /*keepdim=*/true);
  require(norms.min().item<double>() > 0.0,
          "cosine similarity: zero-norm embedding row");
  auto zn = z / norms;
  return torch::matmul(zn, zn.transpose(0, 1));
}

torch::Tensor mbc_loss(const torch::Tensor& z, const torch::Tensor& z_e,
                       bool distance_normalize) {
  require(z.dim() == 2 && z_e.dim() == 2, "mbc: embeddings must be (N,d_z)");
  require(z.size(0) == z_e.size(0), "mbc: embedding counts differ");
  auto d_z = cosine_similarity_matrix(z);
  auto d_ze = cosine_similarity_matrix(z_e);
  auto loss = (d_z - d_ze).pow(2).mean();
  if (distance_normalize) {
    auto var = d_z.var(/*unbiased=*/false).detach().clamp_min(kVarEps);
    loss = loss / var;
  }
  return loss;
}

torch::Tensor js_divergence_matrix(const torch::Tensor& probs) {
  require(probs.dim() == 2, "js divergence: probs must be (N,C)");
  require(probs.size(1) >= 2, "js divergence: needs at least 2 classes");
  auto p = probs.unsqueeze(1);  // (N,1,C)
  auto q = probs.unsqueeze(0);  // (1,N,C)
  auto m = 0.5 * (p + q);
  auto kl_pm = (torch::xlogy(p, p) - torch::xlogy(p, m)).sum(-1);
  auto kl_qm = (torch::xlogy(q, q) - torch::xlogy(q, m)).sum(-1);
  return 0.5 * (kl_pm + kl_qm);
}

torch::Tensor lc_loss(const torch::Tensor& logits_ref, const torch::Tensor& logits_exp) {
  require(logits_ref.sizes() == logits_exp.sizes(), "lc: logit shapes differ");
  require(logits_ref.dim() == 2, "lc: logits must be (N,C)");
  require(logits_ref.size(1) >= 2, "lc: needs at least 2 classes");
  auto js_ref = js_divergence_matrix(torch::softmax(logits_ref, -1));
  auto js_exp = js_divergence_matrix(torch::softmax(logits_exp, -1));
  return (js_ref - js_exp).pow(2).mean();
}

torch::Tensor simclr_ablation_loss(const torch::Tensor& z, const torch::Tensor& z_e,
                                   int64_t n_neg, std::optional<uint64_t> seed) {
  require(z.dim() == 2 && z_e.dim() == 2, "simclr: embeddings must be (N,d_z)");
  require(z.size(0) == z_e.size(0), "simclr: embedding counts differ");
  auto n = z.size(0);
  require(n > 1, "simclr: needs at least 2 samples");
  require(n > n_neg, "simclr: batch must exceed n_neg");
  require(n_neg >= 1, "simclr: n_neg must be positive");

  auto zn = z / z.norm(2, -1, true).clamp_min(kVarEps);
  auto zen = z_e / z_e.norm(2, -1, true).clamp_min(kVarEps);
  auto sim = torch::matmul(zen, zn.transpose(0, 1));  // sim[i][j] = cos(z^E_i, z_j)
  auto pos = sim.diagonal();

  // Sampled negatives j != i, n_neg per anchor.
  auto gen = seed.has_value() ? at::detail::createCPUGenerator(*seed)
                              : at::detail::getDefaultCPUGenerator();
  auto neg_idx = torch::empty({n, n_neg}, torch::kLong);
  for (int64_t i = 0; i < n; ++i) {
    auto perm = torch::randperm(n - 1, gen, torch::kLong);
    auto take = perm.slice(0, 0, n_neg);
    // Shift indices at or above the anchor to skip it.
    neg_idx[i] = take + (take >= i).to(torch::kLong);
  }
  auto neg_sims = sim.gather(1, neg_idx);  // (N, n_neg)
  auto denom = neg_sims.exp().sum(-1);
  return (-(pos - denom.log())).mean();
}

LossParts combine_losses(const torch::Tensor& consistency, const torch::Tensor& lc,
                         const torch::Tensor& mask_mean, const torch::Tensor& con,
                         const LossConfig& cfg, Ablation ablation) {
  require(cfg.r > 0.0 && cfg.r < 1.0, "loss config: r must be in (0,1)");
  require(cfg.lambda_lc >= 0.0 && cfg.lambda_e >= 0.0 && cfg.lambda_con >= 0.0,
          "loss config: weights must be nonnegative");
  LossParts parts;
  parts.consistency = consistency;
  parts.lc = lc;
  parts.mask = mask_mean;
  parts.con = con;
  auto reg = cfg.lambda_e * (mask_mean + cfg.lambda_con * con);
  switch (ablation) {
    case Ablation::kFull:
    case Ablation::kNoSte:
    case Ablation::kSimclr:
      parts.total = consistency + cfg.lambda_lc * lc + reg;
      break;
    case Ablation::kMbcOnly:
      parts.total = consistency + reg;
      break;
    case Ablation::kLcOnly:
      parts.total = cfg.lambda_lc * lc + reg;
      break;
  }
  return parts;
}

}  // namespace txai
