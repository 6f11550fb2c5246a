#include "timex/masking.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "timex/common.hpp"

namespace txai {

namespace {
constexpr double kProbEps = 1e-6;
constexpr double kRenormEps = 1e-12;

torch::Tensor seeded_like(const torch::Tensor& ref, std::optional<uint64_t> seed,
                          uint64_t stream, bool gaussian) {
  if (!seed.has_value()) {
    return gaussian ? torch::randn_like(ref) : torch::rand_like(ref);
  }
  auto gen = at::detail::createCPUGenerator(*seed + stream);
  auto opts = torch::TensorOptions().dtype(ref.scalar_type());
  return gaussian ? torch::randn(ref.sizes(), gen, opts)
                  : torch::rand(ref.sizes(), gen, opts);
}
}  // namespace

BaselineStats baseline_stats(const torch::Tensor& x) {
  require(x.dim() == 3, "baseline_stats: x must be (N,T,d)");
  require(x.size(0) >= 2, "baseline_stats: need at least 2 samples");
  torch::NoGradGuard ng;
  auto xf = x.to(torch::kFloat);
  BaselineStats s;
  s.mu = xf.mean(0);
  s.sigma = xf.var(0, /*unbiased=*/false).sqrt().clamp_min(1e-6);
  return s;
}

MaskSample sample_discrete_mask_detail(const torch::Tensor& p, double tau,
                                       std::optional<uint64_t> seed) {
  require(tau > 0.0, "sample_discrete_mask: tau must be positive");
  auto pc = p.clamp(kProbEps, 1.0 - kProbEps);
  auto logits = pc.log() - (1.0 - pc).log();
  // -log(-log(U)) is Gumbel(0,1); the difference of two Gumbels is
  // Logistic(0,1), so the sign of (logits + g1 - g2) is Bernoulli(p)
  // regardless of tau.
  auto u1 = seeded_like(pc, seed, 0, /*gaussian=*/false).clamp(kProbEps, 1.0 - kProbEps);
  auto u2 = seeded_like(pc, seed, 1, /*gaussian=*/false).clamp(kProbEps, 1.0 - kProbEps);
  auto g1 = -(-u1.log()).log();
  auto g2 = -(-u2.log()).log();
  MaskSample s;
  s.soft = torch::sigmoid((logits + g1 - g2) / tau);
  auto hard = (s.soft > 0.5).to(s.soft.scalar_type());
  s.ste = (hard - s.soft).detach() + s.soft;
  return s;
}

torch::Tensor sample_discrete_mask(const torch::Tensor& p, double tau,
                                   bool training, std::optional<uint64_t> seed) {
  require(tau > 0.0, "sample_discrete_mask: tau must be positive");
  if (!training) {
    torch::NoGradGuard ng;
    return (p >= 0.5).to(p.scalar_type());
  }
  return sample_discrete_mask_detail(p, tau, seed).ste;
}

torch::Tensor direct_value_mask(const torch::Tensor& x, const torch::Tensor& m,
                                const BaselineStats& stats,
                                std::optional<uint64_t> seed) {
  require(stats.mu.defined() && stats.sigma.defined(),
          "direct_value_mask: baseline stats are empty");
  require(x.dim() == 2 || x.dim() == 3,
          "direct_value_mask: x must be (T,d) or (B,T,d)");
  auto t = x.size(-2);
  auto d = x.size(-1);
  require(stats.mu.size(0) == t && stats.mu.size(1) == d,
          "direct_value_mask: baseline stats shape does not match x");
  auto noise = seeded_like(x, seed, 0, /*gaussian=*/true);
  auto b = stats.mu.to(x.scalar_type()) + stats.sigma.to(x.scalar_type()) * noise;
  return m * x + (1.0 - m) * b;
}

torch::Tensor apply_attention_mask(const torch::Tensor& weights,
                                   const torch::Tensor& key_mask) {
  require(weights.dim() >= 2, "apply_attention_mask: weights must be (...,Tq,Tk)");
  auto tk = weights.size(-1);
  torch::Tensor m = key_mask;
  if (m.dim() == 1) {
    require(m.size(0) == tk, "apply_attention_mask: mask length != Tk");
  } else if (m.dim() == 2 && weights.dim() == 4) {
    // (B,Tk) against (B,h,Tq,Tk)
    require(m.size(1) == tk, "apply_attention_mask: mask length != Tk");
    m = m.view({m.size(0), 1, 1, tk});
  } else if (m.dim() == 2 && weights.dim() == 3) {
    require(m.size(1) == tk, "apply_attention_mask: mask length != Tk");
    m = m.view({m.size(0), 1, tk});
  } else {
    require(m.dim() == weights.dim() && m.size(-1) == tk,
            "apply_attention_mask: mask not broadcastable to weights");
  }
  auto w = weights * m.to(weights.scalar_type());
  return w / (w.sum(-1, /*keepdim=*/true) + kRenormEps);
}

}  // namespace txai
