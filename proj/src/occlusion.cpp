#include "timex/occlusion.hpp"

#include <cmath>

#include "timex/common.hpp"
#include "timex/metrics.hpp"

namespace txai {

namespace {

torch::Tensor lift(const torch::Tensor& t, const char* what) {
  require(t.dim() == 2 || t.dim() == 3, std::string(what) + " must be (T,d) or (B,T,d)");
  auto out = (t.dim() == 2 ? t.unsqueeze(0) : t).to(torch::kFloat32);
  return out.contiguous();
}

}  // namespace

torch::Tensor occlusion_keep_mask(const torch::Tensor& scores, double fraction) {
  require(fraction >= 0.0 && fraction < 1.0, "occlusion: fraction must lie in [0,1)");
  const bool single = scores.dim() == 2;
  auto s = lift(scores, "occlusion: scores");
  require(s.isfinite().all().item<bool>(), "occlusion: scores must be finite");

  const int64_t n = s.size(1) * s.size(2);
  auto flat = s.reshape({s.size(0), n});
  // The cutoff is each sample's fraction-quantile; >= keeps ties, so the
  // per-sample maximum always survives.
  int64_t k = std::min<int64_t>(static_cast<int64_t>(fraction * static_cast<double>(n)), n - 1);
  auto cutoff = std::get<0>(flat.sort(/*dim=*/1)).select(1, k).unsqueeze(1);
  auto keep = (flat >= cutoff).to(torch::kFloat32).reshape(s.sizes());
  return single ? keep.squeeze(0) : keep;
}

torch::Tensor occluded_probs(const ReferenceModel& ref, const torch::Tensor& x,
                             const torch::Tensor& scores, double fraction,
                             const BaselineStats& stats, MaskMode mode,
                             uint64_t seed, int64_t batch) {
  require(batch > 0, "occlusion: batch must be positive");
  auto xb = lift(x, "occlusion: x");
  require(xb.size(1) == ref.config.t && xb.size(2) == ref.config.d,
          "occlusion: input shape disagrees with the model config");
  require(mode != MaskMode::kAttentionDirect || ref.config.d == 1,
          "occlusion: attention masking applies to univariate inputs only");

  ref.eval();
  torch::NoGradGuard guard;

  // fraction 0 keeps everything: evaluate the raw inputs so the identity is
  // exact rather than a masked no-op.
  if (fraction == 0.0) {
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < xb.size(0); i += batch) {
      out.push_back(torch::softmax(ref.logits(xb.slice(0, i, std::min(i + batch, xb.size(0)))), 1));
    }
    return torch::cat(out, 0);
  }

  auto sc = lift(scores, "occlusion: scores");
  require(sc.sizes() == xb.sizes(), "occlusion: scores must match the input shape");
  auto keep = occlusion_keep_mask(sc, fraction);

  std::vector<torch::Tensor> out;
  int64_t chunk = 0;
  for (int64_t i = 0; i < xb.size(0); i += batch, ++chunk) {
    const int64_t hi = std::min(i + batch, xb.size(0));
    auto xc = xb.slice(0, i, hi);
    auto mc = keep.slice(0, i, hi);
    auto x_m = direct_value_mask(xc, mc, stats, seed + 7919 * static_cast<uint64_t>(chunk));
    torch::Tensor logits;
    if (mode == MaskMode::kAttentionDirect) {
      logits = ref.logits(x_m, mc.squeeze(-1));
    } else {
      logits = ref.logits(x_m);
    }
    out.push_back(torch::softmax(logits, 1));
  }
  return torch::cat(out, 0);
}

double occlusion_auroc(const ReferenceModel& ref, const torch::Tensor& x,
                       const torch::Tensor& y, const torch::Tensor& scores,
                       double fraction, const BaselineStats& stats,
                       MaskMode mode, uint64_t seed, int64_t batch) {
  auto probs = occluded_probs(ref, x, scores, fraction, stats, mode, seed, batch);
  return classification_metrics(probs, y).auroc;
}

OcclusionCurve occlusion_curve(const ReferenceModel& ref,
                               const torch::Tensor& x, const torch::Tensor& y,
                               const torch::Tensor& scores,
                               const std::vector<double>& fractions,
                               const BaselineStats& stats, MaskMode mode,
                               uint64_t seed, int64_t batch) {
  require(!fractions.empty(), "occlusion: fraction grid must be non-empty");
  OcclusionCurve curve;
  uint64_t i = 0;
  for (double f : fractions) {
    curve.fractions.push_back(f);
    curve.auroc.push_back(
        occlusion_auroc(ref, x, y, scores, f, stats, mode, seed + 131 * i++, batch));
  }
  return curve;
}

std::vector<double> default_occlusion_fractions() { return {0.5, 0.6, 0.75, 0.9}; }

}  // namespace txai
