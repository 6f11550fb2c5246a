#pragma once

#include <torch/torch.h>

#include <vector>

namespace txai {

// ---------------------------------------------------------------------------
// Classification metrics (macro-averaged, one-vs-rest for the rank metrics)
// ---------------------------------------------------------------------------

struct ClassificationMetrics {
  double f1 = 0;     // macro F1 over all classes
  double auprc = 0;  // macro one-vs-rest average precision
  double auroc = 0;  // macro one-vs-rest ROC area
};

// probs: (N,C) rows on the simplex; y: (N,) int64. Throws when y carries a
// single class (ROC area undefined).
ClassificationMetrics classification_metrics(const torch::Tensor& probs,
                                             const torch::Tensor& y);

// Tie-aware (average-rank) binary ROC area; labels in {0,1} with both
// classes present.
double binary_auroc(const torch::Tensor& scores, const torch::Tensor& labels);

// Average precision with step interpolation over descending unique scores.
double binary_average_precision(const torch::Tensor& scores, const torch::Tensor& labels);

// ---------------------------------------------------------------------------
// Saliency metrics: continuous mask vs. binary ground truth, one sample
// ---------------------------------------------------------------------------

struct AupAur {
  double aup = 0;
  double aur = 0;
};

// Areas under precision/recall as the detection threshold tau sweeps a
// uniform midpoint grid over (0,1); selection is mask >= tau and an empty
// selection counts as precision 0. Throws when Q has no positives or mask
// entries leave [0,1].
AupAur aup_aur(const torch::Tensor& mask, const torch::Tensor& q, int64_t grid = 1000);

// Area under the precision-recall curve with mask entries as scores and Q
// as labels (exact threshold enumeration). Throws when Q has no positives.
double explanation_auprc(const torch::Tensor& mask, const torch::Tensor& q);

// |(mask >= tau) AND Q| / |(mask >= tau) OR Q|; 0 when the union is empty.
double iou_at_threshold(const torch::Tensor& mask, const torch::Tensor& q,
                        double tau = 0.5);

// Dataset-level aggregation: per-sample metrics averaged over the samples
// whose Q has at least one positive entry (null-class samples are skipped).
struct SaliencySummary {
  double auprc = 0;
  double aup = 0;
  double aur = 0;
  double iou = 0;
  int64_t n_scored = 0;
};

SaliencySummary saliency_metrics(const torch::Tensor& masks, const torch::Tensor& q,
                                 int64_t grid = 1000);

// ---------------------------------------------------------------------------
// Cross-validation aggregation
// ---------------------------------------------------------------------------

struct MeanSe {
  double mean = 0;
  double se = 0;  // sample std (ddof=1) / sqrt(n)
};

MeanSe crossval_aggregate(const std::vector<double>& fold_values);

}  // namespace txai
