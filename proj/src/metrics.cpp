#include "timex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "timex/common.hpp"

namespace txai {

namespace {

std::vector<double> to_vec(const torch::Tensor& t) {
  auto flat = t.reshape({-1}).to(torch::kFloat64).contiguous();
  const double* p = flat.data_ptr<double>();
  return std::vector<double>(p, p + flat.numel());
}

}  // namespace

double binary_auroc(const torch::Tensor& scores, const torch::Tensor& labels) {
  auto s = to_vec(scores);
  auto l = to_vec(labels);
  require(s.size() == l.size() && !s.empty(), "binary_auroc: shape mismatch");
  const int64_t n = static_cast<int64_t>(s.size());
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return s[a] < s[b]; });
  // Average ranks across ties, then the Mann-Whitney identity.
  std::vector<double> rank(n);
  int64_t i = 0;
  while (i < n) {
    int64_t j = i;
    while (j + 1 < n && s[order[j + 1]] == s[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (int64_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double n_pos = 0, rank_sum = 0;
  for (int64_t k = 0; k < n; ++k) {
    if (l[k] != 0) {
      n_pos += 1;
      rank_sum += rank[k];
    }
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  require(n_pos > 0 && n_neg > 0, "binary_auroc: needs both classes present");
  return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

double binary_average_precision(const torch::Tensor& scores, const torch::Tensor& labels) {
  auto s = to_vec(scores);
  auto l = to_vec(labels);
  require(s.size() == l.size() && !s.empty(), "binary_average_precision: shape mismatch");
  const int64_t n = static_cast<int64_t>(s.size());
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return s[a] > s[b]; });
  double n_pos = 0;
  for (double v : l) n_pos += v != 0 ? 1 : 0;
  require(n_pos > 0, "binary_average_precision: no positives");
  double ap = 0, tp = 0, sel = 0, prev_recall = 0;
  int64_t i = 0;
  while (i < n) {
    int64_t j = i;  // walk one tie group at a time
    while (j + 1 < n && s[order[j + 1]] == s[order[i]]) ++j;
    for (int64_t k = i; k <= j; ++k) {
      sel += 1;
      tp += l[order[k]] != 0 ? 1 : 0;
    }
    const double recall = tp / n_pos;
    ap += (recall - prev_recall) * (tp / sel);
    prev_recall = recall;
    i = j + 1;
  }
  return ap;
}

ClassificationMetrics classification_metrics(const torch::Tensor& probs,
                                             const torch::Tensor& y) {
  require(probs.dim() == 2, "classification_metrics: probs must be (N,C)");
  require(y.dim() == 1 && y.size(0) == probs.size(0),
          "classification_metrics: y/probs size mismatch");
  const int64_t n = probs.size(0), c = probs.size(1);
  require(n > 0, "classification_metrics: empty split");
  auto distinct = std::get<0>(torch::unique_consecutive(std::get<0>(torch::sort(y))));
  require(distinct.numel() >= 2,
          "classification_metrics: split carries a single class; ROC area undefined");

  auto preds = probs.argmax(1);
  auto ya = y.accessor<int64_t, 1>();
  auto pa = preds.accessor<int64_t, 1>();

  ClassificationMetrics out;
  double f1_sum = 0;
  for (int64_t cls = 0; cls < c; ++cls) {
    double tp = 0, fp = 0, fn = 0;
    for (int64_t i = 0; i < n; ++i) {
      const bool is_true = ya[i] == cls;
      const bool is_pred = pa[i] == cls;
      tp += (is_true && is_pred) ? 1 : 0;
      fp += (!is_true && is_pred) ? 1 : 0;
      fn += (is_true && !is_pred) ? 1 : 0;
    }
    const double denom = 2 * tp + fp + fn;
    f1_sum += denom > 0 ? 2 * tp / denom : 0.0;
  }
  out.f1 = f1_sum / static_cast<double>(c);

  double auroc_sum = 0, ap_sum = 0;
  int64_t rank_classes = 0;
  for (int64_t cls = 0; cls < c; ++cls) {
    auto bin = (y == cls).to(torch::kFloat64);
    const double pos = bin.sum().item<double>();
    if (pos == 0 || pos == static_cast<double>(n)) continue;  // degenerate column
    auto col = probs.select(1, cls);
    auroc_sum += binary_auroc(col, bin);
    ap_sum += binary_average_precision(col, bin);
    ++rank_classes;
  }
  require(rank_classes > 0, "classification_metrics: no scoreable class");
  out.auroc = auroc_sum / static_cast<double>(rank_classes);
  out.auprc = ap_sum / static_cast<double>(rank_classes);
  return out;
}

AupAur aup_aur(const torch::Tensor& mask, const torch::Tensor& q, int64_t grid) {
  require(grid >= 2, "aup_aur: grid too small");
  auto m = to_vec(mask);
  auto t = to_vec(q);
  require(m.size() == t.size() && !m.empty(), "aup_aur: shape mismatch");
  double n_pos = 0;
  for (double v : t) n_pos += v != 0 ? 1 : 0;
  require(n_pos > 0, "aup_aur: ground truth has no positives");
  for (double v : m) require(v >= 0.0 && v <= 1.0, "aup_aur: mask entry outside [0,1]");

  // Sort features by descending mask value; prefix positive counts let each
  // threshold be answered by binary search.
  const int64_t n = static_cast<int64_t>(m.size());
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return m[a] > m[b]; });
  std::vector<double> sorted(n), prefix_pos(n + 1, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    sorted[i] = m[order[i]];
    prefix_pos[i + 1] = prefix_pos[i] + (t[order[i]] != 0 ? 1 : 0);
  }
  double sum_p = 0, sum_r = 0;
  for (int64_t g = 0; g < grid; ++g) {
    const double tau = (static_cast<double>(g) + 0.5) / static_cast<double>(grid);
    // count of entries with value >= tau in the descending array
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), tau,
                                     [](double v, double tau_) { return v >= tau_; });
    const int64_t sel = it - sorted.begin();
    const double tp = prefix_pos[sel];
    sum_p += sel > 0 ? tp / static_cast<double>(sel) : 0.0;
    sum_r += tp / n_pos;
  }
  return {sum_p / static_cast<double>(grid), sum_r / static_cast<double>(grid)};
}

double explanation_auprc(const torch::Tensor& mask, const torch::Tensor& q) {
  auto t = q.reshape({-1});
  require(t.sum().item<double>() > 0, "explanation_auprc: ground truth has no positives");
  return binary_average_precision(mask.reshape({-1}), t);
}

double iou_at_threshold(const torch::Tensor& mask, const torch::Tensor& q, double tau) {
  auto m = to_vec(mask);
  auto t = to_vec(q);
  require(m.size() == t.size() && !m.empty(), "iou_at_threshold: shape mismatch");
  double inter = 0, uni = 0;
  for (size_t i = 0; i < m.size(); ++i) {
    const bool sel = m[i] >= tau;
    const bool pos = t[i] != 0;
    inter += (sel && pos) ? 1 : 0;
    uni += (sel || pos) ? 1 : 0;
  }
  return uni > 0 ? inter / uni : 0.0;
}

SaliencySummary saliency_metrics(const torch::Tensor& masks, const torch::Tensor& q,
                                 int64_t grid) {
  require(masks.sizes() == q.sizes() && masks.dim() == 3,
          "saliency_metrics: masks and Q must both be (N,T,d)");
  SaliencySummary out;
  const int64_t n = masks.size(0);
  for (int64_t i = 0; i < n; ++i) {
    if (q[i].sum().item<double>() == 0) continue;  // nothing to detect
    auto pr = aup_aur(masks[i], q[i], grid);
    out.aup += pr.aup;
    out.aur += pr.aur;
    out.auprc += explanation_auprc(masks[i], q[i]);
    out.iou += iou_at_threshold(masks[i], q[i]);
    ++out.n_scored;
  }
  require(out.n_scored > 0, "saliency_metrics: no sample carries ground truth");
  const double k = static_cast<double>(out.n_scored);
  out.auprc /= k;
  out.aup /= k;
  out.aur /= k;
  out.iou /= k;
  return out;
}

MeanSe crossval_aggregate(const std::vector<double>& fold_values) {
  require(fold_values.size() >= 2, "crossval_aggregate: needs at least 2 folds");
  const double n = static_cast<double>(fold_values.size());
  double mean = 0;
  for (double v : fold_values) mean += v;
  mean /= n;
  double ss = 0;
  for (double v : fold_values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  return {mean, sd / std::sqrt(n)};
}

}  // namespace txai
