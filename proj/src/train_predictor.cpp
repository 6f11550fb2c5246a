#include "timex/train_predictor.hpp"

#include <cmath>
#include <cstdio>

#include "timex/common.hpp"

namespace txai {

namespace {

torch::Tensor l1_penalty_term(const std::vector<torch::Tensor>& params) {
  torch::Tensor total;
  int64_t count = 0;
  for (const auto& p : params) {
    auto s = p.abs().sum();
    total = total.defined() ? total + s : s;
    count += p.numel();
  }
  require(count > 0, "sparsity penalty: model has no parameters");
  return total / static_cast<double>(count);
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

}  // namespace

ReferenceModel train_predictor(const LabeledDataset& ds, const EncoderConfig& mc,
                               const TrainConfig& tc, TrainHistory* history) {
  require(tc.epochs >= 0, "train_predictor: epochs must be >= 0");
  require(tc.batch_size > 0, "train_predictor: batch_size must be positive");
  require(tc.lr > 0.0, "train_predictor: lr must be positive");
  require(ds.meta.t == mc.t && ds.meta.d == mc.d && ds.meta.c == mc.c,
          "train_predictor: model config does not match dataset shape");

  init_runtime(tc.seed);
  auto model = make_reference_model(mc);
  if (history != nullptr) *history = TrainHistory{};
  if (tc.epochs == 0) {
    model.eval();
    return model;
  }

  auto train_idx = ds.index_tensor_of(Split::kTrain);
  auto val_idx = ds.index_tensor_of(Split::kVal);
  require(train_idx.numel() > 0, "train_predictor: empty train split");
  require(val_idx.numel() > 0, "train_predictor: empty validation split");

  const auto& x = ds.X;
  const auto& y = ds.y;
  auto x_tr = x.index_select(0, train_idx);
  auto y_tr = y.index_select(0, train_idx);
  auto x_va = x.index_select(0, val_idx);
  auto y_va = y.index_select(0, val_idx);
  int64_t n_tr = x_tr.size(0);
  int64_t n_va = x_va.size(0);

  auto params = model.parameters();
  torch::optim::Adam opt(params, torch::optim::AdamOptions(tc.lr));

  double lr = tc.lr;
  int64_t plateau = 0;
  int64_t since_best = 0;
  int64_t drops = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int64_t best_epoch = -1;
  std::vector<torch::Tensor> best_state;
  auto snapshot = [&]() {
    best_state.clear();
    torch::NoGradGuard ng;
    for (auto& nt : model.g->named_parameters()) best_state.push_back(nt.value().clone());
    for (auto& nt : model.g->named_buffers()) best_state.push_back(nt.value().clone());
    for (auto& nt : model.f->named_parameters()) best_state.push_back(nt.value().clone());
    for (auto& nt : model.f->named_buffers()) best_state.push_back(nt.value().clone());
  };
  auto restore = [&]() {
    torch::NoGradGuard ng;
    size_t i = 0;
    for (auto& nt : model.g->named_parameters()) nt.value().copy_(best_state[i++]);
    for (auto& nt : model.g->named_buffers()) nt.value().copy_(best_state[i++]);
    for (auto& nt : model.f->named_parameters()) nt.value().copy_(best_state[i++]);
    for (auto& nt : model.f->named_buffers()) nt.value().copy_(best_state[i++]);
  };

  for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    model.train(true);
    auto perm = torch::randperm(n_tr, torch::kLong);
    double loss_sum = 0.0;
    int64_t seen = 0;
    for (int64_t start = 0; start < n_tr; start += tc.batch_size) {
      auto count = std::min(tc.batch_size, n_tr - start);
      auto idx = perm.slice(0, start, start + count);
      auto xb = x_tr.index_select(0, idx);
      auto yb = y_tr.index_select(0, idx);
      opt.zero_grad();
      auto logits = model.logits(xb);
      auto loss = torch::nn::functional::cross_entropy(logits, yb);
      if (tc.weight_decay > 0.0) loss = loss + tc.weight_decay * l1_penalty_term(params);
      loss.backward();
      opt.step();
      auto v = loss.item<double>();
      require(std::isfinite(v), "train_predictor: non-finite training loss at epoch " +
                                    std::to_string(epoch));
      loss_sum += v * static_cast<double>(count);
      seen += count;
    }
    double train_loss = loss_sum / static_cast<double>(seen);

    model.eval();
    double val_sum = 0.0;
    {
      torch::NoGradGuard ng;
      for (int64_t start = 0; start < n_va; start += 256) {
        auto count = std::min<int64_t>(256, n_va - start);
        auto logits = model.logits(x_va.slice(0, start, start + count));
        auto loss = torch::nn::functional::cross_entropy(
            logits, y_va.slice(0, start, start + count),
            torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kSum));
        val_sum += loss.item<double>();
      }
    }
    double val_loss = val_sum / static_cast<double>(n_va);
    require(std::isfinite(val_loss),
            "train_predictor: non-finite validation loss at epoch " + std::to_string(epoch));

    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch;
      plateau = 0;
      since_best = 0;
      snapshot();
    } else {
      ++plateau;
      ++since_best;
    }

    if (tc.scheduler && epoch + 1 > tc.warmup_epochs && plateau >= tc.scheduler_patience &&
        drops < tc.max_lr_drops) {
      lr *= 0.1;
      set_lr(opt, lr);
      ++drops;
      plateau = 0;
    }

    if (history != nullptr) history->epochs.push_back({train_loss, val_loss, lr});
    if (tc.verbose) {
      std::fprintf(stderr, "[predictor] epoch %ld train %.4f val %.4f lr %.2e\n",
                   static_cast<long>(epoch), train_loss, val_loss, lr);
    }

    if (tc.early_stop_patience > 0 && since_best >= tc.early_stop_patience) break;
  }

  if (!best_state.empty()) restore();
  if (history != nullptr) {
    history->best_epoch = best_epoch;
    history->best_val_loss = best_val;
  }
  model.eval();
  return model;
}

torch::Tensor predict_probs_batched(const ReferenceModel& m, const torch::Tensor& x,
                                    int64_t batch) {
  require(batch > 0, "predict_probs_batched: batch must be positive");
  m.eval();
  torch::NoGradGuard ng;
  std::vector<torch::Tensor> chunks;
  for (int64_t start = 0; start < x.size(0); start += batch) {
    auto count = std::min(batch, x.size(0) - start);
    chunks.push_back(m.probs(x.slice(0, start, start + count)));
  }
  require(!chunks.empty(), "predict_probs_batched: empty input");
  return torch::cat(chunks, 0);
}

ClassificationMetrics evaluate_predictor(const ReferenceModel& m,
                                         const LabeledDataset& ds, Split split,
                                         int64_t batch) {
  auto idx = ds.index_tensor_of(split);
  require(idx.numel() > 0, "evaluate_predictor: requested split is empty");
  auto x = ds.X.index_select(0, idx);
  auto y = ds.y.index_select(0, idx);
  auto probs = predict_probs_batched(m, x, batch);
  return classification_metrics(probs, y);
}

}  // namespace txai
