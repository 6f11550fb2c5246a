#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <limits>
#include <vector>

#include "timex/dataset.hpp"
#include "timex/metrics.hpp"
#include "timex/model.hpp"

namespace txai {

struct TrainConfig {
  double lr = 1e-3;
  // Coefficient of the mean-|w| sparsity penalty added to the loss.
  double weight_decay = 0.0;
  int64_t epochs = 100;
  int64_t batch_size = 64;
  // Plateau schedule: armed after warmup_epochs, drops lr by 10x when the
  // best validation loss has not improved for scheduler_patience epochs,
  // at most max_lr_drops times.
  bool scheduler = false;
  int64_t warmup_epochs = 20;
  int64_t scheduler_patience = 10;
  int64_t max_lr_drops = 2;
  // 0 disables early stopping.
  int64_t early_stop_patience = 0;
  uint64_t seed = 0;
  bool verbose = false;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int64_t best_epoch = -1;  // 0-based; -1 when no epoch ran
  double best_val_loss = std::numeric_limits<double>::infinity();
};

// Trains the reference classifier with cross-entropy plus the sparsity
// penalty, tracking the best validation loss and restoring that snapshot.
// With epochs == 0 the freshly initialized model is returned as-is.
ReferenceModel train_predictor(const LabeledDataset& ds, const EncoderConfig& mc,
                               const TrainConfig& tc, TrainHistory* history = nullptr);

// Softmax probabilities for all rows of x, evaluated in chunks.
torch::Tensor predict_probs_batched(const ReferenceModel& m, const torch::Tensor& x,
                                    int64_t batch = 256);

ClassificationMetrics evaluate_predictor(const ReferenceModel& m,
                                         const LabeledDataset& ds, Split split,
                                         int64_t batch = 256);

}  // namespace txai
