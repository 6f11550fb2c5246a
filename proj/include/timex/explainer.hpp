#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "timex/dataset.hpp"
#include "timex/landmarks.hpp"
#include "timex/losses.hpp"
#include "timex/masking.hpp"
#include "timex/model.hpp"

namespace txai {

// How masked-out cells are hidden from the explanation encoder. Univariate
// inputs can additionally drop masked timesteps from attention; multivariate
// masks are per-sensor, so only the value substitution applies.
enum class MaskMode { kDirect, kAttentionDirect };

MaskMode mask_mode_from_string(const std::string& s);
std::string to_string(MaskMode m);

struct ExplainerConfig {
  LossConfig loss;
  Ablation ablation = Ablation::kFull;
  std::optional<MaskMode> mask_mode;  // default: attention+direct iff d == 1
  double lr = 1e-3;
  double weight_decay = 1e-3;  // mean-|w| penalty coefficient
  int64_t epochs = 50;
  int64_t batch_size = 64;
  bool scheduler = false;
  int64_t warmup_epochs = 20;
  int64_t scheduler_patience = 10;
  int64_t max_lr_drops = 2;
  int64_t early_stop_patience = 0;  // 0 disables
  uint64_t seed = 0;
  // Landmark phase: joins after `landmark_warmup` epochs, updating only L.
  bool train_landmarks = true;
  int64_t n_landmarks = 50;
  int64_t landmark_warmup = 10;
  double landmark_lr = 1e-3;
  bool verbose = false;
};

// The trained surrogate: mask generator H^E, explanation encoder G^E
// (initialized as a weight copy of G), predictor F^E, and the training-split
// baseline statistics used to fill masked cells.
struct ExplainerModel {
  EncoderConfig config;
  MaskMode mask_mode = MaskMode::kDirect;
  Ablation ablation = Ablation::kFull;  // no-STE keeps soft masks at inference
  LossConfig loss;
  MaskGenerator h{nullptr};
  TransformerEncoder g_e{nullptr};
  PredictorHead f_e{nullptr};
  BaselineStats stats;

  void eval() const;
  void train(bool on = true) const;
  std::vector<torch::Tensor> parameters() const;
};

ExplainerModel make_explainer(const ReferenceModel& ref, MaskMode mode,
                              const LossConfig& loss, const BaselineStats& stats);

// Mask probabilities for x ((T,d) or (B,T,d)); eval-mode deterministic.
torch::Tensor mask_probs(const ExplainerModel& ex, const torch::Tensor& x);

// One full surrogate pass. In training mode the mask is a straight-through
// Bernoulli sample (or the soft p itself under the no-STE ablation); in eval
// mode it is the 0.5 threshold and the baseline fill uses a fixed noise
// pattern so repeat calls and batch-vs-loop calls agree.
struct ExplainerForward {
  torch::Tensor p;
  torch::Tensor m;
  torch::Tensor x_m;
  torch::Tensor z_e;
  torch::Tensor logits_e;
};
ExplainerForward explainer_forward(const ExplainerModel& ex, const torch::Tensor& x,
                                   bool training, Ablation ablation,
                                   std::optional<uint64_t> seed = std::nullopt);

// Inference product for one sample or batch: the explanation p, its binary
// mask at threshold 0.5, the explanation embedding, and surrogate logits.
struct Explanation {
  torch::Tensor p;
  torch::Tensor m;
  torch::Tensor z_e;
  torch::Tensor logits_e;
};
Explanation explain(const ExplainerModel& ex, const torch::Tensor& x);

struct ExplainerEpochStats {
  double train_total = 0.0;
  double val_total = 0.0;
  double consistency = 0.0;
  double lc = 0.0;
  double mask = 0.0;
  double con = 0.0;
  double landmark = 0.0;
  double lr = 0.0;
};

struct ExplainerHistory {
  std::vector<ExplainerEpochStats> epochs;
  int64_t best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

// Trains the surrogate against the frozen reference model; returns the
// best-validation checkpoint. The reference weights are never touched.
// When landmark training is enabled, the landmark set (initialized from
// train-split explanation embeddings after warm-up) is returned through
// `landmarks_out`.
ExplainerModel train_explainer(const ReferenceModel& ref, const LabeledDataset& ds,
                               const ExplainerConfig& cfg,
                               ExplainerHistory* history = nullptr,
                               LandmarkSet* landmarks_out = nullptr);

// Explanation embeddings for all rows of x, evaluated in chunks (eval mode).
torch::Tensor explanation_embeddings(const ExplainerModel& ex, const torch::Tensor& x,
                                     int64_t batch = 256);

// Mask probabilities for all rows of x, evaluated in chunks (eval mode).
torch::Tensor mask_probs_batched(const ExplainerModel& ex, const torch::Tensor& x,
                                 int64_t batch = 256);

}  // namespace txai
