#include "timex/explainer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <sstream>

#include "timex/checkpoint.hpp"
#include "timex/common.hpp"

namespace txai {

namespace {

// Fixed stream for the eval-mode baseline fill: one (T,d) noise panel shared
// by every sample, so explanations are reproducible and batch order has no
// effect on any row's output.
constexpr uint64_t kEvalFillSeed = 0xF111ED;
// Distinct sub-streams when a caller pins the training-mode randomness.
constexpr uint64_t kSteStream = 101;
constexpr uint64_t kFillStream = 202;
constexpr uint64_t kValNegSeed = 1234;
// Floor for the attention key mask: an all-zero mask would pool to the zero
// vector, which has no direction for the similarity losses. The floor makes
// such rows fall back to (near-)uniform attention while perturbing kept
// timesteps by well under 1%.
constexpr double kKeyMaskFloor = 1e-4;

torch::Tensor lift_rows(const torch::Tensor& x, const EncoderConfig& c,
                        const char* who) {
  require(x.dim() == 2 || x.dim() == 3,
          std::string(who) + ": input must be (T,d) or (B,T,d)");
  auto xb = x.dim() == 2 ? x.unsqueeze(0) : x;
  require(xb.size(1) == c.t && xb.size(2) == c.d,
          std::string(who) + ": input shape does not match model config");
  return xb;
}

torch::Tensor eval_fill_panel(const BaselineStats& stats, torch::ScalarType dtype) {
  auto gen = at::detail::createCPUGenerator(kEvalFillSeed);
  auto noise = torch::randn(stats.mu.sizes(), gen,
                            torch::TensorOptions().dtype(dtype));
  return stats.mu.to(dtype) + stats.sigma.to(dtype) * noise;
}

std::vector<torch::Tensor> live_tensors(const ExplainerModel& ex) {
  std::vector<torch::Tensor> out;
  for (const auto& mod : {std::static_pointer_cast<torch::nn::Module>(ex.h.ptr()),
                          std::static_pointer_cast<torch::nn::Module>(ex.g_e.ptr()),
                          std::static_pointer_cast<torch::nn::Module>(ex.f_e.ptr())}) {
    for (auto& p : mod->parameters()) out.push_back(p);
    for (auto& b : mod->buffers()) out.push_back(b);
  }
  return out;
}

torch::Tensor l1_mean(const std::vector<torch::Tensor>& params) {
  torch::Tensor total;
  int64_t count = 0;
  for (const auto& p : params) {
    auto term = p.abs().sum();
    total = total.defined() ? total + term : term;
    count += p.numel();
  }
  require(count > 0, "weight decay: no parameters");
  return total / static_cast<double>(count);
}

}  // namespace

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "direct") return MaskMode::kDirect;
  if (s == "attention+direct") return MaskMode::kAttentionDirect;
  throw std::invalid_argument("unknown mask mode '" + s +
                              "' (valid: direct, attention+direct)");
}

std::string to_string(MaskMode m) {
  return m == MaskMode::kDirect ? "direct" : "attention+direct";
}

void ExplainerModel::eval() const { train(false); }

void ExplainerModel::train(bool on) const {
  h.ptr()->train(on);
  g_e.ptr()->train(on);
  f_e.ptr()->train(on);
}

std::vector<torch::Tensor> ExplainerModel::parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& mod : {std::static_pointer_cast<torch::nn::Module>(h.ptr()),
                          std::static_pointer_cast<torch::nn::Module>(g_e.ptr()),
                          std::static_pointer_cast<torch::nn::Module>(f_e.ptr())}) {
    for (auto& p : mod->parameters()) out.push_back(p);
  }
  return out;
}

ExplainerModel make_explainer(const ReferenceModel& ref, MaskMode mode,
                              const LossConfig& loss, const BaselineStats& stats) {
  require(stats.mu.defined() && stats.sigma.defined(),
          "make_explainer: baseline stats are empty");
  require(stats.mu.size(0) == ref.config.t && stats.mu.size(1) == ref.config.d,
          "make_explainer: baseline stats shape does not match model config");
  require(mode == MaskMode::kDirect || ref.config.d == 1,
          "make_explainer: attention+direct masking requires univariate input");
  ExplainerModel ex;
  ex.config = ref.config;
  ex.mask_mode = mode;
  ex.loss = loss;
  ex.stats = BaselineStats{stats.mu.clone(), stats.sigma.clone()};
  ex.h = MaskGenerator(ref.config);
  ex.g_e = TransformerEncoder(ref.config);
  ex.f_e = PredictorHead(ref.config.d_h, ref.config.c);
  // The explanation tower starts as an exact weight copy of the reference
  // model; only these copies are ever updated.
  load_named_tensors(*ex.g_e.ptr(), named_tensors(*ref.g.ptr()));
  load_named_tensors(*ex.f_e.ptr(), named_tensors(*ref.f.ptr()));
  ex.eval();
  return ex;
}

torch::Tensor mask_probs(const ExplainerModel& ex, const torch::Tensor& x) {
  torch::NoGradGuard ng;
  ex.eval();
  auto xb = lift_rows(x, ex.config, "mask_probs");
  auto p = ex.h.ptr()->forward(xb);
  return x.dim() == 2 ? p.squeeze(0) : p;
}

ExplainerForward explainer_forward(const ExplainerModel& ex, const torch::Tensor& x,
                                   bool training, Ablation ablation,
                                   std::optional<uint64_t> seed) {
  auto xb = lift_rows(x, ex.config, "explainer_forward");
  ExplainerForward f;
  f.p = ex.h.ptr()->forward(xb);
  if (training) {
    if (ablation == Ablation::kNoSte) {
      f.m = f.p;
    } else {
      std::optional<uint64_t> s =
          seed.has_value() ? std::optional<uint64_t>(*seed + kSteStream) : std::nullopt;
      f.m = sample_discrete_mask(f.p, ex.loss.tau, /*training=*/true, s);
    }
    std::optional<uint64_t> s2 =
        seed.has_value() ? std::optional<uint64_t>(*seed + kFillStream) : std::nullopt;
    f.x_m = direct_value_mask(xb, f.m, ex.stats, s2);
  } else {
    if (ablation == Ablation::kNoSte) {
      f.m = f.p;
    } else {
      torch::NoGradGuard ng;
      f.m = (f.p >= 0.5).to(f.p.scalar_type());
    }
    auto b = eval_fill_panel(ex.stats, xb.scalar_type());
    f.x_m = f.m * xb + (1.0 - f.m) * b;
  }
  std::optional<torch::Tensor> key_mask;
  if (ex.mask_mode == MaskMode::kAttentionDirect) {
    key_mask = f.m.squeeze(-1).clamp_min(kKeyMaskFloor);  // per-timestep keep weights
  }
  f.z_e = ex.g_e.ptr()->encode(f.x_m, key_mask);
  f.logits_e = ex.f_e.ptr()->forward(f.z_e);
  return f;
}

Explanation explain(const ExplainerModel& ex, const torch::Tensor& x) {
  torch::NoGradGuard ng;
  ex.eval();
  auto f = explainer_forward(ex, x, /*training=*/false, ex.ablation);
  Explanation e;
  if (x.dim() == 2) {
    e.p = f.p.squeeze(0);
    e.m = f.m.squeeze(0);
    e.z_e = f.z_e.squeeze(0);
    e.logits_e = f.logits_e.squeeze(0);
  } else {
    e.p = f.p;
    e.m = f.m;
    e.z_e = f.z_e;
    e.logits_e = f.logits_e;
  }
  return e;
}

torch::Tensor explanation_embeddings(const ExplainerModel& ex, const torch::Tensor& x,
                                     int64_t batch) {
  require(batch > 0, "explanation_embeddings: batch must be positive");
  torch::NoGradGuard ng;
  ex.eval();
  auto xb = lift_rows(x, ex.config, "explanation_embeddings");
  std::vector<torch::Tensor> outs;
  for (int64_t i = 0; i < xb.size(0); i += batch) {
    auto chunk = xb.narrow(0, i, std::min(batch, xb.size(0) - i));
    outs.push_back(explainer_forward(ex, chunk, /*training=*/false, ex.ablation).z_e);
  }
  return torch::cat(outs, 0);
}

torch::Tensor mask_probs_batched(const ExplainerModel& ex, const torch::Tensor& x,
                                 int64_t batch) {
  require(batch > 0, "mask_probs_batched: batch must be positive");
  torch::NoGradGuard ng;
  ex.eval();
  auto xb = lift_rows(x, ex.config, "mask_probs_batched");
  std::vector<torch::Tensor> outs;
  for (int64_t i = 0; i < xb.size(0); i += batch) {
    auto chunk = xb.narrow(0, i, std::min(batch, xb.size(0) - i));
    outs.push_back(ex.h.ptr()->forward(chunk));
  }
  return torch::cat(outs, 0);
}

namespace {

// Training/validation objective for one batch given frozen reference
// outputs. Validation passes eval-mode forwards and a pinned negative seed
// so epoch values are comparable.
LossParts batch_objective(const ExplainerForward& f, const torch::Tensor& z_ref,
                          const torch::Tensor& logits_ref, const ExplainerConfig& cfg,
                          std::optional<uint64_t> neg_seed) {
  torch::Tensor consistency;
  if (cfg.ablation == Ablation::kSimclr) {
    consistency = simclr_ablation_loss(z_ref, f.z_e, cfg.loss.n_neg, neg_seed);
  } else {
    consistency = mbc_loss(z_ref, f.z_e, cfg.loss.distance_normalize);
  }
  auto lc = lc_loss(logits_ref, f.logits_e);
  auto mask = mask_kl_mean(f.p, cfg.loss.r);
  auto con = connectedness_loss(f.p);
  return combine_losses(consistency, lc, mask, con, cfg.loss, cfg.ablation);
}

}  // namespace

ExplainerModel train_explainer(const ReferenceModel& ref, const LabeledDataset& ds,
                               const ExplainerConfig& cfg, ExplainerHistory* history,
                               LandmarkSet* landmarks_out) {
  require(cfg.lr > 0.0, "train_explainer: lr must be positive");
  require(cfg.weight_decay >= 0.0, "train_explainer: weight_decay must be >= 0");
  require(cfg.epochs >= 0, "train_explainer: epochs must be >= 0");
  require(cfg.batch_size > 0, "train_explainer: batch_size must be positive");
  require(ds.X.size(1) == ref.config.t && ds.X.size(2) == ref.config.d,
          "train_explainer: dataset shape does not match model config");

  init_runtime(cfg.seed);
  auto train_idx = ds.index_tensor_of(Split::kTrain);
  auto val_idx = ds.index_tensor_of(Split::kVal);
  require(train_idx.numel() > 0, "train_explainer: empty train split");
  require(val_idx.numel() > 0, "train_explainer: empty val split");

  auto x_train = ds.X.index_select(0, train_idx);
  auto y_train = ds.y.index_select(0, train_idx);
  auto x_val = ds.X.index_select(0, val_idx);
  const int64_t n = x_train.size(0);

  auto stats = baseline_stats(x_train);
  MaskMode mode = cfg.mask_mode.value_or(
      ref.config.d == 1 ? MaskMode::kAttentionDirect : MaskMode::kDirect);
  auto ex = make_explainer(ref, mode, cfg.loss, stats);
  ex.ablation = cfg.ablation;
  ref.eval();

  if (history) *history = ExplainerHistory{};
  if (landmarks_out) {
    *landmarks_out = LandmarkSet{};
    landmarks_out->L = torch::zeros({0, ref.config.d_h});
  }
  if (cfg.epochs == 0) return ex;

  torch::optim::Adam opt(ex.parameters(), torch::optim::AdamOptions(cfg.lr));
  const int64_t val_chunk = 256;

  torch::Tensor lmk;  // leaf (n_L, d_z), defined once the landmark phase starts
  std::unique_ptr<torch::optim::Adam> lmk_opt;

  auto live = live_tensors(ex);
  std::vector<torch::Tensor> best;
  torch::Tensor best_lmk;
  double best_val = std::numeric_limits<double>::infinity();
  int64_t best_epoch = -1;
  int64_t since_best = 0;
  int64_t plateau = 0;
  int64_t drops = 0;
  double lr_now = cfg.lr;

  auto eval_val_loss = [&]() {
    torch::NoGradGuard ng;
    ex.eval();
    double total = 0.0;
    int64_t counted = 0;
    for (int64_t i = 0; i < x_val.size(0); i += val_chunk) {
      auto xb = x_val.narrow(0, i, std::min(val_chunk, x_val.size(0) - i));
      if (cfg.ablation == Ablation::kSimclr && xb.size(0) <= cfg.loss.n_neg) continue;
      auto z_ref = ref.encode(xb);
      auto logits_ref = ref.predict_logits(z_ref);
      auto f = explainer_forward(ex, xb, /*training=*/false, cfg.ablation);
      auto parts = batch_objective(f, z_ref, logits_ref, cfg, kValNegSeed);
      total += parts.total.item<double>() * xb.size(0);
      counted += xb.size(0);
    }
    require(counted > 0, "train_explainer: validation produced no usable batches");
    return total / counted;
  };

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ex.train();
    auto perm = torch::randperm(n, torch::kInt64);
    ExplainerEpochStats st;
    st.lr = lr_now;
    double tot_w = 0.0, lmk_w = 0.0;
    bool lmk_phase = cfg.train_landmarks && cfg.n_landmarks > 0 &&
                     epoch >= cfg.landmark_warmup;

    if (lmk_phase && !lmk.defined()) {
      // Phase start: seed the landmark rows from the current explanation
      // embeddings of the training split, stratified over labels.
      auto z_e_train = explanation_embeddings(ex, x_train);
      auto init = init_landmarks(z_e_train, y_train,
                                 std::min<int64_t>(cfg.n_landmarks, n), cfg.seed);
      lmk = init.L.clone().set_requires_grad(true);
      lmk_opt = std::make_unique<torch::optim::Adam>(
          std::vector<torch::Tensor>{lmk}, torch::optim::AdamOptions(cfg.landmark_lr));
      ex.train();
    }

    for (int64_t i = 0; i < n; i += cfg.batch_size) {
      auto idx = perm.narrow(0, i, std::min(cfg.batch_size, n - i));
      auto xb = x_train.index_select(0, idx);
      if (cfg.ablation == Ablation::kSimclr && xb.size(0) <= cfg.loss.n_neg) continue;

      torch::Tensor z_ref, logits_ref;
      {
        torch::NoGradGuard ng;
        z_ref = ref.encode(xb);
        logits_ref = ref.predict_logits(z_ref);
      }

      auto f = explainer_forward(ex, xb, /*training=*/true, cfg.ablation);
      auto parts = batch_objective(f, z_ref, logits_ref, cfg, std::nullopt);
      auto loss = parts.total;
      if (cfg.weight_decay > 0.0) {
        loss = loss + cfg.weight_decay * l1_mean(ex.parameters());
      }

      double lv = loss.item<double>();
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "train_explainer: non-finite loss at epoch " << epoch
            << " (consistency=" << parts.consistency.item<double>()
            << " lc=" << parts.lc.item<double>()
            << " mask=" << parts.mask.item<double>()
            << " con=" << parts.con.item<double>() << ")";
        throw std::runtime_error(msg.str());
      }

      opt.zero_grad();
      loss.backward();
      opt.step();

      double w = static_cast<double>(xb.size(0));
      st.train_total += lv * w;
      st.consistency += parts.consistency.item<double>() * w;
      st.lc += parts.lc.item<double>() * w;
      st.mask += parts.mask.item<double>() * w;
      st.con += parts.con.item<double>() * w;
      tot_w += w;

      if (lmk_phase) {
        auto lml = landmark_consistency_loss(z_ref, f.z_e.detach(), lmk, cfg.loss,
                                             /*hard=*/true);
        lmk_opt->zero_grad();
        lml.backward();
        lmk_opt->step();
        st.landmark += lml.item<double>() * w;
        lmk_w += w;
      }
    }
    require(tot_w > 0.0, "train_explainer: epoch consumed no batches");
    st.train_total /= tot_w;
    st.consistency /= tot_w;
    st.lc /= tot_w;
    st.mask /= tot_w;
    st.con /= tot_w;
    if (lmk_w > 0.0) st.landmark /= lmk_w;

    st.val_total = eval_val_loss();
    require(std::isfinite(st.val_total), "train_explainer: non-finite validation loss");

    if (st.val_total < best_val) {
      best_val = st.val_total;
      best_epoch = epoch;
      since_best = 0;
      plateau = 0;
      best.clear();
      for (const auto& t : live) best.push_back(t.detach().clone());
      if (lmk.defined()) best_lmk = lmk.detach().clone();
    } else {
      ++since_best;
      ++plateau;
    }

    if (cfg.scheduler && drops < cfg.max_lr_drops && epoch + 1 > cfg.warmup_epochs &&
        plateau >= cfg.scheduler_patience) {
      lr_now *= 0.1;
      for (auto& group : opt.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr_now);
      }
      plateau = 0;
      ++drops;
    }

    if (history) history->epochs.push_back(st);
    if (cfg.verbose) {
      std::fprintf(stderr,
                   "[explainer] epoch %3lld train %.5f val %.5f lmk %.5f lr %.2g\n",
                   static_cast<long long>(epoch), st.train_total, st.val_total,
                   st.landmark, st.lr);
    }
    if (cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience) break;
  }

  if (!best.empty()) {
    torch::NoGradGuard ng;
    for (size_t i = 0; i < live.size(); ++i) live[i].copy_(best[i]);
    if (best_lmk.defined()) lmk = best_lmk;
  }
  if (history) {
    history->best_epoch = best_epoch;
    history->best_val_loss = best_val;
  }
  ex.eval();

  if (landmarks_out && lmk.defined()) {
    torch::NoGradGuard ng;
    landmarks_out->L = lmk.detach().clone();
    auto z_e_train = explanation_embeddings(ex, x_train);
    landmarks_out->occupancy = nearest_landmark_counts(landmarks_out->L, z_e_train);
    landmarks_out->retained.resize(landmarks_out->L.size(0));
    for (int64_t i = 0; i < landmarks_out->L.size(0); ++i)
      landmarks_out->retained[static_cast<size_t>(i)] = i;
    landmarks_out->n_eps = 0;
  }
  return ex;
}

}  // namespace txai
