#include "timex/model.hpp"

#include <ATen/Context.h>

#include <cmath>
#include <limits>

#include "timex/common.hpp"

namespace txai {

namespace {

constexpr double kPoolEps = 1e-12;

void check_encoder_config(const EncoderConfig& c) {
  require(c.t > 0 && c.d > 0 && c.c > 0, "model config: t, d, c must be positive");
  require(c.d_h > 0 && c.num_layers > 0, "model config: d_h and num_layers must be positive");
  require(c.n_heads > 0 && c.d_h % c.n_heads == 0,
          "model config: n_heads must divide d_h");
  require(c.dropout >= 0.0 && c.dropout < 1.0, "model config: dropout must be in [0,1)");
}

void check_input(const torch::Tensor& x, const EncoderConfig& c) {
  require(x.dim() == 3, "model input must be (B,T,d)");
  require(x.size(1) == c.t && x.size(2) == c.d,
          "model input shape does not match configured (T,d)");
}

torch::Tensor masked_mean_pool(const torch::Tensor& states,
                               const std::optional<torch::Tensor>& key_mask) {
  if (!key_mask.has_value()) return states.mean(1);
  auto m = key_mask->to(states.scalar_type());
  if (m.dim() == 1) m = m.unsqueeze(0);
  auto num = (states * m.unsqueeze(-1)).sum(1);
  auto den = m.sum(-1).unsqueeze(-1) + kPoolEps;
  return num / den;
}

}  // namespace

torch::Tensor sinusoidal_positional_encoding(int64_t t, int64_t d_h) {
  require(t > 0 && d_h > 0, "positional encoding: t and d_h must be positive");
  auto pe = torch::zeros({t, d_h});
  auto pos = torch::arange(t, torch::kFloat).unsqueeze(1);
  auto idx = torch::arange(0, d_h, 2, torch::kFloat);
  auto div = torch::exp(idx * (-std::log(10000.0) / static_cast<double>(d_h)));
  auto args = pos * div;  // (t, ceil(d_h/2))
  auto n_sin = (d_h + 1) / 2;
  auto n_cos = d_h / 2;
  using torch::indexing::Slice;
  pe.index_put_({Slice(), Slice(0, torch::indexing::None, 2)},
                args.index({Slice(), Slice(0, n_sin)}).sin());
  pe.index_put_({Slice(), Slice(1, torch::indexing::None, 2)},
                args.index({Slice(), Slice(0, n_cos)}).cos());
  return pe;
}

torch::Tensor attention_block(const torch::Tensor& q, const torch::Tensor& k,
                              const torch::Tensor& v, int64_t heads,
                              const std::optional<torch::Tensor>& key_mask) {
  auto b = q.size(0);
  auto tq = q.size(1);
  auto tk = k.size(1);
  auto h = q.size(2);
  require(h % heads == 0, "attention: heads must divide width");
  auto hd = h / heads;
  auto qh = q.view({b, tq, heads, hd}).transpose(1, 2);
  auto kh = k.view({b, tk, heads, hd}).transpose(1, 2);
  auto vh = v.view({b, tk, heads, hd}).transpose(1, 2);
  auto scores = torch::matmul(qh, kh.transpose(-2, -1)) /
                std::sqrt(static_cast<double>(hd));
  torch::Tensor w;
  if (key_mask.has_value()) {
    // Equivalent to apply_attention_mask(softmax(scores), m) but shifted by
    // the kept-key maximum, so a huge score at a masked key cannot underflow
    // the kept keys' softmax terms to zero before the mask removes it.
    auto m = key_mask->to(scores.scalar_type());
    if (m.dim() == 1) m = m.view({1, 1, 1, tk});
    else m = m.view({m.size(0), 1, 1, tk});
    require(m.size(-1) == tk, "attention: mask length != Tk");
    auto keep = m > 0;
    auto shift = scores.masked_fill(~keep, -1e30).amax(-1, /*keepdim=*/true).detach();
    auto e = (scores - shift)
                 .masked_fill(~keep, -std::numeric_limits<float>::infinity())
                 .exp();
    auto wm = e * m;
    w = wm / (wm.sum(-1, /*keepdim=*/true) + 1e-12);
  } else {
    w = torch::softmax(scores, -1);
  }
  auto out = torch::matmul(w, vh);
  return out.transpose(1, 2).reshape({b, tq, h});
}

EncoderLayerImpl::EncoderLayerImpl(int64_t d_h, int64_t n_heads, double dropout)
    : heads_(n_heads) {
  q_ = register_module("q", torch::nn::Linear(d_h, d_h));
  k_ = register_module("k", torch::nn::Linear(d_h, d_h));
  v_ = register_module("v", torch::nn::Linear(d_h, d_h));
  out_ = register_module("out", torch::nn::Linear(d_h, d_h));
  ff1_ = register_module("ff1", torch::nn::Linear(d_h, 4 * d_h));
  ff2_ = register_module("ff2", torch::nn::Linear(4 * d_h, d_h));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_h})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_h})));
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x,
                                        const std::optional<torch::Tensor>& key_mask) {
  auto att = attention_block(q_(x), k_(x), v_(x), heads_, key_mask);
  auto x1 = norm1_(x + drop_(out_(att)));
  auto ff = ff2_(drop_(torch::relu(ff1_(x1))));
  return norm2_(x1 + drop_(ff));
}

TransformerEncoderImpl::TransformerEncoderImpl(const EncoderConfig& cfg)
    : config(cfg) {
  check_encoder_config(cfg);
  input_proj_ = register_module("input_proj", torch::nn::Linear(cfg.d, cfg.d_h));
  emb_drop_ = register_module("emb_drop", torch::nn::Dropout(cfg.dropout));
  for (int64_t i = 0; i < cfg.num_layers; ++i) {
    layers_.push_back(register_module("layer" + std::to_string(i),
                                      EncoderLayer(cfg.d_h, cfg.n_heads, cfg.dropout)));
  }
  pe_ = register_buffer("pe", sinusoidal_positional_encoding(cfg.t, cfg.d_h));
}

torch::Tensor TransformerEncoderImpl::states(const torch::Tensor& x,
                                             const std::optional<torch::Tensor>& key_mask) {
  check_input(x, config);
  auto h = input_proj_(x) * std::sqrt(static_cast<double>(config.d_h)) + pe_;
  h = emb_drop_(h);
  for (auto& layer : layers_) h = layer->forward(h, key_mask);
  return h;
}

torch::Tensor TransformerEncoderImpl::encode(const torch::Tensor& x,
                                             const std::optional<torch::Tensor>& key_mask) {
  auto z = masked_mean_pool(states(x, key_mask), key_mask);
  if (config.normalize_embedding) {
    z = z / z.norm(2, -1, /*keepdim=*/true).clamp_min(kPoolEps);
  }
  return z;
}

PredictorHeadImpl::PredictorHeadImpl(int64_t d_h, int64_t c) {
  fc1_ = register_module("fc1", torch::nn::Linear(d_h, d_h));
  fc2_ = register_module("fc2", torch::nn::Linear(d_h, c));
}

torch::Tensor PredictorHeadImpl::forward(const torch::Tensor& z) {
  return fc2_(torch::relu(fc1_(z)));
}

namespace {
// Lifts (T,d) inputs to a singleton batch so callers can pass one sample.
std::pair<torch::Tensor, std::optional<torch::Tensor>> lift_batch(
    const torch::Tensor& x, const std::optional<torch::Tensor>& key_mask) {
  if (x.dim() == 3) return {x, key_mask};
  require(x.dim() == 2, "model input must be (T,d) or (B,T,d)");
  std::optional<torch::Tensor> m = key_mask;
  if (m.has_value() && m->dim() == 1) m = m->unsqueeze(0);
  return {x.unsqueeze(0), m};
}
}  // namespace

torch::Tensor ReferenceModel::encode(const torch::Tensor& x,
                                     const std::optional<torch::Tensor>& key_mask) const {
  auto [xb, mb] = lift_batch(x, key_mask);
  auto z = g.ptr()->encode(xb, mb);
  return x.dim() == 2 ? z.squeeze(0) : z;
}

torch::Tensor ReferenceModel::predict_logits(const torch::Tensor& z) const {
  return f.ptr()->forward(z);
}

torch::Tensor ReferenceModel::logits(const torch::Tensor& x,
                                     const std::optional<torch::Tensor>& key_mask) const {
  return predict_logits(encode(x, key_mask));
}

torch::Tensor ReferenceModel::probs(const torch::Tensor& x) const {
  return torch::softmax(logits(x), -1);
}

void ReferenceModel::eval() const {
  g.ptr()->eval();
  f.ptr()->eval();
}

void ReferenceModel::train(bool on) const {
  g.ptr()->train(on);
  f.ptr()->train(on);
}

std::vector<torch::Tensor> ReferenceModel::parameters() const {
  auto params = g.ptr()->parameters();
  auto fp = f.ptr()->parameters();
  params.insert(params.end(), fp.begin(), fp.end());
  return params;
}

ReferenceModel make_reference_model(const EncoderConfig& config) {
  check_encoder_config(config);
  ReferenceModel m;
  m.config = config;
  m.g = TransformerEncoder(config);
  m.f = PredictorHead(config.d_h, config.c);
  return m;
}

MaskDecoderLayerImpl::MaskDecoderLayerImpl(int64_t d_h, int64_t n_heads, double dropout)
    : heads_(n_heads) {
  self_q_ = register_module("self_q", torch::nn::Linear(d_h, d_h));
  self_k_ = register_module("self_k", torch::nn::Linear(d_h, d_h));
  self_v_ = register_module("self_v", torch::nn::Linear(d_h, d_h));
  self_out_ = register_module("self_out", torch::nn::Linear(d_h, d_h));
  cross_q_ = register_module("cross_q", torch::nn::Linear(d_h, d_h));
  cross_k_ = register_module("cross_k", torch::nn::Linear(d_h, d_h));
  cross_v_ = register_module("cross_v", torch::nn::Linear(d_h, d_h));
  cross_out_ = register_module("cross_out", torch::nn::Linear(d_h, d_h));
  ff1_ = register_module("ff1", torch::nn::Linear(d_h, 4 * d_h));
  ff2_ = register_module("ff2", torch::nn::Linear(4 * d_h, d_h));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_h})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_h})));
  norm3_ = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_h})));
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
}

torch::Tensor MaskDecoderLayerImpl::forward(const torch::Tensor& tgt,
                                            const torch::Tensor& memory) {
  auto sa = attention_block(self_q_(tgt), self_k_(tgt), self_v_(tgt), heads_, std::nullopt);
  auto t1 = norm1_(tgt + drop_(self_out_(sa)));
  auto ca = attention_block(cross_q_(t1), cross_k_(memory), cross_v_(memory), heads_,
                            std::nullopt);
  auto t2 = norm2_(t1 + drop_(cross_out_(ca)));
  auto ff = ff2_(drop_(torch::relu(ff1_(t2))));
  return norm3_(t2 + drop_(ff));
}

MaskGeneratorImpl::MaskGeneratorImpl(const EncoderConfig& cfg) : config(cfg) {
  check_encoder_config(cfg);
  encoder_ = register_module("encoder", TransformerEncoder(cfg));
  tgt_proj_ = register_module("tgt_proj", torch::nn::Linear(cfg.d, cfg.d_h));
  out_ = register_module("out", torch::nn::Linear(cfg.d_h, cfg.d));
  for (int64_t i = 0; i < 2; ++i) {
    layers_.push_back(register_module("dec" + std::to_string(i),
                                      MaskDecoderLayer(cfg.d_h, cfg.n_heads, cfg.dropout)));
  }
  pe_ = register_buffer("pe", sinusoidal_positional_encoding(cfg.t, cfg.d_h));
}

torch::Tensor MaskGeneratorImpl::forward(const torch::Tensor& x) {
  check_input(x, config);
  auto memory = encoder_->states(x, std::nullopt);
  auto tgt = tgt_proj_(x) * std::sqrt(static_cast<double>(config.d_h)) + pe_;
  for (auto& layer : layers_) tgt = layer->forward(tgt, memory);
  return torch::sigmoid(out_(tgt));
}

void init_runtime(uint64_t seed) {
  static bool configured = false;
  if (!configured) {
    torch::set_num_threads(1);
    at::globalContext().setFlushDenormal(true);
    configured = true;
  }
  torch::manual_seed(seed);
}

}  // namespace txai
