#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

namespace txai {

struct EncoderConfig {
  int64_t t = 0;   // fixed sequence length
  int64_t d = 0;   // input sensors
  int64_t c = 0;   // output classes
  int64_t d_h = 16;
  int64_t num_layers = 1;
  int64_t n_heads = 1;
  double dropout = 0.1;
  bool normalize_embedding = false;
};

// Post-LN transformer encoder layer. Attention supports a per-timestep key
// mask in [0,1]: post-softmax weights are multiplied by the mask and
// renormalized, which removes masked keys exactly while staying
// differentiable in the mask.
class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(int64_t d_h, int64_t n_heads, double dropout);
  torch::Tensor forward(const torch::Tensor& x,
                        const std::optional<torch::Tensor>& key_mask);

 private:
  torch::nn::Linear q_{nullptr}, k_{nullptr}, v_{nullptr}, out_{nullptr},
      ff1_{nullptr}, ff2_{nullptr};
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Dropout drop_{nullptr};
  int64_t heads_;
};
TORCH_MODULE(EncoderLayer);

// Encoder G: input projection + sinusoidal positional encoding + N layers,
// mean-pooled over time into an embedding z. A key mask excludes masked
// timesteps from both attention and the pooling average.
class TransformerEncoderImpl : public torch::nn::Module {
 public:
  explicit TransformerEncoderImpl(const EncoderConfig& config);

  // Per-timestep states (B,T,H).
  torch::Tensor states(const torch::Tensor& x,
                       const std::optional<torch::Tensor>& key_mask);
  // Pooled embedding (B,H); L2-normalized when configured.
  torch::Tensor encode(const torch::Tensor& x,
                       const std::optional<torch::Tensor>& key_mask = std::nullopt);

  EncoderConfig config;

 private:
  torch::nn::Linear input_proj_{nullptr};
  torch::nn::Dropout emb_drop_{nullptr};
  std::vector<EncoderLayer> layers_;
  torch::Tensor pe_;
};
TORCH_MODULE(TransformerEncoder);

// Predictor head F: z -> class logits through one hidden layer.
class PredictorHeadImpl : public torch::nn::Module {
 public:
  PredictorHeadImpl(int64_t d_h, int64_t c);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(PredictorHead);

// The reference classifier: frozen after training, explained by the
// surrogate. encode/predict accept (T,d) or (B,T,d).
struct ReferenceModel {
  EncoderConfig config;
  TransformerEncoder g{nullptr};
  PredictorHead f{nullptr};

  torch::Tensor encode(const torch::Tensor& x,
                       const std::optional<torch::Tensor>& key_mask = std::nullopt) const;
  torch::Tensor predict_logits(const torch::Tensor& z) const;
  torch::Tensor logits(const torch::Tensor& x,
                       const std::optional<torch::Tensor>& key_mask = std::nullopt) const;
  torch::Tensor probs(const torch::Tensor& x) const;

  void eval() const;
  void train(bool on = true) const;
  std::vector<torch::Tensor> parameters() const;
};

ReferenceModel make_reference_model(const EncoderConfig& config);

// Mask generator H^E: an encoder over x feeding a 2-layer transformer
// decoder whose per-timestep outputs map to per-sensor probabilities.
class MaskDecoderLayerImpl : public torch::nn::Module {
 public:
  MaskDecoderLayerImpl(int64_t d_h, int64_t n_heads, double dropout);
  torch::Tensor forward(const torch::Tensor& tgt, const torch::Tensor& memory);

 private:
  torch::nn::Linear self_q_{nullptr}, self_k_{nullptr}, self_v_{nullptr},
      self_out_{nullptr};
  torch::nn::Linear cross_q_{nullptr}, cross_k_{nullptr}, cross_v_{nullptr},
      cross_out_{nullptr};
  torch::nn::Linear ff1_{nullptr}, ff2_{nullptr};
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr}, norm3_{nullptr};
  torch::nn::Dropout drop_{nullptr};
  int64_t heads_;
};
TORCH_MODULE(MaskDecoderLayer);

class MaskGeneratorImpl : public torch::nn::Module {
 public:
  explicit MaskGeneratorImpl(const EncoderConfig& config);
  // x: (B,T,d) -> mask probabilities (B,T,d), entries in (0,1).
  torch::Tensor forward(const torch::Tensor& x);

  EncoderConfig config;

 private:
  TransformerEncoder encoder_{nullptr};
  torch::nn::Linear tgt_proj_{nullptr}, out_{nullptr};
  std::vector<MaskDecoderLayer> layers_;
  torch::Tensor pe_;
};
TORCH_MODULE(MaskGenerator);

// Multi-head scaled-dot-product attention used by both towers.
// q,k,v: (B,T,H); key_mask broadcastable to (B,T_k) or absent.
torch::Tensor attention_block(const torch::Tensor& q, const torch::Tensor& k,
                              const torch::Tensor& v, int64_t heads,
                              const std::optional<torch::Tensor>& key_mask);

// Sinusoidal positional table (t, d_h).
torch::Tensor sinusoidal_positional_encoding(int64_t t, int64_t d_h);

// Process-wide numeric setup for training/eval runs: seeds torch's RNG,
// pins single-threaded execution, and flushes denormals (saturated-softmax
// gradients otherwise hit the x87 denormal penalty).
void init_runtime(uint64_t seed);

}  // namespace txai
