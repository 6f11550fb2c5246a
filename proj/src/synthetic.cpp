#include "timex/synthetic.hpp"

#include <cmath>
#include <vector>

#include "timex/common.hpp"

namespace txai {

SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "FreqShapes" || s == "freqshapes") return SyntheticKind::kFreqShapes;
  if (s == "SeqComb-UV" || s == "seqcomb_uv") return SyntheticKind::kSeqCombUV;
  if (s == "SeqComb-MV" || s == "seqcomb_mv") return SyntheticKind::kSeqCombMV;
  if (s == "LowVar" || s == "lowvar") return SyntheticKind::kLowVar;
  fail("unknown synthetic dataset kind: " + s);
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kFreqShapes: return "freqshapes";
    case SyntheticKind::kSeqCombUV: return "seqcomb_uv";
    case SyntheticKind::kSeqCombMV: return "seqcomb_mv";
    case SyntheticKind::kLowVar: return "lowvar";
  }
  fail("bad synthetic kind");
}

void synthetic_shape(SyntheticKind kind, int64_t* t, int64_t* d, int64_t* c) {
  switch (kind) {
    case SyntheticKind::kFreqShapes: *t = 50; *d = 1; *c = 4; return;
    case SyntheticKind::kSeqCombUV: *t = 200; *d = 1; *c = 4; return;
    case SyntheticKind::kSeqCombMV: *t = 200; *d = 4; *c = 4; return;
    case SyntheticKind::kLowVar: *t = 200; *d = 2; *c = 4; return;
  }
  fail("bad synthetic kind");
}

torch::Tensor narma_sequence(int64_t t, Rng& rng, int64_t order, double noise_scale) {
  require(t >= order && order >= 1, "narma: need T >= order >= 1");
  std::vector<double> y(t, 0.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<double> u(t);
    for (int64_t i = 0; i < t; ++i) u[i] = rng.uniform(0.0, 0.5);
    bool diverged = false;
    std::fill(y.begin(), y.end(), 0.0);
    for (int64_t i = order - 1; i + 1 < t; ++i) {
      double window = 0.0;
      for (int64_t j = 0; j < order; ++j) window += y[i - j];
      y[i + 1] = 0.3 * y[i] + 0.05 * y[i] * window + 1.5 * u[i - order + 1] * u[i] + 0.1;
      if (!std::isfinite(y[i + 1]) || std::abs(y[i + 1]) > 1e6) {
        diverged = true;
        break;
      }
    }
    if (diverged) continue;
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(t);
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t);
    if (var < 1e-16) continue;
    const double inv_std = noise_scale / std::sqrt(var);
    auto out = torch::empty({t}, torch::kFloat32);
    auto oa = out.accessor<float, 1>();
    for (int64_t i = 0; i < t; ++i) oa[i] = static_cast<float>((y[i] - mean) * inv_std);
    return out;
  }
  fail("narma: process failed to produce a usable sequence after 100 attempts");
}

torch::Tensor narma_base(int64_t t, int64_t d, uint64_t seed, int64_t order,
                         double noise_scale) {
  require(t > 0 && d > 0, "narma_base: T and d must be positive");
  require(t >= order && order >= 1, "narma_base: need T >= order >= 1");
  Rng root(mix64(seed));
  auto out = torch::empty({t, d}, torch::kFloat32);
  for (int64_t k = 0; k < d; ++k) {
    Rng stream = root.fork(static_cast<uint64_t>(k));
    out.index_put_({torch::indexing::Slice(), k}, narma_sequence(t, stream, order, noise_scale));
  }
  return out;
}

namespace {

struct SampleBuf {
  torch::Tensor x;  // (T,d)
  torch::Tensor q;  // (T,d)
};

void insert_spike(SampleBuf& s, int64_t t_pos, int dir, double sigma, Rng& rng) {
  const double mag = 3.0 * sigma + std::abs(rng.normal(0.0, 0.5 * sigma));
  s.x[t_pos][0] = static_cast<float>(dir * mag);
  const int64_t t_len = s.x.size(0);
  for (int64_t t = std::max<int64_t>(0, t_pos - 1); t <= std::min(t_len - 1, t_pos + 1); ++t) {
    s.q[t][0] = 1.0f;
  }
}

SampleBuf gen_freqshapes_sample(int64_t cls, int64_t t_len, double sigma, Rng& rng) {
  SampleBuf s;
  s.x = narma_sequence(t_len, rng, 10, sigma).reshape({t_len, 1});
  s.q = torch::zeros({t_len, 1}, torch::kFloat32);
  const int64_t period = cls < 2 ? 10 : 17;
  const int dir = cls % 2 == 0 ? -1 : 1;
  const int64_t phase = rng.uniform_int(0, period - 1);
  for (int64_t t = phase; t < t_len; t += period) insert_spike(s, t, dir, sigma, rng);
  return s;
}

struct SpanPlacement {
  int64_t start;
  int64_t len;
};

// Two spans, each 10-20 steps, separated by at least one unmarked step.
std::pair<SpanPlacement, SpanPlacement> place_two_spans(int64_t t_len, Rng& rng) {
  const int64_t len_a = rng.uniform_int(10, 20);
  const int64_t len_b = rng.uniform_int(10, 20);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const int64_t sa = rng.uniform_int(0, t_len - len_a);
    const int64_t sb = rng.uniform_int(0, t_len - len_b);
    const bool a_first = sa + len_a + 1 <= sb;
    const bool b_first = sb + len_b + 1 <= sa;
    if (!a_first && !b_first) continue;
    SpanPlacement first{a_first ? sa : sb, a_first ? len_a : len_b};
    SpanPlacement second{a_first ? sb : sa, a_first ? len_b : len_a};
    return {first, second};
  }
  fail("seqcomb: failed to place disjoint spans");
}

// Ramp-plus-sinusoid trend span written over the background of one sensor.
void insert_trend_span(SampleBuf& s, const SpanPlacement& span, int64_t sensor,
                       int trend_dir, double sigma, Rng& rng) {
  const double rise = rng.uniform(4.0, 7.0) * sigma;
  const double wavelength = rng.uniform(5.0, 10.0);
  const double slope = trend_dir * rise / static_cast<double>(span.len - 1);
  const double amp = 0.5 * sigma;
  const double mid = static_cast<double>(span.len - 1) / 2.0;
  for (int64_t j = 0; j < span.len; ++j) {
    const int64_t t = span.start + j;
    const double bg = 0.3 * s.x[t][sensor].item<float>();
    const double val = bg + slope * (static_cast<double>(j) - mid) +
                       amp * std::sin(2.0 * M_PI * static_cast<double>(j) / wavelength);
    s.x[t][sensor] = static_cast<float>(val);
    s.q[t][sensor] = 1.0f;
  }
}

SampleBuf gen_seqcomb_sample(int64_t cls, int64_t t_len, int64_t d, double sigma,
                             bool multivariate, Rng& rng) {
  SampleBuf s;
  s.x = torch::empty({t_len, d}, torch::kFloat32);
  for (int64_t k = 0; k < d; ++k) {
    s.x.index_put_({torch::indexing::Slice(), k}, narma_sequence(t_len, rng, 10, sigma));
  }
  s.q = torch::zeros({t_len, d}, torch::kFloat32);
  if (cls == 0) return s;  // null class: background only

  auto [first, second] = place_two_spans(t_len, rng);
  const int64_t sensor_first = multivariate ? rng.uniform_int(0, d - 1) : 0;
  const int64_t sensor_second = multivariate ? rng.uniform_int(0, d - 1) : 0;
  // Class 1: two increasing trends; class 2: two decreasing; class 3: the
  // earlier span increases and the later one decreases.
  const int dir_first = cls == 2 ? -1 : 1;
  const int dir_second = cls == 1 ? 1 : -1;
  insert_trend_span(s, first, sensor_first, dir_first, sigma, rng);
  insert_trend_span(s, second, sensor_second, dir_second, sigma, rng);
  return s;
}

SampleBuf gen_lowvar_sample(int64_t cls, int64_t t_len, double sigma, Rng& rng) {
  SampleBuf s;
  s.x = torch::empty({t_len, 2}, torch::kFloat32);
  for (int64_t k = 0; k < 2; ++k) {
    s.x.index_put_({torch::indexing::Slice(), k}, narma_sequence(t_len, rng, 10, sigma));
  }
  s.q = torch::zeros({t_len, 2}, torch::kFloat32);
  const double mu = (cls % 2 == 0 ? -1.5 : 1.5) * sigma;
  const int64_t sensor = cls < 2 ? 0 : 1;
  const int64_t len = rng.uniform_int(10, 20);
  const int64_t start = rng.uniform_int(0, t_len - len);
  for (int64_t j = 0; j < len; ++j) {
    s.x[start + j][sensor] = static_cast<float>(rng.normal(mu, 0.1 * sigma));
    s.q[start + j][sensor] = 1.0f;
  }
  return s;
}

}  // namespace

LabeledDataset generate_synthetic(const SyntheticConfig& config) {
  int64_t t_len = 0, d = 0, c = 0;
  synthetic_shape(config.kind, &t_len, &d, &c);
  require(config.n >= c, "generate_synthetic: n must cover all classes");
  require(config.noise_scale > 0, "generate_synthetic: noise_scale must be positive");

  LabeledDataset ds;
  ds.meta = {to_string(config.kind), config.n, t_len, d, c, config.seed};
  ds.X = torch::empty({config.n, t_len, d}, torch::kFloat32);
  ds.Q = torch::zeros({config.n, t_len, d}, torch::kFloat32);
  ds.has_q = true;
  ds.y = torch::empty({config.n}, torch::kInt64);
  ds.split.assign(config.n, Split::kNone);

  Rng root(mix64(config.seed ^ 0xD1B54A32D192ED03ULL));
  auto ya = ds.y.accessor<int64_t, 1>();
  for (int64_t i = 0; i < config.n; ++i) {
    const int64_t cls = i % c;
    ya[i] = cls;
    Rng rng = root.fork(static_cast<uint64_t>(i));
    SampleBuf s;
    switch (config.kind) {
      case SyntheticKind::kFreqShapes:
        s = gen_freqshapes_sample(cls, t_len, config.noise_scale, rng);
        break;
      case SyntheticKind::kSeqCombUV:
        s = gen_seqcomb_sample(cls, t_len, d, config.noise_scale, false, rng);
        break;
      case SyntheticKind::kSeqCombMV:
        s = gen_seqcomb_sample(cls, t_len, d, config.noise_scale, true, rng);
        break;
      case SyntheticKind::kLowVar:
        s = gen_lowvar_sample(cls, t_len, config.noise_scale, rng);
        break;
    }
    ds.X[i] = s.x;
    ds.Q[i] = s.q;
  }

  if (config.do_split) {
    Rng split_rng(mix64(config.seed ^ 0x5B17A9D2C4E6F801ULL));
    ds.split = stratified_split(ds.y, config.split, split_rng);
  }
  ds.validate();
  return ds;
}

LabeledDataset generate_synthetic(SyntheticKind kind, int64_t n, uint64_t seed) {
  SyntheticConfig config;
  config.kind = kind;
  config.n = n;
  config.seed = seed;
  config.do_split = n >= config.split.train_n + config.split.val_n + config.split.test_n;
  return generate_synthetic(config);
}

}  // namespace txai
