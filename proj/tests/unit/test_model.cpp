#include <torch/torch.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "timex/checkpoint.hpp"
#include "timex/common.hpp"
#include "timex/dataset.hpp"
#include "timex/masking.hpp"
#include "timex/metrics.hpp"
#include "timex/model.hpp"
#include "timex/rng.hpp"
#include "timex/train_predictor.hpp"

// doctest last: torch's c10 logging defines a CHECK macro that would
// otherwise shadow doctest's assertion macros in this translation unit.
#include <doctest.h>

namespace {

using namespace txai;

torch::Tensor rng_normal_tensor(Rng& rng, std::vector<int64_t> shape) {
  auto t = torch::empty(shape, torch::kFloat);
  auto* p = t.data_ptr<float>();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<float>(rng.normal());
  return t;
}

// Balanced two-class dataset; when separated, class k has mean sign (2k-1).
LabeledDataset make_binary_dataset(int64_t n, int64_t t, double sep, uint64_t seed,
                                   const SplitSpec& spec) {
  LabeledDataset ds;
  ds.meta = {"toy", n, t, 1, 2, seed};
  ds.X = torch::empty({n, t, 1}, torch::kFloat);
  ds.y = torch::empty({n}, torch::kLong);
  ds.has_q = false;
  Rng rng(mix64(seed));
  auto xa = ds.X.accessor<float, 3>();
  auto ya = ds.y.accessor<int64_t, 1>();
  for (int64_t i = 0; i < n; ++i) {
    int64_t label = i % 2;
    ya[i] = label;
    double mu = sep * (label == 0 ? -1.0 : 1.0);
    for (int64_t tt = 0; tt < t; ++tt) {
      xa[i][tt][0] = static_cast<float>(mu + 0.3 * rng.normal());
    }
  }
  ds.split.assign(static_cast<size_t>(n), Split::kNone);
  return split_dataset(ds, spec, seed + 1);
}

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.t = 6;
  c.d = 2;
  c.c = 3;
  c.d_h = 8;
  c.num_layers = 2;
  c.n_heads = 1;
  c.dropout = 0.1;
  return c;
}

}  // namespace

TEST_CASE("sinusoidal positional encoding matches closed form") {
  auto pe = sinusoidal_positional_encoding(10, 8);
  REQUIRE(pe.sizes() == torch::IntArrayRef({10, 8}));
  auto a = pe.accessor<float, 2>();
  for (int64_t j = 0; j < 8; j += 2) {
    CHECK(a[0][j] == doctest::Approx(0.0));
    CHECK(a[0][j + 1] == doctest::Approx(1.0));
  }
  for (int64_t t = 0; t < 10; ++t) {
    for (int64_t j = 0; j < 8; ++j) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(2 * (j / 2)) / 8.0);
      double expect = (j % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
      CHECK(a[t][j] == doctest::Approx(expect).epsilon(1e-5));
      CHECK(std::abs(a[t][j]) <= 1.0f + 1e-6f);
    }
  }
  // Distinct rows: no two timesteps share an encoding.
  for (int64_t t = 1; t < 10; ++t) {
    CHECK((pe[t] - pe[t - 1]).abs().max().item<float>() > 1e-3f);
  }
}

TEST_CASE("attention block with zero queries averages the values") {
  init_runtime(11);
  auto q = torch::zeros({2, 4, 8});
  auto k = torch::randn({2, 5, 8});
  auto v = torch::randn({2, 5, 8});
  for (int64_t heads : {1, 2, 4}) {
    auto out = attention_block(q, k, v, heads, std::nullopt);
    REQUIRE(out.sizes() == torch::IntArrayRef({2, 4, 8}));
    auto mean_v = v.mean(1, /*keepdim=*/true).expand({2, 4, 8});
    CHECK((out - mean_v).abs().max().item<float>() < 1e-5f);
  }
}

TEST_CASE("attention mask removes keys and renormalizes rows") {
  init_runtime(12);
  auto w = torch::softmax(torch::randn({2, 1, 3, 4}), -1);

  SUBCASE("kept keys renormalize to one") {
    auto m = torch::tensor({{1.0f, 0.0f, 1.0f, 0.0f}, {1.0f, 1.0f, 1.0f, 1.0f}});
    auto wm = apply_attention_mask(w, m);
    auto sums = wm.sum(-1);
    CHECK((sums - 1.0).abs().max().item<float>() < 1e-5f);
    CHECK(wm.index({0, 0, 0, 1}).item<float>() == 0.0f);
    CHECK(wm.index({0, 0, 2, 3}).item<float>() == 0.0f);
    // Fully kept batch row is unchanged.
    CHECK((wm[1] - w[1]).abs().max().item<float>() < 1e-6f);
  }

  SUBCASE("all-zero mask yields all-zero attention output") {
    auto m = torch::zeros({2, 4});
    auto wm = apply_attention_mask(w, m);
    CHECK(wm.abs().max().item<float>() == 0.0f);
    auto v = torch::randn({2, 1, 4, 8});
    CHECK(torch::matmul(wm, v).abs().max().item<float>() == 0.0f);
  }

  SUBCASE("mask length mismatch is rejected") {
    CHECK_THROWS_AS(apply_attention_mask(w, torch::ones({2, 5})), TimexError);
  }

  SUBCASE("attention block matches post-softmax masking on moderate inputs") {
    auto q = torch::randn({2, 3, 8});
    auto k = torch::randn({2, 4, 8});
    auto v = torch::randn({2, 4, 8});
    auto m = torch::tensor({{1.0f, 0.0f, 1.0f, 1.0f}, {0.0f, 1.0f, 1.0f, 0.0f}});
    auto masked = attention_block(q, k, v, 1, m);
    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(8.0);
    auto wref = apply_attention_mask(torch::softmax(scores, -1), m);
    auto ref = torch::matmul(wref, v);
    CHECK((masked - ref).abs().max().item<float>() < 1e-5f);
  }
}

TEST_CASE("masked encoding is independent of masked timesteps") {
  init_runtime(13);
  auto cfg = tiny_config();
  TransformerEncoder enc(cfg);
  enc->eval();
  auto x = torch::randn({3, cfg.t, cfg.d});
  auto mask = torch::ones({3, cfg.t});
  mask.index_put_({torch::indexing::Slice(), 2}, 0.0);

  auto z0 = enc->encode(x, mask);
  auto s0 = enc->states(x, mask);

  // Perturbing the masked timestep changes nothing downstream.
  auto x2 = x.clone();
  x2.index_put_({torch::indexing::Slice(), 2},
                x2.index({torch::indexing::Slice(), 2}) + 100.0);
  auto z1 = enc->encode(x2, mask);
  auto s1 = enc->states(x2, mask);
  CHECK((z1 - z0).abs().max().item<float>() < 1e-5f);
  for (int64_t t = 0; t < cfg.t; ++t) {
    if (t == 2) continue;
    CHECK((s1.index({torch::indexing::Slice(), t}) -
           s0.index({torch::indexing::Slice(), t}))
              .abs()
              .max()
              .item<float>() < 1e-5f);
  }

  SUBCASE("all-ones mask equals unmasked encoding") {
    auto za = enc->encode(x, torch::ones({3, cfg.t}));
    auto zb = enc->encode(x);
    CHECK((za - zb).abs().max().item<float>() < 1e-5f);
  }

  SUBCASE("all-zero mask pools to exactly zero") {
    auto z = enc->encode(x, torch::zeros({3, cfg.t}));
    CHECK(z.abs().max().item<float>() == 0.0f);
  }
}

TEST_CASE("encoder evaluation is deterministic and batch-consistent") {
  init_runtime(14);
  auto cfg = tiny_config();
  auto model = make_reference_model(cfg);
  model.eval();
  auto x = torch::randn({4, cfg.t, cfg.d});

  auto z1 = model.encode(x);
  auto z2 = model.encode(x);
  CHECK((z1 - z2).abs().max().item<float>() == 0.0f);

  for (int64_t i = 0; i < 4; ++i) {
    auto zi = model.encode(x[i]);
    REQUIRE(zi.dim() == 1);
    CHECK((zi - z1[i]).abs().max().item<float>() < 1e-5f);
  }

  SUBCASE("dropout is active in train mode") {
    model.train(true);
    torch::manual_seed(99);
    auto a = model.g->encode(x);
    auto b = model.g->encode(x);
    CHECK((a - b).abs().max().item<float>() > 0.0f);
  }

  SUBCASE("positional encoding makes outputs order-sensitive") {
    auto xr = x.flip(1);
    CHECK((model.encode(xr) - z1).abs().max().item<float>() > 1e-4f);
  }
}

TEST_CASE("normalized embeddings have unit norm") {
  init_runtime(15);
  auto cfg = tiny_config();
  cfg.normalize_embedding = true;
  auto model = make_reference_model(cfg);
  model.eval();
  auto z = model.encode(torch::randn({5, cfg.t, cfg.d}));
  auto norms = z.norm(2, -1);
  CHECK((norms - 1.0).abs().max().item<float>() < 1e-5f);
}

TEST_CASE("predictor head and probability outputs") {
  init_runtime(16);
  auto cfg = tiny_config();
  auto model = make_reference_model(cfg);
  model.eval();
  auto x = torch::randn({6, cfg.t, cfg.d});

  SUBCASE("softmax over classes sums to one") {
    auto p = model.probs(x);
    REQUIRE(p.sizes() == torch::IntArrayRef({6, cfg.c}));
    CHECK((p.sum(-1) - 1.0).abs().max().item<float>() < 1e-6f);
    CHECK(p.min().item<float>() >= 0.0f);
  }

  SUBCASE("zeroed head emits uniform class probabilities") {
    torch::NoGradGuard ng;
    for (auto& p : model.f->parameters()) p.zero_();
    auto probs = model.probs(x);
    CHECK((probs - 1.0 / static_cast<double>(cfg.c)).abs().max().item<float>() < 1e-6f);
  }
}

TEST_CASE("model input validation") {
  auto cfg = tiny_config();
  auto model = make_reference_model(cfg);
  model.eval();
  CHECK_THROWS_AS(model.encode(torch::randn({2, cfg.t + 1, cfg.d})), TimexError);
  CHECK_THROWS_AS(model.encode(torch::randn({2, cfg.t, cfg.d + 1})), TimexError);
  CHECK_THROWS_AS(model.encode(torch::randn({4})), TimexError);

  EncoderConfig bad = cfg;
  bad.n_heads = 3;  // does not divide d_h=8
  CHECK_THROWS_AS(make_reference_model(bad), TimexError);
  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(make_reference_model(bad), TimexError);
  bad = cfg;
  bad.t = 0;
  CHECK_THROWS_AS(make_reference_model(bad), TimexError);
}

TEST_CASE("mask generator emits per-cell probabilities") {
  init_runtime(17);
  auto cfg = tiny_config();
  MaskGenerator h(cfg);
  h->eval();
  auto x = torch::randn({4, cfg.t, cfg.d});
  auto p = h->forward(x);
  REQUIRE(p.sizes() == torch::IntArrayRef({4, cfg.t, cfg.d}));
  CHECK(p.min().item<float>() >= 0.0f);
  CHECK(p.max().item<float>() <= 1.0f);
  auto p2 = h->forward(x);
  CHECK((p - p2).abs().max().item<float>() == 0.0f);
  CHECK_THROWS_AS(h->forward(torch::randn({4, cfg.t + 1, cfg.d})), TimexError);
}

TEST_CASE("untrained predictor scores at chance on a balanced test set") {
  auto ds = make_binary_dataset(3000, 12, /*sep=*/0.0, 606, SplitSpec{1000, 200, 1800});
  EncoderConfig mc;
  mc.t = 12;
  mc.d = 1;
  mc.c = 2;
  mc.d_h = 8;
  mc.num_layers = 1;
  mc.dropout = 0.1;
  TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 77;
  TrainHistory hist;
  auto model = train_predictor(ds, mc, tc, &hist);
  CHECK(hist.epochs.empty());
  CHECK(hist.best_epoch == -1);
  auto m = evaluate_predictor(model, ds, Split::kTest);
  CHECK(std::abs(m.auroc - 0.5) <= 0.05);
}

TEST_CASE("predictor training fits a separable problem") {
  auto ds = make_binary_dataset(240, 8, /*sep=*/1.0, 393, SplitSpec{160, 40, 40});
  EncoderConfig mc;
  mc.t = 8;
  mc.d = 1;
  mc.c = 2;
  mc.d_h = 8;
  mc.num_layers = 1;
  mc.dropout = 0.1;
  TrainConfig tc;
  tc.epochs = 25;
  tc.lr = 1e-2;
  tc.batch_size = 32;
  tc.weight_decay = 1e-3;
  tc.seed = 5;
  TrainHistory hist;
  auto model = train_predictor(ds, mc, tc, &hist);
  REQUIRE(hist.epochs.size() == 25);
  CHECK(hist.best_epoch >= 0);
  CHECK(hist.epochs.back().train_loss < hist.epochs.front().train_loss);
  auto m = evaluate_predictor(model, ds, Split::kTest);
  CHECK(m.f1 >= 0.95);
  CHECK(m.auroc >= 0.99);

  SUBCASE("early stopping cuts the epoch budget on an unlearnable problem") {
    auto noise = make_binary_dataset(160, 8, /*sep=*/0.0, 771, SplitSpec{100, 30, 30});
    TrainConfig es = tc;
    es.epochs = 200;
    es.early_stop_patience = 5;
    TrainHistory h2;
    train_predictor(noise, mc, es, &h2);
    CHECK(h2.epochs.size() < 200);
    CHECK(h2.epochs.size() >= 6);
  }
}

TEST_CASE("plateau scheduler reduces the learning rate and best weights are restored") {
  // Labels independent of the inputs: validation loss cannot keep improving.
  auto ds = make_binary_dataset(160, 6, /*sep=*/0.0, 1203, SplitSpec{100, 30, 30});
  EncoderConfig mc;
  mc.t = 6;
  mc.d = 1;
  mc.c = 2;
  mc.d_h = 8;
  mc.num_layers = 1;
  mc.dropout = 0.0;
  TrainConfig tc;
  tc.epochs = 24;
  tc.lr = 1e-2;
  tc.batch_size = 32;
  tc.seed = 9;
  tc.scheduler = true;
  tc.warmup_epochs = 2;
  tc.scheduler_patience = 2;
  TrainHistory hist;
  auto model = train_predictor(ds, mc, tc, &hist);
  REQUIRE(!hist.epochs.empty());
  CHECK(hist.epochs.back().lr < tc.lr);
  CHECK(hist.epochs.back().lr >= tc.lr * 1e-3);

  // The returned weights reproduce the best recorded validation loss.
  auto idx = ds.index_tensor_of(Split::kVal);
  torch::NoGradGuard ng;
  model.eval();
  auto logits = model.logits(ds.X.index_select(0, idx));
  auto val = torch::nn::functional::cross_entropy(logits, ds.y.index_select(0, idx))
                 .item<double>();
  CHECK(val == doctest::Approx(hist.best_val_loss).epsilon(1e-5));
}

TEST_CASE("checkpoint round-trip preserves the model bit-for-bit") {
  init_runtime(21);
  auto cfg = tiny_config();
  cfg.normalize_embedding = true;
  auto model = make_reference_model(cfg);
  model.eval();
  auto dir = std::filesystem::temp_directory_path() / "timex_model_ckpt";
  std::filesystem::create_directories(dir);
  auto path = dir / "model.ckpt";
  nlohmann::json extra = {{"note", "round-trip"}, {"epoch", 3}};
  save_reference_model(model, path, extra);

  nlohmann::json extra2;
  auto loaded = load_reference_model(path, &extra2);
  CHECK(extra2 == extra);
  CHECK(loaded.config.t == cfg.t);
  CHECK(loaded.config.normalize_embedding == cfg.normalize_embedding);

  auto x = torch::randn({3, cfg.t, cfg.d});
  auto a = model.encode(x);
  auto b = loaded.encode(x);
  CHECK((a - b).abs().max().item<float>() == 0.0f);
  CHECK(weights_sha256(*model.g) == weights_sha256(*loaded.g));
  CHECK(weights_sha256(*model.f) == weights_sha256(*loaded.f));

  SUBCASE("wrong kind is rejected") {
    auto arch = load_archive(path);
    arch.kind = "explainer";
    auto p2 = dir / "wrongkind.ckpt";
    save_archive(arch, p2);
    CHECK_THROWS_AS(load_reference_model(p2), TimexError);
  }

  SUBCASE("corrupt magic is rejected") {
    auto p2 = dir / "badmagic.ckpt";
    std::ofstream out(p2, std::ios::binary);
    out << "TIMEX-NOPE v1\n{}\nend\n";
    out.close();
    CHECK_THROWS_AS(load_archive(p2), TimexError);
  }

  SUBCASE("truncated payload is a payload size mismatch") {
    auto bytes_path = dir / "trunc.ckpt";
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(bytes_path, std::ios::binary);
    out.write(all.data(), static_cast<std::streamsize>(all.size() - 17));
    out.close();
    CHECK_THROWS_WITH_AS(load_archive(bytes_path),
                         doctest::Contains("payload size mismatch"), TimexError);
  }

  SUBCASE("trailing bytes are a payload size mismatch") {
    auto bytes_path = dir / "trail.ckpt";
    std::filesystem::copy_file(path, bytes_path,
                               std::filesystem::copy_options::overwrite_existing);
    std::ofstream out(bytes_path, std::ios::binary | std::ios::app);
    out << "junk";
    out.close();
    CHECK_THROWS_WITH_AS(load_archive(bytes_path),
                         doctest::Contains("payload size mismatch"), TimexError);
  }
}

TEST_CASE("weight digest is order-independent and change-sensitive") {
  init_runtime(22);
  auto cfg = tiny_config();
  auto model = make_reference_model(cfg);
  auto h1 = weights_sha256(*model.g);
  auto h2 = weights_sha256(*model.g);
  CHECK(h1 == h2);
  CHECK(h1.size() == 64);
  {
    torch::NoGradGuard ng;
    auto params = model.g->parameters();
    params[0].view(-1)[0] += 1e-3;
  }
  CHECK(weights_sha256(*model.g) != h1);

  auto arrays = named_tensors(*model.g);
  auto reversed = arrays;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(weights_sha256(arrays) == weights_sha256(reversed));
}

TEST_CASE("two training epochs from a fixed seed reproduce the frozen digest") {
  auto ds = make_binary_dataset(96, 6, /*sep=*/1.0, 2024, SplitSpec{64, 16, 16});
  EncoderConfig mc;
  mc.t = 6;
  mc.d = 1;
  mc.c = 2;
  mc.d_h = 8;
  mc.num_layers = 1;
  mc.dropout = 0.1;
  TrainConfig tc;
  tc.epochs = 2;
  tc.lr = 1e-3;
  tc.batch_size = 32;
  tc.weight_decay = 1e-2;
  tc.seed = 424242;
  auto run = [&]() {
    auto model = train_predictor(ds, mc, tc);
    std::vector<std::pair<std::string, torch::Tensor>> all;
    for (auto& nt : named_tensors(*model.g, "g.")) all.push_back(nt);
    for (auto& nt : named_tensors(*model.f, "f.")) all.push_back(nt);
    return weights_sha256(all);
  };
  auto h1 = run();
  auto h2 = run();
  CHECK(h1 == h2);
  CHECK(h1 == "75e0f8ca855bff7a4450de3e55088983ca76decee38427152711196fc1265a6f");
}
