#include <torch/torch.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "support/test_oracles.hpp"
#include "timex/common.hpp"
#include "timex/dataset.hpp"
#include "timex/synthetic.hpp"

// doctest last: torch's c10 logging defines a CHECK macro that would
// otherwise shadow doctest's assertion macros in this translation unit.
#include <doctest.h>

using namespace txai;

namespace {

const LabeledDataset& cached(SyntheticKind kind) {
  static std::map<SyntheticKind, LabeledDataset> cache;
  auto it = cache.find(kind);
  if (it == cache.end()) {
    it = cache.emplace(kind, generate_synthetic(kind, 6100, 7)).first;
  }
  return it->second;
}

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("narma_base determinism and finiteness") {
  auto a = narma_base(50, 1, 0);
  auto b = narma_base(50, 1, 0);
  CHECK(torch::equal(a, b));
  CHECK(torch::isfinite(a).all().item<bool>());
  auto c = narma_base(50, 1, 1);
  CHECK_FALSE(torch::equal(a, c));
}

TEST_CASE("narma_base per-sensor std stays within [0.5, 2] of the noise scale") {
  const double scale = 2.0;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    auto x = narma_base(200, 4, seed, 10, scale);
    auto stds = x.std(0, /*unbiased=*/false);
    for (int64_t k = 0; k < 4; ++k) {
      const double s = stds[k].item<float>();
      REQUIRE(s >= 0.5 * scale);
      REQUIRE(s <= 2.0 * scale);
    }
  }
}

TEST_CASE("narma_base sensors carry independent streams") {
  auto x = narma_base(200, 2, 3);
  CHECK_FALSE(torch::equal(x.select(1, 0), x.select(1, 1)));
}

TEST_CASE("narma_base rejects bad arguments") {
  CHECK_THROWS_AS(narma_base(0, 1, 0), TimexError);
  CHECK_THROWS_AS(narma_base(50, 0, 0), TimexError);
  CHECK_THROWS_AS(narma_base(5, 1, 0, 10), TimexError);  // T < order
}

TEST_CASE("generate_synthetic shapes match the benchmark table") {
  const auto& fs = cached(SyntheticKind::kFreqShapes);
  CHECK(fs.meta.n == 6100);
  CHECK(fs.meta.t == 50);
  CHECK(fs.meta.d == 1);
  CHECK(fs.meta.c == 4);
  CHECK(fs.indices_of(Split::kTrain).size() == 5000);
  CHECK(fs.indices_of(Split::kVal).size() == 100);
  CHECK(fs.indices_of(Split::kTest).size() == 1000);

  const auto& mv = cached(SyntheticKind::kSeqCombMV);
  CHECK(mv.meta.t == 200);
  CHECK(mv.meta.d == 4);
  CHECK(mv.meta.c == 4);

  const auto& uv = cached(SyntheticKind::kSeqCombUV);
  CHECK(uv.meta.t == 200);
  CHECK(uv.meta.d == 1);

  const auto& lv = cached(SyntheticKind::kLowVar);
  CHECK(lv.meta.t == 200);
  CHECK(lv.meta.d == 2);
}

TEST_CASE("generate_synthetic is deterministic per seed") {
  auto a = generate_synthetic(SyntheticKind::kSeqCombUV, 64, 11);
  auto b = generate_synthetic(SyntheticKind::kSeqCombUV, 64, 11);
  CHECK(torch::equal(a.X, b.X));
  CHECK(torch::equal(a.y, b.y));
  CHECK(torch::equal(a.Q, b.Q));
  CHECK(a.split == b.split);
  auto c = generate_synthetic(SyntheticKind::kSeqCombUV, 64, 12);
  CHECK_FALSE(torch::equal(a.X, c.X));
}

TEST_CASE("SeqComb-MV saliency touches at most two sensors per sample") {
  const auto& mv = cached(SyntheticKind::kSeqCombMV);
  auto per_sensor = mv.Q.sum(1);  // (N, d)
  auto touched = (per_sensor > 0).sum(1);
  CHECK((touched <= 2).all().item<bool>());
}

TEST_CASE("SeqComb-UV class-1 samples carry exactly two disjoint 10-20 step spans") {
  const auto& uv = cached(SyntheticKind::kSeqCombUV);
  auto ya = uv.y.accessor<int64_t, 1>();
  int checked = 0;
  for (int64_t i = 0; i < uv.meta.n && checked < 100; ++i) {
    if (ya[i] != 1) continue;
    auto runs = oracle::q_runs(uv.Q[i]);
    REQUIRE(runs.size() == 2);
    for (const auto& r : runs) {
      REQUIRE(r.len >= 10);
      REQUIRE(r.len <= 20);
    }
    // Disjoint with a gap: runs are maximal, so adjacency would have merged.
    REQUIRE(runs[0].start + runs[0].len < runs[1].start);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("rule-based oracle classifies Q-masked input perfectly on 200 samples each") {
  struct Case {
    SyntheticKind kind;
    std::optional<int64_t> (*rule)(const torch::Tensor&, const torch::Tensor&);
  };
  const Case cases[] = {
      {SyntheticKind::kFreqShapes, oracle::freqshapes_rule},
      {SyntheticKind::kSeqCombUV, oracle::seqcomb_rule},
      {SyntheticKind::kSeqCombMV, oracle::seqcomb_rule},
      {SyntheticKind::kLowVar, oracle::lowvar_rule},
  };
  for (const auto& c : cases) {
    const auto& ds = cached(c.kind);
    auto ya = ds.y.accessor<int64_t, 1>();
    for (int64_t i = 0; i < 200; ++i) {
      auto pred = c.rule(ds.X[i], ds.Q[i]);
      REQUIRE(pred.has_value());
      REQUIRE(*pred == ya[i]);
    }
  }
}

TEST_CASE("ground-truth saliency is sparse") {
  for (auto kind : {SyntheticKind::kFreqShapes, SyntheticKind::kSeqCombUV,
                    SyntheticKind::kSeqCombMV, SyntheticKind::kLowVar}) {
    const auto& ds = cached(kind);
    CHECK(ds.Q.mean().item<float>() < 0.5f);
  }
}

TEST_CASE("each class appears in every split of the full benchmarks") {
  const auto& fs = cached(SyntheticKind::kFreqShapes);
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
    auto sub = fs.subset(s);
    std::set<int64_t> classes;
    auto ya = sub.y.accessor<int64_t, 1>();
    for (int64_t i = 0; i < sub.meta.n; ++i) classes.insert(ya[i]);
    CHECK(classes.size() == 4);
  }
}

TEST_CASE("background level of non-salient entries is near the configured scale") {
  const auto& uv = cached(SyntheticKind::kSeqCombUV);
  auto bg = uv.X.index({uv.Q == 0});
  const double s = bg.std(/*unbiased=*/false).item<float>();
  CHECK(s > 0.8);
  CHECK(s < 1.2);
}

TEST_CASE("generate_synthetic rejects bad arguments") {
  CHECK_THROWS_AS(synthetic_kind_from_string("bogus"), TimexError);
  SyntheticConfig cfg;
  cfg.n = 2;  // below C=4
  cfg.do_split = false;
  CHECK_THROWS_AS(generate_synthetic(cfg), TimexError);
}

TEST_CASE("split_dataset honors counts, stratification, and seeds") {
  auto ds = generate_synthetic(SyntheticKind::kFreqShapes, 240, 3);
  SplitSpec spec{160, 40, 40};
  auto a = split_dataset(ds, spec, 1);
  CHECK(a.indices_of(Split::kTrain).size() == 160);
  CHECK(a.indices_of(Split::kVal).size() == 40);
  CHECK(a.indices_of(Split::kTest).size() == 40);
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
    auto sub = a.subset(s);
    auto counts = torch::bincount(sub.y, {}, 4);
    // 240 balanced samples split proportionally leave each class balanced.
    CHECK(counts.min().item<int64_t>() == counts.max().item<int64_t>());
  }
  auto b = split_dataset(ds, spec, 2);
  CHECK(b.indices_of(Split::kTrain).size() == 160);
  CHECK(a.split != b.split);

  SUBCASE("all-train split") {
    auto small = generate_synthetic(SyntheticKind::kFreqShapes, 10, 5);
    auto allt = split_dataset(small, SplitSpec{10, 0, 0}, 0);
    CHECK(allt.indices_of(Split::kTrain).size() == 10);
    CHECK(allt.indices_of(Split::kVal).empty());
    CHECK(allt.indices_of(Split::kTest).empty());
  }
  SUBCASE("oversized request fails") {
    auto small = generate_synthetic(SyntheticKind::kFreqShapes, 10, 5);
    CHECK_THROWS_AS(split_dataset(small, SplitSpec{20, 0, 0}, 0), TimexError);
  }
}

TEST_CASE("dataset archive round-trips bit-identically") {
  auto ds = generate_synthetic(SyntheticKind::kSeqCombMV, 48, 21);
  const std::string path = temp_path("timex_test_roundtrip.tds");
  save_dataset(ds, path);
  auto back = load_dataset(path);
  CHECK(back.meta.name == ds.meta.name);
  CHECK(back.meta.seed == ds.meta.seed);
  CHECK(torch::equal(back.X, ds.X));
  CHECK(torch::equal(back.y, ds.y));
  CHECK(torch::equal(back.Q, ds.Q));
  CHECK(back.split == ds.split);
  std::remove(path.c_str());
}

TEST_CASE("externally produced archive loads and validates") {
  // Scripted writer: a 2-sample file following the documented layout.
  const std::string path = temp_path("timex_test_external.tds");
  {
    std::ofstream f(path, std::ios::binary);
    f << "TIMEX-DATASET v1\n"
      << "name handmade\nn 2\nt 3\nd 1\nc 2\nseed 9\nhas_q 1\nsplit tt\nend\n";
    const float xs[6] = {0.5f, -1.25f, 2.0f, 3.5f, 0.0f, -0.75f};
    f.write(reinterpret_cast<const char*>(xs), sizeof(xs));
    const uint8_t ys[2] = {0, 1};
    f.write(reinterpret_cast<const char*>(ys), 2);
    const uint8_t qs[6] = {1, 0, 0, 0, 1, 1};
    f.write(reinterpret_cast<const char*>(qs), 6);
  }
  auto ds = load_dataset(path);
  CHECK(ds.meta.name == "handmade");
  CHECK(ds.meta.n == 2);
  CHECK(ds.X[0][1][0].item<float>() == -1.25f);
  CHECK(ds.X[1][0][0].item<float>() == 3.5f);
  CHECK(ds.y[1].item<int64_t>() == 1);
  CHECK(ds.Q[1][2][0].item<float>() == 1.0f);
  CHECK(ds.split[0] == Split::kTrain);
  std::remove(path.c_str());
}

TEST_CASE("archive header/payload mismatch is rejected") {
  const std::string path = temp_path("timex_test_corrupt.tds");
  {
    std::ofstream f(path, std::ios::binary);
    // Header promises 5 samples; payload carries 4.
    f << "TIMEX-DATASET v1\n"
      << "name broken\nn 5\nt 2\nd 1\nc 2\nseed 0\nhas_q 0\nsplit -----\nend\n";
    const float xs[8] = {0, 1, 2, 3, 4, 5, 6, 7};
    f.write(reinterpret_cast<const char*>(xs), sizeof(xs));
    const uint8_t ys[4] = {0, 1, 0, 1};
    f.write(reinterpret_cast<const char*>(ys), 4);
  }
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("payload size mismatch"),
                       TimexError);
  std::remove(path.c_str());

  SUBCASE("bad magic") {
    {
      std::ofstream f(path, std::ios::binary);
      f << "NOT-A-DATASET\n";
    }
    CHECK_THROWS_AS(load_dataset(path), TimexError);
    std::remove(path.c_str());
  }
}
