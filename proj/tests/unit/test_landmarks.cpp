#include <torch/torch.h>

#include <cmath>
#include <set>
#include <vector>

#include "timex/common.hpp"
#include "timex/landmarks.hpp"
#include "timex/losses.hpp"
#include "timex/model.hpp"

// doctest last: torch's c10 logging defines a CHECK macro that would
// otherwise shadow doctest's assertion macros in this translation unit.
#include <doctest.h>

namespace {

using namespace txai;

double cos_scalar(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> row_of(const torch::Tensor& m, int64_t i) {
  auto r = m[i].to(torch::kDouble).contiguous();
  auto acc = r.accessor<double, 1>();
  std::vector<double> out(static_cast<size_t>(r.size(0)));
  for (int64_t k = 0; k < r.size(0); ++k) out[static_cast<size_t>(k)] = acc[k];
  return out;
}

// Soft assimilation of one embedding against all landmark rows, in scalar
// doubles: softmax of cosine similarities sharpened by 1/tau, then the
// convex mixture of landmark rows.
std::vector<double> assimilate_scalar(const std::vector<double>& z,
                                      const torch::Tensor& landmarks, double tau) {
  auto n_l = landmarks.size(0);
  std::vector<double> sims(static_cast<size_t>(n_l));
  double mx = -1e300;
  for (int64_t j = 0; j < n_l; ++j) {
    sims[static_cast<size_t>(j)] = cos_scalar(z, row_of(landmarks, j)) / tau;
    mx = std::max(mx, sims[static_cast<size_t>(j)]);
  }
  double denom = 0.0;
  for (auto& s : sims) {
    s = std::exp(s - mx);
    denom += s;
  }
  std::vector<double> out(static_cast<size_t>(landmarks.size(1)), 0.0);
  for (int64_t j = 0; j < n_l; ++j) {
    double w = sims[static_cast<size_t>(j)] / denom;
    auto lr = row_of(landmarks, j);
    for (size_t k = 0; k < out.size(); ++k) out[k] += w * lr[k];
  }
  return out;
}

double mbc_scalar(const torch::Tensor& z, const torch::Tensor& z_e) {
  auto n = z.size(0);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double dz = cos_scalar(row_of(z, i), row_of(z, j));
      double de = cos_scalar(row_of(z_e, i), row_of(z_e, j));
      total += (dz - de) * (dz - de);
    }
  }
  return total / static_cast<double>(n * n);
}

// Maps a landmark row back to its source row (rows are exact copies).
int64_t source_of(const torch::Tensor& row, const torch::Tensor& z) {
  for (int64_t i = 0; i < z.size(0); ++i) {
    if (torch::equal(z[i], row)) return i;
  }
  return -1;
}

std::vector<int64_t> source_classes(const LandmarkSet& lm, const torch::Tensor& z,
                                    const torch::Tensor& labels) {
  std::vector<int64_t> out;
  for (int64_t j = 0; j < lm.L.size(0); ++j) {
    auto src = source_of(lm.L[j], z);
    REQUIRE(src >= 0);
    out.push_back(labels[src].item<int64_t>());
  }
  return out;
}

}  // namespace

TEST_CASE("landmark initialization is stratified over classes") {
  init_runtime(71);
  auto z = torch::randn({12, 4});
  auto labels = torch::tensor({0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2}, torch::kLong);

  SUBCASE("even quota: every class contributes n_L/C rows") {
    auto lm = init_landmarks(z, labels, 6, 5);
    REQUIRE(lm.L.sizes() == torch::IntArrayRef({6, 4}));
    auto classes = source_classes(lm, z, labels);
    std::vector<int64_t> per_class(3, 0);
    for (auto c : classes) ++per_class[static_cast<size_t>(c)];
    CHECK(per_class[0] == 2);
    CHECK(per_class[1] == 2);
    CHECK(per_class[2] == 2);
    CHECK(lm.occupancy.sum().item<int64_t>() == 0);
    REQUIRE(lm.retained.size() == 6);
    for (int64_t j = 0; j < 6; ++j) CHECK(lm.retained[static_cast<size_t>(j)] == j);
  }

  SUBCASE("uneven quota still gives every class at least floor(n_L/C)") {
    auto lm = init_landmarks(z, labels, 7, 5);
    auto classes = source_classes(lm, z, labels);
    std::vector<int64_t> per_class(3, 0);
    for (auto c : classes) ++per_class[static_cast<size_t>(c)];
    for (int64_t c = 0; c < 3; ++c) CHECK(per_class[static_cast<size_t>(c)] >= 2);
    CHECK(per_class[0] + per_class[1] + per_class[2] == 7);
  }

  SUBCASE("n_L equal to N selects every row exactly once") {
    auto lm = init_landmarks(z, labels, 12, 9);
    std::set<int64_t> sources;
    for (int64_t j = 0; j < 12; ++j) sources.insert(source_of(lm.L[j], z));
    CHECK(sources.size() == 12);
    CHECK(*sources.begin() == 0);
  }

  SUBCASE("quota spills to classes with spare capacity") {
    auto y2 = torch::tensor({0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1}, torch::kLong);
    auto lm = init_landmarks(z, y2, 8, 5);
    auto classes = source_classes(lm, z, y2);
    std::vector<int64_t> per_class(2, 0);
    for (auto c : classes) ++per_class[static_cast<size_t>(c)];
    // Base quota is 4 each, but class 1 holds only 3 rows; the leftover
    // seat goes to class 0.
    CHECK(per_class[0] == 5);
    CHECK(per_class[1] == 3);
  }

  SUBCASE("seed determinism") {
    auto a = init_landmarks(z, labels, 6, 5);
    auto b = init_landmarks(z, labels, 6, 5);
    auto c = init_landmarks(z, labels, 6, 6);
    CHECK(torch::equal(a.L, b.L));
    CHECK_FALSE(torch::allclose(a.L, c.L));
  }

  SUBCASE("input validation") {
    CHECK_THROWS_WITH_AS(init_landmarks(z, labels, 13, 0),
                         doctest::Contains("exceeds"), TimexError);
    CHECK_THROWS_WITH_AS(init_landmarks(z, labels, 0, 0),
                         doctest::Contains("positive"), TimexError);
    CHECK_THROWS_WITH_AS(init_landmarks(z, labels.narrow(0, 0, 4), 3, 0),
                         doctest::Contains("align"), TimexError);
  }
}

TEST_CASE("assimilation mixes landmark rows by sharpened similarity") {
  init_runtime(72);
  auto landmarks = torch::tensor({{1.0f, 0.0f}, {0.0f, 1.0f}, {1.0f, 1.0f}});

  SUBCASE("an embedding equal to a landmark returns that row as tau -> 0") {
    auto z = torch::tensor({0.0f, 2.0f});  // direction of row 1
    auto a = assimilate(z, landmarks, 1e-2, /*hard=*/false);
    CHECK(torch::allclose(a, landmarks[1], 1e-5, 1e-5));
  }

  SUBCASE("a single landmark is returned unchanged in both modes") {
    auto one = torch::tensor({{3.0f, 4.0f}});
    auto z = torch::tensor({-1.0f, 0.5f});
    CHECK(torch::equal(assimilate(z, one, 1.0, false), one[0]));
    CHECK(torch::equal(assimilate(z, one, 1.0, true, 99), one[0]));
  }

  SUBCASE("soft mixture matches the scalar oracle") {
    auto z = torch::tensor({2.0f, 0.0f});
    for (double tau : {0.5, 1.0, 3.0}) {
      auto a = assimilate(z, landmarks, tau, /*hard=*/false);
      auto want = assimilate_scalar({2.0, 0.0}, landmarks, tau);
      for (int64_t k = 0; k < 2; ++k) {
        CHECK(a[k].item<double>() ==
              doctest::Approx(want[static_cast<size_t>(k)]).epsilon(1e-5));
      }
    }
  }

  SUBCASE("batched soft assimilation equals per-row calls") {
    auto zb = torch::randn({5, 2});
    auto batch = assimilate(zb, landmarks, 0.8, /*hard=*/false);
    for (int64_t i = 0; i < 5; ++i) {
      auto single = assimilate(zb[i], landmarks, 0.8, /*hard=*/false);
      CHECK(torch::allclose(batch[i], single, 1e-6, 1e-6));
    }
  }

  SUBCASE("hard mode picks exactly one landmark row, deterministically per seed") {
    auto zb = torch::randn({6, 2});
    auto a1 = assimilate(zb, landmarks, 0.7, /*hard=*/true, 123);
    auto a2 = assimilate(zb, landmarks, 0.7, /*hard=*/true, 123);
    CHECK(torch::equal(a1, a2));
    for (int64_t i = 0; i < 6; ++i) {
      double best = 1e300;
      for (int64_t j = 0; j < landmarks.size(0); ++j) {
        best = std::min(best, (a1[i] - landmarks[j]).abs().max().item<double>());
      }
      CHECK(best <= 1e-6);
    }
  }

  SUBCASE("hard mode follows the sharpened distribution") {
    auto z = torch::tensor({0.0f, 2.0f});
    int hits = 0;
    for (uint64_t s = 0; s < 200; ++s) {
      auto a = assimilate(z, landmarks, 0.05, /*hard=*/true, s);
      if (torch::allclose(a, landmarks[1], 1e-6, 1e-6)) ++hits;
    }
    CHECK(hits >= 190);  // pi is essentially one-hot on row 1 at tau = 0.05
  }

  SUBCASE("gradient reaches the landmarks but never the embedding") {
    auto z = torch::randn({4, 2}).set_requires_grad(true);
    auto l = landmarks.clone().set_requires_grad(true);
    for (bool hard : {false, true}) {
      auto a = assimilate(z, l, 0.9, hard, 7);
      a.sum().backward();
      CHECK_FALSE(z.grad().defined());
      REQUIRE(l.grad().defined());
      CHECK(l.grad().abs().sum().item<double>() > 0.0);
      l.mutable_grad() = torch::Tensor();
    }
  }

  SUBCASE("input validation") {
    auto z = torch::tensor({1.0f, 0.0f});
    CHECK_THROWS_WITH_AS(assimilate(z, landmarks, 0.0, false),
                         doctest::Contains("tau"), TimexError);
    CHECK_THROWS_WITH_AS(assimilate(torch::randn({3}), landmarks, 1.0, false),
                         doctest::Contains("width"), TimexError);
    CHECK_THROWS_WITH_AS(assimilate(z, torch::empty({0, 2}), 1.0, false),
                         doctest::Contains("empty"), TimexError);
  }
}

TEST_CASE("landmark consistency loss trains L alone") {
  init_runtime(73);
  LossConfig cfg;
  cfg.tau = 0.7;

  SUBCASE("perfect assimilation gives zero loss") {
    auto z = torch::tensor({{1.0f, 0.0f}, {0.0f, 1.0f}, {0.6f, 0.8f}});
    LossConfig sharp;
    sharp.tau = 1e-2;
    auto loss = landmark_consistency_loss(z, z, z, sharp, /*hard=*/false);
    CHECK(loss.item<double>() <= 1e-6);
  }

  SUBCASE("soft loss matches the scalar oracle") {
    auto z = torch::tensor({{1.0f, 0.2f}, {-0.3f, 1.0f}});
    auto z_e = torch::tensor({{0.9f, 0.1f}, {0.2f, 0.8f}});
    auto landmarks = torch::tensor({{1.0f, 0.0f}, {0.0f, 1.0f}});
    auto loss = landmark_consistency_loss(z, z_e, landmarks, cfg, /*hard=*/false);

    auto a0 = assimilate_scalar(row_of(z_e, 0), landmarks, cfg.tau);
    auto a1 = assimilate_scalar(row_of(z_e, 1), landmarks, cfg.tau);
    auto a = torch::tensor({{static_cast<float>(a0[0]), static_cast<float>(a0[1])},
                            {static_cast<float>(a1[0]), static_cast<float>(a1[1])}});
    CHECK(loss.item<double>() == doctest::Approx(mbc_scalar(z, a)).epsilon(1e-5));
  }

  SUBCASE("analytic gradient into the embedding is cut while the value still depends on it") {
    auto z = torch::tensor({{1.0f, 0.0f}, {0.0f, 1.0f}});
    auto z_e = torch::tensor({{1.0f, 0.2f}, {0.1f, 1.0f}}).set_requires_grad(true);
    auto landmarks = torch::tensor({{1.0f, 0.0f}, {0.0f, 1.0f}}).set_requires_grad(true);

    auto loss = landmark_consistency_loss(z, z_e, landmarks, cfg, /*hard=*/false);
    loss.backward();
    CHECK_FALSE(z_e.grad().defined());
    REQUIRE(landmarks.grad().defined());
    CHECK(landmarks.grad().abs().sum().item<double>() > 0.0);

    torch::NoGradGuard ng;
    auto base = landmark_consistency_loss(z, z_e.detach(), landmarks.detach(), cfg, false)
                    .item<double>();
    auto bumped = z_e.detach().clone();
    bumped[0][1] += 0.05f;
    auto moved = landmark_consistency_loss(z, bumped, landmarks.detach(), cfg, false)
                     .item<double>();
    CHECK(std::abs(moved - base) > 1e-7);
  }

  SUBCASE("hard loss is the composition of assimilation and behavior consistency") {
    auto z = torch::randn({4, 3});
    auto z_e = torch::randn({4, 3});
    auto landmarks = torch::randn({5, 3});
    auto direct = mbc_loss(z, assimilate(z_e, landmarks, cfg.tau, true, 31));
    auto wrapped = landmark_consistency_loss(z, z_e, landmarks, cfg, true, 31);
    CHECK(wrapped.item<double>() == doctest::Approx(direct.item<double>()).epsilon(1e-9));
  }
}

TEST_CASE("occupancy counts and filtration match exhaustive search") {
  init_runtime(74);

  SUBCASE("all samples nearest one landmark") {
    auto z = torch::tensor({{1.0f, 0.01f}, {1.0f, -0.02f}, {1.0f, 0.03f}});
    auto landmarks = torch::tensor({{2.0f, 0.0f}, {0.0f, 2.0f}});
    auto counts = nearest_landmark_counts(landmarks, z);
    CHECK(counts[0].item<int64_t>() == 3);
    CHECK(counts[1].item<int64_t>() == 0);

    auto kept = filter_landmarks(landmarks, z, 1);
    REQUIRE(kept.L.sizes() == torch::IntArrayRef({1, 2}));
    CHECK(torch::equal(kept.L[0], landmarks[0]));
    CHECK(kept.retained == std::vector<int64_t>{0});
    CHECK(kept.occupancy[0].item<int64_t>() == 3);

    auto all = filter_landmarks(landmarks, z, 0);
    CHECK(all.L.sizes() == torch::IntArrayRef({2, 2}));
    CHECK(all.retained == std::vector<int64_t>{0, 1});
  }

  SUBCASE("exhaustive oracle on a random instance") {
    auto z = torch::randn({20, 6});
    auto landmarks = torch::randn({5, 6});
    auto counts = nearest_landmark_counts(landmarks, z);

    std::vector<int64_t> want(5, 0);
    for (int64_t i = 0; i < 20; ++i) {
      int64_t best = 0;
      double best_sim = -2.0;
      for (int64_t j = 0; j < 5; ++j) {
        double s = cos_scalar(row_of(z, i), row_of(landmarks, j));
        if (s > best_sim + 1e-12) {
          best_sim = s;
          best = j;
        }
      }
      ++want[static_cast<size_t>(best)];
    }
    int64_t total = 0;
    for (int64_t j = 0; j < 5; ++j) {
      CHECK(counts[j].item<int64_t>() == want[static_cast<size_t>(j)]);
      total += counts[j].item<int64_t>();
    }
    CHECK(total == 20);

    for (int64_t eps = 0; eps <= 6; ++eps) {
      auto kept = filter_landmarks(landmarks, z, eps);
      std::vector<int64_t> expect;
      for (int64_t j = 0; j < 5; ++j) {
        if (want[static_cast<size_t>(j)] >= eps) expect.push_back(j);
      }
      CHECK(kept.retained == expect);
      REQUIRE(kept.L.size(0) == static_cast<int64_t>(expect.size()));
      for (size_t r = 0; r < expect.size(); ++r) {
        CHECK(torch::equal(kept.L[static_cast<int64_t>(r)], landmarks[expect[r]]));
        CHECK(kept.occupancy[static_cast<int64_t>(r)].item<int64_t>() ==
              want[static_cast<size_t>(expect[r])]);
      }
    }
  }

  SUBCASE("raising the threshold only removes landmarks") {
    auto z = torch::randn({30, 4});
    auto landmarks = torch::randn({6, 4});
    std::vector<int64_t> prev_retained;
    bool first = true;
    for (int64_t eps = 0; eps <= 31; eps += 3) {
      auto kept = filter_landmarks(landmarks, z, eps);
      if (!first) {
        for (auto id : kept.retained) {
          CHECK(std::count(prev_retained.begin(), prev_retained.end(), id) == 1);
        }
        CHECK(kept.retained.size() <= prev_retained.size());
      }
      prev_retained = kept.retained;
      first = false;
    }
  }

  SUBCASE("duplicate landmarks tie to the lower index") {
    auto row = torch::tensor({1.0f, 1.0f});
    auto landmarks = torch::stack({row, torch::tensor({-1.0f, 0.0f}), row});
    auto z = torch::tensor({{2.0f, 2.0f}, {1.5f, 1.5f}});
    auto counts = nearest_landmark_counts(landmarks, z);
    CHECK(counts[0].item<int64_t>() == 2);
    CHECK(counts[2].item<int64_t>() == 0);
  }

  SUBCASE("an unreachable threshold empties the set with a warning") {
    auto z = torch::randn({8, 3});
    auto landmarks = torch::randn({3, 3});
    auto kept = filter_landmarks(landmarks, z, 9);
    CHECK(kept.L.size(0) == 0);
    CHECK(kept.L.size(1) == 3);
    CHECK(kept.occupancy.numel() == 0);
    CHECK(kept.retained.empty());
    CHECK(kept.n_eps == 9);
  }

  SUBCASE("default threshold formula") {
    CHECK(default_filtration_threshold(5000, 50) == 10);
    CHECK(default_filtration_threshold(100, 50) == 2);
    CHECK(default_filtration_threshold(10000, 10) == 100);
    CHECK_THROWS_AS(default_filtration_threshold(0, 5), TimexError);
  }
}

TEST_CASE("nearest-landmark and nearest-sample queries rank by cosine") {
  init_runtime(75);
  auto l0 = torch::tensor({1.0f, 0.0f, 0.0f});
  auto l1 = torch::tensor({0.0f, 1.0f, 0.0f});
  auto l2 = torch::tensor({0.0f, 0.0f, 1.0f});
  LandmarkSet lm;
  lm.L = torch::stack({l0, l1, l2, l0});  // row 3 duplicates row 0
  lm.occupancy = torch::zeros({4}, torch::kLong);
  lm.retained = {0, 1, 2, 3};

  SUBCASE("a query equal to a landmark ranks it first with similarity one") {
    auto r = nearest_landmarks(lm, l1 * 2.5, 2);
    REQUIRE(r.ids.size() == 2);
    CHECK(r.ids[0] == 1);
    CHECK(r.sims[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.sims[0] >= r.sims[1]);
  }

  SUBCASE("duplicate similarities order by lower index; k truncates") {
    auto r = nearest_landmarks(lm, l0, 99);
    REQUIRE(r.ids.size() == 4);
    CHECK(r.ids[0] == 0);
    CHECK(r.ids[1] == 3);
    CHECK(r.sims[0] == doctest::Approx(r.sims[1]).epsilon(1e-9));
    for (size_t i = 1; i < r.sims.size(); ++i) CHECK(r.sims[i - 1] >= r.sims[i]);
  }

  SUBCASE("k = 1 matches a brute-force argmax on random queries") {
    auto qs = torch::randn({10, 3});
    for (int64_t i = 0; i < 10; ++i) {
      auto r = nearest_landmarks(lm, qs[i], 1);
      int64_t best = 0;
      double best_sim = -2.0;
      for (int64_t j = 0; j < lm.L.size(0); ++j) {
        double s = cos_scalar(row_of(qs, i), row_of(lm.L, j));
        if (s > best_sim + 1e-12) {
          best_sim = s;
          best = j;
        }
      }
      REQUIRE(r.ids.size() == 1);
      CHECK(r.ids[0] == best);
      CHECK(r.sims[0] == doctest::Approx(best_sim).epsilon(1e-5));
    }
  }

  SUBCASE("sample lookup is the inverse query") {
    auto z_all = torch::randn({12, 3});
    auto r = nearest_samples(z_all, l2, 12);
    REQUIRE(r.ids.size() == 12);
    for (size_t i = 1; i < r.sims.size(); ++i) CHECK(r.sims[i - 1] >= r.sims[i]);
    int64_t best = 0;
    double best_sim = -2.0;
    for (int64_t i = 0; i < 12; ++i) {
      double s = cos_scalar(row_of(z_all, i), row_of(lm.L, 2));
      if (s > best_sim + 1e-12) {
        best_sim = s;
        best = i;
      }
    }
    CHECK(r.ids[0] == best);
  }

  SUBCASE("input validation") {
    CHECK_THROWS_WITH_AS(nearest_landmarks(lm, torch::randn({2, 3}), 1),
                         doctest::Contains("one embedding"), TimexError);
    CHECK_THROWS_WITH_AS(nearest_landmarks(lm, l0, 0), doctest::Contains("positive"),
                         TimexError);
    LandmarkSet empty;
    empty.L = torch::empty({0, 3});
    CHECK_THROWS_WITH_AS(nearest_landmarks(empty, l0, 1), doctest::Contains("empty"),
                         TimexError);
    CHECK_THROWS_WITH_AS(nearest_samples(torch::randn({5, 3}), torch::randn({2, 3}), 1),
                         doctest::Contains("one landmark"), TimexError);
  }
}
