#include "timex/landmarks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cstdio>

#include "timex/common.hpp"
#include "timex/rng.hpp"

namespace txai {

namespace {

constexpr double kNormEps = 1e-12;

torch::Tensor unit_rows(const torch::Tensor& m) {
  return m / m.norm(2, -1, /*keepdim=*/true).clamp_min(kNormEps);
}

// argmax over each row with deterministic lower-index tie-break.
std::vector<int64_t> row_argmax(const torch::Tensor& sims) {
  auto s = sims.contiguous();
  auto acc = s.accessor<float, 2>();
  std::vector<int64_t> out(static_cast<size_t>(s.size(0)));
  for (int64_t i = 0; i < s.size(0); ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < s.size(1); ++j) {
      if (acc[i][j] > acc[i][best]) best = j;
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

QueryResult top_k(const torch::Tensor& sims, int64_t k) {
  auto s = sims.to(torch::kFloat).contiguous();
  auto n = s.size(0);
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  auto acc = s.accessor<float, 1>();
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (acc[a] != acc[b]) return acc[a] > acc[b];
    return a < b;
  });
  QueryResult r;
  auto take = std::min<int64_t>(k, n);
  for (int64_t i = 0; i < take; ++i) {
    r.ids.push_back(order[static_cast<size_t>(i)]);
    r.sims.push_back(acc[order[static_cast<size_t>(i)]]);
  }
  return r;
}

}  // namespace

LandmarkSet init_landmarks(const torch::Tensor& z_e, const torch::Tensor& labels,
                           int64_t n_l, uint64_t seed) {
  require(z_e.dim() == 2, "init_landmarks: embeddings must be (N,d_z)");
  require(labels.dim() == 1 && labels.size(0) == z_e.size(0),
          "init_landmarks: labels must align with embeddings");
  auto n = z_e.size(0);
  require(n_l >= 1, "init_landmarks: n_L must be positive");
  require(n_l <= n, "init_landmarks: n_L exceeds the number of embeddings");

  auto lab = labels.to(torch::kLong);
  int64_t c = lab.max().item<int64_t>() + 1;
  std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(c));
  auto la = lab.accessor<int64_t, 1>();
  for (int64_t i = 0; i < n; ++i) {
    require(la[i] >= 0, "init_landmarks: negative label");
    by_class[static_cast<size_t>(la[i])].push_back(i);
  }

  // Base quota per class, then spill unused quota to classes with capacity.
  std::vector<int64_t> quota(static_cast<size_t>(c));
  int64_t assigned = 0;
  for (int64_t k = 0; k < c; ++k) {
    quota[static_cast<size_t>(k)] =
        std::min<int64_t>(n_l / c, static_cast<int64_t>(by_class[static_cast<size_t>(k)].size()));
    assigned += quota[static_cast<size_t>(k)];
  }
  int64_t remaining = n_l - assigned;
  while (remaining > 0) {
    bool progressed = false;
    for (int64_t k = 0; k < c && remaining > 0; ++k) {
      auto cap = static_cast<int64_t>(by_class[static_cast<size_t>(k)].size());
      if (quota[static_cast<size_t>(k)] < cap) {
        ++quota[static_cast<size_t>(k)];
        --remaining;
        progressed = true;
      }
    }
    require(progressed, "init_landmarks: internal quota accounting failed");
  }

  Rng root(mix64(seed ^ 0xA17C4B99D0E3F56DULL));
  std::vector<int64_t> chosen;
  for (int64_t k = 0; k < c; ++k) {
    auto& ids = by_class[static_cast<size_t>(k)];
    auto rng = root.fork(static_cast<uint64_t>(k));
    for (size_t i = ids.size(); i > 1; --i) {
      auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(ids[i - 1], ids[j]);
    }
    for (int64_t i = 0; i < quota[static_cast<size_t>(k)]; ++i) {
      chosen.push_back(ids[static_cast<size_t>(i)]);
    }
  }
  std::sort(chosen.begin(), chosen.end());

  LandmarkSet lm;
  auto idx = torch::from_blob(chosen.data(), {static_cast<int64_t>(chosen.size())},
                              torch::kLong)
                 .clone();
  lm.L = z_e.index_select(0, idx).clone();
  lm.occupancy = torch::zeros({n_l}, torch::kLong);
  lm.retained.resize(static_cast<size_t>(n_l));
  for (int64_t i = 0; i < n_l; ++i) lm.retained[static_cast<size_t>(i)] = i;
  return lm;
}

torch::Tensor assimilate(const torch::Tensor& z_e, const torch::Tensor& landmarks,
                         double tau, bool hard, std::optional<uint64_t> seed) {
  require(landmarks.dim() == 2 && landmarks.size(0) >= 1,
          "assimilate: landmark matrix is empty");
  require(tau > 0.0, "assimilate: tau must be positive");
  bool single = z_e.dim() == 1;
  auto z = (single ? z_e.unsqueeze(0) : z_e).detach();
  require(z.dim() == 2 && z.size(1) == landmarks.size(1),
          "assimilate: embedding width does not match landmarks");

  auto sims = torch::matmul(unit_rows(z), unit_rows(landmarks).transpose(0, 1));
  auto pi = torch::softmax(sims / tau, -1);
  torch::Tensor weights;
  if (hard) {
    auto u = seed.has_value()
                 ? torch::rand(pi.sizes(), at::detail::createCPUGenerator(*seed),
                               torch::TensorOptions().dtype(pi.scalar_type()))
                 : torch::rand_like(pi);
    auto g = -(-u.clamp(1e-9, 1.0 - 1e-9).log()).log();
    auto soft = torch::softmax((pi.clamp_min(1e-12).log() + g) / tau, -1);
    auto idx = soft.argmax(-1, /*keepdim=*/true);
    auto one_hot = torch::zeros_like(soft).scatter_(-1, idx, 1.0);
    weights = (one_hot - soft).detach() + soft;
  } else {
    weights = pi;
  }
  auto out = torch::matmul(weights, landmarks);
  return single ? out.squeeze(0) : out;
}

torch::Tensor landmark_consistency_loss(const torch::Tensor& z, const torch::Tensor& z_e,
                                        const torch::Tensor& landmarks,
                                        const LossConfig& cfg, bool hard,
                                        std::optional<uint64_t> seed) {
  auto assimilated = assimilate(z_e, landmarks, cfg.tau, hard, seed);
  return mbc_loss(z, assimilated, cfg.distance_normalize);
}

torch::Tensor nearest_landmark_counts(const torch::Tensor& landmarks,
                                      const torch::Tensor& z_e) {
  require(landmarks.dim() == 2 && z_e.dim() == 2, "nearest counts: need matrices");
  require(landmarks.size(1) == z_e.size(1), "nearest counts: width mismatch");
  torch::NoGradGuard ng;
  auto sims = torch::matmul(unit_rows(z_e), unit_rows(landmarks).transpose(0, 1))
                  .to(torch::kFloat);
  auto counts = torch::zeros({landmarks.size(0)}, torch::kLong);
  auto ca = counts.accessor<int64_t, 1>();
  for (auto j : row_argmax(sims)) ++ca[j];
  return counts;
}

LandmarkSet filter_landmarks(const torch::Tensor& landmarks,
                             const torch::Tensor& z_e_train, int64_t n_eps) {
  require(n_eps >= 0, "filter_landmarks: n_eps must be nonnegative");
  auto counts = nearest_landmark_counts(landmarks, z_e_train);
  LandmarkSet out;
  out.n_eps = n_eps;
  std::vector<int64_t> keep;
  auto ca = counts.accessor<int64_t, 1>();
  for (int64_t j = 0; j < landmarks.size(0); ++j) {
    if (ca[j] >= n_eps) keep.push_back(j);
  }
  if (keep.empty()) {
    std::fprintf(stderr,
                 "[landmarks] warning: filtration with n_eps=%lld retained no landmarks\n",
                 static_cast<long long>(n_eps));
    out.L = torch::empty({0, landmarks.size(1)}, landmarks.scalar_type());
    out.occupancy = torch::empty({0}, torch::kLong);
    return out;
  }
  auto idx = torch::from_blob(keep.data(), {static_cast<int64_t>(keep.size())}, torch::kLong)
                 .clone();
  out.L = landmarks.index_select(0, idx).detach().clone();
  out.occupancy = counts.index_select(0, idx);
  out.retained = keep;
  return out;
}

int64_t default_filtration_threshold(int64_t n_train, int64_t n_l) {
  require(n_train > 0 && n_l > 0, "default_filtration_threshold: counts must be positive");
  return std::max<int64_t>(2, n_train / (10 * n_l));
}

QueryResult nearest_landmarks(const LandmarkSet& lm, const torch::Tensor& z_e, int64_t k) {
  require(k >= 1, "nearest_landmarks: k must be positive");
  require(lm.L.defined() && lm.L.size(0) > 0, "nearest_landmarks: empty landmark set");
  auto z = z_e.dim() == 1 ? z_e.unsqueeze(0) : z_e;
  require(z.size(0) == 1, "nearest_landmarks: query one embedding at a time");
  torch::NoGradGuard ng;
  auto sims = torch::matmul(unit_rows(z), unit_rows(lm.L).transpose(0, 1)).squeeze(0);
  return top_k(sims, k);
}

QueryResult nearest_samples(const torch::Tensor& z_e_all, const torch::Tensor& landmark,
                            int64_t k) {
  require(k >= 1, "nearest_samples: k must be positive");
  require(z_e_all.dim() == 2 && z_e_all.size(0) > 0, "nearest_samples: empty embeddings");
  auto l = landmark.dim() == 1 ? landmark.unsqueeze(0) : landmark;
  require(l.size(0) == 1, "nearest_samples: query one landmark at a time");
  torch::NoGradGuard ng;
  auto sims = torch::matmul(unit_rows(z_e_all), unit_rows(l).transpose(0, 1)).squeeze(1);
  return top_k(sims, k);
}

}  // namespace txai
