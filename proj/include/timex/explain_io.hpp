#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "timex/explainer.hpp"
#include "timex/landmarks.hpp"
#include "timex/model.hpp"

namespace txai {

// Explanations for a batch of samples: continuous attributions, the discrete
// masks actually used, explanation embeddings, and the predicted labels of
// the reference model and the surrogate.
struct ExplanationSet {
  nlohmann::json meta;  // free-form provenance (dataset, fold, config hash)
  torch::Tensor ids;    // (N,) int64 sample ids
  torch::Tensor p;      // (N,T,d) float32 attributions in [0,1]
  torch::Tensor m;      // (N,T,d) float32 binary masks
  torch::Tensor z_e;    // (N,d_z) float32 explanation embeddings
  torch::Tensor y_ref;  // (N,) int64 reference predicted labels
  torch::Tensor y_exp;  // (N,) int64 surrogate predicted labels

  int64_t size() const { return ids.defined() ? ids.size(0) : 0; }
  void validate() const;
};

// Runs the explainer over a dataset slice and collects the record set.
ExplanationSet explain_dataset(const ReferenceModel& ref, const ExplainerModel& ex,
                               const torch::Tensor& x, const torch::Tensor& ids,
                               int64_t batch = 256);

// Single-file binary dump: magic line, one-line JSON header, then per-record
// payload (id, p, bitpacked mask, z_e, both labels). Round-trips exactly.
void save_explanations(const ExplanationSet& es, const std::filesystem::path& path);
ExplanationSet load_explanations(const std::filesystem::path& path);

// Bitpacking used for the mask payload: row-major cells, LSB-first within
// each byte. Exposed for tests.
std::vector<uint8_t> pack_bits(const torch::Tensor& binary);
torch::Tensor unpack_bits(const std::vector<uint8_t>& bytes, torch::IntArrayRef shape);

// Landmark analysis dump: landmark rows, occupancy, retained ids, and the
// top-k most similar sample explanations per retained landmark.
nlohmann::json landmark_report(const LandmarkSet& lm, const torch::Tensor& z_e_all,
                               const torch::Tensor& sample_ids, int64_t k);
void save_landmark_report(const nlohmann::json& report, const std::filesystem::path& path);
nlohmann::json load_landmark_report(const std::filesystem::path& path);

}  // namespace txai
