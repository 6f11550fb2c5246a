#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "timex/explainer.hpp"
#include "timex/model.hpp"

namespace txai {

// Self-describing checkpoint container: a magic line, a one-line JSON header
// (kind, config, extra metadata, and the array table with shapes), a
// terminating "end" line, then the named arrays' float32 little-endian
// payloads concatenated in table order.
struct Archive {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> arrays;
};

void save_archive(const Archive& a, const std::filesystem::path& path);
Archive load_archive(const std::filesystem::path& path);

nlohmann::json encoder_config_to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// All parameters and buffers of a module, prefixed names, registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_tensors(
    const torch::nn::Module& m, const std::string& prefix = "");

// Copies arrays into the module's parameters/buffers by name; every name on
// both sides must match exactly.
void load_named_tensors(torch::nn::Module& m,
                        const std::vector<std::pair<std::string, torch::Tensor>>& arrays,
                        const std::string& prefix = "");

// Digest over name-sorted parameter/buffer bytes; detects any weight change.
std::string weights_sha256(
    const std::vector<std::pair<std::string, torch::Tensor>>& arrays);
std::string weights_sha256(const torch::nn::Module& m);

void save_reference_model(const ReferenceModel& m, const std::filesystem::path& path,
                          const nlohmann::json& extra = nlohmann::json::object());
ReferenceModel load_reference_model(const std::filesystem::path& path,
                                    nlohmann::json* extra_out = nullptr);

nlohmann::json loss_config_to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);

// Explainer checkpoints carry the three towers, the baseline fill
// statistics, and the landmark set (possibly empty), so inference needs no
// other artifact.
void save_explainer(const ExplainerModel& ex, const LandmarkSet& lm,
                    const std::filesystem::path& path,
                    const nlohmann::json& extra = nlohmann::json::object());
std::pair<ExplainerModel, LandmarkSet> load_explainer(
    const std::filesystem::path& path, nlohmann::json* extra_out = nullptr);

}  // namespace txai
