#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "timex/dataset.hpp"
#include "timex/explainer.hpp"
#include "timex/model.hpp"
#include "timex/synthetic.hpp"
#include "timex/train_predictor.hpp"

namespace txai {

// Evaluation settings shared by the evaluate/occlusion/landmarks/sweep-r
// stages.
struct EvalSettings {
  std::vector<double> occlusion_fractions{0.5, 0.6, 0.75, 0.9};
  std::vector<double> r_sweep{0.4, 0.5, 0.6, 0.75};
  int64_t landmark_k = 3;
  // Occupancy threshold for landmark filtration; unset means
  // max(2, n_train / (10 * n_landmarks)).
  std::optional<int64_t> n_eps;
};

// One declarative experiment: dataset, architecture, both training stages,
// and evaluation settings. Seeds fully determine a run; fold i regenerates
// the dataset with seed + i.
struct ExperimentConfig {
  std::string name;
  SyntheticKind kind = SyntheticKind::kFreqShapes;
  int64_t n = 6100;
  SplitSpec split;
  int64_t folds = 5;
  uint64_t seed = 0;
  EncoderConfig arch;  // t/d/c are pinned by the dataset kind
  TrainConfig predictor;
  ExplainerConfig explainer;
  EvalSettings eval;
};

// Published training settings per benchmark; the baseline every loaded
// config starts from.
ExperimentConfig default_experiment_config(SyntheticKind kind);

// Overlays a JSON document onto the kind's defaults. Unknown keys, type
// mismatches, and out-of-range values fail fast with the offending key path
// (e.g. "explainer.loss.r: must lie in (0,1)"). `dataset.kind` is required.
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Fully resolved round-trippable form; written into run manifests.
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);

// Range/consistency checks shared by every entry point; messages carry the
// offending key path.
void validate_experiment_config(const ExperimentConfig& cfg);

}  // namespace txai
