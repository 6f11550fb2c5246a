#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "timex/config.hpp"
#include "timex/dataset.hpp"
#include "timex/explain_io.hpp"
#include "timex/explainer.hpp"
#include "timex/landmarks.hpp"
#include "timex/manifest.hpp"
#include "timex/model.hpp"

namespace txai {

// Output root resolution: explicit value, else $TIMEX_OUT, else "runs".
std::filesystem::path resolve_output_root(const std::string& explicit_root = "");

// Canonical artifact layout of one fold directory.
struct RunPaths {
  std::filesystem::path fold_dir;
  std::filesystem::path checkpoints;
  std::filesystem::path explanations;
  std::filesystem::path metrics;
  std::filesystem::path plots;
  std::filesystem::path manifest;  // fold_dir / "manifest.json"
};

RunPaths run_paths(const std::filesystem::path& root, const std::string& name, int64_t fold);

// Pipeline driver for one fold. Every stage writes its artifacts plus a
// manifest entry (stage config hash + input hashes + artifact hashes) and is
// skipped on re-runs while those hashes still match, so interrupted or
// repeated invocations resume instead of recomputing. Fold i regenerates the
// dataset with seed + i; all stage seeds derive from that fold seed.
class FoldRunner {
 public:
  FoldRunner(const ExperimentConfig& cfg, int64_t fold,
             const std::filesystem::path& root, bool force = false,
             bool verbose = false);

  const RunPaths& paths() const { return paths_; }
  uint64_t fold_seed() const { return cfg_.seed + static_cast<uint64_t>(fold_); }
  const ExperimentConfig& config() const { return cfg_; }

  // Canonical artifact locations inside this fold directory; their existence
  // is the prerequisite contract between CLI subcommands.
  std::filesystem::path dataset_path() const;
  std::filesystem::path predictor_path() const;
  std::filesystem::path explainer_path(const std::string& variant = "") const;
  std::filesystem::path explanations_path(const std::string& variant = "") const;
  std::filesystem::path explainer_history_path(const std::string& variant = "") const;

  // Stage entry points; each returns the primary artifact path (or the
  // metrics JSON) after ensuring it is up to date.
  std::filesystem::path ensure_dataset();
  std::filesystem::path ensure_predictor();
  // Variants (ablations, r-sweep points) carry a filename suffix and their
  // own config; the default variant trains cfg.explainer as-is.
  std::filesystem::path ensure_explainer(const std::string& variant = "",
                                         std::optional<ExplainerConfig> override_cfg = std::nullopt);
  std::filesystem::path ensure_explanations(const std::string& variant = "");
  nlohmann::json evaluate_stage(const std::string& variant = "");
  nlohmann::json occlusion_stage();
  nlohmann::json landmark_stage();
  nlohmann::json sweep_r_stage();

  // Lazily loaded pipeline objects (stages run on demand).
  const LabeledDataset& dataset();
  const ReferenceModel& predictor();
  const ExplainerModel& explainer(const std::string& variant = "");
  const LandmarkSet& landmarks(const std::string& variant = "");
  ExplanationSet explanations(const std::string& variant = "");

  // Reference-model quality on the test split (written by ensure_predictor).
  nlohmann::json predictor_metrics();

 private:
  struct StageKey {
    std::string name;
    nlohmann::json config;
    std::vector<std::pair<std::string, std::string>> inputs;  // (label, sha)
  };

  bool stage_fresh(const StageKey& key, const std::vector<std::filesystem::path>& artifacts) const;
  void record_stage(const StageKey& key, const std::vector<std::filesystem::path>& artifacts);
  std::string rel(const std::filesystem::path& p) const;
  void save_manifest();
  nlohmann::json read_metrics(const std::filesystem::path& p) const;
  void write_metrics(const std::filesystem::path& p, const nlohmann::json& j) const;
  ExplainerConfig variant_config(const std::string& variant,
                                 const std::optional<ExplainerConfig>& override_cfg) const;

  ExperimentConfig cfg_;
  int64_t fold_;
  bool force_;
  bool verbose_;
  RunPaths paths_;
  Manifest man_;
  std::optional<LabeledDataset> ds_;
  std::optional<ReferenceModel> ref_;
  std::map<std::string, std::pair<ExplainerModel, LandmarkSet>> ex_;
};

// Cross-fold aggregation: reads the per-fold metrics of `folds` completed
// folds, writes <root>/<name>/report/{summary.json,summary.txt,folds.tsv}
// plus mean occlusion/r-sweep plots, and returns the summary JSON.
nlohmann::json write_report(const ExperimentConfig& cfg, const std::filesystem::path& root);

// Published explanation-quality reference values (AUPRC/AUP/AUR) for the
// summary table; empty object for kinds without one.
nlohmann::json published_reference(SyntheticKind kind);

}  // namespace txai
