#include "timex/config.hpp"

#include <fstream>
#include <set>

#include "timex/common.hpp"

namespace txai {

namespace {

using nlohmann::json;

// All schema errors carry the dotted path of the offending key.
[[noreturn]] void bad(const std::string& path, const std::string& what) {
  fail("config: " + path + ": " + what);
}

void check_object(const json& obj, const std::string& path,
                  const std::set<std::string>& allowed) {
  if (!obj.is_object()) bad(path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) bad(path.empty() ? key : path + "." + key, "unknown key");
  }
}

void overlay_num(const json& obj, const std::string& path, const char* key, double& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj[key];
  if (!v.is_number()) bad(path + key, "expected a number");
  out = v.get<double>();
}

void overlay_int(const json& obj, const std::string& path, const char* key, int64_t& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj[key];
  if (!v.is_number_integer() && !v.is_number_unsigned()) bad(path + key, "expected an integer");
  out = v.get<int64_t>();
}

void overlay_bool(const json& obj, const std::string& path, const char* key, bool& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj[key];
  if (!v.is_boolean()) bad(path + key, "expected a boolean");
  out = v.get<bool>();
}

void overlay_str(const json& obj, const std::string& path, const char* key, std::string& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj[key];
  if (!v.is_string()) bad(path + key, "expected a string");
  out = v.get<std::string>();
}

void overlay_num_list(const json& obj, const std::string& path, const char* key,
                      std::vector<double>& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj[key];
  if (!v.is_array() || v.empty()) bad(path + key, "expected a non-empty array of numbers");
  std::vector<double> vals;
  for (const auto& e : v) {
    if (!e.is_number()) bad(path + key, "expected a non-empty array of numbers");
    vals.push_back(e.get<double>());
  }
  out = std::move(vals);
}

void overlay_train(const json& obj, const std::string& path, TrainConfig& tc) {
  check_object(obj, path,
               {"lr", "weight_decay", "epochs", "batch_size", "scheduler", "warmup_epochs",
                "scheduler_patience", "max_lr_drops", "early_stop_patience"});
  const std::string p = path + ".";
  overlay_num(obj, p, "lr", tc.lr);
  overlay_num(obj, p, "weight_decay", tc.weight_decay);
  overlay_int(obj, p, "epochs", tc.epochs);
  overlay_int(obj, p, "batch_size", tc.batch_size);
  overlay_bool(obj, p, "scheduler", tc.scheduler);
  overlay_int(obj, p, "warmup_epochs", tc.warmup_epochs);
  overlay_int(obj, p, "scheduler_patience", tc.scheduler_patience);
  overlay_int(obj, p, "max_lr_drops", tc.max_lr_drops);
  overlay_int(obj, p, "early_stop_patience", tc.early_stop_patience);
}

void overlay_loss(const json& obj, const std::string& path, LossConfig& lc) {
  check_object(obj, path,
               {"r", "lambda_lc", "lambda_e", "lambda_con", "tau", "distance_normalize", "n_neg"});
  const std::string p = path + ".";
  overlay_num(obj, p, "r", lc.r);
  overlay_num(obj, p, "lambda_lc", lc.lambda_lc);
  overlay_num(obj, p, "lambda_e", lc.lambda_e);
  overlay_num(obj, p, "lambda_con", lc.lambda_con);
  overlay_num(obj, p, "tau", lc.tau);
  overlay_bool(obj, p, "distance_normalize", lc.distance_normalize);
  overlay_int(obj, p, "n_neg", lc.n_neg);
}

void overlay_explainer(const json& obj, const std::string& path, ExplainerConfig& ec) {
  check_object(obj, path,
               {"loss", "ablation", "mask_mode", "lr", "weight_decay", "epochs", "batch_size",
                "scheduler", "warmup_epochs", "scheduler_patience", "max_lr_drops",
                "early_stop_patience", "train_landmarks", "n_landmarks", "landmark_warmup",
                "landmark_lr"});
  const std::string p = path + ".";
  if (obj.contains("loss")) overlay_loss(obj["loss"], path + ".loss", ec.loss);
  if (obj.contains("ablation")) {
    if (!obj["ablation"].is_string()) bad(p + "ablation", "expected a string");
    try {
      ec.ablation = ablation_from_string(obj["ablation"].get<std::string>());
    } catch (const std::exception& e) {
      bad(p + "ablation", e.what());
    }
  }
  if (obj.contains("mask_mode") && !obj["mask_mode"].is_null()) {
    if (!obj["mask_mode"].is_string()) bad(p + "mask_mode", "expected a string or null");
    try {
      ec.mask_mode = mask_mode_from_string(obj["mask_mode"].get<std::string>());
    } catch (const std::exception& e) {
      bad(p + "mask_mode", e.what());
    }
  }
  overlay_num(obj, p, "lr", ec.lr);
  overlay_num(obj, p, "weight_decay", ec.weight_decay);
  overlay_int(obj, p, "epochs", ec.epochs);
  overlay_int(obj, p, "batch_size", ec.batch_size);
  overlay_bool(obj, p, "scheduler", ec.scheduler);
  overlay_int(obj, p, "warmup_epochs", ec.warmup_epochs);
  overlay_int(obj, p, "scheduler_patience", ec.scheduler_patience);
  overlay_int(obj, p, "max_lr_drops", ec.max_lr_drops);
  overlay_int(obj, p, "early_stop_patience", ec.early_stop_patience);
  overlay_bool(obj, p, "train_landmarks", ec.train_landmarks);
  overlay_int(obj, p, "n_landmarks", ec.n_landmarks);
  overlay_int(obj, p, "landmark_warmup", ec.landmark_warmup);
  overlay_num(obj, p, "landmark_lr", ec.landmark_lr);
}

json train_to_json(const TrainConfig& tc) {
  return {{"lr", tc.lr},
          {"weight_decay", tc.weight_decay},
          {"epochs", tc.epochs},
          {"batch_size", tc.batch_size},
          {"scheduler", tc.scheduler},
          {"warmup_epochs", tc.warmup_epochs},
          {"scheduler_patience", tc.scheduler_patience},
          {"max_lr_drops", tc.max_lr_drops},
          {"early_stop_patience", tc.early_stop_patience}};
}

}  // namespace

ExperimentConfig default_experiment_config(SyntheticKind kind) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.name = to_string(kind);
  synthetic_shape(kind, &cfg.arch.t, &cfg.arch.d, &cfg.arch.c);
  cfg.arch.n_heads = 1;

  switch (kind) {
    case SyntheticKind::kFreqShapes:
      cfg.arch.d_h = 16;
      cfg.arch.num_layers = 1;
      cfg.arch.dropout = 0.1;
      cfg.arch.normalize_embedding = false;
      cfg.predictor.lr = 1e-3;
      cfg.predictor.weight_decay = 0.1;
      cfg.predictor.epochs = 100;
      cfg.explainer.lr = 1e-3;
      cfg.explainer.weight_decay = 1e-3;
      cfg.explainer.epochs = 50;
      cfg.explainer.scheduler = true;
      cfg.explainer.loss.distance_normalize = false;
      break;
    case SyntheticKind::kSeqCombUV:
      cfg.arch.d_h = 64;
      cfg.arch.num_layers = 2;
      cfg.arch.dropout = 0.25;
      cfg.arch.normalize_embedding = false;
      cfg.predictor.lr = 1e-3;
      cfg.predictor.weight_decay = 0.01;
      cfg.predictor.epochs = 200;
      cfg.explainer.lr = 1e-3;
      cfg.explainer.weight_decay = 1e-3;
      cfg.explainer.epochs = 50;
      cfg.explainer.scheduler = true;
      cfg.explainer.loss.distance_normalize = false;
      break;
    case SyntheticKind::kSeqCombMV:
      cfg.arch.d_h = 128;
      cfg.arch.num_layers = 2;
      cfg.arch.dropout = 0.25;
      cfg.arch.normalize_embedding = false;
      cfg.predictor.lr = 5e-4;
      cfg.predictor.weight_decay = 1e-3;
      cfg.predictor.epochs = 1000;
      cfg.explainer.lr = 1e-3;
      cfg.explainer.weight_decay = 1e-3;
      cfg.explainer.epochs = 100;
      cfg.explainer.scheduler = false;
      cfg.explainer.loss.distance_normalize = false;
      break;
    case SyntheticKind::kLowVar:
      cfg.arch.d_h = 32;
      cfg.arch.num_layers = 1;
      cfg.arch.dropout = 0.25;
      cfg.arch.normalize_embedding = true;
      cfg.predictor.lr = 1e-3;
      cfg.predictor.weight_decay = 0.01;
      cfg.predictor.epochs = 120;
      cfg.explainer.lr = 3e-3;
      cfg.explainer.weight_decay = 1e-4;
      cfg.explainer.epochs = 100;
      cfg.explainer.scheduler = false;
      cfg.explainer.loss.distance_normalize = true;
      break;
  }
  cfg.predictor.batch_size = 64;
  cfg.explainer.batch_size = 64;
  return cfg;
}

ExperimentConfig experiment_config_from_json(const json& doc) {
  check_object(doc, "",
               {"name", "dataset", "folds", "seed", "arch", "predictor", "explainer", "eval"});
  if (!doc.contains("dataset")) bad("dataset", "required");
  const auto& ds = doc["dataset"];
  check_object(ds, "dataset", {"kind", "n", "split"});
  if (!ds.contains("kind") || !ds["kind"].is_string()) bad("dataset.kind", "required string");
  SyntheticKind kind;
  try {
    kind = synthetic_kind_from_string(ds["kind"].get<std::string>());
  } catch (const std::exception& e) {
    bad("dataset.kind", e.what());
  }

  ExperimentConfig cfg = default_experiment_config(kind);
  overlay_str(doc, "", "name", cfg.name);
  overlay_int(ds, "dataset.", "n", cfg.n);
  if (ds.contains("split")) {
    const auto& sp = ds["split"];
    check_object(sp, "dataset.split", {"train", "val", "test"});
    overlay_int(sp, "dataset.split.", "train", cfg.split.train_n);
    overlay_int(sp, "dataset.split.", "val", cfg.split.val_n);
    overlay_int(sp, "dataset.split.", "test", cfg.split.test_n);
  }
  overlay_int(doc, "", "folds", cfg.folds);
  if (doc.contains("seed")) {
    const auto& v = doc["seed"];
    if (!v.is_number_integer() && !v.is_number_unsigned()) bad("seed", "expected an integer");
    if (v.is_number_integer() && v.get<int64_t>() < 0) bad("seed", "must be nonnegative");
    cfg.seed = v.get<uint64_t>();
  }
  if (doc.contains("arch")) {
    const auto& a = doc["arch"];
    check_object(a, "arch", {"d_h", "num_layers", "n_heads", "dropout", "normalize_embedding"});
    overlay_int(a, "arch.", "d_h", cfg.arch.d_h);
    overlay_int(a, "arch.", "num_layers", cfg.arch.num_layers);
    overlay_int(a, "arch.", "n_heads", cfg.arch.n_heads);
    overlay_num(a, "arch.", "dropout", cfg.arch.dropout);
    overlay_bool(a, "arch.", "normalize_embedding", cfg.arch.normalize_embedding);
  }
  if (doc.contains("predictor")) overlay_train(doc["predictor"], "predictor", cfg.predictor);
  if (doc.contains("explainer")) overlay_explainer(doc["explainer"], "explainer", cfg.explainer);
  if (doc.contains("eval")) {
    const auto& ev = doc["eval"];
    check_object(ev, "eval", {"occlusion_fractions", "r_sweep", "landmark_k", "n_eps"});
    overlay_num_list(ev, "eval.", "occlusion_fractions", cfg.eval.occlusion_fractions);
    overlay_num_list(ev, "eval.", "r_sweep", cfg.eval.r_sweep);
    overlay_int(ev, "eval.", "landmark_k", cfg.eval.landmark_k);
    if (ev.contains("n_eps") && !ev["n_eps"].is_null()) {
      int64_t n_eps = 0;
      overlay_int(ev, "eval.", "n_eps", n_eps);
      cfg.eval.n_eps = n_eps;
    }
  }

  validate_experiment_config(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail("config: invalid JSON in " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(doc);
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
  json ex{{"loss",
           {{"r", cfg.explainer.loss.r},
            {"lambda_lc", cfg.explainer.loss.lambda_lc},
            {"lambda_e", cfg.explainer.loss.lambda_e},
            {"lambda_con", cfg.explainer.loss.lambda_con},
            {"tau", cfg.explainer.loss.tau},
            {"distance_normalize", cfg.explainer.loss.distance_normalize},
            {"n_neg", cfg.explainer.loss.n_neg}}},
          {"ablation", to_string(cfg.explainer.ablation)},
          {"mask_mode", cfg.explainer.mask_mode ? json(to_string(*cfg.explainer.mask_mode))
                                                : json(nullptr)},
          {"lr", cfg.explainer.lr},
          {"weight_decay", cfg.explainer.weight_decay},
          {"epochs", cfg.explainer.epochs},
          {"batch_size", cfg.explainer.batch_size},
          {"scheduler", cfg.explainer.scheduler},
          {"warmup_epochs", cfg.explainer.warmup_epochs},
          {"scheduler_patience", cfg.explainer.scheduler_patience},
          {"max_lr_drops", cfg.explainer.max_lr_drops},
          {"early_stop_patience", cfg.explainer.early_stop_patience},
          {"train_landmarks", cfg.explainer.train_landmarks},
          {"n_landmarks", cfg.explainer.n_landmarks},
          {"landmark_warmup", cfg.explainer.landmark_warmup},
          {"landmark_lr", cfg.explainer.landmark_lr}};
  return {{"name", cfg.name},
          {"dataset",
           {{"kind", to_string(cfg.kind)},
            {"n", cfg.n},
            {"split",
             {{"train", cfg.split.train_n},
              {"val", cfg.split.val_n},
              {"test", cfg.split.test_n}}}}},
          {"folds", cfg.folds},
          {"seed", cfg.seed},
          {"arch",
           {{"d_h", cfg.arch.d_h},
            {"num_layers", cfg.arch.num_layers},
            {"n_heads", cfg.arch.n_heads},
            {"dropout", cfg.arch.dropout},
            {"normalize_embedding", cfg.arch.normalize_embedding}}},
          {"predictor", train_to_json(cfg.predictor)},
          {"explainer", std::move(ex)},
          {"eval",
           {{"occlusion_fractions", cfg.eval.occlusion_fractions},
            {"r_sweep", cfg.eval.r_sweep},
            {"landmark_k", cfg.eval.landmark_k},
            {"n_eps", cfg.eval.n_eps ? json(*cfg.eval.n_eps) : json(nullptr)}}}};
}

void validate_experiment_config(const ExperimentConfig& cfg) {
  if (cfg.name.empty()) bad("name", "must be non-empty");
  if (cfg.name.find('/') != std::string::npos || cfg.name.find("..") != std::string::npos) {
    bad("name", "must be a plain directory name");
  }
  if (cfg.n <= 0) bad("dataset.n", "must be positive");
  if (cfg.split.train_n <= 0 || cfg.split.val_n <= 0 || cfg.split.test_n <= 0) {
    bad("dataset.split", "all split sizes must be positive");
  }
  if (cfg.split.train_n + cfg.split.val_n + cfg.split.test_n > cfg.n) {
    bad("dataset.split", "split sizes exceed dataset.n");
  }
  if (cfg.folds < 1) bad("folds", "must be >= 1");
  if (cfg.arch.d_h <= 0) bad("arch.d_h", "must be positive");
  if (cfg.arch.num_layers <= 0) bad("arch.num_layers", "must be positive");
  if (cfg.arch.n_heads <= 0 || cfg.arch.d_h % cfg.arch.n_heads != 0) {
    bad("arch.n_heads", "must be positive and divide d_h");
  }
  if (cfg.arch.dropout < 0 || cfg.arch.dropout >= 1) bad("arch.dropout", "must lie in [0,1)");
  if (cfg.predictor.lr <= 0) bad("predictor.lr", "must be positive");
  if (cfg.predictor.weight_decay < 0) bad("predictor.weight_decay", "must be nonnegative");
  if (cfg.predictor.epochs < 0) bad("predictor.epochs", "must be nonnegative");
  if (cfg.predictor.batch_size <= 0) bad("predictor.batch_size", "must be positive");
  if (cfg.explainer.lr <= 0) bad("explainer.lr", "must be positive");
  if (cfg.explainer.weight_decay < 0) bad("explainer.weight_decay", "must be nonnegative");
  if (cfg.explainer.epochs < 0) bad("explainer.epochs", "must be nonnegative");
  if (cfg.explainer.batch_size <= 0) bad("explainer.batch_size", "must be positive");
  if (cfg.explainer.loss.r <= 0 || cfg.explainer.loss.r >= 1) {
    bad("explainer.loss.r", "must lie in (0,1)");
  }
  if (cfg.explainer.loss.tau <= 0) bad("explainer.loss.tau", "must be positive");
  if (cfg.explainer.loss.lambda_lc < 0 || cfg.explainer.loss.lambda_e < 0 ||
      cfg.explainer.loss.lambda_con < 0) {
    bad("explainer.loss", "lambda weights must be nonnegative");
  }
  if (cfg.explainer.loss.n_neg <= 0) bad("explainer.loss.n_neg", "must be positive");
  if (cfg.explainer.n_landmarks < 0) bad("explainer.n_landmarks", "must be nonnegative");
  if (cfg.explainer.landmark_warmup < 0) bad("explainer.landmark_warmup", "must be nonnegative");
  if (cfg.explainer.landmark_lr <= 0) bad("explainer.landmark_lr", "must be positive");
  if (cfg.explainer.mask_mode == MaskMode::kAttentionDirect && cfg.arch.d > 1) {
    bad("explainer.mask_mode", "attention+direct applies to univariate datasets only");
  }
  for (double f : cfg.eval.occlusion_fractions) {
    if (f < 0 || f >= 1) bad("eval.occlusion_fractions", "entries must lie in [0,1)");
  }
  for (double r : cfg.eval.r_sweep) {
    if (r <= 0 || r >= 1) bad("eval.r_sweep", "entries must lie in (0,1)");
  }
  if (cfg.eval.landmark_k <= 0) bad("eval.landmark_k", "must be positive");
  if (cfg.eval.n_eps && *cfg.eval.n_eps < 0) bad("eval.n_eps", "must be nonnegative");
}

}  // namespace txai
