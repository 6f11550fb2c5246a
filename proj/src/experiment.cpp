#include "timex/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "timex/baselines.hpp"
#include "timex/checkpoint.hpp"
#include "timex/common.hpp"
#include "timex/metrics.hpp"
#include "timex/occlusion.hpp"
#include "timex/plots.hpp"
#include "timex/train_predictor.hpp"

namespace txai {

namespace {

using nlohmann::json;

std::string variant_suffix(const std::string& variant) {
  if (variant.empty()) return "";
  for (char c : variant) {
    require(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-',
            "variant names may contain only [A-Za-z0-9_.-]: '" + variant + "'");
  }
  return "_" + variant;
}

std::string r_variant(double r) {
  std::ostringstream ss;
  ss << "r" << std::fixed << std::setprecision(2) << r;
  return ss.str();
}

json saliency_to_json(const SaliencySummary& s) {
  return {{"auprc", s.auprc}, {"aup", s.aup}, {"aur", s.aur}, {"iou", s.iou},
          {"n_scored", s.n_scored}};
}

json mean_se_json(const std::vector<double>& vals) {
  auto ms = crossval_aggregate(vals);
  return {{"mean", ms.mean}, {"se", ms.se}, {"folds", vals}};
}

// Gradient saliency over a large set, chunked to bound the autograd graph.
torch::Tensor gradient_saliency_batched(const ReferenceModel& ref, const torch::Tensor& x,
                                        int64_t batch = 128) {
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < x.size(0); i += batch) {
    out.push_back(gradient_saliency(ref, x.slice(0, i, std::min(i + batch, x.size(0)))));
  }
  return torch::cat(out, 0);
}

}  // namespace

std::filesystem::path resolve_output_root(const std::string& explicit_root) {
  if (!explicit_root.empty()) return explicit_root;
  if (const char* env = std::getenv("TIMEX_OUT"); env && *env) return env;
  return "runs";
}

RunPaths run_paths(const std::filesystem::path& root, const std::string& name, int64_t fold) {
  RunPaths p;
  p.fold_dir = root / name / ("fold" + std::to_string(fold));
  p.checkpoints = p.fold_dir / "checkpoints";
  p.explanations = p.fold_dir / "explanations";
  p.metrics = p.fold_dir / "metrics";
  p.plots = p.fold_dir / "plots";
  p.manifest = p.fold_dir / "manifest.json";
  return p;
}

FoldRunner::FoldRunner(const ExperimentConfig& cfg, int64_t fold,
                       const std::filesystem::path& root, bool force, bool verbose)
    : cfg_(cfg), fold_(fold), force_(force), verbose_(verbose) {
  validate_experiment_config(cfg_);
  require(fold >= 0 && fold < cfg.folds, "fold index out of range");
  paths_ = run_paths(root, cfg_.name, fold_);
  for (const auto& dir : {paths_.checkpoints, paths_.explanations, paths_.metrics, paths_.plots}) {
    std::filesystem::create_directories(dir);
  }
  if (std::filesystem::exists(paths_.manifest)) {
    man_ = read_manifest(paths_.manifest);
  }
  man_.config = json{{"experiment", experiment_config_to_json(cfg_)}, {"fold", fold_}};
}

std::string FoldRunner::rel(const std::filesystem::path& p) const {
  return p.lexically_relative(paths_.fold_dir).generic_string();
}

std::filesystem::path FoldRunner::dataset_path() const {
  return paths_.checkpoints / "dataset.bin";
}

std::filesystem::path FoldRunner::predictor_path() const {
  return paths_.checkpoints / "predictor.ckpt";
}

std::filesystem::path FoldRunner::explainer_path(const std::string& variant) const {
  return paths_.checkpoints / ("explainer" + variant_suffix(variant) + ".ckpt");
}

std::filesystem::path FoldRunner::explanations_path(const std::string& variant) const {
  return paths_.explanations / ("test" + variant_suffix(variant) + ".expl");
}

std::filesystem::path FoldRunner::explainer_history_path(const std::string& variant) const {
  return paths_.metrics / ("explainer_history" + variant_suffix(variant) + ".json");
}

bool FoldRunner::stage_fresh(const StageKey& key,
                             const std::vector<std::filesystem::path>& artifacts) const {
  if (force_) return false;
  if (!man_.extra.contains("stages") || !man_.extra["stages"].contains(key.name)) return false;
  const auto& e = man_.extra["stages"][key.name];
  if (!e.contains("config_hash") || e["config_hash"] != sha256_hex(key.config.dump())) return false;
  json in = json::object();
  for (const auto& [label, sha] : key.inputs) in[label] = sha;
  if (!e.contains("inputs") || e["inputs"] != in) return false;
  for (const auto& a : artifacts) {
    if (!std::filesystem::exists(a)) return false;
  }
  return true;
}

void FoldRunner::record_stage(const StageKey& key,
                              const std::vector<std::filesystem::path>& artifacts) {
  json entry;
  entry["config_hash"] = sha256_hex(key.config.dump());
  entry["inputs"] = json::object();
  for (const auto& [label, sha] : key.inputs) entry["inputs"][label] = sha;
  entry["artifacts"] = json::object();
  for (const auto& a : artifacts) {
    const std::string r = rel(a);
    const std::string h = sha256_file(a);
    entry["artifacts"][r] = h;
    bool found = false;
    for (auto& [path, sha] : man_.artifacts) {
      if (path == r) {
        sha = h;
        found = true;
        break;
      }
    }
    if (!found) man_.artifacts.emplace_back(r, h);
  }
  if (!man_.extra.contains("stages")) man_.extra["stages"] = json::object();
  man_.extra["stages"][key.name] = std::move(entry);
  save_manifest();
}

void FoldRunner::save_manifest() { write_manifest(man_, paths_.manifest); }

json FoldRunner::read_metrics(const std::filesystem::path& p) const {
  std::ifstream in(p);
  require(in.good(), "cannot open metrics file " + p.string());
  json j;
  in >> j;
  return j;
}

void FoldRunner::write_metrics(const std::filesystem::path& p, const json& j) const {
  std::ofstream out(p);
  require(out.good(), "cannot open metrics file " + p.string());
  out << j.dump(2) << "\n";
  require(out.good(), "write failed for " + p.string());
}

std::filesystem::path FoldRunner::ensure_dataset() {
  const auto art = paths_.checkpoints / "dataset.bin";
  const auto full = experiment_config_to_json(cfg_);
  StageKey key{"gen-data", json{{"dataset", full["dataset"]}, {"seed", fold_seed()}}, {}};
  if (stage_fresh(key, {art})) return art;

  if (verbose_) std::cerr << "[fold " << fold_ << "] gen-data: generating " << cfg_.name << "\n";
  SyntheticConfig sc;
  sc.kind = cfg_.kind;
  sc.n = cfg_.n;
  sc.seed = fold_seed();
  sc.split = cfg_.split;
  sc.do_split = true;
  auto ds = generate_synthetic(sc);
  save_dataset(ds, art.string());
  ds_ = std::move(ds);
  record_stage(key, {art});
  return art;
}

const LabeledDataset& FoldRunner::dataset() {
  if (!ds_) {
    auto path = ensure_dataset();
    if (!ds_) ds_ = load_dataset(path.string());
  }
  return *ds_;
}

std::filesystem::path FoldRunner::ensure_predictor() {
  const auto ds_path = ensure_dataset();
  const auto art = paths_.checkpoints / "predictor.ckpt";
  const auto met = paths_.metrics / "predictor.json";
  const auto full = experiment_config_to_json(cfg_);
  StageKey key{"train-predictor",
               json{{"arch", full["arch"]}, {"train", full["predictor"]}, {"seed", fold_seed()}},
               {{"dataset", sha256_file(ds_path)}}};
  if (stage_fresh(key, {art, met})) return art;

  if (verbose_) std::cerr << "[fold " << fold_ << "] train-predictor: training\n";
  TrainConfig tc = cfg_.predictor;
  tc.seed = fold_seed();
  tc.verbose = verbose_;
  TrainHistory hist;
  auto ref = train_predictor(dataset(), cfg_.arch, tc, &hist);
  save_reference_model(ref, art, json{{"fold", fold_}, {"best_epoch", hist.best_epoch}});

  auto m = evaluate_predictor(ref, dataset(), Split::kTest);
  write_metrics(met, json{{"fold", fold_},
                          {"f1", m.f1},
                          {"auprc", m.auprc},
                          {"auroc", m.auroc},
                          {"best_epoch", hist.best_epoch},
                          {"best_val_loss", hist.best_val_loss},
                          {"epochs_ran", hist.epochs.size()}});
  ref_ = std::move(ref);
  record_stage(key, {art, met});
  return art;
}

const ReferenceModel& FoldRunner::predictor() {
  if (!ref_) {
    auto path = ensure_predictor();
    if (!ref_) ref_ = load_reference_model(path);
  }
  return *ref_;
}

nlohmann::json FoldRunner::predictor_metrics() {
  ensure_predictor();
  return read_metrics(paths_.metrics / "predictor.json");
}

ExplainerConfig FoldRunner::variant_config(
    const std::string& variant, const std::optional<ExplainerConfig>& override_cfg) const {
  ExplainerConfig ec = override_cfg ? *override_cfg : cfg_.explainer;
  ec.seed = fold_seed();
  ec.verbose = verbose_;
  (void)variant;
  return ec;
}

std::filesystem::path FoldRunner::ensure_explainer(const std::string& variant,
                                                   std::optional<ExplainerConfig> override_cfg) {
  const auto sfx = variant_suffix(variant);
  const auto pred_path = ensure_predictor();
  const auto ds_path = paths_.checkpoints / "dataset.bin";
  const auto art = paths_.checkpoints / ("explainer" + sfx + ".ckpt");
  const auto hist_path = paths_.metrics / ("explainer_history" + sfx + ".json");

  ExplainerConfig ec = variant_config(variant, override_cfg);
  ExperimentConfig probe = cfg_;
  probe.explainer = ec;
  StageKey key{"train-explainer" + sfx,
               json{{"explainer", experiment_config_to_json(probe)["explainer"]},
                    {"seed", fold_seed()}},
               {{"dataset", sha256_file(ds_path)}, {"predictor", sha256_file(pred_path)}}};
  if (stage_fresh(key, {art, hist_path})) return art;

  if (verbose_) {
    std::cerr << "[fold " << fold_ << "] train-explainer" << sfx << ": training ("
              << to_string(ec.ablation) << ", r=" << ec.loss.r << ")\n";
  }
  ExplainerHistory hist;
  LandmarkSet lm;
  auto ex = train_explainer(predictor(), dataset(), ec, &hist, &lm);
  save_explainer(ex, lm, art, json{{"fold", fold_}, {"variant", variant}});

  json epochs = json::array();
  for (const auto& e : hist.epochs) {
    epochs.push_back({{"train_total", e.train_total},
                      {"val_total", e.val_total},
                      {"consistency", e.consistency},
                      {"lc", e.lc},
                      {"mask", e.mask},
                      {"con", e.con},
                      {"landmark", e.landmark},
                      {"lr", e.lr}});
  }
  write_metrics(hist_path, json{{"fold", fold_},
                                {"variant", variant},
                                {"best_epoch", hist.best_epoch},
                                {"best_val_loss", hist.best_val_loss},
                                {"epochs", std::move(epochs)}});
  ex_.insert_or_assign(variant, std::make_pair(std::move(ex), std::move(lm)));
  record_stage(key, {art, hist_path});
  return art;
}

const ExplainerModel& FoldRunner::explainer(const std::string& variant) {
  auto it = ex_.find(variant);
  if (it == ex_.end()) {
    const auto path = paths_.checkpoints / ("explainer" + variant_suffix(variant) + ".ckpt");
    if (!std::filesystem::exists(path)) {
      if (variant.empty()) {
        ensure_explainer();
      } else {
        fail("missing explainer checkpoint " + path.string() +
             "; run train-explainer for this variant first");
      }
      it = ex_.find(variant);
      if (it != ex_.end()) return it->second.first;
    }
    auto [ex, lm] = load_explainer(path);
    it = ex_.insert_or_assign(variant, std::make_pair(std::move(ex), std::move(lm))).first;
  }
  return it->second.first;
}

const LandmarkSet& FoldRunner::landmarks(const std::string& variant) {
  explainer(variant);
  return ex_.at(variant).second;
}

std::filesystem::path FoldRunner::ensure_explanations(const std::string& variant) {
  const auto sfx = variant_suffix(variant);
  const auto ex_path = paths_.checkpoints / ("explainer" + sfx + ".ckpt");
  if (variant.empty()) {
    ensure_explainer();
  } else {
    require(std::filesystem::exists(ex_path),
            "missing explainer checkpoint " + ex_path.string() +
                "; run train-explainer for this variant first");
  }
  const auto ds_path = ensure_dataset();
  const auto art = paths_.explanations / ("test" + sfx + ".expl");
  StageKey key{"explain" + sfx, json{{"split", "test"}},
               {{"dataset", sha256_file(ds_path)}, {"explainer", sha256_file(ex_path)}}};
  if (stage_fresh(key, {art})) return art;

  if (verbose_) std::cerr << "[fold " << fold_ << "] explain" << sfx << ": exporting test split\n";
  const auto& ds = dataset();
  auto idx = ds.index_tensor_of(Split::kTest);
  require(idx.numel() > 0, "explain: dataset has an empty test split");
  auto x_test = ds.X.index_select(0, idx);
  auto es = explain_dataset(predictor(), explainer(variant), x_test, idx);
  es.meta = json{{"name", cfg_.name},
                 {"kind", to_string(cfg_.kind)},
                 {"fold", fold_},
                 {"variant", variant},
                 {"split", "test"},
                 {"dataset_seed", fold_seed()}};
  save_explanations(es, art);
  record_stage(key, {art});
  return art;
}

ExplanationSet FoldRunner::explanations(const std::string& variant) {
  return load_explanations(ensure_explanations(variant));
}

nlohmann::json FoldRunner::evaluate_stage(const std::string& variant) {
  const auto sfx = variant_suffix(variant);
  const auto expl_path = ensure_explanations(variant);
  const auto ds_path = paths_.checkpoints / "dataset.bin";
  const auto pred_path = paths_.checkpoints / "predictor.ckpt";
  const auto met = paths_.metrics / ("evaluate" + sfx + ".json");
  std::vector<std::filesystem::path> arts{met};
  const int64_t n_plots = variant.empty() ? 3 : 0;
  for (int64_t i = 0; i < n_plots; ++i) {
    arts.push_back(paths_.plots / ("attribution_" + std::to_string(i) + ".svg"));
    arts.push_back(paths_.plots / ("attribution_" + std::to_string(i) + "_truth.svg"));
  }
  StageKey key{"evaluate" + sfx, json{{"grid", 1000}, {"plots", n_plots}},
               {{"explanations", sha256_file(expl_path)},
                {"dataset", sha256_file(ds_path)},
                {"predictor", sha256_file(pred_path)}}};
  if (stage_fresh(key, arts)) return read_metrics(met);

  if (verbose_) std::cerr << "[fold " << fold_ << "] evaluate" << sfx << ": scoring\n";
  const auto& ds = dataset();
  require(ds.has_q, "evaluate: dataset carries no ground-truth saliency");
  auto es = load_explanations(expl_path);
  auto idx = es.ids;
  auto q = ds.Q.index_select(0, idx);
  auto x_test = ds.X.index_select(0, idx);

  auto timex = saliency_metrics(es.p, q);
  auto rand_scores = random_explainer(x_test.sizes(), fold_seed() + 10007);
  auto random = saliency_metrics(rand_scores, q);
  auto grad_scores = gradient_saliency_batched(predictor(), x_test);
  auto gradient = saliency_metrics(grad_scores, q);

  // Agreement between the surrogate's predictions and the reference model on
  // the explained samples (diagnostic for the consistency objective).
  const double label_agreement = (es.y_ref == es.y_exp).to(torch::kFloat32).mean().item<double>();

  json out{{"fold", fold_},
           {"variant", variant},
           {"n_test", es.size()},
           {"label_agreement", label_agreement},
           {"methods",
            {{"timex", saliency_to_json(timex)},
             {"random", saliency_to_json(random)},
             {"gradient", saliency_to_json(gradient)}}}};
  write_metrics(met, out);

  for (int64_t i = 0; i < n_plots && i < es.size(); ++i) {
    write_heatmap_svg(paths_.plots / ("attribution_" + std::to_string(i) + ".svg"),
                      "attribution p, test sample " + std::to_string(i), es.p[i]);
    write_heatmap_svg(paths_.plots / ("attribution_" + std::to_string(i) + "_truth.svg"),
                      "ground truth, test sample " + std::to_string(i), q[i]);
  }
  record_stage(key, arts);
  return out;
}

nlohmann::json FoldRunner::occlusion_stage() {
  const auto expl_path = ensure_explanations();
  const auto pred_path = paths_.checkpoints / "predictor.ckpt";
  const auto met = paths_.metrics / "occlusion.json";
  const auto plot = paths_.plots / "occlusion.svg";
  StageKey key{"occlusion", json{{"fractions", cfg_.eval.occlusion_fractions}},
               {{"explanations", sha256_file(expl_path)},
                {"predictor", sha256_file(pred_path)}}};
  if (stage_fresh(key, {met, plot})) return read_metrics(met);

  if (verbose_) std::cerr << "[fold " << fold_ << "] occlusion: sweeping fractions\n";
  const auto& ds = dataset();
  auto es = load_explanations(expl_path);
  auto idx = es.ids;
  auto x_test = ds.X.index_select(0, idx);
  auto y_test = ds.y.index_select(0, idx);
  const auto& ref = predictor();
  const auto& stats = explainer().stats;
  const MaskMode mode = cfg_.arch.d == 1 ? MaskMode::kAttentionDirect : MaskMode::kDirect;

  auto timex = occlusion_curve(ref, x_test, y_test, es.p, cfg_.eval.occlusion_fractions, stats,
                               mode, fold_seed() + 20011);
  auto rand_scores = random_explainer(x_test.sizes(), fold_seed() + 20029);
  auto random = occlusion_curve(ref, x_test, y_test, rand_scores, cfg_.eval.occlusion_fractions,
                                stats, mode, fold_seed() + 20047);
  const double unoccluded =
      occlusion_auroc(ref, x_test, y_test, es.p, 0.0, stats, mode, fold_seed() + 20063);

  json out{{"fold", fold_},
           {"fractions", timex.fractions},
           {"timex", timex.auroc},
           {"random", random.auroc},
           {"unoccluded", unoccluded}};
  write_metrics(met, out);
  write_curves_svg(plot, "occlusion: reference AUROC vs fraction removed", "occluded fraction",
                   "AUROC", timex.fractions,
                   {{"timex", timex.auroc}, {"random", random.auroc}});
  record_stage(key, {met, plot});
  return out;
}

nlohmann::json FoldRunner::landmark_stage() {
  const auto ex_path = ensure_explainer();
  const auto ds_path = paths_.checkpoints / "dataset.bin";
  const auto met = paths_.metrics / "landmarks.json";
  const int64_t k = cfg_.eval.landmark_k;
  StageKey key{"landmarks",
               json{{"k", k}, {"n_eps", cfg_.eval.n_eps ? json(*cfg_.eval.n_eps) : json(nullptr)}},
               {{"explainer", sha256_file(ex_path)}, {"dataset", sha256_file(ds_path)}}};
  if (stage_fresh(key, {met})) return read_metrics(met);

  if (verbose_) std::cerr << "[fold " << fold_ << "] landmarks: filtering and reporting\n";
  const auto& ds = dataset();
  const auto& lm = landmarks();
  auto idx = ds.index_tensor_of(Split::kTrain);
  json out{{"fold", fold_}, {"total", lm.L.defined() ? lm.L.size(0) : 0}};
  if (!lm.L.defined() || lm.L.size(0) == 0) {
    out["kept"] = 0;
    out["n_eps"] = 0;
    out["report"] = landmark_report(LandmarkSet{torch::zeros({0, 1}), torch::zeros({0}, torch::kInt64), {}, 0},
                                    torch::zeros({0, 1}), torch::zeros({0}, torch::kInt64), k);
  } else {
    auto z_train = explanation_embeddings(explainer(), ds.X.index_select(0, idx));
    const int64_t n_eps = cfg_.eval.n_eps
                              ? *cfg_.eval.n_eps
                              : default_filtration_threshold(idx.numel(), lm.L.size(0));
    auto kept = filter_landmarks(lm.L, z_train, n_eps);
    out["kept"] = kept.L.size(0);
    out["n_eps"] = n_eps;
    out["report"] = landmark_report(kept, z_train, idx, k);
  }
  write_metrics(met, out);
  record_stage(key, {met});
  return out;
}

nlohmann::json FoldRunner::sweep_r_stage() {
  const auto met = paths_.metrics / "sweep_r.json";
  const auto plot = paths_.plots / "sweep_r.svg";

  // The sweep trains one explainer per r; landmarks are disabled there since
  // attribution quality is the only readout.
  std::vector<std::pair<std::string, std::filesystem::path>> inputs;
  for (double r : cfg_.eval.r_sweep) {
    ExplainerConfig ec = cfg_.explainer;
    ec.loss.r = r;
    ec.train_landmarks = false;
    const std::string variant = r_variant(r);
    ensure_explainer(variant, ec);
    inputs.emplace_back(variant, ensure_explanations(variant));
  }
  StageKey key{"sweep-r", json{{"r", cfg_.eval.r_sweep}}, {}};
  for (const auto& [variant, path] : inputs) key.inputs.emplace_back(variant, sha256_file(path));
  if (stage_fresh(key, {met, plot})) return read_metrics(met);

  if (verbose_) std::cerr << "[fold " << fold_ << "] sweep-r: scoring " << inputs.size() << " points\n";
  const auto& ds = dataset();
  require(ds.has_q, "sweep-r: dataset carries no ground-truth saliency");
  std::vector<double> auprc;
  for (const auto& [variant, path] : inputs) {
    auto es = load_explanations(path);
    auto q = ds.Q.index_select(0, es.ids);
    auprc.push_back(saliency_metrics(es.p, q).auprc);
  }
  json out{{"fold", fold_}, {"r", cfg_.eval.r_sweep}, {"auprc", auprc}};
  write_metrics(met, out);
  write_curves_svg(plot, "mask-rate sweep: explanation AUPRC vs r", "r", "AUPRC",
                   cfg_.eval.r_sweep, {{"timex", auprc}});
  record_stage(key, {met, plot});
  return out;
}

nlohmann::json published_reference(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kFreqShapes:
      return {{"auprc", 0.8324}, {"aup", 0.7219}, {"aur", 0.6381}};
    case SyntheticKind::kSeqCombUV:
      return {{"auprc", 0.7124}, {"aup", 0.9411}, {"aur", 0.3380}};
    case SyntheticKind::kSeqCombMV:
      return {{"auprc", 0.6878}, {"aup", 0.8326}, {"aur", 0.3872}};
    case SyntheticKind::kLowVar:
      return {{"auprc", 0.8673}, {"aup", 0.5451}, {"aur", 0.9004}};
  }
  return json::object();
}

nlohmann::json write_report(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  validate_experiment_config(cfg);
  const auto report_dir = root / cfg.name / "report";
  const auto plots_dir = report_dir / "plots";
  std::filesystem::create_directories(plots_dir);

  const char* kMethods[] = {"timex", "random", "gradient"};
  const char* kMetrics[] = {"auprc", "aup", "aur", "iou"};

  std::map<std::string, std::map<std::string, std::vector<double>>> vals;
  std::vector<double> f1s, aurocs;
  std::vector<json> occl, sweeps;
  std::ostringstream tsv;
  tsv << "dataset\tfold\tmethod\tauprc\taup\taur\tiou\n";

  for (int64_t fold = 0; fold < cfg.folds; ++fold) {
    const auto paths = run_paths(root, cfg.name, fold);
    const auto eval_path = paths.metrics / "evaluate.json";
    const auto pred_path = paths.metrics / "predictor.json";
    require(std::filesystem::exists(eval_path) && std::filesystem::exists(pred_path),
            "report: fold " + std::to_string(fold) +
                " is missing evaluate/predictor metrics; run the pipeline for it first");
    json ev, pr;
    {
      std::ifstream in(eval_path);
      in >> ev;
    }
    {
      std::ifstream in(pred_path);
      in >> pr;
    }
    f1s.push_back(pr["f1"].get<double>());
    aurocs.push_back(pr["auroc"].get<double>());
    for (const char* m : kMethods) {
      const auto& mm = ev["methods"][m];
      for (const char* metric : kMetrics) {
        vals[m][metric].push_back(mm[metric].get<double>());
      }
      tsv << cfg.name << "\t" << fold << "\t" << m;
      for (const char* metric : kMetrics) {
        tsv << "\t" << std::fixed << std::setprecision(4) << mm[metric].get<double>();
      }
      tsv << "\n";
    }
    if (auto p = paths.metrics / "occlusion.json"; std::filesystem::exists(p)) {
      std::ifstream in(p);
      json j;
      in >> j;
      occl.push_back(std::move(j));
    }
    if (auto p = paths.metrics / "sweep_r.json"; std::filesystem::exists(p)) {
      std::ifstream in(p);
      json j;
      in >> j;
      sweeps.push_back(std::move(j));
    }
  }

  json summary{{"name", cfg.name},
               {"kind", to_string(cfg.kind)},
               {"folds", cfg.folds},
               {"predictor", {{"f1", mean_se_json(f1s)}, {"auroc", mean_se_json(aurocs)}}},
               {"published", published_reference(cfg.kind)}};
  summary["methods"] = json::object();
  for (const char* m : kMethods) {
    json mj = json::object();
    for (const char* metric : kMetrics) mj[metric] = mean_se_json(vals[m][metric]);
    summary["methods"][m] = std::move(mj);
  }

  if (!occl.empty()) {
    const auto fractions = occl[0]["fractions"].get<std::vector<double>>();
    std::vector<double> tm(fractions.size(), 0), rm(fractions.size(), 0);
    for (const auto& j : occl) {
      require(j["fractions"].get<std::vector<double>>() == fractions,
              "report: occlusion fraction grids differ across folds");
      for (size_t i = 0; i < fractions.size(); ++i) {
        tm[i] += j["timex"][i].get<double>() / static_cast<double>(occl.size());
        rm[i] += j["random"][i].get<double>() / static_cast<double>(occl.size());
      }
    }
    summary["occlusion"] =
        json{{"fractions", fractions}, {"timex", tm}, {"random", rm}, {"folds", occl.size()}};
    write_curves_svg(plots_dir / "occlusion.svg",
                     "occlusion: mean reference AUROC over " + std::to_string(occl.size()) +
                         " fold(s)",
                     "occluded fraction", "AUROC", fractions,
                     {{"timex", tm}, {"random", rm}});
  }
  if (!sweeps.empty()) {
    const auto rs = sweeps[0]["r"].get<std::vector<double>>();
    std::vector<double> ys(rs.size(), 0);
    for (const auto& j : sweeps) {
      require(j["r"].get<std::vector<double>>() == rs,
              "report: r-sweep grids differ across folds");
      for (size_t i = 0; i < rs.size(); ++i) {
        ys[i] += j["auprc"][i].get<double>() / static_cast<double>(sweeps.size());
      }
    }
    summary["sweep_r"] = json{{"r", rs}, {"auprc", ys}, {"folds", sweeps.size()}};
    write_curves_svg(plots_dir / "sweep_r.svg", "mask-rate sweep: mean explanation AUPRC", "r",
                     "AUPRC", rs, {{"timex", ys}});
  }

  // Human-readable summary table.
  std::ostringstream txt;
  txt << "dataset " << cfg.name << " (" << to_string(cfg.kind) << "), " << cfg.folds
      << " fold(s)\n";
  txt << "predictor: F1 " << std::fixed << std::setprecision(4)
      << summary["predictor"]["f1"]["mean"].get<double>() << " +/- "
      << summary["predictor"]["f1"]["se"].get<double>() << ", AUROC "
      << summary["predictor"]["auroc"]["mean"].get<double>() << " +/- "
      << summary["predictor"]["auroc"]["se"].get<double>() << "\n\n";
  txt << std::left << std::setw(12) << "method" << std::right;
  for (const char* metric : kMetrics) txt << std::setw(18) << metric;
  txt << "\n";
  for (const char* m : kMethods) {
    txt << std::left << std::setw(12) << m << std::right;
    for (const char* metric : kMetrics) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4)
           << summary["methods"][m][metric]["mean"].get<double>() << " +/- "
           << std::setprecision(4) << summary["methods"][m][metric]["se"].get<double>();
      txt << std::setw(18) << cell.str();
    }
    txt << "\n";
  }
  if (!summary["published"].empty()) {
    txt << std::left << std::setw(12) << "published" << std::right;
    for (const char* metric : kMetrics) {
      std::ostringstream cell;
      if (summary["published"].contains(metric)) {
        cell << std::fixed << std::setprecision(4) << summary["published"][metric].get<double>();
      } else {
        cell << "-";
      }
      txt << std::setw(18) << cell.str();
    }
    txt << "\n";
  }

  {
    std::ofstream out(report_dir / "summary.json");
    require(out.good(), "report: cannot open summary.json");
    out << summary.dump(2) << "\n";
  }
  {
    std::ofstream out(report_dir / "summary.txt");
    require(out.good(), "report: cannot open summary.txt");
    out << txt.str();
  }
  {
    std::ofstream out(report_dir / "folds.tsv");
    require(out.good(), "report: cannot open folds.tsv");
    out << tsv.str();
  }

  Manifest man;
  man.config = experiment_config_to_json(cfg);
  for (const auto& name : {"summary.json", "summary.txt", "folds.tsv"}) {
    man.artifacts.emplace_back(name, sha256_file(report_dir / name));
  }
  for (const auto& entry : std::filesystem::directory_iterator(plots_dir)) {
    man.artifacts.emplace_back("plots/" + entry.path().filename().string(),
                               sha256_file(entry.path()));
  }
  write_manifest(man, report_dir / "manifest.json");
  return summary;
}

}  // namespace txai
