#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "timex/common.hpp"
#include "timex/config.hpp"
#include "timex/experiment.hpp"
#include "timex/explain_io.hpp"
#include "timex/losses.hpp"
#include "timex/manifest.hpp"
#include "timex/model.hpp"
#include "timex/synthetic.hpp"

namespace {

using namespace txai;
namespace fs = std::filesystem;

struct Opts {
  std::string config_path;
  std::string kind;
  std::string name;
  std::string out_root;
  std::optional<uint64_t> seed;
  std::optional<int64_t> n;
  std::optional<int64_t> folds;
  int64_t fold = -1;  // -1 runs every fold
  bool force = false;
  bool verbose = false;
  bool parallel = false;
  int64_t jobs = 0;  // 0: one process per fold at once
  std::string ablation = "full";
  std::vector<double> r_grid;
};

// Config resolution: a config file or a bare --kind, then flag overrides,
// then one validation pass so every entry point rejects the same configs.
ExperimentConfig resolve_config(const Opts& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    cfg = load_experiment_config(o.config_path);
  } else if (!o.kind.empty()) {
    cfg = default_experiment_config(synthetic_kind_from_string(o.kind));
  } else {
    fail("provide --config <file> or --kind <dataset>");
  }
  if (!o.name.empty()) cfg.name = o.name;
  if (o.seed) cfg.seed = *o.seed;
  if (o.n) cfg.n = *o.n;
  if (o.folds) cfg.folds = *o.folds;
  if (!o.r_grid.empty()) cfg.eval.r_sweep = o.r_grid;
  validate_experiment_config(cfg);
  return cfg;
}

std::vector<int64_t> folds_to_run(const Opts& o, const ExperimentConfig& cfg) {
  if (o.fold >= 0) {
    require(o.fold < cfg.folds,
            "--fold " + std::to_string(o.fold) + " is out of range for folds=" +
                std::to_string(cfg.folds));
    return {o.fold};
  }
  std::vector<int64_t> all(static_cast<size_t>(cfg.folds));
  std::iota(all.begin(), all.end(), 0);
  return all;
}

// Non-default explainer variants carry their ablation tag as the artifact
// suffix and train with that tag switched on; everything else is inherited.
std::pair<std::string, std::optional<ExplainerConfig>> variant_of(const ExperimentConfig& cfg,
                                                                  const Opts& o) {
  const Ablation a = ablation_from_string(o.ablation);
  if (a == Ablation::kFull) return {"", std::nullopt};
  ExplainerConfig ec = cfg.explainer;
  ec.ablation = a;
  return {o.ablation, ec};
}

void require_artifact(const fs::path& p, const std::string& what, const std::string& hint) {
  require(fs::exists(p),
          "missing " + what + " " + p.string() + "; run `timex " + hint + "` first");
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  require(in.good(), "cannot open " + p.string());
  nlohmann::json j;
  in >> j;
  return j;
}

std::ostream& fold_tag(int64_t fold) { return std::cout << "fold " << fold << ": "; }

// One fold of one subcommand; dispatched sequentially or from a per-fold
// child process under --parallel.
void run_stage(const std::string& cmd, const ExperimentConfig& cfg_in, int64_t fold,
               const Opts& o) {
  ExperimentConfig cfg = cfg_in;
  const auto root = resolve_output_root(o.out_root);
  FoldRunner fr(cfg, fold, root, o.force, o.verbose);
  const auto [variant, override_cfg] = variant_of(cfg, o);
  const std::string tag = variant.empty() ? "full" : variant;
  std::cout << std::fixed << std::setprecision(4);

  if (cmd == "gen-data") {
    const auto p = fr.ensure_dataset();
    fold_tag(fold) << "dataset " << p.string() << " sha256 " << sha256_file(p).substr(0, 12)
                   << "\n";
  } else if (cmd == "train-predictor") {
    require_artifact(fr.dataset_path(), "dataset archive", "gen-data");
    const auto p = fr.ensure_predictor();
    const auto m = fr.predictor_metrics();
    fold_tag(fold) << "predictor f1 " << m["f1"].get<double>() << " auroc "
                   << m["auroc"].get<double>() << " (best epoch " << m["best_epoch"]
                   << ") -> " << p.string() << "\n";
  } else if (cmd == "train-explainer") {
    require_artifact(fr.dataset_path(), "dataset archive", "gen-data");
    require_artifact(fr.predictor_path(), "predictor checkpoint", "train-predictor");
    const auto p = fr.ensure_explainer(variant, override_cfg);
    const auto h = read_json(fr.explainer_history_path(variant));
    fold_tag(fold) << "explainer[" << tag << "] best val "
                   << h["best_val_loss"].get<double>() << " at epoch " << h["best_epoch"]
                   << " -> " << p.string() << "\n";
  } else if (cmd == "explain") {
    require_artifact(fr.explainer_path(variant), "explainer checkpoint", "train-explainer");
    const auto p = fr.ensure_explanations(variant);
    const auto es = load_explanations(p);
    fold_tag(fold) << es.size() << " test explanations[" << tag << "] -> " << p.string()
                   << "\n";
  } else if (cmd == "evaluate") {
    require_artifact(fr.explanations_path(variant), "explanation dump", "explain");
    const auto ev = fr.evaluate_stage(variant);
    fold_tag(fold) << "saliency vs ground truth (n=" << ev["n_test"] << ", " << tag << ")\n";
    std::cout << "  method    auprc   aup     aur     iou\n";
    for (const char* m : {"timex", "random", "gradient"}) {
      const auto& mm = ev["methods"][m];
      std::cout << "  " << std::left << std::setw(10) << m << std::right
                << mm["auprc"].get<double>() << "  " << mm["aup"].get<double>() << "  "
                << mm["aur"].get<double>() << "  " << mm["iou"].get<double>() << "\n";
    }
  } else if (cmd == "occlusion") {
    require_artifact(fr.explainer_path(), "explainer checkpoint", "train-explainer");
    const auto oc = fr.occlusion_stage();
    fold_tag(fold) << "occlusion AUROC (unoccluded " << oc["unoccluded"].get<double>()
                   << ")\n";
    std::cout << "  fraction  timex   random\n";
    const auto& fr_v = oc["fractions"];
    for (size_t i = 0; i < fr_v.size(); ++i) {
      std::cout << "  " << std::left << std::setw(10) << fr_v[i].get<double>() << std::right
                << oc["timex"][i].get<double>() << "  " << oc["random"][i].get<double>()
                << "\n";
    }
  } else if (cmd == "landmarks") {
    require_artifact(fr.explainer_path(), "explainer checkpoint", "train-explainer");
    const auto lm = fr.landmark_stage();
    fold_tag(fold) << "landmarks kept " << lm["kept"] << " of " << lm["total"]
                   << " (occupancy threshold " << lm["n_eps"] << ") -> "
                   << (fr.paths().metrics / "landmarks.json").string() << "\n";
  } else if (cmd == "sweep-r") {
    require_artifact(fr.dataset_path(), "dataset archive", "gen-data");
    require_artifact(fr.predictor_path(), "predictor checkpoint", "train-predictor");
    const auto sw = fr.sweep_r_stage();
    fold_tag(fold) << "mask-rate sweep\n";
    std::cout << "  r       auprc\n";
    double lo = 1.0, hi = 0.0;
    for (size_t i = 0; i < sw["r"].size(); ++i) {
      const double v = sw["auprc"][i].get<double>();
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      std::cout << "  " << std::left << std::setw(8) << sw["r"][i].get<double>()
                << std::right << v << "\n";
    }
    std::cout << "  spread (max-min): " << (hi - lo) << "\n";
  } else {
    fail("unknown subcommand " + cmd);
  }
}

// Opt-in fold parallelism: each fold re-executes this binary with --fold i,
// so folds stay independent processes over immutable inputs.
int run_parallel(const std::vector<int64_t>& folds, const Opts& o, int argc, char** argv) {
  std::vector<std::string> base(argv, argv + argc);
  std::map<pid_t, int64_t> running;
  size_t next = 0;
  bool failed = false;
  const size_t cap = o.jobs > 0 ? static_cast<size_t>(o.jobs) : folds.size();

  while (next < folds.size() || !running.empty()) {
    while (next < folds.size() && running.size() < cap) {
      const int64_t fold = folds[next++];
      std::vector<std::string> args = base;
      args.push_back("--fold");
      args.push_back(std::to_string(fold));
      const pid_t pid = ::fork();
      require(pid >= 0, "fork failed");
      if (pid == 0) {
        std::vector<char*> cargs;
        cargs.reserve(args.size() + 1);
        for (auto& a : args) cargs.push_back(a.data());
        cargs.push_back(nullptr);
        ::execv("/proc/self/exe", cargs.data());
        std::perror("timex: execv");
        ::_exit(127);
      }
      running.emplace(pid, fold);
    }
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    require(pid > 0, "waitpid failed");
    const auto it = running.find(pid);
    if (it == running.end()) continue;
    const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    if (!ok) {
      std::cerr << "timex: fold " << it->second << " failed\n";
      failed = true;
    }
    running.erase(it);
  }
  return failed ? 1 : 0;
}

void run_report(const ExperimentConfig& cfg, const Opts& o) {
  const auto root = resolve_output_root(o.out_root);
  write_report(cfg, root);
  std::ifstream in(root / cfg.name / "report" / "summary.txt");
  require(in.good(), "report summary missing after write");
  std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"timex: train transformer time-series classifiers, learn surrogate"
               " explainers, and evaluate their attributions"};
  app.require_subcommand(1);
  Opts o;
  std::string cmd;
  int exit_code = 0;

  const auto add_common = [&](CLI::App* sub, bool with_folds) {
    sub->add_option("--config", o.config_path,
                    "experiment config file (JSON; unknown keys are rejected)");
    sub->add_option("--kind", o.kind,
                    "dataset kind (FreqShapes, SeqComb-UV, SeqComb-MV, LowVar) with its"
                    " published default settings")
        ->excludes("--config");
    sub->add_option("--name", o.name, "run name (directory under the output root)");
    sub->add_option("--seed", o.seed, "base seed; fold i uses seed+i");
    sub->add_option("--n", o.n, "total generated samples");
    sub->add_option("--out", o.out_root,
                    "output root (default: $TIMEX_OUT, else ./runs)");
    sub->add_flag("--force", o.force,
                  "recompute this stage and its upstream dependencies even when cached");
    sub->add_flag("-v,--verbose", o.verbose, "per-epoch progress on stderr");
    if (with_folds) {
      sub->add_option("--folds", o.folds, "number of folds");
      sub->add_option("--fold", o.fold, "run a single fold index");
      sub->add_flag("--parallel", o.parallel,
                    "run folds as independent child processes");
      sub->add_option("--jobs", o.jobs, "max concurrent folds under --parallel (0: all)");
    }
    sub->callback([&, sub] { cmd = sub->get_name(); });
    return sub;
  };

  const auto add_variant = [&](CLI::App* sub) {
    sub->add_option("--ablation", o.ablation,
                    "explainer variant: full, no_ste, mbc_only, lc_only, simclr")
        ->check(CLI::IsMember({"full", "no_ste", "mbc_only", "lc_only", "simclr"}));
    return sub;
  };

  add_common(app.add_subcommand("gen-data", "generate a synthetic dataset archive per fold"),
             true);
  add_common(app.add_subcommand("train-predictor",
                                "train the reference classifier on a generated dataset"),
             true);
  add_variant(add_common(
      app.add_subcommand("train-explainer",
                         "train the surrogate explainer against a trained predictor"),
      true));
  add_variant(add_common(
      app.add_subcommand("explain", "export test-split explanations from a trained explainer"),
      true));
  add_variant(add_common(
      app.add_subcommand("evaluate",
                         "score exported explanations against ground-truth saliency"),
      true));
  add_common(app.add_subcommand("occlusion",
                                "reference-model AUROC under attribution-guided occlusion"),
             true);
  add_common(app.add_subcommand("landmarks", "filter landmarks and report their neighborhoods"),
             true);
  add_common(app.add_subcommand("sweep-r", "train and score explainers across mask rates"),
             true)
      ->add_option("--r", o.r_grid, "comma-separated mask rates in (0,1)")
      ->delimiter(',');
  add_common(app.add_subcommand("report", "aggregate fold metrics into tables and plots"),
             false);

  try {
    app.parse(argc, argv);
    const ExperimentConfig cfg = resolve_config(o);
    init_runtime(cfg.seed);
    if (cmd == "report") {
      run_report(cfg, o);
    } else {
      const auto folds = folds_to_run(o, cfg);
      if (o.parallel && folds.size() > 1) {
        exit_code = run_parallel(folds, o, argc, argv);
      } else {
        for (const int64_t fold : folds) run_stage(cmd, cfg, fold, o);
      }
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "timex: error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
