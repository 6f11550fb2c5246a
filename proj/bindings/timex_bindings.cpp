#include <torch/torch.h>

#include <cstring>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "timex/baselines.hpp"
#include "timex/checkpoint.hpp"
#include "timex/common.hpp"
#include "timex/config.hpp"
#include "timex/experiment.hpp"
#include "timex/explain_io.hpp"
#include "timex/explainer.hpp"
#include "timex/metrics.hpp"
#include "timex/model.hpp"
#include "timex/occlusion.hpp"
#include "timex/synthetic.hpp"
#include "timex/train_predictor.hpp"

namespace py = pybind11;

namespace {

using namespace txai;
using json = nlohmann::json;

// The binding boundary is numpy only: arrays are copied into fresh CPU
// tensors on the way in and back into fresh numpy arrays on the way out, so
// no torch object ever crosses into Python.
template <typename T>
torch::Tensor copy_in(const py::array_t<T, py::array::c_style | py::array::forcecast>& a,
                      torch::ScalarType dtype) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
  auto t = torch::empty(shape, dtype);
  if (a.size() > 0) std::memcpy(t.data_ptr(), a.data(), sizeof(T) * static_cast<size_t>(a.size()));
  return t;
}

using FArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IArray = py::array_t<int64_t, py::array::c_style | py::array::forcecast>;

torch::Tensor f32_in(const FArray& a) { return copy_in<float>(a, torch::kFloat32); }
torch::Tensor i64_in(const IArray& a) { return copy_in<int64_t>(a, torch::kInt64); }

py::array copy_out(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  switch (c.scalar_type()) {
    case torch::kFloat32:
      return py::array_t<float>(shape, c.data_ptr<float>());
    case torch::kFloat64:
      return py::array_t<double>(shape, c.data_ptr<double>());
    case torch::kInt64:
      return py::array_t<int64_t>(shape, c.data_ptr<int64_t>());
    case torch::kInt32:
      return py::array_t<int32_t>(shape, c.data_ptr<int32_t>());
    case torch::kInt8:
      return py::array_t<int8_t>(shape, c.data_ptr<int8_t>());
    default:
      fail("unsupported tensor dtype at the numpy boundary");
  }
}

ExperimentConfig config_of(const std::string& config_json) {
  json doc;
  try {
    doc = json::parse(config_json);
  } catch (const json::exception& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  return experiment_config_from_json(doc);
}

py::dict dataset_to_dict(const LabeledDataset& ds) {
  auto split = torch::empty({static_cast<int64_t>(ds.split.size())}, torch::kInt8);
  for (size_t i = 0; i < ds.split.size(); ++i) {
    split[static_cast<int64_t>(i)] = static_cast<int8_t>(ds.split[i]);
  }
  py::dict out;
  out["X"] = copy_out(ds.X);
  out["y"] = copy_out(ds.y);
  out["Q"] = copy_out(ds.Q);
  out["split"] = copy_out(split);
  out["t"] = ds.meta.t;
  out["d"] = ds.meta.d;
  out["c"] = ds.meta.c;
  out["name"] = ds.meta.name;
  out["seed"] = ds.meta.seed;
  return out;
}

std::string run_stage_json(const std::string& config_json, const std::string& stage,
                           int64_t fold, const std::string& root, bool force, bool verbose,
                           const std::string& ablation) {
  const ExperimentConfig cfg = config_of(config_json);
  init_runtime(cfg.seed);
  FoldRunner fr(cfg, fold, resolve_output_root(root), force, verbose);

  std::string variant;
  std::optional<ExplainerConfig> override_cfg;
  if (ablation != "full") {
    ExplainerConfig ec = cfg.explainer;
    ec.ablation = ablation_from_string(ablation);
    variant = ablation;
    override_cfg = ec;
  }

  if (stage == "gen-data") {
    const auto p = fr.ensure_dataset();
    return json{{"path", p.string()}, {"sha256", sha256_file(p)}}.dump();
  }
  if (stage == "train-predictor") {
    const auto p = fr.ensure_predictor();
    json m = fr.predictor_metrics();
    m["path"] = p.string();
    return m.dump();
  }
  if (stage == "train-explainer") {
    const auto p = fr.ensure_explainer(variant, override_cfg);
    return json{{"path", p.string()}}.dump();
  }
  if (stage == "explain") {
    const auto p = fr.ensure_explanations(variant);
    return json{{"path", p.string()}}.dump();
  }
  if (stage == "evaluate") return fr.evaluate_stage(variant).dump();
  if (stage == "occlusion") return fr.occlusion_stage().dump();
  if (stage == "landmarks") return fr.landmark_stage().dump();
  if (stage == "sweep-r") return fr.sweep_r_stage().dump();
  fail("unknown stage " + stage +
       "; expected gen-data, train-predictor, train-explainer, explain, evaluate, "
       "occlusion, landmarks, or sweep-r");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core: synthetic benchmarks, transformer classifiers, surrogate mask "
            "explainers, and their evaluation. All array arguments and results are numpy.";

  m.def(
      "default_config",
      [](const std::string& kind) {
        return experiment_config_to_json(
                   default_experiment_config(synthetic_kind_from_string(kind)))
            .dump();
      },
      py::arg("kind"),
      "Fully resolved experiment config (JSON string) with the published per-dataset "
      "training settings.");

  m.def(
      "validate_config",
      [](const std::string& config_json) {
        return experiment_config_to_json(config_of(config_json)).dump();
      },
      py::arg("config_json"),
      "Parse, overlay onto the dataset defaults, validate, and return the resolved "
      "config (JSON string). Raises on unknown keys or out-of-range values.");

  m.def("run_stage", &run_stage_json, py::arg("config_json"), py::arg("stage"),
        py::arg("fold") = 0, py::arg("root") = "", py::arg("force") = false,
        py::arg("verbose") = false, py::arg("ablation") = "full",
        py::call_guard<py::gil_scoped_release>(),
        "Run one pipeline stage for one fold (artifacts cached under the output root) "
        "and return its metrics/result as a JSON string.");

  m.def(
      "report",
      [](const std::string& config_json, const std::string& root) {
        const auto cfg = config_of(config_json);
        return write_report(cfg, resolve_output_root(root)).dump();
      },
      py::arg("config_json"), py::arg("root") = "",
      py::call_guard<py::gil_scoped_release>(),
      "Aggregate completed folds into summary tables/plots; returns the summary JSON "
      "string.");

  m.def(
      "gen_data",
      [](const std::string& kind, int64_t n, uint64_t seed, double noise_scale,
         std::optional<std::tuple<int64_t, int64_t, int64_t>> split) {
        SyntheticConfig sc;
        sc.kind = synthetic_kind_from_string(kind);
        sc.n = n;
        sc.seed = seed;
        sc.noise_scale = noise_scale;
        if (split) {
          sc.split = SplitSpec{std::get<0>(*split), std::get<1>(*split), std::get<2>(*split)};
          sc.do_split = true;
        } else {
          sc.do_split = false;
        }
        LabeledDataset ds;
        {
          py::gil_scoped_release rel;
          ds = generate_synthetic(sc);
        }
        return dataset_to_dict(ds);
      },
      py::arg("kind"), py::arg("n"), py::arg("seed") = 0, py::arg("noise_scale") = 1.0,
      py::arg("split") = std::nullopt,
      "Generate a synthetic benchmark in memory: X (n,T,d) float32, labels y, "
      "ground-truth saliency Q, and split codes (0 train, 1 val, 2 test, 3 none).");

  m.def(
      "load_dataset",
      [](const std::string& path) {
        LabeledDataset ds;
        {
          py::gil_scoped_release rel;
          ds = load_dataset(path);
        }
        return dataset_to_dict(ds);
      },
      py::arg("path"), "Load a dataset archive written by the gen-data stage.");

  m.def(
      "predict_probs",
      [](const std::string& predictor_ckpt, const FArray& X) {
        auto x = f32_in(X);
        torch::Tensor out;
        {
          py::gil_scoped_release rel;
          auto ref = load_reference_model(predictor_ckpt);
          out = predict_probs_batched(ref, x);
        }
        return copy_out(out);
      },
      py::arg("predictor_ckpt"), py::arg("X"),
      "Class probabilities of a trained reference model for X (B,T,d) or (T,d).");

  m.def(
      "gradient_saliency",
      [](const std::string& predictor_ckpt, const FArray& X) {
        auto x = f32_in(X);
        torch::Tensor out;
        {
          py::gil_scoped_release rel;
          auto ref = load_reference_model(predictor_ckpt);
          out = gradient_saliency(ref, x);
        }
        return copy_out(out);
      },
      py::arg("predictor_ckpt"), py::arg("X"),
      "|d max-logit / d x| per cell, min-max normalized per sample into [0,1].");

  m.def(
      "random_explainer",
      [](const std::vector<int64_t>& shape, uint64_t seed) {
        return copy_out(random_explainer(torch::IntArrayRef(shape), seed));
      },
      py::arg("shape"), py::arg("seed"),
      "Seeded i.i.d. uniform [0,1] attribution scores of the given shape.");

  m.def(
      "explain",
      [](const std::string& explainer_ckpt, const FArray& X) {
        auto x = f32_in(X);
        torch::Tensor p, mask, z_e, logits;
        {
          py::gil_scoped_release rel;
          auto [ex, lm] = load_explainer(explainer_ckpt);
          auto e = explain(ex, x);
          p = e.p;
          mask = e.m;
          z_e = e.z_e;
          logits = e.logits_e;
        }
        py::dict out;
        out["p"] = copy_out(p);
        out["m"] = copy_out(mask);
        out["z_e"] = copy_out(z_e);
        out["logits"] = copy_out(logits);
        return out;
      },
      py::arg("explainer_ckpt"), py::arg("X"),
      "Attributions p, discrete masks m, explanation embeddings, and surrogate logits "
      "for X (B,T,d) or (T,d).");

  m.def(
      "load_explanations",
      [](const std::string& path) {
        ExplanationSet es;
        {
          py::gil_scoped_release rel;
          es = load_explanations(path);
        }
        py::dict out;
        out["meta"] = es.meta.dump();
        out["ids"] = copy_out(es.ids);
        out["p"] = copy_out(es.p);
        out["m"] = copy_out(es.m);
        out["z_e"] = copy_out(es.z_e);
        out["y_ref"] = copy_out(es.y_ref);
        out["y_exp"] = copy_out(es.y_exp);
        return out;
      },
      py::arg("path"), "Load an explanation dump written by the explain stage.");

  m.def(
      "saliency_metrics",
      [](const FArray& scores, const FArray& q, int64_t grid) {
        auto s = f32_in(scores);
        auto qt = f32_in(q);
        SaliencySummary r;
        {
          py::gil_scoped_release rel;
          r = saliency_metrics(s, qt, grid);
        }
        py::dict out;
        out["auprc"] = r.auprc;
        out["aup"] = r.aup;
        out["aur"] = r.aur;
        out["iou"] = r.iou;
        out["n_scored"] = r.n_scored;
        return out;
      },
      py::arg("scores"), py::arg("q"), py::arg("grid") = 1000,
      "Mean per-sample AUPRC/AUP/AUR/IoU of continuous attributions (N,T,d) against "
      "binary ground truth; samples without positives are skipped.");

  m.def(
      "aup_aur",
      [](const FArray& mask, const FArray& q, int64_t grid) {
        auto r = aup_aur(f32_in(mask), f32_in(q), grid);
        return py::make_tuple(r.aup, r.aur);
      },
      py::arg("mask"), py::arg("q"), py::arg("grid") = 1000,
      "Areas under precision/recall over a threshold sweep for one sample.");

  m.def(
      "explanation_auprc",
      [](const FArray& mask, const FArray& q) { return explanation_auprc(f32_in(mask), f32_in(q)); },
      py::arg("mask"), py::arg("q"),
      "Exact area under the precision-recall curve for one sample.");

  m.def(
      "iou_at_threshold",
      [](const FArray& mask, const FArray& q, double tau) {
        return iou_at_threshold(f32_in(mask), f32_in(q), tau);
      },
      py::arg("mask"), py::arg("q"), py::arg("tau") = 0.5,
      "Intersection-over-union of thresholded attributions against ground truth.");

  m.def(
      "occlusion_auroc",
      [](const std::string& predictor_ckpt, const std::string& explainer_ckpt, const FArray& X,
         const IArray& y, const FArray& scores, double fraction, uint64_t seed) {
        auto x = f32_in(X);
        auto yy = i64_in(y);
        auto s = f32_in(scores);
        double out = 0;
        {
          py::gil_scoped_release rel;
          auto ref = load_reference_model(predictor_ckpt);
          auto [ex, lm] = load_explainer(explainer_ckpt);
          out = occlusion_auroc(ref, x, yy, s, fraction, ex.stats, ex.mask_mode, seed);
        }
        return out;
      },
      py::arg("predictor_ckpt"), py::arg("explainer_ckpt"), py::arg("X"), py::arg("y"),
      py::arg("scores"), py::arg("fraction"), py::arg("seed") = 0,
      "Reference-model macro AUROC after occluding the bottom `fraction` of cells per "
      "sample (baseline stats and masking mode come from the explainer checkpoint).");
}
