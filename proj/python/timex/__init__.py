"""Transformer time-series classifiers with surrogate mask explainers.

All array arguments and results are numpy; structured results are plain
dicts. Heavy lifting happens in the C++ extension ``timex._core``.
"""

import json as _json

import torch as _torch  # noqa: F401  pulls in libtorch before the extension loads

try:
    from timex import _core as _c
except ImportError:  # build-tree layout: extension next to the build dir root
    import _core as _c

__all__ = [
    "default_config",
    "validate_config",
    "run_stage",
    "report",
    "gen_data",
    "load_dataset",
    "predict_probs",
    "gradient_saliency",
    "random_explainer",
    "explain",
    "load_explanations",
    "saliency_metrics",
    "aup_aur",
    "explanation_auprc",
    "iou_at_threshold",
    "occlusion_auroc",
]

STAGES = (
    "gen-data",
    "train-predictor",
    "train-explainer",
    "explain",
    "evaluate",
    "occlusion",
    "landmarks",
    "sweep-r",
)


def _as_json(config):
    return config if isinstance(config, str) else _json.dumps(config)


def default_config(kind):
    """Resolved experiment config (dict) with the published settings for `kind`."""
    return _json.loads(_c.default_config(kind))


def validate_config(config):
    """Validate a config dict/JSON string and return its fully resolved form."""
    return _json.loads(_c.validate_config(_as_json(config)))


def run_stage(config, stage, fold=0, root="", force=False, verbose=False, ablation="full"):
    """Run one pipeline stage for one fold; returns the stage's metrics dict.

    Artifacts land under ``<root>/<name>/fold<i>/`` (root defaults to
    ``$TIMEX_OUT``, else ``./runs``) and completed stages are reused.
    """
    return _json.loads(_c.run_stage(_as_json(config), stage, fold, root, force, verbose, ablation))


def report(config, root=""):
    """Aggregate completed folds into summary tables and plots; returns the summary."""
    return _json.loads(_c.report(_as_json(config), root))


def load_explanations(path):
    """Load an explanation dump; `meta` comes back as a dict."""
    out = _c.load_explanations(str(path))
    out["meta"] = _json.loads(out["meta"])
    return out


def gen_data(kind, n, seed=0, noise_scale=1.0, split=None):
    return _c.gen_data(kind, n, seed, noise_scale, split)


def load_dataset(path):
    return _c.load_dataset(str(path))


def predict_probs(predictor_ckpt, X):
    return _c.predict_probs(str(predictor_ckpt), X)


def gradient_saliency(predictor_ckpt, X):
    return _c.gradient_saliency(str(predictor_ckpt), X)


def random_explainer(shape, seed):
    return _c.random_explainer(list(shape), seed)


def explain(explainer_ckpt, X):
    return _c.explain(str(explainer_ckpt), X)


def saliency_metrics(scores, q, grid=1000):
    return _c.saliency_metrics(scores, q, grid)


def aup_aur(mask, q, grid=1000):
    return _c.aup_aur(mask, q, grid)


def explanation_auprc(mask, q):
    return _c.explanation_auprc(mask, q)


def iou_at_threshold(mask, q, tau=0.5):
    return _c.iou_at_threshold(mask, q, tau)


def occlusion_auroc(predictor_ckpt, explainer_ckpt, X, y, scores, fraction, seed=0):
    return _c.occlusion_auroc(str(predictor_ckpt), str(explainer_ckpt), X, y, scores, fraction, seed)


gen_data.__doc__ = _c.gen_data.__doc__
predict_probs.__doc__ = _c.predict_probs.__doc__
gradient_saliency.__doc__ = _c.gradient_saliency.__doc__
random_explainer.__doc__ = _c.random_explainer.__doc__
explain.__doc__ = _c.explain.__doc__
saliency_metrics.__doc__ = _c.saliency_metrics.__doc__
aup_aur.__doc__ = _c.aup_aur.__doc__
explanation_auprc.__doc__ = _c.explanation_auprc.__doc__
iou_at_threshold.__doc__ = _c.iou_at_threshold.__doc__
occlusion_auroc.__doc__ = _c.occlusion_auroc.__doc__
