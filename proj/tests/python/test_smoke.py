import numpy as np
import pytest

import timex

TINY = {
    "name": "pysmoke",
    "dataset": {"kind": "FreqShapes", "n": 150, "split": {"train": 100, "val": 20, "test": 30}},
    "folds": 2,
    "seed": 11,
    "predictor": {"epochs": 6, "batch_size": 32},
    "explainer": {
        "epochs": 2,
        "batch_size": 32,
        "scheduler": False,
        "n_landmarks": 5,
        "landmark_warmup": 1,
    },
    "eval": {"occlusion_fractions": [0.5, 0.9], "r_sweep": [0.4, 0.6], "landmark_k": 2, "n_eps": 1},
}


def test_gen_data_shapes_and_determinism():
    a = timex.gen_data("FreqShapes", n=40, seed=1, split=(20, 10, 10))
    b = timex.gen_data("FreqShapes", n=40, seed=1, split=(20, 10, 10))
    assert a["X"].shape == (40, 50, 1) and a["X"].dtype == np.float32
    assert a["y"].shape == (40,) and a["y"].dtype == np.int64
    assert a["Q"].shape == a["X"].shape
    np.testing.assert_array_equal(a["X"], b["X"])
    np.testing.assert_array_equal(a["y"], b["y"])
    counts = np.bincount(a["split"].astype(np.int64), minlength=4)
    assert counts.tolist() == [20, 10, 10, 0]
    assert set(np.unique(a["Q"])) <= {0.0, 1.0}

    c = timex.gen_data("SeqComb-MV", n=8, seed=2)
    assert c["X"].shape == (8, 200, 4)
    assert c["c"] == 4


def test_config_validation():
    cfg = timex.default_config("FreqShapes")
    assert cfg["predictor"]["weight_decay"] == pytest.approx(0.1)
    assert cfg["explainer"]["loss"]["r"] == pytest.approx(0.5)
    resolved = timex.validate_config(TINY)
    assert resolved["dataset"]["n"] == 150
    with pytest.raises(RuntimeError, match="explainer.lrr"):
        timex.validate_config({"dataset": {"kind": "FreqShapes"}, "explainer": {"lrr": 1}})


def test_random_explainer_seeded():
    a = timex.random_explainer((3, 5, 2), seed=7)
    b = timex.random_explainer((3, 5, 2), seed=7)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert not np.array_equal(a, timex.random_explainer((3, 5, 2), seed=8))


def test_saliency_metrics_known_values():
    q = np.zeros((6, 2), dtype=np.float32)
    q[1, 0] = q[4, 1] = 1.0
    perfect = q.copy()
    m = timex.saliency_metrics(perfect[None], q[None])
    assert m["auprc"] == pytest.approx(1.0)
    assert m["n_scored"] == 1
    assert timex.explanation_auprc(perfect, q) == pytest.approx(1.0)
    assert timex.iou_at_threshold(perfect, q, 0.5) == pytest.approx(1.0)
    aup, aur = timex.aup_aur(perfect, q)
    assert aup == pytest.approx(1.0, abs=1e-3)
    # Recall is 1 only while tau <= the positive score.
    assert 0.9 < aur <= 1.0

    inverted = 1.0 - q
    assert timex.explanation_auprc(inverted, q) < 0.5


def test_pipeline_roundtrip(tmp_path):
    root = str(tmp_path)
    pm = timex.run_stage(TINY, "train-predictor", fold=0, root=root)
    assert 0.0 <= pm["f1"] <= 1.0

    ev = timex.run_stage(TINY, "evaluate", fold=0, root=root)
    assert set(ev["methods"]) == {"timex", "random", "gradient"}
    assert ev["n_test"] == 30

    oc = timex.run_stage(TINY, "occlusion", fold=0, root=root)
    assert oc["fractions"] == [0.5, 0.9]
    assert len(oc["timex"]) == 2

    lm = timex.run_stage(TINY, "landmarks", fold=0, root=root)
    assert 0 <= lm["kept"] <= lm["total"] == 5

    fold_dir = tmp_path / "pysmoke" / "fold0"
    assert (fold_dir / "manifest.json").exists()

    X = timex.load_dataset(fold_dir / "checkpoints" / "dataset.bin")["X"][:4]
    probs = timex.predict_probs(fold_dir / "checkpoints" / "predictor.ckpt", X)
    assert probs.shape == (4, 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    sal = timex.gradient_saliency(fold_dir / "checkpoints" / "predictor.ckpt", X)
    assert sal.shape == X.shape
    assert sal.min() >= 0.0 and sal.max() <= 1.0

    ex = timex.explain(fold_dir / "checkpoints" / "explainer.ckpt", X)
    assert ex["p"].shape == X.shape
    assert ex["p"].min() >= 0.0 and ex["p"].max() <= 1.0
    assert set(np.unique(ex["m"])) <= {0.0, 1.0}
    assert ex["logits"].shape == (4, 4)

    es = timex.load_explanations(fold_dir / "explanations" / "test.expl")
    assert es["p"].shape == (30, 50, 1)
    assert es["meta"]["fold"] == 0

    ds = timex.load_dataset(fold_dir / "checkpoints" / "dataset.bin")
    idx = np.concatenate([np.where(ds["y"] == c)[0][:3] for c in range(4)])
    occ_x = ds["X"][idx]
    occ_p = timex.explain(fold_dir / "checkpoints" / "explainer.ckpt", occ_x)["p"]
    auroc = timex.occlusion_auroc(
        fold_dir / "checkpoints" / "predictor.ckpt",
        fold_dir / "checkpoints" / "explainer.ckpt",
        occ_x,
        ds["y"][idx],
        occ_p,
        0.5,
        seed=3,
    )
    assert 0.0 <= auroc <= 1.0

    timex.run_stage(TINY, "evaluate", fold=1, root=root)
    rep = timex.report(TINY, root=root)
    assert len(rep["methods"]["timex"]["auprc"]["folds"]) == 2
    assert (tmp_path / "pysmoke" / "report" / "summary.txt").exists()


def test_errors_carry_messages(tmp_path):
    with pytest.raises(RuntimeError, match="kind"):
        timex.gen_data("NoSuchKind", n=10)
    with pytest.raises(RuntimeError, match="stage"):
        timex.run_stage(TINY, "no-such-stage", root=str(tmp_path))
    with pytest.raises(RuntimeError):
        timex.load_explanations(tmp_path / "missing.expl")
