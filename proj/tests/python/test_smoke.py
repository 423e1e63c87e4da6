"""Smoke tests for the python bindings."""

import json
import math
import os
import tempfile

import numpy as np
import pytest

import osrlab


def test_version():
    assert osrlab.__version__ == "0.1.0"


def test_losses_match_hand_values():
    assert osrlab.movr_loss([0.0, 0.0], 0, scale=32.0) == pytest.approx(2 * math.log(2))
    assert osrlab.sce_loss([0.3, 0.3, 0.3, 0.3], 2, scale=5.0) == pytest.approx(math.log(4))
    assert osrlab.rotation_ssl_loss([0.0, 0.0, 0.0, 0.0], 1) == pytest.approx(math.log(4))


def test_margin_similarity():
    assert osrlab.margin_similarity(1.0, 0.0) == pytest.approx(1.0)
    assert osrlab.margin_similarity(1.0, 0.5) == pytest.approx(math.cos(0.5))
    with pytest.raises(ValueError):
        osrlab.margin_similarity(0.5, 2.0)


def test_auc_and_metrics():
    assert osrlab.auc([0.1, 0.2], [0.5, 0.9]) == 1.0
    assert osrlab.auc([0.1, 0.4], [0.2, 0.3]) == 0.5
    assert osrlab.macro_f1([0, 1, 1, 1], [0, 0, 1, 1], 1) == pytest.approx(11 / 15)
    emb = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
    assert osrlab.dbi(emb, [0, 0, 1, 1]) == pytest.approx(0.1)


def test_embedding_and_jacobian_agree_with_fd():
    net = osrlab.EmbeddingNet(input_dim=6, hidden_dims=[12], embed_dim=4, seed=3)
    x = np.linspace(-0.5, 0.5, 6)
    f = net.embed(x)
    assert np.linalg.norm(f) == pytest.approx(1.0, abs=1e-12)

    jac = net.jacobian(x, normalized=False)
    fd = osrlab.fd_jacobian(lambda v: net.embed(v, normalized=False), x, h=1e-5)
    assert np.max(np.abs(jac - fd)) / max(np.max(np.abs(fd)), 1e-30) < 1e-6
    assert net.jacobian_norm(x, normalized=False) == pytest.approx(
        float(np.sqrt((jac**2).sum()))
    )


def test_detection_pipeline():
    net = osrlab.EmbeddingNet(input_dim=4, hidden_dims=[8], embed_dim=5, seed=9)
    bank = osrlab.PrototypeBank(3, 5, seed=9)
    x = np.array([0.2, -0.1, 0.4, 0.0])
    p = osrlab.pseudo_label(net, bank, x)
    assert 0 <= p < 3
    sims = osrlab.class_similarities(net, bank, x, margin=0.5, apply_margin=True)
    score = osrlab.detection_score(net, bank, x)
    assert score == pytest.approx(osrlab.movr_loss(list(sims), p, scale=32.0))


def test_rotate90_roundtrip():
    img = np.arange(9, dtype=float).reshape(3, 3)
    out = img.copy()
    for _ in range(4):
        out = osrlab.rotate90(out, 1)
    assert np.array_equal(out, img)


def test_run_experiment_end_to_end():
    cfg = {
        "dataset": {"kind": "synthetic", "total_classes": 4, "dim": 4, "n_per_class": 30,
                    "known_k": 2},
        "model": {"hidden_dims": [16], "embed_dim": 4},
        "train": {"iterations": 60, "batch_size": 16, "eval_interval": 30,
                  "jn_eval_samples": 6, "train_loss_samples": 16},
        "probes": {"interp_pairs": 2, "interp_points": 5, "mc_samples": 32},
    }
    with tempfile.TemporaryDirectory() as tmp:
        rep = osrlab.run_experiment(json.dumps(cfg), out_dir=tmp, seeds=[5])
        assert rep["final_acc_mean"] >= 0.0
        assert os.path.exists(os.path.join(tmp, "report.json"))
        assert os.path.exists(os.path.join(tmp, "seed_5", "metrics.csv"))


def test_config_error_maps_to_python():
    with pytest.raises(osrlab.ConfigError):
        osrlab.run_experiment('{"unknown_key": 1}')
