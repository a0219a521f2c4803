import json

import numpy as np
import pytest

from shade.hierarchy import NOISE
from shade.metrics import ari
from shade.neuralnet import TrainConfig
from shade.pipeline import StageError, save_result, shade_fit, znormalize

SMALL = dict(hidden_dims=[32, 16], epochs=20, batch_size=128)


def test_znormalize_two_points():
    out, _ = znormalize(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(out.ravel(), [-1.0, 1.0])


def test_znormalize_constant_column():
    x = np.c_[np.arange(4.0), np.full(4, 7.0)]
    out, norm = znormalize(x)
    np.testing.assert_array_equal(out[:, 1], 0.0)
    np.testing.assert_allclose(norm.transform(x)[:, 0], out[:, 0])


def test_znormalize_moments():
    x = np.random.default_rng(0).normal(3.0, 5.0, size=(200, 6))
    out, _ = znormalize(x)
    assert np.abs(out.mean(axis=0)).max() <= 1e-12
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-9)


def test_znormalize_global():
    x = np.array([[0.0, 2.0], [4.0, 6.0]])
    out, norm = znormalize(x, "global")
    assert out.mean() == pytest.approx(0.0) and out.std() == pytest.approx(1.0)
    assert norm.mean.shape == ()
    with pytest.raises(ValueError, match="unknown"):
        znormalize(x, "rowwise")
    with pytest.raises(ValueError):
        znormalize(np.ones((1, 3)))


def test_tight_blob_of_two_mu_points_is_one_cluster():
    x = np.random.default_rng(1).normal(scale=1e-3, size=(10, 3))
    r = shade_fit(x, TrainConfig(mu=5, **SMALL))
    assert r.k == 1
    assert r.assignment.noise_ratio == 0.0


def test_two_separated_blobs():
    rng = np.random.default_rng(2)
    # 20 sigma apart along the diagonal; a single-axis offset would mostly be
    # scaled away by feature-wise normalization
    centers = np.zeros((2, 10))
    centers[1] = 20.0 / np.sqrt(10)
    truth = np.repeat([0, 1], 200)
    x = centers[truth] + rng.normal(size=(400, 10))
    r = shade_fit(x, TrainConfig(seed=2))
    assert r.k == 2
    assert ari(truth, r.assignment_1nn.labels) >= 0.99


def test_result_invariants_and_determinism():
    rng = np.random.default_rng(3)
    x = np.r_[rng.normal(size=(60, 4)), rng.normal(size=(60, 4)) + 8]
    a = shade_fit(x, TrainConfig(seed=4, **SMALL))
    b = shade_fit(x, TrainConfig(seed=4, **SMALL))
    np.testing.assert_array_equal(a.embedding, b.embedding)
    np.testing.assert_array_equal(a.assignment.labels, b.assignment.labels)

    assert a.embedding.shape == (120, TrainConfig().embed_dim)
    assert not (a.assignment_1nn.labels == NOISE).any()
    keep = a.assignment.labels != NOISE
    np.testing.assert_array_equal(a.assignment.labels[keep], a.assignment_1nn.labels[keep])
    assert a.k == len(a.assignment.nodes)
    assert set(a.timings) == {"normalize", "input_tree", "train", "cluster", "assign_1nn"}
    assert len(a.loss_history) == SMALL["epochs"]


def test_too_few_points():
    with pytest.raises(ValueError, match="2\\*mu"):
        shade_fit(np.zeros((9, 2)), TrainConfig(mu=5))


def test_stage_error_names_stage():
    x = np.ones((20, 2))
    x[3, 1] = np.nan
    with pytest.raises(StageError) as info:
        shade_fit(x, TrainConfig(**SMALL))
    assert info.value.stage == "normalize"


def test_save_result_layout(tmp_path):
    rng = np.random.default_rng(5)
    truth = np.repeat([0, 1], 40)
    x = rng.normal(size=(80, 3)) + 10 * truth[:, None]
    r = shade_fit(x, TrainConfig(**SMALL))
    metrics = save_result(r, tmp_path, truth=truth, dump_trees=True)
    on_disk = json.loads((tmp_path / "metrics.json").read_text())
    assert on_disk["ari_1nn"] == metrics["ari_1nn"]
    assert {"ari", "nmi", "ari_nonnoise", "nmi_nonnoise", "nmi_1nn", "k_detected",
            "noise_ratio", "timings"} <= set(on_disk)
    assert TrainConfig.from_dict(json.loads((tmp_path / "config.json").read_text())) == r.config
    header = (tmp_path / "embedding.csv").read_text().splitlines()[0]
    assert header == ",".join(f"z{j}" for j in range(r.embedding.shape[1]))
    assert (tmp_path / "structure_tree.txt").exists()
