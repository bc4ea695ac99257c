import math

import numpy as np
import pytest

from evgassom.analysis import GratingProbe, grating_samples, selectivity_index, slowness_ratios, tuning_curves
from evgassom.gassom import SubspaceBank, init_bank
from evgassom.pipeline import DEFAULT_LAYER1
from evgassom.synthetic import SHAPES, pink_noise, shape_dataset, shape_image, training_images


def test_selectivity_index_formula():
    tuning = np.array([[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]])
    np.testing.assert_allclose(selectivity_index(tuning), [(5 - 1) / (5 + 3), 0.0])


def quadrature_samples(D=16, n=400, seed=0):
    """Unit vectors rotating through phase inside the plane spanned by e0, e1."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * math.pi, n)
    X = np.zeros((n, D))
    X[:, 0], X[:, 1] = np.cos(phase), np.sin(phase)
    return X


def test_quadrature_pair_is_slow():
    e = np.eye(16)
    pair = SubspaceBank(np.stack([e[[0, 1]]]), 1)
    r = slowness_ratios(pair, [quadrature_samples()])
    assert r[0] < 1e-20


def test_mismatched_pair_is_not_slow():
    e = np.eye(16)
    half = SubspaceBank(np.stack([e[[0, 5]]]), 1)
    assert slowness_ratios(half, [quadrature_samples()])[0] >= 1.0 - 1e-12


def test_rarely_winning_node_is_nan():
    e = np.eye(16)
    bank = SubspaceBank(np.stack([e[[0, 1]], e[[2, 3]], e[[4, 5]], e[[6, 7]]]), 2)
    r = slowness_ratios(bank, [quadrature_samples()])
    assert np.isfinite(r[0]) and np.isnan(r[1:]).all()


def test_grating_probe_samples():
    probe = GratingProbe(duration=0.25, sensor_side=24)
    X = grating_samples(DEFAULT_LAYER1, 45.0, probe)
    assert X.shape[1] == 200 and len(X) > 10
    np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-9)
    t = tuning_curves(init_bank(64, 200, seed=0), [X, X])
    assert t.shape == (2, 64)


def test_pink_noise_range():
    img = pink_noise((32, 48), seed=1)
    assert img.shape == (32, 48) and img.min() == 0.0 and img.max() == 1.0


def test_training_images_interleave():
    imgs = training_images(40, 2, 3, seed=0)
    assert len(imgs) == 5
    assert all(i.shape == (40, 40) for i in imgs)


def test_shapes_distinct():
    rng = np.random.default_rng(0)
    masks = [shape_image(k, 32, np.random.default_rng(0)) > 0.5 for k in SHAPES]
    for i in range(len(SHAPES)):
        for j in range(i + 1, len(SHAPES)):
            assert (masks[i] != masks[j]).any()
    with pytest.raises(ValueError):
        shape_image("blob", 32, rng)


def test_shape_dataset_order_and_determinism():
    a = shape_dataset(1, seed=3, duration=0.1, sensor_side=20)
    b = shape_dataset(1, seed=3, duration=0.1, sensor_side=20)
    assert [lb for _, lb in a] == list(SHAPES)
    assert all(x == y for (x, _), (y, _) in zip(a, b))
