import numpy as np
import pytest

from conftest import finite_difference
from fedwmsam.data import Dataset, gen_gaussian_mixture
from fedwmsam.objectives import (QuadraticObjective, make_logistic, make_mlp2,
                                 make_quadratic_ensemble, quadratic_optimum)


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(a))


@pytest.fixture
def shard():
    return gen_gaussian_mixture(3, 4, 10, 1.0, seed=5)


def test_quadratic_ensemble_shapes_and_smoothness():
    objs = make_quadratic_ensemble(5, 8, 1.0, 10.0, seed=0)
    for o in objs:
        assert o.smoothness_L == 1.0 and o.a.min() == pytest.approx(0.1)
        assert np.all((o.a >= 0.1 - 1e-15) & (o.a <= 1.0))
    centers = np.array([o.b for o in objs])
    assert np.allclose(np.linalg.norm(centers - centers.mean(0), axis=1).max() <= 2.0, True)


def test_quadratic_homogeneous_and_identity():
    objs = make_quadratic_ensemble(4, 3, 0.0, 5.0, seed=1)
    assert all(np.array_equal(o.b, objs[0].b) for o in objs)
    assert np.allclose(quadratic_optimum(objs), objs[0].b)
    objs = make_quadratic_ensemble(3, 4, 1.0, 1.0, seed=2)
    x = np.arange(4.0)
    for o in objs:
        assert np.array_equal(o.a, np.ones(4))
        assert np.allclose(o.full_gradient(x).grad, x - o.b)


def test_quadratic_hand_solved_1d():
    objs = [QuadraticObjective([1.0], [-1.0]), QuadraticObjective([1.0], [1.0])]
    xs = quadratic_optimum(objs)
    assert xs == pytest.approx([0.0])
    assert np.mean([o.loss(xs) for o in objs]) == pytest.approx(0.5)
    assert sum(o.loss(xs) for o in objs) == pytest.approx(1.0)


def test_quadratic_gradient_fd(rng):
    o = make_quadratic_ensemble(1, 6, 1.0, 10.0, seed=3)[0]
    for _ in range(5):
        x = rng.standard_normal(6)
        assert _rel_err(o.full_gradient(x).grad, finite_difference(o.loss, x)) <= 1e-6
    assert np.allclose(o.full_gradient(o.b).grad, 0)


def test_quadratic_noise():
    o = QuadraticObjective(np.ones(4), np.zeros(4), sigma=0.0)
    x = np.ones(4)
    assert np.array_equal(o.stochastic_gradient(x, 1, np.random.default_rng(0)).grad,
                          o.full_gradient(x).grad)
    o = QuadraticObjective(np.ones(4), np.zeros(4), sigma=0.5)
    rng = np.random.default_rng(0)
    G = np.array([o.stochastic_gradient(x, 1, rng).grad for _ in range(10_000)])
    sd = G.std(axis=0, ddof=1)
    assert np.all(np.abs(G.mean(0) - x) <= 4 * sd / 100)
    assert np.mean(np.sum((G - x) ** 2, axis=1)) == pytest.approx(0.25, rel=0.05)


def test_logistic_uniform_predictor_loss():
    X = np.array([[1.0, 2.0], [-1.0, 0.5]])
    o = make_logistic(Dataset(X, np.array([0, 1]), 2), 2, 0.0)
    assert o.loss(np.zeros(o.dim)) == pytest.approx(np.log(2))
    assert o.dim == 2 * 3


def test_logistic_gradient_fd(shard, rng):
    o = make_logistic(shard, 3, 0.1)
    for _ in range(5):
        x = rng.standard_normal(o.dim)
        assert _rel_err(o.full_gradient(x).grad, finite_difference(o.loss, x)) <= 1e-6


def test_logistic_l2_shrinks_optimum(shard):
    norms = []
    for l2 in (0.01, 0.1, 1.0, 10.0):
        o = make_logistic(shard, 3, l2)
        x = np.zeros(o.dim)
        step = 1.0 / (o.smoothness_L + l2)
        for _ in range(3000):
            x -= step * o.full_gradient(x).grad
        norms.append(np.linalg.norm(x))
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_logistic_smoothness_bound(shard, rng):
    o = make_logistic(shard, 3, 0.05)
    for _ in range(20):
        x, y = rng.standard_normal(o.dim), rng.standard_normal(o.dim)
        gx, gy = o.full_gradient(x).grad, o.full_gradient(y).grad
        assert np.linalg.norm(gx - gy) <= o.smoothness_L * np.linalg.norm(x - y) + 1e-12


def test_logistic_stable_at_huge_logits(shard):
    o = make_logistic(shard, 3)
    gs = o.full_gradient(np.full(o.dim, 1e4))
    assert np.all(np.isfinite(gs.grad)) and np.isfinite(gs.loss)


def test_mlp_gradient_fd(shard, rng):
    o = make_mlp2(shard, 3, 5, seed=0)
    for _ in range(5):
        x = rng.standard_normal(o.dim) * 0.5
        assert _rel_err(o.full_gradient(x).grad, finite_difference(o.loss, x)) <= 1e-4


def test_mlp_duplicate_shard_and_dead_path(rng):
    X = rng.standard_normal((1, 3))
    one = make_mlp2(Dataset(X, np.array([1]), 2), 2, 4, seed=1)
    dup = make_mlp2(Dataset(np.repeat(X, 3, 0), np.array([1, 1, 1]), 2), 2, 4, seed=1)
    x = one.init_params()
    assert dup.loss(x) == pytest.approx(one.loss(x), abs=1e-15)
    # zero weight matrices: logits depend only on the biases, first-layer gradient vanishes
    o = make_mlp2(Dataset(rng.standard_normal((6, 3)), np.array([0, 1] * 3), 2), 2, 4, seed=1)
    W1, b1, W2, b2 = o._unpack(o.init_params().copy())
    W1[:] = 0
    W2[:] = 0
    x = np.concatenate([W1.ravel(), b1, W2.ravel(), b2])
    Z = o.logits(x, rng.standard_normal((5, 3)))
    assert np.allclose(Z, Z[0])
    assert np.array_equal(o.full_gradient(x).grad[:4 * 3], np.zeros(12))


def test_mlp_init_deterministic(shard):
    a = make_mlp2(shard, 3, 5, seed=4).init_params()
    b = make_mlp2(shard, 3, 5, seed=4).init_params()
    assert np.array_equal(a, b) and np.abs(a[:20]).max() <= 1 / np.sqrt(4)


def test_classifier_batches(shard, rng):
    o = make_logistic(shard, 3)
    x = rng.standard_normal(o.dim)
    full = o.stochastic_gradient(x, len(shard), rng)
    assert np.allclose(full.grad, o.full_gradient(x).grad, rtol=0, atol=1e-15)
    idx = o.sample_batch(7, rng)
    assert len(set(idx.tolist())) == 7
    with pytest.raises(ValueError):
        o.sample_batch(0, rng)
    with pytest.raises(ValueError):
        o.sample_batch(len(shard) + 1, rng)


def test_logistic_unbiased(shard):
    o = make_logistic(shard, 3)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(o.dim)
    G = np.array([o.stochastic_gradient(x, 3, rng).grad for _ in range(10_000)])
    sd = G.std(axis=0, ddof=1)
    assert np.all(np.abs(G.mean(0) - o.full_gradient(x).grad) <= 4 * sd / 100 + 1e-12)
