import numpy as np
import pytest

from fedwmsam import algorithms as alg
from fedwmsam.algorithms import (ConfigError, DivergenceError, OptimizerConfig, ServerState,
                                 baseline_client_update, personalized_momentum, server_aggregate,
                                 update_alpha, update_client_correction, update_corrections,
                                 wmsam_client_update)
from fedwmsam.objectives import QuadraticObjective


def _ret(delta, steps=1):
    return alg.ClientReturn(np.asarray(delta, float), steps, steps, np.zeros(steps))


def _state(x, d=None):
    x = np.asarray(x, float)
    return alg.initial_state(x, 0.1, 2)


# -- personalized momentum ---------------------------------------------------

def test_personalized_momentum_examples():
    assert np.array_equal(personalized_momentum([1, 0], 0.5, [0, 2]), [1, 2])
    assert np.array_equal(personalized_momentum([3, 4], 0.3, [0, 0]), [3, 4])
    assert personalized_momentum([9.0], 0.1, [9.0]) == pytest.approx([10.0], abs=1e-14)


def test_personalized_momentum_errors():
    for a in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            personalized_momentum([1.0], a, [1.0])
    with pytest.raises(ValueError):
        personalized_momentum([1.0], 0.5, [1.0, 2.0])


# -- client rules --------------------------------------------------------------

def test_wmsam_single_step_is_unperturbed():
    obj = QuadraticObjective([1.0, 2.0], [0.5, -1.0])
    cfg = OptimizerConfig(local_steps=1, eta_l=0.1, rho=0.3)
    x_r, mom = np.array([1.0, 1.0]), np.array([0.2, -0.4])
    ret = wmsam_client_update(x_r, mom, 0.3, cfg, obj, np.random.default_rng(0))
    g = obj.full_gradient(x_r).grad
    np.testing.assert_allclose(ret.delta_k, -0.1 * (0.3 * g + 0.7 * mom), rtol=0, atol=1e-15)
    assert np.isnan(ret.pert_norms[0]) and ret.direction_norms[0] == 0
    assert ret.bp_count == 1


def test_wmsam_alpha_one_rho_zero_is_sgd():
    obj = QuadraticObjective([1.0], [0.0])
    cfg = OptimizerConfig(local_steps=2, eta_l=0.1, rho=0.0, alpha_mode="unit",
                          use_corrections=False)
    ret = wmsam_client_update(np.array([1.0]), np.array([0.0]), 1.0, cfg, obj,
                              np.random.default_rng(0))
    assert ret.delta_k == pytest.approx([-0.19], abs=1e-15)
    # x: 1 -> 0.9 -> 0.81
    assert ret.loss_trace == pytest.approx([0.5, 0.405], abs=1e-15)


def test_wmsam_perturbation_norm_is_rho():
    rng = np.random.default_rng(2)
    obj = QuadraticObjective(rng.uniform(0.1, 1, 6), rng.standard_normal(6), 0.2)
    cfg = OptimizerConfig(local_steps=8, rho=0.07)
    ret = wmsam_client_update(rng.standard_normal(6), rng.standard_normal(6), 0.4, cfg, obj, rng)
    live = ret.direction_norms >= 1e-12
    assert live[1:].all()
    assert np.all(np.abs(ret.pert_norms[live] - 0.07) <= 1e-12)


def test_wmsam_perturbation_direction():
    # step 1 direction is (x_r + mom) - x_1
    obj = QuadraticObjective([1.0, 1.0], [0.0, 0.0])
    cfg = OptimizerConfig(local_steps=2, eta_l=0.5, rho=0.1)
    x_r, mom = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    ret = wmsam_client_update(x_r, mom, 0.5, cfg, obj, np.random.default_rng(0))
    x1 = x_r - 0.5 * (0.5 * x_r + 0.5 * mom)
    e = (x_r + mom) - x1
    z = x1 + 0.1 * e / np.linalg.norm(e)
    x2 = x1 - 0.5 * (0.5 * z + 0.5 * mom)
    np.testing.assert_allclose(ret.delta_k, x2 - x_r, rtol=0, atol=1e-15)


def test_fedavg_one_step():
    obj = QuadraticObjective([1.0], [-2.0])
    cfg = OptimizerConfig(kind="fedavg", local_steps=1, eta_l=0.1)
    ret = baseline_client_update("fedavg", np.array([0.0]), {}, cfg, obj, np.random.default_rng(0))
    assert ret.delta_k == pytest.approx([-0.2], abs=1e-15)


def _trajectory_case():
    rng = np.random.default_rng(5)
    obj = QuadraticObjective(rng.uniform(0.1, 1, 5), rng.standard_normal(5), 0.3)
    return obj, rng.standard_normal(5), rng.standard_normal(5)


def test_blend_with_alpha_one_is_fedavg():
    obj, x, mom = _trajectory_case()
    a = alg.local_update(x, obj, np.random.default_rng(1), steps=5, eta=0.1, mom=mom,
                         alpha=1.0, blend=True)
    b = alg.local_update(x, obj, np.random.default_rng(1), steps=5, eta=0.1)
    assert np.array_equal(a.delta_k, b.delta_k)


def test_fedsam_rho_zero_is_fedavg_with_double_cost():
    obj, x, _ = _trajectory_case()
    sam = baseline_client_update("fedsam", x, {}, OptimizerConfig(kind="fedsam", rho=0.0), obj,
                                 np.random.default_rng(1))
    avg = baseline_client_update("fedavg", x, {}, OptimizerConfig(kind="fedavg"), obj,
                                 np.random.default_rng(1))
    assert np.array_equal(sam.delta_k, avg.delta_k)
    assert sam.bp_count == 2 * avg.bp_count == 10


def test_fedgamma_is_scaffold_plus_sam_on_raw_gradient():
    obj, x, _ = _trajectory_case()
    c_k, c_g = np.full(5, 0.2), np.full(5, -0.1)
    cfg = OptimizerConfig(kind="fedgamma", rho=0.05, local_steps=3)
    ret = baseline_client_update("fedgamma", x, {"c_k": c_k, "c_g": c_g}, cfg, obj,
                                 np.random.default_rng(4))
    rng = np.random.default_rng(4)
    noise = obj.noise_std * rng.standard_normal((3, 5))
    y = x.copy()
    for s in range(3):
        g = obj.a * (y - obj.b) + noise[s]
        z = y + 0.05 * g / np.linalg.norm(g)
        y = y - 0.1 * (obj.a * (z - obj.b) + noise[s] - c_k + c_g)
    np.testing.assert_allclose(ret.delta_k, y - x, rtol=0, atol=1e-14)
    assert ret.bp_count == 6


def test_baseline_rejects_fedwmsam():
    obj, x, _ = _trajectory_case()
    with pytest.raises(ConfigError):
        baseline_client_update("fedwmsam", x, {}, OptimizerConfig(), obj, np.random.default_rng(0))


def test_divergence_raised():
    obj = QuadraticObjective([1.0], [0.0])
    with pytest.raises(DivergenceError):
        alg.local_update(np.array([1e300]), obj, np.random.default_rng(0), steps=3, eta=1e10)


# -- server rules --------------------------------------------------------------

def test_server_aggregate_literal_examples():
    cfg = OptimizerConfig(literal_signs=True, eta_l=0.1, eta_g=1.0)
    v = np.array([0.7, -0.3])
    st = _state([1.0, 1.0])
    new = server_aggregate([_ret(-0.1 * v)], cfg, st)
    np.testing.assert_allclose(new.delta, -v, rtol=0, atol=1e-15)
    np.testing.assert_allclose(new.x, st.x + v, rtol=0, atol=1e-15)
    assert new.round == 1
    new = server_aggregate([_ret([0.0, 0.0]), _ret([0.0, 0.0])], cfg, st)
    assert np.array_equal(new.x, st.x)
    new = server_aggregate([_ret([-0.2]), _ret([0.0])], cfg, _state([0.0]))
    assert new.delta == pytest.approx([-1.0], abs=1e-15)


def test_server_aggregate_consistent():
    cfg = OptimizerConfig(eta_l=0.1, eta_g=1.0)
    v = np.array([0.7, -0.3])
    st = _state([1.0, 1.0])
    new = server_aggregate([_ret(-0.1 * v)], cfg, st)
    # momentum in gradient units with gradient sign; model moves by the displacement
    np.testing.assert_allclose(new.delta, v, rtol=0, atol=1e-15)
    np.testing.assert_allclose(new.x, st.x - 0.1 * v, rtol=0, atol=1e-15)
    new = server_aggregate([_ret([-0.2]), _ret([0.0])], cfg, _state([0.0]))
    assert new.delta == pytest.approx([1.0], abs=1e-15)
    assert new.x == pytest.approx([-0.1], abs=1e-15)
    # per-client step counts normalise each displacement separately
    new = server_aggregate([_ret([-0.2], steps=2), _ret([-0.1], steps=1)], cfg, _state([0.0]))
    assert new.delta == pytest.approx([1.0], abs=1e-15)
    with pytest.raises(ValueError):
        server_aggregate([], cfg, st)


def test_update_alpha_examples():
    assert update_alpha(0.37, [0.9, -0.2], 0.0, 0.1, 0.9) == 0.37
    assert update_alpha(0.5, [0.95], 1.0, 0.1, 0.9) == pytest.approx(0.9)
    assert update_alpha(0.5, [0.7], 0.01, 0.1, 0.9) == pytest.approx(0.502, abs=1e-15)
    assert update_alpha(0.5, [-1.0], 1.0, 0.1, 0.9) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        update_alpha(0.5, [], 0.1, 0.1, 0.9)
    with pytest.raises(ValueError):
        update_alpha(0.5, [0.2], 0.1, 0.9, 0.1)


def test_correction_examples():
    g = np.array([0.3, -1.2])
    eta, B = 0.1, 4
    c0 = np.zeros(2)
    assert np.allclose(update_client_correction(c0, c0, -eta * B * g, eta, B), g, atol=1e-15)
    ck = np.array([0.5, 0.25])
    assert np.array_equal(update_client_correction(ck, c0, np.zeros(2), eta, B), ck)
    with pytest.raises(ValueError):
        update_client_correction(ck, c0, np.zeros(2), eta, 0)
    # all changes equal v under full participation -> c_g moves by v
    corr = np.zeros((3, 2))
    v = np.array([1.0, -2.0])
    new, c_g = update_corrections(corr, np.zeros(2), [0, 1, 2], [-eta * B * v] * 3, eta, [B] * 3)
    assert np.allclose(new, v) and np.allclose(c_g, v)


def test_corrections_leave_non_participants_alone():
    corr = np.arange(8.0).reshape(4, 2)
    new, c_g = update_corrections(corr, np.ones(2), [1, 3], [np.ones(2), np.ones(2)], 0.1, [2, 2])
    assert np.array_equal(new[[0, 2]], corr[[0, 2]])
    new2, c_g2 = update_corrections(corr, np.ones(2), [1, 3], [np.ones(2), np.ones(2)], 0.1,
                                    [2, 2], scaffold_scaling=True)
    assert np.allclose(c_g2 - 1, (c_g - 1) * 2 / 4)


# -- config --------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError, match="alpha0"):
        OptimizerConfig(alpha0=1.0)
    with pytest.raises(ConfigError, match="kind"):
        OptimizerConfig(kind="fedprox")
    with pytest.raises(ConfigError, match="unit"):
        OptimizerConfig(alpha_mode="unit")
    with pytest.raises(ConfigError):
        OptimizerConfig(alpha_hi=1.0)
    with pytest.raises(ConfigError):
        OptimizerConfig(local_steps=0)
    with pytest.raises(ConfigError):
        OptimizerConfig(lam=1.5)
    OptimizerConfig(alpha_mode="unit", use_corrections=False)


def test_steps_for_epochs():
    cfg = OptimizerConfig(local_epochs=2, batch_size=10)
    assert cfg.steps_for(25) == 6 and cfg.steps_for(4) == 2
    assert OptimizerConfig(local_steps=3).steps_for(100) == 3


def test_kind_properties():
    assert OptimizerConfig(kind="fedwmsam").bp_per_step == 1
    assert all(OptimizerConfig(kind=k).bp_per_step == 2 for k in alg.SAM_KINDS)
    assert OptimizerConfig(kind="scaffold").has_corrections
    assert not OptimizerConfig(kind="fedwmsam", use_corrections=False).has_corrections


def test_update_alpha_has_no_rounding_excursion():
    a = 0.1
    for lam in (0.3, 0.01, 0.7):
        for sims in ([0.05], [-0.5], [0.1]):
            a = update_alpha(a, sims, lam, 0.1, 0.9)
            assert a >= 0.1
    assert update_alpha(0.9, [1.0], 0.3, 0.1, 0.9) <= 0.9
