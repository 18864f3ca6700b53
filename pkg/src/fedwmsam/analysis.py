"""Executable theory checks and diagnostics.

* ``check_sampling_identity``: exact second moment of a uniformly sampled
  subset mean, by enumeration, against its closed form.
* ``check_perturbation_variance``: Monte-Carlo second moment of a perturbed
  stochastic gradient around the clean gradient, against ``sigma^2 + (L rho)^2``.
* ``sharpness_proxy``: largest loss increase over a few radius-``rho`` probes.
* ``rate_trend_scan``: seed-averaged final gradient norm along one of the
  S (clients per round), K (local steps) or R (rounds) axes.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .engine import RunConfig, run
from .linalg import EPS_ZERO
from .objectives import QuadraticObjective

MAX_ENUM_CLIENTS = 12


@dataclass(frozen=True)
class BoundCheckReport:
    empirical: float
    bound: float
    samples: int
    passed: bool
    margin: float
    worst_case: float = float("nan")


def check_sampling_identity(vs, s: int) -> tuple[float, float]:
    V = np.ascontiguousarray(vs, dtype=np.float64)
    if V.ndim != 2:
        raise ValueError("vs must be a list of equal-length vectors")
    N = V.shape[0]
    if not 2 <= N <= MAX_ENUM_CLIENTS:
        raise ValueError(f"need 2 <= N <= {MAX_ENUM_CLIENTS} for enumeration, got {N}")
    if not 1 <= s <= N:
        raise ValueError(f"need 1 <= s <= N, got s={s}")
    lhs = _kernels.subset_mean_sq(V, s)
    vbar = V.mean(axis=0)
    spread = float(np.mean(np.sum((V - vbar) ** 2, axis=1)))
    rhs = float(vbar @ vbar) + (N - s) / (s * (N - 1)) * spread
    return lhs, rhs


def perturbation_test_objective(L: float, sigma: float, dim: int = 10) -> QuadraticObjective:
    """Diagonal quadratic whose top eigenvalue ``L`` sits on coordinate 0."""
    a = np.linspace(L, L / 10.0, dim)
    return QuadraticObjective(a, np.zeros(dim), sigma)


def check_perturbation_variance(L: float, sigma: float, rho: float, trials: int, rng,
                                dim: int = 10) -> BoundCheckReport:
    """Second moment of ``grad F(x + delta; xi) - grad f(x)`` with ``delta = rho * e_top``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    obj = perturbation_test_objective(L, sigma, dim)
    x = rng.standard_normal(dim)
    delta = np.zeros(dim)
    delta[0] = rho
    shift = obj.full_gradient(x + delta).grad - obj.full_gradient(x).grad
    if sigma > 0:
        diffs = shift + obj.noise_std * rng.standard_normal((trials, dim))
    else:
        diffs = np.broadcast_to(shift, (trials, dim))
    empirical = float(np.mean(np.einsum("ij,ij->i", diffs, diffs)))
    bound = sigma ** 2 + (L * rho) ** 2
    margin = 5.0 / math.sqrt(trials)
    return BoundCheckReport(empirical, bound, trials, empirical <= bound * (1 + margin), margin,
                            float(shift @ shift))


def _mean_loss(objs, x) -> float:
    return sum(o.loss(x) for o in objs) / len(objs)


def sharpness_proxy(objs, x, rho: float, directions: int, rng) -> float:
    """max over probe directions u of ``f(x + rho u) - f(x)`` for the average loss.

    Probes are ``directions`` random unit vectors plus the normalised full
    gradient (skipped when the gradient vanishes).
    """
    if directions < 1 or not rho > 0:
        raise ValueError("need directions >= 1 and rho > 0")
    x = np.asarray(x, dtype=np.float64)
    base = _mean_loss(objs, x)
    U = rng.standard_normal((directions, x.shape[0]))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    g = sum(o.full_gradient(x).grad for o in objs) / len(objs)
    gn = np.linalg.norm(g)
    probes = list(U) + ([g / gn] if gn >= EPS_ZERO else [])
    return max(_mean_loss(objs, x + rho * u) - base for u in probes)


@dataclass(frozen=True)
class ScanPoint:
    value: int
    mean: float
    stderr: float
    finals: tuple
    diverged: bool


def _point_config(base: RunConfig, axis: str, value, seed: int) -> RunConfig:
    pseed = base.seed if base.problem_seed is None else base.problem_seed
    cfg = replace(base, seed=seed, problem_seed=pseed, stop_below=None)
    if axis == "S":
        if not 1 <= value <= base.n_clients:
            raise ValueError(f"S={value} outside [1, {base.n_clients}]")
        return replace(cfg, sample_rate=value / base.n_clients)
    if axis == "K":
        return replace(cfg, optimizer=replace(base.optimizer, local_steps=int(value),
                                              local_epochs=None))
    if axis == "R":
        return replace(cfg, rounds=int(value))
    raise ValueError("axis must be S, K or R")


def rate_trend_scan(base: RunConfig, axis: str, values, seeds=(0, 1, 2, 3, 4),
                    workers: int = 1) -> list[ScanPoint]:
    """Seed-averaged final gradient norm for each value along ``axis``.

    The problem instance is held fixed (``base.problem_seed``, else
    ``base.seed``); the seeds vary sampling and gradient noise.  Diverged
    runs are flagged on their point, never dropped.
    """
    values = list(values)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("values must be strictly increasing")
    if len(seeds) < 3:
        raise ValueError("need at least 3 seeds per point")
    jobs = [_point_config(base, axis, v, s) for v in values for s in seeds]

    def final(cfg):
        res = run(cfg, workers=1)
        return res.records[-1].global_grad_norm, res.diverged

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(final, jobs))
    else:
        outs = [final(c) for c in jobs]
    points, m = [], len(seeds)
    for i, v in enumerate(values):
        chunk = outs[i * m:(i + 1) * m]
        finals = np.array([g for g, _ in chunk])
        div = any(d for _, d in chunk)
        se = float(finals.std(ddof=1) / math.sqrt(m)) if not div else float("nan")
        points.append(ScanPoint(v, float(finals.mean()), se, tuple(finals.tolist()), div))
    return points


def trend_is_decreasing(points, max_inversions: int = 1) -> tuple[bool, int]:
    """Weakly decreasing means, tolerating up to ``max_inversions`` rises.

    A rise counts as tolerated only if it is within the combined standard
    error of the two neighbours; any larger rise or a diverged point fails.
    """
    if any(p.diverged for p in points):
        return False, 0
    inversions = 0
    for p, q in zip(points, points[1:]):
        if q.mean > p.mean:
            if q.mean - p.mean > math.hypot(p.stderr, q.stderr):
                return False, inversions + 1
            inversions += 1
    return inversions <= max_inversions, inversions
