"""Client and server update rules for FedWMSAM and its baselines.

Sign convention
---------------
A client returns the displacement ``delta_k = x_B - x_r``.  By default the
server stores the global momentum in gradient units and with gradient sign,

    Delta_{r+1} = -(1/|P|) * sum_k delta_k / (eta_l * B_k),

and moves the model by the averaged displacement scaled by ``eta_g``::

    x_{r+1} = x_r + eta_g * (1/|P|) * sum_k delta_k.

With that convention the client blend ``v = alpha*g + (1-alpha)*Delta``
mixes two descent-aligned quantities and ``eta_g = 1`` is plain model
averaging.  ``literal_signs=True`` switches to the verbatim pseudocode
(``Delta_{r+1} = sum_k delta_k / (eta_l |P|)``, ``x_{r+1} = x_r - eta_g
Delta_{r+1}``), kept for comparison only; it ascends.

FedWMSAM corrections are updated from the sign-normalised upload
``x_r - x_B``, which makes ``c_k`` track the *negated* client gradient, so
adding ``alpha/(1-alpha) * (c_k - c_g)`` to the momentum cancels client
drift.  SCAFFOLD and FedGAMMA use the displacement itself and the usual
``g - c_k + c_g`` correction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .linalg import EPS_ZERO, NonFiniteError
from .objectives import QuadraticObjective

KINDS = ("fedavg", "fedcm", "scaffold", "fedsam", "mofedsam", "fedgamma", "fedwmsam")
SAM_KINDS = ("fedsam", "mofedsam", "fedgamma")
MOMENTUM_KINDS = ("fedcm", "mofedsam")
CORRECTION_KINDS = ("scaffold", "fedgamma")


class ConfigError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, message, client=None):
        super().__init__(message)
        self.client = client


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "fedwmsam"
    eta_l: float = 0.1
    eta_g: float = 1.0
    rho: float = 0.01
    alpha0: float = 0.1
    lam: float = 0.01
    alpha_lo: float = 0.1
    alpha_hi: float = 0.9
    local_steps: int = 5
    local_epochs: int | None = None
    batch_size: int = 10
    corr_init: str = "zero"
    alpha_mode: str = "adaptive"
    use_corrections: bool = True
    correction_form: str = "centered"
    literal_signs: bool = False
    scaffold_scaling: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(self.kind in KINDS, "kind", f"must be one of {', '.join(KINDS)}")
        need(self.eta_l > 0, "eta_l", "must be > 0")
        need(self.eta_g > 0, "eta_g", "must be > 0")
        need(self.rho >= 0, "rho", "must be >= 0")
        need(0 <= self.lam <= 1, "lambda", "must lie in [0, 1]")
        need(0 < self.alpha_lo <= self.alpha_hi < 1, "alpha_lo/alpha_hi",
             "need 0 < alpha_lo <= alpha_hi < 1")
        need(self.alpha_lo <= self.alpha0 <= self.alpha_hi, "alpha0",
             f"must lie in [alpha_lo, alpha_hi] = [{self.alpha_lo}, {self.alpha_hi}]")
        need(self.local_steps >= 1, "local_steps", "must be >= 1")
        need(self.local_epochs is None or self.local_epochs >= 1, "local_epochs", "must be >= 1")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.corr_init in ("zero", "minibatch"), "corr_init", "must be zero or minibatch")
        need(self.alpha_mode in ("adaptive", "frozen", "unit"), "alpha_mode",
             "must be adaptive, frozen or unit")
        need(self.correction_form in ("centered", "raw"), "correction_form",
             "must be centered or raw")
        need(not (self.alpha_mode == "unit" and self.kind == "fedwmsam" and self.use_corrections),
             "alpha_mode", "unit (alpha = 1) requires use_corrections = false")

    def steps_for(self, shard_size: int) -> int:
        """Local steps B actually executed by a client with ``shard_size`` samples."""
        if self.local_epochs is not None:
            return self.local_epochs * math.ceil(shard_size / min(self.batch_size, shard_size))
        return self.local_steps

    @property
    def has_corrections(self) -> bool:
        if self.kind == "fedwmsam":
            return self.use_corrections
        return self.kind in CORRECTION_KINDS

    @property
    def bp_per_step(self) -> int:
        return 2 if self.kind in SAM_KINDS else 1


@dataclass(frozen=True)
class ClientState:
    id: int
    objective: object
    weight: float


@dataclass(frozen=True)
class ServerState:
    x: np.ndarray
    delta: np.ndarray
    alpha: float
    c_g: np.ndarray
    corrections: np.ndarray  # (N, d), server-held c_k
    round: int = 0


@dataclass
class ClientReturn:
    delta_k: np.ndarray
    bp_count: int
    steps: int
    loss_trace: np.ndarray
    pert_norms: np.ndarray = field(default_factory=lambda: np.empty(0))
    direction_norms: np.ndarray = field(default_factory=lambda: np.empty(0))
    sim_k: float = 0.0
    client: int = -1


def initial_state(x0, alpha0: float, n_clients: int) -> ServerState:
    x0 = np.array(x0, dtype=np.float64)
    d = x0.shape[0]
    return ServerState(x0, np.zeros(d), float(alpha0), np.zeros(d), np.zeros((n_clients, d)))


def personalized_momentum(delta, alpha: float, c) -> np.ndarray:
    """Global momentum plus the client correction scaled by ``alpha / (1 - alpha)``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    delta = np.asarray(delta, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if delta.shape != c.shape:
        raise ValueError("dimension mismatch")
    return delta + (alpha / (1.0 - alpha)) * c


_PERT = {"none": _kernels.PERT_NONE, "sam": _kernels.PERT_SAM,
         "momentum": _kernels.PERT_MOMENTUM}


def local_update(x_r, obj, rng, *, steps, eta, mom=None, alpha=1.0, blend=False,
                 rho=0.0, pert="none", shift=None, batch=1, fast=True) -> ClientReturn:
    """Run ``steps`` local steps from ``x_r`` and return the displacement.

    Each step draws one minibatch, forms the evaluation point ``z = x + e``
    (``e`` is the SAM ascent of radius ``rho`` along either the minibatch
    gradient or the momentum-guided direction ``(x_r + b*mom) - x_b``;
    no perturbation when that direction is shorter than ``EPS_ZERO``), takes
    the gradient at ``z`` on the same minibatch, optionally adds ``shift``,
    optionally blends with ``mom`` and steps with ``eta``.

    Diagonal quadratics go through the compiled kernel when ``fast`` is set;
    the generic loop in ``_local_loop`` is the reference for every other objective.
    """
    x_r = np.asarray(x_r, dtype=np.float64)
    d = x_r.shape[0]
    mom = np.zeros(d) if mom is None else np.asarray(mom, dtype=np.float64)
    use_shift = shift is not None
    shift_v = np.zeros(d) if shift is None else np.asarray(shift, dtype=np.float64)
    code = _PERT[pert]
    # overflow is reported once, below, as a DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        x, losses, pnorm, dnorm = _local_loop(x_r, obj, rng, steps, eta, mom, alpha, blend, rho,
                                              code, shift_v, use_shift, batch, fast)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite local iterate")
    bp = steps * (2 if code == _kernels.PERT_SAM else 1)
    return ClientReturn(x - x_r, bp, steps, np.asarray(losses), np.asarray(pnorm),
                        np.asarray(dnorm))


def _local_loop(x_r, obj, rng, steps, eta, mom, alpha, blend, rho, code, shift_v, use_shift,
                batch, fast):
    d = x_r.shape[0]
    if fast and isinstance(obj, QuadraticObjective):
        if obj.sigma > 0:
            noise = obj.noise_std * rng.standard_normal((steps, d))
        else:
            noise = np.empty((0, d))
        return _kernels.quad_local_steps(x_r, mom, obj.a, obj.b, noise, shift_v, steps, eta,
                                         alpha, rho, code, bool(blend), use_shift, EPS_ZERO)
    x = x_r.copy()
    losses = np.empty(steps)
    pnorm = np.full(steps, np.nan)
    dnorm = np.full(steps, np.nan)
    for s in range(steps):
        token = obj.sample_batch(batch, rng)
        if code == _kernels.PERT_MOMENTUM:
            e = (x_r + float(s) * mom) - x
        elif code == _kernels.PERT_SAM:
            e = obj.batch_gradient(x, token).grad
        if code != _kernels.PERT_NONE:
            nd = np.sqrt(np.dot(e, e))
            dnorm[s] = nd
        if code != _kernels.PERT_NONE and nd >= EPS_ZERO:
            e = e * (rho / nd)
            pnorm[s] = np.sqrt(np.dot(e, e))
            z = x + e
        else:
            z = x
        gs = obj.batch_gradient(z, token)
        losses[s] = gs.loss
        g = gs.grad
        if use_shift:
            g = g + shift_v
        v = alpha * g + (1.0 - alpha) * mom if blend else g
        x = x - eta * v
    return x, losses, pnorm, dnorm


def wmsam_client_update(x_r, delta_rk, alpha: float, cfg: OptimizerConfig, obj, rng,
                        steps: int | None = None, fast: bool = True) -> ClientReturn:
    """FedWMSAM local training: momentum-guided single-backprop SAM plus momentum blend.

    ``alpha == 1`` (the ``unit`` switch) drops the blend so each step is plain
    SGD on the perturbed gradient.
    """
    B = cfg.steps_for(obj.shard_size) if steps is None else steps
    return local_update(x_r, obj, rng, steps=B, eta=cfg.eta_l, mom=delta_rk, alpha=alpha,
                        blend=alpha != 1.0, rho=cfg.rho, pert="momentum",
                        batch=min(cfg.batch_size, obj.shard_size), fast=fast)


def baseline_client_update(kind: str, x_r, extras: dict, cfg: OptimizerConfig, obj, rng,
                           steps: int | None = None, fast: bool = True) -> ClientReturn:
    """Local training for the baselines.

    ``extras`` carries ``delta`` (global momentum) for fedcm/mofedsam and
    ``c_k``, ``c_g`` for scaffold/fedgamma.  The SAM kinds take the gradient
    at ``x + rho * g / ||g||`` on the same minibatch (two backprops per step).
    """
    if kind not in KINDS or kind == "fedwmsam":
        raise ConfigError(f"kind: {kind!r} is not a baseline")
    B = cfg.steps_for(obj.shard_size) if steps is None else steps
    kw = dict(steps=B, eta=cfg.eta_l, rho=cfg.rho, batch=min(cfg.batch_size, obj.shard_size),
              pert="sam" if kind in SAM_KINDS else "none", fast=fast)
    if kind in MOMENTUM_KINDS:
        kw.update(mom=extras["delta"], alpha=cfg.alpha0, blend=True)
    if kind in CORRECTION_KINDS:
        kw.update(shift=np.asarray(extras["c_g"]) - np.asarray(extras["c_k"]))
    return local_update(x_r, obj, rng, **kw)


def server_aggregate(returns, cfg: OptimizerConfig, st: ServerState) -> ServerState:
    """New global momentum and model from the participants' displacements.

    ``returns`` must be ordered by ascending client id so that summation
    order, and hence the result, is fixed.
    """
    if not returns:
        raise ValueError("empty participant set")
    disp = np.stack([r.delta_k for r in returns])
    if cfg.literal_signs:
        delta = disp.sum(axis=0) / (cfg.eta_l * len(returns))
        x = st.x - cfg.eta_g * delta
    else:
        steps = np.array([r.steps for r in returns], dtype=np.float64)
        delta = -(disp / (cfg.eta_l * steps)[:, None]).sum(axis=0) / len(returns)
        x = st.x + cfg.eta_g * (disp.sum(axis=0) / len(returns))
    return replace(st, x=x, delta=delta, round=st.round + 1)


def update_alpha(alpha_r: float, sims, lam: float, lo: float, hi: float) -> float:
    """Move alpha toward the clamped mean similarity at rate ``lam``."""
    sims = list(sims)
    if not sims:
        raise ValueError("empty similarity list")
    if not 0 <= lam <= 1 or not 0 < lo < hi < 1:
        raise ValueError("need 0 <= lam <= 1 and 0 < lo < hi < 1")
    target = min(max(sum(sims) / len(sims), lo), hi)
    a = (1.0 - lam) * alpha_r + lam * target
    # a convex combination lies between its endpoints; keep rounding from leaving them
    return min(max(a, min(alpha_r, target)), max(alpha_r, target))


def update_client_correction(c_k, c_g, delta_k, eta_l: float, B: int) -> np.ndarray:
    if B < 1:
        raise ValueError("B must be >= 1")
    return c_k - c_g - delta_k / (eta_l * B)


def update_corrections(corrections, c_g, participants, deltas, eta_l: float, steps,
                       scaffold_scaling: bool = False, ):
    """Refresh participants' corrections and the global correction for one round.

    ``deltas[i]`` is the correction input for ``participants[i]``.  The global
    correction moves by the mean change over participants, or by the sum of
    changes over ``N`` when ``scaffold_scaling`` is set.  Non-participants
    keep their corrections.
    """
    if len(participants) == 0:
        raise ValueError("empty participant set")
    new = corrections.copy()
    changes = np.empty((len(participants), corrections.shape[1]))
    for i, (k, dk, B) in enumerate(zip(participants, deltas, steps)):
        new[k] = update_client_correction(corrections[k], c_g, dk, eta_l, B)
        changes[i] = new[k] - corrections[k]
    if scaffold_scaling:
        c_g_new = c_g + changes.sum(axis=0) / corrections.shape[0]
    else:
        c_g_new = c_g + changes.sum(axis=0) / len(participants)
    return new, c_g_new


def correction_input(kind: str, ret: ClientReturn, cfg: OptimizerConfig) -> np.ndarray:
    """The vector fed to the correction update for this optimizer and sign convention."""
    if kind == "fedwmsam" and not cfg.literal_signs:
        return -ret.delta_k
    return ret.delta_k


def personal_offset(cfg: OptimizerConfig, c_k, c_g) -> np.ndarray:
    return c_k - c_g if cfg.correction_form == "centered" else c_k
