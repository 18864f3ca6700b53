"""Round loop: sampling, broadcast, client fan-out, aggregation and bookkeeping.

Every random quantity is drawn from a stream keyed by ``(seed, tag, ...)``
through ``numpy.random.SeedSequence`` so client results do not depend on
execution order, and all sums over clients run in ascending client id.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import algorithms as alg
from .algorithms import ConfigError, DivergenceError, OptimizerConfig
from .data import (gen_gaussian_mixture, partition_dirichlet, partition_iid,
                   partition_pathological, train_test_split)
from .linalg import cosine_sim
from .objectives import make_logistic, make_mlp2, make_quadratic_ensemble, quadratic_optimum

TAG_SAMPLE, TAG_CLIENT, TAG_INIT, TAG_PROBLEM = 0, 1, 2, 3
DIVERGENCE_NORM = 1e8

# per active client per round: (downlink, uplink, client-side stored, server-side stored)
# backprops come from the client returns themselves
_TRAFFIC = {
    "fedavg": (1, 1, 1, 0),
    "fedsam": (1, 1, 1, 0),
    "fedcm": (2, 1, 2, 0),
    "mofedsam": (2, 1, 2, 0),
    "scaffold": (2, 1, 3, 1),
    "fedgamma": (2, 1, 3, 1),
    "fedwmsam": (2, 1, 2, 1),
}


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "quadratic"
    # quadratic ensemble
    dim: int = 50
    hetero: float = 1.0
    cond: float = 10.0
    sigma: float = 0.0
    # classification data
    classes: int = 10
    features: int = 10
    per_class: int = 100
    test_per_class: int = 50
    spread: float = 1.0
    l2: float = 1e-4
    hidden: int = 16

    def __post_init__(self):
        if self.kind not in ("quadratic", "logistic", "mlp2"):
            raise ConfigError("objective.kind: must be quadratic, logistic or mlp2")
        if self.kind == "quadratic":
            if self.dim < 1 or self.cond < 1 or self.hetero < 0 or self.sigma < 0:
                raise ConfigError("objective: need dim >= 1, cond >= 1, hetero >= 0, sigma >= 0")
        else:
            if self.classes < 2 or self.features < 1 or self.per_class < 1:
                raise ConfigError("objective: need classes >= 2, features >= 1, per_class >= 1")
            if self.test_per_class < 1 or not self.spread > 0 or self.l2 < 0 or self.hidden < 1:
                raise ConfigError("objective: need test_per_class >= 1, spread > 0, l2 >= 0, "
                                  "hidden >= 1")


@dataclass(frozen=True)
class PartitionSpec:
    kind: str = "dirichlet"
    beta: float = 0.1
    gamma: int = 2

    def __post_init__(self):
        if self.kind not in ("dirichlet", "pathological", "iid"):
            raise ConfigError("partition.kind: must be dirichlet, pathological or iid")
        if not self.beta > 0:
            raise ConfigError("partition.beta: must be > 0")
        if self.gamma < 1:
            raise ConfigError("partition.gamma: must be >= 1")


def n_sampled(n_clients: int, sample_rate: float) -> int:
    # round first so 0.1 * 30 = 3.0000000000000004 still gives 3
    return math.ceil(round(sample_rate * n_clients, 9))


@dataclass(frozen=True)
class RunConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    n_clients: int = 20
    sample_rate: float = 0.2
    rounds: int = 100
    seed: int = 0
    problem_seed: int | None = None
    eval_every: int = 5
    workers: int = 1
    stop_below: float | None = None

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigError("n_clients: must be >= 1")
        if not 0 < self.sample_rate <= 1:
            raise ConfigError("sample_rate: must lie in (0, 1]")
        if self.rounds < 1:
            raise ConfigError("rounds: must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every: must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")

    @property
    def clients_per_round(self) -> int:
        return n_sampled(self.n_clients, self.sample_rate)


@dataclass
class CostLedger:
    """Protocol traffic and work, accumulated over active client-rounds.

    Stored-vector counters add the number of persistent model-sized vectors
    each active client (or the server on its behalf) holds for that round,
    so ratios between runs of the same shape equal per-client multipliers.
    """

    downlink_vectors: int = 0
    uplink_vectors: int = 0
    backward_passes: int = 0
    stored_vectors_per_client_serverside: int = 0
    stored_vectors_clientside: int = 0

    def charge(self, kind: str, n_active: int, backprops: int) -> None:
        down, up, client_store, server_store = _TRAFFIC[kind]
        self.downlink_vectors += down * n_active
        self.uplink_vectors += up * n_active
        self.backward_passes += backprops
        self.stored_vectors_clientside += client_store * n_active
        self.stored_vectors_per_client_serverside += server_store * n_active

    def snapshot(self) -> "CostLedger":
        return replace(self)

    def multipliers(self, base: "CostLedger") -> tuple:
        """(downlink, uplink, backprops, stored) ratios against ``base``."""
        return (self.downlink_vectors / base.downlink_vectors,
                self.uplink_vectors / base.uplink_vectors,
                self.backward_passes / base.backward_passes,
                self.stored_vectors_clientside / base.stored_vectors_clientside)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    global_grad_norm: float
    train_loss: float
    eval_accuracy: float
    alpha: float
    mean_cos_sim: float
    downlink: int
    uplink: int
    backprops: int
    diverged: bool = False


@dataclass
class Problem:
    objectives: list
    weights: np.ndarray
    x0: np.ndarray
    eval_set: object = None
    optimum: np.ndarray | None = None


@dataclass
class RunResult:
    records: list
    ledger: CostLedger
    state: alg.ServerState
    problem: Problem
    alpha_trace: list
    diverged: bool = False
    message: str = ""


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _subseed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def build_problem(cfg: RunConfig) -> Problem:
    """Client objectives, initial model and evaluation target for ``cfg``."""
    seed = cfg.seed if cfg.problem_seed is None else cfg.problem_seed
    spec, n = cfg.objective, cfg.n_clients
    if spec.kind == "quadratic":
        objs = make_quadratic_ensemble(n, spec.dim, spec.hetero, spec.cond,
                                       _subseed(seed, TAG_PROBLEM, 0), spec.sigma)
        return Problem(objs, np.full(n, 1.0 / n), objs[0].init_params(),
                       optimum=quadratic_optimum(objs))
    ds = gen_gaussian_mixture(spec.classes, spec.features, spec.per_class + spec.test_per_class,
                              spec.spread, _subseed(seed, TAG_PROBLEM, 0))
    train, test = train_test_split(ds, spec.test_per_class, _subseed(seed, TAG_PROBLEM, 1))
    pseed = _subseed(seed, TAG_PROBLEM, 2)
    pk = cfg.partition
    if pk.kind == "dirichlet":
        part = partition_dirichlet(train, n, pk.beta, pseed)
    elif pk.kind == "pathological":
        part = partition_pathological(train, n, pk.gamma, pseed)
    else:
        part = partition_iid(train, n, pseed)
    shards = [train.subset(s) for s in part.shards]
    if spec.kind == "logistic":
        objs = [make_logistic(s, spec.classes, spec.l2) for s in shards]
    else:
        iseed = _subseed(seed, TAG_PROBLEM, 3)
        objs = [make_mlp2(s, spec.classes, spec.hidden, iseed) for s in shards]
    return Problem(objs, np.array(part.weights()), objs[0].init_params(), eval_set=test)


def sample_clients(n: int, s: int, round: int, seed: int) -> list[int]:
    """Uniform ``s``-subset of ``range(n)`` keyed by ``(seed, round)``, ascending."""
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= n, got s={s}, n={n}")
    if s == n:
        return list(range(n))
    rng = _stream(seed, TAG_SAMPLE, round)
    return sorted(int(i) for i in rng.choice(n, size=s, replace=False))


def evaluate(x, objectives, eval_set=None, optimum=None) -> tuple[float, float, float]:
    """Norm of the average full gradient, average loss, and accuracy.

    Accuracy is measured on ``eval_set`` for classifiers; for quadratics the
    third value is the distance to ``optimum``.
    """
    g = np.zeros_like(x)
    loss = 0.0
    for obj in objectives:
        gs = obj.full_gradient(x)
        g += gs.grad
        loss += gs.loss
    n = len(objectives)
    g /= n
    if eval_set is not None:
        acc = float(np.mean(objectives[0].predict(x, eval_set.features) == eval_set.labels))
    elif optimum is not None:
        acc = float(np.linalg.norm(x - optimum))
    else:
        acc = float("nan")
    return float(np.linalg.norm(g)), loss / n, acc


def _init_corrections(cfg: RunConfig, prob: Problem, st: alg.ServerState, ledger: CostLedger):
    ocfg = cfg.optimizer
    if ocfg.corr_init == "zero" or not ocfg.has_corrections:
        return st
    corr = np.empty_like(st.corrections)
    sign = -1.0 if ocfg.kind == "fedwmsam" and not ocfg.literal_signs else 1.0
    bp = 0
    for k, obj in enumerate(prob.objectives):
        rng = _stream(cfg.seed, TAG_INIT, k)
        B = ocfg.steps_for(obj.shard_size)
        batch = min(ocfg.batch_size, obj.shard_size)
        acc = np.zeros_like(st.x)
        for _ in range(B):
            acc += obj.stochastic_gradient(st.x, batch, rng).grad
        corr[k] = sign * acc / B
        bp += B
    ledger.backward_passes += bp
    return replace(st, corrections=corr, c_g=corr.mean(axis=0))


def _client_job(cfg: RunConfig, obj, k: int, r: int, st: alg.ServerState, mom_k, fast: bool):
    ocfg = cfg.optimizer
    rng = _stream(cfg.seed, TAG_CLIENT, r, k)
    try:
        if ocfg.kind == "fedwmsam":
            a = 1.0 if ocfg.alpha_mode == "unit" else st.alpha
            ret = alg.wmsam_client_update(st.x, mom_k, a, ocfg, obj, rng, fast=fast)
        else:
            extras = {"delta": st.delta, "c_k": st.corrections[k], "c_g": st.c_g}
            ret = alg.baseline_client_update(ocfg.kind, st.x, extras, ocfg, obj, rng, fast=fast)
    except DivergenceError as exc:
        exc.client = k
        raise
    ret.client = k
    return ret


def run(cfg: RunConfig, workers: int | None = None, on_round=None, fast: bool = True,
        problem: Problem | None = None) -> RunResult:
    """Execute ``cfg.rounds`` rounds and return records, ledger and final state.

    ``on_round(r, state, returns)`` is called after every round with the new
    server state and the participants' returns (instrumentation only).
    A divergence stops the run; the last record then carries ``diverged``.
    """
    ocfg = cfg.optimizer
    prob = build_problem(cfg) if problem is None else problem
    N = len(prob.objectives)
    S = n_sampled(N, cfg.sample_rate)
    workers = cfg.workers if workers is None else workers
    ledger = CostLedger()
    st = alg.initial_state(prob.x0, ocfg.alpha0, N)
    st = _init_corrections(cfg, prob, st, ledger)
    records, alphas = [], []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    diverged, message = False, ""
    try:
        for r in range(cfg.rounds):
            P = sample_clients(N, S, r, cfg.seed)
            moms, sims = [], []
            for k in P:
                if ocfg.kind == "fedwmsam" and ocfg.use_corrections:
                    off = alg.personal_offset(ocfg, st.corrections[k], st.c_g)
                    m = alg.personalized_momentum(st.delta, st.alpha, off)
                else:
                    m = st.delta
                moms.append(m)
                sims.append(cosine_sim(st.delta, m))
            jobs = [(cfg, prob.objectives[k], k, r, st, m, fast) for k, m in zip(P, moms)]
            try:
                if pool is None:
                    rets = [_client_job(*j) for j in jobs]
                else:
                    rets = list(pool.map(lambda j: _client_job(*j), jobs))
            except DivergenceError as exc:
                diverged, message = True, f"round {r + 1}: client {exc.client}: {exc}"
                break
            for ret, s in zip(rets, sims):
                ret.sim_k = s
            new = alg.server_aggregate(rets, ocfg, st)
            if ocfg.kind == "fedwmsam" and ocfg.alpha_mode == "adaptive":
                new = replace(new, alpha=alg.update_alpha(
                    st.alpha, sims, ocfg.lam, ocfg.alpha_lo, ocfg.alpha_hi))
            if ocfg.has_corrections:
                inputs = [alg.correction_input(ocfg.kind, ret, ocfg) for ret in rets]
                corr, c_g = alg.update_corrections(
                    st.corrections, st.c_g, P, inputs, ocfg.eta_l, [ret.steps for ret in rets],
                    ocfg.scaffold_scaling)
                new = replace(new, corrections=corr, c_g=c_g)
            ledger.charge(ocfg.kind, len(P), sum(ret.bp_count for ret in rets))
            st = new
            alphas.append(st.alpha)
            if on_round is not None:
                on_round(r, st, rets)
            xn = float(np.linalg.norm(st.x))
            if not (math.isfinite(xn) and np.all(np.isfinite(st.delta))) or xn > DIVERGENCE_NORM:
                diverged, message = True, f"round {r + 1}: |x| = {xn:.3g}"
                break
            done = r + 1
            if done % cfg.eval_every == 0 or done == cfg.rounds:
                gn, loss, acc = evaluate(st.x, prob.objectives, prob.eval_set, prob.optimum)
                records.append(RoundRecord(done, gn, loss, acc, st.alpha, float(np.mean(sims)),
                                           ledger.downlink_vectors, ledger.uplink_vectors,
                                           ledger.backward_passes))
                if cfg.stop_below is not None and gn <= cfg.stop_below:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    if diverged:
        nan = float("nan")
        records.append(RoundRecord(st.round + 1, nan, nan, nan, st.alpha, nan,
                                   ledger.downlink_vectors, ledger.uplink_vectors,
                                   ledger.backward_passes, diverged=True))
    return RunResult(records, ledger, st, prob, alphas, diverged, message)


def rounds_to_reach(records, threshold: float) -> int | None:
    """First recorded round whose grad norm is at or below ``threshold``."""
    for rec in records:
        if not rec.diverged and rec.global_grad_norm <= threshold:
            return rec.round
    return None
