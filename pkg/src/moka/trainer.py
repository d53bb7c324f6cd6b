"""Plain SGD over adapter parameters and empirical checks of the SGD convergence bound.

The bound checked here is

    (1/T) sum_t ||grad_t||^2  <=  gap / (eta T) + eta L G / 2

where ``gap = L(u_0) - L_min``, ``L`` is the smoothness constant of the loss in
``vec(dW)`` and ``G`` bounds ``sum_i ||dA_i||^2 ||B_i||^2 + ||A_i||^2 ||dB_i||^2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from moka import seeding
from moka.adapter import KronFactorPair, MixtureAdapter
from moka.grad import AdapterGradients

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step}: loss = {loss!r}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    task: object
    eta: float = 2e-4
    steps: int = 1000
    batch_size: int = 32
    seed: int = 0
    record_every: int = 1
    full_batch: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")


@dataclass(frozen=True)
class TrainRecord:
    step: int
    loss: float
    grad_norm_sq: float
    grad_norm_sq_mean: float
    kron_term: float
    kron_term_max: float

    FIELDS = ("step", "loss", "grad_norm_sq", "grad_norm_sq_mean", "kron_term", "kron_term_max")


@dataclass
class TrainResult:
    records: list[TrainRecord]
    adapters: dict[str, MixtureAdapter]

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss


def sgd_step(adapter: MixtureAdapter, grads: AdapterGradients, eta: float) -> MixtureAdapter:
    """Return a new adapter with every trainable entry moved by ``-eta * grad``."""
    pairs = []
    for pair, (dA, dB) in zip(adapter.pairs, grads.d_pairs):
        b = pair.b - eta * dB
        if pair.a is None:
            pairs.append(KronFactorPair.identity(pair.identity_dim, b))
        else:
            pairs.append(KronFactorPair(a=pair.a - eta * dA, b=b))
    logits = adapter.gate_logits - eta * grads.d_gate_logits if adapter.gated else adapter.gate_logits.copy()
    return replace(adapter, pairs=tuple(pairs), gate_logits=logits)


def batch_indices(config: TrainConfig, step: int):
    if config.full_batch:
        return None
    n = config.task.num_samples
    rng = seeding.stream(config.seed, seeding.BATCH, step)
    return rng.choice(n, size=config.batch_size, replace=config.batch_size > n)


def run_training(config: TrainConfig, adapters=None) -> TrainResult:
    """Run ``config.steps`` SGD steps; batch ``t`` is drawn from stream ``(seed, BATCH, t)``."""
    task = config.task
    if adapters is None:
        adapters = task.init_adapters(seeding.stream(config.seed, seeding.INIT))
    elif isinstance(adapters, MixtureAdapter):
        adapters = {"delta": adapters}
    adapters = dict(adapters)

    records = []
    total = 0.0
    kron_max = 0.0
    for t in range(config.steps):
        loss, grads = task.loss_and_grads(adapters, batch_indices(config, t))
        if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise DivergenceError(t, loss)
        g_sq = sum(g.param_sq_norm() for g in grads.values())
        kron = sum(grads[name].kron_term(adapters[name]) for name in grads)
        total += g_sq
        kron_max = max(kron_max, kron)
        if t % config.record_every == 0 or t == config.steps - 1:
            records.append(TrainRecord(t, loss, g_sq, total / (t + 1), kron, kron_max))
        adapters = {name: sgd_step(adapters[name], grads[name], config.eta) for name in adapters}
    return TrainResult(records, adapters)


# Bound arithmetic -------------------------------------------------------------


def sgd_bound(gap: float, L: float, G: float, eta: float, T: int) -> float:
    return gap / (eta * T) + eta * L * G / 2.0


def optimal_eta(gap: float, L: float, G: float, T: int) -> float:
    """Learning rate at which both bound terms are equal, minimising the bound."""
    return math.sqrt(2.0 * gap / (L * G * T))


def power_iteration(matrix: np.ndarray, iters: int = 500, tol: float = 1e-13, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    rng = seeding.stream(seed, seeding.VERIFY)
    v = rng.standard_normal(matrix.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(v @ matrix @ v)
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            return new
        lam = new
    return lam


def smoothness_constant(task) -> float:
    """Smoothness of the full-data loss in ``vec(dW)`` for the linear-regression tasks."""
    return power_iteration(task.input_gram())


def estimate_loss_min(task, eta: float, steps: int, seed: int = 0) -> float:
    """Known minimum if the task carries one, else the best loss of a long full-batch run."""
    known = getattr(task, "loss_min", None)
    if known is not None:
        return float(known)
    result = run_training(TrainConfig(task=task, eta=eta, steps=steps, seed=seed, full_batch=True, record_every=1))
    return min(min(r.loss for r in result.records), task.loss(result.adapters))


@dataclass(frozen=True)
class BoundReport:
    gap: float
    L: float
    G: float
    eta: float
    T: int
    bound: float
    measured_avg: float
    eta_star: float
    worst_prefix_ratio: float = 0.0

    JSON_FIELDS = ("gap", "L", "G", "eta", "T", "bound", "measured_avg", "eta_star")

    @property
    def violated(self) -> bool:
        return self.measured_avg > self.bound * (1 + 1e-6) or self.worst_prefix_ratio > 1 + 1e-6

    def to_json_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.JSON_FIELDS}


def convergence_diagnostic(records, gap: float, L: float, eta: float, G: float | None = None) -> BoundReport:
    """Compare the running gradient-norm average with the bound.

    ``G`` defaults to the largest Kronecker term seen in the run. Each record is
    also checked as a prefix run of ``step + 1`` steps (with the running max of
    the Kronecker term); ``worst_prefix_ratio`` is the largest measured/bound
    ratio over those prefixes.
    """
    if not records:
        raise ValueError("no records")
    last = records[-1]
    T = last.step + 1
    fixed_G = G
    G = last.kron_term_max if fixed_G is None else fixed_G
    worst = 0.0
    for r in records:
        g_prefix = r.kron_term_max if fixed_G is None else fixed_G
        b = sgd_bound(gap, L, g_prefix, eta, r.step + 1) if g_prefix > 0 or gap > 0 else 0.0
        if b > 0:
            worst = max(worst, r.grad_norm_sq_mean / b)
        elif r.grad_norm_sq_mean > 0:
            worst = math.inf
    bound = sgd_bound(gap, L, G, eta, T)
    eta_star = optimal_eta(gap, L, G, T) if gap > 0 and G > 0 else math.inf
    return BoundReport(gap, L, G, eta, T, bound, last.grad_norm_sq_mean, eta_star, worst)


@dataclass(frozen=True)
class BoundCheck:
    eta_star: float
    pilot_G: float
    reports: dict[float, BoundReport]


def bound_experiment(task, steps: int, seed: int = 0, multipliers=(0.25, 1.0, 4.0), pilot_eta: float | None = None):
    """Full-batch runs at ``c * eta*`` for each multiplier ``c``.

    ``eta*`` comes from a pilot run that measures ``G``; each run is then
    checked against the bound evaluated with its own measured ``G``.
    """
    L = smoothness_constant(task)
    init = task.init_adapters(seeding.stream(seed, seeding.INIT))
    pilot_eta = 0.1 / L if pilot_eta is None else pilot_eta
    loss_min = estimate_loss_min(task, pilot_eta, 20 * steps, seed)
    gap = task.loss(init) - loss_min

    def run(eta):
        cfg = TrainConfig(task=task, eta=eta, steps=steps, seed=seed, full_batch=True, record_every=1)
        return run_training(cfg, init).records

    pilot = run(pilot_eta)
    G = pilot[-1].kron_term_max
    eta_star = optimal_eta(gap, L, G, steps)
    reports = {}
    for c in multipliers:
        eta = c * eta_star
        reports[c] = convergence_diagnostic(run(eta), gap, L, eta)
    return BoundCheck(eta_star, G, reports)
