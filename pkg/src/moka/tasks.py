"""Small synthetic adaptation problems for training the adapters.

Every task exposes the same duck-typed surface used by the trainer:

* ``init_adapters(rng)`` -> ``{name: MixtureAdapter}`` with zero update
* ``num_samples``
* ``loss(adapters, idx=None)`` and ``loss_and_grads(adapters, idx=None)``,
  where ``idx`` selects a mini-batch of samples (``None`` = all of them)

Tasks are pure functions of their constructor arguments and seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moka import seeding
from moka.adapter import (
    KronFactorPair,
    MixtureAdapter,
    PairShape,
    apply_mixture,
    init_adapter,
    materialize_delta,
)
from moka.dense import EXPLICIT_SIZE_CAP, ShapeError, SizeCapError
from moka.grad import backward_mixture
from moka.shapes import ShapeConfig, validate_config


def _single_projection(config: ShapeConfig):
    if len(config.projections) != 1:
        raise ShapeError(f"expected one projection, config has {len(config.projections)}")
    problems = validate_config(config)
    if problems:
        raise ShapeError("; ".join(map(str, problems)))
    return config.projections[0]


class _LinearRegressionTask:
    """Regress the adapter output onto ``target(x)`` over fixed Gaussian probes."""

    shapes: tuple[PairShape, ...]
    m: int
    n: int
    probes: np.ndarray
    gated: bool

    @property
    def num_samples(self) -> int:
        return self.probes.shape[0]

    def init_adapters(self, rng):
        return {"delta": init_adapter(self.shapes, self.m, self.n, rng, gated=self.gated)}

    def input_gram(self) -> np.ndarray:
        """``X^T X / N``; the Hessian w.r.t. ``vec(dW)`` is this Kronecker the identity."""
        return self.probes.T @ self.probes / self.num_samples

    def _residual(self, adapter, xs):
        raise NotImplementedError

    def loss(self, adapters, idx=None) -> float:
        xs = self.probes if idx is None else self.probes[idx]
        res = self._residual(adapters["delta"], xs)
        return 0.5 * float(np.sum(res * res)) / xs.shape[0]

    def loss_and_grads(self, adapters, idx=None):
        xs = self.probes if idx is None else self.probes[idx]
        adapter = adapters["delta"]
        res = self._residual(adapter, xs)
        loss = 0.5 * float(np.sum(res * res)) / xs.shape[0]
        grads = backward_mixture(adapter, xs, res / xs.shape[0])
        return loss, {"delta": grads}


@dataclass(frozen=True, eq=False)
class PlantedTask(_LinearRegressionTask):
    """Target update is itself a gated Kronecker mixture of the adapter's shape, so the minimum loss is 0."""

    shapes: tuple[PairShape, ...]
    m: int
    n: int
    target: MixtureAdapter
    target_delta: np.ndarray
    probes: np.ndarray
    gated: bool = True
    loss_min: float = 0.0

    def _residual(self, adapter, xs):
        return apply_mixture(adapter, xs) - xs @ self.target_delta.T


@dataclass(frozen=True, eq=False)
class FrozenLinearTask(_LinearRegressionTask):
    """Frozen ``W`` must be adapted towards ``W + P`` for a dense ``P`` with ``||P||_F = rho``."""

    shapes: tuple[PairShape, ...]
    m: int
    n: int
    w_frozen: np.ndarray
    perturbation: np.ndarray
    probes: np.ndarray
    rho: float
    gated: bool = True

    def _residual(self, adapter, xs):
        base = xs @ self.w_frozen.T
        return (base + apply_mixture(adapter, xs)) - (base + xs @ self.perturbation.T)


def make_planted(
    shape_config: ShapeConfig,
    seed: int,
    num_probes: int = 256,
    target_scale: float = 1.0,
    gated: bool = True,
    cap: int = EXPLICIT_SIZE_CAP,
) -> PlantedTask:
    proj = _single_projection(shape_config)
    if proj.m * proj.n > cap:
        raise SizeCapError(f"target update would have {proj.m * proj.n} entries, cap is {cap}")
    rng = seeding.stream(seed, seeding.TASK)
    pairs = []
    for s in proj.pairs:
        b = target_scale * rng.normal(0.0, 1.0 / np.sqrt(s.n_b), (s.m_b, s.n_b))
        if s.identity_a:
            pairs.append(KronFactorPair.identity(s.n_a, b))
        else:
            pairs.append(KronFactorPair(a=target_scale * rng.normal(0.0, 1.0 / np.sqrt(s.n_a), (s.m_a, s.n_a)), b=b))
    # logits in [-1, 1] so no component saturates
    logits = rng.uniform(-1.0, 1.0, len(pairs))
    target = MixtureAdapter(tuple(pairs), logits, proj.m, proj.n, gated=gated)
    probes = rng.standard_normal((num_probes, proj.n))
    return PlantedTask(proj.pairs, proj.m, proj.n, target, materialize_delta(target, cap), probes, gated)


def make_frozen_linear(
    m: int,
    n: int,
    rho: float,
    seed: int,
    shapes=(),
    num_probes: int = 256,
    gated: bool = True,
) -> FrozenLinearTask:
    if m < 1 or n < 1:
        raise ShapeError(f"dims must be positive, got {m}x{n}")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    rng = seeding.stream(seed, seeding.TASK)
    w = rng.normal(0.0, 1.0 / np.sqrt(n), (m, n))
    p = rng.standard_normal((m, n))
    p *= rho / np.linalg.norm(p)
    probes = rng.standard_normal((num_probes, n))
    return FrozenLinearTask(tuple(shapes), m, n, w, p, probes, float(rho), gated)


# Toy attention ----------------------------------------------------------------


def _softmax_rows(s):
    z = np.exp(s - s.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ToyAttentionTask:
    """Single-head attention with frozen projections; adapters sit on ``q`` and ``v`` only.

    Projections follow the column convention ``q_t = W_q' x_t``, so for a
    sequence ``X`` (tokens as rows) ``Q = X W_q'^T``. The target sequences come
    from a teacher block whose ``q`` and ``v`` weights carry dense
    perturbations of Frobenius norm ``rho``.
    """

    s: int
    d: int
    shapes: dict
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    gated: bool = True

    ADAPTED = ("q", "v")

    @property
    def num_samples(self) -> int:
        return self.inputs.shape[0]

    def init_adapters(self, rng):
        return {name: init_adapter(self.shapes[name], self.d, self.d, rng, gated=self.gated) for name in self.ADAPTED}

    def _project(self, xs, w, adapter):
        flat = xs.reshape(-1, self.d)
        out = flat @ w.T
        if adapter is not None:
            out = out + apply_mixture(adapter, flat)
        return out.reshape(xs.shape)

    def forward(self, adapters, xs):
        """Block output for sequences ``xs`` of shape ``(batch, s, d)`` plus a backward cache."""
        adapters = adapters or {}
        q = self._project(xs, self.w_q, adapters.get("q"))
        k = self._project(xs, self.w_k, None)
        v = self._project(xs, self.w_v, adapters.get("v"))
        p = _softmax_rows(q @ k.transpose(0, 2, 1) / np.sqrt(self.d))
        o = p @ v
        return o @ self.w_o.T, (q, k, v, p)

    def frozen_forward(self, xs):
        return self.forward(None, xs)[0]

    def loss(self, adapters, idx=None) -> float:
        xs = self.inputs if idx is None else self.inputs[idx]
        ts = self.targets if idx is None else self.targets[idx]
        y, _ = self.forward(adapters, xs)
        return 0.5 * float(np.sum((y - ts) ** 2)) / (xs.shape[0] * self.s)

    def loss_and_grads(self, adapters, idx=None):
        xs = self.inputs if idx is None else self.inputs[idx]
        ts = self.targets if idx is None else self.targets[idx]
        y, (q, k, v, p) = self.forward(adapters, xs)
        scale = xs.shape[0] * self.s
        err = y - ts
        loss = 0.5 * float(np.sum(err * err)) / scale
        d_y = err / scale
        d_o = d_y @ self.w_o
        d_p = d_o @ v.transpose(0, 2, 1)
        d_v = p.transpose(0, 2, 1) @ d_o
        d_s = p * (d_p - np.sum(d_p * p, axis=-1, keepdims=True))
        d_q = d_s @ k / np.sqrt(self.d)
        flat = xs.reshape(-1, self.d)
        grads = {
            "q": backward_mixture(adapters["q"], flat, d_q.reshape(-1, self.d)),
            "v": backward_mixture(adapters["v"], flat, d_v.reshape(-1, self.d)),
        }
        return loss, grads


def make_toy_attention(
    s: int,
    d: int,
    shape_config: ShapeConfig,
    seed: int,
    num_sequences: int = 16,
    rho: float = 1.0,
    gated: bool = True,
) -> ToyAttentionTask:
    names = {p.name for p in shape_config.projections}
    if names != set(ToyAttentionTask.ADAPTED):
        raise ShapeError(f"toy attention needs exactly projections q and v, got {sorted(names)}")
    for p in shape_config.projections:
        if (p.m, p.n) != (d, d):
            raise ShapeError(f"projection {p.name} is {p.m}x{p.n}, model dim is {d}")
    problems = validate_config(shape_config)
    if problems:
        raise ShapeError("; ".join(map(str, problems)))
    rng = seeding.stream(seed, seeding.TASK)
    w = {name: rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)) for name in ("q", "k", "v", "o")}
    inputs = rng.standard_normal((num_sequences, s, d))
    teacher_q = rng.standard_normal((d, d))
    teacher_v = rng.standard_normal((d, d))
    teacher_q *= rho / np.linalg.norm(teacher_q)
    teacher_v *= rho / np.linalg.norm(teacher_v)
    teacher = ToyAttentionTask(
        s, d, {}, w["q"] + teacher_q, w["k"], w["v"] + teacher_v, w["o"], inputs, np.zeros_like(inputs)
    )
    targets = teacher.frozen_forward(inputs)
    shapes = {p.name: p.pairs for p in shape_config.projections}
    return ToyAttentionTask(s, d, shapes, w["q"], w["k"], w["v"], w["o"], inputs, targets, gated)
