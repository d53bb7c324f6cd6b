"""Closed-form gradients of the mixture forward pass and a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moka.adapter import (
    MixtureAdapter,
    _as_batch,
    apply_mixture,
    gates,
    pad_rows,
    pair_core,
    reshape_rows,
    vec_rows,
)
from moka.dense import frobenius_norm


@dataclass(frozen=True, eq=False)
class AdapterGradients:
    """``d_pairs[i] = (dA_i or None, dB_i)``; ``dx`` has one row per input when batched."""

    d_pairs: tuple[tuple[np.ndarray | None, np.ndarray], ...]
    d_gate_logits: np.ndarray
    dx: np.ndarray

    def param_sq_norm(self) -> float:
        """Squared norm of the stacked parameter gradient (factors and gate logits, not dx)."""
        total = 0.0
        for dA, dB in self.d_pairs:
            if dA is not None:
                total += float(np.sum(dA * dA))
            total += float(np.sum(dB * dB))
        return total + float(np.sum(self.d_gate_logits * self.d_gate_logits))

    def kron_term(self, adapter: MixtureAdapter) -> float:
        """``sum_i ||dA_i||^2 ||B_i||^2 + ||A_i||^2 ||dB_i||^2``; the quantity bounded by G."""
        total = 0.0
        for pair, (dA, dB) in zip(adapter.pairs, self.d_pairs):
            a_sq = float(pair.identity_dim) if pair.a is None else frobenius_norm(pair.a) ** 2
            da_sq = 0.0 if dA is None else frobenius_norm(dA) ** 2
            total += da_sq * frobenius_norm(pair.b) ** 2 + a_sq * frobenius_norm(dB) ** 2
        return total

    def __add__(self, other: AdapterGradients) -> AdapterGradients:
        pairs = tuple(
            (None if a1 is None else a1 + a2, b1 + b2) for (a1, b1), (a2, b2) in zip(self.d_pairs, other.d_pairs)
        )
        return AdapterGradients(pairs, self.d_gate_logits + other.d_gate_logits, self.dx + other.dx)


def backward_mixture(adapter: MixtureAdapter, x, upstream, perturb: float = 0.0) -> AdapterGradients:
    """Gradients of ``<upstream, apply_mixture(adapter, x)>``.

    For a batch (one input per row) parameter gradients are summed over rows and
    ``dx`` keeps one row per input. ``perturb`` scales every ``dB`` by
    ``1 + perturb``; it exists only so the verification harness can check that
    it catches a wrong gradient.
    """
    xs, single = _as_batch(x, adapter.n)
    ups, _ = _as_batch(upstream, adapter.m, what="upstream")
    if ups.shape[0] != xs.shape[0]:
        raise ValueError(f"{xs.shape[0]} inputs but {ups.shape[0]} upstream rows")
    alpha = gates(adapter)
    d_pairs = []
    scores = np.empty(adapter.r)
    dxs = np.zeros((xs.shape[0], adapter.n))
    for i, pair in enumerate(adapter.pairs):
        m_a, n_a = pair.a_shape
        m_b, n_b = pair.b.shape
        X, BX = pair_core(pair, pad_rows(xs, pair.in_size))
        G = reshape_rows(pad_rows(ups, pair.out_size), m_b, m_a)
        if pair.a is None:
            GA = G
            Y = BX
            dA = None
        else:
            GA = np.matmul(G, pair.a)
            Y = np.matmul(BX, pair.a.T)
            dA = alpha[i] * np.einsum("bki,bkj->ij", G, BX)
        dB = alpha[i] * np.einsum("bik,bjk->ij", GA, X)
        if perturb:
            dB = dB * (1.0 + perturb)
        d_pairs.append((dA, dB))
        scores[i] = float(np.sum(G * Y))
        dxs += alpha[i] * vec_rows(np.matmul(pair.b.T, GA))[:, : adapter.n]
    if adapter.gated:
        d_logits = alpha * (scores - np.dot(alpha, scores))
    else:
        d_logits = np.zeros(adapter.r)
    return AdapterGradients(tuple(d_pairs), d_logits, dxs[0] if single else dxs)


# Finite differences ---------------------------------------------------------


class QuadraticLoss:
    """``0.5 * ||y||^2``."""

    def __call__(self, y):
        return 0.5 * float(np.sum(np.square(y)))

    def grad(self, y):
        return np.asarray(y, dtype=np.float64).copy()


class LinearLoss:
    """``<c, y>`` for a fixed ``c``."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=np.float64)

    def __call__(self, y):
        return float(np.sum(self.c * y))

    def grad(self, y):
        return self.c.copy()


def central_difference(fn, param: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient of ``fn()`` w.r.t. ``param``, perturbed in place."""
    grad = np.empty_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        f_plus = fn()
        flat[k] = orig - eps
        f_minus = fn()
        flat[k] = orig
        gflat[k] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


@dataclass
class FDReport:
    errors: dict[str, float]

    @property
    def worst(self) -> float:
        return max(self.errors.values())

    def passed(self, tol: float) -> bool:
        return self.worst <= tol


def finite_difference_check(
    adapter: MixtureAdapter, x, loss=None, eps: float = 1e-5, perturb: float = 0.0
) -> FDReport:
    """Compare analytic gradients of ``loss(apply_mixture(adapter, x))`` with central differences.

    Every trainable block (``A{i}``, ``B{i}``, ``gates``) and the input ``x`` is
    checked; the error per block is ``max|a - f| / max(|a|, |f|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = QuadraticLoss() if loss is None else loss
    work = adapter.copy()
    xw = np.array(x, dtype=np.float64)

    y = apply_mixture(work, xw)
    grads = backward_mixture(work, xw, loss.grad(y), perturb=perturb)

    def f():
        return loss(apply_mixture(work, xw))

    errors = {}
    for i, pair in enumerate(work.pairs):
        dA, dB = grads.d_pairs[i]
        if pair.a is not None:
            errors[f"A{i}"] = relative_error(dA, central_difference(f, pair.a, eps))
        errors[f"B{i}"] = relative_error(dB, central_difference(f, pair.b, eps))
    if work.gated:
        errors["gates"] = relative_error(grads.d_gate_logits, central_difference(f, work.gate_logits, eps))
    errors["x"] = relative_error(grads.dx, central_difference(f, xw, eps))
    return FDReport(errors)
