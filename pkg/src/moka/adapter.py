"""Gated mixtures of Kronecker factor pairs and their matmul-only forward pass.

A pair ``(A, B)`` with ``A: m_a x n_a`` and ``B: m_b x n_b`` acts on a length-``n``
input by zero-padding it to ``n_a * n_b``, reshaping to ``n_b x n_a`` (column
major), computing ``B @ X @ A.T`` and truncating the vectorised result to ``m``.
That equals ``(A kron B)[:m, :n] @ x`` without ever forming the product.

All forward helpers accept either one input vector or a batch with one input
per row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from moka.dense import EXPLICIT_SIZE_CAP, ShapeError, SizeCapError, as_matrix


@dataclass(frozen=True, eq=False)
class KronFactorPair:
    """One Kronecker term. ``a`` is ``None`` when the left factor is a fixed identity."""

    a: np.ndarray | None
    b: np.ndarray
    identity_dim: int = 0

    def __post_init__(self):
        b = as_matrix(self.b)
        object.__setattr__(self, "b", b)
        if self.a is None:
            if self.identity_dim < 1:
                raise ShapeError("identity pair needs identity_dim >= 1")
        else:
            object.__setattr__(self, "a", as_matrix(self.a))
            if self.identity_dim:
                raise ShapeError("pass either an explicit a or identity_dim, not both")
        if min(self.a_shape + self.b.shape) < 1:
            raise ShapeError(f"factor dims must be >= 1, got A {self.a_shape}, B {self.b.shape}")

    @classmethod
    def identity(cls, n_a: int, b) -> KronFactorPair:
        return cls(a=None, b=b, identity_dim=n_a)

    @property
    def identity_a(self) -> bool:
        return self.a is None

    @property
    def a_shape(self) -> tuple[int, int]:
        if self.a is None:
            return (self.identity_dim, self.identity_dim)
        return self.a.shape

    @property
    def in_size(self) -> int:
        return self.a_shape[1] * self.b.shape[1]

    @property
    def out_size(self) -> int:
        return self.a_shape[0] * self.b.shape[0]

    @property
    def num_params(self) -> int:
        return self.b.size + (0 if self.a is None else self.a.size)

    def a_matrix(self) -> np.ndarray:
        """Left factor as a dense matrix, materialising the identity if needed."""
        if self.a is None:
            return np.eye(self.identity_dim)
        return self.a

    def with_explicit_identity(self) -> KronFactorPair:
        return KronFactorPair(a=self.a_matrix().copy(), b=self.b)


@dataclass(frozen=True, eq=False)
class MixtureAdapter:
    """``r`` factor pairs mixed by softmax gates, targeting an ``m x n`` weight.

    With ``gated=False`` the gates are fixed to ``1/r`` and the logits are not
    trained (the no-gate ablation).
    """

    pairs: tuple[KronFactorPair, ...]
    gate_logits: np.ndarray
    m: int
    n: int
    gated: bool = True

    def __post_init__(self):
        pairs = tuple(self.pairs)
        object.__setattr__(self, "pairs", pairs)
        logits = np.array(self.gate_logits, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "gate_logits", logits)
        if not pairs:
            raise ShapeError("adapter needs at least one pair")
        if logits.size != len(pairs):
            raise ShapeError(f"{len(pairs)} pairs but {logits.size} gate logits")
        if self.m < 1 or self.n < 1:
            raise ShapeError(f"target dims must be positive, got {self.m}x{self.n}")
        for i, pair in enumerate(pairs):
            check_pair_dims(pair, self.m, self.n, index=i)

    @property
    def r(self) -> int:
        return len(self.pairs)

    @property
    def num_params(self) -> int:
        return sum(p.num_params for p in self.pairs) + self.r

    def copy(self) -> MixtureAdapter:
        pairs = tuple(
            KronFactorPair(a=None if p.a is None else p.a.copy(), b=p.b.copy(), identity_dim=p.identity_dim)
            for p in self.pairs
        )
        return replace(self, pairs=pairs, gate_logits=self.gate_logits.copy())


def check_pair_dims(pair: KronFactorPair, m: int, n: int, index: int | None = None) -> None:
    where = "" if index is None else f"pair {index}: "
    m_a, n_a = pair.a_shape
    m_b, n_b = pair.b.shape
    if n_a * n_b < n:
        raise ShapeError(f"{where}n_a*n_b = {n_a}*{n_b} = {n_a * n_b} < n = {n}")
    if m_a * m_b < m:
        raise ShapeError(f"{where}m_a*m_b = {m_a}*{m_b} = {m_a * m_b} < m = {m}")


def softmax(logits) -> np.ndarray:
    g = np.asarray(logits, dtype=np.float64)
    z = np.exp(g - np.max(g))
    return z / np.sum(z)


def gates(adapter: MixtureAdapter) -> np.ndarray:
    if not adapter.gated:
        return np.full(adapter.r, 1.0 / adapter.r)
    return softmax(adapter.gate_logits)


def _as_batch(x, length: int, what: str = "x") -> tuple[np.ndarray, bool]:
    xs = np.asarray(x, dtype=np.float64)
    single = xs.ndim == 1
    if single:
        xs = xs[None, :]
    if xs.ndim != 2 or xs.shape[1] != length:
        raise ShapeError(f"{what} must have length {length}, got shape {np.shape(x)}")
    return xs, single


def pad_rows(xs: np.ndarray, width: int) -> np.ndarray:
    if xs.shape[1] == width:
        return xs
    out = np.zeros((xs.shape[0], width))
    out[:, : xs.shape[1]] = xs
    return out


def reshape_rows(xs: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Column-major reshape of every row: ``(batch, rows*cols) -> (batch, rows, cols)``."""
    return xs.reshape(xs.shape[0], cols, rows).transpose(0, 2, 1)


def vec_rows(ms: np.ndarray) -> np.ndarray:
    """Column-stack each matrix of a batch: ``(batch, rows, cols) -> (batch, rows*cols)``."""
    return ms.transpose(0, 2, 1).reshape(ms.shape[0], -1)


def pair_core(pair: KronFactorPair, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X, B @ X)`` for an already padded batch; shared by forward and backward."""
    n_a = pair.a_shape[1]
    n_b = pair.b.shape[1]
    X = reshape_rows(xs, n_b, n_a)
    return X, np.matmul(pair.b, X)


def apply_pair_batch(pair: KronFactorPair, xs: np.ndarray, m: int) -> np.ndarray:
    """Forward one pair on a padded-to-fit batch ``(batch, n)``; returns ``(batch, m)``."""
    xs = pad_rows(xs, pair.in_size)
    _, BX = pair_core(pair, xs)
    Y = BX if pair.a is None else np.matmul(BX, pair.a.T)
    return vec_rows(Y)[:, :m]


def apply_pair(pair: KronFactorPair, x, n: int, m: int) -> np.ndarray:
    check_pair_dims(pair, m, n)
    xs, single = _as_batch(x, n)
    y = apply_pair_batch(pair, xs, m)
    return y[0] if single else y


def apply_mixture(adapter: MixtureAdapter, x) -> np.ndarray:
    xs, single = _as_batch(x, adapter.n)
    alpha = gates(adapter)
    y = np.zeros((xs.shape[0], adapter.m))
    for a_i, pair in zip(alpha, adapter.pairs):
        y += a_i * apply_pair_batch(pair, xs, adapter.m)
    return y[0] if single else y


def adapted_forward(w_frozen, adapter: MixtureAdapter, x) -> np.ndarray:
    """Frozen layer output plus the adapter's residual update."""
    w = as_matrix(w_frozen)
    if w.shape != (adapter.m, adapter.n):
        raise ShapeError(f"frozen weight is {w.shape[0]}x{w.shape[1]}, adapter targets {adapter.m}x{adapter.n}")
    xs, single = _as_batch(x, adapter.n)
    y = xs @ w.T + apply_mixture(adapter, xs)
    return y[0] if single else y


def materialize_delta(adapter: MixtureAdapter, cap: int = EXPLICIT_SIZE_CAP) -> np.ndarray:
    """Dense ``m x n`` update equivalent to :func:`apply_mixture`.

    Padding the input keeps only the first ``n`` columns of each Kronecker
    product and truncating the output keeps the first ``m`` rows.
    """
    m, n = adapter.m, adapter.n
    if m * n > cap:
        raise SizeCapError(f"materialised update has {m * n} entries, cap is {cap}")
    alpha = gates(adapter)
    delta = np.zeros((m, n))
    for a_i, pair in zip(alpha, adapter.pairs):
        delta += a_i * kron_block(pair, m, n)
    return delta


def kron_block(pair: KronFactorPair, m: int, n: int) -> np.ndarray:
    """Upper-left ``m x n`` block of ``A kron B`` without building the full product."""
    A = pair.a_matrix()
    B = pair.b
    m_b, n_b = B.shape
    rows_a = -(-m // m_b)
    cols_a = -(-n // n_b)
    block = np.einsum("ij,kl->ikjl", A[:rows_a, :cols_a], B).reshape(rows_a * m_b, cols_a * n_b)
    return block[:m, :n]


@dataclass(frozen=True)
class PairShape:
    """Shape of one factor pair: ``A`` is ``m_a x n_a``, ``B`` is ``m_b x n_b``."""

    m_a: int
    n_a: int
    m_b: int
    n_b: int
    identity_a: bool = False

    @property
    def num_params(self) -> int:
        return self.m_b * self.n_b + (0 if self.identity_a else self.m_a * self.n_a)


def init_adapter(
    shapes, m: int, n: int, rng: np.random.Generator, gated: bool = True
) -> MixtureAdapter:
    """Zero-update initialisation: ``B = 0``, ``A ~ N(0, 1/n_a)``, logits 0."""
    pairs = []
    for s in shapes:
        b = np.zeros((s.m_b, s.n_b))
        if s.identity_a:
            if s.m_a != s.n_a:
                raise ShapeError(f"identity factor must be square, got {s.m_a}x{s.n_a}")
            pairs.append(KronFactorPair.identity(s.n_a, b))
        else:
            pairs.append(KronFactorPair(a=rng.normal(0.0, 1.0 / np.sqrt(s.n_a), (s.m_a, s.n_a)), b=b))
    return MixtureAdapter(tuple(pairs), np.zeros(len(pairs)), m, n, gated=gated)


def random_adapter(
    shapes, m: int, n: int, rng: np.random.Generator, gated: bool = True, logit_scale: float = 1.0
) -> MixtureAdapter:
    """Adapter with every trainable entry drawn from N(0, 1) (logits scaled)."""
    pairs = []
    for s in shapes:
        b = rng.standard_normal((s.m_b, s.n_b))
        if s.identity_a:
            pairs.append(KronFactorPair.identity(s.n_a, b))
        else:
            pairs.append(KronFactorPair(a=rng.standard_normal((s.m_a, s.n_a)), b=b))
    logits = logit_scale * rng.standard_normal(len(pairs))
    return MixtureAdapter(tuple(pairs), logits, m, n, gated=gated)


def pair_shapes(adapter: MixtureAdapter) -> list[PairShape]:
    return [PairShape(*p.a_shape, *p.b.shape, identity_a=p.identity_a) for p in adapter.pairs]


@dataclass(frozen=True)
class FlopCount:
    reformulated: int
    explicit: int
    reformulated_bytes: int = field(default=0)
    explicit_bytes: int = field(default=0)

    @property
    def ratio(self) -> float:
        return self.explicit / self.reformulated


def flop_count(shape: PairShape, m: int, n: int) -> FlopCount:
    """Multiply-add flops (2 per MAC) for one matvec: reshaped matmuls vs explicit dense.

    Byte counts are float64 transient storage: padded input, intermediate and
    output for the reshaped form; the materialised ``m x n`` matrix for the
    explicit one.
    """
    first = 2 * shape.m_b * shape.n_b * shape.n_a
    second = 0 if shape.identity_a else 2 * shape.m_b * shape.n_a * shape.m_a
    transient = shape.n_a * shape.n_b + shape.m_b * shape.n_a + shape.m_a * shape.m_b
    return FlopCount(
        reformulated=first + second,
        explicit=2 * m * n,
        reformulated_bytes=8 * transient,
        explicit_bytes=8 * m * n,
    )
