"""Randomised oracle, gradient and algebra suites run by ``moka verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moka import seeding
from moka.adapter import (
    KronFactorPair,
    MixtureAdapter,
    PairShape,
    apply_mixture,
    apply_pair,
    gates,
    materialize_delta,
    random_adapter,
    softmax,
)
from moka.dense import (
    frobenius_norm,
    kron_explicit,
    numeric_rank,
    pad_vector,
    reshape_vec_to_matrix,
    truncate_vector,
    vec_matrix,
)
from moka.grad import LinearLoss, backward_mixture, finite_difference_check

DEFAULT_SIZES = (4, 8, 16)
MAX_SIZE = 32


@dataclass(frozen=True)
class SuiteResult:
    name: str
    instances: int
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<22} {status}  instances={self.instances:<4d} worst={self.worst:.3e}  tol={self.tolerance:.0e}"


def parse_sizes(text: str) -> tuple[int, ...]:
    sizes = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            value = int(tok)
        except ValueError:
            raise ValueError(f"size {tok!r} is not an integer") from None
        if not 1 <= value <= MAX_SIZE:
            raise ValueError(f"size {value} outside 1..{MAX_SIZE}")
        sizes.append(value)
    if not sizes:
        raise ValueError("empty size list")
    return tuple(sizes)


def random_shapes(rng, max_dim: int, r: int, identity_prob: float = 0.25) -> list[PairShape]:
    shapes = []
    for _ in range(r):
        m_b, n_b = rng.integers(1, max_dim + 1, size=2)
        if rng.random() < identity_prob:
            k = int(rng.integers(1, max_dim + 1))
            shapes.append(PairShape(k, k, int(m_b), int(n_b), identity_a=True))
        else:
            m_a, n_a = rng.integers(1, max_dim + 1, size=2)
            shapes.append(PairShape(int(m_a), int(n_a), int(m_b), int(n_b)))
    return shapes


def random_instance(rng, max_dim: int, r_max: int = 3, identity_prob: float = 0.25):
    """Random adapter of 1..r_max pairs with factor dims <= max_dim, plus an input vector.

    ``m`` and ``n`` are drawn below the smallest pair output/input size, so
    padding and truncation are exercised whenever they differ.
    """
    r = int(rng.integers(1, r_max + 1))
    shapes = random_shapes(rng, max_dim, r, identity_prob)
    n = int(rng.integers(1, min(s.n_a * s.n_b for s in shapes) + 1))
    m = int(rng.integers(1, min(s.m_a * s.m_b for s in shapes) + 1))
    adapter = random_adapter(shapes, m, n, rng)
    return adapter, rng.standard_normal(n)


def explicit_oracle_matvec(adapter: MixtureAdapter, x) -> np.ndarray:
    """Sum of gated ``kron_explicit`` matvecs with explicit pad / truncate."""
    alpha = gates(adapter)
    y = np.zeros(adapter.m)
    for a_i, pair in zip(alpha, adapter.pairs):
        K = kron_explicit(pair.a_matrix(), pair.b)
        y += a_i * truncate_vector(K @ pad_vector(x, K.shape[1]), adapter.m)
    return y


def _instances(seed, sizes, count, stream_id):
    rng = seeding.stream(seed, seeding.VERIFY, stream_id)
    for k in range(count):
        yield random_instance(rng, sizes[k % len(sizes)]), rng


def suite_oracle(seed: int, sizes, count: int = 240) -> SuiteResult:
    worst = 0.0
    for adapter, x in (inst for inst, _ in _instances(seed, sizes, count, 1)):
        y = apply_mixture(adapter, x)
        worst = max(
            worst,
            float(np.max(np.abs(y - materialize_delta(adapter) @ x))),
            float(np.max(np.abs(y - explicit_oracle_matvec(adapter, x)))),
        )
    return SuiteResult("oracle_equivalence", count, worst, 1e-10)


def suite_gradients(seed: int, sizes, count: int = 24, perturb: float = 0.0) -> SuiteResult:
    worst = 0.0
    small = tuple(min(s, 8) for s in sizes)
    for (adapter, x), rng in _instances(seed, small, count, 2):
        loss = LinearLoss(rng.standard_normal(adapter.m))
        worst = max(worst, finite_difference_check(adapter, x, loss, perturb=perturb).worst)
    return SuiteResult("finite_differences", count, worst, 1e-5)


def suite_gradient_identities(seed: int, sizes, count: int = 100) -> SuiteResult:
    """Gate-gradient sum rule and ``dx == dW^T upstream``."""
    worst = 0.0
    for (adapter, x), rng in _instances(seed, sizes, count, 3):
        up = rng.standard_normal(adapter.m)
        g = backward_mixture(adapter, x, up)
        worst = max(
            worst,
            abs(float(np.sum(g.d_gate_logits))),
            float(np.max(np.abs(g.dx - materialize_delta(adapter).T @ up))),
        )
    return SuiteResult("gradient_identities", count, worst, 1e-10)


def planted_rank_matrix(rng, rows: int, cols: int, k: int) -> np.ndarray:
    return sum(np.outer(rng.standard_normal(rows), rng.standard_normal(cols)) for _ in range(k))


def suite_algebra(seed: int, count: int = 50) -> SuiteResult:
    """Frobenius and rank multiplicativity, gate simplex and shift invariance.

    Rank mismatches count as error 1.0; everything else is a relative or
    absolute float error.
    """
    rng = seeding.stream(seed, seeding.VERIFY, 4)
    worst = 0.0
    for _ in range(count):
        A = rng.standard_normal(tuple(rng.integers(1, 17, size=2)))
        B = rng.standard_normal(tuple(rng.integers(1, 17, size=2)))
        lhs = frobenius_norm(kron_explicit(A, B))
        rhs = frobenius_norm(A) * frobenius_norm(B)
        worst = max(worst, abs(lhs - rhs) / rhs)

        ka, kb = rng.integers(1, 4, size=2)
        ra, ca, rb, cb = rng.integers(3, 9, size=4)
        A = planted_rank_matrix(rng, ra, ca, ka)
        B = planted_rank_matrix(rng, rb, cb, kb)
        if numeric_rank(kron_explicit(A, B)) != numeric_rank(A) * numeric_rank(B) or numeric_rank(A) != ka:
            worst = max(worst, 1.0)

        logits = rng.normal(0.0, 5.0, int(rng.integers(1, 12)))
        alpha = softmax(logits)
        worst = max(worst, abs(float(np.sum(alpha)) - 1.0), float(np.max(np.abs(softmax(logits + rng.normal(0, 50)) - alpha))))
        if np.any(alpha <= 0):
            worst = max(worst, 1.0)
    return SuiteResult("algebraic_laws", count, worst, 1e-12)


def suite_identity_fast_path(seed: int, sizes, count: int = 60) -> SuiteResult:
    """Identity-left pairs must match an explicit identity factor bit for bit (error 1 per mismatch)."""
    rng = seeding.stream(seed, seeding.VERIFY, 5)
    mismatches = 0
    for k in range(count):
        d = sizes[k % len(sizes)]
        n_a = int(rng.integers(1, d + 1))
        m_b, n_b = (int(v) for v in rng.integers(1, d + 1, size=2))
        pair = KronFactorPair.identity(n_a, rng.standard_normal((m_b, n_b)))
        n = int(rng.integers(1, n_a * n_b + 1))
        m = int(rng.integers(1, n_a * m_b + 1))
        x = rng.standard_normal(n)
        fast = apply_pair(pair, x, n, m)
        slow = apply_pair(pair.with_explicit_identity(), x, n, m)
        mismatches += int(fast.tobytes() != slow.tobytes())
    return SuiteResult("identity_fast_path", count, float(mismatches), 0.0)


def suite_roundtrips(seed: int, count: int = 100) -> SuiteResult:
    """Reshape/vec and pad/truncate round trips (error 1 per inexact round trip)."""
    rng = seeding.stream(seed, seeding.VERIFY, 6)
    failures = 0
    for _ in range(count):
        rows, cols = (int(v) for v in rng.integers(1, 17, size=2))
        x = rng.standard_normal(rows * cols)
        failures += int(not np.array_equal(vec_matrix(reshape_vec_to_matrix(x, rows, cols)), x))
        M = rng.standard_normal((rows, cols))
        failures += int(not np.array_equal(reshape_vec_to_matrix(vec_matrix(M), rows, cols), M))
        extra = int(rng.integers(0, 8))
        failures += int(not np.array_equal(truncate_vector(pad_vector(x, x.size + extra), x.size), x))
    return SuiteResult("roundtrips", count, float(failures), 0.0)


def run_all(seed: int = 0, sizes=DEFAULT_SIZES, perturb: float = 0.0) -> list[SuiteResult]:
    return [
        suite_roundtrips(seed),
        suite_algebra(seed),
        suite_oracle(seed, sizes),
        suite_identity_fast_path(seed, sizes),
        suite_gradient_identities(seed, sizes),
        suite_gradients(seed, sizes, perturb=perturb),
    ]
