"""Reshaped-matmul apply versus materialise-then-matvec, timed and flop-counted."""

from __future__ import annotations

import statistics
import time

import numpy as np

from moka import seeding
from moka.adapter import PairShape, apply_mixture, flop_count, materialize_delta, random_adapter
from moka.dense import EXPLICIT_SIZE_CAP

ANALYTIC_COLUMNS = (
    "shape",
    "m",
    "n",
    "flops_reformulated",
    "flops_explicit",
    "flop_ratio",
    "bytes_reformulated",
    "bytes_explicit",
    "explicit_status",
    "max_abs_diff",
)
TIMING_COLUMNS = ("time_reformulated_s", "time_explicit_s", "time_explicit_matvec_s", "time_ratio")


def parse_shape(text: str) -> PairShape:
    """``"64x64:64x64"`` -> A is 64x64, B is 64x64; a ``I`` prefix (``"I8:4x4"``) marks an identity A."""
    try:
        a_txt, b_txt = text.strip().split(":")
        m_b, n_b = (int(v) for v in b_txt.lower().split("x"))
        if a_txt.upper().startswith("I"):
            k = int(a_txt[1:])
            shape = PairShape(k, k, m_b, n_b, identity_a=True)
        else:
            m_a, n_a = (int(v) for v in a_txt.lower().split("x"))
            shape = PairShape(m_a, n_a, m_b, n_b)
    except ValueError:
        raise ValueError(f"bad shape {text!r}; expected e.g. 64x64:64x64 or I8:4x4") from None
    if min(shape.m_a, shape.n_a, shape.m_b, shape.n_b) < 1:
        raise ValueError(f"bad shape {text!r}: dims must be >= 1")
    return shape


def parse_shapes(text: str) -> list[PairShape]:
    return [parse_shape(tok) for tok in text.split(",") if tok.strip()]


def shape_label(s: PairShape) -> str:
    a = f"I{s.n_a}" if s.identity_a else f"{s.m_a}x{s.n_a}"
    return f"{a}:{s.m_b}x{s.n_b}"


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_shape(shape: PairShape, repeats: int, seed: int = 0, cap: int = EXPLICIT_SIZE_CAP, timing: bool = True) -> dict:
    m, n = shape.m_a * shape.m_b, shape.n_a * shape.n_b
    rng = seeding.stream(seed, seeding.BENCH)
    adapter = random_adapter([shape], m, n, rng)
    x = rng.standard_normal(n)
    flops = flop_count(shape, m, n)
    row = {
        "shape": shape_label(shape),
        "m": m,
        "n": n,
        "flops_reformulated": flops.reformulated,
        "flops_explicit": flops.explicit,
        "flop_ratio": flops.ratio,
        "bytes_reformulated": flops.reformulated_bytes,
        "bytes_explicit": flops.explicit_bytes,
    }
    y = apply_mixture(adapter, x)
    over_cap = m * n > cap
    row["explicit_status"] = "over_cap" if over_cap else "ok"
    if over_cap:
        row["max_abs_diff"] = float("nan")
    else:
        delta = materialize_delta(adapter, cap)
        row["max_abs_diff"] = float(np.max(np.abs(delta @ x - y)))
    if timing:
        t_ref = _median_time(lambda: apply_mixture(adapter, x), repeats)
        row["time_reformulated_s"] = t_ref
        if over_cap:
            row["time_explicit_s"] = row["time_explicit_matvec_s"] = row["time_ratio"] = float("nan")
        else:
            row["time_explicit_s"] = _median_time(lambda: materialize_delta(adapter, cap) @ x, repeats)
            row["time_explicit_matvec_s"] = _median_time(lambda: delta @ x, repeats)
            row["time_ratio"] = row["time_explicit_s"] / t_ref
    return row


def run_bench(shapes, repeats: int = 5, seed: int = 0, cap: int = EXPLICIT_SIZE_CAP, timing: bool = True) -> list[dict]:
    return [bench_shape(s, repeats, seed, cap, timing) for s in shapes]
