"""Acceptance criteria, one test each.

Every test appends a one-line PASS/FAIL verdict (with its measured worst case
and runtime) that ``conftest.py`` prints in the terminal summary. Running the
file directly (``python tests/test_acceptance.py``) does the same via pytest.
"""

import io
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from moka import seeding
from moka.adapter import PairShape, flop_count, materialize_delta, random_adapter
from moka.bench import bench_shape
from moka.cli import main
from moka.grad import central_difference, relative_error
from moka.shapes import ProjectionSpec, ShapeConfig, count_trainable_params, format_millions, preset
from moka.tasks import make_planted, make_toy_attention
from moka.trainer import TrainConfig, optimal_eta, run_training, sgd_bound, bound_experiment
from moka import verify

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
VERDICTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str, elapsed: float, limit: float | None = None) -> bool:
    in_time = limit is None or elapsed < limit
    ok = ok and in_time
    budget = f" (limit {limit:g}s)" if limit is not None else ""
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}; {detail}; {elapsed:.2f}s{budget}"
    VERDICTS.append(line)
    print(line)
    return ok


def single(m, n, shapes):
    return ShapeConfig("custom", "moka", 1, (ProjectionSpec("delta", m, n, tuple(shapes)),))


def test_1_parameter_counts():
    t0 = time.perf_counter()
    expected = {("llama2-7b", "moka"): 5243520, ("llama2-7b", "moka_s"): 4212544, ("llama3-8b", "moka"): 3932800}
    reported = {("llama2-7b", "moka"): "5.2M", ("llama2-7b", "moka_s"): "4.2M", ("llama3-8b", "moka"): "3.9M"}
    got = {key: count_trainable_params(preset(*key)) for key in expected}
    ok = all(got[k] == expected[k] and format_millions(got[k]) == reported[k] for k in expected)
    detail = ", ".join(f"{m} {v}={got[(m, v)]} ({format_millions(got[(m, v)])})" for m, v in expected)
    assert record(1, "parameter counts", ok, detail, time.perf_counter() - t0, 1.0)


def test_2_oracle_equivalence():
    t0 = time.perf_counter()
    result = verify.suite_oracle(seed=0, sizes=(4, 8, 16), count=240)
    ok = result.instances >= 200 and result.worst <= 1e-10
    assert record(2, "oracle equivalence", ok, f"{result.instances} instances, worst {result.worst:.2e} <= 1e-10",
                  time.perf_counter() - t0, 30.0)


def toy_attention_fd_worst(seed: int) -> float:
    pairs = (PairShape(2, 2, 4, 4), PairShape(4, 2, 2, 4))
    cfg = ShapeConfig("custom", "moka", 1, (ProjectionSpec("q", 8, 8, pairs), ProjectionSpec("v", 8, 8, pairs)))
    task = make_toy_attention(4, 8, cfg, seed)
    rng = np.random.default_rng(seed)
    adapters = {name: random_adapter(pairs, 8, 8, rng) for name in ("q", "v")}
    _, grads = task.loss_and_grads(adapters)
    worst = 0.0
    for name, adapter in adapters.items():
        for pair, (dA, dB) in zip(adapter.pairs, grads[name].d_pairs):
            worst = max(worst, relative_error(dA, central_difference(lambda: task.loss(adapters), pair.a, 1e-5)))
            worst = max(worst, relative_error(dB, central_difference(lambda: task.loss(adapters), pair.b, 1e-5)))
        fd = central_difference(lambda: task.loss(adapters), adapter.gate_logits, 1e-5)
        worst = max(worst, relative_error(grads[name].d_gate_logits, fd))
    return worst


def test_3_gradient_correctness():
    t0 = time.perf_counter()
    result = verify.suite_gradients(seed=0, sizes=(4, 8), count=24)
    attention = max(toy_attention_fd_worst(s) for s in range(3))
    ok = result.instances >= 20 and result.worst <= 1e-5 and attention <= 1e-4
    detail = f"{result.instances} instances worst {result.worst:.2e} <= 1e-5; attention worst {attention:.2e} <= 1e-4"
    assert record(3, "gradient correctness", ok, detail, time.perf_counter() - t0, 60.0)


def test_4_algebraic_laws():
    t0 = time.perf_counter()
    result = verify.suite_algebra(seed=0, count=50)
    assert record(4, "algebraic laws", result.passed, f"{result.instances} instances, worst {result.worst:.2e} <= 1e-12",
                  time.perf_counter() - t0)


def test_5_planted_recovery():
    t0 = time.perf_counter()
    task = make_planted(single(16, 16, [PairShape(4, 4, 4, 4)] * 2), seed=0)
    result = run_training(TrainConfig(task=task, eta=0.05, steps=5000, full_batch=True, record_every=500))
    loss = task.loss(result.adapters)
    err = float(np.linalg.norm(materialize_delta(result.adapters["delta"]) - task.target_delta))
    ok = loss < 1e-6 and err <= 1e-3
    detail = f"loss {loss:.2e} < 1e-6, ||dW - target||_F {err:.2e} <= 1e-3"
    assert record(5, "planted recovery", ok, detail, time.perf_counter() - t0, 120.0)


def convex_instance(seed: int, r: int):
    # width-1 identity pairs, ungated: dW = (1/r) sum B_i is linear in the parameters
    shapes = [PairShape(1, 1, 12, 12, identity_a=True)] * r
    return make_planted(single(12, 12, shapes), seed, gated=False)


def test_6_sgd_bound():
    t0 = time.perf_counter()
    worst_ratio = 0.0
    worst_balance = 0.0
    grid_ok = True
    runs = 0
    for seed, r, T in [(0, 1, 200), (1, 2, 500), (2, 3, 1000)]:
        check = bound_experiment(convex_instance(seed, r), steps=T, seed=seed)
        for c, rep in check.reports.items():
            runs += 1
            worst_ratio = max(worst_ratio, rep.measured_avg / rep.bound, rep.worst_prefix_ratio)
            # eta* of this run's own (gap, L, G): equal terms and best on the 5-point grid
            es = optimal_eta(rep.gap, rep.L, rep.G, rep.T)
            t1, t2 = rep.gap / (es * rep.T), rep.L * es * rep.G / 2
            worst_balance = max(worst_balance, abs(t1 - t2) / max(t1, t2))
            b = sgd_bound(rep.gap, rep.L, rep.G, es, rep.T)
            grid = [sgd_bound(rep.gap, rep.L, rep.G, k * es, rep.T) for k in (0.25, 0.5, 1, 2, 4)]
            grid_ok &= b <= min(grid)
    ok = worst_ratio <= 1 + 1e-6 and worst_balance <= 1e-12 and grid_ok
    detail = (f"{runs} runs at eta*/4, eta*, 4 eta*: worst measured/bound {worst_ratio:.3f} <= 1+1e-6; "
              f"term balance {worst_balance:.1e} <= 1e-12; grid minimum {'ok' if grid_ok else 'missed'}")
    assert record(6, "SGD convergence bound", ok, detail, time.perf_counter() - t0, 120.0)


def test_7_identity_fast_path():
    t0 = time.perf_counter()
    result = verify.suite_identity_fast_path(seed=0, sizes=(4, 8, 16), count=60)
    assert record(7, "identity fast path", result.passed and result.instances >= 50,
                  f"{result.instances} instances, {int(result.worst)} bitwise mismatches", time.perf_counter() - t0)


def test_8_reformulation_efficiency():
    t0 = time.perf_counter()
    shape = PairShape(64, 64, 64, 64)
    ratio = flop_count(shape, 4096, 4096).ratio
    row = bench_shape(shape, repeats=5)
    ok = ratio == 32.0 and row["time_ratio"] >= 5.0
    detail = f"flop ratio {ratio:g} == 32, measured time ratio {row['time_ratio']:.1f} >= 5"
    assert record(8, "reformulation efficiency", ok, detail, time.perf_counter() - t0)


def _run_cli(*argv) -> tuple[int, str]:
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(list(argv))
    return code, buf.getvalue()


def test_9_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "planted.toml"
    text = (CONFIGS / "planted.toml").read_text()
    cfg.write_text(text.replace("steps = 5000", "steps = 400").replace("full_batch = true", "full_batch = false"))
    outputs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        codes = [
            _run_cli("verify", "--seed", "3", "--out", str(d))[0],
            _run_cli("train", "--config", str(cfg), "--out", str(d))[0],
            _run_cli("bench", "--shapes", "8x8:8x8,I4:4x4", "--repeats", "1", "--reproducible",
                     "--out", str(d / "bench.csv"))[0],
        ]
        _, count_out = _run_cli("count", "--model", "llama2-7b", "--variant", "moka_s")
        files = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
        outputs.append((codes, count_out, files))
    (codes_a, count_a, files_a), (codes_b, count_b, files_b) = outputs
    ok = codes_a == codes_b == [0, 0, 0] and count_a == count_b and files_a == files_b and len(files_a) == 4
    detail = f"{len(files_a)} files ({', '.join(files_a)}) plus count stdout byte-identical across reruns"
    assert record(9, "determinism", ok, detail, time.perf_counter() - t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
