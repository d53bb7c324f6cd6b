import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moka.adapter import (
    KronFactorPair,
    MixtureAdapter,
    PairShape,
    adapted_forward,
    apply_mixture,
    apply_pair,
    flop_count,
    gates,
    init_adapter,
    materialize_delta,
    random_adapter,
)
from moka.dense import ShapeError, SizeCapError, kron_explicit, pad_vector, truncate_vector
from moka.verify import explicit_oracle_matvec, random_instance


def test_identity_pair_is_identity_map():
    pair = KronFactorPair(np.eye(2), np.eye(2))
    np.testing.assert_array_equal(apply_pair(pair, [1.0, 2.0, 3.0, 4.0], 4, 4), [1, 2, 3, 4])


def test_scalar_pair():
    pair = KronFactorPair([[2.0]], [[3.0]])
    np.testing.assert_array_equal(apply_pair(pair, [5.0], 1, 1), [30.0])


def test_pair_matches_explicit_kron_with_truncation(rng):
    A, B = rng.standard_normal((3, 4)), rng.standard_normal((5, 2))
    x = rng.standard_normal(8)
    expected = truncate_vector(kron_explicit(A, B) @ pad_vector(x, 8), 15)
    assert np.max(np.abs(apply_pair(KronFactorPair(A, B), x, 8, 15) - expected)) <= 1e-10


def test_pair_pads_short_inputs(rng):
    A, B = rng.standard_normal((3, 3)), rng.standard_normal((2, 3))
    x = rng.standard_normal(7)
    expected = truncate_vector(kron_explicit(A, B) @ pad_vector(x, 9), 5)
    np.testing.assert_allclose(apply_pair(KronFactorPair(A, B), x, 7, 5), expected, atol=1e-12)


def test_pair_rejects_too_small_factors():
    pair = KronFactorPair(np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ShapeError, match="< n = 5"):
        apply_pair(pair, np.ones(5), 5, 4)
    with pytest.raises(ShapeError, match="pair 1"):
        MixtureAdapter((pair, KronFactorPair(np.ones((1, 1)), np.ones((2, 2)))), [0, 0], 4, 4)


def test_gates_examples():
    def g(logits):
        return gates(MixtureAdapter(tuple(KronFactorPair([[1.0]], [[1.0]]) for _ in logits), logits, 1, 1))

    np.testing.assert_allclose(g([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(g(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6], atol=1e-15)
    saturated = g([1000.0, 0.0])
    assert np.all(np.isfinite(saturated))
    assert saturated[0] == 1.0 and saturated[1] == 0.0


def test_ungated_adapter_uses_uniform_weights(rng):
    adapter = random_adapter([PairShape(2, 2, 2, 2)] * 4, 4, 4, rng, gated=False)
    np.testing.assert_array_equal(gates(adapter), [0.25] * 4)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=10), st.floats(-100, 100))
def test_gate_simplex_and_shift_invariance(logits, shift):
    pairs = tuple(KronFactorPair([[1.0]], [[1.0]]) for _ in logits)
    alpha = gates(MixtureAdapter(pairs, logits, 1, 1))
    shifted = gates(MixtureAdapter(pairs, np.array(logits) + shift, 1, 1))
    assert abs(alpha.sum() - 1.0) <= 1e-12
    assert np.all(alpha > 0)
    assert np.max(np.abs(alpha - shifted)) <= 1e-12


def test_single_pair_mixture_equals_pair(rng):
    pair = KronFactorPair(rng.standard_normal((3, 2)), rng.standard_normal((2, 4)))
    x = rng.standard_normal(7)
    adapter = MixtureAdapter((pair,), [0.3], 5, 7)
    np.testing.assert_array_equal(apply_mixture(adapter, x), apply_pair(pair, x, 7, 5))


def test_identical_pairs_with_uniform_gates(rng):
    pair = KronFactorPair(rng.standard_normal((3, 2)), rng.standard_normal((2, 4)))
    x = rng.standard_normal(8)
    twin = MixtureAdapter((pair, pair), [0.0, 0.0], 6, 8)
    np.testing.assert_allclose(apply_mixture(twin, x), apply_pair(pair, x, 8, 6), atol=1e-14)


def test_mixture_matches_explicit_oracle(rng):
    shapes = [PairShape(3, 4, 5, 2), PairShape(2, 3, 4, 3), PairShape(4, 4, 2, 3, identity_a=True)]
    adapter = random_adapter(shapes, 8, 8, rng)
    x = rng.standard_normal(8)
    assert np.max(np.abs(apply_mixture(adapter, x) - explicit_oracle_matvec(adapter, x))) <= 1e-10


@given(st.integers(0, 2**32 - 1), st.integers(1, 16))
def test_oracle_equivalence(seed, max_dim):
    adapter, x = random_instance(np.random.default_rng(seed), max_dim)
    y = apply_mixture(adapter, x)
    assert np.max(np.abs(y - materialize_delta(adapter) @ x)) <= 1e-10
    assert np.max(np.abs(y - explicit_oracle_matvec(adapter, x))) <= 1e-10


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_mixture_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    adapter, x = random_instance(rng, 8)
    y = rng.standard_normal(x.size)
    lhs = apply_mixture(adapter, a * x + b * y)
    rhs = a * apply_mixture(adapter, x) + b * apply_mixture(adapter, y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_batched_apply_matches_rowwise(rng):
    adapter, _ = random_instance(rng, 6)
    xs = rng.standard_normal((5, adapter.n))
    batched = apply_mixture(adapter, xs)
    for i in range(5):
        np.testing.assert_allclose(batched[i], apply_mixture(adapter, xs[i]), atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_identity_fast_path_is_bitwise_equal(seed):
    rng = np.random.default_rng(seed)
    n_a, m_b, n_b = (int(v) for v in rng.integers(1, 9, size=3))
    pair = KronFactorPair.identity(n_a, rng.standard_normal((m_b, n_b)))
    n = int(rng.integers(1, n_a * n_b + 1))
    m = int(rng.integers(1, n_a * m_b + 1))
    x = rng.standard_normal(n)
    fast = apply_pair(pair, x, n, m)
    slow = apply_pair(pair.with_explicit_identity(), x, n, m)
    assert fast.tobytes() == slow.tobytes()


def test_identity_pair_has_no_a_parameters():
    pair = KronFactorPair.identity(5, np.ones((3, 3)))
    assert pair.identity_a and pair.a is None
    assert pair.num_params == 9
    assert pair.a_shape == (5, 5)


def test_exact_fit_reduces_to_plain_kron(rng):
    A, B = rng.standard_normal((3, 2)), rng.standard_normal((4, 5))
    x = rng.standard_normal(10)
    adapter = MixtureAdapter((KronFactorPair(A, B),), [0.0], 12, 10)
    np.testing.assert_allclose(apply_mixture(adapter, x), kron_explicit(A, B) @ x, atol=1e-12)
    np.testing.assert_allclose(materialize_delta(adapter), kron_explicit(A, B), atol=0)


def test_adapted_forward(rng):
    w = rng.standard_normal((6, 6))
    x = rng.standard_normal(6)
    zero = init_adapter([PairShape(2, 3, 3, 2), PairShape(3, 3, 2, 2)], 6, 6, rng)
    np.testing.assert_array_equal(adapted_forward(w, zero, x), w @ x)

    adapter = random_adapter([PairShape(2, 3, 3, 2), PairShape(3, 3, 2, 2)], 6, 6, rng)
    np.testing.assert_array_equal(adapted_forward(np.zeros((6, 6)), adapter, x), apply_mixture(adapter, x))
    dense = (w + materialize_delta(adapter)) @ x
    assert np.max(np.abs(adapted_forward(w, adapter, x) - dense)) <= 1e-10
    with pytest.raises(ShapeError):
        adapted_forward(np.zeros((6, 5)), adapter, x)


def test_materialize_saturated_gate(rng):
    shapes = [PairShape(2, 2, 2, 2)] * 3
    adapter = random_adapter(shapes, 4, 4, rng)
    adapter = MixtureAdapter(adapter.pairs, [50.0, 0.0, 0.0], 4, 4)
    first = kron_explicit(adapter.pairs[0].a, adapter.pairs[0].b)
    assert np.max(np.abs(materialize_delta(adapter) - first)) <= 1e-8


@given(st.integers(0, 2**32 - 1))
def test_materialize_matches_basis_probes(seed):
    adapter, _ = random_instance(np.random.default_rng(seed), 6)
    delta = materialize_delta(adapter)
    for j in range(adapter.n):
        e = np.zeros(adapter.n)
        e[j] = 1.0
        assert np.max(np.abs(delta[:, j] - apply_mixture(adapter, e))) <= 1e-12


def test_materialize_size_cap(rng):
    adapter = random_adapter([PairShape(8, 8, 8, 8)], 64, 64, rng)
    with pytest.raises(SizeCapError):
        materialize_delta(adapter, cap=64 * 64 - 1)


def test_init_is_zero_update(rng):
    adapter = init_adapter([PairShape(4, 4, 4, 4), PairShape(4, 4, 4, 4, identity_a=True)], 16, 16, rng)
    assert all(np.all(p.b == 0) for p in adapter.pairs)
    np.testing.assert_array_equal(adapter.gate_logits, [0.0, 0.0])
    np.testing.assert_array_equal(materialize_delta(adapter), np.zeros((16, 16)))


def test_flop_count_for_64_cube():
    flops = flop_count(PairShape(64, 64, 64, 64), 4096, 4096)
    assert flops.reformulated == 2 * 64 * 64 * 64 * 2
    assert flops.explicit == 2 * 4096 * 4096
    assert flops.ratio == 32.0
    # identity-left pairs skip the second matmul
    assert flop_count(PairShape(64, 64, 64, 64, identity_a=True), 4096, 4096).ratio == 64.0
