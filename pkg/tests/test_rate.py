import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risnet import adgraph as ag
from risnet.adgraph import ComplexTensor, ContractError, DimensionError, Tensor
from risnet.rate import (PhaseConfig, combined_channel, combined_channel_np, effective_channel,
                         matched_filter, quantize_phases, sum_rate, sum_rate_np, wmmse_batch,
                         wmmse_precoder)


def crandn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)


def naive_combined(G, psi, H, D, V):
    Phi = np.diag(np.exp(1j * psi))
    return (G @ Phi @ H + D) @ V


def naive_rate(C, sigma2):
    total = 0.0
    for u in range(C.shape[0]):
        interference = sum(abs(C[u, v]) ** 2 for v in range(C.shape[1]) if v != u)
        total += math.log2(1 + abs(C[u, u]) ** 2 / (interference + sigma2))
    return total


def test_phase_config_unit_modulus():
    p = PhaseConfig(np.random.default_rng(0).uniform(-50, 50, 100))
    np.testing.assert_allclose(np.abs(p.phasors), 1.0, atol=1e-12)


def test_combined_channel_trivial_cases():
    U, N, M = 2, 5, 2
    G = np.zeros((U, N), complex)
    H = np.ones((N, M), complex)
    C = combined_channel(G, Tensor(np.zeros(N)), H, np.eye(2), np.eye(2)).numpy()
    np.testing.assert_array_equal(C, np.eye(2))
    rng = np.random.default_rng(1)
    C = combined_channel(crandn(rng, U, N), Tensor(np.zeros(N)), crandn(rng, N, M),
                         crandn(rng, U, M), np.zeros((M, U))).numpy()
    np.testing.assert_array_equal(C, 0)


def test_combined_channel_matches_explicit_diagonal():
    rng = np.random.default_rng(2)
    U, N, M = 3, 7, 4
    G, H, D, V = crandn(rng, U, N), crandn(rng, N, M), crandn(rng, U, M), crandn(rng, M, U)
    psi = rng.uniform(-np.pi, np.pi, N)
    expected = naive_combined(G, psi, H, D, V)
    np.testing.assert_allclose(combined_channel(G, Tensor(psi), H, D, V).numpy(), expected, atol=1e-12)
    np.testing.assert_allclose(combined_channel_np(G, psi, H, D, V), expected, atol=1e-12)


def test_combined_channel_shape_errors():
    with pytest.raises(DimensionError):
        combined_channel(np.ones((2, 3)), Tensor(np.zeros(4)), np.ones((3, 2)), np.ones((2, 2)), np.eye(2))


def test_sum_rate_examples():
    assert sum_rate(ComplexTensor.from_numpy(np.zeros((2, 2))), 1.0).item() == 0.0
    r = sum_rate(ComplexTensor.from_numpy(np.diag([2.0, 2.0])), 1.0).item()
    assert abs(r - 2 * math.log2(5)) < 1e-12
    rng = np.random.default_rng(3)
    C = crandn(rng, 3, 3)
    assert abs(sum_rate(ComplexTensor.from_numpy(C), 0.7).item() - naive_rate(C, 0.7)) < 1e-12
    assert abs(sum_rate_np(C, 0.7) - naive_rate(C, 0.7)) < 1e-12
    with pytest.raises(ContractError):
        sum_rate(ComplexTensor.from_numpy(C), 0.0)


def test_sum_rate_gradient_wrt_phases():
    rng = np.random.default_rng(4)
    U, N, M = 2, 6, 3
    G, H, D, V = crandn(rng, U, N), crandn(rng, N, M), crandn(rng, U, M), crandn(rng, M, U)
    err = ag.grad_check(lambda p: sum_rate(combined_channel(G, p, H, D, V), 1.0),
                        Tensor(rng.uniform(-np.pi, np.pi, N)))
    assert err < 1e-4


def test_wmmse_single_user_mrt():
    h = np.array([[1.0, 1.0j, -1.0, 1.0]])  # |h|^2 = 4
    pre = wmmse_precoder(h, E_Tr=1.0, sigma2=1.0)
    np.testing.assert_allclose(pre.V[:, 0], h[0].conj() / 2, atol=1e-9)
    assert abs(sum_rate_np(h @ pre.V, 1.0) - math.log2(5)) < 1e-9
    assert abs(pre.power - 1.0) < 1e-6


def test_wmmse_single_user_matched_filter_rate_random():
    rng = np.random.default_rng(5)
    for _ in range(10):
        h = crandn(rng, 1, 6)
        E = rng.uniform(0.5, 50)
        pre = wmmse_precoder(h, E, 1.0)
        expected = math.log2(1 + E * np.linalg.norm(h) ** 2)
        assert abs(sum_rate_np(h @ pre.V, 1.0) - expected) < 1e-9
        assert abs(pre.power - E) < 1e-6


def test_wmmse_orthogonal_rows_symmetric():
    A = np.array([[1.0, 0, 0], [0, 1.0, 0]], dtype=complex)
    pre = wmmse_precoder(A, 10.0, 1.0)
    C = A @ pre.V
    assert abs(abs(C[0, 0]) - abs(C[1, 1])) < 1e-9
    assert abs(C[0, 1]) < 1e-9 and abs(C[1, 0]) < 1e-9


def test_wmmse_monotone_on_100_instances():
    rng = np.random.default_rng(6)
    A = crandn(rng, 100, 3, 4) * rng.uniform(0.2, 3, (100, 1, 1))
    res = wmmse_batch(A, 10.0, 1.0)
    assert not res.failed.any()
    for k in range(100):
        t = res.trace[:, k]
        t = t[np.isfinite(t)]
        assert np.all(np.diff(t) >= -1e-9)
    assert np.all(np.sum(np.abs(res.V) ** 2, axis=(1, 2)) <= 10.0 + 1e-9)


def test_wmmse_beats_random_precoders():
    rng = np.random.default_rng(7)
    E_Tr = 5.0
    for _ in range(10):
        A = crandn(rng, 2, 4)
        best = sum_rate_np(A @ wmmse_precoder(A, E_Tr, 1.0).V, 1.0)
        V = crandn(rng, 10_000, 4, 2)
        V *= np.sqrt(E_Tr * rng.uniform(0, 1, (10_000, 1, 1)) / np.sum(np.abs(V) ** 2, axis=(1, 2), keepdims=True))
        assert best >= sum_rate_np(A @ V, 1.0).max()


def test_matched_filter_full_power():
    rng = np.random.default_rng(8)
    V = matched_filter(crandn(rng, 3, 3, 5), 7.0)
    np.testing.assert_allclose(np.sum(np.abs(V) ** 2, axis=(1, 2)), 7.0)


def test_wmmse_rejects_zero_channel():
    with pytest.raises(ContractError):
        wmmse_precoder(np.zeros((2, 3)), 1.0, 1.0)


def test_quantize_examples():
    q = lambda x: quantize_phases(np.array([x]), 4).psi[0]
    assert abs(q(0.3 * np.pi) - 0.5 * np.pi) < 1e-12
    assert q(1.9 * np.pi) == 0.0
    assert q(np.pi / 4) == 0.0
    with pytest.raises(ContractError):
        quantize_phases(np.zeros(3), 1)


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30), st.sampled_from([2, 4, 8]))
def test_quantize_idempotent_and_closer(vals, levels):
    psi = np.array(vals)
    once = quantize_phases(psi, levels).psi
    np.testing.assert_array_equal(quantize_phases(once, levels).psi, once)
    step = 2 * np.pi / levels
    k = np.round(once / step)
    np.testing.assert_allclose(once, k * step, atol=1e-12)
    # rounded value is a nearest grid point on the circle
    d = np.abs(np.angle(np.exp(1j * (psi - once))))
    assert np.all(d <= step / 2 + 1e-9)


def test_global_phase_offset_invariance():
    rng = np.random.default_rng(9)
    N, M = 16, 4
    a = np.exp(2j * np.pi * rng.uniform(size=N))
    G = a[None, :]
    H = crandn(rng, N, M)
    D = np.zeros((1, M))
    psi = rng.uniform(-np.pi, np.pi, N)
    V = wmmse_precoder(effective_channel(G, psi, H, D), 10.0, 1.0).V
    r0 = sum_rate_np(combined_channel_np(G, psi, H, D, V), 1.0)
    r1 = sum_rate_np(combined_channel_np(G, psi + 1.234, H, D, V), 1.0)
    assert abs(r0 - r1) < 1e-12
