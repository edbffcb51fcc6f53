import math

import numpy as np
import pytest

from risnet.baselines import BcdConfig, _sweep, bcd_optimize, random_phases
from risnet.channel import ChannelSample, ConfigError, ScenarioConfig, generate_sample, spawn_rngs
from risnet.rate import combined_channel_np, effective_channel, sum_rate_np, wmmse_precoder


def crandn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)


def test_random_phases():
    a = random_phases(100_000, np.random.default_rng(0)).psi
    b = random_phases(100_000, np.random.default_rng(0)).psi
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() < 2 * np.pi
    c = np.cos(a)
    assert abs(c.mean()) < 3 * c.std() / np.sqrt(c.size)
    with pytest.raises(ConfigError):
        random_phases(0, np.random.default_rng(0))


def test_bcd_config_validation():
    with pytest.raises(ConfigError):
        BcdConfig(grid_points=1)
    with pytest.raises(ConfigError):
        BcdConfig(outer_iters=0)


def test_bcd_single_element_matches_exhaustive_grid():
    rng = np.random.default_rng(1)
    sample = ChannelSample(H=crandn(rng, 1, 3), G=crandn(rng, 1, 1), D=crandn(rng, 1, 3))
    E_Tr, sigma2 = 2.0, 1.0
    res = bcd_optimize(sample, BcdConfig(grid_points=360), E_Tr, sigma2)
    final = sum_rate_np(combined_channel_np(sample.G, res.phase.psi, sample.H, sample.D,
                                            res.precoder.V), sigma2)
    # single user: the optimum for each phase is the matched-filter rate
    fine = np.linspace(0, 2 * np.pi, 36_000, endpoint=False)
    A = effective_channel(np.broadcast_to(sample.G, (fine.size, 1, 1)), fine[:, None], sample.H,
                          np.broadcast_to(sample.D, (fine.size, 1, 3)))
    curve = np.log2(1 + E_Tr * np.sum(np.abs(A) ** 2, axis=(1, 2)) / sigma2)
    best = curve.max()
    # largest rate change over one degree (100 fine steps)
    one_degree = 100 * np.max(np.abs(np.diff(curve)))
    assert best - final <= one_degree + 1e-9
    assert final <= best + 1e-9


def test_sweep_picks_exact_argmax():
    rng = np.random.default_rng(2)
    U, N, M = 2, 5, 3
    G, H, D = crandn(rng, U, N), crandn(rng, N, M), crandn(rng, U, M)
    psi = np.zeros(N)
    V = wmmse_precoder(effective_channel(G, psi, H, D), 5.0, 1.0).V
    cands = 2 * np.pi * np.arange(8) / 8
    psi_out, C, _ = _sweep(G, H, psi.copy(), effective_channel(G, psi, H, D) @ V, V, 1.0, cands)
    # replay the sweep with explicit rebuilds of C
    ref = psi.copy()
    for n in range(N):
        rates = []
        for c in cands:
            trial = ref.copy()
            trial[n] = c
            rates.append(sum_rate_np(combined_channel_np(G, trial, H, D, V), 1.0))
        cur = sum_rate_np(combined_channel_np(G, ref, H, D, V), 1.0)
        if max(rates) > cur:
            ref[n] = cands[int(np.argmax(rates))]
    np.testing.assert_array_equal(psi_out, ref)
    np.testing.assert_allclose(C, combined_channel_np(G, ref, H, D, V), atol=1e-10)


def test_bcd_trace_monotone_on_20_instances():
    cfg = ScenarioConfig(M=4, N=36, ris_rows=6, ris_cols=6, U=3, ris_gain=1e-2)
    for rng in spawn_rngs(3, 20):
        sample = generate_sample(cfg, rng)
        res = bcd_optimize(sample, BcdConfig(outer_iters=5), cfg.E_Tr, cfg.sigma2)
        assert np.all(np.diff(res.trace) >= -1e-9)


def test_bcd_tol_inf_single_sweep():
    cfg = ScenarioConfig(M=4, N=36, ris_rows=6, ris_cols=6, U=2)
    sample = generate_sample(cfg, np.random.default_rng(4))
    res = bcd_optimize(sample, BcdConfig(tol=math.inf), cfg.E_Tr, cfg.sigma2)
    assert res.sweeps == 1


def test_bcd_beats_random():
    cfg = ScenarioConfig(M=4, N=81, ris_rows=9, ris_cols=9, U=2, ris_gain=1e-3)
    sample = generate_sample(cfg, np.random.default_rng(5))
    res = bcd_optimize(sample, BcdConfig(outer_iters=3), cfg.E_Tr, cfg.sigma2)
    psi = random_phases(81, np.random.default_rng(6)).psi
    V = wmmse_precoder(effective_channel(sample.G, psi, sample.H, sample.D), cfg.E_Tr, cfg.sigma2).V
    assert res.trace[-1] > sum_rate_np(combined_channel_np(sample.G, psi, sample.H, sample.D, V), cfg.sigma2)
    assert res.precoder.power <= cfg.E_Tr + 1e-9
