"""Acceptance criteria 1-8, each at its stated tolerance.

Criteria 4-6 train RISnet at desk scale (N=1296, U=4, M=8, batch 64, 500
iterations) in single-thread deterministic mode; the four training runs are
shared across tests and take a few hours on one core.
"""

import functools
import math
import time

import numpy as np
import pytest

from risnet import adgraph as ag
from risnet.adgraph import Tensor
from risnet.baselines import BcdConfig, bcd_optimize
from risnet.channel import ChannelSample, ScenarioConfig, channel_feature, generate_dataset, generate_sample
from risnet.harness import cli
from risnet.harness.config import TrainConfig
from risnet.harness.evaluation import evaluate
from risnet.harness.training import prepare, single_thread, train
from risnet.network import (ArchConfig, anchor_grid, expansion_table, forward_batch, init_params,
                            nu, param_count)
from risnet.rate import (combined_channel, effective_channel, sum_rate, sum_rate_np, wmmse_batch,
                         wmmse_precoder)

DESK = ScenarioConfig()  # N=1296 (36 x 36), U=4, M=8
TRAIN_SAMPLES, TEST_SAMPLES = 1024, 100
TRAIN_SEED, TEST_SEED = 101, 202
DESK_TRAIN = TrainConfig(batch_size=64, iterations=500, eval_every=100, seed=0)
REGIMES = {"det": "deterministic", "iid": "iid"}


@functools.cache
def desk_data(regime: str):
    cfg = DESK.with_(regime=REGIMES[regime])
    return (cfg, prepare(generate_dataset(cfg, TRAIN_SAMPLES, TRAIN_SEED)),
            prepare(generate_dataset(cfg, TEST_SAMPLES, TEST_SEED)))


@functools.cache
def trained(mode: str, regime: str):
    cfg, train_set, test_set = desk_data(regime)
    arch = ArchConfig.full() if mode == "full" else ArchConfig.partial()
    t0 = time.perf_counter()
    params, metrics = train(train_set, arch, DESK_TRAIN, cfg, test_samples=test_set)
    return params, metrics, time.perf_counter() - t0


@functools.cache
def net_mean(mode: str, regime: str, quantize_levels: int = 0) -> float:
    cfg, _, test_set = desk_data(regime)
    return evaluate(test_set, trained(mode, regime)[0], cfg, quantize_levels=quantize_levels).mean


# 1 ------------------------------------------------------------------------------

def test_criterion_1_gradient_correctness(criterion):
    t0 = time.perf_counter()
    cfg = ScenarioConfig(M=4, N=81, ris_rows=9, ris_cols=9, U=2)
    rng = np.random.default_rng(0)
    sample = generate_sample(cfg, rng)
    params = init_params(ArchConfig.full(grid=(9, 9)), rng)
    gamma = channel_feature(sample).gamma[None]
    psi0 = forward_batch(gamma, params).data
    V = wmmse_batch(effective_channel(sample.G[None], psi0, sample.H, sample.D[None]),
                    cfg.E_Tr, cfg.sigma2).V

    def objective(flat):
        psi = forward_batch(gamma, params.bind(flat))
        C = combined_channel(sample.G[None], psi, sample.H, sample.D[None], V)
        return ag.reduce(sum_rate(C, cfg.sigma2), axis=0)

    coords = np.random.default_rng(1).choice(params.count(), 30, replace=False)
    err = ag.grad_check(objective, Tensor(params.flat()), eps=1e-5, coords=coords)
    checked = len(coords) - len(err.kinks)
    elapsed = time.perf_counter() - t0
    criterion(1, checked >= 20 and err < 1e-4 and elapsed < 60,
              f"max rel err {float(err):.2e} on {checked} coordinates, {elapsed:.1f} s")


# 2 ------------------------------------------------------------------------------

def test_criterion_2_wmmse(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    cplx = lambda *s: (rng.normal(size=s) + 1j * rng.normal(size=s)) / np.sqrt(2)
    A = cplx(100, 4, 8) * rng.uniform(0.1, 3.0, (100, 1, 1))
    res = wmmse_batch(A, 10.0, 1.0)
    monotone = not res.failed.any() and all(
        np.all(np.diff(t[np.isfinite(t)]) >= -1e-9) for t in res.trace.T)

    mf_err = 0.0
    for _ in range(10):
        h = cplx(1, 8)
        E = float(rng.uniform(1, 100))
        V = wmmse_precoder(h, E, 1.0).V
        mf_err = max(mf_err, abs(sum_rate_np(h @ V, 1.0) - math.log2(1 + E * np.linalg.norm(h) ** 2)))

    beats = True
    for _ in range(10):
        A1 = cplx(2, 4)
        best = sum_rate_np(A1 @ wmmse_precoder(A1, 10.0, 1.0).V, 1.0)
        Vr = cplx(10_000, 4, 2)
        Vr *= np.sqrt(10.0 * rng.uniform(0, 1, (10_000, 1, 1))
                      / np.sum(np.abs(Vr) ** 2, axis=(1, 2), keepdims=True))
        beats &= bool(best >= sum_rate_np(A1 @ Vr, 1.0).max())
    elapsed = time.perf_counter() - t0
    criterion(2, monotone and mf_err < 1e-9 and beats and elapsed < 60,
              f"monotone={monotone}, matched-filter err {mf_err:.1e}, beats random={beats}, {elapsed:.1f} s")


# 3 ------------------------------------------------------------------------------

def test_criterion_3_architecture(criterion):
    rng = np.random.default_rng(3)
    sample = generate_sample(DESK, rng)
    gamma = channel_feature(sample).gamma[None]
    perm = np.array([2, 0, 3, 1])
    inv = 0.0
    for arch in (ArchConfig.full(), ArchConfig.partial()):
        params = init_params(arch, rng)
        g = gamma if arch.csi_mode == "full" else gamma[..., anchor_grid(0, arch.grid)]
        a = forward_batch(g, params).data
        b = forward_batch(g[:, :, perm], params).data
        inv = max(inv, float(np.max(np.abs(a - b))))

    counts = {param_count(ArchConfig.full(grid=(4, 4))), param_count(ArchConfig.full()),
              init_params(ArchConfig.full(grid=(4, 4)), rng).count()}

    t0, t1 = expansion_table(0, (36, 36)), expansion_table(1, (36, 36))
    tiling = (t0.shape == (16, 9) and sorted(t0.ravel()) == list(range(144))
              and t1.shape == (144, 9) and sorted(t1.ravel()) == list(range(1296)))

    nu_ok = True
    for H_cols in (12, 36):
        for r in range(1, H_cols, 3):
            for c in range(1, H_cols, 3):
                n = r * H_cols + c + 1
                for j in range(1, 10):
                    if j <= 3:
                        ref = n - H_cols - 2 + j
                    elif j <= 6:
                        ref = n - 5 + j
                    else:
                        ref = n + H_cols - 8 + j
                    nu_ok &= nu(n, j, H_cols) == ref
    ok = inv < 1e-9 and counts == {25_345} and tiling and nu_ok
    criterion(3, ok, f"permutation diff {inv:.1e}, counts {sorted(counts)}, tiling={tiling}, nu={nu_ok}")


# 4 ------------------------------------------------------------------------------

def test_criterion_4_ordering(criterion):
    cfg, _, test_set = desk_data("det")
    _, _, seconds = trained("full", "det")
    net = net_mean("full", "det")
    rnd = evaluate(test_set, "random", cfg, seed=TEST_SEED).mean
    bcd = evaluate(test_set, "bcd", cfg, bcd=BcdConfig()).mean
    ok = net >= 3 * rnd and net >= bcd and seconds < 7200
    criterion(4, ok, f"RISnet {net:.3f}, random {rnd:.3f} (x{net / rnd:.2f}), BCD {bcd:.3f}, "
                     f"training {seconds / 60:.0f} min")


# 5 ------------------------------------------------------------------------------

def test_criterion_5_partial_csi(criterion):
    det = net_mean("partial", "det") / net_mean("full", "det")
    iid = net_mean("partial", "iid") / net_mean("full", "iid")
    criterion(5, det >= 0.85 and iid <= 0.6,
              f"partial/full deterministic {det:.3f} (>= 0.85), i.i.d. {iid:.3f} (<= 0.6)")


# 6 ------------------------------------------------------------------------------

def test_criterion_6_quantization(criterion):
    cont = net_mean("full", "det")
    disc = net_mean("full", "det", quantize_levels=4)
    loss = 1 - disc / cont
    criterion(6, loss <= 0.10, f"continuous {cont:.3f}, 4-level {disc:.3f}, loss {100 * loss:.1f}%")


# 7 ------------------------------------------------------------------------------

def test_criterion_7_latency(criterion):
    rng = np.random.default_rng(7)
    sample = generate_sample(DESK, rng)
    params = init_params(ArchConfig.partial(), rng)
    gamma = channel_feature(sample).gamma[None][..., anchor_grid(0, (36, 36))]
    with single_thread():
        forward_batch(gamma, params)
        times = []
        for _ in range(5):
            t0 = time.perf_counter()
            forward_batch(gamma, params)
            times.append(time.perf_counter() - t0)
        fwd = float(np.median(times))
        t0 = time.perf_counter()
        bcd_optimize(sample, BcdConfig(), DESK.E_Tr, DESK.sigma2)
        bcd = time.perf_counter() - t0
    criterion(7, fwd < 0.1 and bcd >= 10 * fwd,
              f"forward {1e3 * fwd:.1f} ms, BCD {1e3 * bcd:.0f} ms (x{bcd / fwd:.0f})")


# 8 ------------------------------------------------------------------------------

def _cli_run(tmp, tag):
    data, ckpt, metrics = tmp / f"d{tag}.risd", tmp / f"m{tag}.ckpt", tmp / f"m{tag}.csv"
    assert cli.main(["generate-data", "--regime", "det", "--samples", "16", "--seed", "5",
                     "--out", str(data)]) == 0
    assert cli.main(["train", "--data", str(data), "--test-data", str(data), "--csi", "full",
                     "--iters", "3", "--batch", "8", "--lr", "1e-3", "--seed", "9", "--eval-every", "3",
                     "--out", str(ckpt), "--metrics", str(metrics), "--no-plot"]) == 0
    return data.read_bytes(), ckpt.read_bytes(), metrics.read_bytes()


def test_criterion_8_determinism(criterion, tmp_path):
    first = _cli_run(tmp_path, "a")
    second = _cli_run(tmp_path, "b")
    same = [a == b for a, b in zip(first, second)]
    criterion(8, all(same), "dataset/checkpoint/metrics identical: " + "/".join(map(str, same)))


# desk-run properties of the training loop ----------------------------------------

def test_desk_training_trend():
    metrics = trained("full", "det")[1]
    r = np.array(metrics.train_sum_rate)
    k = len(r) // 10
    assert np.nanmean(r[-k:]) > np.nanmean(r[:k])


def test_desk_train_test_gap():
    cfg, train_set, test_set = desk_data("det")
    params = trained("full", "det")[0]
    sub = prepare([ChannelSample(H=train_set.H, G=train_set.G[k], D=train_set.D[k])
                   for k in range(TEST_SAMPLES)])
    tr = evaluate(sub, params, cfg).mean
    te = net_mean("full", "det")
    assert abs(tr - te) / te < 0.10
