"""Unsupervised training of RISnet with alternating WMMSE precoding."""

from __future__ import annotations

import logging
import math
import time
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .. import adgraph as ag
from ..adgraph import NumericError
from ..channel import ChannelSample, ConfigError, ScenarioConfig, pseudo_inverse
from ..network import ArchConfig, RISnetParams, anchor_grid, forward_batch, init_params
from ..rate import combined_channel, effective_channel, sum_rate, wmmse_batch
from .config import TrainConfig

__all__ = ["Batchable", "prepare", "single_thread", "Adam", "TrainingError", "Metrics", "train"]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Too many batches had to be skipped."""


@contextmanager
def single_thread():
    """Limit BLAS/OpenMP pools to one thread for bit-reproducible runs."""
    with threadpool_limits(limits=1):
        yield


@dataclass
class Batchable:
    """A dataset stacked into arrays: ``G`` (K,U,N), ``D`` (K,U,M), shared ``H``, features (K,4,U,N)."""

    G: np.ndarray
    D: np.ndarray
    H: np.ndarray
    gamma: np.ndarray

    def __len__(self) -> int:
        return self.G.shape[0]

    def net_input(self, idx, arch: ArchConfig) -> np.ndarray:
        g = self.gamma[idx]
        if arch.csi_mode == "partial":
            g = g[..., anchor_grid(0, arch.grid)]
        return g


def prepare(samples: list[ChannelSample]) -> Batchable:
    """Stack samples that share one BS-RIS channel and compute their features."""
    if not samples:
        raise ConfigError("dataset is empty")
    H = samples[0].H
    if any(s.H is not H and not np.array_equal(s.H, H) for s in samples):
        raise ConfigError("training and evaluation need a fixed BS-RIS channel H")
    G = np.stack([s.G for s in samples])
    D = np.stack([s.D for s in samples])
    J = D @ pseudo_inverse(H)
    gamma = np.stack([np.abs(G), np.angle(G), np.abs(J), np.angle(J)], axis=1)
    return Batchable(G=G, D=D, H=H, gamma=gamma)


class Adam:
    """Adam on a list of parameter tensors; ``ascent=True`` maximizes."""

    def __init__(self, tensors, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, ascent=True):
        self.tensors = list(tensors)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.sign = 1.0 if ascent else -1.0
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, (p, g) in enumerate(zip(self.tensors, grads)):
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = p.data + self.sign * update


@dataclass
class Metrics:
    """Per-iteration training rate; held-out rate at every ``eval_every`` iterations."""

    iteration: list[int] = field(default_factory=list)
    train_sum_rate: list[float] = field(default_factory=list)
    test_sum_rate: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    skipped_samples: int = 0
    skipped_batches: int = 0

    def rows(self):
        return zip(self.iteration, self.train_sum_rate, self.test_sum_rate, self.wall_ms)


def batch_objective(params: RISnetParams, data: Batchable, idx: np.ndarray, scenario: ScenarioConfig,
                    chunk_size: int, scale: float, wmmse_kw: dict):
    """Accumulate ``scale * d(sum of rates)/d params`` over chunks of ``idx``.

    Each chunk runs one tracked forward pass; its detached phases feed the
    WMMSE solve, and the rate is then differentiated with ``V`` held fixed.
    Returns the per-sample rates (NaN where WMMSE failed).
    """
    rates = np.full(len(idx), np.nan)
    for lo in range(0, len(idx), chunk_size):
        sel = idx[lo:lo + chunk_size]
        with ag.GradTape() as tape:
            psi = forward_batch(data.net_input(sel, params.arch), params)
            A = effective_channel(data.G[sel], psi.data, data.H, data.D[sel])
            res = wmmse_batch(A, scenario.E_Tr, scenario.sigma2, **wmmse_kw)
            ok = np.flatnonzero(~res.failed)
            if ok.size == 0:
                continue
            psi_ok = ag.take(psi, ok, axis=0) if ok.size < len(sel) else psi
            C = combined_channel(data.G[sel][ok], psi_ok, data.H, data.D[sel][ok], res.V[ok])
            r = sum_rate(C, scenario.sigma2)
            loss = ag.scale(ag.reduce(r, axis=0, mode="sum"), scale)
        tape.backward(loss)
        rates[lo + ok] = r.data
    return rates


def _param_grads(params: RISnetParams) -> list[np.ndarray]:
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in params.tensors()]


def train(samples: list[ChannelSample] | Batchable, arch: ArchConfig, cfg: TrainConfig,
          scenario: ScenarioConfig, test_samples=None, params: RISnetParams | None = None,
          wmmse_kw: dict | None = None, progress=None):
    """Run the alternating training loop and return ``(params, metrics)``.

    Per iteration: draw a batch with replacement, compute phases, solve WMMSE
    per sample with those phases, differentiate the mean batch sum-rate with
    the precoders fixed, and take an Adam ascent step.
    """
    from .evaluation import network_rates

    data = samples if isinstance(samples, Batchable) else prepare(samples)
    test = None
    if test_samples is not None:
        test = test_samples if isinstance(test_samples, Batchable) else prepare(test_samples)
    if data.G.shape[2] != arch.N:
        raise ConfigError(f"dataset has {data.G.shape[2]} elements, architecture expects {arch.N}")
    wmmse_kw = wmmse_kw or {}
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5452]))
    if params is None:
        params = init_params(arch, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x494E])))
    params.track(True)
    opt = Adam(params.tensors(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    metrics = Metrics()
    allowed_skips = max(1, math.ceil(0.01 * cfg.iterations))
    start = time.perf_counter()
    with single_thread() if cfg.deterministic else nullcontext():
        for it in range(1, cfg.iterations + 1):
            idx = rng.integers(0, len(data), cfg.batch_size)
            for t in params.tensors():
                t.grad = None
            rates = batch_objective(params, data, idx, scenario, cfg.chunk_size,
                                    1.0 / cfg.batch_size, wmmse_kw)
            good = np.isfinite(rates)
            if not good.all():
                metrics.skipped_samples += int((~good).sum())
                metrics.skipped_batches += 1
                log.warning("iteration %d: WMMSE failed on %d samples, skipped", it, (~good).sum())
                if metrics.skipped_batches > allowed_skips:
                    raise TrainingError(f"{metrics.skipped_batches} batches hit WMMSE failures")
            if good.any():
                grads = _param_grads(params)
                if not good.all():
                    grads = [g * (cfg.batch_size / good.sum()) for g in grads]
                opt.step(grads)
            train_rate = float(rates[good].mean()) if good.any() else float("nan")
            test_rate = float("nan")
            if test is not None and (it % cfg.eval_every == 0 or it == cfg.iterations):
                test_rate = float(np.nanmean(network_rates(params, test, scenario,
                                                           chunk_size=cfg.chunk_size)))
            metrics.iteration.append(it)
            metrics.train_sum_rate.append(train_rate)
            metrics.test_sum_rate.append(test_rate)
            metrics.wall_ms.append(0.0 if cfg.deterministic else 1e3 * (time.perf_counter() - start))
            if progress is not None:
                progress(it, train_rate, test_rate)
    params.track(False)
    return params, metrics
