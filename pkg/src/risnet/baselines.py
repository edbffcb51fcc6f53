"""Reference RIS configurations: random phases and cyclic coordinate descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSample, ConfigError
from .adgraph import NumericError
from .rate import (PhaseConfig, Precoder, effective_channel, matched_filter,
                   sum_rate_np, wmmse_batch)

__all__ = ["BcdConfig", "BcdResult", "random_phases", "bcd_optimize"]


@dataclass(frozen=True)
class BcdConfig:
    grid_points: int = 16
    outer_iters: int = 50
    tol: float = 1e-4

    def __post_init__(self):
        if self.grid_points < 2 or self.outer_iters < 1:
            raise ConfigError("need grid_points >= 2 and outer_iters >= 1")


@dataclass
class BcdResult:
    phase: PhaseConfig
    precoder: Precoder
    trace: list[float]
    sweeps: int


def random_phases(N: int, rng: np.random.Generator) -> PhaseConfig:
    """i.i.d. uniform phases on ``[0, 2 pi)``."""
    if N < 1:
        raise ConfigError("N must be >= 1")
    return PhaseConfig(rng.uniform(0.0, 2 * np.pi, N))


def _sweep(G, H, psi, C, V, sigma2, candidates):
    """One cyclic pass over the elements with ``V`` held fixed.

    Changing element ``n`` from phasor ``p`` to ``c`` adds the rank-one term
    ``(c - p) g_n (h_n V)`` to the combined channel, so every candidate is
    scored exactly without rebuilding ``C``.
    """
    cand_ph = np.exp(1j * candidates)
    R = H @ V                                   # (N, U): h_n V
    rate = sum_rate_np(C, sigma2)
    for n in range(G.shape[1]):
        cur = np.exp(1j * psi[n])
        outer = np.outer(G[:, n], R[n])
        Cs = C[None] + (cand_ph - cur)[:, None, None] * outer[None]
        rates = sum_rate_np(Cs, sigma2)
        k = int(np.argmax(rates))
        if rates[k] > rate:
            psi[n] = candidates[k]
            C = Cs[k]
            rate = float(rates[k])
    return psi, C, rate


def bcd_optimize(sample: ChannelSample, cfg: BcdConfig, E_Tr: float, sigma2: float,
                 wmmse_iters: int = 20, wmmse_tol: float = 1e-5,
                 psi0: np.ndarray | None = None) -> BcdResult:
    """Alternate a WMMSE precoder update with a per-element grid-search sweep.

    Starts from all-zero phases (a grid point), so every accepted element
    update is a strict improvement and the recorded rates never decrease.
    The WMMSE step is warm-started from the current precoder for the same
    reason. Stops once an outer iteration gains less than ``cfg.tol``.
    """
    G, H, D = sample.G, sample.H, sample.D
    candidates = 2 * np.pi * np.arange(cfg.grid_points) / cfg.grid_points
    psi = np.zeros(G.shape[1]) if psi0 is None else np.array(psi0, dtype=np.float64)
    V = None
    trace: list[float] = []
    sweeps = 0
    A0 = effective_channel(G, psi, H, D)
    prev = float(sum_rate_np(A0 @ matched_filter(A0, E_Tr), sigma2))
    for _ in range(cfg.outer_iters):
        A = effective_channel(G, psi, H, D)
        res = wmmse_batch(A[None], E_Tr, sigma2, max_iters=wmmse_iters, tol=wmmse_tol,
                          V0=None if V is None else V[None])
        if res.failed[0]:
            raise NumericError("WMMSE failed inside coordinate descent")
        V = res.V[0]
        start = float(res.rates[0])
        trace.append(start)
        psi, C, rate = _sweep(G, H, psi, A @ V, V, sigma2, candidates)
        sweeps += 1
        trace.append(rate)
        if rate - prev < cfg.tol:
            break
        prev = rate
    return BcdResult(PhaseConfig(psi), Precoder(V), trace, sweeps)
