"""Sum-rate evaluation of learned, random and coordinate-descent configurations."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..baselines import BcdConfig, bcd_optimize, random_phases
from ..channel import ChannelSample, ConfigError, ScenarioConfig
from ..network import RISnetParams, forward_batch
from ..rate import effective_channel, quantize_phases, wmmse_batch
from .training import Batchable, prepare

__all__ = ["EvalReport", "network_phases", "network_rates", "evaluate"]


@dataclass
class EvalReport:
    rates: np.ndarray
    forward_ms: np.ndarray
    source: str
    csi_mode: str | None = None
    regime: str | None = None
    quantize_levels: int = 0
    tags: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.rates))

    @property
    def std(self) -> float:
        return float(np.std(self.rates))

    @property
    def phase_kind(self) -> str:
        return "discrete" if self.quantize_levels else "continuous"


def network_phases(params: RISnetParams, data: Batchable, chunk_size: int = 8, timings=None) -> np.ndarray:
    """Detached RISnet phases for every sample of ``data``."""
    out = []
    for lo in range(0, len(data), chunk_size):
        sel = np.arange(lo, min(lo + chunk_size, len(data)))
        t0 = time.perf_counter()
        psi = forward_batch(data.net_input(sel, params.arch), params).data
        if timings is not None:
            timings.extend([1e3 * (time.perf_counter() - t0) / len(sel)] * len(sel))
        out.append(psi)
    return np.concatenate(out)


def _wmmse_rates(data: Batchable, psi: np.ndarray, scenario: ScenarioConfig) -> np.ndarray:
    A = effective_channel(data.G, psi, data.H, data.D)
    return wmmse_batch(A, scenario.E_Tr, scenario.sigma2).rates


def network_rates(params: RISnetParams, data: Batchable, scenario: ScenarioConfig,
                  chunk_size: int = 8, quantize_levels: int = 0) -> np.ndarray:
    psi = network_phases(params, data, chunk_size)
    if quantize_levels:
        psi = quantize_phases(psi, quantize_levels).psi
    return _wmmse_rates(data, psi, scenario)


def evaluate(samples: list[ChannelSample] | Batchable, source, scenario: ScenarioConfig,
             quantize_levels: int = 0, seed: int = 0, bcd: BcdConfig | None = None,
             chunk_size: int = 1) -> EvalReport:
    """Per-sample WMMSE sum-rates for phases from ``source``.

    ``source`` is a :class:`RISnetParams`, ``"random"`` or ``"bcd"``. Phases
    are optionally rounded to ``quantize_levels`` levels before the final
    WMMSE solve. ``forward_ms`` is the time spent producing each sample's
    phases.
    """
    data = samples if isinstance(samples, Batchable) else prepare(samples)
    if quantize_levels not in (0,) and quantize_levels < 2:
        raise ConfigError("quantize_levels must be 0 (off) or >= 2")
    timings: list[float] = []
    csi_mode = None
    if isinstance(source, RISnetParams):
        if source.arch.N != data.G.shape[2]:
            raise ConfigError(f"checkpoint is for {source.arch.N} elements, data has {data.G.shape[2]}")
        psi = network_phases(source, data, chunk_size, timings)
        name, csi_mode = "risnet", source.arch.csi_mode
    elif source == "random":
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(data))]
        psi = []
        for k in range(len(data)):
            t0 = time.perf_counter()
            psi.append(random_phases(data.G.shape[2], rngs[k]).psi)
            timings.append(1e3 * (time.perf_counter() - t0))
        psi = np.stack(psi)
        name = "random"
    elif source == "bcd":
        cfg = bcd or BcdConfig()
        psi = []
        for k in range(len(data)):
            t0 = time.perf_counter()
            sample = ChannelSample(H=data.H, G=data.G[k], D=data.D[k])
            psi.append(bcd_optimize(sample, cfg, scenario.E_Tr, scenario.sigma2).phase.psi)
            timings.append(1e3 * (time.perf_counter() - t0))
        psi = np.stack(psi)
        name = "bcd"
    else:
        raise ConfigError(f"unknown source {source!r}")
    if quantize_levels:
        psi = quantize_phases(psi, quantize_levels).psi
    rates = _wmmse_rates(data, psi, scenario)
    return EvalReport(rates=rates, forward_ms=np.asarray(timings), source=name, csi_mode=csi_mode,
                      regime=scenario.regime, quantize_levels=quantize_levels)
