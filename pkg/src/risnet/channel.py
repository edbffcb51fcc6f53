"""Synthetic geometric RIS channels and the per-(user, element) feature tensor.

Three correlation regimes are generated:

``deterministic``
    Every RIS row of ``G`` is a sum of 2 to 4 plane waves across the surface,
    the first path at least 1.5 times stronger (in power) than the second.
``deterministic_plus_iid``
    The deterministic part plus an i.i.d. complex Gaussian term of relative
    power ``mix_power_ratio``.
``iid``
    Every entry of ``G`` is i.i.d. circularly-symmetric complex Gaussian.

The BS-RIS channel ``H`` is fixed for a scenario (BS and RIS do not move); it
is drawn once from ``rng_seed``. ``G`` and ``D`` vary per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .adgraph import ContractError, NumericError

__all__ = [
    "REGIMES", "ScenarioConfig", "ChannelSample", "ChannelFeature",
    "steering_vector", "planar_positions", "linear_positions",
    "fixed_bs_ris_channel", "generate_sample", "generate_dataset",
    "spawn_rngs", "pseudo_inverse", "channel_feature", "restrict_to_anchors",
]

REGIMES = ("deterministic", "deterministic_plus_iid", "iid")

# Relative path powers of the BS-RIS channel (LOS + 2 specular) and of the
# weak paths added until there are max(U, M) paths, so H has full column rank.
H_PATH_POWERS = (1.0, 0.5, 0.25)
H_EXTRA_PATH_POWER = 0.1
# Largest accepted condition number of H^H H.
H_MAX_COND = 1e6
# Strongest-to-second path power ratio floor for RIS-user channels.
MIN_LOS_RATIO = 1.5
# Maximum normalized correlation between two users' RIS channels.
MAX_ROW_CORRELATION = 0.9


class ConfigError(ValueError):
    """Invalid scenario or architecture configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Dimensions, powers and regime of a scenario.

    ``ris_gain`` is the per-entry power of the BS-RIS channel ``H`` (a path
    loss). It sets the operating SNR of the cascaded link and is not an
    independent modelling axis.
    """

    M: int = 8
    N: int = 1296
    ris_rows: int = 36
    ris_cols: int = 36
    U: int = 4
    E_Tr: float = 100.0
    sigma2: float = 1.0
    regime: str = "deterministic"
    mix_power_ratio: float = 0.25
    direct_power: float = 0.01
    ris_gain: float = 1e-5
    spacing: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("M", "N", "ris_rows", "ris_cols", "U"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.N != self.ris_rows * self.ris_cols:
            raise ConfigError(f"N={self.N} != ris_rows*ris_cols={self.ris_rows * self.ris_cols}")
        if self.E_Tr <= 0 or self.sigma2 <= 0:
            raise ConfigError("E_Tr and sigma2 must be positive")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.mix_power_ratio < 0 or self.direct_power < 0 or self.ris_gain <= 0:
            raise ConfigError("power parameters must be non-negative (ris_gain positive)")

    @property
    def supports_partial_csi(self) -> bool:
        return self.ris_rows % 9 == 0 and self.ris_cols % 9 == 0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


@dataclass
class ChannelSample:
    """One realization: ``H`` (N x M), ``G`` (U x N), ``D`` (U x M), complex."""

    H: np.ndarray
    G: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.complex128)
        self.G = np.asarray(self.G, dtype=np.complex128)
        self.D = np.asarray(self.D, dtype=np.complex128)
        N, M = self.H.shape
        U = self.G.shape[0]
        if self.G.shape != (U, N) or self.D.shape != (U, M):
            raise ContractError(f"inconsistent shapes H{self.H.shape} G{self.G.shape} D{self.D.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        """``(M, N, U)``."""
        return self.H.shape[1], self.H.shape[0], self.G.shape[0]


@dataclass
class ChannelFeature:
    """Real feature tensor of shape ``(4, U, N)``.

    Rows are ``|g|, arg g, |j|, arg j`` with ``J = D H^+``. ``anchors`` holds
    the element indices kept after :func:`restrict_to_anchors`.
    """

    gamma: np.ndarray
    anchors: np.ndarray | None = field(default=None)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def linear_positions(M: int) -> np.ndarray:
    """Element positions (in spacing units) of a uniform linear array on x."""
    pos = np.zeros((M, 3))
    pos[:, 0] = np.arange(M)
    return pos


def planar_positions(rows: int, cols: int) -> np.ndarray:
    """Positions of a rows x cols planar array in the x-y plane.

    Element ``(r, c)`` has flat index ``c + r * cols`` and sits at ``(c, r, 0)``.
    """
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.stack([c, r, np.zeros_like(r)], axis=1).astype(np.float64)


def steering_vector(positions: np.ndarray, direction: Sequence[float], spacing: float = 0.5) -> np.ndarray:
    """``exp(j 2 pi spacing <p, d>)`` for every lattice position ``p``.

    ``positions`` come from :func:`linear_positions` or :func:`planar_positions`.
    """
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ContractError(f"direction must be a unit 3-vector, got {d}")
    return np.exp(2j * np.pi * spacing * (positions @ d))


def _hemisphere_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Directions with azimuth and elevation uniform over the front (z > 0) half."""
    az = rng.uniform(-np.pi, np.pi, n)
    el = rng.uniform(0.0, np.pi / 2, n)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)


def _linear_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Directions for a linear array; only the x-component matters."""
    theta = rng.uniform(-np.pi / 2, np.pi / 2, n)
    return np.stack([np.sin(theta), np.cos(theta), np.zeros(n)], axis=1)


def _cgauss(rng: np.random.Generator, shape, power: float = 1.0) -> np.ndarray:
    return np.sqrt(power / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent generators for parallel sample streams.

    Stream ``k`` is seeded by ``SeedSequence(seed).spawn(count)[k]``, so the
    split does not depend on how many workers consume the streams.
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _draw_h(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    n_paths = max(len(H_PATH_POWERS), config.U, config.M)
    powers = list(H_PATH_POWERS) + [H_EXTRA_PATH_POWER] * (n_paths - len(H_PATH_POWERS))
    ris_pos = planar_positions(config.ris_rows, config.ris_cols)
    bs_pos = linear_positions(config.M)
    ris_dirs = _hemisphere_directions(rng, len(powers))
    bs_dirs = _linear_directions(rng, len(powers))
    phases = rng.uniform(0, 2 * np.pi, len(powers))
    H = np.zeros((config.N, config.M), dtype=np.complex128)
    for p, power in enumerate(powers):
        beta = np.sqrt(power) * np.exp(1j * phases[p])
        a_ris = steering_vector(ris_pos, ris_dirs[p], config.spacing)
        a_bs = steering_vector(bs_pos, bs_dirs[p], config.spacing)
        H += beta * np.outer(a_ris, a_bs.conj())
    return H


def fixed_bs_ris_channel(config: ScenarioConfig, max_cond: float = H_MAX_COND) -> np.ndarray:
    """The scenario's BS-RIS channel ``H`` (N x M), a function of ``rng_seed`` only.

    Geometries whose ``H^H H`` is worse conditioned than ``max_cond`` are
    redrawn from the same stream, so the BS can separate ``min(M, N)``
    streams through the RIS.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, 0x4842]))
    for _ in range(1000):
        H = _draw_h(config, rng)
        if config.N < config.M or np.linalg.cond(H.conj().T @ H) <= max_cond:
            break
    else:
        raise NumericError("no well-conditioned BS-RIS geometry found")
    # unit average per-entry power, then path loss
    return H * np.sqrt(config.ris_gain / np.mean(np.abs(H) ** 2))


def _deterministic_row(config: ScenarioConfig, rng: np.random.Generator, ris_pos: np.ndarray):
    """One RIS-user channel row plus its generating path vectors and powers."""
    n_paths = int(rng.integers(2, 5))
    # strongest path at least MIN_LOS_RATIO times the second strongest
    weaker = rng.uniform(0.1, 1.0 / MIN_LOS_RATIO, n_paths - 1)
    weaker = -np.sort(-weaker)
    powers = np.concatenate([[1.0], weaker])
    dirs = _hemisphere_directions(rng, n_paths)
    phases = rng.uniform(0, 2 * np.pi, n_paths)
    vecs = np.stack([steering_vector(ris_pos, d, config.spacing) for d in dirs])
    gains = np.sqrt(powers) * np.exp(1j * phases)
    row = gains @ vecs
    return row, vecs, powers


def _row_correlation(G: np.ndarray) -> float:
    Gn = G / np.linalg.norm(G, axis=1, keepdims=True)
    C = np.abs(Gn @ Gn.conj().T)
    np.fill_diagonal(C, 0.0)
    return float(C.max()) if len(G) > 1 else 0.0


def _deterministic_G(config: ScenarioConfig, rng: np.random.Generator, ris_pos, max_tries: int = 100):
    for _ in range(max_tries):
        rows = [_deterministic_row(config, rng, ris_pos) for _ in range(config.U)]
        G = np.stack([r[0] for r in rows])
        # unit average per-element power per row
        G /= np.sqrt(np.mean(np.abs(G) ** 2, axis=1, keepdims=True))
        if _row_correlation(G) <= MAX_ROW_CORRELATION:
            return G, rows
    raise NumericError("could not draw sufficiently distinct user channels")


def generate_sample(config: ScenarioConfig, rng: np.random.Generator,
                    H: np.ndarray | None = None, return_paths: bool = False):
    """Draw one :class:`ChannelSample` for ``config.regime``.

    Angles and gains depend only on ``rng``; ``H`` defaults to the scenario's
    fixed BS-RIS channel. With ``return_paths`` the per-user path steering
    vectors and powers of the deterministic part are returned as well.
    """
    if H is None:
        H = fixed_bs_ris_channel(config)
    ris_pos = planar_positions(config.ris_rows, config.ris_cols)
    paths = None
    if config.regime == "iid":
        G = _cgauss(rng, (config.U, config.N))
    else:
        G, paths = _deterministic_G(config, rng, ris_pos)
        if config.regime == "deterministic_plus_iid":
            G = G + np.sqrt(config.mix_power_ratio) * _cgauss(rng, (config.U, config.N))
    D = _cgauss(rng, (config.U, config.M), config.direct_power)
    sample = ChannelSample(H=H, G=G, D=D)
    if return_paths:
        return sample, paths
    return sample


def generate_dataset(config: ScenarioConfig, samples: int, seed: int) -> list[ChannelSample]:
    """``samples`` draws, sample ``k`` using stream ``k`` of :func:`spawn_rngs`."""
    H = fixed_bs_ris_channel(config)
    return [generate_sample(config, rng, H=H) for rng in spawn_rngs(seed, samples)]


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def pseudo_inverse(H: np.ndarray, max_cond: float = 1e12) -> np.ndarray:
    """Moore-Penrose inverse ``(H^H H)^-1 H^H`` of a tall full-column-rank matrix."""
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim != 2 or H.shape[0] < H.shape[1]:
        raise ContractError(f"pseudo_inverse expects a tall matrix, got {H.shape}")
    gram = H.conj().T @ H
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > max_cond:
        raise NumericError(f"H^H H is ill-conditioned (condition number {cond:.3g})")
    return np.linalg.solve(gram, H.conj().T)


def channel_feature(sample: ChannelSample, H_pinv: np.ndarray | None = None) -> ChannelFeature:
    """Amplitude/phase features of ``G`` and ``J = D H^+``.

    ``H_pinv`` may be passed to reuse the pseudo-inverse of a fixed ``H``.
    """
    if H_pinv is None:
        H_pinv = pseudo_inverse(sample.H)
    J = sample.D @ H_pinv
    gamma = np.stack([np.abs(sample.G), np.angle(sample.G), np.abs(J), np.angle(J)])
    return ChannelFeature(gamma=gamma)


def restrict_to_anchors(feature: ChannelFeature, anchors) -> ChannelFeature:
    """Keep only the element columns listed in ``anchors`` (in that order)."""
    idx = np.asarray(anchors, dtype=np.intp)
    N = feature.gamma.shape[2]
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= N)):
        raise ContractError(f"anchor indices must lie in [0, {N})")
    return ChannelFeature(gamma=feature.gamma[:, :, idx].copy(), anchors=idx.copy())
