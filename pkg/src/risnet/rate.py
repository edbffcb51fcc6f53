"""Combined channel, sum-rate objective, WMMSE precoding and phase quantization.

Two flavours are provided for the objective: graph-building versions on
:mod:`risnet.adgraph` tensors (used for training) and plain numpy versions
(used for evaluation, WMMSE and the baselines). Both accept a leading batch
axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import adgraph as ag
from .adgraph import ComplexTensor, ContractError, DimensionError, NumericError, Tensor

__all__ = [
    "PhaseConfig", "Precoder", "WmmseResult",
    "combined_channel", "sum_rate", "effective_channel", "combined_channel_np",
    "sum_rate_np", "wmmse_precoder", "wmmse_batch", "matched_filter",
    "quantize_phases",
]

LN2 = math.log(2.0)


@dataclass
class PhaseConfig:
    """RIS element phases ``psi`` (radians, any real value)."""

    psi: np.ndarray

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=np.float64)

    @property
    def phasors(self) -> np.ndarray:
        """Diagonal of the unit-modulus reflection matrix."""
        return np.exp(1j * self.psi)

    def wrapped(self) -> np.ndarray:
        """Phases mapped to ``[0, 2 pi)`` for display."""
        return np.mod(self.psi, 2 * np.pi)


@dataclass
class Precoder:
    """BS precoding matrix ``V`` (M x U), ``trace(V V^H) <= E_Tr``."""

    V: np.ndarray

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=np.complex128)

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.V) ** 2))


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def effective_channel(G: np.ndarray, psi: np.ndarray, H: np.ndarray, D: np.ndarray) -> np.ndarray:
    """``A = G diag(exp(j psi)) H + D`` without forming the diagonal.

    Batched over a leading axis of ``G``, ``psi`` and ``D``; ``H`` may be
    shared (2-D) or batched.
    """
    return (G * np.exp(1j * psi)[..., None, :]) @ H + D


def combined_channel_np(G, psi, H, D, V) -> np.ndarray:
    return effective_channel(G, psi, H, D) @ V


def sum_rate_np(C: np.ndarray, sigma2: float) -> np.ndarray:
    """Sum over users of ``log2(1 + SINR)`` for combined channel(s) ``C``."""
    P = np.abs(C) ** 2
    sig = np.diagonal(P, axis1=-2, axis2=-1)
    interf = P.sum(axis=-1) - sig
    return np.sum(np.log2(1.0 + sig / (interf + sigma2)), axis=-1)


def combined_channel(G, psi: Tensor, H, D, V) -> ComplexTensor:
    """Differentiable ``C = (G diag(exp(j psi)) H + D) V``.

    ``G`` (..., U, N), ``D`` (..., U, M) and ``V`` (..., M, U) are complex
    numpy arrays (or :class:`ComplexTensor`); ``H`` (N, M) is shared; ``psi``
    (..., N) is the tracked phase tensor. ``G`` is scaled per column by the
    phasors, so the N x N reflection matrix never exists.
    """
    Gt = G if isinstance(G, ComplexTensor) else ComplexTensor.from_numpy(G)
    Ht = H if isinstance(H, ComplexTensor) else ComplexTensor.from_numpy(H)
    Dt = D if isinstance(D, ComplexTensor) else ComplexTensor.from_numpy(D)
    Vt = V if isinstance(V, ComplexTensor) else ComplexTensor.from_numpy(V)
    gshape = Gt.shape
    if psi.shape != gshape[:-2] + gshape[-1:]:
        raise DimensionError(f"phases {psi.shape} do not match G {gshape}")
    if Ht.shape[0] != gshape[-1] or len(Ht.shape) != 2:
        raise DimensionError(f"H {Ht.shape} does not match G {gshape}")
    phi = ag.unit_phasor(psi)
    col = psi.shape[:-1] + (1, psi.shape[-1])
    phi_b = ComplexTensor(ag.expand(ag.reshape(phi.re, col), gshape),
                          ag.expand(ag.reshape(phi.im, col), gshape))
    Gphi = ag.cmul(Gt, phi_b)
    flat = (-1, gshape[-1])
    Gphi2 = ComplexTensor(ag.reshape(Gphi.re, flat), ag.reshape(Gphi.im, flat))
    GPH2 = ag.cmatmul(Gphi2, Ht)
    out_shape = gshape[:-1] + (Ht.shape[1],)
    GPH = ComplexTensor(ag.reshape(GPH2.re, out_shape), ag.reshape(GPH2.im, out_shape))
    if Dt.shape != out_shape:
        raise DimensionError(f"D {Dt.shape} does not match {out_shape}")
    A = ag.cadd(GPH, Dt)
    return ag.cmatmul(A, Vt)


def sum_rate(C: ComplexTensor, sigma2: float) -> Tensor:
    """Differentiable sum-rate in bit/s/Hz; batched inputs give one rate per sample."""
    if sigma2 <= 0:
        raise ContractError("noise power must be positive")
    U = C.shape[-1]
    if C.shape[-2] != U:
        raise DimensionError(f"combined channel must be square, got {C.shape}")
    P = ag.cabs2(C)
    flat = ag.reshape(P, C.shape[:-2] + (U * U,))
    sig = ag.take(flat, np.arange(U) * (U + 1), axis=-1)
    total = ag.reduce(P, axis=-1, mode="sum")
    interf = ag.add_scalar(ag.sub(total, sig), sigma2)
    sinr = ag.div(sig, interf)
    rates = ag.scale(ag.log(ag.add_scalar(sinr, 1.0)), 1.0 / LN2)
    return ag.reduce(rates, axis=-1, mode="sum")


# ---------------------------------------------------------------------------
# WMMSE
# ---------------------------------------------------------------------------

@dataclass
class WmmseResult:
    """Batched WMMSE output.

    ``trace`` holds the sum-rate of the initial point and after every
    iteration (rows: iterations, NaN-padded after convergence). ``failed``
    flags samples whose inner system was too ill-conditioned.
    """

    V: np.ndarray
    rates: np.ndarray
    trace: np.ndarray
    iterations: np.ndarray
    failed: np.ndarray


def matched_filter(A: np.ndarray, E_Tr: float) -> np.ndarray:
    """Columns ``A[u]^H`` scaled to total power ``E_Tr``."""
    V = np.conj(np.swapaxes(A, -1, -2))
    norm2 = np.sum(np.abs(V) ** 2, axis=(-2, -1), keepdims=True)
    return V * np.sqrt(E_Tr / norm2)


def _power(lam, psi2, mu):
    return np.sum(psi2 / (lam + mu[:, None]) ** 2, axis=1)


def _precoder_update(A, w, uu, E_Tr, max_cond, bisect_steps):
    """Power-constrained minimizer of the weighted MSE for fixed receivers and weights."""
    B, U, M = A.shape
    AH = np.conj(np.swapaxes(A, -1, -2))                # (B, M, U)
    X = (AH * (w * np.abs(uu) ** 2)[:, None, :]) @ A    # (B, M, M)
    X = 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))
    Bm = AH * (w * np.conj(uu))[:, None, :]             # (B, M, U)
    lam, Q = np.linalg.eigh(X)
    lam = np.maximum(lam, 0.0)
    Psi = np.conj(np.swapaxes(Q, -1, -2)) @ Bm
    psi2 = np.sum(np.abs(Psi) ** 2, axis=2)             # (B, M)
    lam_max = lam[:, -1:]
    null = lam <= 1e-13 * lam_max
    psi2 = np.where(null, 0.0, psi2)
    lam_safe = np.where(null, 1.0, lam)
    p0 = np.sum(np.where(null, 0.0, psi2 / lam_safe ** 2), axis=1)
    need = p0 > E_Tr
    mu = np.zeros(B)
    if need.any():
        lo = np.zeros(B)
        hi = np.ones(B)
        # grow the upper bracket until feasible
        for _ in range(200):
            grow = need & (_power(lam, psi2, hi) > E_Tr)
            if not grow.any():
                break
            hi = np.where(grow, hi * 2.0, hi)
        for _ in range(bisect_steps):
            mid = 0.5 * (lo + hi)
            feas = _power(lam, psi2, mid) <= E_Tr
            hi = np.where(feas, mid, hi)
            lo = np.where(feas, lo, mid)
        mu = np.where(need, hi, 0.0)
    # condition of the system actually solved, over the used subspace
    used = ~null | (mu[:, None] > 0)
    lam_used_min = np.min(np.where(used, lam, np.inf), axis=1)
    cond = (lam[:, -1] + mu) / (lam_used_min + mu)
    bad = ~np.isfinite(cond) | (cond > max_cond)
    denom = lam[:, :, None] + mu[:, None, None]
    scaled = np.where((null & (mu[:, None] == 0))[:, :, None], 0.0,
                      Psi / np.where(denom == 0, 1.0, denom))
    V = Q @ scaled
    # bisection leaves the power within a hair of E_Tr; clip the residue
    pw = np.sum(np.abs(V) ** 2, axis=(1, 2))
    over = pw > E_Tr
    V[over] *= np.sqrt(E_Tr / pw[over])[:, None, None]
    return V, bad


def wmmse_batch(A: np.ndarray, E_Tr: float, sigma2: float, max_iters: int = 20,
                tol: float = 1e-5, max_cond: float = 1e12, bisect_steps: int = 50,
                V0: np.ndarray | None = None) -> WmmseResult:
    """Sum-rate WMMSE for a batch of effective channels ``A`` (B x U x M).

    Iterates receiver, MSE weight and precoder updates (unit user weights)
    from a matched-filter start. A sample stops updating once its sum-rate
    gain falls below ``tol`` or after ``max_iters`` iterations.
    """
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 3:
        raise DimensionError(f"expected a batch of U x M channels, got {A.shape}")
    if E_Tr <= 0 or sigma2 <= 0:
        raise ContractError("E_Tr and sigma2 must be positive")
    B, U, M = A.shape
    failed = ~np.isfinite(A).all(axis=(1, 2)) | (np.abs(A).max(axis=(1, 2), initial=0.0) == 0.0)
    A_use = np.where(failed[:, None, None], 1.0, A)
    V = matched_filter(A_use, E_Tr) if V0 is None else np.array(V0, dtype=np.complex128)
    rate = sum_rate_np(A_use @ V, sigma2)
    trace = np.full((max_iters + 1, B), np.nan)
    trace[0] = rate
    active = ~failed
    iters = np.zeros(B, dtype=int)
    for it in range(1, max_iters + 1):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Aa = A_use[idx]
        C = Aa @ V[idx]
        P = np.abs(C) ** 2
        total = P.sum(axis=2) + sigma2
        cuu = np.diagonal(C, axis1=1, axis2=2)
        uu = cuu / total
        mse = 1.0 - np.abs(cuu) ** 2 / total
        w = 1.0 / np.maximum(mse, 1e-300)
        Vn, bad = _precoder_update(Aa, w, uu, E_Tr, max_cond, bisect_steps)
        new_rate = sum_rate_np(Aa @ Vn, sigma2)
        ok = ~bad & np.isfinite(new_rate)
        failed[idx[~ok]] = True
        V[idx[ok]] = Vn[ok]
        gain = new_rate - rate[idx]
        rate[idx[ok]] = new_rate[ok]
        trace[it, idx[ok]] = new_rate[ok]
        iters[idx[ok]] = it
        done = ~ok | (np.abs(gain) < tol)
        active[idx[done]] = False
    rate[failed] = np.nan
    return WmmseResult(V=V, rates=rate, trace=trace, iterations=iters, failed=failed)


def wmmse_precoder(A: np.ndarray, E_Tr: float, sigma2: float, max_iters: int = 20,
                   tol: float = 1e-5, return_trace: bool = False):
    """Single-instance WMMSE; raises :class:`NumericError` when the solve is ill-conditioned."""
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2:
        raise DimensionError(f"expected a U x M channel, got {A.shape}")
    if not np.any(A):
        raise ContractError("effective channel is all zero")
    res = wmmse_batch(A[None], E_Tr, sigma2, max_iters=max_iters, tol=tol)
    if res.failed[0]:
        raise NumericError("WMMSE inner system is singular or ill-conditioned")
    pre = Precoder(res.V[0])
    if return_trace:
        t = res.trace[:, 0]
        return pre, t[np.isfinite(t)]
    return pre


# ---------------------------------------------------------------------------
# discrete phases
# ---------------------------------------------------------------------------

def quantize_phases(phase: PhaseConfig | np.ndarray, levels: int) -> PhaseConfig:
    """Round each phase (mod 2 pi) to the nearest of ``levels`` equispaced values.

    Ties go to the lower grid point; the result lies in ``{k 2 pi / levels}``.
    """
    if levels < 2:
        raise ContractError("need at least two phase levels")
    psi = phase.psi if isinstance(phase, PhaseConfig) else np.asarray(phase, dtype=np.float64)
    step = 2 * np.pi / levels
    x = np.mod(psi, 2 * np.pi) / step
    k = np.mod(np.ceil(x - 0.5), levels)
    return PhaseConfig(k * step)
