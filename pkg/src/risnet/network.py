"""RISnet: shared per-(user, element) filters mapping channel features to phases.

Every non-final layer applies four filter classes to each feature vector
``f[u, n]``:

* ``cc`` - current user, current element;
* ``ca`` - current user, mean over all elements;
* ``oc`` - mean over the other users, current element;
* ``oa`` - mean over the other users and all elements;

and concatenates the four outputs. The final layer is a single linear filter
whose outputs are summed over users, so the phases do not depend on the order
of the users.

With partial CSI the network starts from the stage-0 anchor elements (one
per 9 x 9 block) and two expansion layers each apply 9 position-specific
filters per anchor, filling the 3 x 3 neighbourhood around it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import adgraph as ag
from .adgraph import ContractError, Tensor
from .channel import ChannelFeature, ConfigError
from .rate import PhaseConfig

__all__ = [
    "CLASSES", "ArchConfig", "RISnetParams", "anchor_grid", "nu", "expansion_table",
    "init_params", "standard_layer", "expansion_layer", "final_layer", "forward",
    "forward_batch", "param_count",
]

CLASSES = ("cc", "ca", "oc", "oa")
EXPANSION_FILTERS = 9


@dataclass(frozen=True)
class ArchConfig:
    csi_mode: str = "full"
    num_layers: int = 8
    hidden_q: int = 16
    expansion_layers: tuple[int, ...] = ()
    grid: tuple[int, int] = (36, 36)

    def __post_init__(self):
        object.__setattr__(self, "expansion_layers", tuple(int(i) for i in self.expansion_layers))
        object.__setattr__(self, "grid", tuple(int(i) for i in self.grid))
        if self.csi_mode not in ("full", "partial"):
            raise ConfigError(f"csi_mode must be 'full' or 'partial', got {self.csi_mode!r}")
        if self.num_layers < 2 or self.hidden_q < 1:
            raise ConfigError("need at least two layers and a positive width")
        if self.csi_mode == "partial":
            if len(self.expansion_layers) != 2:
                raise ConfigError("partial CSI needs exactly two expansion layers")
            rows, cols = self.grid
            if rows % 9 or cols % 9:
                raise ConfigError(f"grid {self.grid} is not divisible by 9")
        elif self.expansion_layers:
            raise ConfigError("full CSI uses no expansion layers")
        if any(not 1 <= i < self.num_layers for i in self.expansion_layers):
            raise ConfigError("expansion layers must be non-final layers (1-indexed)")
        if list(self.expansion_layers) != sorted(set(self.expansion_layers)):
            raise ConfigError("expansion layers must be distinct and increasing")

    @classmethod
    def full(cls, grid=(36, 36), **kw) -> "ArchConfig":
        return cls(csi_mode="full", grid=grid, **kw)

    @classmethod
    def partial(cls, grid=(36, 36), expansion_layers=(3, 6), **kw) -> "ArchConfig":
        return cls(csi_mode="partial", grid=grid, expansion_layers=expansion_layers, **kw)

    @property
    def N(self) -> int:
        return self.grid[0] * self.grid[1]

    def input_width(self, layer: int) -> int:
        """Feature width P of 1-indexed ``layer``."""
        return 4 if layer == 1 else 4 * self.hidden_q

    def filters(self, layer: int) -> int:
        return EXPANSION_FILTERS if layer in self.expansion_layers else 1


@dataclass
class RISnetParams:
    """Trainable tensors.

    ``layers[i][cls][j]`` is the ``(W, b)`` pair of class ``cls`` and filter
    ``j`` in non-final layer ``i + 1``; ``final`` is ``(w, b)`` with ``w`` of
    shape ``(1, P_L)``.
    """

    arch: ArchConfig
    layers: list[dict[str, list[tuple[Tensor, Tensor]]]]
    final: tuple[Tensor, Tensor]

    def tensors(self) -> list[Tensor]:
        """All parameters in canonical order: layer, class, filter, (W, b)."""
        out = []
        for layer in self.layers:
            for cls in CLASSES:
                for W, b in layer[cls]:
                    out.extend((W, b))
        out.extend(self.final)
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.tensors()])

    def load_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.count():
            raise ConfigError(f"expected {self.count()} parameters, got {values.size}")
        pos = 0
        for t in self.tensors():
            t.data = values[pos:pos + t.size].reshape(t.shape).copy()
            pos += t.size

    def count(self) -> int:
        return sum(t.size for t in self.tensors())

    def track(self, on: bool = True) -> "RISnetParams":
        for t in self.tensors():
            t.requires_grad = on
            t.grad = None
        return self

    def bind(self, flat: Tensor) -> "RISnetParams":
        """Parameters of the same architecture whose tensors are views into ``flat``.

        Gradients of anything computed from the result flow back to ``flat``;
        used for finite-difference checks over the flat parameter vector.
        """
        if flat.size != self.count():
            raise ConfigError(f"expected {self.count()} parameters, got {flat.size}")
        views, pos = [], 0
        for t in self.tensors():
            views.append(ag.reshape(ag.narrow(flat, pos, pos + t.size, axis=0), t.shape))
            pos += t.size
        layers, k = [], 0
        for layer in self.layers:
            new = {}
            for cls in CLASSES:
                n = len(layer[cls])
                new[cls] = [(views[k + 2 * i], views[k + 2 * i + 1]) for i in range(n)]
                k += 2 * n
            layers.append(new)
        return RISnetParams(arch=self.arch, layers=layers, final=(views[k], views[k + 1]))

    def copy(self) -> "RISnetParams":
        other = init_params(self.arch, np.random.default_rng(0))
        other.load_flat(self.flat())
        return other


def param_count(arch: ArchConfig) -> int:
    """Analytic parameter count; depends on the architecture only."""
    Q = arch.hidden_q
    total = 0
    for i in range(1, arch.num_layers):
        P = arch.input_width(i)
        total += arch.filters(i) * len(CLASSES) * (Q * P + Q)
    return total + arch.input_width(arch.num_layers) + 1


def init_params(arch: ArchConfig, rng: np.random.Generator) -> RISnetParams:
    """Uniform Glorot weights, zero biases."""
    Q = arch.hidden_q
    layers = []
    for i in range(1, arch.num_layers):
        P = arch.input_width(i)
        limit = np.sqrt(6.0 / (P + Q))
        layer = {}
        for cls in CLASSES:
            layer[cls] = [(Tensor(rng.uniform(-limit, limit, (Q, P))), Tensor(np.zeros(Q)))
                          for _ in range(arch.filters(i))]
        layers.append(layer)
    P = arch.input_width(arch.num_layers)
    limit = np.sqrt(6.0 / (P + 1))
    final = (Tensor(rng.uniform(-limit, limit, (1, P))), Tensor(np.zeros(1)))
    return RISnetParams(arch=arch, layers=layers, final=final)


# ---------------------------------------------------------------------------
# anchor geometry
# ---------------------------------------------------------------------------

def _stage_lines(dim: int, stage: int) -> np.ndarray:
    if stage == 0:
        return 9 * np.arange(dim // 9) + 4
    if stage == 1:
        return 3 * np.arange(dim // 3) + 1
    if stage == 2:
        return np.arange(dim)
    raise ConfigError(f"stage must be 0, 1 or 2, got {stage}")


def anchor_grid(stage: int, grid: Sequence[int]) -> np.ndarray:
    """Flat (row-major, 0-based) indices of the anchor elements of ``stage``.

    Stage 0 takes the centre of every 9 x 9 block, stage 1 the centre of every
    3 x 3 block and stage 2 every element.
    """
    rows, cols = (int(g) for g in grid)
    if rows % 9 or cols % 9:
        raise ConfigError(f"grid {rows}x{cols} is not divisible by 9")
    r = _stage_lines(rows, stage)
    c = _stage_lines(cols, stage)
    return (r[:, None] * cols + c[None, :]).reshape(-1)


def nu(n: int, j: int, H_cols: int) -> int:
    """1-based element reached from block centre ``n`` by expansion filter ``j``.

    Filters 1-3 cover the row above, 4-6 the centre row and 7-9 the row below,
    left to right.
    """
    if not 1 <= j <= 9:
        raise ContractError(f"filter index must be in 1..9, got {j}")
    if j <= 3:
        out = n - H_cols - 2 + j
    elif j <= 6:
        out = n - 5 + j
    else:
        out = n + H_cols - 8 + j
    if out < 1:
        raise ContractError(f"nu({n}, {j}) = {out} falls outside the grid")
    return out


def expansion_table(stage: int, grid: Sequence[int]) -> np.ndarray:
    """Output positions for expanding stage ``stage`` anchors to stage ``stage + 1``.

    Entry ``[k, j-1]`` is the 0-based position, within the stage ``stage + 1``
    anchor list, written by filter ``j`` applied to input anchor ``k``.
    """
    rows, cols = (int(g) for g in grid)
    rows_in, cols_in = len(_stage_lines(rows, stage)), len(_stage_lines(cols, stage))
    rows_out, cols_out = 3 * rows_in, 3 * cols_in
    table = np.empty((rows_in * cols_in, EXPANSION_FILTERS), dtype=np.intp)
    for k in range(rows_in * cols_in):
        r, c = divmod(k, cols_in)
        centre = (3 * c + 1) + 1 + (3 * r + 1) * cols_out
        for j in range(1, EXPANSION_FILTERS + 1):
            out = nu(centre, j, cols_out) - 1
            if out >= rows_out * cols_out:
                raise ContractError(f"nu({centre}, {j}) falls outside the grid")
            table[k, j - 1] = out
    return table


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _stack(pairs: Sequence[tuple[Tensor, Tensor]]) -> tuple[Tensor, Tensor]:
    if len(pairs) == 1:
        return pairs[0]
    return ag.concat([W for W, _ in pairs], axis=0), ag.concat([b for _, b in pairs], axis=0)


def _four_class(R: Tensor, Q: int) -> Tensor:
    """Class aggregation of ``R`` (B, U, N, K, 4Q) holding relu outputs per class block."""
    B, U, N, K, _ = R.shape
    if U < 2:
        raise ContractError("the four filter classes need at least two users")
    cc = ag.narrow(R, 0, Q, axis=-1)
    ca = ag.expand(ag.reduce(ag.narrow(R, Q, 2 * Q, axis=-1), axis=2, mode="mean", keepdims=True), cc.shape)
    oc_raw = ag.narrow(R, 2 * Q, 3 * Q, axis=-1)
    oc_all = ag.expand(ag.reduce(oc_raw, axis=1, keepdims=True), cc.shape)
    oc = ag.scale(ag.sub(oc_all, oc_raw), 1.0 / (U - 1))
    oa_user = ag.reduce(ag.narrow(R, 3 * Q, 4 * Q, axis=-1), axis=2, keepdims=True)   # (B,U,1,K,Q)
    oa_all = ag.expand(ag.reduce(oa_user, axis=1, keepdims=True), oa_user.shape)
    oa = ag.expand(ag.scale(ag.sub(oa_all, oa_user), 1.0 / (N * (U - 1))), cc.shape)
    return ag.concat([cc, ca, oc, oa], axis=-1)


def _class_weights(layer: dict, j: int) -> list[tuple[Tensor, Tensor]]:
    return [layer[cls][j] for cls in CLASSES]


def standard_layer(F: Tensor, layer: dict) -> Tensor:
    """One four-class layer on features ``F`` of shape (B, U, N, P)."""
    Q = layer["cc"][0][0].shape[0]
    W, b = _stack(_class_weights(layer, 0))
    R = ag.relu(ag.affine(W, F, b))
    B, U, N, _ = F.shape
    R = ag.reshape(R, (B, U, N, 1, 4 * Q))
    return ag.reshape(_four_class(R, Q), (B, U, N, 4 * Q))


def expansion_layer(F: Tensor, layer: dict, table: np.ndarray) -> Tensor:
    """Nine-filter layer: (B, U, N_in, P) -> (B, U, 9 N_in, 4Q).

    Filter ``j`` on input anchor ``k`` produces the output anchor
    ``table[k, j - 1]``; sums over elements range over the input anchors.
    """
    Q = layer["cc"][0][0].shape[0]
    B, U, N_in, _ = F.shape
    if table.shape != (N_in, EXPANSION_FILTERS):
        raise ConfigError(f"expansion table {table.shape} does not fit {N_in} input anchors")
    pairs = [p for j in range(EXPANSION_FILTERS) for p in _class_weights(layer, j)]
    W, b = _stack(pairs)
    R = ag.relu(ag.affine(W, F, b))
    R = ag.reshape(R, (B, U, N_in, EXPANSION_FILTERS, 4 * Q))
    out = ag.reshape(_four_class(R, Q), (B, U, N_in * EXPANSION_FILTERS, 4 * Q))
    return ag.scatter(out, table.reshape(-1), N_in * EXPANSION_FILTERS, axis=2)


def final_layer(F: Tensor, final: tuple[Tensor, Tensor], N: int | None = None) -> Tensor:
    """Linear filter per (u, n), summed over users: (B, U, N, P) -> (B, N)."""
    if N is not None and F.shape[2] != N:
        raise ContractError(f"final layer needs all {N} elements, got {F.shape[2]}")
    w, b = final
    out = ag.affine(w, F, b)
    B, U, Nf, _ = out.shape
    return ag.reduce(ag.reshape(out, (B, U, Nf)), axis=1, mode="sum")


def _tables(arch: ArchConfig) -> dict[int, np.ndarray]:
    return {layer: expansion_table(stage, arch.grid)
            for stage, layer in enumerate(arch.expansion_layers)}


def forward_batch(gamma: np.ndarray | Tensor, params: RISnetParams) -> Tensor:
    """Phases for a batch of features ``gamma`` of shape (B, 4, U, N_0).

    ``N_0`` is the full element count (full CSI) or the stage-0 anchor count
    (partial CSI). Differentiable with respect to the parameters when a tape
    is active and the parameters are tracked.
    """
    arch = params.arch
    g = gamma.data if isinstance(gamma, Tensor) else np.asarray(gamma, dtype=np.float64)
    if g.ndim != 4 or g.shape[1] != 4:
        raise ConfigError(f"features must be (B, 4, U, N), got {g.shape}")
    expected = arch.N if arch.csi_mode == "full" else len(anchor_grid(0, arch.grid))
    if g.shape[3] != expected:
        raise ConfigError(f"{arch.csi_mode} CSI network expects {expected} elements, got {g.shape[3]}")
    F = Tensor(np.ascontiguousarray(np.transpose(g, (0, 2, 3, 1))))
    tables = _tables(arch)
    for i, layer in enumerate(params.layers, start=1):
        if i in tables:
            F = expansion_layer(F, layer, tables[i])
        else:
            F = standard_layer(F, layer)
    return final_layer(F, params.final, arch.N)


def forward(feature: ChannelFeature, params: RISnetParams) -> PhaseConfig:
    """Phases for a single channel feature (no gradient tracking)."""
    arch = params.arch
    if arch.csi_mode == "partial":
        anchors = anchor_grid(0, arch.grid)
        if feature.anchors is None or not np.array_equal(feature.anchors, anchors):
            raise ConfigError("partial CSI network needs features restricted to the stage-0 anchors")
    elif feature.anchors is not None:
        raise ConfigError("full CSI network needs unrestricted features")
    psi = forward_batch(feature.gamma[None], params)
    return PhaseConfig(psi.data[0].copy())
