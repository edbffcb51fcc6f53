"""Binary dataset and checkpoint files.

Checkpoint layout (little endian)::

    b"RISP" | version u32 | csi_mode u8 | num_layers u32 | hidden_q u32
    | n_expansion u32 | expansion index u32 * n_expansion
    | ris_rows u32 | ris_cols u32 | parameters f64 * count

Parameters are flat in layer order, then class order cc/ca/oc/oa, then
filter order j = 1..9 (expansion layers), each weight row-major followed by
its bias; the final filter weight and bias come last.

Dataset layout::

    b"RISD" | version u32 | M u32 | N u32 | U u32 | K u32
    | (H, G, D) complex128 per sample

complex128 values are stored as interleaved (re, im) f64 pairs. The scenario
that produced a dataset is kept next to it in ``<path>.scenario`` as
``key=value`` lines.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..channel import ChannelSample, ScenarioConfig
from ..network import ArchConfig, RISnetParams, init_params, param_count
from .config import parse_config_text, scenario_from

__all__ = ["FormatError", "save_checkpoint", "load_checkpoint", "save_dataset", "load_dataset",
           "CHECKPOINT_MAGIC", "DATASET_MAGIC",
           "checkpoint_bytes", "scenario_sidecar"]

CHECKPOINT_MAGIC = b"RISP"
CHECKPOINT_VERSION = 1
DATASET_MAGIC = b"RISD"
DATASET_VERSION = 1
_MODES = {"full": 0, "partial": 1}


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated at byte {self.pos}, needed {n} more "
                              f"but only {len(self.buf) - self.pos} remain")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def c128(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return self.f64(2 * n).view(np.complex128).reshape(shape).copy()

    def end(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes")


def _magic(r: _Reader, expected: bytes, version: int) -> None:
    got = r.take(4)
    if got != expected:
        raise FormatError(f"{r.what}: bad magic {got!r}, expected {expected!r}")
    v = r.u32()
    if v != version:
        raise FormatError(f"{r.what}: unsupported version {v} (bytes {struct.pack('<I', v)!r})")


def _c128_bytes(z: np.ndarray) -> bytes:
    return np.ascontiguousarray(z, dtype=np.complex128).astype("<c16").tobytes()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_bytes(params: RISnetParams) -> bytes:
    a = params.arch
    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
           struct.pack("<B", _MODES[a.csi_mode]),
           struct.pack("<III", a.num_layers, a.hidden_q, len(a.expansion_layers))]
    out += [struct.pack("<I", i) for i in a.expansion_layers]
    out.append(struct.pack("<II", *a.grid))
    out.append(params.flat().astype("<f8").tobytes())
    return b"".join(out)


def save_checkpoint(params: RISnetParams, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path) -> RISnetParams:
    r = _Reader(Path(path).read_bytes(), f"checkpoint {path}")
    _magic(r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    mode_code = r.u8()
    modes = {v: k for k, v in _MODES.items()}
    if mode_code not in modes:
        raise FormatError(f"checkpoint {path}: unknown csi_mode byte {mode_code:#04x}")
    num_layers, hidden_q, n_exp = r.u32(), r.u32(), r.u32()
    expansion = tuple(r.u32() for _ in range(n_exp))
    rows, cols = r.u32(), r.u32()
    arch = ArchConfig(csi_mode=modes[mode_code], num_layers=num_layers, hidden_q=hidden_q,
                      expansion_layers=expansion, grid=(rows, cols))
    values = r.f64(param_count(arch))
    r.end()
    params = init_params(arch, np.random.default_rng(0))
    params.load_flat(values)
    return params


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def _scenario_text(cfg: ScenarioConfig) -> str:
    return "".join(f"{name}={getattr(cfg, name)!r}\n".replace("'", "")
                   for name in ScenarioConfig.field_names())


def scenario_sidecar(path) -> Path:
    return Path(str(path) + ".scenario")


def save_dataset(samples: list[ChannelSample], path, scenario: ScenarioConfig | None = None) -> None:
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    M, N, U = samples[0].dims
    out = [DATASET_MAGIC, struct.pack("<IIIII", DATASET_VERSION, M, N, U, len(samples))]
    for s in samples:
        if s.dims != (M, N, U):
            raise ValueError("all samples must share dimensions")
        out += [_c128_bytes(s.H), _c128_bytes(s.G), _c128_bytes(s.D)]
    Path(path).write_bytes(b"".join(out))
    if scenario is not None:
        scenario_sidecar(path).write_text(_scenario_text(scenario))


def load_dataset(path, with_scenario: bool = False):
    """Samples (and the sidecar scenario, or ``None``) from a dataset file.

    Samples whose ``H`` equals the first sample's share one array.
    """
    r = _Reader(Path(path).read_bytes(), f"dataset {path}")
    _magic(r, DATASET_MAGIC, DATASET_VERSION)
    M, N, U, K = r.u32(), r.u32(), r.u32(), r.u32()
    samples = []
    for _ in range(K):
        H = r.c128((N, M))
        if samples and np.array_equal(H, samples[0].H):
            H = samples[0].H
        samples.append(ChannelSample(H=H, G=r.c128((U, N)), D=r.c128((U, M))))
    r.end()
    if with_scenario:
        side = scenario_sidecar(path)
        scenario = scenario_from(parse_config_text(side.read_text())) if side.exists() else None
        return samples, scenario
    return samples
