"""Binary "GHDR" checkpoints: cloud, tone-mapper bank, optimizer, iteration.

Little-endian throughout, float64 parameter payloads, FNV-1a 64-bit checksum
over everything preceding it. Saves are atomic (temp file + rename), and
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .field import GaussianCloud
from .optim import AdamState
from .tonemap import Mlp, ToneMapperBank

MAGIC = b"GHDR"
VERSION = 1
_ACT_TAGS = {"sigmoid": 0, "identity": 1, "softplus": 2}
_TAG_ACTS = {v: k for k, v in _ACT_TAGS.items()}

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class CheckpointError(ValueError):
    pass


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class Checkpoint:
    cloud: GaussianCloud
    bank: ToneMapperBank
    opt_states: dict[str, AdamState]
    iteration: int
    config_text: str


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v):
        self.buf += struct.pack("<B", v)

    def u16(self, v):
        self.buf += struct.pack("<H", v)

    def u32(self, v):
        self.buf += struct.pack("<I", v)

    def u64(self, v):
        self.buf += struct.pack("<Q", v)

    def array(self, a: np.ndarray):
        self.buf += np.ascontiguousarray(a, dtype="<f8").tobytes()

    def shaped_array(self, a: np.ndarray):
        self.u8(a.ndim)
        for dim in a.shape:
            self.u32(dim)
        self.array(a)

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.u64(len(raw))
        self.buf += raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self._take(1))[0]

    def u16(self):
        return struct.unpack("<H", self._take(2))[0]

    def u32(self):
        return struct.unpack("<I", self._take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self._take(8))[0]

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = self._take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    def shaped_array(self) -> np.ndarray:
        ndim = self.u8()
        shape = tuple(self.u32() for _ in range(ndim))
        return self.array(shape)

    def text(self) -> str:
        n = self.u64()
        return self._take(n).decode("utf-8")


def _write_mlp(w: _Writer, m: Mlp):
    w.u32(m.in_size)
    w.u32(m.hidden)
    w.u32(m.out_size)
    w.u8(_ACT_TAGS[m.out_act])
    for arr in m.param_arrays():
        w.array(arr)


def _read_mlp(r: _Reader) -> Mlp:
    in_size, hidden, out_size = r.u32(), r.u32(), r.u32()
    act = _TAG_ACTS.get(r.u8())
    if act is None:
        raise CheckpointError("unknown MLP activation tag")
    m = Mlp(in_size, out_size, act, rng=None, hidden=hidden)
    m.w1 = r.array((in_size, hidden))
    m.b1 = r.array((hidden,))
    m.w2 = r.array((hidden, out_size))
    m.b2 = r.array((out_size,))
    return m


def serialize(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    w.buf += MAGIC
    w.u32(VERSION)

    cloud = ckpt.cloud
    w.u64(cloud.count)
    w.u64(cloud.feature_dim)
    for arr in (
        cloud.position,
        cloud.rot_raw,
        cloud.scale_raw,
        cloud.opacity_raw,
        cloud.log_irradiance,
        cloud.feature,
    ):
        w.array(arr)

    bank = ckpt.bank
    w.u8(1 if bank.residual_enabled else 0)
    w.u32(bank.feature_dim)
    for m in (*bank.g, *bank.dg, bank.rho):
        _write_mlp(w, m)

    w.u32(len(ckpt.opt_states))
    for name in sorted(ckpt.opt_states):
        st = ckpt.opt_states[name]
        raw = name.encode("utf-8")
        w.u16(len(raw))
        w.buf += raw
        w.u64(st.step)
        w.u32(len(st.m))
        for m_arr, v_arr in zip(st.m, st.v):
            w.shaped_array(m_arr)
            w.array(v_arr)

    w.u64(ckpt.iteration)
    w.text(ckpt.config_text)
    w.u64(fnv1a64(bytes(w.buf)))
    return bytes(w.buf)


def deserialize(data: bytes) -> Checkpoint:
    if len(data) < 16:
        raise CheckpointError("file too small to be a checkpoint")
    stored = struct.unpack("<Q", data[-8:])[0]
    if fnv1a64(data[:-8]) != stored:
        raise CheckpointError("checkpoint checksum mismatch")
    r = _Reader(data)
    if r._take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    n = r.u64()
    d = r.u64()
    cloud = GaussianCloud(
        position=r.array((n, 3)),
        rot_raw=r.array((n, 4)),
        scale_raw=r.array((n, 3)),
        opacity_raw=r.array((n,)),
        log_irradiance=r.array((n, 3)),
        feature=r.array((n, d)),
    )

    residual = bool(r.u8())
    feature_dim = r.u32()
    bank = ToneMapperBank(feature_dim=feature_dim, residual_enabled=residual)
    bank.g = [_read_mlp(r) for _ in range(3)]
    bank.dg = [_read_mlp(r) for _ in range(3)]
    bank.rho = _read_mlp(r)

    opt_states: dict[str, AdamState] = {}
    for _ in range(r.u32()):
        name = r._take(r.u16()).decode("utf-8")
        step = r.u64()
        count = r.u32()
        ms, vs = [], []
        for _ in range(count):
            m_arr = r.shaped_array()
            ms.append(m_arr)
            vs.append(r.array(m_arr.shape))
        opt_states[name] = AdamState(m=ms, v=vs, step=step)

    iteration = r.u64()
    config_text = r.text()
    return Checkpoint(
        cloud=cloud,
        bank=bank,
        opt_states=opt_states,
        iteration=iteration,
        config_text=config_text,
    )


def save_checkpoint(path: str, ckpt: Checkpoint):
    data = serialize(ckpt)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        return deserialize(f.read())
