"""Checkpointing of snowball state across process lifetimes.

File layout (extension ``.snsckpt``, all integers little-endian):

    magic   b"SNSB"
    version u16 length + UTF-8 string ("snowball-ns/v1")
    count   u32 number of sections
    section u16 name length + name, u64 payload length, payload,
            u32 CRC32C of the payload

Sections are written in the fixed order config, reports, memo, sampler.
Floating-point values are stored as raw IEEE-754 doubles, so every field
round-trips bitwise; this is load-bearing for memo keys, whose equality
is defined on bit patterns.  Saves are atomic (temp file + rename) and a
version mismatch on load is a hard error, never a silent migration.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Point
from .lrps import WalkResult
from .problems import get_problem
from .snowball import (
    MemoTable,
    SamplerState,
    SnowballConfig,
    SnowballEngine,
    SnowballReport,
)

FORMAT_VERSION = "snowball-ns/v1"
MAGIC = b"SNSB"
CHECKPOINT_SUFFIX = ".snsckpt"
_MASK64 = (1 << 64) - 1

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "crc32c",
    "FORMAT_VERSION",
    "CHECKPOINT_SUFFIX",
]


class CheckpointError(RuntimeError):
    """Checkpoint could not be written or read back."""


# ---------------------------------------------------------------------------
# CRC32C (Castagnoli), slice-by-8.  No stdlib implementation exists and the
# package mirror carries no C extension for it, so the tables are built once
# here; throughput is tens of MB/s, plenty for checkpoint payloads.

def _build_crc32c_tables() -> list[list[int]]:
    poly = 0x82F63B78  # reflected Castagnoli polynomial
    table0 = []
    for n in range(256):
        crc = n
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        table0.append(crc)
    tables = [table0]
    for k in range(1, 8):
        prev = tables[k - 1]
        tables.append([table0[c & 0xFF] ^ (c >> 8) for c in prev])
    return tables


_CRC_TABLES = _build_crc32c_tables()


def crc32c(data: bytes) -> int:
    """CRC32C (Castagnoli) of ``data``."""
    t0, t1, t2, t3, t4, t5, t6, t7 = _CRC_TABLES
    crc = 0xFFFFFFFF
    n = len(data)
    end8 = n - (n % 8)
    view = memoryview(data)
    for i in range(0, end8, 8):
        crc ^= view[i] | (view[i + 1] << 8) | (view[i + 2] << 16) | (view[i + 3] << 24)
        crc = (
            t7[crc & 0xFF]
            ^ t6[(crc >> 8) & 0xFF]
            ^ t5[(crc >> 16) & 0xFF]
            ^ t4[(crc >> 24) & 0xFF]
            ^ t3[view[i + 4]]
            ^ t2[view[i + 5]]
            ^ t1[view[i + 6]]
            ^ t0[view[i + 7]]
        )
    for i in range(end8, n):
        crc = (crc >> 8) ^ t0[(crc ^ view[i]) & 0xFF]
    return crc ^ 0xFFFFFFFF


# ---------------------------------------------------------------------------
# Encoding primitives.

class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v: int):
        self.buf += struct.pack("<B", v)

    def u16(self, v: int):
        self.buf += struct.pack("<H", v)

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def u64(self, v: int):
        self.buf += struct.pack("<Q", v)

    def i64(self, v: int):
        self.buf += struct.pack("<q", v)

    def f64(self, v: float):
        self.buf += struct.pack("<d", v)

    def f64s(self, arr: np.ndarray):
        self.buf += np.asarray(arr, dtype="<f8").tobytes()

    def string(self, s: str):
        raw = s.encode("utf-8")
        self.u16(len(raw))
        self.buf += raw


class _Reader:
    def __init__(self, data: bytes, context: str):
        self.data = data
        self.pos = 0
        self.context = context

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {self.context}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def f64s(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * count), dtype="<f8").astype(float)

    def string(self) -> str:
        return self._take(self.u16()).decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.data)


@dataclass
class Checkpoint:
    """Everything needed to continue a snowball process: configuration,
    completed reports, the memo table and the adaptive sampler state."""

    config: SnowballConfig
    completed_outer_iterations: int
    reports: list[SnowballReport]
    memo: MemoTable
    sampler: SamplerState
    master_seed: int
    format_version: str = FORMAT_VERSION

    @classmethod
    def from_engine(cls, engine: SnowballEngine) -> "Checkpoint":
        return cls(
            config=engine.config,
            completed_outer_iterations=engine.completed_outer_iterations,
            reports=list(engine.reports),
            memo=engine.memo,
            sampler=engine.sampler_state(),
            master_seed=engine.config.seed,
        )

    def make_engine(self) -> SnowballEngine:
        """Rebuild an engine that continues exactly where this checkpoint
        left off (subsequent iterations match an uninterrupted run bitwise)."""
        return SnowballEngine(
            self.config,
            memo=self.memo,
            reports=list(self.reports),
            sampler=self.sampler,
        )


# ---------------------------------------------------------------------------
# Section payloads.

def _encode_config(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    cfg = ckpt.config
    w.u32(cfg.k0)
    w.u32(cfg.k_inc)
    w.u32(cfg.m_steps)
    w.f64(cfg.term_epsilon)
    w.u32(cfg.max_outer_iterations)
    w.u64(cfg.seed & _MASK64)
    w.u8(1 if cfg.memo_enabled else 0)
    w.u32(ckpt.completed_outer_iterations)
    w.u64(ckpt.master_seed & _MASK64)
    w.string(cfg.problem.name)
    w.u32(cfg.problem.dim)
    params = sorted(cfg.problem.params.items())
    w.u32(len(params))
    for key, value in params:
        w.string(key)
        w.f64(float(value))
    return bytes(w.buf)


def _decode_config(payload: bytes) -> tuple[SnowballConfig, int, int]:
    r = _Reader(payload, "config section")
    k0 = r.u32()
    k_inc = r.u32()
    m_steps = r.u32()
    term_epsilon = r.f64()
    max_outer = r.u32()
    seed = r.u64()
    memo_enabled = bool(r.u8())
    completed = r.u32()
    master_seed = r.u64()
    name = r.string()
    dim = r.u32()
    params = {}
    for _ in range(r.u32()):
        key = r.string()
        params[key] = r.f64()
    problem = get_problem(name, dim, **params)
    config = SnowballConfig(
        problem=problem,
        k0=k0,
        k_inc=k_inc,
        m_steps=m_steps,
        max_outer_iterations=max_outer,
        seed=seed,
        term_epsilon=term_epsilon,
        memo_enabled=memo_enabled,
    )
    return config, completed, master_seed


def _encode_reports(reports: list[SnowballReport]) -> bytes:
    w = _Writer()
    w.u32(len(reports))
    for rep in reports:
        w.u32(rep.outer_iteration)
        w.u32(rep.k)
        w.f64(rep.log_z)
        w.f64(rep.log_z_err)
        w.f64(rep.ess)
        w.u64(rep.n_dead)
        w.u64(rep.n_like_evals_cumulative)
        w.u64(rep.n_lrps_calls_new)
        w.u64(rep.n_memo_hits)
        w.f64(rep.wall_seconds)
    return bytes(w.buf)


def _decode_reports(payload: bytes) -> list[SnowballReport]:
    r = _Reader(payload, "reports section")
    reports = []
    for _ in range(r.u32()):
        reports.append(
            SnowballReport(
                outer_iteration=r.u32(),
                k=r.u32(),
                log_z=r.f64(),
                log_z_err=r.f64(),
                ess=r.f64(),
                n_dead=r.u64(),
                n_like_evals_cumulative=r.u64(),
                n_lrps_calls_new=r.u64(),
                n_memo_hits=r.u64(),
                wall_seconds=r.f64(),
            )
        )
    return reports


def _encode_memo(memo: MemoTable, dim: int) -> bytes:
    w = _Writer()
    w.u32(dim)
    w.u64(memo.n_hits)
    w.u64(memo.n_misses)
    w.u64(len(memo.entries))
    for key_bits, result in memo.entries.items():  # insertion order
        w.i64(key_bits)
        w.i64(result.point.origin_id)
        w.f64s(result.point.u)
        w.f64s(result.point.theta)
        w.f64(result.point.logl)
        w.u32(result.n_accepted)
        w.u32(result.n_proposed)
        w.i64(result.chain_start_id)
    return bytes(w.buf)


def _decode_memo(payload: bytes) -> MemoTable:
    r = _Reader(payload, "memo section")
    dim = r.u32()
    memo = MemoTable()
    memo.n_hits = r.u64()
    memo.n_misses = r.u64()
    count = r.u64()
    for _ in range(count):
        key_bits = r.i64()
        origin_id = r.i64()
        u = r.f64s(dim)
        theta = r.f64s(dim)
        logl = r.f64()
        n_accepted = r.u32()
        n_proposed = r.u32()
        chain_start = r.i64()
        memo.entries[key_bits] = WalkResult(
            point=Point(u=u, theta=theta, logl=logl, origin_id=origin_id),
            n_accepted=n_accepted,
            n_proposed=n_proposed,
            chain_start_id=chain_start,
        )
    return memo


def _encode_sampler(sampler: SamplerState) -> bytes:
    w = _Writer()
    w.f64(sampler.scale)
    w.f64(sampler.target_accept)
    w.f64(sampler.gamma0)
    w.f64(sampler.kappa)
    w.u64(sampler.call_index)
    w.u32(len(sampler.accept_history))
    for scale, frac in sampler.accept_history:
        w.f64(scale)
        w.f64(frac)
    return bytes(w.buf)


def _decode_sampler(payload: bytes) -> SamplerState:
    r = _Reader(payload, "sampler section")
    scale = r.f64()
    target = r.f64()
    gamma0 = r.f64()
    kappa = r.f64()
    call_index = r.u64()
    history = [(r.f64(), r.f64()) for _ in range(r.u32())]
    return SamplerState(
        scale=scale,
        call_index=call_index,
        target_accept=target,
        gamma0=gamma0,
        kappa=kappa,
        accept_history=history,
    )


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    sections = [
        ("config", _encode_config(ckpt)),
        ("reports", _encode_reports(ckpt.reports)),
        ("memo", _encode_memo(ckpt.memo, ckpt.config.problem.dim)),
        ("sampler", _encode_sampler(ckpt.sampler)),
    ]
    w = _Writer()
    w.buf += MAGIC
    w.string(ckpt.format_version)
    w.u32(len(sections))
    for name, payload in sections:
        w.string(name)
        w.u64(len(payload))
        w.buf += payload
        w.u32(crc32c(payload))
    return bytes(w.buf)


def deserialize_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data, "header")
    if r._take(4) != MAGIC:
        raise CheckpointError("not a snowball checkpoint (bad magic bytes)")
    version = r.string()
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r}; "
            f"this build reads {FORMAT_VERSION!r}"
        )
    sections: dict[str, bytes] = {}
    for _ in range(r.u32()):
        name = r.string()
        r.context = f"{name} section"
        payload = r._take(r.u64())
        stored_crc = r.u32()
        if crc32c(payload) != stored_crc:
            raise CheckpointError(f"checksum failure in {name} section")
        sections[name] = payload
    for required in ("config", "reports", "memo", "sampler"):
        if required not in sections:
            raise CheckpointError(f"checkpoint is missing the {required} section")

    config, completed, master_seed = _decode_config(sections["config"])
    reports = _decode_reports(sections["reports"])
    if len(reports) != completed:
        raise CheckpointError(
            f"inconsistent checkpoint: {completed} completed iterations "
            f"but {len(reports)} stored reports"
        )
    memo = _decode_memo(sections["memo"])
    sampler = _decode_sampler(sections["sampler"])
    return Checkpoint(
        config=config,
        completed_outer_iterations=completed,
        reports=reports,
        memo=memo,
        sampler=sampler,
        master_seed=master_seed,
        format_version=version,
    )


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    """Atomically write a checkpoint: serialize, write to a temp file in
    the target directory, fsync, rename.  A failure never leaves a partial
    file at the target path and the in-memory state is untouched."""
    path = Path(path)
    data = serialize_checkpoint(ckpt)
    try:
        fd, tmp_name = tempfile.mkstemp(
            prefix=path.name + ".", suffix=".tmp", dir=path.parent
        )
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint to {path}: {exc}") from exc


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """Read and validate a checkpoint file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return deserialize_checkpoint(data)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
