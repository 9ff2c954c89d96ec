"""Demonstration datasets: domain types, the ``.vinn`` binary format, and
normalization/subsampling utilities.

All numeric payloads are held as float32 so that save/load is bit-exact.
"""
from __future__ import annotations

import enum
import io
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

MAGIC = b"VINN"
VERSION = 1

_HEADER = struct.Struct("<4sHII")  # magic, version, obs_dim, demo_count
_U32 = struct.Struct("<I")


class GripperState(enum.IntEnum):
    OPEN = 0
    ALMOST_OPEN = 1
    ALMOST_CLOSED = 2
    CLOSED = 3


@dataclass(frozen=True)
class Action:
    translation: np.ndarray
    gripper: GripperState = GripperState.OPEN

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite translation {t}")
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "gripper", GripperState(int(self.gripper)))

    def __eq__(self, other):
        if not isinstance(other, Action):
            return NotImplemented
        return self.gripper == other.gripper and np.array_equal(self.translation, other.translation)

    def __hash__(self):
        return hash((self.translation.tobytes(), int(self.gripper)))


@dataclass(frozen=True)
class Frame:
    observation: np.ndarray
    action: Action
    timestep: int
    demo_id: int


# --- errors -----------------------------------------------------------------

class DemoFormatError(ValueError):
    """Malformed ``.vinn`` payload; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(DemoFormatError):
    pass


class UnsupportedVersionError(DemoFormatError):
    pass


class DimensionMismatchError(DemoFormatError):
    pass


class TruncatedFileError(DemoFormatError):
    pass


class ZeroActionError(ValueError):
    def __init__(self, frames: Sequence[tuple[int, int]]):
        self.frames = list(frames)
        listing = ", ".join(f"demo {d} t={t}" for d, t in self.frames[:20])
        more = "" if len(self.frames) <= 20 else f" (+{len(self.frames) - 20} more)"
        super().__init__(f"near-zero translation in {len(self.frames)} frame(s): {listing}{more}")


# --- containers -------------------------------------------------------------

def _frozen(a: np.ndarray, dtype, shape=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    if shape is not None:
        out = out.reshape(shape)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Demonstration:
    """One expert trajectory stored column-wise.

    Timesteps are implicit and contiguous (0, 1, 2, ...).
    """

    observations: np.ndarray  # (T, obs_dim) float32
    translations: np.ndarray  # (T, 3) float32
    grippers: np.ndarray  # (T,) uint8 codes 0..3

    def __post_init__(self):
        obs = np.asarray(self.observations)
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise ValueError(f"observations must be a non-empty (T, n) array, got shape {obs.shape}")
        T = obs.shape[0]
        trans = np.asarray(self.translations)
        grip = np.asarray(self.grippers)
        if trans.shape != (T, 3):
            raise ValueError(f"translations must have shape ({T}, 3), got {trans.shape}")
        if grip.shape != (T,):
            raise ValueError(f"grippers must have shape ({T},), got {grip.shape}")
        if grip.size and (grip.min() < 0 or grip.max() > 3):
            raise ValueError("gripper codes must lie in 0..3")
        object.__setattr__(self, "observations", _frozen(obs, np.float32))
        object.__setattr__(self, "translations", _frozen(trans, np.float32))
        object.__setattr__(self, "grippers", _frozen(grip, np.uint8))
        if not (np.all(np.isfinite(self.observations)) and np.all(np.isfinite(self.translations))):
            raise ValueError("demonstration contains non-finite values")

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    def action(self, t: int) -> Action:
        return Action(self.translations[t], GripperState(int(self.grippers[t])))

    def __eq__(self, other):
        if not isinstance(other, Demonstration):
            return NotImplemented
        return (
            self.observations.shape == other.observations.shape
            and self.observations.tobytes() == other.observations.tobytes()
            and self.translations.tobytes() == other.translations.tobytes()
            and self.grippers.tobytes() == other.grippers.tobytes()
        )

    def __hash__(self):
        return hash((self.observations.tobytes(), self.translations.tobytes(), self.grippers.tobytes()))

    @classmethod
    def from_frames(cls, observations, actions: Sequence[Action]) -> "Demonstration":
        return cls(
            np.asarray(observations),
            np.array([a.translation for a in actions]).reshape(-1, 3),
            np.array([int(a.gripper) for a in actions], dtype=np.uint8),
        )


@dataclass(frozen=True, eq=False)
class DemoSet:
    demos: tuple[Demonstration, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        demos = tuple(self.demos)
        if not demos:
            raise ValueError("a DemoSet needs at least one demonstration")
        dims = {d.obs_dim for d in demos}
        if len(dims) != 1:
            raise ValueError(f"inconsistent observation dimensions across demos: {sorted(dims)}")
        object.__setattr__(self, "demos", demos)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def obs_dim(self) -> int:
        return self.demos[0].obs_dim

    @property
    def n_frames(self) -> int:
        return sum(len(d) for d in self.demos)

    def __len__(self) -> int:
        return len(self.demos)

    def frames(self) -> Iterator[Frame]:
        for demo_id, demo in enumerate(self.demos):
            for t in range(len(demo)):
                yield Frame(demo.observations[t], demo.action(t), t, demo_id)

    def stacked(self):
        """Column arrays over all frames in dataset order:
        (observations, translations, grippers, demo_ids, timesteps)."""
        obs = np.concatenate([d.observations for d in self.demos])
        trans = np.concatenate([d.translations for d in self.demos])
        grip = np.concatenate([d.grippers for d in self.demos])
        ids = np.concatenate([np.full(len(d), i, dtype=np.uint32) for i, d in enumerate(self.demos)])
        ts = np.concatenate([np.arange(len(d), dtype=np.uint32) for d in self.demos])
        return obs, trans, grip, ids, ts

    def __eq__(self, other):
        if not isinstance(other, DemoSet):
            return NotImplemented
        return self.demos == other.demos and self.metadata == other.metadata

    __hash__ = None


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    rows: np.ndarray  # (N, d) float32
    translations: np.ndarray  # (N, 3) float32
    grippers: np.ndarray  # (N,) float32 codes
    demo_ids: np.ndarray  # (N,) uint32
    timesteps: np.ndarray  # (N,) uint32

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2 or rows.shape[1] == 0:
            raise ValueError(f"embedding rows must be (N, d) with d > 0, got {rows.shape}")
        N = rows.shape[0]
        object.__setattr__(self, "rows", _frozen(rows, np.float32))
        object.__setattr__(self, "translations", _frozen(self.translations, np.float32, (N, 3)))
        object.__setattr__(self, "grippers", _frozen(self.grippers, np.float32, (N,)))
        object.__setattr__(self, "demo_ids", _frozen(self.demo_ids, np.uint32, (N,)))
        object.__setattr__(self, "timesteps", _frozen(self.timesteps, np.uint32, (N,)))
        bad = np.flatnonzero(~np.all(np.isfinite(self.rows), axis=1))
        if bad.size:
            raise ValueError(f"non-finite embedding in row {int(bad[0])}")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(_columns(self), _columns(other))
        )

    __hash__ = None


def _columns(m: EmbeddingMatrix):
    return (m.rows, m.translations, m.grippers, m.demo_ids, m.timesteps)


# --- binary format ----------------------------------------------------------

def _frame_struct(obs_dim: int) -> np.dtype:
    # observation, translation, gripper, then padding to 4-byte alignment
    return np.dtype([
        ("obs", "<f4", (obs_dim,)),
        ("trans", "<f4", (3,)),
        ("grip", "u1"),
        ("pad", "u1", (3,)),
    ])


def dumps_demoset(ds: DemoSet) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, ds.obs_dim, len(ds.demos)))
    dt = _frame_struct(ds.obs_dim)
    for demo in ds.demos:
        rec = np.zeros(len(demo), dtype=dt)
        rec["obs"] = demo.observations
        rec["trans"] = demo.translations
        rec["grip"] = demo.grippers
        buf.write(_U32.pack(len(demo)))
        buf.write(rec.tobytes())
    buf.write(_U32.pack(len(ds.metadata)))
    for key, value in ds.metadata.items():
        for s in (str(key), str(value)):
            raw = s.encode("utf-8")
            buf.write(_U32.pack(len(raw)))
            buf.write(raw)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"truncated while reading {what}: need {n} bytes, {len(self.data) - self.pos} left",
                self.pos,
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def loads_demoset(data: bytes) -> DemoSet:
    r = _Reader(data)
    head = r.take(4, "magic")
    if bytes(head) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(head)!r}, expected {MAGIC!r}", 0)
    (version,) = struct.unpack("<H", r.take(2, "version"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}", 4)
    dim_offset = r.pos
    obs_dim = r.u32("obs_dim")
    if obs_dim == 0:
        raise DimensionMismatchError("obs_dim must be positive", dim_offset)
    count_offset = r.pos
    n_demos = r.u32("demo_count")
    if n_demos == 0:
        raise DemoFormatError("file declares zero demonstrations", count_offset)
    dt = _frame_struct(obs_dim)
    demos = []
    for i in range(n_demos):
        start = r.pos
        n_frames = r.u32(f"frame_count of demo {i}")
        if n_frames == 0:
            raise DemoFormatError(f"demo {i} declares zero frames", start)
        body_offset = r.pos
        body = r.take(n_frames * dt.itemsize, f"frames of demo {i}")
        rec = np.frombuffer(body, dtype=dt)
        if rec["grip"].max() > 3:
            bad = int(np.argmax(rec["grip"] > 3))
            raise DemoFormatError(
                f"invalid gripper code in demo {i} frame {bad}",
                body_offset + bad * dt.itemsize + 4 * (obs_dim + 3),
            )
        try:
            demos.append(Demonstration(rec["obs"], rec["trans"], rec["grip"]))
        except ValueError as exc:
            raise DemoFormatError(f"demo {i}: {exc}", body_offset) from None
    n_meta = r.u32("metadata count")
    meta = {}
    for j in range(n_meta):
        key = bytes(r.take(r.u32(f"metadata key length {j}"), f"metadata key {j}")).decode("utf-8")
        meta[key] = bytes(r.take(r.u32(f"metadata value length {j}"), f"metadata value {j}")).decode("utf-8")
    if r.pos != len(r.data):
        raise DimensionMismatchError(
            f"{len(r.data) - r.pos} trailing bytes; payload inconsistent with obs_dim={obs_dim}", r.pos
        )
    return DemoSet(tuple(demos), meta)


def save_demoset(ds: DemoSet, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(dumps_demoset(ds))


def load_demoset(path: str | os.PathLike) -> DemoSet:
    with open(path, "rb") as f:
        return loads_demoset(f.read())


# --- transforms -------------------------------------------------------------

def _unit_rows(trans: np.ndarray) -> np.ndarray:
    t = trans.astype(np.float64)
    norms = np.linalg.norm(t, axis=1)
    out = trans.copy()
    # rows already unit within float32 precision are left untouched so the op is idempotent
    todo = np.abs(norms - 1.0) > 1e-6
    out[todo] = (t[todo] / norms[todo, None]).astype(np.float32)
    return out


def normalize_actions(ds: DemoSet, eps: float = 1e-8) -> DemoSet:
    """Scale every translation to unit length. Gripper codes are untouched."""
    bad = []
    for i, demo in enumerate(ds.demos):
        norms = np.linalg.norm(demo.translations.astype(np.float64), axis=1)
        bad.extend((i, int(t)) for t in np.flatnonzero(norms <= eps))
    if bad:
        raise ZeroActionError(bad)
    demos = tuple(
        Demonstration(d.observations, _unit_rows(d.translations), d.grippers) for d in ds.demos
    )
    return DemoSet(demos, ds.metadata)


def subsample_demos(ds: DemoSet, n: int, seed: int) -> DemoSet:
    """Pick ``n`` whole demonstrations uniformly without replacement.

    The chosen demos keep their original relative order.
    """
    if not 1 <= n <= len(ds.demos):
        raise ValueError(f"n must be in [1, {len(ds.demos)}], got {n}")
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(ds.demos), size=n, replace=False))
    return DemoSet(tuple(ds.demos[i] for i in picked), ds.metadata)


def _random_walk(n_demos: int, seed: int, obs_dim: int = 8, length: int = 20) -> DemoSet:
    rng = np.random.default_rng(seed)
    demos = []
    for _ in range(n_demos):
        steps = rng.normal(size=(length, 3))
        steps /= np.linalg.norm(steps, axis=1, keepdims=True)
        pos = np.cumsum(steps, axis=0) - steps
        obs = np.concatenate([pos, rng.normal(size=(length, obs_dim - 3))], axis=1)
        grip = rng.integers(0, 4, size=length)
        demos.append(Demonstration(obs, steps, grip))
    return DemoSet(tuple(demos), {"generator": "random-walk", "seed": str(seed)})


def synth_demoset(generator: str, n_demos: int, seed: int, **kwargs) -> DemoSet:
    """Generate a normalized synthetic DemoSet (``"expert"`` or ``"random-walk"``)."""
    if n_demos < 1:
        raise ValueError(f"n_demos must be >= 1, got {n_demos}")
    if generator == "expert":
        from .sim import collect_expert_demos

        ds = collect_expert_demos(n_demos, seed, **kwargs)
    elif generator == "random-walk":
        ds = _random_walk(n_demos, seed, **kwargs)
    else:
        raise KeyError(f"unknown generator {generator!r}; known: expert, random-walk")
    return normalize_actions(ds)
