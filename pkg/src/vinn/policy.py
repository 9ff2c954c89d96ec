"""Nearest-neighbor index, softmin-weighted locally weighted regression, and
the baseline policies (random, open loop, behavior cloning on embeddings)."""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import nn
from .data import Action, DemoSet, EmbeddingMatrix, GripperState
from .encoder import DivergenceError, Encoder

INDEX_MAGIC = b"VIDX"
INDEX_VERSION = 1
_BLOCK_ROWS = 1 << 16


class NeighborIndexError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    k: int = 10
    gripper_thresholds: tuple[float, float, float] = (0.5, 1.5, 2.5)
    renormalize_translation: bool = False
    action_scale: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        th = tuple(float(x) for x in self.gripper_thresholds)
        if len(th) != 3 or not (th[0] < th[1] < th[2]):
            raise ValueError(f"gripper thresholds must be 3 strictly ascending values, got {th}")
        object.__setattr__(self, "gripper_thresholds", th)
        object.__setattr__(self, "action_scale", tuple(float(c) for c in self.action_scale))
        _check_scale(self.action_scale)


# --- index ------------------------------------------------------------------

class NeighborIndex:
    """Immutable (embedding, action) store with exact Euclidean k-NN queries."""

    def __init__(self, embeddings, translations, grippers, demo_ids=None, timesteps=None):
        emb = np.array(embeddings, dtype=np.float32, copy=True)
        if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 1:
            raise NeighborIndexError(f"index needs a non-empty (N, d) embedding matrix, got shape {emb.shape}")
        bad = np.flatnonzero(~np.all(np.isfinite(emb), axis=1))
        if bad.size:
            raise NeighborIndexError(f"non-finite embedding in row {int(bad[0])}")
        N = emb.shape[0]
        self.embeddings = emb
        self.translations = np.array(translations, dtype=np.float32).reshape(N, 3)
        self.grippers = np.array(grippers, dtype=np.float32).reshape(N)
        self.demo_ids = np.zeros(N, np.uint32) if demo_ids is None else np.array(demo_ids, np.uint32).reshape(N)
        self.timesteps = np.zeros(N, np.uint32) if timesteps is None else np.array(timesteps, np.uint32).reshape(N)
        for a in (self.embeddings, self.translations, self.grippers, self.demo_ids, self.timesteps):
            a.flags.writeable = False
        self._e64 = emb.astype(np.float64)
        self._actions64 = np.concatenate(
            [self.translations.astype(np.float64), self.grippers.astype(np.float64)[:, None]], axis=1
        )

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def distances(self, e) -> np.ndarray:
        """Exact distances from ``e`` to every row, computed blockwise."""
        q = np.asarray(e, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise NeighborIndexError(f"query has dimension {q.shape[0]}, index has {self.dim}")
        if not np.all(np.isfinite(q)):
            raise NeighborIndexError("query contains non-finite values")
        N = len(self)
        if N <= _BLOCK_ROWS:
            diff = self._e64 - q
            return np.sqrt(np.einsum("ij,ij->i", diff, diff))
        out = np.empty(N)
        for s in range(0, N, _BLOCK_ROWS):
            diff = self._e64[s:s + _BLOCK_ROWS] - q
            out[s:s + _BLOCK_ROWS] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return out

    def __eq__(self, other):
        if not isinstance(other, NeighborIndex):
            return NotImplemented
        cols = ("embeddings", "translations", "grippers", "demo_ids", "timesteps")
        return all(
            getattr(self, c).shape == getattr(other, c).shape
            and getattr(self, c).tobytes() == getattr(other, c).tobytes()
            for c in cols
        )

    __hash__ = None


def build_index(emb: EmbeddingMatrix) -> NeighborIndex:
    if len(emb) < 1:
        raise NeighborIndexError("cannot build an index from an empty embedding matrix")
    return NeighborIndex(emb.rows, emb.translations, emb.grippers, emb.demo_ids, emb.timesteps)


@dataclass(frozen=True)
class Neighbor:
    distance: float
    translation: np.ndarray
    gripper: float
    row: int


@dataclass(frozen=True)
class NeighborSet:
    distances: np.ndarray  # (k,) ascending
    rows: np.ndarray  # (k,) int64
    actions: np.ndarray  # (k, 4): translation xyz + gripper code

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[Neighbor]:
        for d, r, a in zip(self.distances, self.rows, self.actions):
            yield Neighbor(float(d), a[:3], float(a[3]), int(r))


def _top_k(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest distances, ascending, ties by row index."""
    if k < len(dist):
        kth = np.partition(dist, k - 1)[k - 1]
        cand = np.flatnonzero(dist <= kth)
    else:
        cand = np.arange(len(dist))
    order = np.lexsort((cand, dist[cand]))
    return cand[order[:k]]


def nearest(index: NeighborIndex, e, k: int) -> NeighborSet:
    if not 1 <= k <= len(index):
        raise NeighborIndexError(f"k must be in [1, {len(index)}], got {k}")
    dist = index.distances(e)
    rows = _top_k(dist, k)
    return NeighborSet(dist[rows], rows, index._actions64[rows])


def softmin_weights(distances) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64)
    w = np.exp(-(d - d.min()))
    return w / w.sum()


def lwr_action(nbrs: NeighborSet) -> tuple[np.ndarray, float]:
    """Euclidean-kernel weighted average of the neighbors' actions:
    sum_i exp(-d_i) a_i / sum_i exp(-d_i), for translation and gripper code alike."""
    if len(nbrs) < 1:
        raise ValueError("need at least one neighbor")
    w = softmin_weights(nbrs.distances)
    out = w @ nbrs.actions
    return out[:3], float(out[3])


def gripper_from_float(g: float, thresholds=(0.5, 1.5, 2.5)) -> GripperState:
    return GripperState(int(np.searchsorted(np.asarray(thresholds), g, side="right")))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if not n > 1e-12:
        raise ValueError(f"cannot renormalize near-zero translation {v}")
    return v / n


@dataclass(frozen=True)
class Prediction:
    action: Action
    gripper_float: float
    neighbors: NeighborSet


def predict_detailed(index: NeighborIndex, encoder: Encoder, obs, cfg: PolicyConfig) -> Prediction:
    if cfg.k > len(index):
        raise NeighborIndexError(f"k={cfg.k} exceeds index size {len(index)}")
    e = encoder.encode(obs)
    nbrs = nearest(index, e, cfg.k)
    trans, g = lwr_action(nbrs)
    if cfg.renormalize_translation:
        trans = _unit(trans)
    return Prediction(Action(trans, gripper_from_float(g, cfg.gripper_thresholds)), g, nbrs)


def predict(index: NeighborIndex, encoder: Encoder, obs, cfg: PolicyConfig) -> Action:
    return predict_detailed(index, encoder, obs, cfg).action


def _check_scale(c):
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if c.shape != (3,) or not np.all((c > 0) & (c <= 1)):
        raise ValueError(f"action scale components must lie in (0, 1], got {c.tolist()}")
    return c


def scale_action(a: Action, c) -> Action:
    return Action(a.translation * _check_scale(c), a.gripper)


# --- baselines --------------------------------------------------------------

def random_translations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from [-1, 1]^3, normalized; zero draws are resampled."""
    out = rng.uniform(-1.0, 1.0, size=(n, 3))
    norms = np.linalg.norm(out, axis=1)
    while np.any(norms == 0):
        z = norms == 0
        out[z] = rng.uniform(-1.0, 1.0, size=(int(z.sum()), 3))
        norms = np.linalg.norm(out, axis=1)
    return out / norms[:, None]


def random_policy(seed: int) -> Iterator[Action]:
    rng = np.random.default_rng(seed)
    while True:
        t = random_translations(1, rng)[0]
        yield Action(t, GripperState(int(rng.integers(0, 4))))


class Policy:
    """Closed-loop interface: ``act(obs, t, state)`` -> Action. ``state`` is the
    simulator state, used only by privileged (scripted) policies."""

    name = "policy"
    uses_embedding = False

    def reset(self, seed: int | None = None) -> None:
        pass

    def act(self, obs, t: int, state=None) -> Action:
        raise NotImplementedError


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, seed: int = 0):
        self.reset(seed)

    def reset(self, seed=None):
        self._stream = random_policy(0 if seed is None else seed)

    def act(self, obs, t, state=None):
        return next(self._stream)


class VinnPolicy(Policy):
    name = "vinn"
    uses_embedding = True

    def __init__(self, index: NeighborIndex, encoder: Encoder, cfg: PolicyConfig = PolicyConfig()):
        if encoder.embed_dim != index.dim:
            raise ValueError(f"encoder embeds into {encoder.embed_dim} dims, index has {index.dim}")
        self.index, self.encoder, self.cfg = index, encoder, cfg

    def act(self, obs, t, state=None):
        return predict(self.index, self.encoder, obs, self.cfg)


class OpenLoopPolicy(Policy):
    """Per-timestep mean of demonstrated actions; clamps to the last known step."""

    name = "open_loop"

    def __init__(self, mean_translations: np.ndarray, mean_grippers: np.ndarray,
                 thresholds=(0.5, 1.5, 2.5), renormalize: bool = False):
        self.mean_translations = np.asarray(mean_translations, dtype=np.float64)
        self.mean_grippers = np.asarray(mean_grippers, dtype=np.float64)
        self.thresholds = thresholds
        self.renormalize = renormalize

    def __call__(self, t: int) -> Action:
        t = min(max(int(t), 0), len(self.mean_translations) - 1)
        trans = self.mean_translations[t]
        if self.renormalize:
            trans = _unit(trans)
        return Action(trans, gripper_from_float(self.mean_grippers[t], self.thresholds))

    def act(self, obs, t, state=None):
        return self(t)


def open_loop_fit(train: DemoSet, thresholds=(0.5, 1.5, 2.5), renormalize: bool = False) -> OpenLoopPolicy:
    T = max(len(d) for d in train.demos)
    sums = np.zeros((T, 3))
    gsum = np.zeros(T)
    counts = np.zeros(T)
    for d in train.demos:
        n = len(d)
        sums[:n] += d.translations
        gsum[:n] += d.grippers
        counts[:n] += 1
    return OpenLoopPolicy(sums / counts[:, None], gsum / counts, thresholds, renormalize)


@dataclass
class BcHead:
    translation: nn.MLPParams  # embed_dim -> hidden... -> 3
    gripper: nn.MLPParams  # single linear layer embed_dim -> 4
    losses: list = field(default_factory=list, repr=False, compare=False)

    @property
    def embed_dim(self) -> int:
        return self.translation.dims[0]


def init_bc_head(embed_dim: int, hidden_dims=(64,), seed: int = 0) -> BcHead:
    rng = np.random.default_rng(seed)
    trans = nn.init_mlp([embed_dim, *hidden_dims, 3], rng)
    grip = nn.init_mlp([embed_dim, 4], rng)
    return BcHead(trans, grip)


def bc_loss_and_grads(head: BcHead, emb, translations, grippers):
    """MSE on translations (mean over components) plus cross-entropy on gripper classes."""
    x = np.asarray(emb, dtype=np.float64)
    y = np.asarray(translations, dtype=np.float64)
    labels = np.asarray(grippers).astype(np.int64)
    B = x.shape[0]
    out, acts_t = nn.forward(head.translation, x, cache=True)
    diff = out - y
    mse = float(np.mean(diff ** 2))
    logits, acts_g = nn.forward(head.gripper, x, cache=True)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = float(-logp[np.arange(B), labels].mean())
    g_out = 2.0 * diff / diff.size
    g_logits = np.exp(logp)
    g_logits[np.arange(B), labels] -= 1.0
    g_logits /= B
    g_t, _ = nn.backward(head.translation, acts_t, g_out)
    g_g, _ = nn.backward(head.gripper, acts_g, g_logits)
    return mse + ce, mse, g_t, g_g


def bc_rep_fit(emb: EmbeddingMatrix, epochs: int = 8000, lr: float = 1e-3, seed: int = 0,
               hidden_dims=(64,), batch_size: int | None = None) -> BcHead:
    """Train a BC head on frozen embeddings with Adam. Full-batch by default."""
    if len(emb) < 1:
        raise ValueError("need at least one training pair")
    head = init_bc_head(emb.dim, hidden_dims, seed)
    x = emb.rows.astype(np.float64)
    y = emb.translations.astype(np.float64)
    g = np.rint(emb.grippers).astype(np.int64)
    opt_t, opt_g = nn.Adam(lr), nn.Adam(lr)
    rng = np.random.default_rng(seed)
    bs = batch_size or len(x)
    trans, grip = head.translation, head.gripper
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(len(x)) if bs < len(x) else np.arange(len(x))
        for s in range(0, len(x), bs):
            idx = order[s:s + bs]
            loss, _, g_t, g_g = bc_loss_and_grads(BcHead(trans, grip), x[idx], y[idx], g[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"BC training diverged at epoch {epoch}")
            trans = opt_t.update(trans, g_t)
            grip = opt_g.update(grip, g_g)
        losses.append(loss)
    return BcHead(trans, grip, losses)


def bc_rep_predict(head: BcHead, e, renormalize: bool = False) -> Action:
    x = np.asarray(e, dtype=np.float64).reshape(-1)
    if x.shape[0] != head.embed_dim:
        raise ValueError(f"embedding has dimension {x.shape[0]}, head expects {head.embed_dim}")
    trans = nn.forward(head.translation, x[None])[0]
    if renormalize:
        trans = _unit(trans)
    logits = nn.forward(head.gripper, x[None])[0]
    return Action(trans, GripperState(int(np.argmax(logits))))


class BcRepPolicy(Policy):
    name = "bc_rep"
    uses_embedding = True

    def __init__(self, head: BcHead, encoder: Encoder, renormalize: bool = False):
        self.head, self.encoder, self.renormalize = head, encoder, renormalize

    def act(self, obs, t, state=None):
        return bc_rep_predict(self.head, self.encoder.encode(obs), self.renormalize)


# --- index file -------------------------------------------------------------
#
# "VIDX" | u16 version | u32 N | u32 d | embeddings N*d f32 | actions N*4 f32
# (translation xyz, gripper code) | provenance N*(u32 demo_id, u32 timestep).  All LE.

_IDX_HEAD = struct.Struct("<4sHII")


def dumps_index(index: NeighborIndex) -> bytes:
    N, d = index.embeddings.shape
    buf = io.BytesIO()
    buf.write(_IDX_HEAD.pack(INDEX_MAGIC, INDEX_VERSION, N, d))
    buf.write(index.embeddings.astype("<f4").tobytes())
    acts = np.concatenate([index.translations, index.grippers[:, None]], axis=1)
    buf.write(acts.astype("<f4").tobytes())
    buf.write(np.stack([index.demo_ids, index.timesteps], axis=1).astype("<u4").tobytes())
    return buf.getvalue()


def _parse_table(data: bytes, magic: bytes, what: str):
    if len(data) < _IDX_HEAD.size:
        raise NeighborIndexError(f"{what} truncated in header")
    m, version, N, d = _IDX_HEAD.unpack_from(data)
    if m != magic:
        raise NeighborIndexError(f"bad {what} magic {m!r}")
    if version != INDEX_VERSION:
        raise NeighborIndexError(f"unsupported {what} version {version}")
    expected = _IDX_HEAD.size + 4 * (N * d + N * 4 + N * 2)
    if len(data) != expected:
        raise NeighborIndexError(f"{what} payload is {len(data)} bytes, expected {expected} for N={N}, d={d}")
    pos = _IDX_HEAD.size
    emb = np.frombuffer(data, "<f4", N * d, pos).reshape(N, d)
    pos += 4 * N * d
    acts = np.frombuffer(data, "<f4", N * 4, pos).reshape(N, 4)
    pos += 16 * N
    prov = np.frombuffer(data, "<u4", N * 2, pos).reshape(N, 2)
    return emb, acts, prov


def loads_index(data: bytes) -> NeighborIndex:
    emb, acts, prov = _parse_table(data, INDEX_MAGIC, "index")
    return NeighborIndex(emb, acts[:, :3], acts[:, 3], prov[:, 0], prov[:, 1])


def save_index(index: NeighborIndex, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(dumps_index(index))


def load_index(path: str | os.PathLike) -> NeighborIndex:
    with open(path, "rb") as f:
        return loads_index(f.read())


# Embedding files share the index layout under their own magic.
EMB_MAGIC = b"VEMB"


def save_embeddings(emb: EmbeddingMatrix, path: str | os.PathLike) -> None:
    raw = dumps_index(build_index(emb))
    with open(path, "wb") as f:
        f.write(EMB_MAGIC + raw[4:])


def load_embeddings(path: str | os.PathLike) -> EmbeddingMatrix:
    with open(path, "rb") as f:
        data = f.read()
    emb, acts, prov = _parse_table(data, EMB_MAGIC, "embedding file")
    return EmbeddingMatrix(emb, acts[:, :3], acts[:, 3], prov[:, 0], prov[:, 1])
