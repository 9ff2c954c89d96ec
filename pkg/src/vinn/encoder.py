"""Observation encoders: identity, random projection, whitening, and a
BYOL-trained MLP (online/target networks plus predictor head).

Encoder parameters are stored as float32 (the checkpoint precision);
forward passes run in float64 and embeddings come back as float32.
"""
from __future__ import annotations

import copy
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import DemoSet, EmbeddingMatrix

KINDS = ("identity", "random_projection", "whitening", "byol_mlp", "byol_patch")
CKPT_MAGIC = b"VENC"
CKPT_VERSION = 1


@dataclass(frozen=True)
class EncoderSpec:
    kind: str
    obs_dim: int
    embed_dim: int
    hidden_dims: tuple[int, ...] = ()
    seed: int = 0
    groups: tuple[tuple[int, ...], ...] = ()  # byol_patch only: a partition of the obs dims

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; expected one of {KINDS}")
        if self.obs_dim < 1 or self.embed_dim < 1:
            raise ValueError("obs_dim and embed_dim must be >= 1")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind == "byol_mlp" and not self.hidden_dims:
            raise ValueError("byol_mlp needs at least one hidden layer")
        if self.kind == "identity" and self.embed_dim != self.obs_dim:
            raise ValueError("identity encoder requires embed_dim == obs_dim")
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        if self.kind == "byol_patch":
            flat = sorted(i for g in groups for i in g)
            if not groups or any(len(g) == 0 for g in groups) or flat != list(range(self.obs_dim)):
                raise ValueError("byol_patch groups must partition the observation dims")
            if self.embed_dim % len(groups):
                raise ValueError(f"embed_dim {self.embed_dim} is not a multiple of {len(groups)} groups")
        elif groups:
            raise ValueError("groups only apply to byol_patch encoders")


@dataclass(frozen=True)
class AugmentConfig:
    """``dropout_groups`` optionally ties the dropout mask across coordinate
    groups (patch-level dropout); coordinates outside every group, or all of
    them when it is empty, are dropped independently."""

    noise_std: float = 0.05
    dropout_prob: float = 0.1
    scale_jitter: tuple[float, float] = (0.8, 1.2)
    dropout_groups: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "scale_jitter", tuple(float(v) for v in self.scale_jitter))
        object.__setattr__(self, "dropout_groups", tuple(tuple(int(i) for i in g) for g in self.dropout_groups))
        seen = [i for g in self.dropout_groups for i in g]
        if len(seen) != len(set(seen)):
            raise ValueError("dropout groups must be disjoint")
        lo, hi = self.scale_jitter
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if not (0 < lo <= 1 <= hi):
            raise ValueError(f"scale_jitter must satisfy 0 < lo <= 1 <= hi, got {self.scale_jitter}")


class EncoderError(ValueError):
    pass


class RankDeficientError(EncoderError):
    def __init__(self, message, dims):
        super().__init__(message)
        self.dims = list(dims)


class DivergenceError(FloatingPointError):
    pass


# --- encoders ---------------------------------------------------------------

class Encoder:
    kind: str
    obs_dim: int
    embed_dim: int

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.obs_dim:
            raise EncoderError(f"observation has dimension {x.shape[-1]}, encoder expects {self.obs_dim}")
        if not np.all(np.isfinite(x)):
            raise EncoderError("observation contains non-finite values")
        return x

    def encode(self, obs) -> np.ndarray:
        x = self._check(obs)
        if x.ndim != 1:
            raise EncoderError(f"encode takes a single observation vector, got shape {x.shape}")
        return self.encode_batch(x[None])[0]

    def encode_batch(self, obs) -> np.ndarray:
        x = self._check(obs)
        return self._forward(np.atleast_2d(x)).astype(np.float32)

    def _forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def arrays(self) -> list[np.ndarray]:
        return []

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return ()

    @property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        return ()

    def __eq__(self, other):
        if not isinstance(other, Encoder):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return (
            (self.kind, self.obs_dim, self.embed_dim, self.hidden_dims, self.groups)
            == (other.kind, other.obs_dim, other.embed_dim, other.hidden_dims, other.groups)
            and len(a) == len(b)
            and all(x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(a, b))
        )

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, obs_dim={self.obs_dim}, embed_dim={self.embed_dim})"


class IdentityEncoder(Encoder):
    kind = "identity"

    def __init__(self, obs_dim: int):
        self.obs_dim = self.embed_dim = obs_dim

    def _forward(self, x):
        return x


class LinearEncoder(Encoder):
    """``y = W (x - mean)``; backs both random projection and whitening."""

    def __init__(self, kind: str, matrix: np.ndarray, mean: np.ndarray | None = None):
        self.kind = kind
        self.matrix = np.asarray(matrix, dtype=np.float32)
        self.embed_dim, self.obs_dim = self.matrix.shape
        self.mean = np.zeros(self.obs_dim, np.float32) if mean is None else np.asarray(mean, np.float32)

    def _forward(self, x):
        return (x - self.mean.astype(np.float64)) @ self.matrix.astype(np.float64).T

    def arrays(self):
        return [self.mean, self.matrix]


class MLPEncoder(Encoder):
    kind = "byol_mlp"

    def __init__(self, params: nn.MLPParams):
        self.params = params.astype(np.float32)
        dims = self.params.dims
        self.obs_dim, self.embed_dim = dims[0], dims[-1]
        self._p64 = self.params.astype(np.float64)

    @property
    def hidden_dims(self):
        return tuple(self.params.dims[1:-1])

    def _forward(self, x):
        return nn.forward(self._p64, x)

    def arrays(self):
        return self.params.arrays()


class PatchEncoder(Encoder):
    """Per-patch bias-free MLPs with unit-norm outputs, concatenated. The
    locality of a convolutional trunk, in vector form."""

    kind = "byol_patch"

    def __init__(self, params: nn.PatchParams):
        self.params = params.astype(np.float32)
        self.obs_dim, self.embed_dim = params.obs_dim, params.embed_dim
        self._p64 = self.params.astype(np.float64)

    @property
    def hidden_dims(self):
        return tuple(self.params.dims[:-1])

    @property
    def groups(self):
        return self.params.groups

    def _forward(self, x):
        return nn.patch_forward(self._p64, x)

    def arrays(self):
        return self.params.arrays()


def encoder_from_params(params) -> Encoder:
    if isinstance(params, nn.PatchParams):
        return PatchEncoder(params)
    return MLPEncoder(params)


def random_projection(obs_dim: int, embed_dim: int, seed: int) -> LinearEncoder:
    rng = np.random.default_rng(seed)
    return LinearEncoder("random_projection", rng.normal(size=(embed_dim, obs_dim)) / np.sqrt(embed_dim))


def fit_whitening(obs: np.ndarray, embed_dim: int, rel_tol: float = 1e-9) -> LinearEncoder:
    """PCA whitening onto the top ``embed_dim`` principal directions."""
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim != 2:
        raise EncoderError(f"whitening needs a (N, n) observation matrix, got shape {x.shape}")
    n_samples, obs_dim = x.shape
    if embed_dim > obs_dim:
        raise EncoderError(f"cannot whiten {obs_dim} dims into {embed_dim}")
    if n_samples <= embed_dim:
        raise RankDeficientError(
            f"need more than {embed_dim} observations to whiten, got {n_samples}",
            range(max(n_samples - 1, 0), embed_dim),
        )
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False, bias=True).reshape(obs_dim, obs_dim)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:embed_dim]
    evals, evecs = evals[order], evecs[:, order]
    floor = rel_tol * max(evals[0], np.finfo(float).tiny)
    deficient = np.flatnonzero(evals <= floor)
    if deficient.size:
        raise RankDeficientError(
            f"covariance is rank-deficient: {deficient.size} of {embed_dim} requested "
            f"directions have ~zero variance (components {deficient.tolist()})",
            deficient,
        )
    matrix = evecs.T / np.sqrt(evals)[:, None]
    return LinearEncoder("whitening", matrix, mean)


def fit_fixed(kind: str, data, spec: EncoderSpec) -> Encoder:
    """Build a non-trained encoder (``random_projection`` or ``whitening``).

    ``data`` is an (N, n) observation array or a DemoSet.
    """
    if isinstance(data, DemoSet):
        data = data.stacked()[0]
    if kind == "random_projection":
        return random_projection(spec.obs_dim, spec.embed_dim, spec.seed)
    if kind == "whitening":
        return fit_whitening(data, spec.embed_dim)
    if kind == "identity":
        return IdentityEncoder(spec.obs_dim)
    raise ValueError(f"fit_fixed does not handle kind {kind!r}")


# --- augmentation -----------------------------------------------------------

def augment_batch(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Vector analogs of crop / color jitter / blur: coordinate dropout, global
    scale jitter and additive Gaussian noise, drawn independently per row."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    p = cfg.dropout_prob
    keep = rng.random(x.shape) >= p
    if cfg.dropout_groups:
        if max(max(g) for g in cfg.dropout_groups) >= x.shape[1]:
            raise ValueError("dropout group indexes past the observation dimension")
        shared = rng.random((x.shape[0], len(cfg.dropout_groups))) >= p
        for j, g in enumerate(cfg.dropout_groups):
            keep[:, g] = shared[:, j:j + 1]
    lo, hi = cfg.scale_jitter
    scale = rng.uniform(lo, hi, size=(x.shape[0], 1))
    noise = rng.normal(0.0, 1.0, size=x.shape) * cfg.noise_std
    return (x * keep / (1.0 - p)) * scale + noise


def augment(obs, cfg: AugmentConfig, seed: int) -> np.ndarray:
    x = np.asarray(obs, dtype=np.float64)
    return augment_batch(x[None], cfg, np.random.default_rng(seed))[0]


# --- BYOL -------------------------------------------------------------------

@dataclass
class ByolState:
    online: nn.MLPParams | nn.PatchParams
    target: nn.MLPParams | nn.PatchParams
    predictor: nn.MLPParams
    tau: float = 0.99
    step: int = 0
    opt_online: object = field(default=None, repr=False)
    opt_predictor: object = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.tau < 1:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        if [w.shape for w in self.online.arrays()] != [w.shape for w in self.target.arrays()]:
            raise ValueError("target shapes must equal online shapes")


def init_byol_state(spec: EncoderSpec, tau: float = 0.99, lr: float = 3e-4, optimizer: str = "adam",
                    warm_start: np.ndarray | None = None) -> ByolState:
    """Random online network (target = copy) and a one-hidden-layer predictor.

    ``warm_start`` optionally holds observations used to fit a whitening map
    that initializes the first layer (the pretrained-init analog).
    """
    if spec.kind not in ("byol_mlp", "byol_patch"):
        raise ValueError(f"BYOL training needs a byol_mlp or byol_patch spec, got {spec.kind!r}")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "byol_patch":
        if warm_start is not None:
            raise ValueError("warm start is only defined for byol_mlp")
        online = nn.init_patch(spec.groups, [*spec.hidden_dims, spec.embed_dim // len(spec.groups)], rng)
    else:
        online = nn.init_mlp([spec.obs_dim, *spec.hidden_dims, spec.embed_dim], rng)
    if warm_start is not None:
        width = min(spec.hidden_dims[0], spec.obs_dim, len(warm_start) - 1)
        try:
            white = fit_whitening(warm_start, width)
        except RankDeficientError as err:
            # keep only the directions that carry variance
            width = int(min(err.dims))
            if width < 1:
                raise
            white = fit_whitening(warm_start, width)
        w = white.matrix.astype(np.float64)
        online.weights[0][:width] = w
        online.biases[0][:width] = -w @ white.mean.astype(np.float64)
    d = spec.embed_dim
    predictor = nn.init_mlp([d, d, d], rng)
    return ByolState(
        online=online,
        target=online.copy(),
        predictor=predictor,
        tau=tau,
        opt_online=nn.make_optimizer(optimizer, lr),
        opt_predictor=nn.make_optimizer(optimizer, lr),
    )


class ZeroNormError(FloatingPointError):
    pass


def _cos_terms(p: np.ndarray, z: np.ndarray, branch: str):
    """Per-row 2 - 2 cos(p, z) and its gradient w.r.t. p (z is held fixed)."""
    pn = np.linalg.norm(p, axis=1)
    zn = np.linalg.norm(z, axis=1)
    for name, norms in (("prediction", pn), ("target", zn)):
        bad = np.flatnonzero(norms < 1e-12)
        if bad.size:
            raise ZeroNormError(f"zero-norm {name} vector in branch {branch} (rows {bad.tolist()[:10]})")
    cos = np.sum(p * z, axis=1) / (pn * zn)
    loss = 2.0 - 2.0 * cos
    grad = -2.0 * (z / (pn * zn)[:, None] - cos[:, None] * p / (pn ** 2)[:, None])
    return loss, grad


def _loss_and_grads(state: ByolState, v1: np.ndarray, v2: np.ndarray):
    v1 = np.atleast_2d(np.asarray(v1, dtype=np.float64))
    v2 = np.atleast_2d(np.asarray(v2, dtype=np.float64))
    if v1.shape != v2.shape or v1.shape[0] < 1:
        raise ValueError(f"views must have equal non-empty batch shapes, got {v1.shape} and {v2.shape}")
    B = v1.shape[0]
    x = np.concatenate([v1, v2])
    y, acts_o = _online_forward(state.online, x)
    q, acts_p = nn.forward(state.predictor, y, cache=True)
    z = _online_forward(state.target, x)[0]
    # target outputs are constants here (stop-gradient)
    z_swapped = np.concatenate([z[B:], z[:B]])
    l1, g1 = _cos_terms(q[:B], z_swapped[:B], "view1->view2")
    l2, g2 = _cos_terms(q[B:], z_swapped[B:], "view2->view1")
    loss = 0.5 * (l1.mean() + l2.mean())
    gq = np.concatenate([g1, g2]) * (0.5 / B)
    g_pred, gy = nn.backward(state.predictor, acts_p, gq)
    if isinstance(state.online, nn.PatchParams):
        g_online = nn.patch_backward(state.online, acts_o, gy)
    else:
        g_online, _ = nn.backward(state.online, acts_o, gy)
    return float(loss), g_online, g_pred


def _online_forward(params, x):
    if isinstance(params, nn.PatchParams):
        return nn.patch_forward(params, x, cache=True)
    return nn.forward(params, x, cache=True)


def byol_loss(state: ByolState, view1, view2) -> float:
    """Symmetric BYOL loss in [0, 4]: mean of 2 - 2 cos(pred(online(a)), target(b))
    over both view orderings, halved."""
    return _loss_and_grads(state, view1, view2)[0]


def byol_grads(state: ByolState, view1, view2):
    """(loss, online grads, predictor grads). Target parameters get no gradient."""
    return _loss_and_grads(state, view1, view2)


def ema_update(target, online, tau: float):
    """target <- tau * target + (1 - tau) * online, parameter by parameter."""
    return target.with_arrays(tau * t + (1.0 - tau) * o for t, o in zip(target.arrays(), online.arrays()))


def byol_step(state: ByolState, batch, cfg: AugmentConfig, lr: float, seed: int):
    """One optimization step on two augmented views of ``batch``.

    Returns ``(new_state, loss)`` where ``loss`` is evaluated before the update.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] < 1:
        raise ValueError("empty batch")
    rng = np.random.default_rng(seed)
    v1 = augment_batch(batch, cfg, rng)
    v2 = augment_batch(batch, cfg, rng)
    return byol_step_views(state, v1, v2, lr)


def byol_step_views(state: ByolState, v1, v2, lr: float):
    loss, g_online, g_pred = _loss_and_grads(state, v1, v2)
    if not (np.isfinite(loss) and g_online.all_finite() and g_pred.all_finite()):
        raise DivergenceError(f"non-finite loss or gradient at step {state.step}")
    opt_o = copy.deepcopy(state.opt_online) if state.opt_online is not None else nn.SGD(lr)
    opt_p = copy.deepcopy(state.opt_predictor) if state.opt_predictor is not None else nn.SGD(lr)
    opt_o.lr = opt_p.lr = lr
    online = opt_o.update(state.online, g_online)
    predictor = opt_p.update(state.predictor, g_pred)
    if not (online.all_finite() and predictor.all_finite()):
        raise DivergenceError(f"parameters became non-finite at step {state.step}")
    target = ema_update(state.target, online, state.tau)
    new = ByolState(online, target, predictor, state.tau, state.step + 1, opt_o, opt_p)
    return new, loss


def train_byol(ds: DemoSet, spec: EncoderSpec, epochs: int = 100, cfg: AugmentConfig | None = None,
               lr: float = 3e-4, tau: float = 0.99, batch_size: int = 32, seed: int = 0,
               optimizer: str = "adam", warm_start: bool = False):
    """Run BYOL over all frames of ``ds``. Returns ``(state, per-epoch mean losses)``."""
    cfg = cfg or AugmentConfig()
    obs = ds.stacked()[0].astype(np.float64)
    if obs.shape[1] != spec.obs_dim:
        raise EncoderError(f"dataset obs_dim {obs.shape[1]} != encoder obs_dim {spec.obs_dim}")
    state = init_byol_state(spec, tau, lr, optimizer, warm_start=obs if warm_start else None)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(obs))
        losses = []
        for start in range(0, len(obs), batch_size):
            idx = order[start:start + batch_size]
            state, loss = byol_step(state, obs[idx], cfg, lr, int(rng.integers(2**63 - 1)))
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return state, history


def train_encoder(ds: DemoSet, spec: EncoderSpec, epochs: int = 100, cfg: AugmentConfig | None = None,
                  lr: float = 3e-4, tau: float = 0.99, batch_size: int = 32, seed: int = 0,
                  **kwargs) -> Encoder:
    """Train with BYOL and keep the online network (the predictor is discarded)."""
    state, _ = train_byol(ds, spec, epochs, cfg, lr, tau, batch_size, seed, **kwargs)
    return encoder_from_params(state.online)


def make_encoder(spec: EncoderSpec, data=None) -> Encoder:
    if spec.kind == "identity":
        return IdentityEncoder(spec.obs_dim)
    if spec.kind in ("byol_mlp", "byol_patch"):
        return encoder_from_params(init_byol_state(spec).online)
    return fit_fixed(spec.kind, data, spec)


def embed_demoset(encoder: Encoder, ds: DemoSet) -> EmbeddingMatrix:
    obs, trans, grip, ids, ts = ds.stacked()
    if obs.shape[1] != encoder.obs_dim:
        raise EncoderError(f"dataset obs_dim {obs.shape[1]} != encoder obs_dim {encoder.obs_dim}")
    return EmbeddingMatrix(encoder.encode_batch(obs), trans, grip.astype(np.float32), ids, ts)


# --- checkpoint format ------------------------------------------------------
#
# "VENC" | u16 version | u8 kind | u32 obs_dim | u32 embed_dim | u32 n_hidden |
# n_hidden x u32 widths | [byol_patch: u32 n_groups, then per group u32 size +
# size x u32 dims] | f32 LE parameter blobs in layer order (patch nets: per
# group, weights only).

_KIND_CODES = {k: i for i, k in enumerate(KINDS)}


def dumps_encoder(enc: Encoder) -> bytes:
    buf = io.BytesIO()
    hidden = enc.hidden_dims
    buf.write(struct.pack("<4sHBIII", CKPT_MAGIC, CKPT_VERSION, _KIND_CODES[enc.kind],
                          enc.obs_dim, enc.embed_dim, len(hidden)))
    buf.write(struct.pack(f"<{len(hidden)}I", *hidden))
    if enc.kind == "byol_patch":
        buf.write(struct.pack("<I", len(enc.groups)))
        for g in enc.groups:
            buf.write(struct.pack(f"<I{len(g)}I", len(g), *g))
    for a in enc.arrays():
        buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return buf.getvalue()


def loads_encoder(data: bytes) -> Encoder:
    head = struct.Struct("<4sHBIII")
    if len(data) < head.size:
        raise EncoderError(f"checkpoint truncated in header ({len(data)} bytes)")
    magic, version, code, obs_dim, embed_dim, n_hidden = head.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise EncoderError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise EncoderError(f"unsupported checkpoint version {version}")
    if code >= len(KINDS):
        raise EncoderError(f"unknown encoder kind code {code}")
    kind = KINDS[code]
    pos = head.size
    if pos + 4 * n_hidden > len(data):
        raise EncoderError(f"checkpoint truncated at byte {pos}")
    hidden = struct.unpack_from(f"<{n_hidden}I", data, pos)
    pos += 4 * n_hidden

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + 4 * n > len(data):
            raise EncoderError(f"checkpoint truncated at byte {pos}")
        a = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float32).reshape(shape)
        pos += 4 * n
        return a

    def take_u32(n):
        nonlocal pos
        if pos + 4 * n > len(data):
            raise EncoderError(f"checkpoint truncated at byte {pos}")
        out = struct.unpack_from(f"<{n}I", data, pos)
        pos += 4 * n
        return out

    if kind == "identity":
        enc = IdentityEncoder(obs_dim)
    elif kind == "byol_patch":
        (n_groups,) = take_u32(1)
        if n_groups == 0 or embed_dim % n_groups:
            raise EncoderError(f"bad patch group count {n_groups} for embed_dim {embed_dim}")
        groups = []
        for _ in range(n_groups):
            (size,) = take_u32(1)
            if size > obs_dim:
                raise EncoderError(f"patch group of size {size} exceeds obs_dim {obs_dim}")
            groups.append(take_u32(size))
        if sorted(i for g in groups for i in g) != list(range(obs_dim)):
            raise EncoderError("patch groups do not partition the observation dims")
        widths = [*hidden, embed_dim // n_groups]
        weights = []
        for g in groups:
            dims = [len(g), *widths]
            weights.append([take((b, a)) for a, b in zip(dims[:-1], dims[1:])])
        enc = PatchEncoder(nn.PatchParams(tuple(tuple(g) for g in groups), weights))
    elif kind in ("random_projection", "whitening"):
        mean = take((obs_dim,))
        enc = LinearEncoder(kind, take((embed_dim, obs_dim)), mean)
    else:
        dims = [obs_dim, *hidden, embed_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(take((fan_out, fan_in)))
            biases.append(take((fan_out,)))
        enc = MLPEncoder(nn.MLPParams(weights, biases))
    if pos != len(data):
        raise EncoderError(f"{len(data) - pos} trailing bytes in checkpoint")
    return enc


def save_encoder(enc: Encoder, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(dumps_encoder(enc))


def load_encoder(path: str | os.PathLike) -> Encoder:
    with open(path, "rb") as f:
        return loads_encoder(f.read())
