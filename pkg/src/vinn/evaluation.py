"""Offline metrics: translation MSE tables, k sweeps, dataset-size sweeps and
query latency."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence, TextIO

import numpy as np

from . import nn
from .data import DemoSet, subsample_demos
from .encoder import AugmentConfig, Encoder, EncoderSpec, embed_demoset, make_encoder, train_encoder
from .policy import (
    BcRepPolicy,
    NeighborIndex,
    OpenLoopPolicy,
    Policy,
    PolicyConfig,
    RandomPolicy,
    VinnPolicy,
    bc_rep_fit,
    build_index,
    lwr_action,
    nearest,
    open_loop_fit,
)

REPORT_UNIT = 0.1  # tables print MSE in units of 1e-1


def mse(pred, truth) -> float:
    """Mean over all scalar components: sum ||p - t||^2 / (3N)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim == 1:
        p = p.reshape(-1, 3)
    if t.ndim == 1:
        t = t.reshape(-1, 3)
    if p.shape != t.shape:
        raise ValueError(f"prediction/truth length mismatch: {p.shape} vs {t.shape}")
    if p.shape[0] < 1:
        raise ValueError("mse needs at least one pair")
    return float(np.sum((p - t) ** 2) / p.size)


@dataclass(frozen=True)
class MseReport:
    policy: str
    mse: float
    n_frames: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.mse >= 0:
            raise ValueError(f"MSE must be non-negative, got {self.mse}")

    @property
    def scaled(self) -> float:
        """MSE in report units (x 1e-1)."""
        return self.mse / REPORT_UNIT


@dataclass(frozen=True)
class SweepPoint:
    x: int
    mse: float
    std: float


@dataclass(frozen=True)
class SweepCurve:
    name: str
    points: tuple[SweepPoint, ...]
    seeds: tuple[int, ...]

    def __post_init__(self):
        xs = [p.x for p in self.points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError(f"sweep x values must be strictly increasing, got {xs}")
        if any(not p.std >= 0 for p in self.points):
            raise ValueError("stddev must be non-negative")

    @property
    def xs(self) -> list[int]:
        return [p.x for p in self.points]

    @property
    def mses(self) -> list[float]:
        return [p.mse for p in self.points]

    def at(self, x: int) -> SweepPoint:
        for p in self.points:
            if p.x == x:
                return p
        raise KeyError(x)


@dataclass(frozen=True)
class Cell:
    """One evaluated (policy, x, seed) combination."""

    policy: str
    x: int
    seed: int
    mse: float


# --- evaluation -------------------------------------------------------------

def _vinn_translations(index: NeighborIndex, encoder: Encoder, obs: np.ndarray, k: int) -> np.ndarray:
    emb = encoder.encode_batch(obs)
    return np.array([lwr_action(nearest(index, e, k))[0] for e in emb])


def predict_translations(policy: Policy, test: DemoSet, seed: int = 0) -> np.ndarray:
    """Framewise translations for every test frame, in ``stacked()`` order.

    Nearest-neighbor predictions are the raw weighted averages; open-loop
    policies are queried by timestep.
    """
    obs, _, _, _, ts = test.stacked()
    if isinstance(policy, VinnPolicy):
        return _vinn_translations(policy.index, policy.encoder, obs, policy.cfg.k)
    if isinstance(policy, BcRepPolicy):
        emb = policy.encoder.encode_batch(obs).astype(np.float64)
        return nn.forward(policy.head.translation, emb)
    if isinstance(policy, OpenLoopPolicy):
        t = np.clip(ts.astype(np.int64), 0, len(policy.mean_translations) - 1)
        return policy.mean_translations[t]
    policy.reset(seed)
    return np.array([policy.act(o, int(t)).translation for o, t in zip(obs, ts)])


def eval_policy(policy: Policy, test: DemoSet, seed: int = 0, config: dict | None = None) -> MseReport:
    truth = test.stacked()[1]
    pred = predict_translations(policy, test, seed)
    cfg = dict(config or {})
    if isinstance(policy, VinnPolicy):
        cfg.setdefault("k", policy.cfg.k)
    return MseReport(policy.name, mse(pred, truth), len(truth), cfg)


def sweep_k(index: NeighborIndex, encoder: Encoder, test: DemoSet, ks: Sequence[int],
            seeds: Sequence[int] = (0,)) -> SweepCurve:
    """MSE against k. VINN is deterministic, so each seed reproduces the same
    cell and the reported stddev is 0; seeds are kept for the record."""
    ks = sorted(int(k) for k in ks)
    if ks and ks[-1] > len(index):
        raise ValueError(f"k={ks[-1]} exceeds index size {len(index)}")
    obs, truth = test.stacked()[:2]
    emb = encoder.encode_batch(obs)
    kmax = ks[-1]
    nbrs = [nearest(index, e, kmax) for e in emb]
    points = []
    for k in ks:
        pred = np.array([lwr_action(_head(n, k))[0] for n in nbrs])
        points.append(SweepPoint(k, mse(pred, truth), 0.0))
    return SweepCurve("vinn", tuple(points), tuple(int(s) for s in seeds))


def _head(nbrs, k):
    # top-k of a sorted top-kmax list is the top-k list
    return type(nbrs)(nbrs.distances[:k], nbrs.rows[:k], nbrs.actions[:k])


@dataclass(frozen=True)
class SweepSettings:
    """How each dataset-size cell (re)trains its models."""

    encoder: EncoderSpec
    augment: AugmentConfig = AugmentConfig()
    byol_epochs: int = 100
    byol_lr: float = 3e-4
    k: int = 10
    bc_epochs: int = 8000
    bc_lr: float = 1e-3
    bc_hidden: tuple[int, ...] = (64,)


POLICIES = ("vinn", "bc_rep", "open_loop", "random")


def _fit_encoder(train: DemoSet, settings: SweepSettings, seed: int) -> Encoder:
    spec = replace(settings.encoder, seed=seed)
    if spec.kind in ("byol_mlp", "byol_patch"):
        return train_encoder(train, spec, settings.byol_epochs, settings.augment, settings.byol_lr, seed=seed)
    return make_encoder(spec, train)


def dataset_size_sweep(train: DemoSet, test: DemoSet, sizes: Sequence[int], seeds: Sequence[int],
                       policies: Sequence[str], settings: SweepSettings):
    """Subsample, retrain what each policy needs, evaluate. Returns
    ``(curves by policy, cells)``; curves carry mean and stddev over seeds."""
    sizes = sorted(int(n) for n in sizes)
    unknown = set(policies) - set(POLICIES)
    if unknown:
        raise ValueError(f"unknown policies {sorted(unknown)}; known: {POLICIES}")
    if sizes and sizes[-1] > len(train.demos):
        raise ValueError(f"size {sizes[-1]} exceeds the {len(train.demos)} training demos")
    cells = []
    for n in sizes:
        for seed in seeds:
            sub = subsample_demos(train, n, seed)
            enc = None
            if {"vinn", "bc_rep"} & set(policies):
                enc = _fit_encoder(sub, settings, seed)
                emb = embed_demoset(enc, sub)
            for name in policies:
                if name == "vinn":
                    pol = VinnPolicy(build_index(emb), enc, PolicyConfig(k=min(settings.k, len(emb))))
                elif name == "bc_rep":
                    head = bc_rep_fit(emb, settings.bc_epochs, settings.bc_lr, seed, settings.bc_hidden)
                    pol = BcRepPolicy(head, enc)
                elif name == "open_loop":
                    pol = open_loop_fit(sub)
                else:
                    pol = RandomPolicy(seed)
                cells.append(Cell(name, n, int(seed), eval_policy(pol, test, seed).mse))
    curves = {}
    for name in policies:
        pts = []
        for n in sizes:
            vals = [c.mse for c in cells if c.policy == name and c.x == n]
            pts.append(SweepPoint(n, float(np.mean(vals)), float(np.std(vals))))
        curves[name] = SweepCurve(name, tuple(pts), tuple(int(s) for s in seeds))
    return curves, cells


# --- latency ----------------------------------------------------------------

@dataclass(frozen=True)
class LatencyReport:
    n_index: int
    embed_dim: int
    obs_dim: int
    k: int
    n_queries: int
    encode_time: float  # seconds per call
    query_time: float  # seconds per call (k-NN search + weighted average)


def latency_report(index: NeighborIndex, encoder: Encoder | None, n_queries: int = 1000, seed: int = 0,
                   k: int = 10, warmup: int = 10) -> LatencyReport:
    if n_queries < 100:
        raise ValueError("latency needs at least 100 queries")
    rng = np.random.default_rng(seed)
    k = min(k, len(index))
    rows = index.embeddings[rng.integers(0, len(index), size=n_queries)].astype(np.float64)
    queries = rows + rng.normal(0.0, 0.1, size=rows.shape)
    for q in queries[:warmup]:
        lwr_action(nearest(index, q, k))
    t0 = time.perf_counter()
    for q in queries:
        lwr_action(nearest(index, q, k))
    query_time = (time.perf_counter() - t0) / n_queries
    encode_time = 0.0
    obs_dim = 0
    if encoder is not None:
        obs_dim = encoder.obs_dim
        obs = rng.normal(size=(n_queries, obs_dim))
        for o in obs[:warmup]:
            encoder.encode(o)
        t0 = time.perf_counter()
        for o in obs:
            encoder.encode(o)
        encode_time = (time.perf_counter() - t0) / n_queries
    return LatencyReport(len(index), index.dim, obs_dim, k, n_queries, encode_time, query_time)


# --- tables -----------------------------------------------------------------

def write_cells(cells: Sequence[Cell], fh: TextIO, x_name: str = "x") -> None:
    """Tab-separated rows: policy, x, seed, mse (x 1e-1)."""
    fh.write(f"policy\t{x_name}\tseed\tmse_e-1\n")
    for c in cells:
        fh.write(f"{c.policy}\t{c.x}\t{c.seed}\t{c.mse / REPORT_UNIT:.6f}\n")


def write_summary(curves: dict, fh: TextIO, x_name: str = "x") -> None:
    """Mean +- stddev per policy and x, in units of 1e-1."""
    fh.write(f"policy\t{x_name}\tmean_e-1\tstd_e-1\tn_seeds\n")
    for name, curve in curves.items():
        for p in curve.points:
            fh.write(f"{name}\t{p.x}\t{p.mse / REPORT_UNIT:.6f}\t{p.std / REPORT_UNIT:.6f}\t{len(curve.seeds)}\n")


def write_reports(reports: Sequence[MseReport], fh: TextIO) -> None:
    fh.write("policy\tn_frames\tmse_e-1\n")
    for r in reports:
        fh.write(f"{r.policy}\t{r.n_frames}\t{r.scaled:.6f}\n")
