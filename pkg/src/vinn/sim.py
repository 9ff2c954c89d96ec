"""Deterministic 3-D reach, grasp and pull task with a scripted expert.

The effector starts ~0.15 m in front of a cabinet handle, has to close the
gripper within ``grasp_radius`` of it, then pull along the door axis until
the door is 95% open. Observations are vectors:

    [0:5]    handle relative to the effector: unit bearing (3) + log-range code (2)
    [5:9]    one-hot gripper state
    [9:39]   six cabinet landmark patches, coded like the handle
             (two signs, two patches on each of two bins)
    [39:43]  cabinet appearance features (unit norm, constant per cabinet)

Every scene block has a fixed norm, like a patch of pixels: covering it
(zeroing, see ``occlusion_mask``) removes information without turning into
a plausible but wrong position.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import TextIO

import numpy as np

from .data import Action, DemoSet, Demonstration, GripperState
from .encoder import AugmentConfig, EncoderSpec
from .policy import Policy

N_LANDMARKS = 6
OBS_DIM = 5 + 4 + 5 * N_LANDMARKS + 4
N_CABINETS = 3
PULL_AXIS = np.array([-1.0, 0.0, 0.0])
RANGE_MIN, RANGE_MAX = 0.005, 0.5  # log-range band mapped onto a quarter turn
# landmark distance from the handle on the door face: the signs sit closest and
# the second bin farthest, so each covered group costs less precision than the last
LANDMARK_RADII = np.array([0.05, 0.05, 0.12, 0.12, 0.3, 0.3])
DEMO_NOISE = 0.5  # default demonstrator jitter on recorded translations

HANDLE_DIMS = tuple(range(0, 5))
GRIPPER_DIMS = tuple(range(5, 9))
LANDMARK_DIMS = tuple(tuple(range(9 + 5 * j, 14 + 5 * j)) for j in range(N_LANDMARKS))
APPEARANCE_DIMS = tuple(range(OBS_DIM - 4, OBS_DIM))
SCENE_DIMS = HANDLE_DIMS + sum(LANDMARK_DIMS, ()) + APPEARANCE_DIMS
# coordinate groups that move together; used for patch-level augmentation
OBS_GROUPS = (HANDLE_DIMS, GRIPPER_DIMS, *LANDMARK_DIMS, APPEARANCE_DIMS)

_SIGNS = LANDMARK_DIMS[0] + LANDMARK_DIMS[1]
_BIN1 = LANDMARK_DIMS[2] + LANDMARK_DIMS[3]
OCCLUSION_LEVELS = {
    0: (),
    1: HANDLE_DIMS + _SIGNS,
    2: HANDLE_DIMS + _SIGNS + _BIN1,
    3: SCENE_DIMS,
}
OCCLUSION_NAMES = ("none", "partial", "heavy", "full")


def occlusion_mask(level: int) -> tuple[int, ...]:
    """Covered dims per level: none; handle and signs; also bin 1; every scene dim."""
    if level not in OCCLUSION_LEVELS:
        raise ValueError(f"occlusion level must be 0..3, got {level}")
    return OCCLUSION_LEVELS[level]


@dataclass(frozen=True)
class EnvConfig:
    start_offset: float = 0.15
    lateral_jitter: float = 0.05
    step_size: float = 0.005
    grasp_radius: float = 0.02
    door_travel: float = 0.10
    occlusion_mask: tuple[int, ...] = ()
    obs_noise_std: float = 0.0
    max_steps: int = 120
    success_progress: float = 0.95
    cabinet: int | None = None  # None: chosen by reset seed

    def __post_init__(self):
        for name in ("start_offset", "step_size", "grasp_radius", "door_travel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lateral_jitter < 0 or self.obs_noise_std < 0 or self.max_steps < 0:
            raise ValueError("lateral_jitter, obs_noise_std and max_steps must be non-negative")
        mask = tuple(sorted(set(int(i) for i in self.occlusion_mask)))
        if any(not 0 <= i < OBS_DIM for i in mask):
            raise ValueError(f"occlusion mask must index observation dims 0..{OBS_DIM - 1}")
        object.__setattr__(self, "occlusion_mask", mask)
        if self.cabinet is not None and not 0 <= self.cabinet < N_CABINETS:
            raise ValueError(f"cabinet must be in 0..{N_CABINETS - 1}")

    def with_occlusion(self, level: int) -> "EnvConfig":
        return replace(self, occlusion_mask=occlusion_mask(level))


@dataclass(frozen=True)
class Cabinet:
    handle: np.ndarray
    landmarks: np.ndarray  # (N_LANDMARKS, 3)
    appearance: np.ndarray  # (4,)


def cabinet(identity: int) -> Cabinet:
    rng = np.random.default_rng(1000 + identity)
    handle = np.array([0.0, rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)])
    angle = rng.uniform(0.0, 2.0 * np.pi, size=N_LANDMARKS)
    spread = LANDMARK_RADII[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])
    landmarks = handle + np.column_stack([np.full(N_LANDMARKS, 0.05), spread])
    look = rng.normal(size=4)
    return Cabinet(handle, landmarks, look / np.linalg.norm(look))


@dataclass
class EnvState:
    effector: np.ndarray
    handle: np.ndarray
    door_progress: float
    gripper: GripperState
    grasped: bool
    distractors: np.ndarray
    step: int
    cabinet_id: int
    handle_origin: np.ndarray = field(repr=False)
    grasp_offset: np.ndarray = field(repr=False)
    rng: np.random.Generator = field(repr=False)

    @property
    def handle_distance(self) -> float:
        return float(np.linalg.norm(self.handle - self.effector))


def landmark_code(rel: np.ndarray) -> np.ndarray:
    """Unit bearing plus (cos, sin) of a log-range angle, the analog of apparent
    size; norm sqrt(2) unless at the landmark."""
    r = float(np.linalg.norm(rel))
    bearing = rel / r if r > 1e-12 else np.zeros(3)
    frac = np.log(max(r, RANGE_MIN) / RANGE_MIN) / np.log(RANGE_MAX / RANGE_MIN)
    angle = 0.5 * np.pi * min(frac, 1.0)
    return np.concatenate([bearing, [np.cos(angle), np.sin(angle)]])


def observe(state: EnvState, cfg: EnvConfig) -> np.ndarray:
    cab = cabinet(state.cabinet_id)
    obs = np.zeros(OBS_DIM)
    obs[0:5] = landmark_code(state.handle - state.effector)
    obs[5 + int(state.gripper)] = 1.0
    for dims, lm in zip(LANDMARK_DIMS, cab.landmarks):
        obs[list(dims)] = landmark_code(lm - state.effector)
    obs[list(APPEARANCE_DIMS)] = state.distractors
    if cfg.obs_noise_std > 0:
        obs += state.rng.normal(0.0, cfg.obs_noise_std, size=OBS_DIM)
    if cfg.occlusion_mask:
        obs[list(cfg.occlusion_mask)] = 0.0
    return obs


def env_reset(cfg: EnvConfig, seed: int):
    rng = np.random.default_rng(seed)
    ident = seed % N_CABINETS if cfg.cabinet is None else cfg.cabinet
    cab = cabinet(ident)
    lateral = rng.uniform(-cfg.lateral_jitter, cfg.lateral_jitter, size=2) if cfg.lateral_jitter else np.zeros(2)
    effector = cab.handle + np.array([-cfg.start_offset, lateral[0], lateral[1]])
    state = EnvState(
        effector=effector,
        handle=cab.handle.copy(),
        door_progress=0.0,
        gripper=GripperState.OPEN,
        grasped=False,
        distractors=cab.appearance.copy(),
        step=0,
        cabinet_id=ident,
        handle_origin=cab.handle.copy(),
        grasp_offset=np.zeros(3),
        rng=rng,
    )
    return state, observe(state, cfg)


def is_opened(state: EnvState, cfg: EnvConfig) -> bool:
    return state.door_progress >= cfg.success_progress


def env_step(state: EnvState, a: Action, cfg: EnvConfig):
    """Apply one action. Returns ``(new_state, obs, done)``; ``state`` is not modified
    apart from its random generator."""
    t = np.asarray(a.translation, dtype=np.float64)
    norm = float(np.linalg.norm(t))
    if abs(norm - 1.0) > 1e-3:
        raise ValueError(f"actions must be unit-norm translations, got norm {norm:.6f}")
    s = replace(state, effector=state.effector.copy(), handle=state.handle.copy())
    s.gripper = a.gripper
    if s.grasped and s.gripper != GripperState.CLOSED:
        s.grasped = False
    if not s.grasped and s.gripper == GripperState.CLOSED and s.handle_distance <= cfg.grasp_radius:
        s.grasped = True
        s.grasp_offset = s.effector - s.handle
    if s.grasped:
        pull = cfg.step_size * float(t @ PULL_AXIS)
        if pull > 0:
            s.door_progress = min(1.0, s.door_progress + pull / cfg.door_travel)
        s.handle = s.handle_origin + s.door_progress * cfg.door_travel * PULL_AXIS
        s.effector = s.handle + s.grasp_offset
    else:
        s.effector = s.effector + cfg.step_size * t
    s.step += 1
    done = is_opened(s, cfg) or s.step >= cfg.max_steps
    return s, observe(s, cfg), done


def expert_action(state: EnvState, cfg: EnvConfig) -> Action:
    """Scripted reach, grasp and pull."""
    if state.grasped or state.handle_distance <= cfg.grasp_radius:
        return Action(PULL_AXIS, GripperState.CLOSED)
    r = state.handle_distance
    if r > 0.10:
        g = GripperState.OPEN
    elif r > 0.05:
        g = GripperState.ALMOST_OPEN
    else:
        g = GripperState.ALMOST_CLOSED
    return Action((state.handle - state.effector) / r, g)


class ExpertPolicy(Policy):
    name = "expert"

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg

    def act(self, obs, t, state=None):
        if state is None:
            raise ValueError("the scripted expert needs the simulator state")
        return expert_action(state, self.cfg)


class NoisyExpertPolicy(ExpertPolicy):
    """The scripted expert with teleoperation-like jitter: Gaussian noise on the
    translation, renormalized. The gripper schedule is left exact."""

    name = "noisy_expert"

    def __init__(self, cfg: EnvConfig, noise_std: float):
        if noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        super().__init__(cfg)
        self.noise_std = noise_std
        self._rng = np.random.default_rng(0)

    def reset(self, seed=None):
        self._rng = np.random.default_rng([0x5EED, 0 if seed is None else int(seed)])

    def act(self, obs, t, state=None):
        a = super().act(obs, t, state)
        if self.noise_std == 0:
            return a
        while True:
            v = a.translation + self._rng.normal(0.0, self.noise_std, size=3)
            n = float(np.linalg.norm(v))
            if n > 1e-6:
                return Action(v / n, a.gripper)


@dataclass
class RolloutResult:
    handle_grasped: bool
    door_opened: bool
    steps_taken: int
    trace: list = field(default_factory=list, repr=False)  # (obs, action) per step
    seed: int = 0
    states: list = field(default_factory=list, repr=False)  # state summary after each step

    def __post_init__(self):
        if self.door_opened and not self.handle_grasped:
            raise ValueError("door_opened implies handle_grasped")


def rollout(policy: Policy, cfg: EnvConfig, seed: int) -> RolloutResult:
    state, obs = env_reset(cfg, seed)
    policy.reset(seed)
    trace, states = [], []
    grasped = False
    done = cfg.max_steps == 0
    while not done:
        a = policy.act(obs, state.step, state)
        trace.append((obs, a))
        state, obs, done = env_step(state, a, cfg)
        grasped = grasped or state.grasped
        states.append(state_summary(state))
    return RolloutResult(grasped, is_opened(state, cfg), state.step, trace, seed, states)


def state_summary(state: EnvState) -> dict:
    return {
        "effector": [float(v) for v in state.effector],
        "handle_distance": state.handle_distance,
        "door_progress": float(state.door_progress),
        "grasped": bool(state.grasped),
    }


def trial_seeds(n_trials: int, seed: int) -> list[int]:
    """Consecutive reset seeds, so cabinets are visited round-robin."""
    return [seed * 1_000_003 + i for i in range(n_trials)]


def success_rate(policy: Policy, cfg: EnvConfig, n_trials: int, seed: int = 0) -> tuple[float, float]:
    """(grasp rate, open rate) over ``n_trials`` independently seeded rollouts."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    results = [rollout(policy, cfg, s) for s in trial_seeds(n_trials, seed)]
    return (
        sum(r.handle_grasped for r in results) / n_trials,
        sum(r.door_opened for r in results) / n_trials,
    )


def collect_expert_demos(n_demos: int, seed: int, cfg: EnvConfig | None = None,
                         action_noise: float = DEMO_NOISE) -> DemoSet:
    """Roll the scripted expert from ``n_demos`` seeded resets.

    Demonstrations are recorded without occlusion. ``action_noise`` jitters the
    executed (and recorded) translations the way a human teleoperator would;
    0 gives the exact expert.
    """
    if n_demos < 1:
        raise ValueError("n_demos must be >= 1")
    cfg = replace(cfg or EnvConfig(), occlusion_mask=())
    expert = NoisyExpertPolicy(cfg, action_noise)
    rng = np.random.default_rng(seed)
    demos = []
    for reset_seed in rng.integers(0, 2**31 - 1, size=n_demos):
        res = rollout(expert, cfg, int(reset_seed))
        if not res.door_opened:
            raise RuntimeError(f"scripted expert failed on reset seed {reset_seed}")
        demos.append(Demonstration.from_frames([o for o, _ in res.trace], [a for _, a in res.trace]))
    meta = {"generator": "expert", "seed": str(seed), "obs_noise_std": repr(cfg.obs_noise_std),
            "action_noise": repr(float(action_noise))}
    return DemoSet(tuple(demos), meta)


# BYOL settings for sim observations: one patch net per observation block,
# dropout applied to whole blocks (the random-crop analog)
PATCH_FEATURES = 16
PATCH_HIDDEN = (64,)
SIM_AUGMENT = AugmentConfig(noise_std=0.01, dropout_prob=0.3, scale_jitter=(1.0, 1.0), dropout_groups=OBS_GROUPS)


def sim_encoder_spec(seed: int = 0, features: int = PATCH_FEATURES, hidden=PATCH_HIDDEN) -> EncoderSpec:
    return EncoderSpec("byol_patch", OBS_DIM, features * len(OBS_GROUPS), tuple(hidden), seed, OBS_GROUPS)


def write_trace(result: RolloutResult, fh: TextIO) -> None:
    """One JSON object per line: step, obs, action translation, gripper code and
    the state reached after the step; then a final line with ``"summary": true``."""
    for i, (obs, a) in enumerate(result.trace):
        rec = {
            "step": i,
            "obs": [float(x) for x in obs],
            "translation": [float(x) for x in a.translation],
            "gripper": int(a.gripper),
        }
        if i < len(result.states):
            rec["state"] = result.states[i]
        fh.write(json.dumps(rec) + "\n")
    fh.write(json.dumps({
        "summary": True,
        "seed": result.seed,
        "steps": result.steps_taken,
        "handle_grasped": result.handle_grasped,
        "door_opened": result.door_opened,
    }) + "\n")
