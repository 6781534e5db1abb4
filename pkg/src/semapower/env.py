"""Discrete-time multi-UAV coverage environment with a shared semantic reward.

UAVs fly fixed circles (one lap per episode) and each picks a per-channel
power tuple every slot. The reward is the area-weighted quality of all
observed segments, each segment taking the best quality among the UAVs
that see it, normalized by the covered area.
"""

from __future__ import annotations

import itertools
import math
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import radio
from .geometry import ObservationSquare, decompose, shared_coverage_degree, union_area
from .images import load_image
from .semantics import DEFAULT_PSNR_CAP, DEFAULT_THRESHOLDS, QualityModel, build_quality_model

REWARD_KINDS = ("semantic", "bitrate")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass(frozen=True)
class ScenarioConfig:
    area_side: float = 100.0
    num_uavs: int = 8
    num_bss: int = 2
    num_channels: int = 3
    power_levels: tuple[float, ...] = (0.0, 5.0, 10.0)
    p_min: float = 0.0
    p_max: float = 10.0
    noise: float = 1e-9
    alpha: float = 2.0
    uav_altitude: float = 20.0
    bs_altitude: float = 0.0
    bs_positions: tuple[tuple[float, float], ...] | None = None
    side_range: tuple[float, float] = (20.0, 40.0)
    velocity_range: tuple[float, float] = (10.0, 20.0)
    velocity_scale: float = 1.0
    slot_duration: float = 0.1
    steps_per_episode: int = 100
    history: int = 4
    image: str = "builtin:clouds"
    reward_metric: str = "psnr"
    psnr_cap: float = DEFAULT_PSNR_CAP
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    reward: str = "semantic"
    observe_coverage: bool = True
    seed: int = 0
    # explicit per-UAV trajectory overrides; sampled from the seed when None
    sides: tuple[float, ...] | None = None
    speeds: tuple[float, ...] | None = None
    centers: tuple[tuple[float, float], ...] | None = None
    radii: tuple[float, ...] | None = None
    phases: tuple[float, ...] | None = None
    directions: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError(f"p_min ({self.p_min}) exceeds p_max ({self.p_max})")
        if not self.power_levels:
            raise ValueError("power_levels must be nonempty")
        if self.steps_per_episode < 1 or self.history < 1:
            raise ValueError("steps_per_episode and history must be >= 1")
        if self.num_uavs < 1 or self.num_bss < 1 or self.num_channels < 1:
            raise ValueError("num_uavs, num_bss and num_channels must be >= 1")
        if self.reward not in REWARD_KINDS:
            raise ValueError(f"reward must be one of {REWARD_KINDS}, got {self.reward!r}")
        if self.reward_metric not in ("psnr", "ssim"):
            raise ValueError(f"reward_metric must be psnr or ssim, got {self.reward_metric!r}")
        if self.noise <= 0:
            raise ValueError("noise must be positive")
        if self.uav_altitude == self.bs_altitude:
            raise ValueError("UAV and BS altitudes must differ")
        for name in ("sides", "speeds", "centers", "radii", "phases", "directions"):
            v = getattr(self, name)
            if v is not None and len(v) != self.num_uavs:
                raise ValueError(f"{name} has {len(v)} entries, expected {self.num_uavs}")
        if self.bs_positions is not None and len(self.bs_positions) != self.num_bss:
            raise ValueError(f"bs_positions has {len(self.bs_positions)} entries, expected {self.num_bss}")

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def resolved_bs_positions(self) -> np.ndarray:
        if self.bs_positions is not None:
            xy = np.asarray(self.bs_positions, dtype=float)
        else:
            k = np.arange(self.num_bss)
            xy = np.column_stack([self.area_side * (k + 0.5) / self.num_bss,
                                  np.full(self.num_bss, self.area_side / 2)])
        return np.column_stack([xy, np.full(len(xy), self.bs_altitude)])

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def enumerate_actions(power_levels, num_channels: int, p_min: float, p_max: float) -> list[tuple[float, ...]]:
    """All per-channel power tuples whose total lies in ``[p_min, p_max]``.

    Ordered lexicographically by level index.
    """
    levels = list(power_levels)
    out = []
    for idx in itertools.product(range(len(levels)), repeat=num_channels):
        tup = tuple(float(levels[k]) for k in idx)
        if p_min <= sum(tup) <= p_max:
            out.append(tup)
    if not out:
        raise ValueError("infeasible power constraints")
    return out


@dataclass(frozen=True)
class TrajectoryModel:
    centers: np.ndarray     # (N, 2)
    radii: np.ndarray       # (N,)
    phases: np.ndarray      # (N,) radians at t = 0
    omega: np.ndarray       # (N,) rad/s
    directions: np.ndarray  # (N,) +1 counter-clockwise, -1 clockwise
    altitude: float
    slot_duration: float

    def positions(self, t: int) -> np.ndarray:
        """3D positions ``(N, 3)`` at slot ``t``."""
        theta = self.phases + self.directions * self.omega * (t * self.slot_duration)
        xy = self.centers + self.radii[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
        return np.column_stack([xy, np.full(len(xy), self.altitude)])


def build_trajectories(config: ScenarioConfig) -> tuple[TrajectoryModel, np.ndarray]:
    """Circles and observation sides, sampled once from the master seed.

    Returns ``(trajectories, sides)``. Every circle is completed exactly once
    per episode; radii follow ``v * T * dt / (2 pi)`` clamped so the circle
    fits inside the area.
    """
    rng = substream(config.seed, "scenario")
    n = config.num_uavs
    side_area = config.area_side
    # draw everything unconditionally so overrides don't shift other draws
    sides_draw = rng.uniform(*config.side_range, size=n)
    speed_draw = rng.uniform(*config.velocity_range, size=n) * config.velocity_scale
    phase_draw = rng.uniform(0.0, 2 * math.pi, size=n)
    dir_draw = np.where(rng.random(n) < 0.5, -1, 1)
    center_u = rng.random((n, 2))

    sides = np.asarray(config.sides if config.sides is not None else sides_draw, dtype=float)
    period = config.steps_per_episode * config.slot_duration
    if config.radii is not None:
        radii = np.asarray(config.radii, dtype=float)
    else:
        speeds = np.asarray(config.speeds if config.speeds is not None else speed_draw, dtype=float)
        radii = speeds * period / (2 * math.pi)
        radii = np.minimum(radii, side_area / 2 - 1.0)
    if np.any(radii < 0):
        raise ValueError("radii must be nonnegative")
    if config.centers is not None:
        centers = np.asarray(config.centers, dtype=float)
    else:
        centers = radii[:, None] + center_u * (side_area - 2 * radii[:, None])
    phases = np.asarray(config.phases if config.phases is not None else phase_draw, dtype=float)
    directions = np.asarray(config.directions if config.directions is not None else dir_draw, dtype=int)
    omega = np.full(n, 2 * math.pi / period)
    traj = TrajectoryModel(centers, radii, phases, omega, directions, config.uav_altitude, config.slot_duration)
    return traj, sides


@dataclass(frozen=True)
class SlotGeometry:
    """Everything about a slot that does not depend on the chosen powers."""

    t: int
    positions: np.ndarray   # (N, 3)
    gains: np.ndarray       # (N, B)
    assoc: np.ndarray       # (N,)
    membership: np.ndarray  # (S, N) bool
    areas: np.ndarray       # (S,)
    coverage: np.ndarray    # (N,) shared coverage degree
    decomposition: object = field(repr=False)

    @property
    def covered_area(self) -> float:
        return float(self.areas.sum())


@dataclass
class SlotOutcome:
    rates: np.ndarray
    qualities: np.ndarray
    reward: float
    objective: float
    covered_quality: float  # sum_S area * segment quality, in m^2


@dataclass
class StepResult:
    observations: np.ndarray  # (N, H, W)
    reward: float
    objective: float
    rates: np.ndarray
    qualities: np.ndarray
    actions: tuple[int, ...]
    t: int
    done: bool


class CoverageEnv:
    """Multi-agent environment; one instance is owned by one thread."""

    def __init__(self, config: ScenarioConfig, image=None):
        self.config = config
        self.actions = enumerate_actions(config.power_levels, config.num_channels, config.p_min, config.p_max)
        self.action_array = np.asarray(self.actions, dtype=float)  # (A, C)
        self.trajectories, self.sides = build_trajectories(config)
        self.bs_positions = config.resolved_bs_positions()
        img = image if image is not None else load_image(config.image)
        self.eval_model = build_quality_model(img, "psnr", config.psnr_cap, config.thresholds)
        if config.reward_metric == "psnr":
            self.reward_model = self.eval_model
        else:
            self.reward_model = build_quality_model(img, config.reward_metric, config.psnr_cap, config.thresholds)
        self.h_max = abs(config.uav_altitude - config.bs_altitude) ** (-config.alpha)
        self.rate_bound = config.num_channels * math.log2(1.0 + max(config.p_max, 0.0) * self.h_max / config.noise)
        self._geometry_cache: dict[int, SlotGeometry] = {}
        self.t = 0
        self._history = None

    @property
    def num_agents(self) -> int:
        return self.config.num_uavs

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def obs_width(self) -> int:
        return self.config.num_bss + (3 if self.config.observe_coverage else 2)

    def geometry(self, t: int) -> SlotGeometry:
        key = t % self.config.steps_per_episode
        geo = self._geometry_cache.get(key)
        if geo is None:
            geo = self._build_geometry(key)
            self._geometry_cache[key] = geo
        return geo

    def _build_geometry(self, t: int) -> SlotGeometry:
        pos = self.trajectories.positions(t)
        gains = radio.gain_table(pos, self.bs_positions, self.config.alpha)
        assoc = radio.associate_bs(gains)
        squares = [ObservationSquare(i, (pos[i, 0], pos[i, 1]), self.sides[i]) for i in range(self.num_agents)]
        decomp = decompose(squares)
        membership = np.array([[i in seg.members for i in range(self.num_agents)] for seg in decomp], dtype=bool)
        areas = np.array([seg.area for seg in decomp])
        coverage = np.array([shared_coverage_degree(i, decomp, self.sides[i]) for i in range(self.num_agents)])
        return SlotGeometry(t, pos, gains, assoc, membership, areas, coverage, decomp)

    def frame(self, geo: SlotGeometry) -> np.ndarray:
        """One observation frame per UAV, every element normalized into [0, 1]."""
        cfg = self.config
        parts = [geo.gains / self.h_max]
        if cfg.observe_coverage:
            parts.append(geo.coverage[:, None] / cfg.num_uavs)
        parts.append(geo.positions[:, :2] / cfg.area_side)
        return np.clip(np.hstack(parts), 0.0, 1.0)

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Start an episode at slot 0; returns observations ``(N, H, W)``.

        The scenario is frozen per run, so ``seed`` does not alter the
        trajectory; it is accepted for interface symmetry.
        """
        self.t = 0
        self._history = np.zeros((self.num_agents, self.config.history, self.obs_width))
        self._history[:, -1] = self.frame(self.geometry(0))
        return self._history.copy()

    def allocation(self, joint_actions) -> np.ndarray:
        idx = np.asarray(joint_actions, dtype=int)
        if idx.shape[-1] != self.num_agents:
            raise ValueError(f"expected {self.num_agents} action indices, got shape {idx.shape}")
        if np.any(idx < 0) or np.any(idx >= self.num_actions):
            raise IndexError(f"action index out of range [0, {self.num_actions})")
        return self.action_array[idx]

    def outcome(self, alloc, geo: SlotGeometry | None = None) -> SlotOutcome:
        """Rates, qualities and rewards for an allocation at the current slot."""
        geo = geo if geo is not None else self.geometry(self.t)
        r = radio.rates(alloc, geo.gains, geo.assoc, self.config.noise)
        q_eval = self.eval_model(r / self.sides ** 2)
        covered, objective = self._segment_score(q_eval, geo)
        if self.config.reward == "bitrate":
            reward = float(r.sum() / (self.num_agents * self.rate_bound))
            q_out = q_eval
        elif self.reward_model is self.eval_model:
            reward, q_out = objective, q_eval
        else:
            q_out = self.reward_model(r / self.sides ** 2)
            reward = self._segment_score(q_out, geo)[1]
        return SlotOutcome(r, q_out, float(reward), float(objective), float(covered))

    @staticmethod
    def _segment_score(qualities, geo: SlotGeometry):
        seg_q = np.max(np.where(geo.membership, qualities[..., None, :], 0.0), axis=-1)
        covered = (seg_q * geo.areas).sum(axis=-1)
        return covered, covered / geo.covered_area

    def batch_objective(self, joint_actions: np.ndarray, geo: SlotGeometry, use_reward_model: bool = False):
        """Per-slot semantic score for many joint actions ``(K, N)`` at once."""
        alloc = self.action_array[np.asarray(joint_actions, dtype=int)]
        r = radio.rates(alloc, geo.gains, geo.assoc, self.config.noise)
        model = self.reward_model if use_reward_model else self.eval_model
        q = model(r / self.sides ** 2)
        return self._segment_score(q, geo)[1]

    def step(self, joint_actions) -> StepResult:
        if self._history is None:
            raise RuntimeError("call reset() before step()")
        actions = tuple(int(a) for a in np.asarray(joint_actions).ravel())
        alloc = self.allocation(actions)
        out = self.outcome(alloc)
        self.t += 1
        self._history = np.roll(self._history, -1, axis=1)
        self._history[:, -1] = self.frame(self.geometry(self.t))
        done = self.t >= self.config.steps_per_episode
        return StepResult(self._history.copy(), out.reward, out.objective, out.rates, out.qualities,
                          actions, self.t - 1, done)


def semantic_objective(trace) -> float:
    """Mean per-slot semantic objective over a trace of steps (or plain floats)."""
    vals = [s.objective if isinstance(s, StepResult) else float(s) for s in trace]
    if not vals:
        raise ValueError("empty trace")
    return float(np.mean(vals))
