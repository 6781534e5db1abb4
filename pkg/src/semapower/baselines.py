"""Reference policies: bit-oriented learner (BO), greedy heuristic (HU), exhaustive oracle."""

from __future__ import annotations

import csv
import itertools
from enum import Enum

import numpy as np

from .env import CoverageEnv, ScenarioConfig

ORACLE_LIMIT = 10 ** 6
_CHUNK = 4096


class BaselineKind(str, Enum):
    BO = "BO"
    HU = "HU"
    ORACLE = "ORACLE"


def bo_configure(scenario: ScenarioConfig) -> ScenarioConfig:
    """Same run with a normalized sum-rate reward and no coverage feature."""
    return scenario.replace(reward="bitrate", observe_coverage=False)


def hu_allocate(gains, assoc, power_levels, p_min: float, p_max: float, num_channels: int) -> np.ndarray:
    """Greedy channel assignment to the highest-gain UAV with budget left.

    Channels are visited in index order. Each one goes to the eligible UAV
    with the largest gain towards its own BS (lowest index on ties), at the
    largest level that fits its remaining budget.
    """
    gains = np.asarray(gains, dtype=float)
    assoc = np.asarray(assoc, dtype=int)
    n = gains.shape[0]
    own = gains[np.arange(n), assoc]
    levels = sorted(float(p) for p in power_levels)
    nonzero = [p for p in levels if p > 0]
    alloc = np.zeros((n, num_channels))
    if not nonzero:
        if p_min > 0:
            raise ValueError("heuristic infeasible under P_min")
        return alloc
    smallest = nonzero[0]
    budget = np.full(n, float(p_max))
    for c in range(num_channels):
        eligible = np.flatnonzero(budget >= smallest)
        if eligible.size == 0:
            break
        winner = eligible[np.argmax(own[eligible])]
        level = max(p for p in nonzero if p <= budget[winner])
        alloc[winner, c] = level
        budget[winner] -= level
    if np.any(alloc.sum(axis=1) < p_min):
        raise ValueError("heuristic infeasible under P_min")
    return alloc


def allocation_to_actions(env: CoverageEnv, alloc) -> tuple[int, ...]:
    index = {tup: k for k, tup in enumerate(env.actions)}
    try:
        return tuple(index[tuple(float(p) for p in row)] for row in np.asarray(alloc))
    except KeyError as exc:
        raise ValueError(f"allocation row {exc.args[0]} is not a feasible action") from None


def hu_policy(obs, env: CoverageEnv) -> tuple[int, ...]:
    """HU as a policy over the environment's current slot (observations unused)."""
    cfg = env.config
    geo = env.geometry(env.t)
    alloc = hu_allocate(geo.gains, geo.assoc, cfg.power_levels, cfg.p_min, cfg.p_max, cfg.num_channels)
    return allocation_to_actions(env, alloc)


def oracle_allocate(env: CoverageEnv, t: int | None = None, use_reward_model: bool = False):
    """Exhaustive search over joint actions at slot ``t`` (default: current slot).

    Returns ``(joint_action, best_objective)``; ties go to the
    lexicographically smallest joint action. State is not advanced.
    """
    n, a = env.num_agents, env.num_actions
    size = a ** n
    if size > ORACLE_LIMIT:
        raise ValueError(f"oracle search space too large: {a}^{n} = {size} joint actions (limit {ORACLE_LIMIT})")
    geo = env.geometry(env.t if t is None else t)
    best_val = -np.inf
    best_idx = None
    grid = np.array(list(itertools.product(range(a), repeat=n)), dtype=np.int64).reshape(size, n)
    for start in range(0, size, _CHUNK):
        chunk = grid[start:start + _CHUNK]
        vals = env.batch_objective(chunk, geo, use_reward_model=use_reward_model)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best_idx = tuple(int(v) for v in chunk[k])
    return best_idx, best_val


def oracle_episode(env: CoverageEnv) -> list[tuple[int, tuple[int, ...], float]]:
    """Oracle choice for every slot of one episode: ``(slot, actions, objective)``."""
    return [(t, *oracle_allocate(env, t)) for t in range(env.config.steps_per_episode)]


def write_oracle_csv(rows, num_agents: int, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", *(f"a{i}" for i in range(num_agents)), "best_reward"])
        for slot, actions, value in rows:
            w.writerow([slot, *actions, repr(float(value))])
