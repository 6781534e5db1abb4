"""Acceptance checks: oracle gap, ordering trends, determinism and sanity audits.

Each ``criterion_*`` function returns a :class:`CheckResult`; the test suite
and the ``accept`` subcommand both run them.
"""

from __future__ import annotations

import csv
import math
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .approximator import AdamState, NetworkSpec, forward, gradcheck
from .baselines import bo_configure, hu_allocate, hu_policy, oracle_allocate
from .env import CoverageEnv, ScenarioConfig, enumerate_actions
from .geometry import ObservationSquare, decompose
from .images import BUILTIN_NAMES, builtin_image
from .marl import Agent, Batch, TrainingConfig, Trainer, d3ql_target
from .semantics import build_quality_model, map_rate_to_quality

ACCEPT_SEEDS = (0, 1, 2)


# -- policy evaluation ---------------------------------------------------------

def run_policy(env: CoverageEnv, policy, episodes: int = 1, with_oracle: bool = False):
    """Roll out ``policy(obs, env) -> joint action`` for whole episodes.

    Returns a list of ``(objective, oracle_best)`` per slot; ``oracle_best``
    is ``None`` unless ``with_oracle``.
    """
    out = []
    for _ in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            best = oracle_allocate(env)[1] if with_oracle else None
            res = env.step(policy(obs, env))
            out.append((res.objective, best))
            obs, done = res.observations, res.done
    return out


def oracle_gap(env: CoverageEnv, policy, episodes: int = 1) -> float:
    """Mean per-slot ratio of achieved to oracle-best objective (oracle-zero slots skipped)."""
    slots = run_policy(env, policy, episodes, with_oracle=True)
    ratios = [got / best for got, best in slots if best > 0]
    if not ratios:
        return float("nan")
    return float(np.mean(ratios))


def greedy_policy(agents):
    def policy(obs, env=None):
        return [int(np.argmax(forward(ag.spec, ag.params, obs[i]))) for i, ag in enumerate(agents)]
    return policy


def random_policy(seed: int):
    rng = np.random.default_rng(seed)

    def policy(obs, env):
        return [int(rng.integers(env.num_actions)) for _ in range(env.num_agents)]
    return policy


def zero_policy(obs, env):
    zero = env.actions.index(tuple(0.0 for _ in range(env.config.num_channels)))
    return [zero] * env.num_agents


@dataclass
class TrendResult:
    passed: bool
    margins: dict  # sweep value -> mean(better) - mean(worse)
    slack: float


def trend_check(rows, better: str, worse: str, slack: float = 0.0, min_seeds: int = 3) -> TrendResult:
    """Check ``mean(better) - mean(worse) >= -slack`` at every sweep point.

    Means are taken over seeds (and images) of the non-error rows.
    """
    by: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        if getattr(r, "error", None) is None:
            by.setdefault((r.method, r.sweep_value), []).append(r.objective_mean)
    points = sorted({v for (_, v) in by}, key=lambda v: (len(v), v))
    margins = {}
    for v in points:
        a, b = by.get((better, v)), by.get((worse, v))
        if a is None or b is None:
            raise ValueError(f"missing rows for {better if a is None else worse} at sweep value {v}")
        if min(len(a), len(b)) < min_seeds:
            raise ValueError(f"insufficient seeds at {v}: need {min_seeds}, have {min(len(a), len(b))}")
        margins[v] = float(np.mean(a) - np.mean(b))
    if not margins:
        raise ValueError("no rows to compare")
    return TrendResult(all(m >= -slack for m in margins.values()), margins, slack)


# -- acceptance scenarios ---------------------------------------------------------

def oracle_gap_scenario(seed: int = 0, reward_metric: str = "psnr") -> ScenarioConfig:
    """Two UAVs on overlapping fixed circles around one BS, two channels."""
    return ScenarioConfig(
        num_uavs=2, num_bss=1, num_channels=2, bs_positions=((50.0, 50.0),),
        sides=(30.0, 30.0), centers=((42.0, 50.0), (58.0, 50.0)), radii=(8.0, 8.0),
        phases=(0.0, math.pi), directions=(1, 1), steps_per_episode=50,
        image="builtin:clouds", reward_metric=reward_metric, seed=seed)


def interference_scenario(seed: int = 0) -> ScenarioConfig:
    """Three heavily overlapping UAVs sharing one channel; the closest has the smallest view."""
    return ScenarioConfig(
        num_uavs=3, num_bss=1, num_channels=1, bs_positions=((50.0, 50.0),),
        sides=(20.0, 40.0, 40.0), centers=((50.0, 50.0),) * 3, radii=(3.0, 8.0, 8.0),
        phases=(0.0, 0.0, math.pi), directions=(1, 1, 1), steps_per_episode=50,
        image="builtin:clouds", seed=seed)


ORACLE_GAP_TRAINING = TrainingConfig(train_episodes=200, test_episodes=1)
INTERFERENCE_TRAINING = TrainingConfig(train_episodes=120, test_episodes=1)


@lru_cache(maxsize=None)
def trained(scenario: ScenarioConfig, training: TrainingConfig) -> Trainer:
    """Train once per (scenario, training) pair within a process."""
    tr = Trainer(scenario, training)
    tr.train()
    return tr


def greedy_objective(tr: Trainer) -> float:
    return float(np.mean([r.objective for r in tr.test(tr.training.test_episodes)]))


# -- report ------------------------------------------------------------------------

@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] C{self.criterion} {self.name}: {self.measured} (need {self.tolerance}) [{self.seconds:.1f}s]"


@dataclass
class AcceptanceReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} criteria passed")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["criterion", "name", "passed", "measured", "tolerance", "seconds"])
            for c in self.checks:
                w.writerow([c.criterion, c.name, int(c.passed), c.measured, c.tolerance, f"{c.seconds:.1f}"])


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- criteria -----------------------------------------------------------------------

TWO_CHANNEL_ACTIONS = {(0, 0), (0, 5), (5, 0), (5, 5), (0, 10), (10, 0)}


@_timed
def criterion_1() -> CheckResult:
    got = enumerate_actions([0, 5, 10], 2, 0, 10)
    ok = len(got) == 6 and {tuple(int(p) for p in a) for a in got} == TWO_CHANNEL_ACTIONS
    return CheckResult(1, "action space enumeration", ok, f"{len(got)} actions {got}", "the 6 listed tuples")


def three_square_layout():
    """Three mutually overlapping squares with a common triple region."""
    return [ObservationSquare(0, (40.0, 40.0), 30.0), ObservationSquare(1, (60.0, 42.0), 28.0),
            ObservationSquare(2, (50.0, 60.0), 34.0)]


def monte_carlo_areas(squares, n_points: int = 10 ** 6, seed: int = 0):
    """Uniform sampling over the bounding box; returns per-member-set areas and standard errors."""
    rng = np.random.default_rng(seed)
    b = np.array([sq.bounds for sq in squares])
    x0, y0, x1, y1 = b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()
    box = (x1 - x0) * (y1 - y0)
    px = rng.uniform(x0, x1, n_points)
    py = rng.uniform(y0, y1, n_points)
    key = np.zeros(n_points, dtype=np.int64)
    for k, (a0, b0, a1, b1) in enumerate(b):
        key |= (((px >= a0) & (px < a1) & (py >= b0) & (py < b1)).astype(np.int64) << k)
    out = {}
    for k in np.unique(key):
        if k == 0:
            continue
        frac = float(np.mean(key == k))
        members = frozenset(squares[j].owner for j in range(len(squares)) if k >> j & 1)
        out[members] = (frac * box, box * math.sqrt(frac * (1 - frac) / n_points))
    frac_u = float(np.mean(key != 0))
    out["union"] = (frac_u * box, box * math.sqrt(frac_u * (1 - frac_u) / n_points))
    return out


@_timed
def criterion_2() -> CheckResult:
    squares = three_square_layout()
    dec = decompose(squares)
    partition_err = max(abs(sum(s.area for s in dec if sq.owner in s.members) - sq.side ** 2) for sq in squares)
    mc = monte_carlo_areas(squares)
    worst_z = 0.0
    exact = dec.as_dict()
    for members, (est, se) in mc.items():
        ref = sum(exact.values()) if members == "union" else exact.get(members, 0.0)
        worst_z = max(worst_z, abs(est - ref) / se)
    missing = set(exact) - set(k for k in mc if k != "union")
    ok = len(dec) == 7 and partition_err <= 1e-9 and worst_z <= 3.0 and not missing
    return CheckResult(2, "three-square segment geometry", ok,
                       f"{len(dec)} segments, partition err {partition_err:.1e}, MC max |z| {worst_z:.2f}",
                       "7 segments, err <= 1e-9, |z| <= 3")


@_timed
def criterion_3(cases: int = 100) -> CheckResult:
    spec = NetworkSpec(input_width=5, n_actions=10)
    res = gradcheck(spec, cases=cases, seed=2024)
    ok = res.max_rel_error <= 1e-4
    groups = ", ".join(f"{k} {v:.1e}" for k, v in res.per_group.items())
    return CheckResult(3, "gradient vs central differences", ok,
                       f"max rel err {res.max_rel_error:.2e} over {cases} cases ({groups})", "<= 1e-4")


def constant_q_agent(q_values) -> Agent:
    """An agent whose Q-values ignore the observation (zero weights, head biases only)."""
    q = np.asarray(q_values, dtype=float)
    spec = NetworkSpec(input_width=2, n_actions=len(q), lstm_units=2, dense=(2,))
    params = np.zeros(spec.n_params)
    v = spec.unpack(params)
    v["value.b"][0] = q.mean()
    v["adv.b"][:] = q - q.mean()
    return Agent(spec, params, params.copy(), AdamState.zeros(spec.n_params))


def reference_target(batch: Batch, agents, gamma: float) -> np.ndarray:
    """Per-sample loops: online argmax, target evaluation, summed over agents."""
    out = []
    for b in range(len(batch.rewards)):
        total = 0.0
        for i, ag in enumerate(agents):
            q_online = list(forward(ag.spec, ag.params, batch.next_obs[b, i]))
            best = max(range(len(q_online)), key=lambda a: (q_online[a], -a))
            total += float(forward(ag.spec, ag.target, batch.next_obs[b, i])[best])
        out.append(float(batch.rewards[b]) + gamma * total)
    return np.array(out)


@_timed
def criterion_4(cases: int = 1000) -> CheckResult:
    online = constant_q_agent([1.0, 5.0])
    online.target = constant_q_agent([10.0, 2.0]).params
    dummy = np.zeros((1, 1, 1, 2))
    y = d3ql_target(Batch(dummy, np.zeros((1, 1), int), np.array([1.0]), dummy), [online], 0.8)
    hand_ok = abs(y[0] - 2.6) <= 1e-12

    rng = np.random.default_rng(44)
    worst = 0.0
    for _ in range(cases):
        n_agents = int(rng.integers(1, 4))
        n_actions = int(rng.integers(2, 7))
        width = int(rng.integers(2, 5))
        hist = int(rng.integers(1, 4))
        spec = NetworkSpec(width, n_actions, lstm_units=4, dense=(6, 5))
        agents = []
        for _ in range(n_agents):
            p = rng.normal(size=spec.n_params)
            agents.append(Agent(spec, p, rng.normal(size=spec.n_params), AdamState.zeros(spec.n_params)))
        nb = int(rng.integers(1, 5))
        nxt = rng.uniform(size=(nb, n_agents, hist, width))
        batch = Batch(np.zeros_like(nxt), rng.integers(n_actions, size=(nb, n_agents)), rng.normal(size=nb), nxt)
        gamma = float(rng.uniform(0, 0.99))
        got = d3ql_target(batch, agents, gamma)
        ref = reference_target(batch, agents, gamma)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref)))))
    ok = hand_ok and worst <= 1e-12
    return CheckResult(4, "double-Q / VDN target", ok,
                       f"hand example Y={y[0]:.12g}; max err {worst:.1e} over {cases} random cases",
                       "Y = 2.6, err <= 1e-12")


@_timed
def criterion_5(seeds=ACCEPT_SEEDS) -> CheckResult:
    ratios, rand = [], []
    for s in seeds:
        tr = trained(oracle_gap_scenario(s), ORACLE_GAP_TRAINING)
        ratios.append(oracle_gap(tr.env, greedy_policy(tr.agents)))
        rand.append(oracle_gap(tr.env, random_policy(s)))
    passing = sum(r >= 0.9 for r in ratios)
    ok = passing >= 2
    return CheckResult(5, "oracle-gap learning (N=2, B=1, C=2, 200 episodes)", ok,
                       "trained ratios " + ", ".join(f"{r:.4f}" for r in ratios)
                       + "; random " + ", ".join(f"{r:.4f}" for r in rand),
                       ">= 0.90 in >= 2 of 3 seeds")


@_timed
def criterion_6(seeds=ACCEPT_SEEDS) -> CheckResult:
    sama, bo = [], []
    for s in seeds:
        sc = interference_scenario(s)
        sama.append(greedy_objective(trained(sc, INTERFERENCE_TRAINING)))
        bo.append(greedy_objective(trained(bo_configure(sc), INTERFERENCE_TRAINING)))
    gap = float(np.mean(sama) - np.mean(bo))
    return CheckResult(6, "semantic beats bit-oriented (N=3, C=1)", gap >= 0.05,
                       f"SAMA mean {np.mean(sama):.4f} {np.round(sama, 4).tolist()}, "
                       f"BO mean {np.mean(bo):.4f} {np.round(bo, 4).tolist()}, gap {gap:.4f}",
                       "gap >= 0.05")


def hu_worked_example():
    """2 UAVs / 2 channels, one BS: gains 0.3 and 0.1, P_Q = [0, 5, 10], P_max = 10."""
    gains = np.array([[0.3], [0.1]])
    return hu_allocate(gains, [0, 0], [0, 5, 10], 0, 10, 2)


def random_snapshot_env(rng: np.random.Generator, image) -> CoverageEnv:
    n = int(rng.integers(2, 4))
    c = int(rng.integers(1, 3))
    b = int(rng.integers(1, 3))
    sc = ScenarioConfig(num_uavs=n, num_bss=b, num_channels=c, steps_per_episode=20,
                        seed=int(rng.integers(2 ** 31)))
    return CoverageEnv(sc, image=image)


@_timed
def criterion_7(snapshots: int = 100) -> CheckResult:
    alloc = hu_worked_example()
    example_ok = np.array_equal(alloc, [[10.0, 0.0], [0.0, 10.0]])
    rng = np.random.default_rng(77)
    img = builtin_image("clouds")
    violations = 0
    worst = math.inf
    for _ in range(snapshots):
        env = random_snapshot_env(rng, img)
        env.reset()
        env.t = int(rng.integers(env.config.steps_per_episode))
        hu = env.batch_objective(np.array([hu_policy(None, env)]), env.geometry(env.t))[0]
        _, best = oracle_allocate(env)
        worst = min(worst, best - hu)
        violations += hu > best
    ok = example_ok and violations == 0
    return CheckResult(7, "HU worked example and HU <= oracle", ok,
                       f"allocation {alloc.tolist()}; {violations} violations in {snapshots} snapshots "
                       f"(min oracle-HU margin {worst:.4f})", "[[10,0],[0,10]], 0 violations")


@_timed
def criterion_8(seeds=ACCEPT_SEEDS) -> CheckResult:
    by_psnr, by_ssim = [], []
    for s in seeds:
        by_psnr.append(greedy_objective(trained(oracle_gap_scenario(s, "psnr"), ORACLE_GAP_TRAINING)))
        by_ssim.append(greedy_objective(trained(oracle_gap_scenario(s, "ssim"), ORACLE_GAP_TRAINING)))
    ok = float(np.mean(by_psnr)) >= float(np.mean(by_ssim))
    return CheckResult(8, "PSNR-trained >= SSIM-trained under PSNR objective", ok,
                       f"PSNR-trained {np.mean(by_psnr):.4f} {np.round(by_psnr, 4).tolist()}, "
                       f"SSIM-trained {np.mean(by_ssim):.4f} {np.round(by_ssim, 4).tolist()}",
                       "mean(PSNR) >= mean(SSIM)")


DETERMINISM_CONFIG = """\
num_uavs = 2
num_bss = 1
num_channels = 1
steps_per_episode = 8
image = builtin:ramp
train_episodes = 3
test_episodes = 2
batch_size = 8
memory_capacity = 32
lstm_units = 8
dense = 16,8
sweep_var = channels
sweep_values = 1,2
seeds = 0,1
methods = SAMA,BO,HU
"""


@_timed
def criterion_9() -> CheckResult:
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "det.cfg"
        cfg.write_text(DETERMINISM_CONFIG)
        codes = [main(["sweep", "--config", str(cfg), "--out", str(Path(tmp) / f"run{k}")]) for k in (1, 2)]
        a = (Path(tmp) / "run1" / "results.csv").read_bytes()
        b = (Path(tmp) / "run2" / "results.csv").read_bytes()
    ok = codes == [0, 0] and a == b and len(a) > 0
    return CheckResult(9, "sweep CSV determinism", ok,
                       f"exit codes {codes}, {len(a)} vs {len(b)} bytes, identical={a == b}", "byte-identical")


@_timed
def criterion_10(probes: int = 10 ** 4) -> CheckResult:
    top_exact, monotone = True, True
    for name in BUILTIN_NAMES:
        model = build_quality_model(builtin_image(name))
        top_exact &= model.qualities[7] == 1.0
        monotone &= model.monotone
    model = build_quality_model(builtin_image("clouds"))
    rng = np.random.default_rng(10)
    side = 30.0
    r = rng.uniform(0, model.thresholds[-1] * side * side * 1.5, size=(probes, 2))
    lo, hi = r.min(axis=1), r.max(axis=1)
    step_ok = bool(np.all(map_rate_to_quality(model, lo, side) <= map_rate_to_quality(model, hi, side)))
    values = set(np.round(map_rate_to_quality(model, r.ravel(), side), 12).tolist())
    allowed = {0.0, *np.round(model.qualities, 12).tolist()}
    step_ok &= values <= allowed
    ok = top_exact and monotone and step_ok
    return CheckResult(10, "quality model sanity", ok,
                       f"q(8)=1 on all images: {top_exact}; monotone on all: {monotone}; "
                       f"step monotone over {probes} probes: {step_ok}", "all true")


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10)


def run_acceptance(only=None, echo=None) -> AcceptanceReport:
    report = AcceptanceReport()
    for k, fn in enumerate(CRITERIA, 1):
        if only and k not in only:
            continue
        res = fn()
        report.checks.append(res)
        if echo:
            echo(res.line())
    return report

