"""Multi-agent double/dueling deep Q-learning with a VDN (summed) joint value.

Each UAV owns an independent Q-network and acts on its own observation
window; training is centralized on the shared reward, with the joint value
taken as the sum of the agents' chosen-action Q-values.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .approximator import (AdamState, NetworkSpec, adam_step, backward_from_cache, clone_params, forward,
                           forward_with_cache, init_params, load_params, save_params)
from .env import CoverageEnv, ScenarioConfig, StepResult, substream

log = logging.getLogger(__name__)

METRIC_FIELDS = ("episode", "phase", "objective", "reward", "epsilon", "loss", "train_steps")


@dataclass(frozen=True)
class TrainingConfig:
    gamma: float = 0.8
    batch_size: int = 64
    memory_capacity: int = 1000
    learning_rate: float = 1e-3
    eps_start: float = 1.0
    eps_min: float = 0.001
    eps_decay: float = 0.9995
    target_sync: int = 20
    train_episodes: int = 400
    test_episodes: int = 40
    lstm_units: int = 64
    dense: tuple[int, ...] = (128, 64)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 1 <= self.batch_size <= self.memory_capacity:
            raise ValueError("batch_size must be in [1, memory_capacity]")
        if not 0.0 <= self.eps_min <= self.eps_start <= 1.0:
            raise ValueError("need 0 <= eps_min <= eps_start <= 1")


@dataclass
class Agent:
    spec: NetworkSpec
    params: np.ndarray
    target: np.ndarray
    opt: AdamState

    @classmethod
    def create(cls, spec: NetworkSpec, rng: np.random.Generator) -> "Agent":
        params = init_params(spec, rng)
        return cls(spec, params, clone_params(params), AdamState.zeros(spec.n_params))

    def q_values(self, obs) -> np.ndarray:
        return forward(self.spec, self.params, obs)

    def sync_target(self):
        self.target = clone_params(self.params)


class ReplayMemory:
    """Fixed-capacity FIFO of joint transitions stored in flat arrays."""

    def __init__(self, capacity: int, num_agents: int, history: int, width: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, num_agents, history, width))
        self.next_obs = np.zeros_like(self.obs)
        self.actions = np.zeros((capacity, num_agents), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.size = 0
        self.cursor = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def push(self, obs, actions, reward: float, next_obs):
        if not np.isfinite(reward):
            raise ValueError("reward must be finite")
        k = self.cursor
        self.obs[k] = obs
        self.actions[k] = actions
        self.rewards[k] = reward
        self.next_obs[k] = next_obs
        self.ids[k] = self.inserted
        self.inserted += 1
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int) -> "Batch":
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx])

    def state(self) -> dict:
        return dict(obs=self.obs, next_obs=self.next_obs, actions=self.actions, rewards=self.rewards,
                    ids=self.ids, counters=np.array([self.size, self.cursor, self.inserted]))

    def load_state(self, st) -> None:
        self.obs[...] = st["obs"]
        self.next_obs[...] = st["next_obs"]
        self.actions[...] = st["actions"]
        self.rewards[...] = st["rewards"]
        self.ids[...] = st["ids"]
        self.size, self.cursor, self.inserted = (int(v) for v in st["counters"])


@dataclass
class Batch:
    obs: np.ndarray       # (n, N, H, W)
    actions: np.ndarray   # (n, N)
    rewards: np.ndarray   # (n,)
    next_obs: np.ndarray  # (n, N, H, W)


@dataclass
class EpsilonSchedule:
    value: float = 1.0
    floor: float = 0.001
    decay: float = 0.9995

    def step(self) -> float:
        if self.value > self.floor:
            self.value = max(self.floor, self.value * self.decay)
        return self.value


def select_action(agent: Agent, obs, eps: float, rng: np.random.Generator | None) -> int:
    """Epsilon-greedy choice; greedy ties resolve to the lowest index."""
    if eps > 0.0:
        if rng.random() < eps:
            return int(rng.integers(agent.spec.n_actions))
    return int(np.argmax(agent.q_values(obs)))


def vdn_total(q_values) -> float:
    total = 0.0
    for q in q_values:
        total += float(q)
    return total


def d3ql_target(batch: Batch, agents, gamma: float) -> np.ndarray:
    """``R + gamma * sum_i Q_i^target(s_i', argmax_a Q_i^online(s_i', a))``."""
    n = len(batch.rewards)
    rows = np.arange(n)
    bootstrap = np.zeros(n)
    if gamma != 0.0:
        for i, ag in enumerate(agents):
            nxt = batch.next_obs[:, i]
            best = np.argmax(forward(ag.spec, ag.params, nxt), axis=1)
            bootstrap += forward(ag.spec, ag.target, nxt)[rows, best]
    return batch.rewards + gamma * bootstrap


def joint_loss_gradients(batch: Batch, agents, gamma: float):
    """Semi-gradient of ``mean((Y - Q_tot)^2)`` for each agent, with ``Y`` held fixed.

    Returns ``(loss, [grad_i])``.
    """
    y = d3ql_target(batch, agents, gamma)
    n = len(y)
    rows = np.arange(n)
    caches = []
    q_tot = np.zeros(n)
    for i, ag in enumerate(agents):
        q, cache = forward_with_cache(ag.spec, ag.params, batch.obs[:, i])
        q_tot += q[rows, batch.actions[:, i]]
        caches.append(cache)
    residual = q_tot - y
    loss = float(np.mean(residual ** 2))
    grads = []
    for i, ag in enumerate(agents):
        dq = np.zeros((n, ag.spec.n_actions))
        dq[rows, batch.actions[:, i]] = 2.0 * residual / n
        grads.append(backward_from_cache(ag.spec, ag.params, caches[i], dq))
    return loss, grads


def train_step(batch: Batch, agents, gamma: float, lr: float) -> float:
    """One Adam update of every agent on a sampled batch; returns the loss."""
    loss, grads = joint_loss_gradients(batch, agents, gamma)
    for ag, g in zip(agents, grads):
        ag.params, ag.opt = adam_step(ag.params, g, ag.opt, lr)
    return loss


def scenario_hash(scenario: ScenarioConfig) -> str:
    blob = json.dumps(scenario.as_dict(), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EpisodeRecord:
    episode: int
    phase: str
    objective: float
    reward: float
    epsilon: float
    loss: float
    train_steps: int
    trace: list = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_FIELDS}


class Trainer:
    """Stateful training run: environment, agents, replay, schedule and RNG streams."""

    def __init__(self, scenario: ScenarioConfig, training: TrainingConfig | None = None, image=None,
                 env: CoverageEnv | None = None):
        self.scenario = scenario
        self.training = training or TrainingConfig()
        self.env = env if env is not None else CoverageEnv(scenario, image=image)
        tc = self.training
        self.spec = NetworkSpec(self.env.obs_width, self.env.num_actions, tc.lstm_units, tc.dense)
        init_rng = substream(scenario.seed, "init")
        self.agents = [Agent.create(self.spec, init_rng) for _ in range(self.env.num_agents)]
        self.explore_rngs = [substream(scenario.seed, f"explore/{i}") for i in range(self.env.num_agents)]
        self.replay_rng = substream(scenario.seed, "replay")
        self.memory = ReplayMemory(tc.memory_capacity, self.env.num_agents, scenario.history, self.env.obs_width)
        self.epsilon = EpsilonSchedule(tc.eps_start, tc.eps_min, tc.eps_decay)
        self.train_steps = 0
        self.episodes_done = 0

    def act(self, obs, eps: float) -> list[int]:
        return [select_action(ag, obs[i], eps, rng) for i, (ag, rng) in enumerate(zip(self.agents, self.explore_rngs))]

    def greedy_policy(self, obs, env=None) -> list[int]:
        return [int(np.argmax(ag.q_values(obs[i]))) for i, ag in enumerate(self.agents)]

    def run_episode(self, train: bool, keep_trace: bool = False) -> EpisodeRecord:
        tc = self.training
        obs = self.env.reset(seed=self.episodes_done)
        objectives, rewards, losses = [], [], []
        trace = []
        done = False
        while not done:
            eps = self.epsilon.value if train else 0.0
            actions = self.act(obs, eps)
            res: StepResult = self.env.step(actions)
            objectives.append(res.objective)
            rewards.append(res.reward)
            if keep_trace:
                trace.append(res)
            if train:
                self.memory.push(obs, actions, res.reward, res.observations)
                if len(self.memory) >= tc.batch_size:
                    batch = self.memory.sample(self.replay_rng, tc.batch_size)
                    losses.append(train_step(batch, self.agents, tc.gamma, tc.learning_rate))
                    self.train_steps += 1
                    if self.train_steps % tc.target_sync == 0:
                        for ag in self.agents:
                            ag.sync_target()
                self.epsilon.step()
            obs = res.observations
            done = res.done
        rec = EpisodeRecord(self.episodes_done, "train" if train else "test", float(np.mean(objectives)),
                            float(np.mean(rewards)), self.epsilon.value if train else 0.0,
                            float(np.mean(losses)) if losses else float("nan"), self.train_steps, trace)
        self.episodes_done += 1
        return rec

    def train(self, episodes: int | None = None) -> list[EpisodeRecord]:
        n = self.training.train_episodes if episodes is None else episodes
        records = []
        for _ in range(n):
            rec = self.run_episode(train=True)
            records.append(rec)
            if rec.episode % 50 == 0:
                log.info("episode %d objective %.4f eps %.4f loss %.5f", rec.episode, rec.objective,
                         rec.epsilon, rec.loss)
        return records

    def test(self, episodes: int | None = None, keep_trace: bool = False) -> list[EpisodeRecord]:
        n = self.training.test_episodes if episodes is None else episodes
        return [self.run_episode(train=False, keep_trace=keep_trace) for _ in range(n)]

    # -- checkpoints -------------------------------------------------------

    def save_checkpoint(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i, ag in enumerate(self.agents):
            save_params(d / f"agent{i}.params", ag.spec, ag.params)
            save_params(d / f"agent{i}.target.params", ag.spec, ag.target)
        np.savez(d / "optimizer.npz", **{f"m{i}": ag.opt.m for i, ag in enumerate(self.agents)},
                 **{f"v{i}": ag.opt.v for i, ag in enumerate(self.agents)},
                 t=np.array([ag.opt.t for ag in self.agents]))
        np.savez(d / "replay.npz", **self.memory.state())
        manifest = {
            "scenario_hash": scenario_hash(self.scenario),
            "scenario": self.scenario.as_dict(),
            "training": asdict(self.training),
            "episodes_done": self.episodes_done,
            "train_steps": self.train_steps,
            "epsilon": self.epsilon.value,
            "rng": {
                "explore": [r.bit_generator.state for r in self.explore_rngs],
                "replay": self.replay_rng.bit_generator.state,
            },
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, default=list))
        return d

    def load_checkpoint(self, directory) -> None:
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        if manifest["scenario_hash"] != scenario_hash(self.scenario):
            raise ValueError(f"checkpoint {d} was produced for a different scenario")
        opt = np.load(d / "optimizer.npz")
        for i, ag in enumerate(self.agents):
            _, ag.params = load_params(d / f"agent{i}.params")
            _, ag.target = load_params(d / f"agent{i}.target.params")
            ag.opt = AdamState(opt[f"m{i}"].copy(), opt[f"v{i}"].copy(), int(opt["t"][i]))
        with np.load(d / "replay.npz") as rep:
            self.memory.load_state(rep)
        self.episodes_done = manifest["episodes_done"]
        self.train_steps = manifest["train_steps"]
        self.epsilon.value = manifest["epsilon"]
        for r, st in zip(self.explore_rngs, manifest["rng"]["explore"]):
            r.bit_generator.state = st
        self.replay_rng.bit_generator.state = manifest["rng"]["replay"]


def load_trained_agents(directory) -> list[Agent]:
    """Online networks from a checkpoint directory, for evaluation only."""
    d = Path(directory)
    agents = []
    i = 0
    while (d / f"agent{i}.params").exists():
        spec, params = load_params(d / f"agent{i}.params")
        agents.append(Agent(spec, params, clone_params(params), AdamState.zeros(spec.n_params)))
        i += 1
    if not agents:
        raise FileNotFoundError(f"no agent parameter files in {d}")
    return agents


@dataclass
class TrainingResult:
    trainer: Trainer
    train_records: list[EpisodeRecord]
    test_records: list[EpisodeRecord]

    @property
    def agents(self):
        return self.trainer.agents

    @property
    def test_objective(self) -> float:
        return float(np.mean([r.objective for r in self.test_records]))

    def rows(self) -> list[dict]:
        return [r.row() for r in self.train_records + self.test_records]


def run_training(scenario: ScenarioConfig, training: TrainingConfig | None = None, image=None) -> TrainingResult:
    """Train for the configured episodes, then run greedy test episodes without updates."""
    trainer = Trainer(scenario, training, image=image)
    train_records = trainer.train()
    test_records = trainer.test()
    return TrainingResult(trainer, train_records, test_records)


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
