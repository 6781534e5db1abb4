"""Experiment sweeps: build scenarios, train or evaluate each method, write CSV."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import bo_configure, hu_policy
from .env import CoverageEnv, ScenarioConfig
from .images import image_id, load_image  # noqa: F401  (re-exported)
from .marl import TrainingConfig, run_training

log = logging.getLogger(__name__)

SWEEP_VARS = ("channels", "uavs", "velocity-scale", "reward-metric")
METHODS = ("SAMA", "BO", "HU")
RESULT_HEADER = ("method", "sweep_var", "sweep_value", "seed", "image", "objective_mean", "objective_std")
ERROR_MARKER = "error"


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple[str, ...]
    seeds: tuple[int, ...]
    methods: tuple[str, ...] = METHODS
    images: tuple[str, ...] = ("builtin:clouds",)

    def __post_init__(self):
        if self.variable not in SWEEP_VARS:
            raise ValueError(f"sweep variable must be one of {SWEEP_VARS}, got {self.variable!r}")
        for name in ("values", "seeds", "methods", "images"):
            if not getattr(self, name):
                raise ValueError(f"sweep {name} must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))

    @classmethod
    def from_mapping(cls, m: dict) -> "SweepSpec":
        try:
            return cls(variable=m["sweep_var"], values=tuple(m["sweep_values"]), seeds=tuple(m["seeds"]),
                       methods=tuple(m.get("methods") or METHODS),
                       images=tuple(m.get("images") or ("builtin:clouds",)))
        except KeyError as exc:
            raise ValueError(f"sweep config is missing {exc.args[0]!r}") from None


@dataclass(frozen=True)
class ResultRow:
    method: str
    sweep_var: str
    sweep_value: str
    seed: int
    image: str
    objective_mean: float
    objective_std: float
    error: str | None = None

    def csv_fields(self) -> list[str]:
        if self.error is not None:
            mean = std = ERROR_MARKER
        else:
            mean, std = repr(float(self.objective_mean)), repr(float(self.objective_std))
        return [self.method, self.sweep_var, self.sweep_value, str(self.seed), self.image, mean, std]


def apply_sweep_value(scenario: ScenarioConfig, variable: str, value: str) -> ScenarioConfig:
    if variable == "channels":
        return scenario.replace(num_channels=int(value))
    if variable == "uavs":
        return scenario.replace(num_uavs=int(value))
    if variable == "velocity-scale":
        return scenario.replace(velocity_scale=float(value))
    if variable == "reward-metric":
        return scenario.replace(reward_metric=value)
    raise ValueError(f"unknown sweep variable {variable!r}")


def evaluate_method(method: str, scenario: ScenarioConfig, training: TrainingConfig, image=None) -> list[float]:
    """Per-test-episode semantic objectives (always the PSNR-based objective)."""
    if method == "SAMA":
        return [r.objective for r in run_training(scenario, training, image=image).test_records]
    if method == "BO":
        return [r.objective for r in run_training(bo_configure(scenario), training, image=image).test_records]
    if method == "HU":
        env = CoverageEnv(scenario, image=image)
        out = []
        for _ in range(training.test_episodes):
            obs = env.reset()
            vals, done = [], False
            while not done:
                res = env.step(hu_policy(obs, env))
                vals.append(res.objective)
                obs, done = res.observations, res.done
            out.append(float(np.mean(vals)))
        return out
    raise ValueError(f"unknown method {method!r}")


def _run_one(job) -> ResultRow:
    method, variable, value, seed, image, base, training = job
    ident = image_id(image)
    try:
        scenario = apply_sweep_value(base, variable, value).replace(seed=seed, image=image)
        vals = evaluate_method(method, scenario, training)
        return ResultRow(method, variable, value, seed, ident, float(np.mean(vals)), float(np.std(vals)))
    except Exception as exc:  # recorded per row; the sweep continues
        log.error("run %s %s=%s seed=%s image=%s failed: %s", method, variable, value, seed, ident, exc)
        return ResultRow(method, variable, value, seed, ident, float("nan"), float("nan"),
                         error=f"{type(exc).__name__}: {exc}")


def run_sweep(spec: SweepSpec, base: ScenarioConfig, training: TrainingConfig, out_csv=None,
              workers: int = 1) -> list[ResultRow]:
    jobs = [(m, spec.variable, v, s, img, base, training)
            for m in spec.methods for v in spec.values for s in spec.seeds for img in spec.images]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    order = {(m, v, s, image_id(img)): k for k, (m, _, v, s, img, _, _) in enumerate(jobs)}
    rows.sort(key=lambda r: order[(r.method, r.sweep_value, r.seed, r.image)])
    if out_csv is not None:
        write_results_csv(rows, out_csv)
    return rows


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())


def read_results_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            err = rec["objective_mean"] == ERROR_MARKER
            rows.append(ResultRow(rec["method"], rec["sweep_var"], rec["sweep_value"], int(rec["seed"]),
                                  rec["image"], float("nan") if err else float(rec["objective_mean"]),
                                  float("nan") if err else float(rec["objective_std"]),
                                  error=ERROR_MARKER if err else None))
    return rows
