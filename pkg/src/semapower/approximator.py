"""Per-agent Q-network: LSTM encoder, ReLU dense trunk, dueling heads.

Everything lives in one flat float64 parameter vector so the optimizer,
target copies and checkpoints deal with a single array. Gradients are
hand-derived (backprop through the unrolled recurrence) and checked
against central finite differences.

Parameter layout, in order:

    lstm.Wx (in, 4U)  lstm.Wh (U, 4U)  lstm.b (4U)       gates ordered i, f, o, g
    dense{k}.W (prev, width)  dense{k}.b (width)           for each trunk layer
    value.W (last, 1)  value.b (1)
    adv.W (last, A)  adv.b (A)
"""

from __future__ import annotations

import struct
from functools import cached_property
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PARAM_FILE_MAGIC = b"SPQN"
PARAM_FILE_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_width: int
    n_actions: int
    lstm_units: int = 64
    dense: tuple[int, ...] = (128, 64)

    def __post_init__(self):
        object.__setattr__(self, "dense", tuple(int(w) for w in self.dense))
        widths = (self.input_width, self.n_actions, self.lstm_units, *self.dense)
        if any(w < 1 for w in widths):
            raise ValueError(f"all widths must be >= 1, got {self}")

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        u = self.lstm_units
        shapes = [("lstm.Wx", (self.input_width, 4 * u)), ("lstm.Wh", (u, 4 * u)), ("lstm.b", (4 * u,))]
        prev = u
        for k, w in enumerate(self.dense):
            shapes += [(f"dense{k}.W", (prev, w)), (f"dense{k}.b", (w,))]
            prev = w
        shapes += [("value.W", (prev, 1)), ("value.b", (1,)),
                   ("adv.W", (prev, self.n_actions)), ("adv.b", (self.n_actions,))]
        return shapes

    @cached_property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())

    def slices(self) -> dict[str, tuple[slice, tuple[int, ...]]]:
        return self._slices

    @cached_property
    def _slices(self) -> dict[str, tuple[slice, tuple[int, ...]]]:
        out = {}
        off = 0
        for name, shape in self.layout():
            n = int(np.prod(shape))
            out[name] = (slice(off, off + n), shape)
            off += n
        return out

    def unpack(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        """Named reshaped views into ``flat`` (writes go through)."""
        if flat.shape != (self.n_params,):
            raise ValueError(f"parameter vector has shape {flat.shape}, expected ({self.n_params},)")
        return {name: flat[sl].reshape(shape) for name, (sl, shape) in self.slices().items()}


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases, forget-gate bias +1."""
    flat = np.zeros(spec.n_params)
    views = spec.unpack(flat)
    for name, shape in spec.layout():
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            views[name][...] = rng.uniform(-limit, limit, size=shape)
    u = spec.lstm_units
    views["lstm.b"][u:2 * u] = 1.0
    return flat


def clone_params(params: np.ndarray) -> np.ndarray:
    return np.array(params, dtype=np.float64, copy=True)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _as_batch(spec: NetworkSpec, obs) -> tuple[np.ndarray, bool]:
    x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != spec.input_width:
        raise ValueError(f"observation shape {np.shape(obs)} incompatible with input width {spec.input_width}")
    return x, single


def _forward(spec: NetworkSpec, params: np.ndarray, x: np.ndarray, keep: bool):
    p = spec.unpack(params)
    n, steps, _ = x.shape
    u = spec.lstm_units
    xz = x @ p["lstm.Wx"] + p["lstm.b"]
    wh = p["lstm.Wh"]
    h = np.zeros((n, u))
    c = np.zeros((n, u))
    tape = []
    for t in range(steps):
        z = xz[:, t] + h @ wh
        sig = _sigmoid(z[:, :3 * u])
        gi, gf, go = sig[:, :u], sig[:, u:2 * u], sig[:, 2 * u:]
        gg = np.tanh(z[:, 3 * u:])
        c_prev, h_prev = c, h
        c = gf * c_prev + gi * gg
        tc = np.tanh(c)
        h = go * tc
        if keep:
            tape.append((gi, gf, gg, go, c_prev, tc, h_prev))
    acts = [h]
    pre = []
    a = h
    for k in range(len(spec.dense)):
        z = a @ p[f"dense{k}.W"] + p[f"dense{k}.b"]
        a = np.maximum(z, 0.0)
        pre.append(z)
        acts.append(a)
    value = a @ p["value.W"] + p["value.b"]
    adv = a @ p["adv.W"] + p["adv.b"]
    q = value + (adv - adv.mean(axis=1, keepdims=True))
    cache = (x, tape, acts, pre) if keep else None
    return q, cache


def forward(spec: NetworkSpec, params: np.ndarray, obs) -> np.ndarray:
    """Q-values for one observation window ``(H, W)`` or a batch ``(n, H, W)``."""
    x, single = _as_batch(spec, obs)
    q, _ = _forward(spec, params, x, keep=False)
    return q[0] if single else q


def forward_with_cache(spec: NetworkSpec, params: np.ndarray, obs):
    x, _ = _as_batch(spec, obs)
    return _forward(spec, params, x, keep=True)


def backward_from_cache(spec: NetworkSpec, params: np.ndarray, cache, dq: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(dq * Q)`` w.r.t. the flat parameter vector."""
    x, tape, acts, pre = cache
    p = spec.unpack(params)
    grad = np.zeros_like(params)
    g = spec.unpack(grad)
    dq = np.asarray(dq, dtype=np.float64).reshape(x.shape[0], spec.n_actions)
    u = spec.lstm_units

    a = acts[-1]
    d_value = dq.sum(axis=1, keepdims=True)
    d_adv = dq - d_value / spec.n_actions
    g["value.W"][...] = a.T @ d_value
    g["value.b"][...] = d_value.sum(axis=0)
    g["adv.W"][...] = a.T @ d_adv
    g["adv.b"][...] = d_adv.sum(axis=0)
    da = d_value @ p["value.W"].T + d_adv @ p["adv.W"].T

    for k in reversed(range(len(spec.dense))):
        dz = da * (pre[k] > 0.0)
        g[f"dense{k}.W"][...] = acts[k].T @ dz
        g[f"dense{k}.b"][...] = dz.sum(axis=0)
        da = dz @ p[f"dense{k}.W"].T

    wh = p["lstm.Wh"]
    dh = da
    dc = np.zeros_like(dh)
    dxz = np.empty((x.shape[0], x.shape[1], 4 * u))
    dwh = g["lstm.Wh"]
    for t in reversed(range(len(tape))):
        gi, gf, gg, go, c_prev, tc, h_prev = tape[t]
        dc = dc + dh * go * (1.0 - tc * tc)
        dz = dxz[:, t]
        dz[:, :u] = dc * gg * gi * (1.0 - gi)
        dz[:, u:2 * u] = dc * c_prev * gf * (1.0 - gf)
        dz[:, 2 * u:3 * u] = dh * tc * go * (1.0 - go)
        dz[:, 3 * u:] = dc * gi * (1.0 - gg * gg)
        dwh += h_prev.T @ dz
        dh = dz @ wh.T
        dc = dc * gf
    g["lstm.Wx"][...] = x.reshape(-1, x.shape[2]).T @ dxz.reshape(-1, 4 * u)
    g["lstm.b"][...] = dxz.sum(axis=(0, 1))
    return grad


def backward(spec: NetworkSpec, params: np.ndarray, obs, dq) -> np.ndarray:
    """Exact parameter gradient of ``sum(dq * forward(params, obs))``."""
    x, single = _as_batch(spec, obs)
    _, cache = _forward(spec, params, x, keep=True)
    dq = np.asarray(dq, dtype=np.float64)
    if single:
        dq = dq[None]
    return backward_from_cache(spec, params, cache, dq)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float = 1e-3):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("params, grad and optimizer state must have matching lengths")
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, b1, b2, state.eps)


def save_params(path, spec: NetworkSpec, params: np.ndarray) -> None:
    """Flat little-endian float64 file behind a small self-describing header."""
    if params.shape != (spec.n_params,):
        raise ValueError("parameter vector does not match spec")
    header = PARAM_FILE_MAGIC + struct.pack(
        f"<HIIII{len(spec.dense)}IQ", PARAM_FILE_VERSION, spec.input_width, spec.n_actions,
        spec.lstm_units, len(spec.dense), *spec.dense, spec.n_params)
    Path(path).write_bytes(header + np.asarray(params, dtype="<f8").tobytes())


def load_params(path) -> tuple[NetworkSpec, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != PARAM_FILE_MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    version, width, n_actions, units, n_dense = struct.unpack_from("<HIIII", data, 4)
    if version != PARAM_FILE_VERSION:
        raise ValueError(f"{path}: unsupported parameter file version {version}")
    off = 4 + struct.calcsize("<HIIII")
    dense = struct.unpack_from(f"<{n_dense}I", data, off)
    off += 4 * n_dense
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    spec = NetworkSpec(width, n_actions, units, tuple(dense))
    if count != spec.n_params or len(data) - off != 8 * count:
        raise ValueError(f"{path}: parameter count mismatch")
    params = np.frombuffer(data, dtype="<f8", offset=off, count=count).astype(np.float64)
    return spec, params


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_case: list[float] = field(default_factory=list)
    per_group: dict[str, float] = field(default_factory=dict)


def gradcheck(spec: NetworkSpec, cases: int = 100, coords_per_group: int = 3, step: float = 1e-5,
              history: int = 4, batch: int = 2, seed: int = 0) -> GradCheckResult:
    """Central finite differences against :func:`backward` on random instances.

    Each case draws fresh parameters, observations and upstream gradient and
    probes ``coords_per_group`` coordinates from every parameter block, so
    recurrent gates, trunk and both heads are covered in every case. The
    per-case error is ``|fd - bp| / (|fd| + |bp|)`` in vector norm.
    """
    rng = np.random.default_rng(seed)
    slices = spec.slices()
    per_case = []
    per_group: dict[str, float] = {}
    for _ in range(cases):
        params = init_params(spec, rng)
        params += rng.normal(scale=0.1, size=params.shape)
        obs = rng.uniform(0.0, 1.0, size=(batch, history, spec.input_width))
        dq = rng.normal(size=(batch, spec.n_actions))
        analytic = backward(spec, params, obs, dq)
        fd_all, bp_all = [], []
        for name, (sl, _) in slices.items():
            idx = rng.choice(np.arange(sl.start, sl.stop), size=min(coords_per_group, sl.stop - sl.start),
                             replace=False)
            fd = np.empty(len(idx))
            for j, k in enumerate(idx):
                orig = params[k]
                params[k] = orig + step
                up = float(np.sum(dq * forward(spec, params, obs)))
                params[k] = orig - step
                down = float(np.sum(dq * forward(spec, params, obs)))
                params[k] = orig
                fd[j] = (up - down) / (2 * step)
            bp = analytic[idx]
            fd_all.append(fd)
            bp_all.append(bp)
            block = name.split(".")[0]
            err = _rel_error(fd, bp)
            per_group[block] = max(per_group.get(block, 0.0), err)
        per_case.append(_rel_error(np.concatenate(fd_all), np.concatenate(bp_all)))
    return GradCheckResult(max(per_case), per_case, per_group)


def _rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
