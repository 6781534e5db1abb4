"""Uplink radio model: free-space path gains, BS association, SINR and rates.

Rates are spectral efficiencies in bits/s/Hz summed over channels; no
bandwidth factor is applied.
"""

from __future__ import annotations

import numpy as np


def path_gain(uav_pos, bs_pos, alpha: float = 2.0) -> float:
    """Free-space path gain ``distance ** -alpha`` between two 3D points."""
    d = float(np.linalg.norm(np.asarray(uav_pos, dtype=float) - np.asarray(bs_pos, dtype=float)))
    if d == 0.0:
        raise ValueError("coincident positions")
    return d ** (-alpha)


def gain_table(uav_positions, bs_positions, alpha: float = 2.0) -> np.ndarray:
    """Path gains for every (uav, bs) pair, shape ``(N, B)``."""
    u = np.asarray(uav_positions, dtype=float).reshape(-1, 3)
    b = np.asarray(bs_positions, dtype=float).reshape(-1, 3)
    dist = np.sqrt(((u[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    if np.any(dist == 0.0):
        raise ValueError("coincident positions")
    return dist ** (-alpha)


def associate_bs(gains: np.ndarray, uav: int | None = None):
    """Index of the BS with the highest gain; ties go to the lowest index.

    With ``uav=None`` the association of every UAV is returned as an array.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.shape[-1] < 1:
        raise ValueError("at least one BS is required")
    if uav is None:
        return np.argmax(gains, axis=-1)
    return int(np.argmax(gains[uav]))


def _serving_gains(gains: np.ndarray, assoc: np.ndarray) -> np.ndarray:
    # g[j, i] = gain of UAV j towards the BS serving UAV i
    return gains[:, assoc]


def sinr(uav: int, channel: int, alloc, gains, assoc, noise: float) -> float:
    """SINR of one UAV on one channel at its own associated BS."""
    if noise <= 0:
        raise ValueError("noise must be positive")
    p = np.asarray(alloc, dtype=float)
    g = np.asarray(gains, dtype=float)
    b = int(np.asarray(assoc)[uav])
    received = p[:, channel] * g[:, b]
    signal = received[uav]
    if signal == 0.0:
        return 0.0
    interference = received.sum() - signal
    return float(signal / (interference + noise))


def sinr_matrix(alloc, gains, assoc, noise: float) -> np.ndarray:
    """SINR of every UAV on every channel, shape ``(N, C)``.

    ``alloc`` may carry extra leading batch dimensions ``(..., N, C)``.
    """
    p = np.asarray(alloc, dtype=float)
    g = _serving_gains(np.asarray(gains, dtype=float), np.asarray(assoc))
    # rx[..., j, i, c] = p[..., j, c] * g[j, i]
    n = g.shape[0]
    cross = g * (1.0 - np.eye(n))
    interference = (p[..., :, None, :] * cross[:, :, None]).sum(axis=-3)
    own = p * np.diagonal(g)[:, None]
    return own / (interference + noise)


def rates(alloc, gains, assoc, noise: float) -> np.ndarray:
    """Per-UAV aggregate rate ``sum_c log2(1 + SINR_{i,c})`` in bits/s/Hz."""
    if noise <= 0:
        raise ValueError("noise must be positive")
    return np.log2(1.0 + sinr_matrix(alloc, gains, assoc, noise)).sum(axis=-1)
