"""Exact segment decomposition of overlapping axis-aligned observation squares.

Squares are treated as half-open ``[x0, x1) x [y0, y1)`` and are never
clipped to the scenario area.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObservationSquare:
    owner: int
    center: tuple[float, float]
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"square side must be positive, got {self.side}")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        h = self.side / 2.0
        return cx - h, cy - h, cx + h, cy + h


@dataclass(frozen=True)
class Segment:
    members: frozenset[int]
    area: float


@dataclass(frozen=True)
class SegmentDecomposition:
    segments: tuple[Segment, ...]

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)

    def as_dict(self) -> dict[frozenset[int], float]:
        return {s.members: s.area for s in self.segments}


def decompose(squares) -> SegmentDecomposition:
    """Split the union of ``squares`` into disjoint segments.

    Coordinate compression: the 2N x-edges and 2N y-edges define a grid;
    each cell belongs to the set of squares containing its center, and
    cells sharing a member set are merged.
    """
    squares = list(squares)
    if not squares:
        raise ValueError("at least one square is required")
    bounds = np.array([sq.bounds for sq in squares], dtype=float)
    owners = [sq.owner for sq in squares]
    xs = np.unique(np.concatenate([bounds[:, 0], bounds[:, 2]]))
    ys = np.unique(np.concatenate([bounds[:, 1], bounds[:, 3]]))
    mx = 0.5 * (xs[:-1] + xs[1:])
    my = 0.5 * (ys[:-1] + ys[1:])
    wx = np.diff(xs)
    wy = np.diff(ys)

    # inside[k, a, b]: cell (a, b) center lies in square k
    in_x = (bounds[:, 0:1] <= mx) & (mx < bounds[:, 2:3])
    in_y = (bounds[:, 1:2] <= my) & (my < bounds[:, 3:4])
    inside = in_x[:, :, None] & in_y[:, None, :]
    cell_area = wx[:, None] * wy[None, :]

    # encode membership as an integer key per cell
    weights = (1 << np.arange(len(squares), dtype=np.int64))
    keys = np.tensordot(weights, inside.astype(np.int64), axes=1)
    areas: dict[int, float] = {}
    for key, area in zip(keys.ravel().tolist(), cell_area.ravel().tolist()):
        if key:
            areas[key] = areas.get(key, 0.0) + area

    segments = []
    for key in sorted(areas):
        members = frozenset(owners[k] for k in range(len(squares)) if key >> k & 1)
        segments.append(Segment(members, areas[key]))
    return SegmentDecomposition(tuple(segments))


def shared_coverage_degree(uav: int, decomp: SegmentDecomposition, side: float) -> float:
    """Area-weighted mean number of UAVs observing points of ``uav``'s square."""
    total = 0.0
    found = False
    for seg in decomp:
        if uav in seg.members:
            found = True
            total += seg.area * len(seg.members)
    if not found:
        raise KeyError(f"unknown uav {uav}")
    return total / (side * side)


def union_area(decomp: SegmentDecomposition) -> float:
    return float(sum(seg.area for seg in decomp))
