"""Selection-matrix sensors and the stacked information pair (y_k, Y_k)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .environment import GridSpec


@dataclass(frozen=True)
class SensorModel:
    """Identical circular footprints with per-agent noise variances.

    ``variance_bounds`` defaults to (min, max) of ``variances``.
    """

    radius: float
    variances: tuple[float, ...]
    variance_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("sensing radius must be nonnegative")
        v = np.asarray(self.variances, dtype=float)
        if v.ndim != 1 or v.size == 0 or np.any(v <= 0):
            raise ValueError("noise variances must be a nonempty list of positive numbers")
        lo, hi = self.bounds
        if lo <= 0 or np.any(v < lo) or np.any(v > hi):
            raise ValueError(f"noise variances {tuple(v)} outside bounds [{lo}, {hi}]")

    @property
    def agents(self) -> int:
        return len(self.variances)

    @property
    def bounds(self) -> tuple[float, float]:
        if self.variance_bounds is not None:
            return tuple(float(b) for b in self.variance_bounds)
        return float(min(self.variances)), float(max(self.variances))


@lru_cache(maxsize=64)
def _disc_offsets(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    dr, dc = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dr * dr + dc * dc <= radius * radius + 1e-9
    return np.stack([dr[keep], dc[keep]], axis=1)


def coverage_set(grid: GridSpec, position: int, radius: float) -> np.ndarray:
    """Cells whose centre lies within Euclidean ``radius`` of ``position``, ascending."""
    row, col = grid.rowcol(position)
    off = _disc_offsets(float(radius))
    rr, cc = row + off[:, 0], col + off[:, 1]
    inside = (rr >= 0) & (rr < grid.side) & (cc >= 0) & (cc < grid.side)
    return np.sort(rr[inside] * grid.side + cc[inside])


@dataclass(frozen=True)
class MeasurementBatch:
    """One step of stacked measurements in information form.

    ``info_diag`` is the diagonal of Y_k = H^T V^-1 H; the full matrix is
    available as :attr:`information_matrix`.
    """

    coverage: tuple[np.ndarray, ...]
    z: np.ndarray
    variances: tuple[float, ...]
    info_vector: np.ndarray
    info_diag: np.ndarray

    @property
    def n(self) -> int:
        return self.info_vector.size

    @property
    def information_matrix(self) -> np.ndarray:
        return np.diag(self.info_diag)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.info_diag)

    @classmethod
    def empty(cls, n: int) -> "MeasurementBatch":
        return cls((), np.zeros(0), (), np.zeros(n), np.zeros(n))


def information_pair(coverage, z, variances, n: int) -> tuple[np.ndarray, np.ndarray]:
    """y = H^T V^-1 z and diag(H^T V^-1 H) accumulated straight from coverage sets."""
    y = np.zeros(n)
    ydiag = np.zeros(n)
    start = 0
    for cells, v in zip(coverage, variances):
        stop = start + cells.size
        np.add.at(y, cells, z[start:stop] / v)
        np.add.at(ydiag, cells, 1.0 / v)
        start = stop
    # two terms already round once; three or more get a correctly rounded sum
    if len(coverage) > 2:
        counts = np.zeros(n, dtype=int)
        for cells in coverage:
            counts[cells] += 1
        for cell in np.flatnonzero(counts > 2):
            ydiag[cell] = math.fsum(1.0 / v for cells, v in zip(coverage, variances)
                                    if cell in cells)
    return y, ydiag


def measure(
    phi_tilde: np.ndarray,
    positions: Sequence[int],
    sensors: SensorModel,
    grid: GridSpec,
    rng,
) -> MeasurementBatch:
    """Noisy readings z^i = H^i phi_tilde + n^i, n^i ~ N(0, v^i I).

    ``rng`` is either one Generator per agent (the reproducible layout) or a
    single Generator shared in agent order.
    """
    if len(positions) != sensors.agents:
        raise ValueError(f"{len(positions)} positions for {sensors.agents} agents")
    rngs = list(rng) if isinstance(rng, (list, tuple)) else [rng] * len(positions)
    coverage = tuple(coverage_set(grid, int(p), sensors.radius) for p in positions)
    parts = []
    for cells, v, g in zip(coverage, sensors.variances, rngs):
        parts.append(phi_tilde[cells] + np.sqrt(v) * g.standard_normal(cells.size))
    z = np.concatenate(parts) if parts else np.zeros(0)
    y, ydiag = information_pair(coverage, z, sensors.variances, grid.n)
    return MeasurementBatch(coverage, z, tuple(float(v) for v in sensors.variances), y, ydiag)


def materialize_H(batch: MeasurementBatch, n: int | None = None) -> np.ndarray:
    """Dense 0/1 stacked selection matrix, agent-major row order."""
    n = batch.n if n is None else n
    cells = np.concatenate(batch.coverage) if batch.coverage else np.zeros(0, dtype=int)
    h = np.zeros((cells.size, n))
    h[np.arange(cells.size), cells] = 1.0
    return h


def noise_covariance(batch: MeasurementBatch) -> np.ndarray:
    """Block-diagonal V = Diag{v^1 I, ..., v^I I} matching :func:`materialize_H`."""
    return np.diag(np.concatenate([np.full(c.size, v) for c, v in zip(batch.coverage, batch.variances)])
                   if batch.coverage else np.zeros(0))
