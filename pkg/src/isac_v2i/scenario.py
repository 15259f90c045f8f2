"""Ground-truth vehicle motion, scatterer layout and the tracker's motion model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import SPEED_OF_LIGHT, SimConfig


class StateVector(NamedTuple):
    """Kinematic state of the communication receiver (CR) seen from the RSU."""

    phi: float  # rad, in (0, pi)
    d: float  # m
    v: float  # m/s


@dataclass(frozen=True)
class VehicleGeometry:
    length: float = 5.0
    width: float = 2.0
    cr_offset: tuple[float, float] = (1.5, 0.5)
    K: int = 8
    scatterer_offsets: np.ndarray | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.scatterer_offsets is None:
            object.__setattr__(self, "scatterer_offsets", scatterer_layout(self))
        offsets = np.asarray(self.scatterer_offsets, dtype=float)
        if offsets.shape != (self.K, 2):
            raise ValueError(f"expected {self.K} scatterer offsets, got shape {offsets.shape}")
        tol = 1e-12
        if (np.any(np.abs(offsets[:, 0]) > self.length / 2 + tol)
                or np.any(np.abs(offsets[:, 1]) > self.width / 2 + tol)):
            raise ValueError("scatterer offsets must lie inside the vehicle rectangle")
        object.__setattr__(self, "scatterer_offsets", offsets)

    @classmethod
    def from_config(cls, cfg: SimConfig, rng: np.random.Generator | None = None):
        geom = cls(cfg.length, cfg.width, (cfg.delta_x, cfg.delta_y), cfg.K)
        if cfg.layout == "random":
            if rng is None:
                raise ValueError("random layout needs a random generator")
            offsets = scatterer_layout(geom, rng)
            geom = cls(cfg.length, cfg.width, (cfg.delta_x, cfg.delta_y), cfg.K, offsets)
        return geom


def _grid_shape(K: int, length: float, width: float) -> tuple[int, int]:
    # most square-like cells among exact factorizations, longest side along the vehicle
    best = (K, 1)
    best_cost = math.inf
    for cols in range(1, K + 1):
        if K % cols:
            continue
        rows = K // cols
        cost = abs(math.log((length / cols) / (width / rows)))
        if cost < best_cost - 1e-12:
            best, best_cost = (cols, rows), cost
    return best


def scatterer_layout(geom: VehicleGeometry, rng: np.random.Generator | None = None) -> np.ndarray:
    """Local (x, y) scatterer offsets relative to the centroid.

    Without ``rng`` this is a cell-centred grid (4 x 2 for K = 8 on a 5 m x 2 m
    body); with ``rng`` the points are drawn uniformly over the rectangle.
    """
    K = geom.K
    if rng is not None:
        return np.column_stack([
            rng.uniform(-geom.length / 2, geom.length / 2, K),
            rng.uniform(-geom.width / 2, geom.width / 2, K),
        ])
    cols, rows = _grid_shape(K, geom.length, geom.width)
    xs = (np.arange(cols) + 0.5) * geom.length / cols - geom.length / 2
    ys = (np.arange(rows) + 0.5) * geom.width / rows - geom.width / 2
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True)
class GroundTruth:
    """Per-epoch truth.  Arrays are indexed ``[epoch]`` or ``[epoch, scatterer]``."""

    t: np.ndarray
    centroid: np.ndarray  # (N, 2)
    cr: np.ndarray  # (N, 2)
    state: np.ndarray  # (N, 3): phi, d, v of the CR
    scatterers: np.ndarray  # (N, K, 2) global positions
    theta: np.ndarray  # (N, K)
    dist: np.ndarray  # (N, K)
    doppler: np.ndarray  # (N, K), Hz
    rcs: np.ndarray  # (N, K) complex
    offsets: np.ndarray  # (K, 2)

    @property
    def n_epochs(self) -> int:
        return len(self.t)

    def epoch(self, n: int) -> "EpochTruth":
        return EpochTruth(self.state[n], self.scatterers[n], self.theta[n], self.dist[n],
                          self.doppler[n], self.rcs[n], self.offsets)


@dataclass(frozen=True)
class TruthBatch:
    """Ground truth of ``R`` runs stacked along a leading axis."""

    t: np.ndarray  # (N,)
    state: np.ndarray  # (R, N, 3)
    theta: np.ndarray  # (R, N, K)
    dist: np.ndarray  # (R, N, K)
    rcs: np.ndarray  # (R, N, K)
    offsets: np.ndarray  # (R, K, 2)

    @classmethod
    def stack(cls, truths) -> "TruthBatch":
        truths = list(truths)
        if not truths:
            raise ValueError("need at least one run")
        return cls(truths[0].t,
                   np.stack([g.state for g in truths]),
                   np.stack([g.theta for g in truths]),
                   np.stack([g.dist for g in truths]),
                   np.stack([g.rcs for g in truths]),
                   np.stack([g.offsets for g in truths]))

    @property
    def runs(self) -> int:
        return self.state.shape[0]

    @property
    def n_epochs(self) -> int:
        return len(self.t)


class EpochTruth(NamedTuple):
    state: np.ndarray
    positions: np.ndarray
    theta: np.ndarray
    dist: np.ndarray
    doppler: np.ndarray
    rcs: np.ndarray
    offsets: np.ndarray


def polar(xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Angle in [0, pi] measured from the array axis and range, for points with y >= 0."""
    return np.arctan2(xy[..., 1], xy[..., 0]), np.hypot(xy[..., 0], xy[..., 1])


def generate_trajectory(cfg: SimConfig, rng: np.random.Generator,
                        geom: VehicleGeometry | None = None) -> GroundTruth:
    if geom is None:
        geom = VehicleGeometry.from_config(cfg, rng)
    n = cfg.n_epochs
    t = np.arange(n) * cfg.delta_T
    rsu = np.array([cfg.rsu_x, cfg.rsu_y])
    centroid = np.column_stack([cfg.x0 - cfg.v * t, np.full(n, cfg.y0)])
    rel_centroid = centroid - rsu
    cr = rel_centroid + np.asarray(geom.cr_offset)
    scat = rel_centroid[:, None, :] + geom.scatterer_offsets[None, :, :]

    if np.any(cr[:, 1] <= 0) or np.any(scat[..., 1] <= 0):
        raise ValueError("trajectory reaches the array axis (angle outside (0, pi) or d = 0)")

    phi, d = polar(cr)
    theta, dist = polar(scat)
    doppler = 2 * cfg.v * np.cos(theta) * cfg.f_c / SPEED_OF_LIGHT
    rcs = (rng.standard_normal((n, geom.K)) + 1j * rng.standard_normal((n, geom.K))) / math.sqrt(2)
    state = np.column_stack([phi, d, np.full(n, cfg.v)])
    return GroundTruth(t, centroid, centroid + np.asarray(geom.cr_offset), state, scat + rsu,
                       theta, dist, doppler, rcs, geom.scatterer_offsets)


def evolve_state(x, dt: float) -> np.ndarray:
    """One-step constant-velocity prediction of (phi, d, v) for motion along -x.

    ``x`` may carry leading batch axes.
    """
    x = np.asarray(x, dtype=float)
    phi, d, v = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([phi + v * dt * np.sin(phi) / d, d - v * dt * np.cos(phi), v], axis=-1)
