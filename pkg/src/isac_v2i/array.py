"""Half-wavelength ULA: steering vectors, beam gain and beamwidth-driven antenna counts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# half-power beamwidth factor k0 for half-wavelength spacing
HPBW_FACTOR = 1.78
HALF_HPBW_FACTOR = 0.89


@dataclass(frozen=True)
class BeamConfig:
    n_antennas: int
    steer_angle: float
    n_r: int = 1

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")

    @property
    def kappa(self) -> float:
        """Radar array gain factor sqrt(N_t N_r)."""
        return math.sqrt(self.n_antennas * self.n_r)

    @property
    def kappa_c(self) -> float:
        """Downlink array gain factor sqrt(N_t)."""
        return math.sqrt(self.n_antennas)

    def gain(self, theta):
        return beam_gain(theta, self.steer_angle, self.n_antennas)


def steering_vector(theta: float, n: int) -> np.ndarray:
    m = np.arange(n)
    return np.exp(-1j * math.pi * m * math.cos(theta)) / math.sqrt(n)


def beam_gain(theta, phi, n):
    """a(theta)^H a(phi) for an ``n``-element array; all arguments broadcast.

    Closed form: with x = pi (cos theta - cos phi),
    a^H(theta) a(phi) = exp(j x (n-1)/2) sin(n x / 2) / (n sin(x / 2)).
    """
    x = math.pi * (np.cos(theta) - np.cos(phi))
    half = 0.5 * x
    s = np.sin(half)
    small = np.abs(s) < 1e-12
    if np.any(small):
        ratio = np.where(small, _dirichlet_limit(x, n), np.sin(n * half) / (n * np.where(small, 1.0, s)))
    else:
        ratio = np.sin(n * half) / (n * s)
    out = np.exp(1j * half * (n - 1)) * ratio
    return out if np.ndim(out) else complex(out)


def _dirichlet_limit(x, n):
    # x close to 2 pi k: sin(n x/2)/(n sin(x/2)) -> (-1)^{k (n-1)}
    k = np.round(x / (2 * math.pi))
    return np.where(np.mod(k * (n - 1), 2) == 0, 1.0, -1.0)


def half_power_beamwidth(n: int, phi: float) -> float:
    s = math.sin(phi)
    if s <= 0:
        raise ValueError("beamwidth undefined for phi in {0, pi}")
    return HPBW_FACTOR / (n * s)


def coverage_width(d: float, phi: float, n: int) -> float:
    s = math.sin(phi)
    if s <= 0:
        raise ValueError("coverage undefined for phi in {0, pi}")
    return 2 * d * math.tan(HALF_HPBW_FACTOR / (n * s))


def antennas_for_coverage(d_pred: float, phi_pred: float, delta_d: float, n_max: int) -> int:
    """Largest antenna count whose half-power beam still spans ``delta_d`` at ``d_pred``."""
    s = math.sin(phi_pred)
    denom = math.atan(delta_d / (2 * d_pred)) * s
    if denom <= 0:
        return int(n_max)
    n = HALF_HPBW_FACTOR / denom
    if not math.isfinite(n) or n >= n_max:
        return int(n_max)
    return max(1, int(math.floor(n)))


def antennas_for_coverage_batch(d_pred, phi_pred, delta_d: float, n_max: int) -> np.ndarray:
    """Vectorized ``antennas_for_coverage``."""
    denom = np.arctan(delta_d / (2 * np.asarray(d_pred, dtype=float))) * np.sin(phi_pred)
    with np.errstate(divide="ignore", invalid="ignore"):
        n = HALF_HPBW_FACTOR / denom
    n = np.where((denom > 0) & np.isfinite(n), np.floor(np.minimum(n, n_max)), n_max)
    return np.maximum(n, 1).astype(int)
