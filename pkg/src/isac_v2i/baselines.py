"""Comparison trackers: an EKF that treats the vehicle as one point scatterer, and a
simplified auxiliary-beam-pair (ABP) tracker driven by the receiver's pilot feedback."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .array import HALF_HPBW_FACTOR, beam_gain
from .config import ConfigError, SimConfig
from .metrics import EpochLog, nees, rate_components
from .scenario import GroundTruth, TruthBatch
from .tracking import (clamp_angle, draw_noise, ekf_predict, initial_state, initial_std,
                       process_noise, run_single, sense_cr_batch, update_or_coast)


@dataclass(frozen=True)
class BaselineConfig:
    fixed_antennas: int = 128
    half_range: float = math.pi / 32  # ABP half search range, rad
    pilot_gain: float = 1000.0  # ABP pilot processing gain (linear)
    point_scatterer: int = -1  # tracked scatterer; -1 draws one per run

    def __post_init__(self):
        if self.fixed_antennas < 1:
            raise ValueError("fixed_antennas must be >= 1")
        if not self.half_range > 0:
            raise ValueError("half search range must be positive")
        if not self.pilot_gain > 0:
            raise ValueError("pilot gain must be positive")

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "BaselineConfig":
        return cls(cfg.fixed_antennas, cfg.abp_half_range, cfg.abp_pilot_gain, cfg.point_scatterer)


def _scatterer_choice(cfg: SimConfig, rngs, K: int) -> np.ndarray:
    if K < 2:
        raise ConfigError("point-target baseline needs K >= 2 scatterers")
    if cfg.point_scatterer >= 0:
        if cfg.point_scatterer >= K:
            raise ConfigError(f"point_scatterer must be < K = {K}")
        return np.full(len(rngs), cfg.point_scatterer)
    return np.array([rng.integers(K) for rng in rngs])


def simulate_ekf_point(cfg: SimConfig, truth: TruthBatch, rngs) -> EpochLog:
    """Point-target EKF: track one scatterer with a fixed narrow beam, serve the CR on it.

    The logged truth is the CR state, so ``steer - truth`` is the pointing
    error the CR actually sees; NEES is taken against the tracked scatterer.
    """
    base = BaselineConfig.from_config(cfg)
    R, N = truth.runs, truth.n_epochs
    K = truth.theta.shape[-1]
    init, noise = draw_noise(rngs, N, K)
    k = _scatterer_choice(cfg, rngs, K)
    rows = np.arange(R)
    theta, dist = truth.theta[rows, :, k], truth.dist[rows, :, k]  # (R, N)
    target = np.stack([theta, dist, truth.state[:, :, 2]], axis=-1)
    rcs = truth.rcs[rows, :, k]
    no_offset = np.zeros((R, 1, 2))

    log = EpochLog.empty("ekf-point", N, R)
    Qw = process_noise(cfg)
    post = initial_state(target[:, 0], cfg, std_normals=init)
    n_fixed = np.full(R, base.fixed_antennas)
    for n in range(N):
        pred = post if n == 0 else ekf_predict(post, Qw, cfg.delta_T, cfg.published_jacobian)
        steer = clamp_angle(pred.x[:, 0])
        obs = sense_cr_batch(theta[:, n, None], dist[:, n, None], rcs[:, n, None], no_offset,
                             target[:, n, 2], n_fixed, steer, 1.0, cfg,
                             noise[rows, n, k][:, None], offset=(0.0, 0.0))
        post = update_or_coast(pred, obs, cfg)

        state = truth.state[:, n]
        log.t[n] = truth.t[n]
        log.truth[:, n] = state
        log.pred[:, n] = pred.x
        log.est[:, n] = post.x
        log.n_t[:, n] = base.fixed_antennas
        log.coasted[:, n] = ~obs.valid
        log.meas[:, n] = np.where(obs.valid[:, None], obs.y, np.nan)
        log.meas_var[:, n] = np.where(obs.valid[:, None], obs.Q, np.nan)
        try:
            log.nees[:, n] = nees(post.x - target[:, n], post.M)
        except np.linalg.LinAlgError:
            pass

        phi, d = state[:, 0], state[:, 1]
        r, _ = rate_components(phi, d, steer, base.fixed_antennas, None, cfg)
        log.record_rates(n, 1.0, r, 0.0)
        log.steer[:, n] = steer
        log.aligned[:, n] = np.abs(steer - phi) < HALF_HPBW_FACTOR / (base.fixed_antennas * np.sin(phi))
    return log


def run_ekf_point(cfg: SimConfig, rng: np.random.Generator, truth: GroundTruth | None = None) -> EpochLog:
    """One run of the point-target EKF baseline."""
    return run_single(simulate_ekf_point, cfg, rng, truth)


def _dirichlet_power(x, n: int):
    return np.abs(beam_gain(np.arccos(np.clip(x, -1, 1)), math.pi / 2, n)) ** 2


@lru_cache(maxsize=16)
def abp_table(n: int, points: int = 4001) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude-comparison ratio against the direction-cosine offset of the target
    from the pair centre, over the unambiguous region.

    The pair sits at +-1/n in cos(angle); the ratio is monotone until the
    target reaches the first null of the far beam, 1/n beyond the near one.
    """
    du = 1.0 / n
    span = 2.0 / n - du
    x = np.linspace(-span, span, points)
    p_plus = _dirichlet_power(x - du, n)
    p_minus = _dirichlet_power(x + du, n)
    ratio = (p_plus - p_minus) / (p_plus + p_minus)
    return ratio, x


def abp_estimate(ratio, centre, n: int, half_range: float) -> np.ndarray:
    """Invert the pair ratio around ``centre`` and clamp to the search window."""
    table_ratio, table_x = abp_table(n)
    offset = np.interp(ratio, table_ratio, table_x)
    u = np.clip(np.cos(centre) + offset, -1.0, 1.0)
    phi = np.clip(np.arccos(u), centre - half_range, centre + half_range)
    return clamp_angle(phi)


def abp_pair(centre, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Steering angles of the auxiliary beams, +-1/n in cos(angle) about ``centre``."""
    u = np.cos(centre)
    return np.arccos(np.clip(u + 1.0 / n, -1, 1)), np.arccos(np.clip(u - 1.0 / n, -1, 1))


def simulate_abp(cfg: SimConfig, truth: TruthBatch, rngs) -> EpochLog:
    """Simplified ABP tracking of the CR angle with ideal, zero-latency feedback.

    Each block the RSU sends a pilot on both beams of a pair centred on the
    last estimate; the CR's received powers give the new estimate, which also
    steers the data beam.  A target that leaves the unambiguous region is
    mis-estimated and the track walks away.
    """
    base = BaselineConfig.from_config(cfg)
    n_ant = base.fixed_antennas
    R, N = truth.runs, truth.n_epochs
    init, _ = draw_noise(rngs, N, truth.theta.shape[-1])
    pilot = np.array([rng.standard_normal((N, 2, 2)) for rng in rngs])  # (R, N, beam, re/im)
    scale = 0.0 if cfg.zero_noise else 1.0
    pilot = scale * math.sqrt(cfg.sigma2_C / 2) * (pilot[..., 0] + 1j * pilot[..., 1])

    log = EpochLog.empty("abp", N, R)
    est = clamp_angle(truth.state[:, 0, 0] + scale * initial_std(cfg)[0] * init[:, 0])
    amp = math.sqrt(cfg.p_n * base.pilot_gain * n_ant)
    for n in range(N):
        centre = est
        state = truth.state[:, n]
        phi, d = state[:, 0], state[:, 1]
        plus, minus = abp_pair(centre, n_ant)
        alpha = cfg.alpha_ref / d
        y_plus = amp * alpha * beam_gain(phi, plus, n_ant) + pilot[:, n, 0]
        y_minus = amp * alpha * beam_gain(phi, minus, n_ant) + pilot[:, n, 1]
        p_plus, p_minus = np.abs(y_plus) ** 2, np.abs(y_minus) ** 2
        with np.errstate(invalid="ignore"):
            ratio = np.nan_to_num((p_plus - p_minus) / (p_plus + p_minus))
        est = abp_estimate(ratio, centre, n_ant, base.half_range)

        log.t[n] = truth.t[n]
        log.truth[:, n] = state
        log.pred[:, n, 0] = centre
        log.est[:, n, 0] = est
        log.meas[:, n, 0] = est
        log.n_t[:, n] = n_ant
        r, _ = rate_components(phi, d, est, n_ant, None, cfg)
        log.record_rates(n, 1.0, r, 0.0)
        log.steer[:, n] = est
        log.aligned[:, n] = np.abs(est - phi) < HALF_HPBW_FACTOR / (n_ant * np.sin(phi))
    return log


def run_abp(cfg: SimConfig, rng: np.random.Generator, truth: GroundTruth | None = None) -> EpochLog:
    """One run of the simplified ABP baseline."""
    return run_single(simulate_abp, cfg, rng, truth)
