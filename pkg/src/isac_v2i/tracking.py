"""Extended Kalman filter for the CR state and the dynamic-beamwidth (ISAC-DB) tracker.

Filter functions broadcast over leading run axes, so one call advances a
whole batch of Monte Carlo runs.  ``run_*`` functions simulate one run and
``simulate_*`` functions advance a batch in lockstep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .array import HALF_HPBW_FACTOR, BeamConfig, antennas_for_coverage, antennas_for_coverage_batch
from .config import SimConfig
from .metrics import EpochLog, nees, rate_components
from .scenario import EpochTruth, GroundTruth, TruthBatch, evolve_state, generate_trajectory
from .sensing import (CrMeasurement, DegenerateGeometryError, MeasurementBatch, SingularGeometryError,
                      branch_atan_batch, cr_measurement, fuse_batch, fuse_centroid, mle_velocity,
                      mle_velocity_batch, sense_batch, synthesize_measurements)
from .uncertainty import covariance_batch, measurement_covariance

ANGLE_MARGIN = 1e-6


class InnovationError(np.linalg.LinAlgError):
    pass


@dataclass
class EkfState:
    x: np.ndarray  # (..., 3)
    M: np.ndarray  # (..., 3, 3)


def jacobian_h(x, dt: float, published_form: bool = False) -> np.ndarray:
    """Jacobian of ``evolve_state`` at ``x`` (shape ``(..., 3, 3)``).

    ``published_form=True`` reproduces the published matrix, which leaves out the
    d(phi)/d(v) = dt sin(phi) / d entry.
    """
    x = np.asarray(x, dtype=float)
    phi, d, v = x[..., 0], x[..., 1], x[..., 2]
    s, c = np.sin(phi), np.cos(phi)
    zero, one = np.zeros_like(phi), np.ones_like(phi)
    return np.stack([
        np.stack([1 + v * dt * c / d, -v * dt * s / d ** 2, zero if published_form else dt * s / d], -1),
        np.stack([v * dt * s, one, -dt * c], -1),
        np.stack([zero, zero, one], -1),
    ], -2)


def _symmetric(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def ekf_predict(s: EkfState, Qw: np.ndarray, dt: float, published_form: bool = False) -> EkfState:
    H = jacobian_h(s.x, dt, published_form)
    M = H @ s.M @ np.swapaxes(H, -1, -2) + Qw
    return EkfState(evolve_state(s.x, dt), _symmetric(M))


def ekf_update(pred: EkfState, y, Qz, joseph: bool = False) -> EkfState:
    """Measurement update for the identity observation model y = x + z.

    ``Qz`` is either the diagonal (same shape as ``y``) or a full covariance.
    """
    Qz = np.asarray(Qz, dtype=float)
    if Qz.ndim == np.ndim(pred.x):
        Qz = Qz[..., None] * np.eye(3)
    S = pred.M + Qz
    try:
        K = np.swapaxes(np.linalg.solve(np.swapaxes(S, -1, -2), np.swapaxes(pred.M, -1, -2)), -1, -2)
    except np.linalg.LinAlgError as exc:
        raise InnovationError("innovation covariance is singular") from exc
    if not np.all(np.isfinite(K)):
        raise InnovationError("innovation covariance is singular")
    x = pred.x + (K @ (np.asarray(y, dtype=float) - pred.x)[..., None])[..., 0]
    I_K = np.eye(3) - K
    if joseph:
        M = I_K @ pred.M @ np.swapaxes(I_K, -1, -2) + K @ Qz @ np.swapaxes(K, -1, -2)
    else:
        M = I_K @ pred.M
    return EkfState(x, _symmetric(M))


def process_noise(cfg: SimConfig) -> np.ndarray:
    return np.diag([cfg.sigma_phi_bar ** 2, cfg.sigma_d_bar ** 2, cfg.sigma_v_bar ** 2])


def initial_std(cfg: SimConfig) -> np.ndarray:
    return cfg.init_scale * np.array([cfg.sigma_phi_bar, cfg.sigma_d_bar, cfg.sigma_v_bar])


def initial_state(x_true, cfg: SimConfig, rng: np.random.Generator | None = None,
                  std_normals=None) -> EkfState:
    """Beam-training initialization: truth plus Gaussian error at ``init_scale``
    times the process-noise standard deviations.

    ``std_normals`` (shape of ``x_true``) replaces the draw from ``rng``.
    """
    std = initial_std(cfg)
    x = np.array(x_true, dtype=float)
    if not cfg.zero_noise:
        z = rng.standard_normal(x.shape) if std_normals is None else np.asarray(std_normals)
        x = x + std * z
    M = np.broadcast_to(np.diag(std ** 2), x.shape[:-1] + (3, 3)).copy()
    return EkfState(x, M)


def clamp_angle(phi):
    out = np.clip(phi, ANGLE_MARGIN, math.pi - ANGLE_MARGIN)
    return float(out) if np.ndim(out) == 0 else out


def sense_cr(truth: EpochTruth, beam: BeamConfig, cfg: SimConfig, rho: float,
             rng: np.random.Generator | None, std_normals=None) -> CrMeasurement | None:
    """Wide-beam sensing stage: scatterer measurements fused into a CR observation.

    Returns ``None`` when nothing usable comes back (the track then coasts).
    """
    noise_scale = 0.0 if cfg.zero_noise else 1.0
    meas = synthesize_measurements(truth, beam, cfg, rho, rng, noise_scale, std_normals)
    if len(meas) == 0:
        return None
    offset = (cfg.delta_x, cfg.delta_y)
    try:
        v_hat = mle_velocity(meas, cfg.f_c)
        Q = measurement_covariance(meas, offset, cfg.f_c, cfg.coarse_velocity_variance)
        y = cr_measurement(fuse_centroid(meas), v_hat, offset, Q)
    except (DegenerateGeometryError, SingularGeometryError):
        return None
    if not (np.all(np.isfinite(Q)) and math.isfinite(y.phi) and math.isfinite(y.d)):
        return None
    return y


@dataclass
class CrBatch:
    """Fused CR observations of a batch; rows with ``valid == False`` coast."""

    y: np.ndarray  # (R, 3)
    Q: np.ndarray  # (R, 3) diagonal covariance
    valid: np.ndarray  # (R,)
    meas: MeasurementBatch


def sense_cr_batch(theta, dist, rcs, offsets, v, n_t, steer, rho, cfg: SimConfig,
                   std_normals, offset=None) -> CrBatch:
    """Batched ``sense_cr``: sense, fuse, fit the speed and attach the variance approximation.

    ``offset`` is the receiver's offset from the centroid (the configured CR
    offset by default).
    """
    noise_scale = 0.0 if cfg.zero_noise else 1.0
    mb = sense_batch(theta, dist, rcs, offsets, v, n_t, steer, rho, cfg, std_normals, noise_scale)
    centroid = fuse_batch(mb)
    v_hat = mle_velocity_batch(mb, cfg.f_c)
    with np.errstate(divide="ignore"):
        weights = np.where(mb.mask, 1.0 / mb.nominal_variances[..., 2], 0.0)
    if offset is None:
        offset = (cfg.delta_x, cfg.delta_y)
    Q = covariance_batch(mb.theta_hat, mb.d_hat, mb.mu_hat, mb.variances, weights, offset, cfg.f_c,
                         mb.offsets, mb.mask, cfg.coarse_velocity_variance)
    X = centroid[:, 0] + offset[0]
    Y = centroid[:, 1] + offset[1]
    y = np.stack([branch_atan_batch(Y, X), np.hypot(X, Y), v_hat], axis=-1)
    valid = (mb.count > 0) & np.all(np.isfinite(y), axis=-1) & np.all(np.isfinite(Q), axis=-1)
    return CrBatch(y, Q, valid, mb)


def wide_beam(pred_x, cfg: SimConfig) -> BeamConfig:
    phi = clamp_angle(float(pred_x[0]))
    d = max(float(pred_x[1]), 1e-3)
    n_t = antennas_for_coverage(d, phi, cfg.delta_d, cfg.N_t_max)
    return BeamConfig(n_t, phi, cfg.N_r)


def wide_beam_batch(pred_x, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Antenna counts and steering angles of the coverage-sized wide beams."""
    phi = clamp_angle(pred_x[..., 0])
    d = np.maximum(pred_x[..., 1], 1e-3)
    return antennas_for_coverage_batch(d, phi, cfg.delta_d, cfg.N_t_max), phi


def update_or_coast(pred: EkfState, obs: CrBatch, cfg: SimConfig) -> EkfState:
    """EKF update on the rows with a valid observation; the rest keep the prediction."""
    if np.all(obs.valid):
        return ekf_update(pred, obs.y, obs.Q, cfg.joseph)
    x, M = pred.x.copy(), pred.M.copy()
    rows = obs.valid
    if np.any(rows):
        upd = ekf_update(EkfState(pred.x[rows], pred.M[rows]), obs.y[rows], obs.Q[rows], cfg.joseph)
        x[rows], M[rows] = upd.x, upd.M
    return EkfState(x, M)


def draw_noise(rngs, n_epochs: int, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-run standard normals: the initialization error ``(R, 3)`` then the
    sensing noise ``(R, N, K, 3)``, drawn in that order from each run's stream."""
    init, sensing = [], []
    for rng in rngs:
        init.append(rng.standard_normal(3))
        sensing.append(rng.standard_normal((n_epochs, K, 3)))
    return np.array(init), np.array(sensing)


def log_filter(log: EpochLog, n: int, truth: TruthBatch, pred: EkfState, post: EkfState,
               obs: CrBatch | None, n_t) -> None:
    log.t[n] = truth.t[n]
    log.truth[:, n] = truth.state[:, n]
    log.pred[:, n] = pred.x
    log.est[:, n] = post.x
    log.n_t[:, n] = n_t
    if obs is not None:
        log.coasted[:, n] = ~obs.valid
        log.meas[:, n] = np.where(obs.valid[:, None], obs.y, np.nan)
        log.meas_var[:, n] = np.where(obs.valid[:, None], obs.Q, np.nan)
    err = post.x - truth.state[:, n]
    try:
        log.nees[:, n] = nees(err, post.M)
    except np.linalg.LinAlgError:
        for r in range(len(err)):
            try:
                log.nees[r, n] = nees(err[r], post.M[r])
            except np.linalg.LinAlgError:
                log.nees[r, n] = np.nan


def run_single(simulate, cfg: SimConfig, rng: np.random.Generator,
               truth: GroundTruth | None = None) -> EpochLog:
    """Run a batch simulator on one run; the truth (if not given) comes from ``rng`` first."""
    if truth is None:
        truth = generate_trajectory(cfg, rng)
    return simulate(cfg, TruthBatch.stack([truth]), [rng]).run(0)


def simulate_isac_db(cfg: SimConfig, truth: TruthBatch, rngs) -> EpochLog:
    """Dynamic-beamwidth scheme for a batch of runs (one random stream per run).

    Every epoch: predict, size the beam to cover the vehicle at the predicted
    range, sense with the whole block, update, and serve the CR on that beam.
    """
    R, N = truth.runs, truth.n_epochs
    init, noise = draw_noise(rngs, N, truth.theta.shape[-1])
    log = EpochLog.empty("isac-db", N, R)
    Qw = process_noise(cfg)
    post = initial_state(truth.state[:, 0], cfg, std_normals=init)
    for n in range(N):
        pred = post if n == 0 else ekf_predict(post, Qw, cfg.delta_T, cfg.published_jacobian)
        n_t, steer = wide_beam_batch(pred.x, cfg)
        state = truth.state[:, n]
        obs = sense_cr_batch(truth.theta[:, n], truth.dist[:, n], truth.rcs[:, n], truth.offsets,
                             state[:, 2], n_t, steer, 1.0, cfg, noise[:, n])
        post = update_or_coast(pred, obs, cfg)
        log_filter(log, n, truth, pred, post, obs, n_t)

        phi, d = state[:, 0], state[:, 1]
        r_wide, _ = rate_components(phi, d, steer, n_t, None, cfg)
        log.record_rates(n, 1.0, r_wide, 0.0)
        log.steer[:, n] = steer
        log.aligned[:, n] = np.abs(steer - phi) < HALF_HPBW_FACTOR / (n_t * np.sin(phi))
    return log


def run_isac_db(cfg: SimConfig, rng: np.random.Generator, truth: GroundTruth | None = None) -> EpochLog:
    """One Monte Carlo run of the dynamic-beamwidth scheme."""
    return run_single(simulate_isac_db, cfg, rng, truth)
