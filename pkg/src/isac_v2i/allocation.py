"""Wide/narrow time split of each block (ISAC-AB).

The sensing fraction ``rho`` trades matched-filter gain of the wide beam
against airtime on the high-gain narrow beam.  Per epoch the relaxed
objective

    f(rho) = rho * u + (1 - rho) * erf(sqrt(rho) * v) * w

is concave on (0, 1], so its maximizer is 1 when f'(1) >= 0 and otherwise
the single root of f' in (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .array import HALF_HPBW_FACTOR, BeamConfig
from .config import SimConfig
from .metrics import EpochLog, achievable_rate, rate_components
from .scenario import GroundTruth, TruthBatch
from .sensing import sense_batch
from .tracking import (clamp_angle, draw_noise, ekf_predict, initial_state, log_filter, process_noise,
                       run_single, sense_cr_batch, update_or_coast, wide_beam_batch)
from .uncertainty import jacobians_batch

SQRT_PI = math.sqrt(math.pi)
# stand-in for v = delta / (sqrt(2) sigma_phi) when sigma_phi = 0; erf saturates long before
V_CAP = 1e6


@dataclass(frozen=True)
class RhoProblem:
    u: float  # wide-beam rate, bits/s/Hz
    v: float  # delta / (sqrt(2) sigma_phi)
    w: float  # aligned narrow-beam rate, bits/s/Hz

    def __post_init__(self):
        if self.u < 0 or self.v < 0 or self.w < 0:
            raise ValueError("u, v, w must be nonnegative")


def narrow_halfbeamwidth(n_narrow: int, phi_pred: float) -> float:
    s = math.sin(phi_pred)
    if s <= 0:
        raise ValueError("half-beamwidth undefined for phi in {0, pi}")
    return HALF_HPBW_FACTOR / (n_narrow * s)


def alignment_probability(delta: float, sigma_phi: float, rho: float) -> float:
    """P(|phi_hat - phi| < delta) for phi_hat ~ N(phi, sigma_phi^2 / rho)."""
    if sigma_phi == 0:
        return 1.0
    return math.erf(math.sqrt(rho / 2) * delta / sigma_phi)


def objective(rho, prob: RhoProblem):
    rho = np.asarray(rho, dtype=float)
    out = rho * prob.u + (1 - rho) * erf(np.sqrt(rho) * prob.v) * prob.w
    return out if out.ndim else float(out)


def objective_derivative(rho, prob: RhoProblem):
    out = _derivative_array(np.asarray(rho, dtype=float), prob.u, prob.v, prob.w)
    return out if out.ndim else float(out)


def _derivative_scalar(rho: float, u: float, v: float, w: float) -> float:
    sq = math.sqrt(rho)
    return u + w * v / SQRT_PI * (1 / sq - sq) * math.exp(-rho * v * v) - w * math.erf(sq * v)


def optimize_rho(prob: RhoProblem, ftol: float = 1e-10, xtol: float = 1e-12) -> float:
    """KKT solution: 1 if f'(1) >= 0, else bisection on the decreasing f'."""
    u, v, w = prob.u, prob.v, prob.w
    if _derivative_scalar(1.0, u, v, w) >= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        g = _derivative_scalar(mid, u, v, w)
        if abs(g) < ftol:
            return mid
        if g > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def predicted_angle_std_batch(pred_x, n_t, steer, cfg: SimConfig, offsets) -> np.ndarray:
    """Fused-angle standard deviation expected at full sensing time (rho = 1).

    The vehicle is placed at each run's predicted CR state with unit-power
    scatterers; runs where no scatterer would be illuminated get ``inf``.
    """
    pred_x = np.atleast_2d(pred_x)
    R = len(pred_x)
    phi, d = pred_x[:, 0], pred_x[:, 1]
    offset = np.array([cfg.delta_x, cfg.delta_y])
    offsets = np.broadcast_to(offsets, (R,) + np.shape(offsets)[-2:])
    cr = np.stack([d * np.cos(phi), d * np.sin(phi)], axis=-1)
    pos = cr[:, None, :] - offset + offsets
    theta = np.arctan2(pos[..., 1], pos[..., 0])
    dist = np.hypot(pos[..., 0], pos[..., 1])
    mb = sense_batch(theta, dist, np.ones(theta.shape, dtype=complex), offsets, pred_x[:, 2],
                     n_t, steer, 1.0, cfg, None, noise_scale=0.0)
    var = mb.nominal_variances
    g_theta, g_d, _, _, r2 = jacobians_batch(mb.theta_hat, mb.d_hat, offset, mb.offsets, mb.mask)
    with np.errstate(invalid="ignore"):
        out = np.sqrt((g_theta ** 2 * var[..., 0] + g_d ** 2 * var[..., 1]).sum(axis=-1))
    return np.where((mb.count > 0) & np.isfinite(out), out, math.inf)


def predicted_angle_std(pred_x, beam: BeamConfig, cfg: SimConfig, offsets: np.ndarray) -> float:
    return float(predicted_angle_std_batch(np.asarray(pred_x, dtype=float)[None], beam.n_antennas,
                                           beam.steer_angle, cfg, offsets)[0])


def rho_terms(pred_x, n_t, cfg: SimConfig, sigma_phi):
    """(u, v, w, delta) of the relaxed per-epoch problem, built from the prediction
    only (unit beam gains); broadcasts over runs."""
    pred_x = np.asarray(pred_x, dtype=float)
    alpha2 = (cfg.alpha_ref / np.maximum(pred_x[..., 1], 1e-3)) ** 2
    u = achievable_rate(cfg.p_n * alpha2 * n_t / cfg.sigma2_C)
    w = achievable_rate(cfg.p_n * alpha2 * cfg.N_t_narrow / cfg.sigma2_C)
    delta = HALF_HPBW_FACTOR / (cfg.N_t_narrow * np.sin(clamp_angle(pred_x[..., 0])))
    sigma_phi = np.asarray(sigma_phi, dtype=float)
    with np.errstate(divide="ignore"):
        v = np.where(sigma_phi > 0, delta / (math.sqrt(2) * sigma_phi), V_CAP)
    return u, np.minimum(v, V_CAP), w, delta


def rho_problem(pred_x, beam: BeamConfig, cfg: SimConfig, sigma_phi: float) -> tuple[RhoProblem, float]:
    u, v, w, delta = rho_terms(pred_x, beam.n_antennas, cfg, sigma_phi)
    return RhoProblem(float(u), float(v), float(w)), float(delta)


def optimize_rho_batch(u, v, w, xtol: float = 1e-12) -> np.ndarray:
    """Vectorized ``optimize_rho`` (bisection to ``xtol`` on every row)."""
    u, v, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, w)))
    rho = np.ones(u.shape)
    todo = _derivative_array(1.0, u, v, w) < 0
    if not np.any(todo):
        return rho
    u, v, w = u[todo], v[todo], w[todo]
    lo, hi = np.zeros(u.shape), np.ones(u.shape)
    for _ in range(int(math.ceil(math.log2(1 / xtol)))):
        mid = 0.5 * (lo + hi)
        up = _derivative_array(mid, u, v, w) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    rho[todo] = 0.5 * (lo + hi)
    return rho


def _derivative_array(rho, u, v, w):
    sq = np.sqrt(rho)
    return u + w * v / SQRT_PI * (1 / sq - sq) * np.exp(-rho * v * v) - w * erf(sq * v)


def simulate_isac_ab(cfg: SimConfig, truth: TruthBatch, rngs) -> EpochLog:
    """Alternating wide/narrow beam scheme for a batch of runs.

    Per epoch: predict, size the wide beam, choose rho from the predicted
    geometry, sense for a fraction rho of the block, update, then serve the
    CR on the narrow beam steered at the updated angle for the rest.
    """
    R, N = truth.runs, truth.n_epochs
    init, noise = draw_noise(rngs, N, truth.theta.shape[-1])
    log = EpochLog.empty("isac-ab", N, R)
    Qw = process_noise(cfg)
    post = initial_state(truth.state[:, 0], cfg, std_normals=init)
    for n in range(N):
        pred = post if n == 0 else ekf_predict(post, Qw, cfg.delta_T, cfg.published_jacobian)
        n_t, steer = wide_beam_batch(pred.x, cfg)
        sigma_phi = predicted_angle_std_batch(pred.x, n_t, steer, cfg, truth.offsets)
        u, v, w, delta = rho_terms(pred.x, n_t, cfg, sigma_phi)
        rho = optimize_rho_batch(u, v, w)

        state = truth.state[:, n]
        obs = sense_cr_batch(truth.theta[:, n], truth.dist[:, n], truth.rcs[:, n], truth.offsets,
                             state[:, 2], n_t, steer, rho, cfg, noise[:, n])
        post = update_or_coast(pred, obs, cfg)
        log_filter(log, n, truth, pred, post, obs, n_t)

        phi, d = state[:, 0], state[:, 1]
        narrow = clamp_angle(post.x[:, 0])
        aligned = np.abs(narrow - phi) < delta
        r_wide, r_align = rate_components(phi, d, steer, n_t, narrow, cfg)
        log.record_rates(n, rho, r_wide, np.where(aligned, r_align, 0.0))
        log.r_obj[:, n] = rho * u + (1 - rho) * erf(np.sqrt(rho) * v) * w
        log.steer[:, n] = np.where(rho < 1, narrow, steer)
        log.aligned[:, n] = aligned
    return log


def run_isac_ab(cfg: SimConfig, rng: np.random.Generator, truth: GroundTruth | None = None) -> EpochLog:
    """One Monte Carlo run of the alternating wide/narrow beam scheme."""
    return run_single(simulate_isac_ab, cfg, rng, truth)
