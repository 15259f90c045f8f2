"""First-order (delta-method) variances of the fused CR angle, distance and speed.

Functions accept one scatterer stack (shape ``(K,)``) or a batch of stacks
(shape ``(R, K)``).  The ``*_batch`` helpers also take a boolean ``mask``
selecting the scatterers that contribute in each row.
"""

from __future__ import annotations

import numpy as np

from .config import SPEED_OF_LIGHT
from .sensing import DEGENERATE_FLOOR, DegenerateGeometryError, SingularGeometryError


def _sums(theta, d, offset, offsets, mask):
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(d, dtype=float)
    if mask is None:
        mask = np.ones(theta.shape, dtype=bool)
    k = mask.sum(axis=-1)
    dX = np.where(mask, d * np.cos(theta), 0.0).sum(axis=-1) + k * offset[0]
    dY = np.where(mask, d * np.sin(theta), 0.0).sum(axis=-1) + k * offset[1]
    if offsets is not None:
        offsets = np.asarray(offsets, dtype=float)
        dX = dX - np.where(mask, offsets[..., 0], 0.0).sum(axis=-1)
        dY = dY - np.where(mask, offsets[..., 1], 0.0).sum(axis=-1)
    return theta, d, mask, k, dX, dY, dX * dX + dY * dY


def jacobians_batch(theta, d, offset, offsets=None, mask=None):
    """Angle and distance Jacobians of the fused CR position.

    Returns ``(g_theta, g_d, f_theta, f_d, r2)``.  Each Jacobian has the
    shape of ``theta`` and is zero on masked-out scatterers; ``r2`` is
    dX^2 + dY^2 per row, and rows where it vanishes come back as NaN.
    """
    theta, d, mask, k, dX, dY, r2 = _sums(theta, d, offset, offsets, mask)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_r2 = np.where(r2 > 0, 1.0 / r2, np.nan)[..., None]
        inv_r = np.where(r2 > 0, 1.0 / (k * np.sqrt(r2)), np.nan)[..., None]
    c, s = np.cos(theta), np.sin(theta)
    dX, dY = dX[..., None], dY[..., None]
    g_theta = np.where(mask, (d * c * dX + d * s * dY) * inv_r2, 0.0)
    g_d = np.where(mask, (s * dX - c * dY) * inv_r2, 0.0)
    f_theta = np.where(mask, (-d * s * dX + d * c * dY) * inv_r, 0.0)
    f_d = np.where(mask, (c * dX + s * dY) * inv_r, 0.0)
    return g_theta, g_d, f_theta, f_d, r2


def _check(r2):
    if not np.all(r2 > 0):
        raise SingularGeometryError("fused CR position coincides with the array")


def angle_jacobian(theta, d, offset, offsets=None) -> np.ndarray:
    """d(phi)/d[theta_1..theta_K, d_1..d_K] of the fused CR angle."""
    g_theta, g_d, _, _, r2 = jacobians_batch(theta, d, offset, offsets)
    _check(r2)
    return np.concatenate([g_theta, g_d], axis=-1)


def distance_jacobian(theta, d, offset, offsets=None) -> np.ndarray:
    """d(distance)/d[theta_1..theta_K, d_1..d_K] of the fused CR distance."""
    _, _, f_theta, f_d, r2 = jacobians_batch(theta, d, offset, offsets)
    _check(r2)
    return np.concatenate([f_theta, f_d], axis=-1)


def _quad(j_a, j_b, var_a, var_b, mask=None):
    var_a = np.asarray(var_a, dtype=float)
    var_b = np.asarray(var_b, dtype=float)
    if mask is not None:
        var_a = np.where(mask, var_a, 0.0)
        var_b = np.where(mask, var_b, 0.0)
    return (j_a * j_a * var_a + j_b * j_b * var_b).sum(axis=-1)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def angle_variance_approx(theta, d, var_theta, var_d, offset, offsets=None):
    g_theta, g_d, _, _, r2 = jacobians_batch(theta, d, offset, offsets)
    _check(r2)
    return _scalar(_quad(g_theta, g_d, var_theta, var_d))


def distance_variance_approx(theta, d, var_theta, var_d, offset, offsets=None):
    _, _, f_theta, f_d, r2 = jacobians_batch(theta, d, offset, offsets)
    _check(r2)
    return _scalar(_quad(f_theta, f_d, var_theta, var_d))


def velocity_variance_approx(theta, var_mu, f_c: float) -> float:
    """Inverse Fisher information of the Doppler-only speed fit at the given angles."""
    a = 2 * f_c * np.cos(np.asarray(theta, dtype=float)) / SPEED_OF_LIGHT
    info = float(np.sum(a * a / np.asarray(var_mu, dtype=float)))
    # compare in the normalized (cos^2 / var) units used by the speed fit
    norm = (2 * f_c / SPEED_OF_LIGHT) ** 2
    if not info / norm > DEGENERATE_FLOOR:
        raise DegenerateGeometryError("Doppler geometry is degenerate (all scatterers near broadside)")
    return 1.0 / info


def velocity_variance_batch(theta, mu, var_theta, var_mu, f_c: float, weights=None, mask=None):
    """Variance of the weighted Doppler speed fit, including the angle noise
    that enters through cos(theta_hat).

    ``weights`` are the fit weights (inverse Doppler variances by default),
    in which case the Doppler-only part equals ``velocity_variance_approx``.
    Rows with degenerate geometry give NaN.
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    var_mu = np.asarray(var_mu, dtype=float)
    if mask is None:
        mask = np.ones(theta.shape, dtype=bool)
    with np.errstate(divide="ignore"):
        w = 1.0 / var_mu if weights is None else np.asarray(weights, dtype=float)
    w = np.where(mask, w, 0.0)
    c, s = np.cos(theta), np.sin(theta)
    s1 = (mu * c * w).sum(axis=-1)
    s2 = (c * c * w).sum(axis=-1)
    ok = s2 > DEGENERATE_FLOOR
    s2 = np.where(ok, s2, np.nan)[..., None]
    scale = SPEED_OF_LIGHT / (2 * f_c)
    j_mu = scale * c * w / s2
    j_theta = scale * s * w * (2 * c * s1[..., None] / s2 - mu) / s2
    return np.where(ok, _quad(j_theta, j_mu, var_theta, var_mu, mask), np.nan)


def velocity_variance_full(theta, mu, var_theta, var_mu, f_c: float, weights=None) -> float:
    out = velocity_variance_batch(theta, mu, var_theta, var_mu, f_c, weights)
    if not np.isfinite(out):
        raise DegenerateGeometryError("Doppler geometry is degenerate (all scatterers near broadside)")
    return float(out)


def covariance_batch(theta, d, mu, variances, weights, offset, f_c: float, offsets=None,
                     mask=None, coarse_velocity: bool = False) -> np.ndarray:
    """Diagonal (sigma_phi^2, sigma_d^2, sigma_v^2) per row; NaN marks unusable rows.

    ``weights`` are the speed-fit weights.  ``coarse_velocity`` keeps only
    the Doppler noise in the speed variance.
    """
    var = np.asarray(variances, dtype=float)
    if mask is None:
        mask = np.ones(var.shape[:-1], dtype=bool)
    g_theta, g_d, f_theta, f_d, _ = jacobians_batch(theta, d, offset, offsets, mask)
    var_phi = _quad(g_theta, g_d, var[..., 0], var[..., 1], mask)
    var_d = _quad(f_theta, f_d, var[..., 0], var[..., 1], mask)
    zero_doppler = np.all(np.where(mask, var[..., 2], 0.0) == 0, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        if coarse_velocity:
            var_v = velocity_variance_batch(theta, mu, 0.0, var[..., 2], f_c, None, mask)
        else:
            var_v = velocity_variance_batch(theta, mu, var[..., 0], var[..., 2], f_c, weights, mask)
    var_v = np.where(zero_doppler, 0.0, var_v)
    return np.stack([var_phi, var_d, var_v], axis=-1)


def measurement_covariance(meas, offset, f_c: float, coarse_velocity: bool = False) -> np.ndarray:
    """Diagonal (sigma_phi^2, sigma_d^2, sigma_v^2) for a scatterer measurement set.

    Jacobians are evaluated at the measured values.
    """
    Q = covariance_batch(meas.theta_hat, meas.d_hat, meas.mu_hat, meas.variances,
                         1.0 / meas.mle_weights, offset, f_c, meas.offsets,
                         coarse_velocity=coarse_velocity)
    if not np.isfinite(Q[0]):
        raise SingularGeometryError("fused CR position coincides with the array")
    if not np.isfinite(Q[2]):
        raise DegenerateGeometryError("Doppler geometry is degenerate (all scatterers near broadside)")
    return Q
