"""Post-matched-filter radar measurements of the vehicle's scatterers and their fusion
into a single (angle, distance, velocity) observation of the communication receiver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .array import HPBW_FACTOR, BeamConfig, beam_gain
from .config import SPEED_OF_LIGHT, SimConfig

GAIN_FLOOR = 1e-6
DEGENERATE_FLOOR = 1e-12


class SingularGeometryError(ValueError):
    """The CR position (or a fused quantity) is undefined for this input."""


class DegenerateGeometryError(ValueError):
    """All scatterers are (numerically) at broadside; Doppler carries no speed."""


@dataclass(frozen=True)
class ScattererMeasurementSet:
    theta_hat: np.ndarray
    d_hat: np.ndarray
    mu_hat: np.ndarray
    variances: np.ndarray  # (K', 3): rad^2, m^2, Hz^2
    beta_abs: np.ndarray
    gain: np.ndarray  # complex beamforming gain factor per scatterer
    offsets: np.ndarray  # (K', 2) local offsets of the (merged) scatterers
    groups: tuple  # original scatterer indices behind each entry
    # model variances before any noise scaling; the Doppler column weights the speed fit
    nominal_variances: np.ndarray | None = None

    def __len__(self):
        return len(self.theta_hat)

    @property
    def mle_weights(self) -> np.ndarray:
        v = self.variances if self.nominal_variances is None else self.nominal_variances
        return v[:, 2]


@dataclass(frozen=True)
class CrMeasurement:
    phi: float
    d: float
    v: float
    Q: np.ndarray  # diagonal of the measurement covariance

    def as_array(self) -> np.ndarray:
        return np.array([self.phi, self.d, self.v])


def reflection_coefficient(rcs, dist, exponent: float = 2.0):
    """Two-way reflection coefficient eps / (2 d)^exponent."""
    return np.asarray(rcs) / (2 * np.asarray(dist)) ** exponent


def _variances(rcs, dist, gain, kappa2, rho, cfg: SimConfig):
    beta2 = np.abs(reflection_coefficient(rcs, dist, cfg.beta_exponent)) ** 2
    g2 = np.abs(gain) ** 2
    snr = np.asarray(cfg.p_n * rho * cfg.G * kappa2 * beta2 * g2 / cfg.sigma2, dtype=float)
    a2 = np.array([cfg.a_1, cfg.a_2, cfg.a_3]) ** 2
    with np.errstate(divide="ignore"):
        out = a2 / snr[..., None]
    out[np.abs(gain) < GAIN_FLOOR] = np.inf
    return out


def measurement_variances(rcs, dist, gain, beam: BeamConfig, cfg: SimConfig, rho: float = 1.0):
    """Angle (rad^2), distance (m^2) and Doppler (Hz^2) variances per scatterer.

    Inversely proportional to the post-matched-filter SNR; the matched-filter
    gain shrinks to ``rho * G`` when only a fraction ``rho`` of the block senses.
    Scatterers on a beam null get ``inf``.
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    return _variances(rcs, dist, gain, beam.kappa ** 2, rho, cfg)


def separable(d1, mu1, d2, mu2, dr: float, dmu: float) -> bool:
    return abs(d1 - d2) > dr or abs(mu1 - mu2) > dmu


def check_separability(dist, doppler, dr: float, dmu: float) -> list[list[int]]:
    """Group scatterers that share a range-Doppler resolution cell.

    Two scatterers are distinct when their ranges differ by more than ``dr`` or
    their Dopplers by more than ``dmu``.  Groups are the connected components
    of the "not separable" relation, so members of different groups are always
    pairwise separable.
    """
    dist = np.asarray(dist, dtype=float)
    doppler = np.asarray(doppler, dtype=float)
    k = len(dist)
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if dr > 0 or dmu > 0:
        close = ((np.abs(dist[:, None] - dist[None, :]) <= dr)
                 & (np.abs(doppler[:, None] - doppler[None, :]) <= dmu))
        for i, j in zip(*np.nonzero(np.triu(close, 1))):
            parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(k):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def resolve_scatterers(positions, offsets, rcs, weights, v: float, cfg: SimConfig):
    """Merge unresolvable scatterers until every pair is separable.

    Merged scatterers sit at the power-weighted mean position (and offset)
    and carry the summed power.  Returns ``(positions, offsets, rcs, groups)``.
    """
    groups = [[i] for i in range(len(positions))]
    positions = np.asarray(positions, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    rcs = np.asarray(rcs)
    weights = np.asarray(weights, dtype=float)
    dr, dmu = cfg.range_resolution, cfg.doppler_resolution
    if dr == 0 and dmu == 0:
        return positions, offsets, rcs, groups
    dist = np.hypot(positions[:, 0], positions[:, 1])
    if len(dist) < 2 or np.min(np.diff(np.sort(dist))) > dr:
        return positions, offsets, rcs, groups  # all ranges already resolved
    while True:
        theta = np.arctan2(positions[:, 1], positions[:, 0])
        dist = np.hypot(positions[:, 0], positions[:, 1])
        doppler = 2 * v * np.cos(theta) * cfg.f_c / SPEED_OF_LIGHT
        parts = check_separability(dist, doppler, dr, dmu)
        if len(parts) == len(positions):
            return positions, offsets, rcs, groups
        new_pos, new_off, new_rcs, new_groups, new_w = [], [], [], [], []
        for part in parts:
            w = weights[part]
            total = w.sum()
            frac = w / total if total > 0 else np.full(len(part), 1.0 / len(part))
            new_pos.append(frac @ positions[part])
            new_off.append(frac @ offsets[part])
            new_rcs.append(math.sqrt(float(np.sum(np.abs(rcs[part]) ** 2))))
            new_groups.append(sorted(i for p in part for i in groups[p]))
            new_w.append(total)
        positions, offsets = np.array(new_pos), np.array(new_off)
        rcs, weights, groups = np.array(new_rcs, dtype=complex), np.array(new_w), new_groups


@dataclass
class MeasurementBatch:
    """Measurements of ``R`` runs at one epoch, padded to ``K`` scatterer slots.

    ``mask`` marks the slots that hold a measurement.  A merged scatterer
    occupies the slot of its lowest-index member; ``rep[r, k]`` is the slot
    that scatterer ``k`` ended up in (-1 if it was not illuminated).
    """

    theta_hat: np.ndarray  # (R, K)
    d_hat: np.ndarray
    mu_hat: np.ndarray
    variances: np.ndarray  # (R, K, 3), zero-noise runs report 0
    nominal_variances: np.ndarray  # (R, K, 3)
    offsets: np.ndarray  # (R, K, 2)
    beta_abs: np.ndarray  # (R, K)
    gain: np.ndarray  # (R, K) complex
    mask: np.ndarray  # (R, K) bool
    rep: np.ndarray  # (R, K) int

    @property
    def count(self) -> np.ndarray:
        return self.mask.sum(axis=-1)

    def row(self, r: int) -> ScattererMeasurementSet:
        keep = np.flatnonzero(self.mask[r])
        groups = tuple(tuple(int(i) for i in np.flatnonzero(self.rep[r] == k)) for k in keep)
        return ScattererMeasurementSet(
            theta_hat=self.theta_hat[r, keep], d_hat=self.d_hat[r, keep], mu_hat=self.mu_hat[r, keep],
            variances=self.variances[r, keep], beta_abs=self.beta_abs[r, keep],
            gain=self.gain[r, keep], offsets=self.offsets[r, keep], groups=groups,
            nominal_variances=self.nominal_variances[r, keep])


def illumination(theta, steer, n):
    """Beam gain toward each scatterer and whether it lies in the half-power beam."""
    gain = beam_gain(theta, steer, n)
    half_bw = 0.5 * HPBW_FACTOR / (n * np.sin(steer))
    lit = (np.abs(theta - steer) <= half_bw) & (np.abs(gain) >= GAIN_FLOOR)
    return gain, lit


def sense_batch(theta, dist, rcs, offsets, v, n_t, steer, rho, cfg: SimConfig,
                std_normals=None, noise_scale: float = 1.0) -> MeasurementBatch:
    """Noisy angle, distance and Doppler of every illuminated, resolved scatterer.

    ``theta``, ``dist``, ``rcs`` are ``(R, K)``; ``offsets`` is ``(R, K, 2)``;
    ``v``, ``n_t``, ``steer`` and ``rho`` are per run.  ``std_normals`` holds
    one ``(K, 3)`` block of standard normals per run, used slot by slot, and
    may be omitted when ``noise_scale == 0``.
    """
    theta = np.array(theta, dtype=float)
    dist = np.array(dist, dtype=float)
    rcs = np.array(rcs, dtype=complex)
    offsets = np.array(offsets, dtype=float)
    R, K = theta.shape
    v = np.broadcast_to(np.asarray(v, dtype=float), (R,))
    n_t = np.broadcast_to(np.asarray(n_t), (R,))
    steer = np.broadcast_to(np.asarray(steer, dtype=float), (R,))
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (R,))
    if np.any(rho <= 0) or np.any(rho > 1):
        raise ValueError("rho must lie in (0, 1]")

    gain, mask = illumination(theta, steer[:, None], n_t[:, None])
    rep = np.where(mask, np.arange(K), -1)
    if (cfg.range_resolution > 0 or cfg.doppler_resolution > 0) and K > 1:
        _resolve_batch(theta, dist, rcs, offsets, gain, mask, rep, v, n_t, steer, cfg)

    mu = 2 * v[:, None] * np.cos(theta) * cfg.f_c / SPEED_OF_LIGHT
    var = _variances(rcs, dist, gain, (n_t * cfg.N_r)[:, None], rho[:, None], cfg)
    mask &= np.all(np.isfinite(var), axis=-1)
    rep = np.where(mask[np.arange(R)[:, None], np.maximum(rep, 0)] & (rep >= 0), rep, -1)
    var = np.where(mask[..., None], var, 0.0)

    if noise_scale == 0:
        noise = np.zeros((R, K, 3))
    else:
        noise = np.asarray(std_normals, dtype=float).reshape(R, K, 3) * np.sqrt(var) * noise_scale
    return MeasurementBatch(
        theta_hat=theta + noise[..., 0], d_hat=dist + noise[..., 1], mu_hat=mu + noise[..., 2],
        variances=var * noise_scale ** 2, nominal_variances=var, offsets=offsets,
        beta_abs=np.abs(reflection_coefficient(rcs, dist, cfg.beta_exponent)),
        gain=gain, mask=mask, rep=rep)


def _resolve_batch(theta, dist, rcs, offsets, gain, mask, rep, v, n_t, steer, cfg: SimConfig):
    """Batched ``resolve_scatterers`` over the illuminated slots, updating the arrays in place."""
    R, K = theta.shape
    dr, dmu = cfg.range_resolution, cfg.doppler_resolution
    slots = np.arange(K)
    pos = np.stack([dist * np.cos(theta), dist * np.sin(theta)], axis=-1)
    weight = np.where(mask, np.abs(reflection_coefficient(rcs, dist, cfg.beta_exponent) * gain) ** 2, 0.0)
    power = np.abs(rcs) ** 2
    merged = np.zeros(R, dtype=bool)
    while True:
        doppler = 2 * v[:, None] * np.cos(theta) * cfg.f_c / SPEED_OF_LIGHT
        close = ((np.abs(dist[:, :, None] - dist[:, None, :]) <= dr)
                 & (np.abs(doppler[:, :, None] - doppler[:, None, :]) <= dmu)
                 & mask[:, :, None] & mask[:, None, :])
        close[:, slots, slots] = False
        rows = np.flatnonzero(close.any(axis=(1, 2)))
        if len(rows) == 0:
            break
        # connected components: transitive closure by repeated squaring
        reach = (close[rows] | np.eye(K, dtype=bool)).astype(np.int32)
        for _ in range(max(1, math.ceil(math.log2(K)))):
            reach = ((reach @ reach) > 0).astype(np.int32)
        label = np.argmax(reach, axis=2)  # lowest-index member of each component
        member = (label[:, None, :] == slots[None, :, None]) & mask[rows][:, None, :]  # [r, slot, k]
        w = member * weight[rows][:, None, :]
        total = w.sum(axis=-1)
        count = member.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(total[..., None] > 0, w / total[..., None], member / count[..., None])
        frac = np.nan_to_num(frac)
        keep = (count > 0)[..., None]
        # emptied slots keep their old geometry; they are masked out from here on
        pos[rows] = np.where(keep, frac @ pos[rows], pos[rows])
        offsets[rows] = np.where(keep, frac @ offsets[rows], offsets[rows])
        power[rows] = (member * power[rows][:, None, :]).sum(axis=-1)
        weight[rows] = total
        mask[rows] = count > 0
        rep[rows] = np.where(rep[rows] >= 0, np.take_along_axis(label, np.maximum(rep[rows], 0), 1), -1)
        theta[rows] = np.arctan2(pos[rows, :, 1], pos[rows, :, 0])
        dist[rows] = np.hypot(pos[rows, :, 0], pos[rows, :, 1])
        merged[rows] = True
    if np.any(merged):
        rows = np.flatnonzero(merged)
        rcs[rows] = np.sqrt(power[rows])
        gain[rows] = beam_gain(theta[rows], steer[rows, None], n_t[rows, None])


def synthesize_measurements(truth, beam: BeamConfig, cfg: SimConfig, rho: float,
                            rng: np.random.Generator | None, noise_scale: float = 1.0,
                            std_normals=None) -> ScattererMeasurementSet:
    """Noisy angle, distance and Doppler of every illuminated, resolved scatterer.

    ``truth`` is one epoch of ground truth (see ``GroundTruth.epoch``).  A
    scatterer is illuminated when it lies within the half-power beamwidth of
    the beam and off its nulls.  Noise comes from ``std_normals`` (``(K, 3)``)
    or, if that is omitted, from one ``(K, 3)`` draw of ``rng``.
    ``noise_scale = 0`` gives noiseless measurements with zero reported
    variances and consumes no randomness.
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    K = len(truth.theta)
    if noise_scale != 0 and std_normals is None:
        std_normals = rng.standard_normal((K, 3))
    mb = sense_batch(truth.theta[None], truth.dist[None], truth.rcs[None], truth.offsets[None],
                     truth.state[2], beam.n_antennas, beam.steer_angle, rho, cfg,
                     None if std_normals is None else np.asarray(std_normals)[None], noise_scale)
    return mb.row(0)


def fuse_centroid(meas: ScattererMeasurementSet) -> tuple[float, float]:
    """Average of the scatterer positions, each shifted back by its known offset.

    For a full, centred layout the offsets sum to zero and this is the plain
    average of ``d cos theta`` and ``d sin theta``.
    """
    if len(meas) == 0:
        raise ValueError("cannot fuse an empty measurement set")
    x = np.mean(meas.d_hat * np.cos(meas.theta_hat) - meas.offsets[:, 0])
    y = np.mean(meas.d_hat * np.sin(meas.theta_hat) - meas.offsets[:, 1])
    return float(x), float(y)


def mle_velocity(meas: ScattererMeasurementSet, f_c: float) -> float:
    """Weighted least-squares speed from the Doppler shifts (ML under Gaussian noise)."""
    w = 1.0 / meas.mle_weights
    c = np.cos(meas.theta_hat)
    den = float(np.sum(c * c * w))
    if not den > DEGENERATE_FLOOR or not math.isfinite(den):
        raise DegenerateGeometryError("Doppler geometry is degenerate (all scatterers near broadside)")
    return SPEED_OF_LIGHT / (2 * f_c) * float(np.sum(meas.mu_hat * c * w)) / den


def branch_atan(y: float, x: float) -> float:
    """Angle of (x, y) in [0, pi) for y >= 0: arctan(y/x), plus pi when x < 0."""
    if x == 0:
        if y == 0:
            raise SingularGeometryError("CR position coincides with the array")
        return math.pi / 2 if y > 0 else -math.pi / 2
    phi = math.atan(y / x)
    return phi + math.pi if x < 0 else phi


def cr_measurement(centroid, v_hat: float, offset, Q) -> CrMeasurement:
    X = centroid[0] + offset[0]
    Y = centroid[1] + offset[1]
    phi = branch_atan(Y, X)
    return CrMeasurement(phi, math.hypot(X, Y), float(v_hat), np.asarray(Q, dtype=float))


def fuse_batch(mb: MeasurementBatch) -> np.ndarray:
    """Offset-corrected centroid per run, ``(R, 2)``; NaN for runs with no measurement."""
    m = mb.mask
    k = m.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        x = np.where(m, mb.d_hat * np.cos(mb.theta_hat) - mb.offsets[..., 0], 0.0).sum(axis=-1) / k
        y = np.where(m, mb.d_hat * np.sin(mb.theta_hat) - mb.offsets[..., 1], 0.0).sum(axis=-1) / k
    return np.stack([x, y], axis=-1)


def mle_velocity_batch(mb: MeasurementBatch, f_c: float) -> np.ndarray:
    """Weighted least-squares speed per run; NaN where the Doppler geometry is degenerate."""
    with np.errstate(divide="ignore"):
        w = np.where(mb.mask, 1.0 / mb.nominal_variances[..., 2], 0.0)
    c = np.cos(mb.theta_hat)
    den = (c * c * w).sum(axis=-1)
    ok = (den > DEGENERATE_FLOOR) & np.isfinite(den)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = SPEED_OF_LIGHT / (2 * f_c) * (mb.mu_hat * c * w).sum(axis=-1) / den
    return np.where(ok, v, np.nan)


def branch_atan_batch(y, x) -> np.ndarray:
    """Vectorized ``branch_atan``; NaN where x = y = 0."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        phi = np.arctan(y / x) + np.where(x < 0, math.pi, 0.0)
    phi = np.where(x == 0, np.sign(y) * math.pi / 2, phi)
    return np.where((x == 0) & (y == 0), np.nan, phi)
