"""Per-epoch logs, downlink rates and the Monte Carlo summary statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .array import beam_gain
from .config import SimConfig


@dataclass
class EpochLog:
    """Everything one run records, one row per epoch.

    ``steer`` is the angle the data (communication) beam was pointed at, so
    ``steer - truth[:, 0]`` is the pointing error that drives the rate.
    Rates satisfy ``r_opt == rho * r_wide + (1 - rho) * r_narrow`` exactly.
    A batch log holds ``R`` runs along a leading axis; ``run(i)`` extracts one.
    """

    scheme: str
    t: np.ndarray
    truth: np.ndarray
    pred: np.ndarray
    est: np.ndarray
    meas: np.ndarray
    meas_var: np.ndarray
    n_t: np.ndarray
    rho: np.ndarray
    r_wide: np.ndarray
    r_narrow: np.ndarray
    r_opt: np.ndarray
    r_obj: np.ndarray
    steer: np.ndarray
    aligned: np.ndarray
    coasted: np.ndarray
    nees: np.ndarray

    @classmethod
    def empty(cls, scheme: str, n: int, runs: int | None = None) -> "EpochLog":
        shape = (n,) if runs is None else (runs, n)
        nan3 = lambda: np.full(shape + (3,), np.nan)  # noqa: E731
        nan1 = lambda: np.full(shape, np.nan)  # noqa: E731
        return cls(scheme, np.full(n, np.nan), nan3(), nan3(), nan3(), nan3(), nan3(),
                   np.zeros(shape, dtype=int), np.ones(shape), nan1(), np.zeros(shape), nan1(), nan1(),
                   nan1(), np.zeros(shape, dtype=bool), np.zeros(shape, dtype=bool), nan1())

    def __len__(self):
        return len(self.t)

    @property
    def runs(self) -> int | None:
        return self.rho.shape[0] if self.rho.ndim == 2 else None

    def run(self, i: int) -> "EpochLog":
        """One run of a batch log."""
        if self.runs is None:
            raise ValueError("not a batch log")
        return EpochLog(self.scheme, self.t,
                        *(getattr(self, f.name)[i] for f in fields(self) if f.name not in ("scheme", "t")))

    @property
    def angle_error(self) -> np.ndarray:
        return self.steer - self.truth[..., 0]

    @property
    def pred_error(self) -> np.ndarray:
        return self.pred - self.truth

    @property
    def est_error(self) -> np.ndarray:
        return self.est - self.truth

    def record_rates(self, n: int, rho, r_wide, r_narrow) -> None:
        self.rho[..., n] = rho
        self.r_wide[..., n] = r_wide
        self.r_narrow[..., n] = r_narrow
        self.r_opt[..., n] = rho * r_wide + (1 - rho) * r_narrow

    def arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "scheme"}


def achievable_rate(snr):
    """Shannon rate in bits/s/Hz."""
    return np.log2(1 + np.asarray(snr)) if np.ndim(snr) else math.log2(1 + snr)


def channel_gain(d: float, cfg: SimConfig) -> complex:
    """LoS coefficient alpha = alpha_ref / d * exp(j 2 pi f_c d / c)."""
    return cfg.alpha_ref / d * np.exp(2j * math.pi * d / cfg.wavelength)


def downlink_snr(phi, d, steer, n, cfg: SimConfig):
    """Received SNR of the CR on an ``n``-antenna beam steered at ``steer`` (broadcasts)."""
    g = np.abs(beam_gain(phi, steer, n))
    out = cfg.p_n * (cfg.alpha_ref / np.asarray(d)) ** 2 * n * g * g / cfg.sigma2_C
    return out if np.ndim(out) else float(out)


def rate_components(phi: float, d: float, wide_steer: float, n_wide: int,
                    narrow_steer: float | None, cfg: SimConfig) -> tuple[float, float]:
    """(R_wide, R_narrow_align) for beams steered at the given angles.

    ``narrow_steer=None`` skips the narrow beam (rate 0).
    """
    r_wide = achievable_rate(downlink_snr(phi, d, wide_steer, n_wide, cfg))
    if narrow_steer is None:
        return r_wide, 0.0
    return r_wide, achievable_rate(downlink_snr(phi, d, narrow_steer, cfg.N_t_narrow, cfg))


def rmse(errors, axis: int = 0) -> np.ndarray:
    """Root mean square over ``axis`` (runs by default); NaNs are ignored."""
    errors = np.asarray(errors, dtype=float)
    return np.sqrt(np.nanmean(errors ** 2, axis=axis))


def error_cdf(errors) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF of absolute errors: sorted values and P(|e| <= value)."""
    e = np.sort(np.abs(np.ravel(np.asarray(errors, dtype=float))))
    e = e[np.isfinite(e)]
    if len(e) == 0:
        raise ValueError("empty error sample")
    return e, np.arange(1, len(e) + 1) / len(e)


def cdf_at(errors, x) -> np.ndarray:
    e, _ = error_cdf(errors)
    return np.searchsorted(e, np.asarray(x), side="right") / len(e)


def outage_probability(rates, gamma: float) -> float:
    """Fraction of (run, epoch) pairs whose rate is at or below ``gamma``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    r = np.asarray(rates, dtype=float)
    return float(np.mean(r <= gamma))


def nees(err: np.ndarray, M: np.ndarray):
    """Normalized estimation error squared e^T M^-1 e (batched over leading axes)."""
    err = np.asarray(err, dtype=float)
    out = np.einsum("...i,...i->...", err, np.linalg.solve(M, err[..., None])[..., 0])
    return float(out) if np.ndim(out) == 0 else out
