"""Simulation configuration and its plain-text ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """All scenario, radio and tracker knobs for one simulated scheme.

    Field names double as the configuration-file keys.  The defaults are the
    reference V2I scenario: an 8 s pass at 20 m/s of a 5 m x 2 m vehicle
    starting at (60 m, 20 m), RSU at the origin.
    """

    T: float = 8.0
    delta_T: float = 0.01
    f_c: float = 30e9
    p_n: float = 1.0
    delta_d: float = 6.0
    v: float = 20.0
    delta_x: float = 1.5
    delta_y: float = 0.5
    N_t_narrow: int = 128
    N_t_max: int = 128
    a_1: float = 1.05e-2
    a_2: float = 3.5e-2
    a_3: float = 1.05e-2
    N_r: int = 128
    K: int = 8
    sigma_phi_bar_deg: float = 0.01
    sigma_d_bar: float = 0.1
    sigma_v_bar: float = 0.25
    sigma2: float = 0.15
    sigma2_C: float = 1.0
    G: float = 10.0
    alpha_ref: float = 1.0

    rsu_x: float = 0.0
    rsu_y: float = 0.0
    x0: float = 60.0
    y0: float = 20.0
    length: float = 5.0
    width: float = 2.0
    layout: str = "grid"
    # beta = eps / (2 d)^beta_exponent; 2 is the literal two-way law, which
    # with the table values leaves the radar far below a trackable SNR
    beta_exponent: float = 1.0
    # radar bandwidth (Hz); 0 disables the separability test
    bandwidth: float = 500e6
    # Doppler resolution (Hz); 0 means 1 / delta_T
    delta_mu: float = 0.0

    gamma: float = 0.02
    runs: int = 500
    seed: int = 0

    init_scale: float = 10.0
    joseph: bool = False
    published_jacobian: bool = False
    zero_noise: bool = False
    # speed variance from Doppler noise only (ignores angle noise in cos(theta_hat))
    coarse_velocity_variance: bool = False

    fixed_antennas: int = 128
    abp_half_range: float = math.pi / 32
    abp_pilot_gain: float = 1000.0
    point_scatterer: int = -1

    def __post_init__(self):
        positive = ("T", "delta_T", "f_c", "p_n", "delta_d", "a_1", "a_2", "a_3",
                    "sigma_phi_bar_deg", "sigma_d_bar", "sigma_v_bar", "sigma2",
                    "sigma2_C", "G", "alpha_ref", "length", "width", "abp_half_range",
                    "abp_pilot_gain")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive, got {getattr(self, name)}")
        for name in ("N_t_narrow", "N_t_max", "N_r", "K", "fixed_antennas", "runs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.v < 0:
            raise ConfigError("v must be nonnegative")
        if self.layout not in ("grid", "random"):
            raise ConfigError(f"unknown layout {self.layout!r}")
        if self.bandwidth < 0 or self.delta_mu < 0:
            raise ConfigError("bandwidth and delta_mu must be nonnegative")
        # 0.1% slack: with c rounded to 3e8, 30 m/s at 10 ms sits exactly on the limit
        if self.bandwidth > 0 and self.v * self.delta_T > self.range_resolution * (1 + 1e-3):
            raise ConfigError(
                f"range migration: v*delta_T = {self.v * self.delta_T:.4g} m exceeds "
                f"c/(2B) = {self.range_resolution:.4g} m")

    @property
    def n_epochs(self) -> int:
        # tolerate float noise in T / delta_T before rounding down
        return int(math.floor(self.T / self.delta_T + 1e-9))

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2 * self.bandwidth) if self.bandwidth > 0 else 0.0

    @property
    def doppler_resolution(self) -> float:
        if self.bandwidth == 0:
            return 0.0
        return self.delta_mu if self.delta_mu > 0 else 1.0 / self.delta_T

    @property
    def sigma_phi_bar(self) -> float:
        return math.radians(self.sigma_phi_bar_deg)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


def _coerce(name: str, raw: str):
    default = _FIELDS[name].default
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            try:
                value = float(raw)
            except ValueError:
                raise ConfigError(f"{name}: expected an integer, got {raw!r}") from None
            if not value.is_integer():
                raise ConfigError(f"{name}: expected an integer, got {raw!r}") from None
            return int(value)
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from None
    return raw


def parse_config(text: str, base: SimConfig | None = None) -> SimConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return (base or SimConfig()).replace(**values)


def load_config(path: str | Path, base: SimConfig | None = None) -> SimConfig:
    return parse_config(Path(path).read_text(), base)


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value!r}" if isinstance(value, float) else f"{name} = {value}")
    return "\n".join(lines) + "\n"
