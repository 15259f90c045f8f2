"""Command-line experiment runner: Monte Carlo logs to CSV, summaries and plot data."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig, dump_config, load_config
from .metrics import EpochLog, cdf_at, outage_probability, rmse
from .montecarlo import SCHEMES, SWEEP_VELOCITIES, SweepPoint, run_monte_carlo, velocity_sweep

SCHEME_CHOICES = tuple(SCHEMES) + ("all",)

TRACE_COLUMNS = ["epoch", "t_s", "phi_true_rad", "d_true_m", "v_true_mps",
                 "phi_pred_rad", "d_pred_m", "v_pred_mps", "phi_est_rad", "d_est_m", "v_est_mps",
                 "n_t", "rho_opt", "r_wide_bpshz", "r_narrow_bpshz", "r_opt_bpshz", "r_obj_bpshz",
                 "steer_rad", "aligned_frac", "coasted_frac", "nees"]
RMSE_COLUMNS = ["epoch", "t_s", "phi_pred_rad", "d_pred_m", "v_pred_mps",
                "phi_est_rad", "d_est_m", "v_est_mps", "steer_rad"]
CDF_COLUMNS = ["abs_error_rad", "cdf_pred", "cdf_est", "cdf_steer"]
OUTAGE_COLUMNS = ["scheme", "velocity_mps", "gamma_bpshz", "outage", "angle_rmse_rad",
                  "mean_rate_bpshz", "samples"]

# Absolute angle errors at which the CDF is tabulated (rad).
CDF_GRID = np.logspace(-7, 0.5, 151)


@dataclass(frozen=True)
class ExperimentSpec:
    scheme: str = "all"
    runs: int = 500
    seed: int = 0
    velocities: tuple = ()
    gamma: float = 0.02
    out: Path = Path("results")
    workers: int = 1
    schemes: tuple = field(init=False)

    def __post_init__(self):
        if self.scheme not in SCHEME_CHOICES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(not v > 0 for v in self.velocities):
            raise ConfigError("sweep velocities must be positive")
        object.__setattr__(self, "schemes", tuple(SCHEMES) if self.scheme == "all" else (self.scheme,))


def _fmt(x) -> str:
    if isinstance(x, (str, np.str_)):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if np.isnan(x) else f"{x:.12g}"


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    path.write_text(buf.getvalue())


def _nanmean(a, axis=0):
    a = np.asarray(a, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        count = np.sum(np.isfinite(a), axis=axis)
        total = np.nansum(a, axis=axis)
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def _rmse(err):
    err = np.asarray(err, dtype=float)
    return np.sqrt(_nanmean(err * err, axis=0))


def trace_rows(log: EpochLog):
    """Per-epoch values averaged over runs."""
    cols = [np.arange(len(log.t)), log.t]
    for arr in (log.truth, log.pred, log.est):
        cols += [_nanmean(arr[..., i]) for i in range(3)]
    cols += [_nanmean(log.n_t), _nanmean(log.rho), _nanmean(log.r_wide), _nanmean(log.r_narrow),
             _nanmean(log.r_opt), _nanmean(log.r_obj), _nanmean(log.steer),
             _nanmean(log.aligned), _nanmean(log.coasted), _nanmean(log.nees)]
    return list(zip(*cols))


def rmse_rows(log: EpochLog):
    cols = [np.arange(len(log.t)), log.t]
    cols += [_rmse(log.pred_error[..., i]) for i in range(3)]
    cols += [_rmse(log.est_error[..., i]) for i in range(3)]
    cols.append(_rmse(log.angle_error))
    return list(zip(*cols))


def _cdf_or_nan(err):
    err = np.asarray(err, dtype=float)
    if not np.any(np.isfinite(err)):
        return np.full(len(CDF_GRID), np.nan)
    return cdf_at(err, CDF_GRID)


def cdf_rows(log: EpochLog):
    cols = [CDF_GRID, _cdf_or_nan(log.pred_error[..., 0]), _cdf_or_nan(log.est_error[..., 0]),
            _cdf_or_nan(log.angle_error)]
    return list(zip(*cols))


def summary_text(log: EpochLog, cfg: SimConfig, gamma: float) -> str:
    e = log.angle_error
    lines = [
        f"scheme: {log.scheme}",
        f"runs: {log.r_opt.shape[0]}",
        f"epochs: {len(log.t)}",
        f"velocity_mps: {_fmt(cfg.v)}",
        f"mean_rate_bpshz: {_fmt(np.mean(log.r_opt))}",
        f"outage_probability(gamma={_fmt(gamma)}): {_fmt(outage_probability(log.r_opt, gamma))}",
        f"steer_angle_rmse_rad: {_fmt(np.sqrt(np.mean(e * e)))}",
        f"est_angle_rmse_rad: {_fmt(rmse(log.est_error[..., 0].ravel(), axis=0))}",
        f"mean_n_t: {_fmt(np.mean(log.n_t))}",
        f"mean_rho: {_fmt(np.mean(log.rho))}",
        f"aligned_fraction: {_fmt(np.mean(log.aligned))}",
        f"coasted_fraction: {_fmt(np.mean(log.coasted))}",
        f"mean_nees: {_fmt(np.nanmean(log.nees)) if np.any(np.isfinite(log.nees)) else 'nan'}",
    ]
    return "\n".join(lines) + "\n"


def outage_rows(points):
    return [(p.scheme, p.velocity, p.gamma, p.outage, p.angle_rmse, p.mean_rate, p.epochs)
            for p in points]


def _point_from_log(log: EpochLog, cfg: SimConfig, gamma: float) -> SweepPoint:
    e = log.angle_error
    return SweepPoint(log.scheme, cfg.v, gamma, outage_probability(log.r_opt, gamma),
                      float(np.sqrt(np.mean(e * e))), float(np.mean(log.r_opt)), log.r_opt.size)


def run_experiment(spec: ExperimentSpec, cfg: SimConfig) -> dict[str, EpochLog]:
    """Simulate and write every output file under ``spec.out``."""
    out = Path(spec.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc

    logs = run_monte_carlo(cfg, spec.schemes, spec.runs, spec.seed, spec.workers)
    if spec.velocities:
        points = velocity_sweep(cfg, spec.schemes, spec.velocities, spec.runs, spec.seed,
                                spec.gamma, spec.workers)
    else:
        points = [_point_from_log(log, cfg, spec.gamma) for log in logs.values()]

    (out / "config.txt").write_text(dump_config(cfg.replace(runs=spec.runs, seed=spec.seed,
                                                            gamma=spec.gamma)))
    for s, log in logs.items():
        d = out / s
        d.mkdir(exist_ok=True)
        _write_csv(d / "trace.csv", TRACE_COLUMNS, trace_rows(log))
        _write_csv(d / "rmse.csv", RMSE_COLUMNS, rmse_rows(log))
        _write_csv(d / "cdf.csv", CDF_COLUMNS, cdf_rows(log))
        _write_csv(d / "outage.csv", OUTAGE_COLUMNS, outage_rows(p for p in points if p.scheme == s))
        (d / "summary.txt").write_text(summary_text(log, cfg, spec.gamma))
    _write_csv(out / "outage.csv", OUTAGE_COLUMNS, outage_rows(points))
    if len(logs) > 1:
        t = next(iter(logs.values())).t
        cols = [np.arange(len(t)), t] + [_nanmean(log.r_opt) for log in logs.values()]
        _write_csv(out / "rate_comparison.csv", ["epoch", "t_s"] + [f"r_{s}_bpshz" for s in logs],
                   zip(*cols))
    emit_plot_data(out)
    return logs


# --- plot data ---------------------------------------------------------------

PLOT_FILES = {
    "rate_vs_time.dat": "downlink achievable rate per epoch, averaged over runs (bps/Hz)",
    "n_t_vs_time.dat": "transmit antennas of the sensing beam per epoch, averaged over runs",
    "rho_vs_time.dat": "optimal sensing fraction rho per epoch, averaged over runs",
    "rmse_vs_time.dat": "per-epoch RMSE of predicted and estimated angle, distance and speed",
    "angle_error_cdf.dat": "CDF of absolute angle prediction, estimation and pointing errors",
    "outage_vs_velocity.dat": "outage probability and overall pointing RMSE against speed",
}


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise FileNotFoundError(f"missing input {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path} has no data rows")
    return rows[0], rows[1:]


def _column(header, rows, name):
    i = header.index(name)
    return [r[i] for r in rows]


def _write_dat(path: Path, title: str, source: str, names, cols) -> None:
    lines = [f"# {title}", f"# source: {source}", "# columns: " + " ".join(names)]
    lines += [" ".join(vals) for vals in zip(*cols)]
    path.write_text("\n".join(lines) + "\n")


def emit_plot_data(out: str | Path) -> list[Path]:
    """Turn the per-scheme CSVs under ``out`` into whitespace-columned plot files in ``out/plots``."""
    out = Path(out)
    schemes = [s for s in SCHEMES if (out / s / "trace.csv").exists()]
    if not schemes:
        raise FileNotFoundError(f"no scheme traces under {out}")
    traces = {s: _read_csv(out / s / "trace.csv") for s in schemes}
    rmses = {s: _read_csv(out / s / "rmse.csv") for s in schemes}
    cdfs = {s: _read_csv(out / s / "cdf.csv") for s in schemes}
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    written = []

    def emit(name, source, names, cols):
        path = plots / name
        _write_dat(path, PLOT_FILES[name], source, names, cols)
        written.append(path)

    h0, r0 = traces[schemes[0]]
    t = _column(h0, r0, "t_s")
    emit("rate_vs_time.dat", "<scheme>/trace.csv r_opt_bpshz", ["t_s"] + [f"r_{s}" for s in schemes],
         [t] + [_column(*traces[s], "r_opt_bpshz") for s in schemes])
    emit("n_t_vs_time.dat", "<scheme>/trace.csv n_t", ["t_s"] + [f"n_t_{s}" for s in schemes],
         [t] + [_column(*traces[s], "n_t") for s in schemes])
    if "isac-ab" in traces:
        h, r = traces["isac-ab"]
        emit("rho_vs_time.dat", "isac-ab/trace.csv", ["t_s", "rho_opt", "r_wide", "r_narrow", "r_opt"],
             [t, _column(h, r, "rho_opt"), _column(h, r, "r_wide_bpshz"),
              _column(h, r, "r_narrow_bpshz"), _column(h, r, "r_opt_bpshz")])
    names, cols = ["t_s"], [t]
    for s in schemes:
        h, r = rmses[s]
        for c in RMSE_COLUMNS[2:]:
            names.append(f"{s}:{c}")
            cols.append(_column(h, r, c))
    emit("rmse_vs_time.dat", "<scheme>/rmse.csv", names, cols)
    names, cols = ["abs_error_rad"], [_column(*cdfs[schemes[0]], "abs_error_rad")]
    for s in schemes:
        h, r = cdfs[s]
        for c in CDF_COLUMNS[1:]:
            names.append(f"{s}:{c}")
            cols.append(_column(h, r, c))
    emit("angle_error_cdf.dat", "<scheme>/cdf.csv", names, cols)
    h, r = _read_csv(out / "outage.csv")
    emit("outage_vs_velocity.dat", "outage.csv", h, [_column(h, r, c) for c in h])
    return written


# --- entry point ---------------------------------------------------------------

def _velocities(text: str) -> tuple:
    if text == "default":
        return SWEEP_VELOCITIES
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad velocity list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isac-v2i", description=__doc__)
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--scheme", choices=SCHEME_CHOICES, default="all")
    p.add_argument("--runs", type=int, help="Monte Carlo runs (default: config, 500)")
    p.add_argument("--seed", type=int, help="master seed (default: config, 0)")
    p.add_argument("--velocity-sweep", type=_velocities, default=(), metavar="V1,V2,...|default",
                   help="also sweep these speeds (m/s) over a 160 m pass; 'default' uses the standard nine")
    p.add_argument("--gamma", type=float, help="outage threshold in bps/Hz (default: config, 0.02)")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--zero-noise", action="store_true", help="scale every noise draw by zero")
    p.add_argument("--workers", type=int, default=1, help="worker processes for the Monte Carlo runs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else SimConfig()
        if args.zero_noise:
            cfg = cfg.replace(zero_noise=True)
        spec = ExperimentSpec(
            scheme=args.scheme,
            runs=cfg.runs if args.runs is None else args.runs,
            seed=cfg.seed if args.seed is None else args.seed,
            velocities=args.velocity_sweep,
            gamma=cfg.gamma if args.gamma is None else args.gamma,
            out=args.out,
            workers=args.workers,
        )
        cfg = cfg.replace(runs=spec.runs, seed=spec.seed, gamma=spec.gamma)
        run_experiment(spec, cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote results for {', '.join(spec.schemes)} to {spec.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
