"""Command-line entry point.

Subcommands
-----------
simulate             one SNR / measurement point, per-trial and aggregate CSV
sweep-snr            mean NMSE over an SNR grid
sweep-measurements   mean NMSE over measurement counts
lemma1               worst- and best-case power capture of the K strongest cells
kernel-dump          beamspace magnitudes of unit paths at a fixed offset

Every CSV starts with ``#`` comment lines holding the resolved configuration,
so a file documents the run that produced it. Floats are written with 17
significant digits. Exit codes: 0 success, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from domp import __version__
from domp.analysis import (
    ScenarioSpec,
    SweepResult,
    power_capture_closed_form,
    power_capture_oracle,
    sweep_measurements,
    sweep_snr,
)
from domp.channel import UlaConfig, dirichlet_atom
from domp.errors import DompError
from domp.estimators import ESTIMATORS, EstimatorConfig

COMMANDS = ("simulate", "sweep-snr", "sweep-measurements", "lemma1", "kernel-dump")
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

# key -> (parser, default); documented in the README
DEFAULTS = {
    "m": (int, 32),
    "n": (int, 32),
    "paths": (int, 3),
    "trials": (int, 50),
    "seed": (int, 0),
    "snr_db": ("floats", [0.0, 10.0, 20.0, 30.0]),
    "measurements": ("ints", [100]),
    "estimators": ("names", list(ESTIMATORS)),
    "offgrid_scale": (float, 0.1),
    "min_sep_deg": (float, 20.0),
    "gain_model": (str, "complex_gaussian"),
    "placement": (str, "offgrid"),
    "epsilon": (float, None),
    "max_paths": (int, None),
    "threads": (int, None),
    "offset": ("floats", [0.5, 0.5]),
    "out": (str, None),
}

SWEEP_COLUMNS = ("axis_value", "estimator", "trial", "nmse", "iterations", "final_residual", "error")
SUMMARY_COLUMNS = ("axis_value", "estimator", "mean_nmse", "stderr_nmse", "n_trials")


class UsageError(Exception):
    """Bad flag, config key or value; maps to exit code 2."""


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def scenario(self) -> ScenarioSpec:
        v = self.values
        return ScenarioSpec(
            config=UlaConfig(v["m"], v["n"]),
            num_paths=v["paths"],
            offgrid_scale=v["offgrid_scale"],
            min_separation_deg=v["min_sep_deg"],
            gain_model=v["gain_model"],
            trials=v["trials"],
            root_seed=v["seed"],
            placement=v["placement"],
        )

    @property
    def estimator_config(self):
        """Fixed stopping rule when ``epsilon`` is given, else ``None`` (noise-floor rule)."""
        v = self.values
        if v["epsilon"] is None:
            return None
        return EstimatorConfig(residual_tolerance=v["epsilon"], max_paths=v["max_paths"] or v["paths"])


def _parse_value(key, raw):
    kind = DEFAULTS[key][0]
    raw = str(raw).strip()
    try:
        if kind == "floats":
            return [float(x) for x in raw.split(",") if x.strip()]
        if kind == "ints":
            return [int(x) for x in raw.split(",") if x.strip()]
        if kind == "names":
            return [x.strip() for x in raw.split(",") if x.strip()]
        if raw.lower() in ("", "none", "default"):
            return None
        return kind(raw)
    except ValueError:
        raise UsageError(f"invalid value for '{key}': {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Unknown keys are rejected."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key '{key}'")
        values[key] = _parse_value(key, raw)
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domp",
        description="Off-grid mmWave channel estimation experiments (OMP and Dirichlet-kernel OMP).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    helps = {
        "simulate": "Monte-Carlo trials at one SNR and measurement count",
        "sweep-snr": "mean NMSE versus SNR",
        "sweep-measurements": "mean NMSE versus number of measurements",
        "lemma1": "power captured by the K strongest beamspace cells",
        "kernel-dump": "beamspace magnitude grid for unit paths at a fixed offset",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--m", help="BS antennas / grid size (default 32)")
        p.add_argument("--n", help="UE antennas / grid size (default 32)")
        p.add_argument("--out", help="output CSV path (default: standard output)")
        if name in ("lemma1",):
            continue
        p.add_argument("--paths", help="number of paths L (default 3)")
        p.add_argument("--offset", help="peak offset in cells as 'dm,dn' (default 0.5,0.5)")
        if name == "kernel-dump":
            continue
        p.add_argument("--trials", help="trials per axis point (default 50)")
        p.add_argument("--seed", help="root seed (default 0)")
        p.add_argument("--snr-db", dest="snr_db", help="comma-separated SNR list in dB")
        p.add_argument("--measurements", help="comma-separated measurement counts (default 100)")
        p.add_argument("--estimators", help="comma-separated subset of " + ",".join(ESTIMATORS))
        p.add_argument("--offgrid-scale", dest="offgrid_scale", help="off-grid displacement scale (default 0.1)")
        p.add_argument("--min-sep-deg", dest="min_sep_deg", help="minimum path separation in degrees (default 20)")
        p.add_argument("--gain-model", dest="gain_model", help="unit or complex_gaussian (default)")
        p.add_argument("--placement", help="offgrid (default) or ongrid")
        p.add_argument("--epsilon", help="fixed residual tolerance (default: noise-floor rule)")
        p.add_argument("--max-paths", dest="max_paths", help="iteration cap L_max (default: --paths)")
        p.add_argument("--threads", help="worker threads (default: available cores)")
    return parser


def parse_config(argv=None) -> RunConfig:
    """Resolve defaults < config file < flags into a :class:`RunConfig`."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    values = {k: d for k, (_, d) in DEFAULTS.items()}
    if ns.config:
        values.update(read_config_file(ns.config))
    for key in DEFAULTS:
        raw = getattr(ns, key, None)
        if raw is not None:
            values[key] = _parse_value(key, raw)
    if ns.command == "simulate" and len(values["snr_db"]) > 1 and not _given(ns, "snr_db"):
        values["snr_db"] = [20.0]
    _validate(ns.command, values)
    return RunConfig(ns.command, values)


def _given(ns, key):
    return getattr(ns, key, None) is not None


def _validate(command, v):
    for key in ("m", "n", "paths", "trials"):
        if v[key] is None or v[key] < 1:
            raise UsageError(f"'{key}' must be a positive integer")
    if v["threads"] is not None and v["threads"] < 1:
        raise UsageError("'threads' must be a positive integer")
    if v["max_paths"] is not None and v["max_paths"] < 1:
        raise UsageError("'max_paths' must be a positive integer")
    if v["epsilon"] is not None and not v["epsilon"] > 0:
        raise UsageError("'epsilon' must be positive")
    if command in ("simulate", "sweep-snr", "sweep-measurements"):
        if not v["estimators"]:
            raise UsageError("'estimators' must name at least one estimator")
        bad = [e for e in v["estimators"] if e not in ESTIMATORS]
        if bad:
            raise UsageError(f"'estimators': unknown {', '.join(bad)}")
        if not v["snr_db"] or any(math.isnan(s) for s in v["snr_db"]):
            raise UsageError("'snr_db' must list at least one SNR")
        if not v["measurements"] or min(v["measurements"]) < 1:
            raise UsageError("'measurements' must list positive counts")
    if len(v["offset"]) != 2:
        raise UsageError("'offset' takes two values 'dm,dn'")
    if v["out"] is not None:
        parent = Path(v["out"]).resolve().parent
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise UsageError(f"'out': directory {parent} is not writable")


# -- output -----------------------------------------------------------------

def fmt(x) -> str:
    """Lossless text form of a number."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


# keys that shape each command's output; `out` and `threads` never do
_HEADER_KEYS = {
    "lemma1": ("m", "n"),
    "kernel-dump": ("m", "n", "paths", "offset"),
}


def _header(config: RunConfig):
    lines = [f"# domp {__version__} {config.command}"]
    keys = _HEADER_KEYS.get(config.command)
    if keys is None:
        keys = [k for k in DEFAULTS if k not in ("out", "threads", "offset")]
    for key in sorted(keys):
        val = config.values[key]
        if isinstance(val, list):
            val = ",".join(repr(x) for x in val)
        elif val is None:
            val = "default"
        lines.append(f"# {key} = {val}")
    return lines


def _csv_line(fields):
    out = []
    for f in fields:
        s = fmt(f)
        if any(c in s for c in ',"\n'):
            s = '"' + s.replace('"', '""') + '"'
        out.append(s)
    return ",".join(out)


def _write(path, header, columns, rows):
    text = "\n".join(header + [",".join(columns)] + [_csv_line(r) for r in rows]) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def summary_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + "_summary" + (out.suffix or ".csv"))


# -- commands ---------------------------------------------------------------

def _run_sweep(config: RunConfig, out=None) -> SweepResult:
    out = out or sys.stdout
    spec = config.scenario
    est_cfg = config.estimator_config
    threads = config.threads or os.cpu_count() or 1
    if config.command == "sweep-measurements":
        snr = config.snr_db[0] if len(config.snr_db) == 1 else 20.0
        result = sweep_measurements(spec, config.measurements, snr, config.estimators, threads, est_cfg,
                                    max_paths=config.max_paths)
    else:
        snrs = config.snr_db[:1] if config.command == "simulate" else config.snr_db
        result = sweep_snr(spec, snrs, config.measurements[0], config.estimators, threads, est_cfg,
                           max_paths=config.max_paths)

    failed = [r for r in result.records if not r.ok]
    for axis in result.axis_values:
        parts = []
        for name in result.estimators:
            mean = result.mean_nmse[(axis, name)]
            db = 10 * math.log10(mean) if mean > 0 else -math.inf
            parts.append(f"{name}={db:.2f}dB")
        print(f"{result.axis_name}={fmt(axis)} " + " ".join(parts), file=out)
    for r in failed:
        print(f"trial {r.trial} at {result.axis_name}={fmt(r.axis_value)} [{r.estimator}]: {r.error}",
              file=sys.stderr)

    rows = [(r.axis_value, r.estimator, r.trial, r.nmse, r.iterations, r.final_residual, r.error)
            for r in result.records]
    header = _header(config)
    _write(config.out, header + [f"# axis = {result.axis_name}"], SWEEP_COLUMNS, rows)
    summary = [(a, e, result.mean_nmse[(a, e)], result.stderr_nmse[(a, e)], result.n_trials[(a, e)])
               for a in result.axis_values for e in result.estimators]
    _write(summary_path(config.out) if config.out else None,
           header + [f"# axis = {result.axis_name}"], SUMMARY_COLUMNS, summary)
    if failed and len(failed) == len(result.records):
        raise DompError(f"every trial failed; first error: {failed[0].error}")
    return result


def lemma1_rows(M: int, N: int):
    """``(K, eta_best, eta_worst_oracle, eta_worst_closed)`` for ``K = 1..M N / 4``.

    ``M N / 4`` is one quadrant of the worst-case pattern. The closed form
    needs ``K`` divisible by 4 and even ``M``, ``N``; other rows carry
    ``nan`` there.
    """
    rows = []
    for K in range(1, max(1, M * N // 4) + 1):
        best = power_capture_oracle(M, N, (0.0, 0.0), K)
        worst = power_capture_oracle(M, N, (0.5, 0.5), K)
        try:
            closed = power_capture_closed_form(M, N, K)
        except DompError:
            closed = math.nan
        rows.append((K, best, worst, closed))
    return rows


def _run_lemma1(config: RunConfig, out=None):
    out = out or sys.stdout
    M, N = config.m, config.n
    rows = lemma1_rows(M, N)
    _write(config.out, _header(config), ("K", "eta_best", "eta_worst_oracle", "eta_worst_closed"), rows)
    k90 = next((str(r[0]) for r in rows if r[2] >= 0.9), f"more than {len(rows)}")
    print(f"lemma1 M={M} N={N}: worst-case 90% power needs K={k90}", file=out)


def kernel_grid(M: int, N: int, paths: int, offset):
    """``|H_V|`` for ``paths`` unit paths spread evenly over the grid at ``offset`` cells."""
    ula = UlaConfig(M, N)
    H_V = np.zeros((N, M), dtype=complex)
    for l in range(paths):
        m_star = 1.0 + (l * M) // paths + offset[0]
        n_star = 1.0 + (l * N) // paths + offset[1]
        H_V += dirichlet_atom(m_star, n_star, 1.0, ula)
    return np.abs(H_V)


def _run_kernel_dump(config: RunConfig, out=None):
    out = out or sys.stdout
    M, N = config.m, config.n
    mag = kernel_grid(M, N, config.paths, config.offset)
    rows = [(m, n, mag[n - 1, m - 1]) for m in range(1, M + 1) for n in range(1, N + 1)]
    _write(config.out, _header(config), ("m", "n", "magnitude"), rows)
    print(f"kernel-dump M={M} N={N} offset={fmt(config.offset[0])},{fmt(config.offset[1])}: "
          f"peak cell magnitude {fmt(float(mag.max()))}", file=out)


def run(config: RunConfig, out=None) -> int:
    if config.command == "lemma1":
        _run_lemma1(config, out)
    elif config.command == "kernel-dump":
        _run_kernel_dump(config, out)
    else:
        _run_sweep(config, out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        config = parse_config(argv)
    except UsageError as exc:
        print(f"domp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return run(config)
    except UsageError as exc:
        print(f"domp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DompError, ArithmeticError, ValueError, OSError) as exc:
        print(f"domp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
