"""Command-line front end: data files in, deterministic JSON and CSV out.

Subcommands: fit, ci, predict, test, simulate, eigensys.  Every invocation
is pure given its input files, flags, and seed.  Exit codes: 0 success,
1 numeric or model failure, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from . import eigensys, fitter, inference, lrt, simlab
from .errors import ArgumentError, DataError, NumericError, SplinthError
from .family import Family, parse_family

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2
EXIT_DATA = 3

G_GRID_POINTS = 201


# ------------------------------------------------------------------ #
#  serialization
# ------------------------------------------------------------------ #

def _real(x: float) -> str:
    if not math.isfinite(x):
        raise NumericError(f"non-finite value {x!r} cannot be serialized")
    return format(float(x), ".17g")


def dumps(value) -> str:
    """Deterministic JSON: sorted keys, reals at 17 significant digits."""
    parts: list[str] = []
    _dump(value, parts)
    return "".join(parts)


def _dump(value, parts: list) -> None:
    if isinstance(value, (bool, np.bool_)):
        parts.append("true" if value else "false")
    elif isinstance(value, (int, np.integer)):
        parts.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        parts.append(_real(float(value)))
    elif isinstance(value, str):
        parts.append(json.dumps(value))
    elif value is None:
        parts.append("null")
    elif isinstance(value, dict):
        parts.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise ArgumentError(f"JSON object keys must be strings, got {key!r}")
            if i:
                parts.append(",")
            parts.append(json.dumps(key))
            parts.append(":")
            _dump(value[key], parts)
        parts.append("}")
    elif isinstance(value, (list, tuple, np.ndarray)):
        parts.append("[")
        for i, item in enumerate(value):
            if i:
                parts.append(",")
            _dump(item, parts)
        parts.append("]")
    else:
        raise ArgumentError(f"cannot serialize {type(value).__name__}")


def emit(payload: dict, path: str | None) -> None:
    """Write the JSON document to ``path``, or stdout when path is None."""
    text = dumps(payload) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise NumericError(f"cannot write {path}: {exc}") from exc


def _csv_field(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _real(float(value))
    return str(value)


def write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_csv_field(row.get(c)) for c in columns])
    except OSError as exc:
        raise NumericError(f"cannot write {path}: {exc}") from exc


# ------------------------------------------------------------------ #
#  data ingestion
# ------------------------------------------------------------------ #

def read_csv(path: str) -> fitter.Dataset:
    """Load a dataset from a CSV file with header columns y, x1..xp, z.

    Malformed cells are reported with their data row (1-based, header
    excluded) and column name.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "y" or header[-1] != "z":
            raise DataError(
                f"{path}: header must be y,x1..xp,z; got {','.join(header)}"
            )
        p = len(header) - 2
        for k in range(p):
            if header[k + 1] != f"x{k + 1}":
                raise DataError(
                    f"{path}: column {k + 2} must be x{k + 1}, got {header[k + 1]!r}"
                )
        records: list[list[float]] = []
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            values = []
            for name, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {name}: "
                        f"non-numeric value {cell.strip()!r}"
                    ) from None
            if not 0.0 <= values[-1] <= 1.0:
                raise DataError(
                    f"{path}: row {lineno}: z={values[-1]:g} outside [0,1]"
                )
            records.append(values)
    if not records:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(records)
    try:
        return fitter.Dataset(y=arr[:, 0], X=arr[:, 1:-1], Z=arr[:, -1])
    except ArgumentError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _load_weight(path: str):
    """Weight function from a CSV of (z, w) pairs, linearly interpolated."""
    try:
        raw = np.genfromtxt(path, delimiter=",", dtype=float)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    raw = np.atleast_2d(raw)
    if raw.shape[0] and np.isnan(raw[0]).all():
        raw = raw[1:]  # header row
    if raw.ndim != 2 or raw.shape[1] != 2 or raw.shape[0] < 2 or np.isnan(raw).any():
        raise DataError(f"{path}: expected two numeric columns (z, w)")
    order = np.argsort(raw[:, 0])
    zs, ws = raw[order, 0], raw[order, 1]
    if np.any(ws <= 0):
        raise DataError(f"{path}: weights must be positive")

    def weight(z):
        return np.interp(z, zs, ws)

    return weight


# ------------------------------------------------------------------ #
#  configuration
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class RunConfig:
    """Validated options for one subcommand invocation."""

    command: str
    data: str | None = None
    fit_path: str | None = None
    family: Family | None = None
    m: int = 2
    basis: str = "trig"
    n_basis: int = 61
    grid: int = 2048
    sigma: float = 1.0
    weight_file: str | None = None
    lam_policy: str = "gcv"
    lam: float | None = None
    level: float = 0.95
    x0: tuple[float, ...] | None = None
    z0: float | None = None
    what: str | None = None
    hypothesis: str | None = None
    design: str | None = None
    seed: int | None = None
    threads: int | None = None
    out: str | None = None
    g_csv: str | None = None
    cells_csv: str | None = None


def _parse_lambda(text: str) -> tuple[str, float | None]:
    if text == "gcv":
        return "gcv", None
    try:
        value = float(text)
    except ValueError:
        raise ArgumentError(
            f"--lambda must be 'gcv' or a positive number, got {text!r}"
        ) from None
    if not value > 0:
        raise ArgumentError(f"--lambda must be positive, got {value!r}")
    return "fixed", value


def _parse_x0(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(part) for part in str(text).split(","))
    except ValueError:
        raise ArgumentError(f"--x0 must be comma-separated reals, got {text!r}") from None


# (flag, dest, converter, default, help).  Converters run on both command
# line strings and config-file values, so flags and TOML stay equivalent.
_COMMON_MODEL = [
    ("--data", "data", str, None, "input CSV with header y,x1..xp,z"),
    ("--family", "family", parse_family, None, "gaussian | gamma:<alpha> | logistic"),
    ("--m", "m", int, 2, "penalty order (derivatives penalized)"),
    ("--basis", "basis", str, "trig", "eigensystem kind: trig | bvp"),
    ("--n-basis", "n_basis", int, 61, "number of retained basis functions"),
    ("--grid", "grid", int, 2048, "discretization grid for the bvp basis"),
    ("--sigma", "sigma", float, 1.0, "trig basis scale"),
    ("--weight-file", "weight_file", str, None, "CSV of (z, w) pairs for the bvp basis"),
    ("--lambda", "lam_spec", str, "gcv", "smoothing parameter: gcv | <value>"),
]
_OUT = [("--out", "out", str, None, "output JSON path (default stdout)")]

_OPTIONS: dict[str, list[tuple]] = {
    "fit": _COMMON_MODEL + _OUT + [
        ("--g-csv", "g_csv", str, None, "write the fitted g grid as CSV here"),
    ],
    "ci": _COMMON_MODEL + _OUT + [
        ("--fit", "fit_path", str, None, "reuse a saved fit JSON"),
        ("--x0", "x0", _parse_x0, None, "linear covariate point, comma separated"),
        ("--z0", "z0", float, None, "smooth covariate point in (0,1)"),
        ("--level", "level", float, 0.95, "confidence level"),
        ("--what", "what", str, "joint", "theta | g | joint | mean"),
    ],
    "predict": _COMMON_MODEL + _OUT + [
        ("--fit", "fit_path", str, None, "reuse a saved fit JSON"),
        ("--x0", "x0", _parse_x0, None, "linear covariate point, comma separated"),
        ("--z0", "z0", float, None, "smooth covariate point in (0,1)"),
        ("--level", "level", float, 0.95, "prediction level"),
    ],
    "test": _COMMON_MODEL + _OUT + [
        ("--hypothesis", "hypothesis", str, None,
         "JSON file with fields M, Q, alpha, z0, case"),
        ("--level", "level", float, 0.95, "test level"),
    ],
    "simulate": _OUT + [
        ("--design", "design", str, None, "TOML design file"),
        ("--threads", "threads", int, None,
         f"worker threads (default ${simlab.THREADS_ENV} or 1)"),
        ("--seed", "seed", int, None, "override the design base seed"),
        ("--cells-csv", "cells_csv", str, None, "write per-cell summaries as CSV here"),
    ],
    "eigensys": _OUT + [
        ("--m", "m", int, None, "penalty order"),
        ("--kind", "basis", str, "trig", "trig | bvp"),
        ("--sigma", "sigma", float, 1.0, "trig basis scale"),
        ("--n-basis", "n_basis", int, 61, "number of retained basis functions"),
        ("--grid", "grid", int, 2048, "discretization grid for the bvp basis"),
        ("--weight-file", "weight_file", str, None, "CSV of (z, w) pairs for the bvp kind"),
        ("--lambda", "lam_spec", str, "1e-3", "smoothing parameter for c0 and sigma_z0_sq"),
        ("--z0", "z0", float, 0.5, "evaluation point for c0 and sigma_z0_sq"),
    ],
}

_CHOICES = {"basis": ("trig", "bvp"), "what": ("theta", "g", "joint", "mean")}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splinth",
        description="Penalized partially linear regression: fitting, joint "
        "intervals, local likelihood-ratio tests, and seeded simulations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in _OPTIONS.items():
        sp = sub.add_parser(command)
        sp.add_argument("--config", default=argparse.SUPPRESS,
                        help="TOML file of option values; flags override it")
        for flag, dest, _conv, _default, help_text in options:
            # raw strings here; conversion happens after the config merge
            sp.add_argument(flag, dest=dest, default=argparse.SUPPRESS,
                            help=help_text, metavar="V")
    return parser


def parse_args(argv) -> RunConfig:
    """Parse and validate; raises SystemExit(2) or ArgumentError on misuse."""
    ns = _build_parser().parse_args(argv)
    command = ns.command
    explicit = {k: v for k, v in vars(ns).items() if k != "command"}
    config_path = explicit.pop("config", None)

    table = {dest: (conv, default) for _f, dest, conv, default, _h in _OPTIONS[command]}
    merged = {dest: default for dest, (_c, default) in table.items()}
    if config_path is not None:
        for key, value in _load_toml(config_path).items():
            dest = key.replace("-", "_")
            if dest == "lambda":
                dest = "lam_spec"
            if dest not in table:
                raise ArgumentError(f"{config_path}: unknown option {key!r} for {command}")
            merged[dest] = value
    merged.update(explicit)

    fields: dict = {"command": command}
    for dest, raw in merged.items():
        conv = table[dest][0]
        value = raw
        if value is not None and not (conv is str and isinstance(value, str)):
            try:
                value = conv(value)
            except ArgumentError:
                raise  # converter already names the offending flag
            except (TypeError, ValueError):
                raise ArgumentError(f"invalid value {raw!r} for --{dest.replace('_', '-')}") from None
        if dest in _CHOICES and value is not None and value not in _CHOICES[dest]:
            raise ArgumentError(
                f"--{dest} must be one of {', '.join(_CHOICES[dest])}, got {value!r}"
            )
        if dest == "lam_spec":
            fields["lam_policy"], fields["lam"] = _parse_lambda(value)
        else:
            fields[dest] = value
    config = RunConfig(**fields)
    _validate(config)
    return config


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ArgumentError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ArgumentError(f"{path}: {exc}") from exc
    return doc


def _require(config: RunConfig, **fields) -> None:
    for name, flag in fields.items():
        if getattr(config, name) is None:
            raise ArgumentError(f"{config.command} requires {flag}")


def _validate(config: RunConfig) -> None:
    cmd = config.command
    if cmd == "fit":
        _require(config, data="--data", family="--family")
    elif cmd in ("ci", "predict"):
        if config.fit_path is None:
            _require(config, data="--data", family="--family")
        _require(config, z0="--z0")
        if cmd == "predict" or config.what == "mean":
            _require(config, x0="--x0")
    elif cmd == "test":
        _require(config, data="--data", family="--family", hypothesis="--hypothesis")
    elif cmd == "simulate":
        _require(config, design="--design")
    elif cmd == "eigensys":
        _require(config, m="--m")
    if config.m is not None and config.m < 1:
        raise ArgumentError(f"--m must be >= 1, got {config.m}")
    if not 0.0 < config.level < 1.0:
        raise ArgumentError(f"--level must lie in (0,1), got {config.level}")
    if config.basis == "trig" and config.weight_file is not None:
        raise ArgumentError("--weight-file applies to the bvp basis only")


# ------------------------------------------------------------------ #
#  model assembly shared by the subcommands
# ------------------------------------------------------------------ #

def _build_system(config: RunConfig) -> eigensys.EigenSystem:
    if config.basis == "trig":
        return eigensys.build_trig(config.m, config.sigma, config.n_basis)
    if config.weight_file is not None:
        weight = _load_weight(config.weight_file)
    else:
        def weight(z):
            return np.ones_like(np.asarray(z, dtype=float))
    return eigensys.build_bvp(config.m, weight, config.n_basis, grid=config.grid)


def _family_text(fam: Family) -> str:
    if fam.kind == "gamma":
        return f"gamma:{_real(fam.shape)}"
    return fam.kind


def _fit_model(config: RunConfig, data: fitter.Dataset):
    system = _build_system(config)
    fam = config.family
    if config.lam_policy == "gcv":
        lam, _table = fitter.select_lambda(data, fam, system)
    else:
        lam = config.lam
    fit = fitter.fit(data, fam, system, lam)
    return fit, system


def _fit_payload(config: RunConfig, fit: fitter.FitResult, data: fitter.Dataset) -> dict:
    z_grid = np.linspace(0.0, 1.0, G_GRID_POINTS)
    return {
        "kind": "fit-result",
        "family": _family_text(fit.family),
        "m": config.m,
        "basis": config.basis,
        "n_basis": config.n_basis,
        "grid": config.grid,
        "sigma": config.sigma,
        "weight_file": config.weight_file,
        "data_path": config.data,
        "n": data.n,
        "p": data.p,
        "lam_policy": config.lam_policy,
        "lam": fit.lam,
        "theta": fit.theta,
        "coef": fit.coef,
        "sigma2": fit.sigma2,
        "objective": fit.objective,
        "iterations": fit.iterations,
        "grad_norm": fit.grad_norm,
        "trace_smoother": fit.trace_smoother,
        "constrained": fit.constrained,
        "z_grid": z_grid,
        "g_hat": fit.g_at(z_grid),
    }


def _load_fit(path: str):
    """Rebuild (FitResult, record) from a fit JSON written by this CLI."""
    try:
        with open(path) as fh:
            record = json.load(fh)
    except OSError as exc:
        raise ArgumentError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"{path}: not valid JSON: {exc}") from exc
    try:
        config = RunConfig(
            command="fit",
            family=parse_family(record["family"]),
            m=int(record["m"]),
            basis=record["basis"],
            n_basis=int(record["n_basis"]),
            grid=int(record["grid"]),
            sigma=float(record["sigma"]),
            weight_file=record["weight_file"],
        )
        system = _build_system(config)
        fit = fitter.FitResult(
            theta=np.asarray(record["theta"], dtype=float),
            coef=np.asarray(record["coef"], dtype=float),
            lam=float(record["lam"]),
            family=config.family,
            system=system,
            iterations=int(record["iterations"]),
            grad_norm=float(record["grad_norm"]),
            objective=float(record["objective"]),
            trace_smoother=float(record["trace_smoother"]),
            sigma2=None if record["sigma2"] is None else float(record["sigma2"]),
            constrained=bool(record["constrained"]),
        )
    except KeyError as exc:
        raise ArgumentError(f"{path}: fit record is missing field {exc}") from exc
    return fit, record


def _fit_or_reload(config: RunConfig):
    """The (fit, system, data) triple behind ci and predict."""
    if config.fit_path is None:
        data = read_csv(config.data)
        fit, system = _fit_model(config, data)
        return fit, system, data
    fit, record = _load_fit(config.fit_path)
    data_path = config.data if config.data is not None else record.get("data_path")
    if data_path is None:
        raise ArgumentError(
            f"{config.fit_path} records no data path; pass --data explicitly"
        )
    return fit, fit.system, read_csv(data_path)


# ------------------------------------------------------------------ #
#  subcommands
# ------------------------------------------------------------------ #

def _cmd_fit(config: RunConfig) -> int:
    data = read_csv(config.data)
    fit, _system = _fit_model(config, data)
    payload = _fit_payload(config, fit, data)
    emit(payload, config.out)
    g_csv = config.g_csv
    if g_csv is None and config.out is not None:
        g_csv = config.out + ".g.csv"
    if g_csv is not None:
        rows = [{"z": z, "g": g} for z, g in zip(payload["z_grid"], payload["g_hat"])]
        write_csv(g_csv, ["z", "g"], rows)
    return EXIT_OK


def _cmd_predict(config: RunConfig) -> int:
    fit, system, data = _fit_or_reload(config)
    x0 = np.asarray(config.x0, dtype=float)
    lo, hi = inference.prediction_interval(
        fit, data, system, x0=x0, z0=config.z0, level=config.level
    )
    emit({
        "kind": "prediction",
        "x0": x0,
        "z0": config.z0,
        "level": config.level,
        "y_hat": float(x0 @ fit.theta + fit.g_at(config.z0)),
        "interval": [lo, hi],
        "length": hi - lo,
    }, config.out)
    return EXIT_OK


def _cmd_ci(config: RunConfig) -> int:
    fit, system, data = _fit_or_reload(config)
    payload: dict = {
        "kind": "confidence",
        "what": config.what,
        "z0": config.z0,
        "level": config.level,
    }
    if config.what == "mean":
        x0 = np.asarray(config.x0, dtype=float)
        lo, hi = inference.conditional_mean_ci(
            fit, data, system, x0=x0, z0=config.z0, level=config.level
        )
        payload["x0"] = x0
        payload["mean_interval"] = [lo, hi]
    else:
        joint = inference.joint_ci(fit, data, system, config.z0, level=config.level)
        payload["sigma_z0_sq"] = joint.sigma_z0_sq
        payload["h"] = joint.h
        if config.what in ("theta", "joint"):
            payload["theta_hat"] = fit.theta
            payload["theta_intervals"] = joint.theta_intervals
            payload["omega"] = joint.omega
        if config.what in ("g", "joint"):
            payload["g_hat_z0"] = fit.g_at(config.z0)
            payload["g_interval"] = joint.g_interval
    emit(payload, config.out)
    return EXIT_OK


def _load_hypothesis(path: str) -> lrt.Hypothesis:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ArgumentError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"{path}: not valid JSON: {exc}") from exc
    try:
        return lrt.Hypothesis(
            M=np.asarray(doc["M"], dtype=float),
            Q=np.asarray(doc["Q"], dtype=float),
            alpha=np.asarray(doc["alpha"], dtype=float),
            z0=float(doc["z0"]),
            case=doc.get("case", lrt.CASE_GENERAL),
        )
    except KeyError as exc:
        raise ArgumentError(f"{path}: hypothesis is missing field {exc}") from exc


def _cmd_test(config: RunConfig) -> int:
    data = read_csv(config.data)
    hyp = _load_hypothesis(config.hypothesis)
    system = _build_system(config)
    result = lrt.test(
        data, config.family, system, hyp,
        level=config.level, lam_policy=config.lam_policy, lam=config.lam,
    )
    payload = result.describe()
    payload.update({
        "kind": "lrt-result",
        "hypothesis": {
            "M": hyp.M, "Q": hyp.Q, "alpha": hyp.alpha,
            "z0": hyp.z0, "case": hyp.case,
        },
        "theta_hat": result.fit.theta,
        "g_hat_z0": result.fit.g_at(hyp.z0),
    })
    emit(payload, config.out)
    return EXIT_OK


def _cmd_eigensys(config: RunConfig) -> int:
    system = _build_system(config)
    lam = config.lam  # _parse_lambda guarantees a positive value or gcv
    if lam is None:
        raise ArgumentError("eigensys requires a numeric --lambda, not gcv")
    handle = eigensys.kernel(system, lam)
    c0_res = eigensys.c0(handle, config.z0)
    emit({
        "kind": "eigensystem",
        "basis": config.basis,
        "m": config.m,
        "n_basis": system.n_basis,
        "lambda": lam,
        "z0": config.z0,
        "gamma": system.gamma,
        "c0": c0_res.value,
        "c0_converged": c0_res.converged,
        "c0_levels": len(c0_res.ratios),
        "sigma_z0_sq": eigensys.sigma_z0_sq(handle, config.z0),
        "I1": eigensys.quadrature_Il(config.m, 1),
        "I2": eigensys.quadrature_Il(config.m, 2),
    }, config.out)
    return EXIT_OK


# ------------------------------------------------------------------ #
#  simulate
# ------------------------------------------------------------------ #

_PRESETS = {
    "acc": (simlab.acc_design, ("replications", "base_seed")),
    "coverage": (simlab.coverage_design, ("case", "replications", "base_seed")),
    "power": (simlab.power_design, ("replications", "base_seed")),
    "logistic": (simlab.logistic_design, ("variant", "replications", "base_seed")),
    "gamma": (simlab.gamma_design, ("shape", "replications", "base_seed")),
}

_DESIGN_FIELDS = (
    "model", "n", "theta0", "g0", "x_design", "scale", "replications",
    "base_seed", "lam_policy", "lam", "m", "n_basis",
)


def _design_from_doc(doc: dict, path: str, seed: int | None) -> simlab.SimDesign:
    spec = dict(doc.get("design", {}))
    preset = spec.pop("preset", None)
    if preset is not None:
        if preset not in _PRESETS:
            raise ArgumentError(
                f"{path}: unknown preset {preset!r}; known: {', '.join(sorted(_PRESETS))}"
            )
        builder, extras = _PRESETS[preset]
        if "n" not in spec:
            raise ArgumentError(f"{path}: preset designs need n")
        kwargs = {"n": int(spec.pop("n"))}
        for key in extras:
            if key in spec:
                kwargs[key] = spec.pop(key)
        design = builder(**kwargs)
        overrides = {}
        for key, value in spec.items():
            if key not in _DESIGN_FIELDS:
                raise ArgumentError(f"{path}: unknown design field {key!r}")
            overrides[key] = tuple(np.atleast_1d(value)) if key == "theta0" else value
        if overrides:
            design = replace(design, **overrides)
    else:
        unknown = set(spec) - set(_DESIGN_FIELDS)
        if unknown:
            raise ArgumentError(f"{path}: unknown design fields {sorted(unknown)}")
        if "theta0" in spec:
            spec["theta0"] = tuple(np.atleast_1d(spec["theta0"]))
        try:
            design = simlab.SimDesign(**spec)
        except TypeError as exc:
            raise ArgumentError(f"{path}: incomplete design: {exc}") from exc
    if seed is not None:
        design = replace(design, base_seed=seed)
    return design


def _x0_list(value, p: int, path: str) -> list[np.ndarray]:
    """x0 entries from TOML: scalars when p = 1, else vectors of length p."""
    if not isinstance(value, list) or not value:
        raise ArgumentError(f"{path}: x0 must be a nonempty list")
    if all(isinstance(v, (int, float)) for v in value):
        if p == 1:
            return [np.array([float(v)]) for v in value]
        vec = np.asarray(value, dtype=float)
        if vec.size != p:
            raise ArgumentError(f"{path}: x0 has {vec.size} entries, expected p={p}")
        return [vec]
    return [np.atleast_1d(np.asarray(v, dtype=float)) for v in value]


def _cmd_simulate(config: RunConfig) -> int:
    doc = _load_toml(config.design)
    study = doc.get("study")
    known = ("correlation", "coverage", "power")
    if study not in known:
        raise ArgumentError(
            f"{config.design}: study must be one of {', '.join(known)}, got {study!r}"
        )
    design = _design_from_doc(doc, config.design, config.seed)
    params = dict(doc.get(study, {}))

    if study == "correlation":
        z_grid = params.pop("z_grid", None)
        _no_leftovers(params, config.design, study)
        report = simlab.run_correlation_study(design, z_grid=z_grid, threads=config.threads)
    elif study == "coverage":
        level = float(params.pop("level", 0.95))
        x0s = _x0_list(params.pop("x0", None), design.p, config.design)
        z0s = params.pop("z0", None)
        _no_leftovers(params, config.design, study)
        if not isinstance(z0s, list) or not z0s:
            raise ArgumentError(f"{config.design}: coverage needs a z0 list")
        targets = [(x0, float(z0)) for x0 in x0s for z0 in z0s]
        report = simlab.run_coverage_study(
            design, targets, threads=config.threads, level=level
        )
    else:
        level = float(params.pop("level", 0.95))
        value = float(params.pop("value", 0.0))
        x0s = _x0_list(params.pop("x0", None), design.p, config.design)
        z0s = params.pop("z0", None)
        _no_leftovers(params, config.design, study)
        if not isinstance(z0s, list) or not z0s:
            raise ArgumentError(f"{config.design}: power needs a z0 list")
        hyps = [
            lrt.Hypothesis.combination(x0, value=value, z0=float(z0))
            for x0 in x0s for z0 in z0s
        ]
        report = simlab.run_power_study(
            design, hyps, threads=config.threads, level=level
        )

    payload = report.as_dict()
    payload["wall_clock"] = 0.0  # stripped so identical invocations emit identical bytes
    emit(payload, config.out)
    cells_csv = config.cells_csv
    if cells_csv is None and config.out is not None:
        cells_csv = config.out + ".cells.csv"
    if cells_csv is not None:
        columns = ["study", "model", "n", "kind", "component", "x0", "z0",
                   "value", "mcse", "mean_length", "n_used"]
        write_csv(cells_csv, columns, report.rows())
    return EXIT_OK


def _no_leftovers(params: dict, path: str, study: str) -> None:
    if params:
        raise ArgumentError(f"{path}: unknown {study} keys {sorted(params)}")


def read_report(path: str) -> simlab.SimReport:
    """Round-trip reader for the simulate subcommand's JSON output."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ArgumentError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"{path}: not valid JSON: {exc}") from exc
    try:
        dd = dict(doc["design"])
        dd["theta0"] = tuple(dd["theta0"])
        design = simlab.SimDesign(**dd)
        cells = tuple(
            simlab.Cell(
                kind=row["kind"], value=row["value"], mcse=row["mcse"],
                n_used=row["n_used"], component=row["component"],
                x0=row["x0"], z0=row["z0"], mean_length=row["mean_length"],
            )
            for row in doc["cells"]
        )
        return simlab.SimReport(
            study=doc["study"], design=design, cells=cells,
            replications=doc["replications"], excluded=tuple(doc["excluded"]),
            wall_clock=doc["wall_clock"],
        )
    except KeyError as exc:
        raise ArgumentError(f"{path}: report is missing field {exc}") from exc


# ------------------------------------------------------------------ #
#  dispatch
# ------------------------------------------------------------------ #

_COMMANDS = {
    "fit": _cmd_fit,
    "ci": _cmd_ci,
    "predict": _cmd_predict,
    "test": _cmd_test,
    "simulate": _cmd_simulate,
    "eigensys": _cmd_eigensys,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        config = parse_args(argv)
        return _COMMANDS[config.command](config)
    except DataError as exc:
        print(f"splinth: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArgumentError as exc:
        print(f"splinth: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SplinthError as exc:
        print(f"splinth: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
