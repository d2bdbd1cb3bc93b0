"""Command-line driver: ``asepkit {simulate,resolvent,fourier,oracle} CONFIG``.

Config files are sectioned ``key = value`` text::

    [model]
    dimension = 1
    density = 0.5
    jump_law = tasep

    [fourier]
    lambda = 1e-10:1e-4:13      # lo:hi:count, log-spaced; or a comma list

Exit codes: 0 ok, 1 compute failure, 2 config failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SUBCOMMANDS = ("simulate", "resolvent", "fourier", "oracle")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ parsing

def _floats(text):
    text = text.strip()
    if text.count(":") == 2 and "," not in text:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
        if lo <= 0 or hi <= 0 or n < 1:
            raise ValueError("log grid needs positive ends and a positive count")
        return list(np.logspace(math.log10(hi), math.log10(lo), n)) if n > 1 else [hi]
    return [float(v) for v in text.replace(" ", "").split(",") if v]


def _ints(text):
    return [int(v) for v in text.replace(" ", "").split(",") if v]


def _sides(text):
    return tuple(int(v) for v in text.lower().replace(" ", "").split("x"))


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA = {
    "model.dimension": (int, 1),
    "model.density": (float, 0.5),
    "model.jump_law": (str, "tasep"),
    "sim.lattice": (_sides, (1024,)),
    "sim.t_obs": (_floats, [1.0, 2.0, 5.0]),
    "sim.replicas": (int, 100),
    "sim.seed": (int, 0),
    "sim.jobs": (int, os.cpu_count() or 1),
    "sim.allow_wrap": (_bool, False),
    "resolvent.lambda": (_floats, [1e-2]),
    "resolvent.degree": (_ints, [2, 3, 4]),
    "resolvent.window": (int, 16),
    "resolvent.dynamics": (str, "hardcore"),
    "resolvent.tol": (float, 1e-10),
    "fourier.lambda": (_floats, list(np.logspace(-4, -10, 13))),
    "fourier.tol": (float, 1e-4),
    "oracle.sites": (_sides, (10,)),
    "oracle.lambda": (_floats, [1.0]),
    "output.dir": (str, None),
}


@dataclass
class RunConfig:
    subcommand: str
    values: dict
    explicit: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]


def parse_config(text, subcommand, source="<config>"):
    """Parse and validate; raises :class:`ConfigError` naming the key or line."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cp = configparser.ConfigParser(interpolation=None, strict=True,
                                   inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError(f"{source}, line {e.lineno}: key outside any [section]") from None
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"{source}, line {e.lineno}: duplicate key "
                          f"{e.section}.{e.option}") from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"{source}, line {e.lineno}: duplicate section [{e.section}]") from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else "?"
        raise ConfigError(f"{source}, line {lineno}: cannot parse") from None
    values = {k: v[1] for k, v in SCHEMA.items()}
    explicit = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            full = f"{section}.{key}"
            if full not in SCHEMA:
                raise ConfigError(f"{full}: unknown key")
            try:
                values[full] = SCHEMA[full][0](raw)
            except ValueError as e:
                raise ConfigError(f"{full}: cannot parse {raw!r} ({e})") from None
            explicit[full] = raw
    cfg = RunConfig(subcommand, values, explicit)
    validate(cfg)
    return cfg


def _require(ok, key, msg):
    if not ok:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg):
    v = cfg.values
    _require(v["model.dimension"] in (1, 2), "model.dimension", "must be 1 or 2")
    rho = v["model.density"]
    _require(0.0 < rho < 1.0, "model.density", f"must lie in (0, 1), got {rho:g}")
    _require(v["model.jump_law"] in ("tasep", "ssep"), "model.jump_law",
             "must be 'tasep' or 'ssep'")
    d = v["model.dimension"]
    sub = cfg.subcommand
    if sub == "simulate":
        _require(len(v["sim.lattice"]) == d, "sim.lattice", f"needs {d} side length(s)")
        _require(all(s >= 4 for s in v["sim.lattice"]), "sim.lattice", "sides must be >= 4")
        t = v["sim.t_obs"]
        _require(len(t) > 0 and all(x >= 0 and math.isfinite(x) for x in t)
                 and all(b > a for a, b in zip(t, t[1:])), "sim.t_obs",
                 "must be nonnegative and strictly increasing")
        _require(v["sim.replicas"] >= 2, "sim.replicas", "need at least 2 replicas")
        _require(v["sim.seed"] >= 0, "sim.seed", "must be nonnegative")
        _require(v["sim.jobs"] >= 1, "sim.jobs", "must be positive")
    elif sub == "resolvent":
        _require(len(v["resolvent.lambda"]) > 0 and all(l > 0 for l in v["resolvent.lambda"]),
                 "resolvent.lambda", "must be positive")
        _require(len(v["resolvent.degree"]) > 0 and set(v["resolvent.degree"]) <= {2, 3, 4},
                 "resolvent.degree", "degrees must be among 2, 3, 4")
        _require(v["resolvent.window"] >= 4, "resolvent.window", "must be at least 4")
        _require(v["resolvent.dynamics"] in ("hardcore", "free"), "resolvent.dynamics",
                 "must be 'hardcore' or 'free'")
        _require(v["resolvent.tol"] > 0, "resolvent.tol", "must be positive")
        _require(v["model.jump_law"] == "tasep", "model.jump_law",
                 "resolvent runs use the asymmetric law")
    elif sub == "fourier":
        lam = v["fourier.lambda"]
        _require(len(lam) >= 1 and all(0 < l <= 0.1 for l in lam), "fourier.lambda",
                 "values must lie in (0, 0.1]")
        _require(0 < v["fourier.tol"] < 1, "fourier.tol", "must lie in (0, 1)")
    elif sub == "oracle":
        sides = v["oracle.sites"]
        _require(len(sides) == d, "oracle.sites", f"needs {d} side length(s)")
        _require(int(np.prod(sides)) <= 16 and all(s >= 4 for s in sides), "oracle.sites",
                 "need sides >= 4 and at most 16 sites")
        _require(all(l > 0 for l in v["oracle.lambda"]), "oracle.lambda", "must be positive")


# ------------------------------------------------------------------ output

def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if not math.isfinite(x):
            raise ValueError(f"refusing to serialize non-finite value {x!r}")
        return format(x, ".17g")
    if value is None:
        return ""
    return str(value)


def emit_results(records, schema, path):
    """RFC-4180 CSV, LF endings, columns in ``schema`` order, 17 significant digits."""
    rows = []
    for i, rec in enumerate(records):
        missing = [c for c in schema if c not in rec]
        extra = [c for c in rec if c not in schema]
        if missing or extra:
            raise ValueError(f"record {i} does not match schema "
                             f"(missing {missing}, unexpected {extra})")
        rows.append([_fmt(rec[c]) for c in schema])
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(list(schema))
        w.writerows(rows)
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError("non-finite value in summary")
        return x
    return x


def _versions():
    import numba
    import scipy
    from importlib import metadata
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "package": own}


# -------------------------------------------------------------- subcommands

class ComputeFailure(RuntimeError):
    pass


def _law(cfg):
    from .lattice_model import build_jump_law, tasep_law
    d = cfg["model.dimension"]
    if cfg["model.jump_law"] == "tasep":
        return tasep_law(d)
    units = [tuple(int(i == j) * s for j in range(d)) for i in range(d) for s in (1, -1)]
    return build_jump_law(d, [(z, 0.5) for z in units])


def run_simulate(cfg):
    from . import kmc_sim as km
    from .lattice_model import torus_for
    law = _law(cfg)
    geom = torus_for(law, cfg["sim.lattice"])
    batch = km.simulate(geom, law, cfg["model.density"], cfg["sim.t_obs"],
                        cfg["sim.replicas"], cfg["sim.seed"], n_jobs=cfg["sim.jobs"])
    allow = cfg["sim.allow_wrap"]
    vel = km.estimate_velocity(batch, allow) if np.any(batch.t_obs > 0) else None
    diff = {e.t: e for e in km.estimate_diffusivity(batch, allow_wrap=allow)}
    spread = km.estimate_current_spread(batch, allow) if geom.d == 1 else None
    d = geom.d
    comps = [(i, j) for i in range(d) for j in range(i, d)]
    schema = ["t"] + [f"D{i+1}{j+1}{s}" for i, j in comps for s in ("", "_err")]
    if spread is not None:
        schema += ["spread", "spread_err"]
    records = []
    for k, t in enumerate(batch.t_obs):
        if t not in diff:
            continue
        e = diff[t]
        rec = {"t": t}
        for i, j in comps:
            rec[f"D{i+1}{j+1}"] = e.D[i, j]
            rec[f"D{i+1}{j+1}_err"] = e.stderr[i, j]
        if spread is not None:
            rec["spread"] = spread.spread[k]
            rec["spread_err"] = spread.stderr[k]
        records.append(rec)
    summary = {"replicas": batch.replicas, "seed": cfg["sim.seed"], "wrap_limit": km.wrap_limit(batch)}
    if vel is not None:
        summary["velocity"] = vel.velocity
        summary["velocity_err"] = vel.stderr
    return records, schema, summary


def run_resolvent(cfg):
    from . import resolvent_solver as rs
    schema = ["lambda", "degree", "value", "iterations", "window_converged"]
    records, checks = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for lam in cfg["resolvent.lambda"]:
            vals = {}
            for n in sorted(cfg["resolvent.degree"]):
                p = rs.ResolventProblem(lam, n, cfg["resolvent.window"], cfg["resolvent.dynamics"],
                                        cfg["model.dimension"], cfg["resolvent.tol"])
                r = rs.solve_truncated_resolvent(p)
                vals[n] = r.value
                records.append({"lambda": lam, "degree": n, "value": r.value,
                                "iterations": r.iterations,
                                "window_converged": bool(r.window_converged)})
            if set(vals) >= {2, 3, 4}:
                slack = 10 * cfg["resolvent.tol"] * max(abs(x) for x in vals.values())
                ok = vals[3] <= vals[4] + slack and vals[4] <= vals[2] + slack
                checks.append({"lambda": lam, "monotone": ok})
    summary = {"monotonicity": checks}
    bad = [c["lambda"] for c in checks if not c["monotone"]]
    if bad:
        raise ComputeFailure(f"monotonicity violated at lambda = {bad}", records, schema, summary)
    return records, schema, summary


def run_fourier(cfg):
    from . import fourier_bounds as fb
    d = cfg["model.dimension"]
    lam = sorted(cfg["fourier.lambda"], reverse=True)
    records, vals = [], []
    for l in lam:
        r = fb.degree3_lower_integral(l, d, tol=cfg["fourier.tol"], full=True)
        vals.append(r.value)
        records.append({"lambda": l, "value": r.value, "mesh_change": r.change})
    summary = {}
    if len(lam) >= 5:
        model = "power" if d == 1 else "logpower"
        fit = fb.fit_scaling(fb.ScalingSeries(lam, vals), model)
        summary.update(model=model, exponent=fit.exponent, exponent_stderr=fit.stderr,
                       residual=fit.residual)
    return records, ["lambda", "value", "mesh_change"], summary


def run_oracle(cfg):
    from . import exact_oracle as eo
    from .lattice_model import torus_for
    law = _law(cfg)
    geom = torus_for(law, cfg["oracle.sites"])
    gen = eo.build_generator_matrix(geom, law)
    rho = cfg["model.density"]
    stat = eo.check_stationarity(gen, rho)
    records = []
    for lam in cfg["oracle.lambda"]:
        c = eo.laplace_identity_check(gen, rho, lam)
        records.append({"lambda": lam, "lhs": c.lhs, "rhs": c.rhs, "rel_gap": c.rel_gap})
    gap = max(r["rel_gap"] for r in records)
    summary = {"stationarity_residual": stat, "max_rel_gap": gap}
    if stat > 1e-12 or gap > 1e-6:
        raise ComputeFailure("identity check failed", records, ["lambda", "lhs", "rhs", "rel_gap"],
                             summary)
    return records, ["lambda", "lhs", "rhs", "rel_gap"], summary


RUNNERS = {"simulate": run_simulate, "resolvent": run_resolvent,
           "fourier": run_fourier, "oracle": run_oracle}


def _out_dir(cfg, started):
    if cfg["output.dir"]:
        return Path(cfg["output.dir"])
    stamp = time.strftime("%Y%m%d-%H%M%S", time.localtime(started))
    return Path("results") / f"{cfg.subcommand}-{stamp}"


def run_config(path, subcommand, out=None):
    """Run one config file; returns the exit status."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        print(f"config error: cannot read {path}: {e.strerror}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text, subcommand, str(path))
        if out is not None:
            cfg.values["output.dir"] = out
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    started = time.time()
    status, error = 0, None
    try:
        records, schema, summary = RUNNERS[subcommand](cfg)
    except ComputeFailure as e:
        error, (records, schema, summary) = e.args[0], e.args[1:]
        status = 1
    except Exception as e:        # any numerical failure is a compute failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    out_dir = _out_dir(cfg, started)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        emit_results(records, schema, out_dir / f"{subcommand}.csv")
        doc = {"subcommand": subcommand,
               "config": {k: cfg.values[k] for k in sorted(cfg.values)},
               "versions": _versions(), "wall_time": time.time() - started,
               "status": "ok" if status == 0 else "failed", "error": error,
               "results": summary}
        with open(out_dir / f"{subcommand}_summary.json", "w", encoding="utf-8") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except (OSError, ValueError) as e:
        print(f"error: cannot write results: {e}", file=sys.stderr)
        return 1
    if error:
        print(f"error: {error}", file=sys.stderr)
    else:
        print(out_dir)
    return status


def main(argv=None):
    ap = argparse.ArgumentParser(prog="asepkit", description=__doc__.split("\n")[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("config", help="sectioned key=value config file")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    args = ap.parse_args(argv)
    return run_config(args.config, args.subcommand, args.out)


if __name__ == "__main__":
    sys.exit(main())
