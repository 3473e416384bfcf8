"""Command-line entry point ``psq``.

Exit status: 0 when every check passes, 1 when a check fails, 2 for usage
or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import ConfigError, ExperimentFailed, PSQError
from .experiments import EXPERIMENTS, ExperimentResult, run_experiment

log = logging.getLogger("psq")

GLOBAL_FLAGS = ("dim", "out", "seed", "threads")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_jsonable(x.real), _jsonable(x.imag)]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) or math.isinf(x) else x
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _csv_text(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_outputs(out: Path, name: str, cfg: dict, res: ExperimentResult) -> list[str]:
    """Write report, tables, blobs and the manifest; return written names."""
    out.mkdir(parents=True, exist_ok=True)
    files = {f"{name}.json": dumps(res.report).encode()}
    for t, rows in sorted(res.tables.items()):
        files[f"{t}.csv"] = _csv_text(rows).encode()
    for b, data in sorted(res.blobs.items()):
        files[b] = data
    manifest = {
        "experiment": name,
        "version": __version__,
        "config": cfg,
        "checks": {
            k: {"passed": c.passed, "value": c.value, "threshold": c.threshold, "relation": c.relation}
            for k, c in sorted(res.checks.items())
        },
        "passed": res.passed,
        "outputs": sorted(files),
    }
    files["manifest.json"] = dumps(manifest).encode()
    for fn in sorted(files):
        (out / fn).write_bytes(files[fn])
    return sorted(files)


def _add_globals(p: argparse.ArgumentParser) -> None:
    sup = argparse.SUPPRESS
    p.add_argument("--dim", type=int, default=sup, help="Fock cutoff D")
    p.add_argument("--out", default=sup, help="output directory (output file for dilate)")
    p.add_argument("--seed", type=int, default=sup, help="seed for randomized checks")
    p.add_argument("--threads", type=int, default=sup, help="worker threads for cell evaluation")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psq", description="Covariant phase-space POVM experiments")
    p.add_argument("--version", action="version", version=f"psq {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_globals(p)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run an experiment described by a TOML file")
    s.add_argument("config")
    _add_globals(s)

    s = sub.add_parser("moments", help="closed-form moment operator, optionally vs quadrature")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--T", dest="T", default="number:0")
    s.add_argument("--axis", choices=["x", "y"], default="x")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--grid", help="qmin,qmax,pmin,pmax,nx,ny")
    s.add_argument("--block", type=int)
    _add_globals(s)

    s = sub.add_parser("noise", help="noise operators and variance product")
    s.add_argument("--T", dest="T", default="number:0")
    _add_globals(s)

    s = sub.add_parser("scan-T", help="rank generating operators by variance product")
    s.add_argument("--candidates", required=True, help="JSON or TOML candidate list")
    _add_globals(s)

    s = sub.add_parser("spectrality", help="projection-valuedness witnesses of a POVM file")
    s.add_argument("--povm", required=True)
    s.add_argument("--states", help="JSON list of state specs")
    _add_globals(s)

    s = sub.add_parser("dilate", help="Naimark dilation of a POVM file")
    s.add_argument("--povm", required=True)
    _add_globals(s)

    s = sub.add_parser("counterexample", help="Cauchy-density truncated integrals")
    s.add_argument("--half-width", type=float, default=1000.0)
    s.add_argument("--cells-per-unit", type=int, default=20)
    _add_globals(s)

    s = sub.add_parser("covariance", help="translation covariance of E^T on a grid")
    s.add_argument("--grid", help="qmin,qmax,pmin,pmax,nx,ny")
    s.add_argument("--T", dest="T", default="number:0")
    s.add_argument("--shift", default="1,0", help="whole cells along q,p")
    _add_globals(s)
    return p


def _config_from_args(ns: argparse.Namespace) -> dict:
    if ns.command == "run":
        cfg = load_config(ns.config)
    else:
        cfg = {"experiment": ns.command, "params": {}}
        prm = cfg["params"]
        if getattr(ns, "T", None) is not None:
            cfg["T"] = ns.T
        if getattr(ns, "grid", None):
            cfg["grid"] = ns.grid
        if ns.command == "moments":
            prm.update({"k": ns.k, "axis": ns.axis, "oracle": ns.oracle})
            if ns.block is not None:
                prm["block"] = ns.block
        elif ns.command == "scan-T":
            prm["candidates"] = ns.candidates
        elif ns.command in ("spectrality", "dilate"):
            prm["povm"] = ns.povm
            if getattr(ns, "states", None):
                prm["states"] = ns.states
        elif ns.command == "counterexample":
            prm.update({"half_width": ns.half_width, "cells_per_unit": ns.cells_per_unit})
        elif ns.command == "covariance":
            try:
                prm["shift"] = [int(x) for x in ns.shift.split(",")]
            except ValueError as exc:
                raise ConfigError(f"bad shift {ns.shift!r}") from exc
    for flag in GLOBAL_FLAGS:
        if hasattr(ns, flag) and flag != "out":
            cfg[flag] = getattr(ns, flag)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config_from_args(ns)
        name = cfg.get("experiment")
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}")
        res = run_experiment(cfg)
    except ConfigError as exc:
        print(f"psq: config error: {exc}", file=sys.stderr)
        return 2
    except PSQError as exc:
        print(f"psq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    out = getattr(ns, "out", None) or cfg.get("output", {}).get("dir")
    if name == "dilate" and out and "dilation.bin" in res.blobs and ns.command == "dilate":
        target = Path(out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(res.blobs["dilation.bin"])
        Path(str(target) + ".json").write_text(dumps(res.report))
    elif out:
        write_outputs(Path(out), name, cfg, res)
    summary = {"experiment": name, "passed": res.passed, "report": res.report}
    sys.stdout.write(dumps(summary))
    if not res.passed:
        failed = sorted(k for k, c in res.checks.items() if not c.passed)
        print(f"psq: failed checks: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()


__all__ = ["main", "build_parser", "write_outputs", "ExperimentFailed"]
