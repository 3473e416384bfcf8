"""Named experiments driven by plain configuration dictionaries.

Each experiment returns an :class:`ExperimentResult` holding a JSON-ready
report, optional CSV series, binary artifacts and named checks.  The CLI
writes these out; nothing here touches the filesystem except explicit input
files named in the configuration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .canonical import position
from .errors import ConfigError, PSQError
from .fock import (
    DEFAULT_TOL,
    GeneratingOperator,
    StateVector,
    Tolerances,
    coherent_vector,
    fock_vector,
    generating_from_json,
    interior,
    make_coherent_projector,
    make_number_mixture,
    make_number_state,
    make_power_law,
    make_squeezed_vacuum,
    make_thermal,
    min_eigenvalue,
    squeezed_vacuum_vector,
)
from .grid import PhaseSpaceGrid, cartesian_grid, parse_grid_flag, polar_grid
from .integral import cauchy_counterexample, gamma_axioms_check
from .moments import (
    moment_coefficients,
    moment_operator,
    noise_report,
    optimal_T_scan,
    quadrature_moments,
)
from .povm import (
    DiscretePOVM,
    build_povm,
    cartesian_margin,
    check_phase_covariance,
    check_translation_covariance,
    povm_from_bytes,
    povm_from_json,
    povm_to_bytes,
)
from .spectrality import (
    dilation_invariants,
    dilation_to_bytes,
    naimark_dilate,
    spectrality_verdict,
)


@dataclass(frozen=True)
class Check:
    passed: bool
    value: float
    threshold: float
    relation: str


@dataclass
class ExperimentResult:
    report: dict
    checks: dict[str, Check] = field(default_factory=dict)
    tables: dict[str, list[list]] = field(default_factory=dict)
    blobs: dict[str, bytes] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def check(self, name: str, value: float, threshold: float, relation: str = "<=") -> None:
        ops = {"<=": value <= threshold, "<": value < threshold, ">=": value >= threshold, ">": value > threshold}
        self.checks[name] = Check(bool(ops[relation]), float(value), float(threshold), relation)


# --- parsing helpers -----------------------------------------------------------------


def parse_T(spec: Any, dim: int, tol: Tolerances = DEFAULT_TOL) -> GeneratingOperator:
    """Generating operator from a spec.

    Strings: ``number:N``, ``thermal:S``, ``coherent:RE,IM``,
    ``squeezed:VAR_Q``, ``mixture:w0,w1,...``, ``power:EXPONENT``, or a path
    to a JSON file in the generating-operator format.  Tables use the same
    names as ``kind`` with the parameter under ``value``.
    """
    if isinstance(spec, dict):
        if "kind" not in spec:
            raise ConfigError("generating operator table needs a 'kind'")
        if spec["kind"] in ("matrix", "number_mixture", "coherent") and "payload" in spec:
            return generating_from_json({"dim": dim, **spec}, tol)
        val = spec.get("value", "")
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        spec = f"{spec['kind']}:{val}"
    if not isinstance(spec, str):
        raise ConfigError(f"cannot interpret generating operator spec {spec!r}")
    if ":" not in spec:
        path = Path(spec)
        if not path.exists():
            raise ConfigError(f"generating operator spec {spec!r} is neither a known form nor a file")
        obj = json.loads(path.read_text())
        return generating_from_json(obj, tol)
    kind, _, arg = spec.partition(":")
    try:
        if kind == "number":
            return make_number_state(int(arg), dim)
        if kind == "thermal":
            return make_thermal(float(arg), dim, tol)
        if kind == "coherent":
            parts = [float(x) for x in arg.split(",")]
            re, im = (parts + [0.0])[:2]
            return make_coherent_projector(complex(re, im), dim, tol=tol)
        if kind == "squeezed":
            return make_squeezed_vacuum(float(arg), dim, tol=tol)
        if kind == "mixture":
            return make_number_mixture([float(x) for x in arg.split(",")], dim, tol)
        if kind == "power":
            return make_power_law(float(arg), dim)
    except ValueError as exc:
        raise ConfigError(f"bad generating operator spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown generating operator kind {kind!r}")


def parse_state(spec: Any, dim: int) -> np.ndarray:
    """State vector from ``fock:N``, ``coherent:RE,IM``, ``squeezed:VAR`` or
    an explicit list of ``[re, im]`` amplitudes."""
    if isinstance(spec, list):
        arr = np.asarray(spec, dtype=float)
        v = arr[:, 0] + 1j * arr[:, 1] if arr.ndim == 2 else arr.astype(complex)
        if v.size != dim:
            raise ConfigError(f"state has {v.size} amplitudes, expected {dim}")
        return StateVector.from_amplitudes(v).amplitudes
    kind, _, arg = str(spec).partition(":")
    if kind == "fock":
        return fock_vector(int(arg), dim)
    try:
        if kind == "coherent":
            parts = [float(x) for x in arg.split(",")]
            re, im = (parts + [0.0])[:2]
            v = coherent_vector(complex(re, im), dim)
            return v / np.linalg.norm(v)
        if kind == "squeezed":
            v = squeezed_vacuum_vector(float(arg), dim)
            return v / np.linalg.norm(v)
    except ValueError as exc:
        raise ConfigError(f"bad state spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown state spec {spec!r}")


def make_grid(cfg: dict) -> PhaseSpaceGrid:
    g = cfg.get("grid", {})
    if isinstance(g, str):
        return parse_grid_flag(g)
    kind = g.get("kind", "cartesian")
    order = int(g.get("order", 6))
    try:
        if kind == "cartesian":
            q0, q1, p0, p1 = (float(x) for x in g.get("window", [-8, 8, -8, 8]))
            nx, ny = (int(x) for x in g.get("cells", [32, 32]))
            return cartesian_grid(q0, q1, p0, p1, nx, ny, order)
        if kind == "polar":
            return polar_grid(
                float(g.get("r_max", 8.0)),
                int(g.get("n_r", 16)),
                int(g.get("n_theta", 16)),
                order,
                float(g.get("theta0", 0.0)),
            )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid section: {exc}") from exc
    raise ConfigError(f"unknown grid kind {kind!r}")


def tolerances(cfg: dict) -> Tolerances:
    over = cfg.get("tolerances", {})
    try:
        return DEFAULT_TOL.override(**{k: float(v) for k, v in over.items()})
    except TypeError as exc:
        raise ConfigError(f"unknown tolerance: {exc}") from exc


def load_povm(path: str) -> DiscretePOVM:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"POVM file {path!r} does not exist")
    data = p.read_bytes()
    if data[:8] == b"PSQPOVM1":
        return povm_from_bytes(data)
    return povm_from_json(json.loads(data))


def _dim(cfg: dict) -> int:
    d = int(cfg.get("dim", 60))
    if d < 2:
        raise ConfigError("dim must be at least 2")
    return d


def _params(cfg: dict) -> dict:
    return cfg.get("params", {})


# --- experiments -----------------------------------------------------------------------


def exp_normalization(cfg: dict) -> ExperimentResult:
    d, tol = _dim(cfg), tolerances(cfg)
    gen = parse_T(cfg.get("T", "number:0"), d, tol)
    grid = make_grid(cfg)
    povm = build_povm(grid, gen, tol=tol, workers=int(cfg.get("threads", 1)))
    mins = [min_eigenvalue(e) for e in povm.effects]
    norm = float(np.abs(povm.total() - np.eye(d)).max())
    res = ExperimentResult(
        {
            "min_effect_eig": min(mins),
            "tail_min_eig": povm.tail_min_eig,
            "normalization_defect": norm,
            "tail_trace": float(np.trace(povm.tail).real),
            "n_effects": povm.n_effects,
        }
    )
    res.tables["effects"] = [["cell", "label", "min_eig", "trace"]] + [
        [i, povm.labels[i], mins[i], float(np.trace(povm.effects[i]).real)]
        for i in range(povm.n_effects)
    ]
    res.blobs["povm.bin"] = povm_to_bytes(povm)
    res.check("effects_positive", min(mins), -1e-8, ">=")
    res.check("tail_positive", povm.tail_min_eig, -1e-8, ">=")
    res.check("normalization", norm, 1e-13)
    return res


def central_cells(grid: PhaseSpaceGrid, size: int) -> list[int]:
    nx, ny = grid.shape
    i0, j0 = (nx - size) // 2, (ny - size) // 2
    return [i * ny + j for i in range(i0, i0 + size) for j in range(j0, j0 + size)]


def exp_covariance(cfg: dict) -> ExperimentResult:
    d, tol = _dim(cfg), tolerances(cfg)
    prm = _params(cfg)
    grid = make_grid(cfg)
    shift = tuple(int(s) for s in prm.get("shift", [1, 0]))
    size = int(prm.get("central", 8))
    bound = float(prm.get("bound", 1e-4))
    rep = {}
    res = ExperimentResult(rep)
    gen = parse_T(cfg.get("T", "number:0"), d, tol)
    povm = build_povm(grid, gen, tol=tol, workers=int(cfg.get("threads", 1)))
    cells = central_cells(grid, size)
    cr = check_translation_covariance(povm, shift, gen, cells)
    rep.update({"dim": d, "shift": list(shift), "g": list(cr.params["g"]), "max_defect": cr.max_defect})
    res.tables["covariance"] = [["cell", "defect"]] + [
        [c, v] for c, v in zip(cr.params["cells"], cr.per_cell_defects)
    ]
    res.check("central_defect", cr.max_defect, bound, "<")
    dims = [int(x) for x in prm.get("doubling", [])]
    if dims:
        scan = []
        for dd in dims:
            g2 = gen.at_dim(dd)
            p2 = build_povm(grid, g2, tol=tol, workers=int(cfg.get("threads", 1)))
            scan.append(check_translation_covariance(p2, shift, g2, block=dd).max_defect)
        rep["doubling"] = {"dims": dims, "full_block_defect": scan}
        res.tables["doubling"] = [["dim", "full_block_defect"]] + [[a, b] for a, b in zip(dims, scan)]
        dec = max((b - a for a, b in zip(scan, scan[1:])), default=-1.0)
        res.check("decreases_with_dim", dec, 0.0, "<")
    return res


def exp_phase_covariance(cfg: dict) -> ExperimentResult:
    d, tol = _dim(cfg), tolerances(cfg)
    prm = _params(cfg)
    cfg = {**cfg, "grid": {"kind": "polar", **cfg.get("grid", {})}}
    grid = make_grid(cfg)
    gen = parse_T(cfg.get("T", "number:0"), d, tol)
    povm = build_povm(grid, gen, tol=tol, workers=int(cfg.get("threads", 1)))
    steps = int(prm.get("steps", 1))
    theta = steps * 2 * math.pi / grid.shape[1]
    cr = check_phase_covariance(povm, theta, gen)
    res = ExperimentResult({"dim": d, "theta": theta, "max_defect": cr.max_defect})
    res.tables["phase_covariance"] = [["cell", "defect"]] + [
        [i, v] for i, v in enumerate(cr.per_cell_defects)
    ]
    res.check("interior_defect", cr.max_defect, float(prm.get("bound", 1e-5)), "<")
    return res


def exp_moments(cfg: dict) -> ExperimentResult:
    d, tol = _dim(cfg), tolerances(cfg)
    prm = _params(cfg)
    k = int(prm.get("k", 1))
    axis = str(prm.get("axis", "x"))
    gen = parse_T(cfg.get("T", "number:0"), d, tol)
    mc = moment_coefficients(k, gen, axis)
    op = moment_operator(k, gen, axis)
    b = int(prm.get("block", interior(d)))
    rep = {"k": k, "axis": axis, "coeffs": mc.coeffs.tolist(), "traces": mc.traces.tolist()}
    res = ExperimentResult(rep)
    if k == 1:
        from .canonical import quadrature_power

        ident = float(np.abs(op - (quadrature_power(d, axis, 1) - mc.traces[1] * np.eye(d))).max())
        rep["first_moment_identity"] = ident
        res.check("first_moment_identity", ident, 1e-14)
    if prm.get("oracle", False):
        grid = make_grid(cfg)
        qm = quadrature_moments(gen, grid, [(axis, k)], rows=b, workers=int(cfg.get("threads", 1)))
        dft = float(np.linalg.norm(qm.ops[(axis, k)] - op[:b, :b], 2))
        rep["defects"] = {"oracle_block": dft, "block": b}
        rep["tail_mass_max"] = float(qm.tail_mass.max())
        rep["moment_tail_estimate"] = qm.moment_tail[(axis, k)]
        res.tables["tail_mass"] = [["index", "tail_mass"]] + [
            [i, float(v)] for i, v in enumerate(qm.tail_mass)
        ]
        res.check("oracle_defect", dft, float(prm.get("bound", 1e-5)))
    return res


def _noise_dict(name: str, nr) -> dict:
    return {
        "name": name,
        "mean_q": nr.mean_q,
        "mean_p": nr.mean_p,
        "var_q": nr.var_q,
        "var_p": nr.var_p,
        "product": nr.product,
        "offdiag": nr.offdiag,
        "spread": nr.spread,
        "scalar": nr.scalar,
        "block": nr.block,
        "domain": nr.domain,
    }


def exp_noise(cfg: dict) -> ExperimentResult:
    d, tol = _dim(cfg), tolerances(cfg)
    spec = cfg.get("T", "number:0")
    gen = parse_T(spec, d, tol)
    nr = noise_report(gen)
    res = ExperimentResult({"variances": _noise_dict(str(spec), nr)})
    res.check("noise_scalar", max(max(nr.offdiag.values()), max(nr.spread.values())), 1e-8)
    if nr.centered:
        res.check("uncertainty_product", nr.product, 0.25 - 1e-9, ">=")
    return res


def exp_scan_T(cfg: dict) -> ExperimentResult:
    d, tol = _dim(cfg), tolerances(cfg)
    prm = _params(cfg)
    cands = prm.get("candidates")
    if isinstance(cands, str):
        cands = _read_candidates(cands)
    if cands is None:
        cands = [
            {"name": "vacuum", "T": "number:0"},
            {"name": "number1", "T": "number:1"},
            {"name": "thermal0.5", "T": "thermal:0.5"},
            {"name": "coherent1", "T": "coherent:1,0"},
        ]
    named = [(str(c["name"]), parse_T(c["T"], d, tol)) for c in cands]
    ranking = optimal_T_scan(named, bool(prm.get("symmetry_required", True)))
    res = ExperimentResult({"ranking": ranking, "candidates": [n for n, _ in named]})
    cols = ["name", "var_q", "var_p", "product", "attains_bound", "symmetric", "optimal"]
    res.tables["ranking"] = [cols] + [[r[c] for c in cols] for r in ranking]
    low = min((r["product"] for r in ranking), default=0.25)
    res.check("uncertainty_product", low, 0.25 - 1e-9, ">=")
    return res


def _read_candidates(path: str) -> list:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"candidate file {path!r} does not exist")
    text = p.read_text()
    if p.suffix == ".toml":
        from .config import loads_toml

        return loads_toml(text).get("candidate", [])
    obj = json.loads(text)
    return obj["candidates"] if isinstance(obj, dict) else obj


def _states(cfg: dict, d: int) -> list[np.ndarray]:
    prm = _params(cfg)
    spec = prm.get("states", ["fock:0"])
    if isinstance(spec, str) and ":" not in spec:
        p = Path(spec)
        if not p.exists():
            raise ConfigError(f"states file {spec!r} does not exist")
        spec = json.loads(p.read_text())
    return [parse_state(s, d) for s in spec]


def _source_povm(cfg: dict) -> DiscretePOVM:
    prm = _params(cfg)
    if "povm" in prm:
        return load_povm(prm["povm"])
    d, tol = _dim(cfg), tolerances(cfg)
    src = prm.get("source", "margin")
    if src == "binned-q":
        from .spectrality import binned_spectral_measure

        h = float(prm.get("bin_width", 0.5))
        half = float(prm.get("half_range", 8.0))
        n = int(round(2 * half / h))
        return binned_spectral_measure(position(d), np.linspace(-half, half, n + 1))
    gen = parse_T(cfg.get("T", "number:0"), d, tol)
    povm = build_povm(make_grid(cfg), gen, tol=tol, workers=int(cfg.get("threads", 1)))
    if src == "margin":
        return cartesian_margin(povm, str(prm.get("axis", "x")))
    if src == "full":
        return povm
    raise ConfigError(f"unknown POVM source {src!r}")


def exp_spectrality(cfg: dict) -> ExperimentResult:
    povm = _source_povm(cfg)
    prm = _params(cfg)
    states = _states(cfg, povm.dim)
    v = spectrality_verdict(
        povm, states, n_pairs=int(prm.get("n_pairs", 64)), seed=int(cfg.get("seed", 0))
    )
    wit = {k: _plain(w) for k, w in v.witnesses.items()}
    res = ExperimentResult(
        {
            "mult_defect": v.mult_defect,
            "variance_defects": v.variance_defects,
            "verdict": v.verdict,
            "witnesses": wit,
        }
    )
    res.check("variance_nonnegative", min(v.variance_defects, default=0.0), -1e-12, ">=")
    expect = prm.get("expect")
    if expect is not None:
        res.check("verdict_matches", 0.0 if v.verdict == expect else 1.0, 0.0)
    return res


def exp_dilate(cfg: dict) -> ExperimentResult:
    povm = _source_povm(cfg)
    dil = naimark_dilate(povm, float(_params(cfg).get("clip_tol", 1e-10)))
    inv = dilation_invariants(dil, povm)
    res = ExperimentResult({"dim": dil.dim, "blocks": dil.n_blocks, "clipping": dil.clipping, **inv})
    res.blobs["dilation.bin"] = dilation_to_bytes(dil)
    res.check("isometry", inv["isometry"], 1e-12)
    res.check("projections", inv["projections"], 0.0)
    res.check("reconstruction", inv["reconstruction"], 1e-10)
    return res


def exp_counterexample(cfg: dict) -> ExperimentResult:
    prm = _params(cfg)
    rep = cauchy_counterexample(float(prm.get("half_width", 1000.0)), int(prm.get("cells_per_unit", 20)))
    cut = list(rep.cutoffs)
    growth = None
    if 10.0 in cut and 100.0 in cut:
        growth = float(rep.values[cut.index(100.0)] - rep.values[cut.index(10.0)])
    res = ExperimentResult(
        {
            "cutoffs": rep.cutoffs.tolist(),
            "one_sided": rep.values.tolist(),
            "symmetric": rep.extras["symmetric"].tolist(),
            "verdict": rep.verdict,
            "vector_verdict": rep.extras["vector_verdict"],
            "slope": rep.slope,
            "growth_10_100": growth,
            "domain": rep.extras["domain"],
        }
    )
    res.tables["counterexample"] = [["cutoff", "one_sided", "symmetric"]] + [
        [float(n), float(a), float(b)]
        for n, a, b in zip(rep.cutoffs, rep.values, rep.extras["symmetric"])
    ]
    res.check("symmetric_zero", rep.extras["symmetric_max"], 1e-12)
    res.check("diverged", 0.0 if rep.verdict == "diverged" else 1.0, 0.0)
    if growth is not None:
        res.check("log_growth", abs(growth - math.log(10) / math.pi), 1e-2)
    return res


def exp_gamma(cfg: dict) -> ExperimentResult:
    prm = _params(cfg)
    povm = _source_povm({**cfg, "params": {"source": "full", **prm}})
    rep = gamma_axioms_check(povm, int(prm.get("trials", 100)), int(cfg.get("seed", 0)))
    res = ExperimentResult(
        {
            "trials": rep.trials,
            "positivity": rep.positivity,
            "linearity": rep.linearity,
            "monotonicity": rep.monotonicity,
            "limit": rep.limit,
            "normalization": rep.normalization,
        }
    )
    res.check("axioms", 0.0 if rep.passed else 1.0, 0.0)
    return res


EXPERIMENTS: dict[str, Callable[[dict], ExperimentResult]] = {
    "normalization": exp_normalization,
    "covariance": exp_covariance,
    "phase-covariance": exp_phase_covariance,
    "moments": exp_moments,
    "noise": exp_noise,
    "scan-T": exp_scan_T,
    "spectrality": exp_spectrality,
    "dilate": exp_dilate,
    "counterexample": exp_counterexample,
    "gamma": exp_gamma,
}


def run_experiment(cfg: dict) -> ExperimentResult:
    name = cfg.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    try:
        return EXPERIMENTS[name](cfg)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    except PSQError:
        raise


def _plain(x):
    if isinstance(x, (tuple, list)):
        return [_plain(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    return x
