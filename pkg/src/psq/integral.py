"""Operator integrals ``L(f, E)`` against discrete POVMs.

Two integration rules are available:

``"center"``
    ``sum_i f(w_i) E_i`` with ``w_i`` the representative point of cell ``i``.
``"nodes"``
    for POVMs built on a phase-space grid, ``f`` is integrated against the
    generating formula at the Gauss-Legendre nodes of every cell, so the
    result converges with the cell quadrature instead of at midpoint-rule
    rate.  Requires a callable ``f``.

The tail effect carries no outcome and is always excluded; its mass in a
given state can be reported or turned into an error.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import TailMassExceeded
from .fock import as_vector, density_of, hermitize, min_eigenvalue
from .povm import DiscretePOVM, _ordered_sum, iter_cell_operators, povm_from_effects

log = logging.getLogger(__name__)

PointFunction = Callable[[np.ndarray], np.ndarray]

DEFAULT_TAIL_BOUND = 1e-6


@dataclass(frozen=True)
class SampledFunction:
    """A function on the outcomes of a POVM, one value per non-tail cell.

    ``func`` (optional) evaluates the same function on arbitrary outcome
    points of shape ``(n, k)``; it is needed for the ``"nodes"`` rule.
    ``cap`` is the cutoff of the truncated function ``f~_n`` (values with
    ``|f| > n`` are replaced by zero); ``None`` means no truncation.
    """

    values: np.ndarray
    name: str = "f"
    func: PointFunction | None = field(default=None, compare=False, repr=False)
    cap: float | None = None

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values) or not np.any(np.imag(self.values))

    def truncated(self, n: float) -> "SampledFunction":
        """``f~_n``: keep values with ``|f| <= n``, zero elsewhere."""
        v = np.where(np.abs(self.values) <= n, self.values, 0)
        f = None
        if self.func is not None:
            base = self.func

            def f(pts, _base=base, _n=n):
                y = np.asarray(_base(pts))
                return np.where(np.abs(y) <= _n, y, 0)

        return replace(self, values=v, func=f, cap=n)

    def restricted(self, cells: Sequence[int]) -> "SampledFunction":
        """``chi_B f`` for ``B`` the union of the given cells (values only)."""
        mask = np.zeros(self.values.shape[0], dtype=bool)
        mask[list(cells)] = True
        return replace(self, values=np.where(mask, self.values, 0), func=None)


def sample(func: PointFunction, povm: DiscretePOVM, name: str = "f") -> SampledFunction:
    """Evaluate ``func`` at the representative points of ``povm``."""
    vals = np.asarray(func(povm.rep_points))
    if vals.shape != (povm.n_effects,):
        raise ValueError(f"function returned shape {vals.shape}, expected ({povm.n_effects},)")
    return SampledFunction(vals, name, func)


def coordinate(axis: int, power: int = 1, name: str | None = None) -> PointFunction:
    """The monomial ``x_axis ** power`` as a point function."""

    def f(pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float)[:, axis] ** power

    f.__name__ = name or f"x{axis}^{power}"
    return f


def tail_mass(povm: DiscretePOVM, state) -> float:
    """``<phi| tail |phi>`` (or ``Tr[rho tail]``)."""
    rho = density_of(state)
    return float(np.real(np.trace(rho @ povm.tail)))


def check_tail(povm: DiscretePOVM, state, bound: float = DEFAULT_TAIL_BOUND) -> float:
    m = tail_mass(povm, state)
    if m > bound:
        raise TailMassExceeded(f"tail carries mass {m:.3e} > {bound:.1e} in the given state")
    return m


def _lift(povm: DiscretePOVM, func: PointFunction) -> PointFunction:
    # node points are (q, p); 1-D margins see only their own coordinate
    if povm.axis is None:
        return func
    col = 0 if povm.axis == "x" else 1
    return lambda pts: func(pts[:, [col]])


def _parent_cells(povm: DiscretePOVM, effects: Sequence[int] | None) -> list[int]:
    if effects is None:
        return list(range(povm.grid.n_cells))
    if povm.groups is None:
        return sorted(int(i) for i in effects)
    return sorted(c for i in effects for c in povm.groups[i])


def node_integrals(
    povm: DiscretePOVM,
    funcs: Sequence[PointFunction | None],
    effects: Sequence[int] | None = None,
    rows: int | None = None,
    workers: int = 1,
) -> list[np.ndarray]:
    """Node-resolved ``int_B f dE`` for several ``f`` in one pass over the
    cells (``None`` meaning ``f = 1``).  ``effects`` selects ``B`` as a union
    of this POVM's effects; ``rows`` keeps only the leading block."""
    if not povm.node_resolved:
        raise ValueError("node rule needs a POVM built from a grid and generating operator")
    lifted = [None if f is None else _lift(povm, f) for f in funcs]
    size = povm.dim if rows is None else rows
    acc = [np.zeros((size, size), dtype=complex) for _ in funcs]
    cells = _parent_cells(povm, effects)
    for _, mats in iter_cell_operators(povm.grid, povm.generator, lifted, cells, rows, workers):
        for a, m in zip(acc, mats):
            a += m
    return acc


def op_integral(
    f: SampledFunction,
    povm: DiscretePOVM,
    rule: str = "center",
    state=None,
    policy: str = "exclude",
    bound: float = DEFAULT_TAIL_BOUND,
) -> np.ndarray:
    """``L(f, E)`` with the tail excluded.

    With ``policy="fail"`` and a ``state``, raises :class:`TailMassExceeded`
    when the tail carries more than ``bound`` of the state's probability;
    with ``policy="exclude"`` the excluded mass is only logged.
    """
    if f.values.shape[0] != povm.n_effects:
        raise ValueError("sampled function does not match the POVM's cells")
    if state is not None:
        m = tail_mass(povm, state)
        if policy == "fail" and m > bound:
            raise TailMassExceeded(f"tail carries mass {m:.3e} > {bound:.1e}")
        log.debug("operator integral excludes tail mass %.3e", m)
    elif policy == "fail":
        raise ValueError("policy 'fail' needs a state")
    if rule == "center":
        out = np.tensordot(f.values, povm.effects, axes=(0, 0))
    elif rule == "nodes":
        if f.func is None:
            raise ValueError("node rule needs a callable function")
        (out,) = node_integrals(povm, [f.func])
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return hermitize(out) if f.is_real else out


# --- truncated sequences ----------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Values of a sequence indexed by increasing cutoffs with a verdict.

    ``values`` are scalars (or vector norms), ``increments`` the norms of
    successive differences, ``slope`` the least-squares slope of ``values``
    against ``log(cutoff)`` over the verdict window.
    """

    cutoffs: np.ndarray
    values: np.ndarray
    increments: np.ndarray
    verdict: str
    slope: float
    reference: float | None = None
    partial: np.ndarray | None = field(default=None, repr=False)
    extras: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cutoff", "value", "increment"])
        inc = np.concatenate([[np.nan], self.increments])
        for n, v, d in zip(self.cutoffs, self.values, inc):
            w.writerow([repr(float(n)), repr(float(v)), "" if math.isnan(d) else repr(float(d))])
        return buf.getvalue()


def classify(
    cutoffs,
    values,
    increments,
    window: int = 4,
    atol: float = 1e-12,
    rtol: float = 1e-10,
    min_slope: float = 0.05,
) -> tuple[str, float]:
    """Verdict for a sequence: ``converged`` when the last ``window``
    increments vanish to tolerance; ``diverged`` when all of them are
    positive and the values grow with a log-cutoff slope above
    ``min_slope``; otherwise ``oscillating``."""
    n = np.asarray(cutoffs, dtype=float)
    v = np.asarray(values, dtype=float)
    inc = np.asarray(increments, dtype=float)
    k = min(window, len(n))
    slope = 0.0
    if k >= 2:
        slope = float(np.polyfit(np.log(n[-k:]), v[-k:], 1)[0])
    tail = inc[-(k - 1):] if k >= 2 else inc
    scale = atol + rtol * float(np.abs(v[-1])) if v.size else atol
    if tail.size == 0 or np.all(tail <= scale):
        return "converged", slope
    diffs = np.diff(v[-k:])
    if slope > min_slope and np.all(diffs > 0):
        return "diverged", slope
    return "oscillating", slope


def truncated_sequence(
    f: SampledFunction,
    povm: DiscretePOVM,
    cutoffs: Sequence[float],
    state,
    region: Sequence[int] | None = None,
    window: int = 4,
    min_slope: float = 0.05,
) -> ConvergenceReport:
    """Vectors ``L(chi_B f~_n, E) phi`` for each cutoff ``n``.

    Contributions ``f_i E_i phi`` are formed once and accumulated in cell
    order under each cutoff mask.  The reported value is the norm of the
    vector; increments are norms of successive differences.
    """
    cut = np.asarray(cutoffs, dtype=float)
    if cut.size == 0 or np.any(np.diff(cut) <= 0):
        raise ValueError("cutoffs must be strictly increasing")
    g = f if region is None else f.restricted(region)
    phi = as_vector(state)
    contrib = g.values[:, None] * (povm.effects @ phi)
    vecs = np.empty((cut.size, povm.dim), dtype=complex)
    absf = np.abs(g.values)
    for k, n in enumerate(cut):
        vecs[k] = _ordered_sum(contrib[absf <= n][:, :, None])[:, 0] if np.any(absf <= n) else 0.0
    norms = np.linalg.norm(vecs, axis=1)
    inc = np.linalg.norm(np.diff(vecs, axis=0), axis=1)
    verdict, slope = classify(cut, norms, inc, window, min_slope=min_slope)
    return ConvergenceReport(cut, norms, inc, verdict, slope, float(norms[-1]), vecs)


# --- axioms of the map f -> L(f, E) -------------------------------------------------


@dataclass(frozen=True)
class GammaReport:
    trials: int
    positivity: float
    linearity: float
    monotonicity: float
    limit: float
    normalization: float
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.positivity <= self.tol
            and self.linearity <= self.tol
            and self.monotonicity <= self.tol
            and self.limit <= self.tol
            and self.normalization <= self.tol
        )


def gamma_axioms_check(
    povm: DiscretePOVM,
    trials: int = 100,
    seed: int = 0,
    steps: int = 8,
    tol: float = 1e-10,
) -> GammaReport:
    """Check the defining properties of ``f -> L(f, E)`` on random bounded
    sampled functions (center rule).

    positivity
        ``f >= 0`` gives ``L(f) >= 0``: reports the most negative eigenvalue.
    linearity
        ``L(a f + g) = a L(f) + L(g)``: reports the largest entry defect.
    monotone limits
        along ``f_m = min(f, c_m)`` with ``c_m`` increasing to ``max f``,
        ``<phi|L(f_m) phi>`` is nondecreasing and reaches ``<phi|L(f) phi>``.
    normalization
        ``L(1) + tail = I``.
    """
    rng = np.random.default_rng(seed)
    n, d = povm.n_effects, povm.dim
    pos = lin = mono = lim = 0.0
    for _ in range(trials):
        f = rng.uniform(-1.0, 1.0, n)
        g = rng.uniform(-1.0, 1.0, n)
        a = float(rng.uniform(-3.0, 3.0))
        lf = np.tensordot(f, povm.effects, axes=(0, 0))
        lg = np.tensordot(g, povm.effects, axes=(0, 0))
        lc = np.tensordot(a * f + g, povm.effects, axes=(0, 0))
        lin = max(lin, float(np.abs(lc - (a * lf + lg)).max()))
        h = np.abs(f)
        lh = hermitize(np.tensordot(h, povm.effects, axes=(0, 0)))
        pos = max(pos, -min_eigenvalue(lh))
        phi = rng.normal(size=d) + 1j * rng.normal(size=d)
        phi /= np.linalg.norm(phi)
        levels = h.max() * (1.0 - 0.5 ** np.arange(steps + 1))
        levels[-1] = h.max()
        ev = []
        for c in levels:
            lm = np.tensordot(np.minimum(h, c), povm.effects, axes=(0, 0))
            ev.append(float(np.vdot(phi, lm @ phi).real))
        ev = np.asarray(ev)
        mono = max(mono, float(np.max(-np.diff(ev), initial=0.0)))
        lim = max(lim, abs(ev[-1] - float(np.vdot(phi, lh @ phi).real)))
    norm = float(np.abs(_ordered_sum(povm.effects) + povm.tail - np.eye(d)).max())
    return GammaReport(trials, max(pos, 0.0), lin, mono, lim, norm, tol)


# --- the Cauchy counterexample ------------------------------------------------------


def scalar_povm(edges, masses, dim: int = 2) -> DiscretePOVM:
    """POVM ``B -> mu(B) I`` on 1-D cells, stored as ``dim x dim`` blocks."""
    edges = np.asarray(edges, dtype=float)
    mu = np.asarray(masses, dtype=float)
    centers = 0.5 * (edges[:-1] + edges[1:])
    effects = mu[:, None, None] * np.eye(dim)[None]
    return povm_from_effects(effects, centers)


def cauchy_masses(edges) -> np.ndarray:
    """Exact standard Cauchy masses of consecutive intervals."""
    return np.diff(np.arctan(np.asarray(edges, dtype=float))) / math.pi


def cauchy_counterexample(
    half_width: float = 1000.0,
    cells_per_unit: int = 20,
    cutoffs: Sequence[float] | None = None,
    window: int = 4,
    min_slope: float = 0.05,
) -> ConvergenceReport:
    """Symmetric and one-sided truncated integrals of ``x`` against the
    Cauchy distribution times the identity.

    ``values`` are the one-sided sums ``sum_{0 < x_i <= n} x_i mu_i`` whose
    growth is logarithmic; ``extras["symmetric"]`` holds
    ``sum_{|x_i| <= n} x_i mu_i``, which vanishes by symmetry.  The verdict
    applies to the one-sided sums.
    """
    if half_width < 10:
        raise ValueError("half width must be at least 10")
    n_cells = int(round(2 * half_width * cells_per_unit))
    edges = np.linspace(-half_width, half_width, n_cells + 1)
    # mirror the left half so cell masses are exactly symmetric
    half = n_cells // 2
    edges[:half] = -edges[::-1][:half]
    povm = scalar_povm(edges, cauchy_masses(edges))
    x = povm.rep_points[:, 0]
    mu = povm.effects[:, 0, 0].real
    if cutoffs is None:
        cand = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000]
        cutoffs = [c for c in cand if c <= half_width]
    cut = np.asarray(cutoffs, dtype=float)
    f = SampledFunction(x, "x", lambda pts: np.asarray(pts)[:, 0])
    sym = np.empty(cut.size)
    one = np.empty(cut.size)
    phi = np.array([1.0, 0.0], dtype=complex)
    right = np.flatnonzero(x > 0)
    for k, n in enumerate(cut):
        sym[k] = float(np.vdot(phi, op_integral(f.truncated(n), povm) @ phi).real)
        mask = (x > 0) & (x <= n)
        one[k] = math.fsum(x[mask] * mu[mask])
    inc = np.abs(np.diff(one))
    verdict, slope = classify(cut, one, inc, window, min_slope=min_slope)
    seq = truncated_sequence(f, povm, cut, phi, region=right, window=window, min_slope=min_slope)
    extras = {
        "symmetric": sym,
        "symmetric_max": float(np.abs(sym).max()),
        "vector_verdict": seq.verdict,
        "half_width": half_width,
        "cells_per_unit": cells_per_unit,
        "domain": "D(f,E) = {0}, D^{f,E} = H" if verdict == "diverged" else "undetermined",
    }
    return ConvergenceReport(cut, one, inc, verdict, slope, None, None, extras)
