"""Moment operators of the Cartesian margins of ``E^T`` and related noise
quantities.

Closed form::

    L(x^k, E^T) = sum_l C(k, l) (-1)^(k-l) Tr[Q^(k-l) T] Q^l

(``P`` in place of ``Q`` for the momentum margin).  The quadrature oracle
integrates the monomial against the generating formula at the cell nodes of
a phase-space grid and is independent of the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .canonical import CanonicalSet, canonical_set, quadrature_power
from .errors import DomainDiagnosticFailed, NotDiagonal, TailMassExceeded
from .fock import DEFAULT_TOL, GeneratingOperator, Tolerances, hermitize, interior
from .grid import PhaseSpaceGrid
from .povm import iter_cell_operators

AXES = ("x", "y")


def _axis(axis: str) -> int:
    if axis not in AXES:
        raise ValueError(f"axis must be 'x' or 'y', not {axis!r}")
    return AXES.index(axis)


@dataclass(frozen=True)
class MomentCoefficients:
    k: int
    axis: str
    coeffs: np.ndarray
    traces: np.ndarray
    imag_max: float = 0.0


def power_traces(gen: GeneratingOperator, axis: str, k: int) -> np.ndarray:
    """``Tr[Q^j T]`` (or ``P``) for ``j = 0..k``, with powers computed at a
    doubled cutoff."""
    d = gen.dim
    return np.array([np.trace(quadrature_power(d, axis, j) @ gen.op) for j in range(k + 1)])


def moment_coefficients(
    k: int,
    gen: GeneratingOperator,
    axis: str = "x",
    canon: CanonicalSet | None = None,
    check_domain: bool = False,
    tol: Tolerances = DEFAULT_TOL,
) -> MomentCoefficients:
    """``s_kl = C(k, l) (-1)^(k-l) Tr[Q^(k-l) T]`` for ``l = 0..k``.

    With ``check_domain`` the Hilbert-Schmidt growth scan is run first and
    :class:`DomainDiagnosticFailed` raised if it reports divergence.
    """
    if k < 1:
        raise ValueError("moment order must be at least 1")
    _axis(axis)
    if canon is not None and canon.dim != gen.dim:
        raise ValueError("canonical set and generating operator dimensions differ")
    if check_domain and gen.family is not None:
        scan = hs_domain_scan(gen, k, axis=axis)
        if scan.verdict != "bounded":
            raise DomainDiagnosticFailed(
                f"||{'Q' if axis == 'x' else 'P'}^{k} sqrt(T)||_HS grows with the cutoff"
            )
    tr = power_traces(gen, axis, k)
    imag = float(np.abs(tr.imag).max())
    if imag > max(tol.herm, 1e-10 * float(np.abs(tr).max())):
        raise ValueError(f"power traces have imaginary part {imag:.2e}")
    c = np.array([math.comb(k, l) * (-1) ** (k - l) * tr.real[k - l] for l in range(k + 1)])
    return MomentCoefficients(k, axis, c, tr.real, imag)


def moment_operator(
    k: int, gen: GeneratingOperator, axis: str = "x", canon: CanonicalSet | None = None, **kw
) -> np.ndarray:
    """Closed-form ``L(x^k, E^T)`` (or ``y^k``) on the full truncated block."""
    mc = moment_coefficients(k, gen, axis, canon, **kw)
    d = gen.dim
    out = np.zeros((d, d), dtype=complex)
    for l, s in enumerate(mc.coeffs):
        out += s * quadrature_power(d, axis, l)
    return hermitize(out)


# --- quadrature oracle ------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureMoments:
    """Node-quadrature moment operators on the leading ``rows`` block.

    ``ops[(axis, k)]`` is the operator, ``tail_mass[m]`` the probability of
    ``|m>`` outside the window and ``moment_tail[(axis, k)]`` the estimate
    ``max_m tail_mass[m] * R^k`` with ``R`` the window half-width along the
    axis, a floor on the missing contribution.
    """

    ops: dict
    tail_mass: np.ndarray
    moment_tail: dict
    rows: int
    window: tuple


def quadrature_moments(
    gen: GeneratingOperator,
    grid: PhaseSpaceGrid,
    orders: Sequence[tuple[str, int]],
    rows: int | None = None,
    workers: int = 1,
) -> QuadratureMoments:
    """One pass over the grid integrating every requested monomial."""
    if grid.kind != "cartesian":
        raise ValueError("moment oracle needs a cartesian grid")
    orders = [(a, int(k)) for a, k in orders]
    funcs = [None] + [_monomial(_axis(a), k) for a, k in orders]
    size = gen.dim if rows is None else rows
    acc = [np.zeros((size, size), dtype=complex) for _ in funcs]
    for _, mats in iter_cell_operators(grid, gen, funcs, rows=rows, workers=workers):
        for a, m in zip(acc, mats):
            a += m
    mass = 1.0 - np.diag(acc[0]).real
    q0, q1, p0, p1 = grid.window
    reach = {"x": max(abs(q0), abs(q1)), "y": max(abs(p0), abs(p1))}
    ops = {key: hermitize(m) for key, m in zip(orders, acc[1:])}
    mt = {(a, k): float(mass.max() * reach[a] ** k) for a, k in orders}
    return QuadratureMoments(ops, mass, mt, size, tuple(grid.window))


def _monomial(col: int, k: int):
    return lambda pts: pts[:, col] ** k


def moment_operator_quadrature(
    k: int,
    gen: GeneratingOperator,
    axis: str,
    grid: PhaseSpaceGrid,
    rows: int | None = None,
    policy: str = "exclude",
    bound: float = 1e-6,
) -> np.ndarray:
    """Oracle for :func:`moment_operator`: ``int x^k dE^T`` over the window
    by node quadrature.  With ``policy="fail"``, raises
    :class:`TailMassExceeded` when any basis state of the block has more than
    ``bound`` of its probability outside the window."""
    qm = quadrature_moments(gen, grid, [(axis, k)], rows)
    if policy == "fail" and qm.tail_mass.max() > bound:
        m = int(np.argmax(qm.tail_mass))
        raise TailMassExceeded(
            f"|{m}> has mass {qm.tail_mass[m]:.3e} outside the window (bound {bound:.1e})"
        )
    return qm.ops[(axis, k)]


def supported_block(tail_mass: np.ndarray, bound: float) -> int:
    """Largest ``b`` with ``tail_mass[m] <= bound`` for all ``m < b``."""
    bad = np.flatnonzero(np.asarray(tail_mass) > bound)
    return int(bad[0]) if bad.size else int(len(tail_mass))


# --- Hilbert-Schmidt domain scan ------------------------------------------------------


@dataclass(frozen=True)
class DomainScan:
    k: int
    axis: str
    dims: np.ndarray
    values: np.ndarray
    slope: float
    verdict: str


def hs_norm_sq(gen: GeneratingOperator, k: int, axis: str = "x") -> float:
    """``||Q^k sqrt(T)||_HS^2 = sum_n w_n ||Q^k eta_n||^2``, exact for the
    truncated ``T`` (powers are applied at doubled cutoff)."""
    d = gen.dim
    w, vecs = gen.factor()
    big = np.zeros((2 * d, vecs.shape[1]), dtype=complex)
    big[:d] = vecs * np.sqrt(w)
    base = _quadrature(2 * d, axis)
    for _ in range(k):
        big = base @ big
    return float(np.sum(np.abs(big) ** 2))


def _quadrature(dim: int, axis: str) -> np.ndarray:
    cs = canonical_set(dim)
    return cs.q_op if axis == "x" else cs.p_op


def hs_domain_scan(
    gen: GeneratingOperator,
    k: int,
    dims: Sequence[int] | None = None,
    axis: str = "x",
    window: int = 3,
    max_slope: float = 0.05,
) -> DomainScan:
    """``||Q^k sqrt(T_D)||_HS^2`` along increasing cutoffs ``D``.

    The generating operator must carry a re-truncation rule.  The verdict is
    ``bounded`` when the log-log slope over the last ``window`` cutoffs is
    below ``max_slope`` and ``diverging`` otherwise.
    """
    if gen.family is None:
        raise ValueError("domain scan needs a generating operator with a re-truncation rule")
    dims = np.asarray(dims if dims is not None else [25, 50, 100, 200, 400], dtype=int)
    if np.any(np.diff(dims) <= 0):
        raise ValueError("dims must increase")
    vals = np.array([hs_norm_sq(gen.at_dim(int(d)), k, axis) for d in dims])
    m = min(window, dims.size)
    slope = 0.0
    if m >= 2:
        slope = float(np.polyfit(np.log(dims[-m:]), np.log(vals[-m:]), 1)[0])
    verdict = "bounded" if slope < max_slope else "diverging"
    return DomainScan(k, axis, dims, vals, slope, verdict)


# --- noise ------------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseReport:
    """Variances of ``T`` and the noise operators ``R^T = L(x^2) - L(x)^2``
    restricted to the interior block, summarized by their largest
    off-diagonal entry and the spread of the diagonal."""

    mean_q: float
    mean_p: float
    var_q: float
    var_p: float
    product: float
    offdiag: dict
    spread: dict
    scalar: dict
    block: int
    domain: dict = field(default_factory=dict)

    @property
    def centered(self) -> bool:
        return abs(self.mean_q) <= 1e-9 and abs(self.mean_p) <= 1e-9


def variances(gen: GeneratingOperator) -> tuple[float, float, float, float]:
    """``(Tr[QT], Tr[PT], Var(Q, T), Var(P, T))`` from traces."""
    tq = power_traces(gen, "x", 2).real
    tp = power_traces(gen, "y", 2).real
    return tq[1], tp[1], tq[2] - tq[1] ** 2, tp[2] - tp[1] ** 2


def noise_operator(gen: GeneratingOperator, axis: str = "x") -> np.ndarray:
    l1 = moment_operator(1, gen, axis)
    l2 = moment_operator(2, gen, axis)
    return hermitize(l2 - l1 @ l1)


def noise_report(
    gen: GeneratingOperator,
    canon: CanonicalSet | None = None,
    block: int | None = None,
    check_domain: bool = True,
    dims: Sequence[int] | None = None,
) -> NoiseReport:
    """Evaluate ``R^T(x)`` and ``R^T(y)`` on the interior block and the
    variance product.  With ``check_domain`` and a re-truncation rule, the
    second-moment Hilbert-Schmidt scans must be bounded on both axes."""
    domain = {}
    if check_domain and gen.family is not None:
        for a in AXES:
            scan = hs_domain_scan(gen, 2, dims=dims or [gen.dim, 2 * gen.dim, 4 * gen.dim], axis=a)
            domain[a] = scan.verdict
            if scan.verdict != "bounded":
                raise DomainDiagnosticFailed(f"second moment on axis {a} fails the domain scan")
    b = interior(gen.dim) if block is None else block
    mq, mp, vq, vp = variances(gen)
    off, spread, scal = {}, {}, {}
    for a in AXES:
        r = noise_operator(gen, a)[:b, :b]
        dg = np.diag(r).real
        off[a] = float(np.abs(r - np.diag(np.diag(r))).max()) if b > 1 else 0.0
        spread[a] = float(dg.max() - dg.min())
        scal[a] = float(dg.mean())
    return NoiseReport(mq, mp, vq, vp, vq * vp, off, spread, scal, b, domain)


def optimal_T_scan(
    candidates: Sequence[tuple[str, GeneratingOperator]],
    symmetry_required: bool = True,
    tol: float = 1e-9,
    center_tol: float = 1e-9,
) -> list[dict]:
    """Rank centred candidates by their variance product.

    Candidates with ``|Tr[QT]|`` or ``|Tr[PT]|`` above ``center_tol`` are
    dropped.  Each entry records whether the product attains ``1/4`` within
    ``tol`` and whether ``Var(Q) = Var(P)`` within ``tol``; ``optimal`` is
    the conjunction (or attainment alone if symmetry is not required).
    """
    rows = []
    for name, g in candidates:
        mq, mp, vq, vp = variances(g)
        if abs(mq) > center_tol or abs(mp) > center_tol:
            continue
        prod = vq * vp
        attains = abs(prod - 0.25) <= tol
        sym = abs(vq - vp) <= tol
        rows.append(
            {
                "name": name,
                "var_q": vq,
                "var_p": vp,
                "product": prod,
                "attains_bound": attains,
                "symmetric": sym,
                "optimal": attains and (sym or not symmetry_required),
            }
        )
    rows.sort(key=lambda r: (r["product"], r["name"]))
    return rows


# --- oscillator energy -----------------------------------------------------------------


@dataclass(frozen=True)
class EnergyMoment:
    """Diagonal operator ``int h^k dE^T`` with ``h = (q^2 + p^2)/2``."""

    diagonal: np.ndarray
    commutator_defect: float
    tail_mass: np.ndarray

    @property
    def op(self) -> np.ndarray:
        return np.diag(self.diagonal).astype(complex)


def oscillator_energy_moment(
    k: int,
    gen: GeneratingOperator,
    grid: PhaseSpaceGrid,
    rows: int | None = None,
    tol: float = 1e-8,
    policy: str = "exclude",
    bound: float = 1e-6,
) -> EnergyMoment:
    """Node-quadrature ``L(h^k, E^T)`` over a polar grid.

    Raises :class:`NotDiagonal` if ``T`` is not number-diagonal or the result
    fails to commute with ``N`` within ``tol`` on the computed block, and
    :class:`TailMassExceeded` under ``policy="fail"`` when a basis state of
    the block leaks more than ``bound`` outside the disc.
    """
    if not gen.is_number_diagonal:
        raise NotDiagonal("oscillator energy moments need a number-diagonal generating operator")
    if k < 0:
        raise ValueError("moment order must be non-negative")

    def h(pts):
        return (0.5 * (pts[:, 0] ** 2 + pts[:, 1] ** 2)) ** k

    size = gen.dim if rows is None else rows
    acc = [np.zeros((size, size), dtype=complex) for _ in range(2)]
    for _, mats in iter_cell_operators(grid, gen, [None, h], rows=rows):
        for a, m in zip(acc, mats):
            a += m
    mass = 1.0 - np.diag(acc[0]).real
    if policy == "fail" and mass.max() > bound:
        raise TailMassExceeded(f"basis states leak up to {mass.max():.3e} outside the disc")
    out = hermitize(acc[1])
    n = np.arange(size)
    comm = out * (n[None, :] - n[:, None])
    defect = float(np.linalg.norm(comm, 2))
    if defect > tol:
        raise NotDiagonal(f"energy moment fails to commute with N ({defect:.2e})")
    return EnergyMoment(np.diag(out).real.copy(), defect, mass)
