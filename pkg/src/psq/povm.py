"""Discretized covariant phase-space POVMs.

The effect of a cell ``B`` is ``(2 pi)^-1 sum_j w_j beta(g_j)(T)`` over the
tensor Gauss-Legendre nodes ``g_j`` of the cell.  With ``T = V diag(w) V*``
each node contributes the rank-``r`` term ``F_j F_j*`` where
``F_j = U(g_j) V sqrt(w)``, so a cell costs one ``D x (n_nodes r)`` product.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .canonical import SQRT2, displacement_batch, phase_shift, translation_unitary
from .errors import (
    DimMismatch,
    MisalignedAngle,
    MisalignedShift,
    NotDiagonal,
    QuadratureUnderflow,
    WrongGridKind,
)
from .fock import (
    DEFAULT_TOL,
    GeneratingOperator,
    StateVector,
    Tolerances,
    hermitize,
    interior,
    min_eigenvalue,
)
from .grid import TWO_PI, PhaseSpaceGrid, cell_quadrature

log = logging.getLogger(__name__)

CellFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DiscretePOVM:
    """Finite POVM: one effect per cell plus a tail restoring normalization.

    ``rep_points`` holds one outcome value per non-tail effect (shape
    ``(n, 2)`` for phase-space POVMs, ``(n, 1)`` for 1-D ones).  The tail has
    no representative point.  ``grid`` / ``generator`` are kept when the POVM
    comes from :func:`build_povm` so integrals can be re-evaluated at the
    quadrature nodes; ``groups`` maps the effects of a marginal back to the
    parent grid cells.
    """

    effects: np.ndarray
    tail: np.ndarray
    labels: tuple[str, ...]
    rep_points: np.ndarray
    grid: PhaseSpaceGrid | None = None
    generator: GeneratingOperator | None = None
    axis: str | None = None
    groups: tuple[tuple[int, ...], ...] | None = None
    tail_min_eig: float = field(default=float("nan"))

    @property
    def dim(self) -> int:
        return self.tail.shape[0]

    @property
    def n_effects(self) -> int:
        return self.effects.shape[0]

    def all_effects(self) -> np.ndarray:
        """Effects followed by the tail, shape ``(n + 1, D, D)``."""
        return np.concatenate([self.effects, self.tail[None]], axis=0)

    def total(self) -> np.ndarray:
        return _ordered_sum(self.effects) + self.tail

    @property
    def node_resolved(self) -> bool:
        return self.grid is not None and self.generator is not None


@dataclass(frozen=True)
class CovarianceReport:
    max_defect: float
    per_cell_defects: np.ndarray
    params: dict


def _ordered_sum(mats: np.ndarray) -> np.ndarray:
    # fixed left-to-right summation order keeps tails bitwise reproducible
    acc = np.zeros(mats.shape[1:], dtype=complex)
    for m in mats:
        acc = acc + m
    return acc


def _beta_alphas(points: np.ndarray) -> np.ndarray:
    return (points[:, 0] + 1j * points[:, 1]) / SQRT2


def _node_factors(points: np.ndarray, gen: GeneratingOperator) -> np.ndarray:
    """``F_j = U(g_j) V sqrt(w)`` for every node, shape ``(B, D, r)``."""
    w, vecs = gen.factor()
    u = displacement_batch(_beta_alphas(points), gen.dim)
    if gen.weights is not None:
        cols = np.flatnonzero(np.asarray(gen.weights) > 1e-14 * max(gen.weights))
        return u[:, :, cols] * np.sqrt(w)[None, None, :]
    return (u @ vecs) * np.sqrt(w)[None, None, :]


def _weighted_sum(factors: np.ndarray, coeffs: np.ndarray, rows: int | None = None) -> np.ndarray:
    if rows is not None:
        factors = factors[:, :rows, :]
    b, d, r = factors.shape
    g = factors.transpose(1, 0, 2).reshape(d, b * r)
    c = np.repeat(coeffs, r)
    return hermitize((g * c) @ g.conj().T)


def cell_operators(
    kind: str,
    bounds,
    gen: GeneratingOperator,
    order: int = 6,
    funcs: Sequence[CellFunction | None] = (None,),
    rows: int | None = None,
) -> list[np.ndarray]:
    """``(2 pi)^-1 int_cell f(g) beta(g)(T) dg`` for each ``f`` in ``funcs``
    (``None`` meaning ``f = 1``), by tensor Gauss-Legendre quadrature.

    ``rows`` restricts the output to the leading ``rows x rows`` block."""
    pts, wts = cell_quadrature(kind, bounds, order)
    size = gen.dim if rows is None else rows
    if not np.any(wts):
        return [np.zeros((size, size), dtype=complex) for _ in funcs]
    fac = _node_factors(pts, gen)
    coeffs = []
    for f in funcs:
        c = wts / TWO_PI
        if f is not None:
            c = c * np.asarray(f(pts), dtype=float)
        coeffs.append(c)
    if len(coeffs) <= 2:
        return [_weighted_sum(fac, c, rows) for c in coeffs]
    # many weightings: form the per-node matrices once, then contract
    if rows is not None:
        fac = fac[:, :rows, :]
    node_mats = fac @ fac.conj().transpose(0, 2, 1)
    out = np.tensordot(np.asarray(coeffs), node_mats, axes=(1, 0))
    return [hermitize(m) for m in out]


def effect(
    cell,
    gen: GeneratingOperator,
    order: int = 6,
    kind: str = "cartesian",
    estimate_error: bool = True,
    tol: Tolerances = DEFAULT_TOL,
) -> np.ndarray:
    """Effect of one cell; the quadrature error is estimated against a rule
    with doubled node count and :class:`QuadratureUnderflow` raised when it
    exceeds ``tol.quadrature``."""
    (e,) = cell_operators(kind, cell, gen, order)
    if estimate_error:
        (e2,) = cell_operators(kind, cell, gen, 2 * order)
        err = float(np.abs(e - e2).max())
        if err > tol.quadrature:
            raise QuadratureUnderflow(
                f"cell {tuple(cell)}: node-doubling difference {err:.2e} > {tol.quadrature:.1e}"
            )
    return e


def _ordered_map(fn, items, workers: int = 1):
    if workers <= 1:
        return map(fn, items)
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def iter_cell_operators(
    grid: PhaseSpaceGrid,
    gen: GeneratingOperator,
    funcs: Sequence[CellFunction | None] = (None,),
    cells: Sequence[int] | None = None,
    rows: int | None = None,
    workers: int = 1,
) -> Iterator[tuple[int, list[np.ndarray]]]:
    """Yield ``(cell, [integral of f * dE over the cell for f in funcs])`` in
    cell order."""
    idx = list(range(grid.n_cells) if cells is None else cells)

    def one(i: int):
        return cell_operators(grid.kind, grid.bounds[i], gen, grid.order, funcs, rows)

    yield from zip(idx, _ordered_map(one, idx, workers))


def build_povm(
    grid: PhaseSpaceGrid,
    gen: GeneratingOperator,
    estimate_error: bool = False,
    tol: Tolerances = DEFAULT_TOL,
    workers: int = 1,
) -> DiscretePOVM:
    """Effects for every grid cell and the tail ``I - sum(effects)``.

    ``workers > 1`` evaluates cells on a thread pool; results are collected
    in cell order so the output does not depend on scheduling.

    The tail's positivity is measured and stored (``tail_min_eig``), not
    enforced; a clearly negative tail means the quadrature is too coarse.
    """
    d = gen.dim
    effects = np.empty((grid.n_cells, d, d), dtype=complex)

    def one(i: int) -> np.ndarray:
        return effect(grid.bounds[i], gen, grid.order, grid.kind, estimate_error, tol)

    for i, e in enumerate(_ordered_map(one, range(grid.n_cells), workers)):
        effects[i] = e
    tail = np.eye(d, dtype=complex) - _ordered_sum(effects)
    labels = tuple(_cell_label(grid, i) for i in range(grid.n_cells))
    lo = min_eigenvalue(tail)
    if lo < -tol.pos:
        log.warning("tail has min eigenvalue %.3e; refine quadrature", lo)
    return DiscretePOVM(
        effects, tail, labels, grid.centers, grid=grid, generator=gen, tail_min_eig=lo
    )


def _cell_label(grid: PhaseSpaceGrid, i: int) -> str:
    a, b = divmod(i, grid.shape[1])
    return f"{'x' if grid.kind == 'cartesian' else 'r'}{a}:{'y' if grid.kind == 'cartesian' else 't'}{b}"


def povm_from_effects(effects, rep_points, labels=None) -> DiscretePOVM:
    """Wrap explicit effects; the tail restores normalization."""
    eff = np.asarray(effects, dtype=complex)
    d = eff.shape[1]
    tail = np.eye(d, dtype=complex) - _ordered_sum(eff)
    rp = np.asarray(rep_points, dtype=float)
    if rp.ndim == 1:
        rp = rp[:, None]
    if labels is None:
        labels = tuple(f"c{i}" for i in range(eff.shape[0]))
    return DiscretePOVM(eff, tail, tuple(labels), rp, tail_min_eig=min_eigenvalue(tail))


# --- densities ------------------------------------------------------------------


def outcome_density(state, gen: GeneratingOperator, points) -> np.ndarray | float:
    """``(2 pi)^-1 <phi| beta(q, p)(T) |phi>`` at one point or an array of points.

    ``state`` may be a vector (or :class:`StateVector`) or a density matrix /
    generating operator used as a state.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    scalar = np.ndim(points) == 1
    v = rho = None
    if isinstance(state, GeneratingOperator):
        rho = state.op
    elif isinstance(state, StateVector):
        v = state.amplitudes
    else:
        a = np.asarray(state, dtype=complex)
        if a.ndim == 1:
            v = a
        else:
            rho = a
    d = rho.shape[0] if rho is not None else v.shape[0]
    if d != gen.dim:
        raise DimMismatch(f"state has dim {d}, generating operator {gen.dim}")
    fac = _node_factors(pts, gen)
    if rho is None:
        amps = np.einsum("bdr,d->br", fac.conj(), v)
        dens = (np.abs(amps) ** 2).sum(axis=1)
    else:
        dens = np.einsum("bdr,de,ber->b", fac.conj(), rho, fac).real
    dens = dens / TWO_PI
    return float(dens[0]) if scalar else dens


# --- marginals ------------------------------------------------------------------


def cartesian_margin(povm: DiscretePOVM, axis: str) -> DiscretePOVM:
    """Marginal on the position (``"x"``) or momentum (``"y"``) axis.

    Effects of each column (row) are summed in cell-index order; the tail is
    inherited unchanged so normalization is preserved.
    """
    grid = povm.grid
    if grid is None or grid.kind != "cartesian":
        raise WrongGridKind("cartesian margins need a POVM built on a cartesian grid")
    nx, ny = grid.shape
    idx = np.arange(grid.n_cells).reshape(nx, ny)
    if axis == "x":
        groups = [tuple(int(i) for i in idx[a, :]) for a in range(nx)]
        centers = 0.5 * (grid.axis_edges("x")[:-1] + grid.axis_edges("x")[1:])
    elif axis == "y":
        groups = [tuple(int(i) for i in idx[:, b]) for b in range(ny)]
        centers = 0.5 * (grid.axis_edges("y")[:-1] + grid.axis_edges("y")[1:])
    else:
        raise ValueError(f"axis must be 'x' or 'y', not {axis!r}")
    effects = np.stack([_ordered_sum(povm.effects[list(g)]) for g in groups])
    labels = tuple(f"{axis}{k}" for k in range(len(groups)))
    return DiscretePOVM(
        effects,
        povm.tail,
        labels,
        centers[:, None],
        grid=grid,
        generator=povm.generator,
        axis=axis,
        groups=tuple(groups),
        tail_min_eig=povm.tail_min_eig,
    )


# --- covariance -----------------------------------------------------------------


def _spectral_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def check_translation_covariance(
    povm: DiscretePOVM,
    shift: tuple[int, int],
    gen: GeneratingOperator | None = None,
    cells: Sequence[int] | None = None,
    block: int | None = None,
) -> CovarianceReport:
    """Compare ``U(g)* E(B) U(g)`` with ``E(B - g)`` for a grid-aligned ``g``.

    ``shift`` counts whole cells along (q, p).  ``cells`` restricts the test
    to the given cell indices (default: every cell whose shifted image lies
    in the grid).  Defects are spectral norms on the leading ``block`` rows
    and columns (default: interior block).
    """
    grid = povm.grid
    if grid is None or grid.kind != "cartesian":
        raise WrongGridKind("translation covariance needs a cartesian POVM")
    si, sj = shift
    if int(si) != si or int(sj) != sj:
        raise MisalignedShift(f"shift {shift} is not a whole number of cells")
    si, sj = int(si), int(sj)
    if gen is not None and povm.generator is not None and gen.dim != povm.dim:
        raise DimMismatch("generating operator and POVM dimensions differ")
    nx, ny = grid.shape
    q0, q1, p0, p1 = grid.window
    hq, hp = (q1 - q0) / nx, (p1 - p0) / ny
    g = (si * hq, sj * hp)
    d = povm.dim
    b = interior(d) if block is None else block
    u = translation_unitary(g[0], g[1], d, check=False)
    if cells is None:
        cells = range(grid.n_cells)
    per_cell = []
    used = []
    for c in cells:
        i, j = divmod(int(c), ny)
        i2, j2 = i - si, j - sj
        if not (0 <= i2 < nx and 0 <= j2 < ny):
            continue
        lhs = u.conj().T @ povm.effects[c] @ u
        rhs = povm.effects[i2 * ny + j2]
        per_cell.append(_spectral_norm((lhs - rhs)[:b, :b]))
        used.append(int(c))
    arr = np.asarray(per_cell)
    return CovarianceReport(
        float(arr.max()) if arr.size else 0.0,
        arr,
        {"shift": (si, sj), "g": g, "block": b, "cells": used, "dim": d},
    )


def check_phase_covariance(
    povm: DiscretePOVM,
    theta: float,
    gen: GeneratingOperator | None = None,
    block: int | None = None,
    atol: float = 1e-9,
) -> CovarianceReport:
    """Compare ``e^{i theta N} E(S) e^{-i theta N}`` with ``E(S + theta)``
    for every annular sector ``S`` of a polar POVM."""
    grid = povm.grid
    if grid is None or grid.kind != "polar":
        raise WrongGridKind("phase covariance needs a polar POVM")
    gen = gen if gen is not None else povm.generator
    if gen is None or not gen.is_number_diagonal:
        raise NotDiagonal("phase covariance requires a number-diagonal generating operator")
    n_r, n_t = grid.shape
    width = TWO_PI / n_t
    steps = theta / width
    s = int(round(steps))
    if abs(steps - s) > atol:
        raise MisalignedAngle(f"angle {theta} is not a multiple of the sector width {width}")
    d = povm.dim
    b = interior(d) if block is None else block
    ph = phase_shift(theta, d)
    per_cell = np.empty(grid.n_cells)
    for c in range(grid.n_cells):
        i, j = divmod(c, n_t)
        lhs = ph @ povm.effects[c] @ ph.conj().T
        rhs = povm.effects[i * n_t + (j + s) % n_t]
        per_cell[c] = _spectral_norm((lhs - rhs)[:b, :b])
    return CovarianceReport(
        float(per_cell.max()), per_cell, {"theta": theta, "steps": s, "block": b, "dim": d}
    )


def projection_gaps(povm: DiscretePOVM, lo: float = 0.01, hi: float = 0.99, block: int | None = None):
    """For effects with normalized trace in ``[lo, hi]`` on the block, return
    ``(index, ||E^2 - E||, min distance of spectrum to {0, 1})``."""
    d = povm.dim
    b = interior(d) if block is None else block
    out = []
    for i, e in enumerate(povm.effects):
        eb = e[:b, :b]
        frac = float(np.trace(eb).real) / b
        if not lo <= frac <= hi:
            continue
        ev = np.linalg.eigvalsh(eb)
        dist = float(np.minimum(np.abs(ev), np.abs(ev - 1.0)).min())
        out.append((i, _spectral_norm(eb @ eb - eb), dist))
    return out


# --- serialization ---------------------------------------------------------------


def povm_to_json(povm: DiscretePOVM) -> dict:
    from .fock import _complex_pairs

    return {
        "dim": povm.dim,
        "labels": list(povm.labels),
        "rep_points": povm.rep_points.tolist(),
        "effects": [_complex_pairs(e) for e in povm.effects],
        "tail": _complex_pairs(povm.tail),
    }


def povm_from_json(obj: dict) -> DiscretePOVM:
    from .fock import _from_pairs

    eff = np.stack([_from_pairs(e) for e in obj["effects"]])
    tail = _from_pairs(obj["tail"])
    rp = np.asarray(obj["rep_points"], dtype=float)
    if rp.ndim == 1:
        rp = rp[:, None]
    if eff.shape[1:] != (obj["dim"], obj["dim"]):
        raise DimMismatch("effect shape does not match declared dim")
    return DiscretePOVM(eff, tail, tuple(obj["labels"]), rp, tail_min_eig=min_eigenvalue(tail))


_MAGIC = b"PSQPOVM1"


def povm_to_bytes(povm: DiscretePOVM) -> bytes:
    """Binary layout: magic, little-endian ``uint64`` dim and cell count, then
    effects and tail as row-major complex doubles."""
    header = _MAGIC + np.array([povm.dim, povm.n_effects], dtype="<u8").tobytes()
    body = np.ascontiguousarray(povm.all_effects(), dtype="<c16").tobytes()
    return header + body


def povm_from_bytes(data: bytes, rep_points=None) -> DiscretePOVM:
    if data[:8] != _MAGIC:
        raise ValueError("not a psq POVM binary")
    dim, n = (int(x) for x in np.frombuffer(data[8:24], dtype="<u8"))
    arr = np.frombuffer(data[24:], dtype="<c16")
    if arr.size != (n + 1) * dim * dim:
        raise ValueError("truncated POVM binary")
    mats = arr.reshape(n + 1, dim, dim).copy()
    rp = np.full((n, 1), np.nan) if rep_points is None else np.asarray(rep_points, dtype=float)
    labels = tuple(f"c{i}" for i in range(n))
    return DiscretePOVM(mats[:n], mats[n], labels, rp, tail_min_eig=min_eigenvalue(mats[n]))
