"""Ladder, quadrature and number operators, Weyl operators and phase shifts.

Conventions: ``W(q, p) = exp(i(pQ + qP))`` which is the displacement
``D(a)`` with ``a = (-q + ip)/sqrt(2)``.  The phase-space action used by the
covariant POVMs is ``beta(q, p)(T) = W(-q, p) T W(-q, p)*``, i.e. conjugation
by ``D((q + ip)/sqrt(2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimMismatch, UnitarityLoss
from .fock import DEFAULT_TOL, GeneratingOperator, Tolerances, hermitize, interior

SQRT2 = math.sqrt(2.0)


def lowering(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def position(dim: int) -> np.ndarray:
    a = lowering(dim)
    return hermitize((a.conj().T + a) / SQRT2)


def momentum(dim: int) -> np.ndarray:
    a = lowering(dim)
    return hermitize(1j * (a.conj().T - a) / SQRT2)


@dataclass(frozen=True)
class CanonicalSet:
    dim: int
    a_plus: np.ndarray
    a_minus: np.ndarray
    q_op: np.ndarray
    p_op: np.ndarray
    n_op: np.ndarray

    def power(self, axis: str, k: int) -> np.ndarray:
        """``Q^k`` (axis ``"x"``) or ``P^k`` (axis ``"y"``), exact on the
        whole ``D x D`` block for ``k <= D``."""
        return quadrature_power(self.dim, axis, k)


def canonical_set(dim: int) -> CanonicalSet:
    if dim < 2:
        raise DimMismatch("dimension must be at least 2")
    a = lowering(dim)
    ap = a.conj().T.copy()
    n = np.diag(np.arange(dim, dtype=float)).astype(complex)
    return CanonicalSet(dim, ap, a, position(dim), momentum(dim), n)


@lru_cache(maxsize=256)
def _power_cached(dim: int, axis: str, k: int) -> np.ndarray:
    big = 2 * dim
    base = position(big) if axis == "x" else momentum(big)
    out = np.linalg.matrix_power(base, k)[:dim, :dim].copy()
    out.setflags(write=False)
    return out


def quadrature_power(dim: int, axis: str, k: int) -> np.ndarray:
    """Power of Q or P computed at doubled cutoff, then cut to ``dim``.

    Products of truncated matrices differ from truncated products in the
    top rows; the doubled cutoff removes that for ``k <= dim``.
    """
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', not {axis!r}")
    if k < 0:
        raise ValueError("power must be non-negative")
    if k == 0:
        return np.eye(dim, dtype=complex)
    return np.array(_power_cached(dim, axis, k))


# --- displacements -------------------------------------------------------------


def _log_sqrt_factorials(dim: int) -> np.ndarray:
    # cumulative sums of log sqrt(j): entry n is log sqrt(n!)
    return np.concatenate([[0.0], np.cumsum(0.5 * np.log(np.arange(1, dim)))])


@lru_cache(maxsize=16)
def _index_tables(dim: int):
    m, n = np.indices((dim, dim))
    small, big = np.minimum(m, n), np.maximum(m, n)
    kk = big - small
    return small, big, kk, m >= n, kk % 2 == 1


def displacement_batch(alphas, dim: int) -> np.ndarray:
    """Truncated displacement matrices ``D(a)`` for a batch of amplitudes.

    ``<m|D(a)|n> = sqrt(n!/m!) a^(m-n) e^{-|a|^2/2} L_n^(m-n)(|a|^2)`` for
    ``m >= n``, and ``<n|D(a)|m> = (-conj a)^(m-n) ... `` for the upper
    triangle.  Associated Laguerre values come from the three-term recurrence
    in ``n``; factorial ratios are accumulated in log space.

    Returns an array of shape ``(len(alphas), dim, dim)``.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    b = alphas.size
    x = np.abs(alphas) ** 2
    k = np.arange(dim, dtype=float)

    # lag[:, n, k] = L_n^{(k)}(x)
    lag = np.empty((b, dim, dim))
    lag[:, 0, :] = 1.0
    if dim > 1:
        lag[:, 1, :] = 1.0 + k[None, :] - x[:, None]
    for n in range(1, dim - 1):
        lag[:, n + 1, :] = (
            (2 * n + 1 + k[None, :] - x[:, None]) * lag[:, n, :]
            - (n + k[None, :]) * lag[:, n - 1, :]
        ) / (n + 1)

    small, big, kk, lower_mask, odd = _index_tables(dim)
    lsf = _log_sqrt_factorials(dim)
    r = np.abs(alphas)
    zero = r == 0.0
    logr = np.log(np.where(zero, 1.0, r))
    # magnitude sqrt(n!/m!) |a|^k e^{-x/2}, m = max index, n = min index
    kr = np.arange(dim)[None, :] * logr[:, None]
    logmag = (lsf[small] - lsf[big])[None] - x[:, None, None] / 2 + kr[:, kk]
    mag = np.exp(logmag) * lag[:, small, kk]
    if zero.any():
        mag[zero] *= kk == 0
    ph = np.exp(1j * np.angle(alphas)[:, None] * np.arange(dim)[None, :])[:, kk]
    # <n|D|m> = (-1)^(m-n) conj(<m|D|n>) for m >= n
    ph = np.where(lower_mask, ph, np.where(odd, -1.0, 1.0) * ph.conj())
    out = mag * ph
    return out


def displacement(alpha: complex, dim: int) -> np.ndarray:
    return displacement_batch([alpha], dim)[0]


def weyl_alpha(q: float, p: float) -> complex:
    """Displacement amplitude of ``W(q, p)``."""
    return complex(-q, p) / SQRT2


def beta_alpha(q: float, p: float) -> complex:
    """Displacement amplitude of the unitary implementing ``beta(q, p)``."""
    return complex(q, p) / SQRT2


def unitarity_defect(u: np.ndarray, block: int | None = None) -> float:
    d = u.shape[0]
    b = interior(d) if block is None else block
    g = u.conj().T @ u
    return float(np.abs(g[:b, :b] - np.eye(b)).max())


def weyl(q: float, p: float, dim: int, tol: Tolerances = DEFAULT_TOL, check: bool = True) -> np.ndarray:
    """Truncated Weyl operator ``W(q, p) = exp(i(pQ + qP))``.

    With ``check`` set, raises :class:`UnitarityLoss` when ``W*W`` deviates
    from the identity on the interior block by more than ``tol.unitarity``.
    """
    if not (math.isfinite(q) and math.isfinite(p)):
        raise ValueError("Weyl point must be finite")
    w = displacement(weyl_alpha(q, p), dim)
    if check:
        d = unitarity_defect(w)
        if d > tol.unitarity:
            raise UnitarityLoss(
                f"W({q}, {p}) loses unitarity ({d:.2e}) at dim {dim}; raise the cutoff"
            )
    return w


def translation_unitary(q: float, p: float, dim: int, **kw) -> np.ndarray:
    """``U(q, p) = W(-q, p)``, the unitary implementing ``beta(q, p)``."""
    return weyl(-q, p, dim, **kw)


def weyl_cocycle(g: tuple[float, float], h: tuple[float, float]) -> complex:
    """Phase ``c`` in ``W(g) W(h) = c W(g + h)``."""
    (q1, p1), (q2, p2) = g, h
    return complex(np.exp(-0.5j * (p1 * q2 - q1 * p2)))


def beta_action(point: tuple[float, float], t, dim: int | None = None) -> np.ndarray:
    """``W(-q, p) T W(-q, p)*`` for a generating operator or matrix ``T``."""
    op = t.op if isinstance(t, GeneratingOperator) else np.asarray(t, dtype=complex)
    if dim is not None and dim != op.shape[0]:
        raise DimMismatch(f"operator has dim {op.shape[0]}, expected {dim}")
    q, p = point
    u = displacement(beta_alpha(q, p), op.shape[0])
    return hermitize(u @ op @ u.conj().T)


def phase_shift(theta: float, dim: int) -> np.ndarray:
    """Diagonal unitary ``e^{i theta N}``; the angle is reduced modulo 2pi."""
    th = math.fmod(theta, 2 * math.pi)
    n = np.arange(dim)
    return np.diag(np.exp(1j * th * n))
