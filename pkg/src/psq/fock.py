"""Truncated Fock-space linear algebra and generating-operator factories.

Operators are plain dense ``complex128`` arrays of shape ``(D, D)`` whose
entry ``[m, n]`` is ``<m|A|n>`` in the number basis, index 0 being the
vacuum.  Generating operators (positive, trace one) are wrapped in
:class:`GeneratingOperator`, which also records how the operator can be
rebuilt at another cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import gammainc, gammaln

from .errors import (
    DimMismatch,
    NegativeWeight,
    NotHermitian,
    NotPositive,
    TraceDrift,
    TruncationLoss,
    WeightSumDrift,
)


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared across the library.

    ``herm``, ``pos`` are absolute bounds on spectral quantities; ``trace``
    bounds the trace defect of generating operators; ``eig`` is the relative
    reconstruction bound of eigendecompositions.
    """

    herm: float = 1e-10
    pos: float = 1e-10
    trace: float = 1e-8
    eig: float = 1e-12
    norm: float = 1e-10
    truncation_loss: float = 1e-10
    unitarity: float = 1e-8
    quadrature: float = 1e-8
    tail_mass: float = 1e-6

    def override(self, **kwargs: float) -> "Tolerances":
        return replace(self, **kwargs)


DEFAULT_TOL = Tolerances()


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return ``(A + A*)/2``; the result is exactly self-adjoint."""
    a = np.asarray(a, dtype=complex)
    return (a + a.conj().T) / 2


def interior(dim: int) -> int:
    """Size of the interior block used for truncation-sensitive assertions."""
    return dim // 2


def number_operator(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def fock_vector(n: int, dim: int) -> np.ndarray:
    if not 0 <= n < dim:
        raise DimMismatch(f"number state |{n}> does not fit in dimension {dim}")
    v = np.zeros(dim, dtype=complex)
    v[n] = 1.0
    return v


@dataclass(frozen=True)
class StateVector:
    """A vector in the truncated number basis together with its norm."""

    amplitudes: np.ndarray
    norm: float

    @classmethod
    def from_amplitudes(cls, amplitudes, normalize: bool = True) -> "StateVector":
        amp = np.asarray(amplitudes, dtype=complex).ravel()
        nrm = float(np.linalg.norm(amp))
        if normalize:
            if nrm == 0.0:
                raise ValueError("cannot normalize the zero vector")
            amp = amp / nrm
            nrm = float(np.linalg.norm(amp))
        return cls(amp, nrm)

    @classmethod
    def fock(cls, n: int, dim: int) -> "StateVector":
        return cls(fock_vector(n, dim), 1.0)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def is_normalized(self, tol: float = DEFAULT_TOL.norm) -> bool:
        return abs(self.norm - 1.0) <= tol


def as_vector(state) -> np.ndarray:
    """Amplitude array of a :class:`StateVector` or array-like."""
    if isinstance(state, StateVector):
        return state.amplitudes
    return np.asarray(state, dtype=complex).ravel()


@dataclass(frozen=True)
class GeneratingOperator:
    """Positive trace-one operator generating a covariant phase-space POVM.

    ``family`` rebuilds the same operator at another cutoff; it is what the
    Hilbert-Schmidt growth scan iterates over.  ``kind`` and ``params``
    drive JSON serialization.
    """

    op: np.ndarray
    weights: tuple[float, ...] | None = None
    kind: str = "matrix"
    params: dict[str, Any] = field(default_factory=dict)
    min_eig: float = 0.0
    trace_defect: float = 0.0
    family: Callable[[int], "GeneratingOperator"] | None = field(
        default=None, compare=False, repr=False
    )

    @property
    def dim(self) -> int:
        return self.op.shape[0]

    @property
    def is_number_diagonal(self) -> bool:
        return self.weights is not None

    def at_dim(self, dim: int) -> "GeneratingOperator":
        if dim == self.dim:
            return self
        if self.family is None:
            raise ValueError("operator carries no rule for re-truncation")
        return self.family(dim)

    def factor(self, rel_cut: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(w, V)`` with ``T ~= V diag(w) V*``, dropping weights below
        ``rel_cut * max(w)``."""
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            w = np.concatenate([w, np.zeros(self.dim - w.size)])
            vecs = np.eye(self.dim, dtype=complex)
        else:
            w, vecs = np.linalg.eigh(hermitize(self.op))
        keep = w > rel_cut * w.max()
        return w[keep], vecs[:, keep]


def spectral_data(a: np.ndarray, tol: Tolerances = DEFAULT_TOL):
    """Ascending eigenvalues and eigenvectors of a Hermitian matrix.

    Raises :class:`NotHermitian` when ``max|A - A*|`` exceeds ``tol.herm``
    (scaled by ``max(1, |A|)``).
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    if np.abs(a - a.conj().T).max() > tol.herm * scale:
        raise NotHermitian("matrix is not Hermitian within tolerance")
    evals, evecs = np.linalg.eigh(hermitize(a))
    return evals, evecs


def min_eigenvalue(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitize(a))[0])


def _diagonal_weights(op: np.ndarray, atol: float) -> tuple[float, ...] | None:
    off = op - np.diag(np.diag(op))
    if off.size and np.abs(off).max() > atol:
        return None
    return tuple(float(x) for x in np.diag(op).real)


def validate_generating(op, tol: Tolerances = DEFAULT_TOL) -> GeneratingOperator:
    """Hermitize, check positivity and normalize the trace of ``op``.

    Raises :class:`NotPositive` if the smallest eigenvalue is below
    ``-tol.pos`` and :class:`TraceDrift` if the trace is off by more than
    ``tol.trace``.
    """
    if isinstance(op, GeneratingOperator):
        op = op.op
    a = np.asarray(op, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
        raise DimMismatch(f"generating operator must be square with dim >= 2, got {a.shape}")
    h = hermitize(a)
    lo = min_eigenvalue(h)
    if lo < -tol.pos:
        raise NotPositive(f"minimum eigenvalue {lo:.3e} below -{tol.pos:.1e}")
    tr = float(np.trace(h).real)
    defect = tr - 1.0
    if abs(defect) > tol.trace:
        raise TraceDrift(f"trace {tr!r} differs from 1 by more than {tol.trace:.1e}")
    h = h / tr
    weights = _diagonal_weights(h, 0.0)
    kind = "number_mixture" if weights is not None else "matrix"
    fam = _mixture_family(weights, tol) if weights is not None else None
    return GeneratingOperator(
        h, weights, kind, {}, min_eig=lo, trace_defect=defect, family=fam
    )


def _mixture_family(weights, tol):
    def rebuild(dim: int) -> GeneratingOperator:
        w = list(weights[:dim])
        s = sum(w)
        if abs(s - 1.0) > tol.trace:
            # the re-truncated family keeps its weights; larger losses are folded
            w = [x / s for x in w]
        return make_number_mixture(w, dim, tol)

    return rebuild


def make_number_mixture(
    weights: Sequence[float], dim: int, tol: Tolerances = DEFAULT_TOL
) -> GeneratingOperator:
    """Diagonal generating operator ``sum_n w_n |n><n|``.

    A deficit ``1 - sum(w)`` of at most ``tol.trace`` is folded back by
    renormalizing; anything larger raises :class:`WeightSumDrift`.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D sequence")
    if w.size > dim:
        raise DimMismatch(f"{w.size} weights do not fit in dimension {dim}")
    if dim < 2:
        raise DimMismatch("dimension must be at least 2")
    if np.any(w < 0):
        raise NegativeWeight(f"negative weight {w.min():.3e}")
    s = float(w.sum())
    if abs(s - 1.0) > tol.trace:
        raise WeightSumDrift(f"weights sum to {s!r}")
    w = w / s
    full = np.zeros(dim)
    full[: w.size] = w
    op = np.diag(full).astype(complex)
    weights_t = tuple(float(x) for x in full)
    return GeneratingOperator(
        op,
        weights_t,
        "number_mixture",
        {},
        min_eig=float(full.min()),
        trace_defect=s - 1.0,
        family=_mixture_family(weights_t, tol),
    )


def make_number_state(n: int, dim: int) -> GeneratingOperator:
    w = np.zeros(dim)
    w[n] = 1.0
    return make_number_mixture(w, dim)


def thermal_weights(s: float, dim: int) -> np.ndarray:
    """Geometric weights ``(1-s) s^n`` for ``n < dim`` (not renormalized)."""
    if not 0.0 <= s < 1.0:
        raise ValueError("thermal ratio must lie in [0, 1)")
    return (1.0 - s) * s ** np.arange(dim)


def make_thermal(s: float, dim: int, tol: Tolerances = DEFAULT_TOL) -> GeneratingOperator:
    g = make_number_mixture(thermal_weights(s, dim), dim, tol)
    return replace(
        g,
        params={"thermal": s},
        family=lambda d: make_thermal(s, d, tol),
    )


def make_power_law(exponent: float, dim: int) -> GeneratingOperator:
    """Weights ``w_n ~ (n+1)^(-exponent)`` normalized over the infinite sequence.

    Used as a heavy-tailed probe for the Hilbert-Schmidt domain scan; the
    truncated operator is renormalized at every cutoff.
    """
    from scipy.special import zeta

    w = (np.arange(dim) + 1.0) ** (-exponent) / zeta(exponent)
    w = w / w.sum()
    g = make_number_mixture(w, dim)
    return replace(
        g,
        params={"power_law": exponent},
        family=lambda d: make_power_law(exponent, d),
    )


def poisson_tail(x: float, dim: int) -> float:
    """``1 - sum_{n<dim} x^n e^{-x} / n!``."""
    if x == 0.0:
        return 0.0
    return float(gammainc(dim, x))


def coherent_vector(alpha: complex, dim: int) -> np.ndarray:
    """Truncated (not renormalized) coherent vector ``e^{-|a|^2/2} sum a^n/sqrt(n!) |n>``."""
    n = np.arange(dim)
    x = abs(alpha) ** 2
    out = np.zeros(dim, dtype=complex)
    out[0] = math.exp(-x / 2)
    if alpha != 0:
        logmag = n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1) - x / 2
        out = np.exp(logmag) * np.exp(1j * n * np.angle(alpha))
    return out


def make_coherent_projector(
    alpha: complex, dim: int, max_loss: float | None = None, tol: Tolerances = DEFAULT_TOL
) -> GeneratingOperator:
    """Projector onto the renormalized truncated coherent vector.

    Raises :class:`TruncationLoss` when the Poisson mass beyond the cutoff
    exceeds ``max_loss`` (default ``tol.truncation_loss``).
    """
    bound = tol.truncation_loss if max_loss is None else max_loss
    loss = poisson_tail(abs(alpha) ** 2, dim)
    if loss > bound:
        raise TruncationLoss(f"coherent amplitude {alpha} loses {loss:.3e} at dim {dim}")
    v = coherent_vector(alpha, dim)
    v = v / np.linalg.norm(v)
    op = np.outer(v, v.conj())
    weights = None
    if alpha == 0:
        weights = tuple(float(x) for x in np.diag(op).real)
    return GeneratingOperator(
        op,
        weights,
        "coherent",
        {"alpha": complex(alpha), "truncation_loss": loss},
        family=lambda d: make_coherent_projector(alpha, d, max_loss, tol),
    )


def squeezed_vacuum_vector(var_q: float, dim: int) -> np.ndarray:
    """Number-basis amplitudes of the centred Gaussian with position variance
    ``var_q`` (vacuum has 1/2), truncated but not renormalized."""
    if var_q <= 0:
        raise ValueError("variance must be positive")
    r = -0.5 * math.log(2.0 * var_q)
    t = math.tanh(r)
    out = np.zeros(dim, dtype=complex)
    m = np.arange(0, dim, 2)
    k = m // 2
    logmag = 0.5 * gammaln(m + 1) - k * math.log(2.0) - gammaln(k + 1)
    mag = np.exp(logmag) * np.abs(t) ** k if t != 0 else (k == 0).astype(float)
    out[m] = mag * (-np.sign(t)) ** k / math.sqrt(math.cosh(r))
    return out


def make_squeezed_vacuum(
    var_q: float, dim: int, max_loss: float | None = None, tol: Tolerances = DEFAULT_TOL
) -> GeneratingOperator:
    """Projector onto the minimum-uncertainty Gaussian with ``Var(Q) = var_q``."""
    bound = tol.truncation_loss if max_loss is None else max_loss
    v = squeezed_vacuum_vector(var_q, dim)
    loss = max(0.0, 1.0 - float(np.vdot(v, v).real))
    if loss > bound:
        raise TruncationLoss(f"squeezed vacuum var_q={var_q} loses {loss:.3e} at dim {dim}")
    v = v / np.linalg.norm(v)
    return GeneratingOperator(
        np.outer(v, v.conj()),
        None,
        "matrix",
        {"squeezed_var_q": var_q, "truncation_loss": loss},
        family=lambda d: make_squeezed_vacuum(var_q, d, max_loss, tol),
    )


def density_of(state) -> np.ndarray:
    """Density matrix of a vector state, generating operator, or matrix."""
    if isinstance(state, GeneratingOperator):
        return state.op
    if isinstance(state, StateVector):
        v = state.amplitudes
        return np.outer(v, v.conj())
    a = np.asarray(state, dtype=complex)
    if a.ndim == 1:
        return np.outer(a, a.conj())
    return a


# --- JSON -------------------------------------------------------------------


def _complex_pairs(a: np.ndarray):
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _from_pairs(obj) -> np.ndarray:
    arr = np.asarray(obj, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def generating_to_json(g: GeneratingOperator) -> dict:
    if g.kind == "number_mixture" and g.weights is not None:
        payload: dict[str, Any] = {"weights": list(g.weights)}
        kind = "number_mixture"
    elif g.kind == "coherent":
        a = complex(g.params["alpha"])
        payload = {"alpha": [a.real, a.imag]}
        kind = "coherent"
    else:
        payload = {"entries": _complex_pairs(g.op)}
        kind = "matrix"
    return {"dim": g.dim, "kind": kind, "payload": payload}


def generating_from_json(obj: dict, tol: Tolerances = DEFAULT_TOL) -> GeneratingOperator:
    dim = int(obj["dim"])
    kind = obj["kind"]
    payload = obj["payload"]
    if kind == "number_mixture":
        return make_number_mixture(payload["weights"], dim, tol)
    if kind == "coherent":
        re, im = payload["alpha"]
        return make_coherent_projector(complex(re, im), dim, tol=tol)
    if kind == "matrix":
        m = _from_pairs(payload["entries"])
        if m.shape != (dim, dim):
            raise DimMismatch(f"payload shape {m.shape} does not match dim {dim}")
        return validate_generating(m, tol)
    raise ValueError(f"unknown generating operator kind {kind!r}")
