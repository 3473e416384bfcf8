"""Deciding whether a discrete POVM is projection valued.

Three witnesses are computed: multiplicativity ``E(A n B) = E(A) E(B)`` on a
family of cell unions, the variance defect
``int x^2 dE_phi - ||L(x, E) phi||^2``, and the power identity
``L(x^n, E) = L(x, E)^n``.  Every finite POVM also has an exact Naimark
dilation, built here by stacking principal square roots of the effects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NotPositive, TailMassExceeded
from .fock import as_vector, hermitize
from .integral import DEFAULT_TAIL_BOUND, node_integrals, tail_mass
from .povm import DiscretePOVM, _ordered_sum, povm_from_effects


def _norm2(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def _block(a: np.ndarray, block: int | None) -> np.ndarray:
    return a if block is None else a[..., :block, :block]


# --- multiplicativity -------------------------------------------------------------


@dataclass(frozen=True)
class MultiplicativityReport:
    defect: float
    singleton_defect: float
    union_defect: float
    witness: tuple


def multiplicativity_scan(
    povm: DiscretePOVM,
    n_pairs: int = 64,
    seed: int = 0,
    block: int | None = None,
) -> MultiplicativityReport:
    """Largest ``||E(A n B) - E(A) E(B)||`` over all pairs of single cells
    and ``n_pairs`` seeded random pairs of cell unions."""
    eff = _block(povm.effects, block)
    n = eff.shape[0]
    worst, witness = 0.0, ()
    # i = j: ||E_i^2 - E_i|| = max |l^2 - l| over the spectrum
    ev = np.linalg.eigvalsh(eff)
    diag = np.abs(ev * ev - ev).max(axis=1)
    single = float(diag.max()) if n else 0.0
    if n:
        witness = (int(np.argmax(diag)),) * 2
        worst = single
    # ||E_i E_j|| <= ||E_i|| ||E_j||; skip pairs whose bound cannot win
    opnorm = np.abs(ev).max(axis=1) if n else ev
    for i in range(n):
        if i + 1 >= n:
            break
        rest = i + 1 + np.flatnonzero(opnorm[i] * opnorm[i + 1 :] > single)
        if rest.size == 0:
            continue
        prods = eff[i][None] @ eff[rest]
        # the Frobenius norm bounds the spectral norm; skip pairs that cannot win
        frob = np.sqrt((np.abs(prods) ** 2).sum(axis=(1, 2)))
        cand = np.flatnonzero(frob > single)
        if cand.size == 0:
            continue
        norms = np.linalg.norm(prods[cand], 2, axis=(1, 2))
        j = int(np.argmax(norms))
        if norms[j] > single:
            single = float(norms[j])
            if single > worst:
                worst, witness = single, (i, int(rest[cand[j]]))
    rng = np.random.default_rng(seed)
    union = 0.0
    for _ in range(n_pairs if n else 0):
        a = rng.random(n) < 0.5
        b = rng.random(n) < 0.5
        ea = _ordered_sum(eff[a]) if a.any() else np.zeros(eff.shape[1:], complex)
        eb = _ordered_sum(eff[b]) if b.any() else np.zeros(eff.shape[1:], complex)
        ab = a & b
        eab = _ordered_sum(eff[ab]) if ab.any() else np.zeros(eff.shape[1:], complex)
        dft = _norm2(eab - ea @ eb)
        if dft > union:
            union = dft
            if dft > worst:
                worst, witness = dft, (tuple(np.flatnonzero(a)), tuple(np.flatnonzero(b)))
    return MultiplicativityReport(max(single, union), single, union, witness)


def multiplicativity_defect(povm: DiscretePOVM, n_pairs: int = 64, seed: int = 0, block=None) -> float:
    return multiplicativity_scan(povm, n_pairs, seed, block).defect


# --- variance criterion ------------------------------------------------------------


def _rule(povm: DiscretePOVM, rule: str) -> str:
    if rule == "auto":
        return "nodes" if povm.node_resolved else "center"
    return rule


def first_two_moments(povm: DiscretePOVM, rule: str = "auto", rows: int | None = None):
    """``(L(x, E), L(x^2, E))`` of a 1-D POVM, tail excluded."""
    rule = _rule(povm, rule)
    if rule == "nodes":
        return tuple(node_integrals(povm, [lambda x: x[:, 0], lambda x: x[:, 0] ** 2], rows=rows))
    x = povm.rep_points[:, 0]
    eff = _block(povm.effects, rows)
    return np.tensordot(x, eff, axes=(0, 0)), np.tensordot(x**2, eff, axes=(0, 0))


def variance_defect(
    povm: DiscretePOVM,
    state,
    rule: str = "auto",
    bound: float = DEFAULT_TAIL_BOUND,
    moments=None,
) -> float:
    """``<phi|L(x^2) phi> - ||L(x) phi||^2`` for a 1-D POVM.

    ``rule="auto"`` integrates at quadrature nodes for margins of grid-built
    POVMs and at representative points otherwise.  Raises
    :class:`TailMassExceeded` if the tail carries more than ``bound``.
    """
    m = tail_mass(povm, state)
    if m > bound:
        raise TailMassExceeded(f"state has {m:.3e} of its mass in the tail")
    phi = as_vector(state)
    l1, l2 = moments if moments is not None else first_two_moments(povm, rule)
    v = l1 @ phi
    return float(np.vdot(phi, l2 @ phi).real - np.vdot(v, v).real)


def power_identity_check(
    povm: DiscretePOVM,
    n_max: int,
    states: Sequence,
    rule: str = "auto",
    block: int | None = None,
) -> dict:
    """``||(L(x^n) - L(x)^n) phi||`` per ``n <= n_max`` (max over states),
    plus the spectral norm of ``L(x^n) - L(x)^n`` on the leading ``block``
    when one is given."""
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    rule = _rule(povm, rule)
    if rule == "nodes":
        ops = node_integrals(povm, [_power(n) for n in range(1, n_max + 1)])
    else:
        x = povm.rep_points[:, 0]
        ops = [np.tensordot(x**n, povm.effects, axes=(0, 0)) for n in range(1, n_max + 1)]
    l1 = ops[0]
    out = {"n": [], "state_defect": [], "block_defect": []}
    p = np.eye(povm.dim, dtype=complex)
    for n in range(1, n_max + 1):
        p = p @ l1
        diff = ops[n - 1] - p
        sd = max((float(np.linalg.norm(diff @ as_vector(s))) for s in states), default=0.0)
        out["n"].append(n)
        out["state_defect"].append(sd)
        out["block_defect"].append(_norm2(diff[:block, :block]) if block else float("nan"))
    return out


def _power(n: int):
    return lambda x: x[:, 0] ** n


# --- binned spectral measures ---------------------------------------------------------


def binned_spectral_measure(a: np.ndarray, edges) -> DiscretePOVM:
    """Spectral projections of the Hermitian ``a`` grouped into bins
    ``[e_i, e_{i+1})`` (last bin closed); eigenvalues outside the bins go to
    the tail.  Representative points are bin centres."""
    edges = np.asarray(edges, dtype=float)
    lam, vecs = np.linalg.eigh(hermitize(np.asarray(a, dtype=complex)))
    idx = np.searchsorted(edges, lam, side="right") - 1
    idx[lam == edges[-1]] = edges.size - 2
    nb = edges.size - 1
    d = lam.size
    eff = np.zeros((nb, d, d), dtype=complex)
    for i in range(nb):
        v = vecs[:, idx == i]
        if v.size:
            eff[i] = v @ v.conj().T
    centers = 0.5 * (edges[:-1] + edges[1:])
    return povm_from_effects(eff, centers, tuple(f"b{i}" for i in range(nb)))


def binning_defect(a: np.ndarray, povm: DiscretePOVM, state) -> float:
    """``||(A - L(x, E)) phi||^2``: the within-bin spread of ``A``'s spectral
    distribution in ``phi``, at most ``(max bin width)^2 / 4``."""
    phi = as_vector(state)
    l1 = np.tensordot(povm.rep_points[:, 0], povm.effects, axes=(0, 0))
    r = (a - l1) @ phi
    return float(np.vdot(r, r).real)


@dataclass(frozen=True)
class SpectralityVerdict:
    mult_defect: float
    variance_defects: list
    verdict: str
    witnesses: dict = field(default_factory=dict)


def spectrality_verdict(
    povm: DiscretePOVM,
    states: Sequence,
    tol: float = 1e-10,
    n_pairs: int = 64,
    seed: int = 0,
    rule: str = "auto",
) -> SpectralityVerdict:
    """``spectral`` when both the multiplicativity defect and every
    variance defect are within ``tol``."""
    mr = multiplicativity_scan(povm, n_pairs, seed)
    one_d = povm.rep_points.shape[1] == 1 and bool(np.isfinite(povm.rep_points).all())
    moments = first_two_moments(povm, rule) if one_d else None
    vd = []
    if moments is not None:
        vd = [variance_defect(povm, s, rule, moments=moments) for s in states]
    ok = mr.defect <= tol and all(abs(v) <= tol for v in vd)
    wit = {"multiplicativity": mr.witness}
    if vd:
        wit["variance_state"] = int(np.argmax(vd))
    return SpectralityVerdict(mr.defect, vd, "spectral" if ok else "non-spectral", wit)


# --- Naimark dilation --------------------------------------------------------------------


@dataclass(frozen=True)
class NaimarkDilation:
    """Isometry ``V: C^D -> C^(mD)`` with ``E_i = V* P_i V`` for the
    coordinate-block projections ``P_i``.  ``clipping`` is the largest
    negative eigenvalue magnitude floored to zero."""

    isometry: np.ndarray
    dim: int
    n_blocks: int
    clipping: float

    @property
    def big_dim(self) -> int:
        return self.dim * self.n_blocks

    def block_projection(self, i: int) -> np.ndarray:
        p = np.zeros(self.big_dim)
        p[i * self.dim : (i + 1) * self.dim] = 1.0
        return np.diag(p)

    def compress(self, i: int) -> np.ndarray:
        """``V* P_i V`` using the block structure directly."""
        vi = self.isometry[i * self.dim : (i + 1) * self.dim]
        return vi.conj().T @ vi

    @property
    def back_map(self) -> np.ndarray:
        return self.isometry.conj().T


def _sqrt_psd(e: np.ndarray, tol: float) -> tuple[np.ndarray, float]:
    lam, v = np.linalg.eigh(hermitize(e))
    lo = float(lam.min())
    if lo < -tol:
        raise NotPositive(f"effect has eigenvalue {lo:.3e} below -{tol:.1e}")
    clip = max(0.0, -lo)
    r = np.sqrt(np.maximum(lam, 0.0))
    return (v * r) @ v.conj().T, clip


def naimark_dilate(povm: DiscretePOVM, tol: float = 1e-10) -> NaimarkDilation:
    """Stack principal square roots of all effects (tail last)."""
    effs = povm.all_effects()
    roots, clip = [], 0.0
    for e in effs:
        s, c = _sqrt_psd(e, tol)
        roots.append(s)
        clip = max(clip, c)
    v = np.concatenate(roots, axis=0)
    return NaimarkDilation(v, povm.dim, effs.shape[0], clip)


def dilation_invariants(dil: NaimarkDilation, povm: DiscretePOVM) -> dict:
    """Isometry defect ``max|V*V - I|``, block-projection defect (orthogonal
    idempotents summing to ``I``), and reconstruction defect
    ``max_i max|V* P_i V - E_i|``."""
    v = dil.isometry
    iso = float(np.abs(v.conj().T @ v - np.eye(dil.dim)).max())
    owner = np.repeat(np.arange(dil.n_blocks), dil.dim)
    masks = owner[None, :] == np.arange(dil.n_blocks)[:, None]
    # diagonal 0/1 masks: idempotent, pairwise disjoint, covering every index
    proj = 0.0 if (masks.sum(axis=0) == 1).all() and masks.any(axis=1).all() else 1.0
    effs = povm.all_effects()
    rec = max(float(np.abs(dil.compress(i) - effs[i]).max()) for i in range(dil.n_blocks))
    return {"isometry": iso, "projections": proj, "reconstruction": rec}


_MAGIC = b"PSQNAIM1"


def dilation_to_bytes(dil: NaimarkDilation) -> bytes:
    """Magic, little-endian ``uint64`` dim and block count, ``float64``
    clipping, then ``V`` as row-major complex doubles."""
    head = _MAGIC + np.array([dil.dim, dil.n_blocks], dtype="<u8").tobytes()
    head += np.array([dil.clipping], dtype="<f8").tobytes()
    return head + np.ascontiguousarray(dil.isometry, dtype="<c16").tobytes()


def dilation_from_bytes(data: bytes) -> NaimarkDilation:
    if data[:8] != _MAGIC:
        raise ValueError("not a psq dilation binary")
    dim, m = (int(x) for x in np.frombuffer(data[8:24], dtype="<u8"))
    clip = float(np.frombuffer(data[24:32], dtype="<f8")[0])
    v = np.frombuffer(data[32:], dtype="<c16")
    if v.size != m * dim * dim:
        raise ValueError("truncated dilation binary")
    return NaimarkDilation(v.reshape(m * dim, dim).copy(), dim, m, clip)
