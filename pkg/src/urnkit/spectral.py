"""Spectral machinery for the mean replacement matrix.

Everything downstream (centerings, limit covariances, fluctuation scalings)
consumes the matrix A through its Jordan data: per-block projectors P_J,
the nilpotent shift N_A, the leading eigenvalue and its block size, and the
small/critical/large classification of the spectrum relative to lambda1/2.

Automatic decomposition covers diagonalizable matrices only; numerically
defective input raises unless the caller supplies an explicit Jordan basis.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

DEFAULT_TOL_JORDAN = 1e-8
DEFAULT_COND_MAX = 1e12
#: imaginary parts stripped from expm of a real matrix must be below this
EXPM_IMAG_TOL = 1e-10


class SpectralError(ValueError):
    pass


class DefectiveMatrixError(SpectralError):
    """Eigenvector basis numerically rank-deficient and no Jordan basis given."""


def _tol_group(A: np.ndarray) -> float:
    return 1e-8 * max(1.0, float(np.linalg.norm(A, 2)))


def tol_class_for(lambda1: float) -> float:
    """Width of the criticality band around Re(lambda) = lambda1 / 2."""
    return 1e-9 * max(1.0, abs(lambda1))


@dataclass(frozen=True)
class JordanBlock:
    """One Jordan block: eigenvalue, size, chain basis and projector."""

    lam: complex
    m: int
    basis: np.ndarray       # shape (m, d), rows v_{J,1} .. v_{J,m}
    P: np.ndarray           # complex d x d projector onto the block
    index: int              # position within the decomposition
    conj_index: int         # index of the conjugate block (== index if lam real)

    @property
    def is_real(self) -> bool:
        return self.lam.imag == 0.0


@dataclass(frozen=True)
class SpectralDecomposition:
    A: np.ndarray
    blocks: tuple[JordanBlock, ...]
    N_A: np.ndarray         # real d x d nilpotent operator
    lambda1: float
    m1: int
    tol: float

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def eigenvalues(self) -> tuple[complex, ...]:
        """Distinct eigenvalues (one per block cluster)."""
        seen: list[complex] = []
        for b in self.blocks:
            if not any(abs(b.lam - s) <= _tol_group(self.A) for s in seen):
                seen.append(b.lam)
        return tuple(seen)

    def blocks_at(self, lam: complex) -> tuple[JordanBlock, ...]:
        tol = _tol_group(self.A)
        return tuple(b for b in self.blocks if abs(b.lam - lam) <= tol)

    @property
    def leading_blocks(self) -> tuple[JordanBlock, ...]:
        return self.blocks_at(self.lambda1)

    @property
    def lambda1_simple(self) -> bool:
        lead = self.leading_blocks
        return len(lead) == 1 and lead[0].m == 1

    def P_lambda1(self) -> np.ndarray:
        return sum(b.P for b in self.leading_blocks)

    def P_class(self, which: str, tol_class: Optional[float] = None) -> np.ndarray:
        """Sum of projectors over the small/critical/large eigenvalue class."""
        cls = classify(self, tol_class)
        lams = {"small": cls.small, "critical": cls.critical, "large": cls.large}[which]
        P = np.zeros((self.d, self.d), dtype=complex)
        for lam in lams:
            for b in self.blocks_at(lam):
                P = P + b.P
        return P


@dataclass(frozen=True)
class Classification:
    small: tuple[complex, ...]
    critical: tuple[complex, ...]
    large: tuple[complex, ...]
    subcase: Optional[str]   # small-urn | critical-urn | large-urn-simple | large-urn-nonsimple


def perron_frobenius(A: np.ndarray, tol: Optional[float] = None) -> tuple[float, int, bool]:
    """Leading eigenvalue data without requiring a full decomposition.

    Returns ``(lambda1, m1, a3_holds)`` where lambda1 is the (real)
    eigenvalue of largest real part, m1 the size of the largest Jordan
    block at lambda1, and a3_holds indicates lambda1 > 0.  m1 is computed
    from kernel dimensions of powers of (A - lambda1 I), which works for
    matrices that are defective away from lambda1.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    group = tol if tol is not None else _tol_group(A)
    eigvals = np.linalg.eigvals(A)
    lead = eigvals[np.argmax(eigvals.real)]
    if abs(lead.imag) > max(group, 1e-7 * max(1.0, abs(lead))):
        raise SpectralError(
            f"leading eigenvalue {lead} is not real; matrix violates the "
            "sign pattern (off-diagonals must be >= 0)"
        )
    lambda1 = float(lead.real)
    alg = int(np.sum(np.abs(eigvals - lambda1) <= max(group, 1e-7 * max(1.0, abs(lambda1)))))

    rank_tol = max(1.0, float(np.linalg.norm(A, 2))) * 1e-8
    B = A - lambda1 * np.eye(d)
    m1 = 1
    Bk = B.copy()
    for k in range(1, d + 1):
        sv = np.linalg.svd(Bk, compute_uv=False)
        kernel_dim = int(np.sum(sv <= rank_tol * max(1.0, sv[0] if len(sv) else 1.0)))
        if kernel_dim >= alg:
            m1 = k
            break
        Bk = Bk @ B
    else:
        m1 = d
    a3_holds = lambda1 > tol_class_for(lambda1)
    return lambda1, m1, a3_holds


def _pair_conjugates(lams: Sequence[complex], tol: float) -> list[int]:
    """conj_index per entry; raises if a complex eigenvalue lacks a partner."""
    out = [-1] * len(lams)
    for i, lam in enumerate(lams):
        if abs(lam.imag) <= tol:
            out[i] = i
            continue
        if out[i] >= 0:
            continue
        best, best_err = -1, np.inf
        for j, other in enumerate(lams):
            if j == i or out[j] >= 0:
                continue
            err = abs(other - lam.conjugate())
            if err < best_err:
                best, best_err = j, err
        if best < 0 or best_err > tol:
            raise SpectralError(
                f"complex eigenvalue {lam} has no conjugate partner within {tol:g}"
            )
        out[i], out[best] = best, i
    return out


def _blocks_from_basis(
    A: np.ndarray,
    block_specs: Sequence[tuple[complex, np.ndarray]],
    tol: float,
) -> SpectralDecomposition:
    """Assemble a decomposition from (eigenvalue, chain-basis) block specs.

    The chain basis of a block is an (m, d) array of rows v_1 .. v_m with
    A v_1 = lam v_1 and A v_i = lam v_i + v_{i-1}.
    """
    d = A.shape[0]
    cols = []
    for lam, basis in block_specs:
        for row in basis:
            cols.append(row)
    V = np.asarray(cols, dtype=complex).T
    if V.shape != (d, d):
        raise SpectralError(f"Jordan basis has {V.shape[1]} vectors, expected {d}")
    W = np.linalg.inv(V)

    scale = max(1.0, float(np.linalg.norm(A, 2)))
    blocks: list[JordanBlock] = []
    N_A = np.zeros((d, d), dtype=complex)
    pos = 0
    for bi, (lam, basis) in enumerate(block_specs):
        m = basis.shape[0]
        # chain relations define the block; reject inconsistent input
        resid = np.linalg.norm(A @ basis[0] - lam * basis[0])
        for i in range(1, m):
            resid = max(resid, np.linalg.norm(A @ basis[i] - lam * basis[i] - basis[i - 1]))
        if resid > 1e3 * tol * scale * max(1.0, float(np.abs(basis).max())):
            raise SpectralError(
                f"supplied basis for eigenvalue {lam} violates the chain "
                f"relations (residual {resid:g})"
            )
        P = np.zeros((d, d), dtype=complex)
        for i in range(m):
            P += np.outer(V[:, pos + i], W[pos + i, :])
        for i in range(1, m):
            N_A += np.outer(V[:, pos + i - 1], W[pos + i, :])
        blocks.append(JordanBlock(lam=complex(lam), m=m, basis=basis.copy(), P=P,
                                  index=bi, conj_index=-1))
        pos += m

    conj = _pair_conjugates([b.lam for b in blocks], max(_tol_group(A), 1e3 * tol * scale))
    blocks = [
        JordanBlock(b.lam, b.m, b.basis, b.P, b.index, conj[i])
        for i, b in enumerate(blocks)
    ]

    imag_norm = float(np.abs(N_A.imag).max()) if d else 0.0
    if imag_norm > 1e3 * tol * scale:
        raise SpectralError(f"nilpotent operator has imaginary residue {imag_norm:g}")
    N_A = N_A.real.copy()

    lams = [b.lam for b in blocks]
    lambda1 = max(l.real for l in lams)
    lead = [b for b in blocks if abs(b.lam - lambda1) <= _tol_group(A)]
    if not lead:
        raise SpectralError("no real leading eigenvalue found")
    m1 = max(b.m for b in lead)

    dec = SpectralDecomposition(
        A=np.asarray(A, dtype=float).copy(),
        blocks=tuple(blocks),
        N_A=N_A,
        lambda1=float(lambda1),
        m1=int(m1),
        tol=tol,
    )
    _check_invariants(dec)
    return dec


def _check_invariants(dec: SpectralDecomposition) -> None:
    d = dec.d
    scale = max(1.0, float(np.linalg.norm(dec.A, 2)))
    tol = dec.tol * scale * 1e3
    total = sum(b.P for b in dec.blocks)
    if np.abs(total - np.eye(d)).max() > tol:
        raise SpectralError("projectors do not sum to the identity")
    for b in dec.blocks:
        if np.abs(b.P @ b.P - b.P).max() > tol:
            raise SpectralError(f"projector of block {b.index} is not idempotent")
        rel = dec.A @ b.P - (b.lam * b.P + dec.N_A @ b.P)
        if np.abs(rel).max() > tol:
            raise SpectralError(f"A P_J != lam P_J + N_A P_J on block {b.index}")
        if np.abs(np.linalg.matrix_power(dec.N_A, b.m) @ b.P).max() > tol:
            raise SpectralError(f"N_A^m P_J != 0 on block {b.index}")


def decompose(
    A: np.ndarray,
    tol_jordan: float = DEFAULT_TOL_JORDAN,
    jordan_basis: Optional[Sequence[tuple[complex, np.ndarray]]] = None,
    cond_max: float = DEFAULT_COND_MAX,
) -> SpectralDecomposition:
    """Jordan decomposition of a real square matrix.

    The automatic path assumes A diagonalizable: it eigendecomposes, groups
    eigenvalues within a relative tolerance, realifies near-real ones and
    pairs conjugates.  A numerically rank-deficient eigenvector matrix
    (condition number above ``cond_max``) raises DefectiveMatrixError; pass
    ``jordan_basis`` as a list of ``(eigenvalue, (m, d) chain array)`` pairs
    to decompose a defective matrix explicitly.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SpectralError(f"expected a square matrix, got shape {A.shape}")

    if jordan_basis is not None:
        specs = [(complex(lam), np.asarray(basis, dtype=complex)) for lam, basis in jordan_basis]
        return _blocks_from_basis(A, specs, tol_jordan)

    lams, V = np.linalg.eig(A)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > cond_max:
        raise DefectiveMatrixError(
            f"eigenvector matrix condition number {cond:.3g} exceeds {cond_max:g}; "
            "supply an explicit Jordan basis for this (likely defective) matrix"
        )

    group = _tol_group(A)
    # snap near-real eigenvalues, then average conjugate pairs to exact pairs
    lams = np.where(np.abs(lams.imag) <= group, lams.real + 0j, lams)
    order = np.lexsort((lams.imag, -lams.real))
    lams, V = lams[order], V[:, order]

    specs = [(complex(lams[i]), V[:, i][None, :].copy()) for i in range(len(lams))]
    try:
        return _blocks_from_basis(A, specs, tol_jordan)
    except SpectralError as exc:
        if isinstance(exc, DefectiveMatrixError):
            raise
        raise DefectiveMatrixError(
            "eigendecomposition fails the block invariants (matrix is "
            f"numerically defective): {exc}; supply an explicit Jordan basis"
        ) from exc


_memo_lock = threading.Lock()
_memo: dict[bytes, SpectralDecomposition] = {}


def decomposition_for(A: np.ndarray, **kwargs) -> SpectralDecomposition:
    """Memoized ``decompose``; safe for concurrent readers."""
    A = np.ascontiguousarray(A, dtype=float)
    if kwargs:
        return decompose(A, **kwargs)
    key = A.tobytes() + repr(A.shape).encode()
    with _memo_lock:
        hit = _memo.get(key)
    if hit is not None:
        return hit
    dec = decompose(A)
    with _memo_lock:
        _memo.setdefault(key, dec)
    return dec


def classify(
    dec: SpectralDecomposition, tol_class: Optional[float] = None
) -> Classification:
    """Partition eigenvalues by Re(lam) against lambda1/2.

    Eigenvalues inside the tolerance band around lambda1/2 count as
    critical.  The subcase names the time-step-dominant hypothesis the
    spectrum satisfies; it is None when lambda1 <= 0 (the regime where the
    urn dies out and no subcase applies).
    """
    if tol_class is None:
        tol_class = tol_class_for(dec.lambda1)
    half = dec.lambda1 / 2.0
    small, critical, large = [], [], []
    for lam in dec.eigenvalues():
        if abs(lam.real - half) <= tol_class:
            critical.append(lam)
        elif lam.real < half:
            small.append(lam)
        else:
            large.append(lam)

    if dec.lambda1 <= tol_class:
        subcase = None
    elif not dec.lambda1_simple:
        subcase = "large-urn-nonsimple"
    elif len(large) > 1:
        subcase = "large-urn-simple"
    elif critical:
        subcase = "critical-urn"
    else:
        subcase = "small-urn"
    return Classification(tuple(small), tuple(critical), tuple(large), subcase)


def v_of_mu(dec: SpectralDecomposition, mu: np.ndarray) -> np.ndarray:
    """Dominant direction of e^{At} mu: N_A^{m1-1} P_{lambda1} mu / (m1-1)!.

    Real for real input; for balanced structures this is nonzero for every
    probability vector mu.
    """
    mu = np.asarray(mu, dtype=float)
    out = dec.P_lambda1() @ mu
    for _ in range(dec.m1 - 1):
        out = dec.N_A @ out
    out = out / math.factorial(dec.m1 - 1)
    return out.real if np.abs(out.imag).max() < EXPM_IMAG_TOL * max(1.0, np.abs(out).max()) else out


def expm(obj, t: float) -> np.ndarray:
    """e^{At} through the block formula, or scaling-and-squaring fallback.

    With a decomposition at hand: sum over blocks of
    e^{lam t} sum_{i<m} (t N_A)^i / i! P_J.  A bare matrix goes through
    scipy's Pade scaling-and-squaring.  Imaginary residue (below
    EXPM_IMAG_TOL relative) is stripped for real A.
    """
    if isinstance(obj, SpectralDecomposition):
        dec = obj
        d = dec.d
        out = np.zeros((d, d), dtype=complex)
        for b in dec.blocks:
            term = b.P.astype(complex)
            if b.m > 1:
                acc = b.P.astype(complex)
                Nt = t * dec.N_A
                for i in range(1, b.m):
                    acc = (Nt @ acc) / i
                    term = term + acc
            out += np.exp(b.lam * t) * term
        resid = float(np.abs(out.imag).max())
        if resid <= EXPM_IMAG_TOL * max(1.0, float(np.abs(out.real).max())):
            return out.real.copy()
        return out
    A = np.asarray(obj, dtype=float)
    return scipy.linalg.expm(A * float(t))


def block_expm(dec: SpectralDecomposition, block: JordanBlock, t: float) -> np.ndarray:
    """P_J e^{At} = e^{lam t} sum_{i<m} (t N_A)^i / i! P_J, built from the
    block data alone.  Unlike projecting the full exponential, no other
    eigenvalue's growth ever enters, so the result is accurate even when
    e^{lambda1 t} would dwarf this block's scale."""
    term = block.P.astype(complex)
    if block.m > 1:
        acc = block.P.astype(complex)
        Nt = t * dec.N_A
        for i in range(1, block.m):
            acc = (Nt @ acc) / i
            term = term + acc
    return np.exp(block.lam * t) * term


def class_expm(dec: SpectralDecomposition, lams, t: float) -> np.ndarray:
    """Sum of block exponentials over the blocks at the given eigenvalues."""
    out = np.zeros((dec.d, dec.d), dtype=complex)
    for lam in lams:
        for b in dec.blocks_at(lam):
            out += block_expm(dec, b, t)
    return out


def nilpotent_project(
    dec: SpectralDecomposition, block: JordanBlock, kappa: int, x: np.ndarray
) -> np.ndarray:
    """N_A^{m - kappa} P_J x for 1 <= kappa <= m."""
    if not 1 <= kappa <= block.m:
        raise SpectralError(f"kappa={kappa} outside [1, {block.m}]")
    out = block.P @ np.asarray(x, dtype=complex)
    for _ in range(block.m - kappa):
        out = dec.N_A @ out
    return out


def chain_matrix(dec: SpectralDecomposition, block: JordanBlock, kappa: int) -> np.ndarray:
    """The matrix N_A^{m - kappa} P_J (complex d x d)."""
    M = block.P.copy()
    for _ in range(block.m - kappa):
        M = dec.N_A @ M
    return M
