"""Limit-law centerings, scalings and covariance functions.

The Gaussian limits of a balanced urn (and of its continuous-time
embedding) are determined by a handful of covariance functions built from
the spectral data of A:

* ``cov_W1``    -- short-time Brownian covariance (exact finite sum),
* ``cov_W2``    -- unit-time Gaussian process (finite-interval quadrature),
* ``cov_Ws``    -- stationary small-component covariance (improper integral
                   with certified truncation),
* ``cov_WJk`` / ``cross_cov_critical`` -- critical-component covariances
                   (closed-form polynomial time integrals),
* ``var_VJ``    -- large-component limit covariance (improper integral),

plus the affine maps taking these to the urn-clock limits Y1, Y2, Ys,
Y_{J,kappa} and Z_J, and the moment formulas of the embedded branching
process used as simulation oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad_vec

from .model import ReplacementStructure, UrnSpec, second_moment
from .spectral import (
    JordanBlock,
    SpectralDecomposition,
    block_expm,
    chain_matrix,
    class_expm,
    classify,
    decomposition_for,
    expm,
    tol_class_for,
)

DEFAULT_QUAD_TOL = 1e-9
DEFAULT_T_MAX = 1e4

#: recording clocks: draw count floor(n t) vs stretched floor(N (n/N)^t)
LINEAR_MODES = ("ibd", "tr", "tsd-small")
STRETCHED_MODES = ("tsd-critical", "tsd-large")
MODES = LINEAR_MODES + STRETCHED_MODES


class QuadratureError(RuntimeError):
    pass


class DomainError(ValueError):
    """Time argument outside the regime's valid domain."""


@dataclass(frozen=True)
class LimitCovariance:
    """A computed limit covariance (and pseudo-covariance for complex laws)."""

    law: str
    params: dict
    cov: np.ndarray
    pseudo_cov: Optional[np.ndarray] = None
    quad_error: float = 0.0
    horizon: Optional[float] = None

    def validate_variance(self, tol: float) -> None:
        """Same-time covariances must be hermitian PSD within tol."""
        scale = max(1.0, float(np.abs(self.cov).max()))
        if np.abs(self.cov - self.cov.conj().T).max() > tol * scale * 10:
            raise QuadratureError(f"{self.law}: covariance not hermitian")
        eigs = np.linalg.eigvalsh((self.cov + self.cov.conj().T) / 2)
        if eigs.min() < -tol * scale * 10:
            raise QuadratureError(f"{self.law}: covariance not PSD (min eig {eigs.min():g})")


@dataclass(frozen=True)
class LawContext:
    """Structure-level constants shared by all covariance formulas."""

    structure: ReplacementStructure
    mu: np.ndarray
    dec: SpectralDecomposition
    a: np.ndarray
    beta1: float
    S: float
    vmu: np.ndarray
    seconds: tuple[np.ndarray, ...]   # E[xi_i xi_i'] per colour
    B: np.ndarray                     # sum_i a_i v(mu)_i E[xi_i xi_i']


def law_context(structure: ReplacementStructure, mu) -> LawContext:
    from .spectral import v_of_mu

    mu = np.asarray(mu, dtype=float)
    a = structure.weights
    S = structure.balance_constant()
    dec = decomposition_for(np.asarray(_mean(structure), dtype=float))
    vmu = np.real(v_of_mu(dec, mu))
    seconds = tuple(second_moment(structure, i) for i in range(structure.d))
    B = sum(a[i] * vmu[i] * seconds[i] for i in range(structure.d))
    return LawContext(structure, mu, dec, a, float(a @ mu), S, vmu, seconds, B)


def _mean(structure: ReplacementStructure) -> np.ndarray:
    from .model import mean_matrix

    return mean_matrix(structure)


def _realify(M: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    if np.iscomplexobj(M) and np.abs(M.imag).max() <= tol * max(1.0, np.abs(M.real).max()):
        return M.real.copy()
    return M


# ---------------------------------------------------------------------------
# Truncation horizons for improper integrals
# ---------------------------------------------------------------------------

def _tail_bound(C: float, p: int, c: float, T: float) -> float:
    """Bound on integral from T to infinity of C (1+v)^p e^{-c v} dv."""
    if c <= 0:
        return math.inf
    x = c * (1.0 + T)
    if x <= p:
        return math.inf
    # geometric domination of the incomplete-gamma series
    return C * (1.0 + T) ** p * math.exp(-c * T) / c / (1.0 - p / x)


def _truncation_horizon(
    integrand: Callable[[float], np.ndarray],
    decay: float,
    poly_degree: int,
    quad_tol: float,
    t_max: float,
) -> float:
    """Smallest T with a certified tail below quad_tol.

    ``decay`` is the (positive) exponential rate of the integrand envelope
    C (1+v)^p e^{-decay v}; C is estimated by probing the integrand on a
    coarse grid and maximising the de-enveloped norm.
    """
    if decay <= 0:
        raise QuadratureError(
            f"integrand does not decay (rate {decay:g}); improper integral diverges"
        )
    C = 0.0
    for v in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0):
        g = float(np.abs(integrand(v)).max())
        C = max(C, g * math.exp(decay * v) / (1.0 + v) ** poly_degree)
    C = max(C, quad_tol)
    T = max(1.0, (poly_degree + 1.0) / decay)
    while _tail_bound(C, poly_degree, decay, T) > 0.5 * quad_tol:
        T *= 1.5
        if T > t_max:
            raise QuadratureError(
                f"truncation horizon exceeds T_max={t_max:g} "
                f"(decay {decay:g}, prefactor {C:g})"
            )
    return T


def _quad_matrix(
    integrand: Callable[[float], np.ndarray],
    lo: float,
    hi: float,
    quad_tol: float,
) -> tuple[np.ndarray, float]:
    # relative fallback keeps huge integrands (growing like e^{lambda1 t})
    # convergable; the acceptance guard scales accordingly
    res, err = quad_vec(
        integrand, lo, hi, epsabs=quad_tol, epsrel=1e-9, quadrature="gk21"
    )
    scale = float(np.abs(res).max()) if np.asarray(res).size else 0.0
    if err > max(100 * quad_tol, 1e-7 * scale):
        raise QuadratureError(f"quadrature error estimate {err:g} above tolerance")
    return res, float(err)


def poly_time_integral(t1: float, t2: float, kappa1: int, kappa2: int, m1: int) -> float:
    """Closed form of integral over [0, t1] of (t1-v)^{k1-1} (t2-v)^{k2-1} v^{m1-1} dv.

    Evaluated exactly by expanding both binomials; this is the polynomial
    weight appearing in every critical-component covariance.
    """
    p, q, r = kappa1 - 1, kappa2 - 1, m1 - 1
    total = 0.0
    for i in range(p + 1):
        for j in range(q + 1):
            coef = math.comb(p, i) * math.comb(q, j) * (-1.0) ** (i + j)
            total += (
                coef * t1 ** (p - i) * t2 ** (q - j) * t1 ** (r + i + j + 1)
                / (r + i + j + 1)
            )
    return total


# ---------------------------------------------------------------------------
# MCBP covariance laws (short / unit / large timescales)
# ---------------------------------------------------------------------------

def cov_W1(t1: float, t2: float, structure: ReplacementStructure, mu) -> LimitCovariance:
    """Brownian covariance min(t1,t2) * sum_i mu_i a_i E[xi_i xi_i']."""
    if t1 < 0 or t2 < 0:
        raise DomainError("times must be non-negative")
    mu = np.asarray(mu, dtype=float)
    a = structure.weights
    rate = sum(
        mu[i] * a[i] * second_moment(structure, i) for i in range(structure.d)
    )
    return LimitCovariance("W1", {"t1": t1, "t2": t2}, min(t1, t2) * rate)


def cov_W2(
    t1: float,
    t2: float,
    structure: ReplacementStructure,
    mu,
    dec: Optional[SpectralDecomposition] = None,
    quad_tol: float = DEFAULT_QUAD_TOL,
) -> LimitCovariance:
    """E[W2(t2) W2(t1)'] for 0 <= t1 <= t2 by adaptive quadrature."""
    if not 0 <= t1 <= t2 or not math.isfinite(t2):
        raise DomainError("need 0 <= t1 <= t2 < inf")
    ctx = law_context(structure, mu)
    dec = dec or ctx.dec
    a, muv = ctx.a, ctx.mu
    seconds = ctx.seconds

    def integrand(v: float) -> np.ndarray:
        left = expm(dec, t1 - v)
        emu = expm(dec, v) @ muv
        core = sum(a[i] * emu[i] * seconds[i] for i in range(structure.d))
        return left @ core @ left.T

    if t1 == 0:
        var = np.zeros((structure.d, structure.d))
        err = 0.0
    else:
        var, err = _quad_matrix(integrand, 0.0, t1, quad_tol)
    cov = expm(dec, t2 - t1) @ var if t2 > t1 else var
    if t1 == t2:
        cov = (cov + cov.T) / 2
    out = LimitCovariance("W2", {"t1": t1, "t2": t2}, cov, quad_error=err)
    if t1 == t2:
        out.validate_variance(max(quad_tol, err))
    return out


def _ws_stationary(ctx: LawContext, quad_tol: float, t_max: float) -> tuple[np.ndarray, float, float]:
    dec = ctx.dec
    cls = classify(dec)
    if not cls.small:
        raise DomainError("no small eigenvalues: Ws is not defined")
    lam_hat = max(l.real for l in cls.small)
    kap_hat = max(b.m for l in cls.small for b in dec.blocks_at(l))
    decay = ctx.dec.lambda1 - 2.0 * lam_hat

    # P_s e^{Av} assembled from the small blocks only: the integrand then
    # carries no trace of the leading growth, which a projected full
    # exponential would cancel only to round-off
    def integrand(v: float) -> np.ndarray:
        M = class_expm(dec, cls.small, v)  # real up to round-off: conjugate-closed sum
        out = (M @ ctx.B @ M.T) * math.exp(-dec.lambda1 * v)
        return out.real

    T = _truncation_horizon(integrand, decay, 2 * (kap_hat - 1) + (dec.m1 - 1), quad_tol, t_max)
    sigma0, err = _quad_matrix(integrand, 0.0, T, quad_tol)
    return sigma0, err, T


def cov_Ws(
    t1: float,
    t2: float,
    structure: ReplacementStructure,
    mu,
    dec: Optional[SpectralDecomposition] = None,
    quad_tol: float = DEFAULT_QUAD_TOL,
    t_max: float = DEFAULT_T_MAX,
) -> LimitCovariance:
    """Stationary Ornstein-Uhlenbeck covariance of the small components.

    Depends on (t1, t2) only through t2 - t1; the improper integral is
    truncated at a horizon certified by the exponential decay of the
    integrand envelope.
    """
    if t2 < t1:
        t1, t2 = t2, t1
    ctx = law_context(structure, mu)
    dec = ctx.dec
    sigma0, err, T = _ws_stationary(ctx, quad_tol, t_max)
    lag = t2 - t1
    # apply e^{(A - lambda1/2) lag} within the small subspace only: the
    # stationary matrix lives there, and the leading-block factor would
    # amplify quadrature noise exponentially at long lags
    cls = classify(dec)
    pref = class_expm(dec, cls.small, lag) * math.exp(-dec.lambda1 * lag / 2.0)
    cov = _realify(pref @ sigma0, 1e-9)
    out = LimitCovariance("Ws", {"t1": t1, "t2": t2}, cov, quad_error=err, horizon=T)
    if t1 == t2:
        out.validate_variance(max(quad_tol, err))
    return out


def cross_cov_critical(
    block2: JordanBlock,
    kappa2: int,
    block1: JordanBlock,
    kappa1: int,
    t1: float,
    t2: float,
    structure: ReplacementStructure,
    mu,
    dec: Optional[SpectralDecomposition] = None,
    tol_class: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(cov, pseudo_cov) of the pair of critical-component limits.

    cov is E[W_{J2,k2}(t2) conj(W_{J1,k1}(t1))'], nonzero only when the two
    eigenvalues coincide; pseudo_cov is the unconjugated moment, nonzero
    only when they are mutual conjugates.  Blocks from different conjugate
    families are independent and give zero matrices.
    """
    ctx = law_context(structure, mu)
    dec = dec or ctx.dec
    if tol_class is None:
        tol_class = tol_class_for(dec.lambda1)
    half = dec.lambda1 / 2.0
    for b in (block1, block2):
        if abs(b.lam.real - half) > tol_class:
            raise DomainError(f"block with eigenvalue {b.lam} is not critical")
    if not 0 <= t1 <= t2:
        raise DomainError("need 0 <= t1 <= t2")
    for blk, kap in ((block1, kappa1), (block2, kappa2)):
        if not 1 <= kap <= blk.m:
            raise DomainError(f"kappa={kap} outside [1, {blk.m}]")

    d = dec.d
    tol = 1e-9 * max(1.0, abs(dec.lambda1))
    same = abs(block1.lam - block2.lam) <= tol
    conj = abs(np.conj(block1.lam) - block2.lam) <= tol
    weight = poly_time_integral(t1, t2, kappa1, kappa2, dec.m1) / (
        math.factorial(kappa2 - 1) * math.factorial(kappa1 - 1)
    )
    M2 = chain_matrix(dec, block2, 1)   # N_A^{m2-1} P_{J2}
    M1 = chain_matrix(dec, block1, 1)
    cov = np.zeros((d, d), dtype=complex)
    pseudo = np.zeros((d, d), dtype=complex)
    if same:
        cov = M2 @ ctx.B @ M1.conj().T * weight
    if conj:
        pseudo = M2 @ ctx.B @ M1.T * weight
    return cov, pseudo


def cov_WJk(
    t1: float,
    t2: float,
    block: JordanBlock,
    kappa: int,
    structure: ReplacementStructure,
    mu,
    dec: Optional[SpectralDecomposition] = None,
) -> LimitCovariance:
    """Critical-component covariance of one block; pseudo_cov = 0 off the
    real axis (the unconjugated moments of a complex critical law vanish)."""
    cov, pseudo = cross_cov_critical(block, kappa, block, kappa, t1, t2, structure, mu, dec)
    if block.lam.imag != 0:
        pseudo = np.zeros_like(pseudo)
    out = LimitCovariance(
        "WJk",
        {"t1": t1, "t2": t2, "lam": block.lam, "kappa": kappa},
        _realify(cov) if block.is_real else cov,
        pseudo_cov=_realify(pseudo) if block.is_real else pseudo,
    )
    if t1 == t2:
        out.validate_variance(1e-12 * max(1.0, float(np.abs(cov).max())))
    return out


def var_VJ(
    block2: JordanBlock,
    block1: JordanBlock,
    structure: ReplacementStructure,
    mu,
    dec: Optional[SpectralDecomposition] = None,
    quad_tol: float = DEFAULT_QUAD_TOL,
    t_max: float = DEFAULT_T_MAX,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Large-component limit covariances (cov, pseudo_cov, horizon).

    cov is E[V_{J2} conj(V_{J1})'], pseudo the unconjugated moment.  The
    integrand decays at rate Re(lam_1 + lam_2) - lambda1 > 0, which is what
    certifies the truncation.
    """
    ctx = law_context(structure, mu)
    dec = dec or ctx.dec
    half = dec.lambda1 / 2.0
    tolc = tol_class_for(dec.lambda1)
    for b in (block1, block2):
        if b.lam.real <= half + tolc and abs(b.lam - dec.lambda1) > tolc:
            raise DomainError(f"block with eigenvalue {b.lam} is not large")
    decay = block1.lam.real + block2.lam.real - dec.lambda1
    degree = (block1.m - 1) + (block2.m - 1) + (dec.m1 - 1)
    a, muv, seconds = ctx.a, ctx.mu, ctx.seconds

    # P_J e^{-Av} built per block so no foreign eigenvalue's growth leaks
    # into the integrand at large v; the conjugated moment equals the plain
    # moment against the conjugate block, since conj(P_J e^{-Av}) projects
    # onto the conjugate Jordan space
    def plain(right_block: JordanBlock) -> tuple[np.ndarray, float]:
        def integrand(v: float) -> np.ndarray:
            left = block_expm(dec, block2, -v)
            right = block_expm(dec, right_block, -v)
            emu = expm(dec, v) @ muv
            mid = sum(a[i] * emu[i] * seconds[i] for i in range(structure.d))
            return left @ mid @ right.T

        T = _truncation_horizon(integrand, decay, degree, quad_tol, t_max)
        out, _err = _quad_matrix(integrand, 0.0, T, quad_tol)
        return out, T

    pseudo, T = plain(block1)
    if block1.is_real:
        cov = pseudo.copy()
    else:
        cov, _ = plain(dec.blocks[block1.conj_index])
    if block1.is_real and block2.is_real:
        cov, pseudo = _realify(cov), _realify(pseudo)
    return cov, pseudo, T


# ---------------------------------------------------------------------------
# Urn-clock limits: affine maps of the MCBP laws
# ---------------------------------------------------------------------------

def cov_Y1(t1: float, t2: float, structure: ReplacementStructure, mu) -> LimitCovariance:
    """Brownian urn fluctuation covariance in the initial-ball-dominant regime.

    Closed form: min(t1,t2) times
    beta1^{-1} sum_i a_i mu_i E[xi_i xi_i']
    - beta1^{-2} (sum_i a_i mu_i E[xi_i]) (same)'.
    """
    if t1 < 0 or t2 < 0:
        raise DomainError("times must be non-negative")
    mu = np.asarray(mu, dtype=float)
    a = structure.weights
    beta1 = float(a @ mu)
    rate = sum(a[i] * mu[i] * second_moment(structure, i) for i in range(structure.d))
    m = sum(a[i] * mu[i] * structure.rules[i].mean() for i in range(structure.d))
    cov = min(t1, t2) * (rate / beta1 - np.outer(m, m) / beta1**2)
    return LimitCovariance("Y1", {"t1": t1, "t2": t2}, cov)


def cov_Y1_via_W1(t1: float, t2: float, structure: ReplacementStructure, mu) -> LimitCovariance:
    """Same covariance through the linear map of W1 (independent code path).

    Y1(t) = beta1^{-1/2} W1(t) - S^{-1} beta1^{-3/2} (A mu) (a . W1(t)).
    """
    ctx = law_context(structure, mu)
    L = np.eye(structure.d) / math.sqrt(ctx.beta1) - np.outer(
        ctx.dec.A @ ctx.mu, ctx.a
    ) / (ctx.S * ctx.beta1**1.5)
    base = cov_W1(t1, t2, structure, mu).cov
    return LimitCovariance("Y1", {"t1": t1, "t2": t2, "route": "map"}, L @ base @ L.T)


def _y2_map(t: float, ctx: LawContext) -> np.ndarray:
    s = math.log1p(ctx.S * t / ctx.beta1) / ctx.S
    coef = expm(ctx.dec, s) @ (ctx.dec.A @ ctx.mu) / (ctx.beta1 * ctx.S + ctx.S**2 * t)
    return np.eye(ctx.dec.d) - np.outer(coef, ctx.a)


def cov_Y2(
    t1: float,
    t2: float,
    structure: ReplacementStructure,
    mu,
    quad_tol: float = DEFAULT_QUAD_TOL,
) -> LimitCovariance:
    """Transitional-regime urn covariance E[Y2(t2) Y2(t1)'].

    Y2(t) = L(t) W2(s(t)) with s(t) = S^{-1} log(1 + S t / beta1) and
    L(t) = I - e^{A s(t)} A mu a' / (beta1 S + S^2 t).
    """
    if t2 < t1:
        raise DomainError("need t1 <= t2")
    ctx = law_context(structure, mu)
    for t in (t1, t2):
        if 1.0 + ctx.S * t / ctx.beta1 <= 0:
            raise DomainError(
                f"t={t} outside the domain: urn extinct past t = {-ctx.beta1 / ctx.S:g}"
            )
    s1 = math.log1p(ctx.S * t1 / ctx.beta1) / ctx.S
    s2 = math.log1p(ctx.S * t2 / ctx.beta1) / ctx.S
    w2 = cov_W2(s1, s2, structure, mu, ctx.dec, quad_tol)
    cov = _y2_map(t2, ctx) @ w2.cov @ _y2_map(t1, ctx).T
    if t1 == t2:
        cov = (cov + cov.T) / 2
    return LimitCovariance("Y2", {"t1": t1, "t2": t2}, cov, quad_error=w2.quad_error)


def cov_Ys(
    t1: float,
    t2: float,
    structure: ReplacementStructure,
    mu,
    quad_tol: float = DEFAULT_QUAD_TOL,
) -> LimitCovariance:
    """Stationary covariance of the small-component urn limit at draw-clock
    times t1, t2 > 0: Ys(log t) = (S/beta1)^{1/2} Ws(log(S t / beta1) / S)."""
    if t1 <= 0 or t2 <= 0:
        raise DomainError("draw-clock times must be positive")
    if t2 < t1:
        t1, t2 = t2, t1
    ctx = law_context(structure, mu)
    lag = math.log(t2 / t1) / ctx.S
    base = cov_Ws(0.0, lag, structure, mu, ctx.dec, quad_tol)
    scale = ctx.S / ctx.beta1
    return LimitCovariance(
        "Ys", {"t1": t1, "t2": t2}, scale * base.cov,
        quad_error=scale * base.quad_error, horizon=base.horizon,
    )


def cov_YJk(
    t1: float,
    t2: float,
    block: JordanBlock,
    kappa: int,
    structure: ReplacementStructure,
    mu,
) -> LimitCovariance:
    """Critical-component urn limit: Y_{J,k}(t) = S^{-(k-1/2)} (S/beta1)^{lam/S} W_{J,k}(t)."""
    ctx = law_context(structure, mu)
    c = ctx.S ** (-(kappa - 0.5)) * complex(ctx.S / ctx.beta1) ** (block.lam / ctx.S)
    w = cov_WJk(t1, t2, block, kappa, structure, mu, ctx.dec)
    cov = (c * np.conj(c)) * w.cov
    pseudo = (c * c) * w.pseudo_cov if w.pseudo_cov is not None else None
    return LimitCovariance(
        "YJk",
        {"t1": t1, "t2": t2, "lam": block.lam, "kappa": kappa},
        _realify(cov) if block.is_real else cov,
        pseudo_cov=_realify(pseudo) if (pseudo is not None and block.is_real) else pseudo,
    )


def _leading_cross(ctx: LawContext, block: JordanBlock, quad_tol: float, t_max: float):
    """E[V_J V_1] vector and Var(V_1), with V_1 = a . (sum of leading V's)."""
    lead = ctx.dec.leading_blocks
    g = np.zeros(ctx.dec.d, dtype=complex)
    for Jp in lead:
        _cov, pseudo, _T = var_VJ(block, Jp, ctx.structure, ctx.mu, ctx.dec, quad_tol, t_max)
        g = g + pseudo @ ctx.a.astype(complex)
    var1 = 0.0
    for Jp in lead:
        for Jq in lead:
            _cov, pseudo, _T = var_VJ(Jp, Jq, ctx.structure, ctx.mu, ctx.dec, quad_tol, t_max)
            var1 += float(np.real(ctx.a @ pseudo @ ctx.a))
    return g, var1


def cov_ZJ(
    block2: JordanBlock,
    block1: JordanBlock,
    structure: ReplacementStructure,
    mu,
    quad_tol: float = DEFAULT_QUAD_TOL,
    t_max: float = DEFAULT_T_MAX,
) -> LimitCovariance:
    """Large-component urn limit covariance.

    Z_J = (S/beta1)^{lam/S} (V_J - (beta1 S)^{-1} V_1 A P_J mu) with
    V_1 the leading-block mass fluctuation; its variance and the cross
    moments all come from the V_J integrals.
    """
    ctx = law_context(structure, mu)
    S, beta1 = ctx.S, ctx.beta1
    c2 = complex(S / beta1) ** (block2.lam / S)
    c1 = complex(S / beta1) ** (block1.lam / S)
    w2 = (ctx.dec.A @ (block2.P @ ctx.mu)) / (beta1 * S)
    w1 = (ctx.dec.A @ (block1.P @ ctx.mu)) / (beta1 * S)
    covV, pseudoV, T = var_VJ(block2, block1, structure, mu, ctx.dec, quad_tol, t_max)
    g2, var1 = _leading_cross(ctx, block2, quad_tol, t_max)
    g1, _ = _leading_cross(ctx, block1, quad_tol, t_max)

    cov = covV - np.outer(g2, np.conj(w1)) - np.outer(w2, np.conj(g1)) + var1 * np.outer(w2, np.conj(w1))
    pseudo = pseudoV - np.outer(g2, w1) - np.outer(w2, g1) + var1 * np.outer(w2, w1)
    cov = (c2 * np.conj(c1)) * cov
    pseudo = (c2 * c1) * pseudo
    real = block1.is_real and block2.is_real
    out = LimitCovariance(
        "ZJ",
        {"lam2": block2.lam, "lam1": block1.lam},
        _realify(cov) if real else cov,
        pseudo_cov=_realify(pseudo) if real else pseudo,
    )
    if block1.index == block2.index:
        out.validate_variance(100 * quad_tol)
    return out


def cov_ZS(
    structure: ReplacementStructure,
    mu,
    quad_tol: float = DEFAULT_QUAD_TOL,
    t_max: float = DEFAULT_T_MAX,
) -> LimitCovariance:
    """Urn limit for a non-simple leading eigenvalue: Z_S = sum of Z_J over
    the leading blocks."""
    ctx = law_context(structure, mu)
    lead = ctx.dec.leading_blocks
    d = ctx.dec.d
    cov = np.zeros((d, d), dtype=complex)
    pseudo = np.zeros((d, d), dtype=complex)
    for J2 in lead:
        for J1 in lead:
            part = cov_ZJ(J2, J1, structure, mu, quad_tol, t_max)
            cov += part.cov
            pseudo += part.pseudo_cov
    out = LimitCovariance("ZS", {}, _realify(cov), pseudo_cov=_realify(pseudo))
    out.validate_variance(100 * quad_tol)
    return out


def urn_limit_cov(
    mode: str,
    t1: float,
    t2: float,
    structure: ReplacementStructure,
    mu,
    block: Optional[JordanBlock] = None,
    kappa: int = 1,
    quad_tol: float = DEFAULT_QUAD_TOL,
) -> LimitCovariance:
    """Dispatch to the urn-clock limit law of the given mode.

    Component modes take an explicit block: tsd-critical maps to the
    critical-component law, tsd-large to the large-component one (or the
    non-simple aggregate when the leading eigenvalue is not simple and no
    block is given).
    """
    if mode == "ibd":
        return cov_Y1(t1, t2, structure, mu)
    if mode == "tr":
        return cov_Y2(t1, t2, structure, mu, quad_tol)
    if mode == "tsd-small":
        return cov_Ys(t1, t2, structure, mu, quad_tol)
    ctx = law_context(structure, mu)
    if mode == "tsd-critical":
        if block is None:
            raise DomainError("tsd-critical law needs a Jordan block")
        return cov_YJk(t1, t2, block, kappa, structure, mu)
    if mode == "tsd-large":
        if block is not None:
            return cov_ZJ(block, block, structure, mu, quad_tol)
        if not ctx.dec.lambda1_simple:
            return cov_ZS(structure, mu, quad_tol)
        cls = classify(ctx.dec)
        others = [
            l for l in cls.large
            if abs(l - ctx.dec.lambda1) > tol_class_for(ctx.dec.lambda1)
        ]
        if not others:
            raise DomainError("no non-leading large eigenvalue; pass a block")
        lam = max(others, key=lambda l: l.real)
        blk = ctx.dec.blocks_at(lam)[0]
        return cov_ZJ(blk, blk, structure, mu, quad_tol)
    raise DomainError(f"unknown mode {mode!r}")


def oscillatory_compose(
    lam: complex,
    n: int,
    N: int,
    t: float,
    re_part: np.ndarray,
    im_part: np.ndarray,
    S: float,
) -> np.ndarray:
    """Real observable carried by a conjugate pair of complex components.

    Re(Y) cos(Im lam log(n/N) t / S) - Im(Y) sin(same phase); the period in
    t is 2 pi S / (Im lam log(n/N)).
    """
    if lam.imag == 0:
        raise DomainError("oscillatory composition needs a complex eigenvalue")
    phase = lam.imag * math.log(n / N) * t / S
    return np.asarray(re_part) * math.cos(phase) - np.asarray(im_part) * math.sin(phase)


# ---------------------------------------------------------------------------
# Centerings and fluctuation scalings
# ---------------------------------------------------------------------------

def log_time_change(mode: str, n: int, N: int, t: float, S: float, beta1: float) -> float:
    """ell_1 = log(1 + S n t / beta1 N) on the linear clock,
    ell_2 = log(1 + S (n/N)^t / beta1) on the stretched clock."""
    if mode in LINEAR_MODES:
        arg = 1.0 + S * n * t / (beta1 * N)
    elif mode in STRETCHED_MODES:
        arg = 1.0 + S * (n / N) ** t / beta1
    else:
        raise DomainError(f"unknown mode {mode!r}")
    if arg <= 0:
        raise DomainError(
            f"time change undefined at t={t}: 1 + S m / beta1 N = {arg:g} <= 0 "
            "(the urn is extinct there)"
        )
    return math.log(arg)


def resolve_mode(
    regime: str,
    dec: Optional[SpectralDecomposition] = None,
    subcase: Optional[str] = None,
) -> str:
    """Map a regime name (plus optional subcase or spectrum) to a mode tag."""
    regime = regime.lower()
    if regime in ("ibd", "tr"):
        return regime
    if regime != "tsd":
        raise DomainError(f"unknown regime {regime!r}")
    if subcase is not None:
        sub = subcase.lower().replace("tsd-", "")
        if sub in ("small", "critical", "large"):
            return f"tsd-{sub}"
        raise DomainError(f"unknown tsd subcase {subcase!r}")
    if dec is None:
        raise DomainError("tsd regime needs a subcase or a decomposition")
    cls = classify(dec)
    if cls.subcase is None:
        raise DomainError(
            "time-step-dominant regime needs a positive leading eigenvalue "
            "(assumption A3 fails for this structure)"
        )
    return {
        "small-urn": "tsd-small",
        "critical-urn": "tsd-critical",
        "large-urn-simple": "tsd-large",
        "large-urn-nonsimple": "tsd-large",
    }[cls.subcase]


def grid_draw_index(mode: str, n: int, N: int, t: float) -> int:
    """Draw count recorded at grid time t: floor(n t) on the linear clock,
    floor(N (n/N)^t) on the stretched clock."""
    if mode in LINEAR_MODES:
        m = math.floor(n * t + 1e-9)
    elif mode in STRETCHED_MODES:
        m = math.floor(N * (n / N) ** t + 1e-9)
    else:
        raise DomainError(f"unknown mode {mode!r}")
    return int(m)


def centering(
    mode: str,
    n: int,
    N: int,
    t: float,
    dec: SpectralDecomposition,
    mu,
    S: Optional[float] = None,
    beta1: Optional[float] = None,
) -> np.ndarray:
    """Deterministic centering N e^{A ell(n,t)/S} mu of the urn at grid time t."""
    mu = np.asarray(mu, dtype=float)
    if S is None:
        S = dec.lambda1
    if beta1 is None:
        raise DomainError("centering needs beta1 = a . mu")
    ell = log_time_change(mode, n, N, t, S, beta1)
    return N * (expm(dec, ell / S) @ mu)


@dataclass(frozen=True)
class RegimeScaling:
    """Recording clock, centering and fluctuation prefactor for one mode.

    ``prefactor(t)`` multiplies the centered composition; ``projector`` is
    the optional chain matrix N_A^{m-kappa} P_J (or the class projector P_s
    for the small-component mode).
    """

    mode: str
    draw_index: Callable[[float], int]
    centering: Callable[[float], np.ndarray]
    prefactor: Callable[[float], complex]
    projector: Optional[np.ndarray] = None
    block: Optional[JordanBlock] = None
    kappa: Optional[int] = None


def make_scaling(
    mode: str,
    spec: UrnSpec,
    dec: Optional[SpectralDecomposition] = None,
    block: Optional[JordanBlock] = None,
    kappa: Optional[int] = None,
) -> RegimeScaling:
    """Build the exact scaling of the fluctuation theorem for ``mode``.

    Component modes (tsd-critical / tsd-large with a block) need the
    (J, kappa) pair; without a block the full-vector prefactor of the
    matching urn theorem is used (largest relevant eigenvalue and block).
    """
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}; expected one of {MODES}")
    structure = spec.structure
    S = structure.balance_constant()
    beta1 = spec.beta1
    if dec is None:
        from .model import mean_matrix

        dec = decomposition_for(mean_matrix(structure))
    n, N = spec.n, spec.N
    mu = spec.mu_float

    center = lambda t: centering(mode, n, N, t, dec, mu, S=S, beta1=beta1)
    index = lambda t: grid_draw_index(mode, n, N, t)

    projector = None
    blk, kap = block, kappa
    if mode == "ibd" or mode == "tsd-small":
        pref = lambda t: n ** -0.5
        if mode == "tsd-small":
            projector = np.real(dec.P_class("small"))
    elif mode == "tr":
        pref = lambda t: N ** -0.5
    elif mode == "tsd-critical":
        logr = math.log(n / N)
        if blk is not None:
            if kap is None:
                raise DomainError("component scaling needs kappa")
            lam = blk.lam
            projector = chain_matrix(dec, blk, kap)
            pref = lambda t: N ** -0.5 * (n / N) ** (-lam * t / S) * logr ** -(kap - 0.5)
        else:
            cls = classify(dec)
            if not cls.critical:
                raise DomainError("no critical eigenvalues")
            mbig = max(b.m for l in cls.critical for b in dec.blocks_at(l))
            pref = lambda t: N ** -0.5 * (n / N) ** (-t / 2.0) * logr ** -(mbig - 0.5)
    elif mode == "tsd-large":
        logr = math.log(n / N)
        if blk is not None:
            if kap is None:
                raise DomainError("component scaling needs kappa")
            lam = blk.lam
            projector = chain_matrix(dec, blk, kap)
            pref = lambda t: (
                N ** -0.5 * (n / N) ** (-lam * t / S)
                * (1.0 if kap == 1 else (t * logr) ** -(kap - 1))
            )
        else:
            cls = classify(dec)
            others = [l for l in cls.large if abs(l - dec.lambda1) > tol_class_for(dec.lambda1)]
            if not others:
                raise DomainError("tsd-large full-vector scaling needs a non-leading large eigenvalue")
            lam_max = max(l.real for l in others)
            mbig = max(
                b.m for l in others if abs(l.real - lam_max) <= tol_class_for(dec.lambda1)
                for b in dec.blocks_at(l)
            )
            pref = lambda t: (
                N ** -0.5 * (n / N) ** (-lam_max * t / S)
                * (1.0 if mbig == 1 else (t * logr) ** -(mbig - 1))
            )
    return RegimeScaling(mode, index, center, pref, projector, blk, kap)


# ---------------------------------------------------------------------------
# Moment oracles for the embedded branching process
# ---------------------------------------------------------------------------

def mcbp_second_moment(
    structure: ReplacementStructure,
    X0,
    t: float,
    quad_tol: float = DEFAULT_QUAD_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean e^{At} X0 and Var(X(t)) of the branching process at time t.

    The variance is the finite-interval integral
    sum_i int_0^t e^{A(t-v)} E[xi_i xi_i'] e^{A'(t-v)} a_i (e^{Av} X0)_i dv.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    X0 = np.asarray(X0, dtype=float)
    from .model import mean_matrix

    dec = decomposition_for(mean_matrix(structure))
    a = structure.weights
    seconds = [second_moment(structure, i) for i in range(structure.d)]
    mean = expm(dec, t) @ X0
    if t == 0:
        return mean, np.zeros((structure.d, structure.d))

    def integrand(v: float) -> np.ndarray:
        left = expm(dec, t - v)
        ex = expm(dec, v) @ X0
        core = sum(a[i] * ex[i] * seconds[i] for i in range(structure.d))
        return left @ core @ left.T

    cov, _err = _quad_matrix(integrand, 0.0, t, quad_tol)
    return mean, (cov + cov.T) / 2
