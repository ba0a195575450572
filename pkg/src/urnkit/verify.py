"""Monte Carlo verification of the Gaussian limit laws.

Ensembles are turned into scaled fluctuation samples with the exact
centering and prefactor of the corresponding limit theorem, their
empirical covariance (with jackknife standard errors) is compared against
the theoretical covariance, and the named suites bundle the desk-scale
parameter choices used by the acceptance gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.stats

from .model import ReplacementStructure, UrnSpec, friedman, matching
from .spectral import JordanBlock, SpectralDecomposition, classify, decomposition_for
from .limits import (
    DomainError,
    cov_Y1,
    cov_Y2,
    cov_Ys,
    cov_ZJ,
    make_scaling,
)
from .simulate import (
    EnsembleResult,
    EnsembleSpec,
    replicate_clock_stream,
    replicate_draw_stream,
    run_ensemble,
    run_mcbp_ensemble,
    sample_death_times,
    simulate_mcbp,
    simulate_urn,
    substream,
)

_SUBURN_TAG = 11


@dataclass(frozen=True)
class FluctuationSamples:
    """Scaled, centered fluctuation samples s(t) Pi (U(t) - centering(t))."""

    mode: str
    times: tuple[float, ...]
    samples: np.ndarray          # (R, G, dim), real or complex
    stationary: bool = False     # tsd-small samples additionally divided by sqrt(t)


def fluctuation_samples(
    result: EnsembleResult,
    mode: Optional[str] = None,
    block: Optional[JordanBlock] = None,
    kappa: Optional[int] = None,
    dec: Optional[SpectralDecomposition] = None,
    stationary: bool = False,
) -> FluctuationSamples:
    """Apply the exact regime centering, prefactor and optional projector
    chain to every recorded state.  No per-replicate re-centering happens:
    the centering is the deterministic one of the limit theorem."""
    es = result.spec
    mode = mode or es.mode
    if stationary and mode != "tsd-small":
        raise DomainError("stationary rescaling only applies to tsd-small samples")
    scaling = make_scaling(mode, es.urn, dec=dec, block=block, kappa=kappa)
    R, G, d = result.states.shape
    complex_out = scaling.projector is not None and np.iscomplexobj(scaling.projector)
    if any(np.iscomplexobj(np.asarray(scaling.prefactor(t))) for t in es.grid_times):
        complex_out = True
    out = np.empty((R, G, d), dtype=complex if complex_out else float)
    for g, t in enumerate(es.grid_times):
        x = result.states[:, g, :] - scaling.centering(t)[None, :]
        pref = scaling.prefactor(t)
        x = x * pref
        if scaling.projector is not None:
            x = x @ scaling.projector.T
        if stationary:
            x = x / math.sqrt(t)
        out[:, g, :] = x
    return FluctuationSamples(mode, es.grid_times, out, stationary)


# ---------------------------------------------------------------------------
# Empirical covariance and comparison reports
# ---------------------------------------------------------------------------

def empirical_cov(
    x: np.ndarray, y: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased cross-covariance E[(x - xbar)(y - ybar)^H] and its
    delete-one jackknife standard error, both (dx, dy)."""
    x = np.asarray(x)
    y = x if y is None else np.asarray(y)
    R = x.shape[0]
    if R < 2:
        raise DomainError("need at least two replicates for a covariance")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    cov = xc.T @ yc.conj() / (R - 1)
    if R == 2:
        # the delete-one estimate is undefined; no error information
        return cov, np.full(cov.shape, np.inf)

    # delete-one covariances from the sufficient statistics
    Sx = x.sum(axis=0)
    Sy = y.sum(axis=0)
    P = x.T @ y.conj()
    xy = np.einsum("ri,rj->rij", x, y.conj())
    Sx_i = Sx[None, :] - x
    Sy_i = Sy[None, :] - y
    loo = (P[None, :, :] - xy - np.einsum("ri,rj->rij", Sx_i, Sy_i.conj()) / (R - 1)) / (R - 2)
    stderr = np.sqrt((R - 1) / R * np.sum(np.abs(loo - loo.mean(axis=0)) ** 2, axis=0))
    return cov, stderr


@dataclass(frozen=True)
class CovarianceReport:
    theoretical: np.ndarray
    empirical: np.ndarray
    mc_stderr: np.ndarray
    rel_frobenius_error: float
    per_entry_z: np.ndarray
    tolerance: float
    z_cap: float
    degenerate: bool
    verdict: bool
    normality: Optional[dict] = None

    def to_dict(self) -> dict:
        def enc(M):
            M = np.asarray(M)
            if np.iscomplexobj(M):
                return {"re": M.real.tolist(), "im": M.imag.tolist()}
            return M.tolist()

        return {
            "theoretical": enc(self.theoretical),
            "empirical": enc(self.empirical),
            "mc_stderr": enc(self.mc_stderr),
            "rel_frobenius_error": self.rel_frobenius_error,
            "max_abs_z": float(np.max(np.abs(self.per_entry_z))) if self.per_entry_z.size else 0.0,
            "tolerance": self.tolerance,
            "z_cap": self.z_cap,
            "degenerate": self.degenerate,
            "verdict": "pass" if self.verdict else "fail",
            "normality": self.normality,
        }


def compare_cov(
    empirical: np.ndarray,
    theoretical: np.ndarray,
    tolerance: float,
    mc_stderr: Optional[np.ndarray] = None,
    z_cap: float = math.inf,
    normality: Optional[dict] = None,
) -> CovarianceReport:
    """Relative Frobenius error plus per-entry z statistics.

    The verdict passes when the relative error is within tolerance and no
    entry deviates from theory by more than z_cap standard errors.  A
    (near) zero theoretical matrix flips to the degenerate branch, which
    passes only when the empirical matrix is zero within z_cap errors.
    """
    empirical = np.asarray(empirical)
    theoretical = np.asarray(theoretical)
    if empirical.shape != theoretical.shape:
        raise DomainError("shape mismatch between empirical and theoretical covariance")
    if mc_stderr is None:
        mc_stderr = np.zeros_like(np.abs(empirical))
    norm_th = float(np.linalg.norm(theoretical))
    diff = empirical - theoretical
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(mc_stderr > 0, np.abs(diff) / mc_stderr, np.where(np.abs(diff) > 0, np.inf, 0.0))
    degenerate = norm_th <= 1e-12 * max(1.0, float(np.linalg.norm(empirical)))
    if degenerate:
        rel = float(np.linalg.norm(diff))
        verdict = bool(np.max(z) <= z_cap) if z.size else True
    else:
        rel = float(np.linalg.norm(diff) / norm_th)
        verdict = rel <= tolerance and bool(np.max(z) <= z_cap)
    return CovarianceReport(
        theoretical=theoretical,
        empirical=empirical,
        mc_stderr=np.asarray(mc_stderr),
        rel_frobenius_error=rel,
        per_entry_z=z,
        tolerance=tolerance,
        z_cap=z_cap,
        degenerate=degenerate,
        verdict=verdict,
        normality=normality,
    )


def normality_test(samples: np.ndarray) -> dict:
    """Advisory Gaussianity diagnostics: per-coordinate KS against the
    fitted normal plus Mardia's kurtosis statistic.  Never gates a suite."""
    x = np.asarray(samples)
    if np.iscomplexobj(x):
        x = np.concatenate([x.real, x.imag], axis=1)
    R, d = x.shape
    if R < 100:
        raise DomainError("normality diagnostics need at least 100 replicates")
    ks = []
    for j in range(d):
        col = x[:, j]
        sd = col.std(ddof=1)
        if sd <= 1e-12 * max(1.0, abs(col.mean())):
            ks.append(None)  # degenerate coordinate: not applicable
            continue
        stat = scipy.stats.kstest(col, "norm", args=(col.mean(), sd))
        ks.append(float(stat.pvalue))
    live = [j for j in range(d) if ks[j] is not None]
    mardia_p = None
    if live:
        xl = x[:, live]
        xc = xl - xl.mean(axis=0)
        cov = xc.T @ xc / R
        try:
            inv = np.linalg.inv(cov)
        except np.linalg.LinAlgError:
            inv = np.linalg.pinv(cov)
        q = np.einsum("ri,ij,rj->r", xc, inv, xc)
        dl = len(live)
        b2 = float(np.mean(q**2))
        zstat = (b2 - dl * (dl + 2)) / math.sqrt(8.0 * dl * (dl + 2) / R)
        mardia_p = float(2 * scipy.stats.norm.sf(abs(zstat)))
    return {"ks_pvalues": ks, "mardia_kurtosis_p": mardia_p}


def stacked_theory(times: Sequence[float], pair_fn, d: int) -> np.ndarray:
    """Grid covariance of the concatenated vector (Y(t_1), ..., Y(t_G)).

    ``pair_fn(t_lo, t_hi)`` must return E[Y(t_hi) Y(t_lo)'].
    """
    G = len(times)
    out = np.zeros((G * d, G * d))
    for i, ti in enumerate(times):
        for j, tj in enumerate(times):
            if ti >= tj:
                blockm = pair_fn(tj, ti)
                out[i * d : (i + 1) * d, j * d : (j + 1) * d] = np.real(blockm)
            else:
                blockm = pair_fn(ti, tj)
                out[i * d : (i + 1) * d, j * d : (j + 1) * d] = np.real(blockm).T
    return out


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------

def suburn_equivalence_check(
    structure: ReplacementStructure,
    mu,
    N: int,
    steps: int,
    replicates: int,
    base_seed: int,
    max_outcomes: int = 4096,
) -> dict:
    """Compare the urn against its per-ball decomposition.

    The initial N mu balls are split into N single-ball urns; draws pick a
    sub-urn proportionally to its mass and evolve it alone, and the total
    composition is the sum over sub-urns.  Both that path and the direct
    simulation are chi-square tested against the exactly enumerated law of
    the composition after ``steps`` draws.
    """
    if steps > 4:
        raise DomainError("sub-urn equivalence check enumerates at most 4 draws")
    spec = UrnSpec(structure, N=N, mu=mu, n=max(steps, 1))
    a = structure.weights
    d = structure.d

    # exact law by depth-first enumeration
    exact: dict[tuple, float] = {}

    def recurse(state: tuple, prob: float, depth: int):
        if len(exact) > max_outcomes:
            raise DomainError("outcome space too large to enumerate")
        if depth == steps:
            exact[state] = exact.get(state, 0.0) + prob
            return
        svec = np.asarray(state, dtype=float)
        mass = float(a @ svec)
        if mass <= 0:
            exact[state] = exact.get(state, 0.0) + prob
            return
        for i in range(d):
            pi = a[i] * svec[i] / mass
            if pi <= 0:
                continue
            for vec, pa in structure.rules[i].atoms:
                nxt = tuple((svec + np.asarray(vec, dtype=float)).astype(int))
                recurse(nxt, prob * pi * pa, depth + 1)

    init = tuple(spec.initial_state.astype(int))
    recurse(init, 1.0, 0)

    # direct simulation, vectorised across replicates
    direct = run_ensemble(
        EnsembleSpec(spec, regime="ibd", replicates=replicates,
                     grid_times=(steps / spec.n,), base_seed=base_seed)
    ).states[:, 0, :].astype(int)

    # sub-urn decomposition: one ball per sub-urn, drawn proportionally
    rng = substream(base_seed, _SUBURN_TAG)
    R = replicates
    sub = np.zeros((R, N, d))
    col = 0
    for i, cnt in enumerate(spec.initial_state.astype(int)):
        sub[:, col : col + cnt, i] = 1.0
        col += cnt
    rows = np.arange(R)
    for _ in range(steps):
        masses = sub @ a                       # (R, N)
        total = masses.sum(axis=1)
        alive = total > 1e-12
        cum = np.cumsum(masses, axis=1)
        u = rng.random(R) * np.where(alive, total, 1.0)
        pick = np.sum(cum < u[:, None], axis=1)
        np.clip(pick, 0, N - 1, out=pick)
        chosen = sub[rows, pick, :]            # (R, d)
        ccum = np.cumsum(chosen * a[None, :], axis=1)
        cmass = ccum[:, -1]
        u2 = rng.random(R) * np.where(cmass > 0, cmass, 1.0)
        colour = np.sum(ccum < u2[:, None], axis=1)
        np.clip(colour, 0, d - 1, out=colour)
        n_atoms = np.array([len(r.atoms) for r in structure.rules])
        if n_atoms.max() == 1:
            delta = np.asarray([r.atoms[0][0] for r in structure.rules], dtype=float)[colour]
        else:
            cumps = np.ones((d, n_atoms.max()))
            atoms = np.zeros((d, n_atoms.max(), d))
            for i, r in enumerate(structure.rules):
                cumps[i, : len(r.atoms)] = np.cumsum(r.probabilities())
                atoms[i, : len(r.atoms)] = r.atom_matrix()
            u3 = rng.random(R)
            ai = np.sum(cumps[colour] < u3[:, None], axis=1)
            delta = atoms[colour, ai]
        delta = np.where(alive[:, None], delta, 0.0)
        sub[rows, pick, :] += delta
    decomposed = sub.sum(axis=1).astype(int)

    outcomes = sorted(exact)
    probs = np.asarray([exact[o] for o in outcomes])
    index = {o: k for k, o in enumerate(outcomes)}

    def chisq(samples: np.ndarray) -> float:
        counts = np.zeros(len(outcomes))
        for row in samples:
            key = tuple(row)
            if key not in index:
                return 0.0  # impossible outcome observed
            counts[index[key]] += 1
        if len(outcomes) == 1:
            return 1.0  # point mass reproduced exactly
        expected = probs * len(samples)
        # pool thin cells so the chi-square approximation is honest
        big = expected >= 5
        obs = np.append(counts[big], counts[~big].sum())
        exp = np.append(expected[big], expected[~big].sum())
        keep = exp > 0
        stat, p = scipy.stats.chisquare(obs[keep], exp[keep])
        return float(p)

    return {
        "p_suburn": chisq(decomposed),
        "p_direct": chisq(direct),
        "n_outcomes": len(outcomes),
        "steps": steps,
        "replicates": replicates,
    }


def tau_scaling_suite(
    structure: Optional[ReplacementStructure] = None,
    mu=None,
    base_seed: int = 2024,
    replicates: int = 400,
    sweep=(100, 316, 1000, 3162, 10000),
    slope_tol: float = 0.1,
) -> dict:
    """Check the order of magnitude of the n-th death time in every regime.

    Medians of tau_{n,n} over a geometric sweep of n are regressed against
    the predicted clock: slope 1 on log-log axes against n/N in the
    initial-ball-dominant setup (N = n^2), slope 0 against log n in the
    transitional one (N = n), and slope 1 against S^{-1} log(n/N) in the
    time-step-dominant one (N = round(sqrt(n))).
    """
    structure = structure or friedman(2, 1)
    mu = mu if mu is not None else [0.5, 0.5]
    a = structure.weights
    S = structure.balance_constant()
    beta1 = float(a @ np.asarray(mu, dtype=float))
    report: dict = {"suites": {}, "passed": True}

    def medians(pairs, seed_off):
        med = []
        for k, (n, N) in enumerate(pairs):
            taus = sample_death_times(structure, N, mu, [n], replicates,
                                      base_seed + seed_off + k)
            med.append(float(np.median(taus[:, 0])))
        return np.asarray(med)

    # IBD: N = n^2, expect log median(tau) ~ log(n/N) + const
    pairs = [(n, n * n) for n in sweep]
    med = medians(pairs, 100)
    x = np.log([n / N for n, N in pairs])
    slope = float(np.polyfit(x, np.log(med), 1)[0])
    ok = abs(slope - 1.0) <= slope_tol
    report["suites"]["ibd"] = {
        "slope": slope, "target": 1.0, "passed": ok, "n": list(sweep),
        "points": [[float(a), float(b)] for a, b in zip(x, np.log(med))],
        "axes": ["log(n/N)", "log median tau"],
    }
    report["passed"] &= ok

    # TR: N = n, expect a constant S^{-1} log(1 + S/beta1)
    pairs = [(n, n) for n in sweep]
    med = medians(pairs, 200)
    slope = float(np.polyfit(np.log(list(sweep)), med, 1)[0])
    limit = math.log1p(S / beta1) / S
    ok = abs(slope - 0.0) <= slope_tol
    report["suites"]["tr"] = {
        "slope": slope, "target": 0.0, "passed": ok,
        "median_at_max_n": med[-1], "limit": limit,
        "points": [[float(a), float(b)] for a, b in zip(np.log(list(sweep)), med)],
        "axes": ["log n", "median tau"],
    }
    report["passed"] &= ok

    # TSD: N = round(sqrt(n)), expect median(tau) ~ S^{-1} log(n/N) + const
    pairs = [(n, max(2, int(round(math.sqrt(n))))) for n in sweep]
    med = medians(pairs, 300)
    x = np.asarray([math.log(n / N) / S for n, N in pairs])
    slope = float(np.polyfit(x, med, 1)[0])
    ok = abs(slope - 1.0) <= slope_tol
    report["suites"]["tsd"] = {
        "slope": slope, "target": 1.0, "passed": ok,
        "intercept_limit": math.log(S / beta1) / S,
        "points": [[float(a), float(b)] for a, b in zip(x, med)],
        "axes": ["log(n/N)/S", "median tau"],
    }
    report["passed"] &= ok
    report["passed"] = bool(report["passed"])
    return report


# ---------------------------------------------------------------------------
# Named verification suites (defaults mirror the acceptance gate)
# ---------------------------------------------------------------------------

def _suite_report(name: str, seed: int, params: dict, checks: list[dict]) -> dict:
    return {
        "schema": "urnkit.report/1",
        "suite": name,
        "base_seed": seed,
        "params": params,
        "checks": checks,
        "passed": bool(all(c["passed"] for c in checks)),
    }


def ibd_suite(
    base_seed: int = 1001,
    replicates: int = 20_000,
    n: int = 500,
    N: int = 50_000,
    times: tuple[float, ...] = (0.5, 1.0),
    tolerance: float = 0.10,
    z_cap: float = 8.0,
    threads: int = 1,
    structure: Optional[ReplacementStructure] = None,
    mu=None,
) -> dict:
    """Initial-ball-dominant functional CLT at desk scale.

    Stacked grid covariance of the sqrt(n)-scaled fluctuations against the
    Brownian law (min-rule across times), plus the cross-time block alone.
    """
    structure = structure or friedman(2, 1)
    mu = mu if mu is not None else ["1/2", "1/2"]
    spec = UrnSpec(structure, N=N, mu=mu, n=n)
    es = EnsembleSpec(spec, regime="ibd", replicates=replicates,
                      grid_times=times, base_seed=base_seed)
    result = run_ensemble(es, threads=threads)
    samples = fluctuation_samples(result, mode="ibd")
    d = structure.d
    G = len(times)
    flat = samples.samples.reshape(replicates, G * d).real
    emp, stderr = empirical_cov(flat)
    theory = stacked_theory(times, lambda lo, hi: cov_Y1(lo, hi, structure, spec.mu_float).cov, d)
    gauss = normality_test(flat)
    full = compare_cov(emp, theory, tolerance, stderr, z_cap, normality=gauss)

    cross_emp = emp[G * d - d :, :d] if G > 1 else emp[:d, :d]
    cross_th = theory[G * d - d :, :d] if G > 1 else theory[:d, :d]
    cross = compare_cov(cross_emp, cross_th, tolerance,
                        stderr[G * d - d :, :d] if G > 1 else stderr[:d, :d], z_cap)
    checks = [
        {"name": "grid-covariance", "rel_frobenius_error": full.rel_frobenius_error,
         "tolerance": tolerance, "passed": full.verdict, "report": full.to_dict()},
        {"name": "cross-time-min-rule", "rel_frobenius_error": cross.rel_frobenius_error,
         "tolerance": tolerance, "passed": cross.verdict, "report": cross.to_dict()},
    ]
    return _suite_report("ibd", base_seed, {
        "replicates": replicates, "n": n, "N": N, "times": list(times)}, checks)


def tr_suite(
    base_seed: int = 1002,
    replicates: int = 20_000,
    n: int = 20_000,
    d: int = 4,
    times: tuple[float, ...] = (0.25, 0.5, 0.75),
    tolerance: float = 0.10,
    r2_floor: float = 0.99,
    z_cap: float = 8.0,
    threads: int = 1,
) -> dict:
    """Transitional-regime suite on the matching urn (Brownian bridges)."""
    structure = matching(d)
    mu = [f"1/{d}"] * d
    spec = UrnSpec(structure, N=n, mu=mu, n=n)
    es = EnsembleSpec(spec, regime="tr", replicates=replicates,
                      grid_times=times, base_seed=base_seed)
    result = run_ensemble(es, threads=threads)
    # the TR theorem scales by N^{-1/2}; with N = n this matches n^{-1/2}
    samples = fluctuation_samples(result, mode="tr")
    G = len(times)
    flat = samples.samples.reshape(replicates, G * d).real
    emp, stderr = empirical_cov(flat)
    theory = stacked_theory(
        times, lambda lo, hi: cov_Y2(lo, hi, structure, spec.mu_float).cov, d
    )
    gauss = normality_test(flat)
    full = compare_cov(emp, theory, tolerance, stderr, z_cap, normality=gauss)

    # per-component variance profile proportional to t (1 - t)
    xs, ys = [], []
    for g, t in enumerate(times):
        for j in range(d):
            xs.append(t * (1.0 - t))
            ys.append(emp[g * d + j, g * d + j])
    xs, ys = np.asarray(xs), np.asarray(ys)
    beta = float(xs @ ys / (xs @ xs))
    resid = ys - beta * xs
    r2 = 1.0 - float(resid @ resid) / float(((ys - ys.mean()) ** 2).sum())
    profile_ok = r2 >= r2_floor

    checks = [
        {"name": "grid-covariance", "rel_frobenius_error": full.rel_frobenius_error,
         "tolerance": tolerance, "passed": full.verdict, "report": full.to_dict()},
        {"name": "bridge-variance-profile", "r_squared": r2, "floor": r2_floor,
         "slope": beta, "passed": bool(profile_ok)},
    ]
    return _suite_report("tr", base_seed, {
        "replicates": replicates, "n": n, "d": d, "times": list(times)}, checks)


def tsd_small_suite(
    base_seed: int = 1003,
    replicates: int = 10_000,
    n: int = 1_000_000,
    N: int = 100,
    times: tuple[float, ...] = (0.5, 1.0),
    tolerance: float = 0.15,
    threads: int = 1,
) -> dict:
    """Ornstein-Uhlenbeck limit of the small components in the
    time-step-dominant regime (stationary variance and lag correlation)."""
    structure = friedman(2, 1)
    spec = UrnSpec(structure, N=N, mu=["1/2", "1/2"], n=n)
    es = EnsembleSpec(spec, regime="tsd", subcase="small", replicates=replicates,
                      grid_times=times, base_seed=base_seed)
    result = run_ensemble(es, threads=threads)
    samples = fluctuation_samples(result, mode="tsd-small", stationary=True)
    mu = spec.mu_float
    theory = cov_Ys(1.0, 1.0, structure, mu).cov

    checks = []
    for g, t in enumerate(times):
        x = samples.samples[:, g, :].real
        emp, stderr = empirical_cov(x)
        rep = compare_cov(emp, theory, tolerance, stderr)
        checks.append({
            "name": f"stationary-variance-t{t:g}",
            "rel_frobenius_error": rep.rel_frobenius_error,
            "tolerance": tolerance, "passed": rep.verdict, "report": rep.to_dict(),
        })

    # lag correlation of the dominant small coordinate across the two times
    dec = decomposition_for(np.asarray(_mean_matrix(structure)))
    cls = classify(dec)
    lam2 = max(l.real for l in cls.small)
    S = structure.balance_constant()
    t1, t2 = times[0], times[-1]
    target = (t2 / t1) ** ((lam2 - S / 2.0) / S)
    j = int(np.argmax(np.diag(theory).real))
    x1 = samples.samples[:, 0, j].real
    x2 = samples.samples[:, len(times) - 1, j].real
    corr = float(np.corrcoef(x1, x2)[0, 1])
    ok = abs(corr - target) <= tolerance * abs(target)
    checks.append({
        "name": "lag-correlation", "value": corr, "target": target,
        "tolerance": tolerance, "passed": bool(ok),
    })
    rep = _suite_report("tsd-small", base_seed, {
        "replicates": replicates, "n": n, "N": N, "times": list(times)}, checks)
    rep["extinct_fraction"] = result.extinct_fraction
    return rep


def tsd_large_suite(
    base_seed: int = 1004,
    replicates: int = 10_000,
    n: int = 1_000_000,
    N: int = 100,
    t: float = 1.0,
    tolerance: float = 0.15,
    threads: int = 1,
) -> dict:
    """Gaussian limit of the large component for the (5,1) two-colour rule."""
    structure = friedman(5, 1)
    spec = UrnSpec(structure, N=N, mu=["1/2", "1/2"], n=n)
    es = EnsembleSpec(spec, regime="tsd", subcase="large", replicates=replicates,
                      grid_times=(t,), base_seed=base_seed)
    result = run_ensemble(es, threads=threads)
    samples = fluctuation_samples(result, mode="tsd-large")
    x = samples.samples[:, 0, :].real
    emp, stderr = empirical_cov(x)
    dec = decomposition_for(np.asarray(_mean_matrix(structure)))
    lam2 = sorted(dec.eigenvalues(), key=lambda l: l.real)[0]
    blk = dec.blocks_at(lam2)[0]
    theory = np.real(cov_ZJ(blk, blk, structure, spec.mu_float).cov)
    rep = compare_cov(emp, theory, tolerance, stderr)
    checks = [{
        "name": "large-component-variance",
        "rel_frobenius_error": rep.rel_frobenius_error,
        "tolerance": tolerance, "passed": rep.verdict, "report": rep.to_dict(),
    }]
    out = _suite_report("tsd-large", base_seed, {
        "replicates": replicates, "n": n, "N": N, "t": t}, checks)
    out["extinct_fraction"] = result.extinct_fraction
    return out


def mcbp_moment_suite(
    base_seed: int = 1005,
    replicates: int = 100_000,
    t: float = 1.0,
    X0=(5.0, 5.0),
    z_cap: float = 4.0,
    threads: int = 1,
) -> dict:
    """First and second moments of the embedded branching process against
    the exponential-mean and variance-quadrature oracles."""
    from .limits import mcbp_second_moment

    structure = friedman(2, 1)
    X0 = np.asarray(X0, dtype=float)
    states = run_mcbp_ensemble(structure, X0, [t], replicates, base_seed, threads=threads)
    x = states[:, 0, :]
    mean_th, cov_th = mcbp_second_moment(structure, X0, t)
    mean_emp = x.mean(axis=0)
    mean_se = x.std(axis=0, ddof=1) / math.sqrt(replicates)
    mean_z = np.abs(mean_emp - mean_th) / mean_se
    cov_emp, cov_se = empirical_cov(x)
    cov_z = np.abs(cov_emp - cov_th) / cov_se
    checks = [
        {"name": "mean", "max_abs_z": float(mean_z.max()), "z_cap": z_cap,
         "passed": bool(mean_z.max() <= z_cap),
         "empirical": mean_emp.tolist(), "theoretical": mean_th.tolist()},
        {"name": "covariance", "max_abs_z": float(np.max(cov_z)), "z_cap": z_cap,
         "passed": bool(np.max(cov_z) <= z_cap),
         "empirical": np.real(cov_emp).tolist(), "theoretical": cov_th.tolist()},
    ]
    return _suite_report("mcbp-moments", base_seed, {
        "replicates": replicates, "t": t, "X0": X0.tolist()}, checks)


def embedding_suite(
    base_seed: int = 1006,
    replicates: int = 1000,
    draws: int = 1000,
    structure: Optional[ReplacementStructure] = None,
) -> dict:
    """Bitwise identity between the branching-process skeleton and the urn
    path under a shared draw stream."""
    structure = structure or friedman(2, 1)
    spec = UrnSpec(structure, N=10, mu=["1/2", "1/2"], n=draws)
    mismatches = 0
    for r in range(replicates):
        sk = simulate_mcbp(
            spec,
            clock_rng=replicate_clock_stream(base_seed, r),
            draw_rng=replicate_draw_stream(base_seed, r),
            n_deaths=draws,
        )
        ur = simulate_urn(spec, list(range(1, draws + 1)),
                          replicate_draw_stream(base_seed, r))
        if not np.array_equal(sk.states, ur.states):
            mismatches += 1
    checks = [{"name": "skeleton-bitwise-equality", "mismatches": mismatches,
               "passed": mismatches == 0}]
    return _suite_report("embedding", base_seed, {
        "replicates": replicates, "draws": draws}, checks)


def suburn_suite(
    base_seed: int = 1007,
    replicates: int = 100_000,
    steps: int = 2,
    N: int = 2,
    p_floor: float = 0.001,
) -> dict:
    """Chi-square agreement of the sub-urn decomposition with the exact law."""
    res = suburn_equivalence_check(friedman(2, 1), ["1/2", "1/2"], N, steps,
                                   replicates, base_seed)
    checks = [
        {"name": "suburn-vs-exact", "p": res["p_suburn"], "floor": p_floor,
         "passed": res["p_suburn"] > p_floor},
        {"name": "direct-vs-exact", "p": res["p_direct"], "floor": p_floor,
         "passed": res["p_direct"] > p_floor},
    ]
    return _suite_report("suburn", base_seed, {
        "replicates": replicates, "steps": steps, "N": N}, checks)


def tau_suite(base_seed: int = 1008, replicates: int = 400) -> dict:
    """Death-time scaling exponents in the three regimes."""
    res = tau_scaling_suite(base_seed=base_seed, replicates=replicates)
    checks = [
        {"name": f"tau-exponent-{k}", "slope": v["slope"], "target": v["target"],
         "tolerance": 0.1, "passed": v["passed"]}
        for k, v in res["suites"].items()
    ]
    rep = _suite_report("tau", base_seed, {"replicates": replicates}, checks)
    rep["detail"] = res["suites"]
    return rep


def _mean_matrix(structure: ReplacementStructure) -> np.ndarray:
    from .model import mean_matrix

    return mean_matrix(structure)


SUITES = {
    "ibd": ibd_suite,
    "tr": tr_suite,
    "tsd-small": tsd_small_suite,
    "tsd-large": tsd_large_suite,
    "mcbp-moments": mcbp_moment_suite,
    "embedding": embedding_suite,
    "suburn": suburn_suite,
    "tau": tau_suite,
}
