"""Urn trajectories, the continuous-time embedding, and parallel ensembles.

Two execution styles:

* per-replicate simulation (``simulate_urn`` / ``simulate_mcbp``) drives a
  single path off explicit generator streams; the branching process and the
  urn share the colour-draw code path, so the composition sequence at death
  times is bitwise the urn sequence under a shared draw stream;
* lockstep ensembles (``run_ensemble`` / ``run_mcbp_ensemble``) advance all
  replicates of a block together with vectorised draws, recording states at
  grid points only.  Blocks are keyed by (base_seed, block index), so the
  output is bitwise identical for any worker count or execution order.

Counter-based Philox streams seeded through SeedSequence spawn keys give
the splittable, schedule-independent randomness both styles rely on.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import ReplacementStructure, UrnSpec
from .limits import DomainError, grid_draw_index, log_time_change, resolve_mode

DEFAULT_EVENT_CAP = 10**8
#: replicates per lockstep block; fixed so results never depend on threads
LOCKSTEP_BLOCK = 4096

# substream tags so urn draws, clocks and lockstep blocks never collide
_TAG_DRAWS = 0
_TAG_CLOCKS = 1
_TAG_URN_BLOCK = 2
_TAG_MCBP_BLOCK = 3
_TAG_DEATHS = 4


class ResourceCapError(RuntimeError):
    pass


def substream(base_seed: int, *path: int) -> np.random.Generator:
    """Philox generator for a named substream of ``base_seed``."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def replicate_draw_stream(base_seed: int, replicate: int) -> np.random.Generator:
    return substream(base_seed, replicate, _TAG_DRAWS)


def replicate_clock_stream(base_seed: int, replicate: int) -> np.random.Generator:
    return substream(base_seed, replicate, _TAG_CLOCKS)


@dataclass(frozen=True)
class Trajectory:
    """Recorded states of one path at the requested grid.

    ``grid`` holds draw indices (urn / skeleton recording) or times (MCBP
    with a time grid); ``extinct_at`` is the draw count at which the
    composition hit zero, if it did.
    """

    grid: tuple
    states: np.ndarray                      # (len(grid), d)
    death_times: Optional[np.ndarray] = None
    extinct_at: Optional[int] = None


@dataclass(frozen=True)
class EnsembleSpec:
    """An ensemble of urn replicates on a regime grid."""

    urn: UrnSpec
    regime: str                             # ibd | tr | tsd
    replicates: int
    grid_times: tuple[float, ...]
    base_seed: int
    subcase: Optional[str] = None           # small | critical | large (tsd only)

    def __post_init__(self):
        if self.replicates < 1:
            raise DomainError("need at least one replicate")
        if self.regime not in ("ibd", "tr", "tsd"):
            raise DomainError(f"unknown regime {self.regime!r}")
        S = self.urn.structure.balance_constant()
        beta1 = self.urn.beta1
        for t in self.grid_times:
            if t < 0:
                raise DomainError("grid times must be non-negative")
            # raises when 1 + S n t / beta1 N <= 0 (past extinction)
            log_time_change(self.mode, self.urn.n, self.urn.N, t, S, beta1)
        for t in self.grid_times:
            m = grid_draw_index(self.mode, self.urn.n, self.urn.N, t)
            if m > self.urn.n:
                raise DomainError(f"grid time {t} needs draw {m} > budget n={self.urn.n}")

    @property
    def mode(self) -> str:
        from .model import mean_matrix
        from .spectral import decomposition_for

        dec = None
        if self.regime == "tsd" and self.subcase is None:
            dec = decomposition_for(mean_matrix(self.urn.structure))
        return resolve_mode(self.regime, dec=dec, subcase=self.subcase)

    @property
    def draw_indices(self) -> tuple[int, ...]:
        mode = self.mode
        return tuple(
            grid_draw_index(mode, self.urn.n, self.urn.N, t) for t in self.grid_times
        )


@dataclass(frozen=True)
class EnsembleResult:
    """States of every replicate at the grid points (replicate-major)."""

    spec: EnsembleSpec
    states: np.ndarray                      # (R, G, d) float64, integer-valued
    draw_indices: tuple[int, ...]
    extinct_at: np.ndarray                  # (R,) int64, -1 if never extinct

    @property
    def extinct_fraction(self) -> float:
        return float(np.mean(self.extinct_at >= 0))


# ---------------------------------------------------------------------------
# Rule tables shared by the scalar and lockstep paths
# ---------------------------------------------------------------------------

class _RuleTables:
    def __init__(self, structure: ReplacementStructure):
        self.d = structure.d
        self.a = structure.weights
        n_max = max(len(r.atoms) for r in structure.rules)
        self.n_atoms = np.array([len(r.atoms) for r in structure.rules])
        self.single_atom = bool(n_max == 1)
        self.atoms = np.zeros((self.d, n_max, self.d))
        self.atom_cum = np.ones((self.d, n_max))
        for i, rule in enumerate(structure.rules):
            mat = rule.atom_matrix()
            self.atoms[i, : len(rule.atoms)] = mat
            self.atom_cum[i, : len(rule.atoms)] = np.cumsum(rule.probabilities())
            self.atom_cum[i, len(rule.atoms) - 1] = 1.0 + 1e-12
        self.atom0 = self.atoms[:, 0, :].copy()


def urn_step(
    state, structure: ReplacementStructure, rng: np.random.Generator
) -> tuple[np.ndarray, Optional[int]]:
    """One draw: colour i with probability a_i state_i / (a . state), then a
    replacement atom from rule i.  An empty urn freezes: no draw, no rng use."""
    state = np.asarray(state, dtype=float)
    a = structure.weights
    mass = float(a @ state)
    if mass <= 0:
        return state, None
    cum = np.cumsum(a * state)
    colour = int(np.searchsorted(cum, rng.random() * mass, side="right"))
    colour = min(colour, structure.d - 1)
    rule = structure.rules[colour]
    if len(rule.atoms) == 1:
        atom = np.asarray(rule.atoms[0][0], dtype=float)
    else:
        k = int(np.searchsorted(np.cumsum(rule.probabilities()), rng.random(), side="right"))
        atom = np.asarray(rule.atoms[min(k, len(rule.atoms) - 1)][0], dtype=float)
    return state + atom, colour


def simulate_urn(
    spec: UrnSpec, grid: Sequence[int], rng: np.random.Generator
) -> Trajectory:
    """Urn states at the requested draw indices (sorted, within budget)."""
    grid = [int(g) for g in grid]
    if sorted(grid) != grid:
        raise DomainError("grid must be sorted")
    if grid and grid[-1] > spec.n:
        raise DomainError(f"grid index {grid[-1]} exceeds draw budget n={spec.n}")
    state = spec.initial_state.copy()
    structure = spec.structure
    out = np.empty((len(grid), spec.structure.d))
    gi = 0
    extinct_at = None
    while gi < len(grid) and grid[gi] == 0:
        out[gi] = state
        gi += 1
    last = grid[-1] if grid else 0
    for m in range(1, last + 1):
        new_state, colour = urn_step(state, structure, rng)
        if colour is not None and extinct_at is None and not new_state.any():
            extinct_at = m
        state = new_state
        while gi < len(grid) and grid[gi] == m:
            out[gi] = state
            gi += 1
    return Trajectory(grid=tuple(grid), states=out, extinct_at=extinct_at)


def simulate_mcbp(
    spec: UrnSpec,
    time_grid: Sequence[float] = (),
    clock_rng: Optional[np.random.Generator] = None,
    draw_rng: Optional[np.random.Generator] = None,
    record_deaths: bool = False,
    n_deaths: Optional[int] = None,
    event_cap: int = DEFAULT_EVENT_CAP,
) -> Trajectory:
    """Event-driven branching process started from N mu.

    Holding time to the next death is exponential with the total rate
    a . X (the minimum of the per-particle exponential clocks); the dying
    colour and its replacement atom reuse ``urn_step`` on ``draw_rng``, so
    the skeleton recorded with ``n_deaths`` is the urn path of that stream.
    States at grid times follow the right-continuous convention (a death at
    exactly t is included in the state at t).
    """
    if clock_rng is None:
        raise DomainError("simulate_mcbp needs an explicit clock stream")
    if draw_rng is None:
        draw_rng = clock_rng
    if n_deaths is not None and len(time_grid) > 0:
        raise DomainError("n_deaths and time_grid are mutually exclusive")
    structure = spec.structure
    a = structure.weights
    state = spec.initial_state.copy()
    t = 0.0
    deaths: list[float] = []
    extinct_at = None

    if n_deaths is not None:
        skeleton = np.empty((n_deaths, structure.d))
        for k in range(n_deaths):
            mass = float(a @ state)
            if mass <= 0:
                skeleton[k:] = state
                break
            t += clock_rng.exponential() / mass
            state, _colour = urn_step(state, structure, draw_rng)
            deaths.append(t)
            if extinct_at is None and not state.any():
                extinct_at = k + 1
            skeleton[k] = state
        return Trajectory(
            grid=tuple(range(1, n_deaths + 1)),
            states=skeleton,
            death_times=np.asarray(deaths),
            extinct_at=extinct_at,
        )

    grid = [float(g) for g in time_grid]
    if sorted(grid) != grid:
        raise DomainError("time grid must be sorted")
    out = np.empty((len(grid), structure.d))
    gi = 0
    k = 0
    while gi < len(grid):
        mass = float(a @ state)
        if mass <= 0:
            out[gi:] = state
            break
        dt = clock_rng.exponential() / mass
        while gi < len(grid) and t + dt > grid[gi]:
            out[gi] = state
            gi += 1
        if gi >= len(grid):
            break
        t += dt
        k += 1
        if k > event_cap:
            raise ResourceCapError(f"event cap {event_cap} exceeded at t={t:g}")
        state, _colour = urn_step(state, structure, draw_rng)
        if record_deaths:
            deaths.append(t)
        if extinct_at is None and not state.any():
            extinct_at = k
    return Trajectory(
        grid=tuple(grid),
        states=out,
        death_times=np.asarray(deaths) if record_deaths else None,
        extinct_at=extinct_at,
    )


# ---------------------------------------------------------------------------
# Lockstep kernels
# ---------------------------------------------------------------------------

def _lockstep_urn_block(
    tables: _RuleTables,
    init_state: np.ndarray,
    grid: Sequence[int],
    R: int,
    rng: np.random.Generator,
    can_extinguish: bool,
) -> tuple[np.ndarray, np.ndarray]:
    d = tables.d
    a = tables.a
    grid = list(grid)
    out = np.empty((len(grid), R, d))
    extinct_at = np.full(R, -1, dtype=np.int64)
    state = np.tile(init_state.astype(float), (R, 1))
    gi = 0
    while gi < len(grid) and grid[gi] == 0:
        out[gi] = state
        gi += 1
    last = grid[-1] if grid else 0

    fast2 = d == 2 and tables.single_atom and not can_extinguish
    if fast2:
        s0 = np.ascontiguousarray(state[:, 0])
        s1 = np.ascontiguousarray(state[:, 1])
        mass = s0 * a[0] + s1 * a[1]
        d00, d01 = tables.atom0[0]
        d10, d11 = tables.atom0[1]
        thresh = np.empty(R)
        drew0 = np.empty(R, dtype=bool)
        tmp = np.empty(R)
        for m in range(1, last + 1):
            u = rng.random(R)
            np.multiply(u, mass, out=thresh)
            np.multiply(s0, a[0], out=tmp)
            np.less(thresh, tmp, out=drew0)
            np.multiply(drew0, d00 - d10, out=tmp)
            tmp += d10
            s0 += tmp
            np.multiply(drew0, d01 - d11, out=tmp)
            tmp += d11
            s1 += tmp
            np.multiply(s0, a[0], out=tmp)
            np.multiply(s1, a[1], out=mass)
            mass += tmp
            while gi < len(grid) and grid[gi] == m:
                out[gi, :, 0] = s0
                out[gi, :, 1] = s1
                gi += 1
        return out, extinct_at

    for m in range(1, last + 1):
        mass = state @ a
        alive = mass > 1e-12
        u = rng.random(R)
        cum = np.cumsum(state * a[None, :], axis=1)
        thresh = u * mass
        colour = np.sum(cum <= thresh[:, None], axis=1)
        np.clip(colour, 0, d - 1, out=colour)
        if tables.single_atom:
            delta = tables.atom0[colour]
        else:
            u2 = rng.random(R)
            acum = tables.atom_cum[colour]
            atom_idx = np.sum(acum <= u2[:, None], axis=1)
            delta = tables.atoms[colour, atom_idx]
        if can_extinguish:
            delta = np.where(alive[:, None], delta, 0.0)
        state = state + delta
        if can_extinguish:
            now_dead = alive & ~(state @ a > 1e-12)
            extinct_at[now_dead & (extinct_at < 0)] = m
        while gi < len(grid) and grid[gi] == m:
            out[gi] = state
            gi += 1
    return out, extinct_at


def run_ensemble(
    es: EnsembleSpec, threads: int = 1, block_size: int = LOCKSTEP_BLOCK
) -> EnsembleResult:
    """Lockstep urn ensemble recording states at the regime grid.

    Replicates are partitioned into fixed-size blocks keyed by
    (base_seed, block index); thread count only changes scheduling, never
    the draws, so accumulated results are bitwise reproducible.
    """
    spec = es.urn
    tables = _RuleTables(spec.structure)
    S = spec.structure.balance_constant()
    grid = sorted(set(es.draw_indices))
    order = [grid.index(g) for g in es.draw_indices]
    R = es.replicates
    n_blocks = (R + block_size - 1) // block_size
    states = np.empty((R, len(grid), spec.structure.d))
    extinct = np.empty(R, dtype=np.int64)

    def work(b: int):
        lo = b * block_size
        hi = min(R, lo + block_size)
        rng = substream(es.base_seed, _TAG_URN_BLOCK, b)
        out, ext = _lockstep_urn_block(
            tables, spec.initial_state, grid, hi - lo, rng, can_extinguish=S < 0
        )
        states[lo:hi] = np.swapaxes(out, 0, 1)
        extinct[lo:hi] = ext

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(n_blocks)))
    else:
        for b in range(n_blocks):
            work(b)

    # re-order columns to match the caller's grid_times order
    states = states[:, order, :]
    return EnsembleResult(es, states, es.draw_indices, extinct)


def _lockstep_mcbp_block(
    tables: _RuleTables,
    init_state: np.ndarray,
    time_grid: Sequence[float],
    R: int,
    rng: np.random.Generator,
    event_cap: int,
) -> np.ndarray:
    d = tables.d
    a = tables.a
    grid = np.asarray(time_grid, dtype=float)
    G = len(grid)
    t_max = grid[-1]
    state = np.tile(init_state.astype(float), (R, 1))
    t = np.zeros(R)
    done = np.zeros((G, R), dtype=bool)
    out = np.empty((G, R, d))
    iterations = 0
    active = np.ones(R, dtype=bool)
    while active.any():
        iterations += 1
        if iterations > event_cap:
            raise ResourceCapError(f"event cap {event_cap} exceeded in lockstep run")
        mass = state @ a
        dead = mass <= 1e-12
        safe_mass = np.where(dead, 1.0, mass)
        dt = rng.exponential(size=R) / safe_mass
        dt[dead] = np.inf
        t_new = t + dt
        for gi in range(G):
            newly = (~done[gi]) & (t_new > grid[gi])
            if newly.any():
                out[gi, newly] = state[newly]
                done[gi, newly] = True
        active = (t_new <= t_max) & ~dead
        if not active.any():
            break
        u = rng.random(R)
        cum = np.cumsum(state * a[None, :], axis=1)
        colour = np.sum(cum <= (u * mass)[:, None], axis=1)
        np.clip(colour, 0, d - 1, out=colour)
        if tables.single_atom:
            delta = tables.atom0[colour]
        else:
            u2 = rng.random(R)
            atom_idx = np.sum(tables.atom_cum[colour] <= u2[:, None], axis=1)
            delta = tables.atoms[colour, atom_idx]
        delta = np.where(active[:, None], delta, 0.0)
        state = state + delta
        t = np.where(active, t_new, np.inf)
    return out


def run_mcbp_ensemble(
    structure: ReplacementStructure,
    X0,
    time_grid: Sequence[float],
    replicates: int,
    base_seed: int,
    threads: int = 1,
    block_size: int = LOCKSTEP_BLOCK,
    event_cap: int = DEFAULT_EVENT_CAP,
) -> np.ndarray:
    """Branching-process states at fixed times, shape (R, G, d).

    Same block-keyed reproducibility contract as ``run_ensemble``.
    """
    grid = [float(g) for g in time_grid]
    if sorted(grid) != grid or not grid:
        raise DomainError("time grid must be sorted and non-empty")
    tables = _RuleTables(structure)
    X0 = np.asarray(X0, dtype=float)
    R = replicates
    n_blocks = (R + block_size - 1) // block_size
    out = np.empty((R, len(grid), structure.d))

    def work(b: int):
        lo = b * block_size
        hi = min(R, lo + block_size)
        rng = substream(base_seed, _TAG_MCBP_BLOCK, b)
        states = _lockstep_mcbp_block(tables, X0, grid, hi - lo, rng, event_cap)
        out[lo:hi] = np.swapaxes(states, 0, 1)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(n_blocks)))
    else:
        for b in range(n_blocks):
            work(b)
    return out


# ---------------------------------------------------------------------------
# Death times of balanced processes
# ---------------------------------------------------------------------------

def sample_death_times(
    structure: ReplacementStructure,
    N: int,
    mu,
    indices: Sequence[int],
    replicates: int,
    base_seed: int,
    chunk: int = 200_000,
) -> np.ndarray:
    """tau_{n,i} at the requested death indices, shape (R, len(indices)).

    For a balanced structure the total mass after k deaths is the constant
    N beta1 + S k, so the death times are sums of independent exponentials
    with deterministic rates and never depend on the colour draws.  This
    samples them exactly without simulating compositions.
    """
    a = structure.weights
    S = structure.balance_constant()
    mu = np.asarray(mu, dtype=float)
    beta1 = float(a @ mu)
    indices = [int(i) for i in indices]
    if sorted(indices) != indices or (indices and indices[0] < 0):
        raise DomainError("death indices must be sorted and non-negative")
    k_max = indices[-1] if indices else 0
    if S < 0:
        deaths_available = int(math.floor(N * beta1 / (-S) + 1e-9))
        if k_max > deaths_available:
            raise DomainError(
                f"index {k_max} beyond the {deaths_available} deaths of this "
                "subcritical process"
            )
    rng = substream(base_seed, _TAG_DEATHS)
    R = replicates
    out = np.empty((R, len(indices)))
    tau = np.zeros(R)
    pos = 0
    gi = 0
    while gi < len(indices) and indices[gi] == 0:
        out[:, gi] = 0.0
        gi += 1
    while pos < k_max:
        hi = min(k_max, pos + chunk)
        rates = beta1 * N + S * np.arange(pos, hi, dtype=float)
        block = rng.exponential(size=(R, hi - pos)) / rates[None, :]
        cums = tau[:, None] + np.cumsum(block, axis=1)
        while gi < len(indices) and indices[gi] <= hi:
            out[:, gi] = cums[:, indices[gi] - pos - 1]
            gi += 1
        tau = cums[:, -1]
        pos = hi
    return out


def death_time_drift(
    taus: np.ndarray,
    indices: Sequence[int],
    spec: UrnSpec,
    t: float,
) -> np.ndarray:
    """tau_{n, floor(nt)} minus the deterministic clock
    S^{-1} log(1 + S floor(nt) / beta1 N), per replicate."""
    S = spec.structure.balance_constant()
    m = int(math.floor(spec.n * t + 1e-9))
    indices = [int(i) for i in indices]
    if m not in indices:
        raise DomainError(f"death index {m} was not recorded")
    col = indices.index(m)
    ref = math.log1p(S * m / (spec.beta1 * spec.N)) / S
    return np.asarray(taus)[:, col] - ref
