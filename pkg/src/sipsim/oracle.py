"""Exact finite-state computations on small tori.

Ground truth for the Monte Carlo claims: explicit sparse generator assembly
on the n-particle sector of a torus, semigroup evaluation by uniformization
(Poisson mixture of powers of the jump kernel, truncated with a certified
tail bound), time-averaged semigroups by trapezoid quadrature, and an exact
hitting law for the one-dimensional difference walk.

States are occupation count-vectors over the torus sites, enumerated in
colexicographic order (the last site is the most significant digit), which
fixes a reproducible indexing across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
from scipy import sparse
from scipy.stats import poisson

from .core import Geometry, occupation_of
from .duality import DualityEvaluator
from .dynamics import SipParams

DEFAULT_STATE_CAP = 200_000


class StateCapError(ValueError):
    """The requested sector exceeds the configured state-count cap."""


@dataclass(frozen=True, eq=False)
class StateSpace:
    """All occupation states with n particles on a torus, with index maps."""

    geometry: Geometry
    n: int
    states: tuple = field(repr=False)
    index: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.states)

    def index_of_occupation(self, counts) -> int:
        """Ordinal of a site->count map (zero entries optional)."""
        vec = [0] * self.geometry.n_sites
        for site, k in counts.items():
            vec[self.geometry.site_index(self.geometry.wrap(site))] = k
        return self.index[tuple(vec)]

    def index_of_particles(self, particles) -> int:
        return self.index_of_occupation(occupation_of(particles))


@lru_cache(maxsize=64)
def state_space(n: int, geometry: Geometry, cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    """Enumerate the n-particle sector; raises StateCapError above the cap."""
    if not geometry.is_torus:
        raise ValueError("exact computations need a torus")
    if n < 0:
        raise ValueError(f"particle count must be >= 0, got {n}")
    v = geometry.n_sites
    size = math.comb(v + n - 1, n)
    if size > cap:
        raise StateCapError(f"sector has {size} states, above the cap {cap}")
    states = []
    for combo in combinations_with_replacement(range(v), n):
        vec = [0] * v
        for s in combo:
            vec[s] += 1
        states.append(tuple(vec))
    states.sort(key=lambda s: s[::-1])
    index = {s: i for i, s in enumerate(states)}
    return StateSpace(geometry=geometry, n=n, states=tuple(states), index=index)


@lru_cache(maxsize=64)
def build_generator(n: int, params: SipParams, cap: int = DEFAULT_STATE_CAP):
    """Sparse SIP(m) generator on the n-particle sector.

    Off-diagonal entry for eta -> eta^{x,y} accumulates
    p(x,y) * eta(x) * (m/2 + eta(y)) over contributing edges; the diagonal
    makes every row sum to zero. Returned matrix is CSR and must be treated
    as read-only (it is cached and shared).
    """
    space = state_space(n, params.geometry, cap)
    geo = params.geometry
    half_m = 0.5 * params.m
    p_edge = 1.0 / (2.0 * geo.d)
    site_list = list(geo.sites())
    nbr_idx = [
        [geo.site_index(y) for y in geo.neighbors(x)] for x in site_list
    ]
    rows, cols, vals = [], [], []
    for i, state in enumerate(space.states):
        diag = 0.0
        for xi_idx, k in enumerate(state):
            if k == 0:
                continue
            for yi_idx in nbr_idx[xi_idx]:
                rate = p_edge * k * (half_m + state[yi_idx])
                target = list(state)
                target[xi_idx] -= 1
                target[yi_idx] += 1
                rows.append(i)
                cols.append(space.index[tuple(target)])
                vals.append(rate)
                diag -= rate
        rows.append(i)
        cols.append(i)
        vals.append(diag)
    q = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(space.size, space.size), dtype=float
    )
    q.sum_duplicates()
    return q


def _uniformized(q):
    diag = q.diagonal()
    lam = float(np.max(-diag)) if diag.size else 0.0
    if lam <= 0.0:
        return None, 0.0
    p = sparse.eye(q.shape[0], format="csr") + q.multiply(1.0 / lam)
    return p.tocsr(), lam


def semigroup_apply(q, t: float, f, tail: float = 1e-12):
    """e^{tQ} f via uniformization; truncation leaves Poisson tail mass < tail."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    f = np.asarray(f, dtype=float)
    p, lam = _uniformized(q)
    mu = lam * t
    if mu == 0.0:
        return f.copy()
    kmax = max(int(poisson.isf(tail, mu)), 1)
    weights = poisson.pmf(np.arange(kmax + 1), mu)
    v = f.copy()
    out = weights[0] * v
    for k in range(1, kmax + 1):
        v = p @ v
        out += weights[k] * v
    return out


def transient_distribution(q, t: float, start_index: int, tail: float = 1e-12):
    """Row of e^{tQ}: the state distribution at time t from a point start."""
    delta = np.zeros(q.shape[0])
    delta[start_index] = 1.0
    return semigroup_apply(q.T.tocsr(), t, delta, tail=tail)


def exact_dual_expectation(xi, eta_counts, t: float, params: SipParams,
                           cap: int = DEFAULT_STATE_CAP):
    """Both sides of the self-duality identity, each by uniformization.

    Left: E_eta D(xi, eta_t), computed on the |eta|-particle sector.
    Right: E_xi D(xi_t, eta), computed on the |xi|-particle sector.
    The two must agree to solver accuracy; that agreement is the headline
    oracle check.
    """
    evaluator = DualityEvaluator(params.m)
    geo = params.geometry
    xi = tuple(geo.wrap(x) for x in xi)
    eta_counts = {geo.wrap(site): k for site, k in eta_counts.items()}
    n_eta = sum(eta_counts.values())
    n_xi = len(xi)

    xi_counts = occupation_of(xi)
    xi_support = [(geo.site_index(site), k) for site, k in xi_counts.items()]
    space_eta = state_space(n_eta, geo, cap)
    q_eta = build_generator(n_eta, params, cap)
    f_left = np.array(
        [
            math.prod(evaluator.single(k, state[si]) for si, k in xi_support)
            for state in space_eta.states
        ]
    )
    left = float(semigroup_apply(q_eta, t, f_left)[space_eta.index_of_occupation(eta_counts)])

    eta_vec = [0] * geo.n_sites
    for site, k in eta_counts.items():
        eta_vec[geo.site_index(site)] = k
    space_xi = state_space(n_xi, geo, cap)
    q_xi = build_generator(n_xi, params, cap)
    f_right = np.array(
        [
            math.prod(
                evaluator.single(k, eta_vec[si])
                for si, k in enumerate(state)
                if k
            )
            for state in space_xi.states
        ]
    )
    right = float(semigroup_apply(q_xi, t, f_right)[space_xi.index_of_particles(xi)])
    return left, right


def cesaro_apply(q, horizon: float, f, tail: float = 1e-12):
    """(1/T) * integral_0^T e^{tQ} f dt, integrated in closed form.

    Uniformization integrates exactly: the time average equals
    sum_k P(Poisson(lam*T) >= k+1) / (lam*T) * P^k f, whose weights sum to
    one. The series is truncated with residual mass below `tail` (checked,
    not assumed), so no quadrature grid is involved at all.
    """
    if horizon <= 0:
        raise ValueError(f"averaging horizon must be positive, got {horizon}")
    f = np.asarray(f, dtype=float)
    p, lam = _uniformized(q)
    mu = lam * horizon
    if mu == 0.0:
        return f.copy()
    kmax = max(int(poisson.isf(min(tail, 1e-13), mu)), 1)
    while True:
        weights = poisson.sf(np.arange(kmax + 1), mu) / mu
        if 1.0 - float(weights.sum()) < tail:
            break
        kmax *= 2
    v = f.copy()
    out = weights[0] * v
    for k in range(1, kmax + 1):
        v = p @ v
        out += weights[k] * v
    return out


def dump_generator(space: StateSpace, q, path):
    """Text dump: one '# state' line per ordinal, then 'row col rate' triplets."""
    coo = q.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sector n={space.n} sites={space.geometry.n_sites} states={space.size}\n")
        for i, state in enumerate(space.states):
            fh.write(f"# state {i} {' '.join(str(c) for c in state)}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def walk_hitting_probability(start: int, t: float, rate: float,
                             tail: float = 1e-10) -> float:
    """P(tau_0 <= t) for a rate-`rate` symmetric walk on Z started at `start`.

    Computed on a truncated interval with absorption at both ends; the
    truncation is enlarged until the mass absorbed at the far end is below
    `tail`, which certifies the answer to that accuracy.
    """
    if start < 0:
        raise ValueError(f"start must be >= 0, got {start}")
    if start == 0:
        return 1.0
    cap = start + int(8.0 * math.sqrt(max(rate * t, 1.0))) + 20
    for _ in range(8):
        size = cap + 1
        rows, cols, vals = [], [], []
        for i in range(1, cap):
            for j in (i - 1, i + 1):
                rows.append(i)
                cols.append(j)
                vals.append(0.5 * rate)
            rows.append(i)
            cols.append(i)
            vals.append(-rate)
        q = sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))
        dist = transient_distribution(q, t, start, tail=min(tail, 1e-12))
        if float(dist[cap]) < tail:
            return float(dist[0])
        cap *= 2
    raise RuntimeError("hitting-probability truncation failed to certify")
