"""Event-driven continuous-time dynamics of labeled particles.

Two processes share one engine. Under SIP(m), a labeled particle at x jumps
to each neighbor y at rate p(x,y) * (m/2 + eta(y)), where eta counts all
particles of the list and p is the symmetric nearest-neighbor kernel 1/(2d);
summing over the eta(x) particles at a site recovers the occupation-level
rate eta(x) * p(x,y) * (m/2 + eta(y)). Under IRW the inclusion term is
absent and every particle is an independent rate-(m/2) walk.

Simulation is plain Gillespie with full rate recomputation per event. The
particle counts here are desk scale, so correctness and simplicity win over
event-queue cleverness; no rate caching is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import Geometry, ParticleList, RandomStream, occupation_of


class NoEventError(ValueError):
    """Gillespie step invoked with an empty rate list."""


class ProcessKind(str, Enum):
    SIP = "sip"
    IRW = "irw"


@dataclass(frozen=True)
class SipParams:
    m: float
    geometry: Geometry

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"inclusion parameter m must be positive, got {self.m!r}")


def sip_event_rates(particles, params: SipParams):
    """Per-(particle, neighbor) jump rates p(x,y)*(m/2 + eta(y)).

    Returns a list of (particle index, target site, rate) triples, particle
    major, neighbors in geometry order. Rates are strictly positive.
    """
    geo = params.geometry
    half_m = 0.5 * params.m
    p_edge = 1.0 / (2.0 * geo.d)
    occ = occupation_of(particles)
    entries = []
    for i, x in enumerate(particles):
        for y in geo.neighbors(x):
            entries.append((i, y, p_edge * (half_m + occ.get(y, 0))))
    return entries

def irw_event_rates(particles, params: SipParams):
    """Free-walk rates: p(x,y)*m/2 per (particle, neighbor), same ordering."""
    geo = params.geometry
    rate = 0.5 * params.m / (2.0 * geo.d)
    entries = []
    for i, x in enumerate(particles):
        for y in geo.neighbors(x):
            entries.append((i, y, rate))
    return entries


_RATE_FNS = {ProcessKind.SIP: sip_event_rates, ProcessKind.IRW: irw_event_rates}


def gillespie_step(particles, rates, stream: RandomStream):
    """One exact jump: exponential dt at the total rate, then a rate-weighted pick.

    The waiting time is drawn first and the event second, which fixes the
    draw order ties are broken by.
    """
    if not rates:
        raise NoEventError("no events available")
    total = 0.0
    for _, _, r in rates:
        total += r
    dt = stream.exponential(total)
    u = stream.uniform() * total
    acc = 0.0
    chosen = rates[-1]
    for entry in rates:
        acc += entry[2]
        if u < acc:
            chosen = entry
            break
    i, y, _ = chosen
    out = list(particles)
    out[i] = y
    return tuple(out), dt


@dataclass
class Trajectory:
    """Jump-chain record: strictly increasing event times with snapshots."""

    times: list
    states: list
    horizon: float

    @property
    def final(self) -> ParticleList:
        return self.states[-1]


def simulate(xi0, kind: ProcessKind, params: SipParams, horizon: float,
             stream: RandomStream, record: str = "final") -> Trajectory:
    """Exact jump-chain simulation of `kind` up to the time horizon.

    record="full" keeps every event (for coupling diagnostics); "final"
    keeps only the endpoint for memory-bounded long runs.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if record not in ("final", "full"):
        raise ValueError(f"record must be 'final' or 'full', got {record!r}")
    rate_fn = _RATE_FNS[ProcessKind(kind)]
    full = record == "full"
    state = tuple(xi0)
    times = [0.0]
    states = [state]
    t = 0.0
    while state:
        rates = rate_fn(state, params)
        state_next, dt = gillespie_step(state, rates, stream)
        if t + dt > horizon:
            break
        t += dt
        state = state_next
        if full:
            times.append(t)
            states.append(state)
    if not full:
        # single entry: the state holding at the horizon, stamped with the
        # time it was entered
        times = [t]
        states = [state]
    return Trajectory(times=times, states=states, horizon=horizon)


def sample_at_times(xi0, kind: ProcessKind, params: SipParams, times,
                    stream: RandomStream):
    """States observed at each requested time (ascending), one per entry.

    A single trajectory is evolved to max(times); snapshots at the grid
    points are the pre-jump states, matching right-continuous paths up to a
    measure-zero set of exact ties.
    """
    grid = list(times)
    if any(t < 0 for t in grid) or any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("times must be nonnegative and ascending")
    rate_fn = _RATE_FNS[ProcessKind(kind)]
    state = tuple(xi0)
    out = []
    if not state:
        return [state for _ in grid]
    t = 0.0
    gi = 0
    n_grid = len(grid)
    while gi < n_grid:
        rates = rate_fn(state, params)
        state_next, dt = gillespie_step(state, rates, stream)
        t_next = t + dt
        while gi < n_grid and grid[gi] < t_next:
            out.append(state)
            gi += 1
        t = t_next
        state = state_next
    return out
