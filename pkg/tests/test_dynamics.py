import math

import numpy as np
import pytest

from sipsim.core import Geometry, derive_stream
from sipsim.dynamics import (
    NoEventError,
    ProcessKind,
    SipParams,
    gillespie_step,
    irw_event_rates,
    sample_at_times,
    simulate,
    sip_event_rates,
)

P1 = SipParams(m=2.0, geometry=Geometry(1))


def total_rate(entries):
    return sum(r for _, _, r in entries)


class TestRates:
    def test_single_free_particle(self):
        entries = sip_event_rates(((0,),), P1)
        assert sorted((y, r) for _, y, r in entries) == [((-1,), 0.5), ((1,), 0.5)]
        assert total_rate(entries) == pytest.approx(1.0)

    def test_inclusion_term_on_occupied_neighbor(self):
        entries = sip_event_rates(((0,), (1,)), P1)
        by_move = {(i, y): r for i, y, r in entries}
        assert by_move[(0, (1,))] == pytest.approx(1.0)  # (1/2)(1+1)
        assert by_move[(0, (-1,))] == pytest.approx(0.5)
        assert by_move[(1, (0,))] == pytest.approx(1.0)
        assert by_move[(1, (2,))] == pytest.approx(0.5)

    def test_empty_list(self):
        assert sip_event_rates((), P1) == []
        assert irw_event_rates((), P1) == []

    def test_irw_total_rate_is_n_m_half(self):
        assert total_rate(irw_event_rates(((0,),), P1)) == pytest.approx(1.0)
        p = SipParams(m=4.0, geometry=Geometry(2))
        entries = irw_event_rates(((0, 0), (5, 5), (9, 0)), p)
        assert total_rate(entries) == pytest.approx(6.0)  # n*m/2

    def test_irw_rates_ignore_other_particles(self):
        entries = irw_event_rates(((0,), (1,)), P1)
        for i in (0, 1):
            per_particle = sum(r for j, _, r in entries if j == i)
            assert per_particle == pytest.approx(1.0)  # m/2 each

    def test_sip_equals_irw_for_one_particle(self):
        assert sip_event_rates(((3,),), P1) == irw_event_rates(((3,),), P1)

    def test_sip_minus_inclusion_equals_irw(self):
        # zeroing the occupancy term entrywise must recover the free rates
        rng = np.random.default_rng(3)
        from sipsim.core import occupation_of

        for _ in range(50):
            particles = tuple((int(x),) for x in rng.integers(-10, 10, size=4))
            occ = occupation_of(particles)
            sip = sip_event_rates(particles, P1)
            irw = irw_event_rates(particles, P1)
            assert len(sip) == len(irw)
            for (i, y, rs), (j, z, rf) in zip(sip, irw):
                assert (i, y) == (j, z)
                assert rs - 0.5 * occ.get(y, 0) == pytest.approx(rf)

    def test_occupation_level_rates_match_generator_form(self):
        # summing labeled rates at a site recovers eta(x) p(x,y) (m/2 + eta(y))
        from sipsim.core import occupation_of

        particles = ((0,), (0,), (1,), (3,))
        occ = occupation_of(particles)
        entries = sip_event_rates(particles, P1)
        lumped = {}
        for i, y, r in entries:
            x = particles[i]
            lumped[(x, y)] = lumped.get((x, y), 0.0) + r
        for (x, y), r in lumped.items():
            assert r == pytest.approx(0.5 * occ[x] * (1.0 + occ.get(y, 0)))

    def test_m_must_be_positive(self):
        with pytest.raises(ValueError):
            SipParams(m=0.0, geometry=Geometry(1))


class TestGillespie:
    def test_single_event_fires(self):
        s = derive_stream(0, 0)
        state, dt = gillespie_step(((0,),), [(0, (1,), 2.0)], s)
        assert state == ((1,),)
        assert dt > 0

    def test_empty_rates(self):
        with pytest.raises(NoEventError):
            gillespie_step((), [], derive_stream(0, 0))

    def test_selection_frequencies(self):
        s = derive_stream(5, 0)
        n = 100_000
        rates = [(0, (-1,), 1.0), (0, (1,), 3.0)]
        hits = 0
        for _ in range(n):
            state, _ = gillespie_step(((0,),), rates, s)
            hits += state == ((1,),)
        p = hits / n
        assert abs(p - 0.75) < 3 * math.sqrt(0.75 * 0.25 / n)

    def test_waiting_time_mean(self):
        s = derive_stream(6, 0)
        n = 100_000
        rates = [(0, (-1,), 1.0), (0, (1,), 1.0)]
        mean_dt = np.mean([gillespie_step(((0,),), rates, s)[1] for _ in range(n)])
        assert abs(mean_dt - 0.5) < 3 * 0.5 / math.sqrt(n)


class TestSimulate:
    def test_zero_horizon(self):
        traj = simulate(((0,), (4,)), ProcessKind.SIP, P1, 0.0, derive_stream(1, 0))
        assert traj.final == ((0,), (4,))

    def test_negative_horizon(self):
        with pytest.raises(ValueError):
            simulate(((0,),), ProcessKind.SIP, P1, -1.0, derive_stream(1, 0))

    def test_particle_count_conserved_and_steps_are_unit_moves(self):
        traj = simulate(((0,), (1,), (5,)), ProcessKind.SIP, P1, 5.0,
                        derive_stream(2, 0), record="full")
        geo = P1.geometry
        assert all(len(s) == 3 for s in traj.states)
        assert all(b > a for a, b in zip(traj.times, traj.times[1:]))
        for prev, cur in zip(traj.states, traj.states[1:]):
            moved = [(p, c) for p, c in zip(prev, cur) if p != c]
            assert len(moved) == 1
            assert geo.l1_distance(*moved[0]) == 1

    def test_empty_configuration(self):
        traj = simulate((), ProcessKind.IRW, P1, 3.0, derive_stream(1, 0))
        assert traj.final == ()

    def test_shared_stream_sip_and_irw_agree_for_one_particle(self):
        # with a single particle there is no inclusion partner, so the two
        # processes consume the stream identically
        a = simulate(((0,),), ProcessKind.SIP, P1, 50.0, derive_stream(3, 1), record="full")
        b = simulate(((0,),), ProcessKind.IRW, P1, 50.0, derive_stream(3, 1), record="full")
        assert a.states == b.states
        assert a.times == b.times

    def test_irw_mean_displacement_is_zero(self):
        reps = 2000
        t = 4.0
        disp = []
        for r in range(reps):
            traj = simulate(((0,),), ProcessKind.IRW, P1, t, derive_stream(7, r))
            disp.append(traj.final[0][0])
        se = np.std(disp, ddof=1) / math.sqrt(reps)
        assert abs(np.mean(disp)) < 3 * se

    @pytest.mark.parametrize("m,d", [(2.0, 1), (4.0, 2)])
    def test_single_particle_variance_rate(self, m, d):
        # per-coordinate variance of a free particle is (m/2) t / d
        params = SipParams(m=m, geometry=Geometry(d))
        t = 4.0
        reps = 4000
        target = 0.5 * m * t / d
        coords = []
        for r in range(reps):
            traj = simulate(((0,) * d,), ProcessKind.IRW, params, t, derive_stream(8, r))
            coords.append(traj.final[0][0])
        var = np.var(coords, ddof=1)
        se = var * math.sqrt(2.0 / (reps - 1))
        assert abs(var - target) < 3 * se

    def test_sample_at_times_matches_simulate_on_shared_stream(self):
        grid = [0.5, 1.0, 2.0]
        states = sample_at_times(((0,), (1,)), ProcessKind.SIP, P1, grid, derive_stream(9, 0))
        assert len(states) == 3
        final = simulate(((0,), (1,)), ProcessKind.SIP, P1, 2.0, derive_stream(9, 0)).final
        assert states[-1] == final

    def test_sample_at_times_validates_grid(self):
        with pytest.raises(ValueError):
            sample_at_times(((0,),), ProcessKind.SIP, P1, [2.0, 1.0], derive_stream(0, 0))
