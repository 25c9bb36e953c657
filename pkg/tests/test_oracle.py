import math

import numpy as np
import pytest

from sipsim.core import Geometry, derive_stream, occupation_of
from sipsim.duality import duality_value
from sipsim.dynamics import ProcessKind, SipParams, simulate
from sipsim.measures import marginal_pmf
from sipsim.oracle import (
    StateCapError,
    build_generator,
    cesaro_apply,
    dump_generator,
    exact_dual_expectation,
    semigroup_apply,
    state_space,
    transient_distribution,
    walk_hitting_probability,
)

T3 = SipParams(m=2.0, geometry=Geometry(1, 3))
T5 = SipParams(m=2.0, geometry=Geometry(1, 5))


class TestStateSpace:
    def test_single_particle_count(self):
        assert state_space(1, Geometry(1, 3)).size == 3

    def test_two_particles_stars_and_bars(self):
        assert state_space(2, Geometry(1, 3)).size == 6  # C(4,2)

    def test_counts_match_formula(self):
        for n in range(4):
            space = state_space(n, Geometry(1, 5))
            assert space.size == math.comb(5 + n - 1, n)

    def test_colex_enumeration_delivers_bijective_index(self):
        space = state_space(2, Geometry(1, 3))
        assert space.states[0] == (2, 0, 0)
        assert space.states[-1] == (0, 0, 2)
        assert sorted(space.index.values()) == list(range(space.size))

    def test_cap(self):
        with pytest.raises(StateCapError):
            state_space(5, Geometry(2, 10), cap=1000)


class TestGenerator:
    def test_single_particle_rates_on_t3(self):
        q = build_generator(1, T3)
        dense = q.toarray()
        for i in range(3):
            row = dense[i]
            assert row[i] == pytest.approx(-1.0)
            assert sorted(row[j] for j in range(3) if j != i) == [0.5, 0.5]

    def test_rows_sum_to_zero(self):
        for n in (1, 2, 3):
            q = build_generator(n, T5)
            assert np.max(np.abs(q.sum(axis=1))) < 1e-12

    def test_detailed_balance_against_product_weights(self):
        # w(eta) q(eta, eta') must equal w(eta') q(eta', eta)
        lam, m = 0.4, 2.0
        space = state_space(2, Geometry(1, 5))
        q = build_generator(2, T5).toarray()

        def weight(state):
            return math.prod(marginal_pmf(k, lam, m) for k in state)

        for i, si in enumerate(space.states):
            for j, sj in enumerate(space.states):
                if i < j and (q[i, j] > 0 or q[j, i] > 0):
                    assert weight(si) * q[i, j] == pytest.approx(
                        weight(sj) * q[j, i], rel=1e-12
                    )


class TestSemigroup:
    def test_time_zero_is_identity(self):
        q = build_generator(2, T5)
        f = np.arange(q.shape[0], dtype=float)
        assert np.allclose(semigroup_apply(q, 0.0, f), f)

    def test_preserves_constants(self):
        q = build_generator(3, T5)
        ones = np.ones(q.shape[0])
        for t in (0.5, 2.0, 10.0):
            out = semigroup_apply(q, t, ones)
            assert np.max(np.abs(out - 1.0)) < 1e-10

    def test_preserves_nonnegativity(self):
        q = build_generator(2, T5)
        rng = np.random.default_rng(0)
        f = rng.random(q.shape[0])
        assert semigroup_apply(q, 1.5, f).min() > -1e-13

    def test_distribution_row_sums(self):
        q = build_generator(2, T5)
        dist = transient_distribution(q, 1.0, 4)
        assert dist.min() > -1e-13
        assert abs(dist.sum() - 1.0) < 1e-10

    def test_long_time_matches_conditioned_product_measure(self):
        # the sector-stationary law is the product law conditioned on the
        # particle number, independent of lam
        lam, m = 0.4, 2.0
        space = state_space(2, Geometry(1, 5))
        q = build_generator(2, T5)
        dist = transient_distribution(q, 200.0, 0)
        weights = np.array(
            [math.prod(marginal_pmf(k, lam, m) for k in s) for s in space.states]
        )
        weights /= weights.sum()
        assert np.max(np.abs(dist - weights)) < 1e-8


class TestSelfDuality:
    def test_time_zero_is_plain_duality(self):
        xi = ((0,), (2,))
        eta = occupation_of(((0,), (1,), (3,)))
        left, right = exact_dual_expectation(xi, eta, 0.0, T5)
        d0 = duality_value(xi, eta, 2.0)
        assert left == pytest.approx(d0, abs=1e-12)
        assert right == pytest.approx(d0, abs=1e-12)

    def test_empty_dual_side(self):
        eta = occupation_of(((0,), (1,)))
        for t in (0.0, 1.0):
            left, right = exact_dual_expectation((), eta, t, T5)
            assert left == pytest.approx(1.0, abs=1e-10)
            assert right == pytest.approx(1.0, abs=1e-10)

    def test_identity_on_15_and_35_state_sectors(self):
        xi = ((0,), (2,))
        eta = occupation_of(((0,), (1,), (3,)))
        for t in (0.5, 1.0, 2.0):
            left, right = exact_dual_expectation(xi, eta, t, T5)
            assert abs(left - right) <= 1e-8

    def test_identity_across_parameters(self):
        for m in (0.7, 3.0):
            params = SipParams(m=m, geometry=Geometry(1, 4))
            xi = ((1,), (1,))
            eta = {(0,): 2, (2,): 1}
            left, right = exact_dual_expectation(xi, eta, 0.8, params)
            assert abs(left - right) <= 1e-8


class TestMonteCarloAgreement:
    def test_pair_distribution_matches_uniformization(self):
        # light version of the acceptance check: 20k replicas, 3 sigma per state
        params = T5
        space = state_space(2, params.geometry)
        q = build_generator(2, params)
        start = ((0,), (2,))
        t = 1.0
        target = transient_distribution(q, t, space.index_of_particles(start))
        reps = 20_000
        counts = np.zeros(space.size)
        for r in range(reps):
            traj = simulate(start, ProcessKind.SIP, params, t, derive_stream(21, r))
            counts[space.index_of_particles(traj.final)] += 1
        freq = counts / reps
        for p_hat, p in zip(freq, target):
            se = math.sqrt(p * (1 - p) / reps)
            assert abs(p_hat - p) <= 3 * se + 1e-9


class TestCesaro:
    def test_average_of_constant(self):
        q = build_generator(2, T5)
        ones = np.ones(q.shape[0])
        out = cesaro_apply(q, 5.0, ones)
        assert np.max(np.abs(out - 1.0)) < 1e-8

    def test_converges_to_sector_average(self):
        space = state_space(2, Geometry(1, 5))
        q = build_generator(2, T5)
        f = np.array([duality_value(((0,), (1,)), dict(zip(
            [tuple((i,)) for i in range(5)], s)), 2.0) for s in space.states])
        lam = 0.4
        weights = np.array(
            [math.prod(marginal_pmf(k, lam, 2.0) for k in s) for s in space.states]
        )
        weights /= weights.sum()
        limit = float(weights @ f)
        prev_gap = None
        for horizon in (10.0, 20.0, 40.0):
            out = cesaro_apply(q, horizon, f)
            gap = float(np.max(np.abs(out - limit)))
            if prev_gap is not None:
                assert gap < prev_gap
            prev_gap = gap


class TestDumpAndHitting:
    def test_dump_roundtrip(self, tmp_path):
        space = state_space(1, Geometry(1, 3))
        q = build_generator(1, T3)
        path = tmp_path / "generator.txt"
        dump_generator(space, q, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# sector n=1")
        states = [l for l in lines if l.startswith("# state ")]
        assert len(states) == 3
        triplets = [l.split() for l in lines if not l.startswith("#")]
        dense = q.toarray()
        for i, j, v in triplets:
            assert dense[int(i), int(j)] == pytest.approx(float(v))

    def test_hitting_from_zero(self):
        assert walk_hitting_probability(0, 5.0, 2.0) == 1.0

    def test_hitting_probability_monotone_in_time(self):
        values = [walk_hitting_probability(2, t, 2.0) for t in (0.5, 2.0, 8.0)]
        assert values[0] < values[1] < values[2]
        assert all(0.0 < v < 1.0 for v in values)

    def test_hitting_against_series(self):
        # one jump at rate r by time t, toward 0 with probability 1/2:
        # P(tau_0 <= t) for start 1 is at least P(first jump hits 0)
        r = 2.0
        t = 0.3
        p1 = 0.5 * (1.0 - math.exp(-r * t))
        val = walk_hitting_probability(1, t, r)
        assert val > p1
        assert val < 1.0
