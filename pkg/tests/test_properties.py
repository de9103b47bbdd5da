"""
Randomised checks of the approximation guarantees against brute-force
oracles, plus hypothesis properties of the metric and cover helpers.

Each trial loop uses a fixed seed so a failure reproduces exactly.
"""

from __future__ import annotations

import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))
from mobileclinic.covering import (
    GroupConstraints,
    build_cover,
    exact_cover,
    greedy_cover,
    greedy_group_cover,
    harmonic,
)
from mobileclinic.experiments import cluster_sweep, kernel_displacement, tradeoff_sweep
from mobileclinic.geo import EARTH_RADIUS_KM, client_distance, coverage_target, haversine_km
from mobileclinic.solvers import SolveParams, clientcover_solve, fpt_solve, most_active

from .factories import (
    brute_force_capacitated_radius,
    brute_force_cover_size,
    brute_force_opt,
    max_assignment_size,
    random_cover,
    random_instance,
)

TRIALS = 500


def _trials(seed, count=TRIALS):
    """Yield (instance, k) pairs from the small random family."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield random_instance(rng), int(rng.integers(1, 4))


def _target(q, n):
    return math.floor(Fraction(str(q)) * n)


class TestClientCoverExact:
    """Exact cover inside the radius search."""

    def test_matches_brute_force(self):
        """
        Validates: exact ClientCover returns the optimal radius with at most k facilities.

        Synthetic Input:
            - 500 random instances (<= 8 clients, <= 8 sites, |S_p| <= 3), k in 1..3

        Prediction:
            radius == brute-force optimum exactly; |F| <= k
        """
        for inst, k in _trials(101):
            # Act
            sol = clientcover_solve(inst, SolveParams(k=k))

            # Assert
            assert sol.radius_km == brute_force_opt(inst, k)
            assert len(sol.facilities) <= k

    @pytest.mark.parametrize("q", [0.5, 0.75, 0.95])
    def test_partial_matches_brute_force(self, q):
        """
        Validates: partial ClientCover serves floor(q*n) clients at the optimal q-radius.

        Synthetic Input:
            - 500 random instances per q in {0.5, 0.75, 0.95}, skipping floor(q*n) = 0

        Prediction:
            at least floor(q*n) covered; radius equals the brute-force q-objective
        """
        for inst, k in _trials(202):
            if _target(q, inst.n) < 1:
                continue

            # Act
            sol = clientcover_solve(inst, SolveParams(k=k, q=q))

            # Assert
            assert len(sol.covered) >= _target(q, inst.n)
            assert sol.radius_km == brute_force_opt(inst, k, q)

    def test_radius_nonincreasing_as_q_drops(self):
        """
        Validates: serving fewer clients never needs a larger radius.

        Synthetic Input:
            - 200 random instances; q = 1, 0.95, 0.75, 0.5 where floor(q*n) >= 1

        Prediction:
            radii form a nonincreasing sequence
        """
        for inst, k in _trials(303, 200):
            # Act
            radii = [clientcover_solve(inst, SolveParams(k=k, q=q)).radius_km
                     for q in (1.0, 0.95, 0.75, 0.5) if _target(q, inst.n) >= 1]

            # Assert
            assert radii == sorted(radii, reverse=True)


class TestTradeoff:
    """Budget against radius across a sweep."""

    def test_exact_radius_nonincreasing_in_k(self):
        """
        Validates: a larger budget never makes exact ClientCover worse.

        Synthetic Input:
            - 200 random instances; tradeoff_sweep over k = 1, 2, 3

        Prediction:
            every cell feasible; objectives form a nonincreasing sequence
        """
        rng = np.random.default_rng(313)
        for _ in range(200):
            # Arrange
            inst = random_instance(rng)

            # Act
            records = tradeoff_sweep(inst, ["clientcover"], range(1, 4))

            # Assert
            assert [r.k for r in records] == [1, 2, 3]
            assert all(r.feasible and r.error is None for r in records)
            values = [r.objective_km for r in records]
            assert values == sorted(values, reverse=True)


class TestFptBound:
    """FPT with every visited location public."""

    def test_within_three_times_optimum(self):
        """
        Validates: OPT <= FPT radius <= 3 * OPT.

        Synthetic Input:
            - 500 random instances; u = 15 covers every visited location

        Prediction:
            bound holds in every trial (relative float slack 1e-9)
        """
        for inst, k in _trials(404):
            # Arrange
            opt = brute_force_opt(inst, k)

            # Act
            sol = fpt_solve(inst, SolveParams(k=k))

            # Assert
            assert opt <= sol.radius_km <= 3 * opt * (1 + 1e-9)
            assert len(sol.facilities) <= k


class TestGreedyBicriteria:
    """ClientCover with the greedy cover solver."""

    def test_radius_and_size(self):
        """
        Validates: greedy ClientCover stays at or below OPT with at most ceil(H_n)*k facilities.

        Synthetic Input:
            - 500 random instances, k in 1..3

        Prediction:
            radius <= OPT; |F| <= ceil(H_n) * k; the next smaller candidate
            radius fails (greedy infeasible or above floor(H_n * k) sets)
        """
        for inst, k in _trials(505):
            # Arrange
            opt = brute_force_opt(inst, k)
            limit = math.floor(harmonic(inst.n) * k + 1e-9)

            # Act
            sol = clientcover_solve(inst, SolveParams(k=k, cover_solver="greedy"))

            # Assert
            assert sol.radius_km <= opt
            assert len(sol.facilities) <= math.ceil(harmonic(inst.n)) * k
            radii = inst.candidate_radii().tolist()
            idx = radii.index(sol.search_radius_km)
            if idx > 0:
                below = greedy_cover(build_cover(inst, radii[idx - 1]))
                assert not below.feasible or below.size > limit

    def test_greedy_set_cover_ratio(self):
        """
        Validates: greedy set cover is within H_n of the optimal cover.

        Synthetic Input:
            - 500 random coverable set systems (universe <= 12, <= 10 sets)

        Prediction:
            |greedy| <= H_n * |exact|; exact_cover agrees with brute force;
            the worst observed ratio stays within H_12
        """
        rng = np.random.default_rng(606)
        worst = 1.0
        for _ in range(TRIALS):
            # Arrange
            ci = random_cover(rng)
            members = [set(ci.members(j).tolist()) for j in range(ci.m)]
            opt = brute_force_cover_size(
                ci.m, lambda combo: len(set().union(*(members[j] for j in combo))) == ci.n
            )

            # Act
            greedy = greedy_cover(ci)
            exact = exact_cover(ci)

            # Assert
            assert greedy.feasible and exact.feasible and exact.optimal
            assert exact.size == opt
            assert greedy.size <= harmonic(ci.n) * opt + 1e-9
            worst = max(worst, greedy.size / opt)
        assert worst <= harmonic(12)


class TestCapacity:
    """Capacitated ClientCover, verified against bipartite matching."""

    def test_assignment_respects_capacity(self):
        """
        Validates: capacitated solutions carry a verifiable assignment, and
        infeasibility is reported exactly when min(k, |sites|) * L < n.

        Synthetic Input:
            - 500 random instances, k in 1..3, L in 1..3

        Prediction:
            feasible: every client assigned, <= L per facility, each within the
            search radius, and scipy matching confirms n assignable;
            infeasible: min(k, |sites|) * L < n
        """
        rng = np.random.default_rng(707)
        for inst, k in _trials(708):
            # Arrange
            capacity = int(rng.integers(1, 4))

            # Act
            sol = clientcover_solve(inst, SolveParams(k=k, capacity=capacity))

            # Assert
            if not sol.feasible:
                assert min(k, len(inst.site_ids)) * capacity < inst.n
                continue
            assert len(sol.assignment) == inst.n
            loads = {}
            for cid, fid in sol.assignment.items():
                assert fid in sol.facilities
                loads[fid] = loads.get(fid, 0) + 1
                distance = client_distance(inst, inst.client(cid), [fid])
                assert distance <= sol.search_radius_km
            assert max(loads.values()) <= capacity
            assert len(sol.facilities) <= k
            ci = build_cover(inst, sol.search_radius_km)
            chosen = [ci.set_ids.index(f) for f in sol.facilities]
            assert max_assignment_size(ci, chosen, capacity) == inst.n

    def test_partial_capacitated_radius_is_optimal(self):
        """
        Validates: with capacities and q < 1 the exact search stops at the
        smallest radius where floor(q*n) clients can be served.

        Synthetic Input:
            - 200 random instances, k in 1..3, L in 1..3, q in {0.5, 0.75}

        Prediction:
            search radius and reported radius equal the brute-force
            capacitated radius; infeasible exactly when none exists;
            exactly floor(q*n) or more clients assigned
        """
        rng = np.random.default_rng(727)
        for inst, k in _trials(728, count=200):
            # Arrange
            capacity = int(rng.integers(1, 4))
            q = float(rng.choice([0.5, 0.75]))
            target = _target(q, inst.n)
            if target < 1:
                continue
            opt = brute_force_capacitated_radius(inst, k, capacity, target)

            # Act
            sol = clientcover_solve(inst, SolveParams(k=k, q=q, capacity=capacity))

            # Assert
            if opt is None:
                assert not sol.feasible
                continue
            assert sol.feasible
            assert sol.search_radius_km == pytest.approx(opt)
            assert sol.radius_km == pytest.approx(opt)
            assert len(sol.assignment) >= target
            assert len(sol.facilities) <= k


class TestGroups:
    """Group requirements with overlapping groups."""

    @staticmethod
    def _groups(rng, client_ids):
        groups = []
        for t in range(int(rng.integers(1, 4))):
            size = int(rng.integers(1, len(client_ids) + 1))
            members = rng.choice(client_ids, size=size, replace=False).tolist()
            groups.append((f"g{t}", members, int(rng.integers(1, size + 1))))
        return GroupConstraints(tuple(groups))

    def test_requirements_met(self):
        """
        Validates: ClientCover in group mode serves every group's requirement.

        Synthetic Input:
            - 150 random instances with 1..3 overlapping groups, requirements >= 1

        Prediction:
            always feasible (any site reaches everyone at the largest radius);
            covered members of each group >= requirement
        """
        rng = np.random.default_rng(808)
        for inst, k in _trials(809, 150):
            # Arrange
            gc = self._groups(rng, list(inst.client_ids))

            # Act
            sol = clientcover_solve(inst, SolveParams(k=k, groups=gc))

            # Assert
            assert sol.feasible
            for g in gc.groups:
                assert len(g.members & sol.covered) >= g.requirement

    def test_shortfalls_exact(self):
        """
        Validates: greedy group cover reports shortfalls exactly when a requirement is unmet.

        Synthetic Input:
            - 150 random set systems (some elements uncoverable), random groups,
              max_sets in 1..3

        Prediction:
            shortfalls == {label: requirement - covered members} over unmet groups;
            feasible exactly when shortfalls is empty
        """
        rng = np.random.default_rng(909)
        for _ in range(150):
            # Arrange
            ci = random_cover(rng, coverable=False)
            gc = self._groups(rng, list(ci.elements))

            # Act
            res = greedy_group_cover(ci, gc, max_sets=int(rng.integers(1, 4)))

            # Assert
            expected = {g.label: g.requirement - len(g.members & res.covered)
                        for g in gc.groups if len(g.members & res.covered) < g.requirement}
            assert res.shortfalls == expected
            assert res.feasible == (not expected)


class TestKernelAndClustering:
    """Budget nesting and clustering identity."""

    def test_most_active_never_displaces(self):
        """
        Validates: MostActive solutions are nested across consecutive budgets.

        Synthetic Input:
            - 500 random instances, k = 1..|sites|

        Prediction:
            displacement 0 for every consecutive pair
        """
        for inst, _ in _trials(1001):
            # Act
            picks = [most_active(inst, k).facilities for k in range(1, len(inst.site_ids) + 1)]

            # Assert
            assert all(kernel_displacement(a, b) == 0 for a, b in zip(picks, picks[1:]))

    def test_zero_radius_reproduces_raw(self):
        """
        Validates: clustering at r = 0 reproduces the raw ClientCover objective exactly.

        Synthetic Input:
            - 200 random instances (co-located points may merge at r = 0)

        Prediction:
            cluster objective at r = 0 equals the raw exact ClientCover radius
        """
        for inst, k in _trials(1101, 200):
            # Arrange
            params = SolveParams(k=k)

            # Act
            record = cluster_sweep(inst, [0.0], params)[0]

            # Assert
            assert record.objective_km == clientcover_solve(inst, params).radius_km


coord = hst.tuples(
    hst.floats(min_value=-89.0, max_value=89.0, allow_nan=False),
    hst.floats(min_value=-179.0, max_value=179.0, allow_nan=False),
)


class TestHypothesisProperties:
    """Property-based checks of the small helpers."""

    @given(coord, coord)
    def test_haversine_symmetric(self, a, b):
        """
        Validates: haversine is symmetric, nonnegative and at most half a circumference.

        Synthetic Input:
            - two arbitrary coordinates

        Prediction:
            d(a, b) == d(b, a); 0 <= d <= pi * R (+1e-3)
        """
        # Act
        ab = float(haversine_km(*a, *b))
        ba = float(haversine_km(*b, *a))

        # Assert
        assert ab == pytest.approx(ba, abs=1e-6)
        assert 0.0 <= ab <= math.pi * EARTH_RADIUS_KM + 1e-3

    @given(coord, coord, coord)
    def test_haversine_triangle(self, a, b, c):
        """
        Validates: haversine satisfies the triangle inequality.

        Synthetic Input:
            - three arbitrary coordinates

        Prediction:
            d(a, c) <= d(a, b) + d(b, c) (+1e-3 km near antipodes)
        """
        # Act / Assert
        assert float(haversine_km(*a, *c)) <= (
            float(haversine_km(*a, *b)) + float(haversine_km(*b, *c)) + 1e-3
        )

    @given(hst.integers(min_value=1, max_value=5000))
    def test_harmonic_bounds(self, n):
        """
        Validates: ln(n + 1) <= H_n <= ln(n) + 1.

        Synthetic Input:
            - n in 1..5000

        Prediction:
            both bounds hold
        """
        # Act
        h = harmonic(n)

        # Assert
        assert math.log(n + 1) <= h + 1e-12
        assert h <= math.log(n) + 1 + 1e-12

    @settings(max_examples=200)
    @given(hst.integers(min_value=1, max_value=100), hst.integers(min_value=1, max_value=100))
    def test_coverage_target_exact(self, num, n):
        """
        Validates: the coverage target is floor(q*n) computed on the decimal q.

        Synthetic Input:
            - q = num / 100, n in 1..100

        Prediction:
            target == (num * n) // 100 when positive
        """
        # Arrange
        q = num / 100
        expected = (num * n) // 100
        if expected < 1:
            return

        # Act / Assert
        assert coverage_target(q, n) == expected
