"""
Top-level placement algorithms.

``fpt``
    Guess how the optimum meets the clients on a few public locations,
    then solve k-supplier on the guess.
``clientcover``
    Binary search over candidate radii, solving a set cover per probe.
``mostactive`` / ``homecenters``
    Baselines: most visited sites, and k-supplier on home locations.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .covering import (
    DEFAULT_NODE_BUDGET,
    CapacitatedCover,
    CoverInstance,
    FullCover,
    GroupConstraints,
    GroupedCover,
    PartialCover,
    build_cover,
    exact_cover,
    greedy_cover,
    greedy_for_mode,
    harmonic,
)
from .exceptions import CoverBudgetExhausted, UsageError
from .geo import (
    Instance,
    coverage_target,
    infeasible_solution,
    make_solution,
    objective,
)
from .ksupplier import SupplierInstance, exact_supplier, hs_approx

logger = logging.getLogger(__name__)


class CoverSolver(str, enum.Enum):
    EXACT = "exact"
    GREEDY = "greedy"


class SupplierSolver(str, enum.Enum):
    HS = "hs"
    EXACT = "exact"


@dataclass(frozen=True)
class SolveParams:
    """
    Knobs shared by every algorithm.

    Parameters
    ----------
    k : int
        Facility budget.
    q : float
        Fraction of clients that must be served; 1 means all.
    capacity : int, optional
        Clients one facility may serve (ClientCover only).
    groups : GroupConstraints, optional
        Per-group coverage requirements (ClientCover only).
    u : int
        Number of public locations FPT guesses over.
    cover_solver : {"exact", "greedy"}
        ``exact`` tries branch-and-bound and falls back to greedy when the
        node budget runs out.
    supplier : {"hs", "exact"}
        k-supplier routine used inside FPT.
    multi_copy : bool
        Let capacitated cover open a site more than once.
    node_budget : int
        Branch-and-bound nodes per cover probe.
    max_u : int
        Largest u FPT will enumerate 2^u subsets for.
    """

    k: int
    q: float = 1.0
    capacity: Optional[int] = None
    groups: Optional[GroupConstraints] = None
    u: int = 15
    cover_solver: CoverSolver = CoverSolver.EXACT
    supplier: SupplierSolver = SupplierSolver.HS
    multi_copy: bool = False
    node_budget: int = DEFAULT_NODE_BUDGET
    max_u: int = 25

    def __post_init__(self):
        try:
            object.__setattr__(self, "cover_solver", CoverSolver(self.cover_solver))
            object.__setattr__(self, "supplier", SupplierSolver(self.supplier))
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def check(self, instance: Instance) -> int:
        """
        Validate against ``instance``.

        Returns
        -------
        int
            The coverage target ⌊q·n⌋.
        """
        if self.k < 1:
            raise UsageError(f"k must be positive, got {self.k}")
        if self.u < 1:
            raise UsageError(f"u must be positive, got {self.u}")
        if self.capacity is not None and self.capacity < 1:
            raise UsageError(f"capacity must be positive, got {self.capacity}")
        if self.node_budget < 1:
            raise UsageError(f"node budget must be positive, got {self.node_budget}")
        if self.capacity is not None and self.groups is not None:
            raise UsageError("capacity and groups cannot be combined")
        if self.groups is not None and self.q != 1:
            raise UsageError("group requirements replace q; leave q at 1")
        return coverage_target(self.q, instance.n)

    def cover_mode(self, instance: Instance):
        target = coverage_target(self.q, instance.n)
        if self.capacity is not None:
            return CapacitatedCover(self.capacity, target, self.multi_copy)
        if self.groups is not None:
            return GroupedCover(self.groups)
        if target < instance.n:
            return PartialCover(target)
        return FullCover()


# -- FPT -------------------------------------------------------------------

def select_public_locations(instance: Instance, u: int) -> frozenset:
    """
    Greedy maximum coverage: the u visited locations touching the most
    clients. Ties go to the smallest location id; once every client is
    touched the remaining slots are filled in id order.
    """
    if u < 1:
        raise UsageError(f"u must be positive, got {u}")
    visited = instance.visited_ids
    if u >= len(visited):
        return frozenset(visited)
    ci = CoverInstance(instance.client_ids, visited, instance.visit_incidence,
                       np.eye(len(visited), dtype=bool))
    picked = list(greedy_cover(ci, max_sets=u).chosen)
    for loc in visited:
        if len(picked) >= u:
            break
        if loc not in picked:
            picked.append(loc)
    return frozenset(picked)


def _client_masks(instance, public):
    bit = {loc: b for b, loc in enumerate(public)}
    masks = np.zeros(instance.n, dtype=np.int64)
    for i, c in enumerate(instance.clients):
        for v in c.visited:
            if v in bit:
                masks[i] |= 1 << bit[v]
    return masks


def fpt_solve(instance: Instance, params: SolveParams):
    """
    Enumerate hitting sets over the public locations.

    Clients touching none of the public locations are left unconstrained
    and are counted against the 1 - q allowance. For every subset A that
    hits enough clients, k-supplier with A as demand points proposes a
    facility set; the one with the smallest objective (then smallest ids)
    wins. With every visited location public and q = 1 the radius is
    within 3x of optimal.

    Raises
    ------
    UsageError
        When capacity or groups are requested or u exceeds ``max_u``.
    """
    target = params.check(instance)
    if params.capacity is not None or params.groups is not None:
        raise UsageError("fpt supports neither capacities nor groups; use clientcover")
    u = params.u
    if u > len(instance.visited_ids):
        logger.info("u=%d exceeds %d visited locations; clamped", u, len(instance.visited_ids))
        u = len(instance.visited_ids)
    if u > params.max_u:
        raise UsageError(f"u={u} exceeds the enumeration guard max_u={params.max_u}")

    public = tuple(sorted(select_public_locations(instance, u)))
    values, counts = np.unique(_client_masks(instance, public), return_counts=True)
    in_scope = values != 0
    full = params.q == 1
    reachable = int(counts[in_scope].sum())
    if not full and reachable < target:
        return infeasible_solution(
            instance, algorithm="fpt", k=params.k, q=params.q,
            reason=f"only {reachable} clients touch the public locations, {target} required",
        )

    supplier = exact_supplier if params.supplier is SupplierSolver.EXACT else hs_approx
    scored = {}
    best = None
    feasible_found = []
    examined = 0
    for size in range(1, u + 1):
        minimal = np.array(feasible_found, dtype=np.int64)
        for combo in itertools.combinations(range(u), size):
            mask = sum(1 << b for b in combo)
            # a superset of a hitting set can only re-derive its guarantee
            if full and minimal.size and np.any((minimal & mask) == minimal):
                continue
            hit = (values & mask) != 0
            if full:
                if not hit[in_scope].all():
                    continue
                feasible_found.append(mask)
            elif int(counts[hit].sum()) < target:
                continue
            examined += 1
            points = [public[b] for b in combo]
            facilities, _ = supplier(SupplierInstance(points, instance.site_ids, params.k, instance))
            key = tuple(sorted(facilities))
            if key not in scored:
                scored[key] = objective(instance, key, params.q)
            candidate = (scored[key], key, mask)
            if best is None or candidate[:2] < best[:2]:
                best = candidate
        logger.debug("fpt: %d hitting sets evaluated up to size %d", examined, size)

    if best is None:
        return infeasible_solution(instance, algorithm="fpt", k=params.k, q=params.q,
                                   reason="no subset of public locations hits enough clients")
    radius, facilities, mask = best
    hitting = tuple(public[b] for b in range(u) if mask >> b & 1)
    return make_solution(
        instance, facilities, algorithm="fpt", k=params.k, q=params.q,
        details={"u": u, "public_locations": public, "hitting_set": hitting,
                 "subsets_evaluated": examined},
    )


# -- ClientCover -----------------------------------------------------------

def _alpha(params, mode, instance):
    if params.cover_solver is CoverSolver.EXACT:
        return 1.0
    if isinstance(mode, PartialCover):
        return harmonic(mode.target)
    if isinstance(mode, GroupedCover):
        return harmonic(instance.n) + math.log(len(mode.constraints.groups))
    return harmonic(instance.n)


def _floor_radius(instance, mode):
    """Largest radius at which some required client still has no site in range."""
    if isinstance(mode, GroupedCover):
        return 0.0
    per_location = instance.site_matrix.min(axis=1)
    inc = instance.visit_incidence
    # every client visits at least one location, so no segment is empty
    per_client = np.minimum.reduceat(per_location[inc.indices], inc.indptr[:-1])
    target = getattr(mode, "target", None)
    if target is not None and target < instance.n:
        return float(np.partition(per_client, target - 1)[target - 1])
    return float(per_client.max())


def _heuristic_radius(instance, params, mode):
    """Objective of a k-facility solution; a cover of size k exists there."""
    if not isinstance(mode, (FullCover, PartialCover)):
        return None
    si = SupplierInstance(instance.visited_ids, instance.site_ids, params.k, instance)
    facilities, _ = hs_approx(si)
    return objective(instance, facilities, params.q)


class _Probe:
    """Cover test at one radius, remembering accepted covers."""

    def __init__(self, instance, params, mode, limit):
        self.instance = instance
        self.params = params
        self.mode = mode
        self.limit = limit
        self.accepted = {}
        self.fallbacks = 0

    def __call__(self, radius):
        radius = float(radius)
        if radius in self.accepted:
            return True
        ci = build_cover(self.instance, radius)
        greedy = greedy_for_mode(ci, self.mode)
        result, fallback = None, False
        if self.params.cover_solver is CoverSolver.GREEDY:
            if greedy.feasible and greedy.size <= self.limit:
                result = greedy
        elif greedy.feasible and greedy.size <= self.params.k:
            result = greedy
        elif greedy.feasible or isinstance(self.mode, CapacitatedCover):
            try:
                exact = exact_cover(ci, self.mode, self.params.node_budget, max_size=self.params.k)
                if exact.feasible:
                    result = exact
            except CoverBudgetExhausted as exc:
                self.fallbacks += 1
                fallback = True
                bound = math.floor(_alpha(replace(self.params, cover_solver=CoverSolver.GREEDY),
                                          self.mode, self.instance) * self.params.k)
                logger.warning("radius %.6f: exact cover gave up after %d nodes, "
                               "greedy fallback with %d sets allowed", radius, exc.nodes, bound)
                if greedy.feasible and greedy.size <= bound:
                    result = greedy
        logger.debug("probe radius %.6f: %s", radius,
                     "accepted" if result is not None else "rejected")
        if result is None:
            return False
        self.accepted[radius] = (result, fallback)
        return True


def clientcover_solve(instance: Instance, params: SolveParams):
    """
    Smallest candidate radius whose cover fits the budget.

    Candidates are the distinct site to visited-location distances (plus
    0). With the exact cover solver and no fallback, at most k facilities
    are opened and the radius is optimal; with greedy, at most α·k are
    opened for α = H_n (H_⌊qn⌋ for partial cover) and the radius is at
    most optimal.

    Returns
    -------
    Solution
        ``search_radius_km`` holds the radius the search stopped at;
        ``details`` records alpha, cover size and greedy fallbacks.
    """
    target = params.check(instance)
    mode = params.cover_mode(instance)
    alpha = _alpha(params, mode, instance)
    limit = math.floor(alpha * params.k + 1e-9)

    if isinstance(mode, GroupedCover) and not any(g.requirement for g in mode.constraints.groups):
        mode.constraints.matrix(instance.client_ids)
        logger.info("clientcover: no group requires coverage; opening %s", instance.site_ids[0])
        return make_solution(
            instance, instance.site_ids[:1], algorithm="clientcover", k=params.k, q=params.q,
            search_radius=0.0,
            details={"alpha": alpha, "cover_size": 0, "greedy_fallback": False,
                     "fallback_probes": 0, "optimal_cover": True},
        )

    if isinstance(mode, CapacitatedCover) and not mode.multi_copy:
        if min(limit, len(instance.site_ids)) * mode.capacity < target:
            return infeasible_solution(
                instance, algorithm="clientcover", k=params.k, q=params.q,
                reason=f"{limit} facilities of capacity {mode.capacity} cannot serve {target} clients",
            )
    elif isinstance(mode, CapacitatedCover) and limit * mode.capacity < target:
        return infeasible_solution(
            instance, algorithm="clientcover", k=params.k, q=params.q,
            reason=f"{limit} facilities of capacity {mode.capacity} cannot serve {target} clients",
        )

    radii = instance.candidate_radii()
    probe = _Probe(instance, params, mode, limit)
    lo = int(np.searchsorted(radii, _floor_radius(instance, mode), side="left"))
    hi = len(radii) - 1
    heuristic = _heuristic_radius(instance, params, mode)
    if heuristic is not None:
        guess = int(np.searchsorted(radii, heuristic, side="left"))
        if lo <= guess < hi and probe(radii[guess]):
            hi = guess
    if hi == len(radii) - 1 and not probe(radii[hi]):
        sol = infeasible_solution(instance, algorithm="clientcover", k=params.k, q=params.q,
                                  reason="no cover fits the budget even at the largest radius")
        if isinstance(mode, GroupedCover):
            shortfalls = greedy_for_mode(build_cover(instance, radii[hi]), mode).shortfalls
            sol = replace(sol, details={**sol.details, "shortfalls": shortfalls})
        return sol
    logger.info("clientcover: bracket [%.6f, %.6f] over %d candidates",
                radii[lo], radii[hi], len(radii))

    if lo < hi and probe(radii[lo]):
        hi = lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(radii[mid]):
            hi = mid
        else:
            lo = mid

    radius = float(radii[hi])
    result, fallback = probe.accepted[radius]
    details = {"alpha": alpha, "cover_size": result.size, "greedy_fallback": fallback,
               "fallback_probes": probe.fallbacks, "optimal_cover": result.optimal}
    if isinstance(mode, CapacitatedCover):
        copies = {}
        for sid in result.chosen:
            copies[sid] = copies.get(sid, 0) + 1
        details["copies"] = copies
        return make_solution(instance, result.sites, algorithm="clientcover", k=params.k,
                             q=params.q, assignment=result.assignment,
                             search_radius=radius, details=details)
    return make_solution(instance, result.sites, algorithm="clientcover", k=params.k,
                         q=params.q, covered_radius=radius, search_radius=radius,
                         details=details)


# -- baselines -------------------------------------------------------------

def most_active(instance: Instance, k: int, q=1.0):
    """Open the k sites visited by the most distinct clients (ties: id)."""
    if k < 1:
        raise UsageError(f"k must be positive, got {k}")
    visitors = np.asarray(instance.visit_incidence.sum(axis=0)).ravel()
    counts = {s: int(visitors[instance.visited_index[s]]) if s in instance.visited_index else 0
              for s in instance.site_ids}
    ranked = sorted(instance.site_ids, key=lambda s: (-counts[s], s))
    return make_solution(instance, ranked[:k], algorithm="mostactive", k=k, q=q,
                         details={"visitors": {s: counts[s] for s in ranked[:k]}})


def home_centers(instance: Instance, k: int, q=1.0):
    """
    k-supplier on client homes, reported under the mobility objective.

    Raises
    ------
    UsageError
        If any client lacks a home.
    """
    if k < 1:
        raise UsageError(f"k must be positive, got {k}")
    missing = [c.id for c in instance.clients if c.home is None]
    if missing:
        raise UsageError(f"homecenters needs a home for every client; missing for {missing[:5]}")
    homes = {c.home for c in instance.clients}
    facilities, home_radius = hs_approx(SupplierInstance(homes, instance.site_ids, k, instance))
    return make_solution(instance, facilities, algorithm="homecenters", k=k, q=q,
                         details={"home_radius_km": home_radius})


ALGORITHMS = {
    "fpt": fpt_solve,
    "clientcover": clientcover_solve,
    "mostactive": lambda instance, params: most_active(instance, params.k, params.q),
    "homecenters": lambda instance, params: home_centers(instance, params.k, params.q),
}


def solve(instance: Instance, algorithm: str, params: SolveParams):
    """Run ``algorithm`` by name and log one summary line."""
    try:
        run = ALGORITHMS[algorithm]
    except KeyError:
        raise UsageError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}") from None
    if algorithm in ("mostactive", "homecenters"):
        if params.capacity is not None or params.groups is not None:
            raise UsageError(f"{algorithm} supports neither capacities nor groups")
        params.check(instance)
    start = time.perf_counter()
    solution = run(instance, params)
    elapsed = time.perf_counter() - start
    if solution.feasible:
        logger.info("%s k=%d q=%g: radius %.6f km with %d facilities in %.3f s",
                    algorithm, params.k, params.q, solution.radius_km,
                    len(solution.facilities), elapsed)
    else:
        logger.info("%s k=%d q=%g: infeasible (%s)", algorithm, params.k, params.q,
                    solution.details.get("reason", ""))
    return solution
