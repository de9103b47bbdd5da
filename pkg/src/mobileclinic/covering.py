"""
Set-cover machinery for ClientCover.

A :class:`CoverInstance` never stores client-by-site sets explicitly. It
keeps the sparse client/location incidence and a boolean ball matrix
(location within R of site) and derives a site's clients on demand with a
sparse product. That keeps full-scale instances (tens of thousands of
clients, thousands of sites) in memory.

Greedy solvers use lazy gain re-evaluation; exact solvers use
branch-and-bound over Python integer bitsets and are meant for small and
medium instances.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_bipartite_matching

from .exceptions import CoverBudgetExhausted, UsageError

logger = logging.getLogger(__name__)

DEFAULT_NODE_BUDGET = 10 ** 6

_BLOCK = 512


def harmonic(n):
    """H_n, the greedy set-cover approximation factor."""
    if n < 1:
        return 0.0
    return float(np.sum(1.0 / np.arange(1, n + 1)))


# -- types -----------------------------------------------------------------

@dataclass(frozen=True)
class Group:
    label: str
    members: frozenset
    requirement: int


@dataclass(frozen=True)
class GroupConstraints:
    """Possibly overlapping demographic groups with coverage requirements."""

    groups: tuple

    def __post_init__(self):
        groups = tuple(
            g if isinstance(g, Group) else Group(g[0], frozenset(g[1]), int(g[2]))
            for g in self.groups
        )
        object.__setattr__(self, "groups", groups)
        if not groups:
            raise UsageError("at least one group is required")
        for g in groups:
            if not 0 <= g.requirement <= len(g.members):
                raise UsageError(
                    f"group {g.label!r}: requirement {g.requirement} outside "
                    f"[0, {len(g.members)}]"
                )

    @property
    def labels(self):
        return tuple(g.label for g in self.groups)

    def matrix(self, elements):
        """Boolean (elements x groups) membership matrix."""
        index = {e: i for i, e in enumerate(elements)}
        out = np.zeros((len(elements), len(self.groups)), dtype=bool)
        for t, g in enumerate(self.groups):
            unknown = [m for m in g.members if m not in index]
            if unknown:
                raise UsageError(f"group {g.label!r} lists unknown clients {sorted(unknown)}")
            out[[index[m] for m in g.members], t] = True
        return out


@dataclass(frozen=True)
class FullCover:
    pass


@dataclass(frozen=True)
class PartialCover:
    target: int


@dataclass(frozen=True)
class CapacitatedCover:
    capacity: int
    target: Optional[int] = None
    multi_copy: bool = False


@dataclass(frozen=True)
class GroupedCover:
    constraints: GroupConstraints


@dataclass(frozen=True)
class CoverResult:
    """
    Output of a cover solver.

    ``chosen`` lists set ids in selection order and repeats a set once per
    extra copy when multi-copy capacitated cover is used.
    """

    chosen: tuple
    covered: frozenset
    feasible: bool
    assignment: Optional[Mapping] = None
    shortfalls: Optional[Mapping[str, int]] = None
    optimal: bool = False

    @property
    def size(self):
        return len(self.chosen)

    @property
    def sites(self):
        return frozenset(self.chosen)


class CoverInstance:
    """
    Set system over a universe of elements at a fixed radius.

    Parameters
    ----------
    elements : sequence
        Universe, in tie-breaking order.
    set_ids : sequence
        Set labels, in tie-breaking order (smallest first).
    incidence : sparse matrix
        (elements x locations) 0/1.
    balls : ndarray of bool
        (locations x sets); ``balls[l, j]`` says location l lies in set j's
        ball. Element e belongs to set j when any of its locations does.
    radius : float
        The radius R the sets were built at.
    """

    def __init__(self, elements, set_ids, incidence, balls, radius=0.0):
        self.elements = tuple(elements)
        self.set_ids = tuple(set_ids)
        self.incidence = sp.csr_matrix(incidence, dtype=np.int32)
        self.balls = np.asarray(balls, dtype=bool)
        self.radius = float(radius)
        if self.incidence.shape[0] != len(self.elements):
            raise UsageError("incidence rows must match the universe")
        if self.balls.shape != (self.incidence.shape[1], len(self.set_ids)):
            raise UsageError("ball matrix shape does not match incidence and sets")
        self.element_index = {e: i for i, e in enumerate(self.elements)}

    @classmethod
    def from_sets(cls, sets, universe=None, radius=0.0):
        """
        Build from an explicit mapping ``set id -> iterable of elements``.

        Elements of ``universe`` missing from every set stay uncoverable.
        """
        members = {j: frozenset(s) for j, s in sets.items()}
        if universe is None:
            universe = frozenset().union(*members.values())
        elements = sorted(universe)
        set_ids = sorted(members)
        index = {e: i for i, e in enumerate(elements)}
        balls = np.zeros((len(elements), len(set_ids)), dtype=bool)
        for j, sid in enumerate(set_ids):
            extra = members[sid] - set(index)
            if extra:
                raise UsageError(f"set {sid!r} holds elements outside the universe: {sorted(extra)}")
            balls[[index[e] for e in members[sid]], j] = True
        incidence = sp.identity(len(elements), dtype=np.int32, format="csr")
        return cls(elements, set_ids, incidence, balls, radius)

    @property
    def n(self):
        return len(self.elements)

    @property
    def m(self):
        return len(self.set_ids)

    @property
    def universe(self):
        return frozenset(self.elements)

    @cached_property
    def sets(self):
        """Materialised ``set id -> frozenset of elements``; small instances only."""
        return {sid: frozenset(self.elements[i] for i in self.members(j))
                for j, sid in enumerate(self.set_ids)}

    def members(self, j):
        """Sorted element indices of set ``j``."""
        hits = self.incidence @ self.balls[:, j].astype(np.int32)
        return np.flatnonzero(hits)

    def _hit_blocks(self, active=None):
        inc = self.incidence if active is None else self.incidence[active]
        for start in range(0, self.m, _BLOCK):
            stop = min(start + _BLOCK, self.m)
            yield start, stop, (inc @ self.balls[:, start:stop].astype(np.int32)) > 0

    def sizes(self, active=None):
        """Number of (active) elements in every set."""
        out = np.zeros(self.m, dtype=np.int64)
        for start, stop, hits in self._hit_blocks(active):
            out[start:stop] = hits.sum(axis=0)
        return out

    def group_counts(self, groups):
        """(sets x groups) count of each group's members in each set."""
        out = np.zeros((self.m, groups.shape[1]), dtype=np.int64)
        for start, stop, hits in self._hit_blocks():
            out[start:stop] = hits.T.astype(np.int64) @ groups.astype(np.int64)
        return out

    def membership(self):
        """Sparse (elements x sets) boolean membership."""
        blocks = [sp.csc_matrix(hits) for _, _, hits in self._hit_blocks()]
        if not blocks:
            return sp.csc_matrix((self.n, 0), dtype=bool)
        return sp.hstack(blocks, format="csc")

    def coverable(self):
        """Boolean mask of elements some set contains."""
        return (self.incidence @ self.balls.any(axis=1).astype(np.int32)) > 0


def build_cover(instance, radius) -> CoverInstance:
    """
    ClientCover at radius R: set j holds every client with a visited
    location within R of site j.
    """
    if radius < 0:
        raise UsageError(f"radius must be nonnegative, got {radius}")
    balls = instance.site_matrix <= radius
    return CoverInstance(instance.client_ids, instance.site_ids,
                         instance.visit_incidence, balls, radius)


# -- greedy ----------------------------------------------------------------

def _lazy_greedy(initial_keys, rescore, commit, satisfied, reuse=False, max_sets=None):
    """
    Pick sets by smallest key until ``satisfied()``.

    Keys are tuples whose first entry is the negated primary gain; gains
    never grow as picks are made, so a popped entry whose refreshed key
    still beats the heap top is the true best. Ties fall to the smaller
    set index.
    """
    heap = [(*key, j) for j, key in enumerate(initial_keys) if key[0] < 0]
    heapq.heapify(heap)
    chosen = []
    while not satisfied():
        if max_sets is not None and len(chosen) >= max_sets:
            break
        pick = None
        while heap:
            j = heapq.heappop(heap)[-1]
            key = rescore(j)
            if key[0] >= 0:
                continue
            entry = (*key, j)
            if not heap or entry <= heap[0]:
                pick = j
                break
            heapq.heappush(heap, entry)
        if pick is None:
            break
        commit(pick)
        chosen.append(pick)
        if reuse:
            key = rescore(pick)
            if key[0] < 0:
                heapq.heappush(heap, (*key, pick))
    return chosen


class _Members:
    def __init__(self, ci):
        self.ci = ci
        self.cache = {}

    def __call__(self, j):
        got = self.cache.get(j)
        if got is None:
            got = self.cache[j] = self.ci.members(j)
        return got


def _greedy_count(ci, target, max_sets=None):
    uncovered = np.ones(ci.n, dtype=bool)
    members = _Members(ci)
    count = [0]

    def rescore(j):
        mem = members(j)
        return (-int(uncovered[mem].sum()),)

    def commit(j):
        mem = members(j)
        newly = mem[uncovered[mem]]
        uncovered[newly] = False
        count[0] += newly.size

    keys = [(-int(s),) for s in ci.sizes()]
    chosen = _lazy_greedy(keys, rescore, commit, lambda: count[0] >= target,
                          max_sets=max_sets)
    covered = frozenset(ci.elements[i] for i in np.flatnonzero(~uncovered))
    return tuple(ci.set_ids[j] for j in chosen), covered


def greedy_cover(ci: CoverInstance, max_sets=None) -> CoverResult:
    """
    Greedy set cover: repeatedly take the set covering most uncovered
    elements (ties: smallest set id).

    When some element lies in no set, the coverable elements are still
    covered and the result is flagged infeasible. ``max_sets`` stops the
    greedy early (result infeasible if the cover is incomplete).
    """
    coverable = int(ci.coverable().sum())
    chosen, covered = _greedy_count(ci, coverable, max_sets)
    return CoverResult(chosen, covered, feasible=len(covered) == ci.n)


def greedy_partial_cover(ci: CoverInstance, target: int, max_sets=None) -> CoverResult:
    """Greedy until at least ``target`` elements are covered."""
    if not 1 <= target <= ci.n:
        raise UsageError(f"target must lie in [1, {ci.n}], got {target}")
    chosen, covered = _greedy_count(ci, target, max_sets)
    return CoverResult(chosen, covered, feasible=len(covered) >= target)


def greedy_capacitated_cover(ci: CoverInstance, capacity: int, target=None,
                             multi_copy=False, max_sets=None) -> CoverResult:
    """
    Greedy capacitated cover.

    Each pick serves at most ``capacity`` still-unassigned elements of the
    set, smallest element first. Sites are used once unless
    ``multi_copy`` lets a site be opened again as another copy.
    """
    if capacity < 1:
        raise UsageError(f"capacity must be positive, got {capacity}")
    target = ci.n if target is None else target
    if not 1 <= target <= ci.n:
        raise UsageError(f"target must lie in [1, {ci.n}], got {target}")
    uncovered = np.ones(ci.n, dtype=bool)
    members = _Members(ci)
    assignment = {}

    def rescore(j):
        mem = members(j)
        return (-min(capacity, int(uncovered[mem].sum())),)

    def commit(j):
        mem = members(j)
        served = mem[uncovered[mem]][:capacity]
        uncovered[served] = False
        for i in served:
            assignment[ci.elements[i]] = ci.set_ids[j]

    keys = [(-min(capacity, int(s)),) for s in ci.sizes()]
    chosen = _lazy_greedy(keys, rescore, commit, lambda: len(assignment) >= target,
                          reuse=multi_copy, max_sets=max_sets)
    return CoverResult(
        tuple(ci.set_ids[j] for j in chosen), frozenset(assignment),
        feasible=len(assignment) >= target, assignment=assignment,
    )


def greedy_group_cover(ci: CoverInstance, gc: GroupConstraints, max_sets=None) -> CoverResult:
    """
    Greedy for overlapping group requirements.

    A set scores the sum over groups of min(new members covered, remaining
    deficit); ties go to more new elements overall, then the smaller id.
    Unmet requirements are reported per group label in ``shortfalls``.
    """
    groups = gc.matrix(ci.elements)
    deficit = np.array([g.requirement for g in gc.groups], dtype=np.int64)
    uncovered = np.ones(ci.n, dtype=bool)
    members = _Members(ci)

    def rescore(j):
        mem = members(j)
        new = mem[uncovered[mem]]
        per_group = groups[new].sum(axis=0)
        return (-int(np.minimum(per_group, deficit).sum()), -int(new.size))

    def commit(j):
        mem = members(j)
        new = mem[uncovered[mem]]
        uncovered[new] = False
        deficit[:] = np.maximum(deficit - groups[new].sum(axis=0), 0)

    counts = ci.group_counts(groups)
    sizes = ci.sizes()
    keys = [(-int(np.minimum(counts[j], deficit).sum()), -int(sizes[j])) for j in range(ci.m)]
    chosen = _lazy_greedy(keys, rescore, commit, lambda: not deficit.any(), max_sets=max_sets)
    covered = frozenset(ci.elements[i] for i in np.flatnonzero(~uncovered))
    shortfalls = {g.label: int(d) for g, d in zip(gc.groups, deficit) if d > 0}
    return CoverResult(tuple(ci.set_ids[j] for j in chosen), covered,
                       feasible=not shortfalls, shortfalls=shortfalls)


def greedy_for_mode(ci: CoverInstance, mode, max_sets=None) -> CoverResult:
    if isinstance(mode, FullCover):
        return greedy_cover(ci, max_sets)
    if isinstance(mode, PartialCover):
        return greedy_partial_cover(ci, mode.target, max_sets)
    if isinstance(mode, CapacitatedCover):
        return greedy_capacitated_cover(ci, mode.capacity, mode.target, mode.multi_copy, max_sets)
    if isinstance(mode, GroupedCover):
        return greedy_group_cover(ci, mode.constraints, max_sets)
    raise UsageError(f"unknown cover mode {mode!r}")


# -- exact -----------------------------------------------------------------

class _OutOfNodes(Exception):
    pass


def _bitmask(indices, n):
    bits = np.zeros(n, dtype=bool)
    bits[indices] = True
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def _bits(mask):
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


class _Search:
    """Node-counted depth-first search holding the incumbent."""

    def __init__(self, budget, bound, incumbent=None):
        self.budget = budget
        self.nodes = 0
        self.best_size = bound
        self.best = incumbent

    def tick(self):
        self.nodes += 1
        if self.nodes > self.budget:
            raise _OutOfNodes

    def offer(self, chosen, state):
        if len(chosen) < self.best_size:
            self.best_size = len(chosen)
            self.best = (list(chosen), state)


def _exact_full(ci, masks, search):
    full = (1 << ci.n) - 1
    sizes = [m.bit_count() for m in masks]
    largest = max(sizes, default=0)
    membership = ci.membership().tocsr()
    degree = np.diff(membership.indptr)
    elem_order = [int(e) for e in np.argsort(degree, kind="stable")]
    rank = sorted(range(ci.m), key=lambda j: (-sizes[j], j))
    position = {j: r for r, j in enumerate(rank)}
    containing = [
        sorted(membership.indices[membership.indptr[e]:membership.indptr[e + 1]].tolist(),
               key=position.__getitem__)
        for e in range(ci.n)
    ]

    def visit(uncovered, chosen):
        search.tick()
        if not uncovered:
            search.offer(chosen, full)
            return
        if len(chosen) + math.ceil(uncovered.bit_count() / largest) >= search.best_size:
            return
        for e in elem_order:
            if uncovered >> e & 1:
                break
        for j in containing[e]:
            chosen.append(j)
            visit(uncovered & ~masks[j], chosen)
            chosen.pop()

    visit(full, [])


def _exact_subsets(order, initial, gain, advance, demand, search, reuse=False):
    def visit(start, state, chosen):
        search.tick()
        need = demand(state)
        if need <= 0:
            search.offer(chosen, state)
            return
        if len(chosen) + 1 >= search.best_size:
            return
        gains = []
        for i in range(start, len(order)):
            g = gain(state, order[i])
            if g > 0:
                gains.append(i)
                gains.append(g)
        if not gains:
            return
        best_gain = max(gains[1::2])
        if len(chosen) + math.ceil(need / best_gain) >= search.best_size:
            return
        for i in gains[0::2]:
            j = order[i]
            chosen.append(j)
            visit(i if reuse else i + 1, advance(state, j), chosen)
            chosen.pop()

    visit(0, initial, [])


def _max_assignment(member_lists, chosen, capacity, n):
    """
    Maximum assignment of elements to chosen sets with ``capacity`` slots
    per copy, as a bipartite matching of elements against slots.
    """
    slot_sets = [j for j in chosen for _ in range(capacity)]
    if not slot_sets:
        return {}
    rows = np.concatenate([member_lists[j] for j in slot_sets]).astype(np.int64)
    cols = np.repeat(np.arange(len(slot_sets)), [len(member_lists[j]) for j in slot_sets])
    graph = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)),
                          shape=(n, len(slot_sets)))
    matched = maximum_bipartite_matching(graph, perm_type="column")
    return {int(e): slot_sets[s] for e, s in enumerate(matched) if s >= 0}


def exact_cover(ci: CoverInstance, mode=None, node_budget=DEFAULT_NODE_BUDGET,
                max_size=None) -> CoverResult:
    """
    Minimum-cardinality cover by branch-and-bound.

    Parameters
    ----------
    mode : FullCover, PartialCover, CapacitatedCover or GroupedCover
        Demand to satisfy; defaults to full cover.
    node_budget : int
        Nodes the search may expand.
    max_size : int, optional
        Only covers of at most this size are of interest. When none
        exists the result is infeasible (and still optimal).

    Returns
    -------
    CoverResult
        ``optimal=True``; infeasible when the demand cannot be met.

    Raises
    ------
    CoverBudgetExhausted
        When the budget runs out first; carries the incumbent if any.
    """
    mode = FullCover() if mode is None else mode
    if node_budget < 1:
        raise UsageError(f"node budget must be positive, got {node_budget}")

    greedy = greedy_for_mode(ci, mode)
    if not greedy.feasible and not isinstance(mode, CapacitatedCover):
        # greedy stops only when no set adds anything, so the demand is unreachable
        return replace(greedy, optimal=True)

    limit = math.inf if max_size is None else max_size
    bound = limit + 1
    incumbent = None
    if greedy.feasible and greedy.size <= limit:
        bound = greedy.size
        incumbent = greedy
    search = _Search(node_budget, bound)
    member_lists = [ci.members(j) for j in range(ci.m)]
    masks = [_bitmask(mem, ci.n) for mem in member_lists]

    try:
        result = _run_exact(ci, mode, masks, member_lists, search)
    except _OutOfNodes:
        best = _result_from_search(ci, mode, search, member_lists) or incumbent
        logger.warning("exact cover stopped after %d nodes (radius %.6f)", search.nodes, ci.radius)
        raise CoverBudgetExhausted(search.nodes, best) from None
    if result is None:
        if incumbent is not None:
            return replace(incumbent, optimal=True)
        return CoverResult((), frozenset(), feasible=False, optimal=True,
                           shortfalls=_all_shortfalls(mode))
    logger.debug("exact cover size %d after %d nodes", result.size, search.nodes)
    return result


def _all_shortfalls(mode):
    if isinstance(mode, GroupedCover):
        return {g.label: g.requirement for g in mode.constraints.groups if g.requirement > 0}
    return None


def _run_exact(ci, mode, masks, member_lists, search):
    if isinstance(mode, FullCover):
        _exact_full(ci, masks, search)
        return _result_from_search(ci, mode, search, member_lists)

    sizes = [m.bit_count() for m in masks]
    order = [j for j in sorted(range(ci.m), key=lambda j: (-sizes[j], j)) if sizes[j] > 0]

    if isinstance(mode, PartialCover):
        target = mode.target
        _exact_subsets(
            order, 0,
            gain=lambda covered, j: (masks[j] & ~covered).bit_count(),
            advance=lambda covered, j: covered | masks[j],
            demand=lambda covered: target - covered.bit_count(),
            search=search,
        )
    elif isinstance(mode, GroupedCover):
        gmasks = [_bitmask([ci.element_index[e] for e in g.members], ci.n)
                  for g in mode.constraints.groups]
        reqs = [g.requirement for g in mode.constraints.groups]

        def deficits(covered):
            return [max(0, p - (covered & gm).bit_count()) for gm, p in zip(gmasks, reqs)]

        def gain(covered, j):
            new = masks[j] & ~covered
            return sum(min((new & gm).bit_count(), d)
                       for gm, d in zip(gmasks, deficits(covered)))

        _exact_subsets(
            order, 0, gain=gain,
            advance=lambda covered, j: covered | masks[j],
            demand=lambda covered: sum(deficits(covered)),
            search=search,
        )
    elif isinstance(mode, CapacitatedCover):
        capacity = mode.capacity
        target = ci.n if mode.target is None else mode.target

        def advance(state, j):
            chosen = state[0] + (j,)
            return chosen, _max_assignment(member_lists, chosen, capacity, ci.n)

        def gain(state, j):
            return len(advance(state, j)[1]) - len(state[1])

        _exact_subsets(
            order, ((), {}), gain=gain, advance=advance,
            demand=lambda state: target - len(state[1]),
            search=search, reuse=mode.multi_copy,
        )
    else:
        raise UsageError(f"unknown cover mode {mode!r}")
    return _result_from_search(ci, mode, search, member_lists)


def _result_from_search(ci, mode, search, member_lists):
    if search.best is None or not isinstance(search.best, tuple):
        return None
    chosen, state = search.best
    set_ids = tuple(ci.set_ids[j] for j in sorted(chosen))
    if isinstance(mode, CapacitatedCover):
        owner = state[1]
        assignment = {ci.elements[e]: ci.set_ids[j] for e, j in sorted(owner.items())}
        return CoverResult(set_ids, frozenset(assignment), True,
                           assignment=assignment, optimal=True)
    covered = frozenset(ci.elements[i] for i in _bits(state))
    shortfalls = {} if isinstance(mode, GroupedCover) else None
    return CoverResult(set_ids, covered, True, shortfalls=shortfalls, optimal=True)
