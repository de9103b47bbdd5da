"""
Experiment harness: coverage curves, budget sweeps, kernel tables,
location clustering and synthetic instance generators.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .covering import CoverInstance, greedy_cover
from .exceptions import MobileClinicError, UsageError
from .geo import (
    Client,
    Instance,
    Location,
    LocationKind,
    Metric,
    ensure_valid,
    nearest_facilities,
    objective,
)
from .solvers import SolveParams, solve

logger = logging.getLogger(__name__)

# Charlottesville, VA and surroundings: (south, west, north, east)
DEFAULT_BBOX = (38.00, -78.55, 38.08, -78.44)

_SAMPLE_CHUNK = 512


def default_percentiles():
    """0.80, 0.81, ..., 1.00."""
    return [round(0.80 + 0.01 * i, 2) for i in range(21)]


def coverage_curve(instance: Instance, facilities, ps: Optional[Sequence[float]] = None):
    """
    Radius needed to serve a fraction p of clients, for each p.

    Returns
    -------
    list of (p, radius)
        The ⌊p·n⌋-th smallest client distance (0 when that is the 0th).
    """
    ps = default_percentiles() if ps is None else list(ps)
    distances, _ = nearest_facilities(instance, facilities)
    ordered = np.sort(distances)
    curve = []
    for p in ps:
        if not 0 <= p <= 1:
            raise UsageError(f"percentile must lie in [0, 1], got {p}")
        idx = math.floor(Fraction(str(p)) * instance.n)
        curve.append((p, 0.0 if idx == 0 else float(ordered[idx - 1])))
    return curve


def percentile_table(instance: Instance, solutions, ps=None) -> pd.DataFrame:
    """Coverage curves of several solutions as a long table."""
    rows = []
    for name, solution in solutions.items():
        if not solution.feasible:
            continue
        for p, radius in coverage_curve(instance, solution.facilities, ps):
            rows.append({"algorithm": name, "p": p, "radius_km": radius})
    return pd.DataFrame(rows, columns=["algorithm", "p", "radius_km"])


@dataclass(frozen=True)
class ExperimentRecord:
    algorithm: str
    k: int
    q: float
    objective_km: float
    runtime_ms: int
    facilities: tuple
    feasible: bool = True
    error: Optional[str] = None

    @property
    def num_facilities(self):
        return len(self.facilities)


def tradeoff_sweep(instance: Instance, algorithms: Iterable[str], k_range: Iterable[int],
                   qs: Iterable[float] = (1.0,), params: Optional[SolveParams] = None):
    """
    One record per (algorithm, k, q).

    A solver that raises is logged and recorded with ``error`` set; the
    sweep carries on. Failed and infeasible cells report a NaN objective.
    """
    base = SolveParams(k=1) if params is None else params
    ks = list(k_range)
    qs = list(qs)
    records = []
    for algorithm in algorithms:
        for q in qs:
            for k in ks:
                start = time.perf_counter()
                try:
                    solution = solve(instance, algorithm, replace(base, k=k, q=q))
                except MobileClinicError as exc:
                    logger.warning("sweep: %s k=%d q=%g failed: %s", algorithm, k, q, exc)
                    records.append(ExperimentRecord(
                        algorithm, k, q, math.nan,
                        int(round((time.perf_counter() - start) * 1000)), (),
                        feasible=False, error=str(exc),
                    ))
                    continue
                elapsed = int(round((time.perf_counter() - start) * 1000))
                value = solution.radius_km if solution.feasible else math.nan
                records.append(ExperimentRecord(algorithm, k, q, value, elapsed,
                                                solution.facilities, solution.feasible))
            logger.info("sweep: %s q=%g done for k=%d..%d", algorithm, q, ks[0], ks[-1])
    return records


def kernel_displacement(previous, current) -> int:
    """Facilities chosen before that are no longer chosen."""
    return len(set(previous) - set(current))


@dataclass(frozen=True)
class KernelRow:
    algorithm: str
    q: float
    k_prev: int
    k: int
    displacement: int


def kernel_table(records: Iterable[ExperimentRecord]):
    """
    Displacement between consecutive budgets, per algorithm and q.

    Cells that failed or were infeasible break the chain.
    """
    by_key = {}
    for rec in records:
        by_key.setdefault((rec.algorithm, rec.q), {})[rec.k] = rec
    rows = []
    for (algorithm, q), cells in by_key.items():
        for k in sorted(cells):
            prev = cells.get(k - 1)
            cur = cells[k]
            if prev is None or not (prev.feasible and cur.feasible):
                continue
            rows.append(KernelRow(algorithm, q, k - 1, k,
                                  kernel_displacement(prev.facilities, cur.facilities)))
    return rows


# -- clustering ------------------------------------------------------------

def cluster_locations(instance: Instance, r: float):
    """
    Merge visited locations lying within ``r`` of a common center.

    Every visited location is a candidate center; greedy set cover picks
    centers until each location is within ``r`` of one.

    Returns
    -------
    centers : frozenset of str
    mapping : dict
        Location id to the first picked center covering it.
    """
    if r < 0:
        raise UsageError(f"cluster radius must be nonnegative, got {r}")
    ids = instance.visited_ids
    balls = np.zeros((len(ids), len(ids)), dtype=bool)
    for start in range(0, len(ids), 1024):
        rows = ids[start:start + 1024]
        balls[start:start + len(rows)] = instance.distance_matrix(rows, ids) <= r
    ci = CoverInstance(ids, ids, sp.identity(len(ids), dtype=np.int32, format="csr"), balls, r)
    chosen = greedy_cover(ci).chosen
    mapping = {}
    for center in chosen:
        for i in ci.members(instance.visited_index[center]):
            mapping.setdefault(ids[i], center)
    logger.debug("clustered %d locations into %d centers at r=%.3f", len(ids), len(chosen), r)
    return frozenset(chosen), mapping


def cluster_instance(instance: Instance, r: float):
    """Instance whose clients visit cluster centers instead of raw locations."""
    centers, mapping = cluster_locations(instance, r)
    clients = [Client(c.id, frozenset(mapping[v] for v in c.visited), c.home)
               for c in instance.clients]
    return instance.with_clients(clients), centers


@dataclass(frozen=True)
class ClusterRecord:
    radius_km: float
    num_centers: int
    objective_km: float
    clustered_objective_km: float
    facilities: tuple
    feasible: bool = True


def cluster_sweep(instance: Instance, radii: Iterable[float], params: SolveParams,
                  algorithm: str = "clientcover"):
    """
    Solve on clustered instances and score the facilities on the raw one.

    ``objective_km`` is the raw-data objective of facilities chosen from
    the clustered data; at r = 0 it equals the unclustered run.
    """
    records = []
    for r in radii:
        clustered, centers = cluster_instance(instance, r)
        solution = solve(clustered, algorithm, params)
        if not solution.feasible:
            records.append(ClusterRecord(r, len(centers), math.nan, math.nan, (), False))
            continue
        raw = objective(instance, solution.facilities, params.q)
        records.append(ClusterRecord(r, len(centers), raw, solution.radius_km,
                                     solution.facilities))
        logger.info("cluster r=%.3f km: %d centers, raw objective %.6f km", r, len(centers), raw)
    return records


# -- generators ------------------------------------------------------------

def _ids(prefix, count):
    width = max(5, len(str(count)))
    return [f"{prefix}{i + 1:0{width}d}" for i in range(count)]


def generate_synthetic(seed: int, n_clients: int, n_activity: int, n_residential: int,
                       visits_per_client=(1, 5), bbox=DEFAULT_BBOX,
                       include_home=False) -> Instance:
    """
    Seeded synthetic mobility population.

    Activity locations get Zipf (s = 1) popularity over a random ranking.
    Each client lives at a uniformly drawn residential location and visits
    between ``visits_per_client[0]`` and ``visits_per_client[1]`` distinct
    activity locations drawn by popularity. Every activity location is a
    candidate site.

    Parameters
    ----------
    include_home : bool
        Also count the home among the client's visited locations.
    """
    if min(n_clients, n_activity, n_residential) < 1:
        raise UsageError("generator counts must be positive")
    lo, hi = visits_per_client
    if not 1 <= lo <= hi:
        raise UsageError(f"visits_per_client must satisfy 1 <= lo <= hi, got {visits_per_client}")
    hi = min(hi, n_activity)
    lo = min(lo, hi)
    south, west, north, east = bbox
    rng = np.random.default_rng(seed)

    act_ids = _ids("a", n_activity)
    res_ids = _ids("r", n_residential)
    act_coords = np.column_stack([rng.uniform(south, north, n_activity),
                                  rng.uniform(west, east, n_activity)])
    res_coords = np.column_stack([rng.uniform(south, north, n_residential),
                                  rng.uniform(west, east, n_residential)])
    locations = [Location(i, LocationKind.ACTIVITY, (float(a), float(b)))
                 for i, (a, b) in zip(act_ids, act_coords)]
    locations += [Location(i, LocationKind.RESIDENTIAL, (float(a), float(b)))
                  for i, (a, b) in zip(res_ids, res_coords)]

    ranks = rng.permutation(n_activity) + 1
    weights = 1.0 / ranks
    log_p = np.log(weights / weights.sum())
    homes = rng.integers(0, n_residential, n_clients)
    sizes = rng.integers(lo, hi + 1, n_clients)

    client_ids = _ids("p", n_clients)
    clients = []
    # weighted sampling without replacement via Gumbel top-k
    for start in range(0, n_clients, _SAMPLE_CHUNK):
        m = min(_SAMPLE_CHUNK, n_clients - start)
        keys = log_p + rng.gumbel(size=(m, n_activity))
        if hi < n_activity:
            top = np.argpartition(-keys, hi - 1, axis=1)[:, :hi]
        else:
            top = np.tile(np.arange(n_activity), (m, 1))
        order = np.argsort(-np.take_along_axis(keys, top, axis=1), axis=1, kind="stable")
        top = np.take_along_axis(top, order, axis=1)
        for row in range(m):
            i = start + row
            visited = {act_ids[j] for j in top[row, :sizes[i]]}
            home = res_ids[homes[i]]
            if include_home:
                visited.add(home)
            clients.append(Client(client_ids[i], frozenset(visited), home))

    instance = Instance(locations, clients, act_ids, Metric.haversine())
    logger.info("generated %r (seed %d)", instance, seed)
    return ensure_valid(instance)


def generate_line_instance(seed: int, gamma: int, k: int, width: Optional[int] = None,
                           gap: Optional[int] = None, max_class=3) -> Instance:
    """
    Colored points on an integer line, used to stress the bicriteria bounds.

    ``k`` blocks of ``width`` consecutive integer points are spaced ``gap``
    apart. Each of the ``gamma`` colors (one client each) owns 1 to
    ``max_class`` points placed in random blocks, and its visited set is
    that color class. Every point is an activity site; distances are
    absolute differences in a matrix metric.
    """
    if gamma < 1 or k < 1:
        raise UsageError("gamma and k must be positive")
    width = gamma if width is None else width
    gap = 10 * width if gap is None else gap
    if width < 1 or gap < width:
        raise UsageError("blocks need width >= 1 and gap >= width")
    rng = np.random.default_rng(seed)
    positions = np.array([b * gap + o for b in range(k) for o in range(width)], dtype=np.float64)
    ids = _ids("x", len(positions))
    locations = [Location(i, LocationKind.ACTIVITY, matrix_index=j) for j, i in enumerate(ids)]
    clients = []
    for c, cid in enumerate(_ids("c", gamma)):
        size = int(rng.integers(1, max_class + 1))
        blocks = rng.integers(0, k, size)
        offsets = rng.integers(0, width, size)
        clients.append(Client(cid, frozenset(ids[b * width + o] for b, o in zip(blocks, offsets))))
    matrix = np.abs(positions[:, None] - positions[None, :])
    return ensure_valid(Instance(locations, clients, ids, Metric.from_matrix(matrix)))
