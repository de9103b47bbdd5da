"""
Domain model: locations, clients, metrics, instances and solutions.

All solvers read distances through :class:`Instance`, which caches the
visited-location by site matrix once. Candidate radii and objectives are
taken from that single matrix so exact float comparisons between them are
meaningful.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from operator import attrgetter
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import InstanceError, UsageError

logger = logging.getLogger(__name__)

# IUGG mean Earth radius
EARTH_RADIUS_KM = 6371.0088

_ROW_CHUNK = 1024
_TRIANGLE_SAMPLES = 1000
_TRIANGLE_TOL = 1e-9


class LocationKind(str, enum.Enum):
    ACTIVITY = "activity"
    RESIDENTIAL = "residential"


class MetricMode(str, enum.Enum):
    HAVERSINE = "haversine"
    MATRIX = "matrix"


@dataclass(frozen=True)
class Location:
    """
    A place clients visit or facilities may open at.

    Exactly one of ``coords`` (latitude, longitude in degrees) or
    ``matrix_index`` is set, matching the instance's metric mode.
    """

    id: str
    kind: LocationKind = LocationKind.ACTIVITY
    coords: Optional[tuple[float, float]] = None
    matrix_index: Optional[int] = None

    @property
    def mode(self):
        if self.coords is not None and self.matrix_index is None:
            return MetricMode.HAVERSINE
        if self.matrix_index is not None and self.coords is None:
            return MetricMode.MATRIX
        return None


@dataclass(frozen=True)
class Client:
    """A person described by the set of locations they visit."""

    id: str
    visited: frozenset[str]
    home: Optional[str] = None

    def __post_init__(self):
        # duplicates collapse here
        object.__setattr__(self, "visited", frozenset(self.visited))


def haversine_km(lat1, lon1, lat2, lon2, radius_km=EARTH_RADIUS_KM):
    """
    Great-circle distance on a sphere, vectorised over numpy arrays.

    Parameters
    ----------
    lat1, lon1, lat2, lon2 : float or array_like
        Coordinates in decimal degrees; broadcast against each other.
    radius_km : float, optional
        Sphere radius.

    Returns
    -------
    float or ndarray
        Distance in kilometres.
    """
    lat1 = np.radians(lat1)
    lat2 = np.radians(lat2)
    dlat = lat2 - lat1
    dlon = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * radius_km * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


class Metric:
    """
    Distance function over locations.

    Build with :meth:`haversine` for geodetic coordinates or
    :meth:`from_matrix` for an explicit symmetric table (km).
    """

    def __init__(self, mode, radius_km=EARTH_RADIUS_KM, matrix=None):
        self.mode = MetricMode(mode)
        self.radius_km = float(radius_km)
        self.matrix = None
        if matrix is not None:
            self.matrix = np.array(matrix, dtype=np.float64)
            self.matrix.setflags(write=False)

    @classmethod
    def haversine(cls, radius_km=EARTH_RADIUS_KM):
        return cls(MetricMode.HAVERSINE, radius_km=radius_km)

    @classmethod
    def from_matrix(cls, matrix):
        return cls(MetricMode.MATRIX, matrix=matrix)

    def __eq__(self, other):
        if not isinstance(other, Metric) or self.mode != other.mode:
            return False
        if self.mode is MetricMode.HAVERSINE:
            return self.radius_km == other.radius_km
        return np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash((self.mode, self.radius_km))

    def __repr__(self):
        if self.mode is MetricMode.HAVERSINE:
            return f"Metric.haversine(radius_km={self.radius_km})"
        return f"Metric.from_matrix(<{self.matrix.shape[0]}x{self.matrix.shape[1]}>)"

    def _check(self, locations):
        for loc in locations:
            if loc.mode is not self.mode:
                raise UsageError(
                    f"location {loc.id!r} does not match metric mode {self.mode.value}"
                )

    def pairwise(self, rows: Sequence[Location], cols: Sequence[Location]):
        """
        Distance matrix between two location sequences.

        Returns
        -------
        ndarray
            Shape ``(len(rows), len(cols))``, float64 kilometres.
        """
        self._check(rows)
        self._check(cols)
        out = np.empty((len(rows), len(cols)), dtype=np.float64)
        if self.mode is MetricMode.MATRIX:
            ri = np.array([loc.matrix_index for loc in rows], dtype=np.intp)
            ci = np.array([loc.matrix_index for loc in cols], dtype=np.intp)
            if len(rows) and len(cols):
                out[:] = self.matrix[np.ix_(ri, ci)]
            return out
        lat_c = np.array([loc.coords[0] for loc in cols], dtype=np.float64)
        lon_c = np.array([loc.coords[1] for loc in cols], dtype=np.float64)
        for start in range(0, len(rows), _ROW_CHUNK):
            chunk = rows[start:start + _ROW_CHUNK]
            lat_r = np.array([loc.coords[0] for loc in chunk], dtype=np.float64)
            lon_r = np.array([loc.coords[1] for loc in chunk], dtype=np.float64)
            out[start:start + len(chunk)] = haversine_km(
                lat_r[:, None], lon_r[:, None], lat_c[None, :], lon_c[None, :],
                radius_km=self.radius_km,
            )
        return out


def distance(metric: Metric, a: Location, b: Location) -> float:
    """
    Distance in km between two locations.

    Raises
    ------
    UsageError
        If either location does not use the metric's mode.
    """
    return float(metric.pairwise([a], [b])[0, 0])


class Instance:
    """
    A MobileVaccClinic problem: locations, metric, clients and the sites
    where facilities may open.

    Locations, clients and sites are kept sorted by id; index order is the
    tie-breaking order used everywhere.
    """

    def __init__(self, locations: Iterable[Location], clients: Iterable[Client],
                 sites: Iterable[str], metric: Metric):
        self.locations = tuple(sorted(locations, key=attrgetter("id")))
        self.clients = tuple(sorted(clients, key=attrgetter("id")))
        self.sites = frozenset(sites)
        self.metric = metric
        self._locations_by_id = {loc.id: loc for loc in self.locations}
        self._clients_by_id = {c.id: c for c in self.clients}
        self.client_ids = tuple(c.id for c in self.clients)
        self.site_ids = tuple(sorted(self.sites))
        self.site_index = {s: i for i, s in enumerate(self.site_ids)}
        self.visited_ids = tuple(sorted(set().union(*(c.visited for c in self.clients))))
        self.visited_index = {v: i for i, v in enumerate(self.visited_ids)}
        self._seed_matrix = None

    @property
    def n(self):
        return len(self.clients)

    def location(self, location_id):
        try:
            return self._locations_by_id[location_id]
        except KeyError:
            raise UsageError(f"unknown location {location_id!r}") from None

    def client(self, client_id):
        try:
            return self._clients_by_id[client_id]
        except KeyError:
            raise UsageError(f"unknown client {client_id!r}") from None

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.locations == other.locations and self.clients == other.clients
                and self.sites == other.sites and self.metric == other.metric)

    def __repr__(self):
        return (f"Instance(locations={len(self.locations)}, clients={self.n}, "
                f"sites={len(self.sites)}, metric={self.metric.mode.value})")

    def with_clients(self, clients: Iterable[Client]) -> "Instance":
        """
        Same locations, sites and metric with a different client list.

        Distances already computed here are shared with the derived
        instance, so both report bit-identical radii.
        """
        derived = Instance(self.locations, clients, self.sites, self.metric)
        rows = [self.visited_index[v] for v in derived.visited_ids if v in self.visited_index]
        if len(rows) == len(derived.visited_ids):
            derived._seed_matrix = self.site_matrix[rows]
        return derived

    # -- distances ---------------------------------------------------------

    @cached_property
    def site_matrix(self):
        """Distances from every visited location (rows) to every site (cols)."""
        if self._seed_matrix is not None:
            matrix = self._seed_matrix
        else:
            rows = [self.location(v) for v in self.visited_ids]
            cols = [self.location(s) for s in self.site_ids]
            matrix = self.metric.pairwise(rows, cols)
            logger.debug("computed %dx%d site distance matrix", *matrix.shape)
        matrix.setflags(write=False)
        return matrix

    def distance_matrix(self, row_ids: Sequence[str], col_ids: Sequence[str]):
        """
        Distances between arbitrary location ids.

        Rows that are visited locations and columns that are sites come
        from the cached :attr:`site_matrix`.
        """
        if (all(r in self.visited_index for r in row_ids)
                and all(c in self.site_index for c in col_ids)):
            ri = [self.visited_index[r] for r in row_ids]
            ci = [self.site_index[c] for c in col_ids]
            return self.site_matrix[np.ix_(ri, ci)]
        rows = [self.location(r) for r in row_ids]
        cols = [self.location(c) for c in col_ids]
        return self.metric.pairwise(rows, cols)

    @cached_property
    def visit_incidence(self):
        """Sparse (clients x visited locations) 0/1 matrix."""
        indptr = [0]
        indices = []
        for c in self.clients:
            cols = sorted(self.visited_index[v] for v in c.visited)
            indices.extend(cols)
            indptr.append(len(indices))
        data = np.ones(len(indices), dtype=np.int32)
        return sp.csr_matrix(
            (data, np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
            shape=(self.n, len(self.visited_ids)),
        )

    def site_columns(self, facilities: Iterable[str]):
        cols = []
        for f in facilities:
            if f not in self.site_index:
                raise UsageError(f"facility {f!r} is not an allowed site")
            cols.append(self.site_index[f])
        return np.array(sorted(set(cols)), dtype=np.intp)

    def candidate_radii(self):
        """Sorted distinct site-to-visited-location distances with 0 prepended."""
        return np.unique(np.concatenate(([0.0], self.site_matrix.ravel())))


# -- objective -------------------------------------------------------------

def coverage_target(q, n):
    """
    ⌊q·n⌋ evaluated on the decimal value of ``q``.

    Raises
    ------
    UsageError
        If ``q`` is outside (0, 1] or the target is zero.
    """
    if not 0 < q <= 1:
        raise UsageError(f"q must lie in (0, 1], got {q}")
    target = math.floor(Fraction(str(q)) * n)
    if target < 1:
        raise UsageError(f"floor(q*n) is 0 for q={q}, n={n}")
    return target


def nearest_facilities(instance: Instance, facilities: Iterable[str]):
    """
    Distance from every client to its closest facility.

    Returns
    -------
    distances : ndarray
        Per client (instance client order), the smallest distance from a
        visited location to a facility.
    nearest : list of str
        The attaining facility; ties go to the smallest facility id.
    """
    cols = instance.site_columns(facilities)
    if cols.size == 0:
        raise UsageError("facility set is empty")
    sub = instance.site_matrix[:, cols]
    loc_best = sub.min(axis=1)
    loc_arg = cols[sub.argmin(axis=1)]
    inc = instance.visit_incidence
    rows = inc.indices
    owner = np.repeat(np.arange(instance.n), np.diff(inc.indptr))
    vals = loc_best[rows]
    facs = loc_arg[rows]
    order = np.lexsort((facs, vals, owner))
    firsts = order[np.r_[0, np.flatnonzero(np.diff(owner[order])) + 1]]
    distances = vals[firsts]
    nearest = [instance.site_ids[c] for c in facs[firsts]]
    return distances, nearest


def client_distance(instance: Instance, client: Client, facilities: Iterable[str]) -> float:
    """Distance from one client's visited locations to the nearest facility."""
    cols = instance.site_columns(facilities)
    if cols.size == 0:
        raise UsageError("facility set is empty")
    rows = [instance.visited_index[v] for v in client.visited]
    return float(instance.site_matrix[np.ix_(rows, cols)].min())


def objective(instance: Instance, facilities: Iterable[str], q=1.0) -> float:
    """
    Radius needed to serve ⌊q·n⌋ clients from ``facilities``.

    With ``q=1`` this is the largest client distance.
    """
    target = coverage_target(q, instance.n)
    distances, _ = nearest_facilities(instance, facilities)
    return float(np.partition(distances, target - 1)[target - 1])


# -- solutions -------------------------------------------------------------

@dataclass(frozen=True)
class Solution:
    """
    Output of every placement algorithm.

    ``radius_km`` is the largest ``per_client_distance`` over ``covered``.
    With capacities, a covered client's distance is measured to its
    assigned facility.
    """

    algorithm: str
    k: int
    q: float
    facilities: tuple[str, ...]
    radius_km: Optional[float]
    per_client_distance: Mapping[str, float]
    nearest_facility: Mapping[str, str]
    covered: frozenset[str]
    feasible: bool = True
    assignment: Optional[Mapping[str, str]] = None
    search_radius_km: Optional[float] = None
    details: Mapping[str, object] = field(default_factory=dict)

    @property
    def covered_count(self):
        return len(self.covered)


def make_solution(instance: Instance, facilities, *, algorithm, k, q=1.0,
                  covered_radius=None, assignment=None, search_radius=None,
                  details=None) -> Solution:
    """
    Evaluate ``facilities`` on ``instance`` and package a :class:`Solution`.

    Parameters
    ----------
    covered_radius : float, optional
        Clients within this distance are covered. Defaults to the
        objective at ``q`` so exactly the clients the objective counts
        are covered.
    assignment : mapping, optional
        Client id to facility id (capacity variant). Covered clients are
        then exactly the assigned ones.
    """
    facilities = tuple(sorted(set(facilities)))
    distances, nearest = nearest_facilities(instance, facilities)
    per_client = dict(zip(instance.client_ids, (float(d) for d in distances)))
    nearest_map = dict(zip(instance.client_ids, nearest))
    if assignment is not None:
        assignment = dict(sorted(assignment.items()))
        for pid, fid in assignment.items():
            per_client[pid] = client_distance(instance, instance.client(pid), [fid])
            nearest_map[pid] = fid
        covered = frozenset(assignment)
    else:
        if covered_radius is None:
            covered_radius = objective(instance, facilities, q)
        covered = frozenset(p for p, d in per_client.items() if d <= covered_radius)
    radius = max((per_client[p] for p in covered), default=None)
    return Solution(
        algorithm=algorithm, k=k, q=q, facilities=facilities,
        radius_km=radius, per_client_distance=per_client,
        nearest_facility=nearest_map, covered=covered,
        feasible=radius is not None, assignment=assignment,
        search_radius_km=search_radius, details=dict(details or {}),
    )


def infeasible_solution(instance: Instance, *, algorithm, k, q=1.0, reason="") -> Solution:
    return Solution(
        algorithm=algorithm, k=k, q=q, facilities=(), radius_km=None,
        per_client_distance={}, nearest_facility={}, covered=frozenset(),
        feasible=False, details={"reason": reason} if reason else {},
    )


# -- validation ------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def validate(instance: Instance) -> list[Violation]:
    """
    Check every instance invariant.

    Returns
    -------
    list of Violation
        Empty when the instance is well formed.
    """
    found = []

    def add(code, message):
        found.append(Violation(code, message))

    ids = [loc.id for loc in instance.locations]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        add("duplicate location", f"duplicate location ids {dup}")
    client_ids = list(instance.client_ids)
    if len(set(client_ids)) != len(client_ids):
        add("duplicate client", "duplicate client ids")
    if instance.n < 1:
        add("no clients", "instance has no clients")
    if not instance.sites:
        add("no sites", "instance has no sites")

    modes = {loc.mode for loc in instance.locations}
    if None in modes:
        add("location mode", "every location needs exactly one of coords / matrix_index")
    if modes - {None} - {instance.metric.mode}:
        add("mixed mode", f"locations do not all match metric mode {instance.metric.mode.value}")

    for loc in instance.locations:
        if loc.coords is not None:
            lat, lon = loc.coords
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                add("coordinates", f"location {loc.id!r} has out-of-range coordinates")

    known = set(ids)
    unknown_sites = sorted(instance.sites - known)
    if unknown_sites:
        add("unknown site", f"sites not among locations: {unknown_sites}")
    for c in instance.clients:
        if not c.visited:
            add("empty S_p", f"empty S_p for client {c.id!r}")
        missing = sorted(c.visited - known)
        if missing:
            add("unknown visit", f"client {c.id!r} visits unknown locations {missing}")
        if c.home is not None:
            home = instance._locations_by_id.get(c.home)
            if home is None:
                add("unknown home", f"client {c.id!r} has unknown home {c.home!r}")
            elif home.kind is not LocationKind.RESIDENTIAL:
                add("home kind", f"home {c.home!r} of client {c.id!r} is not residential")

    if instance.metric.mode is MetricMode.MATRIX:
        found.extend(_validate_matrix(instance))
    return found


def _validate_matrix(instance):
    found = []
    m = instance.metric.matrix
    if m is None or m.ndim != 2 or m.shape[0] != m.shape[1]:
        return [Violation("matrix shape", "distance matrix must be square")]
    size = m.shape[0]
    for loc in instance.locations:
        if loc.matrix_index is not None and not 0 <= loc.matrix_index < size:
            found.append(Violation("matrix index", f"location {loc.id!r} index out of range"))
    if found:
        return found
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        found.append(Violation("metric negative", "distances must be finite and nonnegative"))
    if np.any(np.diag(m) != 0):
        found.append(Violation("metric identity", "d(a, a) must be 0"))
    if not np.array_equal(m, m.T):
        found.append(Violation("metric asymmetry", "metric asymmetry: matrix is not symmetric"))
    used = np.array(sorted({loc.matrix_index for loc in instance.locations}), dtype=np.intp)
    if used.size:
        rng = np.random.default_rng(0)
        a, b, c = (used[rng.integers(0, used.size, _TRIANGLE_SAMPLES)] for _ in range(3))
        slack = m[a, c] - (m[a, b] + m[b, c])
        if np.any(slack > _TRIANGLE_TOL * np.maximum(1.0, m[a, c])):
            found.append(Violation("metric triangle", "triangle inequality violated"))
    return found


def ensure_valid(instance: Instance) -> Instance:
    """Return ``instance`` or raise :class:`InstanceError` listing violations."""
    violations = validate(instance)
    if violations:
        raise InstanceError(violations)
    return instance
