"""
CSV ingestion and result serialisation.

File layouts are described in ``docs/FILE_FORMATS.md``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .covering import GroupConstraints
from .exceptions import ParseError
from .geo import Client, Instance, Location, LocationKind, Metric, MetricMode, ensure_valid

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["algorithm", "k", "q", "objective_km", "runtime_ms", "num_facilities"]

_FLOAT_DIGITS = 6


def _read_table(path, required):
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise ParseError("file not found", path) from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(f"unreadable CSV ({exc})", path) from None
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ParseError(f"missing columns {missing}", path, line=1)
    return frame.apply(lambda col: col.str.strip())


def _rows(frame):
    # line 1 is the header
    for idx, row in enumerate(frame.to_dict("records")):
        yield idx + 2, row


def _split_ids(text):
    return [part.strip() for part in text.split(";") if part.strip()]


def _read_locations(path):
    frame = _read_table(path, ["id", "kind"])
    if {"lat", "lon"} <= set(frame.columns):
        mode = MetricMode.HAVERSINE
    elif "index" in frame.columns:
        mode = MetricMode.MATRIX
    else:
        raise ParseError("need either lat,lon or index columns", path, line=1)
    locations, seen = [], set()
    for line, row in _rows(frame):
        loc_id = row["id"]
        if not loc_id:
            raise ParseError(f"empty location id at line {line}", path, line)
        if loc_id in seen:
            raise ParseError(f"duplicate location id {loc_id!r} at line {line}", path, line)
        seen.add(loc_id)
        try:
            kind = LocationKind(row["kind"].lower())
        except ValueError:
            raise ParseError(f"unknown kind {row['kind']!r} at line {line}", path, line) from None
        try:
            if mode is MetricMode.HAVERSINE:
                loc = Location(loc_id, kind, coords=(float(row["lat"]), float(row["lon"])))
            else:
                loc = Location(loc_id, kind, matrix_index=int(row["index"]))
        except ValueError:
            raise ParseError(f"bad number at line {line}", path, line) from None
        locations.append(loc)
    return locations, mode


def _read_matrix(path):
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, skipinitialspace=True)
        matrix = frame.to_numpy(dtype=np.float64)
    except FileNotFoundError:
        raise ParseError("file not found", path) from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as exc:
        raise ParseError(f"distance matrix is not numeric ({exc})", path) from None
    return matrix


def _read_clients(path):
    frame = _read_table(path, ["client_id", "home_location_id", "visited_ids"])
    clients, seen = [], set()
    for line, row in _rows(frame):
        cid = row["client_id"]
        if not cid:
            raise ParseError(f"empty client id at line {line}", path, line)
        if cid in seen:
            raise ParseError(f"duplicate client id {cid!r} at line {line}", path, line)
        seen.add(cid)
        visited = _split_ids(row["visited_ids"])
        if not visited:
            raise ParseError(f"empty S_p at line {line}", path, line)
        clients.append(Client(cid, frozenset(visited), row["home_location_id"] or None))
    return clients


def load_instance(locations_path, visits_path, matrix_path=None,
                  allow_residential_sites=False) -> Instance:
    """
    Read and validate an instance.

    Parameters
    ----------
    locations_path : path
        ``id,lat,lon,kind`` (haversine) or ``id,index,kind`` (matrix).
    visits_path : path
        ``client_id,home_location_id,visited_ids``.
    matrix_path : path, optional
        Headerless square distance table; required for ``index`` files.
    allow_residential_sites : bool
        Let residential locations host facilities too.

    Raises
    ------
    ParseError
        Malformed file, with path and line.
    InstanceError
        The parsed instance violates an invariant.
    """
    locations, mode = _read_locations(locations_path)
    if mode is MetricMode.MATRIX:
        if matrix_path is None:
            raise ParseError("index-based locations need a distance matrix file", locations_path)
        metric = Metric.from_matrix(_read_matrix(matrix_path))
    else:
        metric = Metric.haversine()
    clients = _read_clients(visits_path)
    sites = [loc.id for loc in locations
             if allow_residential_sites or loc.kind is LocationKind.ACTIVITY]
    instance = ensure_valid(Instance(locations, clients, sites, metric))
    logger.info("loaded %r", instance)
    return instance


def write_instance(instance: Instance, locations_path, visits_path, matrix_path=None):
    """Write ``instance`` in the format :func:`load_instance` reads."""
    if instance.metric.mode is MetricMode.HAVERSINE:
        locs = pd.DataFrame(
            [(loc.id, loc.coords[0], loc.coords[1], loc.kind.value) for loc in instance.locations],
            columns=["id", "lat", "lon", "kind"],
        )
    else:
        if matrix_path is None:
            raise ParseError("matrix instances need a matrix path", locations_path)
        locs = pd.DataFrame(
            [(loc.id, loc.matrix_index, loc.kind.value) for loc in instance.locations],
            columns=["id", "index", "kind"],
        )
        pd.DataFrame(instance.metric.matrix).to_csv(matrix_path, header=False, index=False)
    locs.to_csv(locations_path, index=False)
    visits = pd.DataFrame(
        [(c.id, c.home or "", ";".join(sorted(c.visited))) for c in instance.clients],
        columns=["client_id", "home_location_id", "visited_ids"],
    )
    visits.to_csv(visits_path, index=False)


def load_groups(path) -> GroupConstraints:
    """``label,requirement,member_client_ids`` rows into :class:`GroupConstraints`."""
    frame = _read_table(path, ["label", "requirement", "member_client_ids"])
    groups = []
    for line, row in _rows(frame):
        try:
            requirement = int(row["requirement"])
        except ValueError:
            raise ParseError(f"bad requirement at line {line}", path, line) from None
        groups.append((row["label"], frozenset(_split_ids(row["member_client_ids"])), requirement))
    return GroupConstraints(tuple(groups))


def _round(value):
    return round(float(value), _FLOAT_DIGITS)


def solution_payload(solution) -> dict:
    payload = {
        "algorithm": solution.algorithm,
        "k": solution.k,
        "q": solution.q,
        "feasible": solution.feasible,
        "facilities": sorted(solution.facilities),
        "covered_count": solution.covered_count,
        "per_client": [
            {"client": cid,
             "distance_km": _round(solution.per_client_distance[cid]),
             "nearest_facility": solution.nearest_facility[cid]}
            for cid in sorted(solution.per_client_distance)
        ],
    }
    if solution.feasible:
        payload["radius_km"] = _round(solution.radius_km)
    if solution.search_radius_km is not None:
        payload["search_radius_km"] = _round(solution.search_radius_km)
    if solution.assignment is not None:
        payload["assignment"] = dict(sorted(solution.assignment.items()))
    return payload


def write_solution(solution, path):
    """Deterministic JSON: sorted keys, floats rounded to 6 decimals."""
    text = json.dumps(solution_payload(solution), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_records(records, path):
    """Sweep CSV, one row per :class:`ExperimentRecord`."""
    frame = pd.DataFrame(
        [(r.algorithm, r.k, r.q, r.objective_km, r.runtime_ms, r.num_facilities) for r in records],
        columns=RECORD_COLUMNS,
    )
    frame.to_csv(path, index=False)


def write_table(rows, path):
    """Write a DataFrame or a list of dataclass rows as CSV."""
    if isinstance(rows, pd.DataFrame):
        frame = rows
    else:
        frame = pd.DataFrame([dataclasses.asdict(r) for r in rows])
        frame = frame.drop(columns=[c for c in ("facilities",) if c in frame.columns])
    frame.to_csv(path, index=False)
