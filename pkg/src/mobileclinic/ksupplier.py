"""
Classic k-supplier solvers used as subroutines.

:func:`hs_approx` is the threshold 3-approximation searched over the sorted
point-to-site distances; :func:`exact_supplier` enumerates every k-subset
of sites and serves as the test oracle.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import MobileClinicError, UsageError

logger = logging.getLogger(__name__)

EXACT_SUBSET_GUARD = 10 ** 7

# float slack on the 3R acceptance test; the bound holds exactly in real arithmetic
_TRIANGLE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class SupplierInstance:
    """
    Demand points X, candidate sites Y and budget k over an instance's metric.

    Points and sites are kept as sorted id tuples; scanning and tie-breaking
    follow that order.
    """

    points: tuple
    sites: tuple
    k: int
    instance: object

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(sorted(set(self.points))))
        object.__setattr__(self, "sites", tuple(sorted(set(self.sites))))
        if not self.points or not self.sites:
            raise UsageError("k-supplier needs at least one point and one site")
        if self.k < 1:
            raise UsageError(f"k must be positive, got {self.k}")

    @cached_property
    def point_site(self):
        """Distances, shape (|X|, |Y|)."""
        return self.instance.distance_matrix(self.points, self.sites)

    def point_row(self, i):
        """Distances from point ``i`` to every point."""
        return self.instance.distance_matrix([self.points[i]], self.points)[0]

    def candidates(self):
        return np.unique(self.point_site)


def _threshold(si: SupplierInstance, radius):
    """
    One threshold round at ``radius``.

    Returns the opened site columns and the achieved radius, or ``None``
    when more than k points are pairwise 2R apart or a picked point has no
    site within R.
    """
    dist = si.point_site
    to_picked = np.full(len(si.points), np.inf)
    opened = set()
    picks = 0
    while True:
        far = np.flatnonzero(to_picked > 2.0 * radius)
        if far.size == 0:
            break
        x = int(far[0])
        picks += 1
        if picks > si.k:
            return None
        within = np.flatnonzero(dist[x] <= radius)
        if within.size == 0:
            return None
        opened.add(int(within[0]))
        to_picked = np.minimum(to_picked, si.point_row(x))
        to_picked[x] = 0.0
    cols = np.array(sorted(opened), dtype=np.intp)
    achieved = dist[:, cols].min(axis=1)
    if achieved.max() > 3.0 * radius * (1.0 + _TRIANGLE_SLACK):
        return None
    return cols, float(achieved.max())


def hs_approx(si: SupplierInstance):
    """
    Threshold 3-approximation for k-supplier.

    Binary search over the sorted candidate distances for the smallest
    radius at which the threshold round succeeds. The round succeeds at
    every radius at or above the optimum, so the search never passes it.

    Returns
    -------
    facilities : tuple of str
        At most k sites, sorted.
    radius : float
        Achieved maximum point-to-facility distance; an element of the
        candidate list and at most three times the optimum.

    Raises
    ------
    MobileClinicError
        If even the largest candidate radius fails.
    """
    cands = si.candidates()
    hi_result = _threshold(si, cands[-1])
    if hi_result is None:
        raise MobileClinicError("k-supplier threshold failed at the largest radius")
    first = _threshold(si, cands[0])
    if first is not None:
        best = first
    else:
        lo, hi, best = 0, len(cands) - 1, hi_result
        while hi - lo > 1:
            mid = (lo + hi) // 2
            attempt = _threshold(si, cands[mid])
            if attempt is None:
                lo = mid
            else:
                hi, best = mid, attempt
    cols, radius = best
    facilities = tuple(si.sites[c] for c in cols)
    logger.debug("hs_approx |X|=%d |Y|=%d k=%d -> radius %.6f",
                 len(si.points), len(si.sites), si.k, radius)
    return facilities, radius


def exact_supplier(si: SupplierInstance):
    """
    Exhaustive k-supplier over all k-subsets of sites in lexicographic order.

    Raises
    ------
    UsageError
        When ``C(|sites|, k)`` exceeds the enumeration guard.
    """
    size = min(si.k, len(si.sites))
    count = math.comb(len(si.sites), size)
    if count > EXACT_SUBSET_GUARD:
        raise UsageError(
            f"exact k-supplier would enumerate {count} subsets (limit "
            f"{EXACT_SUBSET_GUARD}); shrink the instance or use hs_approx"
        )
    dist = si.point_site
    best_cols, best_radius = None, math.inf
    for combo in itertools.combinations(range(len(si.sites)), size):
        radius = dist[:, list(combo)].min(axis=1).max()
        if radius < best_radius:
            best_cols, best_radius = combo, radius
    return tuple(si.sites[c] for c in best_cols), float(best_radius)
