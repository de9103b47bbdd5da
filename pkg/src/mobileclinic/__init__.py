"""
mobileclinic: facility placement for clients that move between locations.
"""

from .covering import (
    CapacitatedCover,
    CoverInstance,
    CoverResult,
    FullCover,
    GroupConstraints,
    GroupedCover,
    PartialCover,
    build_cover,
    exact_cover,
    greedy_capacitated_cover,
    greedy_cover,
    greedy_group_cover,
    greedy_partial_cover,
)
from .exceptions import (
    CoverBudgetExhausted,
    InstanceError,
    MobileClinicError,
    ParseError,
    UsageError,
)
from .geo import (
    Client,
    Instance,
    Location,
    LocationKind,
    Metric,
    Solution,
    distance,
    objective,
    validate,
)
from .ksupplier import SupplierInstance, exact_supplier, hs_approx
from .solvers import (
    SolveParams,
    clientcover_solve,
    fpt_solve,
    home_centers,
    most_active,
    select_public_locations,
    solve,
)

__version__ = "0.1.0"
__all__ = [
    "CapacitatedCover", "Client", "CoverBudgetExhausted", "CoverInstance", "CoverResult",
    "FullCover", "GroupConstraints", "GroupedCover", "Instance", "InstanceError", "Location",
    "LocationKind", "Metric", "MobileClinicError", "ParseError", "PartialCover", "SolveParams",
    "Solution", "SupplierInstance", "UsageError", "build_cover", "clientcover_solve",
    "distance", "exact_cover", "exact_supplier", "fpt_solve", "greedy_capacitated_cover",
    "greedy_cover", "greedy_group_cover", "greedy_partial_cover", "home_centers", "hs_approx",
    "most_active", "objective", "select_public_locations", "solve", "validate",
]
