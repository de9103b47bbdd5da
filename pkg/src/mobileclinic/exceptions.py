"""
Exception hierarchy for mobileclinic.

Infeasibility is never raised: solvers return results flagged
``feasible=False``. Exceptions are reserved for misuse of the API and for
exhausted search budgets.
"""

from __future__ import annotations


class MobileClinicError(Exception):
    """Base class for all package errors."""


class UsageError(MobileClinicError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ParseError(UsageError):
    """
    An input file could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    path : str, optional
        The offending file.
    line : int, optional
        1-based line number in the file (the header is line 1).
    """

    def __init__(self, message, path=None, line=None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = f"{self.path}: "
        super().__init__(f"{where}{message}")


class InstanceError(UsageError):
    """An instance failed validation; ``violations`` lists every problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(v.message for v in self.violations)
        super().__init__(f"invalid instance: {lines}")


class CoverBudgetExhausted(MobileClinicError):
    """
    Branch-and-bound ran out of nodes before proving optimality.

    Attributes
    ----------
    nodes : int
        Nodes expanded when the search stopped.
    incumbent : CoverResult or None
        Best cover found so far, if any.
    """

    def __init__(self, nodes, incumbent=None):
        self.nodes = nodes
        self.incumbent = incumbent
        super().__init__(f"exact cover exhausted its budget after {nodes} nodes")
