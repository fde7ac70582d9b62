"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class AidcError(Exception):
    """Base class for every error raised by this package."""


# -- case parsing -----------------------------------------------------------


class CaseFormatError(AidcError):
    """Problem with the textual content of a case file."""


class MissingMatrix(CaseFormatError):
    def __init__(self, name: str):
        super().__init__(f"case file has no 'mpc.{name}' block")
        self.name = name


class MalformedRow(CaseFormatError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NoSlackBus(CaseFormatError):
    def __init__(self):
        super().__init__("no bus of type 3 (reference) in case")


class DuplicateBusId(CaseFormatError):
    def __init__(self, bus_id: int, line: int):
        super().__init__(f"line {line}: bus id {bus_id} defined twice")
        self.bus_id = bus_id
        self.line = line


# -- power flow ---------------------------------------------------------------


class DisconnectedNetwork(AidcError):
    """The switching mask splits the network into several components."""

    def __init__(self, components: list[list[int]]):
        sizes = ", ".join(str(len(c)) for c in components)
        super().__init__(f"network has {len(components)} components (sizes {sizes})")
        self.components = components


class SingularJacobian(AidcError):
    def __init__(self, iteration: int | None = None):
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"power-flow Jacobian is singular{where}")
        self.iteration = iteration


# -- optimisation models --------------------------------------------------------


class UnboundedCost(AidcError):
    def __init__(self, gen: int):
        super().__init__(f"generator {gen} has a concave (negative quadratic) cost")
        self.gen = gen


class MissingSensitivities(AidcError):
    """AIDC augmentation requested without sensitivities or tolerances."""


class InconsistentPoint(AidcError):
    def __init__(self, residual: float, where: str):
        super().__init__(f"solver point violates {where} by {residual:.3e}")
        self.residual = residual
        self.where = where


class NumericalFailure(AidcError):
    def __init__(self, message: str, node: int | None = None):
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message)
        self.node = node


class TooManyBinaries(AidcError):
    def __init__(self, count: int, limit: int):
        super().__init__(f"{count} binaries exceed the enumeration limit of {limit}")
        self.count = count


class Infeasible(AidcError):
    """A dispatch problem has no feasible point."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
