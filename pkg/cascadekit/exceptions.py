"""Exceptions for cascadekit."""

from __future__ import annotations

from typing import Sequence


class CascadekitError(Exception):
    """Base exception class for cascadekit."""


class InvalidParameterError(CascadekitError, ValueError):
    """A parameter violated an operation's precondition."""

    @property
    def error_message(self) -> str:
        """Return a formatted error message."""
        return f"Invalid {self.parameter}: {self.message}"

    def __init__(self, parameter: str, message: str):
        """Initialize an invalid parameter error."""
        self.parameter = parameter
        self.message = message
        super().__init__(self.error_message)

    def __str__(self) -> str:
        """Return a string representation of the error."""
        return self.error_message


class LeafError(CascadekitError):
    """A leaf vertex was asked for its children."""

    def __init__(self, vertex: tuple[int, ...]):
        """Initialize the error with the offending vertex."""
        self.vertex = vertex
        super().__init__(f"Vertex {list(vertex)} is a leaf and has no children")


class TruncationError(CascadekitError):
    """The truncation level leaves more tail mass than the caller tolerates."""

    def __init__(self, truncation: int, bound: float, tolerance: float):
        """Initialize the error with the truncation, its tail bound and the tolerance."""
        self.truncation = truncation
        self.bound = bound
        self.tolerance = tolerance
        super().__init__(
            f"Truncation K={truncation} has tail bound {bound:.6g} above tolerance"
            f" {tolerance:.6g}"
        )


class NonUltrametricError(CascadekitError):
    """An overlap matrix violated the ultrametric inequality."""

    def __init__(self, triple: tuple[int, int, int], values: tuple[float, ...]):
        """Initialize the error with the violating triple and its overlaps."""
        self.triple = triple
        self.values = values
        i, j, k = triple
        super().__init__(
            f"Overlaps are not ultrametric at triple ({i}, {j}, {k}):"
            f" R[{i},{j}]={values[0]:.6g} < min(R[{i},{k}]={values[1]:.6g},"
            f" R[{k},{j}]={values[2]:.6g})"
        )


class OffLevelError(CascadekitError):
    """An overlap entry is not one of the permitted levels."""

    def __init__(self, index: tuple[int, int], value: float, levels: Sequence[float]):
        """Initialize the error with the entry position, value and level set."""
        self.index = index
        self.value = value
        self.levels = tuple(levels)
        super().__init__(
            f"Entry {index} = {value:.6g} is not in the level set"
            f" {[round(level, 6) for level in self.levels]}"
        )


class InsufficientMassError(CascadekitError):
    """The nested masses cannot reach 1 - eps at some depth."""

    def __init__(self, depth: int, reached: float, required: float):
        """Initialize the error with the depth and the masses involved."""
        self.depth = depth
        self.reached = reached
        self.required = required
        super().__init__(
            f"Depth {depth} reaches mass {reached:.6g}, needs more than"
            f" {required:.6g}; the truncation is too aggressive"
        )


class RateOverflowError(CascadekitError):
    """A rate inversion exceeded the overflow guard."""

    def __init__(self, quantity: str, target: float):
        """Initialize the error with the quantity name and its target value."""
        self.quantity = quantity
        self.target = target
        super().__init__(
            f"Solving for {quantity} at target {target:.6g} exceeds the overflow guard"
        )


class ConfigError(CascadekitError, ValueError):
    """A configuration field failed validation."""

    @property
    def error_message(self) -> str:
        """Return a formatted error message."""
        return f"Config field '{self.field}': {self.message}"

    def __init__(self, field: str, message: str):
        """Initialize a config error."""
        self.field = field
        self.message = message
        super().__init__(self.error_message)

    def __str__(self) -> str:
        """Return a string representation of the error."""
        return self.error_message


class ConfigErrors(CascadekitError):
    """Container for multiple config errors."""

    def __init__(self, errors: list[ConfigError]):
        """Initialize the error container with a list of errors."""
        self.errors = errors
        super().__init__(str(self))

    def __str__(self) -> str:
        """Return a string representation of the errors."""
        return "\n".join([str(error) for error in self.errors])
