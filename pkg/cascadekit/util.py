"""Utility functions for cascadekit."""

from __future__ import annotations

import hashlib
import pickle
import sys
import tempfile
from dataclasses import dataclass
from functools import partial
from math import sqrt
from pathlib import Path
from typing import TYPE_CHECKING, Any

import click
import numpy as np
from platformdirs import user_cache_path

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike

echo = partial(click.secho, err=True)


@dataclass(frozen=True)
class EstimateWithError:
    """A point estimate with its standard error and provenance."""

    value: float
    stderr: float
    n_samples: int
    mode: str = "mc"

    def __post_init__(self):
        """Validate the standard error."""
        if not self.stderr >= 0:
            msg = f"stderr must be non-negative, got {self.stderr}"
            raise ValueError(msg)

    @property
    def z_score(self) -> float:
        """Return value / stderr, or 0 for an exact zero."""
        if self.stderr == 0:
            return 0.0 if self.value == 0 else float("inf")
        return self.value / self.stderr

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        """Return whether ``target`` lies within ``sigmas`` standard errors."""
        return abs(self.value - target) <= sigmas * self.stderr

    def to_json(self) -> dict[str, Any]:
        """Serialize the estimate."""
        return {
            "estimate": self.value,
            "mode": self.mode,
            "samples": self.n_samples,
            "stderr": self.stderr,
        }


@dataclass(frozen=True)
class RunningStats:
    """An associative (count, sum, sum of squares) accumulator."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    @classmethod
    def of(cls, values: ArrayLike) -> RunningStats:
        """Build an accumulator from a batch of values."""
        values = np.asarray(values, dtype=float).ravel()
        return cls(values.size, float(values.sum()), float((values**2).sum()))

    def merge(self, other: RunningStats) -> RunningStats:
        """Combine two accumulators."""
        return RunningStats(
            self.count + other.count,
            self.total + other.total,
            self.total_sq + other.total_sq,
        )

    @property
    def mean(self) -> float:
        """Return the sample mean."""
        return self.total / self.count if self.count else float("nan")

    @property
    def variance(self) -> float:
        """Return the unbiased sample variance."""
        if self.count < 2:
            return 0.0
        centered = self.total_sq - self.total**2 / self.count
        return max(centered, 0.0) / (self.count - 1)

    def estimate(self, mode: str = "mc") -> EstimateWithError:
        """Return the mean with its standard error."""
        stderr = sqrt(self.variance / self.count) if self.count else 0.0
        return EstimateWithError(self.mean, stderr, self.count, mode)


class Reporter:
    """A class to report messages."""

    def __init__(self, level: int = 1):
        """Initialize the reporter."""
        self.level = level
        self.error_count = 0

    def _log_message(self, message: str, level: int, **formatting_kwargs: Any):
        if self.level >= level:
            echo(message, **formatting_kwargs)
            sys.stderr.flush()
            sys.stdout.flush()

    def debug(self, message: str, **formatting_kwargs: Any):
        """Log a debug message."""
        self._log_message(message, 3, bold=False, fg="blue", **formatting_kwargs)

    def error(self, message: str, **formatting_kwargs: Any):
        """Log an error message."""
        self.error_count += 1
        self._log_message(message, -1, bold=False, fg="red", **formatting_kwargs)

    def print(self, message: str, level: int = 0, **formatting_kwargs: Any):
        """Log a message."""
        formatting_kwargs.setdefault("bold", level == 0)
        self._log_message(message, level, **formatting_kwargs)


class ReportCache:
    """A class to manage the cache of finished run reports."""

    @staticmethod
    def key(canonical_config: str) -> str:
        """Return the cache key of a canonical config string."""
        return hashlib.sha256(canonical_config.encode("utf-8")).hexdigest()[:32]

    def __init__(self, ignore_cache: bool = False):
        """Initialize the cache."""
        from . import __version__

        self.cache_dir = user_cache_path("cascadekit", version=__version__)
        self.ignore_cache = ignore_cache

    def _get_cache_filename(self, key: str) -> Path:
        return self.cache_dir / f"report.{key}.pickle"

    def read(self, key: str) -> dict[str, Any] | None:
        """Return the cached report for ``key`` if there is one."""
        cache_file = self._get_cache_filename(key)
        if self.ignore_cache or not cache_file.exists():
            return None
        with cache_file.open("rb") as f:
            try:
                return pickle.load(f)  # noqa: S301
            except (pickle.UnpicklingError, ValueError, EOFError):  # pragma: no cover
                return None

    def write(self, key: str, report: dict[str, Any]) -> None:
        """Store a report under ``key``."""
        cache_file = self._get_cache_filename(key)
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(
                dir=str(cache_file.parent), delete=False
            ) as f:
                pickle.dump(report, f, protocol=4)
            Path(f.name).replace(cache_file)
        except OSError:  # pragma: no cover
            pass


class plural:  # noqa: N801
    """A class to format a number with a singular or plural form."""

    def __format__(self, format_spec: str) -> str:
        """Format the number with a singular or plural form."""
        v = self.value
        singular_form, _, plural_form = format_spec.partition("|")
        plural_form = plural_form or f"{singular_form}s"
        if abs(v) != 1:
            return f"{v:,} {plural_form}"
        return f"{v:,} {singular_form}"

    def __init__(self, value: int):
        """Initialize the class with a number."""
        self.value: int = value


def as_generator(rng: np.random.Generator | int) -> np.random.Generator:
    """Return ``rng`` as a numpy ``Generator``; integers are used as seeds."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def spawn_streams(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Return ``count`` independent seed streams; stream i depends only on (seed, i)."""
    return np.random.SeedSequence(seed).spawn(count)


def check_open_unit(name: str, value: float) -> float:
    """Raise unless ``value`` lies in the open interval (0, 1)."""
    from .exceptions import InvalidParameterError

    if not 0 < value < 1:
        raise InvalidParameterError(name, f"must lie in (0, 1), got {value}")
    return float(value)


def check_increasing(
    name: str, values: ArrayLike, low: float = 0.0, high: float = 1.0
) -> tuple[float, ...]:
    """Raise unless ``values`` is strictly increasing inside (low, high]."""
    from .exceptions import InvalidParameterError

    values = tuple(float(v) for v in np.atleast_1d(values))
    if not values:
        raise InvalidParameterError(name, "must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise InvalidParameterError(name, f"must be strictly increasing, got {values}")
    if values[0] <= low or values[-1] > high:
        raise InvalidParameterError(name, f"must lie in ({low}, {high}], got {values}")
    return values
