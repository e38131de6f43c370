"""Finite random measures with an overlap oracle, their overlap laws and arrays."""

from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Iterator, Sequence, TextIO

import numpy as np

from .const import PSD_TOLERANCE, THRESHOLD_SLACK
from .exceptions import InvalidParameterError

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike

BLOCK_SIZE = 1024


class AtomicMeasure(ABC):
    """Masses on finitely many atoms of the unit ball, with their overlaps.

    Atoms are identified by their index ``0..size-1``. Subclasses provide the
    overlap oracle in vectorized form.
    """

    def __init__(self, masses: ArrayLike):
        """Validate and store the masses, which must sum to 1."""
        masses = np.array(masses, dtype=float)
        if masses.ndim != 1 or masses.size == 0:
            raise InvalidParameterError("masses", "must be a non-empty vector")
        if not np.all(masses >= 0):
            raise InvalidParameterError("masses", "must be non-negative")
        total = masses.sum()
        if abs(total - 1) > 1e-9:
            raise InvalidParameterError("masses", f"must sum to 1, got {total!r}")
        self.masses = masses / total
        self.masses.flags.writeable = False

    @abstractmethod
    def overlap_block(self, rows: ArrayLike, cols: ArrayLike) -> np.ndarray:
        """Return the matrix of overlaps between atoms ``rows`` and ``cols``."""

    @abstractmethod
    def pair_overlaps(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        """Return the overlaps of the atom pairs ``(a[i], b[i])``."""

    @property
    def size(self) -> int:
        """Return the number of atoms."""
        return self.masses.size

    def iter_blocks(
        self, rows: ArrayLike, cols: ArrayLike, block_size: int = BLOCK_SIZE
    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(row_ids, overlaps)`` for consecutive row blocks against ``cols``."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        for start in range(0, rows.size, block_size):
            block = rows[start : start + block_size]
            yield block, self.overlap_block(block, cols)

    def overlap(self, i: int, j: int) -> float:
        """Return the overlap of atoms ``i`` and ``j``."""
        return float(self.pair_overlaps([i], [j])[0])

    def overlap_row(self, i: int) -> np.ndarray:
        """Return the overlaps of atom ``i`` with every atom."""
        return self.overlap_block([i], np.arange(self.size))[0]

    def pair_mass(
        self,
        rows: ArrayLike,
        cols: ArrayLike,
        predicate: Callable[[np.ndarray], np.ndarray] | None = None,
    ) -> float:
        """Return ``sum m_i m_j [predicate(R_ij)]`` over ``rows x cols``."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        if rows.size == 0 or cols.size == 0:
            return 0.0
        col_masses = self.masses[cols]
        if predicate is None:
            return float(self.masses[rows].sum() * col_masses.sum())
        total = 0.0
        for block, overlaps in self.iter_blocks(rows, cols):
            total += float(self.masses[block] @ (predicate(overlaps) @ col_masses))
        return total

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` atoms i.i.d. by mass."""
        return rng.choice(self.size, size=n, p=self.masses)

    def self_overlaps(self) -> np.ndarray:
        """Return the self-overlap of every atom."""
        ids = np.arange(self.size)
        return self.pair_overlaps(ids, ids)

    def support(self) -> np.ndarray:
        """Return the atoms carrying positive mass."""
        return np.flatnonzero(self.masses > 0)


class PointMeasure(AtomicMeasure):
    """Atoms given by explicit coordinate vectors."""

    def __init__(self, points: ArrayLike, masses: ArrayLike):
        """Initialize from an ``(n, d)`` point array and masses."""
        super().__init__(masses)
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.shape[0] != self.size:
            raise InvalidParameterError("points", "need one point per mass")
        if np.any(np.einsum("ij,ij->i", self.points, self.points) > 1 + 1e-12):
            raise InvalidParameterError("points", "must lie in the unit ball")

    def overlap_block(self, rows: ArrayLike, cols: ArrayLike) -> np.ndarray:
        """Return inner products between the selected points."""
        return self.points[np.asarray(rows)] @ self.points[np.asarray(cols)].T

    def pair_overlaps(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        """Return inner products of paired points."""
        return np.einsum(
            "ij,ij->i", self.points[np.asarray(a)], self.points[np.asarray(b)]
        )


class HypercubeMeasure(AtomicMeasure):
    """Atoms are spin configurations; the overlap is ``(1/N) sum_i s_i s'_i``."""

    def __init__(self, spins: ArrayLike, masses: ArrayLike):
        """Initialize from an ``(n, N)`` array of +-1 spins and masses."""
        super().__init__(masses)
        self.spins = np.asarray(spins, dtype=float)
        if self.spins.ndim != 2 or self.spins.shape[0] != self.size:
            raise InvalidParameterError("spins", "need one configuration per mass")
        self.n_spins = self.spins.shape[1]

    def overlap_block(self, rows: ArrayLike, cols: ArrayLike) -> np.ndarray:
        """Return overlaps between the selected configurations."""
        block = self.spins[np.asarray(rows)] @ self.spins[np.asarray(cols)].T
        return block / self.n_spins

    def pair_overlaps(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        """Return overlaps of paired configurations."""
        products = self.spins[np.asarray(a)] * self.spins[np.asarray(b)]
        return products.sum(axis=1) / self.n_spins


class TreeMeasure(AtomicMeasure):
    """Leaves of a depth-r tree plus a dustbin atom, with overlap ``q_{|a ^ b|}``.

    Leaf ``i`` has root path ``paths[i]``. The dustbin is the last atom; it is
    orthogonal to every leaf and has self-overlap ``q_r``.
    """

    def __init__(
        self, paths: ArrayLike, q: Sequence[float], masses: ArrayLike, dust: float
    ):
        """Initialize from leaf paths, overlap levels, leaf masses and dust mass."""
        super().__init__(np.append(np.asarray(masses, dtype=float), dust))
        paths = np.atleast_2d(np.asarray(paths, dtype=np.int64))
        if paths.shape != (self.size - 1, len(q)):
            raise InvalidParameterError("paths", "need one depth-r path per leaf mass")
        self.levels = np.concatenate([[0.0], np.asarray(q, dtype=float)])
        self.paths = np.vstack([paths, np.full((1, len(q)), -1, dtype=np.int64)])
        self.dust_index = self.size - 1

    def _common_depth(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.cumprod(a == b, axis=-1).sum(axis=-1)

    def overlap_block(self, rows: ArrayLike, cols: ArrayLike) -> np.ndarray:
        """Return ``q`` at the meet depth of every selected pair."""
        a = self.paths[np.asarray(rows)][:, None, :]
        b = self.paths[np.asarray(cols)][None, :, :]
        return self.levels[self._common_depth(a, b)]

    def pair_overlaps(self, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        """Return ``q`` at the meet depth of paired leaves."""
        return self.levels[
            self._common_depth(self.paths[np.asarray(a)], self.paths[np.asarray(b)])
        ]


@dataclass(frozen=True)
class OverlapLaw:
    """A discrete law on overlap values."""

    support: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        """Merge repeated support points and sort."""
        support, inverse = np.unique(
            np.asarray(self.support, dtype=float), return_inverse=True
        )
        masses = np.bincount(
            inverse.ravel(), weights=np.asarray(self.masses, dtype=float).ravel()
        )
        if np.any(masses < -THRESHOLD_SLACK):
            raise InvalidParameterError("masses", "must be non-negative")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "masses", np.clip(masses, 0, None))

    @classmethod
    def from_samples(
        cls, values: ArrayLike, weights: ArrayLike | None = None
    ) -> OverlapLaw:
        """Return the (weighted) empirical law of ``values``."""
        values = np.asarray(values, dtype=float).ravel()
        if weights is None:
            weights = np.full(values.size, 1 / values.size)
        weights = np.asarray(weights, dtype=float).ravel()
        return cls(values, weights / weights.sum())

    @property
    def total(self) -> float:
        """Return the total mass."""
        return float(self.masses.sum())

    def mass(
        self, lo: float = -np.inf, hi: float = np.inf, closed: str = "both"
    ) -> float:
        """Return the mass of the interval from ``lo`` to ``hi``.

        ``closed`` is one of ``"both"``, ``"left"``, ``"right"`` or ``"neither"``.
        Support points within ``THRESHOLD_SLACK`` of an endpoint count as on it.
        """
        x = self.support
        if closed in ("both", "left"):
            above = x >= lo - THRESHOLD_SLACK
        else:
            above = x > lo + THRESHOLD_SLACK
        if closed in ("both", "right"):
            below = x <= hi + THRESHOLD_SLACK
        else:
            below = x < hi - THRESHOLD_SLACK
        return float(self.masses[above & below].sum())

    def window_mass(self, center: float, width: float) -> float:
        """Return the mass of the open window ``(center - width, center + width)``."""
        return self.mass(center - width, center + width, closed="neither")

    def expectation(self, function: Callable[[np.ndarray], np.ndarray]) -> float:
        """Return the mean of ``function`` under the law."""
        return float(self.masses @ function(self.support))

    def histogram(self, edges: ArrayLike) -> np.ndarray:
        """Return bin masses for ``[lo, hi)`` bins, the last bin closed."""
        edges = np.asarray(edges, dtype=float)
        index = np.searchsorted(edges, self.support + THRESHOLD_SLACK, side="right") - 1
        index[np.isclose(self.support, edges[-1])] = edges.size - 2
        inside = (index >= 0) & (index < edges.size - 1)
        return np.bincount(
            index[inside], weights=self.masses[inside], minlength=edges.size - 1
        )

    def to_json(self) -> dict[str, Any]:
        """Serialize as parallel support and mass lists."""
        return {"masses": self.masses.tolist(), "support": self.support.tolist()}


@dataclass(frozen=True)
class OverlapMatrix:
    """Pairwise overlaps of n sampled atoms."""

    values: np.ndarray
    atoms: np.ndarray | None = None

    def __post_init__(self):
        """Coerce the values to a square float array."""
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] != values.shape[1]:
            raise InvalidParameterError("values", f"must be square, got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        """Return the number of replicas."""
        return self.values.shape[0]

    def check(self) -> list[str]:
        """Return the violated overlap-array properties (empty when valid)."""
        problems = []
        if not np.allclose(self.values, self.values.T, atol=1e-12, rtol=0):
            problems.append("not symmetric")
        if np.any(np.abs(self.values) > 1 + 1e-12):
            problems.append("entries outside [-1, 1]")
        smallest = float(np.linalg.eigvalsh((self.values + self.values.T) / 2).min())
        if smallest < -PSD_TOLERANCE:
            problems.append(f"not positive semi-definite (eigenvalue {smallest:.3g})")
        return problems

    @property
    def is_valid(self) -> bool:
        """Return whether the array is a valid overlap array."""
        return not self.check()

    def to_csv(self, stream: TextIO) -> None:
        """Write the matrix row-major, after an ``n`` header line."""
        writer = csv.writer(stream)
        writer.writerow(["n", self.n])
        writer.writerows(self.values.tolist())
