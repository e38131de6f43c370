"""Vertex algebra on finite shaped subtrees of the rooted tree of depth r.

Vertices are plain tuples of positive integers; the empty tuple is the root.
Shapes ``(m_1, ..., m_r)`` describe the finite subtrees ``[m_1] x ... x [m_k]``
used throughout the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from math import prod
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping, Sequence, Tuple

import numpy as np

from .exceptions import InvalidParameterError, LeafError

Vertex = Tuple[int, ...]
ROOT: Vertex = ()


class Relation(str, Enum):
    """Genealogical relation of an ordered pair of vertices."""

    ANCESTOR = "ancestor"
    COUSINS = "cousins"
    DESCENDANT = "descendant"
    EQUAL = "equal"


def make_vertex(path: Iterable[int]) -> Vertex:
    """Validate and return ``path`` as a vertex."""
    vertex = tuple(int(i) for i in path)
    if any(i < 1 for i in vertex):
        raise InvalidParameterError("vertex", f"entries must be >= 1, got {list(path)}")
    return vertex


def depth(v: Vertex) -> int:
    """Return the depth of ``v``; the root has depth 0."""
    return len(v)


def parent(v: Vertex) -> Vertex:
    """Return the parent of a non-root vertex."""
    if not v:
        raise InvalidParameterError("vertex", "the root has no parent")
    return v[:-1]


def is_prefix(a: Vertex, b: Vertex) -> bool:
    """Return whether ``a`` is a (not necessarily strict) prefix of ``b``."""
    return len(a) <= len(b) and b[: len(a)] == a


def meet(a: Vertex, b: Vertex) -> Vertex:
    """Return the least common ancestor (longest common prefix)."""
    k = 0
    for x, y in zip(a, b):
        if x != y:
            break
        k += 1
    return a[:k]


def relation(a: Vertex, b: Vertex) -> Relation:
    """Classify ``a`` relative to ``b``."""
    if a == b:
        return Relation.EQUAL
    if is_prefix(a, b):
        return Relation.ANCESTOR
    if is_prefix(b, a):
        return Relation.DESCENDANT
    return Relation.COUSINS


def ancestors(v: Vertex) -> list[Vertex]:
    """Return the non-root prefixes of ``v``, ending with ``v`` itself."""
    return [v[:k] for k in range(1, len(v) + 1)]


@dataclass(frozen=True)
class TreeShape:
    """A finite ``(m_1, ..., m_r)``-shaped subtree."""

    m: tuple[int, ...]

    def __post_init__(self):
        """Validate the branching numbers."""
        m = tuple(int(k) for k in self.m)
        if not m:
            raise InvalidParameterError("shape", "depth must be at least 1")
        if any(k < 1 for k in m):
            raise InvalidParameterError("shape", f"all m_k must be >= 1, got {list(m)}")
        object.__setattr__(self, "m", m)

    def __contains__(self, v: object) -> bool:
        """Return whether ``v`` is a vertex of the shape (the root included)."""
        if not isinstance(v, tuple) or len(v) > self.r:
            return False
        return all(1 <= i <= k for i, k in zip(v, self.m))

    def __iter__(self) -> Iterator[Vertex]:
        """Iterate over the non-root vertices, depth first then lexicographic."""
        for k in range(1, self.r + 1):
            yield from self.level(k)

    def __len__(self) -> int:
        """Return the number of non-root vertices."""
        return self.size

    @classmethod
    def regular(cls, r: int, m: int) -> TreeShape:
        """Return the m-regular shape of depth r."""
        return cls((m,) * r)

    @property
    def r(self) -> int:
        """Return the depth of the shape."""
        return len(self.m)

    @property
    def size(self) -> int:
        """Return ``|tau| = sum_k prod_{j<=k} m_j``."""
        return sum(prod(self.m[:k]) for k in range(1, self.r + 1))

    def leaves(self) -> list[Vertex]:
        """Return the depth-r vertices."""
        return self.level(self.r)

    def level(self, k: int) -> list[Vertex]:
        """Return the vertices at depth ``k`` in lexicographic order."""
        if not 0 <= k <= self.r:
            raise InvalidParameterError("depth", f"must lie in [0, {self.r}], got {k}")
        return list(product(*(range(1, mk + 1) for mk in self.m[:k])))

    def to_json(self) -> list[int]:
        """Serialize as ``[m_1, ..., m_r]``."""
        return list(self.m)


def children(v: Vertex, shape: TreeShape) -> list[Vertex]:
    """Return the children of ``v`` within ``shape``."""
    if v not in shape:
        raise InvalidParameterError("vertex", f"{list(v)} is not in shape {shape.m}")
    if len(v) == shape.r:
        raise LeafError(v)
    return [(*v, i) for i in range(1, shape.m[len(v)] + 1)]


def enumerate_vertices(shape: TreeShape) -> list[Vertex]:
    """Return all non-root vertices, by depth then lexicographically."""
    return list(shape)


def shift_vertex(v: Vertex, shape: TreeShape, i: int) -> Vertex:
    """Relabel ``v`` into the i-th shifted copy of ``shape``."""
    if i < 1:
        raise InvalidParameterError("i", f"must be >= 1, got {i}")
    if not v:
        return v
    return (v[0] + (i - 1) * shape.m[0], *v[1:])


def shift(shape: TreeShape, i: int) -> dict[Vertex, Vertex]:
    """Return the relabeling of ``shape`` onto its i-th shifted copy."""
    return {v: shift_vertex(v, shape, i) for v in (ROOT, *shape)}


def pruning(shape: TreeShape, blocks: int) -> list[dict[Vertex, Vertex]]:
    """Return the relabelings onto the disjoint copies 1..``blocks`` of ``shape``."""
    return [shift(shape, i) for i in range(1, blocks + 1)]


def _vertex_key(v: Vertex) -> str:
    return json.dumps(list(v))


@dataclass(frozen=True)
class WeightedTree:
    """Non-negative masses on every vertex of a shape."""

    shape: TreeShape
    weights: Mapping[Vertex, float] = field(repr=False)

    def __post_init__(self):
        """Validate that the weights cover exactly the shape."""
        weights = {tuple(v): float(w) for v, w in self.weights.items()}
        missing = [v for v in self.shape if v not in weights]
        if missing:
            raise InvalidParameterError(
                "weights", f"missing vertices, e.g. {list(missing[0])}"
            )
        extra = [v for v in weights if v and v not in self.shape]
        if extra:
            raise InvalidParameterError(
                "weights", f"vertex {list(extra[0])} is outside shape {self.shape.m}"
            )
        negative = [v for v, w in weights.items() if not w >= 0]
        if negative:
            raise InvalidParameterError(
                "weights", f"vertex {list(negative[0])} has a negative weight"
            )
        weights.pop(ROOT, None)
        object.__setattr__(self, "weights", MappingProxyType(weights))

    def __getitem__(self, v: Vertex) -> float:
        """Return the weight of ``v``; vertices outside the shape weigh 0."""
        return self.weights.get(tuple(v), 0.0)

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> WeightedTree:
        """Deserialize the output of :meth:`to_json`."""
        return cls(
            TreeShape(tuple(data["shape"])),
            {tuple(json.loads(k)): w for k, w in data["weights"].items()},
        )

    @classmethod
    def zeros(cls, shape: TreeShape) -> WeightedTree:
        """Return the all-zero tree on ``shape``."""
        return cls(shape, dict.fromkeys(shape, 0.0))

    def level_weights(self, k: int) -> np.ndarray:
        """Return the depth-k weights in vertex order."""
        return np.array([self.weights[v] for v in self.shape.level(k)])

    def padded(self, shape: TreeShape) -> WeightedTree:
        """Zero-pad onto a shape containing this one."""
        if shape.r != self.shape.r or any(
            a < b for a, b in zip(shape.m, self.shape.m)
        ):
            raise InvalidParameterError(
                "shape", f"{shape.m} does not contain {self.shape.m}"
            )
        return WeightedTree(shape, {v: self[v] for v in shape})

    def to_json(self) -> dict[str, Any]:
        """Serialize as ``{"shape": [...], "weights": {"[1,2]": w, ...}}``."""
        return {
            "shape": self.shape.to_json(),
            "weights": {_vertex_key(v): w for v, w in self.weights.items()},
        }


def standard_order(w: WeightedTree) -> tuple[WeightedTree, dict[Vertex, Vertex]]:
    """Rearrange siblings in decreasing weight, subtrees moving with their roots.

    Ties keep the original index order. The returned permutation maps each new
    vertex to the original vertex it came from.
    """
    permutation: dict[Vertex, Vertex] = {ROOT: ROOT}
    frontier: Sequence[Vertex] = [ROOT]
    for k in range(w.shape.r):
        next_frontier = []
        for new in frontier:
            old = permutation[new]
            kids = [(*old, i) for i in range(1, w.shape.m[k] + 1)]
            ranked = sorted(kids, key=lambda v: -w.weights[v])
            for index, old_child in enumerate(ranked, 1):
                permutation[(*new, index)] = old_child
                next_frontier.append((*new, index))
        frontier = next_frontier
    del permutation[ROOT]
    ordered = WeightedTree(w.shape, {v: w.weights[o] for v, o in permutation.items()})
    return ordered, permutation
