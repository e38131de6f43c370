"""Poisson-Dirichlet and Ruelle cascade samplers, their embeddings and encodings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Mapping, Sequence

import numpy as np

from .const import MASS_TOLERANCE
from .exceptions import (
    InvalidParameterError,
    NonUltrametricError,
    OffLevelError,
    TruncationError,
)
from .measure import OverlapLaw, OverlapMatrix, TreeMeasure
from .rates import phi_bound, solve_phi
from .trees import ROOT, TreeShape, Vertex, WeightedTree, children, enumerate_vertices
from .util import check_increasing, check_open_unit

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike

    from .measure import AtomicMeasure

__all__ = [
    "CascadeReport",
    "CascadeWeights",
    "OverlapMatrix",
    "OverlapTree",
    "PDSample",
    "RPCParams",
    "RostEmbedding",
    "decode_overlap_tree",
    "embed_rost",
    "encode_overlap_tree",
    "gamma_map",
    "interlace",
    "level_masses",
    "rpc_dust_bound",
    "rpc_overlap_law",
    "sample_overlap_matrix",
    "sample_pd",
    "sample_ppp_ranked",
    "sample_rpc",
    "truncation_for",
    "validate_cascade",
]

LEVEL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PDSample:
    """A truncated, normalized draw of the ranked PD(theta) masses."""

    atoms: np.ndarray
    theta: float
    total: float
    arrivals: np.ndarray = field(repr=False)
    dust: float = 0.0

    @property
    def normalizer(self) -> float:
        """Return ``L = S^(-theta)``."""
        return self.total ** (-self.theta)

    def to_json(self) -> dict[str, Any]:
        """Serialize the sample."""
        return {
            "atoms": self.atoms.tolist(),
            "dust": self.dust,
            "normalizer": self.normalizer,
            "theta": self.theta,
            "total": self.total,
        }


@dataclass(frozen=True)
class RPCParams:
    """Cumulative masses ``zeta`` and overlap levels ``q`` of a depth-r cascade."""

    zeta: tuple[float, ...]
    q: tuple[float, ...]

    def __post_init__(self):
        """Validate the parameters."""
        zeta = check_increasing("zeta", self.zeta, 0.0, 1.0)
        if zeta[-1] >= 1:
            raise InvalidParameterError("zeta", "must lie strictly below 1")
        q = check_increasing("q", self.q, 0.0, 1.0)
        if len(zeta) != len(q):
            raise InvalidParameterError(
                "q", f"need {len(zeta)} levels to match zeta, got {len(q)}"
            )
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "q", q)

    @property
    def r(self) -> int:
        """Return the depth."""
        return len(self.zeta)

    @property
    def levels(self) -> np.ndarray:
        """Return ``(q_0, ..., q_r)`` with ``q_0 = 0``."""
        return np.concatenate([[0.0], self.q])

    def to_json(self) -> dict[str, Any]:
        """Serialize the parameters."""
        return {"q": list(self.q), "zeta": list(self.zeta)}


@dataclass(frozen=True)
class CascadeWeights:
    """Vertex masses of a truncated cascade, plus the dustbin mass."""

    tree: WeightedTree
    dust: float | None = None

    def __post_init__(self):
        """Fill in the dustbin as the leaf deficit when it is not given."""
        if self.dust is None:
            leaves = float(self.tree.level_weights(self.shape.r).sum())
            object.__setattr__(self, "dust", max(0.0, 1.0 - leaves))

    def __getitem__(self, v: Vertex) -> float:
        """Return the mass of vertex ``v``."""
        return self.tree[v]

    @property
    def shape(self) -> TreeShape:
        """Return the truncation shape."""
        return self.tree.shape

    @property
    def weights(self) -> Mapping[Vertex, float]:
        """Return the vertex masses."""
        return self.tree.weights

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> CascadeWeights:
        """Deserialize the output of :meth:`to_json`."""
        return cls(WeightedTree.from_json(data), data.get("dust"))

    def to_json(self) -> dict[str, Any]:
        """Serialize as ``{"shape": [...], "weights": {...}, "dust": ...}``."""
        return {**self.tree.to_json(), "dust": self.dust}


@dataclass(frozen=True)
class CascadeReport:
    """The outcome of checking the cascade constraints."""

    valid: bool
    proper: bool
    violations: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        """Serialize the report."""
        return {
            "proper": self.proper,
            "valid": self.valid,
            "violations": list(self.violations),
        }


@dataclass(frozen=True)
class RostEmbedding:
    """Leaves of a cascade mapped to vectors ``h_alpha`` in an orthonormal basis.

    Every non-root vertex gets its own basis direction, in vertex order, and the
    dustbin takes the last one.
    """

    q: tuple[float, ...]
    leaves: tuple[Vertex, ...]
    basis: Mapping[Vertex, int] = field(repr=False)
    masses: np.ndarray = field(repr=False)
    dust: float = 0.0

    @property
    def dimension(self) -> int:
        """Return the number of basis directions."""
        return len(self.basis) + 1

    def vector(self, leaf: Vertex | None) -> np.ndarray:
        """Return ``h_alpha`` for a leaf, or the dustbin vector for ``None``."""
        levels = np.concatenate([[0.0], self.q])
        h = np.zeros(self.dimension)
        if leaf is None:
            h[-1] = math.sqrt(self.q[-1])
            return h
        for k in range(1, len(leaf) + 1):
            h[self.basis[leaf[:k]]] = math.sqrt(levels[k] - levels[k - 1])
        return h

    def vectors(self) -> np.ndarray:
        """Return the vectors of all leaves followed by the dustbin vector."""
        return np.vstack([self.vector(leaf) for leaf in (*self.leaves, None)])


@dataclass(frozen=True)
class OverlapTree:
    """Root-to-leaf paths of depth r+1 encoding an ultrametric overlap matrix."""

    paths: np.ndarray
    levels: np.ndarray
    diagonal: np.ndarray

    @property
    def n(self) -> int:
        """Return the number of replicas."""
        return self.paths.shape[0]

    def to_json(self) -> dict[str, Any]:
        """Serialize the encoding."""
        return {
            "diagonal": self.diagonal.tolist(),
            "levels": self.levels.tolist(),
            "paths": self.paths.tolist(),
        }


def _ranked_atoms(theta: float, arrivals: np.ndarray) -> np.ndarray:
    return arrivals ** (-1 / theta)


def sample_ppp_ranked(
    theta: float,
    K: int,
    rng: np.random.Generator | None = None,
    arrivals: ArrayLike | None = None,
) -> np.ndarray:
    """Return the K largest atoms of a Poisson process with intensity ``theta x^(-theta-1)``.

    The atoms are ``Gamma_k^(-1/theta)`` for unit-rate arrival times ``Gamma_k``,
    drawn from ``rng`` unless ``arrivals`` is given.
    """
    theta = check_open_unit("theta", theta)
    if arrivals is None:
        if K < 1:
            raise InvalidParameterError("K", f"must be >= 1, got {K}")
        arrivals = np.cumsum(rng.exponential(size=K))
    arrivals = np.asarray(arrivals, dtype=float)
    if np.any(arrivals <= 0) or np.any(np.diff(arrivals) < 0):
        raise InvalidParameterError("arrivals", "must be positive and increasing")
    return _ranked_atoms(theta, arrivals)


def sample_pd(
    theta: float,
    K: int,
    rng: np.random.Generator | None = None,
    *,
    tol: float | None = None,
    tail: str = "none",
    arrivals: ArrayLike | None = None,
) -> PDSample:
    """Draw the K largest PD(theta) masses.

    With ``tail="mean"`` the normalizer also counts the conditional mean mass
    ``theta / (1 - theta) u_K^(1 - theta)`` of the discarded atoms, which then
    becomes the sample's ``dust``. When ``tol`` is given the truncation must
    satisfy ``phi_bound(K, theta) <= tol``.
    """
    theta = check_open_unit("theta", theta)
    if tail not in ("none", "mean"):
        raise InvalidParameterError("tail", f"must be 'none' or 'mean', got {tail!r}")
    if tol is not None:
        bound = phi_bound(K, theta) if K >= 2 else math.inf
        if bound > tol:
            raise TruncationError(K, bound, tol)
    if arrivals is None:
        if K < 1:
            raise InvalidParameterError("K", f"must be >= 1, got {K}")
        arrivals = np.cumsum(rng.exponential(size=K))
    arrivals = np.asarray(arrivals, dtype=float)
    u = sample_ppp_ranked(theta, arrivals.size, arrivals=arrivals)
    total = float(u.sum())
    dust = 0.0
    if tail == "mean":
        remainder = theta / (1 - theta) * float(u[-1]) ** (1 - theta)
        total += remainder
        dust = remainder / total
    return PDSample(u / total, theta, total, arrivals, dust)


def _branching(m: int | Sequence[int], r: int) -> tuple[int, ...]:
    branching = (int(m),) * r if np.isscalar(m) else tuple(int(k) for k in m)
    if len(branching) != r or any(k < 1 for k in branching):
        raise InvalidParameterError("m", f"need {r} branching numbers >= 1")
    return branching


def sample_rpc(
    params: RPCParams,
    m: int | Sequence[int],
    rng: np.random.Generator,
    *,
    tail: str = "none",
) -> CascadeWeights:
    """Draw a truncated Ruelle cascade in standard order.

    Every internal vertex at depth k keeps the m_{k+1} largest atoms of its
    own ranked PPP(zeta_k), and subtree masses are summed bottom-up over the
    retained paths. By default they are normalized by the retained leaf
    products, so the cascade is proper and its dustbin is empty. With
    ``tail="mean"`` each vertex also adds the conditional mean mass of its
    discarded children and the mass lost to truncation is the dustbin.
    """
    if tail not in ("none", "mean"):
        raise InvalidParameterError("tail", f"must be 'none' or 'mean', got {tail!r}")
    shape = TreeShape(_branching(m, params.r))
    sizes = shape.m
    u = []
    for k, zeta in enumerate(params.zeta):
        spacings = rng.exponential(size=sizes[: k + 1])
        u.append(_ranked_atoms(zeta, np.cumsum(spacings, axis=-1)))

    subtree = [np.ones(sizes)]
    for k in reversed(range(params.r)):
        zeta, below = params.zeta[k], subtree[0]
        kept = (u[k] * below).sum(axis=-1)
        if tail == "mean":
            remainder = zeta / (1 - zeta) * u[k][..., -1] ** (1 - zeta)
            kept = kept + remainder * below.mean(axis=-1)
        subtree.insert(0, kept)
    normalizer = float(subtree[0])

    masses = []
    path_weight = np.ones(())
    for k in range(params.r):
        path_weight = path_weight[..., None] * u[k]
        masses.append(path_weight * subtree[k + 1] / normalizer)

    for k in range(params.r):
        order = np.argsort(-masses[k], axis=-1, kind="stable")
        for j in range(k, params.r):
            index = order.reshape(order.shape + (1,) * (j - k))
            masses[j] = np.take_along_axis(
                masses[j], np.broadcast_to(index, masses[j].shape), axis=k
            )

    weights = {}
    for k in range(params.r):
        weights.update(zip(shape.level(k + 1), masses[k].ravel().tolist()))
    leaves = float(masses[-1].sum())
    return CascadeWeights(WeightedTree(shape, weights), max(0.0, 1.0 - leaves))


def validate_cascade(c: CascadeWeights) -> CascadeReport:
    """Check standard order, per-depth sums and parent-children sums."""
    violations = []
    proper = True
    shape, tolerance = c.shape, MASS_TOLERANCE
    for v in (ROOT, *enumerate_vertices(shape)):
        if len(v) == shape.r:
            continue
        kids = [c[child] for child in children(v, shape)]
        if any(b > a + tolerance for a, b in zip(kids, kids[1:])):
            violations.append(f"standard order violated below {list(v)}")
        if v != ROOT:
            slack = c[v] - sum(kids)
            if slack < -tolerance:
                violations.append(
                    f"children of {list(v)} sum to {sum(kids):.6g} > {c[v]:.6g}"
                )
            elif slack > tolerance:
                proper = False
    for k in range(1, shape.r + 1):
        level = float(c.tree.level_weights(k).sum())
        if level > 1 + tolerance:
            violations.append(f"depth {k} masses sum to {level:.6g} > 1")
        elif level < 1 - tolerance:
            proper = False
    if not -tolerance <= c.dust <= 1 + tolerance:
        violations.append(f"dustbin mass {c.dust:.6g} outside [0, 1]")
    leaves = float(c.tree.level_weights(shape.r).sum())
    if abs(leaves + c.dust - 1) > 1e-9:
        violations.append(f"leaves and dustbin sum to {leaves + c.dust:.6g}, not 1")
    valid = not violations
    return CascadeReport(valid, valid and proper, tuple(violations))


def embed_rost(
    c: CascadeWeights, q: Sequence[float]
) -> tuple[RostEmbedding, TreeMeasure]:
    """Place every leaf at ``h_alpha`` and the dustbin at an orthogonal direction.

    Returns the explicit embedding and the atomic measure, whose overlap oracle
    is ``q`` at the meet depth.
    """
    q = check_increasing("q", q, 0.0, 1.0)
    if len(q) != c.shape.r:
        raise InvalidParameterError(
            "q", f"need {c.shape.r} levels for a depth-{c.shape.r} cascade"
        )
    leaves = tuple(c.shape.leaves())
    masses = c.tree.level_weights(c.shape.r)
    basis = {v: i for i, v in enumerate(enumerate_vertices(c.shape))}
    embedding = RostEmbedding(q, leaves, basis, masses, c.dust)
    measure = TreeMeasure(np.array(leaves).reshape(-1, len(q)), q, masses, c.dust)
    return embedding, measure


def rpc_overlap_law(params: RPCParams) -> OverlapLaw:
    """Return the overlap law with mass ``zeta_k - zeta_{k-1}`` at ``q_k``."""
    cumulative = np.concatenate([[0.0], params.zeta, [1.0]])
    return OverlapLaw(params.levels, np.diff(cumulative))


def sample_overlap_matrix(
    measure: AtomicMeasure, n: int, rng: np.random.Generator
) -> OverlapMatrix:
    """Draw ``n`` replicas by mass and return their pairwise overlaps."""
    if n < 1:
        raise InvalidParameterError("n", f"must be >= 1, got {n}")
    if measure.support().size == 0:
        raise InvalidParameterError("measure", "has empty support")
    atoms = measure.sample(n, rng)
    return OverlapMatrix(measure.overlap_block(atoms, atoms), atoms)


def gamma_map(q: float | ArrayLike, q_seq: Sequence[float]) -> float | np.ndarray:
    """Round overlaps down to the level set ``{0, q_1, ..., q_r}``.

    Values below ``q_1``, negatives included, map to 0.
    """
    q_seq = check_increasing("q_seq", q_seq, -1.0, 1.0)
    levels = np.concatenate([[0.0], q_seq])
    values = np.asarray(q, dtype=float)
    mapped = levels[np.searchsorted(q_seq, values, side="right")]
    return float(mapped) if mapped.ndim == 0 else mapped


def interlace(q: Sequence[float]) -> tuple[float, ...]:
    """Return radii strictly between consecutive overlap levels ``q_0 < ... < q_r``."""
    levels = np.concatenate([[0.0], check_increasing("q", q, 0.0, 1.0)])
    return tuple(((levels[:-1] + levels[1:]) / 2).tolist())


def rpc_dust_bound(params: RPCParams, m: int | Sequence[int]) -> float:
    """Return the bound ``sum_k phi(m_k; zeta_{k-1})`` on the expected dustbin mass."""
    branching = _branching(m, params.r)
    return sum(
        phi_bound(mk, zeta) if mk >= 2 else math.inf
        for mk, zeta in zip(branching, params.zeta)
    )


def truncation_for(theta: float, tol: float) -> int:
    """Return the least truncation m with ``phi_bound(m, theta) <= tol``."""
    return solve_phi(theta, tol)


def level_masses(c: CascadeWeights, k: int) -> np.ndarray:
    """Return the depth-k masses in decreasing order."""
    return np.sort(c.tree.level_weights(k))[::-1]


def _level_indices(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    distance = np.abs(values[..., None] - levels)
    index = distance.argmin(axis=-1)
    off = np.take_along_axis(distance, index[..., None], axis=-1)[..., 0]
    off[np.diag_indices_from(off)] = 0
    bad = np.argwhere(off > LEVEL_TOLERANCE)
    if bad.size:
        i, j = bad[0]
        raise OffLevelError((int(i), int(j)), float(values[i, j]), levels.tolist())
    return index


def encode_overlap_tree(M: OverlapMatrix, q: Sequence[float]) -> OverlapTree:  # noqa: N803
    """Encode an ultrametric overlap matrix on ``{q_0, ..., q_r}`` as a tree.

    Replicas i and j share their ancestors down to the depth k with
    ``R_ij = q_k``; every replica gets its own leaf at depth r+1. Children are
    numbered in order of first appearance.
    """
    levels = np.concatenate([[0.0], check_increasing("q", q, 0.0, 1.0)])
    r, n = levels.size - 1, M.n
    index = _level_indices(M.values, levels)
    np.fill_diagonal(index, r)

    if n >= 3:
        bound = np.minimum(index[:, None, :], index.T[None, :, :])
        violated = index[:, :, None] < bound
        distinct = (
            ~np.eye(n, dtype=bool)[:, :, None]
            & ~np.eye(n, dtype=bool)[:, None, :]
            & ~np.eye(n, dtype=bool)[None, :, :]
        )
        bad = np.argwhere(violated & distinct)
        if bad.size:
            i, j, k = (int(x) for x in bad[0])
            values = (M.values[i, j], M.values[i, k], M.values[k, j])
            raise NonUltrametricError((i, j, k), tuple(float(x) for x in values))

    paths = np.zeros((n, r + 1), dtype=np.int64)
    for depth in range(1, r + 2):
        counters: dict[tuple[int, ...], int] = {}
        for i in range(n):
            prefix = tuple(paths[i, : depth - 1].tolist())
            sibling = next(
                (j for j in range(i) if depth <= r and index[i, j] >= depth), None
            )
            if sibling is not None:
                paths[i, depth - 1] = paths[sibling, depth - 1]
            else:
                counters[prefix] = counters.get(prefix, 0) + 1
                paths[i, depth - 1] = counters[prefix]
    return OverlapTree(paths, levels, np.diag(M.values).copy())


def decode_overlap_tree(tree: OverlapTree) -> OverlapMatrix:
    """Rebuild the overlap matrix from an :class:`OverlapTree`."""
    paths = tree.paths[:, :-1]
    same = paths[:, None, :] == paths[None, :, :]
    values = tree.levels[np.cumprod(same, axis=-1).sum(axis=-1)]
    np.fill_diagonal(values, tree.diagonal)
    return OverlapMatrix(values)
