"""Hierarchical clustering of atomic measures by nested sampled balls.

A block of center atoms, one per vertex of a finite tree shape, defines nested
closed balls. When their masses pass the exhaustion event the balls are
cleaned into cousin-disjoint clusters whose masses play the role of cascade
weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import TYPE_CHECKING, Any, Mapping, Sequence

import numpy as np

from .cascades import interlace
from .const import (
    DEFAULT_ATOM_CAP,
    DEFAULT_ATOM_WINDOW,
    DEFAULT_EDGE_FLOOR,
    DEFAULT_GAP_FLOOR,
    EXACT_ATOM_LIMIT,
    MASS_TOLERANCE,
    THRESHOLD_SLACK,
)
from .exceptions import InsufficientMassError, InvalidParameterError
from .measure import AtomicMeasure
from .trees import (
    ROOT,
    Relation,
    TreeShape,
    Vertex,
    WeightedTree,
    ancestors,
    enumerate_vertices,
    relation,
    shift,
    standard_order,
)
from .util import EstimateWithError, RunningStats, check_increasing

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike

    from .measure import OverlapLaw

__all__ = [
    "AdmissibleSequence",
    "AtomicMeasure",
    "BallFamily",
    "BallWeights",
    "ClusterDecomposition",
    "ball_moment",
    "ball_weights",
    "build_balls",
    "check_exhaustion_event",
    "clean_clusters",
    "cluster_masses",
    "clustering_stats",
    "greedy_tree_shape",
    "h_statistic",
    "interlaced_sequence",
    "moment_event_probability",
    "orthogonal_structure_check",
    "pure_state_variant",
    "search_exhaustion",
    "validate_admissible",
]


def _vertex_order(v: Vertex) -> tuple[int, Vertex]:
    return len(v), v


@lru_cache(maxsize=64)
def _cousins(vertices: tuple[Vertex, ...]) -> np.ndarray:
    return np.array(
        [[relation(a, b) is Relation.COUSINS for b in vertices] for a in vertices]
    )


@dataclass(frozen=True)
class AdmissibilityCheck:
    """One measured admissibility condition."""

    name: str
    value: float
    bound: str
    passed: bool


@dataclass(frozen=True)
class AdmissibilityReport:
    """All admissibility conditions of a sequence against a reference law."""

    checks: tuple[AdmissibilityCheck, ...]

    @property
    def passed(self) -> bool:
        """Return whether every condition holds."""
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> list[AdmissibilityCheck]:
        """Return the failed conditions."""
        return [check for check in self.checks if not check.passed]

    def to_json(self) -> dict[str, Any]:
        """Serialize the report."""
        return {
            "checks": [check.__dict__ for check in self.checks],
            "passed": self.passed,
        }


@dataclass(frozen=True)
class AdmissibleSequence:
    """Increasing radii ``q_1 < ... < q_r`` with the law they are checked against.

    ``window`` and ``atom_cap`` bound the law's mass near each radius;
    ``gap_floor`` is the least mass between consecutive radii and
    ``edge_floor`` the least mass below the first and above the last.
    """

    q: tuple[float, ...]
    law: OverlapLaw = field(repr=False)
    window: float = DEFAULT_ATOM_WINDOW
    atom_cap: float = DEFAULT_ATOM_CAP
    gap_floor: float = DEFAULT_GAP_FLOOR
    edge_floor: float = DEFAULT_EDGE_FLOOR

    def __post_init__(self):
        """Validate the radii."""
        object.__setattr__(self, "q", check_increasing("q", self.q, 0.0, 1.0))

    @property
    def r(self) -> int:
        """Return the number of radii."""
        return len(self.q)

    def validate(self) -> AdmissibilityReport:
        """Measure every admissibility condition on the law."""
        law, q = self.law, self.q
        checks = []
        for k, radius in enumerate(q, 1):
            mass = law.window_mass(radius, self.window)
            checks.append(
                AdmissibilityCheck(
                    f"atom near q_{k}", mass, f"<= {self.atom_cap}", mass <= self.atom_cap
                )
            )
        for k in range(1, len(q)):
            mass = law.mass(q[k - 1], q[k])
            checks.append(
                AdmissibilityCheck(
                    f"mass in [q_{k}, q_{k + 1}]",
                    mass,
                    f">= {self.gap_floor}",
                    mass >= self.gap_floor,
                )
            )
        low, high = self.edge_floor, 1 - self.edge_floor
        for name, mass in (
            ("mass in [0, q_1]", law.mass(0.0, q[0])),
            (f"mass in [q_{len(q)}, 1]", law.mass(q[-1], 1.0)),
        ):
            checks.append(
                AdmissibilityCheck(
                    name, mass, f"in [{low}, {high}]", low <= mass <= high
                )
            )
        return AdmissibilityReport(tuple(checks))


def validate_admissible(
    zeta_hat: OverlapLaw, q: Sequence[float], **tolerances: float
) -> AdmissibilityReport:
    """Check ``q`` against the law ``zeta_hat``.

    ``tolerances`` may override ``window``, ``atom_cap``, ``gap_floor`` and
    ``edge_floor``.
    """
    return AdmissibleSequence(tuple(q), zeta_hat, **tolerances).validate()


def interlaced_sequence(law: OverlapLaw, q: Sequence[float]) -> AdmissibleSequence:
    """Return radii midway between the overlap levels ``0 < q_1 < ... < q_r``."""
    return AdmissibleSequence(interlace(q), law)


@dataclass(frozen=True)
class BallFamily:
    """Nested closed balls around one center atom per vertex.

    ``inside[i]`` marks the atoms of ``B_alpha`` for ``alpha = vertices[i]``,
    the intersection of the balls of radius ``q_{|beta|}`` around the centers of
    every ancestor ``beta`` of ``alpha``.
    """

    vertices: tuple[Vertex, ...]
    centers: np.ndarray
    q: tuple[float, ...]
    inside: np.ndarray = field(repr=False)
    shape: TreeShape | None = None

    def index(self, v: Vertex) -> int:
        """Return the row of vertex ``v``."""
        try:
            return self.vertices.index(tuple(v))
        except ValueError:
            raise InvalidParameterError(
                "vertex", f"{list(v)} is not in the family"
            ) from None

    def members(self, v: Vertex) -> np.ndarray:
        """Return the atom ids of ``B_v``."""
        return np.flatnonzero(self.inside[self.index(v)])

    def center_map(self) -> dict[Vertex, int]:
        """Return the center atom of every vertex."""
        return dict(zip(self.vertices, self.centers.tolist()))


def build_balls(
    measure: AtomicMeasure,
    centers: Mapping[Vertex, int],
    q: Sequence[float],
    shape: TreeShape | None = None,
) -> BallFamily:
    """Build the nested balls ``B_alpha`` around ``centers``."""
    q = check_increasing("q", q, -1.0, 1.0)
    vertices = tuple(sorted((tuple(v) for v in centers), key=_vertex_order))
    known = set(vertices)
    for v in vertices:
        if len(v) > len(q):
            raise InvalidParameterError("centers", f"vertex {list(v)} is deeper than q")
        if len(v) > 1 and v[:-1] not in known:
            raise InvalidParameterError(
                "centers", f"vertex {list(v)} has no center for its parent"
            )
    ids = np.array([centers[v] for v in vertices], dtype=np.intp)
    thresholds = np.array([q[len(v) - 1] for v in vertices])
    inside = (
        measure.overlap_block(ids, np.arange(measure.size))
        >= thresholds[:, None] - THRESHOLD_SLACK
    )
    row = {v: i for i, v in enumerate(vertices)}
    for i, v in enumerate(vertices):
        if len(v) > 1:
            inside[i] &= inside[row[v[:-1]]]
    return BallFamily(vertices, ids, q, inside, shape)


@dataclass(frozen=True)
class BallWeights:
    """Masses ``W_E`` of every ball and every pairwise intersection."""

    vertices: tuple[Vertex, ...]
    single: np.ndarray
    pair: np.ndarray = field(repr=False)

    @classmethod
    def from_masses(
        cls, masses: Mapping[Vertex, float] | WeightedTree, shape: TreeShape
    ) -> BallWeights:
        """Return the weights of ideal balls equal to the subtrees of ``masses``.

        Nested subtrees intersect in the deeper one; cousins do not intersect.
        """
        weights = masses.weights if isinstance(masses, WeightedTree) else masses
        vertices = tuple(enumerate_vertices(shape))
        single = np.array([float(weights.get(v, 0.0)) for v in vertices])
        pair = np.zeros((len(vertices), len(vertices)))
        for i, a in enumerate(vertices):
            for j, b in enumerate(vertices):
                link = relation(a, b)
                if link is Relation.EQUAL or link is Relation.DESCENDANT:
                    pair[i, j] = single[i]
                elif link is Relation.ANCESTOR:
                    pair[i, j] = single[j]
        return cls(vertices, single, pair)

    def _row(self, v: Vertex) -> int:
        try:
            return self.vertices.index(tuple(v))
        except ValueError:
            raise InvalidParameterError(
                "vertex", f"{list(v)} has no ball weight"
            ) from None

    def weight(self, v: Vertex) -> float:
        """Return ``W_{{v}}``."""
        return float(self.single[self._row(v)])

    def joint(self, a: Vertex, b: Vertex) -> float:
        """Return ``W_{{a, b}}``."""
        return float(self.pair[self._row(a), self._row(b)])


def ball_weights(measure: AtomicMeasure, family: BallFamily) -> BallWeights:
    """Return the masses of all balls of ``family`` and their pairwise intersections."""
    inside = family.inside.astype(float)
    weighted = inside * measure.masses
    return BallWeights(family.vertices, inside @ measure.masses, weighted @ inside.T)


@dataclass(frozen=True)
class ExhaustionReport:
    """The three clause families of the exhaustion event, measured."""

    passed: bool
    depth_sums: tuple[float, ...]
    slacks: Mapping[Vertex, float]
    cousin_total: float
    cousin_limit: float
    boundary: tuple[Vertex, ...] = ()
    failures: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        """Serialize the report."""
        return {
            "boundary": [list(v) for v in self.boundary],
            "cousin_limit": self.cousin_limit,
            "cousin_total": self.cousin_total,
            "depth_sums": list(self.depth_sums),
            "failures": list(self.failures),
            "passed": self.passed,
            "slacks": {str(list(v)): s for v, s in self.slacks.items()},
        }


def check_exhaustion_event(
    W: BallWeights,  # noqa: N803
    shape: TreeShape,
    eps: float,
    delta: float,
) -> ExhaustionReport:
    """Evaluate the exhaustion event on the ball weights of ``shape``.

    Every depth must carry mass above ``1 - eps``, every parent-minus-children
    slack must lie in ``[0, eps)``, and cousin intersections must total less
    than ``delta / |tau|^2``. Slacks landing on ``eps`` itself are listed in
    ``boundary``.
    """
    failures = []
    depth_sums = []
    for k in range(1, shape.r + 1):
        total = sum(W.weight(v) for v in shape.level(k))
        depth_sums.append(total)
        if not total > 1 - eps:
            failures.append(f"depth {k} carries {total:.6g} <= 1 - eps")

    slacks, boundary = {}, []
    for v in enumerate_vertices(shape):
        if len(v) == shape.r:
            continue
        kids = [(*v, i) for i in range(1, shape.m[len(v)] + 1)]
        slack = W.weight(v) - sum(W.weight(c) for c in kids)
        slacks[v] = slack
        if math.isclose(slack, eps, abs_tol=MASS_TOLERANCE):
            boundary.append(v)
        if not -MASS_TOLERANCE <= slack < eps:
            failures.append(f"slack {slack:.6g} of {list(v)} outside [0, eps)")

    vertices = tuple(enumerate_vertices(shape))
    rows = [W._row(v) for v in vertices]
    cousins = np.triu(_cousins(vertices), k=1)
    cousin_total = float(W.pair[np.ix_(rows, rows)][cousins].sum())
    cousin_limit = delta / len(shape) ** 2
    if not cousin_total < cousin_limit:
        failures.append(f"cousin intersections {cousin_total:.6g} >= {cousin_limit:.6g}")
    return ExhaustionReport(
        not failures,
        tuple(depth_sums),
        slacks,
        cousin_total,
        cousin_limit,
        tuple(boundary),
        tuple(failures),
    )


def greedy_tree_shape(
    nested_masses: Mapping[Vertex, float] | WeightedTree, eps: float
) -> TreeShape:
    """Return the smallest shape whose masses nearly exhaust every depth.

    The first branching number is the least count of top masses exceeding
    ``1 - eps``. Deeper numbers recover each parent's mass to within ``eps``
    and are then raised until the depth total exceeds ``1 - eps``.
    """
    weights = (
        nested_masses.weights if isinstance(nested_masses, WeightedTree) else nested_masses
    )
    vertices = [tuple(v) for v in weights if v]
    if not vertices:
        raise InvalidParameterError("nested_masses", "must not be empty")
    r = max(len(v) for v in vertices)
    available = [
        max(v[k] for v in vertices if len(v) > k) for k in range(r)
    ]
    if eps >= 1:
        return TreeShape((1,) * r)

    def mass(v: Vertex) -> float:
        return float(weights.get(v, 0.0))

    def depth_total(prefix: tuple[int, ...]) -> float:
        return sum(mass(v) for v in TreeShape(prefix).level(len(prefix)))

    branching: list[int] = []
    for k in range(r):
        parents = TreeShape(tuple(branching)).level(k) if branching else [ROOT]
        least = 1
        for p in parents:
            target = 1 - eps if p == ROOT else mass(p) - eps
            running = 0.0
            for count in range(1, available[k] + 1):
                running += mass((*p, count))
                if running > target:
                    least = max(least, count)
                    break
            else:
                least = available[k]
        m_k = least
        while depth_total((*branching, m_k)) <= 1 - eps and m_k < available[k]:
            m_k += 1
        reached = depth_total((*branching, m_k))
        if not reached > 1 - eps:
            raise InsufficientMassError(k + 1, reached, 1 - eps)
        branching.append(m_k)
    return TreeShape(tuple(branching))


@dataclass(frozen=True)
class SearchResult:
    """The first center block passing the exhaustion event."""

    family: BallFamily
    block: int
    weights: BallWeights
    report: ExhaustionReport

    def shifted_vertices(self) -> dict[Vertex, Vertex]:
        """Return the labels of the winning block within the pruned tree."""
        return shift(self.family.shape, self.block)


def search_exhaustion(
    measure: AtomicMeasure,
    q: AdmissibleSequence | Sequence[float],
    eps: float,
    delta: float,
    shape: TreeShape,
    M: int,  # noqa: N803
    rng: np.random.Generator,
) -> SearchResult | None:
    """Scan ``M`` i.i.d. center blocks in order and return the first success.

    All centers are drawn by mass up front, with replacement; ``None`` means no
    block passed.
    """
    levels = q.q if isinstance(q, AdmissibleSequence) else tuple(q)
    if len(levels) != shape.r:
        raise InvalidParameterError("q", f"need {shape.r} radii, got {len(levels)}")
    if M < 1:
        raise InvalidParameterError("M", f"must be >= 1, got {M}")
    vertices = enumerate_vertices(shape)
    draws = measure.sample(M * len(vertices), rng).reshape(M, len(vertices))
    for block, row in enumerate(draws, 1):
        family = build_balls(measure, dict(zip(vertices, row.tolist())), levels, shape)
        weights = ball_weights(measure, family)
        report = check_exhaustion_event(weights, shape, eps, delta)
        if report.passed:
            return SearchResult(family, block, weights, report)
    return None


@dataclass(frozen=True)
class ClusteringStats:
    """Within-cluster far mass ``f`` and cross-cluster close mass ``g``."""

    a: float
    f: Mapping[Vertex, EstimateWithError]
    g: Mapping[tuple[Vertex, Vertex], EstimateWithError]
    mode: str

    @property
    def f_total(self) -> float:
        """Return the summed f values."""
        return sum(e.value for e in self.f.values())

    @property
    def g_total(self) -> float:
        """Return the summed g values."""
        return sum(e.value for e in self.g.values())

    @property
    def b(self) -> float:
        """Return the largest f or g probability."""
        values = [e.value for e in (*self.f.values(), *self.g.values())]
        return max(values, default=0.0)

    def to_json(self) -> dict[str, Any]:
        """Serialize the statistics."""
        return {
            "a": self.a,
            "b": self.b,
            "f": {str(list(v)): e.to_json() for v, e in self.f.items()},
            "f_total": self.f_total,
            "g": {
                f"{list(a)}|{list(b)}": e.to_json() for (a, b), e in self.g.items()
            },
            "g_total": self.g_total,
            "mode": self.mode,
        }


@dataclass(frozen=True)
class ClusterDecomposition:
    """Cousin-disjoint clusters ``C_alpha`` with their masses and exhaustion report."""

    shape: TreeShape
    members: np.ndarray = field(repr=False)
    masses: np.ndarray
    depth_sums: tuple[float, ...]
    slacks: Mapping[Vertex, float]
    eps_achieved: float
    stats: ClusteringStats | None = None

    @classmethod
    def empty(cls, shape: TreeShape, n_atoms: int = 0) -> ClusterDecomposition:
        """Return the decomposition with no clusters on ``shape``."""
        size = len(shape)
        return cls(
            shape,
            np.zeros((size, n_atoms), dtype=bool),
            np.zeros(size),
            (0.0,) * shape.r,
            {v: 0.0 for v in shape if len(v) < shape.r},
            1.0,
        )

    @property
    def vertices(self) -> tuple[Vertex, ...]:
        """Return the vertices in row order."""
        return tuple(enumerate_vertices(self.shape))

    def cluster(self, v: Vertex) -> np.ndarray:
        """Return the atom ids of ``C_v``."""
        return np.flatnonzero(self.members[self.vertices.index(tuple(v))])

    def mass(self, v: Vertex) -> float:
        """Return ``mu(C_v)``."""
        return float(self.masses[self.vertices.index(tuple(v))])

    def labels(self, k: int) -> np.ndarray:
        """Return per atom the position of its depth-k cluster, or -1."""
        level = self.shape.level(k)
        rows = [self.vertices.index(v) for v in level]
        block = self.members[rows]
        labels = np.full(self.members.shape[1], -1, dtype=np.int64)
        hit = block.any(axis=0)
        labels[hit] = block[:, hit].argmax(axis=0)
        return labels

    def to_json(self, include_members: bool = True) -> dict[str, Any]:
        """Serialize; without members only sizes and masses are kept."""
        clusters = {}
        for v, row, mass in zip(self.vertices, self.members, self.masses):
            entry: dict[str, Any] = {"mass": float(mass), "size": int(row.sum())}
            if include_members:
                entry["atoms"] = np.flatnonzero(row).tolist()
            clusters[str(list(v))] = entry
        return {
            "clusters": clusters,
            "depth_sums": list(self.depth_sums),
            "eps_achieved": self.eps_achieved,
            "shape": self.shape.to_json(),
            "slacks": {str(list(v)): s for v, s in self.slacks.items()},
            "stats": None if self.stats is None else self.stats.to_json(),
        }


def clean_clusters(family: BallFamily, measure: AtomicMeasure) -> ClusterDecomposition:
    """Remove from every ball the atoms of the balls of its cousins."""
    if family.shape is None:
        raise InvalidParameterError("family", "needs a tree shape")
    shape = family.shape
    order = [family.index(v) for v in enumerate_vertices(shape)]
    inside = family.inside[order]
    vertices = tuple(enumerate_vertices(shape))
    covered = _cousins(vertices).astype(np.int64) @ inside.astype(np.int64)
    members = inside & (covered == 0)
    masses = members.astype(float) @ measure.masses

    row = {v: i for i, v in enumerate(vertices)}
    depth_sums = tuple(
        float(sum(masses[row[v]] for v in shape.level(k)))
        for k in range(1, shape.r + 1)
    )
    slacks = {
        v: float(
            masses[row[v]]
            - sum(masses[row[(*v, i)]] for i in range(1, shape.m[len(v)] + 1))
        )
        for v in vertices
        if len(v) < shape.r
    }
    eps = max(0.0, 1 - min(depth_sums), *slacks.values())
    return ClusterDecomposition(shape, members, masses, depth_sums, slacks, eps)


def _threshold_mass(
    measure: AtomicMeasure,
    rows: np.ndarray,
    cols: np.ndarray,
    row_weights: np.ndarray,
    col_weights: np.ndarray,
    close: float,
) -> np.ndarray:
    """Return ``row_weights @ 1{R >= close} @ col_weights.T`` summed blockwise."""
    total = np.zeros((row_weights.shape[0], col_weights.shape[0]))
    if rows.size == 0 or cols.size == 0:
        return total
    start = 0
    for block, overlaps in measure.iter_blocks(rows, cols):
        near = (overlaps >= close - THRESHOLD_SLACK).astype(float)
        total += row_weights[:, start : start + block.size] @ (near @ col_weights.T)
        start += block.size
    return total


def clustering_stats(
    measure: AtomicMeasure,
    decomposition: ClusterDecomposition,
    q: Sequence[float],
    eps: float,
    rng: np.random.Generator | None = None,
    samples: int = 20000,
) -> ClusteringStats:
    """Measure how far apart pairs inside a cluster and how close cousin pairs are.

    ``f[alpha]`` is the pair mass inside ``C_alpha`` with overlap at most
    ``q_{|alpha|} - eps``; ``g[alpha, beta]`` is the pair mass across cousins
    meeting at depth k with overlap at least ``q_{k+1} + eps``. Sums are exact
    up to ``EXACT_ATOM_LIMIT`` atoms and Monte Carlo beyond.
    """
    q = check_increasing("q", q, -1.0, 1.0)
    shape = decomposition.shape
    vertices = decomposition.vertices
    members = decomposition.members
    cousin_pairs = [
        (i, j)
        for i, j in zip(*np.nonzero(np.triu(_cousins(vertices), k=1)))
    ]

    def meet_depth(i: int, j: int) -> int:
        a, b = vertices[i], vertices[j]
        k = 0
        while a[k] == b[k]:
            k += 1
        return k

    if measure.size > EXACT_ATOM_LIMIT:
        if rng is None:
            raise InvalidParameterError("rng", "needed above the exact atom limit")
        x, y = measure.sample(samples, rng), measure.sample(samples, rng)
        overlaps = measure.pair_overlaps(x, y)
        in_x, in_y = members[:, x], members[:, y]
        f = {
            v: RunningStats.of(
                in_x[i] & in_y[i] & (overlaps <= q[len(v) - 1] - eps + THRESHOLD_SLACK)
            ).estimate()
            for i, v in enumerate(vertices)
        }
        g = {
            (vertices[i], vertices[j]): RunningStats.of(
                in_x[i]
                & in_y[j]
                & (overlaps >= q[meet_depth(i, j)] + eps - THRESHOLD_SLACK)
            ).estimate()
            for i, j in cousin_pairs
        }
        return ClusteringStats(eps, f, g, "mc")

    masses = measure.masses
    f = {}
    for i, v in enumerate(vertices):
        atoms = np.flatnonzero(members[i])
        far = q[len(v) - 1] - eps + THRESHOLD_SLACK
        value = measure.pair_mass(atoms, atoms, lambda r, far=far: r <= far)
        f[v] = EstimateWithError(value, 0.0, atoms.size, "exact")

    row = {v: i for i, v in enumerate(vertices)}
    descendants = {
        v: [row[d] for d in vertices if d[: len(v)] == v] for v in vertices
    }
    g = {}
    for parent in (ROOT, *(v for v in vertices if len(v) < shape.r)):
        k = len(parent)
        kids = [(*parent, i) for i in range(1, shape.m[k] + 1)]
        for a in range(len(kids)):
            for b in range(a + 1, len(kids)):
                left, right = descendants[kids[a]], descendants[kids[b]]
                rows = np.flatnonzero(members[row[kids[a]]])
                cols = np.flatnonzero(members[row[kids[b]]])
                joint = _threshold_mass(
                    measure,
                    rows,
                    cols,
                    members[np.ix_(left, rows)] * masses[rows],
                    members[np.ix_(right, cols)] * masses[cols],
                    q[k] + eps,
                )
                for li, i in enumerate(left):
                    for ri, j in enumerate(right):
                        g[(vertices[i], vertices[j])] = EstimateWithError(
                            float(joint[li, ri]), 0.0, rows.size * cols.size, "exact"
                        )
    return ClusteringStats(eps, f, g, "exact")


def cluster_masses(
    decomposition: ClusterDecomposition, shape: TreeShape | None = None
) -> tuple[WeightedTree, dict[Vertex, Vertex]]:
    """Return the cluster masses ``Y_alpha`` in standard order and the permutation.

    With ``shape`` the masses are zero-padded onto it first.
    """
    tree = WeightedTree(
        decomposition.shape,
        dict(zip(decomposition.vertices, decomposition.masses.tolist())),
    )
    if shape is not None:
        tree = tree.padded(shape)
    return standard_order(tree)


@dataclass(frozen=True)
class OrthogonalReport:
    """Pairwise ``<|R_12| 1{x in A_k, y in A_l}>`` values of the leading clusters."""

    values: Mapping[tuple[int, int], float]
    masses: tuple[float, ...]
    eps: float
    floor_passed: bool = True

    @property
    def passed(self) -> bool:
        """Return whether every pair value is below ``eps``."""
        return all(v < self.eps for v in self.values.values())

    def to_json(self) -> dict[str, Any]:
        """Serialize the report."""
        return {
            "floor_passed": self.floor_passed,
            "masses": list(self.masses),
            "passed": self.passed,
            "values": {f"{k},{l}": v for (k, l), v in self.values.items()},
        }


def orthogonal_structure_check(
    measure: AtomicMeasure,
    clusters: Sequence[ArrayLike],
    eps: float,
    k0: int,
    floor: Sequence[float] | None = None,
) -> OrthogonalReport:
    """Sum ``|R_12|`` over pairs drawn from distinct clusters among the first ``k0``.

    ``floor`` optionally gives lower bounds ``a_k`` for the cluster masses.
    """
    if not 1 <= k0 <= len(clusters):
        raise InvalidParameterError(
            "k0", f"must lie in [1, {len(clusters)}], got {k0}"
        )
    sets = [np.asarray(c, dtype=np.intp) for c in clusters[:k0]]
    masses = tuple(float(measure.masses[s].sum()) for s in sets)
    values = {
        (k, l): measure.pair_mass(sets[k], sets[l], np.abs)
        for k in range(k0)
        for l in range(k + 1, k0)  # noqa: E741
    }
    floor_passed = floor is None or all(m >= a for m, a in zip(masses, floor))
    return OrthogonalReport(values, masses, eps, floor_passed)


def h_statistic(measure: AtomicMeasure, q_star: float, Delta: float) -> float:  # noqa: N803
    """Return the pair mass with overlap at least ``q_star + Delta``."""
    atoms = np.arange(measure.size)
    close = q_star + Delta - THRESHOLD_SLACK
    return measure.pair_mass(atoms, atoms, lambda r: r >= close)


@dataclass(frozen=True)
class PureStateResult:
    """Leaf clusters around a single self-overlap level and their spread."""

    found: bool
    q_star: float
    leaf_sets: tuple[np.ndarray, ...] = ()
    masses: tuple[float, ...] = ()
    deviations: tuple[float, ...] = ()
    h_statistics: tuple[float, ...] = ()
    h_total: float = 0.0
    decomposition: ClusterDecomposition | None = field(default=None, repr=False)

    def to_json(self) -> dict[str, Any]:
        """Serialize the result."""
        return {
            "deviations": list(self.deviations),
            "found": self.found,
            "h_statistics": list(self.h_statistics),
            "h_total": self.h_total,
            "masses": list(self.masses),
            "q_star": self.q_star,
        }


def pure_state_variant(
    measure: AtomicMeasure,
    q_star: float,
    Delta: float,  # noqa: N803
    eps: float,
    shape: TreeShape,
    M: int,  # noqa: N803
    rng: np.random.Generator,
    q_lower: Sequence[float] = (),
    delta: float | None = None,
) -> PureStateResult:
    """Cluster with the deepest radius at ``q_star - Delta`` and measure the leaves.

    Leaves come in decreasing mass order with the pair integral of
    ``|R_12 - q_star|`` over each and its mass with ``R_12 >= q_star + Delta``.
    """
    if not 0 < q_star <= 1:
        raise InvalidParameterError("q_star", f"must lie in (0, 1], got {q_star}")
    if not 0 < Delta < q_star:
        raise InvalidParameterError("Delta", f"must lie in (0, q_star), got {Delta}")
    levels = (*q_lower, q_star - Delta)
    result = search_exhaustion(
        measure, levels, eps, eps if delta is None else delta, shape, M, rng
    )
    h_total = h_statistic(measure, q_star, Delta)
    if result is None:
        return PureStateResult(False, q_star, h_total=h_total)
    decomposition = clean_clusters(result.family, measure)
    leaves = sorted(
        (decomposition.cluster(v) for v in shape.leaves()),
        key=lambda atoms: -measure.masses[atoms].sum(),
    )
    close = q_star + Delta - THRESHOLD_SLACK
    return PureStateResult(
        True,
        q_star,
        tuple(leaves),
        tuple(float(measure.masses[a].sum()) for a in leaves),
        tuple(
            measure.pair_mass(a, a, lambda r: np.abs(r - q_star)) for a in leaves
        ),
        tuple(measure.pair_mass(a, a, lambda r: r >= close) for a in leaves),
        h_total,
        decomposition,
    )


def _closure(vertex_powers: Mapping[Vertex, int]) -> tuple[Vertex, ...]:
    closed = {a for v in vertex_powers for a in ancestors(tuple(v))}
    return tuple(sorted(closed, key=_vertex_order))


def ball_moment(
    measure: AtomicMeasure,
    vertex_powers: Mapping[Vertex, int],
    q: Sequence[float],
    rng: np.random.Generator,
    samples: int = 1000,
) -> EstimateWithError:
    """Estimate ``E prod_alpha W_alpha^(n_alpha)`` over redrawn centers."""
    vertices = _closure(vertex_powers)
    draws = measure.sample(samples * len(vertices), rng).reshape(samples, -1)
    values = []
    for row in draws:
        family = build_balls(measure, dict(zip(vertices, row.tolist())), q)
        weights = family.inside.astype(float) @ measure.masses
        values.append(
            math.prod(
                weights[family.index(v)] ** power for v, power in vertex_powers.items()
            )
        )
    return RunningStats.of(values).estimate()


def moment_event_probability(
    measure: AtomicMeasure,
    vertex_powers: Mapping[Vertex, int],
    q: Sequence[float],
    rng: np.random.Generator,
    samples: int = 10000,
) -> EstimateWithError:
    """Estimate the probability that ``n_alpha`` fresh replicas fall in every ``B_alpha``.

    Centers and replicas are all drawn i.i.d. from the measure, and the event
    is read off their overlaps alone.
    """
    q = check_increasing("q", q, -1.0, 1.0)
    vertices = _closure(vertex_powers)
    row = {v: i for i, v in enumerate(vertices)}
    centers = measure.sample(samples * len(vertices), rng).reshape(samples, -1)
    event = np.ones(samples, dtype=bool)
    for v, power in vertex_powers.items():
        for _ in range(power):
            replica = measure.sample(samples, rng)
            for k, ancestor in enumerate(ancestors(tuple(v))):
                overlaps = measure.pair_overlaps(centers[:, row[ancestor]], replica)
                event &= overlaps >= q[k] - THRESHOLD_SLACK
    return RunningStats.of(event).estimate()


def with_stats(
    decomposition: ClusterDecomposition, stats: ClusteringStats
) -> ClusterDecomposition:
    """Attach clustering statistics to a decomposition."""
    return replace(decomposition, stats=stats)
