"""Statistical checks of replica identities on any source of random measures.

Every estimator returns an :class:`EstimateWithError`. When a source draws
several disorders, the per-disorder means are the sampling units; with a single
fixed measure the individual replica draws are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import TYPE_CHECKING, Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .cascades import sample_rpc
from .const import EXACT_ATOM_LIMIT, MAX_PSI_POWER, THRESHOLD_SLACK
from .exceptions import InvalidParameterError
from .trees import TreeShape, Vertex
from .util import EstimateWithError, RunningStats

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike

    from .cascades import RPCParams
    from .clustering import ClusterDecomposition
    from .measure import AtomicMeasure
    from .spinglass import ModelSpec
    from .trees import WeightedTree

__all__ = [
    "EstimateWithError",
    "Monomial",
    "ReplicaSource",
    "TestFunction",
    "compare_to_rpc",
    "exact_positivity_defect",
    "exact_ultrametric_violation",
    "gg_residual",
    "gg_residual_from_terms",
    "gg_terms",
    "indicator_approx_gap",
    "negative_overlaps",
    "pd_moment",
    "phi_kappa",
    "phi_kappa_lambda",
    "pooled_mean",
    "positivity_defect",
    "recursive_pd_moment",
    "same_cluster_probability",
    "talagrand_residual",
    "triple_violations",
    "ultrametric_violation",
]


def _constant(measure: AtomicMeasure, rng: np.random.Generator) -> AtomicMeasure:  # noqa: ARG001
    return measure


def _random_gibbs(
    model: ModelSpec, beta: float, rng: np.random.Generator
) -> AtomicMeasure:
    from .spinglass import gibbs, sample_disorder

    return gibbs(sample_disorder(model, rng), beta)


@dataclass(frozen=True)
class ReplicaSource:
    """Draws one random measure per disorder; replicas are sampled from each."""

    factory: Callable[[np.random.Generator], AtomicMeasure]
    n_disorder: int = 1
    name: str = "source"

    def __post_init__(self):
        """Validate the disorder count."""
        if self.n_disorder < 1:
            raise InvalidParameterError(
                "n_disorder", f"must be >= 1, got {self.n_disorder}"
            )

    @classmethod
    def fixed(cls, measure: AtomicMeasure, name: str = "fixed") -> ReplicaSource:
        """Return a source that always yields ``measure``."""
        return cls(partial(_constant, measure), 1, name)

    @classmethod
    def from_factory(
        cls,
        fn: Callable[[np.random.Generator], AtomicMeasure],
        n_disorder: int,
        name: str = "source",
    ) -> ReplicaSource:
        """Return a source drawing ``n_disorder`` measures from ``fn``."""
        return cls(fn, n_disorder, name)

    @classmethod
    def gibbs(cls, model: ModelSpec, beta: float, n_disorder: int) -> ReplicaSource:
        """Return a source of Gibbs measures of freshly sampled disorder."""
        return cls(partial(_random_gibbs, model, beta), n_disorder, model.variant)

    def measures(self, rng: np.random.Generator) -> Iterator[AtomicMeasure]:
        """Yield the measure of every disorder."""
        for _ in range(self.n_disorder):
            yield self.factory(rng)


@dataclass(frozen=True)
class Monomial:
    """The function ``coefficient * x^power`` of one overlap."""

    power: int = 1
    coefficient: float = 1.0

    def __post_init__(self):
        """Validate the power."""
        if not 0 <= self.power <= MAX_PSI_POWER:
            raise InvalidParameterError(
                "power", f"must lie in [0, {MAX_PSI_POWER}], got {self.power}"
            )

    def __call__(self, x: ArrayLike) -> np.ndarray:
        """Evaluate the monomial."""
        return self.coefficient * np.power(np.asarray(x, dtype=float), self.power)


@dataclass(frozen=True)
class TestFunction:
    """A product of threshold indicators and monomials in replica overlaps.

    Factors are ``("threshold", i, j, q)`` for ``1{R_ij >= q}``,
    ``("below", i, j, q)`` for ``1{R_ij < q}`` and ``("power", i, j, p)`` for
    ``R_ij^p``, with 1-based replica indices ``i < j``.
    """

    __test__ = False

    factors: tuple[tuple[str, int, int, float], ...] = ()
    coefficient: float = 1.0

    def __post_init__(self):
        """Validate the factors."""
        for kind, i, j, _ in self.factors:
            if kind not in ("threshold", "below", "power"):
                raise InvalidParameterError("factors", f"unknown factor {kind!r}")
            if not 1 <= i < j:
                raise InvalidParameterError("factors", f"need 1 <= i < j, got {i}, {j}")

    @classmethod
    def constant(cls, c: float = 1.0) -> TestFunction:
        """Return the constant function ``c``."""
        return cls((), c)

    @classmethod
    def threshold(cls, i: int, j: int, q: float) -> TestFunction:
        """Return ``1{R_ij >= q}``."""
        return cls((("threshold", i, j, q),))

    @classmethod
    def below(cls, i: int, j: int, q: float) -> TestFunction:
        """Return ``1{R_ij < q}``."""
        return cls((("below", i, j, q),))

    @classmethod
    def monomial(cls, i: int, j: int, p: int) -> TestFunction:
        """Return ``R_ij^p``."""
        return cls((("power", i, j, p),))

    def __mul__(self, other: TestFunction) -> TestFunction:
        """Return the product of two test functions."""
        return TestFunction(
            self.factors + other.factors, self.coefficient * other.coefficient
        )

    @property
    def is_constant(self) -> bool:
        """Return whether the function has no factors."""
        return not self.factors

    @property
    def order(self) -> int:
        """Return the number of replicas the function reads."""
        return max((j for _, _, j, _ in self.factors), default=1)

    def __call__(self, R: np.ndarray) -> np.ndarray:  # noqa: N803
        """Evaluate on a ``(samples, n, n)`` stack of overlap arrays."""
        value = np.full(R.shape[0], self.coefficient)
        for kind, i, j, x in self.factors:
            r = R[:, i - 1, j - 1]
            if kind == "threshold":
                value = value * (r >= x - THRESHOLD_SLACK)
            elif kind == "below":
                value = value * (r < x - THRESHOLD_SLACK)
            else:
                value = value * r**x
        return value


def _replica_overlaps(
    measure: AtomicMeasure, count: int, samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Return the ``(samples, count, count)`` overlaps of i.i.d. replicas."""
    atoms = measure.sample(samples * count, rng).reshape(samples, count)
    R = np.empty((samples, count, count))  # noqa: N806
    for a in range(count):
        R[:, a, a] = measure.pair_overlaps(atoms[:, a], atoms[:, a])
        for b in range(a + 1, count):
            R[:, a, b] = R[:, b, a] = measure.pair_overlaps(atoms[:, a], atoms[:, b])
    return R


def _influence_estimate(
    units: np.ndarray,
    value: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    n_samples: int,
) -> EstimateWithError:
    """Apply the delta method to a smooth function of column means."""
    means = units.mean(axis=0)
    influence = units @ gradient(means)
    stderr = (
        float(influence.std(ddof=1) / math.sqrt(len(units))) if len(units) > 1 else 0.0
    )
    return EstimateWithError(abs(float(value(means))), stderr, n_samples)


def _units(blocks: list[np.ndarray]) -> np.ndarray:
    """Return per-sample rows for one block, else per-block means."""
    if len(blocks) == 1:
        return blocks[0]
    return np.array([block.mean(axis=0) for block in blocks])


def gg_terms(
    measure: AtomicMeasure,
    f: TestFunction,
    psi: Callable[[np.ndarray], np.ndarray],
    n: int,
    samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Return per draw ``f psi(R_1,n+1)``, ``f``, ``psi(R_1,n+1)`` and ``sum_k f psi(R_1k)``."""
    R = _replica_overlaps(measure, n + 1, samples, rng)  # noqa: N806
    values = f(R[:, :n, :n])
    last = psi(R[:, 0, n])
    inner = sum((values * psi(R[:, 0, k]) for k in range(1, n)), np.zeros(samples))
    return np.column_stack([values * last, values, last, inner])


def gg_residual(
    src: ReplicaSource,
    f: TestFunction,
    psi: Callable[[np.ndarray], np.ndarray],
    n: int,
    samples: int,
    rng: np.random.Generator,
) -> EstimateWithError:
    """Estimate the Ghirlanda-Guerra defect of ``f`` and ``psi`` on ``n`` replicas.

    The defect is ``|n E<f psi(R_1,n+1)> - E<f> E<psi(R_12)> - sum_k E<f psi(R_1k)>|``
    with all terms read from the same replica draws. A constant ``f`` gives
    exactly 0.
    """
    if n < 1:
        raise InvalidParameterError("n", f"must be >= 1, got {n}")
    if f.order > n:
        raise InvalidParameterError("f", f"reads {f.order} replicas, more than n={n}")
    total = samples * src.n_disorder
    if f.is_constant:
        return EstimateWithError(0.0, 0.0, total, "exact")
    blocks = [gg_terms(m, f, psi, n, samples, rng) for m in src.measures(rng)]
    return gg_residual_from_terms(blocks, n, total)


def gg_residual_from_terms(
    blocks: list[np.ndarray], n: int, n_samples: int
) -> EstimateWithError:
    """Combine :func:`gg_terms` blocks into the defect estimate."""
    return _influence_estimate(
        _units(blocks),
        lambda m: n * m[0] - m[1] * m[2] - m[3],
        lambda m: np.array([n, -m[2], -m[1], -1.0]),
        n_samples,
    )


def triple_violations(
    measure: AtomicMeasure, eps: float, samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Return per draw whether three replicas violate the triangle by ``eps``."""
    R = _replica_overlaps(measure, 3, samples, rng)  # noqa: N806
    bound = np.minimum(R[:, 0, 2], R[:, 1, 2]) - eps
    return (R[:, 0, 1] <= bound + THRESHOLD_SLACK * (eps == 0)).astype(float)


def ultrametric_violation(
    src: ReplicaSource, eps: float, samples: int, rng: np.random.Generator
) -> EstimateWithError:
    """Estimate ``E mu^3(R_12 <= min(R_13, R_23) - eps)``."""
    if eps < 0:
        raise InvalidParameterError("eps", f"must be >= 0, got {eps}")
    blocks = [triple_violations(m, eps, samples, rng) for m in src.measures(rng)]
    return pooled_mean(blocks)


def pooled_mean(blocks: list[np.ndarray]) -> EstimateWithError:
    """Return the mean of pooled draws, with per-disorder units for several blocks."""
    stats = RunningStats()
    for block in blocks:
        stats = stats.merge(RunningStats.of(block))
    units = _units([block[:, None] for block in blocks])[:, 0]
    mean = stats.mean
    stderr = float(units.std(ddof=1) / math.sqrt(units.size)) if units.size > 1 else 0.0
    return EstimateWithError(mean, stderr, stats.count)


def exact_ultrametric_violation(
    measure: AtomicMeasure, eps: float, limit: int = 1024
) -> EstimateWithError:
    """Sum the triangle-violation mass exactly over all atom triples."""
    if measure.size > limit:
        raise InvalidParameterError(
            "measure", f"exact triple sums are capped at {limit} atoms"
        )
    atoms = np.arange(measure.size)
    R = measure.overlap_block(atoms, atoms)  # noqa: N806
    m = measure.masses
    total = 0.0
    slack = THRESHOLD_SLACK if eps == 0 else 0.0
    for i in atoms:
        bound = np.minimum(R[i][None, :], R) - eps
        violated = R[i][:, None] <= bound + slack
        total += m[i] * float(m @ violated @ m)
    return EstimateWithError(total, 0.0, measure.size**3, "exact")


def positivity_defect(
    src: ReplicaSource, eps: float, samples: int, rng: np.random.Generator
) -> EstimateWithError:
    """Estimate ``E mu^2(R_12 < -eps)``."""
    if not eps > 0:
        raise InvalidParameterError("eps", f"must be positive, got {eps}")
    blocks = [negative_overlaps(m, eps, samples, rng) for m in src.measures(rng)]
    return pooled_mean(blocks)


def negative_overlaps(
    measure: AtomicMeasure, eps: float, samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Return per draw whether two replicas have overlap below ``-eps``."""
    a, b = measure.sample(samples, rng), measure.sample(samples, rng)
    return (measure.pair_overlaps(a, b) < -eps).astype(float)


def exact_positivity_defect(measure: AtomicMeasure, eps: float) -> EstimateWithError:
    """Sum ``mu^2(R_12 < -eps)`` exactly."""
    atoms = np.arange(measure.size)
    value = measure.pair_mass(atoms, atoms, lambda r: r < -eps)
    return EstimateWithError(value, 0.0, measure.size**2, "exact")


def _partition(sample: Any) -> np.ndarray:
    atoms = getattr(sample, "atoms", sample)
    return np.asarray(atoms, dtype=float)


def _power_sums(partitions: Iterable[Any], powers: Sequence[int]) -> np.ndarray:
    return np.array(
        [[float((v**k).sum()) for k in powers] for v in map(_partition, partitions)]
    )


def pd_moment(partitions: Iterable[Any], k: int) -> EstimateWithError:
    """Estimate ``E sum_n v_n^k`` from mass-partition samples."""
    if k < 2:
        raise InvalidParameterError("k", f"must be >= 2, got {k}")
    values = _power_sums(partitions, [k])[:, 0]
    return RunningStats.of(values).estimate()


def recursive_pd_moment(theta: float, k: int) -> float:
    """Return ``E sum_n v_n^k`` for PD(theta) by unrolling the one-part recursion."""
    if k < 2:
        raise InvalidParameterError("k", f"must be >= 2, got {k}")
    s2 = 1 - theta
    value = s2
    for j in range(3, k + 1):
        value = value * (s2 + j - 2) / (j - 1)
    return value


def talagrand_residual(
    partitions: Iterable[Any], composition: Sequence[int]
) -> EstimateWithError:
    """Estimate the defect of the moment recursion for ``(n_1, ..., n_s)``.

    With ``S(n_1, ..., n_s) = E prod_k sum_n v_n^(n_k)`` and ``n = sum n_k`` the
    recursion reads ``n S(n_1+1, ...) = S(2) S(n_1, ...) + (n_1-1) S(n_1, ...)
    + sum_{k>=2} n_k S(..., n_k + n_1, ...)``, the last terms merging the first
    part into the k-th.
    """
    parts = [int(x) for x in composition]
    if not parts or any(x < 2 for x in parts):
        raise InvalidParameterError(
            "composition", f"needs parts >= 2, got {list(composition)}"
        )
    n, first = sum(parts), parts[0]
    powers = sorted({2, first + 1, *parts, *(first + x for x in parts[1:])})
    sums = _power_sums(partitions, powers)
    if len(sums) < 2:
        raise InvalidParameterError("partitions", "need at least two samples")
    column = {k: sums[:, i] for i, k in enumerate(powers)}

    def product(ks: Sequence[int]) -> np.ndarray:
        return np.prod([column[k] for k in ks], axis=0)

    raised = product([first + 1, *parts[1:]])
    base = product(parts)
    merged = sum(
        (
            parts[k] * product([*parts[1:k], parts[k] + first, *parts[k + 1 :]])
            for k in range(1, len(parts))
        ),
        np.zeros(len(sums)),
    )
    units = np.column_stack([raised, column[2], base, merged])
    return _influence_estimate(
        units,
        lambda m: n * m[0] - m[1] * m[2] - (first - 1) * m[2] - m[3],
        lambda m: np.array([n, -m[2], -m[1] - (first - 1), -1.0]),
        len(sums),
    )


def phi_kappa(x: ArrayLike, q_r: float, kappa: float) -> float | np.ndarray:
    """Return the ramp that is 0 below ``q_r - kappa`` and 1 from ``q_r`` on."""
    if not kappa > 0:
        raise InvalidParameterError("kappa", f"must be positive, got {kappa}")
    value = np.clip((np.asarray(x, dtype=float) - (q_r - kappa)) / kappa, 0, 1)
    return float(value) if value.ndim == 0 else value


def phi_kappa_lambda(
    x: ArrayLike, q_star: float, kappa: float, lam: float
) -> float | np.ndarray:
    """Return the ramp that is 0 until ``q_star - kappa`` and 1 after ``q_star - lam``."""
    if not kappa > lam > 0:
        raise InvalidParameterError(
            "kappa", f"need kappa > lambda > 0, got {kappa} and {lam}"
        )
    value = np.clip(
        (np.asarray(x, dtype=float) - (q_star - kappa)) / (kappa - lam), 0, 1
    )
    return float(value) if value.ndim == 0 else value


def indicator_approx_gap(
    measure: AtomicMeasure,
    decomposition: ClusterDecomposition,
    kappa: float,
    q_r: float,
    rng: np.random.Generator | None = None,
    samples: int = 20000,
) -> EstimateWithError:
    """Return ``<|U_12 - phi_kappa(R_12)|>`` with ``U_12`` the same-leaf-cluster indicator."""
    labels = decomposition.labels(decomposition.shape.r)
    if measure.size > EXACT_ATOM_LIMIT:
        if rng is None:
            raise InvalidParameterError("rng", "needed above the exact atom limit")
        a, b = measure.sample(samples, rng), measure.sample(samples, rng)
        same = (labels[a] == labels[b]) & (labels[a] >= 0)
        gap = np.abs(same - phi_kappa(measure.pair_overlaps(a, b), q_r, kappa))
        return RunningStats.of(gap).estimate()
    atoms = np.arange(measure.size)
    total = 0.0
    for block, overlaps in measure.iter_blocks(atoms, atoms):
        same = (labels[block][:, None] == labels[None, :]) & (labels[block] >= 0)[:, None]
        gap = np.abs(same - phi_kappa(overlaps, q_r, kappa))
        total += float(measure.masses[block] @ gap @ measure.masses)
    return EstimateWithError(total, 0.0, measure.size**2, "exact")


def same_cluster_probability(decomposition: ClusterDecomposition) -> float:
    """Return the chance two replicas share a leaf cluster, ``sum Y_alpha^2``."""
    leaves = decomposition.shape.leaves()
    return float(sum(decomposition.mass(v) ** 2 for v in leaves))


@dataclass(frozen=True)
class MomentGap:
    """One joint moment of cluster masses against its cascade counterpart."""

    moment: Mapping[Vertex, int]
    empirical: EstimateWithError
    reference: EstimateWithError
    gap: EstimateWithError = field(init=False)

    def __post_init__(self):
        """Compute the difference with its pooled standard error."""
        stderr = math.hypot(self.empirical.stderr, self.reference.stderr)
        object.__setattr__(
            self,
            "gap",
            EstimateWithError(
                self.empirical.value - self.reference.value,
                stderr,
                self.empirical.n_samples + self.reference.n_samples,
            ),
        )

    def to_json(self) -> dict[str, Any]:
        """Serialize the comparison."""
        return {
            "empirical": self.empirical.to_json(),
            "gap": self.gap.to_json(),
            "moment": {str(list(v)): p for v, p in self.moment.items()},
            "reference": self.reference.to_json(),
        }


def _moment(weights: Callable[[Vertex], float], moment: Mapping[Vertex, int]) -> float:
    return math.prod(weights(tuple(v)) ** p for v, p in moment.items())


def compare_to_rpc(
    Y_samples: Sequence[WeightedTree],  # noqa: N803
    params: RPCParams,
    moments: Sequence[Mapping[Vertex, int]],
    rng: np.random.Generator,
    rpc_samples: int = 2000,
    m: int | Sequence[int] | None = None,
    *,
    tail: str = "none",
) -> list[MomentGap]:
    """Compare joint moments of observed cluster masses with sampled cascades.

    Cascades are truncated to ``m``, by default the largest observed shape,
    and drawn with the given ``tail``.
    """
    if not Y_samples:
        raise InvalidParameterError("Y_samples", "must not be empty")
    if any(len(moment_) == 0 for moment_ in moments):
        raise InvalidParameterError("moments", "every moment needs a vertex")
    depths = {y.shape.r for y in Y_samples}
    if depths != {params.r}:
        raise InvalidParameterError(
            "Y_samples", f"need depth {params.r}, got depths {sorted(depths)}"
        )
    if m is None:
        m = tuple(max(y.shape.m[k] for y in Y_samples) for k in range(params.r))
    shape = TreeShape((m,) * params.r if np.isscalar(m) else tuple(m))
    cascades = [
        sample_rpc(params, shape.m, rng, tail=tail) for _ in range(rpc_samples)
    ]
    gaps = []
    for moment in moments:
        empirical = RunningStats.of([_moment(y.__getitem__, moment) for y in Y_samples])
        reference = RunningStats.of([_moment(c.__getitem__, moment) for c in cascades])
        gaps.append(MomentGap(moment, empirical.estimate(), reference.estimate()))
    return gaps
