"""Exact small-N Gaussian spin glasses on the hypercube.

Configurations are indexed by integers ``s`` in ``[0, 2^N)`` with spin
``sigma_i = 1 - 2 * bit_{N-1-i}(s)``, so the first spins are the high bits and
the configuration prefix through spin ``c`` is ``s >> (N - c)``.
"""

from __future__ import annotations

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Any, ClassVar, Mapping, Sequence, TextIO

import numpy as np
from scipy.special import logsumexp

from .const import N_MAX
from .exceptions import InvalidParameterError
from .measure import HypercubeMeasure, OverlapLaw
from .util import EstimateWithError, check_increasing

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike

    from .measure import OverlapMatrix

BATCH_SIZE = 1024


@lru_cache(maxsize=None)
def configurations(N: int) -> np.ndarray:  # noqa: N803
    """Return the ``(2^N, N)`` table of +-1 spins in index order."""
    _check_size(N)
    shifts = N - 1 - np.arange(N)
    bits = (np.arange(2**N)[:, None] >> shifts) & 1
    spins = (1 - 2 * bits).astype(float)
    spins.flags.writeable = False
    return spins


def _check_size(N: int) -> None:  # noqa: N803
    if N > N_MAX:
        raise InvalidParameterError(
            "N", f"exact enumeration is capped at N={N_MAX}, got {N}"
        )


def _as_spins(s: ArrayLike) -> np.ndarray:
    spins = np.asarray(s, dtype=float)
    if spins.ndim != 1 or not np.all(np.abs(spins) == 1):
        raise InvalidParameterError("configuration", "must be a vector of +-1 spins")
    return spins


def overlap(s1: ArrayLike, s2: ArrayLike) -> float:
    """Return ``(1/N) sum_i s1_i s2_i``."""
    a, b = _as_spins(s1), _as_spins(s2)
    if a.size != b.size:
        raise InvalidParameterError(
            "configuration", f"lengths differ: {a.size} != {b.size}"
        )
    return float(a @ b / a.size)


@dataclass(frozen=True)
class ModelSpec(ABC):
    """A centered Gaussian Hamiltonian on N spins at inverse temperature beta."""

    variant: ClassVar[str]

    N: int
    beta: float = 1.0

    def __post_init__(self):
        """Validate the size and temperature."""
        if self.N < 1:
            raise InvalidParameterError("N", f"must be >= 1, got {self.N}")
        if not self.beta >= 0:
            raise InvalidParameterError("beta", f"must be >= 0, got {self.beta}")

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> ModelSpec:
        """Build a model from ``{"variant": ..., "N": ..., "beta": ..., ...}``."""
        variants = {model.variant: model for model in (REM, GREM, MixedPSpin)}
        variant = data.get("variant")
        if variant not in variants:
            raise InvalidParameterError(
                "variant", f"must be one of {sorted(variants)}, got {variant!r}"
            )
        options = {k: v for k, v in data.items() if k != "variant"}
        model = variants[variant]
        if model is MixedPSpin:
            options["betas"] = {int(p): float(b) for p, b in options["betas"].items()}
        return model(**options)

    @abstractmethod
    def covariance(self, s1: np.ndarray, s2: np.ndarray) -> float:
        """Return ``E H(s1) H(s2)``."""

    @abstractmethod
    def covariance_matrix(self) -> np.ndarray:
        """Return the ``2^N x 2^N`` covariance of the energy vector."""

    @abstractmethod
    def energies(self, rng: np.random.Generator) -> np.ndarray:
        """Draw the energies of all ``2^N`` configurations."""

    def to_json(self) -> dict[str, Any]:
        """Serialize the model."""
        return {"N": self.N, "beta": self.beta, "variant": self.variant}


@dataclass(frozen=True)
class REM(ModelSpec):
    """Random energy model: i.i.d. ``N(0, N)`` energies."""

    variant: ClassVar[str] = "rem"

    def covariance(self, s1: np.ndarray, s2: np.ndarray) -> float:
        """Return ``N 1{s1 = s2}``."""
        return float(self.N) if np.array_equal(s1, s2) else 0.0

    def covariance_matrix(self) -> np.ndarray:
        """Return ``N I``."""
        _check_size(self.N)
        return self.N * np.eye(2**self.N)

    def energies(self, rng: np.random.Generator) -> np.ndarray:
        """Draw i.i.d. ``N(0, N)`` energies."""
        return rng.normal(scale=math.sqrt(self.N), size=2**self.N)


@dataclass(frozen=True)
class GREM(ModelSpec):
    """Generalized random energy model on consecutive blocks of spins.

    ``zeta`` holds the cumulative variance fractions at the interior block
    boundaries; the last block completes the variance to 1.
    """

    variant: ClassVar[str] = "grem"

    blocks: tuple[int, ...] = ()
    zeta: tuple[float, ...] = ()
    rounding: tuple[tuple[float, float], ...] = field(default=(), compare=False)

    def __post_init__(self):
        """Validate the blocks and variance levels."""
        super().__post_init__()
        blocks = tuple(int(b) for b in self.blocks) or (self.N,)
        if any(b < 1 for b in blocks) or sum(blocks) != self.N:
            raise InvalidParameterError(
                "blocks", f"must be positive and sum to N={self.N}, got {blocks}"
            )
        zeta = (
            check_increasing("zeta", self.zeta, 0.0, 1.0) if self.zeta else ()
        )
        if zeta and zeta[-1] >= 1:
            raise InvalidParameterError("zeta", "must lie strictly below 1")
        if len(zeta) != len(blocks) - 1:
            raise InvalidParameterError(
                "zeta", f"need {len(blocks) - 1} interior levels, got {len(zeta)}"
            )
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "zeta", zeta)

    @classmethod
    def from_levels(
        cls,
        N: int,  # noqa: N803
        q: Sequence[float],
        zeta: Sequence[float],
        beta: float = 1.0,
    ) -> GREM:
        """Build blocks by rounding the boundary fractions ``q`` to multiples of 1/N."""
        q = check_increasing("q", q, 0.0, 1.0)
        boundaries = [round(N * x) for x in q if x < 1]
        if any(b <= a for a, b in zip([0, *boundaries], [*boundaries, N])):
            raise InvalidParameterError(
                "q", f"levels {q} collapse after rounding to multiples of 1/{N}"
            )
        blocks = tuple(np.diff([0, *boundaries, N]).tolist())
        rounding = tuple((x, b / N) for x, b in zip(q, boundaries))
        return cls(N, beta, blocks, tuple(zeta), rounding)

    @property
    def r(self) -> int:
        """Return the number of blocks."""
        return len(self.blocks)

    @property
    def increments(self) -> np.ndarray:
        """Return the variance fraction carried by each block."""
        return np.diff(np.concatenate([[0.0], self.zeta, [1.0]]))

    @property
    def boundaries(self) -> np.ndarray:
        """Return the cumulative block ends ``c_1 < ... < c_r = N``."""
        return np.cumsum(self.blocks)

    def covariance(self, s1: np.ndarray, s2: np.ndarray) -> float:
        """Return ``N sum_k w_k 1{prefixes through block k agree}``."""
        agree = [np.array_equal(s1[:c], s2[:c]) for c in self.boundaries]
        return float(self.N * self.increments[np.array(agree)].sum())

    def covariance_matrix(self) -> np.ndarray:
        """Return the block-prefix covariance over all configuration pairs."""
        _check_size(self.N)
        index = np.arange(2**self.N)
        matrix = np.zeros((index.size, index.size))
        for c, w in zip(self.boundaries, self.increments):
            prefix = index >> (self.N - c)
            matrix += w * (prefix[:, None] == prefix[None, :])
        return self.N * matrix

    def energies(self, rng: np.random.Generator) -> np.ndarray:
        """Sum independent standard Gaussians attached to every block prefix."""
        index = np.arange(2**self.N)
        energy = np.zeros(index.size)
        for c, w in zip(self.boundaries, self.increments):
            g = rng.standard_normal(2**c)
            energy += math.sqrt(w) * g[index >> (self.N - c)]
        return math.sqrt(self.N) * energy

    def to_json(self) -> dict[str, Any]:
        """Serialize the model."""
        return {**super().to_json(), "blocks": list(self.blocks), "zeta": list(self.zeta)}


@dataclass(frozen=True)
class MixedPSpin(ModelSpec):
    """Mixed p-spin model with ``xi(t) = sum_p beta_p^2 t^p``."""

    variant: ClassVar[str] = "pspin"

    betas: Mapping[int, float] | tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        """Validate the coefficients."""
        super().__post_init__()
        pairs = self.betas.items() if isinstance(self.betas, Mapping) else self.betas
        betas = tuple(sorted((int(p), float(b)) for p, b in pairs if b != 0))
        if not betas:
            raise InvalidParameterError("betas", "need at least one nonzero beta_p")
        if any(p < 1 for p, _ in betas):
            raise InvalidParameterError("betas", "powers p must be >= 1")
        object.__setattr__(self, "betas", betas)

    @property
    def coefficients(self) -> dict[int, float]:
        """Return ``{p: beta_p}``."""
        return dict(self.betas)

    def xi(self, t: float | np.ndarray) -> float | np.ndarray:
        """Return ``sum_p beta_p^2 t^p``."""
        return sum(b**2 * np.power(t, p) for p, b in self.betas)

    def covariance(self, s1: np.ndarray, s2: np.ndarray) -> float:
        """Return ``N xi(R(s1, s2))``."""
        return float(self.N * self.xi(overlap(s1, s2)))

    def covariance_matrix(self) -> np.ndarray:
        """Return ``N xi(R)`` over all configuration pairs."""
        spins = configurations(self.N)
        return self.N * self.xi(spins @ spins.T / self.N)

    def energies(self, rng: np.random.Generator) -> np.ndarray:
        """Contract i.i.d. Gaussian p-tensors with every configuration."""
        spins = configurations(self.N)
        energy = np.zeros(len(spins))
        for p, b in self.betas:
            g = rng.standard_normal((self.N,) * p)
            scale = b * self.N ** (-(p - 1) / 2)
            for start in range(0, len(spins), BATCH_SIZE):
                s = spins[start : start + BATCH_SIZE]
                t = np.tensordot(s, g, axes=(1, 0))
                for _ in range(p - 1):
                    t = np.einsum("bi,bi...->b...", s, t)
                energy[start : start + BATCH_SIZE] += scale * t
        return energy

    def to_json(self) -> dict[str, Any]:
        """Serialize the model."""
        return {**super().to_json(), "betas": {str(p): b for p, b in self.betas}}


def covariance(model: ModelSpec, s1: ArrayLike, s2: ArrayLike) -> float:
    """Return ``E H(s1) H(s2)`` under ``model``."""
    a, b = _as_spins(s1), _as_spins(s2)
    if a.size != model.N or b.size != model.N:
        raise InvalidParameterError("configuration", f"need {model.N} spins")
    return model.covariance(a, b)


def covariance_matrix(model: ModelSpec) -> np.ndarray:
    """Return the full covariance target of the energy vector."""
    return model.covariance_matrix()


@dataclass(frozen=True)
class DisorderRealization:
    """One draw of the energies of all configurations."""

    model: ModelSpec
    energies: np.ndarray = field(repr=False)


def sample_disorder(model: ModelSpec, rng: np.random.Generator) -> DisorderRealization:
    """Draw the energy vector of ``model``."""
    _check_size(model.N)
    energies = model.energies(rng)
    energies.flags.writeable = False
    return DisorderRealization(model, energies)


class GibbsMeasure(HypercubeMeasure):
    """The measure ``exp(-beta H(s)) / Z`` on all configurations."""

    def __init__(self, disorder: DisorderRealization, beta: float):
        """Normalize the Boltzmann weights in log space."""
        if not beta >= 0:
            raise InvalidParameterError("beta", f"must be >= 0, got {beta}")
        log_weights = -beta * disorder.energies
        self.log_partition = float(logsumexp(log_weights))
        super().__init__(
            configurations(disorder.model.N), np.exp(log_weights - self.log_partition)
        )
        self.disorder = disorder
        self.beta = beta


def gibbs(disorder: DisorderRealization, beta: float) -> GibbsMeasure:
    """Return the Gibbs measure of ``disorder`` at inverse temperature ``beta``."""
    return GibbsMeasure(disorder, beta)


def free_energy(disorder: DisorderRealization, beta: float) -> float:
    """Return ``(1/N) log Z``."""
    return gibbs(disorder, beta).log_partition / disorder.model.N


def walsh_hadamard(values: ArrayLike) -> np.ndarray:
    """Return the unnormalized Walsh-Hadamard transform of a length-2^N vector."""
    a = np.array(values, dtype=float)
    n, h = a.size, 1
    if n & (n - 1):
        raise InvalidParameterError("values", f"length must be a power of 2, got {n}")
    while h < n:
        a = a.reshape(-1, 2, h)
        a = np.stack([a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]], axis=1)
        h *= 2
    return a.reshape(n)


def exact_overlap_law(measure: GibbsMeasure) -> OverlapLaw:
    """Return the law of ``R_12`` for two independent replicas, summed exactly.

    The pair mass at XOR distance ``x`` is the autocorrelation of the weights,
    which the Walsh-Hadamard transform diagonalizes.
    """
    N = measure.n_spins  # noqa: N806
    spectrum = walsh_hadamard(measure.masses)
    correlation = np.clip(walsh_hadamard(spectrum**2) / 2**N, 0, None)
    distance = ((np.arange(2**N)[:, None] >> np.arange(N)) & 1).sum(axis=1)
    masses = np.bincount(distance, weights=correlation, minlength=N + 1)
    return OverlapLaw(1 - 2 * np.arange(N + 1) / N, masses / masses.sum())


@dataclass(frozen=True)
class OverlapHistogram:
    """Disorder-averaged overlap masses per bin with standard errors."""

    edges: np.ndarray
    masses: np.ndarray
    stderr: np.ndarray
    n_disorder: int
    mode: str

    def mass(self, lo: float, hi: float = 1.0) -> EstimateWithError:
        """Return the summed mass of the bins inside ``[lo, hi]``."""
        inside = (self.edges[:-1] >= lo - 1e-12) & (self.edges[1:] <= hi + 1e-12)
        stderr = math.sqrt(float((self.stderr[inside] ** 2).sum()))
        return EstimateWithError(
            float(self.masses[inside].sum()), stderr, self.n_disorder, self.mode
        )

    def to_csv(self, stream: TextIO) -> None:
        """Write the columns ``bin_lo, bin_hi, mass, stderr``."""
        writer = csv.writer(stream)
        writer.writerow(["bin_lo", "bin_hi", "mass", "stderr"])
        for row in zip(self.edges[:-1], self.edges[1:], self.masses, self.stderr):
            writer.writerow([float(x) for x in row])

    def to_json(self) -> dict[str, Any]:
        """Serialize the histogram."""
        return {
            "edges": self.edges.tolist(),
            "masses": self.masses.tolist(),
            "mode": self.mode,
            "n_disorder": self.n_disorder,
            "stderr": self.stderr.tolist(),
        }


def histogram_edges(bins: int | ArrayLike) -> np.ndarray:
    """Return bin edges over ``[-1, 1]`` from a count or an explicit edge list."""
    if np.isscalar(bins):
        if int(bins) < 1:
            raise InvalidParameterError("bins", f"must be >= 1, got {bins}")
        return np.linspace(-1, 1, int(bins) + 1)
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise InvalidParameterError("bins", "edges must be strictly increasing")
    return edges


def overlap_histogram(
    measure: GibbsMeasure,
    edges: np.ndarray,
    rng: np.random.Generator | None = None,
    n_pairs: int = 0,
    mode: str = "exact",
) -> np.ndarray:
    """Return the overlap bin masses of one Gibbs measure."""
    if mode == "exact":
        return exact_overlap_law(measure).histogram(edges)
    if mode != "mc":
        raise InvalidParameterError("mode", f"must be 'exact' or 'mc', got {mode!r}")
    if n_pairs < 1:
        raise InvalidParameterError("n_pairs", f"must be >= 1, got {n_pairs}")
    a, b = measure.sample(n_pairs, rng), measure.sample(n_pairs, rng)
    return OverlapLaw.from_samples(measure.pair_overlaps(a, b)).histogram(edges)


def empirical_overlap_law(
    model: ModelSpec,
    beta: float,
    n_disorder: int,
    n_pairs: int,
    bins: int | ArrayLike,
    rng: np.random.Generator,
    mode: str = "exact",
) -> OverlapHistogram:
    """Average the overlap histogram over ``n_disorder`` disorder draws."""
    if n_disorder < 1:
        raise InvalidParameterError("n_disorder", f"must be >= 1, got {n_disorder}")
    edges = histogram_edges(bins)
    rows = np.array(
        [
            overlap_histogram(
                gibbs(sample_disorder(model, rng), beta), edges, rng, n_pairs, mode
            )
            for _ in range(n_disorder)
        ]
    )
    return summarize_histograms(edges, rows, mode)


def summarize_histograms(
    edges: np.ndarray, rows: np.ndarray, mode: str
) -> OverlapHistogram:
    """Reduce per-disorder histograms to their mean and standard error."""
    n = rows.shape[0]
    stderr = rows.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(rows.shape[1])
    return OverlapHistogram(edges, rows.mean(axis=0), stderr, n, mode)


def sample_replicas(
    measure: GibbsMeasure, n: int, rng: np.random.Generator
) -> OverlapMatrix:
    """Draw ``n`` replicas by Gibbs weight and return their overlaps."""
    from .cascades import sample_overlap_matrix

    return sample_overlap_matrix(measure, n, rng)


def dfm_gap(
    model: ModelSpec,
    beta: float,
    a: float,
    n_disorder: int,
    rng: np.random.Generator,
) -> EstimateWithError:
    """Estimate ``(1/(aN)) log E Z^a - (1/N) E log Z`` over disorder.

    The error bar is the delta-method standard error of both terms together.
    """
    if not a < 0:
        raise InvalidParameterError("a", f"must be negative, got {a}")
    if n_disorder < 2:
        raise InvalidParameterError("n_disorder", f"must be >= 2, got {n_disorder}")
    log_z = np.array(
        [gibbs(sample_disorder(model, rng), beta).log_partition for _ in range(n_disorder)]
    )
    return dfm_gap_from_log_partitions(log_z, a, model.N)


def dfm_gap_from_log_partitions(
    log_z: ArrayLike,
    a: float,
    N: int,  # noqa: N803
) -> EstimateWithError:
    """Return the gap estimate from per-disorder ``log Z`` values."""
    log_z = np.asarray(log_z, dtype=float)
    n = log_z.size
    if np.all(log_z == log_z[0]):
        return EstimateWithError(0.0, 0.0, n, "exact")
    log_mean = float(logsumexp(a * log_z) - math.log(n))
    gap = log_mean / (a * N) - log_z.mean() / N
    influence = np.exp(a * log_z - log_mean) / (a * N) - log_z / N
    return EstimateWithError(float(gap), float(influence.std(ddof=1) / math.sqrt(n)), n)
