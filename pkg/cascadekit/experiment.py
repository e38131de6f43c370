"""Seeded batch experiments over many disorder realizations.

A run samples one random measure per disorder, extracts clusters from it,
gathers the raw replica draws of every diagnostic and reduces them in job
order. Disorder ``i`` always draws from the ``i``-th child stream of the seed,
so reports do not depend on the number of workers.
"""

from __future__ import annotations

import asyncio
import csv
import json
import logging
import math
import os
import signal
import sys
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy
import toml

from .cascades import (
    CascadeWeights,
    RPCParams,
    embed_rost,
    interlace,
    rpc_dust_bound,
    sample_rpc,
    truncation_for,
)
from .clustering import (
    clean_clusters,
    cluster_masses,
    clustering_stats,
    greedy_tree_shape,
    h_statistic,
    orthogonal_structure_check,
    pure_state_variant,
    search_exhaustion,
    with_stats,
)
from .const import (
    DEFAULT_OUTPUT_DIR,
    EXACT_ATOM_LIMIT,
    M_CAP,
    N_MAX,
    OUTPUT_DIR_ENV,
)
from .debug import dump_tree
from .diagnostics import (
    Monomial,
    TestFunction,
    compare_to_rpc,
    gg_residual_from_terms,
    gg_terms,
    indicator_approx_gap,
    negative_overlaps,
    pooled_mean,
    same_cluster_probability,
    talagrand_residual,
    triple_violations,
)
from .exceptions import (
    CascadekitError,
    ConfigError,
    ConfigErrors,
    InsufficientMassError,
    RateOverflowError,
)
from .measure import OverlapLaw
from .rates import M_star, RateInputs
from .spinglass import (
    GibbsMeasure,
    ModelSpec,
    OverlapHistogram,
    dfm_gap_from_log_partitions,
    gibbs,
    histogram_edges,
    overlap_histogram,
    sample_disorder,
    summarize_histograms,
)
from .trees import TreeShape, WeightedTree
from .util import Reporter, ReportCache, RunningStats, plural, spawn_streams

if TYPE_CHECKING:  # pragma: no cover
    from .measure import AtomicMeasure
    from .trees import Vertex

STAGES = ("simulate", "cluster", "diagnose")
FORMATS = ("json", "csv")
DEFAULT_M = 50
DEFAULT_TRUNCATION = 8
DFM_EXPONENT = -1.0


def normalize_key(key: str) -> str:
    """Return a config key with dashes turned into underscores."""
    return key.replace("--", "").replace("-", "_")


def load_config_file(path: str | os.PathLike[str]) -> dict[str, Any]:
    """Read a JSON or TOML experiment config into a mapping with normalized keys."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = toml.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (toml.TomlDecodeError, json.JSONDecodeError) as e:
        raise ConfigError("<file>", f"{path} is not valid: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("<file>", f"{path} must hold a table of fields")
    return data


def _vertex(key: str) -> Vertex:
    value = json.loads(key) if key.strip().startswith("[") else key.split(",")
    return tuple(int(i) for i in value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on; two equal configs give equal reports.

    A cascade source without a ``shape`` takes the greedy shape of every
    sampled cascade at ``eps``.
    """

    source: ModelSpec | RPCParams
    seed: int
    q: tuple[float, ...]
    shape: TreeShape | None
    truncation: tuple[int, ...] | None = None
    tail: str = "none"
    dust_tol: float | None = None
    eps: float = 0.1
    delta: float = 0.1
    kappa: float = 0.05
    Delta: float = 0.2  # noqa: N815
    q_star: float | None = None
    k0: int = 2
    n_disorder: int = 1
    n_replicas: int = 2000
    n_pairs: int = 10000
    rpc_samples: int = 2000
    bins: int = 40
    M: int = DEFAULT_M  # noqa: N815
    mode: str = "exact"
    moments: tuple[Mapping[Vertex, int], ...] = ()
    rates: RateInputs | None = None
    out_dir: str | None = field(default=None, compare=False)

    @property
    def is_cascade(self) -> bool:
        """Return whether the source is a Ruelle cascade."""
        return isinstance(self.source, RPCParams)

    @classmethod
    def from_mapping(
        cls, data: Mapping[str, Any], **overrides: Any
    ) -> ExperimentConfig:
        """Validate a raw mapping field by field.

        Every failing field is collected and raised together as
        :class:`ConfigErrors`. ``overrides`` replace fields after key
        normalization, e.g. a seed given on the command line.
        """
        data = {normalize_key(k): v for k, v in data.items()}
        data.update({k: v for k, v in overrides.items() if v is not None})
        errors: list[ConfigError] = []
        parser = _FieldParser(data, errors)

        unknown = sorted(set(data) - _FIELDS)
        for key in unknown:
            errors.append(ConfigError(key, "unknown field"))

        source = parser.source()
        if "seed" not in data:
            errors.append(ConfigError("seed", "is required"))
        seed = parser.get("seed", 0, _non_negative_int)
        mode = parser.get("mode", "exact", _mode)
        r = None
        if isinstance(source, RPCParams):
            r = source.r
        truncation = None
        tail = parser.get("tail", "none", _tail)
        dust_tol = parser.get("dust_tol", None, _open_unit)
        if isinstance(source, RPCParams):
            default_truncation = (DEFAULT_TRUNCATION,) * r
            if dust_tol is not None:
                if "truncation" in data:
                    errors.append(ConfigError("dust_tol", "conflicts with truncation"))
                try:
                    default_truncation = tuple(
                        truncation_for(zeta, dust_tol / r) for zeta in source.zeta
                    )
                except CascadekitError as e:
                    errors.append(ConfigError("dust_tol", str(e)))
            truncation = parser.get(
                "truncation", default_truncation, _branching_parser(r)
            )
            atoms = math.prod(truncation) + 1
            if mode == "exact" and atoms > EXACT_ATOM_LIMIT:
                from_tol = dust_tol is not None and "truncation" not in data
                errors.append(
                    ConfigError(
                        "dust_tol" if from_tol else "truncation",
                        f"{atoms} atoms exceed the exact limit {EXACT_ATOM_LIMIT}",
                    )
                )
        else:
            for name in ("truncation", "tail", "dust_tol"):
                if name in data:
                    errors.append(ConfigError(name, "only applies to cascades"))

        q = parser.get("q", None, _levels)
        if q is None or q == "auto":
            if isinstance(source, RPCParams):
                q = interlace(source.q)
            elif source is not None and "q" not in data:
                errors.append(ConfigError("q", "is required for spin-glass sources"))
        if isinstance(q, tuple):
            if r is not None and len(q) != r:
                errors.append(ConfigError("q", f"need {r} radii, got {len(q)}"))
            r = len(q)

        shape = None
        if data.get("shape", "auto") == "auto":
            if not isinstance(source, RPCParams):
                if "shape" in data:
                    errors.append(ConfigError("shape", "'auto' needs a cascade source"))
                shape = TreeShape((2,) * (r or 1))
        else:
            branching = parser.get("shape", (2,) * (r or 1), _branching_parser(r))
            shape = TreeShape(tuple(branching))

        values = {
            "eps": parser.get("eps", 0.1, _open_unit),
            "delta": parser.get("delta", 0.1, _open_unit),
            "kappa": parser.get("kappa", 0.05, _open_unit),
            "Delta": parser.get("Delta", 0.2, _open_unit),
            "q_star": parser.get("q_star", None, _open_unit),
            "k0": parser.get("k0", min(2, shape.m[0]) if shape else 2, _positive_int),
            "n_disorder": parser.get("n_disorder", 1, _positive_int),
            "n_replicas": parser.get("n_replicas", 2000, _positive_int),
            "n_pairs": parser.get("n_pairs", 10000, _positive_int),
            "rpc_samples": parser.get("rpc_samples", 2000, _positive_int),
            "bins": parser.get("bins", 40, _positive_int),
            "out_dir": parser.get("out_dir", None, str),
        }
        if shape is not None and values["k0"] > shape.m[0]:
            errors.append(
                ConfigError("k0", f"must be at most {shape.m[0]}, the top branching")
            )

        rates = parser.rates(source, r, values["eps"], values["delta"])
        M = parser.get("M", None, _positive_int)  # noqa: N806
        if M is None:
            M = DEFAULT_M  # noqa: N806
            if rates is not None:
                try:
                    budget = M_star(rates.eta, rates.eps, rates.r, rates.zeta_levels)
                    M = int(math.ceil(min(budget.value, M_CAP)))  # noqa: N806
                except RateOverflowError:
                    M = M_CAP  # noqa: N806

        if shape is None and truncation is not None:
            moments = parser.moments(TreeShape(truncation))
        else:
            moments = parser.moments(shape)
        if errors:
            raise ConfigErrors(errors)
        return cls(
            source=source,
            seed=seed,
            q=q,
            shape=shape,
            truncation=truncation,
            tail=tail,
            dust_tol=dust_tol,
            M=M,
            mode=mode,
            moments=moments,
            rates=rates,
            **values,
        )

    def to_json(self) -> dict[str, Any]:
        """Echo every field that affects the numbers."""
        source = self.source.to_json()
        if self.is_cascade:
            source["variant"] = "rpc"
        return {
            "Delta": self.Delta,
            "M": self.M,
            "bins": self.bins,
            "delta": self.delta,
            "dust_tol": self.dust_tol,
            "eps": self.eps,
            "k0": self.k0,
            "kappa": self.kappa,
            "mode": self.mode,
            "moments": [
                {str(list(v)): p for v, p in moment.items()} for moment in self.moments
            ],
            "n_disorder": self.n_disorder,
            "n_pairs": self.n_pairs,
            "n_replicas": self.n_replicas,
            "q": list(self.q),
            "q_star": self.q_star,
            "rates": None
            if self.rates is None
            else {"eta": self.rates.eta, "zeta_levels": list(self.rates.zeta_levels)},
            "rpc_samples": self.rpc_samples,
            "seed": self.seed,
            "shape": None if self.shape is None else list(self.shape.m),
            "source": source,
            "tail": self.tail,
            "truncation": None if self.truncation is None else list(self.truncation),
        }

    def canonical(self, stages: Sequence[str] = STAGES) -> str:
        """Return the canonical JSON of the config and stages."""
        return json.dumps(
            {"config": self.to_json(), "stages": list(stages)}, sort_keys=True
        )


_FIELDS = {
    "Delta",
    "M",
    "bins",
    "delta",
    "dust_tol",
    "eps",
    "k0",
    "kappa",
    "mode",
    "moments",
    "n_disorder",
    "n_pairs",
    "n_replicas",
    "out_dir",
    "q",
    "q_star",
    "rates",
    "rpc_samples",
    "seed",
    "shape",
    "source",
    "tail",
    "truncation",
}


def _positive_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        msg = f"must be an integer >= 1, got {value!r}"
        raise ValueError(msg)
    return value


def _non_negative_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        msg = f"must be an integer >= 0, got {value!r}"
        raise ValueError(msg)
    return value


def _open_unit(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        msg = f"must be a number, got {value!r}"
        raise ValueError(msg)
    if not 0 < value < 1:
        msg = f"must lie in (0, 1), got {value}"
        raise ValueError(msg)
    return float(value)


def _mode(value: Any) -> str:
    if value not in ("exact", "mc"):
        msg = f"must be 'exact' or 'mc', got {value!r}"
        raise ValueError(msg)
    return value


def _tail(value: Any) -> str:
    if value not in ("none", "mean"):
        msg = f"must be 'none' or 'mean', got {value!r}"
        raise ValueError(msg)
    return value


def _levels(value: Any) -> tuple[float, ...] | str:
    if value == "auto":
        return value
    if not isinstance(value, list) or not value:
        msg = f"must be 'auto' or a non-empty list of radii, got {value!r}"
        raise ValueError(msg)
    levels = tuple(float(x) for x in value)
    if any(b <= a for a, b in zip(levels, levels[1:])) or not 0 < levels[0]:
        msg = f"must be strictly increasing and positive, got {list(levels)}"
        raise ValueError(msg)
    if levels[-1] > 1:
        msg = f"must not exceed 1, got {list(levels)}"
        raise ValueError(msg)
    return levels


def _branching_parser(r: int | None) -> Callable[[Any], tuple[int, ...]]:
    """Return a parser of a branching number or list for depth ``r``."""

    def parse(value: Any) -> tuple[int, ...]:
        if isinstance(value, int) and not isinstance(value, bool):
            if r is None:
                msg = "a single branching number needs a known depth"
                raise ValueError(msg)
            value = [value] * r
        if not isinstance(value, (list, tuple)) or not value:
            msg = f"must be an integer or a list of integers, got {value!r}"
            raise ValueError(msg)
        branching = tuple(_positive_int(x) for x in value)
        if r is not None and len(branching) != r:
            msg = f"need {r} branching numbers, got {len(branching)}"
            raise ValueError(msg)
        return branching

    return parse


class _FieldParser:
    """Reads fields of a raw mapping, collecting a ConfigError per bad field."""

    def __init__(self, data: Mapping[str, Any], errors: list[ConfigError]):
        self.data = data
        self.errors = errors

    def get(self, name: str, default: Any, convert: Callable[[Any], Any]) -> Any:
        if name not in self.data:
            return default
        try:
            return convert(self.data[name])
        except CascadekitError as e:
            self.errors.append(ConfigError(name, getattr(e, "message", str(e))))
        except (TypeError, ValueError) as e:
            self.errors.append(ConfigError(name, str(e)))
        return default

    def source(self) -> ModelSpec | RPCParams | None:
        raw = self.data.get("source")
        if not isinstance(raw, Mapping):
            self.errors.append(ConfigError("source", "must be a table of fields"))
            return None
        raw = {normalize_key(k): v for k, v in raw.items()}
        try:
            if raw.get("variant") == "rpc":
                extra = sorted(set(raw) - {"variant", "zeta", "q"})
                if extra:
                    self.errors.append(
                        ConfigError(f"source.{extra[0]}", "unknown field")
                    )
                    return None
                return RPCParams(tuple(raw["zeta"]), tuple(raw["q"]))
            model = ModelSpec.from_json(raw)
        except KeyError as e:
            self.errors.append(ConfigError(f"source.{e.args[0]}", "is required"))
            return None
        except CascadekitError as e:
            parameter = getattr(e, "parameter", "")
            self.errors.append(
                ConfigError(f"source.{parameter}", getattr(e, "message", str(e)))
            )
            return None
        except TypeError as e:
            self.errors.append(ConfigError("source", str(e)))
            return None
        if model.N > N_MAX:
            self.errors.append(
                ConfigError(
                    "source.N", f"exact enumeration is capped at {N_MAX}, got {model.N}"
                )
            )
            return None
        return model

    def rates(
        self, source: ModelSpec | RPCParams | None, r: int | None, eps: float, delta: float
    ) -> RateInputs | None:
        raw = self.data.get("rates")
        if raw is None:
            return None
        if not isinstance(raw, Mapping) or r is None:
            self.errors.append(ConfigError("rates", "must be a table of fields"))
            return None
        raw = {normalize_key(k): v for k, v in raw.items()}
        zeta = raw.get("zeta_levels")
        if zeta is None and isinstance(source, RPCParams):
            zeta = source.zeta
        if zeta is None:
            self.errors.append(ConfigError("rates.zeta_levels", "is required"))
            return None
        try:
            return RateInputs(
                r, tuple(zeta), eps=eps, delta=delta, eta=raw.get("eta", 0.1)
            )
        except CascadekitError as e:
            parameter = getattr(e, "parameter", "")
            self.errors.append(
                ConfigError(f"rates.{parameter}", getattr(e, "message", str(e)))
            )
        return None

    def moments(self, shape: TreeShape | None) -> tuple[Mapping[Vertex, int], ...]:
        raw = self.data.get("moments")
        if shape is None:
            return ()
        if raw is None:
            top = [(i,) for i in range(1, min(shape.m[0], 2) + 1)]
            defaults = [{top[0]: 1}, {top[0]: 2}]
            if len(top) > 1:
                defaults.append({top[0]: 1, top[1]: 1})
            return tuple(defaults)
        moments = []
        try:
            for i, entry in enumerate(raw):
                moment = {_vertex(k): int(p) for k, p in entry.items()}
                bad = [v for v in moment if not v or v not in shape]
                if not moment or bad:
                    self.errors.append(
                        ConfigError(
                            f"moments.{i}", f"needs vertices of shape {list(shape.m)}"
                        )
                    )
                    return ()
                moments.append(moment)
        except (AttributeError, TypeError, ValueError) as e:
            self.errors.append(ConfigError("moments", str(e)))
            return ()
        return tuple(moments)


def resolve_output_dir(
    out: str | None = None, config: ExperimentConfig | None = None
) -> Path:
    """Return ``out``, else the config's, the environment's, or the default."""
    configured = None if config is None else config.out_dir
    return Path(
        out or configured or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR
    )


def sample_measure(
    config: ExperimentConfig, rng: np.random.Generator
) -> tuple[AtomicMeasure, CascadeWeights | None]:
    """Draw the measure of one disorder, with the cascade when there is one."""
    if isinstance(config.source, RPCParams):
        cascade = sample_rpc(config.source, config.truncation, rng, tail=config.tail)
        return embed_rost(cascade, config.source.q)[1], cascade
    disorder = sample_disorder(config.source, rng)
    return gibbs(disorder, config.source.beta), None


def disorder_shape(
    config: ExperimentConfig, cascade: CascadeWeights | None
) -> TreeShape:
    """Return the configured shape, else the greedy shape of ``cascade`` at ``eps``.

    Raises :class:`InsufficientMassError` when the cascade's dustbin leaves no
    depth above ``1 - eps``.
    """
    if config.shape is not None:
        return config.shape
    if cascade is None:
        msg = "A greedy shape needs a cascade"
        raise CascadekitError(msg)
    return greedy_tree_shape(cascade.tree, config.eps)


def _overlap_row(
    config: ExperimentConfig,
    measure: AtomicMeasure,
    edges: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    if isinstance(measure, GibbsMeasure):
        return overlap_histogram(measure, edges, rng, config.n_pairs, config.mode)
    if config.mode == "exact":
        atoms = np.arange(measure.size)
        row = np.zeros(edges.size - 1)
        for block, overlaps in measure.iter_blocks(atoms, atoms):
            weights = np.outer(measure.masses[block], measure.masses)
            row += OverlapLaw(overlaps.ravel(), weights.ravel()).histogram(edges)
        return row
    a, b = measure.sample(config.n_pairs, rng), measure.sample(config.n_pairs, rng)
    return OverlapLaw.from_samples(measure.pair_overlaps(a, b)).histogram(edges)


@dataclass(frozen=True)
class DisorderResult:
    """Everything one disorder contributes to a report.

    Raw replica draws are kept so that reductions happen once, in job order.
    """

    index: int
    found: bool = False
    block: int | None = None
    shape: list[int] | None = None
    shape_error: str | None = None
    clusters: dict[str, Any] | None = None
    masses: dict[str, Any] | None = None
    cascade: dict[str, Any] | None = None
    f_total: float | None = None
    g_total: float | None = None
    stats_mode: str | None = None
    same_cluster: float | None = None
    indicator_gap: float | None = None
    orthogonal: dict[str, Any] | None = None
    pure_state: dict[str, Any] | None = None
    log_partition: float | None = None
    histogram: np.ndarray | None = field(default=None, repr=False)
    gg: np.ndarray | None = field(default=None, repr=False)
    violations: np.ndarray | None = field(default=None, repr=False)
    negatives: np.ndarray | None = field(default=None, repr=False)

    @property
    def dust(self) -> float | None:
        """Return the dustbin mass of the sampled cascade."""
        return None if self.cascade is None else self.cascade["dust"]

    @property
    def recovery_error(self) -> float | None:
        """Return the largest gap between recovered and cascade masses."""
        if self.masses is None or self.cascade is None:
            return None
        recovered = WeightedTree.from_json(self.masses)
        cascade = WeightedTree.from_json(self.cascade)
        return max(abs(recovered[v] - cascade[v]) for v in recovered.shape)

    def to_json(self) -> dict[str, Any]:
        """Serialize the per-disorder cluster report."""
        return {
            "block": self.block,
            "clusters": self.clusters,
            "dust": self.dust,
            "f_total": self.f_total,
            "found": self.found,
            "g_total": self.g_total,
            "index": self.index,
            "indicator_gap": self.indicator_gap,
            "log_partition": self.log_partition,
            "masses": self.masses,
            "orthogonal": self.orthogonal,
            "pure_state": self.pure_state,
            "recovery_error": self.recovery_error,
            "same_cluster": self.same_cluster,
            "shape": self.shape,
            "shape_error": self.shape_error,
            "stats_mode": self.stats_mode,
        }


def run_disorder(
    config: ExperimentConfig,
    stages: Sequence[str],
    index: int,
    stream: np.random.SeedSequence,
) -> DisorderResult:
    """Sample disorder ``index`` from its seed ``stream`` and compute every stage."""
    rng = np.random.default_rng(stream)
    measure, cascade = sample_measure(config, rng)
    result: dict[str, Any] = {"index": index}
    if isinstance(measure, GibbsMeasure):
        result["log_partition"] = measure.log_partition
    if cascade is not None:
        result["cascade"] = cascade.to_json()

    if "simulate" in stages:
        edges = histogram_edges(config.bins)
        result["histogram"] = _overlap_row(config, measure, edges, rng)

    if "cluster" in stages:
        try:
            shape = disorder_shape(config, cascade)
        except InsufficientMassError as e:
            shape = None
            result["shape_error"] = str(e)
        else:
            result["shape"] = list(shape.m)
        search = None
        if shape is not None:
            search = search_exhaustion(
                measure, config.q, config.eps, config.delta, shape, config.M, rng
            )
        if search is not None:
            decomposition = clean_clusters(search.family, measure)
            stats = clustering_stats(
                measure, decomposition, config.q, config.eps, rng, config.n_replicas
            )
            decomposition = with_stats(decomposition, stats)
            tree, _ = cluster_masses(decomposition)
            top = sorted(
                (decomposition.cluster(v) for v in shape.level(1)),
                key=lambda atoms: -measure.masses[atoms].sum(),
            )
            orthogonal = orthogonal_structure_check(
                measure, top, config.eps, min(config.k0, shape.m[0])
            )
            gap = indicator_approx_gap(
                measure, decomposition, config.kappa, config.q[-1], rng, config.n_replicas
            )
            result.update(
                found=True,
                block=search.block,
                clusters=decomposition.to_json(include_members=False),
                masses=tree.to_json(),
                f_total=stats.f_total,
                g_total=stats.g_total,
                stats_mode=stats.mode,
                same_cluster=same_cluster_probability(decomposition),
                indicator_gap=gap.value,
                orthogonal=orthogonal.to_json(),
            )
        if config.q_star is not None:
            q_lower = tuple(x for x in config.q[:-1] if x < config.q_star - config.Delta)
            if shape is None:
                pure = {
                    "found": False,
                    "h_total": h_statistic(measure, config.q_star, config.Delta),
                }
            else:
                pure = pure_state_variant(
                    measure,
                    config.q_star,
                    config.Delta,
                    config.eps,
                    TreeShape(shape.m[: len(q_lower) + 1]),
                    config.M,
                    rng,
                    q_lower=q_lower,
                    delta=config.delta,
                ).to_json()
            result["pure_state"] = pure

    if "diagnose" in stages:
        f = TestFunction.threshold(1, 2, config.q[0])
        result["gg"] = gg_terms(measure, f, Monomial(1), 2, config.n_replicas, rng)
        result["violations"] = triple_violations(
            measure, config.eps, config.n_replicas, rng
        )
        result["negatives"] = negative_overlaps(
            measure, config.eps, config.n_replicas, rng
        )
    return DisorderResult(**result)


def cancel(tasks: Iterable[asyncio.Task[Any]], reporter: Reporter) -> None:  # pragma: no cover
    """Asyncio signal handler that cancels all `tasks` and reports to stderr."""
    reporter.error("Aborted!")
    for task in tasks:
        task.cancel()


def shutdown(loop: asyncio.AbstractEventLoop) -> None:  # pragma: no cover
    """Cancel all pending tasks on `loop`, wait for them, and close the loop."""
    try:
        to_cancel = [task for task in asyncio.all_tasks(loop) if not task.done()]
        if not to_cancel:
            return
        for task in to_cancel:
            task.cancel()
        loop.run_until_complete(asyncio.gather(*to_cancel, return_exceptions=True))
    finally:
        # Running `concurrent.futures.Future` objects cannot be cancelled.
        logging.getLogger("concurrent.futures").setLevel(logging.CRITICAL)
        loop.close()


async def _run_disorders(
    config: ExperimentConfig,
    stages: Sequence[str],
    streams: Sequence[np.random.SeedSequence],
    loop: asyncio.AbstractEventLoop,
    executor: ProcessPoolExecutor | ThreadPoolExecutor,
    reporter: Reporter,
) -> list[DisorderResult]:
    tasks = {
        asyncio.ensure_future(
            loop.run_in_executor(
                executor, run_disorder, config, tuple(stages), index, stream
            )
        ): index
        for index, stream in enumerate(streams)
    }
    in_process = tasks.keys()
    try:
        loop.add_signal_handler(signal.SIGINT, cancel, in_process, reporter)
        loop.add_signal_handler(signal.SIGTERM, cancel, in_process, reporter)
    except NotImplementedError:  # pragma: no cover
        pass
    results: dict[int, DisorderResult] = {}
    failures: dict[int, BaseException] = {}
    cancelled = []
    while in_process:
        done, _ = await asyncio.wait(in_process, return_when=asyncio.FIRST_COMPLETED)
        for task in done:
            index = tasks.pop(task)
            if task.cancelled():  # pragma: no cover
                cancelled.append(task)
            elif task.exception():
                failures[index] = task.exception()
            else:
                results[index] = task.result()
                reporter.print(f"Disorder {index} done.", level=2, bold=False)
    if cancelled:  # pragma: no cover
        await asyncio.gather(*cancelled, return_exceptions=True)
        msg = "Run aborted before every disorder finished"
        raise CascadekitError(msg)
    if failures:
        raise failures[min(failures)]
    return [results[index] for index in range(config.n_disorder)]


def run_disorders(
    config: ExperimentConfig,
    stages: Sequence[str] = STAGES,
    workers: int = 1,
    reporter: Reporter | None = None,
    streams: Sequence[np.random.SeedSequence] | None = None,
) -> list[DisorderResult]:
    """Run every disorder, in a process pool when ``workers > 1``.

    Disorder i draws from ``streams[i]``, by default the i-th child of the seed.
    """
    reporter = reporter or Reporter(-1)
    if streams is None:
        streams = spawn_streams(config.seed, config.n_disorder)
    if sys.platform == "win32":  # pragma: no cover
        # Work around https://bugs.python.org/issue26903
        workers = min(workers, 61)
    if workers < 2 or config.n_disorder < 2:
        return [
            run_disorder(config, stages, index, stream)
            for index, stream in enumerate(streams)
        ]
    loop = asyncio.new_event_loop()
    try:
        executor = ProcessPoolExecutor(max_workers=workers)
    except (ImportError, OSError):  # pragma: no cover
        # Some systems do not support multiprocessing.
        executor = ThreadPoolExecutor(max_workers=1)
    try:
        return loop.run_until_complete(
            _run_disorders(config, stages, streams, loop, executor, reporter)
        )
    finally:
        shutdown(loop)
        executor.shutdown()


def _across(values: Sequence[float], modes: Sequence[str | None]) -> dict[str, Any]:
    mode = "exact" if len(values) == 1 and modes[0] == "exact" else "mc"
    return RunningStats.of(values).estimate(mode).to_json()


def aggregate(
    config: ExperimentConfig,
    stages: Sequence[str],
    results: Sequence[DisorderResult],
    stream: np.random.SeedSequence | None = None,
) -> dict[str, Any]:
    """Reduce per-disorder results, in index order, to the report diagnostics.

    Reference draws come from ``stream``, by default the seed's child after
    the last disorder.
    """
    diagnostics: dict[str, Any] = {}
    if stream is None:
        stream = spawn_streams(config.seed, config.n_disorder + 1)[-1]
    rng = np.random.default_rng(stream)
    found = [r for r in results if r.found]
    n = len(results)
    if config.is_cascade:
        dust = RunningStats.of([r.dust for r in results])
        diagnostics["dust"] = dust.estimate().to_json()
        bound = rpc_dust_bound(config.source, config.truncation)
        diagnostics["dust_bound"] = bound if math.isfinite(bound) else None

    if "simulate" in stages:
        edges = histogram_edges(config.bins)
        histogram = summarize_histograms(
            edges, np.array([r.histogram for r in results]), config.mode
        )
        diagnostics["overlap_histogram"] = histogram.to_json()
        diagnostics["top_overlap_mass"] = histogram.mass(config.q[-1]).to_json()
        if not config.is_cascade and n >= 2:
            gap = dfm_gap_from_log_partitions(
                [r.log_partition for r in results], DFM_EXPONENT, config.source.N
            )
            diagnostics["dfm_gap"] = {"a": DFM_EXPONENT, **gap.to_json()}

    if "cluster" in stages:
        diagnostics["search_success"] = RunningStats.of(
            [r.found for r in results]
        ).estimate().to_json()
        if found:
            modes = [r.stats_mode for r in found]
            diagnostics["f_total"] = _across([r.f_total for r in found], modes)
            diagnostics["g_total"] = _across([r.g_total for r in found], modes)
            diagnostics["indicator_gap"] = _across(
                [r.indicator_gap for r in found], modes
            )
            diagnostics["same_cluster_probability"] = _across(
                [r.same_cluster for r in found], modes
            )
            diagnostics["orthogonal_pass_rate"] = RunningStats.of(
                [r.orthogonal["passed"] for r in found]
            ).estimate().to_json()
            if len(config.q) == 1 and len(found) >= 2:
                leaves = [
                    WeightedTree.from_json(r.masses).level_weights(1) for r in found
                ]
                diagnostics["talagrand_residual"] = {
                    str(list(c)): talagrand_residual(leaves, c).to_json()
                    for c in ((2,), (2, 2))
                }
        if found and config.is_cascade:
            diagnostics["same_cluster_reference"] = 1 - config.source.zeta[-1]
            diagnostics["recovery_error"] = max(r.recovery_error for r in found)
            gaps = compare_to_rpc(
                [WeightedTree.from_json(r.masses) for r in found],
                config.source,
                config.moments,
                rng,
                config.rpc_samples,
                config.truncation,
                tail=config.tail,
            )
            diagnostics["mass_law"] = [gap.to_json() for gap in gaps]
        if config.q_star is not None:
            pure = [r.pure_state for r in results]
            diagnostics["pure_state_success"] = RunningStats.of(
                [p["found"] for p in pure]
            ).estimate().to_json()
            diagnostics["h_total"] = RunningStats.of(
                [p["h_total"] for p in pure]
            ).estimate().to_json()

    if "diagnose" in stages:
        total = config.n_replicas * n
        diagnostics["gg_residual"] = gg_residual_from_terms(
            [r.gg for r in results], 2, total
        ).to_json()
        diagnostics["ultrametric_violation"] = pooled_mean(
            [r.violations for r in results]
        ).to_json()
        diagnostics["positivity_defect"] = pooled_mean(
            [r.negatives for r in results]
        ).to_json()
    return diagnostics


@dataclass(frozen=True)
class RunReport:
    """Config echo, per-disorder reports, diagnostics, versions and timing."""

    config: ExperimentConfig
    stages: tuple[str, ...]
    disorders: list[dict[str, Any]]
    diagnostics: dict[str, Any]
    versions: dict[str, str]
    timing: dict[str, Any] = field(default_factory=dict, compare=False)

    def to_json(self, include_timing: bool = True) -> dict[str, Any]:
        """Serialize the report; timing is the only run-dependent part."""
        data = {
            "config": self.config.to_json(),
            "diagnostics": self.diagnostics,
            "disorders": self.disorders,
            "stages": list(self.stages),
            "versions": self.versions,
        }
        if include_timing:
            data["timing"] = self.timing
        return data

    def dumps(self, include_timing: bool = True) -> str:
        """Return the report as sorted, indented JSON."""
        return json.dumps(self.to_json(include_timing), sort_keys=True, indent=2)

    def write(self, out_dir: Path, formats: Sequence[str] = FORMATS) -> list[Path]:
        """Write ``report.json`` and the CSV tables into ``out_dir``."""
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if "json" in formats:
            path = out_dir / "report.json"
            path.write_text(self.dumps() + "\n", encoding="utf-8")
            written.append(path)
        if "csv" in formats:
            histogram = self.diagnostics.get("overlap_histogram")
            if histogram is not None:
                path = out_dir / "overlap_histogram.csv"
                with path.open("w", newline="", encoding="utf-8") as f:
                    OverlapHistogram(
                        np.array(histogram["edges"]),
                        np.array(histogram["masses"]),
                        np.array(histogram["stderr"]),
                        histogram["n_disorder"],
                        histogram["mode"],
                    ).to_csv(f)
                written.append(path)
            if any(d["masses"] is not None for d in self.disorders):
                path = out_dir / "cluster_masses.csv"
                with path.open("w", newline="", encoding="utf-8") as f:
                    writer = csv.writer(f)
                    writer.writerow(["disorder", "vertex", "mass"])
                    for d in self.disorders:
                        if d["masses"] is None:
                            continue
                        for vertex, mass in d["masses"]["weights"].items():
                            writer.writerow([d["index"], vertex, mass])
                written.append(path)
        return written


def _versions() -> dict[str, str]:
    from . import __version__

    return {"cascadekit": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def run(
    config: ExperimentConfig,
    stages: Sequence[str] = STAGES,
    workers: int = 1,
    cache: ReportCache | None = None,
    reporter: Reporter | None = None,
) -> RunReport:
    """Run the pipeline stages over every disorder of ``config``.

    ``simulate`` samples the overlap law, ``cluster`` extracts and scores the
    clusters and ``diagnose`` estimates the replica identities.
    """
    reporter = reporter or Reporter(-1)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError("stages", f"unknown stage {unknown[0]!r}")
    stages = tuple(s for s in STAGES if s in stages)
    key = ReportCache.key(config.canonical(stages))
    start = time.perf_counter()
    if cache is not None:
        cached = cache.read(key)
        if cached is not None:
            reporter.print("Using a cached report.", level=1, bold=False)
            return RunReport(
                config,
                stages,
                cached["disorders"],
                cached["diagnostics"],
                cached["versions"],
                {"cached": True, "seconds": time.perf_counter() - start},
            )

    streams = spawn_streams(config.seed, config.n_disorder + 1)
    results = run_disorders(config, stages, workers, reporter, streams[:-1])
    for r in results:
        if r.shape_error is not None:
            reporter.debug(f"Disorder {r.index} has no greedy shape: {r.shape_error}")
        if r.masses is not None:
            tree = WeightedTree.from_json(r.masses)
            reporter.debug(f"Disorder {r.index} cluster masses:\n{dump_tree(tree)}")
    found = sum(r.found for r in results)
    if "cluster" in stages:
        reporter.print(
            f"Clusters found in {plural(found):disorder} of {len(results)}.",
            level=1,
            bold=False,
        )
    report = RunReport(
        config,
        stages,
        [r.to_json() for r in results],
        aggregate(config, stages, results, streams[-1]),
        _versions(),
        {"cached": False, "seconds": time.perf_counter() - start},
    )
    if cache is not None:
        cache.write(key, report.to_json(include_timing=False))
    return report
