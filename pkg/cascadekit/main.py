"""Main entrypoint for cascadekit."""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from multiprocessing import freeze_support
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Iterator, Sequence

import click
import toml
from click import Context
from tabulate import tabulate

from . import __version__
from .cascades import RPCParams, sample_pd, sample_rpc, validate_cascade
from .diagnostics import pd_moment
from .exceptions import (
    CascadekitError,
    ConfigError,
    ConfigErrors,
    InvalidParameterError,
)
from .experiment import (
    FORMATS,
    STAGES,
    ExperimentConfig,
    load_config_file,
    resolve_output_dir,
    run,
)
from .rates import PowerLawDecay, RateInputs, invert_rates, quant_rates
from .util import Reporter, ReportCache, as_generator, plural

if TYPE_CHECKING:  # pragma: no cover
    from .cascades import CascadeWeights, PDSample

PYPROJECT_KEYS = {"format": "formats", "mode": "mode", "out": "out", "workers": "workers"}


def _find_pyproject_toml() -> Path | None:
    for directory in (Path.cwd(), *Path.cwd().parents):
        candidate = directory / "pyproject.toml"
        if candidate.is_file():
            return candidate
        if (directory / ".git").exists() or (directory / ".hg").is_dir():
            return None
    return None


def _check_pyproject_value(key: str, value: Any, choices: Sequence[str]) -> None:
    if key == "workers":
        valid = isinstance(value, int) and not isinstance(value, bool) and value >= 1
        expected = "an integer >= 1"
    elif key == "out":
        valid = isinstance(value, str)
        expected = "a string"
    else:
        valid = isinstance(value, str) and value in choices
        expected = f"one of {', '.join(choices)}"
    if not valid:
        raise click.BadOptionUsage(key, f"Config key {key} must be {expected}")


def _parse_pyproject_config(
    context: click.Context, _: click.Parameter, value: str | None
) -> dict[str, Any] | None:
    if not value:
        pyproject_toml = _find_pyproject_toml()
        value = str(pyproject_toml) if pyproject_toml else None
    if not value:
        return None
    try:
        pyproject_toml = toml.load(value)
        config = pyproject_toml.get("tool", {}).get("cascadekit", {})
        config = {k.replace("--", "").replace("-", "_"): v for k, v in config.items()}
    except (OSError, ValueError) as e:  # pragma: no cover
        raise click.FileError(
            filename=value, hint=f"Error reading configuration file: {e}"
        ) from None

    params = {param.name: param for param in context.command.params}
    defaults = dict(context.default_map or {})
    for key, name in PYPROJECT_KEYS.items():
        if key not in config or name not in params:
            continue
        param = params[name]
        choices = getattr(param.type, "choices", ())
        _check_pyproject_value(key, config[key], choices)
        defaults[name] = [config[key]] if param.multiple else config[key]
    context.default_map = defaults
    return config


def _check_formats(
    context: click.Context, param: click.Parameter, value: tuple[str, ...]
) -> tuple[str, ...]:
    formats = tuple(dict.fromkeys(v.lower() for v in value))
    if len(formats) > 1:
        raise click.BadParameter(
            f"conflicting values {', '.join(formats)}; give one format, or none for"
            " the default set",
            context,
            param,
        )
    return formats


def _configure_reporter(verbose: int, quiet: bool) -> None:
    reporter.level = -1 if quiet else verbose


@contextmanager
def _exit_codes(context: Context) -> Iterator[None]:
    """Map config errors to exit code 2 and every other failure to 1."""
    try:
        yield
    except ConfigErrors as e:
        code, messages = 2, [str(error) for error in e.errors]
    except ConfigError as e:
        code, messages = 2, [str(e)]
    except CascadekitError as e:
        code, messages = 1, [str(e)]
    except Exception as e:  # noqa: BLE001
        code, messages = 1, [f"{e.__class__.__name__}: {e}"]
    else:
        return
    for message in messages:
        reporter.error(message)
    reporter.print(f"Done, but {plural(len(messages)):error} occurred ❌💥❌")
    context.exit(code)


def common_options(
    formats: Sequence[str], default: Sequence[str] = FORMATS
) -> Callable[[Callable], Callable]:
    """Add the output, verbosity and pyproject options shared by every command."""
    options = [
        click.option(
            "-o",
            "--out",
            type=click.Path(file_okay=False, path_type=str),
            help=(
                "Directory to write results to. Defaults to the config's out_dir,"
                " then $CASCADEKIT_OUTPUT_DIR, then ./cascadekit-output."
            ),
        ),
        click.option(
            "-f",
            "--format",
            "formats",
            type=click.Choice(formats, case_sensitive=False),
            multiple=True,
            callback=_check_formats,
            help=f"Output format. Writes {' and '.join(default)} when not given.",
        ),
        click.option(
            "-p",
            "--pyproject-config",
            type=click.Path(
                exists=True,
                file_okay=True,
                dir_okay=False,
                readable=True,
                allow_dash=False,
                path_type=str,
            ),
            is_eager=True,
            expose_value=False,
            callback=_parse_pyproject_config,
            help="Path to pyproject.toml. Used to load [tool.cascadekit] settings.",
        ),
        click.option(
            "-q",
            "--quiet",
            is_flag=True,
            help=(
                "Don't emit non-error messages to stderr. Errors are still emitted;"
                " silence those with 2>/dev/null. Overrides --verbose."
            ),
        ),
        click.option(
            "-v",
            "--verbose",
            count=True,
            help=(
                "Log progress and cluster trees. Can be specified multiple times for"
                " different levels of verbosity."
            ),
        ),
    ]

    def decorator(f: Callable) -> Callable:
        for option in reversed(options):
            f = option(f)
        return f

    return decorator


def experiment_options(f: Callable) -> Callable:
    """Add the options of the commands driven by an experiment config."""
    options = [
        click.option(
            "-c",
            "--config",
            "config_path",
            required=True,
            type=click.Path(exists=True, dir_okay=False, readable=True, path_type=str),
            help="Experiment config, JSON or TOML.",
        ),
        click.option(
            "-s", "--seed", type=click.IntRange(0), help="Override the config seed."
        ),
        click.option(
            "-m",
            "--mode",
            type=click.Choice(["exact", "mc"]),
            help="Override the config's estimator mode.",
        ),
        click.option(
            "-w",
            "--workers",
            type=click.IntRange(1),
            default=1,
            show_default=True,
            help="Number of worker processes. Results do not depend on it.",
        ),
        click.option(
            "-i",
            "--ignore-cache",
            is_flag=True,
            help="Ignore the report cache. Useful for testing.",
        ),
    ]
    for option in reversed(options):
        f = option(f)
    return common_options(FORMATS)(f)


def _run_stages(
    context: Context,
    stages: Sequence[str],
    config_path: str,
    seed: int | None,
    mode: str | None,
    workers: int,
    ignore_cache: bool,
    out: str | None,
    formats: tuple[str, ...],
    verbose: int,
    quiet: bool,
) -> None:
    _configure_reporter(verbose, quiet)
    with _exit_codes(context):
        config = ExperimentConfig.from_mapping(
            load_config_file(config_path), seed=seed, mode=mode
        )
        reporter.print(f"Running {', '.join(stages)} on {config_path}.", 1, bold=False)
        report = run(config, stages, workers, ReportCache(ignore_cache), reporter)
        written = report.write(resolve_output_dir(out, config), formats or FORMATS)
    for path in written:
        reporter.print(f"Wrote '{path}'.", 1, bold=False)
    reporter.print(f"{plural(config.n_disorder):disorder} processed.")
    reporter.print("Done! 🎉")
    context.exit(0)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__)
def main() -> None:
    """Simulate Ruelle cascades and spin glasses and measure their ultrametricity."""


@main.command("run")
@experiment_options
@click.pass_context
def run_command(context: Context, config_path: str, **options: Any) -> None:
    """Run sampling, cluster extraction and diagnostics from a config."""
    _run_stages(context, STAGES, config_path, **options)


@main.command()
@experiment_options
@click.pass_context
def simulate(context: Context, config_path: str, **options: Any) -> None:
    """Sample the overlap law of every disorder."""
    _run_stages(context, ("simulate",), config_path, **options)


@main.command()
@experiment_options
@click.pass_context
def cluster(context: Context, config_path: str, **options: Any) -> None:
    """Extract clusters and compare their masses with a cascade."""
    _run_stages(context, ("cluster",), config_path, **options)


@main.command()
@experiment_options
@click.pass_context
def diagnose(context: Context, config_path: str, **options: Any) -> None:
    """Estimate the replica identity defects."""
    _run_stages(context, ("diagnose",), config_path, **options)


def _write_pd(out_dir: Path, samples: list[PDSample], formats: Sequence[str]) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        path = out_dir / "pd_samples.json"
        data = {"samples": [s.to_json() for s in samples]}
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        path = out_dir / "pd_samples.csv"
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["sample", "rank", "mass"])
            for i, s in enumerate(samples):
                for rank, mass in enumerate(s.atoms.tolist(), 1):
                    writer.writerow([i, rank, mass])
        written.append(path)
    return written


@main.command("sample-pd")
@click.option(
    "-t",
    "--theta",
    required=True,
    type=click.FloatRange(0, 1, min_open=True, max_open=True),
    help="Poisson-Dirichlet parameter.",
)
@click.option(
    "-K",
    "--atoms",
    type=click.IntRange(1),
    default=1000,
    show_default=True,
    help="Number of ranked atoms kept.",
)
@click.option(
    "-n",
    "--samples",
    type=click.IntRange(1),
    default=1,
    show_default=True,
    help="Number of independent samples.",
)
@click.option(
    "--tail",
    type=click.Choice(["none", "mean"]),
    default="none",
    show_default=True,
    help="Add the conditional mean of the discarded atoms to the normalizer.",
)
@click.option("-s", "--seed", required=True, type=click.IntRange(0), help="Seed.")
@common_options(FORMATS)
@click.pass_context
def sample_pd_command(
    context: Context,
    theta: float,
    atoms: int,
    samples: int,
    tail: str,
    seed: int,
    out: str | None,
    formats: tuple[str, ...],
    quiet: bool,
    verbose: int,
) -> None:
    """Draw ranked, normalized Poisson-Dirichlet masses."""
    _configure_reporter(verbose, quiet)
    with _exit_codes(context):
        rng = as_generator(seed)
        draws = [sample_pd(theta, atoms, rng, tail=tail) for _ in range(samples)]
        written = _write_pd(resolve_output_dir(out), draws, formats or FORMATS)
    estimate = pd_moment(draws, 2)
    reporter.print(
        f"Mean sum of squared masses: {estimate.value:.6g} +- {estimate.stderr:.2g}"
        f" (limit {1 - theta:.6g}).",
        1,
        bold=False,
    )
    for path in written:
        reporter.print(f"Wrote '{path}'.", 1, bold=False)
    reporter.print(f"{plural(samples):sample} drawn.")
    reporter.print("Done! 🎉")
    context.exit(0)


def _write_rpc(
    out_dir: Path,
    params: RPCParams,
    cascades: list[CascadeWeights],
    formats: Sequence[str],
) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        path = out_dir / "cascades.json"
        data = {
            "params": params.to_json(),
            "samples": [
                {**c.to_json(), "report": validate_cascade(c).to_json()}
                for c in cascades
            ],
        }
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        path = out_dir / "cascades.csv"
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["sample", "vertex", "mass"])
            for i, c in enumerate(cascades):
                for vertex, mass in c.to_json()["weights"].items():
                    writer.writerow([i, vertex, mass])
                writer.writerow([i, "dust", c.dust])
        written.append(path)
    return written


@main.command("sample-rpc")
@click.option(
    "-z",
    "--zeta",
    required=True,
    multiple=True,
    type=float,
    help="Cumulative level masses, one per level, strictly increasing in (0, 1).",
)
@click.option(
    "--q",
    "levels",
    required=True,
    multiple=True,
    type=float,
    help="Overlap levels, one per level, strictly increasing in (0, 1].",
)
@click.option(
    "-b",
    "--branching",
    multiple=True,
    type=click.IntRange(1),
    help="Children kept per vertex; one value for all levels or one per level.",
)
@click.option(
    "-n",
    "--samples",
    type=click.IntRange(1),
    default=1,
    show_default=True,
    help="Number of independent cascades.",
)
@click.option("-s", "--seed", required=True, type=click.IntRange(0), help="Seed.")
@common_options(FORMATS)
@click.pass_context
def sample_rpc_command(
    context: Context,
    zeta: tuple[float, ...],
    levels: tuple[float, ...],
    branching: tuple[int, ...],
    samples: int,
    seed: int,
    out: str | None,
    formats: tuple[str, ...],
    quiet: bool,
    verbose: int,
) -> None:
    """Draw truncated Ruelle probability cascades in standard order."""
    _configure_reporter(verbose, quiet)
    try:
        params = RPCParams(zeta, levels)
    except InvalidParameterError as e:
        hint = "--q" if e.parameter == "q" else "--zeta"
        raise click.BadParameter(e.message, context, param_hint=hint) from None
    m = branching or (8,)
    if len(m) == 1:
        m = m * params.r
    if len(m) != params.r:
        raise click.BadParameter(
            f"need 1 or {params.r} values, got {len(m)}", context, param_hint="--branching"
        )
    with _exit_codes(context):
        rng = as_generator(seed)
        cascades = [sample_rpc(params, m, rng) for _ in range(samples)]
        written = _write_rpc(resolve_output_dir(out), params, cascades, formats or FORMATS)
    invalid = sum(not validate_cascade(c).valid for c in cascades)
    for path in written:
        reporter.print(f"Wrote '{path}'.", 1, bold=False)
    reporter.print(f"{plural(samples):cascade} drawn.")
    if invalid:
        reporter.error(f"{plural(invalid):cascade} failed validation.")
        reporter.print(f"Done, but {plural(invalid):error} occurred ❌💥❌")
        context.exit(1)
    reporter.print("Done! 🎉")
    context.exit(0)


@main.command("rates")
@click.option("-r", "--depth", required=True, type=click.IntRange(1), help="Depth r.")
@click.option(
    "-z",
    "--zeta",
    required=True,
    multiple=True,
    type=float,
    help="Cumulative masses zeta_1, ..., zeta_r.",
)
@click.option(
    "--eps",
    type=click.FloatRange(0, 1, min_open=True, max_open=True),
    default=0.1,
    show_default=True,
    help="Exhaustion tolerance.",
)
@click.option(
    "--delta",
    type=click.FloatRange(0, 1, min_open=True, max_open=True),
    default=0.1,
    show_default=True,
    help="Cousin-overlap tolerance.",
)
@click.option(
    "--eta",
    type=click.FloatRange(0, 1, min_open=True, max_open=True),
    default=0.1,
    show_default=True,
    help="Failure probability.",
)
@click.option(
    "--nu",
    multiple=True,
    type=click.IntRange(1),
    help="Values of nu to evaluate. Defaults to 1, 2 and 3.",
)
@click.option(
    "--decay-c",
    type=click.FloatRange(0, min_open=True),
    help="Constant c of the gap decay D(N) = c N^(-gamma).",
)
@click.option(
    "--decay-gamma",
    type=click.FloatRange(0, min_open=True),
    help="Exponent gamma of the gap decay D(N) = c N^(-gamma).",
)
@click.option(
    "-N",
    "--size",
    type=click.FloatRange(1),
    help="Report the largest nu whose system size N_0 is at most this.",
)
@common_options((*FORMATS, "table"), ("table",))
@click.pass_context
def rates_command(
    context: Context,
    depth: int,
    zeta: tuple[float, ...],
    eps: float,
    delta: float,
    eta: float,
    nu: tuple[int, ...],
    decay_c: float | None,
    decay_gamma: float | None,
    size: float | None,
    out: str | None,
    formats: tuple[str, ...],
    quiet: bool,
    verbose: int,
) -> None:
    """Evaluate the chain of quantitative rates."""
    _configure_reporter(verbose, quiet)
    if (decay_c is None) != (decay_gamma is None):
        raise click.UsageError("--decay-c and --decay-gamma go together", context)
    if size is not None and decay_c is None:
        raise click.UsageError("--size needs --decay-c and --decay-gamma", context)
    decay = None if decay_c is None else PowerLawDecay(decay_c, decay_gamma)
    try:
        inputs = RateInputs(depth, zeta, eps, delta, eta, decay)
    except InvalidParameterError as e:
        raise click.BadParameter(e.message, context, param_hint="--zeta") from None
    formats = formats or ("table",)
    with _exit_codes(context):
        outputs = [quant_rates(inputs, k) for k in nu or (1, 2, 3)]
        largest = None if size is None else invert_rates(inputs, size)
        out_dir = resolve_output_dir(out)
        written = []
        if "table" in formats:
            click.echo(tabulate([o.to_row() for o in outputs], headers="keys"))
        if "json" in formats:
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / "rates.json"
            data = {"largest_nu": largest, "rates": [o.to_json() for o in outputs]}
            path.write_text(
                json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
            written.append(path)
        if "csv" in formats:
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / "rates.csv"
            with path.open("w", newline="", encoding="utf-8") as f:
                rows = [o.to_row() for o in outputs]
                writer = csv.DictWriter(f, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
            written.append(path)
    for output in outputs:
        for note in output.notes:
            reporter.print(f"nu={output.nu}: {note}", 1, bold=False)
    for path in written:
        reporter.print(f"Wrote '{path}'.", 1, bold=False)
    if largest is not None:
        reporter.print(f"Largest nu with N_0 <= {size:g}: {largest}")
    reporter.print("Done! 🎉")
    context.exit(0)


reporter = Reporter(0)

if __name__ == "__main__":  # pragma: no cover
    freeze_support()
    main()
