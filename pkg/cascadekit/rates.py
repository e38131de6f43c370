"""Closed-form constants, tail and localization bounds, and rate towers.

Quantities here grow like towers of exponentials, so most of them are carried
as :class:`Magnitude` values: a number stored as ``exp^height(top)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

from .const import OVERFLOW_GUARD
from .exceptions import InvalidParameterError, RateOverflowError
from .util import check_increasing, check_open_unit

MAX_NU = 64


def _exp(x: float) -> float:
    return math.inf if x > 709.0 else math.exp(x)


def _log(x: float) -> float:
    if x <= 0:
        return -math.inf
    return math.log(x)


@dataclass(frozen=True)
class Magnitude:
    """A positive number stored as ``exp^height(top)``, or its reciprocal."""

    top: float
    height: int = 1
    reciprocal: bool = False

    @classmethod
    def of(cls, value: float) -> Magnitude:
        """Wrap an ordinary positive float."""
        if value <= 0:
            raise InvalidParameterError("value", f"must be positive, got {value}")
        return cls(math.log(value), 1)

    def at_height(self, h: int) -> float:
        """Return the representation at height ``h`` (0 is the number itself).

        Reciprocals are handled by :attr:`log` and :attr:`value`; this works on
        the underlying large number.
        """
        x = self.top
        for _ in range(self.height - h):
            x = _exp(x)
        for _ in range(h - self.height):
            x = _log(x)
        return x

    @property
    def log(self) -> float:
        """Return the natural logarithm, possibly infinite."""
        log = self.at_height(1)
        return -log if self.reciprocal else log

    @property
    def value(self) -> float:
        """Return the number as a float, possibly ``inf`` or ``0.0``."""
        value = self.at_height(0)
        if self.reciprocal:
            return 0.0 if math.isinf(value) else 1 / value
        return value

    def _compare(self, other: Magnitude) -> int:
        if self.reciprocal or other.reciprocal:
            msg = "Reciprocal magnitudes are not ordered"
            raise TypeError(msg)
        for h in range(max(self.height, other.height) + 1):
            a, b = self.at_height(h), other.at_height(h)
            if a == b == math.inf:
                continue
            return (a > b) - (a < b)
        return 0

    def __le__(self, other: Magnitude) -> bool:
        """Compare two magnitudes."""
        return self._compare(other) <= 0

    def __lt__(self, other: Magnitude) -> bool:
        """Compare two magnitudes."""
        return self._compare(other) < 0

    def to_json(self) -> dict[str, Any]:
        """Serialize with the finite logarithm and value when they exist."""
        log, value = self.log, self.value
        return {
            "height": self.height,
            "log": log if math.isfinite(log) else None,
            "reciprocal": self.reciprocal,
            "top": self.top,
            "value": value if math.isfinite(value) else None,
        }


def c_theta(theta: float) -> float:
    """Return ``C(theta) = Gamma(1 + 1/theta) / Gamma(1 - theta)^(1/theta)``."""
    theta = check_open_unit("theta", theta)
    return math.exp(gammaln(1 + 1 / theta) - gammaln(1 - theta) / theta)


def phi_bound(m: float, theta: float) -> float:
    """Return the bound on the expected PD(theta) mass beyond the m-th atom."""
    theta = check_open_unit("theta", theta)
    if m < 2:
        raise InvalidParameterError("m", f"must be >= 2, got {m}")
    power = (
        c_theta(theta)
        * 2 ** (1 / theta + 1)
        / m ** ((1 - theta) / theta)
        * theta
        / (1 - theta)
    )
    return power + math.exp(-m / 8) / -math.expm1(-1 / 8)


def solve_phi(theta: float, target: float) -> int:
    """Return the least integer ``m >= 2`` with ``phi_bound(m, theta) <= target``."""
    if not target > 0:
        raise InvalidParameterError("target", f"must be positive, got {target}")
    if phi_bound(2, theta) <= target:
        return 2
    high = 4
    while phi_bound(high, theta) > target:
        high *= 2
        if high > OVERFLOW_GUARD:
            raise RateOverflowError(f"m(theta={theta})", target)
    low = high // 2
    while high - low > 1:
        middle = (low + high) // 2
        if phi_bound(middle, theta) <= target:
            high = middle
        else:
            low = middle
    return high


def pd_concentration_bound(n: int, delta: float) -> float:
    """Return ``exp(-n delta^2 / 8)``, bounding P(v_n >= ((1+delta) L / n)^(1/theta))."""
    delta = check_open_unit("delta", delta)
    if n < 1:
        raise InvalidParameterError("n", f"must be >= 1, got {n}")
    return math.exp(-n * delta**2 / 8)


def ppp_localization_b(eta: float, m: float, theta: float) -> float:
    """Return ``b`` such that fewer than m+1 PPP points land in (1/b, b) w.p. <= eta."""
    eta = check_open_unit("eta", eta)
    theta = check_open_unit("theta", theta)
    if m < 1:
        raise InvalidParameterError("m", f"must be >= 1, got {m}")
    return (math.log(1 / eta) + 4 * m + 1) ** (1 / theta)


def b_bar(eta: float, m: int, r: int, zeta_first: float) -> float:
    """Return the localization radius shared by every vertex of an m-regular tree."""
    return ppp_localization_b(eta / m**r, m, zeta_first)


def _check_levels(r: int, zeta_levels: Sequence[float]) -> tuple[float, ...]:
    zeta = check_increasing("zeta_levels", zeta_levels, 0.0, 1.0)
    if zeta[-1] >= 1:
        raise InvalidParameterError("zeta_levels", "must lie strictly below 1")
    if len(zeta) != r:
        raise InvalidParameterError(
            "zeta_levels", f"need r={r} levels, got {len(zeta)}"
        )
    return zeta


def m_star(eps: float, eta: float, r: int, zeta_levels: Sequence[float]) -> int:
    """Return the branching number making every tail beyond the shape small enough."""
    eps = check_open_unit("eps", eps)
    eta = check_open_unit("eta", eta)
    zeta = _check_levels(r, zeta_levels)
    branching = [solve_phi(zeta[0], eta * eps / r**2)]
    for level in zeta[1:]:
        covered = math.prod(branching)
        branching.append(solve_phi(level, eta * eps / (r * covered) ** 2))
    return max(branching)


def p_star(eps: float, eta: float, r: int, zeta_levels: Sequence[float]) -> Magnitude:
    """Return the per-block success probability ``(m b^2)^(-r m^r)`` as a reciprocal."""
    m = m_star(eps, eta / 4, r, zeta_levels)
    b = b_bar(eta / 4, m, r, zeta_levels[0])
    loglog = math.log(r) + r * math.log(m) + math.log(math.log(m) + 2 * math.log(b))
    return Magnitude(loglog, 2, reciprocal=True)


def M_star(  # noqa: N802
    eta: float, eps: float, r: int, zeta_levels: Sequence[float]
) -> Magnitude:
    """Return the block count ``log(eta) / log(1 - p_*)`` reaching failure rate eta."""
    eta = check_open_unit("eta", eta)
    return search_budget(p_star(eps, eta, r, zeta_levels), eta)


def search_budget(p: Magnitude, eta: float) -> Magnitude:
    """Return ``M`` with ``(1 - p)^M = eta`` for a success probability ``p``."""
    log_p = p.log
    if log_p > -700:
        return Magnitude.of(math.log(eta) / math.log1p(-math.exp(log_p)))
    log_log_eta = math.log(math.log(1 / eta))
    inverse = p.at_height(2) if p.height >= 2 else math.log(-log_p)
    return Magnitude(inverse + math.log1p(log_log_eta * math.exp(-_exp(inverse))), 2)


def bernstein_apply(
    f: Callable[[np.ndarray], np.ndarray],
    n: int,
    x: Sequence[float] | np.ndarray,
    rng: np.random.Generator | None = None,
    samples: int = 20000,
) -> float | np.ndarray:
    """Return ``E f(X/n)`` for independent ``X_i ~ Binomial(n, x_i)``.

    ``f`` is called on an ``(P, d)`` array of points and must return ``P``
    values. ``x`` is one point of ``[0, 1]^d`` or an ``(P, d)`` batch. The sum is
    exact for ``d <= 3``; beyond that it is a Monte Carlo estimate drawn from
    ``rng``.
    """
    if n < 1:
        raise InvalidParameterError("n", f"must be >= 1, got {n}")
    x = np.asarray(x, dtype=float)
    batch = x.ndim == 2
    points = np.atleast_2d(x)
    if np.any((points < 0) | (points > 1)):
        raise InvalidParameterError("x", "must lie in the unit cube")
    d = points.shape[1]
    if d <= 3:
        k = np.arange(n + 1)
        grid = np.stack(
            np.meshgrid(*([k / n] * d), indexing="ij"), axis=-1
        ).reshape(-1, d)
        table = np.asarray(f(grid), dtype=float).reshape((n + 1,) * d)
        values = []
        for point in points:
            value = table
            for coordinate in point:
                value = np.tensordot(binom.pmf(k, n, coordinate), value, axes=(0, 0))
            values.append(float(value))
        result = np.array(values)
    else:
        if rng is None:
            raise InvalidParameterError("rng", "needed for d > 3")
        draws = rng.binomial(n, points[:, None, :], size=(len(points), samples, d))
        result = (
            np.asarray(f(draws.reshape(-1, d) / n), dtype=float)
            .reshape(len(points), samples)
            .mean(axis=1)
        )
    return result if batch else float(result[0])


def bernstein_bound(d: int, n: int, lip: float) -> float:
    """Return the sup-norm bound ``d lip / (2 sqrt(n))`` for B_n on l1-Lipschitz f."""
    if n < 1 or d < 1:
        raise InvalidParameterError("n", "d and n must be >= 1")
    return d * lip / (2 * math.sqrt(n))


@dataclass(frozen=True)
class PowerLawDecay:
    """Probability-gap decay ``D(N) = c N^(-gamma)``."""

    c: float
    gamma: float

    def __post_init__(self):
        """Validate the parameters."""
        if not (self.c > 0 and self.gamma > 0):
            raise InvalidParameterError("decay", "c and gamma must be positive")

    def __call__(self, n: float) -> float:
        """Return ``D(n)``."""
        return self.c * n ** (-self.gamma)

    def inverse(self, exponent: Magnitude) -> Magnitude:
        """Return the least N with ``D(N) <= exp(-exponent)``."""
        log_c, log_gamma = math.log(self.c), math.log(self.gamma)
        height = 0
        value = exponent.at_height(0)
        while math.isinf(value):
            height += 1
            value = exponent.at_height(height)
        if height == 0:
            return Magnitude((value + log_c) / self.gamma, 1)
        if height == 1:
            return Magnitude(value - log_gamma, 2)
        if height == 2:
            return Magnitude(value + math.log1p(-log_gamma * math.exp(-value)), 3)
        return Magnitude(value, height + 1)


@dataclass(frozen=True)
class TabulatedDecay:
    """Probability-gap decay given at tabulated sizes, log-log interpolated."""

    sizes: tuple[float, ...]
    gaps: tuple[float, ...]

    def __post_init__(self):
        """Validate that the table is increasing in N and non-increasing in D."""
        sizes = tuple(float(n) for n in self.sizes)
        gaps = tuple(float(g) for g in self.gaps)
        if len(sizes) != len(gaps) or len(sizes) < 2:
            raise InvalidParameterError("decay", "need at least two (N, D) pairs")
        if any(b <= a for a, b in zip(sizes, sizes[1:])) or any(
            b > a for a, b in zip(gaps, gaps[1:])
        ):
            raise InvalidParameterError("decay", "N must increase and D not increase")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "gaps", gaps)

    def __call__(self, n: float) -> float:
        """Return the interpolated ``D(n)``."""
        return float(
            np.exp(np.interp(np.log(n), np.log(self.sizes), np.log(self.gaps)))
        )

    def inverse(self, exponent: Magnitude) -> Magnitude:
        """Return the least tabulated N with ``D(N) <= exp(-exponent)``."""
        threshold = -exponent.at_height(0)
        for n, gap in zip(self.sizes, self.gaps):
            if math.log(gap) <= threshold:
                return Magnitude.of(n)
        return Magnitude(math.inf, 1)


@dataclass(frozen=True)
class RateInputs:
    """Depth, cumulative overlap masses, tolerances and the gap-decay model."""

    r: int
    zeta_levels: tuple[float, ...]
    eps: float = 0.1
    delta: float = 0.1
    eta: float = 0.1
    decay: PowerLawDecay | TabulatedDecay | None = None

    def __post_init__(self):
        """Validate the inputs."""
        if self.r < 1:
            raise InvalidParameterError("r", f"must be >= 1, got {self.r}")
        object.__setattr__(self, "zeta_levels", _check_levels(self.r, self.zeta_levels))
        for name in ("eps", "delta", "eta"):
            check_open_unit(name, getattr(self, name))


@dataclass(frozen=True)
class RateOutputs:
    """Every quantity of the rate chain at one value of nu."""

    nu: int
    K: int
    alpha: float
    m_star: Magnitude | None
    p_star: Magnitude | None
    M_star: Magnitude | None
    m_double_star: Magnitude
    b_double_bar: Magnitude
    p_double_star: Magnitude
    M_double_star: Magnitude
    I: Magnitude
    n_0: Magnitude
    N_0: Magnitude | None
    notes: tuple[str, ...] = field(default=())

    def to_json(self) -> dict[str, Any]:
        """Serialize every quantity."""
        data: dict[str, Any] = {"K": self.K, "alpha": self.alpha, "nu": self.nu}
        for name in (
            "m_star",
            "p_star",
            "M_star",
            "m_double_star",
            "b_double_bar",
            "p_double_star",
            "M_double_star",
            "I",
            "n_0",
            "N_0",
        ):
            value = getattr(self, name)
            data[name] = None if value is None else value.to_json()
        data["notes"] = list(self.notes)
        return data

    def to_row(self) -> dict[str, Any]:
        """Flatten to one table row of natural logarithms and tower tops."""
        return {
            "nu": self.nu,
            "K": self.K,
            "alpha": self.alpha,
            "m_star": None if self.m_star is None else self.m_star.value,
            "log_M_star": None if self.M_star is None else self.M_star.log,
            "log_m_double_star": self.m_double_star.log,
            "loglog_inv_p_double_star": self.p_double_star.top,
            "loglog_M_double_star": self.M_double_star.top,
            "loglog_I": self.I.top,
            "log_n_0": self.n_0.log,
            "N_0_height": None if self.N_0 is None else self.N_0.height,
            "N_0_top": None if self.N_0 is None else self.N_0.top,
        }


def quant_rates(inputs: RateInputs, nu: int) -> RateOutputs:
    """Evaluate the rate chain at ``nu``; everything is computed in log space."""
    if nu < 1:
        raise InvalidParameterError("nu", f"must be >= 1, got {nu}")
    r, zeta = inputs.r, inputs.zeta_levels
    zeta_first = zeta[0]
    notes = [
        "b_double_bar uses the first level zeta_levels[0] for its exponent",
        "I(nu) is evaluated from 9 (16 m**^(2r) 2^(6 nu))^2 (M** m**^(2r))^3",
    ]
    K = math.ceil(min(4 * c_theta(t) * t / (1 - t) + 10 for t in zeta))
    alpha = 1 / min(min((1 - t) / t for t in zeta), 1 / 8)

    m_value = p_value = M_value = None
    try:
        m_value = Magnitude.of(m_star(inputs.eps, inputs.eta, r, zeta))
        p_value = p_star(inputs.eps, inputs.eta, r, zeta)
        M_value = search_budget(p_value, inputs.eta)
    except RateOverflowError as error:
        notes.append(f"m_star not computed: {error}")

    log_m = 2 * alpha * (alpha + 1) ** (r - 1) * (
        math.log(K) + 2 * math.log(r) + 2 * nu * math.log(2)
    )
    branching = 4 / zeta_first
    log_M = np.logaddexp(
        math.log(math.log(4)), math.log(r * (branching + 2)) + (r + 1) * log_m
    )
    polynomial = (
        math.log(9)
        + 2 * (math.log(16) + 2 * r * log_m + 6 * nu * math.log(2))
        + 6 * r * log_m
    )
    I = Magnitude(float(np.logaddexp(math.log(polynomial), math.log(3) + log_M)), 2)
    log_n_0 = math.log(2 / math.log(2)) + np.logaddexp(
        math.log(math.log(12)), math.log(r * (branching + 1)) + (r + 1) * log_m
    )
    return RateOutputs(
        nu=nu,
        K=K,
        alpha=alpha,
        m_star=m_value,
        p_star=p_value,
        M_star=M_value,
        m_double_star=Magnitude(log_m, 1),
        b_double_bar=Magnitude((math.log(5) + log_m) / zeta_first, 1),
        p_double_star=Magnitude(
            math.log(r * (branching + 1) * log_m) + r * log_m, 2, reciprocal=True
        ),
        M_double_star=Magnitude(float(log_M), 2),
        I=I,
        n_0=Magnitude(float(log_n_0), 1),
        N_0=None if inputs.decay is None else inputs.decay.inverse(I),
        notes=tuple(notes),
    )


def invert_rates(inputs: RateInputs, n: float | Magnitude) -> int:
    """Return the largest nu with ``N_0(nu) <= n``, or 0 when none qualifies."""
    if inputs.decay is None:
        raise InvalidParameterError("decay", "a decay model is needed for inversion")
    size = n if isinstance(n, Magnitude) else Magnitude.of(n)
    best = 0
    for nu in range(1, MAX_NU + 1):
        if quant_rates(inputs, nu).N_0 <= size:
            best = nu
        else:
            break
    return best
