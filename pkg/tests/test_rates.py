import math

import numpy as np
import pytest

from cascadekit.exceptions import InvalidParameterError, RateOverflowError
from cascadekit.rates import (
    Magnitude,
    M_star,
    PowerLawDecay,
    RateInputs,
    TabulatedDecay,
    b_bar,
    bernstein_apply,
    bernstein_bound,
    c_theta,
    invert_rates,
    m_star,
    p_star,
    pd_concentration_bound,
    phi_bound,
    ppp_localization_b,
    quant_rates,
    search_budget,
    solve_phi,
)


def test_c_theta_half():
    assert abs(c_theta(0.5) - 2 / math.pi) < 1e-12


@pytest.mark.parametrize("theta", [0.0, 1.0, 1.2])
def test_c_theta_invalid(theta):
    with pytest.raises(InvalidParameterError):
        c_theta(theta)


def test_phi_bound():
    assert phi_bound(2, 0.5) == pytest.approx(9.175, abs=0.01)
    assert phi_bound(100, 0.5) < phi_bound(10, 0.5)
    with pytest.raises(InvalidParameterError):
        phi_bound(1, 0.5)


@pytest.mark.parametrize("theta, target", [(0.3, 0.01), (0.5, 0.1), (0.8, 2.0)])
def test_solve_phi(theta, target):
    m = solve_phi(theta, target)
    assert phi_bound(m, theta) <= target
    assert m == 2 or phi_bound(m - 1, theta) > target


def test_solve_phi_invalid():
    with pytest.raises(InvalidParameterError):
        solve_phi(0.5, 0.0)


def test_solve_phi_overflow():
    with pytest.raises(RateOverflowError):
        solve_phi(0.99, 1e-300)


def test_concentration_and_localization():
    assert pd_concentration_bound(8, 0.5) == pytest.approx(math.exp(-0.25))
    assert ppp_localization_b(0.1, 2, 0.5) == pytest.approx((math.log(10) + 9) ** 2)
    assert b_bar(0.1, 2, 1, 0.5) == pytest.approx(ppp_localization_b(0.05, 2, 0.5))


def test_magnitude():
    x = Magnitude.of(10.0)
    assert x.value == pytest.approx(10)
    assert x.log == pytest.approx(math.log(10))
    assert Magnitude.of(1e6) < Magnitude(3.0, 2)
    assert Magnitude(999.0, 2) < Magnitude(1000.0, 2)
    assert Magnitude(1000.0, 2).value == math.inf
    assert Magnitude(5.0, 1, reciprocal=True).value == pytest.approx(math.exp(-5))
    with pytest.raises(TypeError):
        assert Magnitude(5.0, 1, reciprocal=True) < Magnitude.of(2.0)
    with pytest.raises(InvalidParameterError):
        Magnitude.of(0.0)


def test_magnitude_json():
    data = Magnitude(1000.0, 2).to_json()
    assert data["value"] is None
    assert data["log"] is None
    assert data["top"] == 1000.0


def test_m_star_monotone():
    loose = m_star(0.2, 0.1, 2, (0.3, 0.6))
    tight = m_star(0.05, 0.1, 2, (0.3, 0.6))
    assert 2 <= loose <= tight


def test_m_star_levels():
    with pytest.raises(InvalidParameterError):
        m_star(0.1, 0.1, 2, (0.3,))
    with pytest.raises(InvalidParameterError):
        m_star(0.1, 0.1, 1, (1.0,))


def test_p_star_and_budget():
    p = p_star(0.1, 0.1, 1, (0.5,))
    assert p.reciprocal
    assert 0 <= p.value < 1
    budget = M_star(0.1, 0.1, 1, (0.5,))
    assert math.isfinite(budget.log)
    assert budget.log > 0


def test_search_budget():
    budget = search_budget(Magnitude.of(0.5), 0.1)
    assert budget.value == pytest.approx(math.log(0.1) / math.log(0.5))


@pytest.mark.parametrize(
    "f, x, expected",
    [
        (lambda p: p[:, 0], [0.3], 0.3),
        (lambda p: p[:, 0] ** 2, [0.3], 0.09 + 0.3 * 0.7 / 10),
        (lambda p: p[:, 0] * p[:, 1], [0.3, 0.6], 0.18),
        (lambda p: p.sum(axis=1), [0.1, 0.2, 0.3], 0.6),
    ],
)
def test_bernstein_exact(f, x, expected):
    assert bernstein_apply(f, 10, x) == pytest.approx(expected)


def test_bernstein_batch():
    values = bernstein_apply(lambda p: p[:, 0], 5, [[0.2], [0.8]])
    assert values.tolist() == pytest.approx([0.2, 0.8])


def test_bernstein_monte_carlo(rng):
    x = [0.1, 0.2, 0.3, 0.4]
    value = bernstein_apply(lambda p: p.sum(axis=1), 20, x, rng, samples=20000)
    assert value == pytest.approx(1.0, abs=0.02)
    with pytest.raises(InvalidParameterError):
        bernstein_apply(lambda p: p.sum(axis=1), 20, x)


def test_bernstein_invalid():
    with pytest.raises(InvalidParameterError):
        bernstein_apply(lambda p: p[:, 0], 0, [0.5])
    with pytest.raises(InvalidParameterError):
        bernstein_apply(lambda p: p[:, 0], 5, [1.5])
    assert bernstein_bound(2, 4, 1.0) == pytest.approx(0.5)


def test_power_law_decay():
    decay = PowerLawDecay(1.0, 2.0)
    assert decay(10.0) == pytest.approx(0.01)
    assert decay.inverse(Magnitude.of(10.0)).log == pytest.approx(5.0)
    with pytest.raises(InvalidParameterError):
        PowerLawDecay(0.0, 1.0)


def test_tabulated_decay():
    decay = TabulatedDecay((10, 100), (1e-1, 1e-3))
    assert decay(math.sqrt(1000)) == pytest.approx(1e-2)
    assert decay.inverse(Magnitude.of(math.log(100))).value == pytest.approx(100)
    assert decay.inverse(Magnitude.of(100.0)).value == math.inf
    with pytest.raises(InvalidParameterError):
        TabulatedDecay((10, 100), (1e-3, 1e-1))
    with pytest.raises(InvalidParameterError):
        TabulatedDecay((10,), (1e-3,))


@pytest.mark.parametrize(
    "r, zeta", [(0, (0.5,)), (1, (0.5, 0.7)), (2, (0.7, 0.5)), (1, (1.0,))]
)
def test_rate_inputs_invalid(r, zeta):
    with pytest.raises(InvalidParameterError):
        RateInputs(r, zeta)


def test_quant_rates():
    inputs = RateInputs(1, (0.5,))
    first = quant_rates(inputs, 1)
    assert first.K == 13
    assert first.alpha == pytest.approx(8)
    assert first.N_0 is None
    assert first.m_star is not None
    assert first.b_double_bar.log == pytest.approx(
        (math.log(5) + first.m_double_star.log) / 0.5
    )
    assert first.p_double_star.reciprocal
    second = quant_rates(inputs, 2)
    assert first.m_double_star < second.m_double_star
    assert first.I < second.I
    assert first.n_0 < second.n_0


def test_quant_rates_serialization():
    outputs = quant_rates(RateInputs(2, (0.3, 0.6), decay=PowerLawDecay(1, 1)), 1)
    data = outputs.to_json()
    assert data["nu"] == 1
    assert data["N_0"]["height"] == 3
    assert data["notes"]
    row = outputs.to_row()
    assert row["N_0_height"] == 3
    assert np.isfinite(row["loglog_I"])


def test_quant_rates_invalid():
    with pytest.raises(InvalidParameterError):
        quant_rates(RateInputs(1, (0.5,)), 0)


def test_invert_rates():
    inputs = RateInputs(1, (0.5,), decay=PowerLawDecay(1.0, 1.0))
    assert invert_rates(inputs, 1e6) == 0
    assert invert_rates(inputs, quant_rates(inputs, 2).N_0) == 2
    assert invert_rates(inputs, quant_rates(inputs, 3).N_0) == 3
    with pytest.raises(InvalidParameterError):
        invert_rates(RateInputs(1, (0.5,)), 1e6)
