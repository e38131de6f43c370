import math

import numpy as np
import pytest

from cascadekit.const import BETA_C
from cascadekit.exceptions import InvalidParameterError
from cascadekit.measure import OverlapLaw
from cascadekit.spinglass import (
    GREM,
    REM,
    MixedPSpin,
    ModelSpec,
    configurations,
    covariance,
    covariance_matrix,
    dfm_gap,
    dfm_gap_from_log_partitions,
    empirical_overlap_law,
    exact_overlap_law,
    free_energy,
    gibbs,
    histogram_edges,
    overlap,
    overlap_histogram,
    sample_disorder,
    sample_replicas,
    summarize_histograms,
    walsh_hadamard,
)

models = [
    REM(3, 1.0),
    GREM(4, 1.0, (2, 2), (0.4,)),
    MixedPSpin(3, 1.0, {1: 0.5, 2: 1.0}),
]


def test_configurations():
    assert configurations(2).tolist() == [[1, 1], [1, -1], [-1, 1], [-1, -1]]
    with pytest.raises(InvalidParameterError):
        configurations(15)


def test_overlap():
    assert overlap([1, 1], [1, -1]) == 0
    assert overlap([1, -1, 1, 1], [1, -1, 1, 1]) == 1
    with pytest.raises(InvalidParameterError):
        overlap([1, 1], [1, 1, 1])
    with pytest.raises(InvalidParameterError):
        overlap([1, 0], [1, 1])


@pytest.mark.parametrize(
    "data, expected",
    [
        ({"variant": "rem", "N": 5, "beta": 2.0}, REM(5, 2.0)),
        (
            {"variant": "grem", "N": 4, "blocks": [1, 3], "zeta": [0.5]},
            GREM(4, 1.0, (1, 3), (0.5,)),
        ),
        (
            {"variant": "pspin", "N": 3, "betas": {"2": 1.5}},
            MixedPSpin(3, 1.0, {2: 1.5}),
        ),
    ],
)
def test_model_from_json(data, expected):
    model = ModelSpec.from_json(data)
    assert model == expected
    assert ModelSpec.from_json(model.to_json()) == model


@pytest.mark.parametrize(
    "data",
    [
        {"variant": "sk", "N": 3},
        {"variant": "rem", "N": 0},
        {"variant": "rem", "N": 3, "beta": -1.0},
        {"variant": "grem", "N": 4, "blocks": [1, 2], "zeta": [0.5]},
        {"variant": "grem", "N": 4, "blocks": [2, 2], "zeta": []},
        {"variant": "pspin", "N": 3, "betas": {"2": 0.0}},
    ],
)
def test_model_invalid(data):
    with pytest.raises(InvalidParameterError):
        ModelSpec.from_json(data)


def test_grem_from_levels():
    model = GREM.from_levels(10, (0.3, 1.0), (0.5,), beta=2.0)
    assert model.blocks == (3, 7)
    assert model.rounding == ((0.3, 0.3),)
    assert model.r == 2
    with pytest.raises(InvalidParameterError):
        GREM.from_levels(4, (0.1, 0.2, 1.0), (0.3, 0.6))


@pytest.mark.parametrize("model", models, ids=lambda m: m.variant)
def test_covariance_matrix(model):
    matrix = covariance_matrix(model)
    spins = configurations(model.N)
    for i in range(len(spins)):
        for j in range(len(spins)):
            assert matrix[i, j] == pytest.approx(covariance(model, spins[i], spins[j]))


def test_covariance_values():
    assert np.array_equal(covariance_matrix(REM(3)), 3 * np.eye(8))
    model = GREM(4, 1.0, (2, 2), (0.4,))
    assert covariance(model, [1, 1, 1, 1], [1, 1, -1, -1]) == pytest.approx(1.6)
    pspin = MixedPSpin(4, 1.0, {2: 1.0})
    assert covariance(pspin, [1, 1, 1, 1], [1, 1, -1, -1]) == 0


@pytest.mark.parametrize("model", models, ids=lambda m: m.variant)
def test_energies_match_covariance(model):
    rng = np.random.default_rng(5)
    draws = np.array([sample_disorder(model, rng).energies for _ in range(4000)])
    empirical = draws.T @ draws / len(draws)
    assert np.allclose(empirical, covariance_matrix(model), atol=0.5)


def test_free_energy_infinite_temperature(rng):
    disorder = sample_disorder(REM(6), rng)
    assert free_energy(disorder, 0.0) == pytest.approx(math.log(2))


def test_walsh_hadamard():
    values = np.arange(8.0)
    assert np.allclose(walsh_hadamard(walsh_hadamard(values)), 8 * values)
    with pytest.raises(InvalidParameterError):
        walsh_hadamard(np.ones(6))


@pytest.mark.parametrize("model", models, ids=lambda m: m.variant)
def test_exact_overlap_law(model, rng):
    measure = gibbs(sample_disorder(model, rng), 1.5)
    spins = configurations(model.N)
    brute = OverlapLaw(
        (spins @ spins.T / model.N).ravel(),
        np.outer(measure.masses, measure.masses).ravel(),
    )
    law = exact_overlap_law(measure)
    assert np.allclose(law.support, brute.support)
    assert np.allclose(law.masses, brute.masses)


def test_rem_top_mass_at_infinite_temperature(rng):
    measure = gibbs(sample_disorder(REM(8), rng), 0.0)
    assert exact_overlap_law(measure).mass(1.0) == pytest.approx(2.0**-8)


@pytest.mark.slow
def test_rem_condenses_at_low_temperature():
    rng = np.random.default_rng(9)
    model = REM(10)
    edges = histogram_edges([-1.0, 0.95, 1.0])

    def top_mass(beta):
        histogram = empirical_overlap_law(model, beta, 20, 0, edges, rng)
        return histogram.mass(0.95).value

    hot, cold = top_mass(0.5 * BETA_C), top_mass(3 * BETA_C)
    assert hot < 0.1
    assert cold > hot + 0.3


def test_histogram_edges():
    assert histogram_edges(4).tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]
    with pytest.raises(InvalidParameterError):
        histogram_edges(0)
    with pytest.raises(InvalidParameterError):
        histogram_edges([0.0, 0.5, 0.2])


def test_overlap_histogram_modes(rng):
    measure = gibbs(sample_disorder(REM(6), rng), 1.0)
    edges = histogram_edges(12)
    exact = overlap_histogram(measure, edges)
    sampled = overlap_histogram(measure, edges, rng, 20000, "mc")
    assert exact.sum() == pytest.approx(1)
    assert np.allclose(exact, sampled, atol=0.03)
    with pytest.raises(InvalidParameterError):
        overlap_histogram(measure, edges, rng, 0, "mc")
    with pytest.raises(InvalidParameterError):
        overlap_histogram(measure, edges, rng, 10, "gibbs")


def test_empirical_overlap_law(rng):
    histogram = empirical_overlap_law(REM(5), 1.0, 4, 0, 10, rng)
    assert histogram.n_disorder == 4
    assert histogram.masses.sum() == pytest.approx(1)
    assert histogram.mass(-1.0).value == pytest.approx(1)
    assert histogram.to_json()["mode"] == "exact"


def test_summarize_single_row():
    edges = histogram_edges(2)
    histogram = summarize_histograms(edges, np.array([[0.25, 0.75]]), "exact")
    assert histogram.stderr.tolist() == [0.0, 0.0]
    assert histogram.mass(0.0).value == 0.75


def test_sample_replicas(rng):
    measure = gibbs(sample_disorder(REM(4), rng), 1.0)
    replicas = sample_replicas(measure, 6, rng)
    assert replicas.n == 6
    assert np.allclose(np.diag(replicas.values), 1)


def test_dfm_gap_infinite_temperature(rng):
    gap = dfm_gap(REM(6), 0.0, -1.0, 5, rng)
    assert gap.value == 0.0
    assert gap.stderr == 0.0
    assert gap.mode == "exact"


def test_dfm_gap_below_quenched(rng):
    gap = dfm_gap(REM(6), 2.0, -1.0, 50, rng)
    assert gap.value < 0
    assert np.isfinite(gap.stderr)


@pytest.mark.parametrize("a, n_disorder", [(1.0, 5), (0.0, 5), (-1.0, 1)])
def test_dfm_gap_invalid(a, n_disorder, rng):
    with pytest.raises(InvalidParameterError):
        dfm_gap(REM(4), 1.0, a, n_disorder, rng)


def test_dfm_gap_from_log_partitions():
    log_z = np.log([2.0, 8.0])
    gap = dfm_gap_from_log_partitions(log_z, -1.0, 1)
    expected = -math.log((1 / 2 + 1 / 8) / 2) - (math.log(2) + math.log(8)) / 2
    assert gap.value == pytest.approx(expected)
