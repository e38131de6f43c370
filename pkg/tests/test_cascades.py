import numpy as np
import pytest

from cascadekit.cascades import (
    CascadeWeights,
    RPCParams,
    decode_overlap_tree,
    embed_rost,
    encode_overlap_tree,
    gamma_map,
    interlace,
    level_masses,
    rpc_dust_bound,
    rpc_overlap_law,
    sample_overlap_matrix,
    sample_pd,
    sample_ppp_ranked,
    sample_rpc,
    truncation_for,
    validate_cascade,
)
from cascadekit.diagnostics import pd_moment
from cascadekit.exceptions import (
    InvalidParameterError,
    NonUltrametricError,
    OffLevelError,
    TruncationError,
)
from cascadekit.measure import OverlapLaw, OverlapMatrix
from cascadekit.rates import phi_bound
from cascadekit.trees import TreeShape, WeightedTree
from cascadekit.util import RunningStats
from tests import assert_within, known_measure


def cascade(weights, shape=(2, 2)):
    return CascadeWeights(WeightedTree(TreeShape(shape), weights))


def test_ppp_ranked_from_arrivals():
    atoms = sample_ppp_ranked(0.5, 3, arrivals=[1.0, 2.0, 4.0])
    assert atoms.tolist() == [1.0, 0.25, 0.0625]


@pytest.mark.parametrize("arrivals", [[0.0, 1.0], [2.0, 1.0]])
def test_ppp_ranked_invalid_arrivals(arrivals):
    with pytest.raises(InvalidParameterError):
        sample_ppp_ranked(0.5, 2, arrivals=arrivals)


def test_sample_pd_from_arrivals():
    sample = sample_pd(0.5, 3, arrivals=[1.0, 2.0, 4.0])
    assert sample.total == pytest.approx(1.3125)
    assert sample.atoms.sum() == pytest.approx(1)
    assert sample.dust == 0
    assert sample.normalizer == pytest.approx(1.3125**-0.5)


def test_sample_pd_tail_mean():
    sample = sample_pd(0.5, 3, arrivals=[1.0, 2.0, 4.0], tail="mean")
    assert sample.total == pytest.approx(1.5625)
    assert sample.dust == pytest.approx(0.16)
    assert sample.atoms.sum() + sample.dust == pytest.approx(1)


@pytest.mark.parametrize("theta", [0.0, 1.0, -0.2, 1.5])
def test_sample_pd_invalid_theta(theta, rng):
    with pytest.raises(InvalidParameterError):
        sample_pd(theta, 10, rng)


def test_sample_pd_tolerance(rng):
    with pytest.raises(TruncationError):
        sample_pd(0.5, 2, rng, tol=1e-3)
    K = truncation_for(0.5, 0.5)
    assert len(sample_pd(0.5, K, rng, tol=0.5).atoms) == K


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.7])
def test_pd_second_moment(theta):
    rng = np.random.default_rng(7)
    draws = [sample_pd(theta, 1000, rng, tail="mean") for _ in range(2000)]
    assert all(np.all(np.diff(d.atoms) <= 0) for d in draws[:10])
    assert_within(pd_moment(draws, 2), 1 - theta, slack=0.005)


@pytest.mark.parametrize(
    "zeta, q",
    [((0.0, 0.5), (0.3, 0.6)), ((0.3, 1.0), (0.3, 0.6)), ((0.3,), (0.3, 0.6))],
)
def test_rpc_params_invalid(zeta, q):
    with pytest.raises(InvalidParameterError):
        RPCParams(zeta, q)


def test_rpc_params(params):
    assert params.r == 2
    assert params.levels.tolist() == [0.0, 0.4, 0.8]
    assert params.to_json() == {"q": [0.4, 0.8], "zeta": [0.3, 0.7]}


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("m", [1, 3, (5, 2)])
@pytest.mark.parametrize("tail", ["none", "mean"])
def test_sample_rpc_is_valid(params, seed, m, tail):
    c = sample_rpc(params, m, np.random.default_rng(seed), tail=tail)
    report = validate_cascade(c)
    assert report.valid, report.violations
    assert 0 <= c.dust <= 1
    leaves = c.tree.level_weights(c.shape.r).sum()
    assert leaves + c.dust == pytest.approx(1)
    if tail == "none":
        assert report.proper, report.violations


@pytest.mark.parametrize("seed", range(5))
def test_sample_rpc_single_path(params, seed):
    c = sample_rpc(params, 1, np.random.default_rng(seed))
    assert c.dust == pytest.approx(0)
    assert c[(1,)] == pytest.approx(1 - c.dust)
    assert c[(1, 1)] == pytest.approx(1 - c.dust)


def test_sample_rpc_tail_mean_single_path(params):
    c = sample_rpc(params, 1, np.random.default_rng(4), tail="mean")
    assert 0 < c.dust < 1
    assert c[(1,)] > c[(1, 1)] == pytest.approx(1 - c.dust)
    assert not validate_cascade(c).proper


@pytest.mark.parametrize(
    "zeta, q, m",
    [((0.5,), (0.5,), 40), ((0.3, 0.5), (0.4, 0.8), (40, 40))],
)
def test_sample_rpc_dust_bound(zeta, q, m):
    params = RPCParams(zeta, q)
    rng = np.random.default_rng(5)
    bound = rpc_dust_bound(params, m)
    dust = RunningStats.of([sample_rpc(params, m, rng, tail="mean").dust for _ in range(400)])
    assert 0 < bound < 1
    assert dust.mean > 0
    assert_within(dust.estimate(), bound / 2, slack=bound / 2)


def test_sample_rpc_invalid_tail(params, rng):
    with pytest.raises(InvalidParameterError):
        sample_rpc(params, 3, rng, tail="max")


def test_sample_rpc_shape(params, rng):
    c = sample_rpc(params, (3, 2), rng)
    assert c.shape.m == (3, 2)
    assert level_masses(c, 1).tolist() == sorted(c.tree.level_weights(1), reverse=True)
    with pytest.raises(InvalidParameterError):
        sample_rpc(params, (3, 2, 2), rng)


def test_validate_proper():
    report = validate_cascade(
        cascade({(1,): 0.6, (2,): 0.4, (1, 1): 0.4, (1, 2): 0.2, (2, 1): 0.3, (2, 2): 0.1})
    )
    assert report.valid
    assert report.proper
    assert report.to_json()["violations"] == []


def test_validate_improper():
    report = validate_cascade(
        cascade({(1,): 0.6, (2,): 0.3, (1, 1): 0.4, (1, 2): 0.1, (2, 1): 0.2, (2, 2): 0.1})
    )
    assert report.valid
    assert not report.proper


@pytest.mark.parametrize(
    "weights, message",
    [
        (
            {(1,): 0.5, (2,): 0.5, (1, 1): 0.4, (1, 2): 0.3, (2, 1): 0.1, (2, 2): 0.1},
            "children of [1] sum to 0.7",
        ),
        (
            {(1,): 0.4, (2,): 0.6, (1, 1): 0.2, (1, 2): 0.2, (2, 1): 0.3, (2, 2): 0.3},
            "standard order violated below []",
        ),
        (
            {(1,): 0.6, (2,): 0.4, (1, 1): 0.1, (1, 2): 0.4, (2, 1): 0.3, (2, 2): 0.1},
            "standard order violated below [1]",
        ),
    ],
)
def test_validate_violations(weights, message):
    report = validate_cascade(cascade(weights))
    assert not report.valid
    assert not report.proper
    assert any(v.startswith(message) for v in report.violations)


def test_embed_rost_gram_matrix(params, rng):
    c = sample_rpc(params, 3, rng)
    embedding, measure = embed_rost(c, params.q)
    vectors = embedding.vectors()
    atoms = np.arange(measure.size)
    assert embedding.dimension == len(c.shape) + 1
    assert np.allclose(vectors @ vectors.T, measure.overlap_block(atoms, atoms))
    assert np.allclose(measure.masses[:-1], c.tree.level_weights(2))
    assert measure.masses[-1] == pytest.approx(c.dust)


def test_embed_rost_depth_mismatch(params, rng):
    c = sample_rpc(params, 3, rng)
    with pytest.raises(InvalidParameterError):
        embed_rost(c, (0.5,))


def test_rpc_overlap_law(params):
    law = rpc_overlap_law(params)
    assert law.support.tolist() == [0.0, 0.4, 0.8]
    assert law.masses.tolist() == pytest.approx([0.3, 0.4, 0.3])
    assert law.total == pytest.approx(1)


def test_rpc_overlap_law_sampled():
    params = RPCParams((0.2, 0.4), (0.4, 0.8))
    rng = np.random.default_rng(3)
    edges = [-0.1, 0.2, 0.6, 0.9]
    rows = []
    for _ in range(1000):
        _, measure = embed_rost(sample_rpc(params, (6, 30), rng), params.q)
        atoms = np.arange(measure.size)
        overlaps = measure.overlap_block(atoms, atoms)
        weights = np.outer(measure.masses, measure.masses)
        rows.append(OverlapLaw(overlaps.ravel(), weights.ravel()).histogram(edges))
    assert np.allclose(np.mean(rows, axis=0), [0.2, 0.2, 0.6], atol=0.04)


def test_sample_overlap_matrix(rng):
    matrix = sample_overlap_matrix(known_measure(), 20, rng)
    assert matrix.n == 20
    assert matrix.is_valid
    assert set(np.unique(matrix.values).tolist()) <= {0.0, 0.4, 0.8}
    with pytest.raises(InvalidParameterError):
        sample_overlap_matrix(known_measure(), 0, rng)


def test_overlap_matrix_check():
    matrix = OverlapMatrix([[1.0, 0.5], [0.2, 1.0]])
    assert "not symmetric" in matrix.check()
    assert not OverlapMatrix([[1.0, 2.0], [2.0, 1.0]]).is_valid


def test_gamma_map():
    values = [-0.2, 0.0, 0.39, 0.4, 0.79, 0.8, 1.0]
    assert gamma_map(values, (0.4, 0.8)).tolist() == [0, 0, 0, 0.4, 0.4, 0.8, 0.8]
    assert gamma_map(0.5, (0.4, 0.8)) == 0.4


def test_interlace():
    assert interlace((0.4, 0.8)) == pytest.approx((0.2, 0.6))


def test_dust_bound(params):
    assert rpc_dust_bound(params, 10) == pytest.approx(
        phi_bound(10, 0.3) + phi_bound(10, 0.7)
    )
    assert rpc_dust_bound(params, (1, 10)) == float("inf")


@pytest.mark.parametrize("theta, tol", [(0.3, 0.1), (0.5, 1.0), (0.7, 5.0)])
def test_truncation_for(theta, tol):
    m = truncation_for(theta, tol)
    assert phi_bound(m, theta) <= tol
    assert m == 2 or phi_bound(m - 1, theta) > tol


def test_overlap_tree(rng):
    matrix = sample_overlap_matrix(known_measure(), 12, rng)
    tree = encode_overlap_tree(matrix, (0.4, 0.8))
    assert tree.paths.shape == (12, 3)
    assert np.array_equal(decode_overlap_tree(tree).values, matrix.values)


def test_overlap_tree_labels():
    matrix = OverlapMatrix([[0.8, 0.4, 0.0], [0.4, 0.8, 0.0], [0.0, 0.0, 0.8]])
    tree = encode_overlap_tree(matrix, (0.4, 0.8))
    assert tree.paths.tolist() == [[1, 1, 1], [1, 2, 1], [2, 1, 1]]


def test_overlap_tree_not_ultrametric():
    matrix = OverlapMatrix([[0.8, 0.0, 0.4], [0.0, 0.8, 0.4], [0.4, 0.4, 0.8]])
    with pytest.raises(NonUltrametricError):
        encode_overlap_tree(matrix, (0.4, 0.8))


def test_overlap_tree_off_level():
    matrix = OverlapMatrix([[0.8, 0.5], [0.5, 0.8]])
    with pytest.raises(OffLevelError):
        encode_overlap_tree(matrix, (0.4, 0.8))
