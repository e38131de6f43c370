"""cascadekit Test Suite."""

import json

from cascadekit.measure import TreeMeasure
from cascadekit.trees import TreeShape, WeightedTree

KNOWN_LEAVES = {(1, 1): 0.4, (1, 2): 0.2, (2, 1): 0.3, (2, 2): 0.1}
KNOWN_Q = (0.4, 0.8)


def known_tree():
    weights = {(1,): 0.6, (2,): 0.4, **KNOWN_LEAVES}
    return WeightedTree(TreeShape((2, 2)), weights)


def known_measure():
    return TreeMeasure(list(KNOWN_LEAVES), KNOWN_Q, list(KNOWN_LEAVES.values()), 0.0)


def assert_within(estimate, target, sigmas=4.0, slack=0.0):
    bound = sigmas * estimate.stderr + slack
    assert abs(estimate.value - target) <= bound, (
        f"{estimate.value} +- {estimate.stderr} is not within {bound} of {target}"
    )


def write_config(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def rpc_config(**fields):
    config = {
        "seed": 11,
        "source": {"variant": "rpc", "zeta": [0.3, 0.7], "q": [0.4, 0.8]},
        "truncation": [4, 4],
        "n_disorder": 3,
        "n_replicas": 300,
        "rpc_samples": 100,
        "M": 40,
        "bins": 10,
    }
    config.update(fields)
    return config
