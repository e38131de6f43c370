import pytest

from cascadekit.debug import dump_tree
from cascadekit.exceptions import InvalidParameterError, LeafError
from cascadekit.trees import (
    ROOT,
    Relation,
    TreeShape,
    WeightedTree,
    ancestors,
    children,
    enumerate_vertices,
    is_prefix,
    make_vertex,
    meet,
    parent,
    pruning,
    relation,
    shift,
    shift_vertex,
    standard_order,
)
from tests import known_tree


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((1,), (1,), Relation.EQUAL),
        ((1,), (1, 2), Relation.ANCESTOR),
        ((1, 2), (1,), Relation.DESCENDANT),
        ((1, 2), (1, 3), Relation.COUSINS),
        ((1, 2), (2,), Relation.COUSINS),
        (ROOT, (3, 1), Relation.ANCESTOR),
    ],
)
def test_relation(a, b, expected):
    assert relation(a, b) is expected


@pytest.mark.parametrize(
    "a, b, expected",
    [((1, 2, 3), (1, 2, 4), (1, 2)), ((1,), (2,), ROOT), ((2, 1), (2, 1, 5), (2, 1))],
)
def test_meet(a, b, expected):
    assert meet(a, b) == expected


def test_vertex_helpers():
    assert make_vertex([1, 2]) == (1, 2)
    assert parent((1, 2)) == (1,)
    assert ancestors((2, 1, 3)) == [(2,), (2, 1), (2, 1, 3)]
    with pytest.raises(InvalidParameterError):
        make_vertex([1, 0])
    with pytest.raises(InvalidParameterError):
        parent(ROOT)


@pytest.mark.parametrize("m, size", [((3,), 3), ((2, 3), 8), ((2, 2, 2), 14)])
def test_shape_size(m, size):
    shape = TreeShape(m)
    assert shape.size == size
    assert len(enumerate_vertices(shape)) == size
    assert len(shape.leaves()) == size - sum(len(shape.level(k)) for k in range(1, shape.r))


@pytest.mark.parametrize("m", [(), (0, 2), (2, -1)])
def test_shape_invalid(m):
    with pytest.raises(InvalidParameterError):
        TreeShape(m)


def test_shape_order():
    shape = TreeShape((2, 2))
    assert list(shape) == [(1,), (2,), (1, 1), (1, 2), (2, 1), (2, 2)]
    assert ROOT in shape
    assert (2, 3) not in shape
    assert TreeShape.regular(3, 2).m == (2, 2, 2)


def test_children():
    shape = TreeShape((2, 3))
    assert children((1,), shape) == [(1, 1), (1, 2), (1, 3)]
    assert children(ROOT, shape) == [(1,), (2,)]
    with pytest.raises(LeafError):
        children((1, 1), shape)
    with pytest.raises(InvalidParameterError):
        children((3,), shape)


def test_shift():
    shape = TreeShape((3, 2))
    assert shift_vertex((2, 1), shape, 2) == (5, 1)
    assert shift_vertex(ROOT, shape, 4) == ROOT
    copies = pruning(shape, 3)
    images = [set(copy.values()) - {ROOT} for copy in copies]
    assert all(len(image) == shape.size for image in images)
    assert not images[0] & images[1]
    assert not images[1] & images[2]
    assert all(k == v for k, v in shift(shape, 1).items())


@pytest.mark.parametrize(
    "a, b, expected",
    [
        (ROOT, (1, 2), True),
        ((1,), (1, 2), True),
        ((1, 2), (1, 2), True),
        ((1, 2), (1,), False),
        ((2,), (1, 2), False),
    ],
)
def test_is_prefix(a, b, expected):
    assert is_prefix(a, b) is expected


def test_weighted_tree_validation():
    shape = TreeShape((2,))
    with pytest.raises(InvalidParameterError):
        WeightedTree(shape, {(1,): 0.5})
    with pytest.raises(InvalidParameterError):
        WeightedTree(shape, {(1,): 0.5, (2,): -0.1})
    with pytest.raises(InvalidParameterError):
        WeightedTree(shape, {(1,): 0.5, (2,): 0.1, (3,): 0.1})


def test_weighted_tree_access():
    tree = known_tree()
    assert tree[(1, 2)] == 0.2
    assert tree[(3,)] == 0.0
    assert tree.level_weights(1).tolist() == [0.6, 0.4]
    assert dict(WeightedTree.from_json(tree.to_json()).weights) == dict(tree.weights)


def test_padded():
    tree = known_tree().padded(TreeShape((3, 2)))
    assert tree[(3,)] == 0.0
    assert tree[(3, 2)] == 0.0
    assert tree[(2, 1)] == 0.3
    with pytest.raises(InvalidParameterError):
        known_tree().padded(TreeShape((1, 2)))


def test_standard_order():
    shape = TreeShape((2, 2))
    tree = WeightedTree(
        shape,
        {(1,): 0.3, (2,): 0.6, (1, 1): 0.1, (1, 2): 0.2, (2, 1): 0.4, (2, 2): 0.1},
    )
    ordered, permutation = standard_order(tree)
    assert [ordered[v] for v in shape] == [0.6, 0.3, 0.4, 0.1, 0.2, 0.1]
    assert permutation == {
        (1,): (2,),
        (2,): (1,),
        (1, 1): (2, 1),
        (1, 2): (2, 2),
        (2, 1): (1, 2),
        (2, 2): (1, 1),
    }


def test_standard_order_ties():
    tree = WeightedTree(TreeShape((3,)), {(1,): 0.2, (2,): 0.5, (3,): 0.2})
    _, permutation = standard_order(tree)
    assert permutation == {(1,): (2,), (2,): (1,), (3,): (3,)}


def test_dump_tree():
    output = dump_tree(known_tree())
    lines = output.splitlines()
    assert len(lines) == 6
    assert "[1, 2]" in lines[2]
    assert lines[2].startswith("    - ")
