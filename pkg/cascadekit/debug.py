"""Debugging utilities for cascadekit."""

from __future__ import annotations

from typing import TYPE_CHECKING, Iterator

from .trees import ROOT

if TYPE_CHECKING:  # pragma: no cover
    from .trees import Vertex, WeightedTree


def _dump_lines(tree: WeightedTree, vertex: Vertex) -> Iterator[tuple[int, str]]:
    """Dump a subtree of weighted vertices to a list of strings."""
    if vertex != ROOT:
        head = f"- \x1b[34m{list(vertex)}\x1b[m"
        yield 0, f"{head} {tree[vertex]:.6g}"
    if len(vertex) < tree.shape.r:
        for i in range(1, tree.shape.m[len(vertex)] + 1):
            for n, line in _dump_lines(tree, (*vertex, i)):
                yield n + (vertex != ROOT), line


def dump_tree(tree: WeightedTree) -> str:
    """Dump a weighted tree to a string."""
    return "\n".join(["    " * indent + line for indent, line in _dump_lines(tree, ROOT)])
