"""The quasi-regular rooted tree: vertices, complete subtrees, planar order.

A vertex is a tuple of integers.  The empty tuple is the root; the first
entry is an index in ``range(k)`` (which of the k subtrees hanging off the
root) and every later entry is an index in ``range(d)`` (which child of a
degree-(d+1) vertex).  The fixed orders 0 < 1 < ... realise the planar
embedding, so comparing tuples letterwise compares boundary cylinders.

A complete rooted subtree is stored by its caret set: the set of non-root
vertices whose d children belong to the subtree.  The k-fan at the root is
implicit and never counted, so a subtree with caret set C has
(d-1)*|C| + k leaves.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import total_ordering
from typing import Iterable, Iterator

Vertex = tuple  # tuple[int, ...]; () is the root

ROOT: Vertex = ()

LESS = "less"
GREATER = "greater"
PREFIX = "incomparable-prefix"


@dataclass(frozen=True)
class TreeParams:
    """Arity data: d children per deep vertex, k children at the root."""

    d: int
    k: int

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"branching arity d must be >= 2, got {self.d}")
        if self.k < 1:
            raise ValueError(f"root degree k must be >= 1, got {self.k}")

    def check_vertex(self, v: Vertex) -> None:
        if v == ROOT:
            return
        if not (0 <= v[0] < self.k):
            raise ValueError(f"first letter of {v} out of range(k={self.k})")
        for x in v[1:]:
            if not (0 <= x < self.d):
                raise ValueError(f"letter {x} of {v} out of range(d={self.d})")


def format_vertex(v: Vertex) -> str:
    """Text form 'a1.b2.b1'; the root is the empty string."""
    if v == ROOT:
        return ""
    parts = ["a%d" % (v[0] + 1)]
    parts.extend("b%d" % (x + 1) for x in v[1:])
    return ".".join(parts)


def parse_vertex(s: str) -> Vertex:
    if s == "":
        return ROOT
    parts = s.split(".")
    if not parts[0].startswith("a"):
        raise ValueError(f"vertex text must start with an a-letter: {s!r}")
    word = [int(parts[0][1:]) - 1]
    for p in parts[1:]:
        if not p.startswith("b"):
            raise ValueError(f"deep letters must be b-letters: {s!r}")
        word.append(int(p[1:]) - 1)
    v = tuple(word)
    if any(x < 0 for x in v):
        raise ValueError(f"letter indices are 1-based: {s!r}")
    return v


def is_prefix(p: Vertex, v: Vertex) -> bool:
    return len(p) <= len(v) and v[: len(p)] == p


def boundary_compare(p: Vertex, q: Vertex) -> str:
    """Planar order of the boundary cylinders below p and q.

    Returns "less"/"greater" when neither vertex is a prefix of the other,
    and "incomparable-prefix" otherwise (the cylinders are nested, so the
    boundary order does not separate them).
    """
    m = min(len(p), len(q))
    for i in range(m):
        if p[i] != q[i]:
            return LESS if p[i] < q[i] else GREATER
    return PREFIX


@total_ordering
class CompleteSubtree:
    """A finite complete rooted subtree, stored as its caret set."""

    __slots__ = ("params", "carets", "_key")

    def __init__(self, params: TreeParams, carets: Iterable[Vertex] = ()):
        carets = frozenset(carets)
        for c in carets:
            if c == ROOT:
                raise ValueError("the root fan is implicit, not a caret")
            params.check_vertex(c)
            if len(c) >= 2 and c[:-1] not in carets:
                raise ValueError(
                    f"caret set is not prefix-closed: {format_vertex(c)} "
                    f"present without its parent"
                )
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "carets", carets)
        object.__setattr__(self, "_key", tuple(sorted(carets)))

    def __setattr__(self, name, value):
        raise AttributeError("CompleteSubtree is immutable")

    @property
    def n_carets(self) -> int:
        return len(self.carets)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CompleteSubtree)
            and self.params == other.params
            and self.carets == other.carets
        )

    def __lt__(self, other) -> bool:
        return self._key < other._key

    def __hash__(self) -> int:
        return hash((self.params, self.carets))

    def __repr__(self) -> str:
        inner = ", ".join(format_vertex(c) for c in self._key)
        return f"CompleteSubtree(d={self.params.d}, k={self.params.k}, {{{inner}}})"

    def is_leaf(self, v: Vertex) -> bool:
        if v == ROOT:
            return self.params.k == 0  # never: the root is always internal
        return v not in self.carets and (len(v) == 1 or v[:-1] in self.carets)

    def leaves(self) -> list:
        """Leaves in left-to-right planar order."""
        out = []
        stack = [(i,) for i in reversed(range(self.params.k))]
        while stack:
            v = stack.pop()
            if v in self.carets:
                stack.extend(v + (j,) for j in reversed(range(self.params.d)))
            else:
                out.append(v)
        return out

    def leaf_of(self, v: Vertex):
        """The leaf of this subtree that is a prefix of v, or None."""
        for i in range(len(v) + 1):
            p = v[:i]
            if p != ROOT and self.is_leaf(p):
                return p
            if i >= 1 and p not in self.carets and p != ROOT:
                return None
        return None

    def contains(self, other: "CompleteSubtree") -> bool:
        return other.carets <= self.carets

    def add_caret(self, v: Vertex) -> "CompleteSubtree":
        if not self.is_leaf(v):
            raise ValueError(f"{format_vertex(v)} is not a leaf of this subtree")
        return CompleteSubtree(self.params, self.carets | {v})


def root_tree(params: TreeParams) -> CompleteSubtree:
    return CompleteSubtree(params, ())


def validate(params: TreeParams, carets: Iterable[Vertex]) -> CompleteSubtree:
    """Accept a raw caret set iff it is a prefix-closed set of non-root vertices."""
    return CompleteSubtree(params, carets)


def common_refinement(t1: CompleteSubtree, t2: CompleteSubtree) -> CompleteSubtree:
    """Smallest complete subtree containing both arguments (caret-set union)."""
    if t1.params != t2.params:
        raise ValueError("parameter mismatch between subtrees")
    if t2.carets <= t1.carets:
        return t1
    return CompleteSubtree(t1.params, t1.carets | t2.carets)


def refine_all(trees: Iterable[CompleteSubtree]) -> CompleteSubtree:
    trees = list(trees)
    out = trees[0]
    for t in trees[1:]:
        out = common_refinement(out, t)
    return out


def vertices_at_depth(params: TreeParams, depth: int) -> Iterator[Vertex]:
    """All vertices at exactly the given level (level 1 = children of the root)."""
    if depth == 0:
        yield ROOT
        return

    def rec(prefix, remaining):
        if remaining == 0:
            yield prefix
            return
        for x in range(params.d):
            yield from rec(prefix + (x,), remaining - 1)

    for a in range(params.k):
        yield from rec((a,), depth - 1)


def vertices_up_to_depth(params: TreeParams, depth: int) -> Iterator[Vertex]:
    for m in range(depth + 1):
        yield from vertices_at_depth(params, m)


def tree_depth(t: CompleteSubtree) -> int:
    """Level of the deepest leaf."""
    if not t.carets:
        return 1
    return max(len(c) for c in t.carets) + 1
