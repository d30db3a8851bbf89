"""Finite local groups D <= Sym(d) and finitely supported labelled automorphisms.

A portrait assigns to finitely many non-root vertices a permutation in D.
It encodes the tree automorphism that fixes the k root children and, at
each labelled vertex w, permutes the d subtrees below w by the label.
Labels are read along the source path: the image of v = (a, b_1, ..., b_n)
has i-th deep letter label(v[:i]) applied to b_i.

Products are function composition: (u1 * u2)(x) = u1(u2(x)).

These portraits are exactly the computable (finitely supported) elements
of the compact group of D-labelled automorphisms fixing the first level.
"""

from __future__ import annotations

import itertools
from typing import Dict, Iterable, Optional, Tuple

from .trees import (
    ROOT,
    CompleteSubtree,
    TreeParams,
    Vertex,
    format_vertex,
    vertices_at_depth,
)

Perm = Tuple[int, ...]  # one-line notation, 0-indexed: p[i] = image of i


def perm_identity(d: int) -> Perm:
    return tuple(range(d))

def perm_mul(p: Perm, q: Perm) -> Perm:
    """(p o q)(i) = p(q(i))."""
    return tuple(p[q[i]] for i in range(len(p)))

def perm_inv(p: Perm) -> Perm:
    out = [0] * len(p)
    for i, pi in enumerate(p):
        out[pi] = i
    return tuple(out)

def perm_from_one_line(images: Iterable[int], d: Optional[int] = None) -> Perm:
    """1-indexed one-line notation, e.g. (2, 1) for the transposition of Sym(2)."""
    p = tuple(i - 1 for i in images)
    if d is not None and len(p) != d:
        raise ValueError(f"permutation degree {len(p)} != {d}")
    if sorted(p) != list(range(len(p))):
        raise ValueError(f"not a permutation: {images}")
    return p

def perm_to_one_line(p: Perm) -> list:
    return [i + 1 for i in p]


class PermGroup:
    """A subgroup of Sym(d), materialised by closure from its generators.

    Elements are one-line tuples; multiplication is table-free tuple
    composition (cheap for d <= 8, which is all we support).
    """

    def __init__(self, d: int, generators: Iterable[Perm]):
        if not (1 <= d <= 8):
            raise ValueError("only degrees 1..8 are supported")
        self.d = d
        self.generators = [tuple(g) for g in generators]
        for g in self.generators:
            if sorted(g) != list(range(d)):
                raise ValueError(f"generator {g} is not a permutation of range({d})")
        self.identity = perm_identity(d)
        self.elements = self._close()
        self._members = frozenset(self.elements)

    def _close(self):
        seen = {self.identity}
        frontier = [self.identity]
        while frontier:
            nxt = []
            for p in frontier:
                for g in self.generators:
                    q = perm_mul(g, p)
                    if q not in seen:
                        seen.add(q)
                        nxt.append(q)
            frontier = nxt
        return sorted(seen)

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, p: Perm) -> bool:
        return p in self._members

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PermGroup)
            and self.d == other.d
            and self._members == other._members
        )

    def __hash__(self) -> int:
        return hash((self.d, self._members))

    def __repr__(self) -> str:
        return f"PermGroup(d={self.d}, order={len(self)})"

    def nontrivial(self):
        return [p for p in self.elements if p != self.identity]


def symmetric_group(d: int) -> PermGroup:
    if d == 1:
        return PermGroup(1, [])
    gens = [tuple([1, 0] + list(range(2, d)))]
    if d > 2:
        gens.append(tuple(list(range(1, d)) + [0]))
    return PermGroup(d, gens)

def trivial_group(d: int) -> PermGroup:
    return PermGroup(d, [])

def cyclic_group(d: int) -> PermGroup:
    return PermGroup(d, [tuple(list(range(1, d)) + [0])])

def named_group(name: str) -> PermGroup:
    """Presets used by configs: 'sym2', 'sym3', 'cyc3', 'triv2', ..."""
    name = name.lower()
    for prefix, factory in (("sym", symmetric_group), ("cyc", cyclic_group),
                            ("triv", trivial_group)):
        if name.startswith(prefix):
            return factory(int(name[len(prefix):]))
    raise ValueError(f"unknown group name {name!r}")


class Portrait:
    """A finitely supported D-labelled automorphism fixing the first level."""

    __slots__ = ("params", "group", "labels", "_hash")

    def __init__(self, params: TreeParams, group: PermGroup,
                 labels: Optional[Dict[Vertex, Perm]] = None):
        if group.d != params.d:
            raise ValueError("local group degree must equal branching arity d")
        clean = {}
        for v, p in (labels or {}).items():
            if v == ROOT:
                raise ValueError("portraits carry no root label (first level is fixed)")
            params.check_vertex(v)
            if p not in group:
                raise ValueError(
                    f"label {p} at {format_vertex(v)} is not in the local group")
            if p != group.identity:
                clean[v] = p
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "labels", clean)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("Portrait is immutable")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Portrait)
            and self.params == other.params
            and self.labels == other.labels
        )

    def __hash__(self) -> int:
        h = self._hash
        if h is None:
            h = hash((self.params, frozenset(self.labels.items())))
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self) -> str:
        inner = ", ".join(
            f"{format_vertex(v)}:{perm_to_one_line(p)}"
            for v, p in sorted(self.labels.items())
        )
        return f"Portrait({{{inner}}})"

    def is_identity(self) -> bool:
        return not self.labels

    def label(self, v: Vertex) -> Perm:
        return self.labels.get(v, self.group.identity)

    def apply(self, v: Vertex) -> Vertex:
        """Image of a vertex; labels are read along the source path."""
        if len(v) <= 1:
            return v
        out = list(v)
        for i in range(1, len(v)):
            p = self.labels.get(v[:i])
            if p is not None:
                out[i] = p[v[i]]
        return tuple(out)

    def apply_inverse(self, v: Vertex) -> Vertex:
        """Image under the inverse automorphism, without building it."""
        if len(v) <= 1:
            return v
        out = list(v)
        for i in range(1, len(v)):
            p = self.labels.get(tuple(out[:i]))
            if p is not None:
                out[i] = perm_inv(p)[v[i]]
        return tuple(out)

    def components(self) -> Dict[int, "Portrait"]:
        """Split by first letter; component i carries the labels below a_{i+1}."""
        buckets: Dict[int, Dict[Vertex, Perm]] = {}
        for v, p in self.labels.items():
            buckets.setdefault(v[0], {})[v] = p
        return {i: Portrait(self.params, self.group, lab)
                for i, lab in sorted(buckets.items())}

    def component_index(self) -> Optional[int]:
        """The unique first letter of the support, or None (identity or mixed)."""
        idx = {v[0] for v in self.labels}
        return idx.pop() if len(idx) == 1 else None


def identity_portrait(params: TreeParams, group: PermGroup) -> Portrait:
    return Portrait(params, group, {})


def single_label(params: TreeParams, group: PermGroup, v: Vertex, p: Perm) -> Portrait:
    return Portrait(params, group, {v: p})


def portrait_mul(u1: Portrait, u2: Portrait) -> Portrait:
    """Composition u1 o u2 (u2 acts first)."""
    if u1.params != u2.params or u1.group != u2.group:
        raise ValueError("parameter mismatch between portraits")
    labels: Dict[Vertex, Perm] = {}
    support = set(u2.labels)
    support.update(u2.apply_inverse(v) for v in u1.labels)
    ident = u1.group.identity
    for v in support:
        p = perm_mul(u1.label(u2.apply(v)), u2.label(v))
        if p != ident:
            labels[v] = p
    return Portrait(u1.params, u1.group, labels)


def portrait_inv(u: Portrait) -> Portrait:
    labels = {}
    for v, p in u.labels.items():
        labels[u.apply(v)] = perm_inv(p)
    return Portrait(u.params, u.group, labels)


def support_tree(u: Portrait) -> Tuple[CompleteSubtree, int]:
    """Minimal complete subtree with trivial sections at its leaves, and its
    caret count.  The carets are exactly the prefixes (of level >= 1) of the
    labelled vertices."""
    carets = set()
    for v in u.labels:
        for i in range(1, len(v) + 1):
            carets.add(v[:i])
    tree = CompleteSubtree(u.params, carets)
    return tree, tree.n_carets


def kappa(u: Portrait) -> int:
    return support_tree(u)[1]


def restrict(u: Portrait, v: Vertex) -> Portrait:
    """Keep the labels at vertices having v as a prefix (v included).

    Defined when u fixes v and carries no label at a proper prefix of v
    beyond its first letter, so the result is again a component portrait.
    """
    if u.apply(v) != v:
        raise ValueError(f"portrait moves {format_vertex(v)}; cannot restrict")
    for i in range(1, len(v)):
        if v[:i] in u.labels:
            raise ValueError(
                f"label at proper prefix {format_vertex(v[:i])} obstructs restriction")
    labels = {w: p for w, p in u.labels.items()
              if len(w) >= len(v) and w[: len(v)] == v}
    return Portrait(u.params, u.group, labels)


def top_label(u: Portrait, v: Vertex) -> Perm:
    return u.label(v)


class TruncatedAutomorphism:
    """All labels on the first m levels, drawn from D; a coset of the deep
    pointwise stabilizer.  Only used for sampling and membership experiments."""

    __slots__ = ("params", "group", "depth", "labels")

    def __init__(self, params: TreeParams, group: PermGroup, depth: int,
                 labels: Dict[Vertex, Perm]):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        expected = [v for m in range(1, depth + 1)
                    for v in vertices_at_depth(params, m)]
        if set(labels) != set(expected):
            raise ValueError("labels must cover exactly the first `depth` levels")
        for v, p in labels.items():
            if p not in group:
                raise ValueError(f"label at {format_vertex(v)} outside the group")
        self.params = params
        self.group = group
        self.depth = depth
        self.labels = dict(labels)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TruncatedAutomorphism)
            and self.params == other.params
            and self.depth == other.depth
            and self.labels == other.labels
        )

    def __repr__(self) -> str:
        return f"TruncatedAutomorphism(depth={self.depth}, labels={len(self.labels)})"


def sample_truncated(params: TreeParams, group: PermGroup, depth: int,
                     rng) -> TruncatedAutomorphism:
    """Labels independently uniform over D on every vertex of the first
    `depth` levels (the uniform measure on the level quotient)."""
    labels = {}
    for m in range(1, depth + 1):
        for v in vertices_at_depth(params, m):
            labels[v] = rng.choice(group.elements)
    return TruncatedAutomorphism(params, group, depth, labels)


def lift_random(t: TruncatedAutomorphism, extra_depth: int = 0) -> Portrait:
    """The finitely supported representative extending the truncation by
    identity labels (extra_depth is accepted for signature compatibility;
    identity labels are dropped by the portrait constructor anyway)."""
    del extra_depth
    return Portrait(t.params, t.group, dict(t.labels))


def truncation_index(t: CompleteSubtree, group: PermGroup) -> int:
    """|D|^kappa(T): the number of label patterns on the carets of T, i.e.
    the index of the pointwise-T stabilizer in the labelled automorphism
    group."""
    return len(group) ** t.n_carets


def all_label_patterns(t: CompleteSubtree, group: PermGroup):
    """Iterate over all portraits supported inside the carets of T."""
    carets = sorted(t.carets)
    for combo in itertools.product(group.elements, repeat=len(carets)):
        yield dict(zip(carets, combo))
