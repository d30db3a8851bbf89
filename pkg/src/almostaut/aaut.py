"""Almost automorphisms with local action in a finite group D.

An element is stored as a pair (u, P): a diagram P (tree pair) followed by
a finitely supported D-labelled automorphism u, acting as u o P.  On
construction the diagram is D-reduced: whenever the d leaves of a domain
caret are sent onto the d leaves of a range caret by a permutation lying in
D, the caret pair is removed and the permutation is absorbed into u as a
label.  The result is the minimal representing tree pair; what remains of
the leaf bijection is the order-preserving shadow of the element, so the
stored state *is* the decomposition compact-part x diagram-part.

Since finitely supported labelled automorphisms are themselves locally
order-preserving, every element here lies in the diagram group as a set;
the two-scale representation is kept because the rewriting engine treats
compact letters as single letters.
"""

from __future__ import annotations

import itertools
import time
from typing import Dict, List, Optional, Tuple

from .errors import BudgetExceeded, SaturationError
from .localgroup import (
    PermGroup,
    Portrait,
    identity_portrait,
    kappa,
    portrait_inv,
    portrait_mul,
    single_label,
    support_tree,
)
from .thompson import (
    GeneratingSet,
    TreePair,
    canonicalize,
    compose as pair_compose,
    identity_pair,
    invert as pair_invert,
    random_tree,
)
from .trees import (
    ROOT,
    CompleteSubtree,
    TreeParams,
    Vertex,
    format_vertex,
    tree_depth,
    vertices_at_depth,
)


def _portrait_depth(u: Portrait) -> int:
    return max((len(v) for v in u.labels), default=0)


def portrait_to_pair(u: Portrait) -> TreePair:
    """The canonical diagram of a labelled automorphism, built over the
    smallest complete subtree invariant under its vertex action (there the
    leaf sections are trivial, so the leaf bijection determines the map)."""
    params = u.params
    carets = set(support_tree(u)[0].carets)
    while True:
        extra = {u.apply(c) for c in carets} - carets
        if not extra:
            break
        carets |= extra
    tree = CompleteSubtree(params, carets)
    leaf_map = {m: u.apply(m) for m in tree.leaves()}
    return canonicalize(TreePair(params, tree, tree, leaf_map))


def d_reduce_split(group: PermGroup, u: Portrait, pair: TreePair
                   ) -> Tuple[Portrait, TreePair]:
    """Normalise u o pair: strip every caret of the pair whose leaf images
    differ from a caret by a permutation in D, absorbing that permutation
    into u.  Ordinary diagram reduction is the identity-permutation case."""
    params = pair.params
    d = params.d
    while True:
        found = None
        for c in sorted(pair.domain.carets):
            if any(c + (m,) in pair.domain.carets for m in range(d)):
                continue
            imgs = [pair.leaf_map[c + (m,)] for m in range(d)]
            if any(len(t) < 2 for t in imgs):
                continue
            target = imgs[0][:-1]
            if any(t[:-1] != target for t in imgs):
                continue
            if target not in pair.range_.carets:
                continue
            perm = tuple(t[-1] for t in imgs)
            if perm not in group:
                continue
            found = (c, target, perm)
            break
        if found is None:
            return u, pair
        c, target, perm = found
        u = portrait_mul(u, single_label(params, group, target, perm))
        leaf_map = dict(pair.leaf_map)
        for m in range(d):
            del leaf_map[c + (m,)]
        leaf_map[c] = target
        pair = TreePair(
            params,
            CompleteSubtree(params, pair.domain.carets - {c}),
            CompleteSubtree(params, pair.range_.carets - {target}),
            leaf_map,
        )


class DecoratedElement:
    """An almost automorphism u o P with finitely supported local action."""

    __slots__ = ("params", "group", "portrait", "pair")

    def __init__(self, group: PermGroup, portrait: Portrait, pair: TreePair,
                 _normalized: bool = False):
        if portrait.params != pair.params:
            raise ValueError("parameter mismatch between portrait and pair")
        if portrait.group != group:
            raise ValueError("portrait labels must lie in the local group")
        if not _normalized:
            portrait, pair = d_reduce_split(group, portrait, canonicalize(pair))
        object.__setattr__(self, "params", pair.params)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "portrait", portrait)
        object.__setattr__(self, "pair", pair)

    def __setattr__(self, name, value):
        raise AttributeError("DecoratedElement is immutable")

    @classmethod
    def from_pair(cls, group: PermGroup, pair: TreePair) -> "DecoratedElement":
        return cls(group, identity_portrait(pair.params, group), pair)

    @classmethod
    def from_portrait(cls, u: Portrait) -> "DecoratedElement":
        return cls(u.group, u, identity_pair(u.params))

    @classmethod
    def from_decorations(cls, group: PermGroup, pair: TreePair,
                         decorations: Dict[Vertex, Dict[Vertex, tuple]]
                         ) -> "DecoratedElement":
        """Decorations are per range-leaf label maps with subtree-relative
        addresses: () labels the leaf itself."""
        params = pair.params
        labels = {}
        for leaf, local in decorations.items():
            if pair.range_.leaf_of(leaf) != leaf:
                raise ValueError(f"{format_vertex(leaf)} is not a range leaf")
            for rel, perm in local.items():
                labels[leaf + tuple(rel)] = perm
        return cls(group, Portrait(params, group, labels), pair)

    def decorations(self) -> Dict[Vertex, Dict[Vertex, tuple]]:
        out: Dict[Vertex, Dict[Vertex, tuple]] = {}
        for v, p in self.portrait.labels.items():
            leaf = self.pair.range_.leaf_of(v)
            if leaf is None:
                raise AssertionError("normalised portrait lies below range leaves")
            out.setdefault(leaf, {})[v[len(leaf):]] = p
        return out

    def to_pair(self) -> TreePair:
        if self.portrait.is_identity():
            return self.pair
        return pair_compose(portrait_to_pair(self.portrait), self.pair)

    def apply(self, v: Vertex) -> Vertex:
        return self.portrait.apply(self.pair.apply(v))

    def depth(self) -> int:
        return tree_depth(self.pair.domain) + _portrait_depth(self.portrait) + 1

    def is_identity(self) -> bool:
        return self.pair.is_identity() and self.portrait.is_identity()

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecoratedElement):
            return NotImplemented
        return aaut_equals(self, other)

    def __hash__(self):
        raise TypeError("DecoratedElement is unhashable; compare via aaut_equals")

    def __repr__(self) -> str:
        return f"DecoratedElement(portrait={self.portrait!r}, pair={self.pair!r})"


def aaut_compose(g1: DecoratedElement, g2: DecoratedElement) -> DecoratedElement:
    """g1 o g2 (g2 acts first)."""
    if g1.params != g2.params or g1.group != g2.group:
        raise ValueError("parameter mismatch")
    return DecoratedElement(
        g1.group, identity_portrait(g1.params, g1.group),
        pair_compose(g1.to_pair(), g2.to_pair()))


def aaut_invert(g: DecoratedElement) -> DecoratedElement:
    return DecoratedElement(
        g.group, identity_portrait(g.params, g.group), pair_invert(g.to_pair()))


def aaut_equals(g1: DecoratedElement, g2: DecoratedElement) -> bool:
    """Exact equality, decided on the quotient g1 g2^{-1}."""
    h = aaut_compose(g1, aaut_invert(g2))
    return h.is_identity()


def equals_by_depth(g1: DecoratedElement, g2: DecoratedElement) -> bool:
    """Independent check: compare prefix actions to the sufficient depth."""
    depth = max(g1.depth(), g2.depth())
    return all(
        g1.apply(v) == g2.apply(v)
        for v in vertices_at_depth(g1.params, depth)
    )


class Decomposition:
    """Compact part times diagram part: element = portrait o shadow."""

    __slots__ = ("portrait", "shadow")

    def __init__(self, portrait: Portrait, shadow: TreePair):
        self.portrait = portrait
        self.shadow = shadow

    def __iter__(self):
        return iter((self.portrait, self.shadow))

    def __repr__(self) -> str:
        return f"Decomposition(portrait={self.portrait!r}, shadow={self.shadow!r})"


def decompose(g: DecoratedElement) -> Decomposition:
    """The stored normal form: the shadow is the order-preserving diagram on
    the minimal representing tree pair, the portrait is the exact filler,
    trivial on the range tree."""
    return Decomposition(g.portrait, g.pair)


def _action_table_in_compact(apply_fn, params: TreeParams, group: PermGroup,
                             depth: int) -> bool:
    """Decide compact-part membership from the vertex action alone: the
    action on the test depth must preserve levels, be cylinder-coherent, fix
    the first level, and induce local permutations lying in D."""
    img: Dict[Vertex, Vertex] = {}
    for w in vertices_at_depth(params, depth):
        im = apply_fn(w)
        if len(im) != depth:
            return False
        for i in range(1, depth + 1):
            v = w[:i]
            prev = img.get(v)
            if prev is None:
                img[v] = im[:i]
            elif prev != im[:i]:
                return False
    for a in range(params.k):
        if img[(a,)] != (a,):
            return False
    for v, iv in img.items():
        if len(v) == depth:
            continue
        perm = tuple(img[v + (m,)][-1] for m in range(params.d))
        if perm not in group:
            return False
    return True


def in_compact(g: DecoratedElement) -> bool:
    """Membership in the computable compact part (finitely supported
    D-labelled automorphisms).  Decided from the prefix action, not from the
    stored decomposition; beyond the test depth the action consists of the
    portrait tails (labels in D) and order-preserving tails, so the finite
    check is conclusive."""
    return _action_table_in_compact(g.apply, g.params, g.group, g.depth())


def pair_in_compact(pair: TreePair, group: PermGroup) -> bool:
    """Same membership test for a bare diagram."""
    depth = tree_depth(pair.domain) + 1
    return _action_table_in_compact(pair.apply, pair.params, group, depth)


def compact_portrait_of_pair(pair: TreePair, group: PermGroup) -> Portrait:
    """The portrait of a diagram lying in the compact part."""
    u, red = d_reduce_split(group, identity_portrait(pair.params, group),
                            canonicalize(pair))
    if not red.is_identity():
        raise ValueError("the diagram does not lie in the compact part")
    return u


def conj_compact(sigma: TreePair, u: Portrait) -> Portrait:
    """sigma u sigma^{-1} for u trivial on sigma's domain tree: labels are
    transported along the leaf bijection.  Exact caret bookkeeping: the
    support tree moves with the leaves."""
    labels = {}
    for w, p in u.labels.items():
        leaf = sigma.domain.leaf_of(w)
        if leaf is None:
            raise ValueError(
                f"label at {format_vertex(w)} moves a vertex of the domain "
                f"tree; the conjugate leaves the compact part")
        labels[sigma.leaf_map[leaf] + w[len(leaf):]] = p
    return Portrait(u.params, u.group, labels)


def level_raise(params: TreeParams, i: int, j: int, u: Portrait) -> Portrait:
    """Conjugate by delta(i, j), moving a portrait supported below the
    delta source one level up; drops the caret count by one."""
    from .thompson import delta, delta_source
    src = delta_source(params, i, j)
    for w in u.labels:
        if w[: len(src)] != src:
            raise ValueError(
                f"label at {format_vertex(w)} is not below {format_vertex(src)}")
    n_before = kappa(u)
    out = conj_compact(delta(params, i, j), u)
    if not u.is_identity() and kappa(out) > n_before - 1:
        raise AssertionError("level raise failed to drop the caret count")
    return out


def exchange(gs: GeneratingSet, group: PermGroup, sigma1: TreePair,
             u1: Portrait) -> Tuple[Portrait, TreePair]:
    """Solve sigma1 u1 = u2 sigma2 with sigma2 in the generating set.

    sigma2 is the member with domain tree the u1-preimage of sigma1's domain
    tree and the transported bijection; its caret count does not exceed
    sigma1's, so saturation of the generating set guarantees the lookup."""
    if sigma1.key() not in gs.index:
        raise ValueError("sigma1 must belong to the generating set")
    dom2 = CompleteSubtree(
        gs.params, {u1.apply_inverse(c) for c in sigma1.domain.carets})
    leaf_map = {m: sigma1.leaf_map[u1.apply(m)] for m in dom2.leaves()}
    sigma2 = canonicalize(TreePair(gs.params, dom2, sigma1.range_, leaf_map))
    if sigma2.key() not in gs.index:
        raise SaturationError(
            "exchange landed outside the generating set; it is not saturated")
    u2_pair = pair_compose(
        pair_compose(sigma1, portrait_to_pair(u1)), pair_invert(sigma2))
    u2 = compact_portrait_of_pair(u2_pair, group)
    return u2, sigma2


# ---------------------------------------------------------------------------
# Coset machinery


def coset_key(pair: TreePair, group: PermGroup, orbit_budget: int = 1 << 16):
    """Canonical key of the left coset (modulo the compact part).

    The D-reduced diagram attains the minimal caret count in its coset, and
    the coset's minimal diagrams are exactly its twists: relabelings of the
    domain tree by a D-isomorphism.  The key is the lexicographic minimum
    over that finite orbit."""
    _, red = d_reduce_split(group, identity_portrait(pair.params, group),
                            canonicalize(pair))
    carets = sorted(red.domain.carets)
    n = len(carets)
    if len(group) ** n > orbit_budget:
        raise BudgetExceeded(
            f"coset twist orbit has {len(group)}^{n} members; over budget")
    params = pair.params
    leaves = red.domain.leaves()
    best = None
    for combo in itertools.product(group.elements, repeat=n):
        labels = dict(zip(carets, combo))
        bmap = {(a,): (a,) for a in range(params.k)}
        for c in carets:  # sorted: parents precede children
            base = bmap[c]
            perm = labels[c]
            for m in range(params.d):
                bmap[c + (m,)] = base + (perm[m],)
        new_carets = frozenset(bmap[c] for c in carets)
        new_map = tuple(sorted(
            (bmap[m], red.leaf_map[m]) for m in leaves))
        cand = (tuple(sorted(new_carets)), red.range_._key, new_map)
        if best is None or cand < best:
            best = cand
    return best


class CosetBallResult:
    def __init__(self, counts, edges, n_cosets, violations, elapsed,
                 achieved_radius):
        self.counts = counts            # radius -> number of cosets
        self.edges = edges              # (source idx, generator id, target idx)
        self.n_cosets = n_cosets
        self.violations = violations    # stabilizer-test failures
        self.elapsed = elapsed
        self.achieved_radius = achieved_radius


def coset_ball(gs: GeneratingSet, group: PermGroup, radius: int,
               node_budget: int = 500_000,
               time_budget: Optional[float] = None,
               orbit_budget: int = 1 << 16) -> CosetBallResult:
    """Ball of the coset graph modulo the compact part.

    BFS over canonical coset keys; each product is also submitted to the
    independent membership test when it claims the base coset, counting
    stabilizer violations (an element fixes the base coset iff it lies in
    the compact part)."""
    t0 = time.monotonic()
    params = gs.params
    base = identity_pair(params)
    base_key = coset_key(base, group, orbit_budget)
    keys = {base_key: 0}
    reps: List[TreePair] = [base]
    frontier = [(base_key, 0)]
    counts = {0: 1}
    edges = []
    violations = 0
    gen_ids = gs.gen_ids()
    achieved = 0
    for r in range(1, radius + 1):
        if len(keys) + len(frontier) * len(gen_ids) > node_budget:
            break
        if time_budget is not None and time.monotonic() - t0 > time_budget:
            break
        nxt = []
        for _, idx in sorted(frontier):
            rep = reps[idx]
            for gid in gen_ids:
                w = pair_compose(gs.elements[gid], rep)
                k = coset_key(w, group, orbit_budget)
                fixes_base = (k == base_key)
                if fixes_base != pair_in_compact(w, group):
                    violations += 1
                tgt = keys.get(k)
                if tgt is None:
                    tgt = len(reps)
                    keys[k] = tgt
                    reps.append(canonicalize(w))
                    nxt.append((k, tgt))
                    counts[r] = counts.get(r, 0) + 1
                edges.append((idx, gid, tgt))
        frontier = nxt
        achieved = r
    return CosetBallResult(counts, edges, len(reps), violations,
                           time.monotonic() - t0, achieved)


# ---------------------------------------------------------------------------
# Random generators (shared by the test-suite, the profiler and the demos)


def random_portrait(params: TreeParams, group: PermGroup, n_carets: int,
                    rng) -> Portrait:
    """Uniform-ish portrait whose support tree has exactly n_carets carets:
    fringe carets get a nontrivial label, inner carets any label."""
    if n_carets == 0 or len(group) == 1:
        return identity_portrait(params, group)
    tree = random_tree(params, n_carets, rng)
    return _label_tree(params, group, tree.carets, rng)


def random_component_portrait(params: TreeParams, group: PermGroup, i: int,
                              n_carets: int, rng) -> Portrait:
    """Portrait supported in the i-th component (1-based first letter)."""
    if n_carets == 0 or len(group) == 1:
        return identity_portrait(params, group)
    carets = {(i - 1,)}
    while len(carets) < n_carets:
        fringe = [c + (m,) for c in carets for m in range(params.d)
                  if c + (m,) not in carets]
        carets.add(fringe[rng.randrange(len(fringe))])
    return _label_tree(params, group, carets, rng)


def _label_tree(params, group, carets, rng) -> Portrait:
    nontrivial = group.nontrivial()
    labels = {}
    for c in carets:
        if any(c + (m,) in carets for m in range(params.d)):
            labels[c] = rng.choice(group.elements)
        else:
            labels[c] = rng.choice(nontrivial)
    return Portrait(params, group, {v: p for v, p in labels.items()
                                    if p != group.identity})


def random_decorated(params: TreeParams, group: PermGroup, n_carets: int,
                     rng) -> DecoratedElement:
    from .thompson import random_pair
    u = random_portrait(params, group, rng.randrange(n_carets + 1), rng)
    v = random_pair(params, n_carets, rng)
    return DecoratedElement(group, u, v)
