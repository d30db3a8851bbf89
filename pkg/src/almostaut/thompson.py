"""Tree-pair diagrams: the locally order-preserving almost automorphisms.

An element is a triple (domain tree, range tree, leaf bijection); it maps
the boundary cylinder below each domain leaf onto the cylinder below its
image leaf by prefix replacement.  The canonical representative is the
unique reduced pair: no domain caret whose d leaves are sent, in order,
onto the d leaves of a single range caret.

Products are function composition: compose(v1, v2) acts by v2 first.

The module also builds the generating sets used downstream: all canonical
pairs with at most q carets.  Such a set is closed under inverses, contains
every level-shift generator delta, and is saturated (replacing the domain
tree of a member by any tree-automorphism image lands back in the set,
since caret counts are preserved).
"""

from __future__ import annotations

import itertools
import time
from typing import Dict, Iterable, List, Optional, Tuple

from .errors import BudgetExceeded, GenerationCheckFailed
from .trees import (
    CompleteSubtree,
    TreeParams,
    Vertex,
    common_refinement,
    format_vertex,
    root_tree,
    tree_depth,
)


class TreePair:
    """A diagram (domain tree, range tree, leaf bijection)."""

    __slots__ = ("params", "domain", "range_", "leaf_map", "_key")

    def __init__(self, params: TreeParams, domain: CompleteSubtree,
                 range_: CompleteSubtree, leaf_map: Dict[Vertex, Vertex]):
        if domain.params != params or range_.params != params:
            raise ValueError("tree parameter mismatch")
        dom_leaves = domain.leaves()
        ran_leaves = range_.leaves()
        if set(leaf_map) != set(dom_leaves):
            raise ValueError("leaf map keys must be exactly the domain leaves")
        if set(leaf_map.values()) != set(ran_leaves):
            raise ValueError("leaf map must be a bijection onto the range leaves")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "range_", range_)
        object.__setattr__(self, "leaf_map", dict(leaf_map))
        object.__setattr__(self, "_key", None)

    def __setattr__(self, name, value):
        raise AttributeError("TreePair is immutable")

    def key(self):
        """Hashable serialisation; equality of *canonical* pairs is element
        equality."""
        k = self._key
        if k is None:
            k = (
                self.domain._key,
                self.range_._key,
                tuple(sorted(self.leaf_map.items())),
            )
            object.__setattr__(self, "_key", k)
        return k

    def __eq__(self, other) -> bool:
        return isinstance(other, TreePair) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        pairs = ", ".join(
            f"{format_vertex(a)}->{format_vertex(b)}"
            for a, b in sorted(self.leaf_map.items())
        )
        return f"TreePair({pairs})"

    @property
    def n_carets(self) -> int:
        return self.domain.n_carets

    def apply(self, v: Vertex) -> Vertex:
        """Image of a vertex lying at or below a domain leaf."""
        leaf = self.domain.leaf_of(v)
        if leaf is None:
            raise ValueError(
                f"{format_vertex(v)} is above the domain leaves; image undefined")
        return self.leaf_map[leaf] + v[len(leaf):]

    def apply_inverse(self, v: Vertex) -> Vertex:
        inv = {b: a for a, b in self.leaf_map.items()}
        leaf = self.range_.leaf_of(v)
        if leaf is None:
            raise ValueError(
                f"{format_vertex(v)} is above the range leaves; image undefined")
        return inv[leaf] + v[len(leaf):]

    def is_identity(self) -> bool:
        return self.domain.n_carets == 0 and all(
            a == b for a, b in self.leaf_map.items())


def identity_pair(params: TreeParams) -> TreePair:
    t = root_tree(params)
    return TreePair(params, t, t, {(i,): (i,) for i in range(params.k)})


def expand_via_domain(pair: TreePair, new_domain: CompleteSubtree) -> TreePair:
    """Representative of the same element with the given (larger) domain tree."""
    if not new_domain.contains(pair.domain):
        raise ValueError("expansion must contain the current domain tree")
    new_range_carets = set(pair.range_.carets)
    for c in new_domain.carets - pair.domain.carets:
        leaf = pair.domain.leaf_of(c)
        new_range_carets.add(pair.leaf_map[leaf] + c[len(leaf):])
    new_range = CompleteSubtree(pair.params, new_range_carets)
    leaf_map = {}
    for m in new_domain.leaves():
        leaf = pair.domain.leaf_of(m)
        leaf_map[m] = pair.leaf_map[leaf] + m[len(leaf):]
    return TreePair(pair.params, new_domain, new_range, leaf_map)


def expand_via_range(pair: TreePair, new_range: CompleteSubtree) -> TreePair:
    if not new_range.contains(pair.range_):
        raise ValueError("expansion must contain the current range tree")
    inv = {b: a for a, b in pair.leaf_map.items()}
    new_domain_carets = set(pair.domain.carets)
    for c in new_range.carets - pair.range_.carets:
        leaf = pair.range_.leaf_of(c)
        new_domain_carets.add(inv[leaf] + c[len(leaf):])
    new_domain = CompleteSubtree(pair.params, new_domain_carets)
    leaf_map = {}
    for m in new_domain.leaves():
        leaf = pair.domain.leaf_of(m)
        leaf_map[m] = pair.leaf_map[leaf] + m[len(leaf):]
    return TreePair(pair.params, new_domain, new_range, leaf_map)


def _reducible_carets(pair: TreePair) -> List[Tuple[Vertex, Vertex]]:
    """Domain carets whose leaves map in order onto the leaves of a range
    caret, with that range caret."""
    d = pair.params.d
    out = []
    for c in pair.domain.carets:
        if any(c + (m,) in pair.domain.carets for m in range(d)):
            continue
        img0 = pair.leaf_map[c + (0,)]
        if len(img0) < 2 or img0[-1] != 0:
            continue
        target = img0[:-1]
        if target not in pair.range_.carets:
            continue
        if all(pair.leaf_map[c + (m,)] == target + (m,) for m in range(1, d)):
            out.append((c, target))
    return sorted(out)


def _reduce_once(pair: TreePair, caret: Vertex, target: Vertex) -> TreePair:
    d = pair.params.d
    leaf_map = dict(pair.leaf_map)
    for m in range(d):
        del leaf_map[caret + (m,)]
    leaf_map[caret] = target
    return TreePair(
        pair.params,
        CompleteSubtree(pair.params, pair.domain.carets - {caret}),
        CompleteSubtree(pair.params, pair.range_.carets - {target}),
        leaf_map,
    )


def canonicalize(pair: TreePair, rng=None) -> TreePair:
    """Reduce to the unique canonical representative.

    The reduction order is irrelevant (removals of distinct reducible carets
    commute); pass an rng to exercise that confluence with a random order.
    """
    while True:
        red = _reducible_carets(pair)
        if not red:
            return pair
        pick = red[0] if rng is None else red[rng.randrange(len(red))]
        pair = _reduce_once(pair, *pick)


def is_canonical(pair: TreePair) -> bool:
    return not _reducible_carets(pair)


def carets(pair: TreePair) -> int:
    """Caret count of the canonical representative."""
    return canonicalize(pair).n_carets


def compose(v1: TreePair, v2: TreePair) -> TreePair:
    """v1 o v2 (v2 acts first), in canonical form."""
    if v1.params != v2.params:
        raise ValueError("parameter mismatch")
    mid = common_refinement(v2.range_, v1.domain)
    left = expand_via_domain(v1, mid)
    right = expand_via_range(v2, mid)
    leaf_map = {m: left.leaf_map[right.leaf_map[m]] for m in right.leaf_map}
    return canonicalize(
        TreePair(v1.params, right.domain, left.range_, leaf_map))


def invert(v: TreePair) -> TreePair:
    return TreePair(
        v.params, v.range_, v.domain, {b: a for a, b in v.leaf_map.items()})


def compose_all(pairs: Iterable[TreePair]) -> TreePair:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty product")
    out = pairs[0]
    for p in pairs[1:]:
        out = compose(out, p)
    return out


def delta(params: TreeParams, i: int, j: int) -> TreePair:
    """The level-shift generator: it maps the subtree below the j-th child
    of position i isomorphically onto the subtree below position i.

    For k >= 2 the positions are the root children a_1..a_k (1-based i,
    indices mod k).  For k = 1 there is no second root child to lean on, so
    the same construction is run one level down: positions are the level-2
    vertices a_1b_1..a_1b_d and the element maps the subtree below a_1b_ib_j
    onto the subtree below a_1b_i (indices mod d).
    """
    d, k = params.d, params.k
    if not (1 <= j <= d):
        raise ValueError(f"j must be in 1..{d}")
    if k >= 2:
        if not (1 <= i <= k):
            raise ValueError(f"i must be in 1..{k}")
        i0, j0 = i - 1, j - 1
        i1 = i % k
        dom = CompleteSubtree(params, {(i0,)})
        ran = CompleteSubtree(params, {(i1,)})
        leaf_map = {(l,): (l,) for l in range(k) if l not in (i0, i1)}
        leaf_map[(i1,)] = (i1, j0)
        for l in range(d):
            leaf_map[(i0, l)] = (i0,) if l == j0 else (i1, l)
        return TreePair(params, dom, ran, leaf_map)
    # k == 1: run the construction on the level-2 positions.
    if not (1 <= i <= d):
        raise ValueError(f"i must be in 1..{d} when k = 1")
    i0, j0 = i - 1, j - 1
    i1 = i % d
    dom = CompleteSubtree(params, {(0,), (0, i0)})
    ran = CompleteSubtree(params, {(0,), (0, i1)})
    leaf_map = {(0, l): (0, l) for l in range(d) if l not in (i0, i1)}
    leaf_map[(0, i1)] = (0, i1, j0)
    for l in range(d):
        leaf_map[(0, i0, l)] = (0, i0) if l == j0 else (0, i1, l)
    return TreePair(params, dom, ran, leaf_map)


def delta_family(params: TreeParams) -> Dict[Tuple[int, int], TreePair]:
    n_i = params.k if params.k >= 2 else params.d
    return {(i, j): delta(params, i, j)
            for i in range(1, n_i + 1) for j in range(1, params.d + 1)}


def delta_source(params: TreeParams, i: int, j: int) -> Vertex:
    """The vertex whose subtree delta(i, j) moves one level up."""
    if params.k >= 2:
        return (i - 1, j - 1)
    return (0, i - 1, j - 1)


def delta_target(params: TreeParams, i: int, j: int) -> Vertex:
    if params.k >= 2:
        return (i - 1,)
    return (0, i - 1)


def trees_with_carets(params: TreeParams, n: int) -> List[CompleteSubtree]:
    """All complete subtrees with exactly n carets."""
    level = {root_tree(params)}
    for _ in range(n):
        level = {t.add_caret(leaf) for t in level for leaf in t.leaves()}
    return sorted(level)


def canonical_pairs_with_carets(params: TreeParams, n: int):
    """All canonical diagrams with exactly n carets."""
    trees = trees_with_carets(params, n)
    for dom in trees:
        dom_leaves = dom.leaves()
        for ran in trees:
            ran_leaves = ran.leaves()
            for perm in itertools.permutations(range(len(ran_leaves))):
                leaf_map = {dom_leaves[i]: ran_leaves[perm[i]]
                            for i in range(len(dom_leaves))}
                pair = TreePair(params, dom, ran, leaf_map)
                if not _reducible_carets(pair):
                    yield pair


class GeneratingSet:
    """All canonical diagrams with at most q carets.

    Closed under inverses (the inverse of a canonical pair is canonical with
    the same caret count), contains the delta family, and is saturated: any
    member (psi, T, T') keeps its caret count when T is replaced by a tree
    automorphism image u(T), so every diagram (psi', u(T), T') reduces to a
    member.
    """

    def __init__(self, params: TreeParams, q: int,
                 elements: List[TreePair], certificate: str):
        self.params = params
        self.q = q
        self.elements = elements
        self.index = {e.key(): i for i, e in enumerate(elements)}
        self.inverse_ids = [self.index[invert(e).key()] for e in elements]
        self.identity_id = self.index[identity_pair(params).key()]
        self.delta_ids = {
            ij: self.index[pair.key()]
            for ij, pair in delta_family(params).items()
        }
        self.generation_certificate = certificate
        self.saturated = True

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, pair: TreePair) -> bool:
        return pair.key() in self.index

    def __repr__(self) -> str:
        return (f"GeneratingSet(d={self.params.d}, k={self.params.k}, "
                f"q={self.q}, size={len(self)})")

    def id_of(self, pair: TreePair) -> int:
        return self.index[pair.key()]

    def element(self, i: int) -> TreePair:
        return self.elements[i]

    def inverse_id(self, i: int) -> int:
        return self.inverse_ids[i]

    def gen_ids(self) -> List[int]:
        """Ids used for ball expansion (identity excluded)."""
        return [i for i in range(len(self.elements)) if i != self.identity_id]

    def max_carets(self) -> int:
        return max(e.n_carets for e in self.elements)

    def eval_word(self, word) -> TreePair:
        """Evaluate a list of (generator id, exponent) letters."""
        out = identity_pair(self.params)
        for sid, exp in word:
            g = self.elements[sid if exp == 1 else self.inverse_ids[sid]]
            out = compose(out, g)
        return out


def build_sigma(params: TreeParams, q: int, verify: str = "auto",
                node_budget: int = 800_000, sample_targets: int = 12,
                rng=None) -> GeneratingSet:
    """Build the generating set of all canonical diagrams with <= q carets.

    verify: "full" checks that every canonical diagram with q+1 carets is a
    short product of members (BFS witness); "sample" checks a random sample;
    "off" skips; "auto" picks by enumeration size.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    elements: List[TreePair] = []
    for n in range(q + 1):
        elements.extend(canonical_pairs_with_carets(params, n))
    elements.sort(key=lambda e: e.key())
    gs = GeneratingSet(params, q, elements, certificate="unverified")

    if verify == "auto":
        n_targets = _count_targets(params, q + 1)
        verify = "full" if len(elements) ** 2 + n_targets <= node_budget else "sample"
    if verify == "off":
        gs.generation_certificate = "skipped"
        return gs
    if verify == "full":
        witness = _verify_generation_full(gs, node_budget)
        gs.generation_certificate = f"full(max_witness={witness})"
    elif verify == "sample":
        import random as _random
        rng = rng or _random.Random(0)
        witness = _verify_generation_sampled(gs, sample_targets, rng)
        gs.generation_certificate = (
            f"sampled(n={sample_targets}, max_witness={witness})")
    else:
        raise ValueError(f"unknown verify mode {verify!r}")
    return gs


def _count_targets(params: TreeParams, n: int) -> int:
    trees = trees_with_carets(params, n)
    if not trees:
        return 0
    import math
    leaves = (params.d - 1) * n + params.k
    return len(trees) ** 2 * math.factorial(leaves)


def _ball_keys(gs: GeneratingSet, radius: int, node_budget: int):
    """Exact ball: canonical key -> word length, by layered left multiplication."""
    ball = {identity_pair(gs.params).key(): 0}
    frontier = [identity_pair(gs.params)]
    gens = [(i, gs.elements[i]) for i in gs.gen_ids()]
    for r in range(1, radius + 1):
        if len(ball) + len(frontier) * len(gens) > node_budget:
            raise BudgetExceeded(
                f"ball of radius {r} exceeds the node budget {node_budget}")
        nxt = []
        for v in frontier:
            for _, g in gens:
                w = compose(g, v)
                k = w.key()
                if k not in ball:
                    ball[k] = r
                    nxt.append(w)
        frontier = nxt
    return ball


def _verify_generation_full(gs: GeneratingSet, node_budget: int) -> int:
    ball = _ball_keys(gs, 2, node_budget)
    max_witness = 0
    missing = []
    for target in canonical_pairs_with_carets(gs.params, gs.q + 1):
        got = ball.get(target.key())
        if got is not None:
            max_witness = max(max_witness, got)
        else:
            missing.append(target)
    for target in missing:
        if not _witness_length3(gs, target, ball):
            raise GenerationCheckFailed(
                f"no short word over the q={gs.q} set reaches {target!r}; "
                f"raise q")
        max_witness = max(max_witness, 3)
    return max_witness


def _witness_length3(gs: GeneratingSet, target: TreePair, ball) -> bool:
    for i in gs.gen_ids():
        left_inv = gs.elements[gs.inverse_ids[i]]
        if compose(left_inv, target).key() in ball:
            return True
    return False


def _verify_generation_sampled(gs: GeneratingSet, n_samples: int, rng) -> int:
    from .trees import TreeParams as _TP  # noqa: F401 (kept local, no cycle)
    member_keys = set(gs.index)
    max_witness = 0
    for _ in range(n_samples):
        target = random_pair(gs.params, gs.q + 1, rng, exact=True)
        if target.key() in member_keys:
            max_witness = max(max_witness, 1)
            continue
        found = False
        for i in gs.gen_ids():
            left_inv = gs.elements[gs.inverse_ids[i]]
            if compose(left_inv, target).key() in member_keys:
                found = True
                break
        if not found:
            raise GenerationCheckFailed(
                "sampled generation check failed at a q+1-caret diagram; raise q")
        max_witness = max(max_witness, 2)
    return max_witness


def saturate(params: TreeParams, pairs: Iterable[TreePair]) -> List[TreePair]:
    """Close a finite set under saturation: for each member with canonical
    representative (psi, T, T'), include every element of the group
    representable as (psi', u(T), T') for a tree-automorphism image u(T).
    Iterated to a genuine fixed point; termination holds because all added
    elements have at most max-caret-count carets."""
    out = {canonicalize(p).key(): canonicalize(p) for p in pairs}
    todo = list(out.values())
    while todo:
        sigma = todo.pop()
        dom_images = _tree_automorphism_images(sigma.domain)
        ran = sigma.range_
        ran_leaves = ran.leaves()
        for dom in dom_images:
            dom_leaves = dom.leaves()
            for perm in itertools.permutations(range(len(ran_leaves))):
                leaf_map = {dom_leaves[i]: ran_leaves[perm[i]]
                            for i in range(len(dom_leaves))}
                cand = canonicalize(TreePair(params, dom, ran, leaf_map))
                if cand.key() not in out:
                    out[cand.key()] = cand
                    todo.append(cand)
    return sorted(out.values(), key=lambda e: e.key())


def is_saturated(params: TreeParams, pairs: List[TreePair]) -> bool:
    have = {canonicalize(p).key() for p in pairs}
    for sigma in pairs:
        sigma = canonicalize(sigma)
        ran_leaves = sigma.range_.leaves()
        for dom in _tree_automorphism_images(sigma.domain):
            dom_leaves = dom.leaves()
            for perm in itertools.permutations(range(len(ran_leaves))):
                leaf_map = {dom_leaves[i]: ran_leaves[perm[i]]
                            for i in range(len(dom_leaves))}
                cand = canonicalize(TreePair(params, dom, sigma.range_, leaf_map))
                if cand.key() not in have:
                    return False
    return True


def _tree_automorphism_images(t: CompleteSubtree) -> List[CompleteSubtree]:
    """All images of a complete subtree under tree automorphisms (root
    branches permuted arbitrarily, children permuted arbitrarily below)."""
    params = t.params
    by_parent: Dict[Vertex, List[Vertex]] = {}
    roots = []
    for c in sorted(t.carets, key=len):
        if len(c) == 1:
            roots.append(c)
        else:
            by_parent.setdefault(c[:-1], []).append(c)

    def images_below(caret: Vertex, new_pos: Vertex) -> List[frozenset]:
        kids = by_parent.get(caret, [])
        if not kids:
            return [frozenset({new_pos})]
        outs = []
        for target_slots in itertools.permutations(range(params.d), len(kids)):
            parts = [images_below(kid, new_pos + (slot,))
                     for kid, slot in zip(kids, target_slots)]
            for chosen in itertools.product(*parts):
                outs.append(frozenset({new_pos}).union(*chosen))
        return outs

    images = set()
    for root_slots in itertools.permutations(range(params.k), len(roots)):
        parts = [images_below(r, (slot,)) for r, slot in zip(roots, root_slots)]
        if not parts:
            images.add(frozenset())
            continue
        for chosen in itertools.product(*parts):
            images.add(frozenset().union(*chosen))
    return sorted(CompleteSubtree(params, s) for s in images)


class BallResult:
    """Outcome of a budgeted Cayley-ball computation."""

    def __init__(self, lengths, achieved_radius, requested_radius, elapsed):
        self.lengths = lengths  # canonical key -> word length
        self.achieved_radius = achieved_radius
        self.requested_radius = requested_radius
        self.elapsed = elapsed

    @property
    def truncated(self) -> bool:
        return self.achieved_radius < self.requested_radius

    def counts_by_radius(self):
        counts = {}
        for _, r in self.lengths.items():
            counts[r] = counts.get(r, 0) + 1
        return dict(sorted(counts.items()))


def bfs_ball(gs: GeneratingSet, radius: int, node_budget: int = 2_000_000,
             time_budget: Optional[float] = None) -> BallResult:
    """Exact word lengths within the ball, with budget-driven radius
    reduction: before expanding a layer, the projected node count (frontier
    times generator count) is checked against the budget and the ball is
    returned at the largest completed radius if it would overflow."""
    t0 = time.monotonic()
    ball = {identity_pair(gs.params).key(): 0}
    frontier = [identity_pair(gs.params)]
    gens = [gs.elements[i] for i in gs.gen_ids()]
    achieved = 0
    for r in range(1, radius + 1):
        projected = len(ball) + len(frontier) * len(gens)
        if projected > node_budget:
            break
        if time_budget is not None and time.monotonic() - t0 > time_budget:
            break
        nxt = []
        for v in frontier:
            for g in gens:
                w = compose(g, v)
                k = w.key()
                if k not in ball:
                    ball[k] = r
                    nxt.append(w)
        frontier = nxt
        achieved = r
    return BallResult(ball, achieved, radius, time.monotonic() - t0)


def key_carets(key) -> int:
    """Caret count read off a canonical serialisation."""
    return len(key[0])


def random_tree(params: TreeParams, n_carets: int, rng) -> CompleteSubtree:
    t = root_tree(params)
    for _ in range(n_carets):
        leaves = t.leaves()
        t = t.add_caret(leaves[rng.randrange(len(leaves))])
    return t


def random_pair(params: TreeParams, n_carets: int, rng,
                exact: bool = False) -> TreePair:
    """A random canonical diagram with about (or exactly) n_carets carets."""
    while True:
        dom = random_tree(params, n_carets, rng)
        ran = random_tree(params, n_carets, rng)
        dom_leaves = dom.leaves()
        ran_leaves = list(ran.leaves())
        rng.shuffle(ran_leaves)
        pair = canonicalize(TreePair(
            params, dom, ran, dict(zip(dom_leaves, ran_leaves))))
        if not exact or pair.n_carets == n_carets:
            return pair
