"""Self-similar automaton groups on the rooted d-ary tree.

A group is given by a wreath recursion: each named generator carries a
permutation of the d child slots and d sections, which are words in the
generator names.  Elements are words; their action and sections follow the
defining identity image(v . w) = image(v) . section_at(v)(w), with products
composed as functions (the right factor acts first).

Exact computations at finite depth go through action tables: the images of
all vertices down to a fixed level, composed as permutations of that finite
vertex set.  On top of these the module provides level-image sizes, the
contraction nucleus, pattern sets with closure membership, and the two
branch-group index identities.
"""

from __future__ import annotations

import itertools
import math
import re
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .errors import BudgetExceeded

Perm = Tuple[int, ...]
WordLetters = Tuple[Tuple[str, int], ...]


def _perm_inv(p: Perm) -> Perm:
    out = [0] * len(p)
    for i, x in enumerate(p):
        out[x] = i
    return tuple(out)


class WreathSpec:
    """Named generators with permutations and section words."""

    def __init__(self, d: int, gens: Dict[str, Tuple[Perm, Sequence[WordLetters]]]):
        if d < 2:
            raise ValueError("alphabet size must be >= 2")
        self.d = d
        self.gens: Dict[str, Tuple[Perm, Tuple[WordLetters, ...]]] = {}
        for name, (perm, sections) in gens.items():
            if name == "e":
                raise ValueError("'e' is reserved for the identity")
            if sorted(perm) != list(range(d)):
                raise ValueError(f"bad permutation for generator {name!r}")
            if len(sections) != d:
                raise ValueError(f"generator {name!r} needs {d} sections")
            self.gens[name] = (tuple(perm), tuple(tuple(s) for s in sections))
        for name, (_, sections) in self.gens.items():
            for s in sections:
                for gname, _ in s:
                    if gname not in self.gens:
                        raise ValueError(
                            f"section of {name!r} uses unknown generator {gname!r}")

    def generator_names(self) -> List[str]:
        return list(self.gens)

    def word(self, letters) -> "GroupWord":
        return GroupWord(self, letters)

    def identity(self) -> "GroupWord":
        return GroupWord(self, ())

    def generators(self) -> List["GroupWord"]:
        return [GroupWord(self, ((n, 1),)) for n in self.gens]

    def __repr__(self) -> str:
        return f"WreathSpec(d={self.d}, gens={list(self.gens)})"


def reduce_letters(letters) -> WordLetters:
    out: List[Tuple[str, int]] = []
    for name, exp in letters:
        if out and out[-1][0] == name and out[-1][1] == -exp:
            out.pop()
        else:
            out.append((name, exp))
    return tuple(out)


class GroupWord:
    """A word in the generators, with a lazy section cache."""

    __slots__ = ("spec", "letters", "_sections")

    def __init__(self, spec: WreathSpec, letters):
        self.spec = spec
        self.letters = reduce_letters(letters)
        self._sections: Dict[int, GroupWord] = {}

    def __mul__(self, other: "GroupWord") -> "GroupWord":
        return GroupWord(self.spec, self.letters + other.letters)

    def inverse(self) -> "GroupWord":
        return GroupWord(self.spec,
                         tuple((n, -e) for n, e in reversed(self.letters)))

    def __repr__(self) -> str:
        if not self.letters:
            return "e"
        return "".join(n if e == 1 else f"{n}^-1" for n, e in self.letters)

    def _letter_act(self, name: str, exp: int, x: int) -> int:
        perm, _ = self.spec.gens[name]
        return perm[x] if exp == 1 else _perm_inv(perm)[x]

    def _letter_section(self, name: str, exp: int, x: int) -> WordLetters:
        perm, sections = self.spec.gens[name]
        if exp == 1:
            return sections[x]
        pre = _perm_inv(perm)[x]
        return tuple((n, -e) for n, e in reversed(sections[pre]))

    def act_letter(self, x: int) -> int:
        for name, exp in reversed(self.letters):
            x = self._letter_act(name, exp, x)
        return x

    def section(self, x: int) -> "GroupWord":
        """Section at a first-level vertex."""
        cached = self._sections.get(x)
        if cached is not None:
            return cached
        out: List[Tuple[str, int]] = []
        cur = x
        for name, exp in reversed(self.letters):
            out[:0] = self._letter_section(name, exp, cur)
            cur = self._letter_act(name, exp, cur)
        res = GroupWord(self.spec, out)
        self._sections[x] = res
        return res

    def section_at(self, v) -> "GroupWord":
        g = self
        for x in v:
            g = g.section(x)
        return g

    def act(self, v) -> tuple:
        """Image of a vertex (a tuple of letters)."""
        out = []
        g = self
        for x in v:
            out.append(g.act_letter(x))
            g = g.section(x)
        return tuple(out)

    def is_trivial_to_depth(self, depth: int) -> bool:
        return all(self.act(v) == v
                   for v in itertools.product(range(self.spec.d),
                                              repeat=depth))


# ---------------------------------------------------------------------------
# Action tables

class TableSpace:
    """Vertices of levels 1..depth, indexed; tables are tuples of indices."""

    def __init__(self, d: int, depth: int):
        self.d = d
        self.depth = depth
        self.vertices: List[tuple] = []
        for m in range(1, depth + 1):
            self.vertices.extend(itertools.product(range(d), repeat=m))
        self.index = {v: i for i, v in enumerate(self.vertices)}
        self.identity = tuple(range(len(self.vertices)))

    def compose(self, t1, t2):
        return tuple(t1[x] for x in t2)

    def invert(self, t):
        out = [0] * len(t)
        for i, x in enumerate(t):
            out[x] = i
        return tuple(out)

    def table_of(self, g: GroupWord):
        return tuple(self.index[g.act(v)] for v in self.vertices)

    def from_images(self, images: Dict[tuple, tuple]):
        return tuple(self.index[images[v]] for v in self.vertices)

    def subtable(self, space_m: "TableSpace", t, v: tuple):
        """Depth-m table of the section at v, read off a deeper table."""
        base = self.vertices[self.index[v]] if v else v
        img_base = self.vertices[t[self.index[v]]] if v else ()
        out = []
        for w in space_m.vertices:
            img = self.vertices[t[self.index[base + w]]]
            if img[:len(v)] != img_base:
                raise ValueError("table is not cylinder-coherent at " + str(v))
            out.append(space_m.index[img[len(v):]])
        return tuple(out)


def closure(space: TableSpace, tables, node_budget: int = 1_000_000):
    """Group closure of a set of action tables, by BFS."""
    gens = [t for t in tables if t != space.identity]
    seen = {space.identity}
    frontier = [space.identity]
    while frontier:
        if len(seen) + len(frontier) * len(gens) > node_budget:
            raise BudgetExceeded(
                f"table closure exceeded the node budget {node_budget}")
        nxt = []
        for t in frontier:
            for g in gens:
                u = space.compose(g, t)
                if u not in seen:
                    seen.add(u)
                    nxt.append(u)
        frontier = nxt
    return seen


def level_image_size(spec: WreathSpec, n: int,
                     node_budget: int = 1_000_000) -> int:
    """Exact size of the depth-n action image (the index of the level-n
    stabilizer)."""
    if n == 0:
        return 1
    space = TableSpace(spec.d, n)
    gens = [space.table_of(g) for g in spec.generators()]
    return len(closure(space, gens, node_budget))


# ---------------------------------------------------------------------------
# Pattern sets and closure membership

class PatternSet:
    """All depth-m action tables of the group."""

    def __init__(self, spec: WreathSpec, m: int, tables: FrozenSet[tuple]):
        self.spec = spec
        self.depth = m
        self.space = TableSpace(spec.d, m)
        self.tables = tables

    def __len__(self) -> int:
        return len(self.tables)

    def __contains__(self, table) -> bool:
        return table in self.tables


def pattern_set(spec: WreathSpec, m: int,
                node_budget: int = 1_000_000) -> PatternSet:
    space = TableSpace(spec.d, m)
    gens = [space.table_of(g) for g in spec.generators()]
    return PatternSet(spec, m, frozenset(closure(space, gens, node_budget)))


class TruncatedTable:
    """A depth-M action table of the d-ary tree, as plain vertex images."""

    def __init__(self, d: int, depth: int, images: Dict[tuple, tuple]):
        self.d = d
        self.depth = depth
        self.images = dict(images)
        space = TableSpace(d, depth)
        for v in space.vertices:
            if v not in self.images:
                raise ValueError(f"missing image for {v}")
        space.from_images(self.images)  # validates well-formedness

    @classmethod
    def of_word(cls, g: GroupWord, depth: int) -> "TruncatedTable":
        space = TableSpace(g.spec.d, depth)
        return cls(g.spec.d, depth,
                   {v: g.act(v) for v in space.vertices})

    def as_table(self, space: TableSpace):
        return space.from_images(self.images)


def in_closure(t: TruncatedTable, patterns: PatternSet) -> bool:
    """True iff every section of the truncation whose depth-m table is
    visible lies in the pattern set.  Sections at fringe vertices (closer
    than m to the truncation depth) cannot be tested and are skipped."""
    m = patterns.depth
    if t.depth < m:
        raise ValueError("truncation too shallow to test any section")
    if t.depth < m + 1:
        warnings.warn("only the root section is testable at this depth")
    space_big = TableSpace(t.d, t.depth)
    table = t.as_table(space_big)
    for lvl in range(0, t.depth - m + 1):
        for v in itertools.product(range(t.d), repeat=lvl):
            try:
                sub = space_big.subtable(patterns.space, table, v)
            except ValueError:
                return False
            if sub not in patterns.tables:
                return False
    return True


# ---------------------------------------------------------------------------
# Nucleus

@dataclass
class NucleusResult:
    words: List[GroupWord]
    size: int
    depth: int           # separation depth at which the set stabilized
    rounds: int


def nucleus(spec: WreathSpec, max_elements: int = 64, max_len: int = 200,
            start_depth: int = 4, max_depth: int = 12,
            max_rounds: int = 60) -> NucleusResult:
    """Fixed-point iteration for the contraction nucleus.

    Elements are canonicalized by their depth-m action tables; m grows by
    two until the computed set no longer changes size.  Running out of any
    budget raises, which reports "not verified contracting" rather than a
    verdict."""
    m = start_depth
    prev = None
    while m <= max_depth:
        cur = _nucleus_at_depth(spec, m, max_elements, max_len, max_rounds)
        if prev is not None and len(prev[0]) == len(cur[0]):
            return NucleusResult(cur[0], len(cur[0]), m, cur[1])
        prev = cur
        m += 2
    raise BudgetExceeded(
        "nucleus did not stabilize within the depth budget; "
        "not verified contracting")


def _nucleus_at_depth(spec: WreathSpec, m: int, max_elements: int,
                      max_len: int, max_rounds: int):
    space = TableSpace(spec.d, m)
    canon: Dict[tuple, GroupWord] = {}

    def add(g: GroupWord) -> GroupWord:
        if len(g.letters) > max_len:
            raise BudgetExceeded(
                "nucleus word length budget exceeded; not verified contracting")
        t = space.table_of(g)
        known = canon.get(t)
        if known is not None:
            return known
        if len(canon) > max_elements:
            raise BudgetExceeded(
                "nucleus element budget exceeded; not verified contracting")
        canon[t] = g
        return g

    current = {add(spec.identity())}
    for g in spec.generators():
        current.add(add(g))
        current.add(add(g.inverse()))

    for rounds in range(1, max_rounds + 1):
        # close under sections
        changed = True
        while changed:
            changed = False
            for g in list(current):
                for x in range(spec.d):
                    s = add(g.section(x))
                    if s not in current:
                        current.add(s)
                        changed = True
        # absorb the eventual sections of pairwise products
        added = False
        for g, h in itertools.product(list(current), repeat=2):
            for e in _eventual_sections(spec, add(g * h), add, max_elements):
                if e not in current:
                    current.add(e)
                    added = True
        if not added:
            return sorted(current, key=lambda w: (len(w.letters), repr(w))), rounds
    raise BudgetExceeded(
        "nucleus iteration budget exceeded; not verified contracting")


def _eventual_sections(spec: WreathSpec, w: GroupWord, add, max_elements: int):
    """Nodes of the section graph of w reachable from a cycle: exactly the
    sections appearing at arbitrarily deep levels."""
    succ: Dict[int, List[int]] = {}
    nodes: List[GroupWord] = []
    ids: Dict[int, int] = {}

    def node_id(g: GroupWord) -> int:
        key = id(g)  # canonical words are shared objects
        got = ids.get(key)
        if got is None:
            got = len(nodes)
            ids[key] = got
            nodes.append(g)
        return got

    stack = [node_id(w)]
    seen = set(stack)
    while stack:
        if len(nodes) > 4 * max_elements:
            raise BudgetExceeded(
                "section graph budget exceeded; not verified contracting")
        i = stack.pop()
        succ[i] = []
        for x in range(spec.d):
            j = node_id(add(nodes[i].section(x)))
            succ[i].append(j)
            if j not in seen:
                seen.add(j)
                stack.append(j)
    n = len(nodes)
    reach = [set(succ[i]) for i in range(n)]
    for _ in range(n):
        stable = True
        for i in range(n):
            new = set().union(*(reach[j] for j in reach[i])) | reach[i]
            if new != reach[i]:
                reach[i] = new
                stable = False
        if stable:
            break
    cyclic = {i for i in range(n) if i in reach[i]}
    eventual = set(cyclic)
    for i in cyclic:
        eventual |= reach[i]
    return [nodes[i] for i in eventual]


# ---------------------------------------------------------------------------
# Branch-group index identities

@dataclass
class IndexReport:
    s: int
    level_sizes: Dict[int, int]
    formula_value: int
    enumerated_value: int
    integral: bool
    equal: bool
    stable: Optional[bool]      # index at s+1 equals index at s+2 (None: over budget)
    ok: bool


def index_identity_check(spec: WreathSpec, s: int,
                         node_budget: int = 1_000_000,
                         stability_budget: int = 20_000) -> IndexReport:
    """Check the closure-intersection index identity at branching level s.

    The formula side divides d! times the d-th power of the level-s image
    size by the level-(s+1) image size; the enumerated side counts distinct
    depth-(s+1) tables of the wreath extension (top permutation with d
    independent depth-s patterns) and divides by the level-(s+1) image size.
    Exactness of both divisions and equality are asserted; as a sharper
    branch signal the same index is recomputed one level deeper when that
    fits the stability budget."""
    d = spec.d
    sizes = {s: level_image_size(spec, s, node_budget),
             s + 1: level_image_size(spec, s + 1, node_budget)}
    formula = Fraction(math.factorial(d) * sizes[s] ** d, sizes[s + 1])
    integral = formula.denominator == 1

    space_s = TableSpace(d, s)
    space_s1 = TableSpace(d, s + 1)
    gens_s = [space_s.table_of(g) for g in spec.generators()]
    level_s_tables = sorted(closure(space_s, gens_s, node_budget))
    wreath = set()
    for top in itertools.permutations(range(d)):
        for parts in itertools.product(level_s_tables, repeat=d):
            images = {}
            for x in range(d):
                images[(x,)] = (top[x],)
                for w in space_s.vertices:
                    img = space_s.vertices[parts[x][space_s.index[w]]]
                    images[(x,) + w] = (top[x],) + img
            wreath.add(space_s1.from_images(images))
    enum_num = len(wreath)
    equal = integral and enum_num % sizes[s + 1] == 0 \
        and enum_num // sizes[s + 1] == int(formula)

    stable: Optional[bool] = None
    try:
        sizes[s + 2] = level_image_size(spec, s + 2, stability_budget)
        deeper = Fraction(math.factorial(d) * sizes[s + 1] ** d, sizes[s + 2])
        stable = (deeper == formula)
    except BudgetExceeded:
        pass

    ok = integral and equal and stable is not False
    return IndexReport(s, dict(sizes), int(formula) if integral else -1,
                       enum_num // sizes[s + 1] if enum_num % sizes[s + 1] == 0
                       else -1,
                       integral, equal, stable, ok)


@dataclass
class StabImageReport:
    n: int
    stab_image_size: int
    level_size_power: int
    equal: bool


def stab_image_identity(spec: WreathSpec, n: int,
                        node_budget: int = 1_000_000) -> StabImageReport:
    """Compare the depth-(n+1) image of the first-level stabilizer with the
    d-th power of the level-n image size (the level-stabilizer product
    identity of regular branch groups, read off action images)."""
    d = spec.d
    space1 = TableSpace(d, 1)
    transversal: Dict[tuple, GroupWord] = {space1.identity: spec.identity()}
    frontier = [spec.identity()]
    gens = spec.generators() + [g.inverse() for g in spec.generators()]
    while frontier:
        nxt = []
        for w in frontier:
            for g in gens:
                u = g * w
                t = space1.table_of(u)
                if t not in transversal:
                    transversal[t] = u
                    nxt.append(u)
        frontier = nxt
    schreier: List[GroupWord] = []
    for w in transversal.values():
        for g in gens:
            u = g * w
            rep = transversal[space1.table_of(u)]
            schreier.append(rep.inverse() * u)
    space = TableSpace(d, n + 1)
    tables = {space.table_of(w) for w in schreier}
    stab_size = len(closure(space, tables, node_budget))
    ln = level_image_size(spec, n, node_budget)
    return StabImageReport(n, stab_size, ln ** d, stab_size == ln ** d)


# ---------------------------------------------------------------------------
# Spec text format and built-ins

_GEN_RE = re.compile(
    r"^gen\s+(\w+)\s*:\s*perm\s*=\s*([^;]*)\s*;\s*sections\s*=\s*\[([^\]]*)\]\s*$")


def _parse_perm(text: str, d: int) -> Perm:
    text = text.strip()
    perm = list(range(d))
    for cycle in re.findall(r"\(([^()]*)\)", text):
        entries = [int(x) - 1 for x in cycle.split()]
        if not entries:
            continue
        for a, b in zip(entries, entries[1:] + entries[:1]):
            perm[a] = b
    return tuple(perm)


def _parse_section(text: str) -> WordLetters:
    text = text.strip()
    if text in ("e", "1", ""):
        return ()
    if text.endswith("^-1"):
        return ((text[:-3], -1),)
    return ((text, 1),)


def parse_wreath_spec(text: str) -> WreathSpec:
    """Text format: one `gen name: perm=(cycles); sections=[s1, ..., sd]`
    line per generator; 'e' is the identity section, 'name^-1' an inverse."""
    raw = {}
    d = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _GEN_RE.match(line)
        if not m:
            raise ValueError(f"cannot parse spec line: {line!r}")
        name, perm_text, sections_text = m.groups()
        sections = [_parse_section(s) for s in sections_text.split(",")]
        if d is None:
            d = len(sections)
        elif d != len(sections):
            raise ValueError("inconsistent alphabet size between generators")
        raw[name] = (perm_text, sections)
    if d is None:
        raise ValueError("no generators found")
    gens = {name: (_parse_perm(pt, d), secs) for name, (pt, secs) in raw.items()}
    return WreathSpec(d, gens)


def builtin_spec(name: str) -> WreathSpec:
    from importlib import resources
    path = resources.files("almostaut").joinpath("specs", f"{name}.txt")
    return parse_wreath_spec(path.read_text())


def load_spec(name_or_path: str) -> WreathSpec:
    import os
    if os.path.exists(name_or_path):
        with open(name_or_path) as fh:
            return parse_wreath_spec(fh.read())
    return builtin_spec(name_or_path)
