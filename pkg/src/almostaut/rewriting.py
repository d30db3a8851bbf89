"""Cost-tracked rewriting over the two-scale alphabet.

Words are sequences of letters: diagram generators (by id into a fixed
generating set, with formal exponent) and compact letters (finitely
supported labelled automorphisms), each of weight one.  Rewriting steps
apply one relator instance each and are recorded as a trace; replaying a
trace and re-validating every step is the certificate check.

Relator families (all of bounded letter length):

* free  -- formal cancellation x x^-1 and elision of an identity compact
           letter; recorded but not charged,
* RD    -- merge or split adjacent compact letters (products recomputed),
* R1    -- conjugation: a compact letter supported below the domain leaves
           of a generator moves through it, labels transported,
* R2    -- swap a one-caret compact letter for its fixed short diagram word,
* R3    -- exchange: generator times compact letter equals compact letter
           times generator (saturation supplies the right generator),
* RS    -- a relation internal to the diagram group of bounded length,
           discharged by the diagram-group filling oracle.

Costs: every applied relator counts 1, free reductions count 0 (an
accounting knob allows charging them for sensitivity analysis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .aaut import conj_compact, exchange, portrait_to_pair
from .errors import BudgetExceeded
from .localgroup import (
    PermGroup,
    Portrait,
    identity_portrait,
    kappa,
    portrait_inv,
    portrait_mul,
    restrict,
    single_label,
    top_label,
)
from .thompson import (
    GeneratingSet,
    TreePair,
    compose as pair_compose,
    identity_pair,
    invert as pair_invert,
)
from .trees import TreeParams, Vertex


# ---------------------------------------------------------------------------
# Letters, words, traces

@dataclass(frozen=True)
class Letter:
    kind: str                      # "s" (generator) or "c" (compact)
    sid: Optional[int] = None
    exp: int = 1
    portrait: Optional[Portrait] = None

    def __post_init__(self):
        if self.kind not in ("s", "c"):
            raise ValueError(f"unknown letter kind {self.kind!r}")
        if self.exp not in (1, -1):
            raise ValueError("exponent must be +1 or -1")
        if self.kind == "s" and self.sid is None:
            raise ValueError("generator letters need an id")
        if self.kind == "c" and self.portrait is None:
            raise ValueError("compact letters need a portrait")

    def inverse(self) -> "Letter":
        if self.kind == "s":
            return Letter("s", sid=self.sid, exp=-self.exp)
        return Letter("c", portrait=self.portrait, exp=-self.exp)

    def __repr__(self) -> str:
        if self.kind == "s":
            return f"s{self.sid}" + ("" if self.exp == 1 else "^-1")
        return f"c[{self.portrait!r}]" + ("" if self.exp == 1 else "^-1")


def sigma_letter(sid: int, exp: int = 1) -> Letter:
    return Letter("s", sid=sid, exp=exp)


def compact_letter(u: Portrait, exp: int = 1) -> Letter:
    return Letter("c", portrait=u, exp=exp)


Word = List[Letter]


@dataclass(frozen=True)
class TraceStep:
    pos: int
    family: str                    # free | RD | R1 | R2 | R3 | RS
    before: Tuple[Letter, ...]
    after: Tuple[Letter, ...]

    def cost(self, charge_free: bool = False) -> int:
        if self.family == "free" and not charge_free:
            return 0
        return 1


@dataclass
class RewriteTrace:
    steps: List[TraceStep] = field(default_factory=list)

    def cost(self, charge_free: bool = False) -> int:
        return sum(s.cost(charge_free) for s in self.steps)

    def cost_by_family(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for s in self.steps:
            out[s.family] = out.get(s.family, 0) + s.cost()
        return out

    def __len__(self) -> int:
        return len(self.steps)


def letter_element(gs: GeneratingSet, letter: Letter) -> TreePair:
    if letter.kind == "s":
        sid = letter.sid if letter.exp == 1 else gs.inverse_ids[letter.sid]
        return gs.elements[sid]
    u = letter.portrait if letter.exp == 1 else portrait_inv(letter.portrait)
    return portrait_to_pair(u)


def eval_word(gs: GeneratingSet, word: Sequence[Letter]) -> TreePair:
    out = identity_pair(gs.params)
    for letter in word:
        out = pair_compose(out, letter_element(gs, letter))
    return out


def letter_portrait(letter: Letter) -> Portrait:
    if letter.kind != "c":
        raise ValueError("not a compact letter")
    return letter.portrait if letter.exp == 1 else portrait_inv(letter.portrait)


# ---------------------------------------------------------------------------
# Relator tables

class RelatorTables:
    """Fixed data of the presentation engine for one configuration.

    The short-word table maps every one-caret compact letter (single label
    at a root child; for k = 1 also at a level-2 vertex, where the shifted
    recursion strips them) to a diagram word.  r_i is the per-component
    maximum word length of the table, and C_i = 2d + max(2, r_i) drives the
    conversion bounds.
    """

    def __init__(self, gs: GeneratingSet, group: PermGroup,
                 max_rs_len: int = 16):
        self.gs = gs
        self.group = group
        self.params = gs.params
        self.max_rs_len = max_rs_len
        self.table: Dict[Portrait, Tuple[Letter, ...]] = {}
        self.r: Dict[int, int] = {}
        params = self.params
        if params.k == 1 and gs.q < 2:
            raise ValueError("k = 1 needs a generating set with q >= 2")
        positions: Dict[int, List[Vertex]] = {
            i: [(i - 1,)] for i in range(1, params.k + 1)}
        if params.k == 1:
            positions[1].extend((0, l) for l in range(params.d))
        for i, verts in positions.items():
            r_i = 1
            for v in verts:
                for p in group.nontrivial():
                    u = single_label(params, group, v, p)
                    word = self._express(u)
                    self.table[u] = word
                    r_i = max(r_i, len(word))
            self.r[i] = r_i
        self.C = {i: 2 * params.d + max(2, r_i) for i, r_i in self.r.items()}
        self.delta_ids = gs.delta_ids

    def _express(self, u: Portrait) -> Tuple[Letter, ...]:
        pair = portrait_to_pair(u)
        sid = self.gs.index.get(pair.key())
        if sid is not None:
            return (sigma_letter(sid),)
        # Short search: two-letter products over the generating set.
        for a in self.gs.gen_ids():
            rest = pair_compose(self.gs.elements[self.gs.inverse_ids[a]], pair)
            b = self.gs.index.get(rest.key())
            if b is not None:
                return (sigma_letter(a), sigma_letter(b))
        raise BudgetExceeded(
            "no short diagram word found for a one-caret compact letter; "
            "raise q")

    def C_of(self, u: Portrait) -> int:
        i = u.component_index()
        return self.C[1 if self.params.k == 1 else (i + 1 if i is not None else 1)]

    def C_max(self) -> int:
        return max(self.C.values())

    def relator_length_bounds(self) -> Dict[str, int]:
        return {
            "RD": 3,
            "R1": 4,
            "R2": 1 + max(self.r.values()),
            "R3": 4,
            "RS": self.max_rs_len,
        }


# ---------------------------------------------------------------------------
# Single moves

def apply_move(tables: RelatorTables, word: Sequence[Letter], family: str,
               pos: int, **data) -> Tuple[Word, TraceStep]:
    """Apply one relator instance at a position; returns the rewritten word
    and the recorded step.  Family preconditions are enforced here."""
    word = list(word)
    if family == "free":
        step = _move_free(word, pos)
    elif family == "RD":
        step = _move_rd(word, pos, data.get("parts"))
    elif family == "R1":
        step = _move_r1(tables, word, pos, data["sigma"])
    elif family == "R2":
        step = _move_r2(tables, word, pos, data.get("to_sigma", True))
    elif family == "R3":
        step = _move_r3(tables, word, pos)
    elif family == "RS":
        step = _move_rs(tables, word, pos, data["width"], data["replacement"])
    else:
        raise ValueError(f"unknown relator family {family!r}")
    word[step.pos:step.pos + len(step.before)] = list(step.after)
    return word, step


def _move_free(word: Word, pos: int) -> TraceStep:
    if pos < len(word) and word[pos].kind == "c" \
            and letter_portrait(word[pos]).is_identity():
        return TraceStep(pos, "free", (word[pos],), ())
    if pos + 1 < len(word) and word[pos + 1] == word[pos].inverse():
        return TraceStep(pos, "free", (word[pos], word[pos + 1]), ())
    raise ValueError("no free reduction at this position")


def _move_rd(word: Word, pos: int, parts) -> TraceStep:
    if parts is None:
        a, b = word[pos], word[pos + 1]
        if a.kind != "c" or b.kind != "c":
            raise ValueError("RD merges compact letters only")
        u = portrait_mul(letter_portrait(a), letter_portrait(b))
        return TraceStep(pos, "RD", (a, b), (compact_letter(u),))
    u1, u2 = parts
    a = word[pos]
    if a.kind != "c":
        raise ValueError("RD splits a compact letter")
    if portrait_mul(u1, u2) != letter_portrait(a):
        raise ValueError("RD split parts do not multiply to the letter")
    return TraceStep(pos, "RD", (a,),
                     (compact_letter(u1), compact_letter(u2)))


def _move_r1(tables: RelatorTables, word: Word, pos: int,
             sigma: Tuple[int, int]) -> TraceStep:
    a = word[pos]
    if a.kind != "c":
        raise ValueError("R1 rewrites a compact letter")
    sid, exp = sigma
    elem = letter_element(tables.gs, sigma_letter(sid, exp))
    conj = conj_compact(elem, letter_portrait(a))  # raises off the subgroup
    return TraceStep(pos, "R1", (a,), (
        sigma_letter(sid, -exp), compact_letter(conj), sigma_letter(sid, exp)))


def _move_r2(tables: RelatorTables, word: Word, pos: int,
             to_sigma: bool) -> TraceStep:
    if to_sigma:
        a = word[pos]
        if a.kind != "c":
            raise ValueError("R2 rewrites a compact letter")
        entry = tables.table.get(letter_portrait(a))
        if entry is None:
            raise ValueError("compact letter is not in the short-word table")
        return TraceStep(pos, "R2", (a,), entry)
    for u, entry in tables.table.items():
        width = len(entry)
        if tuple(word[pos:pos + width]) == entry:
            return TraceStep(pos, "R2", entry, (compact_letter(u),))
    raise ValueError("no short-word table entry matches here")


def _move_r3(tables: RelatorTables, word: Word, pos: int) -> TraceStep:
    a, b = word[pos], word[pos + 1]
    if a.kind != "s" or b.kind != "c":
        raise ValueError("R3 exchanges a generator letter with a compact letter")
    elem = letter_element(tables.gs, a)
    u2, sigma2 = exchange(tables.gs, tables.group, elem, letter_portrait(b))
    return TraceStep(pos, "R3", (a, b), (
        compact_letter(u2), sigma_letter(tables.gs.id_of(sigma2))))


def _move_rs(tables: RelatorTables, word: Word, pos: int, width: int,
             replacement: Sequence[Letter]) -> TraceStep:
    before = tuple(word[pos:pos + width])
    after = tuple(replacement)
    if any(l.kind != "s" for l in before + after):
        raise ValueError("RS relators are diagram-letter words")
    if len(before) + len(after) > tables.max_rs_len:
        raise ValueError("RS relator instance exceeds the length bound")
    if eval_word(tables.gs, before) != eval_word(tables.gs, after):
        raise ValueError("RS sides evaluate to different elements")
    return TraceStep(pos, "RS", before, after)


# ---------------------------------------------------------------------------
# Compact-letter conversion

class _Buf:
    def __init__(self, tables: RelatorTables, letters: Sequence[Letter]):
        self.tables = tables
        self.word: Word = list(letters)
        self.steps: List[TraceStep] = []

    def do(self, family: str, pos: int, **data) -> TraceStep:
        self.word, step = apply_move(self.tables, self.word, family, pos, **data)
        self.steps.append(step)
        return step


def _conjugation_delta(tables: RelatorTables, base: Vertex, m: int):
    params = tables.params
    if params.k >= 2:
        return (base[0] + 1, m + 1)
    return (base[1] + 1, m + 1)  # base is a level-2 vertex (0, l)


def _expand_compact(tables: RelatorTables, buf: _Buf, pos: int,
                    base: Vertex) -> int:
    """Rewrite the compact letter at `pos` (supported at or below `base`)
    into diagram letters; returns the number of letters now occupying the
    region.  One recursion node per stripped caret."""
    u = letter_portrait(buf.word[pos])
    if u.is_identity():
        buf.do("free", pos)
        return 0
    if u in tables.table:
        return len(buf.do("R2", pos, to_sigma=True).after)

    params = tables.params
    n = kappa(u)
    bar = top_label(u, base)
    if bar != tables.group.identity:
        bar_p = single_label(params, tables.group, base, bar)
        u_rest = portrait_mul(u, portrait_inv(bar_p))
        buf.do("RD", pos, parts=(u_rest, bar_p))
        has_bar = True
    else:
        u_rest = u
        has_bar = False

    pieces = [restrict(u_rest, base + (m,)) for m in range(params.d)]
    pieces = [(m, p) for m, p in enumerate(pieces) if not p.is_identity()]
    for idx in range(len(pieces) - 1):
        tail = pieces[idx + 1][1]
        for _, q in pieces[idx + 2:]:
            tail = portrait_mul(tail, q)
        buf.do("RD", pos + idx, parts=(pieces[idx][1], tail))

    top_level_k1 = params.k == 1 and len(base) == 1
    if not top_level_k1:
        raised = [conj_compact(
            letter_element(tables.gs,
                           sigma_letter(tables.delta_ids[
                               _conjugation_delta(tables, base, m)])), p)
            for m, p in pieces]
        total = sum(kappa(r) for r in raised)
        assert total <= n + max(0, len(pieces) - 2), \
            "caret budget exceeded across the recursion split"
        if params.k >= 2:
            assert total <= max(n - 1, 0), \
                "level raising failed to shrink the caret total"

    bar_pos = pos + len(pieces)
    region = 0
    if has_bar:
        region += len(buf.do("R2", bar_pos, to_sigma=True).after)
    for idx in range(len(pieces) - 1, -1, -1):
        m, _ = pieces[idx]
        p_pos = pos + idx
        if top_level_k1:
            region += _expand_compact(tables, buf, p_pos, (0, m))
        else:
            buf.do("R1", p_pos,
                   sigma=(tables.delta_ids[_conjugation_delta(tables, base, m)], 1))
            inner = _expand_compact(tables, buf, p_pos + 1, base)
            region += inner + 2
    return region


def rewrite_local(tables: RelatorTables, u: Portrait
                  ) -> Tuple[Word, RewriteTrace]:
    """Express a component-supported compact letter as a diagram word with
    certified length and cost at most C_i * kappa(u)."""
    params = tables.params
    if u.is_identity():
        return [], RewriteTrace([])
    i = u.component_index()
    if i is None:
        raise ValueError("portrait is not supported in a single component")
    base = (i,) if params.k >= 2 else (0,)
    if params.k == 1 and i != 0:
        raise ValueError("impossible component index")
    n = kappa(u)
    bound = tables.C_of(u) * n
    buf = _Buf(tables, [compact_letter(u)])
    _expand_compact(tables, buf, 0, base)
    word, trace = buf.word, RewriteTrace(buf.steps)
    assert all(l.kind == "s" for l in word)
    assert len(word) <= bound, f"word length {len(word)} > C*kappa = {bound}"
    assert trace.cost() <= bound, f"cost {trace.cost()} > C*kappa = {bound}"
    assert eval_word(tables.gs, word) == portrait_to_pair(u)
    return word, trace


def compact_to_sigma(tables: RelatorTables, u: Portrait
                     ) -> Tuple[Word, RewriteTrace]:
    """Split by component, convert each, concatenate; length at most
    C * kappa(u), cost at most k + C * kappa(u)."""
    params = tables.params
    if u.is_identity():
        return [], RewriteTrace([])
    comps = [p for _, p in sorted(u.components().items())]
    buf = _Buf(tables, [compact_letter(u)])
    for idx in range(len(comps) - 1):
        tail = comps[idx + 1]
        for q in comps[idx + 2:]:
            tail = portrait_mul(tail, q)
        buf.do("RD", idx, parts=(comps[idx], tail))
    for idx in range(len(comps) - 1, -1, -1):
        p = comps[idx]
        base = (p.component_index(),) if params.k >= 2 else (0,)
        _expand_compact(tables, buf, idx, base)
    word, trace = buf.word, RewriteTrace(buf.steps)
    n = kappa(u)
    assert len(word) <= tables.C_max() * n
    assert trace.cost() <= params.k + tables.C_max() * n
    assert eval_word(tables.gs, word) == portrait_to_pair(u)
    return word, trace


# ---------------------------------------------------------------------------
# Left normalization

def normalize_left_bound(n: int) -> int:
    if n <= 1:
        return n
    return math.ceil(math.log2(n)) * math.ceil(n / 2) + n


def normalize_left(tables: RelatorTables, word: Sequence[Letter]
                   ) -> Tuple[Word, RewriteTrace]:
    """Convert a word into (compact letter) (diagram letters) by halving:
    normalize both halves, shuttle the right half's compact prefix leftwards
    with one exchange per passed letter, then merge the two compact
    prefixes.  Charged steps stay within ceil(log2 n) * ceil(n/2) + n."""
    buf = _Buf(tables, word)
    _nl(tables, buf, 0, len(buf.word))
    trace = RewriteTrace(buf.steps)
    assert trace.cost() <= normalize_left_bound(len(word)), \
        "normalization exceeded its charged-step bound"
    out = buf.word
    assert all(l.kind == "s" for l in out[1:]), "compact letters left inside"
    return out, trace


def _nl(tables: RelatorTables, buf: _Buf, start: int, length: int) -> int:
    """Normalize the slice [start, start+length); returns its new length."""
    if length <= 1:
        return length
    half = length // 2
    left_len = _nl(tables, buf, start, half)
    right_len = _nl(tables, buf, start + left_len, length - half)
    total = left_len + right_len
    if right_len == 0:
        return total
    rpos = start + left_len
    if buf.word[rpos].kind != "c":
        return total  # right half carries no compact prefix
    # Shuttle the compact letter left through the diagram letters of the
    # left half (R3), then merge with the left compact prefix if present.
    while rpos > start and buf.word[rpos - 1].kind == "s":
        buf.do("R3", rpos - 1)
        rpos -= 1
    if rpos > start and buf.word[rpos - 1].kind == "c":
        buf.do("RD", rpos - 1)
        total -= 1
        rpos -= 1
    if letter_portrait(buf.word[rpos]).is_identity():
        buf.do("free", rpos)
        total -= 1
    return total


# ---------------------------------------------------------------------------
# Filling

@dataclass
class FillResult:
    trace: RewriteTrace
    n: int
    area: int
    nlogn_part: int
    delta_part: int


NLOGN_FAMILIES = {"RD", "R1", "R2", "R3"}


def fill(tables: RelatorTables, word: Sequence[Letter],
         rs_ball_radius: int = 1) -> FillResult:
    """Convert a null-homotopic word to the empty word.

    Pipeline: left-normalize; expand the compact prefix into diagram
    letters; discharge the remaining diagram-group relation with the
    filling oracle.  The area splits into the part charged to the
    two-scale families and the oracle part."""
    gs = tables.gs
    if eval_word(gs, word) != identity_pair(gs.params):
        raise ValueError("word is not null-homotopic")
    n = len(word)
    buf = _Buf(tables, word)
    _nl(tables, buf, 0, len(buf.word))
    if buf.word and buf.word[0].kind == "c":
        _expand_compact_top(tables, buf)
    split_at = len(buf.steps)
    _fill_sigma(tables, buf, rs_ball_radius)
    trace = RewriteTrace(buf.steps)
    assert not buf.word, "filling did not reach the empty word"
    nlogn_part = sum(s.cost() for s in buf.steps[:split_at])
    delta_part = sum(s.cost() for s in buf.steps[split_at:])
    assert all(s.family in NLOGN_FAMILIES or s.family == "free"
               for s in buf.steps[:split_at])
    assert all(s.family in ("RS", "free") for s in buf.steps[split_at:])
    return FillResult(trace, n, trace.cost(), nlogn_part, delta_part)


def _expand_compact_top(tables: RelatorTables, buf: _Buf) -> None:
    u = letter_portrait(buf.word[0])
    if u.is_identity():
        buf.do("free", 0)
        return
    comps = [p for _, p in sorted(u.components().items())]
    for idx in range(len(comps) - 1):
        tail = comps[idx + 1]
        for q in comps[idx + 2:]:
            tail = portrait_mul(tail, q)
        buf.do("RD", idx, parts=(comps[idx], tail))
    for idx in range(len(comps) - 1, -1, -1):
        p = comps[idx]
        base = (p.component_index(),) if tables.params.k >= 2 else (0,)
        _expand_compact(tables, buf, idx, base)


def fill_oracle(tables: RelatorTables, word: Sequence[Letter],
                rs_ball_radius: int = 1, max_steps: int = 100_000
                ) -> RewriteTrace:
    """Filling oracle for null-homotopic diagram-letter words: greedy
    excision of null windows found by prefix evaluation, with a bounded
    ball-search shortening pass as fallback."""
    gs = tables.gs
    if any(l.kind != "s" for l in word):
        raise ValueError("the filling oracle takes diagram-letter words")
    if eval_word(gs, word) != identity_pair(gs.params):
        raise ValueError("word is not null-homotopic")
    buf = _Buf(tables, word)
    _fill_sigma(tables, buf, rs_ball_radius, max_steps)
    return RewriteTrace(buf.steps)


def _fill_sigma(tables: RelatorTables, buf: _Buf, rs_ball_radius: int,
                max_steps: int = 100_000) -> None:
    gs = tables.gs
    L = tables.max_rs_len
    ident = identity_pair(gs.params)
    shorter = None  # lazy ball table: element key -> word
    prefixes = [ident]
    for letter in buf.word:
        prefixes.append(pair_compose(prefixes[-1], letter_element(gs, letter)))
    keys = [p.key() for p in prefixes]
    steps = 0
    while buf.word:
        if steps > max_steps:
            raise BudgetExceeded("filling exceeded its step budget")
        steps += 1
        n = len(buf.word)
        found = None
        for width in range(2, min(L, n) + 1):
            for i in range(n - width + 1):
                if keys[i] == keys[i + width]:
                    found = (i, width, ())
                    break
            if found:
                break
        if found is None:
            if shorter is None:
                shorter = _short_words(gs, rs_ball_radius)
            for width in range(2, min(L // 2, n) + 1):
                if found:
                    break
                for i in range(n - width + 1):
                    seg_eval = pair_compose(
                        invert_pair_cached(prefixes[i]), prefixes[i + width])
                    repl = shorter.get(seg_eval.key())
                    if repl is not None and len(repl) < width:
                        found = (i, width, repl)
                        break
        if found is None:
            raise BudgetExceeded(
                "no null window or shortening found within the relator "
                "length bound")
        i, width, repl = found
        if width == 2 and not repl and buf.word[i + 1] == buf.word[i].inverse():
            buf.do("free", i)
        else:
            buf.do("RS", i, width=width, replacement=repl)
        prefixes = prefixes[:i + 1]
        keys = keys[:i + 1]
        for letter in buf.word[i:]:
            prefixes.append(pair_compose(prefixes[-1],
                                         letter_element(gs, letter)))
            keys.append(prefixes[-1].key())


def invert_pair_cached(p: TreePair) -> TreePair:
    return pair_invert(p)


def _short_words(gs: GeneratingSet, radius: int) -> Dict[tuple, Tuple[Letter, ...]]:
    table = {identity_pair(gs.params).key(): ()}
    frontier = [(identity_pair(gs.params), ())]
    for r in range(1, radius + 1):
        nxt = []
        for elem, w in frontier:
            for gid in gs.gen_ids():
                e2 = pair_compose(gs.elements[gid], elem)
                k = e2.key()
                if k not in table:
                    w2 = (sigma_letter(gid),) + w
                    table[k] = w2
                    nxt.append((e2, w2))
        frontier = nxt
    return table


# ---------------------------------------------------------------------------
# Trace verification

def replay(word: Sequence[Letter], trace: RewriteTrace) -> Word:
    out = list(word)
    for step in trace.steps:
        seg = tuple(out[step.pos:step.pos + len(step.before)])
        if seg != step.before:
            raise ValueError("trace does not replay on this word")
        out[step.pos:step.pos + len(step.before)] = list(step.after)
    return out


def verify_trace(tables: RelatorTables, source: Sequence[Letter],
                 trace: RewriteTrace, target: Sequence[Letter]
                 ) -> Tuple[bool, Optional[int]]:
    """Replay every step, re-checking that it is a genuine instance of its
    relator family (conjugations and exchanges are recomputed from scratch,
    table entries are looked up, oracle relations are re-evaluated).
    Returns (ok, index of the first failing step or None)."""
    word = list(source)
    for idx, step in enumerate(trace.steps):
        seg = tuple(word[step.pos:step.pos + len(step.before)])
        if seg != step.before:
            return False, idx
        if not _step_valid(tables, step):
            return False, idx
        word[step.pos:step.pos + len(step.before)] = list(step.after)
    if word != list(target):
        return False, len(trace.steps)
    return True, None


def _step_valid(tables: RelatorTables, step: TraceStep) -> bool:
    try:
        before, after = step.before, step.after
        if step.family == "free":
            if len(before) == 1:
                return (before[0].kind == "c"
                        and letter_portrait(before[0]).is_identity()
                        and after == ())
            return (len(before) == 2 and after == ()
                    and before[1] == before[0].inverse())
        if step.family == "RD":
            if any(l.kind != "c" for l in before + after):
                return False
            if not 1 <= len(before) + len(after) <= 3:
                return False
            lhs = identity_portrait(tables.params, tables.group)
            for l in before:
                lhs = portrait_mul(lhs, letter_portrait(l))
            rhs = identity_portrait(tables.params, tables.group)
            for l in after:
                rhs = portrait_mul(rhs, letter_portrait(l))
            return lhs == rhs
        if step.family == "R1":
            if len(before) == 1 and len(after) == 3:
                (c,), (s1, mid, s2) = before, after
            elif len(before) == 3 and len(after) == 1:
                (s1, mid, s2), (c,) = before, after
            else:
                return False
            if c.kind != "c" or mid.kind != "c":
                return False
            if s1.kind != "s" or s2.kind != "s" or s1 != s2.inverse():
                return False
            elem = letter_element(tables.gs, s2)
            return conj_compact(elem, letter_portrait(c)) == letter_portrait(mid)
        if step.family == "R2":
            if len(before) == 1 and before[0].kind == "c":
                return tables.table.get(letter_portrait(before[0])) == after
            if len(after) == 1 and after[0].kind == "c":
                return tables.table.get(letter_portrait(after[0])) == before
            return False
        if step.family == "R3":
            if len(before) != 2 or len(after) != 2:
                return False
            s1, c1 = before
            c2, s2 = after
            if s1.kind != "s" or c1.kind != "c" or c2.kind != "c" \
                    or s2.kind != "s":
                return False
            if letter_element(tables.gs, s2).key() not in tables.gs.index:
                return False
            lhs = pair_compose(letter_element(tables.gs, s1),
                               portrait_to_pair(letter_portrait(c1)))
            rhs = pair_compose(portrait_to_pair(letter_portrait(c2)),
                               letter_element(tables.gs, s2))
            return lhs == rhs
        if step.family == "RS":
            if any(l.kind != "s" for l in before + after):
                return False
            if len(before) + len(after) > tables.max_rs_len:
                return False
            return eval_word(tables.gs, before) == eval_word(tables.gs, after)
        return False
    except (ValueError, KeyError):
        return False


# ---------------------------------------------------------------------------
# Null-word generation and the profile driver

def random_word(tables: RelatorTables, n: int, rng, p_compact: float = 0.25,
                max_kappa: int = 3) -> Word:
    from .aaut import random_portrait
    out: Word = []
    gen_ids = tables.gs.gen_ids()
    for _ in range(n):
        if rng.random() < p_compact and len(tables.group) > 1:
            u = random_portrait(tables.params, tables.group,
                                rng.randrange(1, max_kappa + 1), rng)
            out.append(compact_letter(u, exp=rng.choice((1, -1))))
        else:
            out.append(sigma_letter(rng.choice(gen_ids), rng.choice((1, -1))))
    return out


def _relator_pool(tables: RelatorTables, rng, size: int = 64) -> List[List[Letter]]:
    """Short null blocks: formal pairs, diagram triples sigma1 sigma2 sigma3^-1,
    compact pairs/triples, and exchange relators."""
    gs = tables.gs
    gen_ids = gs.gen_ids()
    pool: List[List[Letter]] = []
    attempts = 0
    while len(pool) < size and attempts < size * 60:
        attempts += 1
        kind = rng.randrange(4)
        if kind == 0:
            a = rng.choice(gen_ids)
            pool.append([sigma_letter(a), sigma_letter(a, -1)])
        elif kind == 1:
            a, b = rng.choice(gen_ids), rng.choice(gen_ids)
            prod = pair_compose(gs.elements[a], gs.elements[b])
            c = gs.index.get(prod.key())
            if c is not None:
                pool.append([sigma_letter(a), sigma_letter(b),
                             sigma_letter(c, -1)])
        elif kind == 2 and len(tables.group) > 1:
            from .aaut import random_portrait
            u = random_portrait(tables.params, tables.group,
                                rng.randrange(1, 3), rng)
            v = random_portrait(tables.params, tables.group,
                                rng.randrange(1, 3), rng)
            uv = portrait_mul(u, v)
            pool.append([compact_letter(u), compact_letter(v),
                         compact_letter(portrait_inv(uv))])
        elif kind == 3 and len(tables.group) > 1:
            from .aaut import random_portrait
            a = rng.choice(gen_ids)
            u = random_portrait(tables.params, tables.group, 1, rng)
            u2, s2 = exchange(gs, tables.group, gs.elements[a], u)
            pool.append([sigma_letter(a), compact_letter(u),
                         sigma_letter(gs.id_of(s2), -1),
                         compact_letter(portrait_inv(u2))])
    gid = rng.choice(gen_ids)
    if not any(len(b) % 2 == 1 for b in pool):
        # guarantee an odd-length block so every target length is reachable
        pool.append([sigma_letter(gid), sigma_letter(gid, -1),
                     sigma_letter(tables.gs.identity_id)])
    return pool


def random_null_word(tables: RelatorTables, n: int, rng,
                     pool: Optional[List[List[Letter]]] = None) -> Word:
    """A null-homotopic word of exact length n >= 2, built by inserting
    conjugacy-scattered short null blocks and rotating."""
    if n < 2:
        raise ValueError("null words need length >= 2")
    if pool is None:
        pool = _relator_pool(tables, rng)
    word: Word = []
    while True:
        rem = n - len(word)
        if rem == 0:
            break
        fits = [b for b in pool if len(b) <= rem and len(b) != rem - 1]
        if not fits:
            gid = tables.gs.gen_ids()[0]
            fits = [[sigma_letter(gid), sigma_letter(gid, -1)]]
        block = rng.choice(fits)
        i = rng.randrange(len(word) + 1)
        word[i:i] = block
    r = rng.randrange(len(word))
    word = word[r:] + word[:r]  # cyclic rotation preserves nullity
    assert eval_word(tables.gs, word) == identity_pair(tables.gs.params)
    return word


def random_null_commutator(tables: RelatorTables, n: int, rng) -> Optional[Word]:
    """A commutator [x, y] of words with commuting evaluations (powers of a
    common word), padded with cancelling pairs to exact length n; None when
    n is too small or of the wrong parity."""
    if n < 8 or n % 2 == 1:
        return None
    m = max(1, n // 6)
    x = random_word(tables, m, rng)
    y = x + x
    word = x + y + [l.inverse() for l in reversed(x)] \
        + [l.inverse() for l in reversed(y)]
    gen_ids = tables.gs.gen_ids()
    while len(word) < n:
        a = rng.choice(gen_ids)
        i = rng.randrange(len(word) + 1)
        word[i:i] = [sigma_letter(a), sigma_letter(a, -1)]
    assert eval_word(tables.gs, word) == identity_pair(tables.gs.params)
    return word


@dataclass
class ProfileRow:
    n: int
    samples: int
    mean_area: float
    max_area: int
    nlogn_part: float
    delta_part: float


def dehn_profile(tables: RelatorTables, lengths: Sequence[int], samples: int,
                 seed: int, verify: bool = True) -> List[ProfileRow]:
    """Generate null-homotopic words per length, fill them, aggregate the
    charged areas and their split."""
    import random as _random
    rows = []
    for n in lengths:
        rng = _random.Random((seed, n))
        pool = _relator_pool(tables, rng) if samples else None
        areas, nlogns, deltas = [], [], []
        for s in range(samples):
            if s % 5 == 4:
                word = random_null_commutator(tables, n, rng) \
                    or random_null_word(tables, n, rng, pool)
            else:
                word = random_null_word(tables, n, rng, pool)
            res = fill(tables, word)
            if verify:
                ok, bad = verify_trace(tables, word, res.trace, [])
                if not ok:
                    raise AssertionError(f"fill trace failed verification at {bad}")
            areas.append(res.area)
            nlogns.append(res.nlogn_part)
            deltas.append(res.delta_part)
        if samples:
            rows.append(ProfileRow(
                n, samples, sum(areas) / samples, max(areas),
                sum(nlogns) / samples, sum(deltas) / samples))
    return rows
