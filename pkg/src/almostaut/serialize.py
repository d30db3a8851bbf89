"""JSON codecs for the element, portrait, trace and table formats."""

from __future__ import annotations

from typing import Dict, List

from .aaut import DecoratedElement
from .localgroup import PermGroup, Portrait, perm_from_one_line, perm_to_one_line
from .rewriting import Letter, RewriteTrace, TraceStep, compact_letter, sigma_letter
from .thompson import TreePair
from .trees import CompleteSubtree, TreeParams, format_vertex, parse_vertex


def tree_to_json(t: CompleteSubtree) -> List[str]:
    return [format_vertex(c) for c in sorted(t.carets)]


def tree_from_json(params: TreeParams, data) -> CompleteSubtree:
    return CompleteSubtree(params, {parse_vertex(s) for s in data})


def pair_to_json(pair: TreePair) -> dict:
    return {
        "domain": tree_to_json(pair.domain),
        "range": tree_to_json(pair.range_),
        "map": [[format_vertex(a), format_vertex(b)]
                for a, b in sorted(pair.leaf_map.items())],
    }


def pair_from_json(params: TreeParams, data: dict) -> TreePair:
    dom = tree_from_json(params, data["domain"])
    ran = tree_from_json(params, data["range"])
    leaf_map = {parse_vertex(a): parse_vertex(b) for a, b in data["map"]}
    return TreePair(params, dom, ran, leaf_map)


def portrait_to_json(u: Portrait) -> list:
    return [[format_vertex(v), perm_to_one_line(p)]
            for v, p in sorted(u.labels.items())]


def portrait_from_json(params: TreeParams, group: PermGroup, data) -> Portrait:
    labels = {parse_vertex(v): perm_from_one_line(p, params.d)
              for v, p in data}
    return Portrait(params, group, labels)


def decorated_to_json(g: DecoratedElement) -> dict:
    out = pair_to_json(g.pair)
    out["decorations"] = [
        [format_vertex(leaf),
         [[".".join("b%d" % (x + 1) for x in rel), perm_to_one_line(p)]
          for rel, p in sorted(local.items())]]
        for leaf, local in sorted(g.decorations().items())
    ]
    return out


def decorated_from_json(params: TreeParams, group: PermGroup,
                        data: dict) -> DecoratedElement:
    pair = pair_from_json(params, data)
    decorations: Dict[tuple, dict] = {}
    for leaf_text, local in data.get("decorations", []):
        leaf = parse_vertex(leaf_text)
        rel_map = {}
        for rel_text, perm in local:
            rel = tuple(int(p[1:]) - 1 for p in rel_text.split(".")) \
                if rel_text else ()
            rel_map[rel] = perm_from_one_line(perm, params.d)
        decorations[leaf] = rel_map
    return DecoratedElement.from_decorations(group, pair, decorations)


def letter_to_json(letter: Letter) -> dict:
    if letter.kind == "s":
        return {"s": letter.sid, "e": letter.exp}
    return {"c": portrait_to_json(letter.portrait), "e": letter.exp}


def letter_from_json(params: TreeParams, group: PermGroup, data: dict) -> Letter:
    if "s" in data:
        return sigma_letter(data["s"], data["e"])
    return compact_letter(portrait_from_json(params, group, data["c"]),
                          data["e"])


def step_to_json(step: TraceStep) -> dict:
    return {
        "pos": step.pos,
        "family": step.family,
        "before": [letter_to_json(l) for l in step.before],
        "after": [letter_to_json(l) for l in step.after],
    }


def step_from_json(params: TreeParams, group: PermGroup, data: dict) -> TraceStep:
    return TraceStep(
        data["pos"], data["family"],
        tuple(letter_from_json(params, group, l) for l in data["before"]),
        tuple(letter_from_json(params, group, l) for l in data["after"]))


def trace_to_jsonl(trace: RewriteTrace) -> List[str]:
    import json
    return [json.dumps(step_to_json(s), sort_keys=True) for s in trace.steps]


def trace_from_jsonl(params: TreeParams, group: PermGroup,
                     lines) -> RewriteTrace:
    import json
    return RewriteTrace([step_from_json(params, group, json.loads(line))
                         for line in lines if line.strip()])
