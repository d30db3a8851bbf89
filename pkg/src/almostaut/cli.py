"""Batch front door: experiment drivers with reproducible artifacts.

Every subcommand reads its configuration from flags (plus an optional
key=value config file), runs one experiment, writes CSV/JSON artifacts into
the output directory and finishes with a manifest recording the config
hash, the package version and a digest per output file.  A fixed seed and
config produce byte-identical artifacts.  Budget overruns and invalid
configs exit nonzero with a structured error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import random
import sys

from . import __version__, selfsim, serialize
from .aaut import (
    aaut_compose,
    coset_ball,
    equals_by_depth,
    random_component_portrait,
    random_decorated,
)
from .errors import BudgetExceeded, GenerationCheckFailed, SaturationError
from .localgroup import PermGroup, kappa, named_group, perm_from_one_line
from .rewriting import (
    RelatorTables,
    dehn_profile,
    fill,
    normalize_left,
    normalize_left_bound,
    random_null_word,
    random_word,
    rewrite_local,
    verify_trace,
)
from .thompson import bfs_ball, build_sigma, key_carets
from .trees import TreeParams

DEFAULT_NODE_BUDGET = 2_000_000
BUDGET_ENV = "ALMOSTAUT_NODE_BUDGET"


def _node_budget(args) -> int:
    env = os.environ.get(BUDGET_ENV)
    if env:
        return int(env)
    return args.node_budget


def _load_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _apply_config_file(args: argparse.Namespace) -> None:
    if not getattr(args, "config", None):
        return
    for key, value in _load_config_file(args.config).items():
        key = key.replace("-", "_")
        if not hasattr(args, key):
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(args, key)
        if isinstance(current, bool):
            value = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            value = int(value)
        setattr(args, key, value)


def _group(args) -> PermGroup:
    spec = args.D
    if "," in spec or spec.strip().startswith("("):
        perms = [perm_from_one_line([int(x) for x in p.split()], args.d)
                 for p in spec.replace("(", "").replace(")", "").split(",")]
        return PermGroup(args.d, perms)
    return named_group(spec)


def _config_dict(args, keys) -> dict:
    return {k: getattr(args, k) for k in sorted(keys)}


class Artifacts:
    """Collects output files and writes the closing manifest."""

    def __init__(self, out_dir: str, config: dict):
        self.out_dir = out_dir
        self.config = config
        self.digests = {}
        os.makedirs(out_dir, exist_ok=True)

    def _write(self, name: str, data: bytes) -> None:
        path = os.path.join(self.out_dir, name)
        with open(path, "wb") as fh:
            fh.write(data)
        self.digests[name] = hashlib.sha256(data).hexdigest()

    def write_csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        self._write(name, buf.getvalue().encode())

    def write_json(self, name: str, obj) -> None:
        self._write(name, (json.dumps(obj, indent=2, sort_keys=True) + "\n")
                    .encode())

    def write_lines(self, name: str, lines) -> None:
        self._write(name, ("\n".join(lines) + ("\n" if lines else ""))
                    .encode())

    def close(self) -> str:
        manifest = {
            "version": __version__,
            "config": self.config,
            "config_sha256": hashlib.sha256(
                json.dumps(self.config, sort_keys=True).encode()).hexdigest(),
            "outputs": self.digests,
        }
        data = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "wb") as fh:
            fh.write(data)
        return path


def _sigma(args, group_needed: bool = False):
    params = TreeParams(args.d, args.k)
    gs = build_sigma(params, args.q, verify=args.verify,
                     node_budget=_node_budget(args))
    return params, gs


# ---------------------------------------------------------------------------
# Subcommand drivers

def cmd_compose_check(args) -> None:
    params = TreeParams(args.d, args.k)
    group = _group(args)
    rng = random.Random(args.seed)
    failures = 0
    for _ in range(args.samples):
        g1 = random_decorated(params, group, 3, rng)
        g2 = random_decorated(params, group, 3, rng)
        h = aaut_compose(g1, g2)
        depth = max(h.depth(), g1.depth() + g2.depth())
        from .trees import vertices_at_depth
        for v in vertices_at_depth(params, depth):
            if h.apply(v) != g1.apply(g2.apply(v)):
                failures += 1
                break
    config = _config_dict(args, ["d", "k", "D", "samples", "seed"])
    art = Artifacts(args.out, config)
    art.write_json("report.json",
                   {"checked": args.samples, "failures": failures})
    art.close()
    if failures:
        raise SystemExit(1)


def cmd_bfs_ball(args) -> None:
    params, gs = _sigma(args)
    result = bfs_ball(gs, args.radius, node_budget=_node_budget(args))
    config = _config_dict(args, ["d", "k", "q", "radius", "verify"])
    art = Artifacts(args.out, config)
    rows = []
    items = sorted(result.lengths.items(), key=lambda kv: (kv[1], kv[0]))
    for idx, (key, length) in enumerate(items):
        rows.append((idx, length, key_carets(key)))
    art.write_csv("ball.csv", ("element-id", "length", "carets"), rows)
    art.write_json("summary.json", {
        "sigma_size": len(gs),
        "requested_radius": result.requested_radius,
        "achieved_radius": result.achieved_radius,
        "counts": {str(r): c for r, c in result.counts_by_radius().items()},
        "generation_certificate": gs.generation_certificate,
    })
    art.close()


def cmd_rewrite_local(args) -> None:
    params, gs = _sigma(args)
    group = _group(args)
    tables = RelatorTables(gs, group)
    rng = random.Random(args.seed)
    rows = []
    traces = []
    n_i = params.k if params.k >= 2 else 1
    for s in range(args.samples):
        i = 1 + (s % n_i)
        kap = 1 + rng.randrange(args.kappa)
        u = random_component_portrait(params, group, i, kap, rng)
        word, trace = rewrite_local(tables, u)
        bound = tables.C_of(u) * kappa(u)
        rows.append((s, kappa(u), len(word), trace.cost(), bound))
        traces.extend(serialize.trace_to_jsonl(trace))
    config = _config_dict(args, ["d", "k", "D", "q", "kappa", "samples",
                                 "seed", "verify"])
    art = Artifacts(args.out, config)
    art.write_csv("rewrite.csv",
                  ("sample", "kappa", "word_len", "cost", "bound"), rows)
    art.write_lines("traces.jsonl", traces)
    art.close()


def cmd_normalize(args) -> None:
    params, gs = _sigma(args)
    group = _group(args)
    tables = RelatorTables(gs, group)
    rng = random.Random(args.seed)
    rows = []
    for s in range(args.samples):
        word = random_word(tables, args.n, rng)
        _, trace = normalize_left(tables, word)
        rows.append((s, args.n, trace.cost(), normalize_left_bound(args.n)))
    config = _config_dict(args, ["d", "k", "D", "q", "n", "samples", "seed",
                                 "verify"])
    art = Artifacts(args.out, config)
    art.write_csv("normalize.csv", ("sample", "n", "cost", "bound"), rows)
    art.close()


def cmd_fill(args) -> None:
    params, gs = _sigma(args)
    group = _group(args)
    tables = RelatorTables(gs, group)
    rng = random.Random(args.seed)
    rows = []
    config = _config_dict(args, ["d", "k", "D", "q", "n", "samples", "seed",
                                 "verify", "charge_free_reductions"])
    art = Artifacts(args.out, config)
    for s in range(args.samples):
        word = random_null_word(tables, args.n, rng)
        res = fill(tables, word)
        ok, bad = verify_trace(tables, word, res.trace, [])
        if not ok:
            raise AssertionError(f"trace verification failed at step {bad}")
        area = res.trace.cost(charge_free=args.charge_free_reductions)
        rows.append((s, res.n, area, res.nlogn_part, res.delta_part))
        art.write_lines(f"trace-{s:03d}.jsonl",
                        serialize.trace_to_jsonl(res.trace))
    art.write_csv("fill.csv",
                  ("sample", "n", "area", "nlogn-part", "delta-part"), rows)
    art.close()


def cmd_dehn_profile(args) -> None:
    params, gs = _sigma(args)
    group = _group(args)
    tables = RelatorTables(gs, group)
    lengths = [int(x) for x in args.lengths.split(",") if x]
    rows = dehn_profile(tables, lengths, args.samples, args.seed)
    config = _config_dict(args, ["d", "k", "D", "q", "lengths", "samples",
                                 "seed", "verify"])
    art = Artifacts(args.out, config)
    art.write_csv(
        "profile.csv",
        ("n", "mean area", "max area", "nlogn-part", "delta-part"),
        [(r.n, f"{r.mean_area:.3f}", r.max_area, f"{r.nlogn_part:.3f}",
          f"{r.delta_part:.3f}") for r in rows])
    art.close()


def cmd_coset_ball(args) -> None:
    params, gs = _sigma(args)
    group = _group(args)
    result = coset_ball(gs, group, args.radius, node_budget=_node_budget(args))
    config = _config_dict(args, ["d", "k", "D", "q", "radius", "verify"])
    art = Artifacts(args.out, config)
    art.write_csv("coset_ball.csv", ("radius", "count"),
                  sorted(result.counts.items()))
    art.write_csv("edges.csv", ("source", "generator", "target"),
                  result.edges)
    art.write_json("summary.json", {
        "cosets": result.n_cosets,
        "violations": result.violations,
        "achieved_radius": result.achieved_radius,
    })
    art.close()
    if result.violations:
        raise SystemExit(1)


def cmd_nucleus(args) -> None:
    spec = selfsim.load_spec(args.spec)
    result = selfsim.nucleus(spec)
    config = _config_dict(args, ["spec"])
    art = Artifacts(args.out, config)
    art.write_json("nucleus.json", {
        "size": result.size,
        "depth": result.depth,
        "rounds": result.rounds,
        "elements": [repr(w) for w in result.words],
    })
    art.close()


def cmd_level_image(args) -> None:
    spec = selfsim.load_spec(args.spec)
    size = selfsim.level_image_size(spec, args.level,
                                    node_budget=_node_budget(args))
    config = _config_dict(args, ["spec", "level"])
    art = Artifacts(args.out, config)
    art.write_json("level_image.json", {"level": args.level, "size": size})
    art.close()


def inject_pattern_fault(t: selfsim.TruncatedTable,
                         patterns: selfsim.PatternSet, rng,
                         max_tries: int = 200) -> selfsim.TruncatedTable:
    """Post-compose the truncation with a swap at a random vertex until the
    result leaves the pattern closure."""
    import itertools as _it
    verts = [v for m in range(1, t.depth)
             for v in _it.product(range(t.d), repeat=m)]
    for _ in range(max_tries):
        w = verts[rng.randrange(len(verts))]
        a, b = rng.sample(range(t.d), 2)
        images = {}
        for v, im in t.images.items():
            if len(im) > len(w) and im[:len(w)] == w:
                x = im[len(w)]
                x = b if x == a else (a if x == b else x)
                images[v] = w + (x,) + im[len(w) + 1:]
            else:
                images[v] = im
        t2 = selfsim.TruncatedTable(t.d, t.depth, images)
        if not selfsim.in_closure(t2, patterns):
            return t2
    raise RuntimeError("could not inject a detectable fault")


def cmd_pattern_test(args) -> None:
    spec = selfsim.load_spec(args.spec)
    patterns = selfsim.pattern_set(spec, args.m,
                                   node_budget=_node_budget(args))
    rng = random.Random(args.seed)
    names = spec.generator_names()
    accepted = rejected = 0
    for _ in range(args.samples):
        letters = [(rng.choice(names), rng.choice((1, -1)))
                   for _ in range(rng.randrange(1, 12))]
        g = spec.word(letters)
        t = selfsim.TruncatedTable.of_word(g, args.depth)
        if selfsim.in_closure(t, patterns):
            accepted += 1
        bad = inject_pattern_fault(t, patterns, rng)
        if not selfsim.in_closure(bad, patterns):
            rejected += 1
    config = _config_dict(args, ["spec", "m", "depth", "samples", "seed"])
    art = Artifacts(args.out, config)
    art.write_json("pattern_test.json", {
        "pattern_count": len(patterns),
        "samples": args.samples,
        "accepted": accepted,
        "rejected_injected": rejected,
    })
    art.close()
    if accepted != args.samples or rejected != args.samples:
        raise SystemExit(1)


def cmd_branch_check(args) -> None:
    spec = selfsim.load_spec(args.spec)
    index = selfsim.index_identity_check(spec, args.s,
                                         node_budget=_node_budget(args))
    stab = selfsim.stab_image_identity(spec, args.s,
                                       node_budget=_node_budget(args))
    config = _config_dict(args, ["spec", "s"])
    art = Artifacts(args.out, config)
    art.write_json("branch_check.json", {
        "index": {
            "s": index.s,
            "level_sizes": {str(k): v for k, v in index.level_sizes.items()},
            "formula_value": index.formula_value,
            "enumerated_value": index.enumerated_value,
            "integral": index.integral,
            "equal": index.equal,
            "stable": index.stable,
            "ok": index.ok,
        },
        "stab_image": {
            "n": stab.n,
            "stab_image_size": stab.stab_image_size,
            "level_size_power": stab.level_size_power,
            "equal": stab.equal,
        },
    })
    art.close()
    if not (index.ok and stab.equal):
        raise SystemExit(1)


# ---------------------------------------------------------------------------
# Argument wiring

def _add_tree_flags(p, with_group=True, with_q=True):
    p.add_argument("--d", type=int, default=2, help="branching arity")
    p.add_argument("--k", type=int, default=2, help="root degree")
    if with_group:
        p.add_argument("--D", default="sym2",
                       help="local group: name (sym2, cyc3, triv2) or "
                            "comma-separated one-line permutations")
    if with_q:
        p.add_argument("--q", "--sigma-carets", dest="q", type=int, default=2,
                       help="caret bound of the generating set")
        p.add_argument("--verify", default="sample",
                       choices=("auto", "full", "sample", "off"),
                       help="generation certificate mode")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="artifact directory")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="almostaut",
        description="exact experiments with tree almost-automorphism groups")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose-check", help="composition vs the vertex oracle")
    _add_tree_flags(p, with_q=False)
    p.add_argument("--samples", type=int, default=200)
    _add_common(p)
    p.set_defaults(func=cmd_compose_check)

    p = sub.add_parser("bfs-ball", help="exact Cayley ball with caret data")
    _add_tree_flags(p, with_group=False)
    p.add_argument("--radius", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_bfs_ball)

    p = sub.add_parser("rewrite-local", help="compact-letter conversion stats")
    _add_tree_flags(p)
    p.add_argument("--kappa", type=int, default=8, help="max caret count")
    p.add_argument("--samples", type=int, default=50)
    _add_common(p)
    p.set_defaults(func=cmd_rewrite_local)

    p = sub.add_parser("normalize", help="left-normalization cost stats")
    _add_tree_flags(p)
    p.add_argument("--n", type=int, default=64, help="word length")
    p.add_argument("--samples", type=int, default=50)
    _add_common(p)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("fill", help="fill null-homotopic words, emit traces")
    _add_tree_flags(p)
    p.add_argument("--n", type=int, default=32, help="word length")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--charge-free-reductions", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_fill)

    p = sub.add_parser("dehn-profile", help="area statistics over a length grid")
    _add_tree_flags(p)
    p.add_argument("--lengths", default="8,16,32,64")
    p.add_argument("--samples", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_dehn_profile)

    p = sub.add_parser("coset-ball", help="coset graph ball modulo the compact part")
    _add_tree_flags(p)
    p.add_argument("--radius", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_coset_ball)

    p = sub.add_parser("nucleus", help="contraction nucleus of an automaton group")
    p.add_argument("--spec", default="grigorchuk")
    _add_common(p)
    p.set_defaults(func=cmd_nucleus)

    p = sub.add_parser("level-image", help="level stabilizer index")
    p.add_argument("--spec", default="grigorchuk")
    p.add_argument("--level", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=cmd_level_image)

    p = sub.add_parser("pattern-test", help="finitely-constrained membership")
    p.add_argument("--spec", default="grigorchuk")
    p.add_argument("--m", type=int, default=4, help="pattern depth")
    p.add_argument("--depth", type=int, default=6, help="truncation depth")
    p.add_argument("--samples", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_pattern_test)

    p = sub.add_parser("branch-check", help="branch-group index identities")
    p.add_argument("--spec", default="grigorchuk")
    p.add_argument("--s", type=int, default=3, help="branching level")
    _add_common(p)
    p.set_defaults(func=cmd_branch_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        if args.out is None:
            args.out = f"out-{args.command}"
        args.func(args)
    except (BudgetExceeded, GenerationCheckFailed, SaturationError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (ValueError, OSError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
