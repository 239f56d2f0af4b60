"""Command line entry point.

Exit codes: 0 success, 1 the input is a well-formed but invalid proof or
structure, 2 usage or I/O problems (missing files, malformed documents).
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from . import bench, compression
from .dlds import DLDSError, GroundedDLDS, dumps, export_dot, from_json_obj, ground, height, size_of
from .flow_verify import check_validity, verify_derivation
from .formula_core import FormulaSyntaxError, FoundationError, bits_to_set, parse_formula_list
from .generators import Digraph, GeneratorError, gen_fibonacci_proof, gen_nonhamiltonian_proof
from .nd_proof import ProofError, dump_proof, prepare, proof_from_json_obj, validate_tree

# Constant in the size bound size <= C * h * m^4 reported by ``stats``.  A
# grounded one-node derivation costs 7 units while h * m^4 is 1 there.
SIZE_BOUND_CONSTANT = 8

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class InvalidInput(Exception):
    pass


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _load_structure(path: str):
    """A DLDS document or a proof document (mapped to its initial DLDS)."""
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: expected a JSON object")
    try:
        if obj.get("format") == "dlds":
            return from_json_obj(obj)
        return prepare(_load_tree_obj(obj))
    except (DLDSError, FormulaSyntaxError, FoundationError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _load_tree_obj(obj: dict):
    t = proof_from_json_obj(obj)
    report = validate_tree(t)
    if not report.ok:
        lines = [f"condition {v.condition}: {v.message} {list(v.nodes)}" for v in report]
        raise InvalidInput("invalid derivation\n  " + "\n  ".join(lines))
    return t


# -- commands ----------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.family == "fib":
        if args.n is None:
            raise UsageError("gen fib needs --n")
        t = gen_fibonacci_proof(args.n)
    else:
        if args.graph is None:
            raise UsageError("gen nonham needs --graph")
        try:
            g = Digraph.from_json_obj(_read_json(args.graph))
        except GeneratorError as exc:
            raise UsageError(f"{args.graph}: {exc}") from exc
        t = gen_nonhamiltonian_proof(g)
    _write(args.output, dump_proof(t))
    return EXIT_OK


def cmd_compress(args) -> int:
    obj = _read_json(args.input)
    try:
        t = _load_tree_obj(obj)
        d = prepare(t)
    except (FormulaSyntaxError, FoundationError) as exc:
        raise UsageError(f"{args.input}: {exc}") from exc
    res = compression.compress_with_trace(d, mue_only=args.mue_only)
    g = ground(res.dlds)
    _write(args.output, dumps(g))
    if args.trace:
        try:
            compression.write_trace(res.trace, args.trace)
        except OSError as exc:
            raise UsageError(f"cannot write {args.trace}: {exc}") from exc
    print(f"nodes {len(d.label)} -> {len(res.dlds.label)}, size {size_of(ground(d))} -> {size_of(g)}"
          + (" (kept original)" if res.kept_original else ""), file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    d = _load_structure(args.input)
    if not isinstance(d, GroundedDLDS):
        try:
            d = ground(d)
        except DLDSError as exc:
            print(json.dumps({"valid": False, "diagnostics": [{"kind": "InvalidPremisses",
                                                              "detail": str(exc)}]}))
            return EXIT_INVALID
    if args.delta is None:
        delta = sorted(str(x) for x in bits_to_set(d.dlds.foundation, d.final_dep))
    else:
        try:
            delta = parse_formula_list(args.delta)
        except FormulaSyntaxError as exc:
            raise UsageError(f"--delta: {exc}") from exc
    report = verify_derivation(d, delta)
    structural = check_validity(d)
    out = {
        "valid": report["valid"] and structural.ok,
        "final_dep": None if report["final_dep"] is None else str(report["final_dep"]),
        "diagnostics": report["diagnostics"],
        "conditions_failed": structural.failed(),
    }
    print(json.dumps(out, indent=1))
    return EXIT_OK if out["valid"] else EXIT_INVALID


def cmd_stats(args) -> int:
    d = _load_structure(args.input)
    h = height(d)
    m = len((d.dlds if isinstance(d, GroundedDLDS) else d).foundation)
    size = size_of(d)
    bound = SIZE_BOUND_CONSTANT * max(h, 1) * m ** 4
    g = d.dlds if isinstance(d, GroundedDLDS) else d
    print(json.dumps({
        "size": size,
        "height": h,
        "foundation_size": m,
        "nodes": len(g.label),
        "ded_edges": sum(len(o) for o in g.out.values()),
        "anc_edges": len(g.anc_list()),
        "bound": bound,
        "within_bound": size <= bound,
    }, indent=1))
    return EXIT_OK


def cmd_export_dot(args) -> int:
    _write(args.output, export_dot(_load_structure(args.input)))
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.to < args.start:
        params: List[int] = []
    else:
        params = list(range(args.start, args.to + 1))

    def show(row):
        print(f"{row.family} {row.param}: hc {row.hc_ratio:.4f} huffman {row.huffman_ratio:.4f}",
              file=sys.stderr)

    rows = bench.bench_suite(args.family, params, repeats=args.repeats, progress=show)
    _write(args.output, bench.records_to_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hcproof", description="Compress and verify implicational proofs.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a proof family instance")
    g.add_argument("family", choices=["fib", "nonham"])
    g.add_argument("--n", type=int)
    g.add_argument("--graph", help="digraph JSON for nonham")
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("compress", help="compress a tree derivation into a grounded DLDS")
    c.add_argument("-i", "--input", required=True)
    c.add_argument("-o", "--output")
    c.add_argument("--trace", help="write the rule trace as JSON lines")
    c.add_argument("--mue-only", action="store_true", help="run only the first pass")
    c.set_defaults(func=cmd_compress)

    v = sub.add_parser("verify", help="verify a DLDS against a set of open assumptions")
    v.add_argument("-i", "--input", required=True)
    v.add_argument("--delta", help="comma separated assumptions; defaults to the recorded final set")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("stats", help="size, height and bound check")
    s.add_argument("-i", "--input", required=True)
    s.set_defaults(func=cmd_stats)

    e = sub.add_parser("export-dot", help="Graphviz rendering")
    e.add_argument("-i", "--input", required=True)
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_export_dot)

    b = sub.add_parser("bench", help="compression benchmark table as CSV")
    b.add_argument("family", choices=["fib", "nonham"])
    b.add_argument("--from", dest="start", type=int, required=True)
    b.add_argument("--to", type=int, required=True)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_bench)
    return p


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProofError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInput, GeneratorError, bench.BenchError, compression.CompressionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())
