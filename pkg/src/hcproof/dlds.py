"""Dag-like derivability structures (DLDS).

Deductive edges run premiss -> conclusion and carry a color (0 for edges
inherited from the tree, positive after a collapse) plus a dependency label
that is either a :class:`DepSet` or :data:`LAMBDA`.  Ancestor edges run from a
lower node (source) up to a higher node (target) and carry a full relative
address: one color per deductive edge on the walk from target down to source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

from .formula_core import (
    LAMBDA,
    DepSet,
    Formula,
    Foundation,
    build_foundation,
    dep_minus,
    dep_union,
    parse_formula,
)


class DLDSError(ValueError):
    pass


class LevelError(DLDSError):
    pass


@dataclass(frozen=True)
class Edge:
    color: int
    dep: Union[DepSet, object]


Path = Tuple[int, ...]


@dataclass
class DLDS:
    foundation: Foundation
    label: Dict[int, Formula]
    root: int
    out: Dict[int, Dict[int, Edge]] = field(default_factory=dict)
    inn: Dict[int, Dict[int, None]] = field(default_factory=dict)
    anc: Dict[int, set] = field(default_factory=dict)  # target -> {(source, path)}
    hyp: set = field(default_factory=set)
    order: Dict[int, float] = field(default_factory=dict)
    anc_src: Dict[int, set] = field(default_factory=dict)  # source -> {(target, path)}

    def __post_init__(self):
        if self.anc and not self.anc_src:
            for t, items in self.anc.items():
                for s, p in items:
                    self.anc_src.setdefault(s, set()).add((t, p))

    # -- construction -------------------------------------------------------
    def add_node(self, v: int, formula: Formula, pos: Optional[float] = None) -> None:
        if v in self.label:
            raise DLDSError(f"node {v} already present")
        self.label[v] = formula
        self.out[v] = {}
        self.inn[v] = {}
        self.order[v] = float(v) if pos is None else pos

    def add_edge(self, src: int, tgt: int, color: int = 0, dep=LAMBDA) -> None:
        if tgt in self.out[src]:
            raise DLDSError(f"edge {src}->{tgt} already present")
        self.out[src][tgt] = Edge(color, dep)
        self.inn[tgt][src] = None

    def set_edge(self, src: int, tgt: int, color: int, dep) -> None:
        self.out[src][tgt] = Edge(color, dep)
        self.inn[tgt][src] = None

    def remove_edge(self, src: int, tgt: int) -> Edge:
        e = self.out[src].pop(tgt)
        del self.inn[tgt][src]
        return e

    def add_anc(self, src: int, tgt: int, path: Sequence[int]) -> None:
        self.anc.setdefault(tgt, set()).add((src, tuple(path)))
        self.anc_src.setdefault(src, set()).add((tgt, tuple(path)))

    def remove_anc(self, src: int, tgt: int, path: Sequence[int]) -> None:
        s = self.anc.get(tgt)
        if s is None:
            return
        s.discard((src, tuple(path)))
        if not s:
            del self.anc[tgt]
        r = self.anc_src.get(src)
        if r is not None:
            r.discard((tgt, tuple(path)))
            if not r:
                del self.anc_src[src]

    def remove_node(self, v: int) -> None:
        if self.out[v] or self.inn[v]:
            raise DLDSError(f"node {v} still has deductive edges")
        for src, p in list(self.anc.get(v, ())):
            self.remove_anc(src, v, p)
        for tgt, p in list(self.anc_src.get(v, ())):
            self.remove_anc(v, tgt, p)
        del self.label[v], self.out[v], self.inn[v], self.order[v]
        self.hyp.discard(v)

    def copy(self) -> "DLDS":
        return DLDS(
            foundation=self.foundation,
            label=dict(self.label),
            root=self.root,
            out={k: dict(v) for k, v in self.out.items()},
            inn={k: dict(v) for k, v in self.inn.items()},
            anc={k: set(v) for k, v in self.anc.items()},
            anc_src={k: set(v) for k, v in self.anc_src.items()},
            hyp=set(self.hyp),
            order=dict(self.order),
        )

    # -- views --------------------------------------------------------------
    @property
    def nodes(self) -> list:
        return sorted(self.label)

    @property
    def hyp_mark(self) -> Dict[int, bool]:
        return {v: v in self.hyp for v in self.label}

    @property
    def ded_edges(self) -> Dict[int, set]:
        fam: Dict[int, set] = {}
        for s, outs in self.out.items():
            for t, e in outs.items():
                fam.setdefault(e.color, set()).add((s, t))
        return fam

    @property
    def dep(self) -> Dict[Tuple[int, int], object]:
        return {(s, t): e.dep for s, outs in self.out.items() for t, e in outs.items()}

    @property
    def anc_edges(self) -> set:
        return {(s, t) for t, items in self.anc.items() for s, _ in items}

    @property
    def path(self) -> Dict[Tuple[int, int], list]:
        """Map (source, target) -> list of paths (MDE steps may leave several)."""
        out: Dict[Tuple[int, int], list] = {}
        for t, items in self.anc.items():
            for s, p in sorted(items):
                out.setdefault((s, t), []).append(list(p))
        return out

    def anc_list(self) -> list:
        return sorted((s, t, p) for t, items in self.anc.items() for s, p in items)

    def edge_count(self) -> int:
        return sum(len(o) for o in self.out.values())

    def is_top(self, v: int) -> bool:
        return not self.inn[v]

    def premisses(self, v: int) -> list:
        return list(self.inn[v])

    def targets(self, v: int) -> list:
        return sorted(self.out[v], key=lambda t: (self.out[v][t].color, self.order[t]))

    def edges_of_color(self, v: int, color: int) -> list:
        return [t for t, e in self.out[v].items() if e.color == color]

    def tops(self) -> list:
        return [v for v in self.nodes if not self.inn[v]]


@dataclass
class GroundedDLDS:
    dlds: DLDS
    ground_node: int
    final_dep: DepSet


def _graph(d) -> DLDS:
    return d.dlds if isinstance(d, GroundedDLDS) else d


# -- levels -----------------------------------------------------------------

def levels(d: DLDS) -> Dict[int, int]:
    """Distance to the root for every node reachable from it; raises if not leveled."""
    lev = {d.root: 0}
    frontier = [d.root]
    while frontier:
        nxt = []
        for w in frontier:
            for v in d.inn[w]:
                want = lev[w] + 1
                have = lev.get(v)
                if have is None:
                    lev[v] = want
                    nxt.append(v)
                elif have != want:
                    raise LevelError(f"node {v} has paths of length {have} and {want} to the root")
        frontier = nxt
    return lev


def level_of(d, v: int) -> int:
    g = _graph(d)
    lev = levels(g)
    if v not in g.label:
        raise DLDSError(f"unknown node {v}")
    if v not in lev:
        raise LevelError(f"node {v} does not reach the root")
    return lev[v]


def height(d) -> int:
    g = _graph(d)
    lev = levels(g)
    return max(lev.values()) if lev else 0


# -- relative addresses -------------------------------------------------------

class _Fail:
    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return "ADDRESS_FAILURE"


ADDRESS_FAILURE = _Fail()


def resolve_address(d, start: int, addr: Sequence[int]):
    """Walk down from ``start`` consuming one color per deductive edge.

    Each step takes the unique out-edge whose color equals the head of the
    address.  Returns the node reached when the address is exhausted, or
    ``ADDRESS_FAILURE`` when no unique matching edge exists.
    """
    g = _graph(d)
    if start not in g.label:
        return ADDRESS_FAILURE
    cur = start
    for c in addr:
        nxt = [t for t, e in g.out[cur].items() if e.color == c]
        if len(nxt) != 1:
            return ADDRESS_FAILURE
        cur = nxt[0]
    return cur


def resolve_address_lenient(d, start: int, addr: Sequence[int]):
    """Display-oriented walk over shortened addresses.

    At a node with a single out-edge the walk moves on without consuming the
    address unless the head matches that edge's color; at branching nodes the
    head must match.  Used only for addresses printed with zero runs omitted.
    """
    g = _graph(d)
    cur, rest = start, list(addr)
    while rest:
        outs = list(g.out[cur].items())
        if not outs:
            return ADDRESS_FAILURE
        match = [t for t, e in outs if e.color == rest[0]]
        if len(match) == 1:
            cur = match[0]
            rest.pop(0)
        elif len(outs) == 1:
            cur = outs[0][0]
        else:
            return ADDRESS_FAILURE
    return cur


# -- grounding -----------------------------------------------------------------

def ground(d: DLDS, flow_dep=None) -> GroundedDLDS:
    """Attach a ground node below the root.

    ``flow_dep`` maps an edge (src, tgt) to its computed dependency set and is
    consulted for edges labelled LAMBDA; by default it is computed with
    :func:`hcproof.flow_verify.edge_deps`.
    """
    ins = list(d.inn[d.root])
    conclusion = d.label[d.root]
    f = d.foundation
    if len(ins) == 0:
        if len(d.label) != 1:
            raise DLDSError("root has no premisses")
        final = DepSet(1 << f.ordinal(conclusion), len(f))
    elif len(ins) > 2:
        raise DLDSError(f"root has {len(ins)} incoming edges")
    else:
        def dep_of(src: int) -> DepSet:
            lab = d.out[src][d.root].dep
            if lab is LAMBDA:
                nonlocal flow_dep
                if flow_dep is None:
                    from .flow_verify import edge_deps

                    flow_dep = edge_deps(d)
                vals = flow_dep.get((src, d.root), set())
                if len(vals) != 1:
                    raise DLDSError("cannot determine the dependency set entering the root")
                return next(iter(vals))
            return lab

        if len(ins) == 1:
            prem = d.label[ins[0]]
            if not (hasattr(conclusion, "succedent") and conclusion.succedent == prem):
                raise DLDSError("root with one premiss is not an implication introduction")
            final = dep_minus(dep_of(ins[0]), conclusion.antecedent, f)
        else:
            final = dep_union(dep_of(ins[0]), dep_of(ins[1]))
    g = d.copy()
    gnode = max(g.label) + 1
    g.label[gnode] = conclusion
    g.out[gnode] = {}
    g.inn[gnode] = {}
    g.order[gnode] = g.order[g.root]
    g.add_edge(g.root, gnode, 0, final)
    g.root = gnode
    return GroundedDLDS(g, gnode, final)


def unground(g: GroundedDLDS) -> DLDS:
    d = g.dlds.copy()
    (root,) = d.inn[g.ground_node]
    d.remove_edge(root, g.ground_node)
    d.remove_node(g.ground_node)
    d.root = root
    return d


# -- size ------------------------------------------------------------------------

def size_of(d) -> int:
    g = _graph(d)
    total = len(g.label) * 2  # node id plus label ordinal
    width = len(g.foundation)
    for outs in g.out.values():
        for e in outs.values():
            total += 2 + (1 if e.dep is LAMBDA else width)
    for items in g.anc.values():
        for _, p in items:
            total += 2 + len(p)
    return total


# -- DOT ---------------------------------------------------------------------------

def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(d) -> str:
    g = _graph(d)
    lines = ["digraph dlds {", "  rankdir=TB;", "  node [shape=box];"]
    for v in sorted(g.label):
        text = _dot_escape(str(g.label[v]))
        if v in g.hyp:
            lines.append(f'  n{v} [label="{text}", xlabel=<<font color="red">&#8463;</font>>];')
        else:
            lines.append(f'  n{v} [label="{text}"];')
    for s in sorted(g.out):
        for t in sorted(g.out[s]):
            e = g.out[s][t]
            dep = "lambda" if e.dep is LAMBDA else str(e.dep)
            if e.color:
                lab = f'<<font color="red">{e.color}</font> {dep}>'
            else:
                lab = f'"{dep}"'
            lines.append(f"  n{s} -> n{t} [color=black, label={lab}];")
    for s, t, p in g.anc_list():
        ptxt = "[" + ",".join(str(c) for c in p) + "]"
        lines.append(
            f'  n{s} -> n{t} [color=blue, style=dashed, constraint=false, '
            f'label="{ptxt}", fontcolor=red];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- JSON ------------------------------------------------------------------------------

def _edge_key(s: int, t: int) -> str:
    return f"{s},{t}"


def to_json_obj(d) -> dict:
    g = _graph(d)
    obj = {
        "format": "dlds",
        "foundation": g.foundation.to_strings(),
        "nodes": [{"id": v, "label": str(g.label[v]), "pos": g.order[v]} for v in g.nodes],
        "ded_edges": [[s, t] for s in sorted(g.out) for t in sorted(g.out[s])],
        "colors": {},
        "dep": {},
        "anc_edges": [{"src": s, "tgt": t, "path": list(p)} for s, t, p in g.anc_list()],
        "hyp_marks": sorted(g.hyp),
        "root": g.root,
    }
    for s in sorted(g.out):
        for t in sorted(g.out[s]):
            e = g.out[s][t]
            obj["colors"][_edge_key(s, t)] = e.color
            obj["dep"][_edge_key(s, t)] = "lambda" if e.dep is LAMBDA else str(e.dep)
    if isinstance(d, GroundedDLDS):
        obj["ground"] = d.ground_node
        obj["final_dep"] = str(d.final_dep)
    return obj


def from_json_obj(obj: dict):
    try:
        foundation = build_foundation([], explicit_order=[parse_formula(s) for s in obj["foundation"]])
        d = DLDS(foundation=foundation, label={}, root=int(obj["root"]))
        for n in obj["nodes"]:
            d.add_node(int(n["id"]), parse_formula(n["label"]), n.get("pos"))
        colors = obj.get("colors", {})
        deps = obj.get("dep", {})
        seen = set()
        for s, t in obj["ded_edges"]:
            s, t = int(s), int(t)
            if (s, t) in seen:
                raise DLDSError(f"duplicate deductive edge {s}->{t}")
            seen.add((s, t))
            key = _edge_key(s, t)
            raw = deps.get(key, "lambda")
            dep = LAMBDA if raw == "lambda" else DepSet.from_string(raw)
            if dep is not LAMBDA and dep.width != len(foundation):
                raise DLDSError(f"edge {key} label width {dep.width} != {len(foundation)}")
            d.add_edge(s, t, int(colors.get(key, 0)), dep)
        for a in obj.get("anc_edges", []):
            src, tgt, p = int(a["src"]), int(a["tgt"]), tuple(int(c) for c in a["path"])
            if (src, p) in d.anc.get(tgt, set()):
                raise DLDSError(f"duplicate ancestor edge {src}->{tgt} {list(p)}")
            d.add_anc(src, tgt, p)
        d.hyp = {int(v) for v in obj.get("hyp_marks", [])}
    except (KeyError, TypeError) as exc:
        raise DLDSError(f"malformed DLDS document: {exc}") from exc
    if d.root not in d.label:
        raise DLDSError("root is not a node")
    if "ground" in obj:
        gnode = int(obj["ground"])
        e = d.out.get(next(iter(d.inn.get(gnode, {})), None), {}).get(gnode)
        final = e.dep if e is not None else DepSet.from_string(obj["final_dep"])
        return GroundedDLDS(d, gnode, final)
    return d


def dumps(d) -> str:
    return json.dumps(to_json_obj(d), indent=1, sort_keys=True)


def loads(text: str):
    return from_json_obj(json.loads(text))


def relabel_positions(d: DLDS, positions: Dict[int, float]) -> None:
    d.order.update(positions)


def nodes_at_level(d: DLDS, lev: Dict[int, int], j: int) -> list:
    return sorted((v for v, l in lev.items() if l == j), key=lambda v: (d.order[v], v))


def iter_anc(d: DLDS) -> Iterable[Tuple[int, int, Path]]:
    for t, items in d.anc.items():
        for s, p in items:
            yield s, t, p
