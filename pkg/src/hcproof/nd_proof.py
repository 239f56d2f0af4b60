"""Tree-like natural deduction derivations for the implicational fragment.

A derivation is a rooted tree whose edges point from premiss to conclusion.
Elimination nodes keep their premisses in minor-then-major order; discharge
edges link a hypothesis leaf to the introduction that closes it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .dlds import DLDS
from .formula_core import (
    DepSet,
    Formula,
    Foundation,
    FoundationError,
    Imp,
    build_foundation,
    dep_minus,
    dep_singleton,
    dep_union,
    parse_formula,
    subformulas,
)


class ProofError(ValueError):
    pass


@dataclass
class TreeDerivation:
    nodes: List[int]
    label: Dict[int, Formula]
    ded_edges: List[Tuple[int, int]]
    discharge_edges: set
    root: int
    foundation: Optional[Foundation] = None

    def premisses(self) -> Dict[int, List[int]]:
        prem: Dict[int, List[int]] = {v: [] for v in self.nodes}
        for child, parent in self.ded_edges:
            if parent in prem:
                prem[parent].append(child)
        return prem

    def conclusion(self) -> Formula:
        return self.label[self.root]


@dataclass(frozen=True)
class Violation:
    condition: object  # 1..5 or "tree"
    nodes: Tuple[int, ...]
    message: str


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    def add(self, condition, nodes, message: str) -> None:
        self.violations.append(Violation(condition, tuple(nodes), message))

    @property
    def ok(self) -> bool:
        return not self.violations

    def conditions(self) -> set:
        return {v.condition for v in self.violations}

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


def _structure(t: TreeDerivation, report: ValidationReport):
    """Check rootedness; return (premiss lists, parent map, dfs intervals) or None."""
    node_set = set(t.nodes)
    if len(node_set) != len(t.nodes):
        report.add("tree", [], "duplicate node ids")
    if t.root not in node_set:
        report.add("tree", [t.root], "root is not a node")
        return None
    parent: Dict[int, int] = {}
    prem: Dict[int, List[int]] = {v: [] for v in node_set}
    bad = False
    for child, par in t.ded_edges:
        if child not in node_set or par not in node_set:
            report.add("tree", [child, par], "edge mentions an unknown node")
            bad = True
            continue
        if child in parent:
            report.add("tree", [child], "node has more than one conclusion")
            bad = True
            continue
        parent[child] = par
        prem[par].append(child)
    if t.root in parent:
        report.add("tree", [t.root], "root has an outgoing edge")
        bad = True
    if bad:
        return None
    enter: Dict[int, int] = {}
    leave: Dict[int, int] = {}
    clock = 0
    stack = [(t.root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            leave[v] = clock
            clock += 1
            continue
        if v in enter:
            report.add("tree", [v], "cycle through node")
            return None
        enter[v] = clock
        clock += 1
        stack.append((v, True))
        for w in reversed(prem[v]):
            stack.append((w, False))
    unreached = sorted(node_set - set(enter))
    if unreached:
        report.add("tree", unreached, "nodes do not reach the root")
        return None
    return prem, parent, enter, leave


def validate_tree(t: TreeDerivation) -> ValidationReport:
    report = ValidationReport()
    st = _structure(t, report)
    if st is None:
        return report
    prem, parent, enter, leave = st
    lab = t.label
    for v in t.nodes:
        if v not in lab:
            report.add("tree", [v], "node has no label")
    if not report.ok:
        return report

    discharged_by: Dict[int, List[int]] = {}
    for leaf, intro in t.discharge_edges:
        if leaf not in lab or intro not in lab:
            report.add(3, [leaf, intro], "discharge edge mentions an unknown node")
            continue
        discharged_by.setdefault(intro, []).append(leaf)
        if prem[leaf]:
            report.add(3, [leaf, intro], "discharged node is not a leaf")
        elif not (enter[intro] <= enter[leaf] and leave[leaf] <= leave[intro]) or leaf == intro:
            report.add(3, [leaf, intro], "discharged leaf is not above the introduction")
        if len(prem[intro]) != 1:
            report.add(2, [leaf, intro], "discharge edge into a node that is not an introduction")
    leaf_count: Dict[int, int] = {}
    for leaf, _ in t.discharge_edges:
        leaf_count[leaf] = leaf_count.get(leaf, 0) + 1
    for leaf, k in leaf_count.items():
        if k > 1:
            report.add(3, [leaf], "leaf discharged more than once")

    for v in t.nodes:
        ps = prem[v]
        if len(ps) > 2:
            report.add(1, [v], f"in-degree {len(ps)}")
        elif len(ps) == 1:
            w = ps[0]
            f = lab[v]
            if not isinstance(f, Imp) or f.succedent != lab[w]:
                report.add(2, [v, w], "introduction conclusion does not match its premiss")
            else:
                for d in discharged_by.get(v, []):
                    if lab[d] != f.antecedent:
                        report.add(2, [v, d], "discharged leaf label differs from the antecedent")
        elif len(ps) == 2:
            minor, major = ps
            if lab[major] != Imp(lab[minor], lab[v]):
                report.add(4, [v, minor, major], "elimination premisses do not match the conclusion")

    if t.foundation is not None:
        missing = [f for f in subformulas(t.conclusion()) if f not in t.foundation]
        if missing:
            report.add(5, [t.root], "foundation misses " + ", ".join(sorted(map(str, missing))))
    return report


def _require_valid(t: TreeDerivation) -> Dict[int, List[int]]:
    report = validate_tree(t)
    if not report.ok:
        first = report.violations[0]
        raise ProofError(f"invalid derivation (condition {first.condition}): {first.message}")
    return t.premisses()


def greedify(t: TreeDerivation) -> TreeDerivation:
    """Let every introduction discharge all open occurrences of its antecedent.

    A leaf is closed by the nearest introduction below it whose antecedent is
    the leaf's label; leaves with no such introduction stay open.
    """
    prem = _require_valid(t)
    lab = t.label
    discharges = set()
    # nearest enclosing introduction per antecedent, maintained along the DFS path
    active: Dict[Formula, List[int]] = {}
    stack: List[Tuple[int, bool]] = [(t.root, False)]
    while stack:
        v, leaving = stack.pop()
        ps = prem[v]
        intro_ant = lab[v].antecedent if len(ps) == 1 else None
        if leaving:
            active[intro_ant].pop()
            continue
        if not ps:
            closers = active.get(lab[v])
            if closers:
                discharges.add((v, closers[-1]))
            continue
        if intro_ant is not None:
            active.setdefault(intro_ant, []).append(v)
            stack.append((v, True))
        for w in reversed(ps):
            stack.append((w, False))
    return TreeDerivation(
        nodes=list(t.nodes),
        label=dict(t.label),
        ded_edges=list(t.ded_edges),
        discharge_edges=discharges,
        root=t.root,
        foundation=t.foundation,
    )


@dataclass
class DGTD:
    tree: TreeDerivation
    foundation: Foundation
    dep: Dict[Tuple[int, int], DepSet]

    def conclusion_dep(self) -> DepSet:
        """Dependency set of the conclusion (what a ground edge would carry)."""
        t = self.tree
        prem = t.premisses()
        ps = prem[t.root]
        if not ps:
            return dep_singleton(t.label[t.root], self.foundation)
        if len(ps) == 1:
            return dep_minus(self.dep[(ps[0], t.root)], t.label[t.root].antecedent, self.foundation)
        return dep_union(self.dep[(ps[0], t.root)], self.dep[(ps[1], t.root)])


def decorate(t: TreeDerivation, f: Foundation) -> DGTD:
    for v in t.nodes:
        if t.label[v] not in f:
            raise FoundationError(f"label {t.label[v]} of node {v} is outside the foundation")
    prem = t.premisses()
    parent = {c: p for c, p in t.ded_edges}
    out_dep: Dict[int, DepSet] = {}
    order: List[int] = []
    stack = [t.root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(prem[v])
    for v in reversed(order):
        ps = prem[v]
        if not ps:
            out_dep[v] = dep_singleton(t.label[v], f)
        elif len(ps) == 1:
            out_dep[v] = dep_minus(out_dep[ps[0]], t.label[v].antecedent, f)
        else:
            out_dep[v] = dep_union(out_dep[ps[0]], out_dep[ps[1]])
    dep = {(v, parent[v]): out_dep[v] for v in t.nodes if v in parent}
    bare = TreeDerivation(list(t.nodes), dict(t.label), list(t.ded_edges), set(), t.root, f)
    return DGTD(bare, f, dep)


def to_dlds(g: DGTD) -> DLDS:
    t = g.tree
    d = DLDS(foundation=g.foundation, label={}, root=t.root)
    prem = t.premisses()
    # left-to-right position: post-order index with premisses visited in order
    pos: Dict[int, int] = {}
    stack = [(t.root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            pos[v] = len(pos)
            continue
        stack.append((v, True))
        for w in reversed(prem[v]):
            stack.append((w, False))
    for v in sorted(t.nodes):
        d.add_node(v, t.label[v], float(pos[v]))
    for v in sorted(t.nodes, key=lambda x: pos[x]):
        for w in prem[v]:
            d.add_edge(w, v, 0, g.dep[(w, v)])
    return d


# -- JSON -------------------------------------------------------------------

def proof_to_json_obj(t: TreeDerivation) -> dict:
    f = t.foundation or build_foundation(t.label.values())
    return {
        "foundation": f.to_strings(),
        "nodes": [{"id": v, "label": str(t.label[v])} for v in sorted(t.nodes)],
        "ded_edges": [[c, p] for c, p in t.ded_edges],
        "discharge_edges": sorted([leaf, intro] for leaf, intro in t.discharge_edges),
        "root": t.root,
    }


def proof_from_json_obj(obj: dict) -> TreeDerivation:
    try:
        foundation = None
        if obj.get("foundation"):
            foundation = build_foundation([], explicit_order=[parse_formula(s) for s in obj["foundation"]])
        nodes = [int(n["id"]) for n in obj["nodes"]]
        label = {int(n["id"]): parse_formula(n["label"]) for n in obj["nodes"]}
        ded = [(int(c), int(p)) for c, p in obj["ded_edges"]]
        dis = {(int(a), int(b)) for a, b in obj.get("discharge_edges", [])}
        return TreeDerivation(nodes, label, ded, dis, int(obj["root"]), foundation)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProofError(f"malformed proof document: {exc}") from exc


def dump_proof(t: TreeDerivation) -> str:
    return json.dumps(proof_to_json_obj(t), indent=1)


def load_proof(text: str) -> TreeDerivation:
    return proof_from_json_obj(json.loads(text))


def foundation_for(t: TreeDerivation) -> Foundation:
    """The stored foundation, extended with missing labels and discharged antecedents."""
    prem = t.premisses()
    labels = set(t.label.values())
    labels |= {t.label[v].antecedent for v in t.nodes if len(prem[v]) == 1}
    if t.foundation is None:
        return build_foundation(labels)
    extra = [f for f in build_foundation(labels - set(t.foundation)).formulas]
    return Foundation(list(t.foundation.formulas) + extra)


def prepare(t: TreeDerivation) -> DLDS:
    """Greedify, decorate and map a derivation to its initial DLDS."""
    g = greedify(t)
    return to_dlds(decorate(g, foundation_for(g)))
