"""Dependency flow, structural validity and the level-sweep derivation verifier.

Routing model
-------------
Every node carries a set of *entries*.  An entry is one occurrence (or a
bundle of occurrences sharing a dependency set) of the node in the unfolded
tree, written as ``path -> dep``: the path says where the occurrence goes.
An empty path broadcasts along every color-0 out-edge; a non-empty path
leaves through the unique out-edge whose color is its head and arrives at
the target with the tail.

At a node the arrivals are grouped by their remaining path.  A non-empty
group must be a rule instance on its own (one premiss for an introduction,
minor plus major for an elimination) or be completed by exactly one
broadcast arrival.  Broadcast arrivals not used for completion must form an
instance together.  Hypotheses (top nodes and nodes carrying the hypothesis
mark) yield one entry per incoming ancestor edge, or a single broadcast
entry when untargeted.  A node without the mark whose plain instance has
ancestor edges re-emits that instance once per ancestor edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .dlds import (
    ADDRESS_FAILURE,
    DLDS,
    GroundedDLDS,
    LevelError,
    levels,
    resolve_address,
)
from .formula_core import (
    LAMBDA,
    DepSet,
    Foundation,
    Imp,
    dep_minus,
    dep_singleton,
    dep_union,
    parse_formula,
    set_to_bits,
)

CONDITIONS = (
    "ColorAcyclicity",
    "LeveledColored",
    "AncestorEdges",
    "AncestorBackwayInformation",
    "Simplicity",
    "AncestorSimplicity",
    "NonNestedAncestorEdges",
    "CorrectRuleApp",
)


class FlowError(Exception):
    def __init__(self, node: int, clause: str, message: str):
        super().__init__(f"node {node}: {clause}: {message}")
        self.node = node
        self.clause = clause
        self.message = message


@dataclass(frozen=True)
class Entry:
    dep: DepSet
    kind: str  # "hyp" or "der"
    members: Tuple[Tuple[int, Tuple[int, ...]], ...] = ()


def rule_dep(d: DLDS, x: int, prems: List[Tuple[int, DepSet]]) -> Optional[DepSet]:
    """Dependency set concluded at ``x`` from (premiss node, dep) pairs, or None."""
    lab = d.label[x]
    if len(prems) == 1:
        (y, dep), = prems
        if isinstance(lab, Imp) and lab.succedent == d.label[y]:
            return dep_minus(dep, lab.antecedent, d.foundation)
        return None
    if len(prems) == 2:
        (y1, d1), (y2, d2) = prems
        l1, l2 = d.label[y1], d.label[y2]
        if l2 == Imp(l1, lab) or l1 == Imp(l2, lab):
            return dep_union(d1, d2)
    return None


class EntryEngine:
    """Memoised per-node entry computation; callers invalidate nodes they edit."""

    def __init__(self, d: DLDS):
        self.d = d
        self.cache: Dict[int, Dict[Tuple[int, ...], Entry]] = {}
        self.meta: Dict[int, object] = {}

    def invalidate(self, *nodes: int) -> None:
        for v in nodes:
            self.cache.pop(v, None)
            self.meta.pop(v, None)

    def get(self, x: int) -> Dict[Tuple[int, ...], Entry]:
        got = self.cache.get(x)
        if got is not None:
            return got
        # iterative post-order to avoid deep recursion on tall structures
        stack = [x]
        while stack:
            v = stack[-1]
            if v in self.cache:
                stack.pop()
                continue
            pending = [y for y in self.d.inn[v] if y not in self.cache]
            if pending:
                stack.extend(pending)
                continue
            self.cache[v] = self._compute(v)
            stack.pop()
        return self.cache[x]

    def _compute(self, x: int) -> Dict[Tuple[int, ...], Entry]:
        d = self.d
        res: Dict[Tuple[int, ...], Entry] = {}

        def add(path, entry: Entry) -> None:
            old = res.get(path)
            if old is None:
                res[path] = entry
            elif old.dep != entry.dep:
                raise FlowError(x, "CorrectRuleApp", f"path {list(path)} carries two dependency sets")
            else:
                res[path] = Entry(old.dep, old.kind, old.members + entry.members)

        anc_in = d.anc.get(x, ())
        top = not d.inn[x]
        marked = x in d.hyp
        if top or marked:
            b = dep_singleton(d.label[x], d.foundation)
            if anc_in:
                for _, p in anc_in:
                    add(p, Entry(b, "hyp"))
            else:
                add((), Entry(b, "hyp"))
        if top:
            return res

        explicit: Dict[Tuple[int, ...], list] = {}
        shared: list = []
        for y in d.inn[x]:
            c = d.out[y][x].color
            for p, ent in self.get(y).items():
                if not p:
                    if c == 0:
                        shared.append((y, p, ent.dep))
                elif p[0] == c:
                    explicit.setdefault(p[1:], []).append((y, p, ent.dep))

        instances = []
        completed = set()
        for q, grp in explicit.items():
            dep = rule_dep(d, x, [(y, dp) for y, _, dp in grp])
            partners = []
            if len(grp) == 1:
                y0 = grp[0][0]
                partners = [
                    s for s in shared
                    if s[0] != y0 and rule_dep(d, x, [(y0, grp[0][2]), (s[0], s[2])]) is not None
                ]
            # a lone routed arrival pairs with its unique broadcast partner
            if dep is not None and len(partners) > 1:
                raise FlowError(x, "CorrectRuleApp", f"group {list(q)} is ambiguous")
            if dep is None or len(partners) == 1:
                if len(partners) != 1:
                    raise FlowError(
                        x, "CorrectRuleApp",
                        f"arrivals with remaining path {list(q)} do not form a rule instance",
                    )
                s = partners[0]
                completed.add(s[0])
                grp = grp + [s]
                dep = rule_dep(d, x, [(y, dp) for y, _, dp in grp])
            instances.append((q, dep, tuple((y, p) for y, p, _ in grp)))
        if shared and any(s[0] not in completed for s in shared):
            dep = rule_dep(d, x, [(y, dp) for y, _, dp in shared])
            if dep is None:
                raise FlowError(x, "CorrectRuleApp", "broadcast premisses do not form a rule instance")
            instances.append(((), dep, tuple((y, p) for y, p, _ in shared)))

        if anc_in and not marked:
            plain = [inst for inst in instances if not inst[0]]
            if len(plain) != 1:
                raise FlowError(x, "CorrectRuleApp", "ancestor edges into a node without a plain instance")
            _, dep, members = plain[0]
            instances = [inst for inst in instances if inst[0]]
            for _, p in anc_in:
                instances.append((p, dep, members))
        for q, dep, members in instances:
            add(q, Entry(dep, "der", members))
        return res


def route_targets(d: DLDS, y: int, path: Tuple[int, ...]) -> list:
    if not path:
        return [t for t, e in d.out[y].items() if e.color == 0]
    return [t for t, e in d.out[y].items() if e.color == path[0]]


def check_routing(d: DLDS, y: int, ents: Dict[Tuple[int, ...], Entry]) -> List[str]:
    """Problems with how the entries of ``y`` leave it (empty when fine)."""
    problems = []
    if y == d.root:
        if len(ents) != 1 or () not in ents:
            problems.append(f"root must carry exactly one broadcast entry, has {len(ents)}")
        return problems
    for p in ents:
        ts = route_targets(d, y, p)
        if not ts:
            problems.append(f"entry with path {list(p)} has no matching out-edge")
        elif p and len(ts) > 1:
            problems.append(f"entry with path {list(p)} matches {len(ts)} out-edges")
    for t, e in d.out[y].items():
        carried = {ent.dep for p, ent in ents.items() if (p[:1] == (e.color,)) or (not p and e.color == 0)}
        if not carried:
            problems.append(f"edge {y}->{t} carries no occurrence")
        elif e.dep is not LAMBDA and carried != {e.dep}:
            got = ",".join(sorted(str(c) for c in carried))
            problems.append(f"edge {y}->{t} labelled {e.dep} but carries {got}")
    return problems


def all_entries(d: DLDS):
    """Entries of every node plus a list of (node, message) problems."""
    eng = EntryEngine(d)
    problems = []
    failed = set()
    try:
        order = _topological(d)
    except ValueError as exc:
        return {}, [(d.root, str(exc))]
    for v in order:
        if any(y in failed for y in d.inn[v]):
            failed.add(v)
            continue
        try:
            eng.get(v)
        except FlowError as exc:
            problems.append((v, exc.message))
            failed.add(v)
    for v in order:
        if v in failed:
            continue
        for msg in check_routing(d, v, eng.cache[v]):
            problems.append((v, msg))
    return eng.cache, problems


def _topological(d: DLDS) -> list:
    indeg = {v: len(d.inn[v]) for v in d.label}
    ready = sorted(v for v, k in indeg.items() if k == 0)
    order = []
    while ready:
        v = ready.pop()
        order.append(v)
        for t in d.out[v]:
            indeg[t] -= 1
            if indeg[t] == 0:
                ready.append(t)
    if len(order) != len(d.label):
        raise ValueError("deductive edges contain a cycle")
    return order


def edge_deps(d: DLDS) -> Dict[Tuple[int, int], set]:
    """Dependency sets actually carried along each deductive edge."""
    ents, _ = all_entries(d)
    out: Dict[Tuple[int, int], set] = {}
    for y, es in ents.items():
        for t, e in d.out[y].items():
            out[(y, t)] = {
                ent.dep for p, ent in es.items() if p[:1] == (e.color,) or (not p and e.color == 0)
            }
    return out


# -- Pre / Top / Flow --------------------------------------------------------------

def pre_set(d, w: int) -> set:
    g = d.dlds if isinstance(d, GroundedDLDS) else d
    seen = set()
    stack = list(g.inn[w])
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        stack.extend(g.inn[v])
    return seen


def top_set(d, w: int) -> set:
    g = d.dlds if isinstance(d, GroundedDLDS) else d
    return {v for v in pre_set(g, w) if not g.inn[v] or v in g.hyp}


@dataclass(frozen=True)
class FlowEntry:
    dep: DepSet
    path: Tuple[int, ...]


@dataclass
class FlowMap:
    target: int
    entries: Dict[int, set] = field(default_factory=dict)


def flow(d, w: int) -> FlowMap:
    """Occurrences of every node of Pre(w) that reach ``w``.

    Each entry pairs the dependency set of one occurrence with the colors of
    the deductive edges it travels from the node down to ``w``.
    """
    g = d.dlds if isinstance(d, GroundedDLDS) else d
    ents, problems = all_entries(g)
    if problems:
        node, msg = problems[0]
        raise FlowError(node, "CorrectRuleApp", msg)
    consumers: Dict[Tuple[int, Tuple[int, ...]], list] = {}
    for z, es in ents.items():
        for pz, ent in es.items():
            for y, py in ent.members:
                consumers.setdefault((y, py), []).append((z, pz))

    memo: Dict[Tuple[int, Tuple[int, ...]], list] = {}

    def walks(v: int, p: Tuple[int, ...]) -> list:
        """Color sequences from occurrence (v, p) down to w."""
        key = (v, p)
        if key in memo:
            return memo[key]
        result = []
        for z, pz in consumers.get(key, []):
            hop = p if p else (g.out[v][z].color,)
            if z == w:
                result.append(hop)
            else:
                result.extend(hop + rest for rest in walks(z, pz))
        memo[key] = result
        return result

    fm = FlowMap(w)
    for v in pre_set(g, w):
        found = set()
        for p, ent in ents.get(v, {}).items():
            for seq in walks(v, p):
                found.add(FlowEntry(ent.dep, seq))
        fm.entries[v] = found
    return fm


# -- structural validity ---------------------------------------------------------------

@dataclass
class ConditionResult:
    ok: bool = True
    witnesses: list = field(default_factory=list)

    def fail(self, witness) -> None:
        self.ok = False
        self.witnesses.append(witness)


@dataclass
class ValidityReport:
    results: Dict[str, ConditionResult]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results.values())

    def failed(self) -> list:
        return [name for name in CONDITIONS if not self.results[name].ok]

    def __getitem__(self, name: str) -> ConditionResult:
        return self.results[name]

    def to_json_obj(self) -> dict:
        return {
            name: {"ok": r.ok, "witnesses": [str(w) for w in r.witnesses[:20]]}
            for name, r in self.results.items()
        }


def _color_cycles(d: DLDS) -> list:
    bad = []
    colors = {e.color for outs in d.out.values() for e in outs.values()}
    for c in sorted(colors):
        state: Dict[int, int] = {}
        for s0 in d.label:
            if s0 in state:
                continue
            stack = [(s0, iter([t for t, e in d.out[s0].items() if e.color == c]))]
            state[s0] = 1
            while stack:
                v, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    state[v] = 2
                    stack.pop()
                elif state.get(nxt) == 1:
                    bad.append((c, nxt))
                elif nxt not in state:
                    state[nxt] = 1
                    stack.append((nxt, iter([t for t, e in d.out[nxt].items() if e.color == c])))
    return bad


def check_validity(d) -> ValidityReport:
    if isinstance(d, GroundedDLDS):
        from .dlds import unground

        return check_validity(unground(d))
    g = d
    res = {name: ConditionResult() for name in CONDITIONS}

    for c, v in _color_cycles(g):
        res["ColorAcyclicity"].fail(f"color {c} cycle through {v}")

    lev = None
    sinks = [v for v in g.label if not g.out[v]]
    if sinks != [g.root] and sorted(sinks) != [g.root]:
        res["LeveledColored"].fail(f"nodes without conclusion: {sorted(sinks)}")
    try:
        lev = levels(g)
        missing = sorted(set(g.label) - set(lev))
        if missing:
            res["LeveledColored"].fail(f"nodes not reaching the root: {missing}")
    except LevelError as exc:
        res["LeveledColored"].fail(str(exc))
        lev = None

    for s, t, p in sorted((s, t, p) for t, items in g.anc.items() for s, p in items):
        if s not in g.label or t not in g.label:
            res["AncestorEdges"].fail((s, t))
            continue
        if lev is not None and not (lev.get(s, -1) < lev.get(t, -1)):
            res["AncestorEdges"].fail((s, t))
        reached = resolve_address(g, t, p)
        if reached is ADDRESS_FAILURE or reached != s:
            res["AncestorBackwayInformation"].fail((s, t, list(p)))
        if s == t:
            res["AncestorSimplicity"].fail((s, t, list(p)))

    for v, outs in g.out.items():
        seen_colors: Dict[int, int] = {}
        for t, e in outs.items():
            if e.color != 0:
                seen_colors[e.color] = seen_colors.get(e.color, 0) + 1
            if v not in g.inn.get(t, {}):
                res["Simplicity"].fail(f"edge {v}->{t} missing from the premiss index")
        for c, k in seen_colors.items():
            if k > 1:
                res["Simplicity"].fail(f"node {v} has {k} out-edges of color {c}")

    sources = {s for items in g.anc.values() for s, _ in items}
    for t, items in g.anc.items():
        for s, p in items:
            cur = t
            for c in p[:-1]:
                nxt = [x for x, e in g.out.get(cur, {}).items() if e.color == c]
                if len(nxt) != 1:
                    break
                cur = nxt[0]
                if cur in sources:
                    res["NonNestedAncestorEdges"].fail((s, t, list(p), cur))
                    break

    if res["ColorAcyclicity"].ok and res["LeveledColored"].ok:
        _, problems = all_entries(g)
        for node, msg in problems:
            res["CorrectRuleApp"].fail(f"node {node}: {msg}")
    else:
        res["CorrectRuleApp"].fail("skipped: structure is not a leveled dag")
    return ValidityReport(res)


def check_validity_json(obj: dict) -> ValidityReport:
    """Validity of a serialized DLDS, including duplicate-entry checks on the raw lists."""
    from .dlds import from_json_obj

    rep_extra = []
    edges = [tuple(e) for e in obj.get("ded_edges", [])]
    if len(set(edges)) != len(edges):
        rep_extra.append(("Simplicity", "duplicate deductive edge"))
    anc = [(a["src"], a["tgt"], tuple(a["path"])) for a in obj.get("anc_edges", [])]
    if len(set(anc)) != len(anc):
        rep_extra.append(("AncestorSimplicity", "duplicate ancestor edge"))
    if rep_extra:
        res = {name: ConditionResult() for name in CONDITIONS}
        for name, msg in rep_extra:
            res[name].fail(msg)
        return ValidityReport(res)
    return check_validity(from_json_obj(obj))


# -- level-sweep verifier ------------------------------------------------------------------

class _Reject(Exception):
    def __init__(self, kind: str, node: int, detail: str):
        super().__init__(detail)
        self.kind = kind
        self.node = node
        self.detail = detail


def verify_derivation(g: GroundedDLDS, delta) -> dict:
    """Sweep levels from the top down with per-edge and per-node registers.

    ``s1[(src, tgt)]`` maps remaining route -> dependency set for what travels
    on that edge; ``s2[node]`` maps route -> dependency set for what leaves the
    node.  The conclusion edge into the ground node must end up holding a
    single broadcast item whose set equals ``delta``.
    """
    d = g.dlds
    f = d.foundation
    diagnostics: List[dict] = []
    try:
        want = set_to_bits(f, [parse_formula(x) if isinstance(x, str) else x for x in delta])
    except Exception as exc:  # delta outside the foundation
        return {"valid": False, "final_dep": None,
                "diagnostics": [{"kind": "InvalidDelta", "node": None, "detail": str(exc)}]}

    def reject(kind, node, detail):
        raise _Reject(kind, node, detail)

    try:
        height_of: Dict[int, int] = {d.root: 0}
        layer = [d.root]
        while layer:
            nxt = []
            for w in layer:
                for v in d.inn[w]:
                    if v in height_of:
                        if height_of[v] != height_of[w] + 1:
                            reject("NotLeveled", v, "node sits on two levels")
                        continue
                    height_of[v] = height_of[w] + 1
                    nxt.append(v)
            layer = nxt
        if len(height_of) != len(d.label):
            reject("NotLeveled", None, "some nodes do not reach the conclusion")
        by_level: Dict[int, list] = {}
        for v, h in height_of.items():
            by_level.setdefault(h, []).append(v)
        top_level = max(by_level)

        anc_at: Dict[int, list] = {}
        for t, items in d.anc.items():
            for s, p in items:
                anc_at.setdefault(t, []).append(p)

        s1: Dict[Tuple[int, int], Dict[Tuple[int, ...], DepSet]] = {}
        s2: Dict[int, Dict[Tuple[int, ...], DepSet]] = {}

        def put(reg: dict, key, dep: DepSet, node: int) -> None:
            old = reg.get(key)
            if old is not None and old != dep:
                reject("InvalidPremisses", node, f"route {list(key)} holds two dependency sets")
            reg[key] = dep

        for h in range(top_level, -1, -1):
            for v in sorted(by_level[h]):
                lab = d.label[v]
                if v == g.ground_node:
                    (y,) = d.inn[v]
                    reg = s1.get((y, v), {})
                    if set(reg) != {("*",)}:
                        reject("InvalidPremisses", y, "conclusion does not reach the ground as one item")
                    s2[v] = {(): reg[("*",)]}
                    continue
                out_reg: Dict[Tuple[int, ...], DepSet] = {}
                hyp = v in d.hyp or not d.inn[v]
                if hyp:
                    single = DepSet(1 << f.ordinal(lab), len(f))
                    for p in anc_at.get(v, [()]):
                        put(out_reg, p, single, v)
                # gather premiss registers
                routed: Dict[Tuple[int, ...], list] = {}
                broadcast: list = []
                for y in d.inn[v]:
                    for rest, dep in s1.get((y, v), {}).items():
                        if rest == ("*",):
                            broadcast.append((y, dep))
                        else:
                            routed.setdefault(rest, []).append((y, dep))
                produced = []
                helpers = set()
                for rest in sorted(routed):
                    grp = routed[rest]
                    concl = _apply(d, v, grp)
                    extra = []
                    if len(grp) == 1:
                        extra = [b for b in broadcast
                                 if b[0] != grp[0][0] and _apply(d, v, grp + [b]) is not None]
                    if concl is not None and len(extra) > 1:
                        reject("InvalidPremisses", v, f"ambiguous premisses for route {list(rest)}")
                    if concl is None or len(extra) == 1:
                        if len(extra) != 1:
                            reject("WrongRule", v, _why(d, v, grp))
                        helpers.add(extra[0][0])
                        concl = _apply(d, v, grp + extra)
                    produced.append((rest, concl))
                if broadcast and not {y for y, _ in broadcast} <= helpers:
                    concl = _apply(d, v, broadcast)
                    if concl is None:
                        reject("WrongRule", v, _why(d, v, broadcast))
                    produced.append(((), concl))
                if anc_at.get(v) and v not in d.hyp and d.inn[v]:
                    plain = [c for r, c in produced if r == ()]
                    if len(plain) != 1:
                        reject("InvalidPremisses", v, "ancestor edges without a plain conclusion")
                    produced = [(r, c) for r, c in produced if r != ()]
                    produced += [(p, plain[0]) for p in anc_at[v]]
                for r, c in produced:
                    put(out_reg, r, c, v)
                if d.inn[v] and not hyp and not out_reg:
                    reject("InvalidPremisses", v, "no premiss reaches this node")
                s2[v] = out_reg
                # push along out-edges
                outs = d.out[v]
                if not outs:
                    continue
                by_color: Dict[int, list] = {}
                for t, e in outs.items():
                    by_color.setdefault(e.color, []).append(t)
                for t, e in outs.items():
                    s1[(v, t)] = {}
                for r, dep in out_reg.items():
                    if not r:
                        ts = by_color.get(0, [])
                        if not ts:
                            reject("InvalidColor", v, "broadcast item but no color-0 out-edge")
                        for t in ts:
                            put(s1[(v, t)], ("*",), dep, v)
                    else:
                        ts = by_color.get(r[0], [])
                        if len(ts) != 1:
                            reject("InvalidColor", v, f"route {list(r)} has {len(ts)} matching out-edges")
                        put(s1[(v, ts[0])], r[1:], dep, v)
                for t, e in outs.items():
                    reg = s1[(v, t)]
                    if not reg:
                        reject("InvalidPremisses", v, f"edge {v}->{t} carries nothing")
                    if e.dep is not LAMBDA:
                        if any(x != e.dep for x in reg.values()):
                            reject("WrongDependency", v, f"edge {v}->{t} label disagrees with its premisses")
        final_reg = s2[d.root]
        if set(final_reg) != {()}:
            reject("InvalidPremisses", d.root, "conclusion holds routed items")
        final = final_reg[()]
    except _Reject as exc:
        diagnostics.append({"kind": exc.kind, "node": exc.node, "detail": exc.detail})
        return {"valid": False, "final_dep": None, "diagnostics": diagnostics}
    if final != want:
        diagnostics.append({
            "kind": "WrongAssumptions", "node": d.root,
            "detail": f"derivation depends on {final}, expected {want}",
        })
    return {"valid": not diagnostics, "final_dep": final, "diagnostics": diagnostics}


def _apply(d: DLDS, v: int, prems: list) -> Optional[DepSet]:
    lab = d.label[v]
    f = d.foundation
    if d.inn[v] and len(prems) == 1:
        y, dep = prems[0]
        if isinstance(lab, Imp) and d.label[y] == lab.succedent:
            if lab.antecedent not in f:
                return dep
            return DepSet(dep.bits & ~(1 << f.ordinal(lab.antecedent)), dep.width)
        return None
    if len(prems) == 2:
        (ya, da), (yb, db) = prems
        la, lb = d.label[ya], d.label[yb]
        if lb == Imp(la, lab) or la == Imp(lb, lab):
            if da.width != db.width:
                return None
            return DepSet(da.bits | db.bits, da.width)
    return None


def _why(d: DLDS, v: int, prems: list) -> str:
    labels = ", ".join(str(d.label[y]) for y, _ in prems)
    rule = "->I" if len(prems) == 1 else "->E"
    return f"Wrong application of {rule} at {d.label[v]} from [{labels}]"


def delta_bits(f: Foundation, delta) -> DepSet:
    return set_to_bits(f, delta)
