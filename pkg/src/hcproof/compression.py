"""Horizontal compression: merging same-label nodes level by level.

Every rule of the catalogue is realised by one occurrence-preserving merge of
``v`` into ``u``.  The occurrences that flowed through ``u`` and ``v`` keep
their dependency sets and their destinations; only the routing information
(colors and ancestor-edge paths) is rewritten so that each bullet (out-target)
still receives exactly what it received before.  The rule name is derived
from the shape of the pair and drives which pass may fire it.
"""

from __future__ import annotations

import json
from bisect import bisect_right, insort
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

from .dlds import DLDS, Edge, levels, resolve_address, size_of, ADDRESS_FAILURE
from .flow_verify import Entry, EntryEngine, FlowError
from .formula_core import LAMBDA


class RuleId(str, Enum):
    R0HH = "R0HH"
    R0HI = "R0HI"
    R0HE = "R0HE"
    R0IH = "R0IH"
    R0IE = "R0IE"
    R0II = "R0II"
    R0EH = "R0EH"
    R0EI = "R0EI"
    R0EE = "R0EE"
    R1XH = "R1XH"
    R1XE = "R1XE"
    R1XI = "R1XI"
    Rv2EE = "Rv2EE"
    Re2EE = "Re2EE"
    Rv2EI = "Rv2EI"
    Re2EI = "Re2EI"
    Rv2EH = "Rv2EH"
    Re2EH = "Re2EH"
    Rv2IE = "Rv2IE"
    Re2IE = "Re2IE"
    Rv2II = "Rv2II"
    Re2II = "Re2II"
    Rv2IH = "Rv2IH"
    Re2IH = "Re2IH"
    Rv2HE = "Rv2HE"
    Re2HE = "Re2HE"
    Rv2HI = "Rv2HI"
    Re2HI = "Re2HI"
    Rv2HH = "Rv2HH"
    Re2HH = "Re2HH"
    Rv2XH = "Rv2XH"
    Re2XH = "Re2XH"
    Rv3XH = "Rv3XH"
    Re3XH = "Re3XH"
    Rv3XE = "Rv3XE"
    Re3XE = "Re3XE"
    Rv3XI = "Rv3XI"
    Re3XI = "Re3XI"

    def __str__(self) -> str:
        return self.value


MDE_RULES = frozenset({RuleId.Rv2HH, RuleId.Re2HH, RuleId.Re2XH, RuleId.Rv2XH})
MUE_RULES = frozenset(r for r in RuleId if r not in MDE_RULES)
# hypothesis collapses against an already shared hypothesis also run in the second pass
SECOND_PASS_RULES = MDE_RULES | {RuleId.Rv3XH, RuleId.Re3XH}
FIRST_PASS_RULES = frozenset(r for r in RuleId if r not in SECOND_PASS_RULES)
AESD_RULES = MDE_RULES

PHASES = {"MUE": FIRST_PASS_RULES, "MDE": SECOND_PASS_RULES, "ANY": frozenset(RuleId)}


class CompressionError(RuntimeError):
    pass


class StaleMatch(CompressionError):
    pass


@dataclass(frozen=True)
class Match:
    rule: RuleId
    u: int
    v: int
    level: int
    bindings: Tuple[Tuple[str, object], ...] = ()

    def binding(self, role: str):
        return dict(self.bindings).get(role)


# -- classification -------------------------------------------------------------

def _is_hyp(d: DLDS, v: int) -> bool:
    return not d.inn[v] or v in d.hyp


def _kind(d: DLDS, v: int) -> str:
    if _is_hyp(d, v):
        return "H"
    return "I" if len(d.inn[v]) == 1 else "E"


def is_collapsed(d: DLDS, v: int) -> bool:
    outs = d.out[v]
    if len(outs) >= 2 or len(d.inn[v]) > 2:
        return True
    if any(e.color != 0 or e.dep is LAMBDA for e in outs.values()):
        return True
    return v in d.hyp and bool(d.inn[v])


def pair_features(d: DLDS, v: int) -> Tuple[bool, bool, str]:
    """(targeted by an ancestor edge, collapsed, kind) of a node."""
    return v in d.anc, is_collapsed(d, v), _kind(d, v)


def rule_for(fu: Tuple[bool, bool, str], fv: Tuple[bool, bool, str], variant: str) -> RuleId:
    """Rule for a same-label pair from the two feature triples and the shared-target variant."""
    tu, cu, ku = fu
    tv, cv, kv = fv
    if tu and tv:
        lu = "X" if ku == "H" and cu else ku
        lv = "X" if kv == "H" and cv else kv
        if "X" in (lu, lv):
            return RuleId(f"R{variant}2XH") if {lu, lv} <= {"X", "H"} else RuleId(f"R{variant}2{ku}{kv}")
        return RuleId(f"R{variant}2{lu}{lv}")
    if tu or tv:
        other_collapsed = cv if tu else cu
        targeted_kind = ku if tu else kv
        if other_collapsed:
            return RuleId(f"R{variant}3X{targeted_kind}")
        return RuleId(f"R{variant}2{ku}{kv}")
    if cu or cv:
        return RuleId(f"R1X{kv if cu else ku}")
    return RuleId(f"R0{ku}{kv}")


def classify_pair(d: DLDS, u: int, v: int, lev: Optional[Dict[int, int]] = None) -> Optional[RuleId]:
    if u == v or u not in d.label or v not in d.label or d.label[u] != d.label[v]:
        return None
    if lev is not None and lev.get(u) != lev.get(v):
        return None
    if u == d.root or v == d.root:
        return None
    variant = "e" if set(d.out[u]) & set(d.out[v]) else "v"
    return rule_for(pair_features(d, u), pair_features(d, v), variant)


# -- merge engine ------------------------------------------------------------------

@dataclass
class _Item:
    owner: int
    path: Tuple[int, ...]
    dep: object
    kind: str
    members: tuple
    target: int
    rest: Tuple[int, ...]
    broadcast: bool


class MergeError(CompressionError):
    pass


class _Engine:
    """Mutable compression state with an undo journal for trial rewrites."""

    def __init__(self, d: DLDS, checked: bool = False):
        self.d = d
        self.checked = checked
        self.entries = EntryEngine(d)
        self.lev = levels(d)
        self.journal: list = []
        self.depth = 0

    # journaled primitives
    def _log(self, op) -> None:
        if self.depth:
            self.journal.append(op)

    def set_edge(self, s: int, t: int, color: int, dep) -> None:
        old = self.d.out[s].get(t)
        self._log(("edge", s, t, old))
        self.d.set_edge(s, t, color, dep)

    def del_edge(self, s: int, t: int) -> Edge:
        old = self.d.out[s][t]
        self._log(("edge", s, t, old))
        self.d.remove_edge(s, t)
        return old

    def add_anc(self, s: int, t: int, p) -> None:
        p = tuple(p)
        if (s, p) in self.d.anc.get(t, set()):
            return
        self._log(("anc+", s, t, p))
        self.d.add_anc(s, t, p)

    def del_anc(self, s: int, t: int, p) -> None:
        p = tuple(p)
        if (s, p) not in self.d.anc.get(t, set()):
            return
        self._log(("anc-", s, t, p))
        self.d.remove_anc(s, t, p)

    def mark(self, v: int, on: bool) -> None:
        if (v in self.d.hyp) == on:
            return
        self._log(("hyp", v, not on))
        (self.d.hyp.add if on else self.d.hyp.discard)(v)

    def begin(self) -> int:
        self.depth += 1
        return len(self.journal)

    def commit(self, marker: int) -> None:
        self.depth -= 1
        if not self.depth:
            self.journal = []

    def rollback(self, marker: int) -> None:
        ops = self.journal[marker:]
        del self.journal[marker:]
        self.depth -= 1
        d = self.d
        nodes = set()
        for op in reversed(ops):
            nodes.update(x for x in op[1:3] if isinstance(x, int))
            if op[0] == "edge":
                _, s, t, old = op
                if t in d.out[s]:
                    d.remove_edge(s, t)
                if old is not None:
                    d.set_edge(s, t, old.color, old.dep)
            elif op[0] == "anc+":
                d.remove_anc(op[1], op[2], op[3])
            elif op[0] == "anc-":
                d.add_anc(op[1], op[2], op[3])
            elif op[0] == "hyp":
                (d.hyp.add if op[2] else d.hyp.discard)(op[1])
        self.invalidate_below(n for n in nodes if n in d.label)

    # helpers
    def ents(self, v: int) -> Dict[Tuple[int, ...], object]:
        return self.entries.get(v)

    def snapshot(self, v: int) -> Dict[Tuple[int, ...], object]:
        return {p: e.dep for p, e in self.ents(v).items()}

    def invalidate_below(self, nodes: Iterable[int]) -> None:
        """Drop cached entries of ``nodes`` and everything below them."""
        stack = list(nodes)
        seen = set()
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            self.entries.invalidate(v)
            stack.extend(self.d.out[v])

    # -- items ---------------------------------------------------------------------
    def items_of(self, z: int) -> List[_Item]:
        d = self.d
        out = []
        for p, ent in self.ents(z).items():
            if not p:
                for t, e in d.out[z].items():
                    if e.color == 0:
                        out.append(_Item(z, p, ent.dep, ent.kind, ent.members, t, (), True))
            else:
                ts = [t for t, e in d.out[z].items() if e.color == p[0]]
                if len(ts) != 1:
                    raise MergeError(f"node {z} routes {list(p)} ambiguously")
                out.append(_Item(z, p, ent.dep, ent.kind, ent.members, ts[0], p[1:], False))
        return out

    def route_end(self, t: int, rest: Tuple[int, ...]) -> int:
        if not rest:
            return t
        end = resolve_address(self.d, t, rest)
        if end is ADDRESS_FAILURE:
            raise MergeError(f"route {list(rest)} from {t} does not resolve")
        return end

    # -- rerouting -----------------------------------------------------------------
    def plan_reroute(self, y: int, py: Tuple[int, ...], new_paths: list, plan: dict) -> None:
        """Record that entry ``py`` of ``y`` must become ``new_paths`` (each with its end node)."""
        plan.setdefault((y, py), []).extend(new_paths)

    def apply_reroutes(self, plan: dict, touched: set) -> None:
        d = self.d
        work = dict(plan)
        while work:
            (y, py), targets = work.popitem()
            touched.add(y)
            ent = self.ents(y).get(py)
            if ent is None:
                raise MergeError(f"node {y} has no entry {list(py)}")
            marked = _is_hyp(d, y)
            via_anc = any(p == py for _, p in d.anc.get(y, ()))
            if ent.kind == "hyp" and marked:
                if py and not via_anc:
                    raise MergeError(f"hypothesis entry {list(py)} at {y} has no ancestor edge")
                if not py and y in d.anc:
                    raise MergeError(f"node {y} mixes broadcast and routed hypothesis entries")
                self._check_broadcast_consumers(y, py)
                for s, p in list(d.anc.get(y, ())):
                    if p == py:
                        self.del_anc(s, y, p)
                for end, np in targets:
                    self.add_anc(end, y, np)
            elif ent.kind == "der" and not marked and (via_anc or not py):
                if not py and y in d.anc:
                    raise MergeError(f"node {y} has a broadcast entry and ancestor edges")
                self._check_broadcast_consumers(y, py)
                for s, p in list(d.anc.get(y, ())):
                    if p == py:
                        self.del_anc(s, y, p)
                for end, np in targets:
                    self.add_anc(end, y, np)
            elif ent.kind == "der" and py:
                for w, pw in ent.members:
                    if pw:
                        key = (w, pw)
                        work.setdefault(key, []).extend((end, (pw[0],) + np) for end, np in targets)
            else:
                raise MergeError(f"cannot reroute entry {list(py)} of node {y}")

    def _check_broadcast_consumers(self, y: int, py) -> None:
        if py:
            return
        # a broadcast entry that is rerouted must not feed nodes outside the merge
        zero = [t for t, e in self.d.out[y].items() if e.color == 0]
        if not set(zero) <= self._merge_pair:
            raise MergeError(f"broadcast node {y} also feeds nodes outside the merge")

    # -- merges --------------------------------------------------------------------
    def merge(self, u: int, v: int) -> None:
        """Merge ``v`` into ``u``; on failure the graph is left untouched and MergeError raised."""
        d = self.d
        self._merge_pair = {u, v}
        bullets = list(dict.fromkeys(d.targets(u) + d.targets(v)))
        before = {t: self.snapshot(t) for t in bullets} if self.checked else {}
        marker = self.begin()
        try:
            if not d.inn[u] and not d.inn[v]:
                self._merge_tops(u, v, bullets, before)
            else:
                self._merge_general(u, v, bullets, before)
        except (MergeError, FlowError) as exc:
            self.rollback(marker)
            raise MergeError(str(exc)) from exc
        self.commit(marker)
        self.entries.invalidate(v)
        d.remove_node(v)
        self.lev.pop(v, None)

    def _assign_colors(self, u: int, bullets: list, zero_targets: set) -> Dict[int, int]:
        d = self.d
        colors: Dict[int, int] = {}
        for t in zero_targets:
            colors[t] = 0
        rest = [t for t in bullets if t not in zero_targets]
        if not zero_targets and len(rest) == 1:
            t = rest[0]
            colors[t] = d.out[u][t].color if t in d.out[u] else 0
            return colors
        used = set()
        for t in rest:
            if t in d.out[u] and d.out[u][t].color > 0 and d.out[u][t].color not in used:
                colors[t] = d.out[u][t].color
                used.add(colors[t])
        nxt = 1
        for t in rest:
            if t in colors:
                continue
            while nxt in used:
                nxt += 1
            colors[t] = nxt
            used.add(nxt)
        return colors

    def _surgery(self, u: int, v: int, colors: Dict[int, int], edge_deps: Dict[int, object]) -> None:
        """Move v's edges onto u and recolor u's out-edges."""
        d = self.d
        for y in list(d.inn[v]):
            e = self.del_edge(y, v)
            if y in d.out and u in d.out[y]:
                old = d.out[y][u]
                dep = old.dep if old.dep == e.dep else LAMBDA
                self.set_edge(y, u, old.color, dep)
            else:
                self.set_edge(y, u, e.color, e.dep)
        for t in list(d.out[v]):
            self.del_edge(v, t)
        for t in list(d.out[u]):
            self.del_edge(u, t)
        for t, c in colors.items():
            self.set_edge(u, t, c, edge_deps[t])
        for t, p in list(d.anc_src.get(v, ())):
            self.del_anc(v, t, p)
            self.add_anc(u, t, p)

    def _edge_deps(self, u: int, v: int, items_v: List[_Item], bullets: list) -> Dict[int, object]:
        d = self.d
        deps: Dict[int, object] = {}
        for t in bullets:
            if t in d.out[u] and t in d.out[v]:
                deps[t] = LAMBDA
            elif t in d.out[u]:
                deps[t] = d.out[u][t].dep
            else:
                carried = {it.dep for it in items_v if it.target == t}
                deps[t] = next(iter(carried)) if len(carried) == 1 else LAMBDA
        return deps

    def summary(self, z: int):
        """(hypothesis targets, derived targets, hypothesis entries all broadcast) of ``z``."""
        meta = self.entries.meta
        m = meta.get(z)
        if m is None:
            items = self.items_of(z)
            m = (
                frozenset(it.target for it in items if it.kind == "hyp"),
                frozenset(it.target for it in items if it.kind == "der"),
                all(it.broadcast for it in items if it.kind == "hyp"),
            )
            meta[z] = m
        return m

    def _finish(self, u: int, v: int, bullets: list, before: dict, touched: set, expect_u=None) -> None:
        """Refresh caches; in checked mode recompute and compare the merged node and bullets.

        Nodes below the bullets keep valid caches because bullet entries are
        preserved by construction (and verified when ``checked`` is set).
        """
        self.entries.invalidate(*(touched | {u, v}), *bullets)
        if expect_u is not None:
            if self.checked:
                got = self.snapshot(u)
                if got != {p: e.dep for p, e in expect_u.items()}:
                    raise MergeError(f"merged node {u} carries unexpected entries")
            else:
                self.entries.cache[u] = expect_u
        if self.checked:
            for t in bullets:
                if self.snapshot(t) != before[t]:
                    raise MergeError(f"bullet {t} changed while merging {v} into {u}")

    def _merge_general(self, u: int, v: int, bullets: list, before: dict) -> None:
        d = self.d
        su, sv = self.summary(u), self.summary(v)
        hyp_targets, der_targets = su[0] | sv[0], su[1] | sv[1]
        has_hyp = bool(hyp_targets)
        bcast = has_hyp and su[2] and sv[2] and not (hyp_targets & der_targets)
        colors = self._assign_colors(u, bullets, hyp_targets if bcast else set())
        ents_u = self.ents(u)
        plain_u = ents_u.get(())
        # the survivor's occurrences keep their routes when its colors and broadcast status survive
        stable = not d.anc.get(u) and all(colors[t] == e.color for t, e in d.out[u].items()) and (
            plain_u is None or (plain_u.kind == "hyp" and bcast)
        ) and (not su[0] or su[2] == bcast)
        items_v = self.items_of(v)
        items = items_v if stable else self.items_of(u) + items_v
        expect: Dict[Tuple[int, ...], Entry] = ents_u if stable else {}
        plan: dict = {}
        hyp_anc = []

        def put(np, it, members):
            old = expect.get(np)
            if old is not None and old.dep != it.dep:
                raise MergeError("two occurrences would share a route")
            prev = old.members if old is not None else ()
            expect[np] = Entry(it.dep, it.kind, prev + members)

        for it in items:
            if it.kind == "hyp" and bcast:
                put((), it, ())
                continue
            np = (colors[it.target],) + it.rest
            end = self.route_end(it.target, it.rest)
            if it.kind == "hyp":
                put(np, it, ())
                hyp_anc.append((end, np))
                continue
            members = []
            for y, py in it.members:
                c = d.out[y][it.owner].color
                if u in d.out[y]:
                    c = d.out[y][u].color
                self.plan_reroute(y, py, [(end, (c,) + np)], plan)
                members.append((y, (c,) + np))
            put(np, it, tuple(members))
        touched: set = set()
        for z in ((v,) if stable else (u, v)):
            for s, p in list(d.anc.get(z, ())):
                self.del_anc(s, z, p)
        deps = self._edge_deps(u, v, items_v, bullets)
        self.apply_reroutes(plan, touched)
        self._surgery(u, v, colors, deps)
        for end, np in hyp_anc:
            self.add_anc(end, u, np)
        if has_hyp and d.inn[u]:
            self.mark(u, True)
        elif not has_hyp:
            self.mark(u, False)
        self._finish(u, v, bullets, before, touched, expect)
        self.entries.meta[u] = (hyp_targets, der_targets, bcast or not has_hyp)

    def _merge_tops(self, u: int, v: int, bullets: list, before: dict) -> None:
        """Two top nodes: broadcast when both are plain untargeted leaves, else explicit routes."""
        d = self.d
        plain = (
            u not in d.anc and v not in d.anc
            and all(e.color == 0 for z in (u, v) for e in d.out[z].values())
            and not set(d.out[u]) & set(d.out[v])
        )
        items_v = self.items_of(v)
        if not plain:
            self._merge_tops_explicit(u, v, bullets, before, items_v)
            return
        dep = items_v[0].dep
        self._surgery(u, v, {t: 0 for t in bullets}, {t: dep for t in bullets})
        self.mark(u, True)
        self._finish(u, v, bullets, before, {u, v}, {(): Entry(dep, "hyp")})

    def _snapshot_or_none(self, t: int):
        try:
            return self.snapshot(t)
        except FlowError:
            return None

    def _merge_tops_explicit(self, u, v, bullets, before, items_v) -> None:
        d = self.d
        colors = self._assign_colors(u, bullets, set())
        ents_u = self.ents(u)
        stable = () not in ents_u and all(colors[t] == e.color for t, e in d.out[u].items())
        items = items_v if stable else self.items_of(u) + items_v
        expect = ents_u if stable else {}
        anc = []
        for it in items:
            np = (colors[it.target],) + it.rest
            expect[np] = Entry(it.dep, "hyp")
            anc.append((self.route_end(it.target, it.rest), np))
        for z in ((v,) if stable else (u, v)):
            for s, p in list(d.anc.get(z, ())):
                self.del_anc(s, z, p)
        self._surgery(u, v, colors, {t: items[0].dep for t in bullets})
        for end, np in anc:
            self.add_anc(end, u, np)
        self.mark(u, True)
        self._finish(u, v, bullets, before, {u, v}, expect)

    def _reset_from(self, t: int, wanted: dict, touched: set) -> bool:
        """Turn ``t`` into a node whose plain instance is replicated by ancestor edges."""
        d = self.d
        if _is_hyp(d, t) or () in wanted and len(wanted) > 1:
            return False
        deps = set(wanted.values())
        if len(deps) != 1:
            return False
        for s, p in list(d.anc.get(t, ())):
            self.del_anc(s, t, p)
        for p in wanted:
            if p:
                end = resolve_address(d, t, p)
                if end is ADDRESS_FAILURE:
                    return False
                self.add_anc(end, t, p)
        touched.add(t)
        self.entries.invalidate(t)
        try:
            return self.snapshot(t) == wanted
        except FlowError:
            return False

    # -- route shortening ---------------------------------------------------------
    def shortenable(self, t: int) -> bool:
        d = self.d
        if t not in d.anc or (t in d.hyp and d.inn[t]):
            return False
        paths = [p for _, p in d.anc[t]]
        colors = {p[0] for p in paths if p}
        single = len(d.out[t]) == 1 and colors == {0}
        return single or any(len(p) > 1 for p in paths)

    def shorten(self, *nodes: int) -> bool:
        """Replace the full routes on ``nodes`` by one-hop ones, pushing the rest downward."""
        d = self.d
        nodes = [t for t in nodes if self.shortenable(t)]
        if not nodes:
            return False
        bullets = list(dict.fromkeys(b for t in nodes for b in d.out[t]))
        before = {b: self.snapshot(b) for b in bullets}
        marker = self.begin()
        touched = set(nodes) | set(bullets)
        try:
            for t in nodes:
                colors = sorted({p[0] for _, p in d.anc[t] if p})
                single = len(d.out[t]) == 1 and colors == [0]
                for s, p in list(d.anc[t]):
                    self.del_anc(s, t, p)
                if not single:
                    for c in colors:
                        (b,) = [x for x in d.out[t] if d.out[t][x].color == c]
                        self.add_anc(b, t, (c,))
            self.entries.invalidate(*touched)
            for b in bullets:
                if self._snapshot_or_none(b) != before[b]:
                    if not self._reset_from(b, before[b], touched):
                        raise MergeError("shortening breaks a bullet")
            self.commit(marker)
        except (MergeError, FlowError):
            self.rollback(marker)
            return False
        return True


# -- public driver ---------------------------------------------------------------------

def _nodes_at(d: DLDS, lev: Dict[int, int], j: int) -> list:
    return sorted((v for v, l in lev.items() if l == j and v in d.label), key=lambda x: (d.order[x], x))


def find_redex(d: DLDS, lev_or_level, phase="MUE", lev: Optional[Dict[int, int]] = None) -> Optional[Match]:
    """First same-label pair at the given level whose rule belongs to ``phase``."""
    j = lev_or_level
    lev = lev if lev is not None else levels(d)
    allowed = PHASES[phase] if isinstance(phase, str) else frozenset(phase)
    groups: Dict[object, list] = {}
    for x in _nodes_at(d, lev, j):
        groups.setdefault(d.label[x], []).append(x)
    best = None
    for nodes in groups.values():
        if len(nodes) < 2:
            continue
        for i, u in enumerate(nodes):
            if best is not None and (d.order[u], u) >= (d.order[best.u], best.u):
                break
            found = None
            for w in nodes[i + 1:]:
                r = classify_pair(d, u, w)
                if r in allowed:
                    found = Match(r, u, w, j, _bindings(d, u, w))
                    break
            if found:
                best = found
                break
    return best


def _bindings(d: DLDS, u: int, v: int) -> tuple:
    return (
        ("u", u),
        ("v", v),
        ("premisses_u", tuple(d.inn[u])),
        ("premisses_v", tuple(d.inn[v])),
        ("bullets", tuple(dict.fromkeys(d.targets(u) + d.targets(v)))),
    )


def apply_rule(d: DLDS, m: Match) -> DLDS:
    current = classify_pair(d, m.u, m.v)
    if current != m.rule:
        raise StaleMatch(f"match {m.rule} on ({m.u},{m.v}) no longer applies (now {current})")
    out = d.copy()
    eng = _Engine(out, checked=True)
    if eng.lev.get(m.u) != m.level or eng.lev.get(m.v) != m.level:
        raise StaleMatch("match level is out of date")
    eng.merge(m.u, m.v)
    return out


@dataclass
class CompressResult:
    dlds: DLDS
    trace: List[dict] = field(default_factory=list)
    kept_original: bool = False


KEEP_ORIGINAL = "keep_original"


def compress(d: DLDS, mue_only: bool = False, on_step=None, shorten: bool = True,
             checked: bool = False, keep_smaller: bool = True) -> DLDS:
    return compress_with_trace(d, mue_only, on_step, shorten, checked, keep_smaller).dlds


def compress_with_trace(d: DLDS, mue_only: bool = False, on_step=None, shorten: bool = True,
                        checked: bool = False, keep_smaller: bool = True) -> CompressResult:
    """Two passes over levels 1..height, then route shortening.

    ``checked`` recomputes the merged node and its bullets after every merge
    and raises on any discrepancy; ``on_step`` sees the DLDS after each step.
    With ``keep_smaller`` a full run whose result outgrows the input returns a
    copy of the input instead, recorded as a final ``keep_original`` trace
    step.  ``mue_only`` runs always return the first-pass intermediate.
    """
    out = d.copy()
    eng = _Engine(out, checked)
    lev = eng.lev
    h = max(lev.values()) if lev else 0
    by_level: Dict[int, Dict[object, list]] = {}
    for x, j in lev.items():
        by_level.setdefault(j, {}).setdefault(out.label[x], []).append(x)
    for groups in by_level.values():
        for nodes in groups.values():
            nodes.sort(key=lambda x: (out.order[x], x))
    trace: List[dict] = []

    def run_pass(rules: frozenset, pass_no: int) -> bool:
        changed = False
        for j in range(1, h + 1):
            queue = _LevelQueue(out, by_level.get(j, {}), j, rules)
            while True:
                m = queue.best()
                if m is None:
                    break
                eng.merge(m.u, m.v)
                queue.merged(m.u, m.v)
                step = {"step": len(trace) + 1, "rule": str(m.rule), "u": m.u, "v": m.v,
                        "level": j, "pass": pass_no}
                trace.append(step)
                changed = True
                if on_step is not None:
                    on_step(out, step)
        return changed

    run_pass(FIRST_PASS_RULES, 1)
    if not mue_only:
        for _ in range(len(out.label) + 1):
            a = run_pass(SECOND_PASS_RULES, 2)
            b = run_pass(frozenset(RuleId), 2)
            if not (a or b):
                break
        if shorten and shorten_routes(eng, on_step):
            trace.append({"step": len(trace) + 1, "rule": "shorten", "u": None, "v": None,
                          "level": None, "pass": 3})
    if keep_smaller and not mue_only and size_of(out) > size_of(d):
        trace.append({"step": len(trace) + 1, "rule": KEEP_ORIGINAL, "u": None, "v": None,
                      "level": None, "pass": 3})
        return CompressResult(d.copy(), trace, kept_original=True)
    return CompressResult(out, trace)


def shorten_routes(eng: _Engine, on_step=None) -> int:
    """Shorten ancestor routes from the top level downward; returns how many nodes changed."""
    d = eng.d
    lev = eng.lev
    count = 0
    for j in sorted(set(lev.values()), reverse=True):
        row = [x for x in sorted((x for x in d.label if lev[x] == j), key=lambda x: (d.order[x], x))
               if eng.shortenable(x)]
        if not row:
            continue
        if eng.shorten(*row):
            done = row
        else:
            done = [t for t in row if eng.shorten(t)]
        count += len(done)
        if done and on_step is not None:
            on_step(d, {"step": None, "rule": "shorten", "u": done[0], "v": None, "level": j})
    return count


class _LevelQueue:
    """First firing partner per node within one level, kept current across merges.

    A merge at this level only changes how the survivor and the removed node
    classify against their neighbours, so only those pairs are re-examined.
    Partners are looked up per feature class, since a pair's rule depends only
    on the two feature triples and on whether the nodes share a target.
    """

    def __init__(self, d: DLDS, groups: Dict[object, list], level: int, rules: frozenset):
        self.d, self.level, self.rules = d, level, rules
        self.groups = groups
        self.rank: Dict[int, int] = {}
        self.feat: Dict[int, tuple] = {}
        self.classes: Dict[object, Dict[tuple, list]] = {}
        self.table: Dict[tuple, Tuple[RuleId, RuleId]] = {}
        self.by_rank = {lab: list(nodes) for lab, nodes in groups.items()}
        for lab, nodes in groups.items():
            cls: Dict[tuple, list] = {}
            for i, x in enumerate(nodes):
                self.rank[x] = i
                f = self.feat[x] = pair_features(d, x)
                cls.setdefault(f, []).append(i)
            self.classes[lab] = cls
        self.hit: Dict[int, Optional[Tuple[int, RuleId]]] = {}
        for nodes in groups.values():
            for x in nodes:
                self.hit[x] = self._scan(nodes, x)

    def _rules(self, fu, fv):
        key = (fu, fv)
        got = self.table.get(key)
        if got is None:
            got = self.table[key] = (rule_for(fu, fv, "v"), rule_for(fu, fv, "e"))
        return got

    def _scan(self, nodes: list, u: int):
        d = self.d
        ru, fu = self.rank[u], self.feat[u]
        lab = d.label[u]
        outs = d.out[u]
        best = None
        for f, ranks in self.classes[lab].items():
            if not ranks or ranks[-1] <= ru:
                continue
            rv, re_ = self._rules(fu, f)
            okv, oke = rv in self.rules, re_ in self.rules
            if not (okv or oke):
                continue
            if okv:
                for r in ranks[bisect_right(ranks, ru):]:
                    w = self.by_rank[lab][r]
                    if any(t in outs for t in d.out[w]):
                        if oke:
                            cand = (r, w, re_)
                            break
                        continue
                    cand = (r, w, rv)
                    break
                else:
                    cand = None
            else:
                picks = [(self.rank[w], w) for t in outs for w in d.inn[t]
                         if w != u and self.feat.get(w) == f and self.rank[w] > ru and d.label[w] == lab]
                cand = (min(picks)[0], min(picks)[1], re_) if picks else None
            if cand is not None and (best is None or cand[0] < best[0]):
                best = cand
        return None if best is None else (best[1], best[2])

    def best(self) -> Optional[Match]:
        found = None
        for nodes in self.groups.values():
            for u in nodes:
                h = self.hit[u]
                if h is not None:
                    if found is None or (self.d.order[u], u) < (self.d.order[found.u], found.u):
                        found = Match(h[1], u, h[0], self.level)
                    break
        return found

    def merged(self, u: int, v: int) -> None:
        d = self.d
        lab = d.label[u]
        nodes = self.groups[lab]
        cls = self.classes[lab]
        cls[self.feat[v]].remove(self.rank[v])
        cls[self.feat[u]].remove(self.rank[u])
        f = self.feat[u] = pair_features(d, u)
        insort(cls.setdefault(f, []), self.rank[u])
        nodes.remove(v)
        self.hit.pop(v, None)
        self.feat.pop(v, None)
        ru = self.rank[u]
        for x in nodes:
            h = self.hit[x]
            rx = self.rank[x]
            if rx < ru:
                if h is None or h[0] in (u, v) or self.rank[h[0]] > ru:
                    r = classify_pair(d, x, u)
                    if r in self.rules:
                        self.hit[x] = (u, r)
                    elif h is not None and h[0] in (u, v):
                        self.hit[x] = self._scan(nodes, x)
            elif x == u:
                self.hit[x] = self._scan(nodes, x)
            elif h is not None and h[0] == v:
                self.hit[x] = self._scan(nodes, x)


def _next_match(d: DLDS, groups: Dict[object, list], j: int, rules: frozenset) -> Optional[Match]:
    best = None
    for nodes in groups.values():
        if len(nodes) < 2:
            continue
        for i, u in enumerate(nodes):
            if best is not None and (d.order[u], u) >= (d.order[best.u], best.u):
                break
            hit = None
            for w in nodes[i + 1:]:
                r = classify_pair(d, u, w)
                if r in rules:
                    hit = Match(r, u, w, j)
                    break
            if hit:
                best = hit
                break
    return best


def write_trace(trace: List[dict], path) -> None:
    with open(path, "w") as fh:
        for step in trace:
            fh.write(json.dumps(step, sort_keys=True) + "\n")


def replay_trace(d: DLDS, trace: Iterable[dict]) -> DLDS:
    """Re-apply a recorded rule sequence; route shortening is re-run when the trace asks for it."""
    out = d.copy()
    eng = _Engine(out)
    shortened = False
    for step in trace:
        if step["rule"] == KEEP_ORIGINAL:
            return d.copy()
        if step["rule"] == "shorten":
            if not shortened:
                shorten_routes(eng)
                shortened = True
            continue
        rule = RuleId(step["rule"])
        got = classify_pair(out, step["u"], step["v"])
        if got != rule:
            raise StaleMatch(f"step {step['step']}: expected {rule}, found {got}")
        eng.merge(step["u"], step["v"])
    return out
