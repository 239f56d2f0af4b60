"""Shared fixtures and independent oracles used across the test modules."""

from collections import Counter, deque

import networkx as nx

from hcproof.formula_core import LAMBDA, build_foundation
from hcproof.generators import gen_fibonacci_proof
from hcproof.nd_proof import prepare

# Twelve-formula order of the worked example, plus A3>A4 which the derivation
# also uses and which the printed order leaves out.
EXAMPLE_ORDER_12 = [
    "A1", "A2", "A3", "A4", "A5",
    "A1>A2", "A2>A3", "A4>A5", "A1>A5",
    "A1>(A2>A3)", "A2>(A3>A4)", "A3>(A4>A5)",
]
EXAMPLE_ORDER = EXAMPLE_ORDER_12 + ["A3>A4"]
EXAMPLE_PREMISES = ["A1>A2", "A1>(A2>A3)", "A2>(A3>A4)", "A3>(A4>A5)"]


def worked_example_tree():
    t = gen_fibonacci_proof(5)
    t.foundation = build_foundation([], explicit_order=EXAMPLE_ORDER)
    return t


def worked_example_dlds():
    return prepare(worked_example_tree())


def nd_open_assumptions(t):
    """Open assumptions at every node, read off the discharge edges.

    A leaf is open at node v when no node on the walk from the leaf down to v
    (v included) is the introduction that discharges it.
    """
    parent = {c: p for c, p in t.ded_edges}
    closer = {leaf: intro for leaf, intro in t.discharge_edges}
    has_prem = {p for _, p in t.ded_edges}
    leaves = [v for v in t.nodes if v not in has_prem]
    result = {v: set() for v in t.nodes}
    for leaf in leaves:
        cur = leaf
        while True:
            if cur != leaf and closer.get(leaf) == cur:
                break
            result[cur].add(t.label[leaf])
            if cur not in parent:
                break
            cur = parent[cur]
    return result


def tree_level_label_pairs(t):
    """Distinct (distance to root, label) pairs of a tree derivation."""
    children = {}
    for c, p in t.ded_edges:
        children.setdefault(p, []).append(c)
    dist = {t.root: 0}
    queue = deque([t.root])
    while queue:
        v = queue.popleft()
        for c in children.get(v, []):
            dist[c] = dist[v] + 1
            queue.append(c)
    return {(dist[v], t.label[v]) for v in t.nodes}


def duplicate_pairs_per_level(d):
    """Number of same-label node pairs summed over levels."""
    from hcproof.dlds import levels

    lev = levels(d)
    counts = Counter((lev[v], d.label[v]) for v in d.label)
    return sum(k * (k - 1) // 2 for k in counts.values())


def to_networkx(d):
    """Attribute-complete digraph for isomorphism checks (ancestor edges as edge attributes)."""
    g = nx.MultiDiGraph()
    for v in d.label:
        g.add_node(v, label=str(d.label[v]), hyp=v in d.hyp)
    for s, outs in d.out.items():
        for t, e in outs.items():
            g.add_edge(s, t, kind="ded", color=e.color,
                       dep="lambda" if e.dep is LAMBDA else str(e.dep))
    for t, items in d.anc.items():
        for s, p in items:
            g.add_edge(s, t, kind="anc", path=tuple(p))
    return g


def isomorphic(a, b):
    ga, gb = to_networkx(a), to_networkx(b)
    return nx.is_isomorphic(
        ga, gb,
        node_match=lambda x, y: x == y,
        edge_match=lambda x, y: sorted(map(repr, x.values())) == sorted(map(repr, y.values())),
    )


# Acceptance lines collected during the run and echoed in the terminal summary.
ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
