"""Five-operator mutation harness for grounded DLDS instances.

Every mutant differs from its source in exactly one place.  Mutants that
leave the structure unchanged (for example a path element replaced by the
same color) are never produced.
"""

import random

from hcproof.dlds import Edge, GroundedDLDS
from hcproof.flow_verify import check_validity, verify_derivation
from hcproof.formula_core import LAMBDA, DepSet

OPERATORS = ("flip_dep_bit", "delete_ded_edge", "delete_anc_edge", "perturb_path", "swap_labels")


def _copy(g):
    return GroundedDLDS(g.dlds.copy(), g.ground_node, g.final_dep)


def flip_dep_bit(g, rng):
    d = g.dlds
    edges = [(s, t) for s in sorted(d.out) for t, e in sorted(d.out[s].items()) if e.dep is not LAMBDA]
    if not edges:
        return None
    s, t = rng.choice(edges)
    m = _copy(g)
    e = m.dlds.out[s][t]
    bit = rng.randrange(e.dep.width)
    m.dlds.out[s][t] = Edge(e.color, DepSet(e.dep.bits ^ (1 << bit), e.dep.width))
    return m


def delete_ded_edge(g, rng):
    d = g.dlds
    edges = [(s, t) for s in sorted(d.out) for t in sorted(d.out[s])]
    if not edges:
        return None
    s, t = rng.choice(edges)
    m = _copy(g)
    m.dlds.remove_edge(s, t)
    return m


def delete_anc_edge(g, rng):
    items = g.dlds.anc_list()
    if not items:
        return None
    s, t, p = rng.choice(items)
    m = _copy(g)
    m.dlds.remove_anc(s, t, p)
    return m


def perturb_path(g, rng):
    items = [x for x in g.dlds.anc_list() if x[2]]
    if not items:
        return None
    s, t, p = rng.choice(items)
    i = rng.randrange(len(p))
    colors = {e.color for outs in g.dlds.out.values() for e in outs.values()} | {0, 1, 2}
    choices = sorted(c for c in colors | {max(colors) + 1} if c != p[i])
    q = p[:i] + (rng.choice(choices),) + p[i + 1:]
    if (s, q) in g.dlds.anc.get(t, set()):
        return None
    m = _copy(g)
    m.dlds.remove_anc(s, t, p)
    m.dlds.add_anc(s, t, q)
    return m


def swap_labels(g, rng):
    d = g.dlds
    nodes = sorted(d.label)
    pairs = [(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1:] if d.label[a] != d.label[b]]
    if not pairs:
        return None
    a, b = rng.choice(pairs)
    m = _copy(g)
    m.dlds.label[a], m.dlds.label[b] = d.label[b], d.label[a]
    return m


MUTATORS = {
    "flip_dep_bit": flip_dep_bit,
    "delete_ded_edge": delete_ded_edge,
    "delete_anc_edge": delete_anc_edge,
    "perturb_path": perturb_path,
    "swap_labels": swap_labels,
}


def rejected(m, delta) -> bool:
    try:
        if not verify_derivation(m, delta)["valid"]:
            return True
    except Exception:
        return True
    try:
        return not check_validity(m).ok
    except Exception:
        return True


def run_mutants(instances, per_instance, seed=0):
    """instances: list of (name, grounded DLDS, delta).

    Returns (counts per operator, survivors as (name, operator, mutant)).
    """
    rng = random.Random(seed)
    counts = {op: 0 for op in OPERATORS}
    survivors = []
    for name, g, delta in instances:
        for k in range(per_instance):
            op = OPERATORS[k % len(OPERATORS)]
            m = MUTATORS[op](g, rng)
            if m is None:
                continue
            counts[op] += 1
            if not rejected(m, delta):
                survivors.append((name, op, m))
    return counts, survivors
