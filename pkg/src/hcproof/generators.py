"""Deterministic proof families plus a seeded random derivation builder."""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .formula_core import Atom, Formula, Imp
from .nd_proof import TreeDerivation, greedify


class GeneratorError(ValueError):
    pass


class _Builder:
    def __init__(self):
        self.label: Dict[int, Formula] = {}
        self.edges: List[Tuple[int, int]] = []

    def leaf(self, f: Formula) -> int:
        v = len(self.label)
        self.label[v] = f
        return v

    def elim(self, minor: int, major: int) -> int:
        f = self.label[major]
        if not isinstance(f, Imp) or f.antecedent != self.label[minor]:
            raise GeneratorError("ill-formed elimination")
        v = self.leaf(f.succedent)
        self.edges += [(minor, v), (major, v)]
        return v

    def intro(self, antecedent: Formula, premiss: int) -> int:
        v = self.leaf(Imp(antecedent, self.label[premiss]))
        self.edges.append((premiss, v))
        return v

    def finish(self, root: int) -> TreeDerivation:
        t = TreeDerivation(sorted(self.label), dict(self.label), list(self.edges), set(), root)
        return greedify(t)


# -- Fibonacci family ----------------------------------------------------------

def _atom(k: int) -> Atom:
    return Atom(f"A{k}")


def fibonacci_premises(n: int) -> List[Formula]:
    prem = [Imp(_atom(1), _atom(2))]
    prem += [Imp(_atom(i), Imp(_atom(i + 1), _atom(i + 2))) for i in range(1, n - 1)]
    return prem


def gen_fibonacci_proof(n: int) -> TreeDerivation:
    """Derivation of A1>An from A1>A2 and Ai>(A(i+1)>A(i+2)).

    A_k is obtained from A_(k-1) and A_(k-1)>A_k, the latter from A_(k-2) and
    the premise A_(k-2)>(A_(k-1)>A_k).  Minor premisses always come first.
    """
    if not isinstance(n, int) or n < 3:
        raise GeneratorError("the Fibonacci family starts at n = 3")
    b = _Builder()

    def derive(k: int) -> int:
        if k == 1:
            return b.leaf(_atom(1))
        if k == 2:
            return b.elim(b.leaf(_atom(1)), b.leaf(Imp(_atom(1), _atom(2))))
        minor = derive(k - 1)
        inner_minor = derive(k - 2)
        premise = b.leaf(Imp(_atom(k - 2), Imp(_atom(k - 1), _atom(k))))
        major = b.elim(inner_minor, premise)
        return b.elim(minor, major)

    top = derive(n)
    return b.finish(b.intro(_atom(1), top))


def fibonacci_tree_size(k: int) -> int:
    """Node count of the derivation of A_k before the final introduction."""
    sizes = [0, 1, 3]
    while len(sizes) <= k:
        sizes.append(sizes[-1] + sizes[-2] + 3)
    return sizes[k]


# -- digraphs and non-hamiltonicity -----------------------------------------------

@dataclass(frozen=True)
class Digraph:
    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 1:
            raise GeneratorError("a digraph needs at least one vertex")
        for a, b in self.edges:
            if not (1 <= a <= self.n and 1 <= b <= self.n):
                raise GeneratorError(f"edge ({a},{b}) mentions an unknown vertex")
            if a == b:
                raise GeneratorError(f"self-loop at {a}")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Digraph":
        try:
            return cls(int(obj["n"]), frozenset((int(a), int(b)) for a, b in obj["edges"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise GeneratorError(f"malformed digraph document: {exc}") from exc

    @classmethod
    def loads(cls, text: str) -> "Digraph":
        return cls.from_json_obj(json.loads(text))


def is_hamiltonian(g: Digraph) -> bool:
    for perm in itertools.permutations(range(1, g.n + 1)):
        if all((perm[i], perm[i + 1]) in g.edges for i in range(g.n - 1)):
            return True
    return False


def position_atom(k: int, v: int) -> Atom:
    return Atom(f"X{k}v{v}")


GOAL = Atom("q")


def occupied_formula(k: int, n: int) -> Formula:
    """Position k holds some vertex, written as (Xk1>q)>((Xk2>q)>...>q)."""
    f: Formula = GOAL
    for v in range(n, 0, -1):
        f = Imp(Imp(position_atom(k, v), GOAL), f)
    return f


def _conflict(g: Digraph, assign: List[int]) -> Optional[Tuple[int, int]]:
    """Earlier position clashing with the last one, if any (1-based positions)."""
    k = len(assign)
    last = assign[-1]
    for i in range(k - 1):
        if assign[i] == last:
            return i + 1, k
    if k >= 2 and (assign[-2], last) not in g.edges:
        return k - 1, k
    return None


def nonhamiltonian_conclusion(n: int) -> Formula:
    f: Formula = GOAL
    for k in range(n, 0, -1):
        f = Imp(occupied_formula(k, n), f)
    return f


def gen_nonhamiltonian_proof(g: Digraph) -> TreeDerivation:
    """Case analysis over vertex placements deriving q, closed over the placement premises.

    Open hypotheses are the clash clauses X{i}a>(X{k}b>q) for repeated vertices
    and for consecutive non-edges; every branch of the case split hits one.
    """
    if is_hamiltonian(g):
        raise GeneratorError("graph is Hamiltonian; no refutation exists")
    n = g.n
    b = _Builder()

    def refute(assign: List[int]) -> int:
        k = len(assign)
        if k:
            clash = _conflict(g, assign)
            if clash is not None:
                i, j = clash
                first, second = position_atom(i, assign[i - 1]), position_atom(j, assign[j - 1])
                clause = b.leaf(Imp(first, Imp(second, GOAL)))
                step = b.elim(b.leaf(first), clause)
                return b.elim(b.leaf(second), step)
        if k == n:
            raise GeneratorError("placement without a clash; graph is Hamiltonian")
        pos = k + 1
        acc = b.leaf(occupied_formula(pos, n))
        for v in range(1, n + 1):
            case = b.intro(position_atom(pos, v), refute(assign + [v]))
            acc = b.elim(case, acc)
        return acc

    top = refute([])
    for k in range(n, 0, -1):
        top = b.intro(occupied_formula(k, n), top)
    return b.finish(top)


def open_assumptions(t: TreeDerivation) -> set:
    discharged = {leaf for leaf, _ in t.discharge_edges}
    prem = t.premisses()
    return {t.label[v] for v in t.nodes if not prem[v] and v not in discharged}


# -- random derivations (testing) ---------------------------------------------------

def gen_random_proof(rng: random.Random, max_nodes: int = 40, atoms: str = "pqr") -> TreeDerivation:
    """Goal-directed random derivation with at most ``max_nodes`` nodes, then greedified."""
    pool = [Atom(a) for a in atoms]

    def rand_formula(d: int) -> Formula:
        if d == 0 or rng.random() < 0.5:
            return rng.choice(pool)
        return Imp(rand_formula(d - 1), rand_formula(d - 1))

    b = _Builder()
    budget = [max_nodes]

    def build(goal: Formula, depth: int) -> int:
        budget[0] -= 1
        r = rng.random()
        if budget[0] >= 3 and depth < 7:
            if isinstance(goal, Imp) and r < 0.35:
                prem = build(goal.succedent, depth + 1)
                v = b.leaf(goal)
                b.edges.append((prem, v))
                return v
            if r < 0.8 and budget[0] >= 4:
                minor_f = rand_formula(1)
                budget[0] -= 1  # keep one node for the major premiss
                minor = build(minor_f, depth + 1)
                budget[0] += 1
                major = build(Imp(minor_f, goal), depth + 1)
                v = b.leaf(goal)
                b.edges += [(minor, v), (major, v)]
                return v
        return b.leaf(goal)

    root = build(rand_formula(2), 0)
    return b.finish(root)
