import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from hcproof.flow_verify import check_validity, flow
from hcproof.formula_core import Atom, FoundationError, bits_to_set, build_foundation, parse_formula
from hcproof.generators import gen_fibonacci_proof, gen_random_proof
from hcproof.nd_proof import (
    ProofError,
    TreeDerivation,
    decorate,
    dump_proof,
    foundation_for,
    greedify,
    load_proof,
    prepare,
    to_dlds,
    validate_tree,
)

from helpers import EXAMPLE_ORDER, nd_open_assumptions


def single_node(label="A"):
    return TreeDerivation([0], {0: parse_formula(label)}, [], set(), 0)


def identity_proof():
    """A |- A>A with the leaf discharged."""
    return TreeDerivation([0, 1], {0: Atom("A"), 1: parse_formula("A>A")}, [(0, 1)], {(0, 1)}, 1)


class TestValidate:
    def test_worked_example_is_valid(self, example_tree):
        assert validate_tree(example_tree).ok

    def test_single_node(self):
        assert validate_tree(single_node()).ok

    def test_bad_major_premiss(self):
        t = TreeDerivation(
            [0, 1, 2],
            {0: Atom("A"), 1: Atom("B"), 2: Atom("C")},
            [(0, 2), (1, 2)], set(), 2,
        )
        report = validate_tree(t)
        assert 4 in report.conditions()
        assert any(2 in v.nodes for v in report)

    def test_bad_introduction(self):
        t = TreeDerivation([0, 1], {0: Atom("B"), 1: parse_formula("A>C")}, [(0, 1)], set(), 1)
        assert 2 in validate_tree(t).conditions()

    def test_discharge_of_non_leaf(self):
        t = identity_proof()
        t.discharge_edges = {(1, 1)}
        assert 3 in validate_tree(t).conditions()

    def test_discharge_with_wrong_label(self):
        t = TreeDerivation([0, 1], {0: Atom("B"), 1: parse_formula("A>B")}, [(0, 1)], {(0, 1)}, 1)
        assert 2 in validate_tree(t).conditions()

    def test_three_premisses(self):
        t = TreeDerivation([0, 1, 2, 3], {i: Atom("A") for i in range(4)},
                           [(0, 3), (1, 3), (2, 3)], set(), 3)
        assert 1 in validate_tree(t).conditions()

    def test_not_a_tree(self):
        t = TreeDerivation([0, 1, 2], {i: Atom("A") for i in range(3)}, [(0, 1), (0, 2)], set(), 2)
        assert "tree" in validate_tree(t).conditions()

    def test_foundation_must_cover_conclusion(self):
        t = identity_proof()
        t.foundation = build_foundation(["A"])
        assert 5 in validate_tree(t).conditions()

    def test_reports_every_violation(self):
        t = TreeDerivation(
            [0, 1, 2, 3, 4],
            {0: Atom("A"), 1: Atom("B"), 2: Atom("C"), 3: Atom("D"), 4: parse_formula("E>C")},
            [(0, 2), (1, 2), (2, 4), (3, 4)], set(), 4,
        )
        assert {4} <= validate_tree(t).conditions()
        assert len(validate_tree(t)) >= 2


class TestGreedify:
    def test_worked_example_unchanged(self, example_tree):
        assert greedify(example_tree).discharge_edges == example_tree.discharge_edges

    def test_identity_unchanged(self):
        t = identity_proof()
        assert greedify(t).discharge_edges == {(0, 1)}

    def test_partial_discharge_extended(self, example_tree):
        a1_leaves = sorted(leaf for leaf, _ in example_tree.discharge_edges)
        assert len(a1_leaves) == 5
        partial = TreeDerivation(list(example_tree.nodes), dict(example_tree.label),
                                 list(example_tree.ded_edges),
                                 {e for e in example_tree.discharge_edges if e[0] in a1_leaves[:3]},
                                 example_tree.root, example_tree.foundation)
        assert validate_tree(partial).ok
        assert Atom("A1") in nd_open_assumptions(partial)[partial.root]
        g = greedify(partial)
        assert len(g.discharge_edges) == 5
        assert Atom("A1") not in nd_open_assumptions(g)[g.root]

    def test_invalid_input_rejected(self):
        t = TreeDerivation([0, 1], {0: Atom("B"), 1: parse_formula("A>C")}, [(0, 1)], set(), 1)
        with pytest.raises(ProofError):
            greedify(t)

    def test_nearest_introduction_wins(self):
        # A>(A>A) : both introductions have antecedent A; the inner one closes the leaf
        t = TreeDerivation([0, 1, 2], {0: Atom("A"), 1: parse_formula("A>A"), 2: parse_formula("A>A>A")},
                           [(0, 1), (1, 2)], set(), 2)
        assert greedify(t).discharge_edges == {(0, 1)}


class TestDecorate:
    def test_leaf_edge(self, example_tree):
        dg = decorate(greedify(example_tree), foundation_for(example_tree))
        leaf = next(v for v in example_tree.nodes if str(example_tree.label[v]) == "A1")
        parent = dict(example_tree.ded_edges)[leaf]
        text = str(dg.dep[(leaf, parent)])
        # the first twelve positions follow the worked-example order; A3>A4 comes last
        assert text[:12] == "100000000000" and text[12] == "0"

    def test_conclusion_edges(self, example_tree):
        dg = decorate(greedify(example_tree), foundation_for(example_tree))
        root = example_tree.root
        (top,) = [c for c, p in example_tree.ded_edges if p == root]
        into_root = bits_to_set(dg.foundation, dg.dep[(top, root)])
        premises = {parse_formula(s) for s in ["A1>A2", "A1>(A2>A3)", "A2>(A3>A4)", "A3>(A4>A5)"]}
        assert into_root == premises | {Atom("A1")}
        assert bits_to_set(dg.foundation, dg.conclusion_dep()) == premises

    def test_single_node(self):
        dg = decorate(single_node(), build_foundation(["A"]))
        assert dg.dep == {}
        assert str(dg.conclusion_dep()) == "1"

    def test_label_outside_foundation(self):
        with pytest.raises(FoundationError):
            decorate(identity_proof(), build_foundation(["B"]))

    def test_foundation_order_kept(self, example_tree):
        assert foundation_for(example_tree).to_strings() == [str(parse_formula(s)) for s in EXAMPLE_ORDER]


class TestToDlds:
    def test_counts(self, example_dlds):
        assert len(example_dlds.label) == 24
        assert example_dlds.edge_count() == 23
        assert set(example_dlds.ded_edges) == {0}
        assert not example_dlds.anc

    def test_single_node(self):
        d = prepare(single_node())
        assert len(d.label) == 1 and d.edge_count() == 0

    def test_valid(self, example_dlds):
        assert check_validity(example_dlds).ok

    def test_singleton_flow_entries(self, example_dlds):
        fm = flow(example_dlds, example_dlds.root)
        for v, entries in fm.entries.items():
            assert len(entries) == 1
            (entry,) = entries
            (target,) = example_dlds.out[v]
            assert entry.dep == example_dlds.out[v][target].dep
            assert set(entry.path) == {0}


def test_json_roundtrip(example_tree):
    back = load_proof(dump_proof(example_tree))
    assert back.label == example_tree.label
    assert sorted(back.ded_edges) == sorted(example_tree.ded_edges)
    assert back.discharge_edges == example_tree.discharge_edges
    assert back.foundation == example_tree.foundation


def test_malformed_json_document():
    with pytest.raises(ProofError):
        load_proof('{"nodes": [{"id": 0}]}')


# -- properties ---------------------------------------------------------------------

def _strip_some_discharges(t, rng):
    keep = {e for e in t.discharge_edges if rng.random() < 0.5}
    return TreeDerivation(list(t.nodes), dict(t.label), list(t.ded_edges), keep, t.root, t.foundation)


@settings(max_examples=150, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(min_value=0, max_value=10**9))
def test_greedify_idempotent_and_shape_preserving(seed):
    rng = random.Random(seed)
    t = _strip_some_discharges(gen_random_proof(rng, max_nodes=40), rng)
    g = greedify(t)
    assert greedify(g).discharge_edges == g.discharge_edges
    assert g.ded_edges == t.ded_edges and g.label == t.label and g.root == t.root
    assert t.discharge_edges <= g.discharge_edges
    assert validate_tree(g).ok


@settings(max_examples=150, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(min_value=0, max_value=10**9))
def test_decorate_matches_nd_oracle(seed):
    t = gen_random_proof(random.Random(seed), max_nodes=40)
    f = foundation_for(t)
    dg = decorate(t, f)
    oracle = nd_open_assumptions(t)
    parent = dict(t.ded_edges)
    for v in t.nodes:
        if v in parent:
            assert bits_to_set(f, dg.dep[(v, parent[v])]) == oracle[v]
    assert bits_to_set(f, dg.conclusion_dep()) == oracle[t.root]


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_fibonacci_decorate_matches_nd_oracle(n):
    t = gen_fibonacci_proof(n)
    f = foundation_for(t)
    dg = decorate(t, f)
    oracle = nd_open_assumptions(t)
    parent = dict(t.ded_edges)
    assert all(bits_to_set(f, dg.dep[(v, parent[v])]) == oracle[v] for v in parent)
