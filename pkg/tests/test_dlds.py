import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from hcproof.compression import compress
from hcproof.dlds import (
    ADDRESS_FAILURE,
    DLDS,
    DLDSError,
    GroundedDLDS,
    LevelError,
    dumps,
    export_dot,
    ground,
    height,
    level_of,
    levels,
    loads,
    resolve_address,
    resolve_address_lenient,
    size_of,
)
from hcproof.formula_core import LAMBDA, Atom, DepSet, bits_to_set, build_foundation, parse_formula
from hcproof.generators import gen_random_proof
from hcproof.nd_proof import TreeDerivation, prepare

from helpers import EXAMPLE_PREMISES


class TestLevels:
    def test_grounded_worked_example(self, example_dlds):
        g = ground(example_dlds)
        assert level_of(g, g.ground_node) == 0
        assert level_of(g, example_dlds.root) == 1
        a5 = next(v for v in example_dlds.label if str(example_dlds.label[v]) == "A5")
        assert level_of(g, a5) == 2
        tops = [v for v in example_dlds.label if not example_dlds.inn[v]]
        assert {level_of(g, v) for v in tops if str(example_dlds.label[v]) == "A1"} == {6}
        assert height(g) == 6 and height(example_dlds) == 5

    def test_root_is_zero(self, example_dlds):
        assert level_of(example_dlds, example_dlds.root) == 0

    def test_skewed_dag(self):
        f = build_foundation(["A"])
        d = DLDS(f, {}, 3)
        for v in range(4):
            d.add_node(v, Atom("A"))
        d.add_edge(0, 1)
        d.add_edge(1, 3)
        d.add_edge(0, 2, 1)
        d.add_edge(2, 1, 1)  # 0 reaches the root in two steps and in three
        with pytest.raises(LevelError):
            level_of(d, 0)

    def test_unknown_node(self, example_dlds):
        with pytest.raises(DLDSError):
            level_of(example_dlds, 999)


class TestResolve:
    def test_worked_example_after_first_collapse(self, example_dlds):
        from hcproof.compression import apply_rule, find_redex

        d = apply_rule(example_dlds, find_redex(example_dlds, 3))
        a2 = min(v for v in d.label if str(d.label[v]) == "A2")
        reached = resolve_address(d, a2, [0, 2])
        assert str(d.label[reached]) == "A4>A5"

    def test_empty_address_at_sink(self, example_dlds):
        assert resolve_address(example_dlds, example_dlds.root, []) == example_dlds.root

    def test_missing_color(self, example_dlds):
        from hcproof.compression import apply_rule, find_redex

        d = apply_rule(example_dlds, find_redex(example_dlds, 3))
        branching = next(v for v in d.label if len(d.out[v]) == 2)
        assert sorted(e.color for e in d.out[branching].values()) == [1, 2]
        assert resolve_address(d, branching, [7]) is ADDRESS_FAILURE
        assert not ADDRESS_FAILURE

    def test_every_anc_edge_roundtrips(self, example_compressed):
        d = example_compressed.dlds
        lev = levels(d)
        assert d.anc
        for s, t, p in d.anc_list():
            assert resolve_address(d, t, p) == s
            assert lev[s] < lev[t]
            assert len(p) <= height(d)

    def test_lenient_walk_skips_single_edges(self, example_dlds):
        leaf = next(v for v in example_dlds.label if not example_dlds.inn[v])
        assert resolve_address_lenient(example_dlds, leaf, [7]) is ADDRESS_FAILURE
        assert resolve_address_lenient(example_dlds, leaf, []) == leaf


class TestGround:
    def test_final_dep_is_premise_set(self, example_compressed):
        g = ground(example_compressed.dlds)
        f = g.dlds.foundation
        assert {str(x) for x in bits_to_set(f, g.final_dep)} == {str(parse_formula(s)) for s in EXAMPLE_PREMISES}

    def test_tautology_all_zero(self):
        t = TreeDerivation([0, 1], {0: Atom("A"), 1: parse_formula("A>A")}, [(0, 1)], {(0, 1)}, 1)
        g = ground(prepare(t))
        assert g.final_dep.bits == 0

    def test_three_in_edges(self):
        f = build_foundation(["A"])
        d = DLDS(f, {}, 3)
        for v in range(4):
            d.add_node(v, Atom("A"))
        for v in range(3):
            d.add_edge(v, 3, 0, DepSet(1, 1))
        with pytest.raises(DLDSError):
            ground(d)

    def test_single_node(self):
        d = prepare(TreeDerivation([0], {0: Atom("A")}, [], set(), 0))
        g = ground(d)
        assert str(g.final_dep) == "1"

    def test_lambda_edge_into_root_uses_flow(self, example_compressed):
        g = ground(example_compressed.dlds)
        assert isinstance(g, GroundedDLDS)
        assert g.dlds.out[example_compressed.dlds.root][g.ground_node].dep == g.final_dep


class TestSize:
    def test_single_node(self):
        d = prepare(TreeDerivation([0], {0: Atom("A")}, [], set(), 0))
        assert size_of(d) == 2

    def test_compressed_is_smaller(self, example_dlds, example_compressed):
        assert size_of(ground(example_compressed.dlds)) < size_of(ground(example_dlds))

    def test_formula(self, example_dlds):
        width = len(example_dlds.foundation)
        assert size_of(example_dlds) == 24 * 2 + 23 * (2 + width)

    def test_counts_lambda_and_paths(self):
        f = build_foundation(["A", "B"])
        d = DLDS(f, {}, 1)
        d.add_node(0, Atom("A"))
        d.add_node(1, Atom("A"))
        d.add_edge(0, 1, 1, LAMBDA)
        base = size_of(d)
        assert base == 4 + 3
        d.add_anc(0, 1, (1, 0, 2))
        assert size_of(d) == base + 5


@settings(max_examples=60, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(min_value=0, max_value=10**9), st.data())
def test_adding_an_edge_increases_size(seed, data):
    d = prepare(gen_random_proof(random.Random(seed), max_nodes=30))
    before = size_of(d)
    nodes = sorted(d.label)
    fresh = max(nodes) + 1
    d.add_node(fresh, d.label[nodes[0]])
    with_node = size_of(d)
    assert with_node > before
    target = data.draw(st.sampled_from(nodes))
    dep = data.draw(st.sampled_from([LAMBDA, DepSet.zero(len(d.foundation))]))
    d.add_edge(fresh, target, 0, dep)
    assert size_of(d) > with_node


@settings(max_examples=40, suppress_health_check=[HealthCheck.too_slow], deadline=None)
@given(st.integers(min_value=0, max_value=10**9))
def test_address_roundtrip_on_random_compressions(seed):
    d = compress(prepare(gen_random_proof(random.Random(seed), max_nodes=40)))
    lev = levels(d)
    h = max(lev.values())
    for s, t, p in d.anc_list():
        assert resolve_address(d, t, p) == s
        assert lev[s] < lev[t]
        assert len(p) <= h


class TestDot:
    def test_single_node(self):
        d = prepare(TreeDerivation([0], {0: Atom("A")}, [], set(), 0))
        text = export_dot(d)
        assert text.count("->") == 0
        assert 'n0 [label="A"]' in text

    def test_blue_edges_match_anc_count(self, example_compressed):
        d = example_compressed.dlds
        assert export_dot(d).count("color=blue") == len(d.anc_list()) == 6

    def test_deterministic(self, example_compressed):
        d = example_compressed.dlds
        assert export_dot(d).encode() == export_dot(d.copy()).encode()

    def test_colors_and_hyp_marks_rendered(self, example_compressed):
        text = export_dot(example_compressed.dlds)
        assert '<font color="red">1</font>' in text
        assert "&#8463;" in text


class TestJson:
    def test_roundtrip_grounded(self, example_compressed):
        g = ground(example_compressed.dlds)
        back = loads(dumps(g))
        assert isinstance(back, GroundedDLDS)
        assert dumps(back) == dumps(g)
        assert back.final_dep == g.final_dep

    def test_duplicate_edges_rejected(self, example_dlds):
        import json

        obj = json.loads(dumps(example_dlds))
        obj["ded_edges"].append(obj["ded_edges"][0])
        with pytest.raises(DLDSError):
            loads(json.dumps(obj))

    def test_width_checked(self, example_dlds):
        import json

        obj = json.loads(dumps(example_dlds))
        key = next(iter(obj["dep"]))
        obj["dep"][key] = "01"
        with pytest.raises(DLDSError):
            loads(json.dumps(obj))
