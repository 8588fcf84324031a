import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dentoforge import jawgraph as jg
from dentoforge.jawgraph import ToothLayout, ToothNode


def upper_nodes(codes):
    return [ToothNode(c, ToothLayout(float(i), 0, 0, 9, 8, 7, 0, 0)) for i, c in enumerate(codes)]


FULL_UPPER = [17, 16, 15, 14, 13, 12, 11, 21, 22, 23, 24, 25, 26, 27]


def test_arch_order_full_upper_jaw():
    shuffled = FULL_UPPER[::-1][3:] + FULL_UPPER[::-1][:3]
    g = jg.make_graph(upper_nodes(shuffled), "upper")
    assert [g.nodes[i].tooth_id for i in jg.arch_order(g)] == FULL_UPPER


def test_arch_order_lower_jaw():
    codes = [31, 41, 37, 47]
    g = jg.make_graph(upper_nodes(codes), "lower")
    assert [g.nodes[i].tooth_id for i in jg.arch_order(g)] == [47, 41, 31, 37]


def test_arch_order_singleton():
    g = jg.make_graph(upper_nodes([11]), "upper")
    assert jg.arch_order(g) == [0]


def test_arch_order_rejects_unknown_code():
    g = jg.JawGraph(tuple(upper_nodes([99])), (), "upper")
    with pytest.raises(jg.ValidationError, match="invalid FDI code 99"):
        jg.arch_order(g)


def relation_counts(g):
    out = {r: 0 for r in jg.RELATIONS}
    for e in g.edges:
        out[e.relation] += 1
    return out


def test_full_jaw_edge_counts():
    g = jg.make_graph(upper_nodes(FULL_UPPER), "upper")
    counts = relation_counts(g)
    assert counts["Neighbor"] == 13
    assert counts["Symmetry"] == 7
    # every non-central tooth links to both centrals
    assert counts["Arch"] == 2 * 12


def test_two_centrals_edges():
    g = jg.make_graph(upper_nodes([11, 21]), "upper")
    assert relation_counts(g) == {"Neighbor": 1, "Symmetry": 1, "Arch": 0}
    assert all({e.src, e.dst} == {0, 1} for e in g.edges)


def test_single_node_has_no_edges():
    assert jg.build_edges(upper_nodes([13]), "upper") == []


def test_edges_are_canonical():
    g = jg.make_graph(upper_nodes(FULL_UPPER), "upper")
    pos = {i: jg.arch_position(n.tooth_id, "upper") for i, n in enumerate(g.nodes)}
    assert all(pos[e.src] < pos[e.dst] for e in g.edges)
    assert jg.validate(g) == []


def test_symmetry_omitted_when_mirror_absent_from_record():
    g = jg.make_graph(upper_nodes([11, 12, 21]), "upper")
    sym = {(g.nodes[e.src].tooth_id, g.nodes[e.dst].tooth_id) for e in g.edges if e.relation == "Symmetry"}
    assert sym == {(11, 21)}


@given(st.permutations(FULL_UPPER), st.integers(min_value=2, max_value=14))
@settings(max_examples=40, deadline=None)
def test_edges_permutation_invariant(perm, n):
    codes = list(perm[:n])
    a = jg.make_graph(upper_nodes(codes), "upper")
    b = jg.make_graph(upper_nodes(sorted(codes)), "upper")
    assert jg.edge_set(a) == jg.edge_set(b)
    counts = relation_counts(a)
    assert counts["Neighbor"] == n - 1


def test_full_jaw_symmetry_count_rule():
    for n_side in range(1, 8):
        codes = [10 + p for p in range(1, n_side + 1)] + [20 + p for p in range(1, n_side + 1)]
        g = jg.make_graph(upper_nodes(codes), "upper")
        assert relation_counts(g)["Symmetry"] == len(codes) // 2


def test_validate_accepts_generated_jaw(jaw):
    assert jg.validate(jaw) == []


def test_validate_reports_all_violations():
    lay_bad = ToothLayout(0, 0, 0, 9, -1, 7, 0, 0)
    nodes = (ToothNode(11, lay_bad), ToothNode(11, ToothLayout(1, 0, 0, 9, 8, 7, 0, 0)), ToothNode(99))
    g = jg.JawGraph(nodes, (jg.JawEdge(0, 0, "Neighbor"),), "upper")
    problems = jg.validate(g)
    text = "\n".join(problems)
    assert "duplicate tooth_id" in text
    assert "non-positive extent" in text
    assert "invalid FDI code 99" in text
    assert "self-edge" in text
    assert "missing flag" in text
    assert len(problems) >= 5


def test_validate_angle_range():
    g = jg.make_graph([ToothNode(11, ToothLayout(0, 0, 0, 9, 8, 7, -math.pi, 0))], "upper")
    assert any("outside" in p for p in jg.validate(g))


def test_wrap_angle_range():
    for a in (-math.pi, math.pi, 3 * math.pi, -7.0, 0.0, 1e-3):
        w = jg.wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)


def test_serialize_round_trip(jaw, small_graph):
    for g in (jaw, small_graph):
        text = jg.serialize(g)
        back = jg.deserialize(text)
        assert back == g
        assert jg.serialize(back) == text


def test_deserialize_null_layout_means_missing(small_graph):
    doc = json.loads(jg.serialize(small_graph))
    doc["nodes"][0]["layout"] = None
    doc["nodes"][0]["missing"] = True
    g = jg.deserialize(json.dumps(doc))
    assert g.nodes[0].missing and g.nodes[0].layout is None


def test_deserialize_missing_nodes_key():
    with pytest.raises(jg.SchemaError, match="nodes"):
        jg.deserialize('{"jaw_side": "upper", "edges": []}')


def test_deserialize_syntax_error_reports_line():
    with pytest.raises(jg.SchemaError, match="line 2"):
        jg.deserialize('{"jaw_side": "upper",\n "nodes": [,]}')


def test_serialize_rejects_invalid_graph():
    g = jg.JawGraph((ToothNode(11, ToothLayout(0, 0, 0, 9, 0, 7, 0, 0)),), (), "upper")
    with pytest.raises(jg.ValidationError):
        jg.serialize(g)


def test_decompose(jaw):
    cats, lays, feats, edges = jaw.decompose()
    assert len(cats) == len(lays) == feats.shape[0] == 14
    assert feats.shape[1] == jg.FEATURE_DIM
    assert edges == list(jaw.edges)


def test_save_load(tmp_path, jaw):
    p = tmp_path / "j.json"
    jg.save(jaw, p)
    assert jg.load(p) == jaw
