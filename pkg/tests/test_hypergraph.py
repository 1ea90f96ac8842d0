import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aph.extraction import ExtractionConfig, Quadruple, build_quadruples
from aph.hypergraph import ASPECT, ITEM, SENTIMENT, USER, Hypergraph, build_hypergraph

quad_lists = st.lists(st.tuples(st.sampled_from(["u1", "u2", "u3"]), st.sampled_from(["i1", "i2"]),
                                st.sampled_from(["a", "b", "c"]), st.sampled_from(["Pos", "Neu", "Neg"])),
                      max_size=25)


@pytest.fixture
def headset_graph(headset, lexicon):
    reviews, sents = headset
    return Hypergraph.from_quadruples(build_quadruples(reviews, sents, lexicon, ExtractionConfig(c_t=1)))


def test_headset_sizes(headset_graph):
    g = headset_graph
    assert (g.num_vertices, g.num_edges) == (9, 5)
    assert g.type_counts() == {USER: 3, ITEM: 1, ASPECT: 3, SENTIMENT: 2}
    assert len(g.edges_of_item("i1")) == 5
    assert g.neighbor_aspects("i1") == [g.aspect_index[a] for a in ("sound", "quality", "cushion")]


def test_empty_graph():
    g, idx = build_hypergraph([])
    assert g.num_edges == 0 and g.num_vertices == 0
    assert idx.item_edges.size == 0 and idx.edges_by_item_aspect == {}


def test_two_users_same_bucket():
    g = Hypergraph.from_quadruples([("u1", "i", "a", "Pos"), ("u2", "i", "a", "Pos"), ("u1", "i", "a", "Pos")])
    assert g.num_edges == 2
    assert len(g.edges_of_item_aspect("i", "a")) == 2


def test_single_review_single_aspect():
    g = Hypergraph.from_quadruples([Quadruple("u", "i", "a", "Neu")])
    assert len(g.neighbor_aspects("i")) == 1


def test_incidence_lookup(headset_graph):
    g = headset_graph
    e = 0
    members = set(g.hyperedges[e])
    for v in range(g.num_vertices):
        assert g.incidence(v, e) == int(v in members)
    assert g.incidence(g.vertex_id("u1", USER), 0) == 1
    assert g.incidence(g.vertex_id("u2", USER), 0) == 0
    with pytest.raises(IndexError):
        g.incidence(99, 0)
    with pytest.raises(IndexError):
        g.incidence(0, 99)


def test_unknown_ids(headset_graph):
    with pytest.raises(KeyError):
        headset_graph.edges_of_item("nope")
    with pytest.raises(KeyError):
        headset_graph.edges_of_item_aspect("i1", "bass")
    with pytest.raises(KeyError):
        headset_graph.vertex_id("u9", USER)


@settings(max_examples=60, deadline=None)
@given(quad_lists)
def test_arity_and_partition(rows):
    g = Hypergraph.from_quadruples(rows)
    distinct = list(dict.fromkeys(Quadruple(*r) for r in rows))
    assert g.num_edges == len(distinct)
    types = dict((vid, t) for vid, (_, t) in enumerate(g.vertices))
    for e, members in enumerate(g.hyperedges):
        col = [g.incidence(v, e) for v in range(g.num_vertices)]
        assert sum(col) == 4
        assert sorted(types[v] for v in members) == sorted([USER, ITEM, ASPECT, SENTIMENT])
    for side, owners, by, edges_of in ((ITEM, g.items, g.index.edges_by_item_aspect, g.edges_of_item),
                                       (USER, g.users, g.index.edges_by_user_aspect, g.edges_of_user)):
        for o in owners:
            all_edges = sorted(edges_of(o).tolist())
            key = g.item_index[o] if side == ITEM else g.user_index[o]
            parts = [by[(key, a)].tolist() for a in
                     (g.index.aspects_by_item if side == ITEM else g.index.aspects_by_user)[key]]
            flat = sorted(x for p in parts for x in p)
            assert flat == all_edges
            assert len(set(flat)) == len(flat)
    # every edge in exactly one item bucket and one user bucket
    assert sum(len(v) for v in g.index.edges_by_item_aspect.values()) == g.num_edges
    assert sum(len(v) for v in g.index.edges_by_user_aspect.values()) == g.num_edges


@settings(max_examples=30, deadline=None)
@given(quad_lists)
def test_determinism_and_json_roundtrip(rows):
    a, b = Hypergraph.from_quadruples(rows), Hypergraph.from_quadruples(rows)
    assert a.vertices == b.vertices and a.hyperedges == b.hyperedges
    c = Hypergraph.from_json(a.to_json())
    assert c.to_json() == a.to_json()
    assert c.vertices == a.vertices


def test_gather_and_mask():
    g = Hypergraph.from_quadruples([("u1", "i1", "a", "Pos"), ("u2", "i1", "b", "Neg"), ("u1", "i2", "a", "Neu"),
                                    ("u1", "i1", "b", "Pos")])
    edges, seg = g.gather(ITEM, [0, 1, -1, 0])
    assert seg.tolist() == [0, 0, 0, 1, 3, 3, 3]
    assert sorted(edges[seg == 0].tolist()) == sorted(g.edges_of_item("i1").tolist())
    # slot 0 masks u1, slot 1 masks u2
    edges, seg = g.gather(ITEM, [0, 0], exclude=[0, 1])
    assert g.edge_user[edges[seg == 0]].tolist() == [1]
    assert g.edge_user[edges[seg == 1]].tolist() == [0, 0]
    with pytest.raises(ValueError):
        g.gather("Aspect", [0])


def test_bucket_contiguity():
    rng = np.random.default_rng(0)
    rows = [(f"u{rng.integers(5)}", f"i{rng.integers(3)}", f"a{rng.integers(4)}", "Pos") for _ in range(40)]
    g = Hypergraph.from_quadruples(rows)
    for i in range(len(g.items)):
        asp = g.edge_aspect[g.edges_of_item(i)]
        # each aspect forms one run, in first-appearance order
        runs = [a for k, a in enumerate(asp) if k == 0 or a != asp[k - 1]]
        assert runs == g.index.aspects_by_item[i]


def test_save_load(tmp_path, headset_graph):
    p = tmp_path / "g.json"
    headset_graph.save(p)
    back = Hypergraph.load(p)
    assert back.stats() == headset_graph.stats()
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        Hypergraph.load(p)
    p.write_text('{"format": "aph-hypergraph", "version": 99}')
    with pytest.raises(ValueError, match="version"):
        Hypergraph.load(p)
