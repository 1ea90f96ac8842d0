import numpy as np
import pytest

from aph import tensor as T
from aph.hypergraph import ITEM, USER, Hypergraph
from aph.model import (APH, MAX, MEAN, NO_FM, NO_FUSION, VARIANTS, APHModel, HyperParams, check_gradients,
                       fm_pairwise_fast, fm_pairwise_naive)

QUADS = [("u1", "i1", "sound", "Pos"), ("u1", "i1", "quality", "Pos"), ("u2", "i1", "sound", "Neg"),
         ("u3", "i1", "cushion", "Pos"), ("u3", "i1", "quality", "Neg"), ("u2", "i2", "sound", "Neu"),
         ("u1", "i2", "bass", "Pos")]


@pytest.fixture
def graph():
    return Hypergraph.from_quadruples(QUADS)


def _model(graph, **kw):
    m = APHModel(graph, HyperParams(**kw), seed=0)
    rng = np.random.default_rng(1)
    for name in ("bq", "b6", "b7", "w"):
        m.params[name].data = rng.normal(scale=0.1, size=m.params[name].shape)
    return m


def test_hyperparams_validation():
    assert HyperParams(variant="-AF").variant == NO_FUSION
    assert HyperParams(variant="-FM").variant == NO_FM
    for bad in (dict(d1=0), dict(t=0), dict(leaky_slope=1.0), dict(variant="SUM"), dict(fusion_input="x")):
        with pytest.raises(ValueError):
            HyperParams(**bad)
    assert HyperParams().fm_dim == 32 and HyperParams(variant=NO_FUSION).fm_dim == 16


def test_q_transform_and_attention_score(graph):
    m = _model(graph, d1=8, d2=8)
    P = m.params
    P["bq"].data = np.zeros(8)
    assert np.array_equal(m.q_transform(np.zeros(8), np.zeros(8)), np.zeros(8))
    rng = np.random.default_rng(0)
    xi, xq, xa = rng.normal(size=(3, 8))
    raw = (xi @ P["W1"].data) @ (xq @ P["W2"].data + xa @ P["W3"].data)
    expect = raw if raw > 0 else 0.01 * raw
    assert m.attention_score(xi, xq, xa) == pytest.approx(expect, rel=1e-12)
    with pytest.raises(T.ShapeError):
        m.attention_score(xi[:4], xq, xa)
    with pytest.raises(T.ShapeError):
        m.q_transform(np.zeros(4), np.zeros(8))


def test_edge_weights_softmax(graph):
    m = _model(graph)
    w = m.edge_weights("i1")
    assert len(w) == 5 and sum(w.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(v > 0 for v in w.values())
    g = Hypergraph.from_quadruples([("u1", "i1", "a", "Pos")])
    assert list(_model(g).edge_weights("i1").values()) == [1.0]


def test_aggregate_matches_manual(graph):
    m = _model(graph)
    P = m.params
    w = m.edge_weights("i1")
    manual = sum(wt * P["E_A"].data[graph.edge_aspect[e]] @ P["W4"].data for e, wt in w.items())
    assert np.allclose(m.aggregate_item("i1"), manual, atol=1e-12)


def test_mean_and_max_pooling(graph):
    for variant, reduce in ((MEAN, np.mean), (MAX, np.max)):
        m = _model(graph, variant=variant)
        P = m.params
        feats = np.stack([P["E_A"].data[graph.edge_aspect[e]] @ P["W4"].data for e in graph.edges_of_item("i1")])
        assert np.allclose(m.aggregate_item("i1"), reduce(feats, axis=0), atol=1e-12)


def test_fusion_topt_and_shapes(graph):
    m = _model(graph)
    y = m.represent(ITEM, "i1")
    assert y.shape == (16,)
    assert _model(graph, variant=NO_FUSION).represent(ITEM, "i1").shape == (8,)
    # t >= number of aspects is the same as keeping all of them
    full = _model(graph, t=None).represent(ITEM, "i1")
    assert np.allclose(_model(graph, t=10).represent(ITEM, "i1"), full)
    assert not np.allclose(_model(graph, t=1).represent(ITEM, "i1"), full)
    assert _model(graph).represent(USER, "u1").shape == (16,)


def test_fm_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, k = int(rng.integers(1, 12)), int(rng.integers(1, 6))
        z, v = rng.normal(size=n), rng.normal(size=(n, k))
        assert abs(fm_pairwise_fast(z, v) - fm_pairwise_naive(z, v)) <= 1e-10 * max(1.0, abs(fm_pairwise_naive(z, v)))


def test_fm_head_matches_definition(graph):
    m = _model(graph)
    m.params["b_u"].data[:] = 0.3
    m.params["b_i"].data[:] = -0.1
    u, i = m.user_ids(["u2"]), m.item_ids(["i1"])
    z = np.concatenate([m.represent(USER, "u2"), m.represent(ITEM, "i1")])
    P = m.params
    expect = P["b0"].data + 0.3 - 0.1 + z @ P["w"].data + fm_pairwise_naive(z, P["V"].data)
    assert m.forward(u, i).data[0] == pytest.approx(float(expect), abs=1e-10)


def test_no_fm_is_dot_product(graph):
    m = _model(graph, variant=NO_FM)
    yu, yi = m.represent(USER, "u1"), m.represent(ITEM, "i2")
    assert m.predict(["u1"], ["i2"])[0] == pytest.approx(float(yu @ yi), abs=1e-12)


def test_loss_and_regularizer(graph):
    m = _model(graph)
    u, i = m.user_ids(["u1", "u2"]), m.item_ids(["i1", "i2"])
    pred = m.forward(u, i).data
    y = pred + np.array([1.0, -1.0])
    assert m.loss(u, i, y).item() == pytest.approx(1.0)
    reg = sum(float(np.sum(p.data ** 2)) for p in m.param_list())
    assert m.regularizer().item() == pytest.approx(reg)
    assert m.loss(u, i, y, lam=0.5).item() == pytest.approx(1.0 + 0.5 * reg)
    with pytest.raises(ValueError):
        m.loss(u[:0], i[:0], [])


def test_target_mask_removes_own_review(graph):
    m = _model(graph)
    u, i = m.user_ids(["u1"]), m.item_ids(["i1"])
    base = m.forward(u, i, mask_target=True).data
    # masking equals the prediction on a graph that never saw the u1-i1 review
    assert not np.allclose(base, m.forward(u, i).data)
    m2 = _model(Hypergraph.from_quadruples([q for q in QUADS if q[:2] != ("u1", "i1")],
                                           users=["u1", "u2", "u3"], items=["i1", "i2"],
                                           aspects=graph.aspects))
    m2.load_state(m.state())
    assert np.allclose(m2.forward(u, i).data, base)


def test_cold_ids_fall_back(graph):
    m = _model(graph)
    p = m.predict(["nobody", "u1"], ["i1", "unknown"])
    assert np.all(np.isfinite(p))


def test_explain(graph):
    m = _model(graph)
    d = m.explain("i1")
    assert d["num_edges"] == 5
    assert [a["aspect"] for a in d["aspects"]] == ["sound", "quality", "cushion"]
    assert sum(a["aspect_weight"] for a in d["aspects"]) == pytest.approx(1.0)
    sound = d["aspects"][0]
    assert sound["mean_polarity"] == 0.0 and {e["user"] for e in sound["edges"]} == {"u1", "u2"}
    with pytest.raises(KeyError):
        m.explain("zzz")


def test_checkpoint_roundtrip_and_mismatch(graph, tmp_path):
    m = _model(graph, t=2)
    m.save(tmp_path / "m.npz")
    back = APHModel.load(tmp_path / "m.npz", graph)
    assert back.hp == m.hp
    assert np.array_equal(back.predict(["u1"], ["i2"]), m.predict(["u1"], ["i2"]))
    bigger = Hypergraph.from_quadruples(QUADS + [("u9", "i1", "sound", "Pos")])
    with pytest.raises(ValueError, match="incompatible"):
        APHModel.load(tmp_path / "m.npz", bigger)


def test_item_without_edges_raises():
    g = Hypergraph.from_quadruples([("u1", "i1", "a", "Pos")], items=["i1", "i2"])
    m = APHModel(g, seed=0)
    with pytest.raises(ValueError):
        m.edge_weights("i2")
    assert np.all(np.isfinite(m.predict(["u1"], ["i2"])))


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradients_per_variant(variant):
    for seed in range(3):
        assert check_gradients(seed, variant=variant) < 1e-4
    assert check_gradients(7, variant=variant, t=1) < 1e-4
