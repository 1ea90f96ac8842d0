import csv
import itertools
import math

import numpy as np
import pytest

from aph.corpus import ReviewRecord, split_dataset
from aph.model import APHModel, HyperParams
from aph.synthetic import planted_dataset
from aph.train_eval import (MetricsReport, TrainConfig, dcg, evaluate, graph_for_split, mse, ndcg_at_k,
                            negative_sample, precision_recall_at_k, run_ablation, run_experiment, train,
                            write_history_csv)


def brute_ndcg(scores, rels, k):
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    got = sum(rels[j] / math.log2(r + 2) for r, j in enumerate(order[:k]))
    best = max(sum(rels[j] / math.log2(r + 2) for r, j in enumerate(p[:k]))
               for p in itertools.permutations(range(len(rels))))
    return got / best if best > 0 else 0.0


def test_metric_examples():
    assert mse([3.0, 4.0], [3.0, 5.0]) == 0.5
    with pytest.raises(ValueError):
        mse([], [])
    assert ndcg_at_k([3, 2, 1], [3, 2, 1]) == 1.0
    assert ndcg_at_k([1, 2, 3], [0, 0, 0]) == 0.0
    assert dcg([1, 1]) == pytest.approx(1 + 1 / math.log2(3))
    # five candidates, two relevant, ranked first and fourth
    p, r = precision_recall_at_k([5, 4, 3, 2, 1], [1, 0, 0, 1, 0], k=5)
    assert (p, r) == (0.4, 1.0)
    assert precision_recall_at_k([1, 2], [0, 0], k=5) == (0.0, 0.0)


def test_metrics_match_brute_force_small():
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        for _ in range(5):
            scores = rng.permutation(n).astype(float)
            rels = rng.integers(0, 3, size=n).astype(float)
            assert ndcg_at_k(scores, rels, 10) == pytest.approx(brute_ndcg(scores, rels, 10), abs=1e-12)


def _recs(n_users=12, n_items=8, seed=0):
    rng = np.random.default_rng(seed)
    return [ReviewRecord(f"u{u}", f"i{i}", float(rng.integers(1, 6)), review_id=f"r{u}_{i}")
            for u in range(n_users) for i in rng.choice(n_items, 4, replace=False)]


def test_negative_sampling():
    recs = _recs()
    items = sorted({r.item_id for r in recs})
    out = negative_sample(recs, items, 4, seed=1)
    assert len(out) == 5 * len(recs)
    seen = {(r.user_id, r.item_id) for r in recs}
    assert all((u, i) not in seen for u, i, lab in out if lab == 0.0)
    assert out == negative_sample(recs, items, 4, seed=1)
    with pytest.raises(ValueError):
        negative_sample(recs, items, 0, seed=1)
    # a user who saw every item gets no negatives
    full = [ReviewRecord("u", i, 3.0, review_id=i) for i in ("a", "b")]
    assert [x[2] for x in negative_sample(full, ["a", "b"], 2, seed=0)] == [1.0, 1.0]


def test_train_config_validation():
    for bad in (dict(gamma=0), dict(lam=-1), dict(epochs=0), dict(optimizer="rmsprop"), dict(task="rank"),
                dict(task="ctr", neg_ratio=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


@pytest.fixture(scope="module")
def small_data():
    recs, quads, _ = planted_dataset(n_users=40, n_items=15, n_aspects=5, ratings_per_user=6, aspects_per_item=3,
                                     seed=3)
    return recs, quads, split_dataset(recs, 0.2, 0.1, seed=3)


def test_training_reduces_loss(small_data, tmp_path):
    recs, quads, split = small_data
    g = graph_for_split(quads, split)
    assert set(g.users) == {r.user_id for r in split.train}
    m = APHModel(g, HyperParams(d1=4, d2=4), seed=0)
    hist = train(m, split.train, TrainConfig(epochs=4, batch_size=32, gamma=0.01, patience=10), split.validation)
    assert len(hist) == 4 and hist[-1]["train_loss"] < hist[0]["train_loss"]
    write_history_csv(hist, tmp_path / "h.csv")
    rows = list(csv.DictReader((tmp_path / "h.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3, 4]
    with pytest.raises(ValueError):
        train(m, [], TrainConfig())


def test_run_experiment_deterministic(small_data):
    recs, quads, split = small_data
    cfg = TrainConfig(epochs=2, batch_size=32)
    a = run_experiment(recs, quads, split, HyperParams(d1=4, d2=4), cfg)[1]
    b = run_experiment(recs, quads, split, HyperParams(d1=4, d2=4), cfg)[1]
    assert a.to_json() == b.to_json()
    assert 0.0 <= a.precision_at_k <= 1.0 and a.mse > 0


def test_ctr_task(small_data):
    recs, quads, split = small_data
    cfg = TrainConfig(epochs=2, batch_size=64, task="ctr", neg_ratio=2)
    _, rep = run_experiment(recs, quads, split, HyperParams(d1=4, d2=4), cfg)
    assert rep.mse is None and rep.ndcg_at_k is None
    assert 0.0 <= rep.recall_at_k <= 1.0


def test_report_json_sorted(small_data):
    rep = MetricsReport(0.5, 0.9, 0.2, 0.4, 5, 10, 1)
    text = rep.to_json()
    assert text.index('"config"') < text.index('"mse"') < text.index('"seed"')


def test_run_ablation_shape(small_data):
    recs, quads, _ = small_data
    out = run_ablation(lambda s: (recs, quads), HyperParams(d1=4, d2=4), TrainConfig(epochs=1, batch_size=64),
                       variants=("APH", "MEAN"), seeds=(0, 1))
    assert out["seeds"] == [0, 1]
    assert set(out["variants"]) == {"APH", "MEAN"}
    assert len(out["variants"]["APH"]["mse"]) == 2
    assert out["best"] in ("APH", "MEAN")


def test_evaluate_handles_cold_test_items(small_data):
    recs, quads, split = small_data
    m = APHModel(graph_for_split(quads, split), HyperParams(d1=4, d2=4), seed=0)
    split.test.append(ReviewRecord("never_seen", "also_new", 3.0, review_id="cold"))
    try:
        rep = evaluate(m, split, TrainConfig())
    finally:
        split.test.pop()
    assert np.isfinite(rep.mse)
