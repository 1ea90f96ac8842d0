"""Minibatch training, negative sampling and ranking metrics."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .corpus import DatasetSplit, split_dataset
from .hypergraph import Hypergraph
from .model import APHModel, HyperParams

log = logging.getLogger(__name__)

GAMMA_GRID = (0.0005, 0.001, 0.005)
LAMBDA_GRID = (0.001, 0.01, 0.05, 0.1)
ABLATION_VARIANTS = ("APH", "MAX", "MEAN", "-AF", "-FM")


@dataclass
class TrainConfig:
    gamma: float = 0.005
    lam: float = 0.001
    epochs: int = 50
    batch_size: int = 256
    seed: int = 42
    optimizer: str = "adam"
    task: str = "rating"
    neg_ratio: int = 4
    patience: int = 5
    mask_target: bool = True

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.task not in ("rating", "ctr"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "ctr" and self.neg_ratio < 1:
            raise ValueError("neg_ratio must be >= 1 for the ctr task")


@dataclass
class MetricsReport:
    mse: float | None
    ndcg_at_k: float | None
    precision_at_k: float | None
    recall_at_k: float | None
    k: int
    ndcg_k: int
    seed: int
    history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = grads[id(p)]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr):
        self.params, self.lr = list(params), lr

    def step(self, grads):
        for p in self.params:
            p.data -= self.lr * grads[id(p)]


def _arrays(model: APHModel, records):
    u = model.user_ids([r.user_id for r in records])
    i = model.item_ids([r.item_id for r in records])
    y = np.array([r.rating for r in records], dtype=np.float64)
    return u, i, y


def _labeled_arrays(model: APHModel, labeled):
    u = model.user_ids([x[0] for x in labeled])
    i = model.item_ids([x[1] for x in labeled])
    y = np.array([x[2] for x in labeled], dtype=np.float64)
    return u, i, y


def predict_batched(model: APHModel, u, i, batch: int = 2048) -> np.ndarray:
    out = [model.forward(u[s:s + batch], i[s:s + batch]).data for s in range(0, len(u), batch)]
    return np.concatenate(out) if out else np.zeros(0)


def _data_loss(model, u, i, y, task):
    if len(u) == 0:
        return None
    pred = predict_batched(model, u, i)
    if task == "rating":
        return float(np.mean((pred - y) ** 2))
    e = np.exp(-np.abs(pred))
    return float(np.mean(np.maximum(pred, 0) - pred * y + np.log1p(e)))


def train(model: APHModel, train_records, config: TrainConfig, validation=(), all_items=None):
    """Fit ``model`` in place; returns the per-epoch history.

    For the ctr task, ``train_records``/``validation`` are observed
    interactions and negatives are drawn per :func:`negative_sample`.
    The parameters with the best validation loss are restored at the end.
    """
    if not train_records:
        raise ValueError("train: empty training set")
    rng = np.random.default_rng(config.seed)
    if config.task == "rating":
        u, i, y = _arrays(model, train_records)
        vu, vi, vy = _arrays(model, validation)
        model.params["b0"].data = np.array(float(np.mean(y)))
    else:
        items = sorted(all_items or {r.item_id for r in train_records})
        seen = _interactions(list(train_records) + list(validation))
        u, i, y = _labeled_arrays(model, negative_sample(train_records, items, config.neg_ratio,
                                                         config.seed, seen))
        vu, vi, vy = _labeled_arrays(model, negative_sample(validation, items, config.neg_ratio,
                                                            config.seed + 1, seen))
    params = model.param_list()
    opt = Adam(params, config.gamma) if config.optimizer == "adam" else SGD(params, config.gamma)
    history, best, best_val, stale = [], model.state(), math.inf, 0
    n = len(u)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        try:
            for s in range(0, n, config.batch_size):
                b = order[s:s + config.batch_size]
                loss = model.loss(u[b], i[b], y[b], lam=config.lam, task=config.task,
                                  mask_target=config.mask_target)
                grads = T.backward(loss, params)
                opt.step(grads)
                total += loss.item() * len(b)
            for p in params:
                if not np.all(np.isfinite(p.data)):
                    raise T.NonFiniteError(f"parameter {p.name} became non-finite")
        except T.NonFiniteError as exc:
            model.load_state(best)
            raise TrainingDiverged(f"training diverged at epoch {epoch}: {exc}", history) from exc
        val_loss = _data_loss(model, vu, vi, vy, config.task)
        history.append({"epoch": epoch, "train_loss": total / n, "val_loss": val_loss, "lr": config.gamma})
        log.debug("epoch %d train %.5f val %s", epoch, total / n, val_loss)
        if val_loss is None:
            best = model.state()
            continue
        if val_loss < best_val:
            best_val, best, stale = val_loss, model.state(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state(best)
    return history


def write_history_csv(history, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr"])
        w.writeheader()
        for row in history:
            w.writerow(row)


# -- metrics on raw arrays ---------------------------------------------------------

def _rank(scores) -> np.ndarray:
    """Indices by descending score; ties keep input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def dcg(rels) -> float:
    rels = np.asarray(rels, dtype=np.float64)
    return float(np.sum(rels / np.log2(np.arange(2, rels.size + 2))))


def ndcg_at_k(scores, rels, k: int = 10) -> float:
    rels = np.asarray(rels, dtype=np.float64)
    ideal = dcg(np.sort(rels)[::-1][:k])
    if ideal <= 0:
        return 0.0
    return dcg(rels[_rank(scores)][:k]) / ideal


def precision_recall_at_k(scores, labels, k: int = 5):
    labels = np.asarray(labels, dtype=bool)
    hits = int(labels[_rank(scores)][:k].sum())
    n_pos = int(labels.sum())
    return hits / k, (hits / n_pos if n_pos else 0.0)


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    if pred.size == 0:
        raise ValueError("mse: empty input")
    return float(np.mean((pred - target) ** 2))


# -- model-level evaluation --------------------------------------------------------

def evaluate_mse(model: APHModel, records) -> float:
    if not records:
        raise ValueError("evaluate_mse: empty test set")
    u, i, y = _arrays(model, records)
    return mse(predict_batched(model, u, i), y)


def evaluate_ndcg(model: APHModel, records, k: int = 10) -> float:
    u, i, y = _arrays(model, records)
    pred = predict_batched(model, u, i)
    users = {}
    for pos, r in enumerate(records):
        users.setdefault(r.user_id, []).append(pos)
    if not users:
        return 0.0
    return float(np.mean([ndcg_at_k(pred[idx], y[idx], k) for idx in users.values()]))


def _interactions(records) -> dict:
    seen = {}
    for r in records:
        seen.setdefault(r.user_id, set()).add(r.item_id)
    return seen


def negative_sample(records, items, ratio: int, seed: int, seen=None) -> list:
    """Label observed interactions 1 and add ``ratio`` unobserved items per positive.

    ``seen`` maps user -> items never to be sampled (defaults to the users'
    interactions in ``records``). Negatives are drawn uniformly with
    replacement from each user's unobserved items.
    """
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    rng = np.random.default_rng(seed)
    items = list(items)
    item_pos = {it: k for k, it in enumerate(items)}
    seen = seen if seen is not None else _interactions(records)
    out, warned = [], set()
    for r in records:
        out.append((r.user_id, r.item_id, 1.0))
        blocked = seen.get(r.user_id, set())
        n_free = len(items) - sum(1 for b in blocked if b in item_pos)
        if n_free <= 0:
            if r.user_id not in warned:
                log.warning("user %s interacted with every item; no negatives sampled", r.user_id)
                warned.add(r.user_id)
            continue
        drawn = 0
        while drawn < ratio:
            cand = items[int(rng.integers(len(items)))]
            if cand in blocked:
                continue
            out.append((r.user_id, cand, 0.0))
            drawn += 1
    return out


def evaluate_topk(model: APHModel, positives, negatives, k: int = 5):
    """Mean Precision@k and Recall@k over users with a non-empty candidate set."""
    cands = {}
    for uid, iid, label in [(r.user_id, r.item_id, 1.0) for r in positives] + [
            x for x in negatives if x[2] == 0.0]:
        cands.setdefault(uid, []).append((iid, label))
    if not cands:
        return 0.0, 0.0
    flat = [(uid, iid, lab) for uid, rows in cands.items() for iid, lab in rows]
    u = model.user_ids([x[0] for x in flat])
    i = model.item_ids([x[1] for x in flat])
    scores = predict_batched(model, u, i)
    precs, recs, pos = [], [], 0
    for uid, rows in cands.items():
        s = scores[pos:pos + len(rows)]
        lab = [x[1] for x in rows]
        pos += len(rows)
        p, r = precision_recall_at_k(s, lab, k)
        precs.append(p)
        recs.append(r)
    return float(np.mean(precs)), float(np.mean(recs))


# -- end to end --------------------------------------------------------------------------------

def graph_for_split(quadruples, split: DatasetSplit) -> Hypergraph:
    """Hypergraph over training interactions only; vocab spans every training user/item."""
    train_pairs = {(r.user_id, r.item_id) for r in split.train}
    quads = [q for q in quadruples if (q.user_id, q.item_id) in train_pairs]
    users = list(dict.fromkeys(r.user_id for r in split.train))
    items = list(dict.fromkeys(r.item_id for r in split.train))
    return Hypergraph.from_quadruples(quads, users=users, items=items)


def evaluate(model: APHModel, split: DatasetSplit, config: TrainConfig, history=(), all_records=None,
             k: int = 5, ndcg_k: int = 10) -> MetricsReport:
    test = split.test
    all_records = all_records if all_records is not None else split.train + split.validation + test
    items = sorted({r.item_id for r in all_records})
    negs = negative_sample(test, items, config.neg_ratio, config.seed + 2, _interactions(all_records))
    prec, rec = evaluate_topk(model, test, negs, k)
    return MetricsReport(
        mse=evaluate_mse(model, test) if config.task == "rating" else None,
        ndcg_at_k=evaluate_ndcg(model, test, ndcg_k) if config.task == "rating" else None,
        precision_at_k=prec, recall_at_k=rec, k=k, ndcg_k=ndcg_k, seed=config.seed,
        history=list(history), config={"train": asdict(config), "model": asdict(model.hp)})


def run_experiment(records, quadruples, split: DatasetSplit, hp: HyperParams, config: TrainConfig):
    """Build the training graph, fit, and evaluate; returns ``(model, report)``."""
    graph = graph_for_split(quadruples, split)
    model = APHModel(graph, hp, seed=config.seed)
    items = {r.item_id for r in records}
    history = train(model, split.train, config, split.validation, all_items=items)
    return model, evaluate(model, split, config, history, all_records=records)


def run_ablation(dataset, hp: HyperParams, config: TrainConfig, variants=ABLATION_VARIANTS, seeds=(42,),
                 test_ratio: float = 0.2, val_ratio: float = 0.08) -> dict:
    """Test MSE of each model variant over several seeds.

    ``dataset(seed)`` returns ``(records, quadruples)``. Within a seed all
    variants share the data, the split and the initialization seed.
    """
    seeds = list(seeds)
    mses = {v: [] for v in variants}
    for seed in seeds:
        records, quads = dataset(seed)
        split = split_dataset(records, test_ratio, val_ratio, seed)
        cfg = replace(config, seed=seed)
        for v in variants:
            _, rep = run_experiment(records, quads, split, replace(hp, variant=v), cfg)
            mses[v].append(rep.mse)
            log.info("ablation seed %d %s mse %.4f", seed, v, rep.mse)
    rows = {v: {"mse": m, "mean_mse": float(np.mean(m))} for v, m in mses.items()}
    return {"seeds": seeds, "variants": rows, "best": min(rows, key=lambda v: rows[v]["mean_mse"]),
            "config": {"train": asdict(config), "model": asdict(hp)}}
