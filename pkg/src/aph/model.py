"""Aspect performance-aware hypergraph network with an FM prediction head.

For a target item ``i`` and each incident hyperedge ``e = (u, i, a, s)``:

    x_q   = ReLU([x_u, x_s] Wq + bq)
    pi(e) = LeakyReLU((x_i W1) . (x_q W2 + x_a W3))
    w(e)  = softmax of pi over all hyperedges of i
    x_hat = sum_e w(e) x_a W4

Aspect fusion pools per-aspect contributions (top-t aspects ranked by their
best edge score, column-wise max), then ``y_i = ReLU(x_hat W7 + b7) (+)
ReLU(g_hat W6 + b6)``. Users are mirrored, with the item playing the
counterpart role inside ``q``. The rating is an FM over ``z = y_u (+) y_i``.

Everything is computed for a whole batch of (user, item) pairs at once; each
pair's item and user get their own edge segment so that the pair's own review
can be masked out during training.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .extraction import POLARITIES
from .hypergraph import ITEM, USER, Hypergraph

APH, MAX, MEAN, NO_FUSION, NO_FM = "APH", "MAX", "MEAN", "NO_FUSION", "NO_FM"
VARIANTS = (APH, MAX, MEAN, NO_FUSION, NO_FM)
VARIANT_ALIASES = {"-AF": NO_FUSION, "-FM": NO_FM}
SIGNED_POLARITY = {"Pos": 1.0, "Neu": 0.0, "Neg": -1.0}
CHECKPOINT_VERSION = 1


@dataclass
class HyperParams:
    d1: int = 8
    d2: int = 8
    t: int | None = None  # aspects kept by fusion pooling; None keeps all
    k: int = 8
    leaky_slope: float = 0.01
    variant: str = APH
    fusion_input: str = "aggregate"  # "embedding" feeds x_i (d1) to W7 instead of x_hat

    def __post_init__(self):
        self.variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("d1", "d2", "k"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.t is not None and self.t < 1:
            raise ValueError("t must be a positive integer or None")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.fusion_input not in ("aggregate", "embedding"):
            raise ValueError("fusion_input must be 'aggregate' or 'embedding'")

    @property
    def fm_dim(self) -> int:
        return (2 if self.variant == NO_FUSION else 4) * self.d2


def glorot(rng, shape) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(n_users, n_items, n_aspects, hp: HyperParams, rng) -> dict:
    d1, d2 = hp.d1, hp.d2
    # embedding rows drawn like a square d1 x d1 glorot map
    limit = np.sqrt(6.0 / (2 * d1))
    sizes = {"E_U": n_users, "E_I": n_items, "E_A": n_aspects, "E_S": len(POLARITIES)}
    p = {name: rng.uniform(-limit, limit, size=(n, d1)) for name, n in sizes.items()}
    for name in ("W1", "W2", "W3", "W4"):
        p[name] = glorot(rng, (d1, d2))
    p["Wq"] = glorot(rng, (2 * d1, d1))
    p["bq"] = np.zeros(d1)
    p["W6"] = glorot(rng, (d2, d2))
    p["b6"] = np.zeros(d2)
    p["W7"] = glorot(rng, (d1 if hp.fusion_input == "embedding" else d2, d2))
    p["b7"] = np.zeros(d2)
    p["b0"] = np.zeros(())
    p["b_u"] = np.zeros(n_users)
    p["b_i"] = np.zeros(n_items)
    p["w"] = np.zeros(hp.fm_dim)
    p["V"] = glorot(rng, (hp.fm_dim, hp.k))
    return {name: T.parameter(v, name=name) for name, v in p.items()}


def fm_pairwise_fast(z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sum over i<j of <v_i, v_j> z_i z_j via the O(d'k) square-of-sums identity."""
    zv = z @ v
    return 0.5 * (zv * zv - (z * z) @ (v * v)).sum(axis=-1)


def fm_pairwise_naive(z: np.ndarray, v: np.ndarray) -> float:
    total = 0.0
    n = z.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            total += float(v[i] @ v[j]) * z[i] * z[j]
    return total


class APHModel:
    def __init__(self, graph: Hypergraph, hp: HyperParams | None = None, seed: int = 42, params=None):
        self.graph = graph
        self.hp = hp or HyperParams()
        self.seed = seed
        if params is None:
            params = init_params(len(graph.users), len(graph.items), len(graph.aspects), self.hp,
                                 np.random.default_rng(seed))
        self.params = params

    # -- ids -----------------------------------------------------------------------

    def user_ids(self, users) -> np.ndarray:
        idx = self.graph.user_index
        return np.array([idx.get(u, -1) if isinstance(u, str) else int(u) for u in users], dtype=np.int64)

    def item_ids(self, items) -> np.ndarray:
        idx = self.graph.item_index
        return np.array([idx.get(i, -1) if isinstance(i, str) else int(i) for i in items], dtype=np.int64)

    def param_list(self) -> list:
        return list(self.params.values())

    # -- hypergraph aggregation + aspect fusion for one side -------------------------

    def _side_edges(self, side, owners, counterparts):
        g = self.graph
        edges, seg = g.gather(side, owners, exclude=counterparts)
        if side == ITEM:
            return edges, seg, g.edge_item, g.edge_user, ("E_I", "E_U")
        return edges, seg, g.edge_user, g.edge_item, ("E_U", "E_I")

    def edge_scores(self, center_tab, other_tab, center, other, aspect, sentiment):
        """Attention logits pi for a flat list of hyperedges."""
        P = self.params
        xc = T.take(P[center_tab], center)
        xo = T.take(P[other_tab], other)
        xs = T.take(P["E_S"], sentiment)
        xa = T.take(P["E_A"], aspect)
        xq = T.relu(T.add(T.matmul(T.concat([xo, xs], axis=1), P["Wq"]), P["bq"]))
        left = T.matmul(xc, P["W1"])
        right = T.add(T.matmul(xq, P["W2"]), T.matmul(xa, P["W3"]))
        return T.leaky_relu(T.tsum(T.mul(left, right), axis=1), self.hp.leaky_slope)

    def side_forward(self, side, owners, counterparts=None, trace=None):
        """Representations ``y`` (n x 2d2 or n x d2) for a list of owners.

        ``counterparts``, when given, masks each owner's edges to that
        counterpart. ``trace`` (a dict) receives intermediate arrays.
        """
        hp, P, g = self.hp, self.params, self.graph
        owners = np.asarray(owners, dtype=np.int64)
        n = owners.size
        edges, seg, center, other, (ctab, otab) = self._side_edges(side, owners, counterparts)
        aspect = g.edge_aspect[edges]
        # edge features do not depend on the owner slot: compute once per distinct edge
        uniq, inv = np.unique(edges, return_inverse=True)
        transformed = T.take(T.matmul(T.take(P["E_A"], g.edge_aspect[uniq]), P["W4"]), inv)
        counts = np.bincount(seg, minlength=n).astype(np.float64)

        score = None
        if hp.variant == MAX:
            x_hat = T.segment_max(transformed, seg, n)
            contrib = transformed
        elif hp.variant == MEAN:
            w = 1.0 / counts[seg]
            contrib = T.mul(transformed, w.reshape(-1, 1))
            x_hat = T.segment_sum(contrib, seg, n)
        else:
            score = T.take(self.edge_scores(ctab, otab, center[uniq], other[uniq], g.edge_aspect[uniq],
                                            g.edge_sentiment[uniq]), inv)
            w = T.segment_softmax(score, seg, n)
            contrib = T.mul(transformed, T.reshape(w, (-1, 1)))
            x_hat = T.segment_sum(contrib, seg, n)

        if hp.fusion_input == "embedding":
            warm = (owners >= 0).astype(np.float64).reshape(-1, 1)
            x_own = T.mul(T.take(P[ctab], np.where(owners >= 0, owners, 0)), warm)
            m = T.relu(T.add(T.matmul(x_own, P["W7"]), P["b7"]))
        else:
            m = T.relu(T.add(T.matmul(x_hat, P["W7"]), P["b7"]))

        if trace is not None:
            trace.update(edges=edges, segment=seg, x_hat=x_hat.data, score=None if score is None else score.data,
                         weight=(w.data if isinstance(w, T.Tensor) else w) if hp.variant != MAX else None)
        if hp.variant == NO_FUSION:
            return m

        # per-(owner, aspect) buckets; rows of the aspect feature matrix
        n_asp = max(len(g.aspects), 1)
        key = seg * n_asp + aspect
        ukey, bucket = np.unique(key, return_inverse=True)
        nb = ukey.size
        owner_of_bucket = ukey // n_asp
        if hp.variant == MAX:
            rows = T.segment_max(contrib, bucket, nb)
        else:
            rows = T.segment_sum(contrib, bucket, nb)
        if hp.t is not None and nb:
            if score is not None:
                rank_key = np.full(nb, -np.inf)
                np.maximum.at(rank_key, bucket, score.data)
            else:
                rank_key = np.bincount(bucket, minlength=nb).astype(np.float64)
            order = np.lexsort((np.arange(nb), -rank_key, owner_of_bucket))
            starts = np.searchsorted(owner_of_bucket[order], owner_of_bucket[order], side="left")
            rank = np.empty(nb, dtype=np.int64)
            rank[order] = np.arange(nb) - starts
            keep = rank < hp.t
            T.record_branch(keep)
            rows = T.take(rows, np.nonzero(keep)[0])
            owner_of_bucket = owner_of_bucket[keep]
        g_hat = T.segment_max(rows, owner_of_bucket, n)
        gvec = T.relu(T.add(T.matmul(g_hat, P["W6"]), P["b6"]))
        if trace is not None:
            trace.update(bucket=bucket, bucket_owner=ukey // n_asp, bucket_aspect=ukey % n_asp)
        return T.concat([m, gvec], axis=1)

    # -- prediction ---------------------------------------------------------------------

    def forward(self, users, items, mask_target: bool = False) -> T.Tensor:
        """Predicted scores (ratings, or CTR logits) for index arrays."""
        P = self.params
        u = np.asarray(users, dtype=np.int64)
        i = np.asarray(items, dtype=np.int64)
        y_u = self.side_forward(USER, u, i if mask_target else None)
        y_i = self.side_forward(ITEM, i, u if mask_target else None)
        bias = T.add(T.mul(T.take(P["b_u"], np.where(u >= 0, u, 0)), (u >= 0).astype(float)),
                     T.mul(T.take(P["b_i"], np.where(i >= 0, i, 0)), (i >= 0).astype(float)))
        bias = T.add(bias, P["b0"])
        if self.hp.variant == NO_FM:
            return T.add(T.tsum(T.mul(y_u, y_i), axis=1), bias)
        z = T.concat([y_u, y_i], axis=1)
        linear = T.matmul(z, P["w"])
        zv = T.matmul(z, P["V"])
        zz = T.matmul(T.square(z), T.square(P["V"]))
        pairwise = T.mul(T.tsum(T.sub(T.square(zv), zz), axis=1), 0.5)
        return T.add(T.add(bias, linear), pairwise)

    def predict(self, users, items) -> np.ndarray:
        return self.forward(self.user_ids(users), self.item_ids(items)).data.copy()

    def regularizer(self) -> T.Tensor:
        total = None
        for p in self.params.values():
            term = T.tsum(T.square(p))
            total = term if total is None else T.add(total, term)
        return total

    def loss(self, users, items, targets, lam: float = 0.0, task: str = "rating",
             mask_target: bool = False) -> T.Tensor:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.size == 0:
            raise ValueError("loss: empty batch")
        pred = self.forward(users, items, mask_target=mask_target)
        if task == "rating":
            data = T.mean(T.square(T.sub(pred, targets)))
        elif task == "ctr":
            data = T.bce_with_logits(pred, targets)
        else:
            raise ValueError(f"unknown task {task!r}")
        if lam:
            data = T.add(data, T.mul(self.regularizer(), lam))
        return data

    # -- single-entity views ----------------------------------------------------------------

    def q_transform(self, x_u, x_s) -> np.ndarray:
        P = self.params
        x = np.concatenate([np.asarray(x_u, float), np.asarray(x_s, float)])
        if x.shape != (2 * self.hp.d1,):
            raise T.ShapeError(f"q_transform: expected two length-{self.hp.d1} vectors")
        return np.maximum(x @ P["Wq"].data + P["bq"].data, 0.0)

    def attention_score(self, x_i, x_q, x_a) -> float:
        P = self.params
        d1 = self.hp.d1
        for v in (x_i, x_q, x_a):
            if np.shape(v) != (d1,):
                raise T.ShapeError(f"attention_score: expected length-{d1} vectors, got {np.shape(v)}")
        s = float((np.asarray(x_i) @ P["W1"].data) @ (np.asarray(x_q) @ P["W2"].data + np.asarray(x_a) @ P["W3"].data))
        return s if s > 0 else s * self.hp.leaky_slope

    def edge_weights(self, item) -> dict:
        i = self.graph._item(item)
        trace = {}
        self.side_forward(ITEM, [i], trace=trace)
        if trace["edges"].size == 0:
            raise ValueError(f"item {item!r} has no hyperedges")
        w = trace["weight"]
        return {int(e): float(x) for e, x in zip(trace["edges"], w)}

    def aggregate_item(self, item) -> np.ndarray:
        return self._aggregate(ITEM, item)

    def aggregate_user(self, user) -> np.ndarray:
        return self._aggregate(USER, user)

    def _aggregate(self, side, owner):
        owner = self.graph._item(owner) if side == ITEM else self.graph._user(owner)
        trace = {}
        self.side_forward(side, np.array([owner]), trace=trace)
        return trace["x_hat"][0].copy()

    def represent(self, side, owner) -> np.ndarray:
        owner = self.graph._item(owner) if side == ITEM else self.graph._user(owner)
        return self.side_forward(side, np.array([owner])).data[0].copy()

    def explain(self, item) -> dict:
        """Per-edge attention dump for one item, grouped by aspect."""
        g = self.graph
        i = g._item(item)
        trace = {}
        self.side_forward(ITEM, [i], trace=trace)
        edges = trace["edges"]
        score, weight = trace["score"], trace["weight"]
        groups = {}
        for pos, e in enumerate(edges):
            a = g.aspects[g.edge_aspect[e]]
            pol = POLARITIES[g.edge_sentiment[e]]
            groups.setdefault(a, []).append({
                "edge": int(e), "user": g.users[g.edge_user[e]], "polarity": pol,
                "score": None if score is None else float(score[pos]),
                "weight": None if weight is None else float(weight[pos]),
            })
        aspects = []
        for a, rows in groups.items():
            signed = [SIGNED_POLARITY[r["polarity"]] for r in rows]
            entry = {"aspect": a, "edges": rows, "num_edges": len(rows),
                     "mean_polarity": float(np.mean(signed))}
            if weight is not None:
                ws = np.array([r["weight"] for r in rows])
                entry["aspect_weight"] = float(ws.sum())
                entry["performance"] = float(ws @ np.array(signed) / ws.sum())
            aspects.append(entry)
        return {"item": g.items[i], "num_edges": int(edges.size), "aspects": aspects}

    # -- checkpoints ----------------------------------------------------------------------------

    def save(self, path) -> None:
        meta = {"version": CHECKPOINT_VERSION, "hyperparams": asdict(self.hp), "seed": self.seed,
                "shapes": {k: list(v.shape) for k, v in self.params.items()}}
        arrays = {k: v.data for k, v in self.params.items()}
        with Path(path).open("wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path, graph: Hypergraph) -> "APHModel":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            hp = HyperParams(**meta["hyperparams"])
            model = cls(graph, hp, seed=meta.get("seed", 42))
            for name, p in model.params.items():
                if name not in z.files:
                    raise ValueError(f"checkpoint lacks parameter {name!r}")
                arr = z[name]
                if arr.shape != p.shape:
                    raise ValueError(f"incompatible checkpoint: {name} has shape {arr.shape}, "
                                     f"graph/config expects {p.shape}")
                p.data = arr.astype(np.float64).copy()
        return model

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict) -> None:
        for k, v in state.items():
            self.params[k].data = v.copy()


def toy_problem(seed: int, d1: int = 4, d2: int = 4, n_edges: int = 10, variant: str = APH, t=None,
                batch: int = 4):
    """Small random graph, model and labeled batch for gradient checking."""
    rng = np.random.default_rng(seed)
    n_u, n_i, n_a = (int(rng.integers(2, 4)) for _ in range(3))
    quads = [(f"u{rng.integers(n_u)}", f"i{rng.integers(n_i)}", f"a{rng.integers(n_a)}",
              POLARITIES[rng.integers(3)]) for _ in range(n_edges)]
    graph = Hypergraph.from_quadruples(quads)
    model = APHModel(graph, HyperParams(d1=d1, d2=d2, t=t, variant=variant), seed=seed)
    # break the zero init of biases and FM weights so every term is exercised
    for name in ("bq", "b6", "b7", "b_u", "b_i", "w"):
        model.params[name].data = rng.normal(scale=0.1, size=model.params[name].shape)
    users = rng.integers(len(graph.users), size=batch)
    items = rng.integers(len(graph.items), size=batch)
    targets = rng.uniform(1.0, 5.0, size=batch)
    return model, users, items, targets


def check_gradients(seed: int, d1: int = 4, d2: int = 4, n_edges: int = 10, variant: str = APH, t=None,
                    lam: float = 0.01) -> float:
    """Max relative error of the regularized loss gradient on one toy instance."""
    model, u, i, y = toy_problem(seed, d1, d2, n_edges, variant, t)
    return T.grad_check(lambda: model.loss(u, i, y, lam=lam, mask_target=True), model.param_list())
