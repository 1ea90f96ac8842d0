"""Typed hypergraph over (user, item, aspect, polarity) quadruples.

The incidence matrix is never materialized. Hyperedges are stored as four
parallel index arrays, grouped per item and per user in CSR form, and
``incidence(v, e)`` answers single-entry lookups.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .extraction import POLARITIES, Quadruple

USER, ITEM, ASPECT, SENTIMENT = "User", "Item", "Aspect", "Sentiment"
FORMAT = "aph-hypergraph"
VERSION = 1


def _csr(keys: np.ndarray, n: int, tiebreak: np.ndarray):
    order = np.lexsort((np.arange(keys.size), tiebreak, keys))
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=offsets[1:])
    return offsets, order.astype(np.int64)


@dataclass
class IncidenceIndex:
    """Grouped hyperedge ids for each item and each user.

    Within an item's group, edges are ordered by the item's aspect order
    (first appearance), then by edge id, so every ``(item, aspect)`` bucket is
    a contiguous run. Same layout for users.
    """
    item_offsets: np.ndarray
    item_edges: np.ndarray
    user_offsets: np.ndarray
    user_edges: np.ndarray
    aspects_by_item: list
    aspects_by_user: list
    edges_by_item_aspect: dict
    edges_by_user_aspect: dict


class Hypergraph:
    def __init__(self, users, items, aspects, edge_user, edge_item, edge_aspect, edge_sentiment):
        self.users = list(users)
        self.items = list(items)
        self.aspects = list(aspects)
        self.user_index = {u: k for k, u in enumerate(self.users)}
        self.item_index = {i: k for k, i in enumerate(self.items)}
        self.aspect_index = {a: k for k, a in enumerate(self.aspects)}
        self.edge_user = np.asarray(edge_user, dtype=np.int64)
        self.edge_item = np.asarray(edge_item, dtype=np.int64)
        self.edge_aspect = np.asarray(edge_aspect, dtype=np.int64)
        self.edge_sentiment = np.asarray(edge_sentiment, dtype=np.int64)
        self._assign_vertices()
        self.index = self._build_index()

    # -- construction -----------------------------------------------------------

    def _assign_vertices(self):
        # dense vertex ids in order of first appearance across edges
        self.vertices = []
        self._vid = {}
        for e in range(self.num_edges):
            for key in ((USER, self.users[self.edge_user[e]]), (ITEM, self.items[self.edge_item[e]]),
                        (ASPECT, self.aspects[self.edge_aspect[e]]),
                        (SENTIMENT, POLARITIES[self.edge_sentiment[e]])):
                if key not in self._vid:
                    self._vid[key] = len(self.vertices)
                    self.vertices.append((key[1], key[0]))
        self.hyperedges = [
            (self._vid[(USER, self.users[u])], self._vid[(ITEM, self.items[i])],
             self._vid[(ASPECT, self.aspects[a])], self._vid[(SENTIMENT, POLARITIES[s])])
            for u, i, a, s in zip(self.edge_user, self.edge_item, self.edge_aspect, self.edge_sentiment)]

    def _build_index(self) -> IncidenceIndex:
        # aspect rank = first-appearance position within the owner's edges
        by_item, by_user = {}, {}
        for e in range(self.num_edges):
            i, u, a = int(self.edge_item[e]), int(self.edge_user[e]), int(self.edge_aspect[e])
            by_item.setdefault(i, {}).setdefault(a, []).append(e)
            by_user.setdefault(u, {}).setdefault(a, []).append(e)
        aspects_by_item = [list(by_item.get(i, {})) for i in range(len(self.items))]
        aspects_by_user = [list(by_user.get(u, {})) for u in range(len(self.users))]
        item_rank = np.array([aspects_by_item[i].index(a) for i, a in zip(self.edge_item, self.edge_aspect)],
                             dtype=np.int64)
        user_rank = np.array([aspects_by_user[u].index(a) for u, a in zip(self.edge_user, self.edge_aspect)],
                             dtype=np.int64)
        io, ie = _csr(self.edge_item, len(self.items), item_rank)
        uo, ue = _csr(self.edge_user, len(self.users), user_rank)
        return IncidenceIndex(
            io, ie, uo, ue, aspects_by_item, aspects_by_user,
            {(i, a): np.array(es, dtype=np.int64) for i, g in by_item.items() for a, es in g.items()},
            {(u, a): np.array(es, dtype=np.int64) for u, g in by_user.items() for a, es in g.items()})

    @classmethod
    def from_quadruples(cls, quadruples, users=None, items=None, aspects=None) -> "Hypergraph":
        """One hyperedge per distinct quadruple.

        ``users``/``items``/``aspects`` optionally fix the vocabulary (e.g. to
        cover training records without any extracted aspect); otherwise ids
        follow first appearance.
        """
        vocab = [dict.fromkeys(v or ()) for v in (users, items, aspects)]
        seen, rows = set(), []
        for q in quadruples:
            q = q if isinstance(q, Quadruple) else Quadruple(*q)
            if q in seen:
                continue
            seen.add(q)
            for v, name in zip(vocab, (q.user_id, q.item_id, q.aspect)):
                v.setdefault(name)
            rows.append(q)
        uidx, iidx, aidx = ({n: k for k, n in enumerate(v)} for v in vocab)
        return cls(list(vocab[0]), list(vocab[1]), list(vocab[2]),
                   [uidx[q.user_id] for q in rows], [iidx[q.item_id] for q in rows],
                   [aidx[q.aspect] for q in rows], [POLARITIES.index(q.polarity) for q in rows])

    # -- basic queries -------------------------------------------------------------

    @property
    def num_edges(self) -> int:
        return int(self.edge_user.size)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def vertex_id(self, name: str, node_type: str) -> int:
        try:
            return self._vid[(node_type, name)]
        except KeyError:
            raise KeyError(f"unknown {node_type} vertex {name!r}") from None

    def incidence(self, v: int, e: int) -> int:
        if not 0 <= v < self.num_vertices:
            raise IndexError(f"vertex id {v} out of range")
        if not 0 <= e < self.num_edges:
            raise IndexError(f"hyperedge id {e} out of range")
        return int(v in self.hyperedges[e])

    def type_counts(self) -> dict:
        counts = {USER: 0, ITEM: 0, ASPECT: 0, SENTIMENT: 0}
        for _, t in self.vertices:
            counts[t] += 1
        return counts

    def _item(self, item) -> int:
        if isinstance(item, str):
            if item not in self.item_index:
                raise KeyError(f"unknown item {item!r}")
            return self.item_index[item]
        if not 0 <= item < len(self.items):
            raise KeyError(f"unknown item index {item}")
        return int(item)

    def _user(self, user) -> int:
        if isinstance(user, str):
            if user not in self.user_index:
                raise KeyError(f"unknown user {user!r}")
            return self.user_index[user]
        if not 0 <= user < len(self.users):
            raise KeyError(f"unknown user index {user}")
        return int(user)

    def _aspect(self, aspect) -> int:
        if isinstance(aspect, str):
            if aspect not in self.aspect_index:
                raise KeyError(f"unknown aspect {aspect!r}")
            return self.aspect_index[aspect]
        return int(aspect)

    def edges_of_item(self, item) -> np.ndarray:
        i = self._item(item)
        return self.index.item_edges[self.index.item_offsets[i]:self.index.item_offsets[i + 1]]

    def edges_of_user(self, user) -> np.ndarray:
        u = self._user(user)
        return self.index.user_edges[self.index.user_offsets[u]:self.index.user_offsets[u + 1]]

    def edges_of_item_aspect(self, item, aspect) -> np.ndarray:
        key = (self._item(item), self._aspect(aspect))
        if key not in self.index.edges_by_item_aspect:
            raise KeyError(f"item {item!r} has no aspect {aspect!r}")
        return self.index.edges_by_item_aspect[key]

    def edges_of_user_aspect(self, user, aspect) -> np.ndarray:
        key = (self._user(user), self._aspect(aspect))
        if key not in self.index.edges_by_user_aspect:
            raise KeyError(f"user {user!r} has no aspect {aspect!r}")
        return self.index.edges_by_user_aspect[key]

    def neighbor_aspects(self, item) -> list:
        return list(self.index.aspects_by_item[self._item(item)])

    def neighbor_aspects_of_user(self, user) -> list:
        return list(self.index.aspects_by_user[self._user(user)])

    # -- batched gathering -----------------------------------------------------------

    def gather(self, side: str, owners, exclude=None):
        """Concatenate the edge groups of several owners.

        Returns ``(edge_ids, segment)`` where ``segment[k]`` is the position in
        ``owners`` that edge ``k`` belongs to. Owners < 0 (cold) contribute no
        edges. If ``exclude`` is given (one counterpart id per owner), edges
        whose counterpart equals it are dropped, which removes the target
        interaction's own review from its representation.
        """
        if side == ITEM:
            offsets, order, other = self.index.item_offsets, self.index.item_edges, self.edge_user
        elif side == USER:
            offsets, order, other = self.index.user_offsets, self.index.user_edges, self.edge_item
        else:
            raise ValueError(f"side must be {ITEM!r} or {USER!r}")
        owners = np.asarray(owners, dtype=np.int64)
        warm = owners >= 0
        safe = np.where(warm, owners, 0)
        lengths = np.where(warm, offsets[safe + 1] - offsets[safe], 0)
        seg = np.repeat(np.arange(owners.size), lengths)
        firsts = np.repeat(offsets[safe], lengths)
        within = np.arange(seg.size) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        edges = order[firsts + within]
        if exclude is not None:
            keep = other[edges] != np.repeat(np.asarray(exclude, dtype=np.int64), lengths)
            edges, seg = edges[keep], seg[keep]
        return edges, seg

    # -- serialization ---------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": FORMAT, "version": VERSION,
            "users": self.users, "items": self.items, "aspects": self.aspects,
            "edges": [[int(u), int(i), int(a), POLARITIES[s]] for u, i, a, s in
                      zip(self.edge_user, self.edge_item, self.edge_aspect, self.edge_sentiment)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Hypergraph":
        if obj.get("format") != FORMAT:
            raise ValueError("not a serialized hypergraph")
        if obj.get("version") != VERSION:
            raise ValueError(f"unsupported hypergraph version {obj.get('version')}")
        edges = obj["edges"]
        return cls(obj["users"], obj["items"], obj["aspects"],
                   [e[0] for e in edges], [e[1] for e in edges], [e[2] for e in edges],
                   [POLARITIES.index(e[3]) for e in edges])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Hypergraph":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def stats(self) -> dict:
        return {"num_vertices": self.num_vertices, "num_edges": self.num_edges,
                "vertex_types": self.type_counts(),
                "num_users": len(self.users), "num_items": len(self.items), "num_aspects": len(self.aspects)}


def build_hypergraph(quadruples, **vocab):
    graph = Hypergraph.from_quadruples(quadruples, **vocab)
    return graph, graph.index
