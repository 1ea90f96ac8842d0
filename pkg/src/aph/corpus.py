"""Review, parse, lexicon and synonym loading plus dataset splitting."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ROOT = 0

# UD v2 universal relations plus the English labels spaCy emits (acomp, dobj, ...)
UD_RELATIONS = frozenset("""
acl advcl advmod amod appos aux case cc ccomp clf compound conj cop csubj dep
det discourse dislocated expl fixed flat goeswith iobj list mark nmod nsubj
nummod obj obl orphan parataxis punct reparandum root vocative xcomp
""".split())
SPACY_RELATIONS = frozenset("""
acomp agent attr auxpass csubjpass dative dobj intj meta neg nn npadvmod
nsubjpass num number oprd pcomp pobj poss preconj predet prep prt quantmod
relcl
""".split())
KNOWN_RELATIONS = UD_RELATIONS | SPACY_RELATIONS | {"ROOT"}


class CorpusError(ValueError):
    pass


@dataclass
class ReviewRecord:
    user_id: str
    item_id: str
    rating: float
    text: str = ""
    review_id: str = ""
    sentence_ids: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"user": self.user_id, "item": self.item_id, "rating": self.rating,
                "text": self.text, "review_id": self.review_id}


@dataclass(frozen=True)
class Token:
    id: int
    form: str
    lemma: str
    upos: str
    head: int
    deprel: str

    @property
    def norm(self) -> str:
        """Lowercased lemma, falling back to the surface form when unlemmatized."""
        base = self.lemma if self.lemma and self.lemma != "_" else self.form
        return base.lower()


@dataclass
class ParsedSentence:
    tokens: list
    metadata: dict = field(default_factory=dict)
    sent_id: str = ""

    def __post_init__(self):
        n = len(self.tokens)
        ids = [t.id for t in self.tokens]
        if len(set(ids)) != n:
            dup = [k for k, c in Counter(ids).items() if c > 1]
            raise CorpusError(f"sentence {self.sent_id!r}: duplicate token ids {dup}")
        if sorted(ids) != list(range(1, n + 1)):
            raise CorpusError(f"sentence {self.sent_id!r}: token ids must be 1..{n}, got {ids}")
        for t in self.tokens:
            if not 0 <= t.head <= n:
                raise CorpusError(f"sentence {self.sent_id!r}: token {t.id} head {t.head} out of range 0..{n}")
            if t.deprel.split(":")[0] not in KNOWN_RELATIONS:
                raise CorpusError(f"sentence {self.sent_id!r}: unknown dependency label {t.deprel!r}")
        roots = [t.id for t in self.tokens if t.head == ROOT]
        if n and len(roots) != 1:
            raise CorpusError(f"sentence {self.sent_id!r}: expected exactly one root, found {len(roots)}")
        self.tokens = sorted(self.tokens, key=lambda t: t.id)

    @property
    def review_id(self):
        return self.metadata.get("review_id")

    def token(self, tid: int) -> Token:
        return self.tokens[tid - 1]

    def children(self, tid: int) -> list:
        return [t for t in self.tokens if t.head == tid]


@dataclass
class Lexicon:
    positive: frozenset
    negative: frozenset

    def __post_init__(self):
        self.positive = frozenset(w.lower() for w in self.positive)
        self.negative = frozenset(w.lower() for w in self.negative)
        both = self.positive & self.negative
        if both:
            raise CorpusError(f"lexicon words listed as both positive and negative: {sorted(both)[:10]}")

    @classmethod
    def from_files(cls, positive_path, negative_path) -> "Lexicon":
        return cls(_read_wordlist(positive_path), _read_wordlist(negative_path))


@dataclass
class SynonymTable:
    mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        for src, dst in self.mapping.items():
            if self.mapping.get(dst, dst) != dst:
                raise CorpusError(f"synonym table not idempotent: {src} -> {dst} -> {self.mapping[dst]}")

    def __call__(self, lemma: str) -> str:
        return self.mapping.get(lemma, lemma)

    @classmethod
    def from_tsv(cls, path) -> "SynonymTable":
        mapping = {}
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(f"{path}:{n}: expected 'lemma<TAB>canonical'")
            mapping[parts[0].strip().lower()] = parts[1].strip().lower()
        return cls(mapping)


@dataclass
class DatasetSplit:
    train: list
    test: list
    validation: list
    seed: int


def _read_wordlist(path) -> set:
    words = set()
    # the public opinion lexicon ships latin-1 with ';' comment headers
    for line in Path(path).read_text(encoding="utf-8", errors="replace").splitlines():
        line = line.strip()
        if line and not line.startswith((";", "#")):
            words.add(line.lower())
    return words


def load_reviews(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"review file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{n}: malformed JSON ({exc.msg})") from None
            for key in ("user", "item", "rating"):
                if key not in obj:
                    raise CorpusError(f"{path}:{n}: missing mandatory field {key!r}")
            try:
                rating = float(obj["rating"])
            except (TypeError, ValueError):
                raise CorpusError(f"{path}:{n}: non-numeric rating {obj['rating']!r}") from None
            if not math.isfinite(rating) or not 1.0 <= rating <= 5.0:
                raise CorpusError(f"{path}:{n}: rating {rating} outside [1, 5]")
            user, item = str(obj["user"]), str(obj["item"])
            if not user or not item:
                raise CorpusError(f"{path}:{n}: empty user or item id")
            records.append(ReviewRecord(user, item, rating, str(obj.get("text", "")),
                                        str(obj.get("review_id", n))))
    return records


def save_reviews(records, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def _parse_block(lines, first_line, path):
    tokens, meta = [], {}
    for n, line in lines:
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, val = body.partition("=")
                meta[key.strip()] = val.strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise CorpusError(f"{path}:{n}: expected 10 tab-separated columns, got {len(cols)}")
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue  # multiword ranges and empty nodes
        try:
            head = ROOT if cols[6] in ("0", "_") else int(cols[6])
            tokens.append(Token(int(tid), cols[1], cols[2], cols[3], head, cols[7]))
        except ValueError:
            raise CorpusError(f"{path}:{n}: non-integer token id or head") from None
    try:
        return ParsedSentence(tokens, meta, meta.get("sent_id", f"line{first_line}"))
    except CorpusError as exc:
        raise CorpusError(f"{path}:{first_line}: {exc}") from None


def load_conllu(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CoNLL-U file not found: {path}")
    sentences, block = [], []
    with path.open(encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if line.strip():
                block.append((n, line))
            elif block:
                sentences.append(_parse_block(block, block[0][0], path))
                block = []
    if block:
        sentences.append(_parse_block(block, block[0][0], path))
    return [s for s in sentences if s.tokens]


def align(records, sentences) -> dict:
    """Attach sentences to reviews via their ``# review_id`` comment.

    Fills ``record.sentence_ids`` with indices into ``sentences`` and returns
    ``{review_id: [ParsedSentence, ...]}``. Sentences naming an unknown
    review are logged and dropped.
    """
    by_review = {r.review_id: r for r in records}
    if len(by_review) != len(records):
        raise CorpusError("duplicate review_id values in review records")
    grouped = {rid: [] for rid in by_review}
    orphans = 0
    for k, s in enumerate(sentences):
        rid = s.review_id
        if rid not in by_review:
            orphans += 1
            continue
        by_review[rid].sentence_ids.append(k)
        grouped[rid].append(s)
    if orphans:
        log.warning("%d parsed sentences reference unknown review ids", orphans)
    return grouped


def filter_min_reviews(records, k: int) -> list:
    """Iterated k-core over users and items."""
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = list(records)
    while True:
        users = Counter(r.user_id for r in kept)
        items = Counter(r.item_id for r in kept)
        nxt = [r for r in kept if users[r.user_id] >= k and items[r.item_id] >= k]
        if len(nxt) == len(kept):
            return nxt
        kept = nxt


def split_dataset(records, test_ratio: float = 0.2, val_ratio: float = 0.0, seed: int = 42) -> DatasetSplit:
    """Global uniform random split into train / validation / test."""
    if not 0.0 < test_ratio < 1.0:
        raise ValueError(f"test_ratio must lie in (0, 1), got {test_ratio}")
    if not 0.0 <= val_ratio < 1.0 - test_ratio:
        raise ValueError(f"val_ratio must lie in [0, {1.0 - test_ratio}), got {val_ratio}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(math.floor(test_ratio * n + 0.5))
    n_val = int(math.floor(val_ratio * n + 0.5))
    test = [records[j] for j in order[:n_test]]
    val = [records[j] for j in order[n_test:n_test + n_val]]
    train = [records[j] for j in order[n_test + n_val:]]
    return DatasetSplit(train=train, test=test, validation=val, seed=seed)
