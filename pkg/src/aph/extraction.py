"""Rule-based aspect/sentiment extraction over dependency parses.

Three dependency patterns are tried in order on each sentence:

* ``AMOD``        adjective --amod--> noun             aspect=noun, sentiment=adjective
* ``NSUBJ_ACOMP`` noun <-nsubj- verb -acomp-> adjective aspect=noun, sentiment=adjective
* ``DOBJ``        verb --dobj--> noun                   aspect="verb_noun", sentiment=verb

A noun token used as an aspect by an earlier pattern is not reused by a later
one. Pairs are then canonicalized through a synonym table, filtered by
corpus-wide aspect frequency and labeled with a lexicon polarity.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Lexicon, ParsedSentence, SynonymTable, align

AMOD, NSUBJ_ACOMP, DOBJ = "AMOD", "NSUBJ_ACOMP", "DOBJ"
RULES = (AMOD, NSUBJ_ACOMP, DOBJ)
POS, NEU, NEG = "Pos", "Neu", "Neg"
POLARITIES = (POS, NEU, NEG)

NOUNS = {"NOUN", "PROPN"}
NEGATORS = {"not", "never", "no", "n't"}


@dataclass(frozen=True)
class AspectSentimentPair:
    aspect: str
    sentiment_word: str
    rule: str
    sentence_ref: object = None
    negated: bool = False

    def __post_init__(self):
        if not self.aspect:
            raise ValueError("aspect must be non-empty")
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")


@dataclass(frozen=True)
class Quadruple:
    user_id: str
    item_id: str
    aspect: str
    polarity: str

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ValueError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")


@dataclass
class ExtractionConfig:
    c_t: int = 10
    rules_enabled: frozenset = frozenset(RULES)
    synonym_table: SynonymTable = field(default_factory=SynonymTable)
    negation: bool = True

    def __post_init__(self):
        if self.c_t < 1:
            raise ValueError("c_t must be >= 1")
        unknown = set(self.rules_enabled) - set(RULES)
        if unknown:
            raise ValueError(f"unknown rules {sorted(unknown)}")


def _is_negated(sentence: ParsedSentence, *tids) -> bool:
    for tid in tids:
        for child in sentence.children(tid):
            if child.deprel == "neg" or child.norm in NEGATORS:
                return True
    return False


def _amod_pairs(sentence, used, ref):
    pairs = []
    for adj in sentence.tokens:
        if adj.deprel != "amod" or adj.upos != "ADJ" or adj.head == 0:
            continue
        noun = sentence.token(adj.head)
        if noun.upos not in NOUNS or noun.id in used:
            continue
        negated = _is_negated(sentence, adj.id)
        # nouns coordinated with the modified noun share its adjective unless
        # they carry their own amod
        group = [noun]
        frontier = [noun.id]
        while frontier:
            nxt = []
            for tid in frontier:
                for c in sentence.children(tid):
                    if c.deprel == "conj" and c.upos in NOUNS:
                        own = any(g.deprel == "amod" and g.upos == "ADJ" for g in sentence.children(c.id))
                        if not own:
                            group.append(c)
                            nxt.append(c.id)
            frontier = nxt
        for n in group:
            if n.id in used:
                continue
            used.add(n.id)
            pairs.append(AspectSentimentPair(n.norm, adj.norm, AMOD, ref, negated))
    return pairs


def _nsubj_acomp_pairs(sentence, used, ref):
    pairs = []
    for head in sentence.tokens:
        kids = sentence.children(head.id)
        subj = next((c for c in kids if c.deprel == "nsubj" and c.upos in NOUNS), None)
        if subj is None or subj.id in used:
            continue
        adj = next((c for c in kids if c.deprel == "acomp" and c.upos == "ADJ"), None)
        if adj is not None:
            negated = _is_negated(sentence, adj.id, head.id)
        elif head.upos == "ADJ" and any(c.deprel == "cop" for c in kids):
            # UD-style copula: the adjective heads both nsubj and cop
            adj = head
            negated = _is_negated(sentence, adj.id)
        else:
            continue
        used.add(subj.id)
        pairs.append(AspectSentimentPair(subj.norm, adj.norm, NSUBJ_ACOMP, ref, negated))
    return pairs


def _dobj_pairs(sentence, used, ref):
    pairs = []
    for obj in sentence.tokens:
        if obj.deprel not in ("dobj", "obj") or obj.upos not in NOUNS or obj.head == 0:
            continue
        verb = sentence.token(obj.head)
        if verb.upos != "VERB" or obj.id in used:
            continue
        used.add(obj.id)
        pairs.append(AspectSentimentPair(f"{verb.norm}_{obj.norm}", verb.norm, DOBJ, ref,
                                         _is_negated(sentence, verb.id)))
    return pairs


_RULE_FNS = {AMOD: _amod_pairs, NSUBJ_ACOMP: _nsubj_acomp_pairs, DOBJ: _dobj_pairs}


def extract_pairs(sentence: ParsedSentence, rules=RULES, ref=None) -> list:
    used: set = set()
    ref = sentence.sent_id if ref is None else ref
    out = []
    for rule in RULES:
        if rule in rules:
            out.extend(_RULE_FNS[rule](sentence, used, ref))
    return out


def _canonical(pair: AspectSentimentPair, table: SynonymTable) -> str:
    if pair.rule == DOBJ:
        verb, _, noun = pair.aspect.partition("_")
        return f"{verb}_{table(noun)}"
    return table(pair.aspect)


def merge_synonyms(pairs, table: SynonymTable) -> list:
    out = []
    for p in pairs:
        aspect = _canonical(p, table)
        out.append(p if aspect == p.aspect else AspectSentimentPair(
            aspect, p.sentiment_word, p.rule, p.sentence_ref, p.negated))
    return out


def filter_low_frequency(pairs, c_t: int) -> list:
    if c_t < 1:
        raise ValueError("c_t must be >= 1")
    counts = Counter(p.aspect for p in pairs)
    return [p for p in pairs if counts[p.aspect] >= c_t]


def assign_polarity(pair: AspectSentimentPair, lexicon: Lexicon, negation: bool = True) -> str:
    word = pair.sentiment_word.lower()
    if word in lexicon.positive:
        polarity = POS
    elif word in lexicon.negative:
        polarity = NEG
    else:
        return NEU
    if negation and pair.negated:
        polarity = NEG if polarity == POS else POS
    return polarity


def build_quadruples(reviews, sentences, lexicon: Lexicon, config: ExtractionConfig | None = None) -> list:
    """Run extract -> merge -> filter -> polarity and collapse duplicates.

    ``sentences`` is either a flat list of parsed sentences (aligned through
    their ``review_id`` comment) or an already aligned ``{review_id: [...]}``.
    """
    config = config or ExtractionConfig()
    grouped = sentences if isinstance(sentences, dict) else align(reviews, sentences)
    tagged = []
    for r in reviews:
        for k, sent in enumerate(grouped.get(r.review_id, ())):
            for p in extract_pairs(sent, config.rules_enabled, ref=(r.review_id, k)):
                tagged.append((r, p))
    merged = merge_synonyms([p for _, p in tagged], config.synonym_table)
    counts = Counter(p.aspect for p in merged)
    seen, quads = set(), []
    for (r, _), p in zip(tagged, merged):
        if counts[p.aspect] < config.c_t:
            continue
        q = Quadruple(r.user_id, r.item_id, p.aspect, assign_polarity(p, lexicon, config.negation))
        if q not in seen:
            seen.add(q)
            quads.append(q)
    return quads


def aspect_stats(quadruples, top_k: int = 10) -> dict:
    counts = Counter(q.aspect for q in quadruples)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    histogram = Counter(counts.values())
    return {
        "num_aspects": len(counts),
        "num_quadruples": len(quadruples),
        "polarity_counts": {p: sum(q.polarity == p for q in quadruples) for p in POLARITIES},
        "histogram": {str(f): histogram[f] for f in sorted(histogram)},
        "top_aspects": [[a, c] for a, c in ranked[:top_k]],
    }


def write_quadruples(quadruples, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for q in quadruples:
            fh.write(f"{q.user_id}\t{q.item_id}\t{q.aspect}\t{q.polarity}\n")


def read_quadruples(path) -> list:
    quads = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{n}: expected user<TAB>item<TAB>aspect<TAB>polarity")
        quads.append(Quadruple(*parts))
    return quads


def write_stats(stats: dict, path) -> None:
    Path(path).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
