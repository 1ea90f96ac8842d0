import json

import pytest

from aph.corpus import Lexicon, ParsedSentence, ReviewRecord, Token

POSITIVE = {"amazing", "comfortable", "superior", "excellent", "good", "great"}
NEGATIVE = {"terrible", "poor", "bad"}


def sentence(rows, review_id=None, sent_id="s"):
    """rows: (form, lemma, upos, head, deprel), ids assigned 1..n."""
    toks = [Token(k, f, l, u, h, d) for k, (f, l, u, h, d) in enumerate(rows, 1)]
    meta = {} if review_id is None else {"review_id": review_id}
    return ParsedSentence(toks, meta, sent_id)


def conllu_block(rows, review_id, sent_id):
    lines = [f"# sent_id = {sent_id}", f"# review_id = {review_id}"]
    for k, (f, l, u, h, d) in enumerate(rows, 1):
        lines.append("\t".join([str(k), f, l, u, "_", "_", str(h), d, "_", "_"]))
    return "\n".join(lines) + "\n\n"


AMAZING = [("Amazing", "amazing", "ADJ", 2, "amod"), ("sound", "sound", "NOUN", 0, "root"),
           ("and", "and", "CCONJ", 4, "cc"), ("quality", "quality", "NOUN", 2, "conj"),
           (",", ",", "PUNCT", 2, "punct"), ("all", "all", "DET", 2, "appos"),
           ("in", "in", "ADP", 9, "case"), ("one", "one", "NUM", 9, "nummod"),
           ("headset", "headset", "NOUN", 6, "nmod")]
# spaCy-style: linking verb heads nsubj and acomp
SUPERIOR = [("Quality", "quality", "NOUN", 2, "nsubj"), ("is", "be", "VERB", 0, "ROOT"),
            ("superior", "superior", "ADJ", 2, "acomp"), ("and", "and", "CCONJ", 2, "cc"),
            ("comfort", "comfort", "NOUN", 6, "nsubj"), ("is", "be", "VERB", 2, "conj"),
            ("excellent", "excellent", "ADJ", 6, "acomp")]
# unlemmatized parse, so the aspect keeps the surface form "pops"
POPS = [("this", "_", "PRON", 3, "nsubj"), ("will", "_", "AUX", 3, "aux"),
        ("eliminate", "_", "VERB", 0, "root"), ("the", "_", "DET", 5, "det"),
        ("pops", "_", "NOUN", 3, "dobj")]
TERRIBLE = [("The", "the", "DET", 2, "det"), ("sound", "sound", "NOUN", 4, "nsubj"),
            ("is", "be", "AUX", 4, "cop"), ("terrible", "terrible", "ADJ", 0, "root")]
CUSHIONS = [("Comfortable", "comfortable", "ADJ", 2, "amod"), ("cushions", "cushion", "NOUN", 0, "root"),
            (".", ".", "PUNCT", 2, "punct")]
POOR = [("The", "the", "DET", 2, "det"), ("quality", "quality", "NOUN", 4, "nsubj"),
        ("is", "be", "AUX", 4, "cop"), ("poor", "poor", "ADJ", 0, "root")]


@pytest.fixture
def lexicon():
    return Lexicon(frozenset(POSITIVE), frozenset(NEGATIVE))


@pytest.fixture
def headset():
    """Three users reviewing one item, five aspect mentions in total."""
    reviews = [ReviewRecord("u1", "i1", 5.0, "Amazing sound and quality", "r1"),
               ReviewRecord("u2", "i1", 2.0, "The sound is terrible", "r2"),
               ReviewRecord("u3", "i1", 3.0, "Comfortable cushions. The quality is poor", "r3")]
    sents = [sentence(AMAZING, "r1", "s1"), sentence(TERRIBLE, "r2", "s2"),
             sentence(CUSHIONS, "r3", "s3"), sentence(POOR, "r3", "s4")]
    return reviews, sents


@pytest.fixture
def headset_files(tmp_path):
    (tmp_path / "reviews.jsonl").write_text("".join(json.dumps(r) + "\n" for r in [
        {"user": "u1", "item": "i1", "rating": 5, "text": "Amazing sound and quality", "review_id": "r1"},
        {"user": "u2", "item": "i1", "rating": 2, "text": "The sound is terrible", "review_id": "r2"},
        {"user": "u3", "item": "i1", "rating": 3, "text": "Comfortable cushions. The quality is poor",
         "review_id": "r3"}]))
    (tmp_path / "parses.conllu").write_text(
        conllu_block(AMAZING, "r1", "s1") + conllu_block(TERRIBLE, "r2", "s2")
        + conllu_block(CUSHIONS, "r3", "s3") + conllu_block(POOR, "r3", "s4"))
    (tmp_path / "pos.txt").write_text(";; positive words\n" + "\n".join(sorted(POSITIVE)) + "\n")
    (tmp_path / "neg.txt").write_text("\n".join(sorted(NEGATIVE)) + "\n")
    return tmp_path
