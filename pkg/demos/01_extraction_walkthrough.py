"""Walk through aspect extraction on three hand-parsed reviews.

Each review is one user's opinion of the same headset. The parses are
written inline in CoNLL-U-like tuples so the demo runs without a parser.
"""
from aph.corpus import Lexicon, ParsedSentence, ReviewRecord, Token
from aph.extraction import ExtractionConfig, build_quadruples, extract_pairs
from aph.hypergraph import Hypergraph


def parse(rows, review_id):
    toks = [Token(k, f, l, u, h, d) for k, (f, l, u, h, d) in enumerate(rows, 1)]
    return ParsedSentence(toks, {"review_id": review_id})


reviews = [ReviewRecord("u1", "i1", 5.0, "Amazing sound and quality", "r1"),
           ReviewRecord("u2", "i1", 2.0, "The sound is terrible", "r2"),
           ReviewRecord("u3", "i1", 3.0, "Comfortable cushions. The quality is poor", "r3")]
sentences = [
    parse([("Amazing", "amazing", "ADJ", 2, "amod"), ("sound", "sound", "NOUN", 0, "root"),
           ("and", "and", "CCONJ", 4, "cc"), ("quality", "quality", "NOUN", 2, "conj")], "r1"),
    parse([("The", "the", "DET", 2, "det"), ("sound", "sound", "NOUN", 4, "nsubj"),
           ("is", "be", "AUX", 4, "cop"), ("terrible", "terrible", "ADJ", 0, "root")], "r2"),
    parse([("Comfortable", "comfortable", "ADJ", 2, "amod"), ("cushions", "cushion", "NOUN", 0, "root")], "r3"),
    parse([("The", "the", "DET", 2, "det"), ("quality", "quality", "NOUN", 4, "nsubj"),
           ("is", "be", "AUX", 4, "cop"), ("poor", "poor", "ADJ", 0, "root")], "r3"),
]

# %% rule matches per sentence
for s in sentences:
    print(s.metadata["review_id"], [(p.aspect, p.sentiment_word, p.rule) for p in extract_pairs(s)])

# %% polarity from a tiny lexicon, then quadruples
lexicon = Lexicon(frozenset({"amazing", "comfortable"}), frozenset({"terrible", "poor"}))
quads = build_quadruples(reviews, sentences, lexicon, ExtractionConfig(c_t=1))
for q in quads:
    print(q)

# %% the hypergraph: one arity-4 edge per quadruple
g = Hypergraph.from_quadruples(quads)
print(g.stats())
