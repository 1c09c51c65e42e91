"""Regenerate the shipped stand-in corpus ``data/synthetic_corpus.tsv``.

Three categories sharing 30% of their vocabulary, 60 documents each, in the
``label<TAB>text`` format read by ``load_reuters_like``.
"""

from __future__ import annotations

from pathlib import Path

from maskindex.datasets import synthetic_corpus, write_corpus_tsv

OUT = Path(__file__).resolve().parent.parent / "data" / "synthetic_corpus.tsv"

if __name__ == "__main__":
    corpus = synthetic_corpus(docs_per_class=60, overlap=0.3, seed=0,
                              categories=("jobs", "iron-steel", "cotton"))
    write_corpus_tsv(corpus, OUT)
    print(OUT)
