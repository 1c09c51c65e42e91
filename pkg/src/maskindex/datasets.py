"""Dataset generators and loaders: Gaussian / Student-t clouds, TF-IDF text,
Reuters-style corpora, and the intrinsic-dimensionality estimate."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Hashable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .core import Dataset, as_metric, make_rng, rows
from .stopwords import STOP_WORDS

# Distance between adjacent cloud means on the ring, in units of sigma.
# The figures give no parameters; these reproduce the no / moderate /
# remarkable overlap regimes (about 0%, 10-15% and 40% point-search error
# at 8 x 200 points with groups of 16 and 8 centroids).
OVERLAP_SPACING = {"GNO": 10.0, "GMO": 4.0, "GRO": 2.0}


def ring_means(n_clouds: int, spacing: float, dim: int = 2) -> np.ndarray:
    """Cloud centers evenly spaced on a circle, adjacent ones ``spacing`` apart."""
    if n_clouds < 1 or dim < 2:
        raise ValueError("need at least one cloud in at least two dimensions")
    means = np.zeros((n_clouds, dim))
    if n_clouds == 1:
        return means
    radius = spacing / (2 * math.sin(math.pi / n_clouds))
    ang = 2 * math.pi * np.arange(n_clouds) / n_clouds
    means[:, 0] = radius * np.cos(ang)
    means[:, 1] = radius * np.sin(ang)
    return means


@dataclass(frozen=True)
class CloudSpec:
    n_clouds: int = 8
    points_per_cloud: int = 200
    dim: int = 2
    means: Optional[tuple] = None
    sigma: float = 1.0
    seed: int = 0
    family: str = "gaussian"
    dof: float = 12.0
    spacing: float = 10.0

    def __post_init__(self):
        if self.n_clouds < 1 or self.points_per_cloud < 1 or self.dim < 1:
            raise ValueError("n_clouds, points_per_cloud and dim must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.family not in ("gaussian", "student_t"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "student_t" and not self.dof > 0:
            raise ValueError("dof must be positive for student_t clouds")
        if self.means is not None:
            m = np.asarray(self.means, dtype=np.float64)
            if m.shape != (self.n_clouds, self.dim):
                raise ValueError(f"means must have shape ({self.n_clouds}, {self.dim})")

    def center_matrix(self) -> np.ndarray:
        if self.means is not None:
            return np.asarray(self.means, dtype=np.float64)
        return ring_means(self.n_clouds, self.spacing * self.sigma, self.dim)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["means"] is not None:
            d["means"] = [list(map(float, r)) for r in d["means"]]
        return d


def overlap_preset(name: str, points_per_cloud: int = 200, seed: int = 0,
                   n_clouds: int = 8) -> CloudSpec:
    key = name.upper()
    if key not in OVERLAP_SPACING:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(OVERLAP_SPACING)}")
    return CloudSpec(n_clouds=n_clouds, points_per_cloud=points_per_cloud, seed=seed,
                     spacing=OVERLAP_SPACING[key])


def bombard_spec(points_per_cloud: int = 250, seed: int = 0) -> CloudSpec:
    """Four well separated Student-t(12) clouds in the plane."""
    means = ((-6.0, -6.0), (-6.0, 6.0), (6.0, -6.0), (6.0, 6.0))
    return CloudSpec(n_clouds=4, points_per_cloud=points_per_cloud, means=means,
                     sigma=1.0, seed=seed, family="student_t", dof=12.0)


def gen_clouds(spec: CloudSpec) -> Dataset:
    """Sample the clouds; labels give the generating cloud index."""
    rng = make_rng(spec.seed, 10)
    centers = spec.center_matrix()
    shape = (spec.n_clouds, spec.points_per_cloud, spec.dim)
    if spec.family == "gaussian":
        noise = rng.standard_normal(shape)
    else:
        noise = rng.standard_t(spec.dof, size=shape)
    pts = (centers[:, None, :] + spec.sigma * noise).reshape(-1, spec.dim)
    labels = np.repeat(np.arange(spec.n_clouds), spec.points_per_cloud).tolist()
    return Dataset(pts, labels=labels, meta={"spec": spec.to_dict()})


def measured_overlap(dataset: Dataset, centers: np.ndarray) -> float:
    """Fraction of points whose nearest cloud center is not their generator."""
    X = dataset.dense_rows(np.arange(len(dataset)))
    d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) != np.asarray(dataset.labels)))


# -- text ------------------------------------------------------------------

_WORD = re.compile(r"[^\W\d_]+")


def tokenize(text: str) -> list[str]:
    """Lower-case alphabetic runs; digits, punctuation and whitespace drop out."""
    return _WORD.findall(text.lower())


def clean_tokens(tokens: Iterable[str], stop_words=STOP_WORDS,
                 stem: Optional[Callable[[str], str]] = None) -> list[str]:
    out = []
    for tok in tokens:
        for word in _WORD.findall(tok.lower()):
            if word in stop_words:
                continue
            if stem is not None:
                word = stem(word)
                if not word:
                    continue
            out.append(word)
    return out


_SUFFIXES = ("ational", "ization", "fulness", "iveness", "ations", "ation", "ments",
             "ment", "ings", "ing", "edly", "ed", "ies", "es", "ly", "s")


def light_stem(word: str) -> str:
    """Crude suffix stripper, a stand-in for a real stemmer such as Porter's."""
    for suf in _SUFFIXES:
        if word.endswith(suf) and len(word) - len(suf) >= 3:
            stem = word[: -len(suf)]
            return stem + "y" if suf == "ies" else stem
    return word


@dataclass
class TermDocumentMatrix:
    """TF-IDF weights with one sparse row per document (the transpose of the
    usual term x document layout, so documents are points)."""

    terms: list[str]
    df: np.ndarray
    docs: sp.csr_matrix
    labels: list
    tf: sp.csr_matrix

    @property
    def n(self) -> int:
        return int(self.docs.shape[0])

    def weight(self, term: str, doc: int) -> float:
        return float(self.docs[doc, self.terms.index(term)])

    def to_dataset(self) -> Dataset:
        return Dataset(self.docs, labels=self.labels)


def tfidf_encode(corpus: Sequence[tuple[Sequence[str], Hashable]],
                 stemming_hook: Optional[Callable[[str], str]] = None,
                 stop_words=STOP_WORDS) -> TermDocumentMatrix:
    """Encode documents as ``tf * ln(n / df)`` rows over the sorted vocabulary."""
    if not corpus:
        raise ValueError("corpus is empty")
    docs = [Counter(clean_tokens(toks, stop_words, stemming_hook)) for toks, _ in corpus]
    vocab = sorted(set().union(*docs))
    if not vocab:
        raise ValueError("vocabulary is empty after filtering")
    col = {t: i for i, t in enumerate(vocab)}
    indptr, indices, counts = [0], [], []
    for c in docs:
        items = sorted((col[t], k) for t, k in c.items())
        indices.extend(i for i, _ in items)
        counts.extend(k for _, k in items)
        indptr.append(len(indices))
    n = len(docs)
    tf = sp.csr_matrix((np.asarray(counts, dtype=np.float64), indices, indptr), shape=(n, len(vocab)))
    df = np.bincount(np.asarray(indices, dtype=np.int64), minlength=len(vocab))
    idf = np.log(n / df)
    w = tf.multiply(idf[None, :]).tocsr()
    w.eliminate_zeros()
    w.sort_indices()
    return TermDocumentMatrix(vocab, df, w, [lab for _, lab in corpus], tf)


_REUTERS = re.compile(r"<REUTERS(.*?)</REUTERS>", re.S)
_TOPICS = re.compile(r"<TOPICS>(.*?)</TOPICS>", re.S)
_D = re.compile(r"<D>(.*?)</D>", re.S)
_BODY = re.compile(r"<BODY>(.*?)</BODY>", re.S)
_TITLE = re.compile(r"<TITLE>(.*?)</TITLE>", re.S)


def _read_sgml(files: list[Path]) -> list[tuple[list[str], str]]:
    docs = []
    for f in files:
        text = f.read_text(encoding="latin-1")
        for block in _REUTERS.findall(text):
            tm = _TOPICS.search(block)
            topics = _D.findall(tm.group(1)) if tm else []
            body = " ".join(m.group(1) for m in (_TITLE.search(block), _BODY.search(block)) if m)
            docs.append((topics, body))
    return docs


def _read_tsv(path: Path) -> list[tuple[list[str], str]]:
    docs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'label<TAB>text'")
        label, text = line.split("\t", 1)
        docs.append(([t for t in label.split(",") if t], text))
    return docs


def load_reuters_like(path, categories: Sequence[str]) -> list[tuple[list[str], str]]:
    """Documents tagged with exactly one of ``categories`` (usually a pair).

    ``path`` is a Reuters-21578 ``.sgm`` file, a directory of them, or a
    ``label<TAB>text`` file (comma-separated labels allowed). Returns
    ``(tokens, category)`` pairs ready for :func:`tfidf_encode`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.is_dir():
        files = sorted(path.glob("*.sgm"))
        if not files:
            raise ValueError(f"no .sgm files in {path}")
        raw = _read_sgml(files)
    elif path.suffix == ".sgm":
        raw = _read_sgml([path])
    else:
        raw = _read_tsv(path)
    known = {t for topics, _ in raw for t in topics}
    for cat in categories:
        if cat not in known:
            raise KeyError(f"unknown category {cat!r}")
    wanted = set(categories)
    out = []
    for topics, text in raw:
        hit = wanted.intersection(topics)
        if len(hit) == 1:
            out.append((tokenize(text), hit.pop()))
    if not out:
        raise ValueError(f"no documents carry exactly one of {categories}")
    return out


def _pseudo_word(i: int) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    s = ""
    i += 26 * 26
    while i:
        i, r = divmod(i, 26)
        s = letters[r] + s
    return "q" + s + "x"


def synthetic_corpus(docs_per_class: int = 60, vocab_per_class: int = 150, overlap: float = 0.0,
                     doc_len: tuple[int, int] = (30, 60), seed: int = 0,
                     categories: Sequence[str] = ("alpha", "beta")) -> list[tuple[list[str], str]]:
    """Stand-in corpus, one class per category; ``overlap`` is the shared vocabulary fraction.

    Every class draws from the shared words plus its own disjoint words, with
    a Zipf-like preference drawn per class.
    """
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    rng = make_rng(seed, 20)
    shared = int(round(overlap * vocab_per_class))
    own = vocab_per_class - shared
    common = [_pseudo_word(i) for i in range(shared)]
    vocab = {}
    for c, cat in enumerate(categories):
        start = shared + c * own
        vocab[cat] = common + [_pseudo_word(start + i) for i in range(own)]
    corpus = []
    for cat in categories:
        words = vocab[cat]
        # Zipf-like preference so documents of a class resemble each other
        p = 1.0 / np.arange(1, len(words) + 1)
        p = p[rng.permutation(len(words))]
        p /= p.sum()
        for _ in range(docs_per_class):
            length = int(rng.integers(doc_len[0], doc_len[1] + 1))
            corpus.append(([words[i] for i in rng.choice(len(words), size=length, p=p)], cat))
    return corpus


def write_corpus_tsv(corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# label<TAB>text\n")
        for toks, label in corpus:
            fh.write(f"{label}\t{' '.join(toks)}\n")


# -- intrinsic dimensionality ----------------------------------------------


class UndefinedIntrinsicDimensionality(ValueError):
    """All sampled distances are equal, so the variance is zero."""


def rho_from_distances(distances) -> float:
    d = np.asarray(distances, dtype=np.float64)
    mu, var = d.mean(), d.var()
    if var == 0:
        raise UndefinedIntrinsicDimensionality("distance variance is zero")
    return float(mu * mu / (2 * var))


def intrinsic_dimensionality(points, metric="l2", n_pairs: int = 10000, seed: int = 0) -> float:
    """``mean^2 / (2 variance)`` of distances over random pairs of distinct points."""
    data = points.points if isinstance(points, Dataset) else points
    n = int(data.shape[0])
    if n < 2:
        raise ValueError("need at least two points")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    metric = as_metric(metric)
    rng = make_rng(seed, 30)
    i = rng.integers(n, size=n_pairs)
    j = rng.integers(n - 1, size=n_pairs)
    j = j + (j >= i)
    d = np.empty(n_pairs)
    for s in range(0, n_pairs, 8192):
        sl = slice(s, s + 8192)
        d[sl] = metric.rowwise(rows(data, i[sl]), rows(data, j[sl]))
    return rho_from_distances(d)
