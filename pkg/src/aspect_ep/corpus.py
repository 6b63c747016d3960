"""Vocabularies, bag-of-words documents and corpora.

Bag-of-words files hold one document per line::

    <doc-id> [<label>] <word-id>:<count> <word-id>:<count> ...

with a companion vocabulary file (one word per line, line number = id).
Counts may be real-valued. Lines starting with ``#`` are comments.
"""

import zlib
from pathlib import Path

import numpy as np

from .numerics import sample_log_dirichlet

__all__ = [
    "Vocabulary",
    "Document",
    "Corpus",
    "derive_rng",
    "load_corpus",
    "save_corpus",
    "sample_corpus",
    "concat_topic_documents",
]


def derive_rng(seed, *purpose):
    """A PCG64 generator seeded from a root seed and a purpose path.

    String components are hashed with CRC-32 so derivations are stable
    across processes and platforms.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for p in purpose:
        if isinstance(p, str):
            words.append(zlib.crc32(p.encode("utf-8")))
        else:
            words.append(int(p) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


class Vocabulary:
    def __init__(self, words):
        self.words = tuple(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("vocabulary words must be unique")

    @classmethod
    def numbered(cls, size):
        return cls(f"w{i}" for i in range(size))

    def __len__(self):
        return len(self.words)

    def __getitem__(self, i):
        return self.words[i]

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.words == other.words

    def __hash__(self):
        return hash(self.words)

    def lookup(self, word):
        return self.index[word]

    def __repr__(self):
        return f"Vocabulary({len(self)} words)"


class Document:
    """Sparse word counts; zero counts are dropped and ids kept sorted."""

    __slots__ = ("ids", "counts")

    def __init__(self, counts):
        if isinstance(counts, dict):
            items = sorted((int(k), float(v)) for k, v in counts.items())
        else:
            items = list(enumerate(np.asarray(counts, dtype=float).tolist()))
        for i, c in items:
            if c < 0 or not np.isfinite(c):
                raise ValueError(f"invalid count {c} for word {i}")
            if i < 0:
                raise ValueError(f"negative word id {i}")
        items = [(i, c) for i, c in items if c > 0]
        self.ids = np.array([i for i, _ in items], dtype=np.int64)
        self.counts = np.array([c for _, c in items], dtype=float)

    @classmethod
    def from_dense(cls, counts):
        return cls(counts)

    @property
    def length(self):
        return float(self.counts.sum())

    def as_dict(self):
        return dict(zip(self.ids.tolist(), self.counts.tolist()))

    def dense(self, n_words):
        out = np.zeros(n_words)
        out[self.ids] = self.counts
        return out

    def __add__(self, other):
        merged = self.as_dict()
        for i, c in other.as_dict().items():
            merged[i] = merged.get(i, 0.0) + c
        return Document(merged)

    def __eq__(self, other):
        return (isinstance(other, Document)
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.counts, other.counts))

    def __repr__(self):
        return f"Document({self.as_dict()})"


class Corpus:
    def __init__(self, vocabulary, documents, labels=None, doc_ids=None):
        self.vocabulary = vocabulary
        self.documents = list(documents)
        n_words = len(vocabulary)
        for d in self.documents:
            if d.ids.size and d.ids[-1] >= n_words:
                raise ValueError(f"word id {d.ids[-1]} outside vocabulary of size {n_words}")
        if labels is not None:
            labels = [int(x) for x in labels]
            if len(labels) != len(self.documents):
                raise ValueError("one label per document is required")
        self.labels = labels
        if doc_ids is None:
            doc_ids = [f"d{i}" for i in range(len(self.documents))]
        self.doc_ids = list(doc_ids)

    @property
    def n_words(self):
        return len(self.vocabulary)

    def __len__(self):
        return len(self.documents)

    def __getitem__(self, i):
        return self.documents[i]

    def count_matrix(self):
        """Dense ``(n_docs, n_words)`` count array."""
        out = np.zeros((len(self.documents), self.n_words))
        for row, d in zip(out, self.documents):
            row[d.ids] = d.counts
        return out

    def unigram(self):
        totals = self.count_matrix().sum(axis=0)
        return totals / totals.sum()

    def token_count(self):
        return float(sum(d.length for d in self.documents))

    def subset(self, indices):
        indices = list(indices)
        labels = None if self.labels is None else [self.labels[i] for i in indices]
        return Corpus(self.vocabulary, [self.documents[i] for i in indices], labels,
                      [self.doc_ids[i] for i in indices])

    @classmethod
    def from_counts(cls, counts, vocabulary=None, labels=None):
        counts = np.asarray(counts, dtype=float)
        if vocabulary is None:
            vocabulary = Vocabulary.numbered(counts.shape[1])
        return cls(vocabulary, [Document(row) for row in counts], labels)


def _format_count(c):
    return str(int(c)) if float(c).is_integer() else repr(float(c))


def save_corpus(corpus, path, vocab_path=None):
    """Write a corpus in bag-of-words format plus its vocabulary file."""
    path = Path(path)
    vocab_path = Path(vocab_path) if vocab_path else path.with_suffix(".vocab")
    lines = []
    for k, (doc_id, doc) in enumerate(zip(corpus.doc_ids, corpus.documents)):
        fields = [str(doc_id)]
        if corpus.labels is not None:
            fields.append(str(corpus.labels[k]))
        fields += [f"{i}:{_format_count(c)}" for i, c in zip(doc.ids.tolist(), doc.counts.tolist())]
        lines.append(" ".join(fields) + "\n")
    path.write_text("".join(lines))
    vocab_path.write_text("".join(w + "\n" for w in corpus.vocabulary.words))
    return path, vocab_path


def load_corpus(path, format="bow", vocab_path=None):
    """Read a corpus.

    ``format="bow"`` reads the bag-of-words format and its vocabulary file
    (default: same stem with a ``.vocab`` suffix). ``format="text"`` treats
    each line as one document, lowercases it and splits on whitespace.
    """
    path = Path(path)
    if format == "text":
        return _load_text(path)
    if format != "bow":
        raise ValueError(f"unknown corpus format {format!r}")
    vocab_path = Path(vocab_path) if vocab_path else path.with_suffix(".vocab")
    words = vocab_path.read_text().splitlines()
    vocab = Vocabulary(words)
    docs, labels, ids = [], [], []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        ids.append(fields[0])
        rest = fields[1:]
        label = None
        if rest and ":" not in rest[0]:
            try:
                label = int(rest[0])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad label {rest[0]!r}") from None
            rest = rest[1:]
        labels.append(label)
        counts = {}
        for tok in rest:
            try:
                wid, cnt = tok.split(":")
                wid, cnt = int(wid), float(cnt)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed entry {tok!r}") from None
            if cnt < 0:
                raise ValueError(f"{path}:{lineno}: negative count {tok!r}")
            if not 0 <= wid < len(vocab):
                raise ValueError(f"{path}:{lineno}: word id {wid} outside vocabulary")
            counts[wid] = counts.get(wid, 0.0) + cnt
        docs.append(Document(counts))
    if any(x is None for x in labels):
        if any(x is not None for x in labels):
            raise ValueError(f"{path}: labels must be given on every line or none")
        labels = None
    return Corpus(vocab, docs, labels, ids)


def _load_text(path):
    index = {}
    docs = []
    for line in path.read_text().splitlines():
        counts = {}
        for tok in line.lower().split():
            wid = index.setdefault(tok, len(index))
            counts[wid] = counts.get(wid, 0) + 1
        docs.append(counts)
    vocab = Vocabulary(index)
    return Corpus(vocab, [Document(c) for c in docs])


def sample_corpus(model, n_docs, doc_length, seed, vocabulary=None, label=None):
    """Draw documents from the generative aspect model.

    Each document gets its own mixing weights ``lambda ~ D(alpha)`` and then
    ``doc_length`` words from the mixture ``sum_a lambda_a p(w|a)``.
    """
    rng = derive_rng(seed, "sample_corpus")
    docs = []
    for _ in range(n_docs):
        lam = np.exp(sample_log_dirichlet(rng, model.alpha))
        probs = lam @ model.word_probs
        probs = probs / probs.sum()
        docs.append(Document(rng.multinomial(doc_length, probs)))
    if vocabulary is None:
        vocabulary = Vocabulary.numbered(model.n_words)
    labels = None if label is None else [label] * n_docs
    return Corpus(vocabulary, docs, labels)


def concat_topic_documents(pools, parts_per_doc, n_docs, seed):
    """Synthetic multi-topic documents built by summing pool documents.

    For each output document, ``parts_per_doc`` topics are drawn uniformly
    with replacement and one random document from each chosen pool is added
    in. The labels of the result hold the number of distinct topics used.
    """
    if not pools or any(len(p) == 0 for p in pools):
        raise ValueError("every pool must hold at least one document")
    vocab = pools[0].vocabulary
    if any(p.vocabulary != vocab for p in pools):
        raise ValueError("pools must share a vocabulary")
    rng = derive_rng(seed, "concat_topic_documents")
    docs, n_topics = [], []
    for _ in range(n_docs):
        topics = rng.integers(len(pools), size=parts_per_doc)
        doc = Document({})
        for t in topics:
            pool = pools[t]
            doc = doc + pool[int(rng.integers(len(pool)))]
        docs.append(doc)
        n_topics.append(len(set(topics.tolist())))
    return Corpus(vocab, docs, n_topics)
