"""Held-out perplexity, likelihood curves, classification and word lists."""

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, derive_rng
from .ep import EpConfig, ep_infer_batch, ep_run
from .model import AspectModel, exact_log_likelihood_batch, max_log_likelihood_batch
from .numerics import dirichlet_log_pdf, sample_log_dirichlet
from .vb import vb_infer_batch, vb_run

__all__ = [
    "PerplexityReport",
    "perplexity",
    "importance_log_likelihood",
    "CurveTable",
    "CURVE_METHODS",
    "word_prob_family",
    "likelihood_curve",
    "ClassificationResult",
    "classify",
    "top_words",
    "format_table",
]

CURVE_METHODS = ("exact", "max", "vb", "ep")


@dataclass
class PerplexityReport:
    log_likelihood_total: float
    token_count: float
    perplexity: float
    n_samples: int
    std_err_log: float              # jackknife SE of the total log-likelihood
    n_fallback: int = 0             # documents that used the prior proposal
    doc_log_likelihood: np.ndarray = field(default=None, repr=False)

    @property
    def std_err_per_token(self):
        return self.std_err_log / self.token_count if self.token_count else 0.0

    def rows(self):
        return [
            ("log_likelihood_total", self.log_likelihood_total),
            ("token_count", self.token_count),
            ("perplexity", self.perplexity),
            ("n_samples", self.n_samples),
            ("std_err_log", self.std_err_log),
            ("std_err_per_token", self.std_err_per_token),
            ("n_fallback", self.n_fallback),
        ]


def _jackknife_log_mean_exp(logw):
    """Log-mean-exp of each row and the jackknife variance of that estimate."""
    S = logw.shape[1]
    top = logw.max(axis=1, keepdims=True)
    w = np.exp(logw - top)
    total = w.sum(axis=1, keepdims=True)
    est = np.log(total[:, 0] / S) + top[:, 0]
    loo = np.log(np.maximum(total - w, 1e-300) / (S - 1)) + top
    var = (S - 1) / S * np.sum((loo - loo.mean(axis=1, keepdims=True)) ** 2, axis=1)
    return est, var


def importance_log_likelihood(model, counts, proposals, n_samples, seed):
    """Importance-sampling estimates of log p(d) for every row of ``counts``.

    ``proposals`` holds one Dirichlet parameter vector per document. Each
    document draws from its own stream, derived from ``(seed, index)``, so
    results do not depend on batching. Returns estimates and jackknife
    variances.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    D = counts.shape[0]
    est, var = np.zeros(D), np.zeros(D)
    p = model.word_probs
    if model.n_aspects == 1:
        # no mixing weights to sample: every weight equals the multinomial likelihood
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(counts > 0, counts * np.log(p[0]), 0.0)
        return terms.sum(axis=1), var
    for i in range(D):
        ids = np.flatnonzero(counts[i])
        if ids.size == 0:
            continue
        rng = derive_rng(seed, "perplexity", i)
        log_lam = sample_log_dirichlet(rng, proposals[i], size=n_samples)
        with np.errstate(divide="ignore"):
            data = np.log(np.exp(log_lam) @ p[:, ids]) @ counts[i, ids]
        logw = (dirichlet_log_pdf(log_lam, model.alpha) + data
                - dirichlet_log_pdf(log_lam, proposals[i]))
        if not np.isfinite(logw).any():
            est[i] = -np.inf
            continue
        e, v = _jackknife_log_mean_exp(logw[None])
        est[i], var[i] = e[0], v[0]
    return est, var


def perplexity(model, corpus, n_samples=1024, seed=0, proposal="ep_posterior",
               ep_config=EpConfig(max_sweeps=1000)):
    """Test-set perplexity ``exp(-sum_i log p(d_i) / sum_i |d_i|)``.

    Each ``log p(d_i)`` is estimated by importance sampling with the EP
    posterior of the document (or the prior) as the proposal. Documents
    whose EP posterior is not a valid Dirichlet fall back to the prior.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    if proposal not in ("ep_posterior", "prior"):
        raise ValueError(f"unknown proposal {proposal!r}")
    counts = corpus.count_matrix() if isinstance(corpus, Corpus) else np.atleast_2d(corpus)
    D = counts.shape[0]
    proposals = np.broadcast_to(model.alpha, (D, model.n_aspects)).copy()
    n_fallback = 0
    if proposal == "ep_posterior" and model.n_aspects > 1:
        res = ep_infer_batch(model, counts, ep_config)
        good = np.all(np.isfinite(res.gamma) & (res.gamma > 0), axis=1)
        proposals[good] = res.gamma[good]
        n_fallback = int(np.sum(~good))
        if n_fallback:
            warnings.warn(f"{n_fallback} documents fell back to the prior proposal",
                          RuntimeWarning, stacklevel=2)
    est, var = importance_log_likelihood(model, counts, proposals, n_samples, seed)
    total = float(est.sum())
    tokens = float(counts.sum())
    return PerplexityReport(total, tokens, float(np.exp(-total / tokens)), n_samples,
                            float(np.sqrt(var.sum())), n_fallback, est)


# ---------------------------------------------------------------------------
# likelihood curves


@dataclass
class CurveTable:
    grid: np.ndarray
    values: dict                     # method -> (G,) total log-likelihood

    def argmax(self, method):
        v = self.values[method]
        return float(self.grid[int(np.argmax(v))])

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["grid_value", *CURVE_METHODS])
        for k, g in enumerate(self.grid):
            row = [repr(float(g))]
            for m in CURVE_METHODS:
                row.append(repr(float(self.values[m][k])) if m in self.values else "")
            writer.writerow(row)
        for m in CURVE_METHODS:
            if m in self.values:
                buf.write(f"# argmax {m} {self.argmax(m)!r}\n")
        return buf.getvalue()


def word_prob_family(base, aspect, word):
    """Models that set ``p(word|aspect)`` to the grid value.

    The rest of the row is rescaled to keep it normalised.
    """
    base_row = base.word_probs[aspect]
    rest = 1.0 - base_row[word]

    def build(value):
        rows = np.array(base.word_probs)
        if rest > 0:
            rows[aspect] = base_row * (1.0 - value) / rest
        else:
            others = np.arange(base.n_words) != word
            rows[aspect] = np.where(others, (1.0 - value) / max(others.sum(), 1), 0.0)
        rows[aspect, word] = value
        return AspectModel(base.alpha, rows)

    return build


def likelihood_curve(corpus, family, grid, methods=CURVE_METHODS, ep_config=EpConfig(max_sweeps=1000),
                     vb_tol=1e-10, vb_max_iters=1000):
    """Total corpus log-likelihood along a one-parameter family of models.

    ``family(value)`` returns the model at each grid value. All grid points
    and documents are solved as one batch per method.
    """
    unknown = set(methods) - set(CURVE_METHODS)
    if unknown:
        raise ValueError(f"unknown curve methods {sorted(unknown)}")
    grid = np.asarray(grid, dtype=float)
    counts = corpus.count_matrix() if isinstance(corpus, Corpus) else np.atleast_2d(corpus)
    D, G = counts.shape[0], grid.size
    models = [family(g) for g in grid]
    alpha = np.repeat(np.stack([m.alpha for m in models]), D, axis=0)
    probs = np.repeat(np.stack([m.word_probs for m in models]), D, axis=0)
    tiled = np.tile(counts, (G, 1))
    values = {}
    for method in CURVE_METHODS:
        if method not in methods:
            continue
        if method == "ep":
            per_doc = ep_run(alpha, probs, tiled, ep_config).log_likelihood
        elif method == "vb":
            per_doc = vb_run(alpha, probs, tiled, vb_tol, vb_max_iters).log_likelihood
        else:
            per_doc = np.empty(G * D)
            fn = exact_log_likelihood_batch if method == "exact" else max_log_likelihood_batch
            for key in {tuple(a) for a in alpha}:
                rows = np.flatnonzero(np.all(alpha == np.array(key), axis=1))
                out = fn(np.array(key), probs[rows], tiled[rows])
                per_doc[rows] = out if method == "exact" else out[0]
        with np.errstate(invalid="ignore"):
            values[method] = per_doc.reshape(G, D).sum(axis=1)
    return CurveTable(grid, values)


# ---------------------------------------------------------------------------
# classification


@dataclass
class ClassificationResult:
    confusion: np.ndarray            # [true, predicted]
    predictions: np.ndarray
    scores: np.ndarray               # (D, K) log-likelihood per class

    @property
    def errors(self):
        return int(self.confusion.sum() - np.trace(self.confusion))

    @property
    def error_rate(self):
        total = self.confusion.sum()
        return self.errors / total if total else 0.0


def classify(models, corpus, method="ep", ep_config=EpConfig(max_sweeps=1000), vb_tol=1e-10,
             vb_max_iters=1000):
    """Assign each labelled document to the class whose model scores it highest.

    ``method`` is ``"ep"``, ``"vb"`` or a list naming one engine per model.
    Ties go to the lowest class index.
    """
    if len(models) < 2:
        raise ValueError("need at least two class models")
    if corpus.labels is None:
        raise ValueError("classification needs a labelled corpus")
    if any(m.n_words != corpus.n_words for m in models):
        raise ValueError("every model must share the corpus vocabulary")
    engines = [method] * len(models) if isinstance(method, str) else list(method)
    counts = corpus.count_matrix()
    scores = np.empty((counts.shape[0], len(models)))
    for k, (model, engine) in enumerate(zip(models, engines)):
        if engine == "ep":
            scores[:, k] = ep_infer_batch(model, counts, ep_config).log_likelihood
        elif engine == "vb":
            scores[:, k] = vb_infer_batch(model, counts, vb_tol, vb_max_iters).log_likelihood
        else:
            raise ValueError(f"unknown inference method {engine!r}")
    predictions = np.argmax(scores, axis=1)
    K = len(models)
    truth = np.asarray(corpus.labels)
    if truth.min() < 0 or truth.max() >= K:
        raise ValueError("labels must index the list of models")
    confusion = np.zeros((K, K), dtype=int)
    np.add.at(confusion, (truth, predictions), 1)
    return ClassificationResult(confusion, predictions, scores)


# ---------------------------------------------------------------------------
# reports


def top_words(model, vocabulary, per_aspect=10, threshold=None, background=None):
    """Most probable words of each aspect as ``[(word, prob), ...]`` lists.

    With a ``threshold``, words whose ``background`` unigram probability
    exceeds it are dropped before truncation.
    """
    if per_aspect < 1:
        raise ValueError("per_aspect must be at least 1")
    keep = np.ones(model.n_words, dtype=bool)
    if threshold is not None:
        if background is None:
            raise ValueError("a background unigram is needed for threshold filtering")
        keep = np.asarray(background, dtype=float) <= threshold
    report = []
    for row in model.word_probs:
        order = [int(i) for i in np.argsort(-row, kind="stable") if keep[i]]
        report.append([(vocabulary[i], float(row[i])) for i in order[:per_aspect]])
    return report


def format_table(header, rows):
    """Aligned plain-text table."""
    cells = [[str(h) for h in header]] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells) + "\n"


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return f"{value:.6g}"
    return str(value)
