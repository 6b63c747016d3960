"""The generative aspect model and reference likelihood oracles.

A document's probability integrates the word likelihood over the mixing
weights ``lambda ~ D(alpha)``. For up to three aspects the integral is done
by Gauss-Legendre quadrature; a prior-sampling Monte Carlo estimate and the
MAX (mode) approximation are also provided.
"""

import functools
import json
import warnings
from pathlib import Path

import numpy as np

from .corpus import Document, derive_rng
from .numerics import (
    ConvergenceError,
    check_dirichlet,
    log_gamma,
    log_sum_exp,
    sample_log_dirichlet,
)

__all__ = [
    "AspectModel",
    "save_model",
    "load_model",
    "mixed_word_probs",
    "exact_log_likelihood",
    "exact_log_likelihood_batch",
    "max_log_likelihood_batch",
    "max_log_likelihood",
    "mc_log_likelihood",
    "log_integrand",
]

MODEL_FORMAT_VERSION = 1


class AspectModel:
    """Dirichlet weights ``alpha`` (A,) and aspect word distributions (A, W)."""

    def __init__(self, alpha, word_probs):
        alpha = check_dirichlet(alpha)
        word_probs = np.array(word_probs, dtype=float, ndmin=2)
        if word_probs.shape[0] != alpha.size:
            raise ValueError(f"alpha has {alpha.size} entries but word_probs has "
                             f"{word_probs.shape[0]} rows")
        if np.any(word_probs < 0) or np.any(word_probs > 1):
            raise ValueError("word probabilities must lie in [0, 1]")
        if np.any(np.abs(word_probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("each aspect's word probabilities must sum to 1")
        self.alpha = alpha
        self.word_probs = word_probs
        self.alpha.flags.writeable = False
        self.word_probs.flags.writeable = False

    @property
    def n_aspects(self):
        return self.alpha.size

    @property
    def n_words(self):
        return self.word_probs.shape[1]

    def with_params(self, alpha=None, word_probs=None):
        return AspectModel(self.alpha if alpha is None else alpha,
                           self.word_probs if word_probs is None else word_probs)

    def __repr__(self):
        return f"AspectModel(A={self.n_aspects}, W={self.n_words})"


def save_model(model, path, extra=None):
    """Write a model as JSON; ``word_probs`` is stored W x A, row per word."""
    payload = {
        "version": MODEL_FORMAT_VERSION,
        "A": model.n_aspects,
        "W": model.n_words,
        "alpha": model.alpha.tolist(),
        "word_probs": model.word_probs.T.tolist(),
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=1))


def load_model(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {payload.get('version')!r}")
    probs = np.array(payload["word_probs"], dtype=float).T
    if probs.shape != (payload["A"], payload["W"]):
        raise ValueError("model file dimensions do not match its word_probs table")
    return AspectModel(payload["alpha"], probs)


def mixed_word_probs(model, lam):
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (model.n_aspects,) or np.any(lam < -1e-12) or abs(lam.sum() - 1.0) > 1e-9:
        raise ValueError("mixing weights must lie on the simplex")
    return lam @ model.word_probs


def _as_doc(doc):
    return doc if isinstance(doc, Document) else Document(doc)


def _log_prior_terms(alpha, log_lam):
    # (alpha - 1) * log(lambda) with 0 * log(0) taken as 0
    with np.errstate(invalid="ignore"):
        terms = (alpha - 1.0) * log_lam
    return np.sum(np.where(alpha == 1.0, 0.0, terms), axis=-1)


def log_integrand(model, doc, lam):
    """``log D(lambda|alpha) + sum_w n_w log p(w|lambda)``; ``lam`` may be (S, A)."""
    doc = _as_doc(doc)
    lam = np.asarray(lam, dtype=float)
    alpha = model.alpha
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
        data = np.log(lam @ model.word_probs[:, doc.ids]) @ doc.counts
    if alpha.size == 1:
        return data
    norm = log_gamma(alpha.sum()) - np.sum(log_gamma(alpha))
    return norm + _log_prior_terms(alpha, log_lam) + data


# ---------------------------------------------------------------------------
# quadrature


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _composite_gl(n_panels):
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    weights = (half[:, None] * _GL_WEIGHTS).ravel()
    return nodes, weights


@functools.lru_cache(maxsize=64)
def _beta_rule(a_left, a_right, n_panels):
    """Nodes on (0, 1) for integrals against ``t**(a_left-1) (1-t)**(a_right-1)``.

    The interval is split at 1/2; on each half the substitution
    ``t = v**k / 2`` with ``k = max(1, 1/a)`` removes an integrable endpoint
    singularity. Returns ``t``, ``1 - t`` and log weights that include the
    Beta kernel and the Jacobian.
    """
    v, w = _composite_gl(n_panels)
    log_v = np.log(v)
    parts = []
    for a_near, a_far, flip in ((a_left, a_right, False), (a_right, a_left, True)):
        k = max(1.0, 1.0 / a_near)
        near = 0.5 * v ** k
        far = 1.0 - near
        log_w = (np.log(w) + a_near * np.log(0.5) + np.log(k)
                 + (a_near * k - 1.0) * log_v + (a_far - 1.0) * np.log(far))
        parts.append((far, near, log_w) if flip else (near, far, log_w))
    out = tuple(np.concatenate([parts[0][i], parts[1][i]]) for i in range(3))
    for arr in out:
        arr.flags.writeable = False
    return out


@functools.lru_cache(maxsize=32)
def _simplex_rule(alpha, n_panels):
    """Nodes ``lam`` (N, A) and log weights for A = 2 or 3 (cached)."""
    if len(alpha) == 2:
        t, s, log_w = _beta_rule(alpha[0], alpha[1], n_panels)
        lam = np.stack([t, s], axis=1)
    else:
        # lambda = (u, (1-u) v, (1-u)(1-v)) with u ~ Beta(a1, a2+a3), v ~ Beta(a2, a3)
        u, u_c, log_wu = _beta_rule(alpha[0], alpha[1] + alpha[2], n_panels)
        v, v_c, log_wv = _beta_rule(alpha[1], alpha[2], n_panels)
        lam = np.stack([
            np.broadcast_to(u[:, None], (u.size, v.size)),
            u_c[:, None] * v[None, :],
            u_c[:, None] * v_c[None, :],
        ], axis=-1).reshape(-1, 3)
        log_w = (log_wu[:, None] + log_wv[None, :]).ravel()
    lam.flags.writeable = False
    log_w.flags.writeable = False
    return lam, log_w


def _log_data_term(lam, probs, counts):
    with np.errstate(divide="ignore"):
        return np.log(lam @ probs) @ counts


def _quad(alpha, probs, counts, n_panels, budget=4_000_000):
    """Log of the kernel integral for every row; probs (D, A, W), counts (D, W)."""
    lam, log_w = _simplex_rule(tuple(float(a) for a in alpha), n_panels)
    D, _, W = probs.shape
    step = max(1, budget // (lam.shape[0] * max(W, 1)))
    out = np.empty(D)
    for lo in range(0, D, step):
        sl = slice(lo, lo + step)
        mix = np.einsum("na,daw->dnw", lam, probs[sl])
        with np.errstate(divide="ignore"):
            log_mix = np.where(counts[sl, None, :] > 0, np.log(mix), 0.0)
        data = np.einsum("dnw,dw->dn", log_mix, counts[sl])
        out[sl] = log_sum_exp(log_w + data, axis=1)
    return out


def exact_log_likelihood_batch(alpha, word_probs, counts, rel_tol=1e-8, accept_tol=1e-6):
    """Quadrature log probabilities for every row of a count matrix (A <= 3).

    ``alpha`` is shared; ``word_probs`` is (A, W) or per document (D, A, W).
    Panels double for all unsettled documents together until successive
    estimates agree to ``rel_tol``; if the panel budget runs out with some
    change above ``accept_tol`` a ConvergenceError carrying the last
    estimates is raised.
    """
    alpha = check_dirichlet(alpha)
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    D = counts.shape[0]
    A = alpha.size
    if A > 3:
        raise ValueError("exact quadrature supports at most three aspects")
    probs = np.broadcast_to(np.asarray(word_probs, dtype=float), (D, A, counts.shape[1]))
    used = np.flatnonzero(np.any(counts > 0, axis=0))
    counts, probs = counts[:, used], probs[:, :, used]
    out = np.zeros(D)
    with np.errstate(divide="ignore"):
        if A == 1:
            return np.sum(np.where(counts > 0, counts * np.log(probs[:, 0]), 0.0), axis=1)
    dead = np.any((counts > 0) & (probs.max(axis=1) <= 0), axis=1)
    out[dead] = -np.inf
    todo = np.flatnonzero(~dead & np.any(counts > 0, axis=1))
    if todo.size == 0:
        return out
    norm = log_gamma(alpha.sum()) - np.sum(log_gamma(alpha))
    max_panels = 1024 if A == 2 else 16
    prev = _quad(alpha, probs[todo], counts[todo], 1)
    change = np.full(todo.size, np.inf)
    n_panels = 2
    while n_panels <= max_panels and todo.size:
        cur = _quad(alpha, probs[todo], counts[todo], n_panels)
        change = np.abs(cur - prev)
        done = (change < rel_tol) & (n_panels >= 4)
        out[todo[done]] = norm + cur[done]
        todo, prev, change = todo[~done], cur[~done], change[~done]
        n_panels *= 2
    if todo.size:
        out[todo] = norm + prev
        if np.any(change >= accept_tol):
            raise ConvergenceError(
                f"quadrature did not settle (last change {change.max():.2e})", last=out)
    return out


def exact_log_likelihood(model, doc, rel_tol=1e-8, accept_tol=1e-6):
    """Log probability of a document by numerical integration (A <= 3).

    The number of composite Gauss-Legendre panels doubles until successive
    estimates agree to ``rel_tol``; if the panel budget runs out with the
    last change above ``accept_tol`` a ConvergenceError is raised.
    """
    doc = _as_doc(doc)
    if model.n_aspects > 3:
        raise ValueError("exact quadrature supports at most three aspects")
    if doc.ids.size == 0:
        return 0.0
    probs = model.word_probs[:, doc.ids]
    try:
        value = exact_log_likelihood_batch(model.alpha, probs, doc.counts[None], rel_tol, accept_tol)
    except ConvergenceError as err:
        raise ConvergenceError(str(err), last=float(err.last[0])) from None
    return float(value[0])


# ---------------------------------------------------------------------------
# MAX approximation


def max_log_likelihood_batch(alpha, word_probs, counts, tol=1e-10, max_iter=200000, value_tol=1e-10):
    """MAX approximation for every row of a count matrix.

    Returns the log integrand at its maximiser and the maximisers (D, A).
    Iteration stops per document once lambda moves less than ``tol`` or the
    objective gains less than ``value_tol``. See ``max_log_likelihood`` for the treatment of ``alpha < 1``.
    """
    alpha = check_dirichlet(alpha)
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    D, W = counts.shape
    A = alpha.size
    probs = np.broadcast_to(np.asarray(word_probs, dtype=float), (D, A, W))
    lam = np.full((D, A), 1.0 / A)
    if A == 1:
        with np.errstate(divide="ignore"):
            vals = np.sum(np.where(counts > 0, counts * np.log(probs[:, 0]), 0.0), axis=1)
        return vals, lam
    use_prior = bool(np.all(alpha >= 1.0))
    if not use_prior:
        warnings.warn("alpha < 1: maximising the data term only", RuntimeWarning, stacklevel=2)
    pseudo = alpha - 1.0 if use_prior else np.zeros(A)
    dead = np.any((counts > 0) & (probs.max(axis=1) <= 0), axis=1)
    active = np.flatnonzero(~dead)
    last = np.full(D, -np.inf)
    for _ in range(max_iter):
        if active.size == 0:
            break
        p, c, l = probs[active], counts[active], lam[active]
        mix = np.einsum("da,daw->dw", l, p)
        with np.errstate(divide="ignore", invalid="ignore"):
            objective = (np.sum(np.where(c > 0, c * np.log(mix), 0.0), axis=1)
                         + _log_prior_terms(pseudo + 1.0, np.log(l)))
        ratio = np.where(c > 0, c / np.where(mix > 0, mix, 1.0), 0.0)
        new = pseudo + l * np.einsum("daw,dw->da", p, ratio)
        new /= new.sum(axis=1, keepdims=True)
        change = np.max(np.abs(new - l), axis=1)
        # a maximiser on a face with zero gradient makes EM sublinear;
        # the value has settled long before lambda does
        settled = objective - last[active] < value_tol
        last[active] = objective
        lam[active] = new
        active = active[(change >= tol) & ~settled]
    else:
        if active.size:
            warnings.warn("MAX optimiser hit its iteration limit", RuntimeWarning, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        mix = np.einsum("da,daw->dw", lam, probs)
        data = np.sum(np.where(counts > 0, counts * np.log(mix), 0.0), axis=1)
        prior = (log_gamma(alpha.sum()) - np.sum(log_gamma(alpha))
                 + _log_prior_terms(alpha, np.log(lam)))
    vals = data + prior
    vals[dead] = -np.inf
    return vals, lam


def max_log_likelihood(model, doc, tol=1e-10, max_iter=200000):
    """Maximum of the integrand over the simplex and its location.

    The optimum is found by EM on the mixing weights with the aspect
    distributions held fixed, started at the simplex centre. When some
    ``alpha_a < 1`` the prior is unbounded near the faces; the data term
    alone is then maximised and the prior evaluated at its optimum, with a
    RuntimeWarning.
    """
    doc = _as_doc(doc)
    probs = model.word_probs[:, doc.ids]
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="alpha < 1")
        vals, lam = max_log_likelihood_batch(model.alpha, probs, doc.counts[None], tol, max_iter)
    if model.n_aspects > 1 and np.any(model.alpha < 1.0):
        warnings.warn("alpha < 1: maximising the data term only", RuntimeWarning, stacklevel=2)
    return float(vals[0]), lam[0]


# ---------------------------------------------------------------------------
# Monte Carlo


def mc_log_likelihood(model, doc, n_samples, seed, chunk=100000):
    """Prior-sampling Monte Carlo estimate of the log document probability.

    Returns the estimate and a delta-method standard error of the log.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    doc = _as_doc(doc)
    if doc.ids.size == 0:
        return 0.0, 0.0
    probs = model.word_probs[:, doc.ids]
    rng = derive_rng(seed, "mc_log_likelihood")
    logs = []
    remaining = n_samples
    while remaining > 0:
        size = min(chunk, remaining)
        lam = np.exp(sample_log_dirichlet(rng, model.alpha, size=size))
        logs.append(_log_data_term(lam, probs, doc.counts))
        remaining -= size
    logf = np.concatenate(logs)
    top = np.max(logf)
    if not np.isfinite(top):
        return -np.inf, 0.0
    w = np.exp(logf - top)
    mean = w.mean()
    se = w.std(ddof=1) / (np.sqrt(n_samples) * mean)
    return float(top + np.log(mean)), float(se)
