"""Variational (Jensen-bound) inference for the document integral."""

from dataclasses import dataclass

import numpy as np

from .ep import BatchResult, InferenceResult, _broadcast_params, _dead_docs
from .model import _as_doc
from .numerics import digamma, log_gamma

__all__ = ["VbState", "vb_infer", "vb_infer_batch", "vb_run", "vb_bound_value", "vb_bound_batch", "vb_responsibilities"]


@dataclass
class VbState:
    resp: np.ndarray    # (W, A), rows on the simplex
    gamma: np.ndarray   # (A,)


def _dwa(word_probs):
    # (A, W) or (D, A, W) -> (1 or D, W, A)
    p = np.asarray(word_probs, dtype=float)
    return p.T[None] if p.ndim == 2 else np.swapaxes(p, 1, 2)


def vb_responsibilities(word_probs, gamma):
    """``q(a|w) ∝ p(w|a) exp(digamma(gamma_a))`` for every word.

    ``gamma`` is (D, A) and ``word_probs`` (A, W) or (D, A, W); returns
    (D, W, A). Words that no aspect can produce get uniform responsibilities.
    """
    gamma = np.atleast_2d(gamma)
    log_e = digamma(gamma)
    e = np.exp(log_e - log_e.max(axis=1, keepdims=True))
    q = _dwa(word_probs) * e[:, None, :]
    norm = q.sum(axis=2, keepdims=True)
    A = gamma.shape[1]
    return np.where(norm > 0, q / np.where(norm > 0, norm, 1.0), 1.0 / A)


def vb_bound_batch(alpha, word_probs, counts, resp):
    """Log of the Jensen lower bound for each document of a batch."""
    alpha = np.asarray(alpha, dtype=float)
    counts = np.atleast_2d(counts)
    gamma = alpha + np.einsum("dw,dwa->da", counts, resp)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.log(_dwa(word_probs))
        terms = np.where(resp > 0, resp * (log_p - np.log(resp)), 0.0)
        per_word = np.where(counts > 0, counts * terms.sum(axis=2), 0.0)
    n = counts.sum(axis=1)
    a0 = alpha.sum(axis=-1)
    lg = log_gamma(np.concatenate([np.broadcast_to(alpha, gamma.shape), gamma], axis=1))
    A = gamma.shape[1]
    prior = (log_gamma(a0) - log_gamma(a0 + n)
             + lg[:, A:].sum(axis=1) - lg[:, :A].sum(axis=1))
    return per_word.sum(axis=1) + prior


def vb_run(alpha, word_probs, counts, tol=1e-8, max_iters=1000, resp0=None, on_iteration=None):
    """Coordinate ascent on the bound for every row of a count matrix.

    Alternates ``gamma = alpha + sum_w n_w q(.|w)`` with the responsibility
    update until the bound improves by less than ``tol``. Parameters may be
    shared or per document, as for ``ep_run``. ``resp0`` warm starts the
    responsibilities (uniform otherwise). ``on_iteration(bound)`` sees the
    full bound vector after every iteration.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    n_docs, n_words = counts.shape
    alpha, probs = _broadcast_params(alpha, word_probs, n_docs)
    A = alpha.shape[1]
    if A == 1:
        resp = np.ones((n_docs, n_words, 1))
    elif resp0 is None:
        resp = np.full((n_docs, n_words, A), 1.0 / A)
    else:
        resp = np.array(resp0, dtype=float)
    gamma = alpha + np.einsum("dw,dwa->da", counts, resp)
    bound = vb_bound_batch(alpha, probs, counts, resp)
    dead = _dead_docs(counts, probs)
    converged = dead | ~np.any(counts > 0, axis=1) | (A == 1)
    iterations = np.zeros(n_docs, dtype=int)
    for _ in range(max_iters):
        active = np.flatnonzero(~converged)
        if active.size == 0:
            break
        q = vb_responsibilities(probs[active], gamma[active])
        c = counts[active]
        g = alpha[active] + np.einsum("dw,dwa->da", c, q)
        b = vb_bound_batch(alpha[active], probs[active], c, q)
        with np.errstate(invalid="ignore"):
            improvement = b - bound[active]
        resp[active] = q
        gamma[active] = g
        bound[active] = b
        iterations[active] += 1
        converged[active] = improvement < tol
        if on_iteration is not None:
            on_iteration(bound.copy())
    bound[dead] = -np.inf
    return BatchResult(bound, gamma, converged, iterations, resp=resp)


def vb_infer_batch(model, counts, tol=1e-8, max_iters=1000, resp0=None, on_iteration=None):
    """VB with one model on every row of a ``(D, W)`` count matrix."""
    return vb_run(model.alpha, model.word_probs, counts, tol, max_iters, resp0, on_iteration)


def vb_bound_value(state, model, doc):
    doc = _as_doc(doc)
    counts = doc.dense(model.n_words)[None, :]
    return float(vb_bound_batch(model.alpha, model.word_probs, counts, state.resp[None])[0])


def vb_infer(model, doc, tol=1e-8, max_iters=1000, init=None):
    """VB lower bound on a document's log probability and its posterior."""
    doc = _as_doc(doc)
    counts = doc.dense(model.n_words)[None, :]
    resp0 = None if init is None else init.resp[None]
    res = vb_infer_batch(model, counts, tol, max_iters, resp0)
    state = VbState(res.resp[0], res.gamma[0])
    return InferenceResult(float(res.log_likelihood[0]), res.gamma[0].copy(),
                           bool(res.converged[0]), int(res.iterations[0]), state)
