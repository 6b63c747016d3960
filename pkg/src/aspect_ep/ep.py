"""Expectation-Propagation for the document integral.

Each word's likelihood term ``t_w(lambda) = sum_a p(w|a) lambda_a`` is
approximated by ``s_w * prod_a lambda_a**beta_wa``, so the approximate
posterior stays Dirichlet with ``gamma = alpha + sum_w n_w beta_w``. Terms are
refined one at a time by deletion, moment matching, a damped update and
inclusion; a step that would leave the Dirichlet family is skipped.

The workhorse operates on a whole batch of documents at once (dense count
matrix); documents never interact, so batching only vectorises the loop.
"""

from dataclasses import dataclass, field

import numpy as np

from .model import _as_doc
from .numerics import _moment_match_rows, check_dirichlet, dirichlet_log_normalizer, log_gamma

__all__ = [
    "EpConfig",
    "EpState",
    "InferenceResult",
    "BatchResult",
    "ep_init",
    "ep_sweep",
    "ep_infer",
    "ep_infer_batch",
    "ep_run",
    "ep_log_likelihood",
]


@dataclass(frozen=True)
class EpConfig:
    """``stepsize`` is ``"safe"`` (mu = 1/n_w) or a fixed mu in (0, 1]."""

    max_sweeps: int = 200
    tol: float = 1e-6
    stepsize: object = "safe"

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.stepsize != "safe" and not 0 < float(self.stepsize) <= 1:
            raise ValueError("a fixed stepsize must lie in (0, 1]")


@dataclass
class EpState:
    beta: np.ndarray        # (W, A) term exponents
    log_s: np.ndarray       # (W,) term scales
    gamma: np.ndarray       # (A,) posterior Dirichlet parameters
    skipped: frozenset = frozenset()


@dataclass
class InferenceResult:
    log_likelihood: float
    posterior: np.ndarray
    converged: bool
    iterations: int
    state: object = field(default=None, repr=False)

    @property
    def log_bound(self):
        return self.log_likelihood

    @property
    def sweeps_used(self):
        return self.iterations


@dataclass
class BatchResult:
    log_likelihood: np.ndarray   # (D,)
    gamma: np.ndarray            # (D, A)
    converged: np.ndarray        # (D,) bool
    iterations: np.ndarray       # (D,) int
    beta: np.ndarray = None      # (D, W, A), EP only
    log_s: np.ndarray = None     # (D, W), EP only
    resp: np.ndarray = None      # (D, W, A), VB only


def ep_log_likelihood(alpha, gamma, log_s, counts):
    """Log of the EP estimate of the document probability.

    Vectorised: ``gamma`` (..., A), ``log_s`` and ``counts`` (..., W).
    """
    ratio = dirichlet_log_normalizer(gamma) - dirichlet_log_normalizer(alpha)
    return ratio + np.sum(np.where(counts > 0, counts * log_s, 0.0), axis=-1)


def _sweep(counts, probs, beta, log_s, gamma, active, stepsize, words, on_include=None):
    """One in-place pass over ``words`` for the documents in ``active``.

    ``probs`` is (D, A, W), possibly a broadcast view. Returns per-document
    max parameter change and a (D, W) mask of the words skipped in this pass.
    """
    n_docs, A = gamma.shape
    delta = np.zeros(n_docs)
    skipped = np.zeros(counts.shape, dtype=bool)
    shared = probs.strides[0] == 0
    for w in words:
        rows = np.flatnonzero(active & (counts[:, w] > 0))
        if rows.size == 0:
            continue
        n = counts[rows, w]
        p = np.broadcast_to(probs[0, :, w], (rows.size, A)) if shared else probs[rows, :, w]
        b_old = beta[rows, w]
        g_old = gamma[rows]
        cavity = g_old - b_old
        ok = np.all(cavity > 0, axis=1)
        if not ok.all():
            cavity = np.where(ok[:, None], cavity, 1.0)
        matched = _moment_match(cavity, p)
        ok &= ~np.isnan(matched[:, 0])
        mu = (1.0 / n if stepsize == "safe" else np.full_like(n, float(stepsize)))[:, None]
        with np.errstate(invalid="ignore"):
            b_new = mu * (matched - cavity) + (1.0 - mu) * b_old
            g_new = g_old + n[:, None] * (b_new - b_old)
            ok &= np.all(g_new > 0, axis=1)
        if not ok.all():
            skipped[rows[~ok], w] = True
            if not ok.any():
                continue
            rows, cavity, matched, p = rows[ok], cavity[ok], matched[ok], p[ok]
            b_new, g_new, b_old = b_new[ok], g_new[ok], b_old[ok]
        c_sum = cavity.sum(axis=1)
        z = np.einsum("ra,ra->r", cavity, p) / c_sum
        if np.any(z <= 0):
            raise FloatingPointError("non-positive term normaliser: corrupted EP state")
        lg = log_gamma(np.concatenate([cavity, matched.sum(axis=1)[:, None],
                                       matched, c_sum[:, None]], axis=1))
        ls = np.log(z) + lg[:, :A + 1].sum(axis=1) - lg[:, A + 1:].sum(axis=1)
        change = np.maximum(np.abs(b_new - b_old).max(axis=1), np.abs(ls - log_s[rows, w]))
        delta[rows] = np.maximum(delta[rows], change)
        beta[rows, w] = b_new
        gamma[rows] = g_new
        log_s[rows, w] = ls
        if on_include is not None:
            on_include(w, rows, gamma, beta, matched)
    return delta, skipped


def _moment_match(cavity, p):
    # unchecked batched moment matching for the sweep; NaN rows mark failures
    if cavity.shape[1] == 1:
        return cavity.copy()
    out = _moment_match_rows(cavity, p, 1e-12)
    const = np.ptp(p, axis=1) <= 1e-15 * p.max(axis=1)
    if const.any():
        out[const] = cavity[const]
    return out


def _broadcast_params(alpha, word_probs, n_docs):
    """Per-document views: alpha (D, A) and word_probs (D, A, W)."""
    alpha = np.asarray(alpha, dtype=float)
    word_probs = np.asarray(word_probs, dtype=float)
    A = alpha.shape[-1]
    W = word_probs.shape[-1]
    return (np.broadcast_to(alpha, (n_docs, A)),
            np.broadcast_to(word_probs, (n_docs, A, W)))


def _dead_docs(counts, probs):
    # documents containing a word that no aspect can produce have probability 0
    impossible = probs.max(axis=-2) <= 0
    return np.any((counts > 0) & impossible, axis=1)


def ep_run(alpha, word_probs, counts, config=EpConfig(), beta0=None, on_include=None):
    """EP on every row of a ``(D, W)`` count matrix.

    ``alpha`` is (A,) or (D, A) and ``word_probs`` (A, W) or (D, A, W), so
    each document may carry its own parameters (handy for parameter sweeps).
    ``beta0`` warm-starts the term exponents; documents whose warm start is
    not a valid Dirichlet are restarted from zero. ``on_include(w, rows,
    gamma, beta, matched)`` is called after every inclusion step.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    n_docs, n_words = counts.shape
    alpha, probs = _broadcast_params(alpha, word_probs, n_docs)
    A = alpha.shape[1]
    if beta0 is None:
        beta = np.zeros((n_docs, n_words, A))
    else:
        beta = np.array(beta0, dtype=float)
    gamma = alpha + np.einsum("dw,dwa->da", counts, beta)
    bad_start = np.any(gamma <= 0, axis=1)
    beta[bad_start] = 0.0
    gamma[bad_start] = alpha[bad_start]
    log_s = np.zeros((n_docs, n_words))

    dead = _dead_docs(counts, probs)
    converged = dead | ~np.any(counts > 0, axis=1)
    iterations = np.zeros(n_docs, dtype=int)
    words = np.flatnonzero(np.any(counts > 0, axis=0))
    for _ in range(config.max_sweeps):
        active = ~converged
        if not active.any():
            break
        delta, skipped = _sweep(counts, probs, beta, log_s, gamma, active,
                                config.stepsize, words, on_include)
        iterations[active] += 1
        converged |= active & (delta < config.tol) & ~skipped.any(axis=1)

    loglik = ep_log_likelihood(alpha, gamma, log_s, counts)
    loglik[dead] = -np.inf
    return BatchResult(loglik, gamma, converged, iterations, beta=beta, log_s=log_s)


def ep_infer_batch(model, counts, config=EpConfig(), beta0=None, on_include=None):
    """Run EP with one model on every row of a ``(D, W)`` count matrix."""
    return ep_run(model.alpha, model.word_probs, counts, config, beta0, on_include)


def ep_init(model, doc):
    """Term approximations set to 1, so the posterior starts at the prior."""
    W, A = model.n_words, model.n_aspects
    return EpState(np.zeros((W, A)), np.zeros(W), model.alpha.copy())


def ep_sweep(state, model, doc, config=EpConfig(), on_include=None):
    """One deletion/inclusion pass over the document's distinct words.

    Returns a new state and the largest change in any ``beta`` or ``log s``.
    """
    doc = _as_doc(doc)
    counts = doc.dense(model.n_words)[None, :]
    beta = state.beta[None].copy()
    log_s = state.log_s[None].copy()
    gamma = state.gamma[None].copy()
    check_dirichlet(state.gamma)
    if _dead_docs(counts, model.word_probs[None])[0]:
        raise FloatingPointError("document contains a word with zero probability under every aspect")
    words = doc.ids
    delta, skipped = _sweep(counts, model.word_probs[None], beta, log_s, gamma, np.ones(1, bool),
                            config.stepsize, words, on_include)
    skipped = frozenset(np.flatnonzero(skipped[0]).tolist())
    return EpState(beta[0], log_s[0], gamma[0], skipped), float(delta[0])


def ep_infer(model, doc, config=EpConfig(), init=None):
    """EP estimate of a document's log probability and its Dirichlet posterior."""
    doc = _as_doc(doc)
    counts = doc.dense(model.n_words)[None, :]
    beta0 = None if init is None else init.beta[None]
    res = ep_infer_batch(model, counts, config, beta0=beta0)
    state = EpState(res.beta[0], res.log_s[0], res.gamma[0])
    return InferenceResult(float(res.log_likelihood[0]), res.gamma[0].copy(),
                           bool(res.converged[0]), int(res.iterations[0]), state)
