"""Parameter learning for the aspect model.

Three strategies are supported:

``vb_max``
    Maximise the variational bound over the parameters, alternating VB
    inference with the closed-form aspect update (the Blei et al. scheme).
``em_vb`` / ``em_ep``
    Approximative EM: the E-step computes a Dirichlet posterior per document
    (by VB or by EP) and the M-step maximises the expected complete-data
    log-likelihood, with a second-order Taylor approximation for the aspect
    update and a Dirichlet maximum-likelihood fit for ``alpha``.
"""

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, derive_rng
from .ep import BatchResult, EpConfig, ep_infer_batch
from .model import AspectModel
from .numerics import dirichlet_expected_log, dirichlet_ml_fit, digamma, log_gamma, trigamma
from .vb import vb_infer_batch, vb_responsibilities

__all__ = [
    "METHODS",
    "LearnConfig",
    "TrainTrace",
    "init_model",
    "vb_max_step",
    "em_alpha_step",
    "em_wordprob_step",
    "polya_alpha_fit",
    "e_step",
    "train",
]

METHODS = ("vb_max", "em_vb", "em_ep")


@dataclass(frozen=True)
class LearnConfig:
    method: str = "em_ep"
    n_aspects: int = 2
    em_iters: int = 100
    alpha_mode: str = "fixed"          # "fixed" or "learned"
    alpha: tuple = None                # fixed/initial values, default all ones
    init_seed: int = 0
    init_noise: float = 0.5
    init_word_probs: object = None     # (A, W) starting rows, overrides init_noise
    frozen_aspects: tuple = ()         # rows never updated by the M-step
    param_floor: float = 1e-10
    tol: float = None                  # stop once the max parameter change drops below
    ep: EpConfig = field(default_factory=lambda: EpConfig(max_sweeps=1000))
    vb_tol: float = 1e-10
    vb_max_iters: int = 1000
    vb_estep_iters: int = None         # partial E-steps for vb_max
    warm_start: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.n_aspects < 1:
            raise ValueError("n_aspects must be at least 1")
        if self.em_iters < 1:
            raise ValueError("em_iters must be at least 1")
        if self.alpha_mode not in ("fixed", "learned"):
            raise ValueError("alpha_mode must be 'fixed' or 'learned'")
        if self.param_floor < 0:
            raise ValueError("param_floor must be non-negative")


@dataclass
class TrainTrace:
    iteration: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    max_delta: list = field(default_factory=list)
    n_unconverged: list = field(default_factory=list)
    reset_rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.iteration)

    def append(self, iteration, objective, max_delta, n_unconverged, reset_rows=0):
        self.iteration.append(iteration)
        self.objective.append(float(objective))
        self.max_delta.append(float(max_delta))
        self.n_unconverged.append(int(n_unconverged))
        self.reset_rows.append(int(reset_rows))

    def steps_to(self, tol):
        """Number of M-steps until the parameter change first fell below ``tol``."""
        for k, d in enumerate(self.max_delta, start=1):
            if d < tol:
                return k
        return None

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "objective", "max_delta", "n_unconverged_docs"])
        for row in zip(self.iteration, self.objective, self.max_delta, self.n_unconverged):
            writer.writerow([row[0], repr(row[1]), repr(row[2]), row[3]])
        return buf.getvalue()


def _counts(corpus):
    if isinstance(corpus, Corpus):
        return corpus.count_matrix()
    return np.atleast_2d(np.asarray(corpus, dtype=float))


def _finish_rows(raw, old, frozen, floor):
    """Normalise, floor and renormalise aspect rows; frozen rows keep old values."""
    raw = np.array(raw, dtype=float)
    totals = raw.sum(axis=1, keepdims=True)
    dead = totals[:, 0] <= 0
    rows = np.where(totals > 0, raw / np.where(totals > 0, totals, 1.0), 1.0 / raw.shape[1])
    if floor > 0:
        rows = np.maximum(rows, floor)
        rows /= rows.sum(axis=1, keepdims=True)
    frozen = list(frozen)
    if frozen:
        rows[frozen] = old[frozen]
        dead[frozen] = False
    if dead.any():
        warnings.warn(f"aspects {np.flatnonzero(dead).tolist()} received no mass; reset to uniform",
                      RuntimeWarning, stacklevel=3)
    return rows, int(dead.sum())


def init_model(corpus, config):
    """Starting parameters: ``alpha`` per config, rows = noisy corpus unigram."""
    if corpus.n_words == 0:
        raise ValueError("cannot initialise a model over an empty vocabulary")
    A = config.n_aspects
    alpha = np.ones(A) if config.alpha is None else np.asarray(config.alpha, dtype=float)
    if alpha.shape != (A,):
        raise ValueError("alpha must have one entry per aspect")
    if config.init_word_probs is not None:
        rows = np.array(config.init_word_probs, dtype=float)
    else:
        unigram = corpus.unigram() if len(corpus) and corpus.token_count() > 0 else None
        if unigram is None:
            unigram = np.full(corpus.n_words, 1.0 / corpus.n_words)
        rng = derive_rng(config.init_seed, "init_model")
        noise = np.exp(config.init_noise * rng.standard_normal((A, corpus.n_words)))
        rows = unigram * noise
        if config.param_floor > 0:
            rows = np.maximum(rows, config.param_floor)
        rows /= rows.sum(axis=1, keepdims=True)
    return AspectModel(alpha, rows)


def polya_alpha_fit(assignments, lengths, alpha0, tol=1e-10, max_iter=1000, floor=1e-8,
                    value_tol=1e-13, ceiling=1e4):
    """Maximise the Dirichlet-multinomial evidence over ``alpha``.

    ``assignments[i, a]`` is the (soft) count of document i's words given to
    aspect a. Newton steps in ``log(alpha)`` with backtracking; where the
    Hessian is not negative definite, the fixed-point step is used
    instead. When the documents show no overdispersion the maximum lies at
    infinity, so the iteration also stops once the evidence gains less than
    ``value_tol`` relative per step, and ``alpha`` is capped at ``ceiling``
    (beyond it the mixing weights barely move from their mean, and log-gamma
    differences start to lose precision).
    """
    c = np.asarray(assignments, dtype=float)
    n = np.asarray(lengths, dtype=float)
    alpha = np.array(alpha0, dtype=float)
    D = c.shape[0]

    def evidence(a):
        return (np.sum(log_gamma(a.sum()) - log_gamma(n + a.sum()))
                + np.sum(log_gamma(c + a)) - D * np.sum(log_gamma(a)))

    value = evidence(alpha)
    for _ in range(max_iter):
        a0 = alpha.sum()
        den = np.sum(digamma(n + a0) - digamma(a0))
        num = np.sum(digamma(c + alpha) - digamma(alpha), axis=0)
        grad = num - den
        z = np.sum(trigamma(a0) - trigamma(n + a0))
        q = np.sum(trigamma(c + alpha), axis=0) - D * trigamma(alpha)
        hess_u = (np.outer(alpha, alpha) * z + np.diag(alpha * alpha * q + alpha * grad))
        try:
            np.linalg.cholesky(-hess_u)
            new = alpha * np.exp(np.clip(-np.linalg.solve(hess_u, alpha * grad), -5.0, 5.0))
        except np.linalg.LinAlgError:
            new = alpha * num / den
        new = np.clip(new, floor, ceiling)
        new_value = evidence(new)
        for _ in range(40):
            if new_value >= value:
                break
            new = np.sqrt(new * alpha)      # halve the step in log space
            new_value = evidence(new)
        else:
            break
        change = np.max(np.abs(new - alpha) / new)
        gain = new_value - value
        alpha, value = new, new_value
        if change < tol or gain <= value_tol * abs(value):
            break
    return alpha


def vb_max_step(corpus, model, resp, learn_alpha=False, param_floor=1e-10, frozen_aspects=()):
    """Closed-form maximiser of the total VB bound given responsibilities.

    ``resp`` is a (D, W, A) array or a list of VbState. Returns the new model
    and the number of aspect rows that had to be reset.
    """
    counts = _counts(corpus)
    if not isinstance(resp, np.ndarray):
        resp = np.stack([s.resp for s in resp])
    weighted = counts[:, :, None] * resp
    raw = weighted.sum(axis=0).T
    rows, n_reset = _finish_rows(raw, model.word_probs, frozen_aspects, param_floor)
    alpha = model.alpha
    if learn_alpha:
        alpha = polya_alpha_fit(weighted.sum(axis=1), counts.sum(axis=1), model.alpha)
    return AspectModel(alpha, rows), n_reset


def em_alpha_step(posteriors, alpha0=None):
    """Dirichlet ML fit to the expected log mixing weights of the posteriors."""
    g = np.atleast_2d(np.asarray(posteriors, dtype=float))
    if g.shape[0] == 0:
        raise ValueError("need at least one posterior")
    stats = dirichlet_expected_log(g).mean(axis=0)
    return dirichlet_ml_fit(stats, g.shape[0], alpha0=alpha0)


def em_wordprob_step(corpus, model, posteriors, approximation="taylor", param_floor=1e-10,
                     frozen_aspects=()):
    """Approximative-EM update of the aspect word distributions.

    The new ``p(w|a)`` is proportional to the summed posterior expectation of
    ``n_w lambda_a p(w|a) / sum_b lambda_b p(w|b)``. ``approximation``
    selects how the expectation is taken:

    ``"taylor"``
        second-order expansion around the mean of D(gamma + e_a)
    ``"first_order"``
        same expansion without the curvature correction
    ``"fixed_lambda"``
        lambda held at ``exp(digamma(gamma))``, which is the VB update

    Returns the new model and the number of reset rows.
    """
    counts = _counts(corpus)
    gamma = np.atleast_2d(np.asarray(posteriors, dtype=float))
    p = model.word_probs                                    # (A, W)
    if approximation == "fixed_lambda":
        q = vb_responsibilities(p, gamma)                   # (D, W, A)
        raw = np.einsum("dw,dwa->aw", counts, q)
    elif approximation in ("taylor", "first_order"):
        total = gamma.sum(axis=1)                           # (D,)
        pg = gamma @ p                                      # (D, W)
        p2g = gamma @ (p * p)
        # sum_b p(w|b) m_iab with m_iab the mean of D(gamma_i + e_a)
        mean_term = (pg[:, :, None] + p.T[None]) / (total + 1.0)[:, None, None]
        factor = 1.0 / mean_term
        if approximation == "taylor":
            second = (p2g[:, :, None] + (p * p).T[None]) / (total + 1.0)[:, None, None]
            curvature = second / mean_term ** 2 - 1.0
            factor = factor * (1.0 + curvature / (total + 2.0)[:, None, None])
        share = gamma / total[:, None]                      # (D, A)
        with np.errstate(invalid="ignore"):
            contrib = counts[:, :, None] * p.T[None] * share[:, None, :] * factor
        contrib = np.where(counts[:, :, None] > 0, contrib, 0.0)
        raw = contrib.sum(axis=0).T
    else:
        raise ValueError(f"unknown approximation {approximation!r}")
    rows, n_reset = _finish_rows(raw, p, frozen_aspects, param_floor)
    return model.with_params(word_probs=rows), n_reset


def _chunked(fn, n_docs, threads):
    if threads <= 1 or n_docs < 2:
        return fn(slice(None))
    bounds = np.linspace(0, n_docs, min(threads, n_docs) + 1).astype(int)
    parts = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(fn, parts))
    merged = {}
    for name in ("log_likelihood", "gamma", "converged", "iterations", "beta", "log_s", "resp"):
        vals = [getattr(r, name) for r in results]
        merged[name] = None if vals[0] is None else np.concatenate(vals)
    return BatchResult(**merged)


def e_step(model, counts, method, ep_config=EpConfig(), vb_tol=1e-10, vb_max_iters=1000,
           warm=None, threads=1):
    """Per-document inference for every row of ``counts``.

    ``method`` is ``"ep"`` or ``"vb"``; ``warm`` is the previous ``beta``
    (EP) or responsibility (VB) array. Documents are independent, so the
    optional thread pool only splits the batch.
    """
    counts = _counts(counts)
    if method == "ep":
        def run(sl):
            return ep_infer_batch(model, counts[sl], ep_config,
                                  beta0=None if warm is None else warm[sl])
    elif method == "vb":
        def run(sl):
            return vb_infer_batch(model, counts[sl], vb_tol, vb_max_iters,
                                  resp0=None if warm is None else warm[sl])
    else:
        raise ValueError(f"unknown inference method {method!r}")
    return _chunked(run, counts.shape[0], threads)


def train(corpus, config, callback=None):
    """Fit an aspect model; returns ``(model, trace)``.

    Each iteration runs the E-step against the current parameters, records
    the total objective (EP estimate or VB bound) and applies one M-step.
    ``callback(iteration, model, estep_result)`` is invoked before each
    M-step.
    """
    counts = _counts(corpus)
    if counts.shape[0] == 0:
        raise ValueError("cannot train on an empty corpus")
    model = init_model(corpus, config)
    learn_alpha = config.alpha_mode == "learned"
    engine = "ep" if config.method == "em_ep" else "vb"
    vb_iters = config.vb_max_iters
    if config.method == "vb_max" and config.vb_estep_iters is not None:
        vb_iters = config.vb_estep_iters
    trace = TrainTrace()
    warm = None
    for it in range(config.em_iters):
        res = e_step(model, counts, engine, config.ep, config.vb_tol, vb_iters,
                     warm=warm if config.warm_start else None, threads=config.threads)
        warm = res.beta if engine == "ep" else res.resp
        if callback is not None:
            callback(it, model, res)
        if config.method == "vb_max":
            new, n_reset = vb_max_step(counts, model, res.resp, learn_alpha,
                                       config.param_floor, config.frozen_aspects)
        else:
            new, n_reset = em_wordprob_step(counts, model, res.gamma, "taylor",
                                            config.param_floor, config.frozen_aspects)
            if learn_alpha:
                new = new.with_params(alpha=em_alpha_step(res.gamma, alpha0=model.alpha))
        delta = max(np.max(np.abs(new.word_probs - model.word_probs)),
                    np.max(np.abs(new.alpha - model.alpha)))
        trace.append(it, np.sum(res.log_likelihood), delta, np.sum(~res.converged), n_reset)
        model = new
        if config.tol is not None and delta < config.tol:
            break
    return model, trace
