"""Special functions and Dirichlet primitives.

Digamma, trigamma and log-gamma are evaluated with the Stirling/Bernoulli
asymptotic series after shifting the argument up to at least 6 with the
recurrence relations. Every function accepts scalars or arrays and works
elementwise.
"""

import numpy as np

__all__ = [
    "ConvergenceError",
    "digamma",
    "trigamma",
    "log_gamma",
    "inverse_digamma",
    "log_sum_exp",
    "check_dirichlet",
    "dirichlet_mean",
    "dirichlet_log_normalizer",
    "dirichlet_log_pdf",
    "dirichlet_expected_log",
    "dirichlet_moment_match",
    "dirichlet_ml_objective",
    "dirichlet_ml_fit",
    "sample_log_dirichlet",
]

_SHIFT = 6.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

# B_2k / (2k) for k = 1..8, used by digamma
_DIGAMMA_COEF = np.array([
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
])

# B_2k / (2k (2k - 1)) for k = 1..8, used by log_gamma
_LGAMMA_COEF = np.array([
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
])

# B_2k for k = 1..8, used by trigamma
_TRIGAMMA_COEF = np.array([
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
])


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver runs out of iterations.

    The last iterate is available as ``last``.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


def _positive_array(x, name):
    arr = np.asarray(x, dtype=float)
    if not (arr > 0).all():
        raise ValueError(f"{name} requires strictly positive arguments")
    return arr


def _unwrap(arr):
    return arr.item() if arr.ndim == 0 else arr


def _poly(coef, z):
    # Horner evaluation of sum_k coef[k] * z**k
    out = coef[-1]
    for c in coef[-2::-1]:
        out = out * z + c
    return out


def _shifted(x):
    # arguments below the threshold are moved up by exactly _SHIFT
    small = x < _SHIFT
    return small, np.where(small, x, 1.0), np.where(small, x + _SHIFT, x)


def digamma(x):
    """Digamma function, the derivative of ``log_gamma``."""
    x = _positive_array(x, "digamma")
    small, z, x = _shifted(x)
    acc = 1.0 / z + 1.0 / (z + 1.0) + 1.0 / (z + 2.0) + 1.0 / (z + 3.0) + 1.0 / (z + 4.0) + 1.0 / (z + 5.0)
    inv2 = 1.0 / (x * x)
    series = np.log(x) - 0.5 / x - inv2 * _poly(_DIGAMMA_COEF, inv2)
    return _unwrap(np.where(small, series - acc, series))


def trigamma(x):
    x = _positive_array(x, "trigamma")
    small, z, x = _shifted(x)
    acc = sum(1.0 / ((z + k) * (z + k)) for k in range(int(_SHIFT)))
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv + 0.5 * inv2 + inv * inv2 * _poly(_TRIGAMMA_COEF, inv2)
    return _unwrap(np.where(small, series + acc, series))


def log_gamma(x):
    """Natural log of the gamma function for positive arguments."""
    x = _positive_array(x, "log_gamma")
    small, z, x = _shifted(x)
    prod = z * (z + 1.0) * (z + 2.0) * (z + 3.0) * (z + 4.0) * (z + 5.0)
    inv = 1.0 / x
    series = (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI + inv * _poly(_LGAMMA_COEF, inv * inv)
    return _unwrap(np.where(small, series - np.log(prod), series))


def inverse_digamma(y, tol=1e-14, max_iter=50):
    """Solve ``digamma(x) = y`` for x > 0 by Newton's method."""
    y = np.asarray(y, dtype=float)
    # standard initialisation, accurate to a few digits everywhere
    with np.errstate(divide="ignore"):
        x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - digamma(1.0)))
    for _ in range(max_iter):
        step = (np.asarray(digamma(x)) - y) / np.asarray(trigamma(x))
        # keep the iterate positive
        x_new = np.where(step >= x, 0.5 * x, x - step)
        done = np.all(np.abs(x_new - x) <= tol * x_new)
        x = x_new
        if done:
            break
    return _unwrap(np.asarray(x))


def log_sum_exp(xs, axis=None):
    """``log(sum(exp(xs)))`` computed without overflow.

    ``-inf`` entries contribute nothing; an all ``-inf`` input gives ``-inf``.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    shift = np.max(xs, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(xs - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def check_dirichlet(gamma):
    """Validate Dirichlet parameters and return them as a float array."""
    g = np.asarray(gamma, dtype=float)
    if g.ndim != 1 or g.size < 1:
        raise ValueError("Dirichlet parameters must be a non-empty vector")
    if np.any(~(g > 0)) or not np.all(np.isfinite(g)):
        raise ValueError(f"Dirichlet parameters must be positive and finite, got {g}")
    return g


def dirichlet_mean(gamma):
    g = check_dirichlet(gamma)
    return g / g.sum()


def dirichlet_log_normalizer(gamma):
    """``log B(gamma)``; vectorised over leading axes."""
    g = np.asarray(gamma, dtype=float)
    return np.sum(log_gamma(g), axis=-1) - log_gamma(np.sum(g, axis=-1))


def dirichlet_log_pdf(log_lam, gamma):
    """Log density of D(lambda | gamma) given ``log(lambda)``.

    ``log_lam`` may carry leading sample axes. A one-component Dirichlet is
    a point mass and gets log density 0.
    """
    g = np.asarray(gamma, dtype=float)
    log_lam = np.asarray(log_lam, dtype=float)
    if g.shape[-1] == 1:
        return np.zeros(log_lam.shape[:-1])
    return np.sum((g - 1.0) * log_lam, axis=-1) - dirichlet_log_normalizer(g)


def dirichlet_expected_log(gamma):
    """``E[log lambda_a]`` under D(gamma), vectorised over leading axes."""
    g = np.asarray(gamma, dtype=float)
    return digamma(g) - digamma(np.sum(g, axis=-1, keepdims=True))


def dirichlet_moment_match(g_old, word_probs, rel_tol=1e-12):
    """Project a Dirichlet tilted by a linear term back onto the Dirichlets.

    The tilted density is ``D(lambda | g_old) * sum_a word_probs[a] lambda_a``
    up to normalisation. Returns the parameters of the Dirichlet with the same
    mean and the same precision implied by the second moments, or ``None``
    when the variance match is degenerate.

    ``g_old`` may be a 2-d array of several cavities, with ``word_probs``
    either shared (A,) or given per row (R, A); the result is then an array
    with NaN rows where matching failed.
    """
    g = np.asarray(g_old, dtype=float)
    p = np.asarray(word_probs, dtype=float)
    batched = g.ndim == 2
    g2 = np.atleast_2d(g)
    if not (g2 > 0).all():
        raise ValueError("cavity parameters must be positive")
    if not (p.max(axis=-1) > 0).all():
        raise ValueError("word probabilities must have a positive entry")
    if g2.shape[1] == 1:
        out = g2.copy()
    else:
        out = _moment_match_rows(g2, p, rel_tol)
        # a constant term leaves the density unchanged
        const = np.ptp(p, axis=-1) <= 1e-15 * p.max(axis=-1)
        if np.ndim(const) == 0:
            const = np.full(g2.shape[0], bool(const))
        out[const] = g2[const]
    if batched:
        return out
    if np.isnan(out[0, 0]):
        return None
    return out[0]


def _moment_match_rows(g, p, rel_tol):
    total = g.sum(axis=1)
    pg = np.sum(g * p, axis=1)
    z = pg / total
    m = g * (p + pg[:, None]) / (total * (total + 1.0) * z)[:, None]
    m2 = (g * (g + 1.0) / (total * (total + 1.0))[:, None]
          * (2.0 * p + pg[:, None]) / ((total + 2.0) * z)[:, None])
    num = np.sum(m - m2, axis=1)
    den = np.sum(m2 - m * m, axis=1)
    precision = num / np.where(den > 0, den, 1.0)
    bad = (den <= rel_tol * np.sum(m2, axis=1)) | ~(precision > 0)
    out = precision[:, None] * m
    out[bad] = np.nan
    return out


def dirichlet_ml_objective(alpha, suff_stats, n_docs):
    """Dirichlet log-likelihood (up to a constant) given mean log statistics."""
    a = np.asarray(alpha, dtype=float)
    s = np.asarray(suff_stats, dtype=float)
    return n_docs * (log_gamma(a.sum()) - np.sum(log_gamma(a)) + np.sum((a - 1.0) * s))


def dirichlet_ml_gradient(alpha, suff_stats, n_docs):
    a = np.asarray(alpha, dtype=float)
    return n_docs * (digamma(a.sum()) - digamma(a) + np.asarray(suff_stats, dtype=float))


def dirichlet_ml_fit(suff_stats, n_docs, alpha0=None, tol=1e-10, max_iter=1000):
    """Maximum-likelihood Dirichlet parameters from mean log statistics.

    ``suff_stats[a]`` is the average of ``E[log lambda_a]`` over documents.
    A few rounds of the fixed point ``digamma(alpha_a) = digamma(sum(alpha)) + s_a``
    give a starting point; Newton steps with backtracking on the (concave)
    objective then converge quadratically.
    """
    s = np.asarray(suff_stats, dtype=float)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("sufficient statistics must be a non-empty vector")
    if np.any(s >= 0):
        raise ValueError("mean log statistics of simplex coordinates must be negative")
    if s.size == 1:
        return np.ones(1)
    if alpha0 is None:
        alpha = np.ones_like(s)
    else:
        alpha = check_dirichlet(alpha0).copy()
    for _ in range(min(20, max_iter)):
        alpha = np.asarray(inverse_digamma(digamma(alpha.sum()) + s))
    value = dirichlet_ml_objective(alpha, s, 1.0)
    for _ in range(max_iter):
        step = _newton_step(alpha, s)
        t = 1.0
        while t > 1e-12:
            new = alpha - t * step
            if np.all(new > 0):
                new_value = dirichlet_ml_objective(new, s, 1.0)
                if new_value >= value - 1e-14 * abs(value):
                    break
            t *= 0.5
        else:
            new, new_value = alpha, value
        change = np.max(np.abs(new - alpha) / new)
        alpha, value = new, new_value
        if change < tol:
            return alpha
    raise ConvergenceError("Dirichlet maximum-likelihood fit did not converge", last=alpha)


def _newton_step(alpha, s):
    # Hessian is diag(-trigamma(alpha)) + trigamma(sum alpha), per document
    grad = digamma(alpha.sum()) - digamma(alpha) + s
    q = -trigamma(alpha)
    z = trigamma(alpha.sum())
    b = np.sum(grad / q) / (1.0 / z + np.sum(1.0 / q))
    return (grad - b) / q


def sample_log_dirichlet(rng, gamma, size=None):
    """Draw ``log(lambda)`` for lambda ~ D(gamma) via normalised Gamma draws.

    Works in log space so that small concentration parameters do not
    underflow: for shape < 1 a Gamma(shape) variate is written as
    ``Gamma(shape + 1) * U**(1/shape)``.
    """
    g = check_dirichlet(gamma)
    shape = (g.size,) if size is None else (size, g.size)
    low = g < 1.0
    boosted = np.where(low, g + 1.0, g)
    with np.errstate(divide="ignore"):
        log_x = np.log(rng.standard_gamma(boosted, size=shape))
        if np.any(low):
            u = rng.random(shape)
            log_x = log_x + np.where(low, np.log(u) / g, 0.0)
    return log_x - log_sum_exp(log_x, axis=-1)[..., None]
