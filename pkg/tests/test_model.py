import json
import warnings

import numpy as np
import pytest
from scipy import integrate, special

from aspect_ep.corpus import Document
from aspect_ep.model import (
    AspectModel,
    exact_log_likelihood,
    exact_log_likelihood_batch,
    load_model,
    log_integrand,
    max_log_likelihood,
    mc_log_likelihood,
    mixed_word_probs,
    save_model,
)
from aspect_ep.numerics import ConvergenceError

# log of the integral over [0,1] of (0.5 + 0.5 t)^5 (0.5 - 0.5 t)^5, mpmath at 30 digits
TWO_WORD_55 = -7.9273243603097938508

TWO_WORD = AspectModel([1.0, 1.0], [[0.5, 0.5], [1.0, 0.0]])


def scipy_log_likelihood(model, counts):
    """Reference integral with scipy.quad (A=2) or dblquad (A=3)."""
    counts = np.asarray(counts, dtype=float)
    alpha, p = model.alpha, model.word_probs
    norm = special.gammaln(alpha.sum()) - special.gammaln(alpha).sum()
    if model.n_aspects == 2:
        def f(t):
            lam = np.array([t, 1 - t])
            return np.exp(norm + np.sum((alpha - 1) * np.log(lam)) + counts @ np.log(lam @ p))
        val, _ = integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-10, limit=500)
        return np.log(val)

    def f(v, u):
        lam = np.array([u, (1 - u) * v, (1 - u) * (1 - v)])
        return (1 - u) * np.exp(norm + np.sum((alpha - 1) * np.log(lam)) + counts @ np.log(lam @ p))
    val, _ = integrate.dblquad(f, 0, 1, 0, 1, epsabs=0, epsrel=1e-10)
    return np.log(val)


def random_case(rng, A, W, length):
    alpha = rng.uniform(0.3, 3.0, A)
    probs = rng.dirichlet(np.ones(W), size=A)
    lam = rng.dirichlet(alpha)
    counts = rng.multinomial(length, lam @ probs).astype(float)
    return AspectModel(alpha, probs), counts


class TestAspectModel:
    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValueError):
            AspectModel([1.0], [[0.5, 0.4]])

    def test_alpha_positive(self):
        with pytest.raises(ValueError):
            AspectModel([1.0, 0.0], [[1.0], [1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            AspectModel([1.0, 1.0], [[1.0]])

    def test_immutable(self):
        with pytest.raises(ValueError):
            TWO_WORD.alpha[0] = 3.0


class TestMixedWordProbs:
    def test_corner(self):
        assert np.array_equal(mixed_word_probs(TWO_WORD, [0.0, 1.0]), [1.0, 0.0])

    def test_identical_aspects(self):
        m = AspectModel([1, 1, 1], [[0.2, 0.3, 0.5]] * 3)
        assert np.allclose(mixed_word_probs(m, [0.1, 0.6, 0.3]), [0.2, 0.3, 0.5])

    def test_midpoint(self):
        m = AspectModel([1, 1], [[1, 0], [0, 1]])
        assert np.allclose(mixed_word_probs(m, [0.5, 0.5]), [0.5, 0.5])

    def test_off_simplex(self):
        with pytest.raises(ValueError):
            mixed_word_probs(TWO_WORD, [0.7, 0.7])


class TestExact:
    def test_empty_document(self):
        assert exact_log_likelihood(TWO_WORD, Document({})) == 0.0

    def test_single_aspect(self):
        m = AspectModel([2.0], [[0.2, 0.8]])
        assert exact_log_likelihood(m, [3, 1]) == pytest.approx(3 * np.log(0.2) + np.log(0.8))

    def test_two_word_oracle(self):
        assert exact_log_likelihood(TWO_WORD, [5, 5]) == pytest.approx(TWO_WORD_55, abs=1e-10)

    def test_two_word_closed_form(self):
        # the integrand is a degree-10 polynomial in t
        poly = np.polynomial.Polynomial([0.5, 0.5]) ** 5 * np.polynomial.Polynomial([0.5, -0.5]) ** 5
        integral = poly.integ()(1.0) - poly.integ()(0.0)
        assert exact_log_likelihood(TWO_WORD, [5, 5]) == pytest.approx(np.log(integral), abs=1e-12)

    @pytest.mark.parametrize("k", range(8))
    def test_against_scipy_two_aspects(self, k):
        model, counts = random_case(np.random.default_rng(k), 2, 6, 25)
        assert exact_log_likelihood(model, counts) == pytest.approx(
            scipy_log_likelihood(model, counts), abs=1e-6)

    @pytest.mark.parametrize("k", range(3))
    def test_against_scipy_three_aspects(self, k):
        rng = np.random.default_rng(100 + k)
        model, counts = random_case(rng, 3, 5, 12)
        model = model.with_params(alpha=rng.uniform(1.0, 3.0, 3))
        assert exact_log_likelihood(model, counts) == pytest.approx(
            scipy_log_likelihood(model, counts), abs=1e-5)

    def test_small_alpha_singularity(self):
        model = AspectModel([0.2, 0.5], [[0.3, 0.7], [0.9, 0.1]])
        assert exact_log_likelihood(model, [4, 3]) == pytest.approx(
            scipy_log_likelihood(model, [4, 3]), abs=1e-6)

    def test_aspect_permutation(self):
        model, counts = random_case(np.random.default_rng(5), 3, 4, 10)
        perm = [2, 0, 1]
        swapped = AspectModel(model.alpha[perm], model.word_probs[perm])
        assert exact_log_likelihood(model, counts) == pytest.approx(
            exact_log_likelihood(swapped, counts), abs=1e-7)

    def test_too_many_aspects(self):
        m = AspectModel(np.ones(4), np.full((4, 2), 0.5))
        with pytest.raises(ValueError):
            exact_log_likelihood(m, [1, 1])

    def test_impossible_document(self):
        assert exact_log_likelihood(TWO_WORD, [0, 1]) != -np.inf  # word 1 possible under aspect 0
        m = AspectModel([1, 1], [[1.0, 0.0], [1.0, 0.0]])
        assert exact_log_likelihood(m, [1, 1]) == -np.inf

    def test_batch_matches_single(self):
        rng = np.random.default_rng(9)
        model, _ = random_case(rng, 2, 4, 5)
        counts = rng.integers(0, 6, size=(5, 4)).astype(float)
        batch = exact_log_likelihood_batch(model.alpha, model.word_probs, counts)
        single = [exact_log_likelihood(model, c) for c in counts]
        assert np.allclose(batch, single, atol=1e-9)

    def test_non_convergence_reports_last(self):
        # tolerances nothing can meet force the panel budget to run out
        with pytest.raises(ConvergenceError) as info:
            exact_log_likelihood_batch(TWO_WORD.alpha, TWO_WORD.word_probs, [[5.0, 5.0]],
                                       rel_tol=0.0, accept_tol=0.0)
        assert info.value.last[0] == pytest.approx(TWO_WORD_55, abs=1e-10)


class TestMax:
    def test_matches_frequency(self):
        val, lam = max_log_likelihood(TWO_WORD, [7, 3])
        assert lam @ TWO_WORD.word_probs[:, 0] == pytest.approx(0.7, abs=1e-4)

    def test_single_aspect(self):
        m = AspectModel([1.0], [[0.25, 0.75]])
        val, lam = max_log_likelihood(m, [2, 2])
        assert np.array_equal(lam, [1.0])
        assert val == pytest.approx(2 * np.log(0.25) + 2 * np.log(0.75))

    def test_outside_hull_goes_to_corner(self):
        # frequency 0.2 of word 0 is below what any mixture can produce (>= 0.5)
        val, lam = max_log_likelihood(TWO_WORD, [2, 8])
        assert lam[0] == pytest.approx(1.0, abs=1e-6)
        grid = np.linspace(0, 1, 1001)
        values = log_integrand(TWO_WORD, [2, 8], np.stack([grid, 1 - grid], axis=1))
        assert grid[np.argmax(values)] == 1.0

    @pytest.mark.parametrize("k", range(5))
    def test_is_a_maximum(self, k):
        rng = np.random.default_rng(k)
        model, counts = random_case(rng, 3, 5, 20)
        model = model.with_params(alpha=rng.uniform(1.0, 3.0, 3))
        val, lam = max_log_likelihood(model, counts)
        assert val == pytest.approx(log_integrand(model, counts, lam), abs=1e-9)
        points = rng.dirichlet(np.ones(3), size=100)
        assert np.all(log_integrand(model, counts, points) <= val + 1e-9)

    def test_small_alpha_warns(self):
        m = AspectModel([0.5, 0.5], [[0.5, 0.5], [1.0, 0.0]])
        with pytest.warns(RuntimeWarning, match="alpha < 1"):
            max_log_likelihood(m, [6, 4])


class TestMonteCarlo:
    def test_empty(self):
        assert mc_log_likelihood(TWO_WORD, Document({}), 100, 0) == (0.0, 0.0)

    def test_deterministic(self):
        assert mc_log_likelihood(TWO_WORD, [3, 4], 500, 1) == mc_log_likelihood(TWO_WORD, [3, 4], 500, 1)

    def test_sample_floor(self):
        with pytest.raises(ValueError):
            mc_log_likelihood(TWO_WORD, [1, 1], 10, 0)

    def test_agrees_with_exact(self):
        value, se = mc_log_likelihood(TWO_WORD, [5, 5], 200000, 0)
        assert abs(value - TWO_WORD_55) <= 3 * se

    def test_randomized_agreement(self):
        rng = np.random.default_rng(42)
        z = []
        for k in range(50):
            model, counts = random_case(rng, 2, int(rng.integers(2, 11)), int(rng.integers(1, 30)))
            value, se = mc_log_likelihood(model, counts, 10 ** 6, seed=k)
            z.append(abs(value - exact_log_likelihood(model, counts)) / se)
        assert max(z) <= 4.0


class TestSerialization:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        m = AspectModel(rng.uniform(0.1, 5, 3), rng.dirichlet(np.ones(7), size=3))
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert np.array_equal(back.alpha, m.alpha)
        assert np.array_equal(back.word_probs, m.word_probs)

    def test_layout(self, tmp_path):
        save_model(TWO_WORD, tmp_path / "m.json", extra={"seed": 3})
        payload = json.loads((tmp_path / "m.json").read_text())
        assert payload["A"] == 2 and payload["W"] == 2 and payload["seed"] == 3
        assert payload["word_probs"] == [[0.5, 1.0], [0.5, 0.0]]

    def test_bad_version(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"version": 99}))
        with pytest.raises(ValueError):
            load_model(tmp_path / "m.json")


def test_log_integrand_shapes():
    lam = np.array([[0.2, 0.8], [0.5, 0.5]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = log_integrand(TWO_WORD, [1, 1], lam)
    assert out.shape == (2,)
