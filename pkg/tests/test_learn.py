import warnings

import numpy as np
import pytest
from scipy import integrate, optimize, special

from aspect_ep.corpus import Corpus, sample_corpus
from aspect_ep.ep import EpConfig, ep_infer_batch
from aspect_ep.learn import (
    LearnConfig,
    TrainTrace,
    e_step,
    em_alpha_step,
    em_wordprob_step,
    init_model,
    polya_alpha_fit,
    train,
    vb_max_step,
)
from aspect_ep.model import AspectModel
from aspect_ep.numerics import dirichlet_expected_log, dirichlet_ml_fit
from aspect_ep.vb import vb_infer_batch, vb_responsibilities


def small_corpus(seed=0, n_docs=20, length=15, A=2, W=5):
    rng = np.random.default_rng(seed)
    model = AspectModel(rng.uniform(0.5, 2.0, A), rng.dirichlet(np.ones(W), size=A))
    return model, sample_corpus(model, n_docs, length, seed=seed)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"method": "gibbs"}, {"n_aspects": 0}, {"em_iters": 0},
                                        {"alpha_mode": "free"}, {"param_floor": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LearnConfig(**kwargs)


class TestInit:
    def test_zero_noise_gives_unigram(self):
        _, corpus = small_corpus()
        m = init_model(corpus, LearnConfig(n_aspects=3, init_noise=0.0))
        assert np.allclose(m.word_probs, corpus.unigram()[None].repeat(3, axis=0))
        assert np.array_equal(m.alpha, np.ones(3))

    def test_seeded(self):
        _, corpus = small_corpus()
        a = init_model(corpus, LearnConfig(init_seed=4))
        b = init_model(corpus, LearnConfig(init_seed=4))
        c = init_model(corpus, LearnConfig(init_seed=5))
        assert np.array_equal(a.word_probs, b.word_probs)
        assert not np.array_equal(a.word_probs, c.word_probs)

    def test_fixed_alpha(self):
        _, corpus = small_corpus()
        assert np.array_equal(init_model(corpus, LearnConfig(alpha=(1.0, 2.0))).alpha, [1.0, 2.0])

    def test_empty_vocabulary(self):
        with pytest.raises(ValueError):
            init_model(Corpus.from_counts(np.zeros((1, 0))), LearnConfig())


class TestVbMaxStep:
    def test_single_document_single_aspect(self):
        corpus = Corpus.from_counts([[3.0, 1.0, 0.0, 4.0]])
        m = AspectModel([1.0], [[0.25] * 4])
        new, _ = vb_max_step(corpus, m, np.ones((1, 4, 1)))
        assert np.allclose(new.word_probs, [[3 / 8, 1 / 8, 1e-10, 4 / 8]], atol=1e-10)

    def test_uniform_responsibilities(self):
        _, corpus = small_corpus()
        m = init_model(corpus, LearnConfig(n_aspects=3))
        resp = np.full((len(corpus), corpus.n_words, 3), 1 / 3)
        new, _ = vb_max_step(corpus, m, resp, param_floor=0.0)
        assert np.allclose(new.word_probs, corpus.unigram()[None], atol=1e-12)

    def test_empty_aspect_reset(self):
        corpus = Corpus.from_counts([[1.0, 2.0]])
        m = AspectModel([1.0, 1.0], [[0.5, 0.5], [0.5, 0.5]])
        resp = np.zeros((1, 2, 2))
        resp[..., 0] = 1.0
        with pytest.warns(RuntimeWarning, match="no mass"):
            new, n_reset = vb_max_step(corpus, m, resp)
        assert n_reset == 1 and np.allclose(new.word_probs[1], 0.5)

    def test_polya_fit_is_the_maximum(self):
        rng = np.random.default_rng(0)
        c = rng.gamma(2.0, 3.0, size=(40, 3))
        n = c.sum(axis=1)

        def neg(log_a):
            a = np.exp(log_a)
            return -np.sum(special.gammaln(a.sum()) - special.gammaln(n + a.sum())
                           + np.sum(special.gammaln(c + a) - special.gammaln(a), axis=1))

        ref = np.exp(optimize.minimize(neg, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x)
        assert np.allclose(polya_alpha_fit(c, n, np.ones(3)), ref, rtol=1e-4)


class TestEmSteps:
    def test_fixed_lambda_equals_bound_update(self):
        model, corpus = small_corpus(1, A=3)
        res = vb_infer_batch(model, corpus.count_matrix(), tol=1e-12)
        resp = vb_responsibilities(model.word_probs, res.gamma)
        a, _ = vb_max_step(corpus, model, resp)
        b, _ = em_wordprob_step(corpus, model, res.gamma, approximation="fixed_lambda")
        assert np.max(np.abs(a.word_probs - b.word_probs)) <= 1e-10

    def test_single_aspect_gives_frequencies(self):
        _, corpus = small_corpus(2)
        m = AspectModel([1.0], [np.full(corpus.n_words, 1 / corpus.n_words)])
        gammas = np.ones((len(corpus), 1)) * 3.0
        new, _ = em_wordprob_step(corpus, m, gammas, param_floor=0.0)
        assert np.allclose(new.word_probs[0], corpus.unigram(), atol=1e-12)

    def test_identical_rows_stay_identical(self):
        _, corpus = small_corpus(3)
        row = corpus.unigram()
        m = AspectModel([1.0, 1.0], [row, row])
        new, _ = em_wordprob_step(corpus, m, np.full((len(corpus), 2), 4.0))
        assert np.allclose(new.word_probs[0], new.word_probs[1], atol=1e-14)

    def test_taylor_against_quadrature(self):
        # one document, A=2, gamma=[3, 2]; rows with moderate ratios between
        # aspects (the expansion degrades when p(w|a) differ by orders of magnitude)
        rng = np.random.default_rng(0)
        gamma = np.array([3.0, 2.0])
        worst = 0.0
        for _ in range(20):
            W = 4
            p = rng.dirichlet(np.full(W, 3.0), size=2)
            counts = rng.integers(1, 5, size=W).astype(float)

            def expectation(a, w):
                # E[lambda_a p(w|a) / sum_b lambda_b p(w|b)] under D(3, 2)
                def f(t):
                    dens = np.exp(special.gammaln(5.0) - special.gammaln(3.0) - special.gammaln(2.0)
                                  + 2 * np.log(t) + np.log(1 - t))
                    return dens * (t, 1 - t)[a] * p[a, w] / (t * p[0, w] + (1 - t) * p[1, w])
                return integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-12)[0]

            raw = np.array([[counts[w] * expectation(a, w) for w in range(W)] for a in range(2)])
            exact_rows = raw / raw.sum(axis=1, keepdims=True)
            new, _ = em_wordprob_step(Corpus.from_counts(counts[None]), AspectModel([1.0, 1.0], p),
                                      gamma[None], param_floor=0.0)
            worst = max(worst, np.max(np.abs(new.word_probs - exact_rows) / exact_rows))
        assert worst <= 0.02

    def test_first_order_is_worse_than_taylor(self):
        rng = np.random.default_rng(1)
        p = rng.dirichlet(np.full(5, 2.0), size=2)
        corpus = Corpus.from_counts(rng.integers(1, 6, size=(1, 5)))
        model = AspectModel([1.0, 1.0], p)
        gamma = np.array([[2.0, 1.5]])
        # a long-run reference from a very large Monte Carlo sample of D(gamma)
        lam = np.random.default_rng(2).dirichlet(gamma[0], size=2_000_000)
        ref = (corpus.count_matrix()[0][None] * p
               * np.mean(lam.T[:, :, None] / (lam @ p)[None], axis=1))
        ref /= ref.sum(axis=1, keepdims=True)
        errs = {}
        for approx in ("taylor", "first_order"):
            new, _ = em_wordprob_step(corpus, model, gamma, approximation=approx, param_floor=0.0)
            errs[approx] = np.max(np.abs(new.word_probs - ref))
        assert errs["taylor"] < errs["first_order"]

    def test_unknown_approximation(self):
        model, corpus = small_corpus()
        with pytest.raises(ValueError):
            em_wordprob_step(corpus, model, np.ones((len(corpus), 2)), approximation="cubic")

    def test_alpha_identical_posteriors(self):
        g = np.array([2.0, 5.0, 1.0])
        fit = em_alpha_step(np.tile(g, (7, 1)))
        assert np.allclose(fit, dirichlet_ml_fit(dirichlet_expected_log(g), 7))

    def test_alpha_symmetric(self):
        fit = em_alpha_step([[2.0, 3.0], [3.0, 2.0]])
        assert fit[0] == pytest.approx(fit[1], rel=1e-10)

    def test_alpha_empty(self):
        with pytest.raises(ValueError):
            em_alpha_step(np.zeros((0, 2)))

    def test_alpha_recovery_from_sampled_documents(self):
        # aspect-level counts give exact Dirichlet posteriors alpha + c_i, whose
        # mean log statistics match the prior's on average
        alpha = np.array([2.0, 0.7])
        rng = np.random.default_rng(3)
        lam = rng.dirichlet(alpha, size=20000)
        c = np.array([rng.multinomial(10, x) for x in lam])
        assert np.allclose(em_alpha_step(alpha + c), alpha, rtol=0.05)

    def test_alpha_recovery_through_ep(self):
        # aspects with disjoint vocabularies: EP posteriors are exact as well
        true = AspectModel([2.0, 0.7], [[0.6, 0.4, 0.0, 0.0], [0.0, 0.0, 0.3, 0.7]])
        corpus = sample_corpus(true, 3000, 10, seed=4)
        post = ep_infer_batch(true, corpus.count_matrix(), EpConfig(max_sweeps=2000, tol=1e-10))
        assert post.converged.all()
        assert np.allclose(em_alpha_step(post.gamma), true.alpha, rtol=0.08)


class TestTrain:
    def test_single_aspect_one_iteration(self):
        _, corpus = small_corpus(4)
        for method in ("vb_max", "em_vb", "em_ep"):
            m, trace = train(corpus, LearnConfig(method=method, n_aspects=1, em_iters=1, param_floor=0.0))
            assert np.allclose(m.word_probs[0], corpus.unigram(), atol=1e-12)
            assert len(trace) == 1

    @pytest.mark.parametrize("method", ["vb_max", "em_vb", "em_ep"])
    def test_deterministic(self, method):
        _, corpus = small_corpus(5)
        config = LearnConfig(method=method, n_aspects=2, em_iters=5, alpha_mode="learned", init_seed=2)
        a, ta = train(corpus, config)
        b, tb = train(corpus, config)
        assert np.array_equal(a.word_probs, b.word_probs) and np.array_equal(a.alpha, b.alpha)
        assert ta.objective == tb.objective

    @pytest.mark.parametrize("method", ["vb_max", "em_vb", "em_ep"])
    def test_outputs_are_valid_models(self, method):
        _, corpus = small_corpus(6)
        m, trace = train(corpus, LearnConfig(method=method, n_aspects=3, em_iters=5, alpha_mode="learned"))
        assert np.all(m.alpha > 0)
        assert np.allclose(m.word_probs.sum(axis=1), 1.0)
        assert len(trace) <= 5

    def test_vb_max_bound_non_decreasing(self):
        _, corpus = small_corpus(7, n_docs=30, A=3)
        _, trace = train(corpus, LearnConfig(method="vb_max", n_aspects=3, em_iters=40))
        assert np.all(np.diff(trace.objective) >= -1e-8)

    def test_vb_max_learned_alpha_non_decreasing(self):
        _, corpus = small_corpus(8, n_docs=30)
        _, trace = train(corpus, LearnConfig(method="vb_max", n_aspects=2, em_iters=10,
                                             alpha_mode="learned"))
        assert np.all(np.diff(trace.objective) >= -1e-8)

    def test_threads_match_serial(self):
        _, corpus = small_corpus(9, n_docs=25)
        base = LearnConfig(method="em_ep", n_aspects=2, em_iters=4)
        a, _ = train(corpus, base)
        from dataclasses import replace
        b, _ = train(corpus, replace(base, threads=3))
        assert np.allclose(a.word_probs, b.word_probs, atol=1e-9)

    def test_frozen_rows(self):
        _, corpus = small_corpus(10)
        rows = np.array([corpus.unigram(), np.full(corpus.n_words, 1 / corpus.n_words)])
        m, _ = train(corpus, LearnConfig(method="em_ep", em_iters=3, init_word_probs=rows,
                                         frozen_aspects=(1,)))
        assert np.array_equal(m.word_probs[1], rows[1])

    def test_tolerance_stops_early(self):
        _, corpus = small_corpus(11)
        _, trace = train(corpus, LearnConfig(method="em_ep", em_iters=500, tol=1e-3))
        assert len(trace) < 500 and trace.max_delta[-1] < 1e-3

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train(Corpus.from_counts(np.zeros((0, 3))), LearnConfig())

    def test_callback_sees_every_iteration(self):
        _, corpus = small_corpus(12)
        seen = []
        train(corpus, LearnConfig(em_iters=3), callback=lambda it, m, r: seen.append(it))
        assert seen == [0, 1, 2]


def test_e_step_unknown_engine():
    model, corpus = small_corpus()
    with pytest.raises(ValueError):
        e_step(model, corpus.count_matrix(), "gibbs")


def test_trace_csv_and_steps():
    trace = TrainTrace()
    for k, d in enumerate([1.0, 1e-3, 1e-5]):
        trace.append(k, -10.0 + k, d, 0)
    assert trace.steps_to(1e-4) == 3
    assert trace.steps_to(1e-9) is None
    text = trace.to_csv(["seed 1"])
    lines = text.splitlines()
    assert lines[0] == "# seed 1"
    assert lines[1] == "iteration,objective,max_delta,n_unconverged_docs"
    assert len(lines) == 5


def test_no_warnings_in_standard_training():
    _, corpus = small_corpus(13)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        train(corpus, LearnConfig(method="em_ep", n_aspects=2, em_iters=5))
