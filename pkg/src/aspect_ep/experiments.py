"""Built-in synthetic scenarios and end-to-end reproduction runs.

Every run is a function of one root seed; sub-seeds are derived per purpose
so that, for example, training and test documents never share a stream.
Each ``repro_*`` function returns a ``ReproSummary`` whose checks carry the
tolerances of the acceptance criteria.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, Vocabulary, concat_topic_documents, derive_rng, sample_corpus, save_corpus
from .evaluate import classify, likelihood_curve, perplexity, word_prob_family
from .learn import LearnConfig, train
from .model import AspectModel, save_model

__all__ = [
    "SCENARIOS",
    "EXPERIMENTS",
    "Check",
    "ReproSummary",
    "sub_seed",
    "make_scenario",
    "two_word_model",
    "fig1_config",
    "repro_fig1",
    "repro_fiveword",
    "repro_perplexity5",
    "repro_twoclass",
    "repro_concat_topics",
    "run_experiment",
]

SCENARIOS = ("two-word", "five-word", "two-class", "concat-topics")
EXPERIMENTS = ("fig1", "fiveword", "twoclass", "perplexity5", "concat-topics")


def sub_seed(seed, *purpose):
    """A 32-bit seed derived from a root seed and a purpose path."""
    return int(derive_rng(seed, *purpose).integers(2 ** 32))


def two_word_model():
    # word 0 plays the role of "w = 1"
    return AspectModel([1.0, 1.0], [[0.5, 0.5], [1.0, 0.0]])


def uniform_model(n_words=5):
    return AspectModel([1.0], [np.full(n_words, 1.0 / n_words)])


def ramp_model():
    return AspectModel([1.0], [np.arange(1, 6) / 15.0])


def _labelled(corpus, label):
    return Corpus(corpus.vocabulary, corpus.documents, [label] * len(corpus))


def _merge(parts):
    docs, labels = [], []
    for p in parts:
        docs += p.documents
        labels += p.labels
    return Corpus(parts[0].vocabulary, docs, labels)


def _topic_models(n_topics=6, n_words=60, seed=0):
    """Single-aspect topic models sharing a common block of function words.

    A fifth of the vocabulary is shared background; each topic puts the rest
    of its mass on its own content words.
    """
    rng = derive_rng(seed, "topic_models")
    n_common = n_words // 5
    per_topic = (n_words - n_common) // n_topics
    models = []
    for t in range(n_topics):
        row = np.zeros(n_words)
        row[:n_common] = 0.4 * rng.dirichlet(np.full(n_common, 2.0))
        own = n_common + t * per_topic + np.arange(per_topic)
        row[own] = 0.6 * rng.dirichlet(np.full(per_topic, 1.0))
        models.append(AspectModel([1.0], [row / row.sum()]))
    return models


def make_scenario(name, seed=0):
    """Corpora of a named scenario as a dict ``{"train": ..., "test": ...}``.

    ``two-word``: ten documents of length ten from the two-word, two-aspect
    model. ``five-word``: 100 training and 1000 test documents of length 100
    from a uniform five-word multinomial. ``two-class``: 50 documents of
    length 50 per class from a uniform and a 1:2:3:4:5 multinomial, plus 2000
    labelled test documents. ``concat-topics``: documents built from three
    draws of six single-topic pools.
    """
    if name == "two-word":
        return {"train": sample_corpus(two_word_model(), 10, 10, sub_seed(seed, name, "train"))}
    if name == "five-word":
        m = uniform_model()
        return {"train": sample_corpus(m, 100, 100, sub_seed(seed, name, "train")),
                "test": sample_corpus(m, 1000, 100, sub_seed(seed, name, "test"))}
    if name == "two-class":
        classes = [uniform_model(), ramp_model()]
        train = [_labelled(sample_corpus(m, 50, 50, sub_seed(seed, name, "train", k)), k)
                 for k, m in enumerate(classes)]
        test = [_labelled(sample_corpus(m, 1000, 50, sub_seed(seed, name, "test", k)), k)
                for k, m in enumerate(classes)]
        return {"train_0": train[0], "train_1": train[1], "test": _merge(test)}
    if name == "concat-topics":
        topics = _topic_models(seed=sub_seed(seed, name, "topics"))
        vocab = Vocabulary.numbered(topics[0].n_words)
        pools = [sample_corpus(m, 40, 60, sub_seed(seed, name, "pool", t), vocabulary=vocab)
                 for t, m in enumerate(topics)]
        return {"train": concat_topic_documents(pools, 3, 200, sub_seed(seed, name, "train")),
                "test": concat_topic_documents(pools, 3, 200, sub_seed(seed, name, "test"))}
    raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


# ---------------------------------------------------------------------------
# summaries


@dataclass
class Check:
    name: str
    value: object
    target: str
    passed: bool

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {_short(self.value)} (target {self.target})"


@dataclass
class ReproSummary:
    experiment: str
    seed: int
    checks: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def check(self, name, value, target, passed):
        self.checks.append(Check(name, value, target, bool(passed)))

    def text(self):
        lines = [f"experiment {self.experiment}  seed {self.seed}  ({self.seconds:.1f} s)"]
        for k, v in self.notes.items():
            lines.append(f"  {k}: {_short(v)}")
        lines += ["  " + c.line() for c in self.checks]
        return "\n".join(lines) + "\n"


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_short(x) for x in np.asarray(v).ravel().tolist()) + "]"
    return str(v)


def _write(outdir, name, text):
    if outdir is not None:
        path = Path(outdir) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


# ---------------------------------------------------------------------------
# two words, one free parameter


def fig1_config(method, corpus):
    """Learning setup with only ``p(w=1|a=1)`` free; aspect 2 stays at [1, 0]."""
    return LearnConfig(method=method, n_aspects=2, em_iters=2000, alpha=(1.0, 1.0),
                       init_word_probs=[corpus.unigram(), [1.0, 0.0]], frozen_aspects=(1,),
                       tol=1e-7, param_floor=0.0)


def repro_fig1(seed=0, n_seeds=20, grid_points=101, outdir=None):
    start = time.time()
    grid = np.linspace(0.0, 1.0, grid_points)
    step = grid[1] - grid[0]
    truth = two_word_model()
    family = word_prob_family(truth, 0, 0)
    methods = ("vb_max", "em_vb", "em_ep")
    estimates = {m: [] for m in methods}
    exact_argmax, ep_gap, vb_slack = [], [], []
    for r in range(n_seeds):
        corpus = make_scenario("two-word", sub_seed(seed, "fig1", r))["train"]
        curve = likelihood_curve(corpus, family, grid)
        ex = curve.values["exact"]
        finite = np.isfinite(ex)
        ep_gap.append(float(np.max(np.abs(curve.values["ep"][finite] - ex[finite]))))
        vb_slack.append(float(np.min(ex[finite] - curve.values["vb"][finite])))
        exact_argmax.append(curve.argmax("exact"))
        for m in methods:
            model, _ = train(corpus, fig1_config(m, corpus))
            estimates[m].append(float(model.word_probs[0, 0]))
        if r == 0:
            header = [f"experiment fig1 seed {seed} replicate 0"]
            header += [f"estimate {m} {estimates[m][0]!r}" for m in methods]
            _write(outdir, "fig1_curve.csv", curve.to_csv(header))
    means = {m: float(np.mean(v)) for m, v in estimates.items()}
    ex_mean = float(np.mean(exact_argmax))
    s = ReproSummary("fig1", seed)
    s.notes.update({f"mean estimate {m}": v for m, v in means.items()})
    s.notes["mean exact argmax"] = ex_mean
    s.notes["true parameter"] = 0.5
    s.check("max |EP - exact| (nats)", max(ep_gap), "<= 0.05", max(ep_gap) <= 0.05)
    s.check("min (exact - VB)", min(vb_slack), ">= -1e-7", min(vb_slack) >= -1e-7)
    s.check("vb_max < em_vb < em_ep", [means[m] for m in methods], "increasing",
            means["vb_max"] < means["em_vb"] < means["em_ep"])
    s.check("em_ep - exact argmax", means["em_ep"] - ex_mean, "<= 2 grid steps",
            means["em_ep"] <= ex_mean + 2 * step + 1e-12)
    s.seconds = time.time() - start
    s.check("runtime (s)", s.seconds, "<= 60", s.seconds <= 60)
    rows = ["replicate,exact_argmax," + ",".join(methods)]
    for r in range(n_seeds):
        rows.append(",".join([str(r), repr(exact_argmax[r])] + [repr(estimates[m][r]) for m in methods]))
    _write(outdir, "fig1_estimates.csv", f"# experiment fig1 seed {seed}\n" + "\n".join(rows) + "\n")
    _write(outdir, "fig1_summary.txt", s.text())
    return s


# ---------------------------------------------------------------------------
# five-word experiment


def fiveword_configs(em_iters=3000):
    common = dict(n_aspects=3, alpha=(1.0, 1.0, 1.0), em_iters=em_iters, tol=1e-6)
    return {"em_ep": LearnConfig(method="em_ep", **common),
            "vb_max": LearnConfig(method="vb_max", param_floor=0.0, **common)}


def _train_fiveword(corpus, em_iters):
    return {m: train(corpus, cfg) for m, cfg in fiveword_configs(em_iters).items()}


def repro_fiveword(seed=0, em_iters=3000, outdir=None):
    start = time.time()
    corpus = make_scenario("five-word", seed)["train"]
    fits = _train_fiveword(corpus, em_iters)
    ep_model, ep_trace = fits["em_ep"]
    vb_model, vb_trace = fits["vb_max"]
    s = ReproSummary("fiveword", seed)
    s.notes["em_ep word_probs"] = np.round(ep_model.word_probs, 3)
    s.notes["vb_max word_probs"] = np.round(vb_model.word_probs, 3)
    lo, hi = float(ep_model.word_probs.min()), float(ep_model.word_probs.max())
    s.check("em_ep probability range", [lo, hi], "within [0.13, 0.26]", lo >= 0.13 and hi <= 0.26)
    n_small = int(np.sum(vb_model.word_probs < 0.02))
    s.check("vb_max entries below 0.02", n_small, ">= 3", n_small >= 3)
    ep_steps = ep_trace.steps_to(1e-4)
    vb_steps = vb_trace.steps_to(1e-4)
    vb_count = len(vb_trace) if vb_steps is None else vb_steps
    s.notes["M-steps to change < 1e-4"] = f"em_ep {ep_steps}, vb_max {vb_count}" + (
        " (not reached; lower bound)" if vb_steps is None else "")
    ratio = np.inf if not ep_steps else vb_count / ep_steps
    s.check("vb_max / em_ep M-step ratio", ratio, ">= 3", ep_steps is not None and ratio >= 3)
    s.seconds = time.time() - start
    s.check("runtime (s)", s.seconds, "<= 120", s.seconds <= 120)
    if outdir is not None:
        for m, (model, trace) in fits.items():
            save_model(model, Path(outdir) / f"fiveword_{m}.json", {"seed": seed, "method": m})
            _write(outdir, f"fiveword_{m}_trace.csv", trace.to_csv([f"seed {seed}", f"method {m}"]))
    _write(outdir, "fiveword_summary.txt", s.text())
    return s


def repro_perplexity5(seed=0, n_samples=1024, em_iters=3000, outdir=None):
    start = time.time()
    data = make_scenario("five-word", seed)
    fits = _train_fiveword(data["train"], em_iters)
    reports = {m: perplexity(model, data["test"], n_samples, sub_seed(seed, "perplexity", m))
               for m, (model, _) in fits.items()}
    ep, vb = reports["em_ep"], reports["vb_max"]
    s = ReproSummary("perplexity5", seed)
    s.check("em_ep perplexity", ep.perplexity, "in [4.9, 5.1]", 4.9 <= ep.perplexity <= 5.1)
    s.check("vb_max perplexity - em_ep", vb.perplexity - ep.perplexity, ">= 0",
            vb.perplexity >= ep.perplexity)
    worst = max(ep.std_err_per_token, vb.std_err_per_token)
    s.check("std err of log per token", worst, "<= 0.02", worst <= 0.02)
    s.notes["vb_max perplexity"] = vb.perplexity
    s.seconds = time.time() - start
    s.check("runtime (s)", s.seconds, "<= 120", s.seconds <= 120)
    lines = ["method,perplexity,log_likelihood_total,token_count,std_err_log,n_samples"]
    for m, r in reports.items():
        lines.append(f"{m},{r.perplexity!r},{r.log_likelihood_total!r},{r.token_count!r},"
                     f"{r.std_err_log!r},{r.n_samples}")
    _write(outdir, "perplexity5.csv", f"# experiment perplexity5 seed {seed}\n" + "\n".join(lines) + "\n")
    _write(outdir, "perplexity5_summary.txt", s.text())
    return s


# ---------------------------------------------------------------------------
# two-class classification


def twoclass_configs(em_iters=1000, tol=1e-4):
    common = dict(n_aspects=3, alpha=(1.0, 1.0, 1.0), em_iters=em_iters, tol=tol)
    return {"em_ep": LearnConfig(method="em_ep", **common),
            "vb_max": LearnConfig(method="vb_max", **common)}


def repro_twoclass(seed=0, n_seeds=5, em_iters=1000, outdir=None):
    start = time.time()
    errors = {"em_ep": [], "vb_max": []}
    n_test = 0
    lines = ["replicate,method,errors,n_test"]
    for r in range(n_seeds):
        data = make_scenario("two-class", sub_seed(seed, "twoclass", r))
        for m, cfg in twoclass_configs(em_iters).items():
            models = [train(data[f"train_{k}"], cfg)[0] for k in range(2)]
            engine = "ep" if m == "em_ep" else "vb"
            result = classify(models, data["test"], engine)
            errors[m].append(result.errors)
            n_test = int(result.confusion.sum())
            lines.append(f"{r},{m},{result.errors},{n_test}")
    ep_mean, vb_mean = float(np.mean(errors["em_ep"])), float(np.mean(errors["vb_max"]))
    s = ReproSummary("twoclass", seed)
    s.notes["em_ep errors per replicate"] = errors["em_ep"]
    s.notes["vb_max errors per replicate"] = errors["vb_max"]
    s.notes["reported"] = "76 vs 163 of 2000"
    s.check("mean errors em_ep < vb_max", [ep_mean, vb_mean], "strictly less", ep_mean < vb_mean)
    s.check("em_ep error rate", ep_mean / n_test, "<= 0.06", ep_mean / n_test <= 0.06)
    s.check("vb_max error rate", vb_mean / n_test, ">= 0.06", vb_mean / n_test >= 0.06)
    s.seconds = time.time() - start
    s.check("runtime (s)", s.seconds, "<= 300", s.seconds <= 300)
    _write(outdir, "twoclass_errors.csv", f"# experiment twoclass seed {seed}\n" + "\n".join(lines) + "\n")
    _write(outdir, "twoclass_summary.txt", s.text())
    return s


# ---------------------------------------------------------------------------
# concatenated topics


def repro_concat_topics(seed=0, n_aspects=6, em_iters=200, n_samples=1024, outdir=None):
    start = time.time()
    data = make_scenario("concat-topics", seed)
    common = dict(n_aspects=n_aspects, alpha_mode="learned", em_iters=em_iters, tol=1e-5,
                  init_seed=sub_seed(seed, "concat-topics", "init"))
    fits = {m: train(data["train"], LearnConfig(method=m, **common))[0] for m in ("em_ep", "vb_max")}
    reports = {m: perplexity(model, data["test"], n_samples, sub_seed(seed, "concat-perplexity", m))
               for m, model in fits.items()}
    spread = {m: float(model.alpha.max() / model.alpha.min()) for m, model in fits.items()}
    s = ReproSummary("concat-topics", seed)
    s.notes.update({f"{m} alpha": np.round(model.alpha, 4) for m, model in fits.items()})
    s.check("perplexity em_ep <= vb_max",
            [reports["em_ep"].perplexity, reports["vb_max"].perplexity], "em_ep not larger",
            reports["em_ep"].perplexity <= reports["vb_max"].perplexity)
    s.check("alpha spread vb_max > em_ep", [spread["vb_max"], spread["em_ep"]], "vb_max larger",
            spread["vb_max"] > spread["em_ep"])
    s.seconds = time.time() - start
    _write(outdir, "concat_topics_summary.txt", s.text())
    return s


_RUNNERS = {
    "fig1": repro_fig1,
    "fiveword": repro_fiveword,
    "perplexity5": repro_perplexity5,
    "twoclass": repro_twoclass,
    "concat-topics": repro_concat_topics,
}


def run_experiment(name, seed=0, outdir=None, **options):
    try:
        runner = _RUNNERS[name]
    except KeyError:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}") from None
    return runner(seed=seed, outdir=outdir, **options)


def write_scenario(name, seed, outdir):
    """Write a scenario's corpora as bag-of-words files; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for part, corpus in make_scenario(name, seed).items():
        paths.append(save_corpus(corpus, outdir / f"{name}_{part}.bow")[0])
    return paths
