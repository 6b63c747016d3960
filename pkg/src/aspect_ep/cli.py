"""Command-line interface.

Subcommands: ``synth``, ``train``, ``infer``, ``eval {perplexity, classify,
curve, top-words}`` and ``repro``. Settings come from defaults, then an
optional ``--config`` file of ``key = value`` lines, then the command line.
The resolved settings and the seed are echoed into every output file.
``ASPECT_EP_OUTPUT_DIR`` overrides the default output directory.
"""

import argparse
import configparser
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import load_corpus, sample_corpus, save_corpus
from .ep import EpConfig, ep_infer_batch
from .evaluate import (
    CURVE_METHODS,
    classify,
    format_table,
    likelihood_curve,
    perplexity,
    top_words,
    word_prob_family,
)
from .experiments import EXPERIMENTS, SCENARIOS, make_scenario, run_experiment
from .learn import METHODS, LearnConfig, train
from .model import (
    exact_log_likelihood_batch,
    load_model,
    max_log_likelihood_batch,
    mc_log_likelihood,
    save_model,
)
from .numerics import ConvergenceError
from .vb import vb_infer_batch

OUTPUT_ENV = "ASPECT_EP_OUTPUT_DIR"

# per-command defaults; every key can also be set in a --config file
DEFAULTS = {
    "synth": dict(scenario=None, model=None, n_docs=10, doc_length=10, seed=0, out=None),
    "train": dict(corpus=None, vocab=None, format="bow", method="em_ep", aspects=2, iters=100,
                  alpha_mode="fixed", alpha=None, param_floor=1e-10, seed=0, init_noise=0.5,
                  tol=None, ep_max_sweeps=1000, ep_tol=1e-6, ep_stepsize="safe",
                  vb_tol=1e-10, vb_max_iters=1000, threads=1, out=None, name="model"),
    "infer": dict(model=None, corpus=None, vocab=None, format="bow", method="ep",
                  ep_max_sweeps=1000, ep_tol=1e-6, ep_stepsize="safe", vb_tol=1e-10,
                  vb_max_iters=1000, samples=100000, seed=0, out=None, name="infer"),
    "perplexity": dict(model=None, corpus=None, vocab=None, format="bow", samples=1024, seed=0,
                       proposal="ep_posterior", output_format="csv", out=None, name="perplexity"),
    "classify": dict(models=None, corpus=None, vocab=None, format="bow", method="ep",
                     output_format="csv", seed=0, out=None, name="classify"),
    "curve": dict(model=None, corpus=None, vocab=None, format="bow", aspect=0, word=0,
                  grid_points=101, grid_min=0.0, grid_max=1.0, methods="exact,max,vb,ep",
                  seed=0, out=None, name="curve"),
    "top-words": dict(model=None, corpus=None, vocab=None, format="bow", per_aspect=10,
                      threshold=None, output_format="text", seed=0, out=None, name="top_words"),
    "repro": dict(experiment=None, seed=0, out=None),
}

_FLOATS = {"param_floor", "init_noise", "tol", "ep_tol", "vb_tol", "grid_min", "grid_max", "threshold"}
_INTS = {"n_docs", "doc_length", "aspects", "iters", "seed", "ep_max_sweeps", "vb_max_iters",
         "threads", "samples", "aspect", "word", "grid_points", "per_aspect"}


class UsageError(Exception):
    pass


def _read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    text = Path(path).read_text()
    parser.read_string("[run]\n" + text)
    return {k.replace("-", "_"): v for k, v in parser["run"].items()}


def _coerce(key, value):
    if value is None or not isinstance(value, str):
        return value
    if value.lower() in ("none", ""):
        return None
    try:
        if key in _INTS:
            return int(value)
        if key in _FLOATS:
            return float(value)
    except ValueError:
        raise UsageError(f"setting {key!r} expects a number, got {value!r}") from None
    return value


def resolve(command, args):
    """Merge defaults, config file and command-line values (in that order)."""
    settings = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        for k, v in _read_config(args.config).items():
            if k not in settings:
                raise UsageError(f"unknown setting {k!r} for {command}")
            settings[k] = v
    for k in settings:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    settings = {k: _coerce(k, v) for k, v in settings.items()}
    if settings.get("out") is None:
        settings["out"] = str(Path(_env_outdir()))
    return settings


def _env_outdir():
    return os.environ.get(OUTPUT_ENV, ".")


def _echo(command, settings):
    lines = [f"aspect-ep {__version__} {command}", f"seed {settings.get('seed')}"]
    lines += [f"{k} = {v}" for k, v in sorted(settings.items())]
    return lines


def _comment_block(lines):
    return "".join(f"# {line}\n" for line in lines)


def _outdir(settings):
    path = Path(settings["out"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(settings, *keys):
    for k in keys:
        if settings.get(k) is None:
            raise UsageError(f"missing required setting {k!r}")
    for k in ("corpus", "model", "vocab"):
        if k in keys and settings.get(k) and not Path(settings[k]).exists():
            raise UsageError(f"{k} file {settings[k]!r} does not exist")


def _load(settings):
    return load_corpus(settings["corpus"], settings["format"], settings.get("vocab"))


def _ep_config(settings):
    step = settings["ep_stepsize"]
    step = step if step == "safe" else float(step)
    return EpConfig(max_sweeps=settings["ep_max_sweeps"], tol=settings["ep_tol"], stepsize=step)


def _parse_floats(text):
    return tuple(float(x) for x in str(text).split(","))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(settings):
    out = _outdir(settings)
    header = _comment_block(_echo("synth", settings))
    if settings["scenario"]:
        parts = make_scenario(settings["scenario"], settings["seed"])
        name = settings["scenario"]
    elif settings["model"]:
        _require(settings, "model")
        model = load_model(settings["model"])
        parts = {"train": sample_corpus(model, settings["n_docs"], settings["doc_length"],
                                        settings["seed"])}
        name = Path(settings["model"]).stem
    else:
        raise UsageError(f"synth needs --scenario ({', '.join(SCENARIOS)}) or --model")
    written = []
    for part, corpus in parts.items():
        path, _ = save_corpus(corpus, out / f"{name}_{part}.bow")
        path.write_text(header + path.read_text())
        written.append(path)
    return written


def cmd_train(settings):
    _require(settings, "corpus")
    corpus = _load(settings)
    alpha = None if settings["alpha"] is None else _parse_floats(settings["alpha"])
    config = LearnConfig(
        method=settings["method"], n_aspects=settings["aspects"], em_iters=settings["iters"],
        alpha_mode=settings["alpha_mode"], alpha=alpha, init_seed=settings["seed"],
        init_noise=settings["init_noise"], param_floor=settings["param_floor"], tol=settings["tol"],
        ep=_ep_config(settings), vb_tol=settings["vb_tol"], vb_max_iters=settings["vb_max_iters"],
        threads=settings["threads"])
    model, trace = train(corpus, config)
    out = _outdir(settings)
    echo = _echo("train", settings)
    model_path = out / f"{settings['name']}.json"
    save_model(model, model_path, {"seed": settings["seed"], "config": echo})
    trace_path = out / f"{settings['name']}_trace.csv"
    trace_path.write_text(trace.to_csv(echo))
    return [model_path, trace_path]


def cmd_infer(settings):
    _require(settings, "model", "corpus")
    model = load_model(settings["model"])
    corpus = _load(settings)
    counts = corpus.count_matrix()
    method = settings["method"]
    A = model.n_aspects
    gamma = np.full((counts.shape[0], A), np.nan)
    converged = np.ones(counts.shape[0], dtype=bool)
    extra = np.zeros(counts.shape[0])
    if method == "ep":
        res = ep_infer_batch(model, counts, _ep_config(settings))
        values, gamma, converged, extra = res.log_likelihood, res.gamma, res.converged, res.iterations
    elif method == "vb":
        res = vb_infer_batch(model, counts, settings["vb_tol"], settings["vb_max_iters"])
        values, gamma, converged, extra = res.log_likelihood, res.gamma, res.converged, res.iterations
    elif method == "exact":
        values = exact_log_likelihood_batch(model.alpha, model.word_probs, counts)
    elif method == "max":
        values, gamma = max_log_likelihood_batch(model.alpha, model.word_probs, counts)
    elif method == "mc":
        pairs = [mc_log_likelihood(model, d, settings["samples"], settings["seed"] + i)
                 for i, d in enumerate(corpus.documents)]
        values = np.array([p[0] for p in pairs])
        extra = np.array([p[1] for p in pairs])
    else:
        raise UsageError(f"unknown inference method {method!r}; choose ep, vb, exact, max or mc")
    extra_name = {"ep": "sweeps", "vb": "iterations", "mc": "std_err"}.get(method, "unused")
    buf = io.StringIO()
    buf.write(_comment_block(_echo("infer", settings)))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["doc_id", "log_likelihood", "converged", extra_name]
                    + [f"posterior_{a}" for a in range(A)])
    for i, doc_id in enumerate(corpus.doc_ids):
        writer.writerow([doc_id, repr(float(values[i])), int(converged[i]), extra[i].item()]
                        + [repr(float(g)) for g in gamma[i]])
    path = _outdir(settings) / f"{settings['name']}.csv"
    path.write_text(buf.getvalue())
    return [path]


def cmd_perplexity(settings):
    _require(settings, "model", "corpus")
    model = load_model(settings["model"])
    report = perplexity(model, _load(settings), settings["samples"], settings["seed"],
                        settings["proposal"])
    return [_report(settings, "perplexity", ["quantity", "value"], report.rows())]


def cmd_classify(settings):
    _require(settings, "models", "corpus")
    paths = [p for p in str(settings["models"]).split(",") if p]
    for p in paths:
        if not Path(p).exists():
            raise UsageError(f"model file {p!r} does not exist")
    models = [load_model(p) for p in paths]
    methods = str(settings["method"]).split(",")
    result = classify(models, _load(settings), methods[0] if len(methods) == 1 else methods)
    K = len(models)
    rows = [[f"true_{k}"] + result.confusion[k].tolist() for k in range(K)]
    rows.append(["errors", result.errors] + [""] * (K - 1))
    rows.append(["error_rate", result.error_rate] + [""] * (K - 1))
    return [_report(settings, "classify", ["class"] + [f"pred_{k}" for k in range(K)], rows)]


def cmd_curve(settings):
    _require(settings, "model", "corpus")
    model = load_model(settings["model"])
    methods = [m for m in settings["methods"].split(",") if m]
    bad = set(methods) - set(CURVE_METHODS)
    if bad:
        raise UsageError(f"unknown curve methods {sorted(bad)}; choose from {', '.join(CURVE_METHODS)}")
    grid = np.linspace(settings["grid_min"], settings["grid_max"], settings["grid_points"])
    table = likelihood_curve(_load(settings), word_prob_family(model, settings["aspect"], settings["word"]),
                             grid, methods)
    path = _outdir(settings) / f"{settings['name']}.csv"
    path.write_text(table.to_csv(_echo("curve", settings)))
    return [path]


def cmd_top_words(settings):
    _require(settings, "model", "corpus")
    model = load_model(settings["model"])
    corpus = _load(settings)
    report = top_words(model, corpus.vocabulary, settings["per_aspect"], settings["threshold"],
                       corpus.unigram())
    rows = [[a, rank, word, prob] for a, words in enumerate(report)
            for rank, (word, prob) in enumerate(words, start=1)]
    return [_report(settings, "top-words", ["aspect", "rank", "word", "prob"], rows)]


def _report(settings, command, header, rows):
    fmt = settings["output_format"]
    echo = _comment_block(_echo(command, settings))
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[repr(c) if isinstance(c, float) else c for c in r] for r in rows])
        body, suffix = buf.getvalue(), "csv"
    elif fmt == "text":
        body, suffix = format_table(header, rows), "txt"
    else:
        raise UsageError(f"unknown output format {fmt!r}; choose csv or text")
    path = _outdir(settings) / f"{settings['name']}.{suffix}"
    path.write_text(echo + body)
    return path


def cmd_repro(settings):
    _require(settings, "experiment")
    out = _outdir(settings) / settings["experiment"]
    out.mkdir(parents=True, exist_ok=True)
    summary = run_experiment(settings["experiment"], settings["seed"], outdir=out)
    path = out / "summary.txt"
    path.write_text(_comment_block(_echo("repro", settings)) + summary.text())
    sys.stdout.write(summary.text())
    return [path]


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, *keys):
    p.add_argument("--config", help="file of key = value settings")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("--seed", type=int)
    if "corpus" in keys:
        p.add_argument("--corpus", help="corpus file")
        p.add_argument("--vocab", help="vocabulary file (default: corpus stem + .vocab)")
        p.add_argument("--format", choices=("bow", "text"))
    if "name" in keys:
        p.add_argument("--name", help="base name of the output file")
    if "output_format" in keys:
        p.add_argument("--output-format", choices=("csv", "text"))


def _inference_options(p):
    p.add_argument("--ep-max-sweeps", type=int)
    p.add_argument("--ep-tol", type=float)
    p.add_argument("--ep-stepsize", help="'safe' or a fixed value in (0, 1]")
    p.add_argument("--vb-tol", type=float)
    p.add_argument("--vb-max-iters", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="aspect-ep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    _common(p)
    p.add_argument("--scenario", help=f"built-in scenario: {', '.join(SCENARIOS)}")
    p.add_argument("--model", help="model file to sample from instead of a scenario")
    p.add_argument("--n-docs", type=int)
    p.add_argument("--doc-length", type=int)

    p = sub.add_parser("train", help="fit an aspect model")
    _common(p, "corpus", "name")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--aspects", type=int)
    p.add_argument("--iters", type=int, help="maximum number of M-steps")
    p.add_argument("--alpha-mode", choices=("fixed", "learned"))
    p.add_argument("--alpha", help="comma-separated Dirichlet parameters")
    p.add_argument("--param-floor", type=float)
    p.add_argument("--init-noise", type=float)
    p.add_argument("--tol", type=float, help="stop when the parameter change falls below")
    p.add_argument("--threads", type=int)
    _inference_options(p)

    p = sub.add_parser("infer", help="per-document log-likelihoods")
    _common(p, "corpus", "name")
    p.add_argument("--model")
    p.add_argument("--method", choices=("ep", "vb", "exact", "max", "mc"))
    p.add_argument("--samples", type=int, help="Monte Carlo samples")
    _inference_options(p)

    p = sub.add_parser("eval", help="evaluation reports")
    ev = p.add_subparsers(dest="report", required=True)
    q = ev.add_parser("perplexity")
    _common(q, "corpus", "name", "output_format")
    q.add_argument("--model")
    q.add_argument("--samples", type=int)
    q.add_argument("--proposal", choices=("ep_posterior", "prior"))
    q = ev.add_parser("classify")
    _common(q, "corpus", "name", "output_format")
    q.add_argument("--models", help="comma-separated model files, one per class")
    q.add_argument("--method", help="ep, vb, or one engine per model")
    q = ev.add_parser("curve")
    _common(q, "corpus", "name")
    q.add_argument("--model", help="base model of the one-parameter family")
    q.add_argument("--aspect", type=int)
    q.add_argument("--word", type=int)
    q.add_argument("--grid-points", type=int)
    q.add_argument("--grid-min", type=float)
    q.add_argument("--grid-max", type=float)
    q.add_argument("--methods", help=f"comma-separated subset of {','.join(CURVE_METHODS)}")
    q = ev.add_parser("top-words")
    _common(q, "corpus", "name", "output_format")
    q.add_argument("--model")
    q.add_argument("--per-aspect", type=int)
    q.add_argument("--threshold", type=float, help="drop words with unigram probability above")

    p = sub.add_parser("repro", help="reproduce an experiment end to end")
    _common(p)
    p.add_argument("experiment", choices=EXPERIMENTS)
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "perplexity": cmd_perplexity,
    "classify": cmd_classify,
    "curve": cmd_curve,
    "top-words": cmd_top_words,
    "repro": cmd_repro,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    command = args.report if args.command == "eval" else args.command
    start = time.time()
    try:
        settings = resolve(command, args)
        written = _COMMANDS[command](settings)
    except (UsageError, ValueError, OSError, ConvergenceError, json.JSONDecodeError) as err:
        print(f"aspect-ep: error: {err}", file=sys.stderr)
        return 2
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    print(f"done in {time.time() - start:.1f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
