"""Inference and learning for the generative aspect model.

Expectation-Propagation and variational (Jensen-bound) approximations to the
document likelihood, two learning schemes built on them, exact and Monte
Carlo reference likelihoods, and evaluation tools.
"""

__version__ = "0.1.0"

from .corpus import (
    Corpus,
    Document,
    Vocabulary,
    concat_topic_documents,
    load_corpus,
    sample_corpus,
    save_corpus,
)
from .ep import EpConfig, EpState, InferenceResult, ep_infer, ep_init, ep_sweep
from .evaluate import classify, likelihood_curve, perplexity, top_words
from .learn import LearnConfig, TrainTrace, train
from .model import (
    AspectModel,
    exact_log_likelihood,
    load_model,
    max_log_likelihood,
    mc_log_likelihood,
    save_model,
)
from .numerics import ConvergenceError
from .vb import VbState, vb_bound_value, vb_infer

__all__ = [
    "AspectModel",
    "ConvergenceError",
    "Corpus",
    "Document",
    "EpConfig",
    "EpState",
    "InferenceResult",
    "LearnConfig",
    "TrainTrace",
    "VbState",
    "Vocabulary",
    "classify",
    "concat_topic_documents",
    "ep_infer",
    "ep_init",
    "ep_sweep",
    "exact_log_likelihood",
    "likelihood_curve",
    "load_corpus",
    "load_model",
    "max_log_likelihood",
    "mc_log_likelihood",
    "perplexity",
    "sample_corpus",
    "save_corpus",
    "save_model",
    "top_words",
    "train",
    "vb_bound_value",
    "vb_infer",
]
