"""
Fitting three aspects to a uniform five-word source
===================================================

The data have no aspect structure at all, so a good learner should spread
the three rows near 0.2 each. The VB/MAX learner instead pushes rows into
the corners of the simplex and needs many more M-steps to settle.
"""

import numpy as np

from aspect_ep.evaluate import perplexity
from aspect_ep.experiments import fiveword_configs, make_scenario
from aspect_ep.learn import train

data = make_scenario("five-word", seed=0)
np.set_printoptions(precision=3, suppress=True)

###############################################################################
# Train both learners from the same starting point.

fits = {name: train(data["train"], cfg) for name, cfg in fiveword_configs().items()}
for name, (model, trace) in fits.items():
    print(name)
    print(model.word_probs)
    print("M-steps to a change below 1e-4:", trace.steps_to(1e-4))

###############################################################################
# Held-out perplexity by importance sampling. A uniform five-word source has
# perplexity exactly 5.

for name, (model, _) in fits.items():
    rep = perplexity(model, data["test"], n_samples=1024, seed=1)
    print(f"{name}: {rep.perplexity:.4f} (std err of log per token {rep.std_err_per_token:.1e})")
