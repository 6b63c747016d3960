"""
Classifying documents with one aspect model per class
=====================================================

Class 0 draws words uniformly, class 1 from a 1:2:3:4:5 ramp. Each class gets
its own three-aspect model and a test document goes to the model with the
higher log-likelihood.
"""

from aspect_ep.evaluate import classify
from aspect_ep.experiments import make_scenario, twoclass_configs
from aspect_ep.learn import train

data = make_scenario("two-class", seed=0)

###############################################################################
# Each learner is scored with its own inference engine.

for name, cfg in twoclass_configs().items():
    models = [train(data[f"train_{k}"], cfg)[0] for k in range(2)]
    result = classify(models, data["test"], "ep" if name == "em_ep" else "vb")
    print(f"{name}: {result.errors} errors out of {int(result.confusion.sum())}")
    print(result.confusion)
