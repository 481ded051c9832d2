"""Compositional zero-shot recognition at desk scale.

Independent state and object classifiers are fused with cross-branch
feasibility attention and adversarially disentangled classifiers, trained
with an alternating min-max loop and evaluated with a bias-calibrated
open-world protocol.
"""

__version__ = "0.1.0"
