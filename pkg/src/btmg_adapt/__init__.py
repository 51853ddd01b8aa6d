"""Generalise robot policy parameters to new task variations.

A Gaussian process predicts the reward and a class-weighted SVM predicts the
feasibility of policy parameters for a task variation; a bounded multistart
L-BFGS search over the penalised prediction yields parameters for variations
never learned directly.
"""

from .core import Bounds, EvalRecord, PolicyParams, TaskVariation, TrainingData, lhs_sample

__version__ = "0.1.0"

__all__ = ["Bounds", "EvalRecord", "PolicyParams", "TaskVariation", "TrainingData", "lhs_sample",
           "__version__"]
