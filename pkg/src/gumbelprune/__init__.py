"""Learnable unstructured pruning via Gumbel-sigmoid mask relaxation."""

from . import analysis, autodiff, baselines, masks, model, objective, serialize, trainer

__all__ = ["analysis", "autodiff", "baselines", "masks", "model",
           "objective", "serialize", "trainer"]
__version__ = "0.1.0"
