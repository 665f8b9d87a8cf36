"""Desk-scale lab for two-modality VAEs with mixture and product posteriors.

The package trains both model families on a reproducible synthetic dataset
(2-D points paired with binary labels) and numerically certifies the
maximum-likelihood upper bound that explains why mixture-posterior models
collapse cross-modal samples onto the class mean.
"""

from mmvlab import autodiff, datagen, distributions, models, objectives
from mmvlab import bounds, training

__all__ = [
    "autodiff",
    "bounds",
    "datagen",
    "distributions",
    "models",
    "objectives",
    "training",
]
