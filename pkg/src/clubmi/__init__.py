"""Mutual-information estimation and minimization with contrastive log-ratio bounds."""
from .batch import Batch
from .distributions import (
    CorrelatedGaussianSource,
    DiagGaussianCond,
    KnownConditional,
    LinearGaussianChannel,
    channel_true_mi,
    rho_for_mi,
)
from .estimators import ESTIMATORS, Critic, Estimate
from .kernels import BACKEND

__version__ = "0.1.0"
