"""Closed-form sanity checks for the distribution toolbox: log densities,
KL divergences, expert fusion and the uniform mixture.
"""

import numpy as np

from mmvlab import distributions as dist
from mmvlab.distributions import CategoricalParams, DiagGaussianParams, MoEPosterior

std_normal = DiagGaussianParams([0.0], [0.0])
print("log N(0 | 0, 1)          =", dist.gaussian_log_prob(np.zeros(1), std_normal))
print("log softmax([0,0])[0]    =", dist.categorical_log_prob(0, CategoricalParams([0.0, 0.0])))
print("KL(N(1,1) || N(0,1))     =", dist.kl_diag_gaussian(DiagGaussianParams([1.0], [0.0]), std_normal))

# precision-weighted product of two unit-variance experts at 0 and 2
fused = dist.poe_fuse([DiagGaussianParams([0.0], [0.0]),
                       DiagGaussianParams([2.0], [0.0])])
print("poe fuse mean, variance  =", fused.fused.mean[0], fused.fused.std[0] ** 2)

with_prior = dist.poe_fuse([DiagGaussianParams([0.0], [0.0]),
                            DiagGaussianParams([2.0], [0.0])],
                           include_prior=True)
print("with prior: mean, var    =", with_prior.fused.mean[0],
      with_prior.fused.std[0] ** 2)

mix = MoEPosterior((DiagGaussianParams([0.0], [0.0]),
                    DiagGaussianParams([2.0], [0.0])))
print("mixture log density at 1 =", dist.moe_log_prob(np.array([1.0]), mix))

# reparameterized sampling: deterministic transport of fixed noise
p = DiagGaussianParams([3.0, -1.0], [np.log(0.5), np.log(2.0)])
noise = np.array([1.0, -1.0])
print("rsample(p, noise)        =", dist.rsample(p, noise))
print("rsample(p, zeros)        =", dist.rsample(p, np.zeros(2)), "(the mean)")
