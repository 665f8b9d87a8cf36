"""Densities, samplers, KLs and expert-fusion rules for the two families used
by the models: diagonal Gaussians (continuous modality, latents) and
categoricals (label modality).

Two layers live here. The dataclasses are immutable value records for single
distributions, used by analysis code and tests. The ``*_rows`` functions are
the same formulas written against the autodiff ops on batched (N, D)
operands; they accept Tensors or plain arrays, so a recorded forward pass and
an evaluation-only pass produce bit-identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mmvlab import autodiff as ad

LOG_2PI = math.log(2.0 * math.pi)

# encoders and decoders clamp log-std into this range to prevent overflow
LOG_STD_MIN = -10.0
LOG_STD_MAX = 10.0


def _frozen_array(x, ndim_ok=(1, 2)) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim not in ndim_ok:
        raise ValueError(f"expected array of ndim {ndim_ok}, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ad.NonFiniteError("distribution parameters must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DiagGaussianParams:
    """Mean and log-std of a diagonal Gaussian; batched rows are allowed."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen_array(self.mean))
        object.__setattr__(self, "log_std", _frozen_array(self.log_std))
        if self.mean.shape != self.log_std.shape:
            raise ad.ShapeMismatchError(
                f"mean shape {self.mean.shape} != log_std shape {self.log_std.shape}")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


@dataclass(frozen=True)
class CategoricalParams:
    """Unnormalized logits over C >= 2 categories."""

    logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "logits", _frozen_array(self.logits))
        if self.logits.shape[-1] < 2:
            raise ValueError("categorical needs at least 2 categories")

    @property
    def n_categories(self) -> int:
        return self.logits.shape[-1]

    @property
    def probs(self) -> np.ndarray:
        z = self.logits - np.max(self.logits, axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class MoEPosterior:
    """Uniform mixture of per-modality Gaussian experts."""

    components: tuple[DiagGaussianParams, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        dim = comps[0].dim
        for c in comps:
            if c.dim != dim:
                raise ad.ShapeMismatchError("mixture components differ in dimension")
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class PoEPosterior:
    """Precision-weighted product of Gaussian experts (optionally x prior)."""

    fused: DiagGaussianParams
    expert_precision_sum: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "expert_precision_sum", _frozen_array(self.expert_precision_sum))
        fused_prec = np.exp(-2.0 * self.fused.log_std)
        if not np.allclose(fused_prec, self.expert_precision_sum,
                           rtol=1e-9, atol=1e-12):
            raise ValueError("fused precision does not equal the expert precision sum")


# ---------------------------------------------------------------------------
# batched formulas against the op layer


def _rows(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def gaussian_log_prob_rows(x, mean, log_std):
    """Per-row diagonal-Gaussian log density; result shape (N, 1)."""
    diff = ad.sub(x, mean)
    quad = ad.mul(ad.mul(diff, diff), ad.exp(ad.scale(log_std, -2.0)))
    per_elem = ad.sub(ad.scale(quad, -0.5), log_std)
    row = ad.sum(per_elem, axis=1)
    n, d = np.shape(ad._value(x))
    return ad.sub(row, np.full((n, 1), 0.5 * d * LOG_2PI))


def logsumexp_rows(x):
    """Row-wise log-sum-exp with a constant (detached) max shift."""
    xv = ad._value(x)
    m = np.max(xv, axis=1, keepdims=True)
    shifted = ad.sub(x, np.broadcast_to(m, xv.shape).copy())
    total = ad.sum(ad.exp(shifted), axis=1)
    return ad.add(ad.log(total), m)


def categorical_log_prob_rows(onehot, logits):
    """Per-row log softmax picked at the one-hot target; shape (N, 1)."""
    picked = ad.sum(ad.mul(logits, onehot), axis=1)
    return ad.sub(picked, logsumexp_rows(logits))


def std_normal_log_prob_rows(g):
    row = ad.sum(ad.scale(ad.mul(g, g), -0.5), axis=1)
    n, d = np.shape(ad._value(g))
    return ad.sub(row, np.full((n, 1), 0.5 * d * LOG_2PI))


def rsample_rows(mean, log_std, noise):
    """Reparameterized draw mean + exp(log_std) * noise; noise is constant."""
    return ad.add(mean, ad.mul(ad.exp(log_std), np.asarray(noise, dtype=np.float64)))


def kl_std_normal_rows(mean, log_std):
    """KL(N(mean, exp(log_std)^2) || N(0, I)) per row; shape (N, 1)."""
    var = ad.exp(ad.scale(log_std, 2.0))
    nv = ad._value(mean)
    inner = ad.sub(ad.sub(ad.add(ad.mul(mean, mean), var), np.ones(nv.shape)),
                   ad.scale(log_std, 2.0))
    return ad.scale(ad.sum(inner, axis=1), 0.5)


def kl_diag_rows(mean_q, log_std_q, mean_p, log_std_p):
    """KL(q || p) between diagonal Gaussians, rowwise; shape (N, 1)."""
    ratio = ad.exp(ad.scale(ad.sub(log_std_q, log_std_p), 2.0))
    diff = ad.sub(mean_p, mean_q)
    quad = ad.mul(ad.mul(diff, diff), ad.exp(ad.scale(log_std_p, -2.0)))
    shape = np.shape(ad._value(mean_q))
    inner = ad.sub(ad.add(ad.add(ratio, quad),
                          ad.scale(ad.sub(log_std_p, log_std_q), 2.0)),
                   np.ones(shape))
    return ad.scale(ad.sum(inner, axis=1), 0.5)


def poe_fuse_rows(means, log_stds, include_prior: bool):
    """Precision-weighted fusion of expert rows; returns (mean, log_std)."""
    if not means:
        raise ValueError("poe_fuse: empty expert list")
    precisions = [ad.exp(ad.scale(ls, -2.0)) for ls in log_stds]
    prec_sum = precisions[0]
    weighted = ad.mul(precisions[0], means[0])
    for p, m in zip(precisions[1:], means[1:]):
        prec_sum = ad.add(prec_sum, p)
        weighted = ad.add(weighted, ad.mul(p, m))
    if include_prior:
        # standard-normal prior expert: precision 1, mean 0
        prec_sum = ad.add(prec_sum, np.ones(np.shape(ad._value(prec_sum))))
    inv = ad.reciprocal(prec_sum)
    fused_mean = ad.mul(weighted, inv)
    fused_log_std = ad.scale(ad.log(prec_sum), -0.5)
    return fused_mean, fused_log_std


def moe_log_prob_rows(g, means, log_stds):
    """Log density of the uniform Gaussian mixture at rows g; shape (N, 1)."""
    cols = [gaussian_log_prob_rows(g, m, ls) for m, ls in zip(means, log_stds)]
    stacked = cols[0] if len(cols) == 1 else ad.concat_cols(*cols)
    return ad.sub(logsumexp_rows(stacked),
                  np.full((np.shape(ad._value(g))[0], 1), math.log(len(cols))))


# ---------------------------------------------------------------------------
# record-level operations


def gaussian_log_prob(x, p: DiagGaussianParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.dim,) or p.mean.ndim != 1:
        raise ad.ShapeMismatchError(
            f"gaussian_log_prob: x shape {x.shape} vs params dim {p.dim}")
    out = gaussian_log_prob_rows(_rows(x), _rows(p.mean), _rows(p.log_std))
    return float(out[0, 0])


def categorical_log_prob(c: int, p: CategoricalParams) -> float:
    if not 0 <= c < p.n_categories:
        raise IndexError(f"label {c} out of range for {p.n_categories} categories")
    onehot = np.zeros((1, p.n_categories))
    onehot[0, c] = 1.0
    return float(categorical_log_prob_rows(onehot, _rows(p.logits))[0, 0])


def rsample(p: DiagGaussianParams, noise) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != p.mean.shape:
        raise ad.ShapeMismatchError(
            f"rsample: noise shape {noise.shape} vs params {p.mean.shape}")
    return p.mean + np.exp(p.log_std) * noise


def kl_diag_gaussian(q: DiagGaussianParams, p: DiagGaussianParams) -> float:
    if q.dim != p.dim:
        raise ad.ShapeMismatchError(f"kl: dims {q.dim} vs {p.dim}")
    out = kl_diag_rows(_rows(q.mean), _rows(q.log_std),
                       _rows(p.mean), _rows(p.log_std))
    return float(out[0, 0])


def poe_fuse(experts, include_prior: bool = False) -> PoEPosterior:
    experts = list(experts)
    if not experts:
        raise ValueError("poe_fuse: empty expert list")
    dim = experts[0].dim
    for e in experts:
        if e.dim != dim:
            raise ad.ShapeMismatchError("poe_fuse: expert dimensions differ")
    mean, log_std = poe_fuse_rows([_rows(e.mean) for e in experts],
                                  [_rows(e.log_std) for e in experts],
                                  include_prior)
    prec_sum = sum(np.exp(-2.0 * e.log_std) for e in experts)
    if include_prior:
        prec_sum = prec_sum + 1.0
    fused = DiagGaussianParams(mean[0], log_std[0])
    return PoEPosterior(fused=fused, expert_precision_sum=prec_sum)


def moe_log_prob(g, mix: MoEPosterior) -> float:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (mix.components[0].dim,):
        raise ad.ShapeMismatchError(
            f"moe_log_prob: g shape {g.shape} vs dim {mix.components[0].dim}")
    out = moe_log_prob_rows(_rows(g),
                            [_rows(c.mean) for c in mix.components],
                            [_rows(c.log_std) for c in mix.components])
    return float(out[0, 0])
