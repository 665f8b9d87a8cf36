"""Monte-Carlo estimators for the three training objectives.

* ``mmvae_elbo``: the stratified mixture-posterior bound. Each modality's
  encoder contributes a stratum of reparameterized samples; the mixture
  density in the denominator is evaluated over all experts. Gradients flow
  through every term (nothing is detached), which is the main fidelity risk
  called out for this estimator.
* ``surrogate_Lm``: the cross-modal reconstruction objective on a
  single-class slice, i.e. the sum over rows of the expected log-likelihood
  of modality m under the label expert's posterior. This is the quantity the
  constant-decoder bound dominates.
* ``mvae_objective``: sum of three product-posterior ELBOs (joint and one
  per single modality), each with an analytic KL to the prior and sampled
  reconstruction terms.

Determinism: with a ``SeededNoise`` source the estimators are pure functions
of (parameters, batch, K). Draw order is documented per estimator; every
stratum/subset draws exactly one ``(K * rows, latent_dim)`` block in listed
order. Monte-Carlo means over K are shifted by the per-row maximum before
averaging, so a g-independent integrand reproduces its exact per-row values
for every K and the bound's equality case closes to the last bit.

Estimators accept an optional ``params`` mapping of tape-watched Tensors;
the returned root tensor (``*_with_root`` variants) then supports
``autodiff.backward``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mmvlab import autodiff as ad
from mmvlab import distributions as dist
from mmvlab import models as md

COMBINATION_TOL = 1e-10


class SeededNoise:
    """Replayable standard-normal stream; ``reset()`` restarts it."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.reset()

    def reset(self):
        self._rng = np.random.default_rng(self.seed)

    def normal(self, shape) -> np.ndarray:
        return self._rng.standard_normal(shape)


@dataclass(frozen=True)
class ElboEstimate:
    """Objective value with its per-term breakdown.

    ``combination`` documents how the terms form the total: the total must
    equal ``sum(combination[k] * per_term[k])`` within 1e-10. The total
    itself is reduced from the combined per-row integrand (one grouping),
    the per-term entries are reduced separately (the other grouping), so the
    constructor check is a real consistency test, not a tautology.
    """

    total: float
    per_term: dict[str, float] = field(repr=False)
    combination: dict[str, float] = field(repr=False)
    mc_samples: int = 1

    def __post_init__(self):
        for name, v in self.per_term.items():
            if not np.isfinite(v):
                raise ad.NonFiniteError(f"non-finite objective term {name}")
        if not np.isfinite(self.total):
            raise ad.NonFiniteError("non-finite objective total")
        recombined = sum(self.combination[k] * self.per_term[k]
                         for k in self.combination)
        # a few ulps of headroom keeps the check meaningful when a diverging
        # run pushes totals to magnitudes where 1e-10 is below one ulp
        tol = max(COMBINATION_TOL, 8.0 * np.spacing(abs(self.total)))
        if abs(recombined - self.total) > tol:
            raise ArithmeticError(
                f"per-term recombination {recombined!r} deviates from total "
                f"{self.total!r} beyond {tol}")


@dataclass(frozen=True)
class SurrogateEstimate:
    value: float
    stderr: float
    mc_samples: int
    n_rows: int


def _batch_arrays(vae: md.MultimodalVae, batch):
    """Encoder inputs and likelihood targets per modality, plus the row count."""
    if len(batch) != vae.n_modalities:
        raise ValueError(f"batch has {len(batch)} modalities, model has "
                         f"{vae.n_modalities}")
    enc_in, targets = [], []
    rows = None
    for mod, arr in zip(vae.modalities, batch):
        if mod.family == "categorical":
            oh = md.one_hot(arr, mod.data_dim)
            enc_in.append(oh)
            targets.append(oh)
        else:
            a = np.asarray(arr, dtype=np.float64).reshape(-1, mod.data_dim)
            enc_in.append(a)
            targets.append(a)
        n = enc_in[-1].shape[0]
        if rows is None:
            rows = n
        elif rows != n:
            raise ad.ShapeMismatchError("modalities disagree on batch size")
    return enc_in, targets, rows


def _loglik_rows(vae, m, g, target_tiled, params):
    out = md.decode_rows(vae, m, g, params)
    if vae.modalities[m].family == "categorical":
        return dist.categorical_log_prob_rows(target_tiled, out)
    mean, log_std = out
    return dist.gaussian_log_prob_rows(target_tiled, mean, log_std)


def _mc_sum(rows, k: int, n: int):
    """Sum over rows of the K-sample Monte-Carlo mean (graph path).

    The mean over K is shifted by the per-row maximum (a constant), so a
    g-independent integrand reproduces its exact per-row value for any K;
    the shift cancels algebraically and leaves gradients untouched.
    """
    mat = ad.reshape(rows, (k, n))
    shift = np.max(ad._value(mat), axis=0, keepdims=True)
    centered = ad.mean(ad.sub(mat, np.broadcast_to(shift, (k, n)).copy()), axis=0)
    return ad.sum(ad.add(centered, shift))


def _mc_sum_value(rows, k: int, n: int) -> float:
    mat = ad._value(rows).reshape(k, n)
    shift = np.max(mat, axis=0, keepdims=True)
    return float(np.sum(np.mean(mat - shift, axis=0) + shift))


# ---------------------------------------------------------------------------
# mixture-posterior (stratified) objective


def mmvae_elbo_with_root(vae: md.MultimodalVae, batch, K: int, noise_source,
                         params=None):
    """Stratified mixture bound; returns (root tensor/array, ElboEstimate).

    Per stratum m the per-term entries are the prior log-density, one
    reconstruction entry per modality i (the label stratum's entries are the
    cross-modal factors the bound certifier targets), and the mixture
    log-density, each summed over the batch:

        total = (1/M) * sum_m [log_prior + sum_i recon_i - log_qmix]
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    params = vae.params if params is None else params
    enc_in, targets, n = _batch_arrays(vae, batch)
    m_count = vae.n_modalities
    post = [md.encode_rows(vae, m, enc_in[m], params) for m in range(m_count)]
    tiled = [(ad.tile_rows(mean, K), ad.tile_rows(ls, K)) for mean, ls in post]
    targets_tiled = [np.tile(t, (K, 1)) for t in targets]

    per_term, combination = {}, {}
    coef = 1.0 / m_count
    total = None
    for m in range(m_count):
        sname = f"stratum_{vae.modalities[m].name}"
        eps = noise_source.normal((K * n, vae.latent_dim))
        g = dist.rsample_rows(tiled[m][0], tiled[m][1], eps)
        lp_prior = ad.assert_finite(dist.std_normal_log_prob_rows(g),
                                    f"{sname}/log_prior")
        lq_mix = ad.assert_finite(
            dist.moe_log_prob_rows(g, [t[0] for t in tiled],
                                   [t[1] for t in tiled]),
            f"{sname}/log_qmix")
        integrand = ad.sub(lp_prior, lq_mix)
        per_term[f"{sname}/log_prior"] = _mc_sum_value(lp_prior, K, n)
        combination[f"{sname}/log_prior"] = coef
        per_term[f"{sname}/log_qmix"] = _mc_sum_value(lq_mix, K, n)
        combination[f"{sname}/log_qmix"] = -coef
        for i in range(m_count):
            rname = f"{sname}/recon_{vae.modalities[i].name}"
            recon = ad.assert_finite(
                _loglik_rows(vae, i, g, targets_tiled[i], params), rname)
            integrand = ad.add(integrand, recon)
            per_term[rname] = _mc_sum_value(recon, K, n)
            combination[rname] = coef
        stratum = _mc_sum(integrand, K, n)
        total = stratum if total is None else ad.add(total, stratum)
    root = ad.scale(total, coef)
    est = ElboEstimate(total=float(ad._value(root)), per_term=per_term,
                       combination=combination, mc_samples=K)
    return root, est


def mmvae_elbo(vae, batch, K: int, noise_source, params=None) -> ElboEstimate:
    if vae.kind != "mmvae":
        raise ValueError(f"mmvae_elbo needs an mmvae model, got {vae.kind!r}")
    return mmvae_elbo_with_root(vae, batch, K, noise_source, params)[1]


# ---------------------------------------------------------------------------
# cross-modal surrogate on a single-class slice


def surrogate_Lm_with_root(vae: md.MultimodalVae, ds_slice, m: int, K: int,
                           noise_source, params=None):
    """Sum over slice rows of E_{label posterior}[log f_m(x_m | decoded)].

    The slice must carry a single label value (the bound's setting). Draws
    are independent per (row, k): one (K * N, latent) noise block. The
    standard error comes from the per-row sample variance across the K * N
    draws; for K = 1 it falls back to the pooled cross-row variance, which
    overestimates the Monte-Carlo error (it includes data spread) and is
    therefore conservative.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    labels = np.unique(ds_slice.x2)
    if labels.size != 1:
        raise ValueError("slice mixes labels; the bound needs a single class")
    params = vae.params if params is None else params
    enc_in, targets, n = _batch_arrays(vae, [ds_slice.x1, ds_slice.x2])
    lbl = vae.label_modality
    mean, log_std = md.encode_rows(vae, lbl, enc_in[lbl], params)
    eps = noise_source.normal((K * n, vae.latent_dim))
    g = dist.rsample_rows(ad.tile_rows(mean, K), ad.tile_rows(log_std, K), eps)
    y = ad.assert_finite(
        _loglik_rows(vae, m, g, np.tile(targets[m], (K, 1)), params),
        f"surrogate_recon_{vae.modalities[m].name}")
    root = _mc_sum(y, K, n)
    draws = ad._value(y).reshape(K, n)
    if K >= 2:
        stderr = float(np.sqrt(draws.var(axis=0, ddof=1).sum() / K))
    elif n >= 2:
        stderr = float(np.sqrt(n * draws.var(ddof=1)))
    else:
        stderr = 0.0
    est = SurrogateEstimate(value=float(ad._value(root)), stderr=stderr,
                            mc_samples=K, n_rows=n)
    return root, est


def surrogate_Lm(vae, ds_slice, m: int, K: int, noise_source, params=None
                 ) -> float:
    return surrogate_Lm_with_root(vae, ds_slice, m, K, noise_source, params)[1].value


def surrogate_Lm_stats(vae, ds_slice, m: int, K: int, noise_source,
                       params=None) -> SurrogateEstimate:
    return surrogate_Lm_with_root(vae, ds_slice, m, K, noise_source, params)[1]


# ---------------------------------------------------------------------------
# product-posterior objective (three ELBOs)


def mvae_objective_with_root(vae: md.MultimodalVae, batch, K: int,
                             noise_source, params=None):
    """Joint ELBO plus one single-modality ELBO per modality.

    Each ELBO fuses its experts with the standard-normal prior, takes the
    analytic KL to the prior, and reconstructs only the conditioning
    modalities from reparameterized fused samples. Subsets draw noise in
    order: joint first, then each single modality. ``per_term`` exposes the
    sub-terms (forming the total via ``combination``) plus each ELBO's own
    total as an informational entry.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    params = vae.params if params is None else params
    enc_in, targets, n = _batch_arrays(vae, batch)
    m_count = vae.n_modalities
    post = [md.encode_rows(vae, m, enc_in[m], params) for m in range(m_count)]
    subsets = [tuple(range(m_count))] + [(m,) for m in range(m_count)]

    per_term, combination = {}, {}
    total = None
    for sel in subsets:
        name = "joint" if len(sel) > 1 else vae.modalities[sel[0]].name
        fmean, fls = dist.poe_fuse_rows([post[m][0] for m in sel],
                                        [post[m][1] for m in sel],
                                        include_prior=True)
        kl = ad.assert_finite(dist.kl_std_normal_rows(fmean, fls),
                              f"elbo_{name}/kl")
        per_term[f"elbo_{name}/kl"] = float(np.sum(ad._value(kl)))
        combination[f"elbo_{name}/kl"] = -1.0
        eps = noise_source.normal((K * n, vae.latent_dim))
        g = dist.rsample_rows(ad.tile_rows(fmean, K), ad.tile_rows(fls, K), eps)
        elbo = ad.scale(ad.sum(kl), -1.0)
        for m in sel:
            rname = f"elbo_{name}/recon_{vae.modalities[m].name}"
            recon = ad.assert_finite(
                _loglik_rows(vae, m, g, np.tile(targets[m], (K, 1)), params),
                rname)
            elbo = ad.add(elbo, _mc_sum(recon, K, n))
            per_term[rname] = _mc_sum_value(recon, K, n)
            combination[rname] = 1.0
        per_term[f"elbo_{name}"] = float(ad._value(elbo))
        total = elbo if total is None else ad.add(total, elbo)
    est = ElboEstimate(total=float(ad._value(total)), per_term=per_term,
                       combination=combination, mc_samples=K)
    return total, est


def mvae_objective(vae, batch, K: int, noise_source, params=None) -> ElboEstimate:
    if vae.kind != "mvae":
        raise ValueError(f"mvae_objective needs an mvae model, got {vae.kind!r}")
    return mvae_objective_with_root(vae, batch, K, noise_source, params)[1]


def objective_with_root(vae, batch, K: int, noise_source, params=None):
    """Dispatch on the model kind; used by the training loop."""
    if vae.kind == "mmvae":
        return mmvae_elbo_with_root(vae, batch, K, noise_source, params)
    return mvae_objective_with_root(vae, batch, K, noise_source, params)
