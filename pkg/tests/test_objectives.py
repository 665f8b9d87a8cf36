import numpy as np
import pytest
from scipy import stats

from mmvlab import autodiff as ad
from mmvlab import datagen as dg
from mmvlab import models as md
from mmvlab import objectives as obj
from mmvlab.distributions import LOG_2PI, DiagGaussianParams


def tiny_ds(n=8, seed=0):
    return dg.generate(dg.DataGenConfig(n_per_class=n // 2, seed=seed))


def tiny_vae(kind="mmvae", seed=0, **kw):
    cfg = dict(kind=kind, encoder_hidden_dims=(8,), decoder_hidden_dims=(8,),
               seed=seed)
    cfg.update(kw)
    return md.init(md.ModelConfig(**cfg))


# ---------------------------------------------------------------------------
# determinism and bookkeeping


def test_estimators_deterministic_under_seeded_noise():
    ds = tiny_ds()
    batch = [ds.x1, ds.x2]
    vae = tiny_vae()
    a = obj.mmvae_elbo(vae, batch, 4, obj.SeededNoise(3))
    b = obj.mmvae_elbo(vae, batch, 4, obj.SeededNoise(3))
    assert a.total == b.total and a.per_term == b.per_term
    mv = tiny_vae("mvae")
    c = obj.mvae_objective(mv, batch, 4, obj.SeededNoise(3))
    d = obj.mvae_objective(mv, batch, 4, obj.SeededNoise(3))
    assert c.total == d.total


def test_per_term_combination_identity():
    """Totals reduced from combined rows match the per-term recombination."""
    ds = tiny_ds(64)
    batch = [ds.x1, ds.x2]
    for est in (obj.mmvae_elbo(tiny_vae(), batch, 8, obj.SeededNoise(1)),
                obj.mvae_objective(tiny_vae("mvae"), batch, 8, obj.SeededNoise(1))):
        recombined = sum(est.combination[k] * est.per_term[k]
                         for k in est.combination)
        assert abs(recombined - est.total) <= 1e-10


def test_mmvae_exposes_label_stratum_reconstruction_terms():
    ds = tiny_ds()
    est = obj.mmvae_elbo(tiny_vae(), [ds.x1, ds.x2], 2, obj.SeededNoise(0))
    assert "stratum_x2/recon_x1" in est.per_term
    assert "stratum_x2/recon_x2" in est.per_term


def test_mvae_exposes_three_elbos_and_subterms():
    ds = tiny_ds()
    est = obj.mvae_objective(tiny_vae("mvae"), [ds.x1, ds.x2], 2,
                             obj.SeededNoise(0))
    for key in ("elbo_joint", "elbo_x1", "elbo_x2", "elbo_joint/kl",
                "elbo_joint/recon_x1", "elbo_joint/recon_x2",
                "elbo_x1/recon_x1", "elbo_x2/recon_x2"):
        assert key in est.per_term
    assert est.per_term["elbo_joint"] + est.per_term["elbo_x1"] + \
        est.per_term["elbo_x2"] == pytest.approx(est.total, abs=1e-10)


def test_kind_mismatch_rejected():
    ds = tiny_ds()
    with pytest.raises(ValueError):
        obj.mmvae_elbo(tiny_vae("mvae"), [ds.x1, ds.x2], 2, obj.SeededNoise(0))
    with pytest.raises(ValueError):
        obj.mvae_objective(tiny_vae("mmvae"), [ds.x1, ds.x2], 2,
                           obj.SeededNoise(0))


# ---------------------------------------------------------------------------
# single-modality degenerate assembly: the stratified bound collapses to the
# standard ELBO, reproduced here as an independent numpy oracle


def single_modality_vae(seed=0):
    return md.build_vae("mmvae", [md.Modality("x1", "gaussian", 2)],
                        latent_dim=2, encoder_hidden_dims=(8,),
                        decoder_hidden_dims=(8,), seed=seed,
                        isotropic_latent=False, isotropic_likelihood=False)


def standard_elbo_oracle(vae, x, K, noise):
    """Plain single-modality VAE ELBO, written directly in numpy."""
    mean, ls = md.encode_rows(vae, 0, x)
    mean_t, ls_t = np.tile(mean, (K, 1)), np.tile(ls, (K, 1))
    eps = noise.normal((K * x.shape[0], 2))
    g = mean_t + np.exp(ls_t) * eps
    lp_g = np.sum(-0.5 * g * g - 0.5 * LOG_2PI, axis=1, keepdims=True)
    dmean, dls = md.decode_rows(vae, 0, g)
    diff = np.tile(x, (K, 1)) - dmean
    lp_x = np.sum(-0.5 * diff**2 * np.exp(-2 * dls) - dls - 0.5 * LOG_2PI,
                  axis=1, keepdims=True)
    lq = np.sum(-0.5 * eps * eps - 0.5 * LOG_2PI - ls_t, axis=1, keepdims=True)
    rows = lp_g + lp_x - lq
    return float(np.sum(np.mean(rows.reshape(K, x.shape[0]), axis=0)))


def test_m1_degenerate_assembly_equals_standard_elbo():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 2))
    vae = single_modality_vae()
    for K in (1, 4):
        est = obj.mmvae_elbo_with_root(vae, [x], K, obj.SeededNoise(11))[1]
        oracle = standard_elbo_oracle(vae, x, K, obj.SeededNoise(11))
        assert est.total == pytest.approx(oracle, abs=1e-12)


# ---------------------------------------------------------------------------
# Monte-Carlo behaviour


def test_standard_error_shrinks_with_k():
    """Estimate spread over repetitions scales roughly as 1/sqrt(K)."""
    ds = tiny_ds(16)
    vae = tiny_vae()
    batch = [ds.x1, ds.x2]

    def spread(K):
        vals = [obj.mmvae_elbo(vae, batch, K, obj.SeededNoise(1000 + r)).total
                for r in range(50)]
        return np.std(vals, ddof=1)

    s1, s16 = spread(1), spread(16)
    ratio = s1 / s16
    assert 2.0 < ratio < 8.0  # ideal ratio 4, allow sampling slack


def test_surrogate_k1_vs_k64_within_mc_error():
    ds = tiny_ds(32)
    sl = dg.subset(ds, ds.class_index_sets[0])
    vae = tiny_vae()
    s1 = obj.surrogate_Lm_stats(vae, sl, 0, 1, obj.SeededNoise(2))
    s64 = obj.surrogate_Lm_stats(vae, sl, 0, 64, obj.SeededNoise(3))
    tol = 3 * (s1.stderr + s64.stderr)
    assert abs(s1.value - s64.value) <= tol


# ---------------------------------------------------------------------------
# surrogate on a single-class slice


def test_surrogate_rejects_mixed_labels():
    ds = tiny_ds()
    with pytest.raises(ValueError):
        obj.surrogate_Lm(tiny_vae(), ds, 0, 2, obj.SeededNoise(0))


def test_surrogate_constant_decoder_is_exact_any_encoder():
    ds = tiny_ds(24, seed=3)
    sl = dg.subset(ds, ds.class_index_sets[1])
    mle = dg.class_mle(ds, 1, "gaussian_diag")
    expected = float(np.sum([
        -0.5 * (x - mle.params.mean) ** 2 * np.exp(-2 * mle.params.log_std)
        - mle.params.log_std - 0.5 * LOG_2PI
        for x in sl.x1]))
    for enc_seed in (0, 1, 2):
        vae = md.set_constant_decoder(
            tiny_vae(seed=enc_seed, isotropic_likelihood=False), 0, mle.params)
        for K in (1, 8):
            got = obj.surrogate_Lm(vae, sl, 0, K, obj.SeededNoise(enc_seed))
            assert got == pytest.approx(expected, rel=1e-12)


def test_surrogate_label_modality_constant_decoder():
    ds = tiny_ds(16, seed=9)
    sl = dg.subset(ds, ds.class_index_sets[0])
    sol = dg.class_mle(ds, 0, "categorical")
    vae = md.set_constant_decoder(tiny_vae(seed=4), 1, sol.params)
    got = obj.surrogate_Lm(vae, sl, 1, 4, obj.SeededNoise(1))
    assert got == pytest.approx(sol.loglik, rel=1e-9)


# ---------------------------------------------------------------------------
# exact-marginal oracle on a linear-Gaussian toy assembly


def linear_gaussian_assembly(a1, c1, s1, a2, c2, s2, seed=0):
    """Affine decoders with fixed log-stds; both modalities Gaussian."""
    vae = md.build_vae(
        "mmvae", [md.Modality("x1", "gaussian", 2), md.Modality("x2", "gaussian", 2)],
        latent_dim=2, encoder_hidden_dims=(), decoder_hidden_dims=(),
        isotropic_latent=False, isotropic_likelihood=False, seed=seed)
    for m, (a, c, s) in enumerate([(a1, c1, s1), (a2, c2, s2)]):
        vae.params[f"dec{m}.mean.w"] = a.copy()
        vae.params[f"dec{m}.mean.b"] = c.copy()
        vae.params[f"dec{m}.logstd.w"] = np.zeros((2, 2))
        vae.params[f"dec{m}.logstd.b"] = np.log(s).astype(float)
    return vae


def exact_joint_marginal(a1, c1, s1, a2, c2, s2, x1, x2):
    """Closed-form log p(x1, x2) for the linear-Gaussian generative model."""
    A = np.vstack([a1.T, a2.T])              # maps g -> stacked means
    mean = np.concatenate([c1, c2])
    cov = A @ A.T + np.diag(np.concatenate([s1**2, s2**2]))
    return float(stats.multivariate_normal(mean, cov).logpdf(
        np.concatenate([x1, x2])))


def test_mmvae_estimate_below_exact_marginal():
    rng = np.random.default_rng(8)
    a1, a2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    c1, c2 = rng.normal(size=2), rng.normal(size=2)
    s1, s2 = np.array([0.8, 1.3]), np.array([1.1, 0.6])
    vae = linear_gaussian_assembly(a1, c1, s1, a2, c2, s2)
    x1, x2 = rng.normal(size=2), rng.normal(size=2)
    exact = exact_joint_marginal(a1, c1, s1, a2, c2, s2, x1, x2)
    vals = [obj.mmvae_elbo(vae, [x1.reshape(1, 2), x2.reshape(1, 2)], 16,
                           obj.SeededNoise(100 + r)).total for r in range(30)]
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert np.mean(vals) <= exact + 3 * se


def test_mvae_each_elbo_below_its_exact_marginal():
    rng = np.random.default_rng(21)
    a1, a2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    c1, c2 = rng.normal(size=2), rng.normal(size=2)
    s1, s2 = np.array([0.9, 1.2]), np.array([0.7, 1.4])
    vae = linear_gaussian_assembly(a1, c1, s1, a2, c2, s2)
    vae.kind = "mvae"
    x1, x2 = rng.normal(size=2), rng.normal(size=2)
    exact_joint = exact_joint_marginal(a1, c1, s1, a2, c2, s2, x1, x2)

    def exact_single(a, c, s, x):
        cov = a.T @ a + np.diag(s**2)
        return float(stats.multivariate_normal(c, cov).logpdf(x))

    exact = {"elbo_joint": exact_joint,
             "elbo_x1": exact_single(a1, c1, s1, x1),
             "elbo_x2": exact_single(a2, c2, s2, x2)}
    samples = {k: [] for k in exact}
    for r in range(30):
        est = obj.mvae_objective(vae, [x1.reshape(1, 2), x2.reshape(1, 2)], 16,
                                 obj.SeededNoise(200 + r))
        for k in exact:
            samples[k].append(est.per_term[k])
    for k, bound in exact.items():
        vals = np.asarray(samples[k])
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert vals.mean() <= bound + 3 * se, k


def test_mvae_single_modality_elbo_uses_only_its_expert():
    """elbo_x2 must not move when the x1 encoder changes."""
    ds = tiny_ds()
    batch = [ds.x1, ds.x2]
    v1 = tiny_vae("mvae", seed=0)
    v2 = tiny_vae("mvae", seed=0)
    for k in v2.params:
        if k.startswith("enc0."):
            v2.params[k] = v2.params[k] + 0.3
    e1 = obj.mvae_objective(v1, batch, 4, obj.SeededNoise(5))
    e2 = obj.mvae_objective(v2, batch, 4, obj.SeededNoise(5))
    assert e1.per_term["elbo_x2"] == e2.per_term["elbo_x2"]
    assert e1.per_term["elbo_joint"] != e2.per_term["elbo_joint"]


def test_mvae_near_prior_encoder_kl_vanishes():
    """Experts made nearly uninformative leave the fused posterior at the
    prior, so the KL terms go to zero (the broad-expert limit)."""
    vae = tiny_vae("mvae", seed=0)
    for m in (0, 1):
        for head in ("mean", "logstd"):
            vae.params[f"enc{m}.{head}.w"] = np.zeros_like(
                vae.params[f"enc{m}.{head}.w"])
        vae.params[f"enc{m}.mean.b"] = np.zeros_like(vae.params[f"enc{m}.mean.b"])
        vae.params[f"enc{m}.logstd.b"] = np.full_like(
            vae.params[f"enc{m}.logstd.b"], 9.0)  # std e^9: negligible precision
    ds = tiny_ds()
    est = obj.mvae_objective(vae, [ds.x1, ds.x2], 4, obj.SeededNoise(6))
    for k in ("elbo_joint/kl", "elbo_x1/kl", "elbo_x2/kl"):
        assert abs(est.per_term[k]) < 1e-4


# ---------------------------------------------------------------------------
# gradients of every estimator vs finite differences


GRAD_CASES = ["mmvae", "mvae", "surrogate"]


@pytest.mark.parametrize("which", GRAD_CASES)
def test_estimator_gradients_match_finite_differences(which):
    ds = tiny_ds(4, seed=6)
    sl = dg.subset(ds, ds.class_index_sets[0])
    kind = "mvae" if which == "mvae" else "mmvae"
    vae = tiny_vae(kind, seed=1)

    def build(params):
        noise = obj.SeededNoise(9)
        if which == "mmvae":
            return obj.mmvae_elbo_with_root(vae, [ds.x1, ds.x2], 2, noise, params)[0]
        if which == "mvae":
            return obj.mvae_objective_with_root(vae, [ds.x1, ds.x2], 2, noise, params)[0]
        return obj.surrogate_Lm_with_root(vae, sl, 0, 2, noise, params)[0]

    assert ad.check_gradients(build, vae.params) <= 1.0


def test_composed_loss_gradients_at_twenty_parameter_points():
    """The full mixture objective passes the finite-difference check at 20
    random parameter draws, not just at one lucky point."""
    ds = tiny_ds(4, seed=2)
    for draw in range(20):
        vae = tiny_vae(seed=100 + draw)

        def build(params):
            return obj.mmvae_elbo_with_root(vae, [ds.x1, ds.x2], 2,
                                            obj.SeededNoise(draw), params)[0]

        worst = ad.check_gradients(build, vae.params)
        assert worst <= 1.0, f"draw {draw}: ratio {worst}"


def test_init_then_objective_is_finite_on_default_dataset():
    ds = dg.generate(dg.DataGenConfig())
    for kind, fn in (("mmvae", obj.mmvae_elbo), ("mvae", obj.mvae_objective)):
        vae = md.init(md.ModelConfig(kind=kind, seed=0))
        est = fn(vae, [ds.x1[:256], ds.x2[:256]], 8, obj.SeededNoise(1))
        assert np.isfinite(est.total)


def test_non_finite_term_carries_its_name():
    ds = tiny_ds()
    vae = tiny_vae()
    vae.params["dec0.mean.b"] = np.full(2, 1e200)  # quad term overflows
    with np.errstate(over="ignore"), pytest.raises(ad.NonFiniteError) as exc:
        obj.mmvae_elbo(vae, [ds.x1, ds.x2], 2, obj.SeededNoise(0))
    assert "recon_x1" in str(exc.value)


def test_batch_row_count_mismatch_rejected():
    ds = tiny_ds()
    with pytest.raises(ad.ShapeMismatchError):
        obj.mmvae_elbo(tiny_vae(), [ds.x1[:4], ds.x2[:5]], 2, obj.SeededNoise(0))
