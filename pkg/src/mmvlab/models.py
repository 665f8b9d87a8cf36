"""Encoder/decoder networks and the two model assemblies.

Both assemblies share the same pieces: per-modality MLP encoders emitting
diagonal-Gaussian posterior parameters, a Gaussian decoder for the continuous
modality and a categorical decoder for the label modality. The ``kind`` field
(mmvae vs mvae) decides which objective trains the model, not the parameter
layout. Label inputs are one-hot encoded so every encoder sees a real vector.

Forward functions take an optional ``params`` mapping so a training step can
pass tape-watched Tensors while evaluation code uses the raw arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from mmvlab import autodiff as ad
from mmvlab.distributions import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    CategoricalParams,
    DiagGaussianParams,
)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all MLP dims must be >= 1, got {dims}")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def trunk_width(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim


@dataclass(frozen=True)
class Modality:
    name: str
    family: str      # gaussian | categorical
    data_dim: int    # point dimension, or category count

    def __post_init__(self):
        if self.family not in ("gaussian", "categorical"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.data_dim < (2 if self.family == "categorical" else 1):
            raise ValueError("data_dim too small for family")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mmvae"
    latent_dim: int = 2
    encoder_hidden_dims: tuple[int, ...] = (16, 16)
    decoder_hidden_dims: tuple[int, ...] = (16, 16)
    activation: str = "tanh"
    isotropic_latent: bool = True
    isotropic_likelihood: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mmvae", "mvae"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")


@dataclass
class MultimodalVae:
    kind: str
    latent_dim: int
    modalities: tuple[Modality, ...]
    encoder_specs: tuple[MlpSpec, ...]
    decoder_specs: tuple[MlpSpec, ...]
    isotropic_latent: bool
    isotropic_likelihood: bool
    params: dict[str, np.ndarray]

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @property
    def label_modality(self) -> int:
        """Index of the conditioning (label) modality: the last one."""
        return len(self.modalities) - 1


def one_hot(labels, n_categories: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_categories):
        raise IndexError(f"labels outside [0, {n_categories})")
    out = np.zeros((labels.size, n_categories))
    out[np.arange(labels.size), labels] = 1.0
    return out


def encoder_input(mod: Modality, x) -> np.ndarray:
    """Rows fed to the encoder: raw points, or one-hot labels."""
    if mod.family == "categorical":
        return one_hot(x, mod.data_dim)
    arr = np.asarray(x, dtype=np.float64)
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


# ---------------------------------------------------------------------------
# parameter construction


def _net_param_shapes(spec: MlpSpec, heads: dict[str, int], prefix: str):
    shapes = {}
    dims = (spec.input_dim, *spec.hidden_dims)
    for i in range(len(spec.hidden_dims)):
        shapes[f"{prefix}.w{i}"] = (dims[i], dims[i + 1])
        shapes[f"{prefix}.b{i}"] = (dims[i + 1],)
    for head, out in heads.items():
        shapes[f"{prefix}.{head}.w"] = (spec.trunk_width, out)
        shapes[f"{prefix}.{head}.b"] = (out,)
    return shapes


def _head_map(vae_like, m: int, role: str) -> dict[str, int]:
    """Head widths for encoder (role=enc) or decoder (role=dec) of modality m."""
    mod = vae_like.modalities[m]
    if role == "enc":
        width = 1 if vae_like.isotropic_latent else vae_like.latent_dim
        return {"mean": vae_like.latent_dim, "logstd": width}
    if mod.family == "gaussian":
        width = 1 if vae_like.isotropic_likelihood else mod.data_dim
        return {"mean": mod.data_dim, "logstd": width}
    return {"logits": mod.data_dim}


def _all_param_shapes(vae_like) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for m in range(len(vae_like.modalities)):
        shapes.update(_net_param_shapes(
            vae_like.encoder_specs[m], _head_map(vae_like, m, "enc"), f"enc{m}"))
        shapes.update(_net_param_shapes(
            vae_like.decoder_specs[m], _head_map(vae_like, m, "dec"), f"dec{m}"))
    return shapes


def build_vae(kind: str, modalities, latent_dim: int,
              encoder_hidden_dims=(32, 32), decoder_hidden_dims=(32, 32),
              activation: str = "tanh", isotropic_latent: bool = True,
              isotropic_likelihood: bool = True, seed: int = 0) -> MultimodalVae:
    """Assemble a model with arbitrary modalities (tests use M=1 and M>2)."""
    modalities = tuple(modalities)
    enc_specs = tuple(
        MlpSpec(mod.data_dim, tuple(encoder_hidden_dims), latent_dim, activation)
        for mod in modalities)
    dec_specs = tuple(
        MlpSpec(latent_dim, tuple(decoder_hidden_dims), mod.data_dim, activation)
        for mod in modalities)
    vae = MultimodalVae(
        kind=kind, latent_dim=latent_dim, modalities=modalities,
        encoder_specs=enc_specs, decoder_specs=dec_specs,
        isotropic_latent=isotropic_latent,
        isotropic_likelihood=isotropic_likelihood, params={})
    rng = np.random.default_rng(seed)
    for name, shape in _all_param_shapes(vae).items():
        if name.rsplit(".", 1)[1].startswith("b"):
            vae.params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            vae.params[name] = rng.uniform(-bound, bound, size=shape)
    return vae


def init(cfg: ModelConfig) -> MultimodalVae:
    """Standard two-modality assembly: 2-D Gaussian points + binary labels."""
    return build_vae(
        kind=cfg.kind,
        modalities=(Modality("x1", "gaussian", 2), Modality("x2", "categorical", 2)),
        latent_dim=cfg.latent_dim,
        encoder_hidden_dims=cfg.encoder_hidden_dims,
        decoder_hidden_dims=cfg.decoder_hidden_dims,
        activation=cfg.activation,
        isotropic_latent=cfg.isotropic_latent,
        isotropic_likelihood=cfg.isotropic_likelihood,
        seed=cfg.seed)


def parameter_count(vae: MultimodalVae) -> int:
    """Closed-form total; guards against silently misconfigured heads."""
    return sum(int(np.prod(s)) for s in _all_param_shapes(vae).values())


def param_tensors(vae: MultimodalVae, tape: ad.Tape) -> dict[str, ad.Tensor]:
    return {name: tape.watch(arr) for name, arr in vae.params.items()}


# ---------------------------------------------------------------------------
# forward passes


def _activation(name: str):
    return ad.tanh if name == "tanh" else ad.relu


def _trunk(prefix: str, spec: MlpSpec, x, params):
    act = _activation(spec.activation)
    h = x
    for i in range(len(spec.hidden_dims)):
        h = act(ad.broadcast_add_row(ad.matmul(h, params[f"{prefix}.w{i}"]),
                                     params[f"{prefix}.b{i}"]))
    return h

def _head(prefix: str, head: str, h, params):
    return ad.broadcast_add_row(ad.matmul(h, params[f"{prefix}.{head}.w"]),
                                params[f"{prefix}.{head}.b"])


def _tile_cols(col, times: int):
    if times == 1:
        return col
    return ad.concat_cols(*([col] * times))


def encode_rows(vae: MultimodalVae, m: int, x_rows, params=None):
    """Posterior parameters for a batch; returns (mean, log_std) rows."""
    params = vae.params if params is None else params
    h = _trunk(f"enc{m}", vae.encoder_specs[m], x_rows, params)
    mean = _head(f"enc{m}", "mean", h, params)
    log_std = ad.clip(_head(f"enc{m}", "logstd", h, params),
                      LOG_STD_MIN, LOG_STD_MAX)
    if vae.isotropic_latent:
        log_std = _tile_cols(log_std, vae.latent_dim)
    return mean, log_std


def decode_rows(vae: MultimodalVae, m: int, g_rows, params=None):
    """Likelihood parameters for latent rows: (mean, log_std) or logits."""
    params = vae.params if params is None else params
    mod = vae.modalities[m]
    h = _trunk(f"dec{m}", vae.decoder_specs[m], g_rows, params)
    if mod.family == "categorical":
        return _head(f"dec{m}", "logits", h, params)
    mean = _head(f"dec{m}", "mean", h, params)
    log_std = ad.clip(_head(f"dec{m}", "logstd", h, params),
                      LOG_STD_MIN, LOG_STD_MAX)
    if vae.isotropic_likelihood:
        log_std = _tile_cols(log_std, mod.data_dim)
    return mean, log_std


def encode(vae: MultimodalVae, m: int, x) -> DiagGaussianParams:
    rows = encoder_input(vae.modalities[m], x)
    mean, log_std = encode_rows(vae, m, rows)
    squeeze = np.asarray(x).ndim == 1 and vae.modalities[m].family == "gaussian"
    if squeeze or np.isscalar(x) or np.asarray(x).ndim == 0:
        return DiagGaussianParams(mean[0], log_std[0])
    return DiagGaussianParams(mean, log_std)


def decode(vae: MultimodalVae, m: int, g):
    g = np.asarray(g, dtype=np.float64)
    single = g.ndim == 1
    rows = g.reshape(1, -1) if single else g
    if rows.shape[1] != vae.latent_dim:
        raise ad.ShapeMismatchError(
            f"decode: latent dim {rows.shape[1]} != {vae.latent_dim}")
    out = decode_rows(vae, m, rows)
    if vae.modalities[m].family == "categorical":
        return CategoricalParams(out[0] if single else out)
    mean, log_std = out
    if single:
        return DiagGaussianParams(mean[0], log_std[0])
    return DiagGaussianParams(mean, log_std)


# ---------------------------------------------------------------------------
# the constant-decoder construction


def set_constant_decoder(vae: MultimodalVae, m: int, target) -> MultimodalVae:
    """Return a copy whose decoder m outputs ``target`` for every latent.

    Zeroes the decoder's head weights and writes the inverse-transformed
    target into the head biases (identity for means and logits, the log-std
    directly for the scale head). The trunk is untouched; its output is
    annihilated by the zero weights.
    """
    mod = vae.modalities[m]
    params = {k: v.copy() for k, v in vae.params.items()}
    prefix = f"dec{m}"
    if mod.family == "categorical":
        if not isinstance(target, CategoricalParams) or target.logits.ndim != 1:
            raise TypeError("categorical decoder needs 1-D CategoricalParams")
        heads = {"logits": target.logits}
    else:
        if not isinstance(target, DiagGaussianParams) or target.mean.ndim != 1:
            raise TypeError("gaussian decoder needs 1-D DiagGaussianParams")
        if np.any(target.log_std <= LOG_STD_MIN) or np.any(target.log_std >= LOG_STD_MAX):
            raise ValueError("target log-std outside the representable clamp range")
        log_std = target.log_std
        if vae.isotropic_likelihood:
            if not np.all(log_std == log_std[0]):
                raise ValueError(
                    "isotropic likelihood head cannot realize anisotropic target stds")
            log_std = log_std[:1]
        heads = {"mean": target.mean, "logstd": log_std}
    for head, bias in heads.items():
        if params[f"{prefix}.{head}.b"].shape != bias.shape:
            raise ad.ShapeMismatchError(
                f"target shape {bias.shape} != head shape "
                f"{params[f'{prefix}.{head}.b'].shape}")
        params[f"{prefix}.{head}.w"] = np.zeros_like(params[f"{prefix}.{head}.w"])
        params[f"{prefix}.{head}.b"] = bias.copy()
    return replace(vae, params=params)


# ---------------------------------------------------------------------------
# checkpoints: one line per tensor, "name shape_csv value_csv"


def save_params(params: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(params):
            arr = params[name]
            shape = ",".join(str(d) for d in arr.shape)
            vals = ",".join(f"{v:.17g}" for v in arr.reshape(-1))
            fh.write(f"{name} {shape} {vals}\n")


def load_params(path) -> dict[str, np.ndarray]:
    params = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, shape_csv, value_csv = line.split(" ")
            shape = tuple(int(d) for d in shape_csv.split(","))
            vals = np.array([float(v) for v in value_csv.split(",")])
            params[name] = vals.reshape(shape)
    return params
