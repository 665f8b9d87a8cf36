"""Optimization loop, metrics logging and checkpointing for both models.

The objective is maximized (gradient ascent via Adam on the negated
gradient) and every log reports the bound value itself, higher is better.
Runs are deterministic for a fixed config and dataset: checkpoints are
byte-identical across reruns and run records match except for the wall-clock
column.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from mmvlab import autodiff as ad
from mmvlab import bounds as bd
from mmvlab import datagen as dg
from mmvlab import models as md
from mmvlab import objectives as obj


class TrainingAborted(RuntimeError):
    """Raised when the loss went non-finite; the last good checkpoint survives."""


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "mmvae"
    epochs: int = 550
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    mc_samples: int = 8
    seed: int = 0
    eval_every: int = 110
    eval_mc_samples: int = 64
    eval_collapse_samples: int = 2000
    output_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 <= b < 1.0:
                raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.mc_samples < 1 or self.eval_every < 1:
            raise ValueError("batch_size, mc_samples, eval_every must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam descent step on the given gradients.

    Mutates ``params`` and ``state`` in place and returns them.
    """
    state.t += 1
    bc1 = 1.0 - cfg.adam_beta1 ** state.t
    bc2 = 1.0 - cfg.adam_beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ad.ShapeMismatchError(
                f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * g * g
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return params, state


@dataclass(frozen=True)
class RunRecordRow:
    epoch: int
    objective: float
    per_term: dict[str, float]
    collapse: bd.CollapseReport
    seconds: float


@dataclass
class RunRecord:
    rows: list[RunRecordRow] = field(default_factory=list)

    def term_names(self) -> list[str]:
        return sorted(self.rows[0].per_term) if self.rows else []


RUNRECORD_FIXED_COLUMNS = ["mean_err_c0", "var_ratio_a_c0", "var_ratio_b_c0",
                           "mean_err_c1", "var_ratio_a_c1", "var_ratio_b_c1",
                           "seconds"]


def save_runrecord(record: RunRecord, path) -> None:
    names = record.term_names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "objective", *names, *RUNRECORD_FIXED_COLUMNS])
        for row in record.rows:
            cells = [str(row.epoch), f"{row.objective:.17g}"]
            cells += [f"{row.per_term[n]:.17g}" for n in names]
            for c in (0, 1):
                cc = row.collapse.per_class[c]
                cells += [f"{cc.mean_error:.17g}",
                          f"{cc.variance_ratio[0]:.17g}",
                          f"{cc.variance_ratio[1]:.17g}"]
            cells.append(f"{row.seconds:.3f}")
            w.writerow(cells)


def evaluate(vae: md.MultimodalVae, ds: dg.MultimodalDataset, K: int,
             seed: int, collapse_samples: int = 2000):
    """Low-variance full-batch estimate plus collapse metrics."""
    noise = obj.SeededNoise(seed)
    _, est = obj.objective_with_root(vae, [ds.x1, ds.x2], K, noise)
    report = bd.collapse_metrics(vae, ds, collapse_samples, seed)
    return est, report


def write_run_config(cfg: TrainConfig, model_cfg: md.ModelConfig, path,
                     extra: dict | None = None) -> None:
    """Resolved run settings, one `key json_value` line each."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in asdict(cfg).items():
            fh.write(f"{key} {json.dumps(value)}\n")
        for key, value in asdict(model_cfg).items():
            fh.write(f"model_{key} {json.dumps(list(value) if isinstance(value, tuple) else value)}\n")
        for key, value in (extra or {}).items():
            fh.write(f"{key} {json.dumps(value)}\n")


def read_run_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, raw = line.split(" ", 1)
                out[key] = json.loads(raw)
    return out


def load_run_model(run_dir) -> md.MultimodalVae:
    """Rebuild the trained model from config.txt plus checkpoint.txt."""
    cfgmap = read_run_config(f"{run_dir}/config.txt")
    model_cfg = md.ModelConfig(
        kind=cfgmap["model_kind"],
        latent_dim=cfgmap["model_latent_dim"],
        encoder_hidden_dims=tuple(cfgmap["model_encoder_hidden_dims"]),
        decoder_hidden_dims=tuple(cfgmap["model_decoder_hidden_dims"]),
        activation=cfgmap["model_activation"],
        isotropic_latent=cfgmap["model_isotropic_latent"],
        isotropic_likelihood=cfgmap["model_isotropic_likelihood"],
        seed=cfgmap["model_seed"])
    vae = md.init(model_cfg)
    vae.params.update(md.load_params(f"{run_dir}/checkpoint.txt"))
    return vae


def train(cfg: TrainConfig, ds: dg.MultimodalDataset,
          model_cfg: md.ModelConfig | None = None):
    """Train a fresh model on ``ds``; returns (RunRecord, MultimodalVae).

    When ``cfg.output_dir`` is set, writes ``config.txt``, ``checkpoint.txt``
    (refreshed at every eval point) and ``runrecord.csv``. A non-finite loss
    or gradient aborts the run, keeping the parameters from just before the
    offending step in ``checkpoint.txt``.
    """
    if model_cfg is None:
        model_cfg = md.ModelConfig(kind=cfg.model_kind, seed=cfg.seed)
    elif model_cfg.kind != cfg.model_kind:
        raise ValueError("model_cfg.kind disagrees with cfg.model_kind")
    vae = md.init(model_cfg)
    state = adam_init(vae.params)
    master = np.random.default_rng(cfg.seed)
    n = ds.n
    record = RunRecord()
    out = cfg.output_dir
    if out is not None:
        write_run_config(cfg, model_cfg, f"{out}/config.txt")
    started = time.perf_counter()

    def checkpoint():
        if out is not None:
            md.save_params(vae.params, f"{out}/checkpoint.txt")

    def eval_point(epoch: int):
        est, coll = evaluate(vae, ds, cfg.eval_mc_samples, cfg.seed + epoch,
                             cfg.eval_collapse_samples)
        record.rows.append(RunRecordRow(
            epoch=epoch, objective=est.total, per_term=dict(est.per_term),
            collapse=coll, seconds=time.perf_counter() - started))
        checkpoint()

    for epoch in range(1, cfg.epochs + 1):
        perm = master.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            batch = [ds.x1[idx], ds.x2[idx]]
            noise = obj.SeededNoise(master.integers(2**63))
            tape = ad.Tape()
            tensors = md.param_tensors(vae, tape)
            try:
                root, _ = obj.objective_with_root(vae, batch, cfg.mc_samples,
                                                  noise, tensors)
            except ad.NonFiniteError as err:
                checkpoint()
                raise TrainingAborted(f"epoch {epoch}: {err}") from err
            grads = ad.backward(tape, root)
            scale = n / idx.size
            step_grads = {}
            for name, tensor in tensors.items():
                g = grads[tensor.node_id]
                if not np.all(np.isfinite(g)):
                    checkpoint()
                    raise TrainingAborted(
                        f"epoch {epoch}: non-finite gradient for {name}")
                step_grads[name] = -scale * g
            adam_step(vae.params, step_grads, state, cfg)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            eval_point(epoch)

    if out is not None:
        save_runrecord(record, f"{out}/runrecord.csv")
    return record, vae
