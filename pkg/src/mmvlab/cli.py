"""Command-line pipeline: data generation, training, sampling, bound
verification and latent dumps.

Every subcommand is a pure function of its flags and input files; identical
invocations produce identical output bytes (the run record's wall-clock
column excepted). Exit codes: 0 success, 1 domain error (missing files,
failed verification, aborted training), 2 usage error.

Output formats
--------------
gen-data        dataset CSV            x1_a,x1_b,x2
sample          samples CSV            x1_a,x1_b,source
verify-theorem  trial CSV              trial,class,kind,bound,lm,stderr,gap,status
                (trial -1 is the constant-decoder equality/negative-control
                row; trials 0..n-1 are random parameterizations)
latent          posterior dump CSV     g_a,g_b,modality,label
                (per data row and modality: the posterior mean followed by
                --samples reparameterized draws)
train           run directory with config.txt, checkpoint.txt, runrecord.csv
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from mmvlab import bounds as bd
from mmvlab import datagen as dg
from mmvlab import models as md
from mmvlab import schemas
from mmvlab import training as tr


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmvlab",
                                description="two-modality VAE lab pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic dataset CSV")
    g.add_argument("--n", type=int, required=True, help="samples per class")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--shape", choices=["gaussians", "arcs"], default="gaussians")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model, writing a run directory")
    t.add_argument("--model", choices=["mmvae", "mvae"], required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=tr.TrainConfig.epochs)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--batch-size", type=int, default=tr.TrainConfig.batch_size)
    t.add_argument("--lr", type=float, default=tr.TrainConfig.learning_rate)
    t.add_argument("--mc-samples", type=int, default=tr.TrainConfig.mc_samples)
    t.add_argument("--eval-every", type=int, default=tr.TrainConfig.eval_every)
    t.add_argument("--hidden", default="16,16",
                   help="comma-separated hidden widths for every net")
    t.add_argument("--anisotropic-likelihood", action="store_true",
                   help="per-dimension decoded stds instead of a shared one")

    s = sub.add_parser("sample", help="draw continuous-modality samples")
    s.add_argument("--run", required=True)
    s.add_argument("--source", required=True,
                   help="prior, label:0 or label:1")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    v = sub.add_parser("verify-theorem",
                       help="certify the constant-decoder bound numerically")
    v.add_argument("--data", required=True)
    v.add_argument("--class", dest="class_label", type=int, choices=[0, 1],
                   required=True)
    v.add_argument("--trials", type=int, required=True)
    v.add_argument("--mc-samples", type=int, default=64)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)
    v.add_argument("--perturb-mle", type=float, default=0.0,
                   help="shift the MLE mean per dimension (negative control)")

    l = sub.add_parser("latent", help="dump per-modality posterior points")
    l.add_argument("--run", required=True)
    l.add_argument("--data", required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--samples", type=int, default=1,
                   help="reparameterized draws per posterior, besides the mean")
    l.add_argument("--seed", type=int, default=0)
    return p


def _cmd_gen_data(args) -> int:
    ds = dg.generate(dg.DataGenConfig(n_per_class=args.n,
                                      shape_kind=args.shape, seed=args.seed))
    dg.save_csv(ds, args.out)
    schemas.validate_csv(args.out, schemas.DATASET)
    return 0


def _cmd_train(args) -> int:
    ds = dg.load_csv(args.data)
    os.makedirs(args.out, exist_ok=True)
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    cfg = tr.TrainConfig(model_kind=args.model, epochs=args.epochs,
                         batch_size=args.batch_size, learning_rate=args.lr,
                         mc_samples=args.mc_samples, seed=args.seed,
                         eval_every=args.eval_every, output_dir=args.out)
    model_cfg = md.ModelConfig(
        kind=args.model, encoder_hidden_dims=hidden,
        decoder_hidden_dims=hidden,
        isotropic_likelihood=not args.anisotropic_likelihood, seed=args.seed)
    tr.train(cfg, ds, model_cfg)
    schemas.validate_csv(f"{args.out}/runrecord.csv", schemas.RUNRECORD)
    return 0


def _cmd_sample(args) -> int:
    vae = tr.load_run_model(args.run)
    pts = bd.sample_x1(vae, args.source, args.n, args.seed)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(schemas.HEADERS[schemas.SAMPLES])
        for a, b in pts:
            w.writerow([_fmt(a), _fmt(b), args.source])
    schemas.validate_csv(args.out, schemas.SAMPLES)
    return 0


def _cmd_verify_theorem(args) -> int:
    ds = dg.load_csv(args.data)
    report = bd.verify_theorem(ds, args.class_label, m=0, trials=args.trials,
                               K=args.mc_samples, seed=args.seed,
                               perturb_mle=args.perturb_mle)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(schemas.HEADERS[schemas.THEOREM])
        for t in (report.equality, *report.trials):
            w.writerow([t.index, report.class_label, t.kind, _fmt(t.bound),
                        _fmt(t.lm), _fmt(t.stderr), _fmt(t.gap), t.status])
    schemas.validate_csv(args.out, schemas.THEOREM)
    if report.failed:
        print("bound verification FAILED; see " + args.out, file=sys.stderr)
        return 1
    return 0


def _cmd_latent(args) -> int:
    vae = tr.load_run_model(args.run)
    ds = dg.load_csv(args.data)
    rng = np.random.default_rng(args.seed)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(schemas.HEADERS[schemas.LATENT])
        for m, name in ((0, "x1"), (1, "x2")):
            x = ds.x1 if m == 0 else ds.x2
            post = md.encode(vae, m, x)
            for i in range(ds.n):
                label = int(ds.x2[i])
                w.writerow([_fmt(post.mean[i, 0]), _fmt(post.mean[i, 1]),
                            name, label])
                std = np.exp(post.log_std[i])
                for _ in range(args.samples):
                    g = post.mean[i] + std * rng.standard_normal(vae.latent_dim)
                    w.writerow([_fmt(g[0]), _fmt(g[1]), name, label])
    schemas.validate_csv(args.out, schemas.LATENT)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "verify-theorem": _cmd_verify_theorem,
    "latent": _cmd_latent,
}


def _validate_usage(parser: argparse.ArgumentParser, args) -> None:
    if args.command == "gen-data" and args.n < 1:
        parser.error("--n must be >= 1")
    if args.command == "sample" and args.n < 0:
        parser.error("--n must be >= 0")
    if args.command == "train" and args.epochs < 1:
        parser.error("--epochs must be >= 1")
    if args.command == "verify-theorem" and args.trials < 1:
        parser.error("--trials must be >= 1")
    if args.command == "latent" and args.samples < 0:
        parser.error("--samples must be >= 0")
    if args.command == "sample":
        ok = args.source == "prior" or (
            args.source.startswith("label:")
            and args.source.split(":", 1)[1] in ("0", "1"))
        if not ok:
            parser.error(f"bad --source {args.source!r}")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _validate_usage(parser, args)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, ArithmeticError, tr.TrainingAborted,
            schemas.SchemaError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
