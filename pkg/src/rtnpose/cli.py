"""Command-line interface: ``python -m rtnpose <command> ...``.

Machine-readable results go to stdout as JSON; the resolved configuration
and progress logs go to stderr.  Exit codes: 0 success, 1 domain or runtime
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, model, synth
from .cloud import CloudFormatError, centralize, chamfer_distance, normalize_unit_sphere, read_cloud, write_cloud
from .codec import QUANTIZE_MODES, grid_from_k
from .so3 import EulerZYZ

DOMAIN_ERRORS = (ValueError, IndexError, KeyError, OSError, CloudFormatError)


def _grid_k(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if k < 2:
        raise argparse.ArgumentTypeError("k must be at least 2")
    return k


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _families(text: str) -> tuple:
    names = tuple(f.strip() for f in text.split(",") if f.strip())
    for n in names:
        if n not in synth.FAMILY_NAMES:
            raise argparse.ArgumentTypeError(f"unknown family {n!r}; choose from {','.join(synth.FAMILY_NAMES)}")
    if not names:
        raise argparse.ArgumentTypeError("no families given")
    return names


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2) + "\n" if isinstance(obj, dict) else json.dumps(obj) + "\n")


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# commands


def cmd_codec(args):
    grid = grid_from_k(args.k)
    if args.action == "info":
        _emit(grid.describe())
    elif args.action == "quantize":
        _emit(grid.quantize(EulerZYZ(args.alpha, args.beta, args.gamma), mode=args.mode))
    else:
        e = grid.class_to_euler(args.id)
        _emit({"id": args.id, "alpha": e.alpha, "beta": e.beta, "gamma": e.gamma})
    return 0


def _write_rotlabel(args, families):
    grid = grid_from_k(args.k)
    samples = synth.build_rotation_dataset(
        families, args.per_family, args.per_shape, args.points, grid, args.rotation_mode, args.jitter, seed=args.seed
    )
    path = synth.write_manifest(samples, args.out, args.k)
    _emit({"manifest": str(path), "samples": len(samples), "k": args.k, "n_classes": grid.n})


def cmd_synth(args):
    if args.mode == "rotlabel":
        _write_rotlabel(args, args.families)
        return 0
    pairs = synth.build_rdf_dataset(args.families, args.per_family, args.points, args.mode, args.seed)
    path = synth.write_family_manifest(pairs, args.families, args.out, args.mode)
    _emit({"manifest": str(path), "samples": len(pairs), "mode": args.mode})
    return 0


def cmd_dataset(args):
    _write_rotlabel(args, args.families)
    return 0


def cmd_train(args):
    samples, k = synth.read_manifest(args.data)
    val = []
    if args.val:
        val, vk = synth.read_manifest(args.val)
        if vk != k:
            raise ValueError(f"validation grid k={vk} differs from training grid k={k}")
    overrides = {"seed": args.seed}
    if args.backbone:
        overrides["backbone"] = args.backbone
    cfg = model.profile(args.profile, **overrides)
    opt = model.TrainOptions(learning_rate=args.lr, batch=args.batch, epochs=args.epochs)
    log = lambda r: _log(f"epoch {r['epoch']}: loss {r['loss']:.4f} val_top1 {r['val_top1']:.4f}")
    params, history = model.train(samples, cfg, opt, seed=args.seed, val_samples=val, grid_k=k, log=log)
    model.save_checkpoint(params, cfg, args.out)
    csv = Path(args.log) if args.log else Path(args.out).with_suffix(".csv")
    model.write_history_csv(history, csv)
    _emit({"checkpoint": str(args.out), "log": str(csv), "final_loss": history[-1]["loss"], "val_top1": history[-1]["val_top1"]})
    return 0


def cmd_eval(args):
    samples, k = synth.read_manifest(args.data)
    if args.oracle:
        predictor, digest = evaluation.OracleModel(samples, grid_from_k(k)), "oracle"
    else:
        if not args.model:
            raise ValueError("eval needs --model or --oracle")
        params, cfg = model.load_checkpoint(args.model)
        predictor, digest = model.RtnModel(params, cfg), cfg.digest()
    report = evaluation.evaluate(predictor, samples, seed=args.seed, grid_k=k, config_digest=digest, jobs=args.jobs)
    sys.stdout.write(report.to_json())
    return 0


def cmd_normalize(args):
    params, cfg = model.load_checkpoint(args.model)
    cloud = normalize_unit_sphere(centralize(read_cloud(args.input)))
    out, c = model.normalize_pose(cloud, params, cfg)
    write_cloud(out, args.output)
    e = grid_from_k(cfg.grid_k).class_to_euler(c)
    _emit({"class": c, "alpha": e.alpha, "beta": e.beta, "gamma": e.gamma, "out": str(args.output)})
    return 0


def cmd_gradcheck(args):
    dtype = np.float64 if args.dtype == "float64" else np.float32
    tol = args.tolerance if args.tolerance is not None else (1e-5 if dtype == np.float64 else 1e-2)
    cfg = model.gradcheck_config(model.profile(args.profile))
    res = model.gradcheck(cfg, seed=args.seed, dtype=dtype)
    ok = res.max_rel_error < tol
    _emit({
        "profile": args.profile, "dtype": args.dtype, "max_rel_error": res.max_rel_error, "tolerance": tol,
        "passed": ok, "checked": res.checked, "skipped": res.skipped, "per_tensor": res.per_tensor,
    })
    return 0 if ok else 1


def cmd_cd(args):
    _emit(chamfer_distance(read_cloud(args.a), read_cloud(args.b)))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=_positive, default=1, help="worker cap; 1 guarantees bit-exact output")

    p = argparse.ArgumentParser(prog="rtnpose", description="Rotation-class pose normalization for point clouds.")
    sub = p.add_subparsers(dest="command", required=True)

    codec = sub.add_parser("codec", help="rotation grid utilities")
    csub = codec.add_subparsers(dest="action", required=True)
    c = csub.add_parser("info", parents=[common], help="grid sizes")
    c.add_argument("--k", type=_grid_k, required=True)
    c = csub.add_parser("quantize", parents=[common], help="Euler angles to class id")
    c.add_argument("--k", type=_grid_k, required=True)
    for name in ("alpha", "beta", "gamma"):
        c.add_argument(f"--{name}", type=float, required=True)
    c.add_argument("--mode", choices=QUANTIZE_MODES, default="factored")
    c = csub.add_parser("declass", parents=[common], help="class id to representative angles")
    c.add_argument("--k", type=_grid_k, required=True)
    c.add_argument("--id", type=int, required=True)
    codec.set_defaults(func=cmd_codec)

    def rotlabel_flags(q, families_required):
        q.add_argument("--families", type=_families, default=synth.FAMILY_NAMES, required=families_required)
        q.add_argument("--per-family", type=_positive, default=8)
        q.add_argument("--points", type=_positive, default=256)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--out", required=True)
        q.add_argument("--k", type=_grid_k, default=3)
        q.add_argument("--per-shape", type=_positive, default=4, help="rotations per source shape")
        q.add_argument("--rotation-mode", choices=synth.ROTATION_MODES, default="haar_quantized")
        q.add_argument("--jitter", type=float, default=synth.DEFAULT_JITTER)

    s = sub.add_parser("synth", parents=[common], help="write procedural clouds and a manifest")
    rotlabel_flags(s, False)
    s.add_argument("--mode", choices=(*synth.RDF_MODES, "rotlabel"), default="so0")
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("dataset", help="self-supervised rotation-label datasets")
    dsub = d.add_subparsers(dest="kind", required=True)
    rl = dsub.add_parser("rotlabel", parents=[common])
    rotlabel_flags(rl, False)
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", parents=[common], help="train a model on a rotation manifest")
    t.add_argument("--data", required=True)
    t.add_argument("--val")
    t.add_argument("--profile", choices=sorted(model.PROFILES), default="tiny")
    t.add_argument("--backbone", choices=model.BACKBONES)
    t.add_argument("--epochs", type=_positive, default=50)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=_positive, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="epoch CSV (default: checkpoint path with .csv)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="rotation report on a manifest")
    e.add_argument("--data", required=True)
    e.add_argument("--model")
    e.add_argument("--oracle", action="store_true", help="use the manifest labels as predictions")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("normalize", parents=[common], help="undo the predicted rotation of one cloud")
    n.add_argument("--model", required=True)
    n.add_argument("--in", dest="input", required=True)
    n.add_argument("--out", dest="output", required=True)
    n.set_defaults(func=cmd_normalize)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    g.add_argument("--profile", choices=sorted(model.PROFILES), default="tiny")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    g.add_argument("--tolerance", type=float)
    g.set_defaults(func=cmd_gradcheck)

    cd = sub.add_parser("cd", parents=[common], help="Chamfer distance between two cloud files")
    cd.add_argument("--a", required=True)
    cd.add_argument("--b", required=True)
    cd.set_defaults(func=cmd_cd)
    return p


def _resolved(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _log("config: " + json.dumps(_resolved(args), sort_keys=True))
    try:
        return args.func(args)
    except DOMAIN_ERRORS as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
