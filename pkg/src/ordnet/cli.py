"""Command-line entry point.

Records go to stdout as ``key=value`` lines (CSV for ``analyze corr``);
diagnostics go to stderr. Exit codes: 0 ok, 1 verification failure,
2 usage error, 3 I/O or format error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from ordnet import analysis, otns
from ordnet.errors import FormatError, OrdNetError
from ordnet.gradcheck import grad_check
from ordnet.harness import DEFAULT_SCALES, EvalConfig, TrainConfig, evaluate_multiscale, synth_dataset, train
from ordnet.losses import LossConfig, full_loss
from ordnet.mr_branch import MRConfig
from ordnet.network import VARIANTS, OrdNet, OrdNetConfig
from ordnet.rlr_branch import RLRConfig, reweighed_long_range
from ordnet.tensor import Tensor, no_grad

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("ordnet")


def emit(**kv) -> None:
    print(" ".join(f"{k}={_fmt(v)}" for k, v in kv.items()), flush=True)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _branch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--patches", type=int, default=None, help="MR patch grid P (P x P patches)")
    p.add_argument("--rlr-direction", choices=("in", "out"), default=None)
    p.add_argument("--rlr-norm", choices=("sigmoid", "softmax"), default=None)
    p.add_argument("--variant", choices=sorted(VARIANTS), default=None, help="ablation row")


def _apply_branch_flags(cfg: OrdNetConfig, args) -> OrdNetConfig:
    if args.variant:
        cfg = cfg.variant(args.variant)
    if args.patches is not None:
        cfg.mr = MRConfig(args.patches, cfg.mr.padding)
    if args.rlr_direction or args.rlr_norm:
        direction = {"in": "attention_in", "out": "attention_out"}.get(args.rlr_direction, cfg.rlr.direction)
        cfg.rlr = RLRConfig(direction, args.rlr_norm or cfg.rlr.normalizer)
    return cfg


def _data_flags(p: argparse.ArgumentParser, n: int) -> None:
    p.add_argument("--data-seed", type=int, default=3, help="synthetic dataset seed")
    p.add_argument("-n", "--num-images", type=int, default=n)
    p.add_argument("--image-size", type=int, default=32)


# ------------------------------------------------------------- subcommands


def cmd_gradcheck(args) -> int:
    cfg = OrdNetConfig(num_classes=args.classes, backbone_widths=(4, 8, 16), cq=2, cv=4,
                       zero_init_fusion=False, mr=MRConfig(2, "pad"))
    cfg = _apply_branch_flags(cfg, args)
    cfg.mr.padding = "pad"
    model = OrdNet(cfg, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    image = rng.uniform(-1, 1, size=(args.size, args.size, 3))
    labels = rng.integers(0, args.classes, size=(args.size, args.size))
    t0 = time.perf_counter()
    report = grad_check(lambda: full_loss(model(Tensor(image)), labels, LossConfig()), model.params,
                        eps=args.eps, max_coords=args.max_coords, seed=args.seed)
    for line in report.records():
        print(line)
    ok = report.passed(args.tol)
    emit(tol=args.tol, seconds=time.perf_counter() - t0, status="pass" if ok else "fail")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.model = _apply_branch_flags(cfg.model, args)
    data = synth_dataset(args.data_seed, args.num_images, args.image_size, cfg.model.num_classes)
    result = train(cfg, data, on_epoch=lambda rec: emit(**rec))
    if args.out:
        result.model.save(args.out)
        emit(checkpoint=args.out)
    if result.diverged:
        emit(status="diverged")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_eval(args) -> int:
    model = OrdNet.load(args.checkpoint)
    data = synth_dataset(args.data_seed, args.num_images, args.image_size, model.cfg.num_classes)
    m = evaluate_multiscale(model, data, EvalConfig(tuple(args.scales), args.flip))
    emit(miou=m["miou"], pix_acc=m["pix_acc"], scales=",".join(str(s) for s in args.scales), flip=int(args.flip))
    return EXIT_OK


def cmd_corr(args) -> int:
    files = analysis.mask_files(args.mask_dir)
    if not files:
        raise FormatError(f"no .pgm or .otns masks in {args.mask_dir}")
    corr = analysis.aggregate_correlation((analysis.load_mask(f) for f in files), args.patches,
                                          args.ignore_label)
    sys.stdout.write(analysis.matrix_to_csv(corr))
    if args.otns:
        otns.save(args.otns, corr)
    log.info("masks=%d diagonal_gap=%.4f", len(files), analysis.diagonal_gap(corr))
    return EXIT_OK


def cmd_flops(args) -> int:
    grids = args.patches if args.patches else [1, 2, 4]
    for p in grids:
        r = analysis.flops_estimate(args.height, args.width, args.channels, args.cq, args.ck, args.cv, p)
        emit(patches=p, **{k: getattr(r, k) for k in
                           ("projections", "attention_map", "aggregation", "output_projection", "total")})
    return EXIT_OK


def cmd_attn_map(args) -> int:
    if args.checkpoint:
        model = OrdNet.load(args.checkpoint)
    else:
        model = OrdNet(OrdNetConfig(), seed=args.seed or 0)
    if model.lr_attn is None:
        raise OrdNetError("model has no long-range attention branch")
    direction = {"in": "attention_in", "out": "attention_out"}.get(args.rlr_direction, model.cfg.rlr.direction)
    cfg = RLRConfig(direction, args.rlr_norm or model.cfg.rlr.normalizer)
    image, _ = synth_dataset(args.data_seed, args.index + 1, args.image_size, model.cfg.num_classes)[args.index]
    with no_grad():
        x = model.features(Tensor(image))
        _, cmap = reweighed_long_range(x, model.lr_attn, cfg)
    g = cmap.gate.data
    otns.save(args.out, g)
    emit(out=args.out, height=g.shape[0], width=g.shape[1], gate_min=float(g.min()), gate_max=float(g.max()))
    return EXIT_OK


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    image = rng.uniform(0, 1, size=(args.image_size, args.image_size, 3))
    labels = rng.integers(0, 4, size=(args.image_size, args.image_size))
    for name in sorted(VARIANTS):
        model = OrdNet(_apply_branch_flags(OrdNetConfig(), args).variant(name), seed=args.seed or 0)
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            with no_grad():
                model(Tensor(image))
        fwd = (time.perf_counter() - t0) / args.repeats
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            full_loss(model(Tensor(image)), labels).backward()
        step = (time.perf_counter() - t0) / args.repeats
        emit(variant=name, params=model.num_parameters(), forward_ms=fwd * 1e3, train_step_ms=step * 1e3)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global RNG seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ordnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="end-to-end gradient check of loss(ORDNet(image))")
    p.add_argument("--size", type=int, default=8, help="image side (multiple of 8)")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=None, help="sample at most this many coords per parameter")
    _branch_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", parents=[common], help="train on synthetic blobs")
    p.add_argument("--config", required=True, help="JSON document with TrainConfig fields")
    p.add_argument("--out", default=None, help="checkpoint directory")
    _data_flags(p, 50)
    _branch_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="multi-scale evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scales", type=float, nargs="+", default=list(DEFAULT_SCALES))
    p.add_argument("--flip", action="store_true")
    _data_flags(p, 50)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="correlation, FLOPs, gate maps")
    asub = p.add_subparsers(dest="analysis", required=True)

    a = asub.add_parser("corr", parents=[common], help="patch correlation matrix of label masks (CSV)")
    a.add_argument("mask_dir")
    a.add_argument("--patches", type=int, default=2)
    a.add_argument("--ignore-label", type=int, default=255)
    a.add_argument("--otns", default=None, help="also write the matrix as OTNS1")
    a.set_defaults(func=cmd_corr)

    a = asub.add_parser("flops", parents=[common], help="analytic attention multiply-adds")
    a.add_argument("--height", type=int, default=60)
    a.add_argument("--width", type=int, default=60)
    a.add_argument("--channels", type=int, default=2048)
    a.add_argument("--cq", type=int, default=256)
    a.add_argument("--ck", type=int, default=256)
    a.add_argument("--cv", type=int, default=512)
    a.add_argument("--patches", type=int, nargs="+", default=None)
    a.set_defaults(func=cmd_flops)

    a = asub.add_parser("attn-map", parents=[common], help="dump the RLR gate map as OTNS1")
    a.add_argument("--checkpoint", default=None)
    a.add_argument("--out", required=True)
    a.add_argument("--index", type=int, default=0, help="which synthetic image")
    a.add_argument("--rlr-direction", choices=("in", "out"), default=None)
    a.add_argument("--rlr-norm", choices=("sigmoid", "softmax"), default=None)
    _data_flags(a, 1)
    a.set_defaults(func=cmd_attn_map)

    p = sub.add_parser("bench", parents=[common], help="time forward / train step per ablation variant")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5)
    _branch_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.func in (cmd_gradcheck,):
        args.seed = 0
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OrdNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
