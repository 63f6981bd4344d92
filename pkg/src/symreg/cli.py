"""Command-line entry point: ``symreg <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .evaluate import dice, fold_report, synth_pair
from .loss import LossWeights
from .registrar import RegistrationConfig, register
from .volume import LabelMap, Volume, load_field, load_volume, save_field, save_volume
from .warp import warp_image, warp_labels

log = logging.getLogger("symreg")

FIELD_NAMES = ("phi_xy_half", "phi_yx_half", "phi_xy", "phi_yx")


class CLIError(Exception):
    pass


def _dims(text):
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NX,NY,NZ, got {text!r}")
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive sizes, got {text!r}")
    return dims


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _load_scalar(path):
    vol = load_volume(path)
    if not isinstance(vol, Volume):
        raise CLIError(f"{path}: expected an f32 intensity volume")
    return vol


def _load_labels(path):
    lm = load_volume(path)
    if not isinstance(lm, LabelMap):
        raise CLIError(f"{path}: expected a u16 label map")
    return lm


def cmd_register(args):
    X, Y = _load_scalar(args.fixed), _load_scalar(args.moving)
    if X.dims != Y.dims:
        raise CLIError(f"dims mismatch: {X.dims} vs {Y.dims}")
    base = RegistrationConfig.preset(args.preset)
    w = base.weights
    weights = LossWeights(
        jdet=w.jdet if args.lambda1 is None else args.lambda1,
        reg=w.reg if args.lambda2 is None else args.lambda2,
        mag=w.mag if args.lambda3 is None else args.lambda3,
    )
    overrides = {
        "max_iters": args.steps,
        "step_size": args.step_size,
        "momentum": args.momentum,
        "T": args.T,
        "c": args.c,
        "seed": args.seed,
    }
    cfg = RegistrationConfig.preset(
        args.preset, weights=weights, **{k: v for k, v in overrides.items() if v is not None}
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss.jsonl", "w") as fh:
        result = register(X, Y, cfg, callback=lambda it, b: fh.write(b.to_json(iteration=it) + "\n"))
    for name in FIELD_NAMES:
        save_field(getattr(result, name), out / f"{name}.json", X.spacing)
    save_field(result.v_xy, out / "v_xy.json", X.spacing)
    save_field(result.v_yx, out / "v_yx.json", X.spacing)
    summary = result.summary()
    summary["config"] = {
        "preset": args.preset,
        "T": cfg.T,
        "c": cfg.c,
        "lambda1": cfg.weights.jdet,
        "lambda2": cfg.weights.reg,
        "lambda3": cfg.weights.mag,
        "step_size": cfg.step_size,
        "momentum": cfg.momentum,
        "max_iters": cfg.max_iters,
        "seed": cfg.seed,
    }
    if not args.no_figures:
        from . import plotting

        figs = out / "figures"
        plotting.plot_loss_history(result.history, figs / "loss.png")
        plotting.plot_registration(
            X, Y, warp_image(X, result.phi_xy), warp_image(Y, result.phi_yx), result.phi_xy, figs / "overview.png"
        )
        summary["figures"] = ["figures/loss.png", "figures/overview.png"]
    _write_json(out / "summary.json", summary)
    print(json.dumps({"runtime_seconds": result.runtime, "fold_counts": result.folds}))


def cmd_warp(args):
    u, _ = load_field(args.field)
    if args.labels:
        lm = _load_labels(args.image)
        out = warp_labels(lm, u)
    else:
        out = warp_image(_load_scalar(args.image), u)
    save_volume(out, args.out)


def cmd_jacobian(args):
    u, _ = load_field(args.field)
    report = fold_report(u)
    _write_json(args.out, report.to_dict())
    if args.figure:
        from . import plotting

        plotting.plot_jacobian(u, args.figure)
    print(json.dumps(report.to_dict()))


def cmd_dice(args):
    a, b = _load_labels(args.a), _load_labels(args.b)
    if a.dims != b.dims:
        raise CLIError(f"dims mismatch: {a.dims} vs {b.dims}")
    report = dice(a, b)
    _write_json(args.out, report.to_dict())
    print(json.dumps({"mean": report.mean}))


def cmd_synth(args):
    pair = synth_pair(args.seed, args.dims, args.smoothness, args.amplitude)
    out = Path(args.out)
    save_volume(pair.X, out / "X.json")
    save_volume(pair.Y, out / "Y.json")
    save_volume(pair.labels_x, out / "X_labels.json")
    save_volume(pair.labels_y, out / "Y_labels.json")
    save_field(pair.v_true, out / "v_true.json")
    save_field(pair.u_true, out / "u_true.json")


def write_pgm(path, img2d):
    """8-bit binary PGM; ``img2d[i, j]`` becomes column ``i`` of row ``j``."""
    img2d = np.asarray(img2d, dtype=np.float64)
    lo, hi = img2d.min(), img2d.max()
    scaled = np.zeros_like(img2d) if hi == lo else (img2d - lo) / (hi - lo) * 255.0
    pix = np.round(scaled).astype(np.uint8).T
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode())
        fh.write(np.ascontiguousarray(pix).tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`, returning ``[i, j]``-indexed pixels."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    width, height = int(parts[1]), int(parts[2])
    pix = np.frombuffer(parts[4][: width * height], dtype=np.uint8).reshape(height, width)
    return pix.T


def cmd_export_slice(args):
    vol = load_volume(args.volume)
    axis = "xyz".index(args.axis)
    n = vol.dims[axis]
    index = n // 2 if args.index is None else args.index
    if not 0 <= index < n:
        raise CLIError(f"slice index {index} outside [0, {n - 1}]")
    write_pgm(args.out, np.take(np.asarray(vol.data, dtype=np.float64), index, axis=axis))


def build_parser():
    p = argparse.ArgumentParser(prog="symreg", description="Symmetric diffeomorphic registration of 3D volumes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="register a pair of volumes")
    r.add_argument("--fixed", required=True)
    r.add_argument("--moving", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--preset", choices=("direct", "paper"), default="direct")
    r.add_argument("--lambda1", type=float)
    r.add_argument("--lambda2", type=float)
    r.add_argument("--lambda3", type=float)
    r.add_argument("--steps", type=int, help="maximum iterations")
    r.add_argument("--step-size", type=float)
    r.add_argument("--momentum", type=float)
    r.add_argument("--T", type=int)
    r.add_argument("--c", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_register)

    w = sub.add_parser("warp", help="warp a volume or label map with a field")
    w.add_argument("--image", required=True)
    w.add_argument("--field", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--labels", action="store_true", help="nearest-neighbour warp of a u16 label map")
    w.set_defaults(func=cmd_warp)

    j = sub.add_parser("jacobian", help="fold report of a deformation field")
    j.add_argument("--field", required=True)
    j.add_argument("--out", required=True)
    j.add_argument("--figure", help="also render the mid-slice determinant map to this image file")
    j.set_defaults(func=cmd_jacobian)

    d = sub.add_parser("dice", help="per-label Dice overlap of two label maps")
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dice)

    s = sub.add_parser("synth", help="write a synthetic pair with known deformation")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dims", type=_dims, default=(32, 32, 32))
    s.add_argument("--amplitude", type=float, default=3.0)
    s.add_argument("--smoothness", type=float, default=4.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("export-slice", help="write one slice of a volume as PGM")
    e.add_argument("--volume", required=True)
    e.add_argument("--axis", choices=("x", "y", "z"), default="z")
    e.add_argument("--index", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_slice)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CLIError, ValueError, OSError, FloatingPointError) as exc:
        msg = " ".join(str(exc).split())
        print(f"symreg {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
