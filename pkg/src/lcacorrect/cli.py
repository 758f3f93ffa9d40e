"""Command-line front end.

Exit status: 0 success (including a skipped, already-corrected input),
1 on I/O, validation or lookup failure, 2 when recovery did not converge.
CSV output only ever goes to files named on the command line.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .imgio import (
    ImageMetadata,
    dump_metadata,
    image_depth,
    read_image,
    read_metadata,
    sidecar_path,
    write_image,
    write_metadata,
)
from .lensdb import (
    LensDatabase,
    LensParams,
    QueryWeights,
    db_append,
    db_interpolate,
    db_nearest,
    record_from,
)
from .planes import equalise_histogram
from .quantify import DEFAULT_WINDOW, quantify_pair, write_spectrogram
from .recover import (
    RecoverySettings,
    grid_minimum,
    recover_coefficients,
    sweep_error_surface,
    write_sweep,
    write_trace,
)
from .synth import CORPUS_BG, CORPUS_RG, ChequerSpec, apply_lca, write_corpus_item
from .warp import IDENTITY, LANCZOS3, Coefficients, Intrinsics, correct_image

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # bad flags are a usage error like any other: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ flag parsing


def _coeffs(text: str) -> Coefficients:
    try:
        return Coefficients.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(n: int):
    def parse(text: str):
        try:
            vals = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers") from None
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals

    return parse


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _weights(args) -> QueryWeights:
    return QueryWeights(*args.weights) if args.weights else QueryWeights()


def _intrinsics(shape, args, meta=None) -> Intrinsics:
    """--centre beats the sidecar's centre, which beats the geometric centre."""
    cx = cy = None
    if meta is not None:
        cx, cy = meta.centre_x, meta.centre_y
    if getattr(args, "centre", None):
        cx, cy = args.centre
    return Intrinsics.for_shape(shape, cx, cy)


def _load(path):
    path = Path(path)
    img = read_image(path)
    side = sidecar_path(path)
    if not side.exists():
        raise CliError(f"{path}: no metadata sidecar at {side}")
    meta = read_metadata(side)
    if not meta.matches(img):
        raise CliError(f"{side}: dimensions do not match {path}")
    return img, meta


def _fmt(c) -> str:
    return ",".join(f"{v:.9g}" for v in c)


def _write_corrected(img, meta: ImageMetadata, rg, bg, intr, src, out) -> None:
    fixed = correct_image(img, rg, bg, intr, LANCZOS3)
    write_image(fixed, out, depth=image_depth(src))
    meta.centre_x, meta.centre_y = intr.centre_x, intr.centre_y
    write_metadata(meta, rg, bg, sidecar_path(out))
    print(f"wrote {out}")


# ------------------------------------------------------------- subcommands


def cmd_recover(args) -> int:
    img, meta = _load(args.image)
    if meta.lca_corrected and not args.force:
        print(f"{args.image}: already LCA-corrected; skipping (use --force to redo)")
        return EXIT_OK
    if args.write_corrected and not args.out:
        raise CliError("--write-corrected needs --out")
    intr = _intrinsics(img.shape, args, meta)
    rg, bg = recover_coefficients(img, intr, RecoverySettings())
    if args.trace:
        write_trace(args.trace, rg, bg)
    for name, res in (("R-G", rg), ("B-G", bg)):
        state = "converged" if res.converged else "NOT converged"
        print(
            f"{name}: coeffs {_fmt(res.coeffs)}  error {res.final_error:.6g}  "
            f"evals {res.evaluations}  {state}"
        )
    if not (rg.converged and bg.converged) and not args.allow_nonconverged:
        print("recovery did not converge; nothing stored (see --allow-nonconverged)", file=sys.stderr)
        return EXIT_NOT_CONVERGED

    rec = record_from(meta, rg.coeffs, bg.coeffs, intr, img.width, img.height)
    db_append(LensDatabase(args.db), rec)
    print(f"appended record for {meta.lens_id} to {args.db}")
    if args.write_corrected:
        _write_corrected(img, meta, rg.coeffs, bg.coeffs, intr, args.image, args.out)
    return EXIT_OK


def cmd_correct(args) -> int:
    img, meta = _load(args.image)
    if meta.lca_corrected and not args.force:
        print(f"{args.image}: already LCA-corrected; skipping (use --force to redo)")
        return EXIT_OK
    store = LensDatabase(args.db)
    q = LensParams(meta.lens_id, meta.focal_length, meta.aperture, meta.focus_distance)
    intr = _intrinsics(img.shape, args, meta)
    if args.interpolate:
        rg, bg = db_interpolate(store, q, intr, _weights(args))
        print(f"interpolated: R-G {_fmt(rg)}  B-G {_fmt(bg)}")
    else:
        rec, dist = db_nearest(store, q, _weights(args))
        rg, bg = rec.rg, rec.bg
        p = rec.params
        print(
            f"nearest record: {p.focal_length:g} mm f/{p.aperture:g} focus {p.focus_distance:g} mm "
            f"(distance {dist:.4g}): R-G {_fmt(rg)}  B-G {_fmt(bg)}"
        )
    _write_corrected(img, meta, rg, bg, intr, args.image, args.out)
    return EXIT_OK


def cmd_distort(args) -> int:
    src = Path(args.image)
    img = read_image(src)
    side = sidecar_path(src)
    meta = read_metadata(side) if side.exists() else None
    intr = _intrinsics(img.shape, args, meta)
    out = apply_lca(img, args.coeffs_rg, args.coeffs_bg, intr)
    write_image(out, args.out, depth=image_depth(src))
    if meta is not None:
        meta.extra = dict(meta.extra)
        meta.extra["truth"] = {"coeffs_rg": list(args.coeffs_rg), "coeffs_bg": list(args.coeffs_bg)}
        dump_metadata(meta, sidecar_path(args.out))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_quantify(args) -> int:
    before = read_image(args.before)
    after = read_image(args.after)
    spec = quantify_pair(before, after, args.window)
    write_spectrogram(args.out, spec)
    print(f"{len(spec)} bins written to {args.out}; integral {spec.integral():.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    img = read_image(args.image)
    side = sidecar_path(args.image)
    meta = read_metadata(side) if side.exists() else None
    intr = _intrinsics(img.shape, args, meta)
    s = RecoverySettings()
    grid_a = np.linspace(s.bounds_a[0], s.bounds_a[1], args.steps)
    grid_b = np.linspace(s.bounds_bcd[0], s.bounds_bcd[1], args.steps)
    work = img.r if args.plane == "rg" else img.b
    grid = sweep_error_surface(
        equalise_histogram(work), equalise_histogram(img.g), intr, grid_a, grid_b
    )
    write_sweep(args.out, grid_a, grid_b, grid)
    (i, j), unique = grid_minimum(grid)
    print(
        f"minimum a={grid_a[i]:.6g} b={grid_b[j]:.6g} error {grid[i, j]:.6g}"
        + ("" if unique else " (not unique)")
    )
    return EXIT_OK


def cmd_db(args) -> int:
    store = LensDatabase(args.db)
    if args.action == "list":
        n = 0
        for rec in store.records():
            p = rec.params
            print(
                f"{rec.created_at}  {p.lens_id}  {p.focal_length:g} mm  f/{p.aperture:g}  "
                f"focus {p.focus_distance:g} mm  R-G {_fmt(rec.rg)}  B-G {_fmt(rec.bg)}"
            )
            n += 1
        print(f"{n} record(s)")
        return EXIT_OK

    if not all(v is not None for v in (args.lens, args.focal, args.aperture, args.focus)):
        raise CliError("db query needs --lens, --focal, --aperture and --focus")
    q = LensParams(args.lens, args.focal, args.aperture, args.focus)
    if args.interpolate:
        w, h = args.size
        rg, bg = db_interpolate(store, q, Intrinsics.for_shape((h, w)), _weights(args))
        print(f"R-G {_fmt(rg)}  B-G {_fmt(bg)}")
    else:
        rec, dist = db_nearest(store, q, _weights(args))
        print(f"distance {dist:.6g}  R-G {_fmt(rec.rg)}  B-G {_fmt(rec.bg)}  ({rec.created_at})")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = ChequerSpec(args.width, args.height, args.cell)
    path = write_corpus_item(
        args.out_dir,
        args.name,
        spec,
        args.coeffs_rg,
        args.coeffs_bg,
        sensor=args.sensor,
        lens_id=args.lens_id,
    )
    print(f"wrote {path}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lcacorrect", description="Lateral chromatic aberration recovery and correction.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    centre = argparse.ArgumentParser(add_help=False)
    centre.add_argument("--centre", type=_floats(2), metavar="X,Y",
                        help="optical centre in pixels (default: sidecar, else image centre)")
    weights = argparse.ArgumentParser(add_help=False)
    weights.add_argument("--weights", type=_floats(3), metavar="WF,WA,WD",
                         help="log2 distance weights for focal length, aperture, focus distance")

    r = sub.add_parser("recover", parents=[centre], help="recover coefficients and store them")
    r.add_argument("image")
    r.add_argument("--db", required=True)
    r.add_argument("--trace", metavar="PATH", help="CSV with one row per objective evaluation")
    r.add_argument("--force", action="store_true", help="process even if already corrected")
    r.add_argument("--write-corrected", action="store_true")
    r.add_argument("--out", help="corrected image path (with --write-corrected)")
    r.add_argument("--allow-nonconverged", action="store_true")
    r.set_defaults(func=cmd_recover)

    c = sub.add_parser("correct", parents=[centre, weights], help="correct an image from the database")
    c.add_argument("image")
    c.add_argument("--db", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--interpolate", action="store_true", help="interpolate between bracketing records")
    c.add_argument("--force", action="store_true")
    c.set_defaults(func=cmd_correct)

    d = sub.add_parser("distort", parents=[centre], help="apply known lateral CA to an image")
    d.add_argument("image")
    d.add_argument("--out", required=True)
    d.add_argument("--coeffs-rg", type=_coeffs, default=IDENTITY, metavar="A,B,C,D")
    d.add_argument("--coeffs-bg", type=_coeffs, default=IDENTITY, metavar="A,B,C,D")
    d.set_defaults(func=cmd_distort)

    q = sub.add_parser("quantify", help="spatial-frequency change from BEFORE to AFTER")
    q.add_argument("before")
    q.add_argument("after")
    q.add_argument("--out", required=True, help="spectrogram CSV")
    q.add_argument("--window", type=_positive_int, default=DEFAULT_WINDOW)
    q.set_defaults(func=cmd_quantify)

    s = sub.add_parser("sweep", parents=[centre], help="error over an (a, b) grid with c = d = 0")
    s.add_argument("image")
    s.add_argument("--out", required=True, help="CSV a,b,error")
    s.add_argument("--steps", type=_positive_int, default=41)
    s.add_argument("--plane", choices=("rg", "bg"), default="rg")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("db", parents=[weights], help="inspect the coefficient database")
    b.add_argument("action", choices=("list", "query"))
    b.add_argument("--db", required=True)
    b.add_argument("--lens")
    b.add_argument("--focal", type=float)
    b.add_argument("--aperture", type=float)
    b.add_argument("--focus", type=float)
    b.add_argument("--interpolate", action="store_true")
    b.add_argument("--size", type=_floats(2), default=(1024, 768), metavar="W,H",
                   help="image size for --interpolate sampling")
    b.set_defaults(func=cmd_db)

    y = sub.add_parser("synth", help="write a distorted chequerboard with ground truth")
    y.add_argument("out_dir")
    y.add_argument("--name", default="chequer")
    y.add_argument("--width", type=_positive_int, default=1024)
    y.add_argument("--height", type=_positive_int, default=768)
    y.add_argument("--cell", type=_positive_int, default=32)
    y.add_argument("--coeffs-rg", type=_coeffs, default=CORPUS_RG, metavar="A,B,C,D")
    y.add_argument("--coeffs-bg", type=_coeffs, default=CORPUS_BG, metavar="A,B,C,D")
    y.add_argument("--sensor", action="store_true", help="pass through Bayer mosaic and demosaic")
    y.add_argument("--lens-id", default="synthetic-lens")
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, LookupError) as exc:
        print(f"lcacorrect: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
