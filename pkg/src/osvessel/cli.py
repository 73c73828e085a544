"""Command line driver.

Exit codes: 0 success, 1 usage or invalid parameters, 2 I/O failure
(including partial dataset failures), 3 numerical failure such as an
ill-posed reconstruction.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .ndfield import THREADS_ENV, angular_spectral_op, dft2, read_field, write_field
from .ostransform import (
    IllPosedReconstruction,
    OrientationScore,
    ScaleOrientationScore,
    os_forward,
    os_reconstruct_exact,
    sos_forward,
    sos_reconstruct,
)
from .phantoms import KINDS, Phantom, make_phantom
from .rasters import load_mask, montage, read_input, save_mask, save_png
from .se2ops import frame_hessian_slice, sym3_eigvalsh
from .segmentation import mask_from_vesselness, vesselness_map
from .vesselness import _smoothed_layer
from .wavelets import CakeParams, MultiScaleParams, build_cake_kernels, build_ms_kernels

log = logging.getLogger("osvessel")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def _t_grid(text):
    """``0.05`` or ``0.01,0.05`` or ``start:stop:step`` (stop inclusive)."""
    if text.count(":") == 2:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise argparse.ArgumentTypeError("step must be > 0")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + k * step, 10) for k in range(n))
    return _floats(text)


def _config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    return cfg


def _vparams(args, cfg):
    v = cfg.vesselness
    over = {}
    for attr, key in (("variant", "variant"), ("scales", "scales"), ("c_beta", "c_beta"),
                      ("n_orient", "n_orient"), ("sigma1", "sigma1"),
                      ("sigma2_factor", "sigma2_factor"), ("polarity", "polarity")):
        val = getattr(args, attr, None)
        if val is not None:
            over[key] = val
    return replace(v, **over)


def _sparams(args, cfg):
    s = cfg.segmentation
    over = {k: getattr(args, k) for k in ("gamma", "t", "tau", "nu") if getattr(args, k, None) is not None}
    return replace(s, **over)


def _ms_params(scales, cfg):
    m = cfg.multiscale
    n_rho = max(m.n_rho, len(scales))
    return MultiScaleParams.from_scales(scales, n_rho=n_rho, window_sx=m.window_sx,
                                        window_sy=m.window_sy, use_window=m.use_window)


def _cake(cfg, n_orient=None):
    return replace(cfg.cake, n_orient=n_orient) if n_orient else cfg.cake


def _out(path):
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    return p


# -- subcommands ------------------------------------------------------------


def cmd_phantom(args, cfg):
    p = Phantom(kind=args.kind, shape=tuple(args.shape), width=args.width,
                contrast=args.contrast, background=args.background, noise=args.noise,
                seed=args.seed, angle=args.angle, crossing_angle=args.crossing_angle,
                branch_angle=args.branch_angle, radius=args.radius, sigma=args.sigma)
    img = make_phantom(p)
    out = _out(args.output)
    if out.suffix.lower() == ".ndf":
        write_field(out, img, meta={"phantom": asdict(p)})
    else:
        save_png(out, img, bits=16)
    print(f"wrote {out} ({p.kind}, {p.shape[0]}x{p.shape[1]})")
    return EXIT_OK


def _build_kernels(multiscale, scales, cfg, n_orient, width, height):
    cake = _cake(cfg, n_orient)
    if multiscale:
        return build_ms_kernels(_ms_params(scales, cfg), cake, width, height)
    return build_cake_kernels(cake, width, height)


def cmd_kernels(args, cfg):
    scales = args.scales or cfg.multiscale.scales
    ks = _build_kernels(args.multiscale, scales, cfg, args.n_orient, args.width, args.height)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    meta = {"kind": ks.kind, "params": ks.params}
    write_field(outdir / "filters.ndf", ks.bank.astype(float), ks.scales, meta=meta)
    spatial = np.fft.fftshift(np.fft.ifft2(ks.layer(0)).real, axes=(-2, -1))
    save_png(outdir / "kernels_layer0.png", montage(spatial) * 0.5 + 0.5, bits=8)
    summary = {"kind": ks.kind, "n_layers": ks.n_layers, "n_orient": ks.n_orient,
               "scales": [float(a) for a in ks.scales]}
    if ks.is_multiscale:
        rec = ks.recombination_map()
        summary["recombination_max_dev"] = float(np.max(np.abs(rec - 1)))
        save_png(outdir / "normalization.png", ks.normalization, bits=16, normalize=True)
    else:
        rec = ks.recombination_map()
        rho_hat = ks.params["cake"]["inflection"] * 0.5
        ky = np.fft.fftfreq(args.height)[:, None]
        kx = np.fft.fftfreq(args.width)[None, :]
        band = np.hypot(ky, kx) <= rho_hat
        summary["recombination_max_dev_in_band"] = float(np.max(np.abs(rec[band] - 1)))
        summary["stability_min_in_band"] = float(np.min(ks.stability[band]))
        save_png(outdir / "stability.png", ks.stability, bits=16, normalize=True)
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_score(args, cfg):
    f = read_input(args.input, args.channel or cfg.io.channel)
    scales = args.scales or cfg.multiscale.scales
    ks = _build_kernels(args.multiscale, scales, cfg, args.n_orient, f.shape[1], f.shape[0])
    t0 = time.perf_counter()
    score = sos_forward(f, ks) if ks.is_multiscale else os_forward(f, ks)
    meta = {"kind": ks.kind, "params": ks.params}
    write_field(_out(args.output), score.data, ks.scales, meta=meta)
    print(f"wrote {args.output} shape={score.data.shape} in {time.perf_counter() - t0:.2f}s")
    return EXIT_OK


def _kernels_from_header(header):
    meta = header.get("meta") or {}
    params = meta.get("params")
    if not params or "cake" not in params:
        raise UsageError("score file lacks kernel parameters; write it with `score`")
    cake = CakeParams(**params["cake"])
    w, h = header["width"], header["height"]
    if meta.get("kind") == "multiscale":
        return build_ms_kernels(MultiScaleParams(**params["multiscale"]), cake, w, h)
    return build_cake_kernels(cake, w, h)


def cmd_reconstruct(args, cfg):
    data, header = read_field(args.input)
    ks = _kernels_from_header(header)
    if ks.is_multiscale:
        rec = sos_reconstruct(ScaleOrientationScore(data, ks))
    else:
        rec = os_reconstruct_exact(OrientationScore(data, ks))
    out = _out(args.output)
    if out.suffix.lower() == ".ndf":
        write_field(out, rec)
    else:
        save_png(out, rec, bits=16)
    msg = f"wrote {out}"
    if args.reference:
        ref = read_input(args.reference, args.channel or cfg.io.channel)
        if ref.shape != rec.shape:
            raise UsageError("reference image size differs from the score")
        err = float(np.linalg.norm(rec - ref) / np.linalg.norm(ref))
        msg += f"; relative L2 error {err:.3e}"
    print(msg)
    return EXIT_OK


def cmd_vesselness(args, cfg):
    f = read_input(args.input, args.channel or cfg.io.channel)
    vp = _vparams(args, cfg)
    t0 = time.perf_counter()
    kernels = None
    if vp.variant != "frangi2d":
        ms = _ms_params(vp.scales, cfg)
        kernels = build_ms_kernels(ms, _cake(cfg, vp.n_orient), f.shape[1], f.shape[0])
    V = vesselness_map(f, vp, kernels)
    elapsed = time.perf_counter() - t0
    out = _out(args.output)
    save_png(out, V, bits=16)
    field_path = Path(args.field) if args.field else out.with_suffix(".ndf")
    write_field(_out(field_path), V, vp.scales, meta={"params": repr(vp)})
    if args.dump_eigenvalues:
        if vp.variant != "gauge":
            raise UsageError("--dump-eigenvalues needs --variant gauge")
        _dump_eigenvalues(f, vp, kernels, Path(args.dump_eigenvalues))
    print(f"wrote {out} and {field_path} ({vp.variant}) in {elapsed:.2f}s")
    return EXIT_OK


def _dump_eigenvalues(f, vp, kernels, outdir):
    """Write the sorted gauge eigenvalues of every active layer, ``(3, n_orient, H, W)`` each."""
    outdir.mkdir(parents=True, exist_ok=True)
    src = -f if vp.polarity == "bright_vessels" else f
    spec = dft2(src)
    for i, a in enumerate(kernels.scales):
        se2 = vp.se2(a)
        vs = _smoothed_layer(spec, kernels, i, se2.sigma_s, np.float64)
        V = angular_spectral_op(vs, se2.sigma_theta, 0)
        Vt = angular_spectral_op(vs, se2.sigma_theta, 1)
        Vtt = angular_spectral_op(vs, se2.sigma_theta, 2)
        n = V.shape[0]
        lam = np.empty((3,) + V.shape)
        for j in range(n):
            hs = frame_hessian_slice(V[j], Vt[j], Vtt[j], j * np.pi / n, se2.beta)
            ev = sym3_eigvalsh(hs["xixi"], hs["xieta"], hs["xitheta"],
                               hs["etaeta"], hs["etatheta"], hs["thetatheta"])
            lam[:, j] = np.moveaxis(ev, -1, 0)
        write_field(outdir / f"eigenvalues_layer{i}.ndf", lam, [float(a)],
                    meta={"axes": "eigen index (|l1|<=|l2|<=|l3|), theta, y, x", "scale": float(a)})


def cmd_segment(args, cfg):
    sp = _sparams(args, cfg)
    src = Path(args.input)
    if src.suffix.lower() == ".ndf":
        V, header = read_field(src)
        if V.ndim != 2 or np.iscomplexobj(V):
            raise UsageError("an .ndf input must be a vesselness map")
    else:
        f = read_input(src, args.channel or cfg.io.channel)
        vp = _vparams(args, cfg)
        kernels = None
        if vp.variant != "frangi2d":
            kernels = build_ms_kernels(_ms_params(vp.scales, cfg), _cake(cfg, vp.n_orient),
                                       f.shape[1], f.shape[0])
        V = vesselness_map(f, vp, kernels)
    mask = mask_from_vesselness(V, sp)
    if args.fov:
        fov = load_mask(args.fov)
        if fov.shape != mask.shape:
            raise UsageError("FOV mask size differs from the image")
        mask &= fov
    out = _out(args.output)
    save_mask(out, mask)
    print(f"wrote {out}: {int(mask.sum())} vessel pixels")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    from .evaluation import GROUPS, ingest_hrf, sweep, write_csv

    root = args.hrf_root or cfg.io.input
    if not root:
        raise UsageError("--hrf-root is required")
    records = ingest_hrf(root)
    if args.group:
        wanted = {GROUPS.get(g, g) for g in args.group}
        records = [r for r in records if r.group in wanted]
    if args.images:
        keep = {s.lower() for s in args.images}
        records = [r for r in records if r.image_id.lower() in keep]
    if args.limit:
        records = records[:args.limit]
    if not records:
        print("no records to evaluate", file=sys.stderr)
        return EXIT_IO
    vp = _vparams(args, cfg)
    sp = _sparams(args, cfg)
    grid = args.t_grid or (args.t if args.t is not None else (sp.t,))
    if isinstance(grid, float):
        grid = (grid,)
    rows, errors = sweep(records, grid, vp, sp, cache_dir=args.cache or cfg.io.cache_dir,
                         channel=args.channel or cfg.io.channel)
    out = _out(args.output)
    write_csv(rows, out)
    for row in rows:
        print(f"{row['group']:>22} t={row['t']:.3f}  Se={row['se_mean']:.3f}  "
              f"Sp={row['sp_mean']:.3f}  Acc={row['acc_mean']:.3f}  n={row['n_images']}")
    for image_id, msg in errors:
        print(f"FAILED {image_id}: {msg}", file=sys.stderr)
    print(f"wrote {out}")
    return EXIT_IO if errors else EXIT_OK


def cmd_render(args, cfg):
    data, header = read_field(args.input)
    if data.ndim == 4:
        data = data[args.layer]
    if data.ndim == 2:
        data = data[None]
    part = {"real": np.real, "imag": np.imag, "abs": np.abs}[args.part]
    tiles = part(data)
    img = montage(tiles, columns=args.columns)
    if args.part == "abs" or not np.any(tiles < 0):
        img = np.clip(img, 0, 1)
    else:
        img = 0.5 * img + 0.5
    out = _out(args.output)
    save_png(out, img, bits=8)
    print(f"wrote {out} ({tiles.shape[0]} tiles)")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _add_vesselness_flags(p):
    p.add_argument("--variant", choices=["gauge", "xi-eta", "xi_eta", "frangi", "frangi2d"])
    p.add_argument("--scales", type=_floats, help="scale list in px, e.g. '1.5,2.4,3.8,6.0,9.5'")
    p.add_argument("--c-beta", dest="c_beta", type=float)
    p.add_argument("--n-orient", dest="n_orient", type=int)
    p.add_argument("--sigma1", type=float)
    p.add_argument("--sigma2-factor", dest="sigma2_factor", type=float)
    p.add_argument("--polarity", choices=["dark", "bright", "dark_vessels", "bright_vessels"])


def _add_seg_flags(p):
    p.add_argument("--t", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=int)
    p.add_argument("--nu", type=float)


def build_parser():
    parser = _Parser(prog="osvessel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="pipeline configuration JSON")
    parser.add_argument("--threads", type=int, help=f"FFT worker threads (or set {THREADS_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="write a synthetic vessel image")
    p.add_argument("--kind", choices=KINDS, default="x_crossing")
    p.add_argument("--shape", type=int, nargs=2, default=(256, 256), metavar=("H", "W"))
    p.add_argument("--width", type=float, default=4.0)
    p.add_argument("--contrast", type=float, default=0.5)
    p.add_argument("--background", type=float, default=0.75)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--angle", type=float, default=0.0)
    p.add_argument("--crossing-angle", dest="crossing_angle", type=float, default=90.0)
    p.add_argument("--branch-angle", dest="branch_angle", type=float, default=30.0)
    p.add_argument("--radius", type=float)
    p.add_argument("--sigma", type=float, default=3.8)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("kernels", help="build a wavelet bank and write filters and maps")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--n-orient", dest="n_orient", type=int)
    p.add_argument("--multiscale", action="store_true")
    p.add_argument("--scales", type=_floats)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("score", help="forward (scale-)orientation score transform")
    p.add_argument("input")
    p.add_argument("--multiscale", action="store_true")
    p.add_argument("--scales", type=_floats)
    p.add_argument("--n-orient", dest="n_orient", type=int)
    p.add_argument("--channel", choices=["red", "green", "blue", "gray"])
    p.add_argument("-o", "--output", required=True, help="ndfield dump")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("reconstruct", help="invert a score written by `score`")
    p.add_argument("input")
    p.add_argument("--reference", help="original image; prints the relative L2 error")
    p.add_argument("--channel", choices=["red", "green", "blue", "gray"])
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("vesselness", help="vesselness map (16-bit PNG + ndfield dump)")
    p.add_argument("input")
    _add_vesselness_flags(p)
    p.add_argument("--channel", choices=["red", "green", "blue", "gray"])
    p.add_argument("--field", help="ndfield dump path (default: output with .ndf)")
    p.add_argument("--dump-eigenvalues", dest="dump_eigenvalues", metavar="DIR",
                   help="write gauge eigenvalue fields per scale")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_vesselness)

    p = sub.add_parser("segment", help="binary vessel mask (1-bit PNG)")
    p.add_argument("input", help="image, or a vesselness .ndf dump")
    _add_seg_flags(p)
    _add_vesselness_flags(p)
    p.add_argument("--channel", choices=["red", "green", "blue", "gray"])
    p.add_argument("--fov", help="field-of-view mask applied to the output")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="threshold sweep against HRF ground truth (CSV)")
    p.add_argument("--hrf-root", dest="hrf_root")
    p.add_argument("--group", action="append",
                   help="healthy/h, diabetic_retinopathy/dr, glaucoma/g (repeatable)")
    p.add_argument("--images", nargs="+", help="image ids such as 01_h")
    p.add_argument("--limit", type=int)
    p.add_argument("--t-grid", dest="t_grid", type=_t_grid, help="'0.05', '0.01,0.05' or '0.01:0.2:0.01'")
    _add_seg_flags(p)
    _add_vesselness_flags(p)
    p.add_argument("--channel", choices=["red", "green", "blue", "gray"])
    p.add_argument("--cache", help="directory for cached vesselness dumps")
    p.add_argument("-o", "--output", required=True, help="CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="PNG montage of an ndfield dump, one tile per orientation")
    p.add_argument("input")
    p.add_argument("--layer", type=int, default=0, help="scale layer of a 4D dump")
    p.add_argument("--part", choices=["real", "imag", "abs"], default="real")
    p.add_argument("--columns", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        os.environ[THREADS_ENV] = str(args.threads)
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except IllPosedReconstruction as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
