"""``strokelocus`` command line: register, analyze, fuse, metrics, loss, render, pipeline.

Exit codes: 0 success, 1 internal error, 2 input/format error,
3 registration degeneracy, 4 empty lesion. Logs go to stderr; results go to
files under ``--out-dir`` plus a final summary line on stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import InputError, StrokeLocusError
from .fusion import FusionConfig, fuse
from .metrics import format_mean_std, pgan_loss, slicewise
from .nifti_io import DT_FLOAT32, DT_UINT8, Volume3D, read_nifti, write_nifti
from .registration import (
    Cost,
    RegistrationConfig,
    load_transform,
    register_rigid,
    save_transform,
)
from .render import OverlaySpec, render_overlay, save_png
from .territory import analyze_lesion, load_atlas
from .volume_core import Interpolation, apply_transform, grid_center, grid_of, resample, same_grid

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("strokelocus")

TRANSFORM_JSON = "transform.json"
TRANSFORM_MAT = "transform.mat"
REPORT_JSON = "report.json"
LESION_ATLAS = "lesion_in_atlas.nii.gz"
FUSED = "fused.nii.gz"
OVERLAY = "overlay.png"
METRICS_JSON = "metrics.json"


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise InputError(f"missing required option(s): {flags}")


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {p}")
    return p


def _read(path) -> Volume3D:
    return read_nifti(_existing(path))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _reg_config(args) -> RegistrationConfig:
    return RegistrationConfig(cost=Cost(args.cost), pyramid_levels=int(args.levels))


def _parse_slices(text):
    if text is None or str(text).strip().lower() == "auto":
        return "auto"
    if isinstance(text, (list, tuple)):
        return [int(z) for z in text]
    try:
        return [int(z) for z in str(text).split(",") if z.strip()]
    except ValueError as exc:
        raise InputError(f"--slices must be 'auto' or comma-separated integers, got {text!r}") from exc


def cmd_register(args) -> int:
    _require(args, "fixed", "moving")
    fixed, moving = _read(args.fixed), _read(args.moving)
    out = _out_dir(args)
    result = register_rigid(fixed, moving, _reg_config(args))
    save_transform(result.transform, out / TRANSFORM_JSON, out / TRANSFORM_MAT, grid_center(moving))
    log.info("final cost %.6g, iterations %s, converged=%s", result.final_cost, result.iterations_used, result.converged)
    print(json.dumps(result.transform.to_json()))
    return 0


def cmd_analyze(args) -> int:
    _require(args, "mri", "lesion", "atlas", "template")
    mri, lesion, template = _read(args.mri), _read(args.lesion), _read(args.template)
    atlas = load_atlas(_existing(args.atlas), _existing(args.atlas_names) if args.atlas_names else None)
    out = _out_dir(args)
    transform = None
    if getattr(args, "transform", None):
        transform = load_transform(_existing(args.transform), grid_center(mri))
    report = analyze_lesion(lesion, mri, atlas, template, _reg_config(args), transform=transform)
    if transform is None:
        save_transform(report.transform_used, out / TRANSFORM_JSON, out / TRANSFORM_MAT, grid_center(mri))
    lesion_atlas = apply_transform(lesion, report.transform_used, grid_of(atlas.labels))
    write_nifti(lesion_atlas, out / LESION_ATLAS, DT_UINT8, "lesion in atlas space")
    (out / REPORT_JSON).write_text(json.dumps(report.to_json(), indent=2) + "\n")
    if report.advisory_runner_up is not None:
        log.warning(
            "dominant territory %s has no vessel class; advisory runner-up %s -> %s",
            report.dominant.name,
            report.advisory_runner_up.name,
            report.advisory_vessel.value,
        )
    print(report.summary_line())
    return 0


def cmd_fuse(args) -> int:
    _require(args, "mri", "mra")
    mri, mra = _read(args.mri), _read(args.mra)
    if args.reslice and not same_grid(mri, mra):
        log.info("reslicing MRA onto the MRI grid")
        mra = resample(mra, grid_of(mri), Interpolation.TRILINEAR, 0.0)
    cfg = FusionConfig(args.mode, normalize_inputs=not args.no_normalize, clip_output=not args.no_clip)
    fused = fuse(mri, mra, cfg)
    out = _out_dir(args)
    write_nifti(fused, out / FUSED, DT_FLOAT32)
    print(f"FUSED={out / FUSED} MODE={cfg.mode.value}")
    return 0


def cmd_metrics(args) -> int:
    _require(args, "reference", "test", "peak")
    ref, test = _read(args.reference), _read(args.test)
    if not same_grid(ref, test):
        raise InputError("reference and test volumes do not share a grid")
    psnrs, ssims = slicewise(ref.data, test.data, float(args.peak), args.dynamic_range)
    if args.out_dir:
        out = _out_dir(args)
        payload = {
            "axis": "z",
            "peak": float(args.peak),
            "psnr": [None if np.isinf(p) else p for p in psnrs],
            "ssim": ssims,
        }
        (out / METRICS_JSON).write_text(json.dumps(payload, indent=2) + "\n")
    print(format_mean_std("PSNR", psnrs))
    print(format_mean_std("SSIM", ssims))
    return 0


def cmd_loss(args) -> int:
    _require(args, "d_real", "d_fake", "generated", "target", "feat_generated", "feat_target", "lambda_l1", "lambda_perc")

    def load(name):
        try:
            return np.load(_existing(getattr(args, name)))
        except ValueError as exc:
            raise InputError(f"--{name.replace('_', '-')}: not a .npy array") from exc

    bd = pgan_loss(
        load("d_real"),
        load("d_fake"),
        load("generated"),
        load("target"),
        load("feat_generated"),
        load("feat_target"),
        float(args.lambda_l1),
        float(args.lambda_perc),
    )
    print(json.dumps(bd.to_json()))
    return 0


def _render_to(out: Path, base, atlas, lesion, args) -> Path:
    spec = OverlaySpec(
        base=base,
        atlas=atlas,
        lesion=lesion,
        slices=_parse_slices(args.slices),
        columns=int(args.columns),
        atlas_alpha=float(args.atlas_alpha),
    )
    save_png(render_overlay(spec), out / OVERLAY)
    return out / OVERLAY


def cmd_render(args) -> int:
    _require(args, "base")
    base = _read(args.base)
    atlas = load_atlas(_existing(args.atlas), _existing(args.atlas_names) if args.atlas_names else None) if args.atlas else None
    lesion = _read(args.lesion) if args.lesion else None
    path = _render_to(_out_dir(args), base, atlas, lesion, args)
    print(f"OVERLAY={path}")
    return 0


def cmd_pipeline(args) -> int:
    """register -> analyze -> fuse (when --mra is given) -> render."""
    _require(args, "mri", "lesion", "atlas", "template")
    mri, lesion, template = _read(args.mri), _read(args.lesion), _read(args.template)
    atlas = load_atlas(_existing(args.atlas), _existing(args.atlas_names) if args.atlas_names else None)
    mra = _read(args.mra) if args.mra else None
    out = _out_dir(args)

    result = register_rigid(template, mri, _reg_config(args))
    save_transform(result.transform, out / TRANSFORM_JSON, out / TRANSFORM_MAT, grid_center(mri))
    report = analyze_lesion(lesion, mri, atlas, template, transform=result.transform)
    lesion_atlas = apply_transform(lesion, result.transform, grid_of(atlas.labels))
    write_nifti(lesion_atlas, out / LESION_ATLAS, DT_UINT8, "lesion in atlas space")
    (out / REPORT_JSON).write_text(json.dumps(report.to_json(), indent=2) + "\n")

    if mra is not None:
        if not same_grid(mri, mra):
            mra = resample(mra, grid_of(mri), Interpolation.TRILINEAR, 0.0)
        cfg = FusionConfig(args.mode, normalize_inputs=not args.no_normalize, clip_output=not args.no_clip)
        write_nifti(fuse(mri, mra, cfg), out / FUSED, DT_FLOAT32)

    _render_to(out, template, atlas, lesion_atlas, args)
    print(report.summary_line())
    return 0


def _add_registration(p):
    p.add_argument("--cost", choices=[c.value for c in Cost], default=Cost.NORMALIZED_CORRELATION.value)
    p.add_argument("--levels", type=int, default=3, help="pyramid levels (factor 2 each)")


def _add_atlas(p):
    p.add_argument("--atlas", help="atlas label NIfTI (codes 1..10)")
    p.add_argument("--atlas-names", help="JSON sidecar mapping codes to territory names")


def _add_fusion(p):
    p.add_argument("--mode", choices=["mean", "sum", "max"], default="mean")
    p.add_argument("--no-normalize", action="store_true", help="skip per-volume min-max scaling")
    p.add_argument("--no-clip", action="store_true", help="do not clamp Sum output to [0, 1]")


def _add_render(p):
    p.add_argument("--slices", default="auto", help="'auto' or comma-separated z indices")
    p.add_argument("--columns", type=int, default=3)
    p.add_argument("--atlas-alpha", type=float, default=0.35)


def build_parser():
    parser = argparse.ArgumentParser(prog="strokelocus", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML file of option defaults; flags win")
        p.add_argument("--out-dir", default=".")
        p.set_defaults(func=func)
        subparsers[name] = p
        return p

    p = add("register", cmd_register, "rigidly register --moving onto --fixed")
    p.add_argument("--fixed")
    p.add_argument("--moving")
    _add_registration(p)

    p = add("analyze", cmd_analyze, "dominant arterial territory of a lesion")
    p.add_argument("--mri", "--moving", dest="mri", help="patient MRI (lesion grid)")
    p.add_argument("--lesion")
    p.add_argument("--template", help="atlas-space template MRI")
    p.add_argument("--transform", help="precomputed transform (JSON or 4x4 text); skips registration")
    _add_atlas(p)
    _add_registration(p)

    p = add("fuse", cmd_fuse, "pixel-wise MRI/MRA fusion")
    p.add_argument("--mri", "--fixed", dest="mri")
    p.add_argument("--mra")
    p.add_argument("--reslice", action="store_true", help="resample the MRA onto the MRI grid first")
    _add_fusion(p)

    p = add("metrics", cmd_metrics, "slice-wise PSNR/SSIM between two volumes")
    p.add_argument("--reference")
    p.add_argument("--test")
    p.add_argument("--peak", type=float)
    p.add_argument("--dynamic-range", type=float, help="SSIM dynamic range (default: --peak)")
    p.set_defaults(out_dir=None)

    p = add("loss", cmd_loss, "pGAN loss terms from .npy arrays")
    for name in ("d-real", "d-fake", "generated", "target", "feat-generated", "feat-target"):
        p.add_argument(f"--{name}")
    p.add_argument("--lambda-l1", type=float)
    p.add_argument("--lambda-perc", type=float)

    p = add("render", cmd_render, "multi-slice overlay PNG")
    p.add_argument("--base", "--mri", dest="base")
    p.add_argument("--lesion")
    _add_atlas(p)
    _add_render(p)

    p = add("pipeline", cmd_pipeline, "register, analyze, fuse and render in one go")
    p.add_argument("--mri", "--moving", dest="mri")
    p.add_argument("--lesion")
    p.add_argument("--template")
    p.add_argument("--mra")
    _add_atlas(p)
    _add_registration(p)
    _add_fusion(p)
    _add_render(p)
    return parser, subparsers


def _config_defaults(path, command) -> dict:
    try:
        with open(_existing(path), "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"bad config file {path}: {exc}") from exc
    flat = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    flat.update(raw.get(command, {}))
    return {k.replace("-", "_"): v for k, v in flat.items()}


def main(argv: Optional[List[str]] = None) -> int:
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.config:
            subparsers[args.command].set_defaults(**_config_defaults(args.config, args.command))
            args = parser.parse_args(argv)
        return args.func(args)
    except StrokeLocusError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
