"""Command-line entry point: ``scbct <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import augment as aug
from .config import ConfigError, load_config
from .imqual import METRIC_SETTINGS, compare, histogram_curve
from .metaimage import atomic_write_bytes, read_metaimage, write_metaimage
from .ossart import reconstruct
from .pipeline import (CaseInputs, PipelineError, build_training_manifest, evaluate_segmentation,
                       preset_seed, reports_to_csv, stage, synthesize_case)
from .plahe import extract_artifact
from .projio import read_projections, write_projections
from .segdose import d_cc, dvh, mean_dose
from .volgrid import add_gaussian_noise, add_scaled, rescale_unit, resample_to_grid
from .xproject import forward_project

log = logging.getLogger("scbct")


def _dump(path: Path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _presets(value: str, n: int):
    if value is None:
        return None
    if value == "all":
        return list(range(1, n + 1))
    out = [int(v) for v in value.split(",")]
    for v in out:
        if not 1 <= v <= n:
            raise ConfigError(f"preset {v} outside 1..{n}")
    return out


def _config(args):
    over = {"profile": args.profile, "seed": args.seed}
    if getattr(args, "preset", None):
        over["presets"] = _presets(args.preset, 7)
    if args.output:
        over["output_dir"] = args.output
    return load_config(args.config, **over)


def _out(args, cfg) -> Path:
    p = Path(args.output or cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_extract(args):
    cfg = _config(args)
    out = _out(args, cfg)
    with stage("extract"):
        cbct = rescale_unit(read_metaimage(args.cbct, as_mask=False))
        for idx in cfg.presets:
            params = cfg.plahe.params(idx)
            write_metaimage(extract_artifact(cbct, params), out / f"artifact_p{idx}.mha")
            log.info("preset %d (alpha=%g, beta=%g) written", idx, params.alpha, params.beta)


def cmd_induce(args):
    cfg = _config(args)
    out = _out(args, cfg)
    with stage("induce"):
        pct = read_metaimage(args.pct, as_mask=False)
        art = read_metaimage(args.artifact, as_mask=False)
        if not art.grid.same_as(pct.grid):
            art = resample_to_grid(art, pct.grid)
        scale = float(pct.values.max() - pct.values.min())
        art = art.with_values(art.values * scale)
        lam = cfg.induction_lambda if args.lam is None else args.lam
        write_metaimage(rescale_unit(add_scaled(pct, art, lam)), out / args.name)


def cmd_project(args):
    cfg = _config(args)
    out = _out(args, cfg)
    with stage("project"):
        vol = read_metaimage(args.volume, as_mask=False)
        proj = forward_project(vol, cfg.geometry.build(), cfg.projection_step_mm)
        sigma = cfg.noise_sigma if args.noise_sigma is None else args.noise_sigma
        if sigma > 0:
            proj = add_gaussian_noise(proj, sigma, preset_seed(cfg.seed, 0))
        write_projections(proj, out / args.name, grid=vol.grid)


def cmd_reconstruct(args):
    cfg = _config(args)
    out = _out(args, cfg)
    with stage("reconstruct"):
        proj, grid = read_projections(args.projections)
        if args.like:
            grid = read_metaimage(args.like).grid
        if grid is None:
            raise ValueError("no target grid: pass --like or use a sidecar with a grid record")
        write_metaimage(reconstruct(proj, grid, cfg.ossart), out / args.name)


def cmd_synthesize(args):
    cfg = _config(args)
    masks = dict(m.split("=", 1) for m in args.mask or [])
    inputs = CaseInputs(args.pct, args.cbct, masks, args.dose)
    man = synthesize_case(inputs, cfg, _out(args, cfg))
    failed = [r for r in man["records"] if r["status"] != "ok"]
    for r in failed:
        print(r["error"], file=sys.stderr)
    return 1 if failed else 0


def cmd_compare(args):
    cfg = _config(args)
    out = _out(args, cfg)
    with stage("compare"):
        a = read_metaimage(args.a, as_mask=False)
        b = read_metaimage(args.b, as_mask=False)
        if args.rescale:
            a, b = rescale_unit(a), rescale_unit(b)
        rep = compare(a, b)
        extra = {"preset_index": args.preset_index, "params": METRIC_SETTINGS}
        atomic_write_bytes(out / "compare.json", (rep.to_json(**extra) + "\n").encode())
        atomic_write_bytes(out / "compare.csv", rep.to_csv_row(**extra).encode())
        if args.histogram:
            lines = ["bin_lo,bin_hi,frequency"]
            for a_vol, tag in ((a, "a"), (b, "b")):
                h = histogram_curve(a_vol, args.bins)
                rows = [f"{lo!r},{hi!r},{f!r}" for lo, hi, f in zip(h.bin_edges[:-1], h.bin_edges[1:], h.frequencies)]
                atomic_write_bytes(out / f"histogram_{tag}.csv", ("\n".join(lines + rows) + "\n").encode())
        print(rep.to_json(**extra))


def cmd_seg_eval(args):
    cfg = _config(args)
    out = _out(args, cfg)
    pred = read_metaimage(args.pred, as_mask=True)
    truth = read_metaimage(args.truth, as_mask=True)
    dose = read_metaimage(args.dose, as_mask=False) if args.dose else None
    rep = evaluate_segmentation(pred, truth, dose, resample=args.resample, volume_cc=args.volume_cc)
    _dump(out / "seg_eval.json", rep)
    atomic_write_bytes(out / "seg_eval.csv", reports_to_csv([rep]).encode())
    print(json.dumps(rep, sort_keys=True))


def cmd_dose_eval(args):
    cfg = _config(args)
    out = _out(args, cfg)
    with stage("dose-eval"):
        dose = read_metaimage(args.dose, as_mask=False)
        mask = read_metaimage(args.mask, as_mask=True)
        if not mask.grid.same_as(dose.grid):
            mask = resample_to_grid(mask, dose.grid, "nearest")
        rep = {"mean_dose": mean_dose(dose, mask), f"d{args.volume_cc:g}cc": d_cc(dose, mask, args.volume_cc)}
        _dump(out / "dose_eval.json", rep)
        atomic_write_bytes(out / "dvh.csv", dvh(dose, mask, args.bins).to_csv().encode())
        print(json.dumps(rep, sort_keys=True))


def cmd_augment(args):
    cfg = _config(args)
    out = _out(args, cfg)
    with stage("augment"):
        img = read_metaimage(args.image, as_mask=False)
        msk = read_metaimage(args.mask, as_mask=True) if args.mask else None
        which = _presets(args.augment, len(aug.PRESETS)) or list(cfg.augment_presets)
        for ai in which:
            a_img, a_msk = aug.apply(img, msk, aug.preset(ai))
            write_metaimage(a_img, out / f"aug{ai}_image.mha")
            if a_msk is not None:
                write_metaimage(a_msk, out / f"aug{ai}_mask.mha")


def cmd_manifest(args):
    cfg = _config(args)
    out = _out(args, cfg)
    if args.augment == "none":
        which = []
    else:
        which = _presets(args.augment, len(aug.PRESETS))
        if which is None:
            which = list(cfg.augment_presets)
    ds = build_training_manifest(args.case_manifest, which, out, cfg.primary_mask)
    print(f"{ds['n_pairs']} pairs -> {out / 'training_manifest.json'}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML pipeline config")
    common.add_argument("--output", help="output directory")
    common.add_argument("--seed", type=int, help="unsigned 64-bit noise seed")
    common.add_argument("--preset", help="PL-AHE preset 1..7, comma list, or 'all'")
    common.add_argument("--profile", choices=["clinical", "desk"])
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="scbct", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", parents=[common], help="PL-AHE artifact fields from a CBCT")
    s.add_argument("--cbct", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("induce", parents=[common], help="add an artifact field to a pCT")
    s.add_argument("--pct", required=True)
    s.add_argument("--artifact", required=True)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--name", default="induced.mha")
    s.set_defaults(func=cmd_induce)

    s = sub.add_parser("project", parents=[common], help="cone-beam forward projection")
    s.add_argument("--volume", required=True)
    s.add_argument("--noise-sigma", type=float)
    s.add_argument("--name", default="projections.mha")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("reconstruct", parents=[common], help="OS-SART reconstruction")
    s.add_argument("--projections", required=True)
    s.add_argument("--like", help="volume whose grid is the reconstruction target")
    s.add_argument("--name", default="recon.mha")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("synthesize", parents=[common], help="end-to-end sCBCT synthesis")
    s.add_argument("--pct", required=True)
    s.add_argument("--cbct", required=True)
    s.add_argument("--mask", action="append", help="name=path, repeatable")
    s.add_argument("--dose")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("compare", parents=[common], help="SSIM/RMSE/CC/UQI between two volumes")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--rescale", action="store_true", help="rescale both to [0, 1] first")
    s.add_argument("--histogram", action="store_true")
    s.add_argument("--bins", type=int, default=256)
    s.add_argument("--preset-index", type=int)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("seg-eval", parents=[common], help="Dice/HD95 (+ dose) of a segmentation")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--dose")
    s.add_argument("--volume-cc", type=float, default=5.0)
    s.add_argument("--resample", action="store_true")
    s.set_defaults(func=cmd_seg_eval)

    s = sub.add_parser("dose-eval", parents=[common], help="mean dose, Dcc and DVH of a structure")
    s.add_argument("--dose", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--volume-cc", type=float, default=5.0)
    s.add_argument("--bins", type=int, default=100)
    s.set_defaults(func=cmd_dose_eval)

    s = sub.add_parser("augment", parents=[common], help="geometric/intensity augmentation")
    s.add_argument("--image", required=True)
    s.add_argument("--mask")
    s.add_argument("--augment", help="augmentation preset 1..8, comma list, or 'all'")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("manifest", parents=[common], help="training manifest from case manifests")
    s.add_argument("case_manifest", nargs="+")
    s.add_argument("--augment", help="1..8, comma list, 'all' or 'none'")
    s.set_defaults(func=cmd_manifest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except PipelineError as exc:
        print(f"scbct {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"scbct {args.command}: [stage {args.command}] {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
