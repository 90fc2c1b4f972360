"""End-to-end sCBCT synthesis, evaluation reports and training manifests."""
from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import augment as aug
from .config import PipelineConfig
from .imqual import METRIC_SETTINGS, compare
from .metaimage import atomic_write_bytes, read_metaimage, write_metaimage
from .ossart import reconstruct
from .plahe import extract_artifact
from .segdose import bland_altman, d_cc, dice, hd95, mean_dose
from .volgrid import (Mask3, Volume3, add_gaussian_noise, add_scaled, crop, crop_overlap_fov,
                      rescale_unit, resample_to_grid)
from .xproject import forward_project

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class PipelineError(RuntimeError):
    """A stage failure, tagged with the preset and stage that raised it."""

    def __init__(self, stage: str, message: str, preset: Optional[int] = None):
        self.stage = stage
        self.preset = preset
        where = f"preset {preset}, " if preset is not None else ""
        super().__init__(f"[{where}stage {stage}] {message}")


@contextlib.contextmanager
def stage(name: str, preset: Optional[int] = None):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, f"{type(exc).__name__}: {exc}", preset) from exc


@dataclass
class CaseInputs:
    pct_path: str
    cbct_path: str
    mask_paths: Dict[str, str] = field(default_factory=dict)
    dose_path: Optional[str] = None

    def files(self) -> Dict[str, str]:
        out = {"pct": self.pct_path, "cbct": self.cbct_path}
        out.update({f"mask:{k}": v for k, v in self.mask_paths.items()})
        if self.dose_path:
            out["dose"] = self.dose_path
        return out


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def preset_seed(seed: int, preset: int) -> int:
    """Independent noise stream per preset derived from the run seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(preset),))
    return int(ss.generate_state(1, np.uint64)[0])


def _write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def load_case(inputs: CaseInputs):
    with stage("load"):
        pct = read_metaimage(inputs.pct_path, as_mask=False)
        cbct = read_metaimage(inputs.cbct_path, as_mask=False)
        masks = {}
        for name, p in inputs.mask_paths.items():
            m = read_metaimage(p, as_mask=True)
            if not m.grid.same_as(pct.grid):
                m = resample_to_grid(m, pct.grid, "nearest")
            masks[name] = m
    return pct, cbct, masks


def synthesize_case(inputs: CaseInputs, config: PipelineConfig, output_dir=None) -> dict:
    """Run every configured preset for one case and write the manifest.

    Returns the manifest as a dict; it is also written to
    ``<output_dir>/manifest.json``. A failing preset is recorded with its
    stage and message and leaves no files behind.
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pct, cbct, masks = load_case(inputs)
    with stage("crop"):
        pct_c, cbct_c, region = crop_overlap_fov(pct, cbct)
        masks_c = {k: crop(m, region) for k, m in masks.items()}
    with stage("normalize"):
        truth = rescale_unit(cbct_c)
        pct_range = float(pct_c.values.max() - pct_c.values.min())
    geom = config.geometry.build()
    records = []
    for idx in config.presets:
        rec = _run_preset(idx, pct_c, truth, masks_c, pct_range, geom, config, out)
        records.append(rec)
    manifest = {
        "inputs": {k: {"path": str(v), "sha256": sha256(v)} for k, v in inputs.files().items()},
        "crop_region": {"lo": list(region.lo), "hi": list(region.hi)},
        "grid": {"dims": list(pct_c.dims), "spacing": list(pct_c.spacing), "origin": list(pct_c.origin)},
        # output location is not a parameter of the outputs; names below are relative
        "config": {k: v for k, v in config.to_dict().items() if k != "output_dir"},
        "metric_settings": METRIC_SETTINGS,
        "artifact_scale": pct_range,
        "records": records,
        "reports": {"similarity_csv": "similarity.csv"},
    }
    _write_similarity_csv(out / "similarity.csv", records)
    _write_json(out / MANIFEST_NAME, manifest)
    return manifest


def synthesize_volume(pct_c: Volume3, truth: Volume3, params, config: PipelineConfig, geom=None,
                      noise_seed: int = 0, pct_range: Optional[float] = None, preset: Optional[int] = None) -> Volume3:
    """One sCBCT from a cropped pCT and its [0, 1] reference CBCT.

    Artifact extraction on ``truth``, denormalization by the pCT range,
    induction, projection, noise and OS-SART reconstruction.
    """
    geom = geom or config.geometry.build()
    if pct_range is None:
        pct_range = float(pct_c.values.max() - pct_c.values.min())
    with stage("extract", preset):
        art = extract_artifact(truth, params)
    with stage("induce", preset):
        art = art.with_values(art.values.astype(np.float64) * pct_range)
        induced = rescale_unit(add_scaled(pct_c, art, config.induction_lambda))
    with stage("project", preset):
        proj = forward_project(induced, geom, config.projection_step_mm)
    with stage("noise", preset):
        proj = add_gaussian_noise(proj, config.noise_sigma, noise_seed)
    with stage("reconstruct", preset):
        return reconstruct(proj, induced.grid, config.ossart)


def _run_preset(idx, pct_c, truth, masks_c, pct_range, geom, config, out: Path) -> dict:
    params = config.plahe.params(idx)
    rec = {
        "preset_index": idx,
        "alpha": params.alpha,
        "beta": params.beta,
        "plahe": {"window": list(params.window), "mode": params.extraction_mode},
        "noise_seed": preset_seed(config.seed, idx),
        "status": "ok",
    }
    written: List[Path] = []
    try:
        recon = synthesize_volume(pct_c, truth, params, config, geom, rec["noise_seed"], pct_range, idx)
        with stage("write", idx):
            name = f"scbct_p{idx}.mha"
            write_metaimage(recon, out / name)
            written.append(out / name)
            rec["scbct"] = name
            rec["masks"] = {}
            for mname, m in masks_c.items():
                fn = f"mask_{mname}_p{idx}.mha"
                write_metaimage(m, out / fn)
                written.append(out / fn)
                rec["masks"][mname] = fn
        with stage("compare", idx):
            scored = recon.with_values(np.clip(recon.values, 0.0, 1.0))
            rec["similarity"] = compare(scored, truth).to_dict()
    except PipelineError as exc:
        log.error("%s", exc)
        for p in written:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(p)
        rec.update(status="failed", failed_stage=exc.stage, error=str(exc))
        rec.pop("scbct", None)
        rec.pop("masks", None)
    return rec


def _write_similarity_csv(path, records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["preset_index", "alpha", "beta", "ssim", "rmse", "cc", "uqi", "status"])
    for r in records:
        s = r.get("similarity", {})
        w.writerow([r["preset_index"], r["alpha"], r["beta"],
                    *(repr(s[k]) if k in s else "" for k in ("ssim", "rmse", "cc", "uqi")), r["status"]])
    atomic_write_bytes(path, buf.getvalue().encode())


# -- segmentation / dose evaluation --------------------------------------

def evaluate_segmentation(pred: Mask3, truth: Mask3, dose: Optional[Volume3] = None,
                          resample: bool = False, volume_cc: float = 5.0) -> dict:
    """Dice, HD95 and (with a dose grid) mean dose / D``volume_cc`` for both masks."""
    if not pred.grid.same_as(truth.grid):
        if not resample:
            raise PipelineError("seg-eval", "prediction and truth grids differ (enable resampling)")
        pred = resample_to_grid(pred, truth.grid, "nearest")
    with stage("seg-eval"):
        report = {"dice": dice(pred, truth), "hd95_mm": hd95(pred, truth), "hd95_variant": "pooled-symmetric"}
    if dose is not None:
        with stage("dose-eval"):
            if not dose.grid.same_as(truth.grid):
                if not resample:
                    raise ValueError("dose grid differs from mask grid (enable resampling)")
                dose = resample_to_grid(dose, truth.grid, "trilinear")
            for who, m in (("truth", truth), ("pred", pred)):
                report[f"mean_dose_{who}"] = mean_dose(dose, m)
                report[f"d{volume_cc:g}cc_{who}"] = d_cc(dose, m, volume_cc)
            report["mean_dose_diff"] = report["mean_dose_pred"] - report["mean_dose_truth"]
            key = f"d{volume_cc:g}cc"
            report[f"{key}_diff"] = report[f"{key}_pred"] - report[f"{key}_truth"]
    return report


def evaluate_batch(cases: Sequence[tuple], volume_cc: float = 5.0, resample: bool = False) -> dict:
    """Evaluate ``(pred, truth, dose)`` triples and add Bland-Altman agreement.

    Bland-Altman pairs are (truth, prediction), so the bias is truth minus
    prediction.
    """
    reports = [evaluate_segmentation(p, t, d, resample, volume_cc) for p, t, d in cases]
    out = {"cases": reports}
    key = f"d{volume_cc:g}cc"
    if len(reports) >= 2 and all("mean_dose_truth" in r for r in reports):
        out["bland_altman"] = {
            "mean_dose": bland_altman([(r["mean_dose_truth"], r["mean_dose_pred"]) for r in reports]).to_dict(),
            key: bland_altman([(r[f"{key}_truth"], r[f"{key}_pred"]) for r in reports]).to_dict(),
        }
    return out


def reports_to_csv(reports: Iterable[dict]) -> str:
    reports = list(reports)
    keys = sorted({k for r in reports for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r)
    return buf.getvalue()


# -- training dataset manifest ------------------------------------------

def build_training_manifest(case_manifests: Sequence, augment_presets: Sequence[int], output_dir,
                            primary_mask: Optional[str] = None) -> dict:
    """Augment every synthesized volume/mask pair and list all pairs for a trainer.

    ``case_manifests`` holds paths to ``manifest.json`` files (or
    ``(dict, directory)`` tuples). Each successful record contributes its
    base pair plus one pair per selected augmentation.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for ci, entry in enumerate(case_manifests):
        if isinstance(entry, (str, os.PathLike)):
            mpath = Path(entry)
            manifest = json.loads(mpath.read_text())
            base_dir = mpath.parent
        else:
            manifest, base_dir = entry
            base_dir = Path(base_dir)
        for rec in manifest["records"]:
            if rec.get("status") != "ok":
                continue
            mname = primary_mask or sorted(rec["masks"])[0]
            img_path = (base_dir / rec["scbct"]).resolve()
            mask_path = (base_dir / rec["masks"][mname]).resolve()
            prov = {
                "case": ci,
                "case_inputs": {k: v["sha256"] for k, v in manifest["inputs"].items()},
                "preset_index": rec["preset_index"],
                "alpha": rec["alpha"],
                "beta": rec["beta"],
                "mask": mname,
            }
            pairs.append({"image": str(img_path), "mask": str(mask_path), "provenance": dict(prov, augment=None)})
            if not augment_presets:
                continue
            with stage("augment", rec["preset_index"]):
                img = read_metaimage(img_path, as_mask=False)
                msk = read_metaimage(mask_path, as_mask=True)
                for ai in augment_presets:
                    spec = aug.preset(ai)
                    a_img, a_msk = aug.apply(img, msk, spec)
                    stem = f"case{ci}_p{rec['preset_index']}_aug{ai}"
                    ip, mp = out / f"{stem}_image.mha", out / f"{stem}_mask.mha"
                    write_metaimage(a_img, ip)
                    write_metaimage(a_msk, mp)
                    pairs.append({
                        "image": str(ip.resolve()), "mask": str(mp.resolve()),
                        "provenance": dict(prov, augment={"index": ai, **spec.to_dict()}),
                    })
    dataset = {"n_pairs": len(pairs), "augment_presets": list(augment_presets), "pairs": pairs}
    _write_json(out / "training_manifest.json", dataset)
    return dataset
