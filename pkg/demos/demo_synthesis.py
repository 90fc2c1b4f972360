"""
Synthetic CBCTs that keep the planning contours
================================================

Write a phantom case to disk, synthesize one sCBCT per preset, and turn
the results into a training manifest with all eight augmentations. The
esophagus mask attached to every sCBCT is the planning mask itself, so no
recontouring is needed.
"""

import sys
import tempfile
from pathlib import Path

from scbct.config import config_from_dict
from scbct.phantoms import write_case
from scbct.pipeline import CaseInputs, build_training_manifest, synthesize_case

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="scbct_"))
paths = write_case(work / "case", dims=(32, 32, 32))
case = CaseInputs(paths["pct"], paths["cbct"], paths["masks"], paths["dose"])

cfg = config_from_dict({"profile": "desk", "seed": 42, "noise_sigma": 0.1,
                        "ossart": {"n_subsets": 10, "n_epochs": 5}})
manifest = synthesize_case(case, cfg, work / "synth")

print(f"{'preset':>6} {'alpha':>5} {'beta':>4} {'ssim':>6} {'rmse':>6} {'cc':>6} {'uqi':>6}")
for rec in manifest["records"]:
    s = rec["similarity"]
    print(f"{rec['preset_index']:>6} {rec['alpha']:>5} {rec['beta']:>4} "
          f"{s['ssim']:6.3f} {s['rmse']:6.3f} {s['cc']:6.3f} {s['uqi']:6.3f}")

ds = build_training_manifest([work / "synth" / "manifest.json"], range(1, 9), work / "train")
print(ds["n_pairs"], "image/mask pairs listed in", work / "train" / "training_manifest.json")
