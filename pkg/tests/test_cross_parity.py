"""Cross-implementation parity: weights exported by the companion trainer,
loaded by this engine, must reproduce the trainer's own forward outputs on
held-out samples.

Requires the artifacts the trainer's acceptance run exports
(trainer/artifacts/); skipped when they are absent.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from gliosim.surrogate import load_weights, predict
from gliosim.volumes import load_volume

ARTIFACTS = Path(__file__).resolve().parent.parent / "trainer" / "artifacts"

pytestmark = pytest.mark.skipif(
    not (ARTIFACTS / "eval.json").exists() or not (ARTIFACTS / "surrogate_desk.tgsw").exists(),
    reason="trainer artifacts not present (run the trainer acceptance first)",
)


def test_trainer_weights_reproduce_trainer_outputs():
    doc = json.loads((ARTIFACTS / "eval.json").read_text())
    exports = doc["parity_exports"]
    assert len(exports) >= 20, "need at least 20 exported held-out samples"

    w = load_weights(ARTIFACTS / "surrogate_desk.tgsw")
    worst = 0.0
    for rec in exports[:20]:
        crop = np.stack(
            [load_volume(ARTIFACTS / rec["inputs"][t]).data for t in ("wm", "gm", "csf")],
            axis=0,
        )
        theirs = load_volume(ARTIFACTS / rec["prediction"]).data
        ours = predict(w, crop, rec["params"]).data
        worst = max(worst, float(np.max(np.abs(ours - theirs))))
    print(
        f"[{'PASS' if worst <= 1e-4 else 'FAIL'}] criterion 10 (cross-component parity): "
        f"worst per-voxel deviation {worst:.2e} over 20 held-out samples (tol 1e-4)"
    )
    assert worst <= 1e-4


def test_trained_weights_satisfy_quality_gate():
    # echoes the trainer-side criterion so the numbers live in both suites
    doc = json.loads((ARTIFACTS / "eval.json").read_text())
    summary = doc["summary"]
    print(
        f"[{'PASS' if summary['dice02'] >= 0.7 and summary['maeTumor'] <= 0.06 else 'FAIL'}] "
        f"criterion 9 (desk-scale surrogate quality): held-out mean DICE@0.2 "
        f"{summary['dice02']:.4f} (>= 0.7), tumor-mask MAE {summary['maeTumor']:.4f} (<= 0.06), "
        f"n = {summary['n']}"
    )
    assert summary["dice02"] >= 0.7
    assert summary["maeTumor"] <= 0.06
