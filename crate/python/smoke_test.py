#!/usr/bin/env python3
"""Smoke test for the fslab Python bindings.

Builds a tiny synthetic corpus, trains a micro configuration, evaluates it,
runs single-frame prediction and checks the metric functions on known cases.

    cargo build -p fslab-py --release
    python3 python/smoke_test.py
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_fslab():
    """Copy the built cdylib next to a temp dir as fslab.so and import it."""
    candidates = [
        REPO / "target" / "release" / "libfslab.so",
        REPO / "target" / "debug" / "libfslab.so",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("build the bindings first: cargo build -p fslab-py --release")
    stage = Path(tempfile.mkdtemp(prefix="fslab_py_"))
    shutil.copy2(lib, stage / "fslab.so")
    sys.path.insert(0, str(stage))
    import fslab  # noqa: E402

    return fslab


def check(name, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"  [{status}] {name} {detail}")
    if not ok:
        sys.exit(1)


def main():
    fslab = import_fslab()
    work = Path(tempfile.mkdtemp(prefix="fslab_smoke_"))
    corpus = work / "corpus"

    print("corpus generation")
    splits = fslab.gen_corpus(str(corpus), clips=8, seed=5, frames=3, size=32,
                              split_ratios=[0.25, 0.25, 0.25, 0.25])
    check("four splits", sorted(splits) == [
        "pretrain-spatial", "pretrain-temporal", "train", "val"])
    check("manifest exists", (corpus / "manifest.json").exists())

    print("metric functions")
    n = 8 * 8
    disk = [1.0 if (x - 3.5) ** 2 + (y - 3.5) ** 2 <= 6 else 0.0
            for y in range(8) for x in range(8)]
    m = fslab.evaluate_maps(disk, disk, 8, 8)
    check("J of identical masks", abs(m["j"] - 1.0) < 1e-9, f"j={m['j']:.6f}")
    check("MAE of identical masks", m["mae"] == 0.0)
    check("S-measure near 1", m["s_measure"] > 0.99, f"s={m['s_measure']:.6f}")
    half = [0.5] * n
    m = fslab.evaluate_maps(half, disk, 8, 8)
    check("MAE of a flat half map", abs(m["mae"] - 0.5) < 1e-12)
    curve = fslab.pr_curve(disk, disk, 8, 8)
    check("PR curve has 256 samples", len(curve) == 256)
    check("perfect map: P=R=1 below saturation",
          all(abs(p - 1.0) < 1e-12 and abs(r - 1.0) < 1e-12 for p, r in curve[:255]))

    print("flow colouring")
    zero_rgb = fslab.flow_to_rgb([0.0] * (2 * 16), 4, 4, 1.0)
    check("zero flow is a constant raster",
          all(abs(v - zero_rgb[0]) < 1e-12 for v in zero_rgb))

    print("training (micro config)")
    cfg = {
        "corpus": str(corpus),
        "out_dir": str(work / "run"),
        "input_size": 32,
        "multi_scale": [1.0],
        "epochs": {"spatial": 1, "temporal": 1, "joint": 1},
        "batch_size": 2,
        "bpm_n": 1,
    }
    cfg_path = work / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    ckpt = fslab.train(str(cfg_path))
    check("checkpoint written", Path(ckpt).exists(), ckpt)

    print("evaluation")
    report = fslab.evaluate(ckpt, split="val")
    check("mean_j in [0, 1]", 0.0 <= report["mean_j"] <= 1.0,
          f"mean_j={report['mean_j']:.4f}")
    check("frames counted", report["n_frames"] == 2 * 2,
          f"n_frames={report['n_frames']}")

    print("single-frame prediction")
    clip = splits["val"][0]
    frame = corpus / clip / "frames" / "00000.png"
    flow = corpus / clip / "flow" / "00000.flo"
    pred, (h, w) = fslab.predict(ckpt, str(frame), str(flow))
    check("prediction matches frame size", (h, w) == (32, 32))
    check("prediction values in [0, 1]",
          all(0.0 <= v <= 1.0 and math.isfinite(v) for v in pred))

    print("smoke test passed")


if __name__ == "__main__":
    main()
