"""Third calibration pilot: style diversity of the ablation dataset."""
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from semsynth.data import generate_shapes_dataset, load_dataset
from semsynth.evaluation import evaluate_model, load_oracle
from semsynth.synthesis import SynthesisEngine
from semsynth.training import Trainer, global_only_config

ROOT = Path("/tmp/pilot")
oracle = load_oracle(ROOT / "oracle.bundle")


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def ensure(name, seed, count, styles):
    out = ROOT / name
    if not (out / "meta.json").exists():
        generate_shapes_dataset(seed=seed, count=count, height=96, width=96,
                                out_dir=out, num_styles_per_class=styles)
    return load_dataset(out)


def run(ds, test, tag, seed, d_scales, lambda_fm, epochs, divisor):
    out = ROOT / f"abl3_{tag}_s{seed}"
    cfg = global_only_config(
        (96, 96), epochs, d_scales=d_scales, width_divisor=divisor,
        batch_size=4, seed=seed, lambda_fm=lambda_fm, use_encoder=False)
    tr = Trainer(cfg, ds, out)
    t = time.time()
    final = tr.run()
    rep = evaluate_model(SynthesisEngine.from_bundle(final), test, oracle, seed=0)
    miou = rep["synthesized"]["mean_iou"]
    log(f"  {tag} s{seed}: mIoU {miou:.4f} ({time.time()-t:.0f}s)")
    return miou


for styles in (2,):
    ds = ensure(f"abl_sty{styles}", 310, 160, styles)
    test = ensure(f"abl_test_sty{styles}", 410, 32, styles)
    real = __import__("semsynth.evaluation", fromlist=["oracle_scores_on_real"]) \
        .oracle_scores_on_real(oracle, test)
    log(f"styles={styles}: oracle on real acc {real.pixel_accuracy:.4f} "
        f"mIoU {real.mean_iou:.4f}")
    for epochs, divisor in ((12, 4),):
        results = {}
        for seed in (0, 1, 2):
            results.setdefault("full", []).append(
                run(ds, test, f"full_sty{styles}_e{epochs}", seed, 3, 10.0, epochs, divisor))
            results.setdefault("ganonly", []).append(
                run(ds, test, f"ganonly_sty{styles}_e{epochs}", seed, 3, 0.0, epochs, divisor))
            results.setdefault("singled", []).append(
                run(ds, test, f"singled_sty{styles}_e{epochs}", seed, 1, 10.0, epochs, divisor))
        med = {k: float(np.median(v)) for k, v in results.items()}
        log(f"== styles {styles} divisor {divisor} epochs {epochs}: {med} | "
            f"FM {med['full'] >= med['ganonly']} D {med['full'] >= med['singled']}")
