"""Second calibration pilot: find a stable ablation budget for the direction gates."""
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from semsynth.data import load_dataset
from semsynth.evaluation import evaluate_model, load_oracle
from semsynth.synthesis import SynthesisEngine
from semsynth.training import Trainer, global_only_config

ROOT = Path("/tmp/pilot")
abl_ds = load_dataset(ROOT / "abl")
abl_test = load_dataset(ROOT / "abl_test")
oracle = load_oracle(ROOT / "oracle.bundle")


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def run(tag, seed, d_scales, lambda_fm, epochs, divisor):
    out = ROOT / f"abl2_{tag}_e{epochs}_w{divisor}_s{seed}"
    cfg = global_only_config(
        (96, 96), epochs, d_scales=d_scales, width_divisor=divisor,
        batch_size=4, seed=seed, lambda_fm=lambda_fm, use_encoder=False)
    tr = Trainer(cfg, abl_ds, out)
    t = time.time()
    final = tr.run()
    rep = evaluate_model(SynthesisEngine.from_bundle(final), abl_test, oracle, seed=0)
    miou = rep["synthesized"]["mean_iou"]
    log(f"  {tag} e{epochs} w{divisor} s{seed}: mIoU {miou:.4f} ({time.time()-t:.0f}s)")
    return miou


for divisor, epochs in ((8, 8), (8, 16), (4, 16)):
    results = {}
    for seed in (0, 1, 2):
        results.setdefault("full", []).append(run("full", seed, 3, 10.0, epochs, divisor))
        results.setdefault("ganonly", []).append(run("ganonly", seed, 3, 0.0, epochs, divisor))
        results.setdefault("singled", []).append(run("singled", seed, 1, 10.0, epochs, divisor))
    med = {k: float(np.median(v)) for k, v in results.items()}
    ok_fm = med["full"] >= med["ganonly"]
    ok_d = med["full"] >= med["singled"]
    log(f"== divisor {divisor} epochs {epochs}: medians {med} | FM dir {ok_fm} D dir {ok_d}")
