"""Fourth calibration pilot: short-budget ablations (FM's early-training edge)."""
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


def run(tag, seed, d_scales, lambda_fm, epochs):
    out = ROOT / f"abl4_{tag}_e{epochs}_s{seed}"
    cfg = global_only_config(
        (96, 96), epochs, d_scales=d_scales, width_divisor=4,
        batch_size=4, seed=seed, lambda_fm=lambda_fm, use_encoder=False)
    t = time.time()
    final = Trainer(cfg, abl_ds, out).run()
    rep = evaluate_model(SynthesisEngine.from_bundle(final), abl_test, oracle, seed=0)
    miou = rep["synthesized"]["mean_iou"]
    log(f"  {tag} e{epochs} s{seed}: mIoU {miou:.4f} ({time.time()-t:.0f}s)")
    return miou


for epochs in (4, 6):
    results = {}
    for seed in (0, 1, 2):
        results.setdefault("full", []).append(run("full", seed, 3, 10.0, epochs))
        results.setdefault("ganonly", []).append(run("ganonly", seed, 3, 0.0, epochs))
        results.setdefault("singled", []).append(run("singled", seed, 1, 10.0, epochs))
    med = {k: float(np.median(v)) for k, v in results.items()}
    log(f"== epochs {epochs} divisor 4: {med} | "
        f"FM {med['full'] >= med['ganonly']} D {med['full'] >= med['singled']}")
