"""Calibration pilot for the acceptance budgets (not part of the test suite)."""
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from semsynth.data import generate_shapes_dataset, load_dataset
from semsynth.encoder import build_style_catalog, harvest_features
from semsynth.evaluation import (
    evaluate_model, oracle_scores_on_real, save_oracle, train_oracle)
from semsynth.synthesis import SynthesisEngine
from semsynth.training import (
    Trainer, global_only_config, load_bundle, models_from_bundle, three_phase_config)

ROOT = Path("/tmp/pilot")
ROOT.mkdir(exist_ok=True)


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def ensure_dataset(name, seed, count, h, w):
    out = ROOT / name
    if not (out / "meta.json").exists():
        generate_shapes_dataset(seed=seed, count=count, height=h, width=w, out_dir=out)
        log(f"dataset {name}: {count} @{h}x{w}")
    return load_dataset(out)


t0 = time.time()
train_ds = ensure_dataset("train", 100, 500, 128, 256)
test_ds = ensure_dataset("test", 200, 64, 128, 256)
abl_ds = ensure_dataset("abl", 300, 160, 96, 96)
abl_test = ensure_dataset("abl_test", 400, 32, 96, 96)
log(f"datasets ready ({time.time()-t0:.0f}s)")

oracle_path = ROOT / "oracle.bundle"
if not oracle_path.exists():
    t = time.time()
    oracle, prov = train_oracle(train_ds, seed=0, steps=600)
    save_oracle(oracle, prov, oracle_path)
    log(f"oracle trained in {time.time()-t:.0f}s: val acc {prov['val_pixel_accuracy']:.4f} mIoU {prov['val_mean_iou']:.4f}")
else:
    from semsynth.evaluation import load_oracle
    oracle = load_oracle(oracle_path)
    log("oracle loaded")

real_test = oracle_scores_on_real(oracle, test_ds)
log(f"oracle on test real: acc {real_test.pixel_accuracy:.4f} mIoU {real_test.mean_iou:.4f}")
real_abl = oracle_scores_on_real(oracle, abl_test)
log(f"oracle on ablation real (96x96): acc {real_abl.pixel_accuracy:.4f} mIoU {real_abl.mean_iou:.4f}")

# --- main three-phase run ---------------------------------------------------
run_dir = ROOT / "main_run"
config = three_phase_config(
    (128, 256), (10, 2, 3), use_encoder=True,
    width_divisor=4, batch_size=4, seed=0, checkpoint_every=2)
trainer = Trainer(config, train_ds, run_dir)
t = time.time()
last = {}


def watch(entry):
    global last
    last = entry
    if entry["step"] % 125 == 0:
        log(f"  phase {entry['phase']} epoch {entry['epoch']} step {entry['step']}: "
            f"g_gan={entry['g_gan']:.3f} g_fm={entry['g_fm']:.3f} d={entry['d_total']:.3f}")


final = trainer.run(log_fn=watch)
log(f"main run finished in {(time.time()-t)/60:.1f} min")

models, cfg = models_from_bundle(load_bundle(final))
t = time.time()
records = harvest_features(models.encoder, train_ds)
catalog = build_style_catalog(records, k=10, seed=0)
catalog.save(ROOT / "catalog.json")
log(f"harvest+kmeans in {time.time()-t:.0f}s; classes {catalog.classes()}; "
    f"class2 center spread {np.ptp(catalog.centers[2], axis=0)}")

engine = SynthesisEngine.from_bundle(final, ROOT / "catalog.json")
t = time.time()
report = evaluate_model(engine, test_ds, oracle, seed=0)
log(f"eval in {time.time()-t:.0f}s")
synth, real, ratios = report["synthesized"], report["real_reference"], report["ratios"]
log(f"MAIN: synth acc {synth['pixel_accuracy']:.4f} mIoU {synth['mean_iou']:.4f} | "
    f"real acc {real['pixel_accuracy']:.4f} mIoU {real['mean_iou']:.4f} | "
    f"ratios acc {ratios['pixel_accuracy']:.3f} (need 0.70) mIoU {ratios['mean_iou']:.3f} (need 0.50)")

# checkpoint-wise eval to see how early gates clear
for ck in sorted((run_dir / "checkpoints").glob("phase1_epoch*.bundle")):
    eng = SynthesisEngine.from_bundle(ck, ROOT / "catalog.json")
    rep = evaluate_model(eng, test_ds, oracle, seed=0)
    log(f"  ckpt {ck.name}: ratios acc {rep['ratios']['pixel_accuracy']:.3f} "
        f"mIoU {rep['ratios']['mean_iou']:.3f}")

# --- ablations ---------------------------------------------------------------
def ablation_run(name, seed, d_scales, lambda_fm, epochs=8):
    out = ROOT / f"abl_{name}_s{seed}"
    cfg = global_only_config(
        (96, 96), epochs, d_scales=d_scales, width_divisor=4,
        batch_size=4, seed=seed, lambda_fm=lambda_fm, use_encoder=False)
    tr = Trainer(cfg, abl_ds, out)
    t = time.time()
    final = tr.run()
    eng = SynthesisEngine.from_bundle(final)
    rep = evaluate_model(eng, abl_test, oracle, seed=0)
    miou = rep["synthesized"]["mean_iou"]
    acc = rep["synthesized"]["pixel_accuracy"]
    log(f"  abl {name} seed {seed}: acc {acc:.4f} mIoU {miou:.4f} ({time.time()-t:.0f}s)")
    return miou


results = {}
for seed in (0, 1, 2):
    results.setdefault("full", []).append(ablation_run("full", seed, 3, 10.0))
    results.setdefault("gan_only", []).append(ablation_run("ganonly", seed, 3, 0.0))
    results.setdefault("single_d", []).append(ablation_run("singled", seed, 1, 10.0))

for name, vals in results.items():
    log(f"ABL {name}: median {np.median(vals):.4f} values {[f'{v:.4f}' for v in vals]}")
log(f"total pilot time {(time.time()-t0)/60:.1f} min")
