"""Acceptance suite: one test per criterion, at the stated tolerances.

The heavy fixtures (dataset generation, oracle training, the full three-phase
run, the ablation grid) are session-scoped and shared. Set SEMSYNTH_ACCEPT_DIR
to reuse artifacts across invocations while iterating locally; by default
everything is rebuilt in a fresh temporary directory.
"""
import base64
import io
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from PIL import Image

from conftest import record_criterion
from semsynth.arch import conv_param_count, parse_arch, receptive_field
from semsynth.data import (
    InstanceMap,
    LabelMap,
    generate_shapes_dataset,
    load_dataset,
)
from semsynth.discriminator import MultiScaleDiscriminator
from semsynth.encoder import (
    build_style_catalog,
    harvest_features,
    instance_average_pool,
    lloyd_kmeans,
)
from semsynth.evaluation import (
    evaluate_model,
    format_ablation_table,
    ablation_compare,
    load_oracle,
    oracle_scores_on_real,
    save_oracle,
    train_oracle,
)
from semsynth.generator import composed_receptive_field
from semsynth.losses import (
    LossWeights,
    feature_matching_loss,
    lsgan_d_loss,
    lsgan_g_loss,
)
from semsynth.nets import set_requires_grad
from semsynth.service import create_app, encode_png_b64, encode_rle
from semsynth.synthesis import SynthesisEngine
from semsynth.training import Trainer, global_only_config, three_phase_config
from test_data_pipeline import boundary_oracle
from test_losses import g_objective, tiny_setup
from semsynth.data import compute_boundary_map


def check(name: str, passed: bool, detail: str = ""):
    record_criterion(name, passed, detail)
    assert passed, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Shared heavy fixtures
# ---------------------------------------------------------------------------

FULL_RES = (128, 256)      # height, width
ABL_RES = (96, 96)
MAIN_EPOCHS = (10, 2, 3)
ABL_EPOCHS = 6
ABL_DIVISOR = 4
ABL_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def accept_root(tmp_path_factory) -> Path:
    env = os.environ.get("SEMSYNTH_ACCEPT_DIR")
    if env:
        root = Path(env)
        root.mkdir(parents=True, exist_ok=True)
        return root
    return tmp_path_factory.mktemp("accept")


def _dataset(root: Path, name: str, seed: int, count: int, res) -> Path:
    out = root / name
    if not (out / "meta.json").exists():
        generate_shapes_dataset(seed=seed, count=count,
                                height=res[0], width=res[1], out_dir=out)
    return out


@pytest.fixture(scope="session")
def datasets(accept_root):
    return {
        "train": load_dataset(_dataset(accept_root, "train", 100, 500, FULL_RES)),
        "test": load_dataset(_dataset(accept_root, "test", 200, 64, FULL_RES)),
        "abl_train": load_dataset(_dataset(accept_root, "abl_train", 300, 160, ABL_RES)),
        "abl_test": load_dataset(_dataset(accept_root, "abl_test", 400, 32, ABL_RES)),
    }


@pytest.fixture(scope="session")
def oracle(accept_root, datasets):
    path = accept_root / "oracle.bundle"
    if not path.exists():
        net, provenance = train_oracle(datasets["train"], seed=0, steps=600)
        save_oracle(net, provenance, path)
    return load_oracle(path)


@pytest.fixture(scope="session")
def trained(accept_root, datasets):
    """The full three-phase encoder-enabled run plus its style catalog."""
    run_dir = accept_root / "main_run"
    bundle_path = run_dir / "model.bundle"
    catalog_path = accept_root / "catalog.json"
    info_path = accept_root / "main_run_info.json"
    if not bundle_path.exists():
        config = three_phase_config(
            FULL_RES, MAIN_EPOCHS, use_encoder=True,
            width_divisor=4, batch_size=4, seed=0)
        trainer = Trainer(config, datasets["train"], run_dir)
        t0 = time.monotonic()
        trainer.run()
        info_path.write_text(json.dumps(
            {"train_minutes": (time.monotonic() - t0) / 60.0}))
    engine = SynthesisEngine.from_bundle(bundle_path)
    if not catalog_path.exists():
        records = harvest_features(engine.models.encoder, datasets["train"])
        catalog = build_style_catalog(records, k=10, seed=0,
                                      num_classes=datasets["train"].num_classes)
        catalog.save(catalog_path)
    engine = SynthesisEngine.from_bundle(bundle_path, catalog_path)
    info = json.loads(info_path.read_text()) if info_path.exists() else {}
    return {"engine": engine, "bundle": bundle_path, "catalog": catalog_path,
            "train_minutes": info.get("train_minutes")}


@pytest.fixture(scope="session")
def ablation_results(accept_root, datasets, oracle):
    """3 variants x 3 seeds under identical budgets; cached per seed/variant."""
    variants = {
        "gan_fm_multi_d": dict(d_scales=3, lambda_fm=10.0),
        "gan_only_multi_d": dict(d_scales=3, lambda_fm=0.0),
        "gan_fm_single_d": dict(d_scales=1, lambda_fm=10.0),
    }
    results: dict[str, list[float]] = {name: [] for name in variants}
    rows_by_seed = {}
    for seed in ABL_SEEDS:
        engines = {}
        for name, kw in variants.items():
            out = accept_root / f"abl_{name}_s{seed}"
            final = out / "model.bundle"
            if not final.exists():
                config = global_only_config(
                    ABL_RES, ABL_EPOCHS, width_divisor=ABL_DIVISOR,
                    batch_size=4, seed=seed, use_encoder=False, **kw)
                Trainer(config, datasets["abl_train"], out).run()
            engines[name] = SynthesisEngine.from_bundle(final)
        rows = ablation_compare(engines, datasets["abl_test"], oracle, seed=0)
        rows_by_seed[seed] = rows
        for row in rows:
            results[row["name"]].append(row["mean_iou"])
    report_path = accept_root / "ablation_report.json"
    report_path.write_text(json.dumps(
        {"rows_by_seed": {str(s): r for s, r in rows_by_seed.items()},
         "medians": {k: float(np.median(v)) for k, v in results.items()}},
        indent=1))
    return results, rows_by_seed, report_path


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_c01_boundary_oracle():
    rng = np.random.Generator(np.random.PCG64(1234))
    t0 = time.monotonic()
    for _ in range(200):
        h = int(rng.integers(1, 33))
        w = int(rng.integers(1, 33))
        grid = rng.integers(0, 5, size=(h, w)).astype(np.int32)
        fast = compute_boundary_map(InstanceMap(grid=grid)).grid
        slow = boundary_oracle(grid)
        if not np.array_equal(fast, slow):
            check("boundary oracle", False, f"mismatch on {h}x{w} map")
    elapsed = time.monotonic() - t0
    check("boundary oracle", elapsed < 10.0,
          f"200 maps exact in {elapsed:.2f}s (< 10s)")


def test_c02_architecture_fidelity():
    from semsynth.arch import (
        GLOBAL_GENERATOR_ARCH, LOCAL_ENHANCER_ARCH, PATCH_DISCRIMINATOR_ARCH)
    from semsynth.arch import infer_shapes

    g1 = parse_arch(GLOBAL_GENERATOR_ARCH)
    blocks = sum(1 for s in g1.layers if s.kind == "residual_block")
    shapes = infer_shapes(g1, 256, 128, 5)
    g2 = parse_arch(LOCAL_ENHANCER_ARCH)
    enh_blocks = sum(1 for s in g2.layers if s.kind == "residual_block")
    rf = receptive_field(parse_arch(PATCH_DISCRIMINATOR_ARCH))
    params = conv_param_count(parse_arch("c7s1-64"), 3)
    ok = (blocks == 9 and shapes[-1] == (3, 256, 128)
          and enh_blocks == 3 and rf == 70 and params == 9472)
    check("architecture fidelity", ok,
          f"9 res blocks={blocks==9}, dims preserved={shapes[-1]==(3,256,128)}, "
          f"enhancer blocks={enh_blocks}, rf={rf}, c7s1-64 params={params}")


def test_c03_loss_unit_values():
    one = torch.ones(1, 1, 4, 4)
    zero = torch.zeros(1, 1, 4, 4)
    vals = {
        "lsgan_d(1,0)": float(lsgan_d_loss(one, zero)),
        "lsgan_d(0,1)": float(lsgan_d_loss(zero, one)),
        "lsgan_g(0)": float(lsgan_g_loss(zero)),
        "fm(1 vs 0)": float(feature_matching_loss([one], [zero])),
    }
    expected = {"lsgan_d(1,0)": 0.0, "lsgan_d(0,1)": 1.0,
                "lsgan_g(0)": 0.5, "fm(1 vs 0)": 1.0}
    ok = all(abs(vals[k] - expected[k]) < 1e-6 for k in expected)
    check("loss unit values", ok, ", ".join(
        f"{k}={vals[k]:.6f}" for k in vals))


def test_c04_gradient_check():
    gen, msd, cond_full, cond_half, real = tiny_setup()
    set_requires_grad(msd, False)
    weights = LossWeights(lambda_fm=10.0)
    loss = g_objective(gen, msd, cond_full, cond_half, real, weights)
    params = [p for p in gen.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=False)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    flat_grads = torch.cat([g.reshape(-1) for g in grads])
    sizes = [p.numel() for p in params]
    rng = np.random.Generator(np.random.PCG64(42))
    picks = rng.choice(sum(sizes), size=20, replace=False)
    h = 1e-5
    worst = 0.0
    for flat_idx in picks:
        flat_idx = int(flat_idx)
        offset = 0
        for p, size in zip(params, sizes):
            if flat_idx < offset + size:
                local = flat_idx - offset
                break
            offset += size
        with torch.no_grad():
            orig = p.reshape(-1)[local].item()
            p.reshape(-1)[local] = orig + h
            up = float(g_objective(gen, msd, cond_full, cond_half, real, weights))
            p.reshape(-1)[local] = orig - h
            down = float(g_objective(gen, msd, cond_full, cond_half, real, weights))
            p.reshape(-1)[local] = orig
        fd = (up - down) / (2 * h)
        analytic = float(flat_grads[flat_idx])
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
        worst = max(worst, rel)
    grads_ok = worst < 1e-4

    # L_FM gradients w.r.t. discriminator parameters are exactly zero
    for p in msd.parameters():
        p.grad = None
    loss = g_objective(gen, msd, cond_full, cond_half, real, weights)
    loss.backward()
    fm_zero = all(p.grad is None or float(p.grad.abs().max()) == 0.0
                  for p in msd.parameters())
    check("gradient check", grads_ok and fm_zero,
          f"worst rel err {worst:.2e} (< 1e-4), FM->D grads zero: {fm_zero}")


def test_c05_instance_pooling():
    rng = np.random.Generator(np.random.PCG64(7))
    worst_range = 0.0
    worst_mean = 0.0
    for _ in range(100):
        h, w = int(rng.integers(4, 24)), int(rng.integers(4, 24))
        inst = rng.integers(0, 4, size=(h, w)).astype(np.int64)
        feats = rng.normal(size=(1, 3, h, w)).astype(np.float32)
        pooled = instance_average_pool(
            torch.from_numpy(feats), torch.from_numpy(inst).unsqueeze(0)).numpy()[0]
        for inst_id in np.unique(inst):
            if inst_id == 0:
                continue
            mask = inst == inst_id
            for c in range(3):
                region = pooled[c][mask]
                worst_range = max(worst_range, float(region.max() - region.min()))
                worst_mean = max(worst_mean, abs(
                    float(region.mean() - feats[0, c][mask].mean())))
    ok = worst_range <= 1e-6 and worst_mean <= 1e-6
    check("instance pooling", ok,
          f"max in-region range {worst_range:.2e}, max mean drift {worst_mean:.2e}")


def test_c06_kmeans():
    rng = np.random.Generator(np.random.PCG64(9))
    pts = rng.normal(size=(300, 3))
    _, _, history = lloyd_kmeans(pts, 6, seed=3)
    monotone = all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    mean_a, mean_b = np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.5, 0.2])
    blobs = np.concatenate([
        mean_a + rng.normal(scale=0.02, size=(60, 3)),
        mean_b + rng.normal(scale=0.02, size=(60, 3))])
    centers, _, _ = lloyd_kmeans(blobs, 2, seed=4)
    err = max(min(np.linalg.norm(c - mean_a) for c in centers),
              min(np.linalg.norm(c - mean_b) for c in centers))

    c1, a1, _ = lloyd_kmeans(pts, 5, seed=11)
    c2, a2, _ = lloyd_kmeans(pts, 5, seed=11)
    deterministic = np.array_equal(c1, c2) and np.array_equal(a1, a2)
    ok = monotone and err < 0.05 and deterministic
    check("k-means", ok,
          f"inertia monotone={monotone}, blob error {err:.4f} (< 0.05), "
          f"deterministic={deterministic}")


def test_c07_training_smoke_table1_analogue(trained, datasets, oracle):
    real = oracle_scores_on_real(oracle, datasets["test"])
    assert real.pixel_accuracy >= 0.95, (
        f"oracle gate failed: real acc {real.pixel_accuracy:.4f}")
    report = evaluate_model(trained["engine"], datasets["test"], oracle, seed=0)
    (Path(trained["bundle"]).parent / "eval_report.json").write_text(
        json.dumps(report, indent=1))
    acc_ratio = report["ratios"]["pixel_accuracy"]
    iou_ratio = report["ratios"]["mean_iou"]
    minutes = trained.get("train_minutes")
    time_note = f", trained in {minutes:.1f} min" if minutes else ""
    ok = acc_ratio >= 0.70 and iou_ratio >= 0.50
    check("training smoke + Table 1 analogue", ok,
          f"acc ratio {acc_ratio:.3f} (>= 0.70), mIoU ratio {iou_ratio:.3f} "
          f"(>= 0.50){time_note}")


def test_c07b_untrained_generator_sanity_floor(datasets, oracle):
    # an untrained generator must segment poorly (protocol sanity check)
    from semsynth.training import build_models, bundle_from_models, init_weights, save_bundle
    config = three_phase_config(FULL_RES, (1, 1, 1), use_encoder=False,
                                width_divisor=8, seed=123)
    models = build_models(config)
    init_weights(models, seed=123)
    import tempfile
    with tempfile.TemporaryDirectory() as td:
        path = Path(td) / "untrained.bundle"
        save_bundle(bundle_from_models(models, config), path)
        engine = SynthesisEngine.from_bundle(path)
        subset = load_subset(datasets["test"], 16)
        report = evaluate_model(engine, subset, oracle, seed=0)
    miou = report["synthesized"]["mean_iou"]
    assert miou < 0.2, f"untrained generator scored mIoU {miou:.3f} (>= 0.2)"


def load_subset(dataset, count):
    from semsynth.data import Dataset
    n = min(count, len(dataset))
    return Dataset(
        ids=dataset.ids[:n], labels=dataset.labels[:n],
        instances=dataset.instances[:n], images=dataset.images[:n],
        num_classes=dataset.num_classes, meta=dataset.meta)


def test_c08_ablation_directions(ablation_results):
    results, rows_by_seed, report_path = ablation_results
    med = {k: float(np.median(v)) for k, v in results.items()}
    fm_ok = med["gan_fm_multi_d"] >= med["gan_only_multi_d"]
    d_ok = med["gan_fm_multi_d"] >= med["gan_fm_single_d"]
    table = format_ablation_table(rows_by_seed[ABL_SEEDS[0]])
    assert report_path.exists() and table
    check("ablation directions", fm_ok and d_ok,
          f"median mIoU: full {med['gan_fm_multi_d']:.4f}, "
          f"GAN-only {med['gan_only_multi_d']:.4f}, "
          f"single-D {med['gan_fm_single_d']:.4f}")


def _style_scene():
    h, w = FULL_RES
    label = np.zeros((h, w), dtype=np.int32)
    label[h // 2 :, :] = 1
    inst = np.zeros((h, w), dtype=np.int32)
    yy, xx = np.mgrid[0:h, 0:w]
    disc = (yy - h // 3) ** 2 + (xx - w // 4) ** 2 <= (h // 6) ** 2
    label[disc] = 2
    inst[disc] = 1
    rect = (yy >= h // 2 + 8) & (yy < h // 2 + 40) & (xx >= w // 2) & (xx < w // 2 + 56)
    label[rect] = 3
    inst[rect] = 2
    return (LabelMap(grid=label, num_classes=4), InstanceMap(grid=inst),
            inst == 1)


def test_c09_style_control(trained):
    engine = trained["engine"]
    label, instance, disc_mask = _style_scene()
    centers = engine.catalog.centers[2]
    assert len(centers) >= 2, "need at least two style centers for class 2"
    dists = ((centers[None, :, :] - centers[:, None, :]) ** 2).sum(axis=2)
    i0, i1 = np.unravel_index(np.argmax(dists), dists.shape)

    fixed = {2: {"cluster": 0}}
    styles_a = engine.resolve_styles(label, instance,
                                     {1: {"cluster": int(i0)}, **fixed}, seed=5)
    styles_b = engine.resolve_styles(label, instance,
                                     {1: {"cluster": int(i1)}, **fixed}, seed=5)

    img_a = engine.synthesize(label, instance, styles_a)
    img_a_again = engine.synthesize(label, instance, styles_a)
    unchanged = np.array_equal(img_a, img_a_again)

    img_b = engine.synthesize(label, instance, styles_b)
    diff_mask = np.any(np.abs(img_a - img_b) > 1e-6, axis=0)
    some_change = bool(diff_mask.any())

    rf = composed_receptive_field(engine.models.gen.g1, engine.models.gen.g2)
    radius = (rf + 1) // 2
    from scipy.ndimage import distance_transform_cdt
    distances = distance_transform_cdt(~disc_mask, metric="chessboard")
    allowed = distances <= radius
    contained = bool((diff_mask & ~allowed).sum() == 0)

    check("style control", unchanged and some_change and contained,
          f"identical request identical: {unchanged}; cluster change alters "
          f"{int(diff_mask.sum())} px, all within mask dilated by rf radius "
          f"{radius}: {contained}")


def test_c10_service_contract(trained, datasets):
    app = create_app(trained["bundle"], trained["catalog"],
                     max_size=FULL_RES, queue_capacity=4)
    client = TestClient(app)
    pair = datasets["test"][0]
    label8 = pair.label.grid.astype(np.uint8)
    inst16 = pair.instance.grid.astype(np.uint16)
    body = {
        "label": {"png_b64": encode_png_b64(label8)},
        "instance": {"png_b64": encode_png_b64(inst16)},
        "seed": 11,
    }
    t0 = time.monotonic()
    r1 = client.post("/synthesize", json=body)
    latency = time.monotonic() - t0
    r2 = client.post("/synthesize", json=body)
    ok_200 = r1.status_code == 200 and r2.status_code == 200
    deterministic = ok_200 and (
        r1.json()["image"]["png_b64"] == r2.json()["image"]["png_b64"])
    echo_ok = ok_200 and set(r1.json()["styles_used"]) == {
        str(i) for i in pair.instance.instance_ids()}

    # error-code matrix: 400 / 404 / 422 / 429 / 503 / 200
    odd = np.zeros((40, 64), dtype=np.uint8)
    matrix = {
        "bad_dims_400": client.post("/synthesize", json={
            "label": {"png_b64": encode_png_b64(odd)},
            "instance": {"png_b64": encode_png_b64(odd.astype(np.uint16))}},
        ).status_code == 400,
        "bad_payload_400": client.post("/synthesize", json={
            "label": {"png_b64": "!!"},
            "instance": {"png_b64": encode_png_b64(inst16)}}).status_code == 400,
        "unknown_class_422": client.post("/synthesize", json={
            "label": {"rle": encode_rle(np.full((32, 32), 9, dtype=np.int64))},
            "instance": {"rle": encode_rle(np.zeros((32, 32), dtype=np.int64))}},
        ).status_code == 422,
        "bad_cluster_422": client.post("/synthesize", json={
            **body, "styles": {"1": {"cluster": 99}}}).status_code == 422,
        "styles_404": client.get("/styles", params={"class": 42}).status_code == 404,
        "loading_503": TestClient(create_app()).post(
            "/synthesize", json=body).status_code == 503,
    }
    full_app = create_app(trained["bundle"], trained["catalog"], queue_capacity=0)
    matrix["queue_429"] = TestClient(full_app).post(
        "/synthesize", json=body).status_code == 429
    matrix_ok = all(matrix.values())

    ok = ok_200 and deterministic and echo_ok and matrix_ok and latency < 2.0
    failed = [k for k, v in matrix.items() if not v]
    check("service contract", ok,
          f"deterministic={deterministic}, echo={echo_ok}, latency "
          f"{latency * 1000:.0f} ms (< 2000), matrix failures: {failed or 'none'}")
