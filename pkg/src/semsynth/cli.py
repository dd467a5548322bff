"""Command-line entry points: dataset generation, training, evaluation, serving.

The train config file is the TrainConfig JSON schema plus three path keys:
{"dataset": DIR, "out": DIR, "feature_net": ORACLE_BUNDLE?}.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .arch import format_shape_table, parse_arch, scale_graph
from .encoder import InstanceFeature, StyleEncoder, build_style_catalog, harvest_features
from .evaluation import (
    evaluate_model,
    load_oracle,
    oracle_scores_on_real,
    save_oracle,
    train_oracle,
)
from .synthesis import SynthesisEngine
from .training import TrainConfig, Trainer, load_bundle, models_from_bundle


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"input must look like HxWxC, got {text!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


def cmd_make_dataset(args) -> int:
    h, w = args.size
    meta = D.generate_shapes_dataset(
        seed=args.seed, count=args.count, height=h, width=w,
        out_dir=args.out, num_styles_per_class=args.styles_per_class)
    print(f"wrote {meta['count']} samples at {h}x{w} to {args.out}")
    return 0


def cmd_arch_inspect(args) -> int:
    graph = parse_arch(args.spec)
    if args.divisor != 1:
        graph = scale_graph(graph, args.divisor)
    h, w, c = args.input
    print(format_shape_table(graph, h, w, c))
    return 0


def cmd_train(args) -> int:
    with open(args.config) as f:
        raw = json.load(f)
    dataset_dir = raw.pop("dataset", None) or args.dataset
    out_dir = raw.pop("out", None) or args.out
    if not dataset_dir or not out_dir:
        print("train: dataset and out directories are required "
              "(config keys or --dataset/--out)", file=sys.stderr)
        return 2
    feature_net_path = raw.pop("feature_net", None)
    config = TrainConfig.from_dict(raw)
    dataset = D.load_dataset(dataset_dir)
    feature_net = None
    if config.use_perceptual:
        if feature_net_path is None:
            print("train: use_perceptual requires a feature_net path", file=sys.stderr)
            return 2
        feature_net = load_oracle(feature_net_path)
    trainer = Trainer(config, dataset, out_dir, feature_net=feature_net)

    def progress(entry):
        if entry["step"] % 50 == 0:
            print(f"phase {entry['phase']} epoch {entry['epoch']} "
                  f"step {entry['step']}: g={entry['g_total']:.3f} "
                  f"d={entry['d_total']:.3f}", flush=True)

    final = trainer.run(resume=args.resume, force=args.force, log_fn=progress)
    print(f"final bundle: {final}")
    return 0


def cmd_train_oracle(args) -> int:
    dataset = D.load_dataset(args.dataset)
    oracle, provenance = train_oracle(
        dataset, seed=args.seed, steps=args.steps, batch_size=args.batch_size)
    save_oracle(oracle, provenance, args.out)
    print(f"oracle val pixel accuracy: {provenance['val_pixel_accuracy']:.4f}")
    print(f"saved to {args.out}")
    return 0


def cmd_encode_features(args) -> int:
    models, config = models_from_bundle(load_bundle(args.bundle))
    if models.encoder is None:
        print("encode-features: bundle has no encoder", file=sys.stderr)
        return 2
    dataset = D.load_dataset(args.dataset)
    records = harvest_features(models.encoder, dataset)
    payload = [r.to_dict() for r in records]
    Path(args.out).write_text(json.dumps(payload, indent=1))
    print(f"harvested {len(records)} instance features to {args.out}")
    return 0


def cmd_cluster_features(args) -> int:
    payload = json.loads(Path(args.features).read_text())
    records = [
        InstanceFeature(
            sample_id=rec["sample_id"], instance_id=int(rec["instance_id"]),
            class_id=int(rec["class_id"]),
            vector=np.asarray(rec["vector"], dtype=np.float64))
        for rec in payload
    ]
    catalog = build_style_catalog(records, k=args.k, seed=args.seed,
                                  num_classes=args.num_classes)
    catalog.save(args.out)
    sizes = {c: len(catalog.centers[c]) for c in catalog.classes()}
    print(f"catalog classes and center counts: {sizes}")
    print(f"saved to {args.out}")
    return 0


def cmd_eval_seg(args) -> int:
    engine = SynthesisEngine.from_bundle(args.bundle, args.catalog)
    oracle = load_oracle(args.oracle)
    dataset = D.load_dataset(args.dataset)
    report = evaluate_model(engine, dataset, oracle, seed=args.seed)
    Path(args.out).write_text(json.dumps(report, indent=1))
    synth, real = report["synthesized"], report["real_reference"]
    print(f"synthesized: acc={synth['pixel_accuracy']:.4f} mIoU={synth['mean_iou']:.4f}")
    print(f"real oracle: acc={real['pixel_accuracy']:.4f} mIoU={real['mean_iou']:.4f}")
    print(f"report written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        bundle_path=args.bundle, catalog_path=args.catalog,
        max_size=args.max_size, queue_capacity=args.queue,
        assets_dir=args.assets)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semsynth")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="generate a shapes-world dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=_parse_size, required=True, metavar="HxW")
    p.add_argument("--out", required=True)
    p.add_argument("--styles-per-class", type=int, default=4)
    p.set_defaults(func=cmd_make_dataset)

    p_arch = sub.add_parser("arch", help="architecture notation tools")
    arch_sub = p_arch.add_subparsers(dest="arch_command", required=True)
    p = arch_sub.add_parser("inspect", help="print the shape table for a spec string")
    p.add_argument("spec")
    p.add_argument("--input", type=_parse_shape, required=True, metavar="HxWxC")
    p.add_argument("--divisor", type=int, default=1)
    p.set_defaults(func=cmd_arch_inspect)

    p = sub.add_parser("train", help="run the training schedule from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-oracle", help="train the oracle segmenter")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=4)
    p.set_defaults(func=cmd_train_oracle)

    p = sub.add_parser("encode-features", help="harvest per-instance style features")
    p.add_argument("--bundle", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode_features)

    p = sub.add_parser("cluster-features", help="build the per-class style catalog")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-classes", type=int, default=4)
    p.set_defaults(func=cmd_cluster_features)

    p = sub.add_parser("eval-seg", help="segmentation-score evaluation of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--catalog", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("serve", help="run the HTTP synthesis service")
    p.add_argument("--bundle", required=True)
    p.add_argument("--catalog", default=None)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--max-size", type=_parse_size, default=(256, 512), metavar="HxW")
    p.add_argument("--queue", type=int, default=4)
    p.add_argument("--assets", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
