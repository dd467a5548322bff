"""Create an untrained demo bundle + catalog so the service/editor can run."""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from semsynth.encoder import StyleCatalog
from semsynth.training import (
    build_models, bundle_from_models, init_weights, save_bundle, three_phase_config)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = three_phase_config((128, 256), (1, 1, 1), use_encoder=True,
                                width_divisor=8, seed=args.seed)
    models = build_models(config)
    init_weights(models, seed=args.seed)
    save_bundle(bundle_from_models(models, config), out / "model.bundle")

    rng = np.random.Generator(np.random.PCG64(args.seed))
    catalog = StyleCatalog(
        centers={c: rng.uniform(-0.8, 0.8, size=(4, 3)) for c in range(4)},
        counts={c: [5, 5, 5, 5] for c in range(4)},
    )
    catalog.save(out / "catalog.json")
    print(f"demo bundle + catalog written to {out}")


if __name__ == "__main__":
    main()
