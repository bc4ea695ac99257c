"""Train layer 1 on drifting natural images and gratings, then measure it.

Prints the orientation-selectivity and slowness summaries and writes the
trained network plus a PGM of the learned basis grid.

Usage: python3 scripts/train_layer1.py [--out runs/layer1] [--seed 1] [--epochs 3]
"""

import argparse
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from evgassom.analysis import orientation_samples, selectivity_index, slowness_ratios, tuning_curves
from evgassom.drift_sim import DriftParams, DvsParams, StimulusProgram, simulate
from evgassom.events import SensorGeometry
from evgassom.pipeline import DEFAULT_LAYER1, save_network, train_network
from evgassom.synthetic import training_images
from evgassom.viz import export_layer1_grid, write_pgm


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/layer1")
    ap.add_argument("--seed", type=int, default=1, help="image-set seed")
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--kappa", type=float, default=DEFAULT_LAYER1.kappa)
    ap.add_argument("--natural", type=int, default=9, help="number of natural images")
    ap.add_argument("--gratings", type=int, default=15, help="number of random gratings")
    ap.add_argument("--interval", type=float, default=0.25, help="presentation interval, s")
    ap.add_argument("--sensor", type=int, default=64)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    config = replace(DEFAULT_LAYER1, kappa=args.kappa)
    images = training_images(args.sensor + 32, args.natural, args.gratings, seed=args.seed)
    program = StimulusProgram(images, seed=1, presentation_interval=args.interval)
    stream, bounds = simulate(program, DriftParams(seed=2), DvsParams(sensor=SensorGeometry(args.sensor, args.sensor, 2)))
    print(f"{len(stream)} events from {len(images)} images")

    t0 = time.perf_counter()
    bank = train_network([config], stream, epochs=args.epochs, seed=0, boundaries=[bounds])[0]
    train_s = time.perf_counter() - t0

    samples = orientation_samples(config)
    tuning = tuning_curves(bank, samples)
    osi = selectivity_index(tuning)
    ratios = slowness_ratios(bank, samples)
    evaluated = ratios[~np.isnan(ratios)]
    summary = {
        "events": len(stream),
        "train_seconds": round(train_s, 1),
        "osi_above_0.5": float((osi > 0.5).mean()),
        "osi_median": float(np.median(osi)),
        "slow_fraction_all": float((np.nan_to_num(ratios, nan=np.inf) < 1).mean()),
        "slow_fraction_evaluated": float((evaluated < 1).mean()) if evaluated.size else None,
        "evaluated_nodes": int(evaluated.size),
        "preferred_orientation_deg": (np.argmax(tuning, axis=0) * 180.0 / len(samples)).tolist(),
    }

    out = Path(args.out)
    save_network(out, [bank], [config])
    write_pgm(out / "layer1.pgm", export_layer1_grid(bank, config))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for k, v in summary.items():
        if k != "preferred_orientation_deg":
            print(f"{k}: {v}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
