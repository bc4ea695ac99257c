"""Regenerate the mini classification fixtures under tests/fixtures/mini.

Layout::

    mini/train/<shape>/<n>.evs   drift recordings of jittered shapes
    mini/test/<shape>/<n>.evs
    mini/network/                layer-1 network (default parameters) trained on train/
    mini/golden_report.json      report of `evgassom classify` on the above

Usage: python3 scripts/make_fixtures.py [--out tests/fixtures/mini]
"""

import argparse
import shutil
from pathlib import Path

from evgassom.cli import main as cli_main
from evgassom.events import write_stream
from evgassom.pipeline import DEFAULT_LAYER1, save_network, train_network
from evgassom.synthetic import shape_recording

CLASSES = ("cross", "disk", "hbar", "ring")
N_TRAIN, N_TEST = 3, 2
DURATION = 0.25
SEED = 2024


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "mini"))
    args = ap.parse_args()
    out = Path(args.out)
    if out.exists():
        shutil.rmtree(out)

    train = []
    for ci, kind in enumerate(CLASSES):
        for split, n in (("train", N_TRAIN), ("test", N_TEST)):
            d = out / split / kind
            d.mkdir(parents=True)
            for i in range(n):
                seed = SEED + 1000 * ci + (0 if split == "train" else 500) + i
                s = shape_recording(kind, seed, sensor_side=32, duration=DURATION)
                write_stream(d / f"{i:02d}.evs", s)
                if split == "train":
                    train.append(s)

    banks = train_network([DEFAULT_LAYER1], train, seed=SEED)
    save_network(out / "network", banks, [DEFAULT_LAYER1])

    report_dir = out / "run"
    code = cli_main([
        "--out", str(report_dir), "classify", str(out / "network"),
        "--train", str(out / "train"), "--test", str(out / "test"),
    ])
    if code:
        raise SystemExit(code)
    shutil.copy(report_dir / "report.json", out / "golden_report.json")
    shutil.rmtree(report_dir)
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
