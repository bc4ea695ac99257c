"""Encode-mode throughput of layer 1 across sensor sizes.

Usage: python3 scripts/bench.py [--sides 32 64 128] [--repeat 3]
"""

import argparse

from evgassom.cli import bench_stream, encode_throughput
from evgassom.gassom import init_bank
from evgassom.pipeline import DEFAULT_LAYER1, count_layer_fires


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sides", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--duration", type=float, default=2.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    bank = init_bank(DEFAULT_LAYER1.num_subspaces, DEFAULT_LAYER1.dim, seed=0)
    print(f"{'side':>5} {'events':>9} {'fires':>8} {'events/s':>12}")
    for side in args.sides:
        stream = bench_stream(seed=0, duration=args.duration, side=side)
        rate = encode_throughput(DEFAULT_LAYER1, bank, stream, args.repeat)
        print(f"{side:>5} {len(stream):>9} {count_layer_fires(DEFAULT_LAYER1, stream):>8} {rate:>12,.0f}")


if __name__ == "__main__":
    main()
