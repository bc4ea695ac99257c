"""Command-line interface.

Every command writes ``<command>.manifest.json`` into its output directory:
the argument vector, seeds, configuration, and SHA-256 digests of every input
and output file. Re-running the recorded arguments reproduces the outputs
byte for byte (``bench`` timings excepted).

Exit codes: 0 success, 1 numerical failure, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classify import LabeledSample, combine, evaluate, features_to_csv, histogram
from .drift_sim import DriftParams, DvsParams, StimulusProgram, load_images, simulate
from .errors import DataError, EmptyProgram, GassomError
from .events import EventStream, SensorGeometry, read_stream, write_stream
from .gassom import init_bank
from .pipeline import (
    DEFAULT_CONFIGS,
    Mode,
    encode_network,
    format_config,
    load_config,
    load_network,
    run_layer,
    save_network,
    train_network,
)
from .viz import export_layer1_grid, export_layer2_composite, write_pgm

log = logging.getLogger("evgassom")

STREAM_SUFFIXES = {".evs", ".bin", ".csv"}


# --- helpers -----------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextlib.contextmanager
def _context(path):
    """Attach the file being processed to any data error raised inside."""
    try:
        yield
    except (GassomError, OSError) as e:
        if getattr(e, "path", None) is None:
            e.path = str(path)
        raise


def _read(path, geometry: SensorGeometry | None = None) -> EventStream:
    with _context(path):
        return read_stream(path, geometry)


def _write_manifest(args, outputs, inputs=(), seeds=None, configs=None) -> Path:
    out = Path(args.out)
    manifest = {
        "tool": "evgassom",
        "version": __version__,
        "command": args.command,
        "argv": args.argv,
        "config_path": args.config,
        "config": format_config(configs) if configs else None,
        "seeds": seeds or {"seed": args.seed},
        "threads": args.threads,
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"path": str(Path(p).relative_to(out)), "sha256": _sha256(p)} for p in outputs],
    }
    path = out / f"{args.command}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _configs(args, n_layers: int | None = None):
    configs = load_config(args.config) if args.config else list(DEFAULT_CONFIGS)
    if n_layers is not None:
        if not 1 <= n_layers <= len(configs):
            raise DataError(f"--layers must be between 1 and {len(configs)}")
        configs = configs[:n_layers]
    return configs


def _network(path):
    with _context(Path(path)):
        banks, configs = load_network(path)
    if not banks:
        raise DataError(f"{path}: no trained layers found")
    return banks, configs


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_boundaries(path) -> list[int]:
    with _context(path):
        return [int(line) for line in Path(path).read_text().split()]


def _dataset(directory, limit: int | None) -> list[tuple[Path, str]]:
    """``directory/<label>/<recording>`` pairs, labels and files in sorted order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    items = []
    for class_dir in sorted(p for p in directory.iterdir() if p.is_dir()):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in STREAM_SUFFIXES)
        items += [(f, class_dir.name) for f in files[:limit]]
    if not items:
        raise DataError(f"{directory}: no recordings found in class subdirectories")
    return items


# --- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    images = load_images(args.image_dir) if Path(args.image_dir).is_dir() else None
    if images is None:
        raise DataError(f"{args.image_dir}: not a directory")
    seeds = {"drift": args.seed, "program": args.seed + 1, "dvs": args.seed + 2}
    program = StimulusProgram(
        images, presentation_interval=args.interval, rotate_fraction=args.rotate_fraction, seed=seeds["program"],
    )
    drift = DriftParams(
        diffusion=args.diffusion, step_dt=args.step_dt, boundary=args.boundary, boundary_unit=args.boundary_unit,
        pixels_per_degree=args.pixels_per_degree, seed=seeds["drift"],
    )
    dvs = DvsParams(
        sensor=SensorGeometry(args.width, args.height, 2), contrast_threshold=args.contrast_threshold,
        background_rate=args.background_rate, seed=seeds["dvs"],
    )
    stream, bounds = simulate(program, drift, dvs)
    out = _out_dir(args)
    write_stream(out / "stream.evs", stream)
    (out / "stream.bounds").write_text("".join(f"{b}\n" for b in bounds))
    inputs = sorted(p for p in Path(args.image_dir).iterdir() if p.is_file())
    _write_manifest(args, [out / "stream.evs", out / "stream.bounds"], inputs, seeds)
    print(f"{len(stream)} events, {len(images)} presentations -> {out / 'stream.evs'}")
    return 0


def cmd_train(args) -> int:
    configs = _configs(args, args.layers)
    streams = [_read(p) for p in args.streams]
    bounds = None
    if args.boundaries:
        if len(args.boundaries) != len(streams):
            raise DataError("give one --boundaries file per stream")
        bounds = [_read_boundaries(p) for p in args.boundaries]
    for s in streams:
        if len(s) == 0:
            log.warning("training stream is empty; the bank will equal its initialization")
    banks = train_network(configs, streams, epochs=args.epochs, seed=args.seed, boundaries=bounds)
    out = _out_dir(args)
    save_network(out, banks, configs)
    outputs = [out / "network.cfg"] + [out / f"layer{i}.gsb" for i in range(1, len(banks) + 1)]
    _write_manifest(args, outputs, list(args.streams) + list(args.boundaries or []), configs=configs)
    print(f"trained {len(banks)} layer(s) -> {out}")
    return 0


def cmd_encode(args) -> int:
    banks, configs = _network(args.network)
    out = _out_dir(args)
    outputs = []
    for path in args.streams:
        stream = _read(path)
        with _context(path):
            layers = encode_network(banks, configs, stream)
        for i, s in enumerate(layers, 1):
            dest = out / f"{Path(path).stem}.l{i}.evs"
            write_stream(dest, s)
            outputs.append(dest)
            print(f"{path}: layer {i}: {len(s)} events -> {dest}")
    _write_manifest(args, outputs, _network_files(args.network) + list(args.streams), configs=configs)
    return 0


def _network_files(directory) -> list[Path]:
    d = Path(directory)
    return [d / "network.cfg"] + sorted(d.glob("layer*.gsb"))


def _features(banks, configs, items, layers) -> list[LabeledSample]:
    samples = []
    for path, label in items:
        stream = _read(path)
        with _context(path):
            outs = encode_network(banks[: max(layers)], configs[: max(layers)], stream)
        hists = [histogram(outs[i - 1], configs[i - 1].num_subspaces) for i in layers]
        samples.append(LabeledSample(hists[0] if len(hists) == 1 else combine(hists), label))
    return samples


def cmd_classify(args) -> int:
    banks, configs = _network(args.network)
    layers = sorted({int(v) for v in args.feature_layers.split(",")})
    if layers[0] < 1 or layers[-1] > len(banks):
        raise DataError(f"--feature-layers must name layers 1..{len(banks)}")
    train_items = _dataset(args.train, args.limit_per_class)
    train = _features(banks, configs, train_items, layers)
    out = _out_dir(args)
    (out / "features_train.csv").write_text(features_to_csv(train))
    outputs = [out / "features_train.csv"]
    inputs = _network_files(args.network) + [p for p, _ in train_items]
    if args.protocol == "k-fold":
        report = evaluate(train, "k-fold", k=args.k, seed=args.seed)
    else:
        if args.test is None:
            raise DataError("fixed-split protocol needs --test")
        test_items = _dataset(args.test, args.limit_per_class)
        test = _features(banks, configs, test_items, layers)
        (out / "features_test.csv").write_text(features_to_csv(test))
        outputs.append(out / "features_test.csv")
        inputs += [p for p, _ in test_items]
        report = evaluate(train, "fixed-split", test=test)
    (out / "report.json").write_text(report.to_json() + "\n")
    outputs.append(out / "report.json")
    _write_manifest(args, outputs, inputs, configs=configs)
    if report.empty_queries:
        log.warning("%d test recordings produced no output events", report.empty_queries)
    print(f"accuracy: {report.accuracy:.4f} ({report.protocol})")
    return 0


def cmd_inspect_l1(args) -> int:
    banks, configs = _network(args.network)
    out = _out_dir(args)
    write_pgm(out / "layer1.pgm", export_layer1_grid(banks[0], configs[0]))
    _write_manifest(args, [out / "layer1.pgm"], _network_files(args.network), configs=configs)
    print(f"-> {out / 'layer1.pgm'}")
    return 0


def cmd_inspect_l2(args) -> int:
    banks, configs = _network(args.network)
    if len(banks) < 2:
        raise DataError(f"{args.network}: network has no trained layer 2")
    nodes = [int(v) for v in args.nodes.split(",")] if args.nodes else None
    out = _out_dir(args)
    write_pgm(out / "layer2.pgm", export_layer2_composite(banks[1], banks[0], configs, nodes, args.basis))
    _write_manifest(args, [out / "layer2.pgm"], _network_files(args.network), configs=configs)
    print(f"-> {out / 'layer2.pgm'}")
    return 0


def bench_stream(seed: int = 0, duration: float = 2.0, side: int = 128) -> EventStream:
    """A drift recording of 1/f noise, used when ``bench`` is given no stream."""
    from .synthetic import pink_noise

    img = pink_noise((side + 64, side + 64), seed)
    program = StimulusProgram([img], presentation_interval=duration, rotate_fraction=0.0, seed=seed)
    stream, _ = simulate(program, DriftParams(seed=seed), DvsParams(sensor=SensorGeometry(side, side, 2)))
    return stream


def encode_throughput(config, bank, stream, repeat: int = 3) -> float:
    """Best-of-``repeat`` events per second for an encode-mode pass."""
    run_layer(config, bank, stream.select(np.arange(min(len(stream), 1000))))  # compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_layer(config, bank, stream, Mode.ENCODE)
        best = min(best, time.perf_counter() - t0)
    return len(stream) / best


def cmd_bench(args) -> int:
    if args.network:
        banks, configs = _network(args.network)
        bank, config = banks[0], configs[0]
    else:
        config = _configs(args)[0]
        bank = init_bank(config.num_subspaces, config.dim, config.subspace_dim, args.seed)
    stream = _read(args.stream) if args.stream else bench_stream(args.seed)
    rate = encode_throughput(config, bank, stream, args.repeat)
    out = _out_dir(args)
    result = {"events": len(stream), "events_per_second": rate, "target": 1e5, "meets_target": rate >= 1e5}
    (out / "bench.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    inputs = [args.stream] if args.stream else []
    _write_manifest(args, [out / "bench.json"], inputs, configs=[config])
    print(f"encode layer 1: {len(stream)} events, {rate:,.0f} events/s "
          f"({'meets' if rate >= 1e5 else 'below'} the 1e5 events/s target)")
    return 0


# --- parser ------------------------------------------------------------------


def _global_flags(parser, suppress: bool) -> None:
    # the subcommand copies use SUPPRESS so they never overwrite a value given
    # before the subcommand name
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="layer configuration file ([layer.N] sections)")
    parser.add_argument("--seed", type=int, default=d(0), help="base random seed")
    parser.add_argument("--threads", type=int, default=d(1), help="worker threads (recorded; processing is serial)")
    parser.add_argument("--out", default=d("out"), help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = argparse.ArgumentParser(prog="evgassom", description="Event-based GASSOM feature learning.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a drift event stream from an image directory")
    s.add_argument("image_dir")
    s.add_argument("--interval", type=float, default=2.0, help="presentation interval, s")
    s.add_argument("--rotate-fraction", type=float, default=0.3)
    s.add_argument("--diffusion", type=float, default=40.0, help="arcmin^2/s")
    s.add_argument("--step-dt", type=float, default=0.025, help="s")
    s.add_argument("--boundary", type=float, default=30.0)
    s.add_argument("--boundary-unit", choices=("deg", "arcmin"), default="deg")
    s.add_argument("--pixels-per-degree", type=float, default=60.0)
    s.add_argument("--width", type=int, default=128)
    s.add_argument("--height", type=int, default=128)
    s.add_argument("--contrast-threshold", type=float, default=0.15)
    s.add_argument("--background-rate", type=float, default=0.0, help="Hz per pixel")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", parents=[common], help="train layers on one or more streams")
    s.add_argument("streams", nargs="+")
    s.add_argument("--layers", type=int, help="train only the first N configured layers")
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--boundaries", action="append", help="presentation-change times (one file per stream)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", parents=[common], help="run a trained network over streams")
    s.add_argument("network")
    s.add_argument("streams", nargs="+")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("classify", parents=[common], help="histogram features + nearest neighbour")
    s.add_argument("network")
    s.add_argument("--train", required=True, help="directory of <label>/<recording> files")
    s.add_argument("--test", help="test directory (fixed-split protocol)")
    s.add_argument("--protocol", choices=("fixed-split", "k-fold"), default="fixed-split")
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--feature-layers", default="1", help="comma-separated layers to histogram")
    s.add_argument("--limit-per-class", type=int)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("inspect-l1", parents=[common], help="export the layer-1 basis grid as PGM")
    s.add_argument("network")
    s.set_defaults(func=cmd_inspect_l1)

    s = sub.add_parser("inspect-l2", parents=[common], help="export layer-2 composites as PGM")
    s.add_argument("network")
    s.add_argument("--nodes", help="comma-separated layer-2 node indices (default all)")
    s.add_argument("--basis", type=int, default=0)
    s.set_defaults(func=cmd_inspect_l2)

    s = sub.add_parser("bench", parents=[common], help="encode-mode layer-1 throughput")
    s.add_argument("stream", nargs="?", help="stream to encode (default: synthetic 128x128 drift recording)")
    s.add_argument("--network", help="trained network directory (default: random layer-1 bank)")
    s.add_argument("--repeat", type=int, default=3)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")

    def fail(code, e):
        where = getattr(e, "path", None)
        print(f"evgassom: error: {where + ': ' if where else ''}{e}", file=sys.stderr)
        return code

    try:
        return args.func(args)
    except EmptyProgram as e:
        return fail(2, e)
    except (DataError, OSError) as e:
        return fail(3, e)
    except ValueError as e:
        return fail(2, e)
    except GassomError as e:
        return fail(1, e)


if __name__ == "__main__":
    sys.exit(main())
