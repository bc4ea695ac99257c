"""Layers, cascades, and their configuration files.

A layer tiles its input sensor into overlapping patches, integrates events
into per-patch surfaces, and every time a patch fires emits one output event
at the patch's grid coordinate whose type is the best-responding subspace.
All patches share one ``SubspaceBank``. The output stream of a layer has the
same form as a sensor stream (grid-sized, ``R`` event types) and feeds the
next layer.
"""

from __future__ import annotations

import configparser
import enum
import logging
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BankShapeMismatch, ChainMismatch, DataError, GeometryMismatch
from .events import EventStream, SensorGeometry
from .gassom import (
    EmissionModel,
    GassomLearner,
    LatentPosterior,
    Schedule,
    SubspaceBank,
    forward_step,
    init_bank,
    load_bank,
    response,
    save_bank,
    transition_mix,
)
from .surface import RegionGrid, SurfaceArray, tile_regions

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    ENCODE = "encode"
    TRAIN = "train"


@dataclass(frozen=True)
class LayerConfig:
    """One layer's parameters. Durations are in microseconds."""

    patch_width: int
    stride: int
    fire_threshold: float
    tau_f: float
    tau_s: float
    num_subspaces: int
    input_types: int
    subspace_dim: int = 2
    kappa: float = 20.0
    lr_initial: float = 0.1
    lr_final: float = 0.005
    sigma_initial: float | None = None  # default sqrt(R) / 4
    sigma_final: float = 0.5

    def __post_init__(self):
        for f in ("patch_width", "stride", "fire_threshold", "tau_f", "tau_s",
                  "num_subspaces", "input_types", "subspace_dim", "kappa"):
            if not getattr(self, f) > 0:
                raise ValueError(f"LayerConfig.{f} must be positive")
        if math.isqrt(self.num_subspaces) ** 2 != self.num_subspaces:
            raise ValueError(f"num_subspaces={self.num_subspaces} is not a perfect square")

    @property
    def dim(self) -> int:
        return self.patch_width**2 * self.input_types

    @property
    def lattice_side(self) -> int:
        return math.isqrt(self.num_subspaces)

    def sigma_schedule(self, total: int) -> Schedule:
        s0 = self.sigma_initial if self.sigma_initial is not None else self.lattice_side / 4
        return Schedule(s0, self.sigma_final, total)

    def lr_schedule(self, total: int) -> Schedule:
        return Schedule(self.lr_initial, self.lr_final, total)


MS = 1000.0

DEFAULT_LAYER1 = LayerConfig(
    patch_width=10, stride=4, fire_threshold=40, tau_f=10 * MS, tau_s=100 * MS,
    num_subspaces=64, input_types=2,
)
DEFAULT_LAYER2 = LayerConfig(
    patch_width=8, stride=2, fire_threshold=10, tau_f=50 * MS, tau_s=50 * MS,
    num_subspaces=256, input_types=64,
)
DEFAULT_CONFIGS = (DEFAULT_LAYER1, DEFAULT_LAYER2)


def check_chain(configs: Sequence[LayerConfig]) -> None:
    for i in range(1, len(configs)):
        if configs[i].input_types != configs[i - 1].num_subspaces:
            raise ChainMismatch(
                f"layer {i + 1} expects {configs[i].input_types} input types, "
                f"layer {i} produces {configs[i - 1].num_subspaces}"
            )


def layer_grid(config: LayerConfig, geometry: SensorGeometry) -> RegionGrid:
    if geometry.num_types != config.input_types:
        raise GeometryMismatch(
            f"stream has {geometry.num_types} event types, layer expects {config.input_types}"
        )
    return tile_regions(geometry, config.patch_width, config.stride)


def output_geometry(config: LayerConfig, geometry: SensorGeometry) -> SensorGeometry:
    grid = layer_grid(config, geometry)
    return SensorGeometry(grid.nx, grid.ny, config.num_subspaces)


def _check_bank(config: LayerConfig, bank: SubspaceBank) -> None:
    if bank.D != config.dim or bank.R != config.num_subspaces or bank.H != config.subspace_dim:
        raise BankShapeMismatch(
            f"bank (R={bank.R}, D={bank.D}, H={bank.H}) does not match layer "
            f"(R={config.num_subspaces}, D={config.dim}, H={config.subspace_dim})"
        )


def new_learner(config: LayerConfig, total_updates: int, seed: int) -> GassomLearner:
    bank = init_bank(config.num_subspaces, config.dim, config.subspace_dim, seed)
    return GassomLearner(
        bank,
        EmissionModel(config.kappa),
        config.lr_schedule(total_updates),
        config.sigma_schedule(total_updates),
    )


def count_layer_fires(config: LayerConfig, stream: EventStream) -> int:
    grid = layer_grid(config, stream.geometry)
    surfaces = SurfaceArray(grid, config.tau_f, config.fire_threshold)
    return sum(len(b.t) for b in surfaces.feed(stream))


def run_layer(
    config: LayerConfig,
    bank: SubspaceBank,
    stream: EventStream,
    mode: Mode | str = Mode.ENCODE,
    learner: GassomLearner | None = None,
    boundaries: Sequence[int] | None = None,
) -> tuple[EventStream, SubspaceBank]:
    """Run one layer over ``stream``.

    In train mode every fire also advances the firing region's node
    posterior and updates the shared bank (in place) before the next fire is
    classified. ``boundaries`` are stimulus-change timestamps at which every
    region's posterior is reset to uniform. Encode mode only needs the
    argmax response, so the posterior recursion is skipped there.
    """
    mode = Mode(mode)
    grid = layer_grid(config, stream.geometry)
    _check_bank(config, bank)
    if mode is Mode.TRAIN:
        if learner is None:
            total = count_layer_fires(config, stream)
            learner = GassomLearner(
                bank, EmissionModel(config.kappa), config.lr_schedule(total), config.sigma_schedule(total)
            )
        elif learner.bank is not bank:
            raise ValueError("learner must own the bank being trained")
    bounds = np.asarray(sorted(boundaries or ()), dtype=np.float64)

    surfaces = SurfaceArray(grid, config.tau_f, config.fire_threshold)
    posteriors = [LatentPosterior.uniform(bank.R) for _ in range(grid.num_regions)]
    epochs = np.zeros(grid.num_regions, np.int64)
    out_t, out_k, out_p = [], [], []
    flat = bank.bases.reshape(-1, bank.D)
    for batch in surfaces.feed(stream):
        out_t.append(batch.t)
        out_k.append(batch.region)
        if mode is Mode.ENCODE:
            c = batch.x @ flat.T
            resp = (c * c).reshape(len(batch.t), bank.R, bank.H).sum(-1)
            out_p.append(np.argmax(resp, axis=1))
            continue
        types = np.empty(len(batch.t), np.int64)
        epoch_of = np.searchsorted(bounds, batch.t, side="right")
        for j in range(len(batch.t)):
            x, t, k = batch.x[j], int(batch.t[j]), int(batch.region[j])
            resp = response(bank, x)
            types[j] = int(np.argmax(resp))
            post = posteriors[k]
            if epoch_of[j] != epochs[k]:
                post = LatentPosterior.uniform(bank.R)
                epochs[k] = epoch_of[j]
            rho = transition_mix(t, post.t_prev, config.tau_s)
            post = forward_step(bank, post, x, rho, learner.emission, t=t, resp=resp)
            posteriors[k] = post
            learner.step(x, post.gamma)
        out_p.append(types)

    out_geom = SensorGeometry(grid.nx, grid.ny, bank.R)
    if not out_t:
        return EventStream(out_geom), bank
    k = np.concatenate(out_k)
    return (
        EventStream(out_geom, t=np.concatenate(out_t), x=k % grid.nx, y=k // grid.nx, p=np.concatenate(out_p)),
        bank,
    )


def _as_streams(source) -> list[EventStream]:
    if isinstance(source, EventStream):
        return [source]
    return list(source)


def train_network(
    configs: Sequence[LayerConfig],
    source: EventStream | Iterable[EventStream],
    epochs: int = 1,
    seed: int = 0,
    boundaries: Sequence[Sequence[int]] | None = None,
) -> list[SubspaceBank]:
    """Train layers one after another.

    Layer ``n`` trains on the outputs of the already-frozen layers ``< n``
    replayed over the same recordings. ``source`` is a stream or a list of
    independent recordings (surfaces and posteriors restart per recording);
    ``boundaries`` optionally gives per-recording stimulus-change times.
    Bank ``n`` is initialized from ``seed + n``.
    """
    configs = list(configs)
    check_chain(configs)
    inputs = _as_streams(source)
    bounds = list(boundaries) if boundaries is not None else [None] * len(inputs)
    if len(bounds) != len(inputs):
        raise ValueError("boundaries must give one sequence per recording")
    banks = []
    for n, config in enumerate(configs):
        total = epochs * sum(count_layer_fires(config, s) for s in inputs)
        learner = new_learner(config, total, seed + n)
        for _ in range(epochs):
            for s, b in zip(inputs, bounds):
                run_layer(config, learner.bank, s, Mode.TRAIN, learner=learner, boundaries=b)
        log.info("layer %d trained on %d fires", n + 1, learner.steps)
        if total == 0:
            log.warning("layer %d saw no fires; bank equals its initialization", n + 1)
        banks.append(learner.bank)
        if n + 1 < len(configs):
            inputs = [run_layer(config, learner.bank, s, Mode.ENCODE)[0] for s in inputs]
    return banks


def encode_network(
    banks: Sequence[SubspaceBank], configs: Sequence[LayerConfig], stream: EventStream
) -> list[EventStream]:
    check_chain(configs)
    if len(banks) != len(configs):
        raise ChainMismatch(f"{len(banks)} banks for {len(configs)} layers")
    outputs = []
    for bank, config in zip(banks, configs):
        stream, _ = run_layer(config, bank, stream, Mode.ENCODE)
        outputs.append(stream)
    return outputs


# --- configuration files -----------------------------------------------------

_DURATION = re.compile(r"^\s*([0-9.eE+-]+)\s*(ms|us|s)?\s*$")
_DURATION_KEYS = {"tau_f", "tau_s"}
_INT_KEYS = {"patch_width", "stride", "num_subspaces", "input_types", "subspace_dim"}


def parse_duration(text: str) -> float:
    """``"10ms"`` -> 10000.0 microseconds. Bare numbers are microseconds."""
    m = _DURATION.match(text)
    if not m:
        raise DataError(f"cannot parse duration {text!r}")
    value, unit = float(m.group(1)), m.group(2) or "us"
    return value * {"us": 1.0, "ms": 1e3, "s": 1e6}[unit]


def _format_duration(us: float) -> str:
    if us % 1000 == 0:
        return f"{us / 1000:g}ms"
    return f"{us:g}us"


def parse_config(text: str) -> list[LayerConfig]:
    """Parse ``[layer.N]`` sections of ``key = value`` lines into LayerConfigs."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    known = {f.name for f in fields(LayerConfig)}
    layers = {}
    for section in cp.sections():
        m = re.fullmatch(r"layer\.(\d+)", section)
        if not m:
            continue
        values = {}
        for key, raw in cp.items(section):
            if key not in known:
                raise DataError(f"[{section}] unknown key {key!r}")
            if key in _DURATION_KEYS:
                values[key] = parse_duration(raw)
            elif key in _INT_KEYS:
                values[key] = int(raw)
            elif raw.strip().lower() == "none":
                values[key] = None
            else:
                values[key] = float(raw)
        try:
            layers[int(m.group(1))] = LayerConfig(**values)
        except TypeError as e:
            raise DataError(f"[{section}] {e}") from None
    if not layers:
        raise DataError("configuration has no [layer.N] sections")
    order = sorted(layers)
    if order != list(range(1, len(order) + 1)):
        raise DataError(f"layer sections must be numbered 1..n, got {order}")
    configs = [layers[i] for i in order]
    check_chain(configs)
    return configs


def format_config(configs: Sequence[LayerConfig]) -> str:
    lines = []
    for i, c in enumerate(configs, 1):
        lines.append(f"[layer.{i}]")
        for key, value in asdict(c).items():
            if key in _DURATION_KEYS:
                value = _format_duration(value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> list[LayerConfig]:
    return parse_config(Path(path).read_text())


# --- trained network directories ---------------------------------------------

NETWORK_CONFIG = "network.cfg"


def save_network(directory, banks: Sequence[SubspaceBank], configs: Sequence[LayerConfig]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / NETWORK_CONFIG).write_text(format_config(configs))
    for i, bank in enumerate(banks, 1):
        save_bank(directory / f"layer{i}.gsb", bank)


def load_network(directory) -> tuple[list[SubspaceBank], list[LayerConfig]]:
    directory = Path(directory)
    configs = load_config(directory / NETWORK_CONFIG)
    banks = []
    for i, config in enumerate(configs, 1):
        path = directory / f"layer{i}.gsb"
        if not path.exists():
            break
        banks.append(load_bank(path, expected_dim=config.dim))
    return banks, configs[: len(banks)]
