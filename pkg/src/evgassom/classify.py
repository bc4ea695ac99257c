"""Event-type histograms and nearest-neighbour classification.

Features discard where and when output events happened and keep only how
often each event type occurred. Two histograms are compared by
``1 - sum(min(h1, h2))``; any strictly decreasing function of the
intersection gives the same nearest neighbour, and this one stays finite for
disjoint histograms.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import EmptyTrainingSet, LengthMismatch, TooFewSamples
from .events import EventStream

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Histogram:
    bins: np.ndarray
    total_events: int

    def __eq__(self, other):
        if not isinstance(other, Histogram):
            return NotImplemented
        return self.total_events == other.total_events and np.array_equal(self.bins, other.bins)

    __hash__ = None

    def __len__(self):
        return len(self.bins)


@dataclass(frozen=True)
class LabeledSample:
    feature: Histogram
    label: Hashable


def histogram(stream: EventStream, R: int | None = None) -> Histogram:
    """L1-normalized counts of each event type in ``stream``."""
    if R is None:
        R = stream.geometry.num_types
    if len(stream) and int(stream.p.max()) >= R:
        raise ValueError(f"event type {int(stream.p.max())} out of range for {R} bins")
    counts = np.bincount(stream.p, minlength=R).astype(np.float64)
    n = len(stream)
    if n == 0:
        log.warning("empty output stream; using the all-zeros histogram")
        return Histogram(counts, 0)
    return Histogram(counts / n, n)


def combine(histograms: Sequence[Histogram]) -> Histogram:
    """Concatenate per-layer histograms and renormalize to unit mass."""
    bins = np.concatenate([h.bins for h in histograms])
    s = bins.sum()
    return Histogram(bins / s if s > 0 else bins, sum(h.total_events for h in histograms))


def intersection_distance(h1, h2) -> float:
    a = h1.bins if isinstance(h1, Histogram) else np.asarray(h1, dtype=np.float64)
    b = h2.bins if isinstance(h2, Histogram) else np.asarray(h2, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"histogram lengths differ: {a.shape} vs {b.shape}")
    return float(1.0 - np.minimum(a, b).sum())


def nn_classify(training: Sequence[LabeledSample], query: Histogram):
    """Label of the training sample nearest to ``query``; ties go to the earliest."""
    if not training:
        raise EmptyTrainingSet("nearest-neighbour needs at least one training sample")
    feats = np.stack([s.feature.bins for s in training])
    if feats.shape[1] != len(query.bins):
        raise LengthMismatch(f"query has {len(query.bins)} bins, training features have {feats.shape[1]}")
    d = 1.0 - np.minimum(feats, query.bins).sum(axis=1)
    return training[int(np.argmin(d))].label


@dataclass
class Report:
    accuracy: float
    labels: list
    confusion: list[list[int]]
    folds: list[float] = field(default_factory=list)
    protocol: str = "fixed-split"
    empty_queries: int = 0

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "accuracy": self.accuracy,
            "folds": self.folds,
            "labels": [str(lb) for lb in self.labels],
            "confusion": self.confusion,
            "empty_queries": self.empty_queries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _confusion(labels, truth, pred) -> np.ndarray:
    index = {lb: i for i, lb in enumerate(labels)}
    m = np.zeros((len(labels), len(labels)), np.int64)
    for a, b in zip(truth, pred):
        m[index[a], index[b]] += 1
    return m


def _sorted_labels(samples) -> list:
    labels = {s.label for s in samples}
    try:
        return sorted(labels)
    except TypeError:
        return sorted(labels, key=str)


def evaluate_split(train: Sequence[LabeledSample], test: Sequence[LabeledSample]) -> Report:
    if not train or not test:
        raise TooFewSamples("fixed split needs non-empty train and test sets")
    labels = _sorted_labels(list(train) + list(test))
    pred = [nn_classify(train, s.feature) for s in test]
    truth = [s.label for s in test]
    acc = float(np.mean([a == b for a, b in zip(truth, pred)]))
    empty = sum(s.feature.total_events == 0 for s in test)
    return Report(acc, labels, _confusion(labels, truth, pred).tolist(), [acc], "fixed-split", empty)


def stratified_folds(labels: Sequence, k: int, seed: int = 0) -> list[np.ndarray]:
    """Seeded class-stratified partition of sample indices into ``k`` folds."""
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    by_class: dict = {}
    for i, lb in enumerate(labels):
        by_class.setdefault(lb, []).append(i)
    for lb in sorted(by_class, key=str):
        idx = rng.permutation(by_class[lb])
        for j, i in enumerate(idx):
            folds[(offset + j) % k].append(int(i))
        offset += len(idx)
    return [np.array(sorted(f), np.int64) for f in folds]


def evaluate_kfold(samples: Sequence[LabeledSample], k: int, seed: int = 0) -> Report:
    """Mean accuracy over ``k`` stratified folds; confusion summed over folds."""
    samples = list(samples)
    labels = _sorted_labels(samples)
    if len(samples) < 2 or len(labels) < 2 or k < 2 or len(samples) < k:
        raise TooFewSamples(f"{k}-fold CV needs >= {max(k, 2)} samples and >= 2 classes")
    folds = stratified_folds([s.label for s in samples], k, seed)
    conf = np.zeros((len(labels), len(labels)), np.int64)
    accs, empty = [], 0
    for f in folds:
        if f.size == 0:
            continue
        test_set = set(f.tolist())
        train = [s for i, s in enumerate(samples) if i not in test_set]
        test = [samples[i] for i in f]
        pred = [nn_classify(train, s.feature) for s in test]
        truth = [s.label for s in test]
        accs.append(float(np.mean([a == b for a, b in zip(truth, pred)])))
        conf += _confusion(labels, truth, pred)
        empty += sum(s.feature.total_events == 0 for s in test)
    return Report(float(np.mean(accs)), labels, conf.tolist(), accs, f"{k}-fold", empty)


def evaluate(samples, protocol: str = "fixed-split", test=None, k: int = 8, seed: int = 0) -> Report:
    """``protocol`` is ``"fixed-split"`` (``samples`` train, ``test`` test) or ``"k-fold"``."""
    if protocol == "fixed-split":
        return evaluate_split(samples, samples if test is None else test)
    if protocol == "k-fold":
        return evaluate_kfold(samples, k, seed)
    raise ValueError(f"unknown protocol {protocol!r}")


# --- feature CSV -------------------------------------------------------------


def features_to_csv(samples: Sequence[LabeledSample]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    R = len(samples[0].feature.bins) if samples else 0
    w.writerow(["label"] + [f"bin_{i}" for i in range(R)])
    for s in samples:
        w.writerow([s.label] + [repr(float(v)) for v in s.feature.bins])
    return out.getvalue()


def features_from_csv(text: str) -> list[LabeledSample]:
    rows = list(csv.reader(io.StringIO(text)))
    if rows and rows[0] and rows[0][0] == "label":
        rows = rows[1:]
    out = []
    for r in rows:
        if not r:
            continue
        bins = np.array([float(v) for v in r[1:]])
        # raw counts are not stored in the CSV; keep only whether the
        # recording had any events, which is all the report needs
        out.append(LabeledSample(Histogram(bins, int(bins.sum() > 0)), r[0]))
    return out
