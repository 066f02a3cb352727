"""Segment membership over time, transition counts and Sankey-ready flows.

A single trained model labels every timestamp. Feature caps and Gower ranges
stay frozen at the model's values so labels are comparable across snapshots.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import errors
from .features import FEATURES, FeatureTable, build_features, reduce_dimensionality
from .pms import Dataset
from .selection import SegmentModel, propagate_1nn

NEW_GUESTS = "New Guests"
OUTFLOW = 0  # label for profiles inactive longer than the outflow horizon
OUTFLOW_NAME = "Outflow"
FLOW_THRESHOLD = 0.001


def _model_key(model: SegmentModel) -> tuple:
    return (model.as_of, model.k, model.base_seed, model.exemplar_ids[:1], len(model.exemplar_ids))


@dataclass(frozen=True)
class SnapshotAssignment:
    timestamp: dt.date
    golden_ids: tuple[str, ...]
    labels: np.ndarray
    features: FeatureTable        # reduced, as seen by the model
    raw_features: FeatureTable
    model_key: tuple = ()

    def counts(self) -> dict[int, int]:
        return dict(sorted(Counter(self.labels.tolist()).items()))

    def label_of(self) -> dict[str, int]:
        return dict(zip(self.golden_ids, self.labels.tolist()))

    def __len__(self):
        return len(self.golden_ids)


def snapshot(dataset: Dataset, golden_map: Mapping[str, str] | None, model: SegmentModel, t: dt.date,
             outflow_after_years: float | None = None) -> SnapshotAssignment:
    """Label the cohort present at ``t`` with ``model``."""
    if model.as_of is not None and t > model.as_of:
        raise errors.ModelError(f"snapshot {t} is after the model's training timestamp {model.as_of}")
    if model.caps is None:
        raise errors.ModelError("model carries no reduction caps")
    raw = build_features(dataset, golden_map, t)
    reduced = reduce_dimensionality(raw, caps=model.caps)
    labels = propagate_1nn(model, reduced).labels.copy()
    if outflow_after_years is not None:
        horizon = t - dt.timedelta(days=round(365.25 * outflow_after_years))
        last = _last_arrivals(dataset, golden_map or {}, t)
        stale = np.array([last[g] < horizon for g in raw.golden_ids])
        labels[stale] = OUTFLOW
    return SnapshotAssignment(t, raw.golden_ids, labels, reduced, raw, _model_key(model))


def _last_arrivals(dataset, golden_map, t) -> dict[str, dt.date]:
    last: dict[str, dt.date] = {}
    for r in dataset.reservations:
        if r.arrival_date < t:
            g = golden_map.get(r.profile_id, r.profile_id)
            if g not in last or r.arrival_date > last[g]:
                last[g] = r.arrival_date
    return last


@dataclass(frozen=True)
class TransitionTable:
    """``counts[(from, to)]``; ``from`` is a label or ``NEW_GUESTS``."""

    from_timestamp: dt.date
    to_timestamp: dt.date
    counts: Mapping[tuple, int]

    def row_sums(self) -> dict:
        out: Counter = Counter()
        for (a, _), c in self.counts.items():
            out[a] += c
        return dict(out)

    def column_sums(self) -> dict:
        out: Counter = Counter()
        for (_, b), c in self.counts.items():
            out[b] += c
        return dict(out)

    @property
    def new_guests(self) -> int:
        return sum(c for (a, _), c in self.counts.items() if a == NEW_GUESTS)

    @property
    def total_from(self) -> int:
        return sum(c for (a, _), c in self.counts.items() if a != NEW_GUESTS)

    @property
    def total_to(self) -> int:
        return sum(self.counts.values())


def transitions(s1: SnapshotAssignment, s2: SnapshotAssignment) -> TransitionTable:
    if s1.timestamp >= s2.timestamp:
        raise ValueError("snapshots must be in increasing time order")
    if s1.model_key != s2.model_key:
        raise errors.ModelMismatch("snapshots were labelled by different models")
    before = s1.label_of()
    after = s2.label_of()
    lost = set(before) - set(after)
    if lost:
        raise errors.DataError(f"{len(lost)} profiles left the cohort between {s1.timestamp} and {s2.timestamp}")
    counts: Counter = Counter()
    for gid, label in after.items():
        counts[(before.get(gid, NEW_GUESTS), label)] += 1
    return TransitionTable(s1.timestamp, s2.timestamp, dict(counts))


@dataclass(frozen=True)
class TransitionExplanation:
    from_segment: int
    to_segment: int
    count: int
    mean_delta: dict[str, float]
    revenue_change_pct: dict[str, float]


def explain(from_seg, to_seg, s1: SnapshotAssignment, s2: SnapshotAssignment,
            features_t1: FeatureTable | None = None, features_t2: FeatureTable | None = None
            ) -> TransitionExplanation:
    """Mean feature change over the profiles that moved ``from_seg -> to_seg``.

    Revenue features are reported as the percentage change of the movers' mean.
    Defaults to the snapshots' unreduced features.
    """
    f1 = features_t1 if features_t1 is not None else s1.raw_features
    f2 = features_t2 if features_t2 is not None else s2.raw_features
    before, after = s1.label_of(), s2.label_of()
    movers = [g for g, lab in before.items() if lab == from_seg and after.get(g) == to_seg]
    if not movers:
        raise errors.EmptyTransition(f"no profile moved from {from_seg} to {to_seg}")
    i1, i2 = f1.index(), f2.index()
    v1 = f1.values[[i1[g] for g in movers]]
    v2 = f2.values[[i2[g] for g in movers]]
    delta = (v2 - v1).mean(axis=0)
    m1, m2 = v1.mean(axis=0), v2.mean(axis=0)
    mean_delta, revenue = {}, {}
    for j, spec in enumerate(FEATURES):
        mean_delta[spec.name] = float(delta[j])
        if spec.revenue:
            revenue[spec.name] = float((m2[j] - m1[j]) / m1[j] * 100) if m1[j] else float("nan")
    return TransitionExplanation(from_seg, to_seg, len(movers), mean_delta, revenue)


def _segment_name(label, names: Mapping[int, str]) -> str:
    if label == NEW_GUESTS:
        return NEW_GUESTS
    if label == OUTFLOW:
        return OUTFLOW_NAME
    return names.get(int(label), f"Segment {int(label)}")


def _sort_key(label):
    return (1, 0) if label == NEW_GUESTS else (0, int(label))


def flow_export(tables: Sequence[TransitionTable], threshold: float = FLOW_THRESHOLD,
                names: Mapping[int, str] | None = None) -> dict:
    """Node/link lists for a Sankey plot.

    All non-zero links are kept; ``displayed`` marks those whose share of the
    destination cohort reaches ``threshold``.
    """
    names = names or {}
    for a, b in zip(tables, tables[1:]):
        if a.to_timestamp != b.from_timestamp:
            raise ValueError("transition tables must chain timestamp to timestamp")
    nodes: dict[tuple, int] = {}
    links = []

    def node_id(t, label):
        return f"{t.isoformat()}|{_segment_name(label, names)}"

    for tab in tables:
        for label, c in tab.row_sums().items():
            nodes[(tab.from_timestamp, label)] = c
        for label, c in tab.column_sums().items():
            nodes[(tab.to_timestamp, label)] = c
        cohort = tab.total_to
        for (a, b) in sorted(tab.counts, key=lambda ab: (_sort_key(ab[0]), _sort_key(ab[1]))):
            count = tab.counts[(a, b)]
            if count == 0:
                continue
            share = count / cohort
            links.append({
                "from": node_id(tab.from_timestamp, a),
                "to": node_id(tab.to_timestamp, b),
                "count": count,
                "share": round(share, 6),
                "displayed": share >= threshold,
            })
    node_list = [
        {"id": node_id(t, label), "timestamp": t.isoformat(), "segment": _segment_name(label, names), "count": c}
        for (t, label), c in sorted(nodes.items(), key=lambda kv: (kv[0][0], _sort_key(kv[0][1])))
    ]
    return {"threshold": threshold, "nodes": node_list, "links": links}


def write_flows(flows: dict, path) -> None:
    Path(path).write_text(json.dumps(flows, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_transitions(tables: Sequence[TransitionTable], path, names: Mapping[int, str] | None = None) -> None:
    names = names or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["from_timestamp", "to_timestamp", "from_segment", "to_segment", "count"])
        for tab in tables:
            for (a, b) in sorted(tab.counts, key=lambda ab: (_sort_key(ab[0]), _sort_key(ab[1]))):
                w.writerow([tab.from_timestamp.isoformat(), tab.to_timestamp.isoformat(),
                            _segment_name(a, names), _segment_name(b, names), tab.counts[(a, b)]])
