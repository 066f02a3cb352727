"""Cluster-count selection: elbow criterion with relative strength, repeated
sampled trials with a stability verdict, and 1-NN label propagation."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import logging
import math
import time
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import errors
from .cluster import (ClusterAssignment, cut, distance_matrix, feature_ranges, ward_cluster,
                      within_dispersion)
from .features import FEATURE_KINDS, FEATURE_NAMES, FeatureKind, FeatureTable

log = logging.getLogger(__name__)

TRIAL_COUNT = 15
SAMPLE_SIZE = 10_000
K_MAX = 20

ELBOW_COLUMNS = ("cluster", "criterion", "first_order_difference", "second_order_difference",
                 "elbow_binary", "relative_strength")


class NonMonotoneCriterion(UserWarning):
    """The dispersion ratio went up somewhere; tolerated, real curves can plateau."""


@dataclass(frozen=True)
class ElbowTable:
    """Rows for k = 1..K_max. Cells with no defined value hold NaN."""

    criterion: np.ndarray
    first_difference: np.ndarray
    second_difference: np.ndarray
    elbow_binary: np.ndarray
    relative_strength: np.ndarray

    @property
    def ks(self) -> np.ndarray:
        return np.arange(1, self.criterion.size + 1)

    @property
    def elbows(self) -> list[int]:
        return [int(k) for k, e in zip(self.ks, self.elbow_binary) if e == 1]

    def rows(self):
        for i, k in enumerate(self.ks):
            yield (int(k), self.criterion[i], self.first_difference[i], self.second_difference[i],
                   self.elbow_binary[i], self.relative_strength[i])


def elbow_table(criterion: Sequence[float]) -> ElbowTable:
    """Differences, elbow flags and relative strengths of a criterion series.

    ``criterion[k-1]`` is W_k / W_1. With drops d1_k = c_{k-1} - c_k and
    d2_k = d1_{k-1} - d1_k, k is an elbow when d2_{k+1} > d1_{k+1}, with
    strength (d2_{k+1} - d1_{k+1}) / k.
    """
    c = np.asarray(criterion, dtype=float)
    k_max = c.size
    if k_max < 3:
        raise ValueError("elbow_table needs at least three cluster counts")
    if not math.isclose(c[0], 1.0, abs_tol=1e-12):
        raise ValueError(f"criterion must start at 1, got {c[0]}")
    if np.any(np.diff(c) > 0):
        warnings.warn("criterion is not non-increasing in k", NonMonotoneCriterion, stacklevel=2)

    # 1-based arrays padded so index k means cluster count k
    d1 = np.full(k_max + 1, np.nan)
    d2 = np.full(k_max + 1, np.nan)
    d1[2:] = c[:-1] - c[1:]
    d2[3:] = d1[2:-1] - d1[3:]

    elbow = np.full(k_max + 1, np.nan)
    strength = np.full(k_max + 1, np.nan)
    for k in range(3, k_max + 1):
        if k < k_max and d2[k + 1] > d1[k + 1]:
            elbow[k] = 1.0
            strength[k] = (d2[k + 1] - d1[k + 1]) / k
        else:
            elbow[k] = 0.0
            strength[k] = 0.0
    return ElbowTable(c.copy(), d1[1:], d2[1:], elbow[1:], strength[1:])


def optimal_k(table: ElbowTable) -> int:
    """Cluster count with the largest relative strength; ties go to the smaller k."""
    strength = np.nan_to_num(table.relative_strength, nan=0.0)
    if not np.any(strength > 0):
        raise errors.NoElbowFound("no elbow in the criterion series")
    return int(np.argmax(strength)) + 1


class Stability(str, enum.Enum):
    EXTREMELY_STABLE = "ExtremelyStable"
    STABLE = "Stable"
    UNSTABLE = "Unstable"


@dataclass
class TrialOutcome:
    index: int
    seed: int
    sample: np.ndarray            # row indices into the population, ascending
    criterion: np.ndarray
    elbow: ElbowTable
    optimal_k: int | None
    assignment: ClusterAssignment | None
    seconds: float
    error: str | None = None


@dataclass(frozen=True)
class StabilityVerdict:
    votes: dict[int, int]
    failed: int
    trial_count: int
    mode_k: int | None
    stability: Stability

    @property
    def mode_share(self) -> float:
        return self.votes.get(self.mode_k, 0) / self.trial_count if self.mode_k else 0.0


def stability_verdict(optima: Sequence[int | None]) -> StabilityVerdict:
    votes = Counter(k for k in optima if k is not None)
    failed = sum(k is None for k in optima)
    total = len(optima)
    if not votes:
        return StabilityVerdict({}, failed, total, None, Stability.UNSTABLE)
    mode_k = min(votes, key=lambda k: (-votes[k], k))
    if votes[mode_k] == total:
        cls = Stability.EXTREMELY_STABLE
    elif votes[mode_k] / total >= 0.5:
        cls = Stability.STABLE
    else:
        cls = Stability.UNSTABLE
    return StabilityVerdict(dict(sorted(votes.items())), failed, total, mode_k, cls)


def criterion_series(values: np.ndarray, k_max: int, kinds=FEATURE_KINDS):
    """W_k / W_1 for k = 1..k_max on one sample, plus its dendrogram."""
    dm = distance_matrix(values, kinds)
    dendrogram = ward_cluster(dm)
    w = np.array([within_dispersion(dm, cut(dendrogram, k)) for k in range(1, k_max + 1)])
    c = w / w[0] if w[0] > 0 else np.ones_like(w)
    return c, dendrogram


def run_trial(values: np.ndarray, index: int, seed: int, sample_size: int, k_max: int,
              kinds=FEATURE_KINDS) -> TrialOutcome:
    start = time.perf_counter()
    n = values.shape[0]
    trial_seed = seed + index
    if sample_size >= n:
        sample = np.arange(n)
    else:
        rng = np.random.default_rng(trial_seed)
        sample = np.sort(rng.choice(n, size=sample_size, replace=False))
    k_max = min(k_max, sample.size)
    c, dendrogram = criterion_series(values[sample], k_max, kinds)
    table = elbow_table(c)
    try:
        k = optimal_k(table)
        assignment = cut(dendrogram, k)
        err = None
    except errors.NoElbowFound as exc:
        k, assignment, err = None, None, str(exc)
    return TrialOutcome(index, trial_seed, sample, c, table, k, assignment,
                        time.perf_counter() - start, err)


def run_trials(table: FeatureTable, trial_count: int = TRIAL_COUNT, sample_size: int = SAMPLE_SIZE,
               k_max: int = K_MAX, seed: int = 0, threads: int = 1):
    """Repeat sample -> Ward -> elbow ``trial_count`` times.

    Trial ``t`` draws its sample with seed ``seed + t``; results do not depend
    on ``threads``. Returns ``(outcomes, verdict)``.
    """
    n = len(table)
    if sample_size > n:
        warnings.warn(f"sample size {sample_size} exceeds population {n}; using the whole population",
                      stacklevel=2)
    values = np.asarray(table.values, dtype=float)
    jobs = range(trial_count)

    def one(t):
        return run_trial(values, t, seed, sample_size, k_max, table.kinds)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, jobs))
    else:
        outcomes = [one(t) for t in jobs]
    for o in outcomes:
        log.info("trial %d (seed %d): k=%s in %.2fs", o.index, o.seed, o.optimal_k, o.seconds)
    return outcomes, stability_verdict([o.optimal_k for o in outcomes])


@dataclass
class SegmentModel:
    """Labelled exemplars plus everything needed to place new vectors in their space."""

    exemplar_ids: tuple[str, ...]
    exemplars: np.ndarray
    labels: np.ndarray
    ranges: np.ndarray
    k: int
    names: dict[int, str] = field(default_factory=dict)
    caps: Mapping[str, float] | None = None
    as_of: dt.date | None = None
    base_seed: int | None = None
    feature_names: tuple[str, ...] = FEATURE_NAMES
    kinds: tuple[FeatureKind, ...] = FEATURE_KINDS

    def name(self, label: int) -> str:
        return self.names.get(int(label), f"Segment {int(label)}")

    def to_json(self) -> dict:
        return {
            "as_of": self.as_of.isoformat() if self.as_of else None,
            "k": self.k,
            "base_seed": self.base_seed,
            "names": {str(k): v for k, v in sorted(self.names.items())},
            "feature_names": list(self.feature_names),
            "kinds": [k.value for k in self.kinds],
            "ranges": self.ranges.tolist(),
            "caps": dict(self.caps or {}),
            "exemplar_ids": list(self.exemplar_ids),
            "labels": self.labels.tolist(),
            "exemplars": self.exemplars.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SegmentModel":
        return cls(
            exemplar_ids=tuple(data["exemplar_ids"]),
            exemplars=np.asarray(data["exemplars"], dtype=float),
            labels=np.asarray(data["labels"], dtype=int),
            ranges=np.asarray(data["ranges"], dtype=float),
            k=int(data["k"]),
            names={int(k): v for k, v in data.get("names", {}).items()},
            caps=data.get("caps") or None,
            as_of=dt.date.fromisoformat(data["as_of"]) if data.get("as_of") else None,
            base_seed=data.get("base_seed"),
            feature_names=tuple(data["feature_names"]),
            kinds=tuple(FeatureKind(k) for k in data["kinds"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SegmentModel":
        path = Path(path)
        if not path.exists():
            raise errors.ModelError(f"{path}: model file not found")
        return cls.from_json(json.loads(path.read_text(encoding="utf-8")))


def base_trial(outcomes: Sequence[TrialOutcome], verdict: StabilityVerdict) -> TrialOutcome:
    """The smallest-seed trial whose optimum equals the mode."""
    if verdict.mode_k is None:
        raise errors.NoElbowFound("no trial produced an optimal cluster count")
    return min((o for o in outcomes if o.optimal_k == verdict.mode_k), key=lambda o: o.seed)


def build_model(table: FeatureTable, outcomes, verdict, names: Mapping[int, str] | None = None) -> SegmentModel:
    trial = base_trial(outcomes, verdict)
    values = table.values[trial.sample]
    return SegmentModel(
        exemplar_ids=tuple(table.golden_ids[i] for i in trial.sample),
        exemplars=values.copy(),
        labels=trial.assignment.labels.copy(),
        ranges=feature_ranges(values),
        k=trial.optimal_k,
        names=dict(names or {}),
        caps=dict(table.caps) if table.caps else None,
        as_of=table.as_of,
        base_seed=trial.seed,
        feature_names=table.names,
        kinds=table.kinds,
    )


def nearest_exemplars(model: SegmentModel, values: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Index of the Gower-nearest exemplar for every row; ties go to the lowest index."""
    values = np.asarray(values, dtype=float)
    ex = model.exemplars
    if values.ndim != 2 or values.shape[1] != ex.shape[1]:
        raise errors.SchemaMismatch(f"queries of width {values.shape[-1]} vs exemplars of width {ex.shape[1]}")
    active = [f for f in range(ex.shape[1]) if model.ranges[f] > 0]
    out = np.empty(values.shape[0], dtype=int)
    for start in range(0, values.shape[0], chunk):
        q = values[start:start + chunk]
        acc = np.zeros((q.shape[0], ex.shape[0]))
        # same per-feature accumulation order as cluster.gower_distance
        for f in active:
            if model.kinds[f] is FeatureKind.BINARY:
                acc += (q[:, f, None] != ex[None, :, f]).astype(float)
            else:
                acc += np.minimum(np.abs(q[:, f, None] - ex[None, :, f]) / float(model.ranges[f]), 1.0)
        if active:
            acc /= len(active)
        out[start:start + chunk] = np.argmin(acc, axis=1)
    return out


def propagate_1nn(model: SegmentModel, table: FeatureTable) -> ClusterAssignment:
    """Label every vector with the label of its Gower-nearest exemplar."""
    if tuple(table.names) != tuple(model.feature_names):
        raise errors.SchemaMismatch("feature schema differs from the model's")
    if len(model.exemplar_ids) == 0:
        raise errors.ModelError("model has no exemplars")
    idx = nearest_exemplars(model, table.values)
    return ClusterAssignment(model.k, model.labels[idx])


# --- serialization ------------------------------------------------------------

_MILLI = Decimal("0.001")


def _fmt(v) -> str:
    """Three decimals, half-up, after shedding binary noise (0.0055 -> 0.006)."""
    if v is None or math.isnan(v):
        return ""
    return str(Decimal(f"{v:.12g}").quantize(_MILLI, rounding=ROUND_HALF_UP) + 0)


def write_elbow(table: ElbowTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ELBOW_COLUMNS)
        for k, c, d1, d2, e, s in table.rows():
            w.writerow([k, _fmt(c), _fmt(d1), _fmt(d2), "" if math.isnan(e) else int(e), _fmt(s)])


def write_segments(golden_ids: Sequence[str], assignment: ClusterAssignment, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["golden_id", "cluster_label"])
        for gid, label in zip(golden_ids, assignment.labels.tolist()):
            w.writerow([gid, label])


def read_segments(path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["golden_id"]: int(row["cluster_label"]) for row in csv.DictReader(fh)}
