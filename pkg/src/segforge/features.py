"""Profile-level feature vectors, business-logic flags and feature-space reduction."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from . import errors
from .pms import Dataset, SourceClass, Status, TxnClass


class FeatureKind(str, enum.Enum):
    NUMERIC = "numeric"        # range-scaled in Gower
    PERCENTAGE = "percentage"  # share in [0, 1], binned to a 0.2 grid
    BINARY = "binary"


class FeatureSpec(NamedTuple):
    name: str
    kind: FeatureKind
    revenue: bool = False


N, P, B = FeatureKind.NUMERIC, FeatureKind.PERCENTAGE, FeatureKind.BINARY

FEATURES: tuple[FeatureSpec, ...] = (
    FeatureSpec("ReservationsTotal", N),
    FeatureSpec("ReservationsHistoric", P),
    FeatureSpec("ReservationsCancelled", P),
    FeatureSpec("ReservationsCompany", P),
    FeatureSpec("ReservationsAgency", P),
    FeatureSpec("ReservationsGroup", P),
    FeatureSpec("ReservationsSourceDirect", P),
    FeatureSpec("ReservationsSourceIndirect", P),
    FeatureSpec("RevenueTotal", N, True),
    FeatureSpec("RevenueAverage", N, True),
    FeatureSpec("RevenueTotalRoom", N, True),
    FeatureSpec("RevenueTotalAncillary", N, True),
    FeatureSpec("RepeatBinary", B),
    FeatureSpec("RepeatTotal", N),
    FeatureSpec("RepeatFrequencyMediumBinary", B),
    FeatureSpec("RepeatLast365Binary", B),
    FeatureSpec("WeekStay", P),
    FeatureSpec("WeekendStay", P),
    FeatureSpec("LOSAverage", N),
    FeatureSpec("SingleNightBinary", B),
    FeatureSpec("ShortStayBinary", B),
    FeatureSpec("MediumStayBinary", B),
    FeatureSpec("LastMinuteBookerBinary", B),
    FeatureSpec("EarlyBirdBookerBinary", B),
    FeatureSpec("LoyaltyBinary", B),
)
FEATURE_NAMES = tuple(f.name for f in FEATURES)
FEATURE_KINDS = tuple(f.kind for f in FEATURES)
COLUMN = {name: i for i, name in enumerate(FEATURE_NAMES)}

PERCENTAGE_STEP = 0.2
INTEGER_QUANTILE = 0.95
REVENUE_QUANTILE = 0.99
REVENUE_ROUNDING = 100

LAST_MINUTE_DAYS = 3
EARLY_BIRD_DAYS = 45
SHORT_STAY_MAX = 3
WEEK_STAY_MAX_LOS = 5
WEEKEND_STAY_MAX_LOS = 3
WEEKDAYS = frozenset(range(0, 5))      # Mon..Fri
WEEKEND_DAYS = frozenset((4, 5, 6))    # Fri..Sun


@dataclass(frozen=True)
class FeatureTable:
    """One row per golden profile, columns in ``FEATURE_NAMES`` order."""

    golden_ids: tuple[str, ...]
    values: np.ndarray
    as_of: dt.date | None = None
    caps: Mapping[str, float] | None = None
    kinds: tuple[FeatureKind, ...] = FEATURE_KINDS
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        if self.values.shape != (len(self.golden_ids), len(self.names)):
            raise errors.MismatchedSchema(
                f"values shape {self.values.shape} does not match "
                f"{len(self.golden_ids)} ids x {len(self.names)} features")

    def __len__(self):
        return len(self.golden_ids)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def row(self, i: int) -> dict[str, float]:
        return dict(zip(self.names, self.values[i].tolist()))

    def index(self) -> dict[str, int]:
        return {g: i for i, g in enumerate(self.golden_ids)}

    def take(self, rows) -> "FeatureTable":
        rows = np.asarray(rows, dtype=int)
        return replace(self, golden_ids=tuple(self.golden_ids[i] for i in rows), values=self.values[rows])


def apply_business_logic(raw: Mapping) -> dict[str, int]:
    """Binary flags from profile-level aggregates.

    ``raw`` needs ``los_average``, ``lead_time_average``, ``repeat_total`` and
    ``loyalty_level``.
    """
    los = raw["los_average"]
    lead = raw["lead_time_average"]
    return {
        # 0 < los guards averages below one night (zero-night cancellations)
        "RoomNightStay": int(0 < los <= 1),
        "ShortStay": int(1 < los <= SHORT_STAY_MAX),
        "LongStay": int(los > SHORT_STAY_MAX),
        "LastMinute": int(lead < LAST_MINUTE_DAYS),
        "EarlyBird": int(lead > EARLY_BIRD_DAYS),
        "RepeatFrequencyMedium": int(raw["repeat_total"] > 1),
        "LoyaltyMember": int(raw["loyalty_level"] is not None),
    }


def _source_class(res, channel_map) -> SourceClass:
    if res.source_class is not None:
        return res.source_class
    try:
        return SourceClass(channel_map[res.source_channel])
    except KeyError:
        raise errors.UnmappedChannel(
            f"reservation {res.reservation_id}: source channel {res.source_channel!r} has no mapping") from None


def _profile_row(reservations, folios_by_res, channel_map, loyalty_level, as_of) -> list[float]:
    n = len(reservations)
    hist = canc = company = agency = group = direct = indirect = week = weekend = 0
    room = ancillary = 0
    los_sum = lead_sum = 0
    recent = False
    window_start = as_of - dt.timedelta(days=365)
    for r in reservations:
        hist += r.status is Status.HISTORIC
        canc += r.status is Status.CANCELLED
        company += r.company_id is not None
        agency += r.agency_id is not None
        group += r.group_id is not None
        if _source_class(r, channel_map) is SourceClass.DIRECT:
            direct += 1
        else:
            indirect += 1
        los = r.length_of_stay
        los_sum += los
        lead_sum += r.lead_time
        a, d = r.arrival_date.weekday(), r.departure_date.weekday()
        week += los < WEEK_STAY_MAX_LOS and a in WEEKDAYS and d in WEEKDAYS
        weekend += los < WEEKEND_STAY_MAX_LOS and a in WEEKEND_DAYS and d in WEEKEND_DAYS
        recent |= window_start <= r.arrival_date
        for f in folios_by_res.get(r.reservation_id, ()):
            if f.classification is TxnClass.ROOM:
                room += f.amount
            elif f.classification is TxnClass.ANCILLARY:
                ancillary += f.amount

    revenue_total = (room + ancillary) / 100
    repeat_total = n - 1
    flags = apply_business_logic({
        "los_average": los_sum / n,
        "lead_time_average": lead_sum / n,
        "repeat_total": repeat_total,
        "loyalty_level": loyalty_level,
    })
    return [
        n, hist / n, canc / n, company / n, agency / n, group / n, direct / n, indirect / n,
        revenue_total, revenue_total / n, room / 100, ancillary / 100,
        int(n > 1), repeat_total, flags["RepeatFrequencyMedium"], int(recent),
        week / n, weekend / n, los_sum / n,
        flags["RoomNightStay"], flags["ShortStay"], flags["LongStay"],
        flags["LastMinute"], flags["EarlyBird"], flags["LoyaltyMember"],
    ]


def build_features(dataset: Dataset, golden_map: Mapping[str, str] | None, as_of: dt.date) -> FeatureTable:
    """Raw (unreduced) feature vectors as of ``as_of``.

    Only reservations arriving strictly before ``as_of`` count, whatever their
    status; a golden profile without such a reservation is not in the cohort.
    """
    golden_map = golden_map or {}
    loyalty: dict[str, str | None] = {}
    for p in dataset.profiles:
        gid = golden_map.get(p.profile_id, p.profile_id)
        if p.loyalty_level is not None:
            loyalty[gid] = max(loyalty.get(gid) or p.loyalty_level, p.loyalty_level)
        else:
            loyalty.setdefault(gid, None)

    per_golden: dict[str, list] = {}
    for r in dataset.reservations:
        if r.arrival_date < as_of:
            per_golden.setdefault(golden_map.get(r.profile_id, r.profile_id), []).append(r)
    if not per_golden:
        raise errors.EmptyCohort(f"no profile has a reservation arriving before {as_of}")

    folios = dataset.folios_by_reservation()
    ids = tuple(sorted(per_golden))
    rows = [_profile_row(per_golden[g], folios, dataset.channel_map, loyalty.get(g), as_of) for g in ids]
    return FeatureTable(ids, np.asarray(rows, dtype=float), as_of=as_of)


def nearest_rank_quantile(values, q: float) -> float:
    """Smallest sample value with at least ``q`` of the population at or below it."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("quantile of an empty population")
    rank = max(1, math.ceil(round(q * x.size, 9)))
    return float(x[rank - 1])


def round_half_up(values, step: float) -> np.ndarray:
    scaled = np.asarray(values, dtype=float) / step
    return np.floor(scaled + 0.5 + 1e-9) * step


def snap_percentage(values) -> np.ndarray:
    steps = np.floor(np.asarray(values, dtype=float) * 5 + 0.5 + 1e-9)
    return np.clip(steps, 0, 5) / 5


def reduction_caps(table: FeatureTable) -> dict[str, float]:
    """Per-feature caps from the population: 95% quantile for counts, round-100 of 99% for revenue."""
    if len(table) < 2:
        raise ValueError("reduction needs at least two vectors")
    caps = {}
    for j, spec in enumerate(FEATURES):
        if spec.kind is not FeatureKind.NUMERIC:
            continue
        col = table.values[:, j]
        if spec.revenue:
            caps[spec.name] = float(round_half_up(nearest_rank_quantile(col, REVENUE_QUANTILE), REVENUE_ROUNDING))
        else:
            caps[spec.name] = nearest_rank_quantile(col, INTEGER_QUANTILE)
    return caps


def reduce_dimensionality(table: FeatureTable, caps: Mapping[str, float] | None = None) -> FeatureTable:
    """Apply the three reduction rules; binary features pass through.

    With ``caps=None`` they are computed from this population; pass a frozen
    set of caps to reduce a different population into the same space.
    """
    if caps is None:
        caps = reduction_caps(table)
    out = table.values.copy()
    for j, spec in enumerate(FEATURES):
        if spec.kind is FeatureKind.PERCENTAGE:
            out[:, j] = snap_percentage(out[:, j])
        elif spec.kind is FeatureKind.NUMERIC:
            col = out[:, j]
            if spec.revenue:
                col = round_half_up(col, REVENUE_ROUNDING)
            out[:, j] = np.minimum(col, caps[spec.name])
    return replace(table, values=out, caps=dict(caps))


# --- serialization ------------------------------------------------------------

def write_features(table: FeatureTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("golden_id",) + table.names)
        for gid, row in zip(table.golden_ids, table.values.tolist()):
            w.writerow([gid] + [repr(v) for v in row])


def write_features_meta(table: FeatureTable, path) -> None:
    meta = {
        "as_of": table.as_of.isoformat() if table.as_of else None,
        "count": len(table),
        "features": [{"name": s.name, "kind": s.kind.value, "revenue": s.revenue} for s in FEATURES],
        "caps": dict(table.caps or {}),
    }
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_features(path, meta_path=None) -> FeatureTable:
    path = Path(path)
    if not path.exists():
        raise errors.DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[1:]) != FEATURE_NAMES:
            raise errors.MismatchedSchema(f"{path.name}: feature columns do not match the schema")
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    as_of, caps = None, None
    if meta_path is not None and Path(meta_path).exists():
        meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
        as_of = dt.date.fromisoformat(meta["as_of"]) if meta.get("as_of") else None
        caps = meta.get("caps") or None
    values = np.asarray(rows, dtype=float).reshape(len(ids), len(FEATURE_NAMES))
    return FeatureTable(tuple(ids), values, as_of=as_of, caps=caps)
