"""Descriptive statistics, per-segment attribute overviews and opt-in target lists."""
from __future__ import annotations

import csv
import datetime as dt
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import (EARLY_BIRD_DAYS, FEATURES, LAST_MINUTE_DAYS, WEEK_STAY_MAX_LOS, WEEKDAYS,
                       WEEKEND_DAYS, WEEKEND_STAY_MAX_LOS, FeatureKind, FeatureTable)
from .pms import Dataset, Profile, SourceClass, Status, TxnClass

OVERALL = "Overall"
HIGHLIGHT_HIGH = 1.5
HIGHLIGHT_LOW = 0.5
HIGHLIGHT_FREQ_GAP = 20.0


def _pct(part, whole) -> float:
    return 100.0 * part / whole if whole else 0.0


def _shares(counter: Mapping, keys: Iterable) -> dict:
    total = sum(counter.get(k, 0) for k in keys)
    return {str(k): _pct(counter.get(k, 0), total) for k in keys}


@dataclass
class EdaReport:
    reservations: int
    profiles: int
    status_by_reservation: dict
    status_by_room_night: dict
    revenue_split: dict
    repeat_share: float
    repeat_series: list
    retention: list
    stay_pattern_by_year: dict
    lead_time: dict
    source: dict
    length_of_stay: dict
    loyalty_share: float

    def to_json(self) -> dict:
        return asdict(self)


def _status_key(s: Status) -> str:
    return s.value


def _repeat_series(historic_by_profile: Mapping[str, list[dt.date]]) -> list[dict]:
    months: dict[str, set] = defaultdict(set)
    repeat_all: dict[str, set] = defaultdict(set)
    repeat_365: dict[str, set] = defaultdict(set)
    first = None
    for pid, arrivals in historic_by_profile.items():
        arrivals = sorted(arrivals)
        first = arrivals[0] if first is None else min(first, arrivals[0])
        for i, a in enumerate(arrivals):
            m = f"{a.year:04d}-{a.month:02d}"
            months[m].add(pid)
            if i > 0:
                repeat_all[m].add(pid)
                if (a - arrivals[i - 1]).days <= 365:
                    repeat_365[m].add(pid)
    if first is None:
        return []
    warm_up_end = first + dt.timedelta(days=365)
    out = []
    for m in sorted(months):
        y, mo = int(m[:4]), int(m[5:])
        if dt.date(y, mo, 1) < warm_up_end:
            continue
        n = len(months[m])
        out.append({"month": m, "profiles": n,
                    "repeat_pct": _pct(len(repeat_all[m]), n),
                    "repeat_last365_pct": _pct(len(repeat_365[m]), n)})
    return out


def _stay_pattern(r) -> str:
    los = r.length_of_stay
    a, d = r.arrival_date.weekday(), r.departure_date.weekday()
    if los < WEEK_STAY_MAX_LOS and a in WEEKDAYS and d in WEEKDAYS:
        return "week"
    if los < WEEKEND_STAY_MAX_LOS and a in WEEKEND_DAYS and d in WEEKEND_DAYS:
        return "weekend"
    return "other"


def eda_report(dataset: Dataset, golden_map: Mapping[str, str] | None = None,
               lead_bin_days: int = 10) -> EdaReport:
    """Status, revenue, repeat, retention, stay-pattern, lead-time and channel statistics.

    A repeat guest is a profile with more than one Historic reservation.
    Retention is measured over profiles with at least one Historic stay,
    keyed by the group/company/agency attachment of their first stay.
    """
    gm = golden_map or {}
    res = dataset.reservations
    pid = lambda r: gm.get(r.profile_id, r.profile_id)  # noqa: E731
    statuses = [s.value for s in Status]

    by_res = Counter(r.status.value for r in res)
    by_night: Counter = Counter()
    for r in res:
        by_night[r.status.value] += r.length_of_stay

    revenue = dataset.revenue()
    revenue_split = _shares({k.value: v for k, v in revenue.items()}, [TxnClass.ROOM.value, TxnClass.ANCILLARY.value])

    historic: dict[str, list] = defaultdict(list)
    first_stay: dict[str, object] = {}
    per_profile: dict[str, list] = defaultdict(list)
    for r in sorted(res, key=lambda r: (r.arrival_date, r.reservation_id)):
        per_profile[pid(r)].append(r)
        if r.status is Status.HISTORIC:
            historic[pid(r)].append(r.arrival_date)
            first_stay.setdefault(pid(r), r)

    n_profiles = len(per_profile)
    repeaters = {p for p, a in historic.items() if len(a) > 1}

    cross: dict[tuple, list] = defaultdict(lambda: [0, 0])
    for p, r in first_stay.items():
        key = (r.group_id is not None, r.company_id is not None, r.agency_id is not None)
        cross[key][0] += 1
        cross[key][1] += p in repeaters
    retention = [{"group": g, "company": c, "agency": a, "profiles": n, "retention_pct": _pct(k, n)}
                 for (g, c, a), (n, k) in sorted(cross.items(), reverse=True)]
    retention.append({"group": None, "company": None, "agency": None, "profiles": len(first_stay),
                      "retention_pct": _pct(len(repeaters & set(first_stay)), len(first_stay))})

    patterns: dict[int, Counter] = defaultdict(Counter)
    for r in res:
        if r.status is Status.HISTORIC:
            patterns[r.arrival_date.year][_stay_pattern(r)] += 1
    stay_pattern = {str(y): _shares(c, ["week", "weekend", "other"]) for y, c in sorted(patterns.items())}

    leads = np.array([r.lead_time for r in res], dtype=float)
    if leads.size:
        top = int(leads.max()) // lead_bin_days * lead_bin_days + lead_bin_days
        hist, edges = np.histogram(leads, bins=np.arange(0, top + lead_bin_days, lead_bin_days))
        lead = {"mean": float(leads.mean()), "bin_edges": edges.astype(int).tolist(), "counts": hist.tolist(),
                "early_bird_pct": _pct(int((leads > EARLY_BIRD_DAYS).sum()), leads.size),
                "last_minute_pct": _pct(int((leads < LAST_MINUTE_DAYS).sum()), leads.size)}
    else:
        lead = {"mean": 0.0, "bin_edges": [], "counts": [], "early_bird_pct": 0.0, "last_minute_pct": 0.0}

    def cls(r):
        return r.source_class or SourceClass(dataset.channel_map[r.source_channel])

    src_res = Counter(cls(r).value for r in res)
    mix = Counter()
    for p, rs in per_profile.items():
        kinds = {cls(r) for r in rs}
        mix["both" if len(kinds) == 2 else ("direct_only" if SourceClass.DIRECT in kinds else "indirect_only")] += 1
    source = {"by_reservation": _shares(src_res, ["Direct", "Indirect"]),
              "by_profile": _shares(mix, ["direct_only", "indirect_only", "both"])}

    los = np.array([r.length_of_stay for r in res], dtype=float)
    length_of_stay = {"mean": float(los.mean()) if los.size else 0.0,
                      "single_night_pct": _pct(int((los == 1).sum()), los.size),
                      "over_3_nights_pct": _pct(int((los > 3).sum()), los.size)}

    loyal = {gm.get(p.profile_id, p.profile_id) for p in dataset.profiles if p.loyalty_level}
    return EdaReport(
        reservations=len(res),
        profiles=n_profiles,
        status_by_reservation=_shares(by_res, statuses),
        status_by_room_night=_shares(by_night, statuses),
        revenue_split=revenue_split,
        repeat_share=_pct(len(repeaters), n_profiles),
        repeat_series=_repeat_series(historic),
        retention=retention,
        stay_pattern_by_year=stay_pattern,
        lead_time=lead,
        source=source,
        length_of_stay=length_of_stay,
        loyalty_share=_pct(len(loyal & set(per_profile)), n_profiles),
    )


def write_eda(report: EdaReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- segment overview ----------------------------------------------------------

@dataclass
class SegmentProfile:
    """Attribute overview of one segment (or the whole population).

    ``means`` holds averages; shares are in percent and revenue features are
    relative to the overall mean (overall = 100). ``frequencies`` maps each
    binary feature to its (TRUE %, FALSE %).
    """

    segment: object
    name: str
    size: int
    share: float
    means: dict[str, float] = field(default_factory=dict)
    frequencies: dict[str, tuple[float, float]] = field(default_factory=dict)


def _profile_of(values: np.ndarray, overall_revenue: np.ndarray, segment, name, total) -> SegmentProfile:
    sp = SegmentProfile(segment, name, values.shape[0], values.shape[0] / total)
    mean = values.mean(axis=0)
    for j, spec in enumerate(FEATURES):
        if spec.name == "RevenueAverage":
            continue
        if spec.kind is FeatureKind.BINARY:
            t = 100.0 * float(np.mean(values[:, j] == 1))
            sp.frequencies[spec.name] = (t, 100.0 - t)
        elif spec.revenue:
            base = overall_revenue[j]
            sp.means[spec.name] = 100.0 * mean[j] / base if base else 0.0
        elif spec.kind is FeatureKind.PERCENTAGE:
            sp.means[spec.name] = 100.0 * mean[j]
        else:
            sp.means[spec.name] = float(mean[j])
    return sp


def segment_profile(features: FeatureTable, labels: Sequence[int],
                    names: Mapping[int, str] | None = None) -> list[SegmentProfile]:
    """One overview per segment in label order, then the overall column."""
    names = names or {}
    labels = np.asarray(labels)
    if labels.size != len(features):
        raise ValueError(f"{labels.size} labels for {len(features)} feature vectors")
    values = features.values
    overall_mean = values.mean(axis=0)
    out = [_profile_of(values[labels == lab], overall_mean, int(lab), names.get(int(lab), f"Segment {int(lab)}"),
                       len(features))
           for lab in np.unique(labels)]
    out.append(_profile_of(values, overall_mean, OVERALL, OVERALL, len(features)))
    return out


@dataclass(frozen=True)
class Highlight:
    segment: object
    feature: str
    category: str | None = None


def characteristic_highlight(profiles: Sequence[SegmentProfile], ratio: float = HIGHLIGHT_HIGH,
                             low_ratio: float = HIGHLIGHT_LOW, freq_gap: float = HIGHLIGHT_FREQ_GAP
                             ) -> list[Highlight]:
    """Cells that stand out against the overall column.

    Means: above ``ratio`` x or below ``low_ratio`` x the overall value (a zero
    overall flags any positive value). Frequencies: a gap of at least
    ``freq_gap`` percentage points, reported on the category that grew.
    """
    overall = next(p for p in profiles if p.segment == OVERALL)
    flags = []
    for p in profiles:
        if p is overall:
            continue
        for name, v in p.means.items():
            o = overall.means[name]
            hit = v > 0 if o == 0 else (v > ratio * o or v < low_ratio * o)
            if hit:
                flags.append(Highlight(p.segment, name))
        for name, (t, _) in p.frequencies.items():
            ot = overall.frequencies[name][0]
            if abs(t - ot) >= freq_gap:
                flags.append(Highlight(p.segment, name, "TRUE" if t > ot else "FALSE"))
    return flags


def write_segment_profile(profiles: Sequence[SegmentProfile], path,
                          highlights: Sequence[Highlight] = ()) -> None:
    """Attribute rows x segment columns; highlighted cells carry a trailing ``*``."""
    marked = {(h.segment, h.feature, h.category) for h in highlights}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["attribute", "category"] + [p.name for p in profiles])
        w.writerow(["size_share", ""] + [f"{100 * p.share:.3f}" for p in profiles])

        def cell(p, feature, category, value):
            return f"{value:.3f}" + ("*" if (p.segment, feature, category) in marked else "")

        for spec in FEATURES:
            if spec.name == "RevenueAverage":
                continue
            if spec.kind is FeatureKind.BINARY:
                for cat, pos in (("FALSE", 1), ("TRUE", 0)):
                    w.writerow([spec.name, cat] +
                               [cell(p, spec.name, cat, p.frequencies[spec.name][pos]) for p in profiles])
            else:
                w.writerow([spec.name, ""] + [cell(p, spec.name, None, p.means[spec.name]) for p in profiles])


# --- target lists ----------------------------------------------------------------

@dataclass(frozen=True)
class TargetList:
    segments: frozenset
    entries: tuple[tuple[str, str, int], ...]   # (golden_id, email, segment)
    members: int

    @property
    def count(self) -> int:
        return len(self.entries)

    @property
    def share(self) -> float:
        return self.count / self.members if self.members else 0.0


def target_list(assignment: Mapping[str, int], profiles: Iterable[Profile], segments: Iterable[int]) -> TargetList:
    """Opt-in profiles with an email address inside the chosen segments."""
    segments = frozenset(int(s) for s in segments)
    if not segments:
        raise ValueError("choose at least one segment")
    by_id = {p.profile_id: p for p in profiles}
    members = sorted(g for g, lab in assignment.items() if lab in segments)
    entries = []
    for g in members:
        p = by_id.get(g)
        if p is not None and p.marketing_opt_in and p.email and p.email.strip():
            entries.append((g, p.email.strip(), assignment[g]))
    return TargetList(segments, tuple(entries), len(members))


def write_targets(targets: TargetList, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["golden_id", "email", "segment"])
        w.writerows(targets.entries)
