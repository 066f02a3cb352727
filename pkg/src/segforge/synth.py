"""Seeded synthetic PMS data with planted guest archetypes.

Every profile draws from its own PRNG substream keyed by ``(seed, index)``, so
growing the profile count never changes profiles already generated.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import errors
from .pms import Dataset, Folio, Profile, Reservation, SourceClass, Status, TxnClass, export

DIRECT_CHANNELS = ("Website", "Phone", "WalkIn")
INDIRECT_CHANNELS = ("GDS", "OTA", "Wholesale")
DEFAULT_CHANNEL_MAP = {**dict.fromkeys(DIRECT_CHANNELS, "Direct"), **dict.fromkeys(INDIRECT_CHANNELS, "Indirect")}
DEFAULT_TXN_MAP = {"ROOM": "Room", "FB": "Ancillary", "SPA": "Ancillary", "CITYTAX": "Other", "TIP": "Other"}

FIRST_NAMES = (
    "Anna", "Bram", "Carla", "Daan", "Eva", "Finn", "Greta", "Hugo", "Iris", "Jon", "Karin", "Lars",
    "Maud", "Niels", "Olga", "Pieter", "Quinn", "Rosa", "Sem", "Tess", "Umar", "Vera", "Wout", "Xena",
    "Yara", "Zeno", "Bella", "Cas", "Dirk", "Elin", "Floor", "Gijs", "Hanna", "Ivo", "Julia", "Kees",
)
LAST_NAMES = (
    "Jansen", "Bakker", "Visser", "Smit", "Meijer", "Mulder", "Bos", "Vos", "Peters", "Hendriks",
    "Dekker", "Brouwer", "Dijkstra", "Kok", "Jacobs", "Vermeulen", "Kuipers", "Schouten", "Willems",
    "Hoekstra", "Koster", "Prins", "Huisman", "Postma", "Kuiper", "Veenstra", "Kramer", "Berg",
    "Wolters", "Molenaar", "Lammers", "Zwart", "Ruiter", "Maas", "Verbeek", "Kroon",
)
STREETS = ("Damrak", "Rokin", "Singel", "Herengracht", "Keizersgracht", "Prinsengracht", "Spui",
           "Kalverstraat", "Leidsestraat", "Vijzelstraat", "Utrechtsestraat", "Overtoom")
CITIES = ("Amsterdam", "Utrecht", "London", "Berlin", "Paris", "Boston", "Madrid", "Oslo")


@dataclass(frozen=True)
class Archetype:
    name: str
    reservations: tuple[int, int] = (1, 1)       # inclusive range of stays
    cancel_prob: float = 0.03
    no_show_prob: float = 0.01
    direct_prob: float = 0.5
    group_prob: float = 0.1
    company_prob: float = 0.1
    agency_prob: float = 0.1
    los: tuple[int, int] = (1, 3)
    lead: tuple[int, int] = (0, 60)
    weekend_prob: float = 0.4                    # arrival on Fri/Sat
    nightly_rate: float = 120.0
    ancillary_share: float = 0.25
    repeat_gap: tuple[int, int] = (60, 360)
    loyalty_prob: float = 0.0
    opt_in_rate: float = 0.476

    def check(self) -> None:
        for f in ("cancel_prob", "no_show_prob", "direct_prob", "group_prob", "company_prob",
                  "agency_prob", "weekend_prob", "ancillary_share", "loyalty_prob", "opt_in_rate"):
            v = getattr(self, f)
            if not 0.0 <= v <= 1.0:
                raise errors.InvalidConfig(f"archetype {self.name}: {f}={v} outside [0, 1]")
        if self.cancel_prob + self.no_show_prob > 1:
            raise errors.InvalidConfig(f"archetype {self.name}: status mix exceeds 1")
        for f in ("reservations", "los", "lead", "repeat_gap"):
            lo, hi = getattr(self, f)
            if lo > hi or lo < 0:
                raise errors.InvalidConfig(f"archetype {self.name}: bad range {f}=({lo}, {hi})")
        if self.reservations[0] < 1 or self.los[0] < 1:
            raise errors.InvalidConfig(f"archetype {self.name}: need at least one stay of one night")


DEFAULT_ARCHETYPES = (
    Archetype("agent_group", reservations=(1, 1), cancel_prob=0.02, no_show_prob=0.0, direct_prob=0.05,
              group_prob=0.95, company_prob=0.05, agency_prob=0.95, los=(2, 3), lead=(60, 150),
              weekend_prob=0.3, nightly_rate=130.0, ancillary_share=0.2),
    Archetype("direct_weekend", reservations=(1, 1), cancel_prob=0.02, no_show_prob=0.0, direct_prob=0.95,
              group_prob=0.02, company_prob=0.02, agency_prob=0.02, los=(1, 1), lead=(0, 2),
              weekend_prob=0.95, nightly_rate=110.0, ancillary_share=0.4),
    Archetype("cancelled_indirect", reservations=(1, 1), cancel_prob=0.95, no_show_prob=0.02,
              direct_prob=0.05, group_prob=0.05, company_prob=0.05, agency_prob=0.9, los=(4, 6),
              lead=(15, 40), weekend_prob=0.5, nightly_rate=120.0),
    Archetype("repeat_loyalist", reservations=(3, 6), cancel_prob=0.05, no_show_prob=0.0, direct_prob=0.6,
              group_prob=0.05, company_prob=0.7, agency_prob=0.05, los=(1, 3), lead=(5, 30),
              weekend_prob=0.2, nightly_rate=160.0, ancillary_share=0.35, repeat_gap=(30, 200),
              loyalty_prob=0.6),
)


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    profiles: int = 1000
    archetypes: tuple[Archetype, ...] = DEFAULT_ARCHETYPES
    weights: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    start: dt.date = dt.date(2015, 1, 1)
    end: dt.date = dt.date(2019, 12, 31)
    duplicate_rate: float = 0.0

    def check(self) -> None:
        if self.profiles < 0:
            raise errors.InvalidConfig("profile count must be non-negative")
        if len(self.weights) != len(self.archetypes) or not self.archetypes:
            raise errors.InvalidConfig("one weight per archetype required")
        if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0, abs_tol=1e-9):
            raise errors.InvalidConfig(f"archetype weights must sum to 1, got {sum(self.weights)}")
        if not 0.0 <= self.duplicate_rate <= 0.2:
            raise errors.InvalidConfig(f"duplicate rate {self.duplicate_rate} outside [0, 0.2]")
        if self.end <= self.start:
            raise errors.InvalidConfig("date range is empty")
        for a in self.archetypes:
            a.check()

    @classmethod
    def from_mapping(cls, data: Mapping) -> "GeneratorConfig":
        """Build from a parsed TOML table (``[generator]`` and ``[archetypes.<name>]``)."""
        gen = dict(data.get("generator", data))
        base = {a.name: a for a in DEFAULT_ARCHETYPES}
        overrides = data.get("archetypes", {})
        names = list(overrides) or list(base)
        known = {f.name for f in fields(Archetype)}
        archetypes = []
        for name in names:
            params = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.get(name, {}).items()}
            unknown = set(params) - known
            if unknown:
                raise errors.InvalidConfig(f"archetype {name}: unknown field(s) {sorted(unknown)}")
            archetypes.append(replace(base.get(name, Archetype(name)), **params))
        weights = gen.get("weights")
        if isinstance(weights, Mapping):
            weights = tuple(float(weights[a.name]) for a in archetypes)
        elif weights is None:
            weights = tuple([1.0 / len(archetypes)] * len(archetypes))
        kwargs = {"archetypes": tuple(archetypes), "weights": tuple(weights)}
        for key in ("seed", "profiles"):
            if key in gen:
                kwargs[key] = int(gen[key])
        if "duplicate_rate" in gen:
            kwargs["duplicate_rate"] = float(gen["duplicate_rate"])
        for key in ("start", "end"):
            if key in gen:
                v = gen[key]
                kwargs[key] = v if isinstance(v, dt.date) else dt.date.fromisoformat(str(v))
        return cls(**kwargs)


@dataclass(frozen=True)
class GroundTruth:
    profile_id: str
    archetype: str
    dup_group: str


@dataclass(frozen=True)
class SynthData:
    dataset: Dataset
    truth: tuple[GroundTruth, ...]

    def archetype_of(self) -> dict[str, str]:
        return {t.profile_id: t.archetype for t in self.truth}

    def write(self, directory) -> dict[str, Path]:
        directory = Path(directory)
        paths = export(self.dataset, directory)
        paths["ground_truth"] = directory / "ground_truth.csv"
        with open(paths["ground_truth"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["profile_id", "archetype", "dup_group"])
            for t in self.truth:
                w.writerow([t.profile_id, t.archetype, t.dup_group])
        return paths


def _vowel_variant(name: str, rng) -> str:
    """Spelling variant with the same Soundex code (swap an inner vowel, or append 'e')."""
    inner = [i for i, c in enumerate(name) if i > 0 and c.lower() in "aeiou"]
    if inner:
        i = inner[int(rng.integers(len(inner)))]
        choices = [v for v in "aeiouy" if v != name[i].lower()]
        return name[:i] + choices[int(rng.integers(len(choices)))] + name[i + 1:]
    return name + "e"


def _arrival_for(rng, archetype: Archetype, lo: dt.date, hi: dt.date) -> dt.date:
    span = (hi - lo).days
    day = lo + dt.timedelta(days=int(rng.integers(0, max(span, 1))))
    weekend = rng.random() < archetype.weekend_prob
    # shift forward to the nearest Fri/Sat (or Mon..Thu) to plant the stay pattern
    targets = (4, 5) if weekend else (0, 1, 2, 3)
    while day.weekday() not in targets:
        day += dt.timedelta(days=1)
    return day


def _make_profile_records(index: int, config: GeneratorConfig, archetype_idx: int, rng):
    a = config.archetypes[archetype_idx]
    pid = f"P{index:06d}"
    first = FIRST_NAMES[int(rng.integers(len(FIRST_NAMES)))]
    last = LAST_NAMES[int(rng.integers(len(LAST_NAMES)))]
    phone = "06" + "".join(str(d) for d in rng.integers(0, 10, size=8))
    address = f"{STREETS[int(rng.integers(len(STREETS)))]} {int(rng.integers(1, 1000))}, " \
              f"{CITIES[int(rng.integers(len(CITIES)))]}"
    created = config.start + dt.timedelta(days=int(rng.integers(0, (config.end - config.start).days)))
    profile = Profile(
        profile_id=pid, first_name=first, last_name=last,
        email=f"{first.lower()}.{last.lower()}.{index}@example.com", phone=phone, address=address,
        loyalty_level=("Gold" if rng.random() < 0.3 else "Silver") if rng.random() < a.loyalty_prob else None,
        marketing_opt_in=bool(rng.random() < a.opt_in_rate), created_at=created,
    )

    count = int(rng.integers(a.reservations[0], a.reservations[1] + 1))
    reservations, folios = [], []
    # leave room for every planned stay before the end of the range
    span = (count - 1) * (a.repeat_gap[1] + 7 + a.los[1]) + a.los[1] + 7
    latest = max(config.start + dt.timedelta(days=1), config.end - dt.timedelta(days=span))
    arrival = _arrival_for(rng, a, config.start, latest)
    for j in range(count):
        if j:
            gap = int(rng.integers(a.repeat_gap[0], a.repeat_gap[1] + 1))
            arrival = _arrival_for(rng, a, arrival + dt.timedelta(days=gap), arrival + dt.timedelta(days=gap + 7))
        if arrival > config.end:
            break
        los = int(rng.integers(a.los[0], a.los[1] + 1))
        lead = int(rng.integers(a.lead[0], a.lead[1] + 1))
        u = rng.random()
        status = Status.CANCELLED if u < a.cancel_prob else (
            Status.NO_SHOW if u < a.cancel_prob + a.no_show_prob else Status.HISTORIC)
        direct = rng.random() < a.direct_prob
        channels = DIRECT_CHANNELS if direct else INDIRECT_CHANNELS
        rid = f"R{index:06d}-{j:02d}"
        reservations.append(Reservation(
            reservation_id=rid, profile_id=pid, status=status,
            booking_date=arrival - dt.timedelta(days=lead), arrival_date=arrival,
            departure_date=arrival + dt.timedelta(days=los),
            source_channel=channels[int(rng.integers(len(channels)))],
            group_id=f"G{int(rng.integers(1, 500)):04d}" if rng.random() < a.group_prob else None,
            company_id=f"C{int(rng.integers(1, 300)):04d}" if rng.random() < a.company_prob else None,
            agency_id=f"A{int(rng.integers(1, 80)):03d}" if rng.random() < a.agency_prob else None,
            source_class=SourceClass.DIRECT if direct else SourceClass.INDIRECT,
        ))
        if status is Status.HISTORIC:
            rate = max(20.0, rng.normal(a.nightly_rate, 0.15 * a.nightly_rate))
            room = int(round(rate * los * 100))
            lines = [("ROOM", room)]
            anc = int(round(room * a.ancillary_share * rng.uniform(0.5, 1.5)))
            if anc > 0:
                fb = int(round(anc * rng.uniform(0.4, 1.0)))
                lines += [("FB", fb), ("SPA", anc - fb)]
            lines += [("CITYTAX", int(round(room * 0.07))), ("TIP", int(rng.integers(0, 2000)))]
            for m, (code, amount) in enumerate(lines):
                folios.append(Folio(f"F{index:06d}-{j:02d}-{m}", rid, code, amount,
                                    TxnClass(DEFAULT_TXN_MAP[code])))
        arrival = arrival + dt.timedelta(days=los)

    records = [profile]
    if config.duplicate_rate and rng.random() < config.duplicate_rate:
        variant = int(rng.integers(3))
        dup = replace(profile, profile_id=f"{pid}-2",
                      created_at=created + dt.timedelta(days=int(rng.integers(1, 400))),
                      marketing_opt_in=bool(rng.random() < a.opt_in_rate))
        if variant == 0:    # same mailbox, different spelling and case
            dup = replace(dup, email=f"  {profile.email.upper()} ", first_name=_vowel_variant(first, rng),
                          phone=None, address=None)
        elif variant == 1:  # phonetic names + same phone digits, punctuated differently
            dup = replace(dup, email=None, first_name=_vowel_variant(first, rng),
                          last_name=_vowel_variant(last, rng),
                          phone=f"({phone[:2]}) {phone[2:6]}-{phone[6:]}", address=None)
        else:               # same names, same address with different whitespace
            dup = replace(dup, email=f"{first.lower()}{index}@mail.example", phone=None,
                          first_name=first.upper(), address="  " + address.upper().replace(" ", "  "))
        records.append(dup)
        reservations = [replace(r, profile_id=dup.profile_id) if rng.random() < 0.5 else r
                        for r in reservations]
    return records, reservations, folios


def generate(config: GeneratorConfig = GeneratorConfig()) -> SynthData:
    """Deterministic under ``config.seed``; output passes :func:`segforge.pms.validate`."""
    config.check()
    cumulative = np.cumsum(config.weights)
    profiles, reservations, folios, truth = [], [], [], []
    for i in range(config.profiles):
        rng = np.random.default_rng([config.seed, i])
        a_idx = min(int(np.searchsorted(cumulative, rng.random(), side="right")), len(config.archetypes) - 1)
        recs, res, fol = _make_profile_records(i, config, a_idx, rng)
        name = config.archetypes[a_idx].name
        for p in recs:
            truth.append(GroundTruth(p.profile_id, name, recs[0].profile_id))
        profiles += recs
        reservations += res
        folios += fol
    channel_map = {k: SourceClass(v) for k, v in DEFAULT_CHANNEL_MAP.items()}
    txn_map = {k: TxnClass(v) for k, v in DEFAULT_TXN_MAP.items()}
    ds = Dataset(tuple(profiles), tuple(reservations), tuple(folios), channel_map, txn_map)
    return SynthData(ds, tuple(truth))


def config_toml(data_dir: str, timestamps: Sequence[str] = ("2016-01-01", "2017-01-01", "2018-01-01",
                                                            "2019-01-01", "2020-01-01")) -> str:
    """Pipeline config pointing at a generated dataset, with the default maps."""
    lines = [
        "[input]",
        f'profiles = "{data_dir}/profiles.csv"',
        f'reservations = "{data_dir}/reservations.csv"',
        f'folios = "{data_dir}/folios.csv"',
        "",
        "[timeline]",
        "timestamps = [" + ", ".join(f'"{t}"' for t in timestamps) + "]",
        "",
        "[channel_map]",
        *[f'{k} = "{v}"' for k, v in DEFAULT_CHANNEL_MAP.items()],
        "",
        "[txn_map]",
        *[f'{k} = "{v}"' for k, v in DEFAULT_TXN_MAP.items()],
        "",
    ]
    return "\n".join(lines)
