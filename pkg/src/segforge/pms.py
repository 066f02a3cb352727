"""Relational PMS records: profiles, reservations and folios.

The three tables mirror a property-management-system export. CSV is the only
ingestion format (one file per table, UTF-8, RFC-4180 quoting, ISO dates).
Currency is held as integer minor units.
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Mapping

from . import errors

PROFILE_COLUMNS = (
    "profile_id", "first_name", "last_name", "email", "phone", "address",
    "loyalty_level", "marketing_opt_in", "created_at",
)
RESERVATION_COLUMNS = (
    "reservation_id", "profile_id", "status", "booking_date", "arrival_date",
    "departure_date", "source_channel", "group_id", "company_id", "agency_id",
)
FOLIO_COLUMNS = ("folio_id", "reservation_id", "transaction_code", "amount")


class Status(str, enum.Enum):
    HISTORIC = "Historic"
    CANCELLED = "Cancelled"
    NO_SHOW = "NoShow"


class SourceClass(str, enum.Enum):
    DIRECT = "Direct"
    INDIRECT = "Indirect"


class TxnClass(str, enum.Enum):
    ROOM = "Room"
    ANCILLARY = "Ancillary"
    OTHER = "Other"


@dataclass(frozen=True)
class Profile:
    profile_id: str
    first_name: str | None = None
    last_name: str | None = None
    email: str | None = None
    phone: str | None = None
    address: str | None = None
    loyalty_level: str | None = None
    marketing_opt_in: bool = False
    created_at: dt.date = dt.date(2015, 1, 1)


@dataclass(frozen=True)
class Reservation:
    reservation_id: str
    profile_id: str
    status: Status
    booking_date: dt.date
    arrival_date: dt.date
    departure_date: dt.date
    source_channel: str
    group_id: str | None = None
    company_id: str | None = None
    agency_id: str | None = None
    source_class: SourceClass | None = None

    @property
    def lead_time(self) -> int:
        return (self.arrival_date - self.booking_date).days

    @property
    def length_of_stay(self) -> int:
        return (self.departure_date - self.arrival_date).days


@dataclass(frozen=True)
class Folio:
    folio_id: str
    reservation_id: str
    transaction_code: str
    amount: int  # minor units
    classification: TxnClass | None = None

    @property
    def is_revenue(self) -> bool:
        return self.classification in (TxnClass.ROOM, TxnClass.ANCILLARY)


@dataclass(frozen=True)
class Violation:
    kind: str
    table: str
    key: str
    message: str

    def __str__(self):
        return f"{self.kind}: {self.table} {self.key}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    def __bool__(self):
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def of_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]


_VIOLATION_ERRORS = {
    "DuplicateKey": errors.DuplicateKey,
    "DanglingForeignKey": errors.DanglingForeignKey,
    "NegativeLeadTime": errors.NegativeLeadTime,
    "LengthOfStay": errors.DataError,
    "UnmappedChannel": errors.UnmappedChannel,
    "UnmappedTransactionCode": errors.UnmappedTransactionCode,
}


@dataclass(frozen=True)
class Dataset:
    """Immutable in-memory copy of the three PMS tables."""

    profiles: tuple[Profile, ...]
    reservations: tuple[Reservation, ...]
    folios: tuple[Folio, ...]
    channel_map: Mapping[str, SourceClass] = field(default_factory=dict)
    txn_map: Mapping[str, TxnClass] = field(default_factory=dict)

    def profile_index(self) -> dict[str, Profile]:
        return {p.profile_id: p for p in self.profiles}

    def folios_by_reservation(self) -> dict[str, list[Folio]]:
        out: dict[str, list[Folio]] = {}
        for f in self.folios:
            out.setdefault(f.reservation_id, []).append(f)
        return out

    def reservations_by_profile(self) -> dict[str, list[Reservation]]:
        out: dict[str, list[Reservation]] = {}
        for r in self.reservations:
            out.setdefault(r.profile_id, []).append(r)
        return out

    def revenue(self) -> dict[TxnClass, int]:
        """Revenue in minor units per class; Other lines never contribute."""
        out = {TxnClass.ROOM: 0, TxnClass.ANCILLARY: 0}
        for f in self.folios:
            if f.is_revenue:
                out[f.classification] += f.amount
        return out

    def truncate(self, as_of: dt.date) -> "Dataset":
        """Keep only reservations arriving strictly before ``as_of`` (and their folios)."""
        keep = tuple(r for r in self.reservations if r.arrival_date < as_of)
        ids = {r.reservation_id for r in keep}
        return replace(self, reservations=keep,
                       folios=tuple(f for f in self.folios if f.reservation_id in ids))


def parse_channel_map(raw: Mapping[str, str]) -> dict[str, SourceClass]:
    return {k: SourceClass(v) for k, v in raw.items()}


def parse_txn_map(raw: Mapping[str, str]) -> dict[str, TxnClass]:
    return {k: TxnClass(v) for k, v in raw.items()}


def classify_transactions(folios: Iterable[Folio], txn_map: Mapping[str, str | TxnClass]) -> list[Folio]:
    out = []
    for f in folios:
        try:
            cls = TxnClass(txn_map[f.transaction_code])
        except KeyError:
            raise errors.UnmappedTransactionCode(
                f"folio {f.folio_id}: transaction code {f.transaction_code!r} has no mapping") from None
        out.append(replace(f, classification=cls))
    return out


def validate(dataset: Dataset) -> ValidationReport:
    """List every integrity violation; never raises and never mutates."""
    found: list[Violation] = []

    def dupes(rows, key, table):
        seen = set()
        for r in rows:
            k = getattr(r, key)
            if k in seen:
                found.append(Violation("DuplicateKey", table, f"{key}={k}", "duplicate primary key"))
            seen.add(k)
        return seen

    profile_ids = dupes(dataset.profiles, "profile_id", "profiles")
    reservation_ids = dupes(dataset.reservations, "reservation_id", "reservations")
    dupes(dataset.folios, "folio_id", "folios")

    for r in dataset.reservations:
        key = f"reservation_id={r.reservation_id}"
        if r.profile_id not in profile_ids:
            found.append(Violation("DanglingForeignKey", "reservations", key,
                                   f"profile_id {r.profile_id!r} does not exist"))
        if r.lead_time < 0:
            found.append(Violation("NegativeLeadTime", "reservations", key,
                                   f"booking {r.booking_date} after arrival {r.arrival_date}"))
        min_los = 1 if r.status is Status.HISTORIC else 0
        if r.length_of_stay < min_los:
            found.append(Violation("LengthOfStay", "reservations", key,
                                   f"length of stay {r.length_of_stay} < {min_los} for status {r.status.value}"))
        if dataset.channel_map and r.source_channel not in dataset.channel_map:
            found.append(Violation("UnmappedChannel", "reservations", key,
                                   f"source channel {r.source_channel!r} has no mapping"))

    for f in dataset.folios:
        key = f"folio_id={f.folio_id}"
        if f.reservation_id not in reservation_ids:
            found.append(Violation("DanglingForeignKey", "folios", key,
                                   f"reservation_id {f.reservation_id!r} does not exist"))
        if dataset.txn_map and f.transaction_code not in dataset.txn_map:
            found.append(Violation("UnmappedTransactionCode", "folios", key,
                                   f"transaction code {f.transaction_code!r} has no mapping"))
    return ValidationReport(tuple(found))


def raise_for_report(report: ValidationReport) -> None:
    if report:
        first = report.violations[0]
        raise _VIOLATION_ERRORS[first.kind](str(first))


# --- CSV -------------------------------------------------------------------

def _opt(value: str) -> str | None:
    value = value.strip()
    return value or None


def _date(value: str) -> dt.date:
    return dt.date.fromisoformat(value.strip())


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "1", "yes", "y", "t"):
        return True
    if v in ("false", "0", "no", "n", "f", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_amount(value: str) -> int:
    """Decimal currency string to integer minor units (exact)."""
    cents = Decimal(value.strip()) * 100
    if cents != cents.to_integral_value():
        raise ValueError(f"amount {value!r} has more than 2 decimals")
    return int(cents)


def format_amount(cents: int) -> str:
    return f"{Decimal(cents) / 100:.2f}"


def _read_rows(path: Path, required: tuple[str, ...]):
    path = Path(path)
    if not path.exists():
        raise errors.DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise errors.MissingColumn(f"{path.name}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def _parse(path, columns, build):
    out = []
    for lineno, row in _read_rows(path, columns):
        try:
            out.append(build(row))
        except (ValueError, InvalidOperation) as exc:
            raise errors.DataError(f"{Path(path).name} row {lineno}: {exc}") from None
    return out


def read_profiles(path) -> list[Profile]:
    return _parse(path, PROFILE_COLUMNS, lambda r: Profile(
        profile_id=r["profile_id"].strip(),
        first_name=_opt(r["first_name"]),
        last_name=_opt(r["last_name"]),
        email=_opt(r["email"]),
        phone=_opt(r["phone"]),
        address=_opt(r["address"]),
        loyalty_level=_opt(r["loyalty_level"]),
        marketing_opt_in=_bool(r["marketing_opt_in"]),
        created_at=_date(r["created_at"]),
    ))


def read_reservations(path) -> list[Reservation]:
    return _parse(path, RESERVATION_COLUMNS, lambda r: Reservation(
        reservation_id=r["reservation_id"].strip(),
        profile_id=r["profile_id"].strip(),
        status=Status(r["status"].strip()),
        booking_date=_date(r["booking_date"]),
        arrival_date=_date(r["arrival_date"]),
        departure_date=_date(r["departure_date"]),
        source_channel=r["source_channel"].strip(),
        group_id=_opt(r["group_id"]),
        company_id=_opt(r["company_id"]),
        agency_id=_opt(r["agency_id"]),
    ))


def read_folios(path) -> list[Folio]:
    return _parse(path, FOLIO_COLUMNS, lambda r: Folio(
        folio_id=r["folio_id"].strip(),
        reservation_id=r["reservation_id"].strip(),
        transaction_code=r["transaction_code"].strip(),
        amount=parse_amount(r["amount"]),
    ))


def ingest(profiles_csv, reservations_csv, folios_csv,
           channel_map: Mapping[str, str], txn_map: Mapping[str, str]) -> Dataset:
    """Read, derive and validate the three tables.

    Raises the :mod:`segforge.errors` class matching the first violation found;
    the message names the offending row.
    """
    cmap = parse_channel_map(channel_map)
    tmap = parse_txn_map(txn_map)
    profiles = read_profiles(profiles_csv)
    reservations = read_reservations(reservations_csv)
    folios = read_folios(folios_csv)

    for r in reservations:
        if r.source_channel not in cmap:
            raise errors.UnmappedChannel(
                f"reservation {r.reservation_id}: source channel {r.source_channel!r} has no mapping")
    reservations = [replace(r, source_class=cmap[r.source_channel]) for r in reservations]
    folios = classify_transactions(folios, tmap)

    ds = Dataset(tuple(profiles), tuple(reservations), tuple(folios), cmap, tmap)
    raise_for_report(validate(ds))
    return ds


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh)


def _s(v) -> str:
    return "" if v is None else str(v)


def write_profiles(profiles: Iterable[Profile], path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(PROFILE_COLUMNS)
        for p in profiles:
            w.writerow([p.profile_id, _s(p.first_name), _s(p.last_name), _s(p.email), _s(p.phone),
                        _s(p.address), _s(p.loyalty_level), "true" if p.marketing_opt_in else "false",
                        p.created_at.isoformat()])


def write_reservations(reservations: Iterable[Reservation], path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(RESERVATION_COLUMNS)
        for r in reservations:
            w.writerow([r.reservation_id, r.profile_id, r.status.value, r.booking_date.isoformat(),
                        r.arrival_date.isoformat(), r.departure_date.isoformat(), r.source_channel,
                        _s(r.group_id), _s(r.company_id), _s(r.agency_id)])


def write_folios(folios: Iterable[Folio], path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(FOLIO_COLUMNS)
        for f in folios:
            w.writerow([f.folio_id, f.reservation_id, f.transaction_code, format_amount(f.amount)])


def export(dataset: Dataset, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / f"{name}.csv" for name in ("profiles", "reservations", "folios")}
    write_profiles(dataset.profiles, paths["profiles"])
    write_reservations(dataset.reservations, paths["reservations"])
    write_folios(dataset.folios, paths["folios"])
    return paths
