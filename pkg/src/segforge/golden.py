"""Rule-based match and merge of duplicate profiles into golden profiles."""
from __future__ import annotations

import csv
import re
import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import errors
from .pms import Dataset, Profile

NAME_FIELDS = ("first_name", "last_name")
CONTACT_FIELDS = ("first_name", "last_name", "email", "phone", "address")

EXACT = "exact"
PHONETIC = "phonetic"

_SOUNDEX_CODES = {
    **dict.fromkeys("bfpv", "1"),
    **dict.fromkeys("cgjkqsxz", "2"),
    **dict.fromkeys("dt", "3"),
    "l": "4",
    **dict.fromkeys("mn", "5"),
    "r": "6",
}


def _fold(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(c for c in decomposed if not unicodedata.combining(c)).lower()


def phonetic_key(name: str) -> str:
    """American Soundex code of ``name`` (case- and diacritic-insensitive).

    Vowels (and y) separate repeated codes, h and w do not.
    """
    letters = [c for c in _fold(name or "") if "a" <= c <= "z"]
    if not letters:
        raise errors.EmptyName(f"cannot build a phonetic key from {name!r}")
    first = letters[0]
    out = [first.upper()]
    prev = _SOUNDEX_CODES.get(first, "")
    for c in letters[1:]:
        if c in "hw":
            continue
        code = _SOUNDEX_CODES.get(c, "")
        if code and code != prev:
            out.append(code)
            if len(out) == 4:
                break
        prev = code
    return "".join(out).ljust(4, "0")


def normalize(field: str, value: str | None) -> str | None:
    """Canonical comparison form of a contact field; ``None`` when empty."""
    if value is None:
        return None
    if field == "phone":
        v = re.sub(r"\D", "", value)
    elif field == "address":
        v = " ".join(value.lower().split())
    else:
        v = value.strip().lower()
    return v or None


@dataclass(frozen=True)
class MergeRule:
    """Conjunction of field comparisons; two profiles match when every field agrees."""

    fields: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.fields:
            raise errors.InvalidConfig("a merge rule needs at least one field")
        for name, mode in self.fields:
            if name not in CONTACT_FIELDS:
                raise errors.InvalidConfig(f"unknown merge field {name!r}")
            if mode not in (EXACT, PHONETIC):
                raise errors.InvalidConfig(f"unknown match mode {mode!r}")
            if mode == PHONETIC and name not in NAME_FIELDS:
                raise errors.InvalidConfig(f"phonetic mode only applies to names, not {name!r}")

    def key(self, profile: Profile) -> tuple[str, ...] | None:
        parts = []
        for name, mode in self.fields:
            value = normalize(name, getattr(profile, name))
            if value is None:
                return None
            if mode == PHONETIC:
                try:
                    value = phonetic_key(value)
                except errors.EmptyName:
                    return None
            parts.append(value)
        return tuple(parts)


# email exact  OR  (phonetic first AND phonetic last AND (phone exact OR address exact))
DEFAULT_RULES = (
    MergeRule((("email", EXACT),)),
    MergeRule((("first_name", PHONETIC), ("last_name", PHONETIC), ("phone", EXACT))),
    MergeRule((("first_name", PHONETIC), ("last_name", PHONETIC), ("address", EXACT))),
)


@dataclass(frozen=True)
class GoldenProfile:
    golden_id: str
    member_profile_ids: tuple[str, ...]
    first_name: str | None
    last_name: str | None
    email: str | None
    phone: str | None
    address: str | None
    loyalty_level: str | None
    marketing_opt_in: bool
    created_at: object

    def to_profile(self) -> Profile:
        return Profile(self.golden_id, self.first_name, self.last_name, self.email, self.phone,
                       self.address, self.loyalty_level, self.marketing_opt_in, self.created_at)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # lower index wins so roots are input-order independent once sorted
            self.parent[max(ra, rb)] = min(ra, rb)


def _merge_group(members: list[Profile]) -> GoldenProfile:
    # survivorship: contact fields all come from the most recent member
    latest = max(members, key=lambda p: (p.created_at, p.profile_id))
    levels = [p.loyalty_level for p in members if p.loyalty_level]
    ids = tuple(sorted(p.profile_id for p in members))
    return GoldenProfile(
        golden_id=ids[0],
        member_profile_ids=ids,
        first_name=latest.first_name,
        last_name=latest.last_name,
        email=latest.email,
        phone=latest.phone,
        address=latest.address,
        loyalty_level=max(levels) if levels else None,
        marketing_opt_in=any(p.marketing_opt_in for p in members),
        created_at=min(p.created_at for p in members),
    )


def match_merge(profiles: Sequence[Profile], rules: Sequence[MergeRule] = DEFAULT_RULES) -> list[GoldenProfile]:
    """Union-find closure of all pairwise matches under any rule.

    Candidate pairs are found by blocking on each rule's key, so every pair
    sharing a complete key is linked without an O(n^2) scan. Output is sorted
    by ``golden_id`` (the smallest member ``profile_id``).
    """
    if not rules:
        raise errors.InvalidConfig("match_merge needs at least one rule")
    ordered = sorted(profiles, key=lambda p: p.profile_id)
    uf = _UnionFind(len(ordered))
    for rule in rules:
        first_seen: dict[tuple, int] = {}
        for i, p in enumerate(ordered):
            k = rule.key(p)
            if k is None:
                continue
            if k in first_seen:
                uf.union(first_seen[k], i)
            else:
                first_seen[k] = i
    groups: dict[int, list[Profile]] = {}
    for i, p in enumerate(ordered):
        groups.setdefault(uf.find(i), []).append(p)
    return sorted((_merge_group(g) for g in groups.values()), key=lambda g: g.golden_id)


def golden_map(goldens: Iterable[GoldenProfile]) -> dict[str, str]:
    return {pid: g.golden_id for g in goldens for pid in g.member_profile_ids}


def apply_golden(dataset: Dataset, goldens: Sequence[GoldenProfile]) -> Dataset:
    """Replace profiles by golden profiles and re-point every reservation."""
    mapping = golden_map(goldens)
    reservations = tuple(replace(r, profile_id=mapping.get(r.profile_id, r.profile_id))
                         for r in dataset.reservations)
    return replace(dataset, profiles=tuple(g.to_profile() for g in goldens), reservations=reservations)


def write_golden_map(mapping: Mapping[str, str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["profile_id", "golden_id"])
        for pid in sorted(mapping):
            w.writerow([pid, mapping[pid]])


def read_golden_map(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise errors.DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"profile_id", "golden_id"} <= set(reader.fieldnames or ()):
            raise errors.MissingColumn(f"{path.name}: expected columns profile_id,golden_id")
        return {row["profile_id"]: row["golden_id"] for row in reader}


def goldens_from_map(dataset: Dataset, mapping: Mapping[str, str]) -> list[GoldenProfile]:
    """Rebuild golden profiles from a stored profile_id -> golden_id map."""
    groups: dict[str, list[Profile]] = {}
    for p in dataset.profiles:
        groups.setdefault(mapping.get(p.profile_id, p.profile_id), []).append(p)
    out = []
    for gid, members in groups.items():
        g = _merge_group(members)
        out.append(replace(g, golden_id=gid))
    return sorted(out, key=lambda g: g.golden_id)
