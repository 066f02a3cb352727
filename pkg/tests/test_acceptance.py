"""End-to-end acceptance gates. Each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are written
past pytest's capture so they show up without ``-s``.
"""
import datetime as dt
import time
from collections import Counter
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from segforge.cluster import distance_matrix, feature_ranges, gower_distance, ward_cluster
from segforge.features import (FEATURE_KINDS, FEATURE_NAMES, FEATURES, REVENUE_QUANTILE, FeatureKind,
                               FeatureTable, build_features, nearest_rank_quantile, reduce_dimensionality,
                               round_half_up)
from segforge.golden import apply_golden, match_merge
from segforge.pipeline import PipelineConfig, run_pipeline
from segforge.selection import SegmentModel, elbow_table, optimal_k, propagate_1nn, read_segments, run_trials, \
    build_model
from segforge.synth import GeneratorConfig, generate
from segforge.timeline import snapshot, transitions

from . import oracles
from .reference_trial import CRITERION, OPTIMAL_K, REFERENCE_TRIAL
from .test_cluster import MIXED, member_sets, mixed_vectors

N, P, B = FeatureKind.NUMERIC, FeatureKind.PERCENTAGE, FeatureKind.BINARY
STAMPS = tuple(dt.date(y, 1, 1) for y in range(2016, 2021))


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        assert ok, detail
    return emit


def _config(data_dir, out, **kw):
    cfg = PipelineConfig(profiles=data_dir / "profiles.csv", reservations=data_dir / "reservations.csv",
                         folios=data_dir / "folios.csv",
                         channel_map={"Website": "Direct", "Phone": "Direct", "WalkIn": "Direct",
                                      "GDS": "Indirect", "OTA": "Indirect", "Wholesale": "Indirect"},
                         txn_map={"ROOM": "Room", "FB": "Ancillary", "SPA": "Ancillary",
                                  "CITYTAX": "Other", "TIP": "Other"},
                         output=out)
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


# 1 ------------------------------------------------------------------------------

def test_c1_reference_trial(verdict):
    table = elbow_table(CRITERION)
    rows = list(table.rows())
    worst_float = 0.0
    worst_exact = Fraction(0)
    c = [Fraction(str(x)) for x in CRITERION]
    d1 = {k: c[k - 2] - c[k - 1] for k in range(2, 21)}
    d2 = {k: d1[k - 1] - d1[k] for k in range(3, 21)}
    exact = {}
    for k in range(3, 20):
        e = d2[k + 1] > d1[k + 1]
        exact[k] = (d1[k], d2[k], int(e), (d2[k + 1] - d1[k + 1]) / k if e else Fraction(0))
    cells_ok = True
    for (k, _, w1, w2, we, ws), got in zip(REFERENCE_TRIAL, rows):
        for idx, want in enumerate((w1, w2, we, ws)):
            have = got[2 + idx]
            if want is None:
                cells_ok &= bool(np.isnan(have))
                continue
            worst_float = max(worst_float, abs(have - want))
            if k in exact:
                ex = exact[k][idx]
                worst_exact = max(worst_exact, abs(ex - Fraction(str(want))))
                # float output tracks the exact value up to representation error of the decimal inputs
                cells_ok &= abs(have - float(ex)) <= 1e-12
    cells_ok &= worst_exact <= Fraction(5, 10000)
    k_ok = optimal_k(table) == OPTIMAL_K
    best = min(_timed(lambda: optimal_k(elbow_table(CRITERION))) for _ in range(200))
    ok = cells_ok and k_ok and best < 1e-3
    verdict(1, ok, f"max exact deviation {float(worst_exact):.6f} (<= 0.0005), max float deviation "
                   f"{worst_float:.3g}, optimal_k={optimal_k(table)}, runtime {best * 1e6:.0f} us")


def _timed(fn):
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t


# 2 ------------------------------------------------------------------------------

def test_c2_ward_oracle(verdict):
    worst = 0.0
    partitions_ok = True
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = 2 + seed % 7
        dm = distance_matrix(mixed_vectors(rng, n), MIXED)
        got = member_sets(ward_cluster(dm))
        want = oracles.ward_merges(dm.square() ** 2)
        partitions_ok &= [s for s, _ in got] == [s for s, _ in want]
        for (_, h), (_, c) in zip(got, want):
            worst = max(worst, abs(h - c) / c if c else abs(h))
    verdict(2, partitions_ok and worst <= 1e-9,
            f"50 datasets n=2..8, partitions {'identical' if partitions_ok else 'DIFFER'}, "
            f"max relative cost error {worst:.2e}")


# 3 ------------------------------------------------------------------------------

def test_c3_gower_properties(verdict):
    rng = np.random.default_rng(7)
    pop = np.column_stack([
        rng.integers(1, 30, 400), *(np.round(rng.random((7, 400)) * 5) / 5),
        *(rng.integers(0, 100, (4, 400)) * 100), rng.integers(0, 2, 400), rng.integers(0, 20, 400),
        *(rng.integers(0, 2, (2, 400))), *(np.round(rng.random((2, 400)) * 5) / 5), rng.random(400) * 10,
        *(rng.integers(0, 2, (6, 400))),
    ]).astype(float)
    pop[:, 5] = 0.4  # one constant feature: zero range, excluded
    ranges = feature_ranges(pop)
    failures = Counter()
    idx = rng.integers(0, len(pop), (10_000, 2))
    for i, j in idx:
        a, b = pop[i], pop[j]
        dab, dba = gower_distance(a, b, ranges), gower_distance(b, a, ranges)
        failures["identity"] += gower_distance(a, a, ranges) != 0.0
        failures["symmetry"] += dab != dba
        failures["bounds"] += not 0.0 <= dab <= 1.0
    for kind in (N, P, B):
        for x, y, r in zip(rng.random(1000) * 50, rng.random(1000) * 50, rng.random(1000) * 100 + 50):
            if kind is B:
                x, y, r = float(x > 25), float(y > 25), 1.0
            want = float(x != y) if kind is B else abs(x - y) / r
            failures[f"closed form {kind.value}"] += gower_distance([x], [y], [r], (kind,)) != want
    bad = {k: v for k, v in failures.items() if v}
    verdict(3, not bad, f"10000 pairs over {len(FEATURES)} features plus 3000 single-feature cases, "
                        f"failures: {bad or 'none'}")


# 4 ------------------------------------------------------------------------------

def _population(rng, n):
    cols = []
    for k in FEATURE_KINDS:
        if k is B:
            cols.append(rng.integers(0, 2, n))
        elif k is P:
            cols.append(np.round(rng.random(n) * 5) / 5)
        else:
            cols.append(rng.integers(0, 12, n))
    return np.column_stack(cols).astype(float)


def test_c4_nearest_neighbour_oracle(verdict):
    mismatches = 0
    total = 0
    for run in range(20):
        rng = np.random.default_rng(500 + run)
        ex = _population(rng, 500)
        q = _population(rng, 5000)
        q[::7] *= 1.5  # some queries fall outside the exemplar ranges
        labels = rng.integers(1, 9, 500)
        model = SegmentModel(tuple(f"E{i}" for i in range(500)), ex, labels, feature_ranges(ex), 8)
        table = FeatureTable(tuple(f"Q{i:04d}" for i in range(5000)), q)
        got = propagate_1nn(model, table).labels
        want = oracles.nearest_labels(ex, labels, q, model.ranges, FEATURE_KINDS)
        mismatches += int(np.sum(got != want))
        total += q.shape[0]
    verdict(4, mismatches == 0, f"20 runs x 5000 queries, {total - mismatches}/{total} labels match")


# 5 ------------------------------------------------------------------------------

def _purity(labels, truth):
    by_cluster: dict = {}
    for lab, arch in zip(labels, truth):
        by_cluster.setdefault(lab, Counter())[arch] += 1
    return sum(c.most_common(1)[0][1] for c in by_cluster.values()) / len(labels)


def test_c5_planted_recovery(verdict, tmp_path):
    start = time.perf_counter()
    data = generate(GeneratorConfig(seed=2024, profiles=5000, duplicate_rate=0.1))
    data.write(tmp_path / "data")
    cfg = _config(tmp_path / "data", tmp_path / "out", trials=15, sample=1000, kmax=20, seed=0)
    result = run_pipeline(cfg)
    elapsed = time.perf_counter() - start
    labels = read_segments(tmp_path / "out" / "segments.csv")
    arch = data.archetype_of()
    ids = sorted(labels)
    purity = _purity([labels[g] for g in ids], [arch[g] for g in ids])
    v = result.verdict
    ok = v.stability.value != "Unstable" and purity >= 0.8 and elapsed <= 300
    verdict(5, ok, f"k={v.mode_k} votes={dict(v.votes)} verdict={v.stability.value}, purity {purity:.3f}, "
                   f"{elapsed:.1f} s")


# 6 ------------------------------------------------------------------------------

def test_c6_reduction_invariants(verdict):
    problems = []
    for seed in range(6):
        data = generate(GeneratorConfig(seed=seed, profiles=400 + 300 * seed, duplicate_rate=0.05))
        as_of = STAMPS[1 + seed % 4]
        raw = build_features(data.dataset, None, as_of)
        red = reduce_dimensionality(raw)
        for j, spec in enumerate(FEATURES):
            col, raw_col = red.values[:, j], raw.values[:, j]
            if spec.kind is P and len(np.unique(col)) > 6:
                problems.append((seed, spec.name, "distinct"))
            elif spec.kind is N and spec.revenue:
                cap = float(round_half_up(nearest_rank_quantile(raw_col, REVENUE_QUANTILE), 100))
                if np.any(col % 100 != 0) or np.any(col > cap):
                    problems.append((seed, spec.name, "revenue"))
            elif spec.kind is N and np.any(col > nearest_rank_quantile(raw_col, 0.95)):
                problems.append((seed, spec.name, "cap"))
    verdict(6, not problems, f"6 generated populations x {len(FEATURE_NAMES)} features, "
                             f"violations: {problems or 'none'}")


# 7 ------------------------------------------------------------------------------

def test_c7_transition_conservation(verdict):
    broken = []
    mismatches = 0
    for seed in (21, 22, 23):
        data = generate(GeneratorConfig(seed=seed, profiles=1500, duplicate_rate=0.1))
        merged = apply_golden(data.dataset, match_merge(data.dataset.profiles))
        table = reduce_dimensionality(build_features(merged, None, STAMPS[-1]))
        outcomes, v = run_trials(table, 3, 500, 12, seed)
        model = build_model(table, outcomes, v)
        snaps = [snapshot(merged, None, model, t) for t in STAMPS]
        for a, b in zip(snaps, snaps[1:]):
            tab = transitions(a, b)
            if not (tab.total_to == tab.total_from + tab.new_guests and len(b) == len(a) + tab.new_guests):
                broken.append((seed, b.timestamp.isoformat()))
        mismatches += int(np.sum(snaps[-1].labels != propagate_1nn(model, table).labels))
        ex = snaps[-1].label_of()
        mismatches += sum(ex[g] != lab for g, lab in zip(model.exemplar_ids, model.labels.tolist()))
    verdict(7, not broken and mismatches == 0,
            f"3 datasets x 4 transitions, conservation breaks: {broken or 'none'}, "
            f"training-timestamp mismatches: {mismatches}")


# 8 ------------------------------------------------------------------------------

def _pairs(groups):
    out = set()
    for members in groups:
        out.update(combinations(sorted(members), 2))
    return out


def test_c8_match_merge(verdict):
    f1s, idem, order = [], True, True
    for seed in range(5):
        data = generate(GeneratorConfig(seed=300 + seed, profiles=1000, duplicate_rate=0.1))
        profiles = data.dataset.profiles
        goldens = match_merge(profiles)
        part = {frozenset(g.member_profile_ids) for g in goldens}
        again = match_merge([g.to_profile() for g in goldens])
        idem &= len(again) == len(goldens)
        perm = np.random.default_rng(seed).permutation(len(profiles))
        shuffled = match_merge([profiles[i] for i in perm])
        order &= {frozenset(g.member_profile_ids) for g in shuffled} == part
        truth: dict = {}
        for t in data.truth:
            truth.setdefault(t.dup_group, set()).add(t.profile_id)
        want, got = _pairs(truth.values()), _pairs(part)
        tp = len(want & got)
        precision = tp / len(got) if got else 1.0
        recall = tp / len(want) if want else 1.0
        f1s.append(2 * precision * recall / (precision + recall) if tp else 0.0)
    ok = idem and order and min(f1s) >= 0.95
    verdict(8, ok, f"5 sets of 1000 profiles, idempotent={idem}, order-invariant={order}, "
                   f"pairwise F1 min {min(f1s):.3f}")


# 9 ------------------------------------------------------------------------------

def test_c9_determinism(verdict, tmp_path):
    data = generate(GeneratorConfig(seed=99, profiles=1500, duplicate_rate=0.1))
    data.write(tmp_path / "data")
    runs = []
    for i, threads in enumerate((1, 1, 4)):
        out = tmp_path / f"run{i}"
        run_pipeline(_config(tmp_path / "data", out, trials=6, sample=600, kmax=15, threads=threads))
        files = ["segments.csv", "flows.json"] + sorted(str(p.relative_to(out)) for p in (out / "elbow").glob("*.csv"))
        runs.append({f: (out / f).read_bytes() for f in files})
    same = runs[0] == runs[1] == runs[2]
    verdict(9, same, f"{len(runs[0])} files compared across 3 runs (threads 1, 1, 4): "
                     f"{'byte-identical' if same else 'DIFFER'}")
