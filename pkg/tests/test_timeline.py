import dataclasses
import datetime as dt
import json

import numpy as np
import pytest

from segforge import errors
from segforge.cluster import feature_ranges
from segforge.features import build_features, reduce_dimensionality
from segforge.selection import SegmentModel
from segforge.timeline import (NEW_GUESTS, OUTFLOW, TransitionTable, explain, flow_export, snapshot,
                               transitions, write_flows)

from .builders import d, dataset, folio, profile, res

T1, T2 = d("2019-01-01"), d("2020-01-01")
STAMPS = tuple(d(f"{y}-01-01") for y in range(2016, 2021))


@pytest.fixture(scope="module")
def toy():
    """A stays once; B stays again after T1; C first arrives after T1."""
    ds = dataset(
        [profile("A"), profile("B"), profile("C")],
        [res("r1", "A", "2018-03-05", los=2), res("r2", "B", "2018-03-05", los=2),
         res("r3", "B", "2019-03-04", los=2), res("r4", "C", "2019-06-03", los=2)],
        [folio(f"f{i}", f"r{i}", "ROOM", 10000) for i in range(1, 5)],
    )
    table = reduce_dimensionality(build_features(ds, None, T2))
    model = SegmentModel(table.golden_ids, table.values.copy(), np.array([1, 2, 1]),
                         feature_ranges(table.values), 2, caps=dict(table.caps), as_of=T2, base_seed=0)
    return ds, model


def test_toy_transitions(toy):
    ds, model = toy
    s1, s2 = snapshot(ds, None, model, T1), snapshot(ds, None, model, T2)
    assert s1.label_of() == {"A": 1, "B": 1}
    assert s2.label_of() == {"A": 1, "B": 2, "C": 1}
    tab = transitions(s1, s2)
    assert tab.counts == {(1, 1): 1, (1, 2): 1, (NEW_GUESTS, 1): 1}
    assert tab.new_guests == 1 and tab.total_from == 2 and tab.total_to == 3


def test_repeat_flag_flips(toy):
    ds, model = toy
    s1, s2 = snapshot(ds, None, model, T1), snapshot(ds, None, model, T2)
    assert s1.raw_features.row(s1.raw_features.index()["B"])["RepeatBinary"] == 0
    assert s2.raw_features.row(s2.raw_features.index()["B"])["RepeatBinary"] == 1


def test_explain_movers(toy):
    ds, model = toy
    s1, s2 = snapshot(ds, None, model, T1), snapshot(ds, None, model, T2)
    ex = explain(1, 2, s1, s2)
    assert ex.count == 1
    assert ex.mean_delta["RepeatTotal"] == 1
    assert ex.mean_delta["ReservationsTotal"] == 1
    assert ex.revenue_change_pct["RevenueTotal"] == pytest.approx(100.0)
    with pytest.raises(errors.EmptyTransition):
        explain(2, 1, s1, s2)


def test_outflow(toy):
    ds, model = toy
    s1 = snapshot(ds, None, model, T1)
    s2 = snapshot(ds, None, model, T2, outflow_after_years=0.5)
    assert s2.label_of()["A"] == OUTFLOW
    flows = flow_export([transitions(s1, s2)], 0.0)
    assert any(n["segment"] == "Outflow" for n in flows["nodes"])


def test_snapshot_guards(toy):
    ds, model = toy
    with pytest.raises(errors.ModelError):
        snapshot(ds, None, model, T2 + dt.timedelta(days=1))
    with pytest.raises(errors.EmptyCohort):
        snapshot(ds, None, model, d("2017-01-01"))
    other = dataclasses.replace(model, base_seed=1)
    with pytest.raises(errors.ModelMismatch):
        transitions(snapshot(ds, None, model, T1), snapshot(ds, None, other, T2))
    with pytest.raises(ValueError):
        transitions(snapshot(ds, None, model, T2), snapshot(ds, None, model, T1))


def test_training_snapshot_reproduces_labels(trained):
    merged, table, model, assignment = trained
    snap = snapshot(merged, None, model, model.as_of)
    assert snap.golden_ids == table.golden_ids
    assert int(np.sum(snap.labels != assignment.labels)) == 0
    ex = dict(zip(model.exemplar_ids, model.labels.tolist()))
    got = snap.label_of()
    assert all(got[g] == lab for g, lab in ex.items())


def test_conservation_and_growth(trained):
    merged, _, model, _ = trained
    snaps = [snapshot(merged, None, model, t) for t in STAMPS]
    sizes = [len(s) for s in snaps]
    assert sizes == sorted(sizes)
    for a, b in zip(snaps, snaps[1:]):
        tab = transitions(a, b)
        assert tab.total_to == tab.total_from + tab.new_guests
        assert tab.total_from == len(a) and tab.total_to == len(b)
        assert tab.column_sums() == b.counts()


def _table(counts):
    return TransitionTable(T1, T2, counts)


def test_flow_threshold():
    tab = _table({(1, 1): 9999, (1, 2): 1})
    links = flow_export([tab], 0.0001)["links"]
    assert [(l["count"], l["displayed"]) for l in links] == [(9999, True), (1, True)]
    links = flow_export([tab], 0.001)["links"]
    assert [(l["count"], l["displayed"]) for l in links] == [(9999, True), (1, False)]
    assert all(l["displayed"] for l in flow_export([tab], 0.0)["links"])


def test_flow_nodes_and_names():
    tab = _table({(1, 1): 3, (1, 2): 1, (NEW_GUESTS, 2): 2})
    flows = flow_export([tab], 0.0, {1: "Loyal", 2: "Business"})
    nodes = {n["id"]: n["count"] for n in flows["nodes"]}
    assert nodes == {"2019-01-01|Loyal": 4, "2019-01-01|New Guests": 2,
                     "2020-01-01|Loyal": 3, "2020-01-01|Business": 3}
    assert sum(l["count"] for l in flows["links"]) == tab.total_to
    with pytest.raises(ValueError):
        flow_export([tab, tab])


def test_flows_written_deterministically(trained, tmp_path):
    merged, _, model, _ = trained
    snaps = [snapshot(merged, None, model, t) for t in STAMPS[-3:]]
    tabs = [transitions(a, b) for a, b in zip(snaps, snaps[1:])]
    write_flows(flow_export(tabs), tmp_path / "a.json")
    write_flows(flow_export(tabs), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert json.loads((tmp_path / "a.json").read_text())["threshold"] == 0.001
