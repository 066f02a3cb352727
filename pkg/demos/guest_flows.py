"""
Guests moving between segments
==============================

Train once at the last timestamp, then label the cohort at every earlier
year with the same model. Transition counts feed a Sankey plot.
"""

import datetime as dt

from segforge import generate, GeneratorConfig, match_merge
from segforge.features import build_features, reduce_dimensionality
from segforge.golden import apply_golden
from segforge.selection import build_model, run_trials
from segforge.timeline import explain, flow_export, snapshot, transitions

data = generate(GeneratorConfig(seed=3, profiles=2000))
merged = apply_golden(data.dataset, match_merge(data.dataset.profiles))
stamps = [dt.date(y, 1, 1) for y in range(2016, 2021)]

table = reduce_dimensionality(build_features(merged, None, stamps[-1]))
outcomes, verdict = run_trials(table, trial_count=5, sample_size=800, k_max=12, seed=0)
model = build_model(table, outcomes, verdict)

snaps = [snapshot(merged, None, model, t) for t in stamps]
tables = [transitions(a, b) for a, b in zip(snaps, snaps[1:])]
for s in snaps:
    print(s.timestamp, s.counts())

# cohort(t+1) = cohort(t) + new guests
for t in tables:
    print(t.to_timestamp, t.total_from, "+", t.new_guests, "=", t.total_to)

# the biggest move between two different segments in the last year
last = tables[-1]
moves = [(c, a, b) for (a, b), c in last.counts.items() if a != b and a != "New Guests"]
if moves:
    c, a, b = max(moves)
    ex = explain(a, b, snaps[-2], snaps[-1])
    print(f"{c} guests moved {a} -> {b}; mean RepeatTotal change {ex.mean_delta['RepeatTotal']:+.2f}")

flows = flow_export(tables)
print(len(flows["nodes"]), "nodes,", sum(l["displayed"] for l in flows["links"]), "displayed links")
