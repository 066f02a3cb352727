"""
Segmenting a synthetic hotel
============================

Generate PMS-style data with four planted guest types, merge duplicate
profiles, build the 25 features, vote on k across sampled trials and label
every guest by its nearest exemplar.
"""

import datetime as dt
from collections import Counter

from segforge import generate, GeneratorConfig, match_merge
from segforge.features import build_features, reduce_dimensionality
from segforge.golden import apply_golden
from segforge.insights import characteristic_highlight, segment_profile
from segforge.selection import build_model, propagate_1nn, run_trials

data = generate(GeneratorConfig(seed=7, profiles=3000, duplicate_rate=0.1))
print(len(data.dataset.profiles), "profiles,", len(data.dataset.reservations), "reservations")

# duplicates collapse into golden profiles
goldens = match_merge(data.dataset.profiles)
merged = apply_golden(data.dataset, goldens)
print(len(goldens), "golden profiles")

table = reduce_dimensionality(build_features(merged, None, dt.date(2020, 1, 1)))
outcomes, verdict = run_trials(table, trial_count=8, sample_size=1000, k_max=15, seed=0)
print("votes:", dict(verdict.votes), "->", verdict.stability.value)

model = build_model(table, outcomes, verdict)
labels = propagate_1nn(model, table).labels

# how well do segments line up with the planted types?
arch = data.archetype_of()
for seg in range(1, model.k + 1):
    mix = Counter(arch[g] for g, lab in zip(table.golden_ids, labels) if lab == seg)
    print(f"segment {seg}: {sum(mix.values()):5d} guests, mostly {mix.most_common(1)[0][0]}")

# cells that stand out against the whole population
profiles = segment_profile(table, labels)
for h in characteristic_highlight(profiles)[:10]:
    print("  highlight:", h.segment, h.feature, h.category or "")
