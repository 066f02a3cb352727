import datetime as dt

import pytest

from segforge.features import build_features, reduce_dimensionality
from segforge.golden import apply_golden, match_merge
from segforge.selection import build_model, propagate_1nn, run_trials
from segforge.synth import GeneratorConfig, generate


@pytest.fixture(scope="session")
def synth_small():
    return generate(GeneratorConfig(seed=11, profiles=1200, duplicate_rate=0.1))


@pytest.fixture(scope="session")
def trained(synth_small):
    """Merged dataset, reduced features, model and labels as of 2020-01-01."""
    merged = apply_golden(synth_small.dataset, match_merge(synth_small.dataset.profiles))
    table = reduce_dimensionality(build_features(merged, None, dt.date(2020, 1, 1)))
    outcomes, verdict = run_trials(table, trial_count=3, sample_size=400, k_max=12, seed=0)
    model = build_model(table, outcomes, verdict)
    return merged, table, model, propagate_1nn(model, table)
