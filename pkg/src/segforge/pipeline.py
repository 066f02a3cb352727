"""End-to-end orchestration: ingest -> merge -> features -> select-k -> classify
-> timeline -> report."""
from __future__ import annotations

import datetime as dt
import json
import logging
import platform
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__, errors
from .features import build_features, reduce_dimensionality, write_features, write_features_meta
from .golden import apply_golden, golden_map, match_merge, write_golden_map
from .insights import (HIGHLIGHT_FREQ_GAP, HIGHLIGHT_HIGH, HIGHLIGHT_LOW, characteristic_highlight,
                       eda_report, segment_profile, target_list, write_eda, write_segment_profile,
                       write_targets)
from .pms import Dataset, ingest, write_profiles
from .selection import (K_MAX, SAMPLE_SIZE, TRIAL_COUNT, build_model, propagate_1nn, run_trials,
                        write_elbow, write_segments)
from .timeline import FLOW_THRESHOLD, flow_export, snapshot, transitions, write_flows, write_transitions

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

DEFAULT_TIMESTAMPS = ("2016-01-01", "2017-01-01", "2018-01-01", "2019-01-01", "2020-01-01")


@dataclass
class PipelineConfig:
    profiles: Path | None = None
    reservations: Path | None = None
    folios: Path | None = None
    channel_map: dict[str, str] = field(default_factory=dict)
    txn_map: dict[str, str] = field(default_factory=dict)
    timestamps: tuple[dt.date, ...] = tuple(dt.date.fromisoformat(t) for t in DEFAULT_TIMESTAMPS)
    trials: int = TRIAL_COUNT
    sample: int = SAMPLE_SIZE
    kmax: int = K_MAX
    seed: int = 0
    threads: int = 1
    flow_threshold: float = FLOW_THRESHOLD
    outflow_after_years: float | None = None
    highlight_ratio: float = HIGHLIGHT_HIGH
    highlight_low: float = HIGHLIGHT_LOW
    highlight_gap: float = HIGHLIGHT_FREQ_GAP
    segment_names: dict[int, str] = field(default_factory=dict)
    target_segments: tuple[int, ...] = ()
    output: Path = Path("segforge-out")

    @property
    def as_of(self) -> dt.date:
        return self.timestamps[-1]

    def check(self, need_inputs: bool = True) -> None:
        if need_inputs:
            for name in ("profiles", "reservations", "folios"):
                p = getattr(self, name)
                if p is None:
                    raise errors.ConfigError(f"no path configured for {name}")
                if not Path(p).exists():
                    raise errors.ConfigError(f"{name} file not found: {p}")
            if not self.channel_map:
                raise errors.ConfigError("channel_map is empty")
            if not self.txn_map:
                raise errors.ConfigError("txn_map is empty")
        if not self.timestamps:
            raise errors.ConfigError("at least one timestamp is required")
        if any(a >= b for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise errors.ConfigError("timestamps must be strictly increasing")
        if self.trials < 1 or self.sample < 2 or self.kmax < 3 or self.threads < 1:
            raise errors.ConfigError("trials >= 1, sample >= 2, kmax >= 3 and threads >= 1 required")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "PipelineConfig":
        base_dir = Path(base_dir or ".")
        cfg = cls()
        inp = data.get("input", {})
        for name in ("profiles", "reservations", "folios"):
            if name in inp:
                setattr(cfg, name, _resolve(inp[name], base_dir))
        cfg.channel_map = dict(data.get("channel_map", {}))
        cfg.txn_map = dict(data.get("txn_map", {}))
        tl = data.get("timeline", {})
        if "timestamps" in tl:
            cfg.timestamps = parse_timestamps(tl["timestamps"])
        cfg.flow_threshold = float(tl.get("threshold", cfg.flow_threshold))
        if tl.get("outflow_after_years") is not None:
            cfg.outflow_after_years = float(tl["outflow_after_years"])
        sel = data.get("selection", {})
        cfg.trials = int(sel.get("trials", cfg.trials))
        cfg.sample = int(sel.get("sample", cfg.sample))
        cfg.kmax = int(sel.get("kmax", cfg.kmax))
        run = data.get("run", {})
        cfg.seed = int(run.get("seed", sel.get("seed", cfg.seed)))
        cfg.threads = int(run.get("threads", cfg.threads))
        if "output" in run:
            cfg.output = _resolve(run["output"], base_dir)
        ins = data.get("insights", {})
        cfg.highlight_ratio = float(ins.get("highlight_ratio", cfg.highlight_ratio))
        cfg.highlight_low = float(ins.get("highlight_low", cfg.highlight_low))
        cfg.highlight_gap = float(ins.get("highlight_gap", cfg.highlight_gap))
        cfg.target_segments = tuple(int(s) for s in ins.get("target_segments", ()))
        cfg.segment_names = {int(k): str(v) for k, v in data.get("segments", {}).items()}
        return cfg

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = str(v)
            elif f.name == "timestamps":
                v = [t.isoformat() for t in v]
            elif isinstance(v, tuple):
                v = list(v)
            elif f.name == "segment_names":
                v = {str(k): s for k, s in sorted(v.items())}
            out[f.name] = v
        return out


def _resolve(p, base_dir: Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base_dir / p


def parse_timestamps(raw) -> tuple[dt.date, ...]:
    if isinstance(raw, str):
        raw = [s for s in raw.split(",") if s.strip()]
    try:
        return tuple(t if isinstance(t, dt.date) else dt.date.fromisoformat(str(t).strip()) for t in raw)
    except ValueError as exc:
        raise errors.ConfigError(f"bad timestamp: {exc}") from None


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise errors.ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise errors.ConfigError(f"{path}: {exc}") from None
    return PipelineConfig.from_mapping(data, path.parent)


class _Outputs:
    """Tracks written files so a failed run can mark them ``.partial``."""

    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def mark_partial(self) -> None:
        for p in self.written:
            if p.exists():
                p.replace(p.with_name(p.name + ".partial"))


@dataclass
class RunResult:
    output: Path
    files: list[Path]
    verdict: Any
    model: Any
    timings: dict[str, float]


def load_dataset(cfg: PipelineConfig) -> Dataset:
    cfg.check()
    return ingest(cfg.profiles, cfg.reservations, cfg.folios, cfg.channel_map, cfg.txn_map)


def run_pipeline(cfg: PipelineConfig) -> RunResult:
    cfg.check()
    out = _Outputs(cfg.output)
    timings: dict[str, float] = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        log.info("%s done in %.2fs", name, now - clock)
        clock = now

    try:
        dataset = ingest(cfg.profiles, cfg.reservations, cfg.folios, cfg.channel_map, cfg.txn_map)
        lap("ingest")

        goldens = match_merge(dataset.profiles)
        gmap = golden_map(goldens)
        write_golden_map(gmap, out.path("golden_map.csv"))
        write_profiles([g.to_profile() for g in goldens], out.path("golden_profiles.csv"))
        merged = apply_golden(dataset, goldens)
        lap("merge")

        raw = build_features(merged, None, cfg.as_of)
        reduced = reduce_dimensionality(raw)
        write_features(reduced, out.path("features.csv"))
        write_features_meta(reduced, out.path("features_meta.json"))
        lap("features")

        outcomes, verdict = run_trials(reduced, cfg.trials, min(cfg.sample, len(reduced)), cfg.kmax,
                                       cfg.seed, cfg.threads)
        for o in outcomes:
            write_elbow(o.elbow, out.path(f"elbow/trial_{o.index + 1:02d}.csv"))
        trial_times = [o.seconds for o in outcomes]
        lap("select_k")
        if verdict.mode_k is None:
            raise errors.NoElbowFound("no trial produced an elbow; choose another feature set")

        model = build_model(reduced, outcomes, verdict, cfg.segment_names)
        model.save(out.path("model.json"))
        assignment = propagate_1nn(model, reduced)
        write_segments(reduced.golden_ids, assignment, out.path("segments.csv"))
        lap("classify")

        snaps = [snapshot(merged, None, model, t, cfg.outflow_after_years) for t in cfg.timestamps]
        tables = [transitions(a, b) for a, b in zip(snaps, snaps[1:])]
        names = {lab: model.name(lab) for lab in range(1, model.k + 1)}
        write_flows(flow_export(tables, cfg.flow_threshold, names), out.path("flows.json"))
        write_transitions(tables, out.path("transitions.csv"), names)
        lap("timeline")

        profiles = segment_profile(reduced, assignment.labels, names)
        highlights = characteristic_highlight(profiles, cfg.highlight_ratio, cfg.highlight_low, cfg.highlight_gap)
        write_segment_profile(profiles, out.path("segment_profile.csv"), highlights)
        write_eda(eda_report(merged), out.path("eda.json"))
        labels = dict(zip(reduced.golden_ids, assignment.labels.tolist()))
        chosen = cfg.target_segments or tuple(range(1, model.k + 1))
        write_targets(target_list(labels, merged.profiles, chosen), out.path("targets.csv"))
        lap("report")

        manifest = {
            "seed": cfg.seed,
            "config": cfg.to_json(),
            "versions": {"segforge": __version__, "numpy": np.__version__, "python": platform.python_version()},
            "profiles": len(dataset.profiles),
            "golden_profiles": len(goldens),
            "cohort": len(reduced),
            "selection": {"votes": {str(k): v for k, v in verdict.votes.items()}, "failed": verdict.failed,
                          "mode_k": verdict.mode_k, "stability": verdict.stability.value,
                          "base_seed": model.base_seed},
            "timings": {"stages": timings, "trial_seconds": trial_times,
                        "trial_mean": float(np.mean(trial_times)), "trial_std": float(np.std(trial_times))},
        }
        out.path("run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    except Exception:
        out.mark_partial()
        raise
    return RunResult(out.dir, out.written, verdict, model, timings)
