"""``segforge`` command line.

Exit codes: 0 ok, 1 unexpected library error, 2 configuration error,
3 data error, 4 model error.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, errors
from .features import read_features, build_features, reduce_dimensionality, write_features, write_features_meta
from .golden import apply_golden, golden_map, goldens_from_map, match_merge, read_golden_map, write_golden_map
from .insights import (characteristic_highlight, eda_report, segment_profile, target_list, write_eda,
                       write_segment_profile, write_targets)
from .pipeline import PipelineConfig, load_config, load_dataset, parse_timestamps, run_pipeline
from .pms import write_profiles
from .selection import (SegmentModel, build_model, propagate_1nn, read_segments, run_trials, write_elbow,
                        write_segments)
from .synth import GeneratorConfig, config_toml, generate
from .timeline import flow_export, snapshot, transitions, write_flows, write_transitions

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("segforge")

CONFIG_ENV = "SEGFORGE_CONFIG"


def _config(args) -> PipelineConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    cfg = load_config(path) if path else PipelineConfig()
    overrides = {}
    for attr in ("seed", "threads", "trials", "sample", "kmax"):
        v = getattr(args, attr, None)
        if v is not None:
            overrides[attr] = v
    if getattr(args, "threshold", None) is not None:
        overrides["flow_threshold"] = args.threshold
    if getattr(args, "outflow_after", None) is not None:
        overrides["outflow_after_years"] = args.outflow_after
    if getattr(args, "timestamps", None):
        overrides["timestamps"] = parse_timestamps(args.timestamps)
    if getattr(args, "targets", None):
        overrides["target_segments"] = tuple(int(s) for s in args.targets.split(","))
    if args.out is not None:
        overrides["output"] = Path(args.out)
    return dataclasses.replace(cfg, **overrides)


def _out(cfg: PipelineConfig) -> Path:
    cfg.output.mkdir(parents=True, exist_ok=True)
    return cfg.output


def _merged(cfg: PipelineConfig):
    """Dataset with golden ids applied; reuses ``golden_map.csv`` when present."""
    dataset = load_dataset(cfg)
    gm_path = cfg.output / "golden_map.csv"
    if gm_path.exists():
        goldens = goldens_from_map(dataset, read_golden_map(gm_path))
    else:
        goldens = match_merge(dataset.profiles)
    return apply_golden(dataset, goldens)


def _features(cfg: PipelineConfig, args):
    path = Path(getattr(args, "features", None) or cfg.output / "features.csv")
    meta = path.with_name(path.stem + "_meta.json")
    if not path.exists():
        raise errors.ConfigError(f"features file not found: {path}; run 'segforge features' first")
    return read_features(path, meta if meta.exists() else None)


def _model(cfg: PipelineConfig, args) -> SegmentModel:
    path = Path(getattr(args, "model", None) or cfg.output / "model.json")
    if not path.exists():
        raise errors.ConfigError(f"model file not found: {path}; run 'segforge select-k' first")
    return SegmentModel.load(path)


def cmd_ingest(args) -> int:
    dataset = load_dataset(_config(args))
    print(json.dumps({"profiles": len(dataset.profiles), "reservations": len(dataset.reservations),
                      "folios": len(dataset.folios)}))
    return 0


def cmd_merge(args) -> int:
    cfg = _config(args)
    dataset = load_dataset(cfg)
    goldens = match_merge(dataset.profiles)
    out = _out(cfg)
    write_golden_map(golden_map(goldens), out / "golden_map.csv")
    write_profiles([g.to_profile() for g in goldens], out / "golden_profiles.csv")
    print(json.dumps({"profiles": len(dataset.profiles), "golden_profiles": len(goldens)}))
    return 0


def cmd_features(args) -> int:
    cfg = _config(args)
    as_of = dt.date.fromisoformat(args.as_of) if args.as_of else cfg.as_of
    merged = _merged(cfg)
    reduced = reduce_dimensionality(build_features(merged, None, as_of))
    out = _out(cfg)
    write_features(reduced, out / "features.csv")
    write_features_meta(reduced, out / "features_meta.json")
    print(json.dumps({"as_of": as_of.isoformat(), "cohort": len(reduced)}))
    return 0


def cmd_select_k(args) -> int:
    cfg = _config(args)
    cfg.check(need_inputs=False)
    table = _features(cfg, args)
    outcomes, verdict = run_trials(table, cfg.trials, min(cfg.sample, len(table)), cfg.kmax, cfg.seed, cfg.threads)
    out = _out(cfg)
    (out / "elbow").mkdir(exist_ok=True)
    for o in outcomes:
        write_elbow(o.elbow, out / "elbow" / f"trial_{o.index + 1:02d}.csv")
    summary = {"votes": {str(k): v for k, v in verdict.votes.items()}, "failed": verdict.failed,
               "mode_k": verdict.mode_k, "stability": verdict.stability.value}
    if verdict.mode_k is None:
        raise errors.NoElbowFound("no trial produced an elbow; choose another feature set")
    model = build_model(table, outcomes, verdict, cfg.segment_names)
    model.save(out / "model.json")
    (out / "selection.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_classify(args) -> int:
    cfg = _config(args)
    table = _features(cfg, args)
    assignment = propagate_1nn(_model(cfg, args), table)
    write_segments(table.golden_ids, assignment, _out(cfg) / "segments.csv")
    print(json.dumps({str(k): int((assignment.labels == k).sum()) for k in range(1, assignment.k + 1)}))
    return 0


def cmd_timeline(args) -> int:
    cfg = _config(args)
    cfg.check()
    model = _model(cfg, args)
    merged = _merged(cfg)
    snaps = [snapshot(merged, None, model, t, cfg.outflow_after_years) for t in cfg.timestamps]
    tables = [transitions(a, b) for a, b in zip(snaps, snaps[1:])]
    names = {lab: model.name(lab) for lab in range(1, model.k + 1)}
    out = _out(cfg)
    write_flows(flow_export(tables, cfg.flow_threshold, names), out / "flows.json")
    write_transitions(tables, out / "transitions.csv", names)
    print(json.dumps({t.isoformat(): {str(k): v for k, v in s.counts().items()}
                      for t, s in zip(cfg.timestamps, snaps)}, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    cfg = _config(args)
    table = _features(cfg, args)
    model = _model(cfg, args)
    seg_path = cfg.output / "segments.csv"
    if not seg_path.exists():
        raise errors.ConfigError(f"segments file not found: {seg_path}; run 'segforge classify' first")
    labels = read_segments(seg_path)
    missing = [g for g in table.golden_ids if g not in labels]
    if missing:
        raise errors.ModelMismatch(f"{len(missing)} feature rows have no segment, e.g. {missing[0]}")
    names = {lab: model.name(lab) for lab in range(1, model.k + 1)}
    profiles = segment_profile(table, [labels[g] for g in table.golden_ids], names)
    out = _out(cfg)
    write_segment_profile(profiles, out / "segment_profile.csv",
                          characteristic_highlight(profiles, cfg.highlight_ratio, cfg.highlight_low,
                                                   cfg.highlight_gap))
    merged = _merged(cfg)
    write_eda(eda_report(merged), out / "eda.json")
    chosen = cfg.target_segments or tuple(range(1, model.k + 1))
    targets = target_list(labels, merged.profiles, chosen)
    write_targets(targets, out / "targets.csv")
    print(json.dumps({"targets": targets.count, "share": targets.share}))
    return 0


def cmd_synth(args) -> int:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise errors.ConfigError(f"generator config not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise errors.ConfigError(f"{path}: {exc}") from None
    gen = GeneratorConfig.from_mapping(data)
    overrides = {k: v for k, v in (("seed", args.seed), ("profiles", args.profiles),
                                   ("duplicate_rate", args.duplicate_rate)) if v is not None}
    gen = dataclasses.replace(gen, **overrides)
    gen.check()
    synth = generate(gen)
    out = Path(args.out if args.out is not None else "synth-data")
    out.mkdir(parents=True, exist_ok=True)
    synth.write(out)
    (out / "segforge.toml").write_text(config_toml("."), encoding="utf-8")
    print(json.dumps({"profiles": len(synth.dataset.profiles), "reservations": len(synth.dataset.reservations),
                      "folios": len(synth.dataset.folios), "directory": str(out)}))
    return 0


def cmd_run(args) -> int:
    result = run_pipeline(_config(args))
    v = result.verdict
    print(json.dumps({"output": str(result.output), "k": result.model.k, "stability": v.stability.value,
                      "votes": {str(k): c for k, c in v.votes.items()}}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segforge", description="Guest segmentation for hotel PMS data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"pipeline TOML (default: ${CONFIG_ENV})")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    add("ingest", cmd_ingest, "validate the three PMS exports")
    add("merge-profiles", cmd_merge, "collapse duplicate profiles into golden records")
    sp = add("features", cmd_features, "build the reduced feature table")
    sp.add_argument("--as-of", help="cut-off date (default: last timestamp)")
    sp = add("select-k", cmd_select_k, "repeated Ward trials and elbow vote")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--sample", type=int)
    sp.add_argument("--kmax", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--features")
    sp = add("classify", cmd_classify, "assign every profile to its nearest exemplar")
    sp.add_argument("--model")
    sp.add_argument("--features")
    sp = add("timeline", cmd_timeline, "segment flows between timestamps")
    sp.add_argument("--timestamps", help="comma-separated ISO dates")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--outflow-after", type=float, dest="outflow_after", help="years of inactivity")
    sp.add_argument("--model")
    sp = add("report", cmd_report, "EDA, segment profiles and target lists")
    sp.add_argument("--model")
    sp.add_argument("--features")
    sp.add_argument("--targets", help="comma-separated segment labels")
    sp = add("synth", cmd_synth, "generate a synthetic PMS dataset")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--profiles", type=int)
    sp.add_argument("--duplicate-rate", type=float, dest="duplicate_rate")
    sp = add("run", cmd_run, "full pipeline")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--sample", type=int)
    sp.add_argument("--kmax", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--timestamps")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--outflow-after", type=float, dest="outflow_after")
    sp.add_argument("--targets")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except errors.SegforgeError as exc:
        print(f"segforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
