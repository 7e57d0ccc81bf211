"""``floodlag`` command line: synth, exposure, design, fit, report.

Stages communicate through files in the run's output directory, so any
stage can be rerun on its own once its inputs exist.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from . import pipeline
from .design import check_control_contamination, frame_to_strata, strata_to_frame
from .errors import ConfigurationError, ConvergenceError, ValidationError
from .exposure import frame_to_exposures, summarize
from .synth import DgpConfig, generate_world

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE = 0, 2, 3

log = logging.getLogger("floodlag")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_csv(path, frame):
    frame.to_csv(path, index=False, lineterminator="\n")


def _output_dir(config):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path, stage):
    if not Path(path).exists():
        raise ConfigurationError(f"{path} not found; run `floodlag {stage}` first")
    return path


def cmd_synth(args):
    path = Path(args.config)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    dgp = dict(data.get("synth", data))
    if args.seed is not None:
        dgp["seed"] = args.seed
    try:
        config = DgpConfig.from_dict(dgp)
    except TypeError as exc:
        raise ConfigurationError(f"bad synth config: {exc}") from None
    out = Path(args.out) if args.out else path.parent / data.get("world_dir", "world")
    world = generate_world(config, n_threads=args.threads)
    run_config = world.write(out)
    log.info("wrote synthetic world (%d claims) to %s", len(world.claims), out)
    print(run_config)
    return EXIT_OK


def cmd_exposure(args, config):
    inputs = pipeline.load_inputs(config)
    stage = pipeline.run_exposure(inputs, config)
    out = _output_dir(config)
    _write_csv(out / "exposure.csv", stage.frame())
    s = stage.summary
    _write_json(out / "exposure_summary.json", {
        "n_events": s.n_events, "n_zip_days": s.n_zip_days, "n_zips": s.n_zips, "description": s.describe(),
        "rule": {"name": config.exposure_rule.name, "min_pct_area": config.exposure_rule.min_pct_area,
                 "min_area_km2": config.exposure_rule.min_area_km2},
        "causes": list(config.causes), "analysis_events": sorted(stage.analysis_event_ids),
    })
    print(s.describe())
    return EXIT_OK


def _load_exposure_stage(config, inputs):
    frame = pd.read_csv(_need(Path(config.output_dir) / "exposure.csv", "exposure"),
                        dtype={"zip_id": str, "event_id": str})
    rows = frame_to_exposures(frame)
    ids = frozenset(e.event_id for e in inputs.catalog if e.cause.value in config.causes)
    return pipeline.ExposureStage(rows, ids, summarize(rows, ids))


def cmd_design(args, config):
    inputs = pipeline.load_inputs(config)
    stage = _load_exposure_stage(config, inputs)
    design = pipeline.run_design(inputs, config, stage)
    out = _output_dir(config)
    _write_csv(out / "periods.csv", strata_to_frame(design.strata))
    audit = design.audit.to_dict()
    audit["n_strata"] = len(design.strata)
    audit["contaminated_controls"] = [list(x) for x in check_control_contamination(design.strata, design.history)]
    _write_json(out / "design_audit.json", audit)
    print(f"{len(design.strata)} strata, {len(design.audit.dropped)} dropped")
    return EXIT_OK


def cmd_fit(args, config):
    out = _output_dir(config)
    frame = pd.read_csv(_need(out / "periods.csv", "design"), dtype={"zip_id": str, "event_id": str})
    strata = frame_to_strata(frame)
    analyses = tuple(args.analysis) if args.analysis else config.analyses
    records, failures = pipeline.run_fit(strata, config, analyses, threads=args.threads)
    results = pipeline.results_frame(records, config.holm, config.alpha)
    _write_csv(out / "results.csv", results)
    _write_json(out / "results.json", pipeline.results_document(records))
    design_audit = None
    if (out / "design_audit.json").exists():
        design_audit = json.loads((out / "design_audit.json").read_text(encoding="utf-8"))
    _write_json(out / "fit_audit.json", pipeline.fit_audit(records, failures, design_audit))
    n_bad = sum(not r.result.estimable for r in records)
    print(f"{len(records)} fits, {n_bad} not estimable")
    return EXIT_OK


def cmd_report(args, config):
    out = _output_dir(config)
    results = pd.read_csv(_need(out / "results.csv", "fit"))
    report = pipeline.run_report(results)
    _write_csv(out / "report.csv", report)
    print(f"{len(report)} report rows")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="floodlag", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("synth", "generate a synthetic world"),
                        ("exposure", "classify flooded ZIP-days"),
                        ("design", "build matched strata"),
                        ("fit", "fit the lag models"),
                        ("report", "write figure-ready rows")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the synthetic seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--analysis", action="append", choices=pipeline.ANALYSES,
                       help="restrict to this analysis (repeatable)")
        if name == "synth":
            p.add_argument("--out", default=None, help="world directory")
    return parser


_COMMANDS = {"exposure": cmd_exposure, "design": cmd_design, "fit": cmd_fit, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.command == "synth":
            return cmd_synth(args)
        config = pipeline.RunConfig.load(args.config)
        if args.seed is not None:
            config.seed = args.seed
        return _COMMANDS[args.command](args, config)
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValidationError, FileNotFoundError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
