"""Command line harness: ``python -m dronebev <command> [options]``.

Commands
--------
generate   simulate a preset or config file into a dataset directory
run        calibrate, register, fuse, track and score a dataset per seed
sweep      repeat ``run`` over a list of camera dropout rates
dump       occupancy rasters and trajectory overlays for one run seed
validate   schema check of a dataset directory

Exit codes: 0 success, 2 usage, 3 schema error, 4 cold-start calibration
failure, 5 I/O failure, 1 any other pipeline error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import artifacts
from .dataset import generate_dataset, load_dataset, read_json, validate_dataset, write_text
from .errors import ColdStartFailure, DroneBevError, IoFailure, SchemaError
from .evalmetrics import aggregate_seeds
from .pipeline import PipelineParams, SequenceCache, gt_frames, run_sequence
from .simworld import ScenarioConfig, preset

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_SCHEMA, EXIT_COLD_START, EXIT_IO = 0, 1, 2, 3, 4, 5
DEFAULT_RATES = (0.0, 0.25, 0.5, 0.75)


class Log:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, msg: str):
        if not self.quiet:
            print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------- config


def load_config_file(path):
    """Split a config file into scenario keys and the ``pipeline`` section."""
    data = read_json(path)
    if not isinstance(data, dict):
        raise SchemaError("config must be a JSON object", path)
    data = dict(data)
    pipe = data.pop("pipeline", {}) or {}
    if not isinstance(pipe, dict):
        raise SchemaError("pipeline section must be an object", path)
    return data, pipe


def scenario_from_args(args) -> ScenarioConfig:
    base = preset(args.preset).to_dict() if args.preset else ScenarioConfig().to_dict()
    if args.config:
        scen, pipe = load_config_file(args.config)
        PipelineParams.from_dict(pipe, args.config)  # reject unknown keys here too
        base.update(scen)
    if args.seed is not None:
        base["rng_seed"] = args.seed
    if args.frames is not None:
        base["frame_count"] = args.frames
    return ScenarioConfig.from_dict(base, args.config)


def pipeline_from_args(args, **override) -> PipelineParams:
    pipe = {}
    if args.config:
        scen, pipe = load_config_file(args.config)
        ScenarioConfig.from_dict({**ScenarioConfig().to_dict(), **scen}, args.config)
    if args.radius is not None:
        pipe["radius"] = args.radius
    if args.dropout is not None:
        pipe["dropout"] = args.dropout
    if args.dropout_mode is not None:
        pipe["dropout_mode"] = args.dropout_mode
    pipe.update(override)
    return PipelineParams.from_dict(pipe, args.config)


def seed_list(args):
    if args.seeds < 1:
        raise ValueError("--seeds must be at least 1")
    start = 0 if args.seed is None else args.seed
    return list(range(start, start + args.seeds))


# ---------------------------------------------------------------- commands


def run_seeds(seq, params, seeds, out, log, cache=None, artifacts_per_seed=True):
    cache = cache or SequenceCache(seq)
    reports = []
    for s in seeds:
        res = run_sequence(seq, s, params, cache)
        if artifacts_per_seed:
            artifacts.write_seed_outputs(Path(out) / f"seed_{s}", seq, res)
        m = res.report
        log(f"seed {s}: MODA {m.MODA:.2f}  MOTA {m.MOTA:.2f}  IDF1 {m.IDF1:.2f}")
        reports.append(res.report)
    agg = aggregate_seeds(reports)
    meta = {"pipeline": params.to_dict()}
    artifacts.write_reports(out, seeds, reports, agg, meta)
    return agg


def cmd_generate(args, log):
    if not args.out:
        raise ValueError("generate needs --out")
    cfg = scenario_from_args(args)
    log(f"generating {cfg.name}: {cfg.pedestrian_count} pedestrians, {cfg.drone_count} drones, {cfg.frame_count} frames")
    generate_dataset(cfg, args.out)
    return EXIT_OK


def _run_config(args, params, seeds):
    return {"dataset": str(args.dataset), "pipeline": params.to_dict(), "seeds": seeds}


def cmd_run(args, log):
    params = pipeline_from_args(args)
    seeds = seed_list(args)
    out = Path(args.out or "run_out")
    seq = load_dataset(args.dataset)
    log(f"loaded {args.dataset}: {seq.frame_count} frames x {seq.drone_count} drones")
    artifacts.write_json(out / "run_config.json", _run_config(args, params, seeds))
    agg = run_seeds(seq, params, seeds, out, log)
    log(f"mean MODA {agg.MODA:.2f} +- {agg.std['MODA']:.2f}, MOTA {agg.MOTA:.2f} +- {agg.std['MOTA']:.2f}")
    return EXIT_OK


def parse_rates(text):
    try:
        rates = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ValueError(f"bad --rates value: {exc}") from exc
    if not rates or any(not 0.0 <= r < 1.0 for r in rates) or rates != sorted(rates):
        raise ValueError("--rates must be ascending values in [0, 1)")
    return rates


def cmd_sweep(args, log):
    rates = parse_rates(args.rates) if args.rates else list(DEFAULT_RATES)
    seeds = seed_list(args)
    out = Path(args.out or "sweep_out")
    seq = load_dataset(args.dataset)
    cache = SequenceCache(seq)
    aggs = []
    for rate in rates:
        params = pipeline_from_args(args, dropout=rate)
        log(f"rate {rate:g}")
        sub = out / f"rate_{rate:g}"
        artifacts.write_json(sub / "run_config.json", _run_config(args, params, seeds))
        aggs.append(run_seeds(seq, params, seeds, sub, log, cache, artifacts_per_seed=args.artifacts))
    rows = artifacts.sweep_rows(rates, aggs)
    write_text(out / "sweep.csv", artifacts.csv_text(artifacts.sweep_columns(), rows))
    artifacts.write_json(out / "sweep.json", {"rates": rates, "seeds": seeds, "rows": rows})
    for r in rows:
        log(f"rate {r['rate']:g}: MODA {r['MODA_mean']:.2f} +- {r['MODA_std']:.2f}")
    return EXIT_OK


def cmd_dump(args, log):
    run_dir = Path(args.run)
    rc = read_json(run_dir / "run_config.json")
    params = PipelineParams.from_dict(rc["pipeline"], run_dir / "run_config.json")
    seed = rc["seeds"][0] if args.seed is None else args.seed
    seq = load_dataset(args.dataset or rc["dataset"])
    out = Path(args.out or run_dir / "dump")
    pred_path = run_dir / f"seed_{seed}" / "tracks" / "pred.jsonl"
    if not pred_path.exists():
        raise IoFailure(f"missing run output {pred_path}")
    pred = artifacts.read_tracks(pred_path)
    gt = gt_frames(seq.positions)
    log(f"recomputing occupancy maps for seed {seed}")
    res = run_sequence(seq, seed, params, keep_maps=True)
    for f, occ in enumerate(res.maps):
        write_text(out / "occ" / f"frame_{f}.pgm", artifacts.pgm_text(artifacts.occupancy_raster(occ.scores, args.scale)))
    img, maxval, legend = artifacts.trajectory_image(gt, pred, seq.config.arena_half_extent)
    write_text(out / "trajectories.pgm", artifacts.pgm_text(img, maxval))
    lines = ["# panel id gray_level (left panel: gt, right panel: pred)\n"]
    lines += [f"{p} {i} {lv}\n" for p, i, lv in legend]
    write_text(out / "trajectories_legend.txt", "".join(lines))
    n_gt = sum(1 for p, _, _ in legend if p == "gt")
    log(f"wrote {len(res.maps)} occupancy rasters and trajectories for {n_gt} gt ids")
    return EXIT_OK


def cmd_validate(args, log):
    summary = validate_dataset(args.dataset)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="scenario seed (generate) or first pipeline seed")
    common.add_argument("--seeds", type=int, default=1, help="number of consecutive pipeline seeds")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--config", default=None, help="JSON config: scenario keys plus a 'pipeline' section")
    common.add_argument("--radius", type=float, default=None, help="ground match radius in meters")
    common.add_argument("--dropout", type=float, default=None, help="camera dropout rate in [0, 1)")
    common.add_argument("--dropout-mode", choices=("per_frame", "per_sequence"), default=None)
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="dronebev", description="Multi-drone BEV detection and tracking harness.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="simulate a dataset")
    g.add_argument("--preset", choices=("simple", "complex"), default=None)
    g.add_argument("--frames", type=int, default=None, help="override frame_count")

    r = sub.add_parser("run", parents=[common], help="run the pipeline over seeds")
    r.add_argument("--dataset", required=True)

    s = sub.add_parser("sweep", parents=[common], help="dropout sweep")
    s.add_argument("--dataset", required=True)
    s.add_argument("--rates", default=None, help="comma separated, ascending (default 0,0.25,0.5,0.75)")
    s.add_argument("--artifacts", action="store_true", help="also write per-seed outputs for every rate")

    d = sub.add_parser("dump", parents=[common], help="rasters for a finished run")
    d.add_argument("--run", required=True, help="run output directory")
    d.add_argument("--dataset", default=None, help="defaults to the dataset recorded by the run")
    d.add_argument("--scale", type=int, default=4, help="raster pixels per grid cell")

    v = sub.add_parser("validate", parents=[common], help="schema check only")
    v.add_argument("--dataset", required=True)
    return p


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep, "dump": cmd_dump, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = Log(args.quiet)
    try:
        return COMMANDS[args.command](args, log)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ColdStartFailure as exc:
        print(f"cold start failure: {exc}", file=sys.stderr)
        return EXIT_COLD_START
    except IoFailure as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except DroneBevError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
