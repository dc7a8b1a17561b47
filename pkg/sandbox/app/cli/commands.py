"""
Command handlers for the sandbox CLI
"""
from pathlib import Path

import pandas as pd

from config import RunConfig, load_run_config, settings_summary
from core.world import describe_world, sample_world, world_to_dict
from sandbox_types.errors import DimensionError
from services.anonymizer_service import AnonymizerService
from services.metrics_service import tradeoff_table
from services.sweep_service import ablate, parse_grid, sweep
from utils.helpers import format_metrics_summary, log_debug, log_info
from utils.persistence import (
    anonymization_frame,
    frame_points,
    metrics_report,
    read_points_csv,
    samples_frame,
    sweep_frame,
    tradeoff_frame,
    trajectory_frame,
    write_csv,
    write_json,
)
from utils.plotting import plot_sweep_panels, plot_tradeoff


def _load(args) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None:
        config.run.seed = args.seed
    return config


def _output_dir(args, config: RunConfig) -> Path:
    out = Path(args.out or config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _guidance(service: AnonymizerService, args):
    changes = {}
    if getattr(args, "lambda_cfg", None) is not None:
        changes["lambda_cfg"] = args.lambda_cfg
    if getattr(args, "lambda_ipa", None) is not None:
        changes["lambda_ipa"] = args.lambda_ipa
    if getattr(args, "solver", None) is not None:
        changes["solver"] = args.solver
    return service.guidance.with_overrides(**changes) if changes else service.guidance


def cmd_world(args):
    """Write world.json and the labeled sample CSV"""
    config = _load(args)
    out = _output_dir(args, config)
    world = config.build_world()
    seed = args.seed if args.seed is not None else config.world.seed
    samples = sample_world(world, config.world.samples, seed)

    world_path = write_json(world_to_dict(world), out / "world.json")
    samples_path = write_csv(samples_frame(samples.points, samples.identities, samples.attributes),
                             out / "samples.csv")
    log_info(f"World: {world.size} components ({len(world.identities)} identities x "
             f"{len(world.attributes)} attributes), {len(samples)} samples")
    if world.held_out:
        log_info(f"Held out of the conditioning vocabulary: identities {list(world.held_out)} "
                 f"({len(world.vocabulary)} conditionable pairs remain)")
    for row in describe_world(world):
        log_debug(f"component {row['component']}: identity={row['identity']} "
                  f"attribute={row['attribute']} weight={row['weight']:.4f} "
                  f"in_vocabulary={row['in_vocabulary']}")
    print(f"{world_path}\n{samples_path}")


def cmd_anonymize(args):
    """Anonymize every row of an input CSV"""
    config = _load(args)
    out = _output_dir(args, config)
    service = AnonymizerService(config)
    g = _guidance(service, args)

    inputs = read_points_csv(args.input, service.world.dim)
    points = frame_points(inputs, service.world.dim)
    keep_attr = not args.drop_attr
    result = service.anonymize_points(points, keep_attr=keep_attr, new_attr=args.set_attr,
                                      seed=config.run.seed, guidance=g)

    write_csv(anonymization_frame(inputs, result), out / "anonymized.csv")
    report = metrics_report(result.metrics, extras={
        "attribute_mode": "swap" if args.set_attr is not None else ("keep" if keep_attr else "drop"),
        "new_attr": args.set_attr,
        "settings": settings_summary(config),
    })
    write_json(report, out / "report.json")

    if args.trajectory_dir:
        trajectory_dir = Path(args.trajectory_dir)
        for index in range(points.shape[0]):
            write_csv(trajectory_frame(result.trajectory_for(index)), trajectory_dir / f"trajectory_{index:05d}.csv")
        log_info(f"Wrote {points.shape[0]} trajectories to {trajectory_dir}")

    print(format_metrics_summary({key: report[key] for key in (
        "reid_rate", "attr_accuracy", "quality", "mean_identity_distance", "max_reconstruction_error")}))


def cmd_sweep(args):
    """Grid sweep with CSV tables and SVG plots"""
    config = _load(args)
    out = _output_dir(args, config)
    service = AnonymizerService(config)
    grid = parse_grid(args.grid, base=service.guidance)
    samples = args.samples or config.run.samples

    records = sweep(grid, service.world, service.schedule, samples, config.run.seed,
                    threads=args.threads, progress=True)
    sweep_path = write_csv(sweep_frame(records), out / "sweep.csv")
    write_csv(tradeoff_frame(tradeoff_table(records)), out / "tradeoff.csv")
    plot_sweep_panels(sweep_path, out / "sweep_panels.svg")
    plot_tradeoff(sweep_path, out / "tradeoff.svg")
    log_info(f"Sweep of {len(records)} cells written to {out}")
    print(pd.read_csv(sweep_path).to_string(index=False))


def cmd_ablate(args):
    """DDPM vs DDIM inversion ablation"""
    config = _load(args)
    out = _output_dir(args, config)
    service = AnonymizerService(config)
    g = _guidance(service, args)
    samples = args.samples or config.run.samples

    rows = ablate(service.world, service.schedule, g, samples, config.run.seed)
    write_csv(pd.DataFrame(rows), out / "ablation.csv")
    write_json({
        "arms": {row["arm"]: row for row in rows},
        "config": g.to_dict(),
        "n": samples,
        "seed": config.run.seed,
    }, out / "ablation.json")
    print(pd.DataFrame(rows).to_string(index=False))


def cmd_recover(args):
    """Recovery attack on an anonymized CSV"""
    config = _load(args)
    out = _output_dir(args, config)
    service = AnonymizerService(config)
    g = _guidance(service, args)

    frame = read_points_csv(args.input, service.world.dim)
    originals = frame_points(frame, service.world.dim)
    try:
        anonymized = frame_points(frame, service.world.dim, prefix="out_x")
    except KeyError:
        raise DimensionError(f"{args.input}: missing out_x_* columns (expected an anonymize output)")

    report = service.recover(anonymized, originals, seed=config.run.seed, guidance=g)
    payload = report.to_dict()
    payload.update({"n": int(originals.shape[0]), "seed": config.run.seed, "config": g.to_dict()})
    write_json(payload, out / "recovery.json")
    print(format_metrics_summary(report.to_dict()))

