"""Command-line surface binding the toolkit into deterministic pipelines.

Every command is a pure function of (inputs, flags, seed): reruns write
byte-identical outputs. Exit codes: 0 success, 1 domain error, 2 format
error. Each output gets a `.meta.json` sidecar recording tool version,
config hash, and seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .depthnorm import BatchDepth, box_depth, box_region_mean, normalize_image
from .dct import (
    CoeffBounds,
    FitConfig,
    ObjectiveVariant,
    OptimizerConfig,
    apply_lut,
    build_lut,
    jsonl_logger,
)
from .errors import DomainError, FormatError
from .hetsim import SimConfig, Weighting, bias_experiment, binned_variance, sample_losses
from .io import (
    read_depth_map,
    read_detections,
    read_groundtruth,
    read_lookup_table,
    write_depth_map,
    write_detections,
    write_lookup_table,
    write_weight_records,
)
from .matching import (
    MatchConfig,
    coco_map,
    count_report,
    pareto_sweep,
    write_grid_csv,
    write_histogram_csv,
    write_report_json,
)
from .supervise import (
    StratConfig,
    WeightingMode,
    WeightingTag,
    ablation_weight,
    build_strat_masks,
    dlw_weight,
)
from .types import DepthMap


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_levels(text: str) -> list[tuple[int, int]]:
    levels = []
    for part in text.split(","):
        h, _, w = part.strip().partition("x")
        levels.append((int(h), int(w)))
    return levels


def _load_depth_dir(path: str) -> dict[str, DepthMap]:
    directory = Path(path)
    if not directory.is_dir():
        raise DomainError(f"depth directory {path!r} does not exist")
    maps = {p.stem: read_depth_map(p) for p in sorted(directory.glob("*.dpm"))}
    if not maps:
        raise DomainError(f"no .dpm files under {path!r}")
    return maps


def _config_hash(args: argparse.Namespace) -> str:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _write_meta(args: argparse.Namespace, out: str) -> None:
    meta = {
        "tool": "depthprior",
        "version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config_hash": _config_hash(args),
    }
    out_path = Path(out)
    target = out_path / "run.meta.json" if out_path.is_dir() else Path(str(out_path) + ".meta.json")
    target.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def _read_batches(manifest: str | None, image_ids: list[str]) -> list[list[str]]:
    if manifest is None:
        return [sorted(image_ids)]
    data = json.loads(Path(manifest).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not all(isinstance(b, list) for b in data):
        raise FormatError("batch manifest must be a JSON list of image-id lists")
    batches = [[str(i) for i in batch] for batch in data]
    flat = [i for batch in batches for i in batch]
    if len(flat) != len(set(flat)):
        dupes = sorted({i for i in flat if flat.count(i) > 1})
        raise DomainError(f"images assigned to more than one batch: {dupes}")
    return batches


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_dlw(args: argparse.Namespace) -> int:
    maps = _load_depth_dir(args.depth_dir)
    gts = read_groundtruth(args.groundtruth)
    mode = WeightingMode(tag=args.mode, alpha=args.alpha)
    batches = _read_batches(args.batch_manifest, list(maps))

    gt_by_image: dict[str, list] = {}
    for gt in gts:
        gt_by_image.setdefault(gt.image_id, []).append(gt)
    covered = {image_id for batch in batches for image_id in batch}
    orphans = sorted(set(gt_by_image) - covered)
    if orphans:
        raise DomainError(f"ground truth references images outside every batch: {orphans}")

    records = []
    for batch_ids in batches:
        missing = [i for i in batch_ids if i not in maps]
        if missing:
            raise DomainError(f"batch references images without depth maps: {missing}")
        batch = BatchDepth.from_maps([maps[i] for i in batch_ids])
        entries = []  # (image, object_index, depth_norm, raw_mean)
        for image_id in batch_ids:
            for index, gt in enumerate(gt_by_image.get(image_id, [])):
                depth_norm = box_depth(
                    maps[image_id], gt.box, d_min=batch.d_min_batch, d_max=batch.d_max_batch)
                entries.append((image_id, index, depth_norm, box_region_mean(maps[image_id], gt.box)))
        if not entries:
            continue
        if mode.tag == WeightingTag.BW:
            batch_weight = dlw_weight(sum(e[2] for e in entries) / len(entries), mode.alpha)
            weights = [batch_weight] * len(entries)
        elif mode.tag == WeightingTag.IW:
            per_image: dict[str, list[float]] = {}
            for image_id, _, depth_norm, _ in entries:
                per_image.setdefault(image_id, []).append(depth_norm)
            image_weight = {
                img: dlw_weight(sum(ds) / len(ds), mode.alpha) for img, ds in per_image.items()}
            weights = [image_weight[e[0]] for e in entries]
        elif mode.tag == WeightingTag.RAW_D:
            weights = [e[3] for e in entries]
        else:
            weights = [ablation_weight(e[2], mode) for e in entries]
        records.extend(
            {"image": img, "object_index": idx, "depth_norm": depth_norm, "weight": w}
            for (img, idx, depth_norm, _), w in zip(entries, weights)
        )
    write_weight_records(records, args.out)
    _write_meta(args, args.out)
    return 0


def cmd_dls(args: argparse.Namespace) -> int:
    maps = _load_depth_dir(args.depth_dir)
    cuts = _parse_floats(args.cuts) if args.cuts else None
    lambdas = _parse_floats(args.lambdas)
    cfg = StratConfig(beta=args.beta, mode=args.strat_mode, lambdas=lambdas, cuts=cuts)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_id in sorted(maps):
        depth_map = maps[image_id]
        levels = _parse_levels(args.levels) if args.levels else [(depth_map.height, depth_map.width)]
        masks = build_strat_masks(normalize_image(depth_map), cfg, levels)
        for level_idx, level_masks in enumerate(masks.levels, start=1):
            for stratum_idx in range(masks.num_strata):
                name = f"{image_id}.L{level_idx}.K{stratum_idx + 1}.dpm"
                write_depth_map(level_masks[stratum_idx].astype("f4"), out_dir / name)
    _write_meta(args, args.out)
    return 0


def _fit_config(args: argparse.Namespace) -> FitConfig:
    return FitConfig(
        taus=_parse_floats(args.taus),
        num_coeffs=args.knots,
        domain=(args.domain_lo, args.domain_hi),
        epsilon=args.epsilon,
        gamma=args.gamma,
        rho=args.rho,
        objective_variant=ObjectiveVariant(args.objective),
        optimizer=OptimizerConfig(
            seed=args.seed,
            population=args.population,
            generations=args.generations,
            stagnation=args.stagnation,
        ),
        coeff_bounds_mode=CoeffBounds(args.coeff_bounds),
    )


def cmd_dct_fit(args: argparse.Namespace) -> int:
    maps = _load_depth_dir(args.depth_dir)
    dets = read_detections(args.detections)
    gts = read_groundtruth(args.groundtruth)
    cfg = _fit_config(args)
    if args.fit_log:
        with open(args.fit_log, "w", encoding="utf-8") as fh:
            lut = build_lut(dets, gts, maps, cfg, log=jsonl_logger(fh))
    else:
        lut = build_lut(dets, gts, maps, cfg)
    write_lookup_table(lut, args.out)
    _write_meta(args, args.out)
    return 0


def cmd_dct_apply(args: argparse.Namespace) -> int:
    dets = read_detections(args.detections)
    if args.lut:
        if not args.depth_dir:
            raise DomainError("--depth-dir is required when filtering with --lut")
        maps = _load_depth_dir(args.depth_dir)
        lut = read_lookup_table(args.lut)
        filtered = apply_lut(dets, maps, args.tau0, lut)
    else:
        filtered = [d for d in dets if d.score >= args.tau0]
    write_detections(filtered, args.out)
    _write_meta(args, args.out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    dets = read_detections(args.detections)
    gts = read_groundtruth(args.groundtruth)
    metrics = coco_map(dets, gts)
    payload = {
        "metrics": metrics,
        "provenance": {
            "tool": "depthprior",
            "version": __version__,
            "seed": args.seed,
            "config_hash": _config_hash(args),
        },
    }
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    _write_meta(args, args.out)
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    maps = _load_depth_dir(args.depth_dir)
    dets = read_detections(args.detections)
    gts = read_groundtruth(args.groundtruth)
    cfg = MatchConfig()
    lut = read_lookup_table(args.lut) if args.lut else None
    source = lut.curve_for(args.tau0) if lut else args.tau0
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = count_report(dets, gts, maps, cfg, source)
    provenance = {
        "tool": "depthprior",
        "version": __version__,
        "seed": args.seed,
        "config_hash": _config_hash(args),
    }
    write_report_json(report, out_dir / "report.json", extra={"provenance": provenance})
    write_histogram_csv(report, out_dir / "histogram.csv")
    write_grid_csv(report, out_dir / "grid.csv")
    if args.taus:
        rows = pareto_sweep(dets, gts, maps, _parse_floats(args.taus), lut, cfg)
        with open(out_dir / "pareto.csv", "w", newline="", encoding="utf-8") as fh:
            columns = ["tau0", "td", "ed"] + (["td_star", "ed_star"] if lut else [])
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([row[c] for c in columns])
    _write_meta(args, args.out)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = SimConfig(
        kappa=args.kappa,
        alpha_signal=args.alpha_signal,
        sigma_eps=args.sigma_eps,
        n_samples=args.samples,
        depth_range=(args.depth_min, args.depth_max),
        seed=args.seed,
        mean_level=args.mean_level,
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if args.experiment == "variance":
            depths, losses = sample_losses(cfg)
            mean_d2, variances, counts = binned_variance(depths, losses, args.bins, cfg.depth_range)
            writer.writerow(["bin", "mean_d2", "variance", "count"])
            for b in range(args.bins):
                writer.writerow([b, mean_d2[b], variances[b], int(counts[b])])
        else:
            writer.writerow(["weighting", "seed", "epoch", "bin", "error"])
            for weighting in (Weighting.UNIFORM, Weighting.COMPENSATING, Weighting.DLW_EXPONENTIAL):
                for replica in range(args.replicas):
                    run_cfg = SimConfig(
                        kappa=cfg.kappa, alpha_signal=cfg.alpha_signal, sigma_eps=cfg.sigma_eps,
                        n_samples=cfg.n_samples, depth_range=cfg.depth_range,
                        seed=cfg.seed + replica, mean_level=cfg.mean_level)
                    trajectory = bias_experiment(
                        run_cfg, weighting, bins=args.bins, epochs=args.epochs, lr=args.lr)
                    for epoch, b, error in trajectory.rows():
                        writer.writerow([weighting.value, run_cfg.seed, epoch, b, error])
    _write_meta(args, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthprior",
        description="Depth-aware detection toolkit: training weights, stratification masks, "
                    "adaptive confidence thresholds, evaluation, and simulation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("dlw", help="emit per-object loss weights", formatter_class=fmt)
    p.add_argument("--depth-dir", required=True, help="directory of <image>.dpm depth maps")
    p.add_argument("--groundtruth", required=True, help="ground-truth JSONL")
    p.add_argument("--alpha", type=float, default=1.0, help="far-object emphasis")
    p.add_argument("--mode", default="dlw", choices=[t.value for t in WeightingTag],
                   help="weighting mode")
    p.add_argument("--batch-manifest", default=None,
                   help="JSON list of image-id lists; defaults to one batch of all images")
    p.add_argument("--seed", type=int, default=0, help="recorded in output metadata")
    p.add_argument("--out", required=True, help="weight-record JSONL path")
    p.set_defaults(func=cmd_dlw)

    p = sub.add_parser("dls", help="emit per-level stratification masks", formatter_class=fmt)
    p.add_argument("--depth-dir", required=True, help="directory of <image>.dpm depth maps")
    p.add_argument("--beta", type=float, default=0.5, help="close/distant split level")
    p.add_argument("--strat-mode", default="quantile", choices=["quantile", "absolute"],
                   help="interpret beta/cuts as quantile levels or absolute thresholds")
    p.add_argument("--lambdas", default="1.0,2.0", help="per-stratum loss weights (comma separated)")
    p.add_argument("--cuts", default=None, help="explicit K-1 cut levels for K-way splits")
    p.add_argument("--levels", default=None, help="feature-level sizes as HxW,HxW; default full size")
    p.add_argument("--seed", type=int, default=0, help="recorded in output metadata")
    p.add_argument("--out", required=True, help="output directory for <image>.L<l>.K<k>.dpm masks")
    p.set_defaults(func=cmd_dls)

    p = sub.add_parser("dct-fit", help="fit the threshold lookup table", formatter_class=fmt)
    p.add_argument("--depth-dir", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--groundtruth", required=True)
    p.add_argument("--taus", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
                   help="reference thresholds")
    p.add_argument("--knots", type=int, default=10, help="spline coefficient count")
    p.add_argument("--domain-lo", type=float, default=0.0, help="spline domain lower edge")
    p.add_argument("--domain-hi", type=float, default=0.9, help="spline domain upper edge")
    p.add_argument("--epsilon", type=float, default=0.1, help="false-positive tolerance")
    p.add_argument("--gamma", type=float, default=1000.0, help="excess false-positive penalty")
    p.add_argument("--rho", type=float, default=0.1, help="minimum admissible threshold")
    p.add_argument("--objective", default="base",
                   choices=[v.value for v in ObjectiveVariant], help="objective variant")
    p.add_argument("--coeff-bounds", default="safe", choices=[v.value for v in CoeffBounds],
                   help="coefficient box bounds mode")
    p.add_argument("--population", type=int, default=32, help="optimizer population size")
    p.add_argument("--generations", type=int, default=200, help="optimizer generation cap")
    p.add_argument("--stagnation", type=int, default=40, help="early stop after stagnant generations")
    p.add_argument("--seed", type=int, default=0, help="optimizer seed")
    p.add_argument("--fit-log", default=None, help="optional per-generation JSONL log")
    p.add_argument("--out", required=True, help="lookup-table JSON path")
    p.set_defaults(func=cmd_dct_fit)

    p = sub.add_parser("dct-apply", help="filter detections by a table entry or static threshold",
                       formatter_class=fmt)
    p.add_argument("--detections", required=True)
    p.add_argument("--depth-dir", default=None, help="required when --lut is given")
    p.add_argument("--lut", default=None, help="lookup-table JSON; omit for static filtering")
    p.add_argument("--tau0", type=float, required=True, help="reference threshold")
    p.add_argument("--seed", type=int, default=0, help="recorded in output metadata")
    p.add_argument("--out", required=True, help="filtered detections JSONL path")
    p.set_defaults(func=cmd_dct_apply)

    p = sub.add_parser("eval", help="COCO-style detection metrics", formatter_class=fmt)
    p.add_argument("--detections", required=True)
    p.add_argument("--groundtruth", required=True)
    p.add_argument("--seed", type=int, default=0, help="recorded in output metadata")
    p.add_argument("--out", required=True, help="metrics report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="TD/ED/MD report, histograms, grids, Pareto sweep",
                       formatter_class=fmt)
    p.add_argument("--depth-dir", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--groundtruth", required=True)
    p.add_argument("--tau0", type=float, default=0.5, help="threshold for the count report")
    p.add_argument("--taus", default=None, help="thresholds for the Pareto sweep CSV")
    p.add_argument("--lut", default=None, help="lookup table for curve-based columns")
    p.add_argument("--seed", type=int, default=0, help="recorded in output metadata")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="variance-law and training-bias simulations",
                       formatter_class=fmt)
    p.add_argument("--experiment", default="variance", choices=["variance", "bias"])
    p.add_argument("--kappa", type=float, default=1.0, help="signal constant")
    p.add_argument("--alpha-signal", type=float, default=1.0, help="variance scaling")
    p.add_argument("--sigma-eps", type=float, default=0.1, help="irreducible noise std dev")
    p.add_argument("--samples", type=int, default=100_000, help="samples per run")
    p.add_argument("--depth-min", type=float, default=0.05)
    p.add_argument("--depth-max", type=float, default=1.0)
    p.add_argument("--mean-level", type=float, default=2.0, help="mean loss level (bias experiment)")
    p.add_argument("--bins", type=int, default=20, help="depth bins")
    p.add_argument("--epochs", type=int, default=60, help="bias experiment epochs")
    p.add_argument("--lr", type=float, default=0.002, help="bias experiment learning rate")
    p.add_argument("--replicas", type=int, default=1, help="bias experiment seeds per weighting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
