"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 I/O failure, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .core import (
    InvariantError,
    PipelineConfig,
    ValidationError,
    instances_from_labels,
    load_cloud,
    save_cloud,
)
from .evaluation import evaluate, read_ground_truth, write_ground_truth
from .experiments import ABLATION_COLUMNS, BENCH_COLUMNS, DEFAULT_RADII_SETS, run_ablation, run_bench
from .inference import read_predictions, segment_scene, write_assignment, write_predictions
from .maskscore import PREDICTORS, make_predictor
from .report import format_table, plot_ablation, plot_bench, plot_segmentation, write_table
from .synth import NoiseSpec, generate_scene, parse_batch_spec, simulate_predictions

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3

_FORMATS = {"columnar": "columnar", "ply": "ply_ascii"}
_EXT = {"columnar": "txt", "ply": "ply"}


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_manifest(out: Path, manifest: dict) -> None:
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None


def _load_config(path, overrides: argparse.Namespace) -> tuple[PipelineConfig, dict]:
    doc = _read_json(path) if path else {}
    if not isinstance(doc, dict):
        raise ValidationError("config: expected a JSON object")
    doc = dict(doc)
    extra = doc.pop("ablation", {})
    if getattr(overrides, "radii", None):
        doc["radii"] = [float(v) for arg in overrides.radii for v in arg.split(",") if v]
    for flag, key in (("min_group_size", "min_group_size"), ("nms_iou", "nms_iou"),
                      ("space", "cluster_space"), ("seed", "rng_seed")):
        v = getattr(overrides, flag, None)
        if v is not None:
            doc[key] = v
    try:
        return PipelineConfig.from_json(doc), extra
    except (TypeError, ValidationError) as e:
        raise ValidationError(f"config.{e}") from None


# ----------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    specs, noise = parse_batch_spec(_read_json(args.spec))
    out = Path(args.out)
    fmt = args.format
    scenes = []
    for i, spec in enumerate(specs):
        cloud, gts = generate_scene(spec)
        cloud = simulate_predictions(cloud, gts, dataclasses.replace(noise, seed=noise.seed + i))
        d = out / f"scene_{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        save_cloud(cloud, d / f"cloud.{_EXT[fmt]}", _FORMATS[fmt])
        write_ground_truth(d / "gt.json", gts)
        scenes.append({"dir": d.name, "spec": spec.to_json(), "points": len(cloud), "instances": len(gts)})
    _write_manifest(out, {
        "command": "synth",
        "version": __version__,
        "spec_file": str(Path(args.spec).resolve()),
        "format": fmt,
        "noise": noise.to_json(),
        "scenes": scenes,
    })
    print(f"wrote {len(scenes)} scene(s) to {out}")
    return EXIT_OK


def _segment_inputs(args) -> dict:
    """Resolve segment inputs either from flags or from an earlier manifest."""
    if args.from_manifest:
        m = _read_json(args.from_manifest)
        try:
            return {
                "cloud": m["inputs"]["cloud"],
                "gt": m["inputs"].get("gt"),
                "format": m["format"],
                "predictor": m["predictor"],
                "noise": NoiseSpec.from_json(m["noise"]),
                "config": PipelineConfig.from_json(m["config"]),
                "figure": m.get("figure", False),
                "out": args.out or m["output_dir"],
            }
        except KeyError as e:
            raise ValidationError(f"manifest missing field {e}") from None
    if not args.cloud:
        raise ValidationError("a cloud file or --from-manifest is required")
    if not args.out:
        raise ValidationError("--out is required")
    cfg, _ = _load_config(args.config, args)
    noise = NoiseSpec.from_json(_read_json(args.noise)) if args.noise else \
        NoiseSpec(mask_flip_rate=0.05, seed=cfg.rng_seed)
    return {
        "cloud": str(Path(args.cloud).resolve()),
        "gt": str(Path(args.gt).resolve()) if args.gt else None,
        "format": args.format,
        "predictor": args.predictor,
        "noise": noise,
        "config": cfg,
        "figure": args.figure,
        "out": args.out,
    }


def cmd_segment(args) -> int:
    inp = _segment_inputs(args)
    cfg: PipelineConfig = inp["config"]
    cloud = load_cloud(inp["cloud"], _FORMATS[inp["format"]])
    if cfg.cluster_space == "shifted" and cloud.offsets is None:
        raise ValidationError("offsets required: cloud has no offx/offy/offz columns")
    if cloud.semantic_labels is None and cloud.semantic_scores is None:
        raise ValidationError("semantic labels required: cloud has no 'sem' column")

    gts = None
    if inp["predictor"] != "constant":
        if inp["gt"]:
            gts = read_ground_truth(inp["gt"])
        elif cloud.gt_instance_ids is not None:
            gts = instances_from_labels(cloud.positions, cloud.gt_instance_ids, cloud.labels())
        else:
            raise ValidationError("ground truth required for oracle predictors: pass --gt or an 'inst' column")
    predictor = make_predictor(inp["predictor"], gts, cfg, inp["noise"])

    stats: dict = {}
    preds = segment_scene(cloud, predictor, cfg, stats=stats)
    n = len(cloud)
    if any(p.point_indices[-1] >= n for p in preds):
        raise InvariantError("prediction references a point outside the cloud")

    out = Path(inp["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.json", preds)
    write_assignment(out / "assignment.csv", preds, n)
    if inp["figure"]:
        plot_segmentation(cloud.positions, preds, out / "segmentation.png")
    inputs = {"cloud": inp["cloud"], "cloud_sha256": _sha256(inp["cloud"]), "gt": inp["gt"]}
    if inp["gt"]:
        inputs["gt_sha256"] = _sha256(inp["gt"])
    _write_manifest(out, {
        "command": "segment",
        "version": __version__,
        "config": cfg.to_json(),
        "num_rounds": cfg.num_rounds,
        "inputs": inputs,
        "format": inp["format"],
        "predictor": inp["predictor"],
        "noise": inp["noise"].to_json(),
        "figure": bool(inp["figure"]),
        "output_dir": str(out.resolve()),
        "timings_ms": stats["timings_ms"],
        "round_groups": stats["round_groups"],
        "proposals": stats["proposals"],
        "predictions": stats["predictions"],
    })
    print(f"{len(preds)} instance(s) from {stats['proposals']} proposal(s); wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = read_predictions(args.predictions)
    gts = read_ground_truth(args.gt)
    classes = {p.semantic_class for p in preds} | {g.semantic_class for g in gts}
    if args.classes:
        classes = {int(c) for arg in args.classes for c in arg.split(",") if c}
    if not classes:
        raise ValidationError("no classes to evaluate: predictions and ground truth are both empty")
    report = evaluate(preds, gts, classes)
    text = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write_atomic(Path(args.out), text)
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def _radii_sets(extra: dict):
    sets = extra.get("radii_sets", DEFAULT_RADII_SETS)
    if not isinstance(sets, (list, tuple)) or not sets:
        raise ValidationError("config.ablation.radii_sets: expected a non-empty list of radius lists")
    return [tuple(float(r) for r in s) for s in sets]


def cmd_ablate(args) -> int:
    specs, noise = parse_batch_spec(_read_json(args.spec))
    cfg, extra = _load_config(args.config, args)
    unknown = set(extra) - {"radii_sets", "noise", "predictor"}
    if unknown:
        raise ValidationError(f"config.ablation.{sorted(unknown)[0]}: unknown field")
    noises = [NoiseSpec.from_json(d, f"config.ablation.noise[{i}]") for i, d in enumerate(extra["noise"])] \
        if "noise" in extra else [noise]
    predictor = args.predictor or extra.get("predictor", "exact")
    if predictor not in PREDICTORS:
        raise ValidationError(f"predictor must be one of {PREDICTORS}")
    radii_sets = _radii_sets(extra)
    for rs in radii_sets:
        dataclasses.replace(cfg, radii=rs)  # validates each set before the long run

    rows = run_ablation(specs, noises, cfg, radii_sets, predictor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(rows, ABLATION_COLUMNS, out / "ablation.csv")
    plot_ablation(rows, out / "ablation.png")
    _write_manifest(out, {
        "command": "ablate",
        "version": __version__,
        "spec_file": str(Path(args.spec).resolve()),
        "spec_sha256": _sha256(args.spec),
        "config": cfg.to_json(),
        "radii_sets": [list(r) for r in radii_sets],
        "noise": [n.to_json() for n in noises],
        "predictor": predictor,
        "scenes": len(specs),
    })
    print(format_table(rows, ("radii", "offset_sigma", "ap", "ap50", "ap25")))
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [int(s) for arg in args.sizes for s in arg.split(",") if s]
    if any(s <= 0 for s in sizes):
        raise ValidationError("sizes must be positive")
    cfg, _ = _load_config(args.config, args)
    rows = run_bench(sizes, cfg, repeats=args.repeats)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_table(rows, BENCH_COLUMNS, out / "bench.csv")
        plot_bench(rows, out / "bench.png")
    else:
        write_table(rows, BENCH_COLUMNS, sys.stdout)
    print(format_table(rows, ("n_points", "repeat", "group_ms", "total_ms", "peak_groups")), file=sys.stderr)
    return EXIT_OK


# ----------------------------------------------------------------------------


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with PipelineConfig fields")
    p.add_argument("--radii", nargs="+", help="clustering radii in metres, ascending (default 0.01 0.03 0.05)")
    p.add_argument("--min-group-size", type=int, help="smallest group kept (default 50)")
    p.add_argument("--nms-iou", type=float, help="NMS IoU threshold (default 0.7)")
    p.add_argument("--space", choices=("shifted", "original"), help="cluster shifted centroids or raw positions")
    p.add_argument("--seed", type=int, help="RNG seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpgseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("spec", help="batch spec JSON")
    p.add_argument("out", help="output directory")
    p.add_argument("--format", choices=tuple(_FORMATS), default="columnar")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="segment one cloud into instances")
    p.add_argument("cloud", nargs="?", help="point cloud file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--predictor", choices=PREDICTORS, default="exact")
    p.add_argument("--gt", help="ground-truth instances JSON (oracle predictors)")
    p.add_argument("--noise", help="NoiseSpec JSON for the noisy predictor")
    p.add_argument("--format", choices=tuple(_FORMATS), default="columnar")
    p.add_argument("--figure", action="store_true", help="also render segmentation.png")
    p.add_argument("--from-manifest", help="rerun with the inputs recorded in a manifest")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("gt")
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--csv", help="write per-class rows here")
    p.add_argument("--classes", nargs="+", help="class ids to evaluate (default: all seen)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep radius sets over a scene batch")
    p.add_argument("spec", help="batch spec JSON")
    p.add_argument("config", help="config JSON; optional 'ablation' block")
    p.add_argument("out", help="output directory")
    p.add_argument("--predictor", choices=PREDICTORS)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="time the pipeline at several scene sizes")
    p.add_argument("sizes", nargs="*", help="point counts")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", help="directory for bench.csv and bench.png (default: CSV to stdout)")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
