"""Command-line pipeline: synth -> analyze -> prune -> validate plus evaluators.

Every command prints machine-readable JSON on stdout and diagnostics on
stderr, and emits a run manifest alongside its file outputs so runs can be
reproduced exactly. Exit codes: 0 success, 2 validation failure, 3 format
error, 4 argument error.

The SNP_THREADS environment variable caps BLAS worker threads (default 1);
the bench command always pins itself to a single thread.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, figures
from .errors import (
    DimensionError,
    FormatError,
    IntegrityError,
    InvalidPlanError,
    NumericError,
    StalePlanError,
)
from .evaluator import (
    attention_similarity,
    bench,
    count_costs,
    format_table,
    ratio_report,
    write_csv,
    write_pgm,
)
from .groups import PrunePlan, build_groups, keep_all_plan, validate_plan
from .importance import ImportanceTable, build_importance_table, head_importance
from .model import attention_rollout, forward
from .pruner import RatioSpec, apply_mask, apply_plan, head_prune, make_plan
from .serialize import (
    dumps_pretty,
    load_calibration,
    load_model,
    save_calibration,
    save_model,
)
from .synth import PRESETS, preset_config, synth_calibration, synth_model

LOGITS_TOLERANCE = 1e-4


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 4 instead of argparse's default 2
        raise _ArgumentError(message)


def _manifest(command: str, inputs: dict, parameters: dict, model_fp: str | None) -> dict:
    return {
        "command": command,
        "inputs": inputs,
        "parameters": parameters,
        "tool_version": __version__,
        "model_fingerprint": model_fp,
    }


def _write_manifest(primary_output: str | Path, manifest: dict) -> str:
    path = str(primary_output) + ".manifest.json"
    Path(path).write_text(dumps_pretty(manifest), encoding="utf-8")
    return path


def _load_images(path: str, count: int | None) -> np.ndarray:
    images = load_calibration(path)
    if count is None:
        return images
    if count < 1 or count > images.shape[0]:
        raise ValueError(
            f"--images {count} outside [1, {images.shape[0]}] for {path}"
        )
    return images[:count]


def cmd_synth(args) -> tuple[dict, int]:
    model = synth_model(args.preset, args.seed)
    fp = save_model(model, args.out)
    manifest = _manifest(
        "synth", {}, {"preset": args.preset, "seed": args.seed, "out": args.out}, fp
    )
    _write_manifest(args.out, manifest)
    cost = count_costs(model.config)
    return (
        {
            "out": args.out,
            "fingerprint": fp,
            "config": model.config.to_dict(),
            "gflops": cost.flops / 1e9,
            "params": cost.params,
            "manifest": manifest,
        },
        0,
    )


def cmd_synth_calib(args) -> tuple[dict, int]:
    config = preset_config(args.preset)
    images = synth_calibration(config, args.count, args.seed)
    save_calibration(images, args.out)
    manifest = _manifest(
        "synth-calib",
        {},
        {"preset": args.preset, "count": args.count, "seed": args.seed, "out": args.out},
        None,
    )
    _write_manifest(args.out, manifest)
    return (
        {"out": args.out, "count": args.count, "shape": list(images.shape[1:]),
         "manifest": manifest},
        0,
    )


def cmd_analyze(args) -> tuple[dict, int]:
    model, fp = load_model(args.model)
    images = _load_images(args.calib, args.images)
    table = build_importance_table(model, images, criterion=args.criterion, rank=args.rank)
    manifest = _manifest(
        "analyze",
        {"model": args.model, "calib": args.calib},
        {
            "criterion": args.criterion,
            "rank": table.r,
            "images": int(images.shape[0]),
            "out": args.out,
        },
        fp,
    )
    doc = table.to_dict()
    if args.out:
        Path(args.out).write_text(dumps_pretty(doc), encoding="utf-8")
        _write_manifest(args.out, manifest)
    return ({"out": args.out, "table": doc, "manifest": manifest}, 0)


def cmd_prune(args) -> tuple[dict, int]:
    model, fp = load_model(args.model)
    ratios = RatioSpec(qk=args.qk, v=args.v, ffn=args.ffn, embed=args.embed, heads=args.heads)
    neuron_ratios = (args.qk, args.v, args.ffn, args.embed)
    groups = build_groups(model.config)
    if args.importance is None:
        if any(r > 0.0 for r in neuron_ratios):
            raise ValueError("neuron ratios need an importance table argument")
        plan = keep_all_plan(groups, fp)
    else:
        table = ImportanceTable.from_dict(
            json.loads(Path(args.importance).read_text(encoding="utf-8"))
        )
        plan = make_plan(table, ratios, groups, fingerprint=fp)
    pruned = apply_plan(model, plan)
    if args.heads > 0.0:
        scores = [head_importance(pruned, b) for b in range(pruned.config.depth)]
        pruned = head_prune(pruned, scores, args.heads)

    plan_path = args.plan if args.plan else args.out + ".plan.json"
    Path(plan_path).write_text(dumps_pretty(plan.to_dict()), encoding="utf-8")
    ratios_doc = None
    ratio_files = None
    if pruned.config.heads == model.config.heads:
        rep = ratio_report(model.config, pruned.config)
        ratios_doc = rep.to_dict()
        csv_path = args.out + ".ratios.csv"
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write("block,qk,value,ffn\n")
            for b in range(model.config.depth):
                f.write(f"{b},{rep.qk[b]!r},{rep.v[b]!r},{rep.ffn[b]!r}\n")
        png_path = args.out + ".ratios.png"
        figures.save_ratio_figure(rep, png_path)
        ratio_files = {"csv": csv_path, "png": png_path}
    pruned_fp = save_model(pruned, args.out)
    manifest = _manifest(
        "prune",
        {"model": args.model, "importance": args.importance},
        {
            "qk": args.qk,
            "v": args.v,
            "ffn": args.ffn,
            "embed": args.embed,
            "heads": args.heads,
            "plan": plan_path,
            "out": args.out,
        },
        fp,
    )
    _write_manifest(args.out, manifest)
    orig_cost = count_costs(model.config)
    new_cost = count_costs(pruned.config)
    return (
        {
            "out": args.out,
            "plan": plan_path,
            "fingerprint": pruned_fp,
            "source_fingerprint": fp,
            "params": {"before": orig_cost.params, "after": new_cost.params},
            "gflops": {"before": orig_cost.flops / 1e9, "after": new_cost.flops / 1e9},
            "ratios": ratios_doc,
            "ratio_files": ratio_files,
            "manifest": manifest,
        },
        0,
    )


def cmd_validate(args) -> tuple[dict, int]:
    original, fp = load_model(args.original)
    pruned, _ = load_model(args.pruned)
    plan = PrunePlan.from_dict(
        json.loads(Path(args.plan).read_text(encoding="utf-8"))
    )
    images = load_calibration(args.calib)
    groups = build_groups(original.config)

    violations = validate_plan(plan, groups, fp)
    checks: dict[str, bool] = {"plan_valid": not violations}
    report: dict = {"violations": violations}
    max_diff = None
    similarity = None
    if not violations:
        rederived = apply_plan(original, plan)
        reproduces = rederived.config == pruned.config and all(
            np.array_equal(rederived.tensors[k], pruned.tensors[k])
            for k in rederived.tensors
        )
        checks["plan_reproduces_pruned"] = reproduces
        masked = apply_mask(original, plan)
        max_diff = 0.0
        orig_caps, masked_caps = [], []
        for i in range(images.shape[0]):
            logits_p, _ = forward(pruned, images[i])
            logits_m, cap_m = forward(masked, images[i], capture=True)
            _, cap_o = forward(original, images[i], capture=True)
            max_diff = max(max_diff, float(np.max(np.abs(logits_p - logits_m))))
            orig_caps.append(cap_o)
            masked_caps.append(cap_m)
        checks["logits_match"] = max_diff <= LOGITS_TOLERANCE
        similarity = attention_similarity(orig_caps, masked_caps)

    ok = all(checks.values())
    manifest = _manifest(
        "validate",
        {
            "original": args.original,
            "pruned": args.pruned,
            "plan": args.plan,
            "calib": args.calib,
        },
        {"images": int(images.shape[0]), "logits_tolerance": LOGITS_TOLERANCE},
        fp,
    )
    report.update(
        {
            "pass": ok,
            "checks": checks,
            "max_logits_diff": max_diff,
            "attention_similarity": similarity.to_dict() if similarity else None,
            "manifest": manifest,
        }
    )
    return (report, 0 if ok else 2)


def cmd_flops(args) -> tuple[dict, int]:
    model, fp = load_model(args.model)
    cost = count_costs(model.config)
    manifest = _manifest("flops", {"model": args.model}, {"report": args.report}, fp)
    doc = cost.to_dict()
    doc["manifest"] = manifest
    if args.report:
        outdir = Path(args.report)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "cost.json").write_text(dumps_pretty(cost.to_dict()), encoding="utf-8")
        rows = [(n, v, f"{v / cost.flops:.4f}") for n, v in cost.flops_breakdown]
        (outdir / "cost.txt").write_text(
            format_table(("layer", "flops", "share"), rows), encoding="utf-8"
        )
        with open(outdir / "cost.csv", "w", encoding="utf-8") as f:
            f.write("layer,flops\n")
            for n, v in cost.flops_breakdown:
                f.write(f"{n},{v}\n")
        figures.save_cost_figure(cost, outdir / "cost.png")
        _write_manifest(outdir / "cost.json", manifest)
        doc["report_dir"] = str(outdir)
    return (doc, 0)


def cmd_bench(args) -> tuple[dict, int]:
    model, fp = load_model(args.model)
    result = bench(model, runs=args.runs, warmup=args.warmup, batch=args.batch)
    manifest = _manifest(
        "bench",
        {"model": args.model},
        {"runs": args.runs, "warmup": args.warmup, "batch": args.batch},
        fp,
    )
    doc = result.to_dict()
    doc["manifest"] = manifest
    return (doc, 0)


def cmd_attmap(args) -> tuple[dict, int]:
    model, fp = load_model(args.model)
    images = load_calibration(args.calib)
    if not 0 <= args.index < images.shape[0]:
        raise ValueError(f"--index {args.index} outside [0, {images.shape[0] - 1}]")
    _, cap = forward(model, images[args.index], capture=True)
    rollout = attention_rollout(cap)
    pgm_path = args.out + ".pgm"
    csv_path = args.out + ".csv"
    png_path = args.out + ".png"
    write_pgm(rollout, pgm_path)
    write_csv(rollout, csv_path)
    figures.save_attention_figure(rollout, png_path)
    manifest = _manifest(
        "attmap",
        {"model": args.model, "calib": args.calib},
        {"index": args.index, "out": args.out},
        fp,
    )
    _write_manifest(args.out, manifest)
    return (
        {
            "pgm": pgm_path,
            "csv": csv_path,
            "png": png_path,
            "tokens": int(rollout.shape[0]),
            "row_sum_max_error": float(np.max(np.abs(rollout.sum(axis=1) - 1.0))),
            "manifest": manifest,
        },
        0,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="snp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic random-weight model")
    p.add_argument("out", help="output .snpm path")
    p.add_argument("--preset", choices=sorted(PRESETS), default="tiny-desk")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synth-calib", help="generate a deterministic calibration set")
    p.add_argument("out", help="output .snpc path")
    p.add_argument("--preset", choices=sorted(PRESETS), default="tiny-desk")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_calib)

    p = sub.add_parser("analyze", help="score every prune group of a model")
    p.add_argument("model", help=".snpm path")
    p.add_argument("calib", help=".snpc path")
    p.add_argument("--criterion", choices=("snp", "l2", "gm", "reverse"), default="snp")
    p.add_argument("--rank", type=int, default=None,
                   help="SVD rank budget (default: full rank N)")
    p.add_argument("--images", type=int, default=64,
                   help="calibration images to use (default 64)")
    p.add_argument("--out", default=None, help="write the importance table here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("prune", help="build a plan and physically slice a model")
    p.add_argument("model", help=".snpm path")
    p.add_argument("importance", nargs="?", default=None,
                   help="importance table JSON (needed for neuron ratios)")
    p.add_argument("--qk", type=float, default=0.0)
    p.add_argument("--v", type=float, default=0.0)
    p.add_argument("--ffn", type=float, default=0.0)
    p.add_argument("--embed", type=float, default=0.0)
    p.add_argument("--heads", type=float, default=0.0,
                   help="head prune ratio, applied after the neuron plan")
    p.add_argument("--plan", default=None, help="plan JSON output path")
    p.add_argument("--out", required=True, help="pruned .snpm output path")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("validate", help="check a pruned model against its plan")
    p.add_argument("original")
    p.add_argument("pruned")
    p.add_argument("plan")
    p.add_argument("calib")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("flops", help="closed-form cost report")
    p.add_argument("model")
    p.add_argument("--report", default=None,
                   help="directory for JSON/text/CSV/figure report files")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", help="single-threaded forward latency")
    p.add_argument("model")
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=200)
    p.add_argument("--batch", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("attmap", help="attention rollout map to PGM/CSV/PNG")
    p.add_argument("model")
    p.add_argument("calib")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_attmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        print(dumps_pretty({"error": str(exc), "exit_code": 4}), end="")
        return 4
    threads = int(os.environ.get("SNP_THREADS", "1"))
    try:
        with threadpool_limits(limits=threads):
            payload, code = args.func(args)
    except (FormatError, IntegrityError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        print(dumps_pretty({"error": str(exc), "exit_code": 3}), end="")
        return 3
    except DimensionError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        print(dumps_pretty({"error": str(exc), "exit_code": 3}), end="")
        return 3
    except (InvalidPlanError, StalePlanError, NumericError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        print(dumps_pretty({"error": str(exc), "exit_code": 2}), end="")
        return 2
    except ValueError as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        print(dumps_pretty({"error": str(exc), "exit_code": 4}), end="")
        return 4
    print(dumps_pretty(payload), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
