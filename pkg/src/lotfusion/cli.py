"""Command-line front end.

Subcommands: ``generate`` (write a scenario file), ``run`` (initialize the
camera network and execute counting rounds over either transport),
``table`` (summarize run reports as an aligned text table plus JSON), and
``selftest`` (built-in oracle battery). All file I/O is JSON; identical
inputs produce byte-identical outputs. Verbosity comes from the
LOTFUSION_LOG environment variable (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import LotfusionError, SchemaMismatch
from .evaluation import (
    format_table,
    published_reference_rows,
    run_baseline_B,
    run_baseline_S,
    summarize_rounds,
    table_to_json,
)
from .runner import ProtocolRunner
from .scenario import (
    NOISE_PRESETS,
    SequenceSpec,
    WorldConfig,
    preset,
    sequence_from_json_dict,
    sequence_to_json_dict,
    standard_suite,
)


RUN_SCHEMA_VERSION = 1


def _configure_logging() -> None:
    level = os.environ.get("LOTFUSION_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.ERROR),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _dump_json(data, path: str | None) -> None:
    text = json.dumps(data, sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_generate(args: argparse.Namespace) -> int:
    if args.suite:
        outdir = Path(args.suite)
        outdir.mkdir(parents=True, exist_ok=True)
        noise = None if args.noise == "per-condition" else args.noise
        for spec in standard_suite(noise=noise, rounds=args.rounds):
            data = sequence_to_json_dict(spec)
            path = outdir / f"{spec.label}.json"
            _dump_json(data, str(path))
            print(
                f"{spec.label}: true_global_count (round 0) "
                f"{data['ground_truth']['per_round'][0]['true_global_count']} -> {path}"
            )
        return 0
    if args.noise == "per-condition":
        print("generate: --noise per-condition only applies with --suite", file=sys.stderr)
        return 1
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg = WorldConfig(**{**raw, "far_widen_range": tuple(raw.get("far_widen_range", (1.04, 1.12)))})
        spec = SequenceSpec(
            label=args.label or Path(args.config).stem,
            config=cfg,
            world_seed=0 if args.seed is None else args.seed,
            rounds=args.rounds,
            noise=NOISE_PRESETS[args.noise],
        )
    else:
        spec = preset(args.preset, noise=args.noise, rounds=args.rounds)
        if args.seed is not None:
            spec = replace(spec, world_seed=args.seed)
        if args.label:
            spec = replace(spec, label=args.label)
    data = sequence_to_json_dict(spec)
    _dump_json(data, args.out)
    print(f"true_global_count (round 0): {data['ground_truth']['per_round'][0]['true_global_count']}")
    return 0


def _execute_run(spec: SequenceSpec, args: argparse.Namespace) -> dict:
    rounds = args.rounds if args.rounds is not None else spec.rounds
    truths: list[float] = []
    preds: dict[str, list[float]] = {"O": [], "B": [], "S": []}
    reports = []
    baselines = []
    with ProtocolRunner(
        spec,
        seed=args.seed,
        aggregation=args.aggregation,
        tau=args.iou_threshold,
        transport=args.transport,
    ) as runner:
        num_spaces = runner.world.num_spaces
        for report, trace in runner.run(rounds=rounds):
            b = run_baseline_B(report.etas)
            s = run_baseline_S(trace)
            reports.append(report.to_json_dict())
            baselines.append({"round": report.round, "B": b, "S": s})
            truths.append(float(report.ground_truth))
            preds["O"].append(report.global_count)
            preds["B"].append(float(b))
            preds["S"].append(float(s))

    row = summarize_rounds(spec.label, truths, preds, num_spaces)
    complete = all(r["complete"] for r in reports)
    return {
        "schema_version": RUN_SCHEMA_VERSION,
        "kind": "lotfusion.run",
        "label": spec.label,
        "seed": args.seed,
        "aggregation": args.aggregation,
        "iou_threshold": args.iou_threshold,
        "transport": args.transport,
        "rounds": rounds,
        "num_spaces": num_spaces,
        "complete": complete,
        "reports": reports,
        "baselines": baselines,
        "summary": {
            "truths": truths,
            "predictions": preds,
            "metrics": {
                system: {
                    "mean_error": row.error[system],
                    "mae": row.abs_err[system],
                    "mse": row.sq_err[system],
                    "mre_pct": row.rel_err_pct[system],
                }
                for system in ("B", "S", "O")
            },
        },
    }


def cmd_run(args: argparse.Namespace) -> int:
    raw = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    spec = sequence_from_json_dict(raw)
    data = _execute_run(spec, args)
    _dump_json(data, args.out)
    metrics = data["summary"]["metrics"]
    print(
        f"{spec.label}: rounds={data['rounds']} complete={data['complete']} "
        f"ours mean_error={metrics['O']['mean_error']:+.2f} mae={metrics['O']['mae']:.2f}"
    )
    return 0 if data["complete"] else 2


def cmd_table(args: argparse.Namespace) -> int:
    if args.paper:
        rows = published_reference_rows()
    else:
        if not args.reports:
            print("table: provide at least one run report (or --paper)", file=sys.stderr)
            return 1
        rows = []
        for path in args.reports:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            if raw.get("kind") != "lotfusion.run" or raw.get("schema_version") != RUN_SCHEMA_VERSION:
                raise SchemaMismatch(f"{path}: not a compatible run report")
            summary = raw["summary"]
            rows.append(
                summarize_rounds(
                    raw["label"],
                    summary["truths"],
                    summary["predictions"],
                    raw["num_spaces"],
                )
            )
    print(format_table(rows))
    if args.out:
        _dump_json(table_to_json(rows), args.out)
    return 0


def _selftest_iou(rng: np.random.Generator, pairs: int = 100) -> tuple[bool, str]:
    from .geometry import MaskPolygon, convex_hull, iou

    def mc_iou(a, b, samples=20_000):
        pts = np.vstack([a, b])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        xs = rng.uniform(lo[0], hi[0], samples)
        ys = rng.uniform(lo[1], hi[1], samples)

        def inside(poly):
            flags = np.ones(samples, dtype=bool)
            n = len(poly)
            for i in range(n):
                x1, y1 = poly[i]
                x2, y2 = poly[(i + 1) % n]
                flags &= (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1) >= 0
            return flags

        in_a, in_b = inside(a), inside(b)
        union = np.sum(in_a | in_b)
        return float(np.sum(in_a & in_b) / union) if union else 0.0

    worst = 0.0
    for _ in range(pairs):
        quads = []
        while len(quads) < 2:
            hull = convex_hull(rng.uniform(0, 10, (4, 2)))
            if len(hull) == 4:
                quads.append(hull)
        a, b = (MaskPolygon(q) for q in quads)
        worst = max(worst, abs(iou(a, b) - mc_iou(a.vertices, b.vertices)))
    return worst < 0.02, f"polygon IoU vs Monte-Carlo oracle, worst |delta| {worst:.4f}"


def _selftest_homography(rng: np.random.Generator) -> tuple[bool, str]:
    from .geometry import Correspondence, RansacParams, apply, estimate_dlt, estimate_ransac, Homography

    worst = 0.0
    for _ in range(20):
        m = np.array(
            [
                [rng.uniform(0.8, 1.3), rng.uniform(-0.2, 0.2), rng.uniform(-30, 30)],
                [rng.uniform(-0.2, 0.2), rng.uniform(0.8, 1.3), rng.uniform(-30, 30)],
                [rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1.0],
            ]
        )
        truth = Homography(m)
        pts = [tuple(p) for p in rng.uniform(0, 100, (10, 2))]
        cs = [Correspondence(p, apply(truth, p)) for p in pts]
        outliers = [
            Correspondence(tuple(rng.uniform(0, 100, 2)), tuple(rng.uniform(300, 900, 2)))
            for _ in range(4)
        ]
        est, _ = estimate_ransac(cs + outliers, RansacParams(rng_seed=7))
        worst = max(worst, est.max_entry_delta(estimate_dlt(cs)), est.max_entry_delta(truth))
    return worst < 1e-6, f"DLT/RANSAC recovery, worst canonical delta {worst:.2e}"


def _selftest_serialization(rng: np.random.Generator) -> tuple[bool, str]:
    from .geometry import MaskPolygon
    from .messages import EtaReport, MaskShare, MuReport, ProtocolMessage, decode_message, encode_message

    count = 1000
    for k in range(count):
        kind = k % 3
        if kind == 0:
            payload = EtaReport(eta=int(rng.integers(0, 100)))
        elif kind == 1:
            payload = MuReport(j="cam0", i="cam1", mu=int(rng.integers(0, 50)))
        else:
            # Corners in integer milli-units so coordinates survive the
            # 6-decimal wire quantization exactly.
            nx, ny = (int(v) for v in rng.integers(-10_000_000, 10_000_000, 2))
            payload = MaskShare(
                masks=(
                    MaskPolygon.rectangle(
                        nx / 1e3, ny / 1e3, (nx + 50_000) / 1e3, (ny + 30_000) / 1e3
                    ),
                )
            )
        msg = ProtocolMessage.wrap(payload, src="cam0", dst="sink", round=k)
        if decode_message(encode_message(msg)) != msg:
            return False, f"round-trip mismatch at message {k}"
    return True, f"serialization round-trip over {count} messages"


def _selftest_conservation() -> tuple[bool, str]:
    spec = preset("chain5", noise="zero", rounds=2)
    with ProtocolRunner(spec, seed=13) as runner:
        for report, _ in runner.run():
            if report.rounded_count != report.ground_truth:
                return False, (
                    f"round {report.round}: count {report.rounded_count} != truth"
                    f" {report.ground_truth}"
                )
    return True, "zero-noise conservation on the 5-camera chain"


def _selftest_reference_table() -> tuple[bool, str]:
    from .evaluation import mean_row

    m = mean_row(published_reference_rows())
    ok = abs(m.abs_err["S"] - 36.3) <= 0.05 and abs(m.abs_err["O"] - 2.8) <= 0.05
    return ok, f"published table means S={m.abs_err['S']:.3f} O={m.abs_err['O']:.3f}"


def cmd_selftest(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    checks = [
        ("iou-oracle", lambda: _selftest_iou(rng)),
        ("homography", lambda: _selftest_homography(rng)),
        ("serialization", lambda: _selftest_serialization(rng)),
        ("conservation", _selftest_conservation),
        ("reference-table", _selftest_reference_table),
    ]
    failures = 0
    for name, check in checks:
        ok, detail = check()
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failures += 0 if ok else 1
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lotfusion",
        description="Decentralized multi-camera parking-lot vehicle counting.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a scenario file with its ground-truth dump")
    gen.add_argument("--preset", default="chain5", choices=["single1", "pair2", "chain3", "chain5", "triple3"])
    gen.add_argument("--config", default=None, help="world config JSON (overrides --preset)")
    gen.add_argument("--suite", default=None, metavar="DIR",
                     help="write the six standard sequences into DIR instead")
    gen.add_argument("--noise", default="zero", choices=sorted(NOISE_PRESETS) + ["per-condition"])
    gen.add_argument("--rounds", type=int, default=4)
    gen.add_argument("--seed", type=int, default=None, help="world seed override")
    gen.add_argument("--label", default=None)
    gen.add_argument("--out", default=None, help="output path (default: stdout)")
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="initialize the network and execute counting rounds")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--aggregation", default="mean", choices=["min", "max", "mean"])
    run.add_argument("--iou-threshold", type=float, default=0.2)
    run.add_argument("--transport", default="sim", choices=["sim", "tcp"])
    run.add_argument("--rounds", type=int, default=None, help="override the scenario's round count")
    run.add_argument("--out", default=None, help="output path (default: stdout)")
    run.set_defaults(func=cmd_run)

    table = sub.add_parser("table", help="three-system comparison table from run reports")
    table.add_argument("reports", nargs="*", help="run report JSON files")
    table.add_argument("--paper", action="store_true", help="show the published reference table instead")
    table.add_argument("--out", default=None, help="also write the table as JSON")
    table.set_defaults(func=cmd_table)

    selftest = sub.add_parser("selftest", help="run the built-in oracle battery")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LotfusionError, json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
