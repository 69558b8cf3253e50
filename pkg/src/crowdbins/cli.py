"""Command-line front end: fit bins, build schedules, score losses, evaluate.

Every run echoes its resolved configuration into the artifacts it writes
(JSON outputs embed a ``config`` object, delimited outputs get a
``.config.json`` sidecar) so results stay reproducible.  Commands either
write all of their outputs and exit 0, or remove whatever they started
writing and exit non-zero with a diagnostic on stderr.

The default seed comes from the ``CROWDBINS_SEED`` environment variable
(0 if unset); a ``--seed`` flag overrides it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import binning, figures, metrics, sampling
from .data import (
    BinSpec,
    DataFormatError,
    assign_bin,
    load_bins,
    load_counts,
    load_points,
    load_predictions,
)
from .loss import LossConfig, bin_loss

__all__ = ["main", "build_parser"]


def _default_seed() -> int:
    try:
        return int(os.environ.get("CROWDBINS_SEED", "0"))
    except ValueError:
        return 0


def _write_json(path: Path, payload: dict[str, Any], emitted: list[Path]) -> None:
    emitted.append(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]], emitted: list[Path]) -> None:
    emitted.append(path)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _sidecar_config(path: Path, config: dict[str, Any], emitted: list[Path]) -> None:
    _write_json(Path(str(path) + ".config.json"), {"config": config}, emitted)


def _theta_grid(args: argparse.Namespace) -> list[float]:
    if args.theta_step <= 0:
        raise ValueError("--theta-step must be positive")
    grid = []
    t = args.theta_min
    while t <= args.theta_max + 1e-9:
        grid.append(round(t, 10))
        t += args.theta_step
    if not grid:
        raise ValueError("empty theta grid")
    return grid


def _parse_levels(text: str) -> list[int]:
    try:
        levels = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ValueError(f"--levels expects comma-separated integers, got {text!r}") from None
    if not levels:
        raise ValueError("--levels must name at least one level")
    return levels


# ---------------------------------------------------------------------------
# subcommand handlers

def _cmd_bins_fit(args: argparse.Namespace, emitted: list[Path]) -> None:
    if args.grid_search == (args.gamma is not None):
        raise ValueError("pass exactly one of --gamma or --grid-search")
    records = load_counts(args.counts, args.format)
    config = {
        "command": "bins fit",
        "counts": str(args.counts),
        "format": args.format,
        "gamma": args.gamma,
        "grid_search": args.grid_search,
        "alpha": args.alpha,
        "beta": args.beta,
        "model": args.model,
        "prob_source": args.prob_source,
        "seed": args.seed,
    }
    meta: dict[str, Any] = {
        "dataset": str(args.counts),
        "created": datetime.now(timezone.utc).isoformat(),
        "seed": args.seed,
        "model": args.model,
        "config": config,
    }
    if args.grid_search:
        result = binning.grid_search_gamma(
            records,
            beta=args.beta,
            alpha=args.alpha,
            model=args.model,
            prob_source=args.prob_source,
            workers=args.workers,
            meta=meta,
        )
        spec = result.bins
        meta = dict(spec.meta)
        meta["grid_search"] = {
            "gammas": list(result.gammas),
            "ratios": list(result.ratios),
            "seeds": list(result.seeds),
            "index_sums": [int(v) for v in result.index_sums],
            "mean_likelihoods": [[float(v) for v in row] for row in result.mean_likelihoods],
            "best_gamma": result.gamma,
        }
        spec = BinSpec(edges=spec.edges, gamma=spec.gamma, alpha=spec.alpha, beta=spec.beta, meta=meta)
    else:
        spec, _ = binning.fit_bins(
            records, args.gamma, alpha=args.alpha, beta=args.beta, model=args.model, meta=meta
        )
    out = Path(args.out)
    emitted.append(out)
    out.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if not args.no_figures:
        hist = binning.smooth(binning.build_histogram(records), args.beta)
        figure_path = out.with_suffix(".png")
        emitted.append(figure_path)
        figures.save_histogram_figure(hist, spec, figure_path)
    print(f"wrote {out} ({spec.num_bins} bins, gamma={spec.gamma})")


def _cmd_schedule(args: argparse.Namespace, emitted: list[Path]) -> None:
    records = load_counts(args.counts, args.format)
    bins = load_bins(args.bins)
    if args.epochs < 1:
        raise ValueError("--epochs must be at least 1")
    build = sampling.schedule_rr if args.scheme == "rr" else sampling.schedule_rs
    rows: list[tuple[int, int, int, str, int]] = []
    for epoch in range(args.epochs):
        schedule = build(records, bins, args.batch_size, epoch, args.seed)
        for step, (image_id, bin_index) in enumerate(schedule.steps):
            rows.append((epoch, step, step // args.batch_size, image_id, bin_index))
    out = Path(args.out)
    _write_csv(out, ("epoch", "step", "batch", "image_id", "bin_index"), rows, emitted)
    _sidecar_config(
        out,
        {
            "command": "schedule",
            "counts": str(args.counts),
            "format": args.format,
            "bins": str(args.bins),
            "scheme": args.scheme,
            "batch_size": args.batch_size,
            "epochs": args.epochs,
            "seed": args.seed,
        },
        emitted,
    )
    print(f"wrote {out} ({args.epochs} epoch(s), {len(records)} steps each)")


def _cmd_loss(args: argparse.Namespace, emitted: list[Path]) -> None:
    records = load_predictions(args.preds, args.format)
    bins = load_bins(args.bins)
    cfg = LossConfig(lambda1=args.lambda1, lambda2=args.lambda2)
    rows = []
    values = []
    for r in records:
        value = bin_loss(r.gt_count, r.pred_count, bins, cfg)
        values.append(value)
        rows.append((r.image_id, assign_bin(r.gt_count, bins), value, cfg.lambda2 * value))
    out = Path(args.out)
    _write_csv(out, ("image_id", "bin_index", "bin_loss", "weighted_bin_loss"), rows, emitted)
    total = sum(values)
    reduced = total / len(values) if args.reduction == "mean" else total
    _sidecar_config(
        out,
        {
            "command": "loss",
            "preds": str(args.preds),
            "format": args.format,
            "bins": str(args.bins),
            "lambda1": args.lambda1,
            "lambda2": args.lambda2,
            "reduction": args.reduction,
            "seed": args.seed,
            "batch_bin_loss": reduced,
        },
        emitted,
    )
    print(f"bin loss ({args.reduction}): {reduced:.6f}")


def _cmd_eval(args: argparse.Namespace, emitted: list[Path]) -> None:
    records = load_predictions(args.preds, args.format)
    bins = load_bins(args.bins)
    thetas = _theta_grid(args)
    levels = _parse_levels(args.game_levels)
    points = load_points(args.points) if args.points else None
    report = metrics.evaluation_report(
        records,
        bins,
        thetas=thetas,
        points=points,
        game_levels=levels,
        sample_std=args.sample_std,
        skip_exact=args.tper_skip_exact,
    )
    report["config"] = {
        "command": "eval",
        "preds": str(args.preds),
        "format": args.format,
        "bins": str(args.bins),
        "points": str(args.points) if args.points else None,
        "game_levels": levels,
        "theta_min": args.theta_min,
        "theta_max": args.theta_max,
        "theta_step": args.theta_step,
        "sample_std": args.sample_std,
        "tper_skip_exact": args.tper_skip_exact,
        "seed": args.seed,
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "report.json", report, emitted)
    _write_csv(
        out_dir / "per_bin.csv",
        ("bin_index", "lo", "hi", "n", "mae", "std"),
        [
            (row["bin_index"], row["lo"], row["hi"], row["n"],
             "" if row["mae"] is None else row["mae"],
             "" if row["std"] is None else row["std"])
            for row in report["per_bin"]
        ],
        emitted,
    )
    _write_csv(
        out_dir / "tper.csv",
        ("theta", "tper"),
        list(zip(report["tper"]["thetas"], report["tper"]["values"])),
        emitted,
    )
    if not args.no_figures:
        stats = metrics.per_bin_stats(records, bins, sample_std=args.sample_std)
        curve = metrics.tper_curve(records, thetas, skip_exact=args.tper_skip_exact)
        emitted.append(out_dir / "per_bin.png")
        figures.save_per_bin_figure(stats, bins, out_dir / "per_bin.png")
        emitted.append(out_dir / "tper.png")
        figures.save_tper_figure(curve, out_dir / "tper.png")
        if points:
            results = [metrics.game(points, level) for level in levels]
            emitted.append(out_dir / "game.png")
            figures.save_game_figure(results, out_dir / "game.png")
    print(f"wrote {out_dir / 'report.json'}")


def _cmd_tper(args: argparse.Namespace, emitted: list[Path]) -> None:
    records = load_predictions(args.preds, args.format)
    thetas = _theta_grid(args)
    curve = metrics.tper_curve(records, thetas, skip_exact=args.tper_skip_exact)
    payload = {
        "tper": {
            "thetas": list(curve.thetas),
            "values": list(curve.values),
            "auc_raw": curve.auc_raw,
            "auc_normalized": curve.auc_normalized,
            "n": curve.n,
        },
        "config": {
            "command": "tper",
            "preds": str(args.preds),
            "format": args.format,
            "theta_min": args.theta_min,
            "theta_max": args.theta_max,
            "theta_step": args.theta_step,
            "tper_skip_exact": args.tper_skip_exact,
            "seed": args.seed,
        },
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "tper.json", payload, emitted)
    _write_csv(out_dir / "tper.csv", ("theta", "tper"), list(zip(curve.thetas, curve.values)), emitted)
    if not args.no_figures:
        emitted.append(out_dir / "tper.png")
        figures.save_tper_figure(curve, out_dir / "tper.png")
    print(f"wrote {out_dir / 'tper.json'} (normalized AUC {curve.auc_normalized:.4f})")


def _cmd_game(args: argparse.Namespace, emitted: list[Path]) -> None:
    records = load_points(args.points)
    levels = _parse_levels(args.levels)
    results = [metrics.game(records, level) for level in levels]
    payload = {
        "game": [{"L": r.level, "value": r.value} for r in results],
        "config": {
            "command": "game",
            "points": str(args.points),
            "levels": levels,
            "seed": args.seed,
        },
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "game.json", payload, emitted)
    _write_csv(out_dir / "game.csv", ("L", "game"), [(r.level, r.value) for r in results], emitted)
    if not args.no_figures:
        emitted.append(out_dir / "game.png")
        figures.save_game_figure(results, out_dir / "game.png")
    print(f"wrote {out_dir / 'game.json'}")


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdbins",
        description="Skew-aware count binning, balanced schedules, bin-aware loss and inclusive metrics.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--seed",
        type=int,
        default=_default_seed(),
        help="base random seed (default: CROWDBINS_SEED env var, else 0)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    bins_parser = sub.add_parser("bins", help="bin-fitting commands")
    bins_sub = bins_parser.add_subparsers(dest="bins_command", metavar="subcommand")
    fit = bins_sub.add_parser(
        "fit",
        parents=[common],
        help="fit the MAP-optimal count bins",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    fit.add_argument("--counts", required=True, help="counts file (image_id,count)")
    fit.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="counts file format")
    fit.add_argument("--out", required=True, help="output bins JSON path")
    fit.add_argument("--gamma", type=float, default=None, help="prior profile parameter in (0,1)")
    fit.add_argument(
        "--grid-search",
        action="store_true",
        help="select gamma by cross-validation over the 0.1..0.9 grid, "
        "hold-out ratios 0.1/0.2/0.25 and 10 repeat seeds",
    )
    fit.add_argument("--alpha", type=int, default=None, help="bin-count bound (default: distinct counts after smoothing)")
    fit.add_argument("--beta", type=int, default=1, help="additive smoothing factor")
    fit.add_argument("--model", choices=binning.MODELS, default="multinomial", help="bin likelihood model")
    fit.add_argument(
        "--prob-source",
        choices=("test", "train"),
        default="test",
        help="where held-out evaluation takes its per-count probabilities from",
    )
    fit.add_argument("--workers", type=int, default=None, help="thread count for grid-search cells")
    fit.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    fit.set_defaults(handler=_cmd_bins_fit)

    sched = sub.add_parser(
        "schedule",
        parents=[common],
        help="emit balanced minibatch schedules",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sched.add_argument("--counts", required=True, help="counts file (image_id,count)")
    sched.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="counts file format")
    sched.add_argument("--bins", required=True, help="bins JSON from 'bins fit'")
    sched.add_argument("--scheme", choices=sampling.SCHEMES, default="rr", help="bin visiting scheme")
    sched.add_argument("--batch-size", type=int, default=1, help="steps per minibatch")
    sched.add_argument("--epochs", type=int, default=1, help="number of epochs to schedule")
    sched.add_argument("--out", required=True, help="output schedule CSV path")
    sched.set_defaults(handler=_cmd_schedule)

    loss_cmd = sub.add_parser(
        "loss",
        parents=[common],
        help="score predictions with the bin-aware loss",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    loss_cmd.add_argument("--preds", required=True, help="predictions file (image_id,gt_count,pred_count)")
    loss_cmd.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="predictions file format")
    loss_cmd.add_argument("--bins", required=True, help="bins JSON from 'bins fit'")
    loss_cmd.add_argument("--lambda1", type=float, default=1.0, help="weight of the logarithmic branch")
    loss_cmd.add_argument("--lambda2", type=float, default=1.0, help="weight of the bin term in the combined objective")
    loss_cmd.add_argument("--reduction", choices=("mean", "sum"), default="mean", help="batch reduction")
    loss_cmd.add_argument("--out", required=True, help="output per-image loss CSV path")
    loss_cmd.set_defaults(handler=_cmd_loss)

    def add_theta_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--theta-min", type=float, default=0.0, help="first TPER threshold")
        p.add_argument("--theta-max", type=float, default=100.0, help="last TPER threshold")
        p.add_argument("--theta-step", type=float, default=5.0, help="TPER threshold spacing")
        p.add_argument(
            "--tper-skip-exact",
            action="store_true",
            help="exclude exactly-predicted images from the TPER numerator",
        )

    eval_cmd = sub.add_parser(
        "eval",
        parents=[common],
        help="full evaluation report (per-bin, pooled, global, TPER, GAME)",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    eval_cmd.add_argument("--preds", required=True, help="predictions file (image_id,gt_count,pred_count)")
    eval_cmd.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="predictions file format")
    eval_cmd.add_argument("--bins", required=True, help="bins JSON from 'bins fit'")
    eval_cmd.add_argument("--points", default=None, help="optional points JSONL for the GAME section")
    eval_cmd.add_argument("--game-levels", default="0,1,2,3", help="comma-separated GAME levels")
    eval_cmd.add_argument("--sample-std", action="store_true", help="use the n-1 convention for standard deviations")
    add_theta_flags(eval_cmd)
    eval_cmd.add_argument("--out-dir", required=True, help="directory for report.json, CSVs and figures")
    eval_cmd.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    eval_cmd.set_defaults(handler=_cmd_eval)

    tper_cmd = sub.add_parser(
        "tper",
        parents=[common],
        help="thresholded percentage error ratio curve",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    tper_cmd.add_argument("--preds", required=True, help="predictions file (image_id,gt_count,pred_count)")
    tper_cmd.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="predictions file format")
    add_theta_flags(tper_cmd)
    tper_cmd.add_argument("--out-dir", required=True, help="directory for tper.json, tper.csv and the figure")
    tper_cmd.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    tper_cmd.set_defaults(handler=_cmd_tper)

    game_cmd = sub.add_parser(
        "game",
        parents=[common],
        help="grid average mean absolute error from point annotations",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    game_cmd.add_argument("--points", required=True, help="points JSONL file")
    game_cmd.add_argument("--levels", default="0,1,2,3", help="comma-separated subdivision levels")
    game_cmd.add_argument("--out-dir", required=True, help="directory for game.json, game.csv and the figure")
    game_cmd.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    game_cmd.set_defaults(handler=_cmd_game)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_help()
        return 2
    emitted: list[Path] = []
    try:
        handler(args, emitted)
    except (DataFormatError, ValueError, OSError) as exc:
        for path in emitted:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
