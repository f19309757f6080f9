"""Command-line front end.

Every command resolves a :class:`RunConfig` from ``--config`` (or
``$DIFFMONITOR_CONFIG``), ``--preset`` and repeated ``--set key=value``
overrides, and writes the resolved config into its output directory.
Failures print one ``diffmonitor: error: ...`` line to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import config, diffusion, evaluation, gak, monitor
from .config import ConfigError, RunConfig
from .signal_core import synth_recordings, write_participant_csv
from .similarity import MetricKind

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    return out


def _select_participants(args, ds) -> list[int]:
    if args.participant is None:
        return list(ds.participants)
    if args.participant not in ds.participants:
        raise ValueError(f"participant {args.participant} not in corpus {ds.participants}")
    return [args.participant]


def _select_labels(args, ds):
    if args.label is None:
        return list(ds.labels)
    return [ds.label_by_name(args.label)]


def _stem(pid: int, label: str) -> str:
    return f"p{pid}_{label}"


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth_data(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    for pid, segments in synth_recordings(cfg.synth()).items():
        write_participant_csv(out / f"participant_{pid}.csv", segments, cfg.sample_rate_hz)
    print(out)


def cmd_calibrate(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    ds = evaluation.load_corpus(cfg)
    fallbacks = []
    for pid in _select_participants(args, ds):
        split = evaluation.make_split(ds, pid, cfg)
        for label in _select_labels(args, ds):
            cal = evaluation.calibrate_class(cfg, split, label)
            stem = _stem(pid, label.name)
            (out / f"{stem}_calibration.json").write_text(cal.to_json() + "\n")
            with open(out / f"{stem}_grid.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["sigma", "mean", "std"])
                for sigma, mean, std in cal.grid:
                    w.writerow([repr(sigma), repr(mean), repr(std)])
            if cal.fallback:
                fallbacks.append(stem)
    if fallbacks:
        _note(f"note: no sigma met the std band for {', '.join(fallbacks)}; "
              "fallback calibrations are flagged in their JSON")
    print(out)


def cmd_train(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    ds = evaluation.load_corpus(cfg)
    metrics = [] if args.no_monitor else (
        [MetricKind(args.metric)] if args.metric else cfg.metrics())
    summary = []
    for pid in _select_participants(args, ds):
        split = evaluation.make_split(ds, pid, cfg)
        for label in _select_labels(args, ds):
            stem = _stem(pid, label.name)
            real, _ = evaluation.class_windows(split, label)
            sigma = target = None
            if MetricKind.COPT_GAK in metrics:
                cal = evaluation.calibrate_class(cfg, split, label)
                sigma, target = cal.sigma, cal.target_range
            base = evaluation.class_seed(cfg, pid, label)
            model, data = diffusion.build_model(real, cfg.diffusion(), seed=base % (2 ** 31))
            monitors = {m.value: cfg.training_monitor(m, sigma, target, probe_seed=base + 1)
                        for m in metrics}
            try:
                outcome = monitor.train_with_monitors(
                    model, data, real, monitors, cfg.max_epochs, seed=base + 2,
                    run_to_cap=not monitors)
            except FloatingPointError as exc:
                raise FloatingPointError(f"participant={pid} class={label.name}: {exc}") from None
            meta = {"participant": pid, "class": label.name, "sigma": sigma,
                    "target_range": target, "epochs_trained": outcome.epochs_trained}
            if not monitors:
                model.save(out / f"{stem}_full")
                (out / f"{stem}_full.meta.json").write_text(
                    json.dumps({**meta, "metric": None, "epochs_used": outcome.epochs_trained},
                               indent=2) + "\n")
                summary.append({**meta, "metric": None, "epochs_used": outcome.epochs_trained})
            for name, m in outcome.monitors.items():
                model.restore(m.best_params)
                model.save(out / f"{stem}_{name}")
                m.trace.write_csv(out / f"{stem}_{name}_trace.csv")
                row = {**meta, "metric": name, "epochs_used": m.epochs_used,
                       "best_epoch": m.trace.best_position, "rolled_back": m.rolled_back}
                (out / f"{stem}_{name}.meta.json").write_text(json.dumps(row, indent=2) + "\n")
                summary.append(row)
            with open(out / f"{stem}_losses.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "loss"])
                for e, loss in enumerate(outcome.losses, 1):
                    w.writerow([e, repr(loss)])
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(out)


def _checkpoint_stem(path: str) -> Path:
    p = Path(path)
    if p.suffix in (".npz", ".json"):
        p = p.with_suffix("")
    if not p.with_suffix(".npz").exists() or not p.with_suffix(".json").exists():
        raise FileNotFoundError(f"missing checkpoint {p}.npz / {p}.json")
    return p


def cmd_sample(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    stem = _checkpoint_stem(args.checkpoint)
    model = diffusion.DiffusionModel.load(stem)
    den_cfg = real = None
    if args.monitor:
        metric = MetricKind(args.monitor)
        meta_path = Path(str(stem) + ".meta.json")
        if not meta_path.exists():
            raise FileNotFoundError(f"monitored sampling needs {meta_path}")
        meta = json.loads(meta_path.read_text())
        ds = evaluation.load_corpus(cfg)
        split = evaluation.make_split(ds, meta["participant"], cfg)
        real, _ = evaluation.class_windows(split, ds.label_by_name(meta["class"]))
        sigma, target = meta.get("sigma"), meta.get("target_range")
        if metric is MetricKind.COPT_GAK:
            if args.calibration:
                cal = gak.GakCalibration.from_json(Path(args.calibration).read_text())
                sigma, target = cal.sigma, cal.target_range
            if sigma is None:
                raise ValueError("C-Opt GAK monitoring needs --calibration or a GAK-trained "
                                 "checkpoint")
            target = tuple(target)
        den_cfg = cfg.denoise_monitor(metric, sigma, target)
    outcome = monitor.sample_with_monitor(model, args.batch, args.seed, real, den_cfg)
    name = args.name or stem.name
    windows = outcome.windows
    with open(out / f"{name}_samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "channel", *[f"t{i}" for i in range(windows.shape[-1])]])
        for i, win in enumerate(windows):
            for c, row in enumerate(win):
                w.writerow([i, c, *[repr(float(v)) for v in row]])
    info = {"checkpoint": str(stem), "batch": args.batch, "seed": args.seed,
            "monitor": args.monitor, "steps_used": outcome.steps_used,
            "returned_step": outcome.returned_step, "T": model.T,
            "stopped_at": outcome.trace.stopped_at}
    (out / f"{name}_sample.json").write_text(json.dumps(info, indent=2) + "\n")
    if den_cfg is not None:
        outcome.trace.write_csv(out / f"{name}_denoise_trace.csv")
    print(out)


def cmd_experiment(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    participants = None if args.participant is None else [args.participant]
    report = evaluation.losocv_experiment(cfg, participants=participants,
                                          log=None if args.quiet else _note)
    report.write(out)
    for s in report.set_names:
        _note(f"{s}: mean macro F1 {report.mean_f1(s):.3f}")
    if report.failures:
        _note(f"note: {len(report.failures)} partial failures recorded in report.json")
    print(out)


def cmd_published_reduction(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    rows = evaluation.published_reductions()
    evaluation.write_reduction_csv(out / "reduction.csv", rows, evaluation.PUBLISHED_USAGE,
                                   ["Walking", "Running", "JumpUp", "Cycling"])
    for k, r in rows.items():
        print(f"{k}: mean {r.mean_epochs:.2f} reduction {r.reduction_pct:.2f}% "
              f"saved {r.saved_epochs:.0f} over {r.models} models")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: $DIFFMONITOR_CONFIG)")
    common.add_argument("--preset", choices=sorted(config.PRESETS))
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--out", help="output directory (default: config out_dir)")

    parser = argparse.ArgumentParser(prog="diffmonitor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth-data", parents=[common], help="write the synthetic corpus as CSVs")

    p = sub.add_parser("calibrate", parents=[common], help="calibrate GAK sigma per split and class")
    p.add_argument("--participant", type=int, help="held-out participant (default: all)")
    p.add_argument("--class", dest="label", help="activity class (default: all)")

    p = sub.add_parser("train", parents=[common], help="train diffusion models")
    p.add_argument("--participant", type=int)
    p.add_argument("--class", dest="label")
    p.add_argument("--metric", choices=[m.value for m in MetricKind],
                   help="single training monitor (default: config monitor_metrics)")
    p.add_argument("--no-monitor", action="store_true", help="train to max_epochs unmonitored")

    p = sub.add_parser("sample", parents=[common], help="sample from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--monitor", choices=[m.value for m in MetricKind],
                   help="attach a denoising monitor")
    p.add_argument("--calibration", help="calibration JSON for C-Opt GAK monitoring")
    p.add_argument("--name", help="output file prefix (default: checkpoint name)")

    p = sub.add_parser("experiment", parents=[common], help="full LOSOCV evaluation")
    p.add_argument("--participant", type=int, help="run a single held-out participant")
    p.add_argument("--quiet", action="store_true")

    sub.add_parser("published-reduction", parents=[common],
                   help="recompute epoch reductions from the published usage table")
    return parser


COMMANDS = {
    "synth-data": cmd_synth_data,
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "sample": cmd_sample,
    "experiment": cmd_experiment,
    "published-reduction": cmd_published_reduction,
}


def _one_line(exc: BaseException) -> str:
    text = str(exc) if not isinstance(exc, KeyError) else str(exc.args[0]) if exc.args else ""
    return " ".join(text.split()) or type(exc).__name__


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config.load(args.config, args.overrides, args.preset)
    except ConfigError as exc:
        print(f"diffmonitor: error: config: {_one_line(exc)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"diffmonitor: error: config: {_one_line(exc)}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"diffmonitor: error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
