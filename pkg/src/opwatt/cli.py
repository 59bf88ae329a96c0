"""Command-line entry point: ``opwatt <command> [options]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .attribution import UnphysicalModelError, absolute_power, attribute_interval, estimate_csv, parse_estimate_csv
from .config import ConfigError, RunConfig, load_config
from .experiments import KINDS, replications_csv, run_experiment, summary_csv, trend_ok
from .inference import epoch_windows, fit_epoch_mapper, load_mapper, predict_epoch, predictions_csv, save_mapper
from .preprocess import PipelineReport, preprocess_pipeline
from .regress.cv import nested_cv
from .regress.linear import LinearModel
from .regress.metrics import compute_metrics
from .regress.modelio import read_model, save_model
from .regress.registry import UnsupportedFamilyError
from .report import build_report
from .segmentation import build_segments, dataset_from_traces, featurize, trace_intervals, write_samples_csv
from .simulator import simulate_runs, write_truth
from .trace import TraceLog, read_trace, write_trace

log = logging.getLogger("opwatt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, seeds: Sequence[int], outputs: Sequence[Path],
                   inputs: Sequence[Path] = ()) -> Path:
    doc = {
        "tool": "opwatt",
        "version": __version__,
        "command": command,
        "config_hash": cfg.hash(),
        "seeds": [int(s) for s in seeds],
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def _trace_paths(items: Sequence[str]) -> list[Path]:
    paths: list[Path] = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("*.trace"))
            if not found:
                raise FileNotFoundError(f"no *.trace files in {p}")
            paths.extend(found)
        elif p.exists():
            paths.append(p)
        else:
            raise FileNotFoundError(f"no such trace: {p}")
    if not paths:
        raise UsageError("at least one trace file or directory is required")
    return paths


def _load_traces(items: Sequence[str]) -> tuple[list[Path], list[TraceLog]]:
    paths = _trace_paths(items)
    logs = []
    for p in paths:
        try:
            logs.append(read_trace(p))
        except ValueError as exc:
            raise type(exc)(f"{p}: {exc}") from exc
    energies = {lg.device.e_per_percent for lg in logs}
    if len(energies) > 1:
        raise ValueError(f"traces disagree on e1pct_j: {sorted(energies)}")
    return paths, logs


def _emit(out: Path, name: str, text: str, made: list[Path]) -> Path:
    p = out / name
    p.write_text(text)
    made.append(p)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig, out: Path) -> int:
    if args.scenario:
        cfg.scenario, cfg.operators = args.scenario, None
    if args.intervals is not None:
        cfg.intervals = args.intervals
    if args.zero_noise:
        cfg.zero_noise = True
    cfg.validate()
    label = (cfg.scenario or "custom").replace(" ", "").replace(",", "_").replace(":", "-")
    runs = simulate_runs(cfg.workload(), cfg.battery_spec(), cfg.noise_spec(), cfg.intervals,
                         cfg.poll_interval_ms, label=label)
    made: list[Path] = []
    durations = []
    for i, (trace, truth) in enumerate(runs):
        _emit(out, f"sim-{i:03d}.trace", write_trace(trace), made)
        _emit(out, f"sim-{i:03d}.truth", write_truth(truth), made)
        durations.extend(iv.duration_s for iv in truth.interval_ledger)
    write_manifest(out, "simulate", cfg, [cfg.seed], made)
    print(f"intervals: {len(durations)}  mean duration: {np.mean(durations):.3f} s  traces: {len(runs)}")
    return EXIT_OK


def _dataset(cfg: RunConfig, logs, preprocess: bool):
    intervals, samples, schema = dataset_from_traces(logs, expand_counts=cfg.expand_counts)
    if not samples:
        raise ValueError("traces contain no complete discharge intervals")
    report = PipelineReport()
    if preprocess:
        samples, report = preprocess_pipeline(intervals, samples, cfg.preprocess.to_config(), schema)
    return intervals, samples, schema, report


def _filter_csv(report: PipelineReport, n_in: int, n_out: int) -> str:
    return report.to_csv() + f"# summary input={n_in} kept={n_out} removed={n_in - n_out}\n"


def cmd_ingest(args, cfg: RunConfig, out: Path) -> int:
    paths, logs = _load_traces(args.traces)
    pre = cfg.preprocess.enabled and not args.no_preprocess
    intervals, samples, schema, report = _dataset(cfg, logs, pre)
    made: list[Path] = []
    _emit(out, "samples.csv", write_samples_csv(samples, schema), made)
    _emit(out, "filter_report.csv", _filter_csv(report, len(intervals), len(samples)), made)
    write_manifest(out, "ingest", cfg, [cfg.seed], made, paths)
    print(f"intervals: {len(intervals)}  kept: {len(samples)}  operators: {','.join(schema) or '-'}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    paths, logs = _load_traces(args.traces)
    if args.n_jobs is not None:
        cfg.cv.n_jobs = args.n_jobs
    pre = cfg.preprocess.enabled and not args.no_preprocess
    intervals, samples, schema, prep = _dataset(cfg, logs, pre)
    report = nested_cv(samples, grid={"svr": cfg.svr_grid()}, outer=cfg.cv.outer, inner=cfg.cv.inner,
                       seed=cfg.seed, schema=schema, n_jobs=cfg.cv.n_jobs)
    chosen = report.final_models[report.chosen]
    e1 = logs[0].device.e_per_percent
    labels = sorted({lg.device.label for lg in logs if lg.device.label})
    kept = {s.interval_ref for s in samples}
    made: list[Path] = []
    X = np.array([s.vector(schema) for s in samples])
    y = np.array([s.target_s for s in samples])
    train_rmse = {}
    for fam, model in report.final_models.items():
        model.metadata.update(e_per_percent=e1, trace_labels=labels, expand_counts=cfg.expand_counts)
        train_rmse[fam] = compute_metrics(model.predict(X), y).rmse_s
        model.metadata["train_rmse_s"] = train_rmse[fam]
        _emit(out, f"model-{fam}.json", save_model(model), made)
    _emit(out, "model.json", save_model(chosen), made)
    summary = report.summary()
    summary["train_rmse_s"] = train_rmse
    _emit(out, "cv_report.json", json.dumps(summary, sort_keys=True, indent=1) + "\n", made)
    _emit(out, "filter_report.csv", _filter_csv(prep, len(intervals), len(samples)), made)
    _emit(out, "samples.csv", write_samples_csv(samples, schema), made)
    kept_ivs = [iv for iv in intervals if iv.index in kept]
    if not cfg.expand_counts and len(kept_ivs) >= 10 and schema:
        _emit(out, "mapper.json", save_mapper(fit_epoch_mapper(kept_ivs, schema)), made)
    write_manifest(out, "train", cfg, [cfg.seed], made, paths)
    lin, svr = report.mean_rmse("linear"), report.mean_rmse("svr")
    print(f"samples: {len(samples)}/{len(intervals)}  linear RMSE {lin:.4g} s  SVR RMSE {svr:.4g} s  "
          f"gain {100 * report.selection_gain:.1f}%  chosen: {report.chosen}  "
          f"train RMSE {train_rmse[report.chosen]:.4g} s")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> int:
    model = read_model(args.model)
    paths, logs = _load_traces(args.traces)
    intervals = []
    for lg in logs:
        intervals.extend(trace_intervals(lg, first_index=len(intervals)))
    if not intervals:
        raise ValueError("held-out traces contain no complete discharge intervals")
    expand = bool(model.metadata.get("expand_counts", False))
    try:
        samples = [featurize(iv, model.schema, expand) for iv in intervals]
    except KeyError as exc:
        raise ValueError(f"trace/model schema mismatch: {exc.args[0]}") from None
    pred = model.predict(samples)
    actual = np.array([s.target_s for s in samples])
    metrics = compute_metrics(pred, actual)
    made: list[Path] = []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["interval", "actual_s", "predicted_s", "error_s"])
    for s, p in zip(samples, pred):
        w.writerow([s.interval_ref, repr(s.target_s), repr(float(p)), repr(float(p) - s.target_s)])
    _emit(out, "predictions.csv", buf.getvalue(), made)
    _emit(out, "metrics.json", json.dumps({"family": model.family, **metrics.as_dict()}, sort_keys=True, indent=1) + "\n",
          made)
    write_manifest(out, "evaluate", cfg, [cfg.seed], made, [Path(args.model), *paths])
    print(f"n: {metrics.n}  RMSE {metrics.rmse_s:.4g} s  accuracy {metrics.accuracy_pct:.2f}%  R2 {metrics.r2:.4f}")
    return EXIT_OK


def _linear_model(path: str) -> LinearModel:
    model = read_model(path)
    if not isinstance(model, LinearModel):
        sibling = Path(path).with_name("model-linear.json")
        if sibling.exists():
            log.info("%s is %s; using %s for power attribution", path, model.family, sibling)
            model = read_model(sibling)
        else:
            raise ValueError("power attribution needs a linear model")
    return model


def cmd_attribute(args, cfg: RunConfig, out: Path) -> int:
    model = _linear_model(args.model)
    paths: list[Path] = []
    ledgers = []
    e1 = args.e1pct or model.metadata.get("e_per_percent")
    if args.traces:
        paths, logs = _load_traces(args.traces)
        e1 = args.e1pct or logs[0].device.e_per_percent
    if e1 is None:
        raise ConfigError("energy per percent unknown: pass --e1pct or a trace")
    estimate = absolute_power(model, float(e1))
    made: list[Path] = []
    if paths:
        intervals = []
        for lg in logs:
            intervals.extend(trace_intervals(lg, first_index=len(intervals)))
        ledgers = [attribute_interval(estimate, iv) for iv in intervals]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["interval", "start_s", "end_s", "active", "power_w", "energy_j"])
        for lg in ledgers:
            for e in lg.entries:
                w.writerow([lg.interval, repr(e.start_s), repr(e.end_s), e.active.render(), repr(e.power_w),
                            repr(e.energy_j)])
        _emit(out, "ledger.csv", buf.getvalue(), made)
    _emit(out, "attribution.csv", estimate_csv(estimate, ledgers), made)
    write_manifest(out, "attribute", cfg, [cfg.seed], made, [Path(args.model), *paths])
    print(f"p_idle {estimate.p_idle_w:.4f} W")
    for k, op in estimate.per_operator.items():
        print(f"  {k}: relative {op.relative_power:.4f}  absolute {op.absolute_power_w:.4f} W  "
              f"dyn {op.dyn_power_w:.4f} W  [{op.flag}]")
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig, out: Path) -> int:
    model = read_model(args.model)
    mapper_path = Path(args.mapper) if args.mapper else Path(args.model).with_name("mapper.json")
    if not mapper_path.exists():
        raise FileNotFoundError(f"epoch mapper not found: {mapper_path}")
    mapper = load_mapper(mapper_path.read_text())
    paths, logs = _load_traces([args.trace])
    trace = logs[0]
    labels = model.metadata.get("trace_labels") or []
    if labels and trace.device.label and trace.device.label not in labels:
        warnings.warn(f"trace label {trace.device.label!r} differs from the model's training traces {labels}; "
                      "the model may be stale", UserWarning, stacklevel=1)
    estimate = None
    if args.estimate:
        estimate = parse_estimate_csv(Path(args.estimate).read_text())
    elif isinstance(model, LinearModel):
        estimate = absolute_power(model, trace.device.e_per_percent)
    epoch_len = args.epoch_len or cfg.epoch_len_s
    segments = build_segments(trace)
    rows = []
    for end_ms, window in epoch_windows(segments, epoch_len):
        p = predict_epoch(mapper, model, estimate, window, epoch_len, trace.device.e_per_percent)
        rows.append((end_ms / 1000.0, p))
    if not rows:
        raise ValueError("trace is shorter than one epoch")
    ops = list(model.schema) if isinstance(model, LinearModel) and estimate is not None else []
    made: list[Path] = []
    _emit(out, "epochs.csv", predictions_csv(rows, ops), made)
    write_manifest(out, "predict", cfg, [cfg.seed], made, [Path(args.model), mapper_path, *paths])
    avg = np.mean([p.predicted_avg_power_w for _, p in rows])
    print(f"epochs: {len(rows)}  mean predicted power {avg:.4f} W")
    return EXIT_OK


def cmd_experiment(args, cfg: RunConfig, out: Path) -> int:
    if args.replications is not None:
        cfg.experiment.replications = args.replications
    if args.n_jobs is not None:
        cfg.experiment.n_jobs = args.n_jobs
    cfg.validate()
    result = run_experiment(args.kind, cfg)
    made: list[Path] = []
    _emit(out, f"experiment-{args.kind}.csv", summary_csv(result), made)
    _emit(out, f"experiment-{args.kind}-replications.csv", replications_csv(result), made)
    write_manifest(out, f"experiment {args.kind}", cfg, result.seeds, made)
    for row in result.summary_rows():
        print(f"  {result.axis}={row[result.axis]:g}: linear {row['linear_rmse_s']:.3f} s  "
              f"SVR {row['svr_rmse_s']:.3f} s  gain {row['gain_pct']:.1f} +/- {row['gain_std_pct']:.1f}%")
    print(f"trend non-decreasing (one inversion <= 2% allowed): {trend_ok(result.gains())}")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig, out: Path) -> int:
    run = Path(args.run_dir) if args.run_dir else out
    made = build_report(run)
    for p in made:
        print(p)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "attribute": cmd_attribute,
    "predict": cmd_predict,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base seed (unsigned 64-bit)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="opwatt", description="Operator-level power attribution from battery discharge traces.",
                parents=[common])
    p.add_argument("--version", action="version", version=f"opwatt {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate a workload into trace + truth files")
    s.add_argument("--scenario")
    s.add_argument("--intervals", type=int)
    s.add_argument("--zero-noise", action="store_true")

    s = sub.add_parser("ingest", parents=[common], help="segment and filter traces into a samples CSV")
    s.add_argument("traces", nargs="+")
    s.add_argument("--no-preprocess", action="store_true")

    s = sub.add_parser("train", parents=[common], help="nested CV, model selection, model file")
    s.add_argument("traces", nargs="+")
    s.add_argument("--no-preprocess", action="store_true")
    s.add_argument("--n-jobs", type=int)

    s = sub.add_parser("evaluate", parents=[common], help="score a model on held-out traces")
    s.add_argument("--model", required=True)
    s.add_argument("traces", nargs="+")

    s = sub.add_parser("attribute", parents=[common], help="per-operator power from a linear model")
    s.add_argument("--model", required=True)
    s.add_argument("--e1pct", type=float, help="energy per 1%% SoC in joules (default: from trace or model)")
    s.add_argument("traces", nargs="*")

    s = sub.add_parser("predict", parents=[common], help="per-epoch predictions over a trace")
    s.add_argument("--model", required=True)
    s.add_argument("--estimate", help="attribution CSV (default: derived from a linear model)")
    s.add_argument("--mapper", help="epoch mapper JSON (default: mapper.json beside the model)")
    s.add_argument("--epoch-len", type=float)
    s.add_argument("trace")

    s = sub.add_parser("experiment", parents=[common], help="linear vs SVR gain sweep")
    s.add_argument("kind", choices=KINDS)
    s.add_argument("--replications", type=int)
    s.add_argument("--n-jobs", type=int)

    s = sub.add_parser("report", parents=[common], help="render SVG charts and an index for a run directory")
    s.add_argument("run_dir", nargs="?")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"opwatt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not verbose:
        warnings.simplefilter("ignore")
    try:
        cfg = load_config(getattr(args, "config", None), {"seed": getattr(args, "seed", None),
                                                          "out": getattr(args, "out", None)})
        out = Path(cfg.out)
        if args.command != "report":
            out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except (ConfigError, UsageError, UnsupportedFamilyError) as exc:
        print(f"opwatt: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError, UnphysicalModelError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"opwatt: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"opwatt: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
