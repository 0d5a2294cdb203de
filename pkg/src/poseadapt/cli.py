"""Command-line entry point: ``poseadapt {synth,calibrate,run,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from .config import Experiment, load_experiment
from .errors import ConfigError, MismatchedSlices, MissingFile, PoseAdaptError
from .evaluation import calibrate_thresholds
from .ingest import load_tracks, write_tracks
from .pipeline import OfflineModel, read_metrics_csv, replay, train_offline
from .synth import generate_tracks

log = logging.getLogger("poseadapt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
REPORT_METRICS = ("auc_roc", "auc_pr", "f1_at_thrF1", "hprs_at_thrHPRS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args, exp: Experiment | None) -> str:
    out = args.out or (exp.paths.get("out") if exp else None)
    if not out:
        raise ConfigError("no output directory: pass --out or set [paths] out")
    os.makedirs(out, exist_ok=True)
    return out


def _load(args, require_synth=False) -> Experiment:
    if not args.config:
        raise UsageError("--config is required")
    exp = load_experiment(args.config, require_synth=require_synth)
    if args.seed is not None:
        exp = exp.with_seed(args.seed)
    return exp


def _echo_config(exp: Experiment, out: str) -> None:
    with open(os.path.join(out, "config_effective.ini"), "w", encoding="utf-8") as fh:
        fh.write(exp.to_ini())


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(args) -> int:
    exp = _load(args, require_synth=True)
    out = _out_dir(args, exp)
    write_tracks(generate_tracks(exp.synth), os.path.join(out, "stream.jsonl"))
    write_tracks(generate_tracks(exp.calibration), os.path.join(out, "train_stream.jsonl"))
    _echo_config(exp, out)
    print(f"wrote {os.path.join(out, 'stream.jsonl')} and train_stream.jsonl")
    return EXIT_OK


def _read_validation_scores(path: str):
    if not os.path.exists(path):
        raise MissingFile(f"validation scores {path} do not exist")
    scores, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"score", "label"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
        for row in reader:
            scores.append(float(row["score"]))
            labels.append(int(row["label"]))
    return np.array(scores), np.array(labels)


def _train_tracks(exp: Experiment):
    path = exp.run.train_stream_path
    if path:
        return load_tracks(path)
    if exp.calibration is None:
        raise ConfigError("need [paths] train_stream or a [synth] section to build a training stream")
    return generate_tracks(exp.calibration)


def _offline_model(exp: Experiment) -> OfflineModel:
    return train_offline(_train_tracks(exp), exp.run)


def _write_offline(model: OfflineModel, out: str) -> None:
    _write_json(os.path.join(out, "thresholds.json"), model.thresholds.to_dict())
    os.makedirs(os.path.join(out, "weights"), exist_ok=True)
    _write_json(os.path.join(out, "weights", "v0.json"), model.weights.to_dict())


def cmd_calibrate(args) -> int:
    exp = _load(args)
    out = _out_dir(args, exp)
    vpath = exp.paths.get("validation_scores")
    if vpath:
        thr = calibrate_thresholds(*_read_validation_scores(vpath))
        _write_json(os.path.join(out, "thresholds.json"), thr.to_dict())
    else:
        model = _offline_model(exp)
        _write_offline(model, out)
        thr = model.thresholds
    _echo_config(exp, out)
    print(f"thr_F1={thr.thr_f1!r} (F1={thr.best_f1:.4f})  thr_HPRS={thr.thr_hprs!r} (H_PRS={thr.best_hprs:.4f})")
    return EXIT_OK


def cmd_run(args) -> int:
    exp = _load(args)
    out = _out_dir(args, exp)
    mode = args.mode or "periodic"
    model = _offline_model(exp)
    if exp.run.stream_path:
        tracks = load_tracks(exp.run.stream_path)
    elif exp.synth is not None:
        tracks = generate_tracks(exp.synth)
    else:
        raise ConfigError("need [paths] stream or a [synth] section")
    res = replay(tracks, model, exp.run, mode, out_dir=out)
    _write_offline(model, out)
    _echo_config(exp, out)
    s = res.summary()
    print(f"{mode}: {s['num_slices']} slices, mean AUC-ROC {s['mean_auc_roc']:.4f}, "
          f"mean AUC-PR {s['mean_auc_pr']:.4f}, versions {s['versions']}")
    return EXIT_OK


def compare_runs(offline_rows: Sequence[dict], periodic_rows: Sequence[dict]) -> dict:
    """Per slice and metric winner plus strict win rates (ties counted separately)."""
    a = [r["slice_index"] for r in offline_rows]
    b = [r["slice_index"] for r in periodic_rows]
    if a != b:
        raise MismatchedSlices(f"slice axes differ: offline {a[:5]}... ({len(a)}) vs "
                               f"periodic {b[:5]}... ({len(b)})")
    table, rates = [], {}
    for m in REPORT_METRICS:
        wins = ties = losses = undefined = 0
        for ro, rp in zip(offline_rows, periodic_rows):
            vo, vp = ro[m], rp[m]
            if vo is None or vp is None:
                winner = "undefined"
                undefined += 1
            elif vp > vo:
                winner, wins = "periodic", wins + 1
            elif vp < vo:
                winner, losses = "offline", losses + 1
            else:
                winner, ties = "tie", ties + 1
            table.append({"slice_index": ro["slice_index"], "metric": m, "offline": vo,
                          "periodic": vp, "winner": winner})
        n = len(offline_rows)
        rates[m] = {"win_rate": wins / n if n else 0.0, "wins": wins, "ties": ties,
                    "losses": losses, "undefined": undefined, "slices": n}
    return {"table": table, "win_rates": rates}


def _cell(v) -> str:
    return "NA" if v is None else (repr(v) if isinstance(v, float) else str(v))


def cmd_report(args) -> int:
    if not args.offline or not args.periodic:
        raise UsageError("report needs OFFLINE_METRICS and PERIODIC_METRICS")
    for p in (args.offline, args.periodic):
        if not os.path.exists(p):
            raise MissingFile(f"metrics file {p} does not exist")
    off, per = read_metrics_csv(args.offline), read_metrics_csv(args.periodic)
    cmp = compare_runs(off, per)
    out = args.out or os.path.dirname(os.path.abspath(args.periodic))
    os.makedirs(out, exist_ok=True)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("slice_index", "metric", "offline", "periodic", "winner"))
    for r in cmp["table"]:
        w.writerow([_cell(r[k]) for k in ("slice_index", "metric", "offline", "periodic", "winner")])
    with open(os.path.join(out, "comparison.csv"), "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())

    # plot-ready: one row per slice, one column per (mode, metric)
    with open(os.path.join(out, "trends.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slice_index"] + [f"{mode}_{m}" for mode in ("offline", "periodic")
                                      for m in REPORT_METRICS])
        for ro, rp in zip(off, per):
            w.writerow([ro["slice_index"]] + [_cell(r[m]) for r in (ro, rp) for m in REPORT_METRICS])
    _write_json(os.path.join(out, "win_rates.json"), cmp["win_rates"])

    print(f"{'slice':>5}  {'offline AUC-ROC':>15}  {'periodic AUC-ROC':>16}  winner")
    for r in cmp["table"]:
        if r["metric"] == "auc_roc":
            fmt = lambda v: "NA" if v is None else f"{v:.4f}"  # noqa: E731
            print(f"{r['slice_index']:>5}  {fmt(r['offline']):>15}  {fmt(r['periodic']):>16}  {r['winner']}")
    for m in ("auc_roc", "auc_pr"):
        s = cmp["win_rates"][m]
        print(f"{m}: periodic win rate {s['win_rate']:.3f} ({s['wins']} wins, {s['ties']} ties, "
              f"{s['losses']} losses of {s['slices']})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poseadapt", description="Periodic adaptation experiments on pose streams.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int, help="overrides every seed in the config")
        sp.add_argument("--out", metavar="DIR")

    common(sub.add_parser("synth", help="generate a synthetic pose stream"))
    common(sub.add_parser("calibrate", help="train weights v0 and calibrate thresholds"))
    run = sub.add_parser("run", help="replay a stream offline or with periodic adaptation")
    common(run)
    run.add_argument("--mode", choices=("offline", "periodic"), default="periodic")
    rep = sub.add_parser("report", help="compare offline and periodic run_metrics files")
    rep.add_argument("offline", nargs="?", metavar="OFFLINE_METRICS")
    rep.add_argument("periodic", nargs="?", metavar="PERIODIC_METRICS")
    rep.add_argument("--out", metavar="DIR")
    return p


COMMANDS = {"synth": cmd_synth, "calibrate": cmd_calibrate, "run": cmd_run, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("missing command (synth, calibrate, run, report)")
    except UsageError as exc:
        print(f"poseadapt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"poseadapt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PoseAdaptError as exc:
        print(f"poseadapt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"poseadapt: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
