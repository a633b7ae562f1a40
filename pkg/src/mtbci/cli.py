"""Command line entry point: ``mtbci <verb> ...``.

Exit codes: 0 success, 1 invalid input, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import features as feat
from .data import TaskCollection, TaskDataset, TrainConfig, load_collection, save_collection
from .errors import SolverError, ValidationError
from .harness import ALGORITHMS, MODES, export_topography, format_table, load_fit, report_json, run_loso, \
    run_session_transfer
from .synth import default_fd_scenario, default_flat_scenario

log = logging.getLogger("mtbci")


def _config(args, default_init="ridge_init") -> TrainConfig:
    config = TrainConfig.load(args.config) if args.config else TrainConfig(init_mode=default_init)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        changes["lam"] = args.lam
    if getattr(args, "init_mode", None):
        changes["init_mode"] = args.init_mode
    return config.replace(**changes) if changes else config


def _write(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _lambda_grid(args):
    if args.lambda_grid:
        return [float(v) for v in args.lambda_grid.split(",")]
    from .adaptation import DEFAULT_LAMBDA_GRID
    return DEFAULT_LAMBDA_GRID


def cmd_ingest(args):
    """Raw recordings -> trial CSVs + manifest.

    The ingest spec is JSON::

        {"montage": "montage.json", "bands": "bands.json" | "motor_imagery" | "named",
         "tasks": [{"id": "s01", "recording": "s01.csv",
                    "trials": [{"start": 3.0, "end": 10.0, "label": 1}, ...]}]}
    """
    spec_path = Path(args.spec)
    try:
        spec = json.loads(spec_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read ingest spec {spec_path}: {exc}") from exc
    base = spec_path.parent
    montage = feat.read_montage(base / spec["montage"]) if spec.get("montage") else {}
    bands_ref = spec.get("bands", "motor_imagery")
    if bands_ref == "motor_imagery":
        bands = feat.BandSpec.motor_imagery()
    elif bands_ref == "named":
        bands = feat.BandSpec.named()
    else:
        bands = feat.BandSpec.load(base / bands_ref)
    tasks = []
    for entry in spec["tasks"]:
        rec = feat.read_recording_csv(base / entry["recording"], montage)
        if montage and not args.no_laplacian:
            rec = feat.surface_laplacian(rec)
        mats = [feat.extract_trial_features(rec, (t["start"], t["end"]), bands) for t in entry["trials"]]
        labels = [t["label"] for t in entry["trials"]]
        tasks.append(TaskDataset(str(entry["id"]), np.array(mats), np.array(labels), rec.channel_names))
    manifest = save_collection(TaskCollection(tuple(tasks), bands.labels), args.out)
    log.info("wrote %s", manifest)


def cmd_synth(args):
    if args.kind == "fd":
        collection, truths, alpha, w = default_fd_scenario(seed=args.seed, E=args.electrodes, F=args.features,
                                                           S=args.tasks, n_per_task=args.trials,
                                                           noise_sigma=args.noise)
        truth = {"alpha_star": alpha.tolist(), "w_star": w.tolist(),
                 "tasks": [{"alpha": a.tolist(), "w": v.tolist()} for a, v in truths]}
    else:
        collection, truths, mu, cov = default_flat_scenario(seed=args.seed, d=args.electrodes * args.features,
                                                            S=args.tasks, n_per_task=args.trials,
                                                            noise_sigma=args.noise)
        e, f = args.electrodes, args.features
        collection = TaskCollection(tuple(TaskDataset(t.task_id, t.features.reshape(-1, e, f), t.labels)
                                          for t in collection))
        truth = {"mu_star": mu.tolist(), "sigma_star": cov.tolist(), "tasks": truths.tolist()}
    manifest = save_collection(collection, args.out)
    (Path(args.out) / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    log.info("wrote %s", manifest)


def cmd_train(args):
    from .core import train_multitask
    from .fd import train_multitask_fd
    collection = load_collection(args.manifest)
    config = _config(args)
    fit = train_multitask(collection, config) if args.algorithm == "mt" else train_multitask_fd(collection, config)
    _write(fit.to_json() + "\n", args.out)


def cmd_loso(args):
    collection = load_collection(args.manifest)
    config = _config(args, default_init="ridge_init")
    grid = [int(v) for v in args.trials.split(",")]
    report = run_loso(collection, args.algorithm, args.mode, grid, config, seed=args.seed or 0,
                      lambda_grid=_lambda_grid(args), cv_folds=args.folds, workers=args.workers)
    _write(report_json(report), args.out)
    if args.table:
        _write(format_table(report), args.table if args.table != "-" else None)


def cmd_sessions(args):
    collection = load_collection(args.manifest)
    config = _config(args, default_init="uninformative")
    report = run_session_transfer(collection, args.algorithm, args.mode, config,
                                  adapt_block_size=args.adapt_block_size, seed=args.seed or 0,
                                  lambda_grid=_lambda_grid(args), cv_folds=args.folds)
    _write(report_json(report), args.out)
    if args.table:
        _write(format_table(report), args.table if args.table != "-" else None)


def cmd_export_topo(args):
    fit = load_fit(args.fit)
    if fit.kind != "mt_fd":
        raise ValidationError("export-topo needs a bilinear (mt_fd) fit")
    e, f = fit.shape
    names, bands = None, None
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        names = manifest.get("electrode_names")
        bands = manifest.get("band_labels")
    names = names or [f"ch_{i}" for i in range(e)]
    bands = bands or [f"band_{j}" for j in range(f)]
    export_topography(fit, names, bands, args.out, svg_path=args.svg)


def _common(p, manifest=True):
    if manifest:
        p.add_argument("--manifest", required=True, help="collection manifest JSON")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output path (default: stdout)")


def _protocol(p):
    p.add_argument("--algorithm", choices=ALGORITHMS, default="mt_fd")
    p.add_argument("--mode", choices=MODES, default="single")
    p.add_argument("--lambda", dest="lam", type=float, help="override config lambda for prior learning")
    p.add_argument("--init-mode", choices=("uninformative", "ridge_init"))
    p.add_argument("--lambda-grid", help="comma-separated adaptation lambda grid")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--table", help="also write an aligned text table ('-' for stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtbci", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="extract log-bandpower features from raw recordings")
    p.add_argument("--spec", required=True, help="ingest spec JSON (recordings, trial windows, labels)")
    p.add_argument("--out", required=True, help="output directory for trial CSVs and manifest")
    p.add_argument("--no-laplacian", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a planted synthetic collection")
    p.add_argument("--kind", choices=("flat", "fd"), default="fd")
    p.add_argument("--electrodes", type=int, default=5)
    p.add_argument("--features", type=int, default=4)
    p.add_argument("--tasks", type=int, default=10)
    p.add_argument("--trials", type=int, default=300)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="learn a shared prior from all tasks")
    _common(p)
    p.add_argument("--algorithm", choices=("mt", "mt_fd"), default="mt_fd")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--init-mode", choices=("uninformative", "ridge_init"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("loso", help="leave-one-task-out learning curves")
    _common(p)
    _protocol(p)
    p.add_argument("--trials", default="0,10,25,50,100", help="comma-separated trials per class")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("sessions", help="sequential session-to-session transfer")
    _common(p)
    _protocol(p)
    p.add_argument("--adapt-block-size", type=int, default=20)
    p.set_defaults(func=cmd_sessions)

    p = sub.add_parser("export-topo", help="export spatial and spectral prior means")
    p.add_argument("--fit", required=True, help="fit JSON written by 'train --algorithm mt_fd'")
    p.add_argument("--manifest", help="manifest supplying electrode_names / band_labels")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--svg", help="optional SVG bar plot path")
    p.set_defaults(func=cmd_export_topo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
