"""Command-line surface: synth, mask, train, reconstruct, evaluate, sweep,
importance.

Exit codes: 0 success, 1 usage error, 2 data error. Tabular results are CSV
with headers on stdout (or the requested output file); diagnostics and the
run manifest go to stderr. Every stochastic command requires an explicit
--seed, and every command is deterministic given its flags and inputs,
independent of --threads.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time

import numpy as np

from . import __version__
from .errors import StgapError
from .evaluation import (
    HiddenTruth,
    MaskSpec,
    achieved_ratio,
    apply_mask,
    metrics,
    per_day_report,
    sweep,
    write_reports,
)
from .gbt import GbtParams
from .grid import load_aux, load_cube, save_aux, save_cube
from .models import (
    MODEL_KINDS,
    RfParams,
    fit_model,
    fitted_importance,
    load_fitted,
    model_config,
    reconstruct,
    save_fitted,
)
from .smoothing import SgParams, sg_smooth_cube
from .synth import SceneSpec, generate_scene


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1 (argparse's default would be 2, which is
    # reserved for data errors here)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fraction(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {text}")
    return value


def _rate(text):
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {text}")
    return value


def _pos_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _nonneg_float(text):
    value = float(text)
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _pos_float(text):
    value = float(text)
    if value <= 0.0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _odd_window(text):
    value = int(text)
    if value < 3 or value % 2 == 0:
        raise argparse.ArgumentTypeError(f"must be odd and >= 3, got {text}")
    return value


def _grid_json(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON ({exc})")


def _add_gbt_flags(sub):
    sub.add_argument("--learning-rate", type=_rate, default=0.1)
    sub.add_argument("--max-depth", type=_nonneg_int, default=None,
                     help="tree depth limit (default 6, or 12 for rf)")
    sub.add_argument("--n-estimators", type=_pos_int, default=None,
                     help="boosting rounds (default 200, or 60 rf trees)")
    sub.add_argument("--lambda", dest="reg_lambda", type=_nonneg_float,
                     default=1.0, help="leaf weight regularization")
    sub.add_argument("--gamma", type=_nonneg_float, default=0.0,
                     help="minimum gain to split")


def _add_window_flags(sub):
    sub.add_argument("--sw", type=_pos_int, default=1,
                     help="spatial neighbor half-width, cells")
    sub.add_argument("--tw", type=_pos_int, default=1,
                     help="temporal neighbor half-width, slices")


def _config_from_args(args):
    gbt_params = GbtParams(
        n_estimators=args.n_estimators or 200,
        learning_rate=args.learning_rate,
        max_depth=6 if args.max_depth is None else args.max_depth,
        reg_lambda=args.reg_lambda,
        gamma=args.gamma,
    )
    rf_params = RfParams(
        n_trees=args.n_estimators or 60,
        max_depth=12 if args.max_depth is None else args.max_depth,
    )
    return model_config(args.model, sw=args.sw, tw=args.tw,
                        gbt_params=gbt_params, rf_params=rf_params)


def _report_sink(path):
    if path is None:
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _write_table(path, rows_writer):
    fh, close = _report_sink(path)
    try:
        rows_writer(fh)
    finally:
        if close:
            fh.close()


# --- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    spec = SceneSpec(
        rows=args.rows, cols=args.cols, n_days=args.frames, seed=args.seed,
        noise_sigma=args.noise_sigma, corr_len=args.corr_len,
        relief=args.relief, day_start=args.day_start,
        value_range=tuple(args.value_range), tile_id=args.tile_id,
    )
    cube, aux = generate_scene(spec)
    save_cube(cube, args.out)
    save_aux(aux, args.aux)
    print(f"synth: wrote {cube.shape[0]}x{cube.shape[1]}x{cube.shape[2]} scene "
          f"'{cube.tile_id}'", file=sys.stderr)
    return {}, {"cube": args.out, "aux": args.aux}


def cmd_mask(args):
    cube = load_cube(args.cube)
    spec = MaskSpec(kind=args.kind, ratio=args.ratio, seed=args.seed,
                    corr_len=args.corr_len)
    masked, hidden = apply_mask(cube, spec)
    save_cube(masked, args.out)
    with open(args.truth, "w", encoding="utf-8", newline="") as fh:
        hidden.to_csv(fh)
    print(f"mask: hid {len(hidden)} cells "
          f"(achieved ratio {achieved_ratio(cube, masked):.6f})",
          file=sys.stderr)
    return {"cube": args.cube}, {"cube": args.out, "truth": args.truth}


def cmd_train(args):
    cube = load_cube(args.cube)
    aux = load_aux(args.aux)
    config = _config_from_args(args)
    fitted, report = fit_model(cube, aux, config, args.train_fraction,
                               args.seed, threads=args.threads)
    save_fitted(fitted, args.out)
    _write_table(args.report, lambda fh: write_reports([report], fh))
    print(f"train: {args.model} held-out r2 {report.r2:.4f} "
          f"rmse {report.rmse:.4f} on {report.n} rows", file=sys.stderr)
    return {"cube": args.cube, "aux": args.aux}, {"model": args.out}


def cmd_reconstruct(args):
    cube = load_cube(args.cube)
    aux = load_aux(args.aux)
    fitted = load_fitted(args.model_file)
    mode = "iterative" if args.iterative else "single"
    rec = reconstruct(cube, aux, fitted, mode=mode, threads=args.threads)
    if not args.no_sg:
        params = SgParams(window=args.sg_window, polyorder=args.sg_order,
                          pin_observed=args.sg_pin)
        rec = sg_smooth_cube(rec, cube.valid, params)
    save_cube(rec, args.out)
    filled = int(cube.valid.size - cube.valid.sum())
    print(f"reconstruct: filled {filled} cells with {fitted.kind}"
          f"{'' if args.no_sg else ' + smoothing'}", file=sys.stderr)
    return ({"cube": args.cube, "aux": args.aux, "model": args.model_file},
            {"cube": args.out})


def cmd_evaluate(args):
    pred = load_cube(args.pred)
    reports = []
    if args.truth is not None:
        with open(args.truth, encoding="utf-8", newline="") as fh:
            hidden = HiddenTruth.from_csv(fh)
        T, R, C = pred.shape
        if ((hidden.t < 0).any() or (hidden.t >= T).any()
                or (hidden.m < 0).any() or (hidden.m >= R).any()
                or (hidden.n < 0).any() or (hidden.n >= C).any()):
            raise StgapError(
                f"{args.truth}: cell indices fall outside the "
                f"{T}x{R}x{C} prediction cube"
            )
        vals = pred.values[hidden.t, hidden.m, hidden.n].astype(np.float64)
        reports.append(metrics(vals, hidden.value, dataset=pred.tile_id,
                               axis="overall"))
        if args.per_day:
            reports.extend(per_day_report(pred, hidden))
        inputs = {"pred": args.pred, "truth": args.truth}
    else:
        truth = load_cube(args.truth_cube)
        if truth.shape != pred.shape:
            raise StgapError(
                f"truth cube {truth.shape} and prediction cube {pred.shape} "
                f"differ in shape"
            )
        cells = truth.valid & pred.valid
        if not cells.any():
            raise StgapError("no cell is valid in both cubes")
        reports.append(metrics(
            pred.values[cells].astype(np.float64),
            truth.values[cells].astype(np.float64),
            dataset=pred.tile_id, axis="overall",
        ))
        if args.per_day:
            reports.extend(per_day_report(pred, truth))
        inputs = {"pred": args.pred, "truth": args.truth_cube}
    _write_table(args.out, lambda fh: write_reports(reports, fh))
    return inputs, ({} if args.out is None else {"report": args.out})


def cmd_sweep(args):
    grid = args.grid
    if args.axis == "params":
        allowed = {"n_estimators", "learning_rate", "max_depth",
                   "reg_lambda", "gamma", "min_child_weight"}
        unknown = sorted(set(grid) - allowed) if isinstance(grid, dict) else []
        ok = (isinstance(grid, dict) and grid and not unknown
              and all(isinstance(v, list) and v for v in grid.values()))
        if not ok:
            problem = (f"unknown parameters {unknown}" if unknown
                       else "must be a JSON object mapping parameter names "
                            "to non-empty lists")
            args._sub.error(
                f"--grid for axis 'params': {problem}; "
                f"allowed names are {sorted(allowed)}"
            )
    elif args.axis == "windows":
        ok = (isinstance(grid, dict) and set(grid) == {"sw", "tw"}
              and all(isinstance(v, list) and v for v in grid.values()))
        if not ok:
            args._sub.error(
                "--grid for axis 'windows' must be a JSON object with "
                "non-empty 'sw' and 'tw' lists"
            )
    elif args.axis == "train-fraction":
        ok = (isinstance(grid, list) and grid
              and all(isinstance(v, (int, float)) and 0 < v < 1 for v in grid))
        if not ok:
            args._sub.error(
                "--grid for axis 'train-fraction' must be a non-empty JSON "
                "list of fractions in (0, 1)"
            )
    elif grid is not None:
        args._sub.error("--grid is not used with axis 'ablation'")
    cube = load_cube(args.cube)
    aux = load_aux(args.aux)
    base = _config_from_args(args)
    reports = sweep(cube, aux, args.axis, grid, args.seed, base_config=base,
                    train_fraction=args.train_fraction, threads=args.threads)
    _write_table(args.out, lambda fh: write_reports(reports, fh))
    print(f"sweep: {args.axis} axis, {len(reports)} points", file=sys.stderr)
    return ({"cube": args.cube, "aux": args.aux},
            {} if args.out is None else {"report": args.out})


def cmd_importance(args):
    fitted = load_fitted(args.model_file)
    pairs = fitted_importance(fitted)

    def write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "gain"])
        for name, gain in pairs:
            writer.writerow([name, repr(float(gain))])

    _write_table(args.out, write)
    return ({"model": args.model_file},
            {} if args.out is None else {"report": args.out})


# --- parser --------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="stgap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"stgap {__version__}")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)

    def common(sub, func, threads=False):
        sub.add_argument("--manifest", default=None,
                         help="also write the run manifest JSON to this file")
        if threads:
            sub.add_argument("--threads", type=_pos_int, default=1)
        sub.set_defaults(func=func, _sub=sub)

    sub = subs.add_parser("synth", help="generate a synthetic scene pair")
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--out", required=True, help="output cube file")
    sub.add_argument("--aux", required=True, help="output auxiliary stack file")
    sub.add_argument("--rows", type=_pos_int, default=64)
    sub.add_argument("--cols", type=_pos_int, default=64)
    sub.add_argument("--frames", type=_pos_int, default=60,
                     help="number of time slices")
    sub.add_argument("--noise-sigma", type=_nonneg_float, default=0.02)
    sub.add_argument("--corr-len", type=_pos_float, default=8.0)
    sub.add_argument("--relief", type=_pos_float, default=1200.0)
    sub.add_argument("--day-start", type=_pos_int, default=60)
    sub.add_argument("--value-range", type=float, nargs=2, default=(0.0, 1.0),
                     metavar=("LO", "HI"))
    sub.add_argument("--tile-id", default="synthetic")
    common(sub, cmd_synth)

    sub = subs.add_parser("mask", help="hide observed cells for scoring")
    sub.add_argument("--cube", required=True)
    sub.add_argument("--kind", choices=("uniform", "blob"), required=True)
    sub.add_argument("--ratio", type=_fraction, required=True)
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--corr-len", type=_pos_float, default=8.0)
    sub.add_argument("--out", required=True, help="masked cube file")
    sub.add_argument("--truth", required=True, help="hidden-truth CSV file")
    common(sub, cmd_mask)

    sub = subs.add_parser("train", help="fit a model and report held-out metrics")
    sub.add_argument("--cube", required=True)
    sub.add_argument("--aux", required=True)
    sub.add_argument("--model", choices=MODEL_KINDS, required=True)
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--out", required=True, help="model JSON file")
    sub.add_argument("--train-fraction", type=_fraction, default=0.7)
    sub.add_argument("--report", default=None,
                     help="write the report CSV here instead of stdout")
    _add_window_flags(sub)
    _add_gbt_flags(sub)
    common(sub, cmd_train, threads=True)

    sub = subs.add_parser("reconstruct", help="fill invalid cells with a model")
    sub.add_argument("--cube", required=True)
    sub.add_argument("--aux", required=True)
    sub.add_argument("--model-file", required=True)
    sub.add_argument("--out", required=True, help="reconstructed cube file")
    sub.add_argument("--iterative", action="store_true",
                     help="re-feed filled values into the neighbor features")
    sub.add_argument("--sg-window", type=_odd_window, default=7)
    sub.add_argument("--sg-order", type=_nonneg_int, default=2)
    sub.add_argument("--sg-pin", action=argparse.BooleanOptionalAction,
                     default=True,
                     help="keep observed cells bit-exact through smoothing")
    sub.add_argument("--no-sg", action="store_true",
                     help="skip the smoothing pass")
    common(sub, cmd_reconstruct, threads=True)

    sub = subs.add_parser("evaluate", help="score a cube against hidden truth")
    sub.add_argument("--pred", required=True, help="prediction cube file")
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument("--truth", default=None, help="hidden-truth CSV file")
    group.add_argument("--truth-cube", default=None, help="reference cube file")
    sub.add_argument("--per-day", action="store_true",
                     help="append one row per day")
    sub.add_argument("--out", default=None,
                     help="write the report CSV here instead of stdout")
    common(sub, cmd_evaluate)

    sub = subs.add_parser("sweep", help="evaluate a model across a grid")
    sub.add_argument("--cube", required=True)
    sub.add_argument("--aux", required=True)
    sub.add_argument("--axis", required=True,
                     choices=("params", "windows", "train-fraction", "ablation"))
    sub.add_argument("--grid", type=_grid_json, default=None,
                     help="JSON grid; see --axis for the expected shape")
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--model", choices=MODEL_KINDS, default="stxgb")
    sub.add_argument("--train-fraction", type=_fraction, default=0.7)
    sub.add_argument("--out", default=None,
                     help="write the report CSV here instead of stdout")
    _add_window_flags(sub)
    _add_gbt_flags(sub)
    common(sub, cmd_sweep, threads=True)

    sub = subs.add_parser("importance", help="rank a model's feature gains")
    sub.add_argument("--model-file", required=True)
    sub.add_argument("--out", default=None,
                     help="write the ranking CSV here instead of stdout")
    common(sub, cmd_importance)

    return parser


def _emit_manifest(args, argv, inputs, outputs, wall):
    settings = {
        k: (list(v) if isinstance(v, tuple) else v)
        for k, v in vars(args).items()
        if not k.startswith("_") and k not in ("func", "manifest")
        and not callable(v)
    }
    blob = json.dumps(settings, sort_keys=True, default=str)
    manifest = {
        "command": args.command,
        "argv": argv,
        "version": __version__,
        "config_sha256": hashlib.sha256(blob.encode("utf-8")).hexdigest(),
        "seeds": ({"seed": args.seed} if hasattr(args, "seed") else {}),
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": round(wall, 6),
    }
    text = json.dumps(manifest, sort_keys=True)
    print(text, file=sys.stderr)
    if args.manifest:
        with open(args.manifest, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.monotonic()
    try:
        inputs, outputs = args.func(args)
    except SystemExit as exc:
        # deferred flag validation inside a command (e.g. --grid shape)
        return int(exc.code or 0)
    except (StgapError, ValueError, OSError) as exc:
        print(f"stgap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    _emit_manifest(args, argv, inputs, outputs, time.monotonic() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
