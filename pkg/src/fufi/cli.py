"""Command-line entry point: generate, train, eval, infer, viz.

Exit codes: 0 success, 2 validation error, 3 divergence abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .errors import DivergenceError

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _load_array(path):
    if path.endswith(".csv"):
        return np.loadtxt(path, delimiter=",", ndmin=2)
    return np.load(path)


def _external_row(arg):
    """Inline JSON object, a ``.json`` file, or a CSV file with a header row."""
    from .io import parse_external_row

    if os.path.isfile(arg):
        if arg.endswith(".csv"):
            with open(arg, newline="") as fh:
                rows = list(csv.DictReader(fh))
            if not rows:
                raise ValueError(f"{arg} has no data row")
            return parse_external_row(rows[0])
        return parse_external_row(_read_json(arg))
    return parse_external_row(json.loads(arg))


def cmd_generate(args):
    from .io import save_dataset
    from .synthetic import SyntheticSpec, generate_synthetic, ha_rmse_floor

    spec = SyntheticSpec.from_dict(_read_json(args.spec))
    ds = generate_synthetic(spec)
    save_dataset(ds, args.out)
    _emit({"out": args.out, "shape": list(ds.flows.shape), "upscale_n": ds.upscale_n,
           "ha_rmse_floor": ha_rmse_floor(spec, ds.timestamps)})


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .io import load_dataset
    from .train import run_training, load_run_config

    ds = load_dataset(args.data)
    raw = _read_json(args.config) if args.config else {}
    cfg, _, _ = load_run_config(raw, args.model)
    model, log_, report = run_training(args.model, ds, raw)
    save_checkpoint(model, args.out, {"ratios": list(cfg.ratios), "train_log": log_.to_dict(), "test_report": report})
    if args.log:
        _emit(log_.to_dict(), args.log)
    _emit({"checkpoint": args.out, "best_epoch": log_.best_epoch, "epochs_run": len(log_.epochs), "test": report})


def cmd_eval(args):
    from .grid import split
    from .io import load_dataset
    from .train import evaluate, evaluate_baselines

    if args.ckpt is None and not args.baselines:
        raise ValueError("eval needs --ckpt, --baselines, or both")
    ds = load_dataset(args.data)
    report, ratios, n, model = {}, args.ratios, args.n, None
    if args.ckpt:
        from .checkpoint import load_checkpoint

        model, extra = load_checkpoint(args.ckpt)
        ratios = ratios or extra.get("ratios")
        n = n or model.cfg.n_upscale
    ratios = ratios or [2, 1, 1]
    n = n or ds.upscale_n
    if n is None:
        raise ValueError("upscaling factor unknown: pass --n or a dataset with upscale_n")
    data_split = split(ds, ratios)
    if model is not None:
        report["model"] = evaluate(model, ds, data_split.test)
    if args.baselines:
        report.update(evaluate_baselines(ds, int(n), data_split))
    _emit(report, args.report)


def cmd_infer(args):
    import torch

    from .checkpoint import load_checkpoint
    from .external import encode_records
    from .urbanpy import UrbanPy

    model, _ = load_checkpoint(args.ckpt)
    coarse = np.asarray(_load_array(args.coarse), np.float64)
    if coarse.ndim != 2 or tuple(coarse.shape) != model.coarse_dims:
        raise ValueError(f"coarse map has shape {coarse.shape}, checkpoint expects {model.coarse_dims}")
    if (coarse < 0).any():
        raise ValueError("coarse flows must be non-negative")
    cat = con = None
    if model.fusion_cfg is not None:
        if args.external is None:
            raise ValueError("this checkpoint uses external factors; pass --external")
        cat, con = encode_records([_external_row(args.external)], model.fusion_cfg)
    x = torch.tensor(coarse[None, None], dtype=torch.float32)
    with torch.no_grad():
        out = model(x, cat, con)
    fine = (out[-1].flow_pred if isinstance(model, UrbanPy) else out.fine_pred)[0, 0].double().numpy()
    if args.out:
        np.save(args.out, fine)
        _emit({"out": args.out, "shape": list(fine.shape), "total": float(fine.sum())})
    else:
        _emit(fine.tolist())


def cmd_viz(args):
    from .viz import error_heatmap

    pred, truth = _load_array(args.pred), _load_array(args.truth)
    if pred.ndim == 3:
        pred = pred[args.index]
    if truth.ndim == 3:
        truth = truth[args.index]
    err = error_heatmap(pred, truth, args.out, title=args.title, vmax=args.vmax)
    _emit({"out": args.out, "max_abs_error": float(err.max()), "mean_abs_error": float(err.mean())})


def build_parser():
    p = argparse.ArgumentParser(prog="fufi", description="Fine-grained flow inference from coarse grids.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and save the best checkpoint")
    t.add_argument("--model", required=True, choices=["urbanfm", "urbanpy", "fm-sl"])
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="also write the TrainLog JSON here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="test-split metrics for a checkpoint and/or the baselines")
    e.add_argument("--ckpt")
    e.add_argument("--data", required=True)
    e.add_argument("--baselines", action="store_true")
    e.add_argument("--n", type=int, help="upscaling factor for baseline-only runs")
    e.add_argument("--ratios", type=float, nargs=3)
    e.add_argument("--report", help="also write the report JSON here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict one fine map")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--coarse", required=True, help=".npy or .csv coarse map")
    i.add_argument("--external", help="JSON object, .json file or .csv file with a header row")
    i.add_argument("--out", help=".npy output path (default: print JSON)")
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("viz", help="absolute-error heatmap")
    v.add_argument("--pred", required=True)
    v.add_argument("--truth", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--index", type=int, default=0, help="sample index for 3-D inputs")
    v.add_argument("--title")
    v.add_argument("--vmax", type=float)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
