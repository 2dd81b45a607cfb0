"""Command-line harness: CSV in, JSON report out, optional plot data and figures.

The report echoes the configuration, carries the per-iteration trace, the
held-out metrics (nMSE and variational lower bound), and a model summary.
For one-dimensional problems ``--plot-grid`` writes a delimited file with
columns x,mean,lo,hi and renders a figure next to it.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import figures
from .datasets import split_dataset
from .model import (DecoupledModel, elbo, ell_gaussian, kl_normal_prior,
                    model_from_params, predict)
from .oracles import exact_gpr, log_marginal
from .trainer import Dataset, TrainConfig, init_hyper, train

__all__ = ["load_csv", "evaluate", "model_to_dict", "model_from_dict",
           "build_parser", "run", "main"]


def load_csv(path, target_column=None, delimiter=",", normalize=False) -> Dataset:
    """Parse a headered numeric CSV into a Dataset.

    The target column defaults to the last header.  Rows with non-numeric or
    non-finite cells are rejected with their line number.  With normalize=True
    the inputs are z-scored and the statistics recorded on the Dataset.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if target_column is None:
            target_idx = len(header) - 1
        else:
            if target_column not in header:
                raise ValueError(f"target column {target_column!r} not found in {header}")
            target_idx = header.index(target_column)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) == 0 or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ValueError(f"row {line_no}: expected {len(header)} cells, got {len(row)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise ValueError(f"row {line_no}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"row {line_no}: non-finite value")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    targets = data[:, target_idx]
    inputs = np.delete(data, target_idx, axis=1)
    if inputs.shape[1] == 0:
        raise ValueError("dataset needs at least one input column")
    mean = std = None
    if normalize:
        mean = inputs.mean(axis=0)
        std = inputs.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        inputs = (inputs - mean) / std
    return Dataset(inputs=inputs, targets=targets, input_mean=mean, input_std=std)


def evaluate(model: DecoupledModel, test: Dataset):
    """Held-out normalized MSE and variational lower bound.

    nMSE divides the mean squared error by the variance of the test targets;
    the held-out bound is the unscaled sum of test expected log-likelihoods
    minus the training posterior's KL term.
    """
    moments = predict(model, test.inputs)
    var_y = float(np.var(test.targets))
    if var_y == 0.0:
        raise ValueError("test targets have zero variance; nMSE undefined")
    nmse = float(np.mean((test.targets - moments.mean) ** 2) / var_y)
    test_vlb = ell_gaussian(moments, test.targets, model.log_noise) - kl_normal_prior(model)
    return nmse, test_vlb


# -- model snapshots -------------------------------------------------------------

def model_to_dict(model: DecoupledModel, input_mean=None, input_std=None) -> dict:
    return {
        "hyper": {
            "log_amplitude": float(model.hyper.log_amplitude),
            "log_lengthscales": model.hyper.log_lengthscales.tolist(),
        },
        "log_noise": float(model.log_noise),
        "alpha": {
            "locations": model.alpha.locations.tolist(),
            "log_multipliers": model.alpha.log_multipliers.tolist(),
        },
        "a": model.a.tolist(),
        "beta": {
            "locations": model.beta.locations.tolist(),
            "log_multipliers": model.beta.log_multipliers.tolist(),
        },
        "L": model.L.tolist(),
        "normalization": {
            "input_mean": None if input_mean is None else np.asarray(input_mean).tolist(),
            "input_std": None if input_std is None else np.asarray(input_std).tolist(),
        },
    }


def model_from_dict(doc: dict) -> DecoupledModel:
    dim = len(doc["hyper"]["log_lengthscales"])
    params = {
        "a": np.asarray(doc["a"], dtype=float),
        "alpha_locations": np.asarray(doc["alpha"]["locations"], dtype=float).reshape(-1, dim),
        "alpha_log_multipliers": np.asarray(doc["alpha"]["log_multipliers"], dtype=float).reshape(-1, dim),
        "L": np.asarray(doc["L"], dtype=float),
        "beta_locations": np.asarray(doc["beta"]["locations"], dtype=float).reshape(-1, dim),
        "beta_log_multipliers": np.asarray(doc["beta"]["log_multipliers"], dtype=float).reshape(-1, dim),
        "log_amplitude": float(doc["hyper"]["log_amplitude"]),
        "log_lengthscales": np.asarray(doc["hyper"]["log_lengthscales"], dtype=float),
        "log_noise": float(doc["log_noise"]),
    }
    mb = params["beta_locations"].shape[0]
    params["L"] = params["L"].reshape(mb, mb)
    return model_from_params(params).validate()


# -- command line ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decgp",
        description="Train and evaluate a variational GP with decoupled mean/covariance bases.")
    parser.add_argument("--data", required=True, help="path to a headered numeric CSV")
    parser.add_argument("--target-col", default=None,
                        help="name of the target column (default: last column)")
    parser.add_argument("--test-frac", type=float, default=0.2,
                        help="held-out fraction for evaluation (default 0.2)")
    parser.add_argument("--m-alpha", type=int, default=100, help="mean basis cap")
    parser.add_argument("--m-beta", type=int, default=10, help="covariance basis cap")
    parser.add_argument("--batch", type=int, default=128, help="minibatch size")
    parser.add_argument("--increment", type=int, default=16,
                        help="basis points added per iteration")
    parser.add_argument("--iters", type=int, default=2000, help="training iterations")
    parser.add_argument("--lr", type=float, default=1e-2, help="base step size gamma0")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--algo", choices=("decoupled", "coupled", "exact"),
                        default="decoupled",
                        help="decoupled bases, shared bases, or the dense reference")
    parser.add_argument("--kl-cols", default="exact",
                        help="'exact' or the number of sampled KL gradient columns")
    parser.add_argument("--report", default=None,
                        help="write the JSON report here (default: stdout)")
    parser.add_argument("--plot-grid", default=None,
                        help="write x,mean,lo,hi plot data (1-d inputs only)")
    parser.add_argument("--model-out", default=None,
                        help="write the model snapshot JSON here")
    parser.add_argument("--normalize", action="store_true",
                        help="z-score the input columns")
    return parser


def _config_echo(args) -> dict:
    return {
        "data": args.data,
        "target_col": args.target_col,
        "test_frac": args.test_frac,
        "m_alpha": args.m_alpha,
        "m_beta": args.m_beta,
        "batch": args.batch,
        "increment": args.increment,
        "iters": args.iters,
        "lr": args.lr,
        "seed": args.seed,
        "algo": args.algo,
        "kl_cols": args.kl_cols,
        "normalize": bool(args.normalize),
    }


def _grid_in_model_space(train: Dataset, n: int = 200) -> np.ndarray:
    x = train.inputs[:, 0]
    span = x.max() - x.min()
    pad = 0.05 * span if span > 0 else 1.0
    return np.linspace(x.min() - pad, x.max() + pad, n)


def _to_original_units(x: np.ndarray, train: Dataset) -> np.ndarray:
    if train.input_mean is None:
        return x
    return x * train.input_std[0] + train.input_mean[0]


def _write_plot_outputs(path: str, train: Dataset, mean, sd, grid):
    lo, hi = mean - 2.0 * sd, mean + 2.0 * sd
    x_orig = _to_original_units(grid, train)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "mean", "lo", "hi"])
        for row in zip(x_orig, mean, lo, hi):
            writer.writerow([repr(float(v)) for v in row])
    figures.save_fit_figure(str(Path(path).with_suffix(".png")),
                            x_orig, mean, lo, hi,
                            data_x=_to_original_units(train.inputs[:, 0], train),
                            data_y=train.targets)


def _run_exact(args, train_ds: Dataset, eval_ds: Dataset) -> dict:
    hyper, log_noise = init_hyper((train_ds.inputs, train_ds.targets))
    sigma2 = float(np.exp(log_noise))
    moments = exact_gpr((train_ds.inputs, train_ds.targets), hyper, log_noise,
                        eval_ds.inputs)
    var_y = float(np.var(eval_ds.targets))
    if var_y == 0.0:
        raise ValueError("test targets have zero variance; nMSE undefined")
    nmse = float(np.mean((eval_ds.targets - moments.mean) ** 2) / var_y)
    pred_var = moments.variance + sigma2
    test_score = float(np.sum(-0.5 * np.log(2.0 * np.pi * pred_var)
                              - (eval_ds.targets - moments.mean) ** 2 / (2.0 * pred_var)))
    report = {
        "config": _config_echo(args),
        "trace": [],
        "metrics": {
            "test_nmse": nmse,
            "test_vlb": test_score,
            "train_vlb": log_marginal((train_ds.inputs, train_ds.targets), hyper, log_noise),
        },
        "model": {
            "m_alpha": 0,
            "m_beta": 0,
            "log_amplitude": float(hyper.log_amplitude),
            "log_lengthscales": hyper.log_lengthscales.tolist(),
            "log_noise": float(log_noise),
        },
    }
    if args.plot_grid is not None:
        if train_ds.inputs.shape[1] != 1:
            print("warning: --plot-grid needs 1-d inputs; skipped", file=sys.stderr)
        else:
            grid = _grid_in_model_space(train_ds)
            gm = exact_gpr((train_ds.inputs, train_ds.targets), hyper, log_noise,
                           grid[:, None])
            _write_plot_outputs(args.plot_grid, train_ds, gm.mean,
                                np.sqrt(gm.variance), grid)
    if args.model_out is not None:
        print("warning: --model-out applies to trained models; skipped", file=sys.stderr)
    return report


def _run(args) -> int:
    dataset = load_csv(args.data, target_column=args.target_col, normalize=args.normalize)
    train_ds, test_ds = split_dataset(dataset, args.test_frac, seed=args.seed)
    if test_ds is None:
        print("warning: empty test split; evaluating on the training data", file=sys.stderr)
        eval_ds = train_ds
    else:
        eval_ds = test_ds

    if args.algo == "exact":
        report = _run_exact(args, train_ds, eval_ds)
    else:
        kl_columns = None if args.kl_cols == "exact" else int(args.kl_cols)
        config = TrainConfig(
            m_alpha_cap=args.m_alpha,
            m_beta_cap=args.m_alpha if args.algo == "coupled" else args.m_beta,
            batch_size=min(args.batch, len(train_ds)),
            increment=min(args.increment, args.batch, len(train_ds)),
            iterations=args.iters,
            gamma0=args.lr,
            seed=args.seed,
            kl_column_samples=kl_columns,
            share_bases=args.algo == "coupled",
        )
        model, trace = train(train_ds, config)
        nmse, test_vlb = evaluate(model, eval_ds)
        report = {
            "config": _config_echo(args),
            "trace": [{"iteration": row.iteration, "wall_ms": row.wall_ms,
                       "elbo_estimate": row.elbo_estimate} for row in trace],
            "metrics": {
                "test_nmse": nmse,
                "test_vlb": test_vlb,
                "train_vlb": elbo(model, train_ds.inputs, train_ds.targets),
            },
            "model": {
                "m_alpha": len(model.alpha),
                "m_beta": len(model.beta),
                "log_amplitude": float(model.hyper.log_amplitude),
                "log_lengthscales": model.hyper.log_lengthscales.tolist(),
                "log_noise": float(model.log_noise),
            },
        }
        if args.plot_grid is not None:
            if train_ds.inputs.shape[1] != 1:
                print("warning: --plot-grid needs 1-d inputs; skipped", file=sys.stderr)
            else:
                grid = _grid_in_model_space(train_ds)
                gm = predict(model, grid[:, None])
                _write_plot_outputs(args.plot_grid, train_ds, gm.mean,
                                    np.sqrt(gm.variance), grid)
        if args.model_out is not None:
            snapshot = model_to_dict(model, input_mean=train_ds.input_mean,
                                     input_std=train_ds.input_std)
            Path(args.model_out).write_text(json.dumps(snapshot) + "\n", encoding="utf-8")

    text = json.dumps(report, indent=2)
    if args.report is None:
        print(text)
    else:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
        if report["trace"]:
            figures.save_trace_figure(
                str(Path(args.report).with_suffix("")) + "_trace.png",
                [row["iteration"] for row in report["trace"]],
                [row["elbo_estimate"] for row in report["trace"]])
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (ValueError, OSError, np.linalg.LinAlgError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main():
    raise SystemExit(run())
