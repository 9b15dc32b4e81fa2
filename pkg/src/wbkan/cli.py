"""Command-line front end: generate -> train -> prune -> symbolify -> refine -> eval.

Every stage reads the previous stage's model from the output directory and
writes its own copy plus ``model.json`` (the latest model). The resolved
configuration is kept in ``pipeline.json`` so later stages find the data.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
import argparse
import json
import os
import sys
import time
import warnings

import numpy as np

from . import analysis, datasets, plotting, symbolic, training, unsupervised
from .config import PipelineConfig, load_config, parse_override
from .errors import ConfigError, DataError, MissingColumnError, NumericalError, UnsnappedError
from .network import forward, init_network, load_model, save_model

STAGE_FILES = {
    "train": "model_trained.json",
    "prune": "model_pruned.json",
    "symbolify": "model_snapped.json",
    "refine": "model_refined.json",
}
PREVIOUS = {"prune": "train", "symbolify": "prune", "refine": "symbolify"}


# --------------------------------------------------------------------------
# file helpers

def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def load_dataset(spec):
    """Materialise a DataSpec as a split Dataset."""
    if spec.generator == "dab":
        ds = datasets.generate_dab(datasets.DabParams.with_constant(spec.C), spec.count,
                                   spec.d_range[0], spec.d_range[1], spec.data_seed,
                                   tuple(spec.exclude) if spec.exclude else None)
    elif spec.generator == "pv":
        ds = datasets.generate_pv(spec.count, spec.data_seed)
    else:
        if not os.path.exists(spec.csv):
            raise DataError(f"{spec.csv}: no such file")
        ds = datasets.load_csv(spec.csv, spec.features, spec.target)
    if spec.features and list(spec.features) != ds.feature_names:
        ds = datasets.Dataset(list(spec.features),
                              np.column_stack([ds.column(c) for c in spec.features]),
                              ds.target_name, ds.y, dropped=ds.dropped, source=ds.source)
    if ds.y is None:
        raise DataError("a target column is required")
    return datasets.split(ds, spec.train_fraction, spec.split_seed)


def model_columns(net, ds):
    """Feature matrix ordered as the model expects; missing columns are data errors."""
    try:
        return np.column_stack([ds.column(name) for name in net.input_names])
    except MissingColumnError as exc:
        raise DataError(f"dataset lacks model input {exc.column!r}") from None


def _out(cfg):
    if not cfg.out:
        raise ConfigError("an output directory is required (--out)")
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _save_pipeline(cfg):
    """Record the resolved configuration so later stages in ``cfg.out`` find the data."""
    write_json(os.path.join(_out(cfg), "pipeline.json"),
               {k: v for k, v in cfg.to_dict().items() if k != "out"})


def _save_stage(cfg, stage, net):
    doc = save_model(net)
    write_json(os.path.join(cfg.out, STAGE_FILES[stage]), doc)
    write_json(os.path.join(cfg.out, "model.json"), doc)


def _load_stage(cfg, stage, model_path=None):
    path = model_path or os.path.join(cfg.out, STAGE_FILES[PREVIOUS[stage]])
    return load_model(read_json(path))


def _plots(cfg, net, X):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        plotting.write_plots(net, os.path.join(cfg.out, "plots"), X)


def _write_formula(cfg, net, echo=True):
    lines = []
    for o in range(net.shape[-1]):
        text, _ = symbolic.emit_formula(net, cfg.precision, output=o)
        lines.append(text)
    with open(os.path.join(cfg.out, "formula.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if echo:
        for line in lines:
            print(line)
    return lines


# --------------------------------------------------------------------------
# stages

def stage_train(cfg):
    _out(cfg)
    if cfg.data is None:
        raise ConfigError("train needs a data source (--data or --generator)")
    ds = load_dataset(cfg.data)
    Xtr, ytr = ds.train()
    shape = list(cfg.shape)
    if shape[0] != Xtr.shape[1] or shape[-1] != 1:
        raise ConfigError(f"shape {shape} does not fit {Xtr.shape[1]} inputs and one target")
    net = init_network(shape, cfg.spline_grid(), seed=cfg.train.seed,
                       input_names=ds.feature_names, output_names=[ds.target_name])
    net.set_normalizers(Xtr.min(axis=0), Xtr.max(axis=0), ytr.min(), ytr.max())
    report = training.train(net, Xtr, ytr, cfg.train)
    _save_pipeline(cfg)
    report.write_csv(os.path.join(cfg.out, "train_trace.csv"))
    _save_stage(cfg, "train", net)
    _plots(cfg, net, Xtr)
    print(f"trained {shape} for {report.steps} steps: loss {report.total[-1]:.6g} "
          f"(prediction {report.pred[-1]:.6g}), snapshot {report.snapshot_id}")
    return net


def stage_prune(cfg, model_path=None, threshold=None):
    _out(cfg)
    net = _load_stage(cfg, "prune", model_path)
    Xtr, _ = _train_split(cfg, net)
    theta = cfg.train.prune_threshold if threshold is None else threshold
    pruned, report = training.prune(net, Xtr, theta)
    write_json(os.path.join(cfg.out, "prune_report.json"), report.to_dict())
    _save_stage(cfg, "prune", pruned)
    _plots(cfg, pruned, Xtr)
    print(f"pruned {report.shape_before} -> {report.shape_after}")
    return pruned


def _train_split(cfg, net):
    """Training rows in the model's input order."""
    ds = load_dataset(cfg.data)
    X = model_columns(net, ds)
    return X[ds.train_idx], ds.y[ds.train_idx]


def stage_symbolify(cfg, model_path=None):
    _out(cfg)
    net = _load_stage(cfg, "symbolify", model_path)
    Xtr, _ = _train_split(cfg, net)
    snapped, report = symbolic.snap_network(net, Xtr, cfg.override_map())
    write_json(os.path.join(cfg.out, "snap_report.json"), report.to_dict())
    _save_stage(cfg, "symbolify", snapped)
    _plots(cfg, snapped, Xtr)
    for e in report.entries:
        r2 = "n/a" if e.r2 is None else f"{e.r2:.6f}"
        print(f"edge {e.layer}/{e.edge[0]}/{e.edge[1]}: {e.status} {e.basis or '-'} "
              f"(R2 {r2}, {e.mode})")
    if not snapped.spline_edges():
        _write_formula(cfg, snapped, echo=False)
    return snapped


def stage_refine(cfg, model_path=None):
    _out(cfg)
    net = _load_stage(cfg, "refine", model_path)
    spline = net.spline_edges()
    if spline:
        raise UnsnappedError(spline)
    Xtr, ytr = _train_split(cfg, net)
    report = symbolic.refine(net, Xtr, ytr, cfg.refine.max_steps, cfg.refine.learning_rate)
    with open(os.path.join(cfg.out, "refine_trace.csv"), "w") as fh:
        fh.write("step,pred\n")
        for s, v in enumerate(report.losses):
            fh.write(f"{s},{v!r}\n")
    _save_stage(cfg, "refine", net)
    _plots(cfg, net, Xtr)
    print(f"refined {report.steps} steps: loss {report.initial_loss:.6g} -> "
          f"{report.final_loss:.6g}")
    _write_formula(cfg, net)
    return net


def stage_eval(cfg, model_path=None):
    _out(cfg)
    net = load_model(read_json(model_path or os.path.join(cfg.out, "model.json")))
    ds = load_dataset(cfg.data)
    X = model_columns(net, ds)
    parts = {"train": (X[ds.train_idx], ds.y[ds.train_idx]),
             "test": (X[ds.test_idx], ds.y[ds.test_idx])}
    if cfg.holdout is not None:
        h = load_dataset(cfg.holdout)
        parts["holdout"] = (model_columns(net, h), h.y)
    models = {"KAN": lambda Z: forward(net, Z)[:, 0]}
    if cfg.with_mlp:
        Xtr, ytr = parts["train"]
        mlp = analysis.mlp_train(Xtr, ytr, cfg.mlp_shape, cfg.train.learning_rate,
                                 cfg.train.max_steps, cfg.train.seed,
                                 cfg.train.convergence_tol, cfg.train.convergence_window)
        models["MLP"] = lambda Z: analysis.mlp_eval(mlp, Z)
    rows = []
    results = {}
    for name, predict in models.items():
        reps = []
        for tag, (Z, y) in parts.items():
            reps.append(analysis.evaluate(y, predict(Z), tag))
        if cfg.noise > 0:
            for k, tag in enumerate(("train", "test")):
                Z, y = parts[tag]
                noisy = analysis.add_noise(Z, cfg.noise, cfg.noise_seed + k)
                reps.append(analysis.evaluate(y, predict(noisy), f"{tag}_noise"))
        results[name] = reps
        rows.extend((name, r) for r in reps)
    analysis.write_metrics_csv(rows, os.path.join(cfg.out, "metrics.csv"))
    if cfg.noise > 0:
        table = {name: [r for r in reps if r.tag in ("train", "test", "train_noise", "test_noise")]
                 for name, reps in results.items()}
        text = analysis.format_table(analysis.performance_table(table),
                                     ["Model", "Metric"] + analysis.PERFORMANCE_COLUMNS)
    else:
        tags = [r.tag for r in next(iter(results.values()))]
        body = []
        for name, reps in results.items():
            body.append([name, "RMSE"] + [r.rmse for r in reps])
            body.append(["", "EE"] + [r.ee for r in reps])
        text = analysis.format_table(body, ["Model", "Metric"] + tags)
    with open(os.path.join(cfg.out, "metrics_table.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return results


def stage_unsup(args):
    out = args.out
    os.makedirs(out, exist_ok=True)
    ds = datasets.load_csv(args.data, _split_names(args.columns))
    names = ds.feature_names
    cfg = _train_config(args)
    cs = unsupervised.build_contrastive(ds.X, args.seed)
    shape = [len(names), args.hidden, 1]
    with warnings.catch_warnings():
        # reported on stderr below in plain words
        warnings.simplefilter("ignore", unsupervised.NoDependencyWarning)
        net, imp, report = unsupervised.train_unsupervised(cs, shape, cfg, names)
    imp.write_json(os.path.join(out, "importance.json"))
    imp.write_csv(os.path.join(out, "importance.csv"))
    write_json(os.path.join(out, "model.json"), save_model(net))
    report.write_csv(os.path.join(out, "train_trace.csv"))
    kept = [n for n, k in zip(imp.names, imp.kept) if k]
    before = f"[{len(names)},{args.hidden},1]"
    after = f"[{len(kept)},{args.hidden},1]"
    with open(os.path.join(out, "structure.txt"), "w") as fh:
        fh.write(f"{before} -> {after}\nkept: {', '.join(kept)}\n")
    if not kept:
        print("warning: every variable was dropped; no dependency found", file=sys.stderr)
    print(f"{before} -> {after}; ranking: {', '.join(imp.ranking)}")
    return imp


def stage_sensitivity(args):
    os.makedirs(args.out, exist_ok=True)
    net = load_model(read_json(args.model))
    ds = datasets.load_csv(args.data, None, None)
    X = model_columns(net, ds)
    rep = analysis.morris_sensitivity(lambda Z: forward(net, Z)[:, 0], X.min(axis=0),
                                      X.max(axis=0), r=args.trajectories, p=args.levels,
                                      seed=args.seed, names=net.input_names)
    rep.write_csv(os.path.join(args.out, "sensitivity.csv"))
    write_json(os.path.join(args.out, "sensitivity.json"), rep.to_dict())
    print(analysis.format_table([[n, m] for n, m in zip(rep.names, rep.mu_star)],
                                ["Variable", "Sensitivity"]))
    return rep


def stage_correlate(args):
    os.makedirs(args.out, exist_ok=True)
    ds = datasets.load_csv(args.data, _split_names(args.features), args.target)
    rows = analysis.correlation_table(ds.X, ds.y, ds.feature_names)
    analysis.write_correlations_csv(rows, os.path.join(args.out, "correlations.csv"))
    print(analysis.format_table(
        [[r.variable] + ["undefined" if v is None else v
                         for v in (r.pearson, r.spearman, r.kendall)] for r in rows],
        ["Variable", "Pearson", "Spearman", "Kendall"]))
    return rows


# --------------------------------------------------------------------------
# argument handling

def _split_names(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else None


def _floats(text, n, flag):
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != n:
        raise ConfigError(f"{flag} needs {n} comma-separated numbers")
    return vals


def _train_config(args):
    base = {}
    for flag, key in (("lam", "lam"), ("mu1", "mu1"), ("mu2", "mu2"), ("lr", "learning_rate"),
                      ("steps", "max_steps"), ("seed", "seed"), ("threshold", "prune_threshold")):
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    return training.TrainConfig(**base)


def build_config(args):
    """Config file (or the out dir's pipeline.json) overlaid with flags."""
    doc = {}
    if getattr(args, "config", None):
        doc = load_config(args.config).to_dict()
    elif getattr(args, "out", None) and os.path.exists(os.path.join(args.out, "pipeline.json")) \
            and args.command != "train" and args.command != "pipeline":
        doc = read_json(os.path.join(args.out, "pipeline.json"))
    doc = json.loads(json.dumps(doc))  # deep copy
    train = doc.setdefault("train", {})
    for flag, key in (("lam", "lam"), ("mu1", "mu1"), ("mu2", "mu2"), ("lr", "learning_rate"),
                      ("steps", "max_steps"), ("seed", "seed"), ("threshold", "prune_threshold")):
        v = getattr(args, flag, None)
        if v is not None:
            train[key] = v
    data = doc.get("data") or {}
    if getattr(args, "data", None):
        data = {k: v for k, v in data.items() if k not in ("csv", "generator")}
        data["csv"] = args.data
    if getattr(args, "generator", None):
        data = {k: v for k, v in data.items() if k not in ("csv", "generator")}
        data["generator"] = args.generator
    for flag, key in (("features", "features"),):
        v = _split_names(getattr(args, flag, None))
        if v:
            data[key] = v
    for flag, key in (("target", "target"), ("train_fraction", "train_fraction"),
                      ("split_seed", "split_seed"), ("count", "count")):
        v = getattr(args, flag, None)
        if v is not None:
            data[key] = v
    if data:
        doc["data"] = data
    if getattr(args, "holdout", None):
        doc["holdout"] = dict(data, csv=args.holdout, generator=None, exclude=None)
    if getattr(args, "shape", None):
        try:
            doc["shape"] = [int(t) for t in args.shape.split(",")]
        except ValueError:
            raise ConfigError("--shape needs comma-separated integers") from None
    grid = doc.setdefault("grid", {})
    if getattr(args, "grid_size", None) is not None:
        grid["G"] = args.grid_size
    if getattr(args, "order", None) is not None:
        grid["k"] = args.order
    refine = doc.setdefault("refine", {})
    if getattr(args, "refine_steps", None) is not None:
        refine["max_steps"] = args.refine_steps
    for flag in ("noise", "noise_seed", "precision"):
        v = getattr(args, flag, None)
        if v is not None:
            doc[flag] = v
    if getattr(args, "with_mlp", False):
        doc["with_mlp"] = True
    if getattr(args, "override", None):
        ov = doc.setdefault("overrides", {})
        for text in args.override:
            (l, i, j), name = parse_override(text)
            ov[f"{l}/{i}/{j}"] = name
    doc["out"] = args.out
    return PipelineConfig.from_dict(doc)


def _add_train_flags(p):
    p.add_argument("--config", help="pipeline JSON config")
    p.add_argument("--data", help="input CSV")
    p.add_argument("--generator", choices=["dab", "pv"], help="synthetic data instead of a CSV")
    p.add_argument("--count", type=int, help="synthetic sample count")
    p.add_argument("--features", help="comma-separated feature columns")
    p.add_argument("--target", help="target column")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--shape", help="e.g. 1,3,1")
    p.add_argument("--grid-size", type=int, help="spline intervals G")
    p.add_argument("--order", type=int, help="spline order k")
    p.add_argument("--lam", type=float)
    p.add_argument("--mu1", type=float)
    p.add_argument("--mu2", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float, help="pruning threshold")


def _add_eval_flags(p):
    p.add_argument("--noise", type=float, help="multiplicative input noise level, e.g. 0.10")
    p.add_argument("--noise-seed", type=int)
    p.add_argument("--with-mlp", action="store_true", help="also train and score the MLP")
    p.add_argument("--holdout", help="extra CSV to score (e.g. an extrapolation range)")


def make_parser():
    parser = argparse.ArgumentParser(prog="wbkan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-dab", help="write a DAB dataset from the closed form")
    p.add_argument("--out", required=True, help="CSV path; a .json sidecar is written next to it")
    p.add_argument("--count", type=int, default=50000)
    p.add_argument("--d-range", default="0.3,0.7")
    p.add_argument("--exclude-range",
                   help="open interval a,b removed from the range (default: the training "
                        "range 0.3,0.7 whenever --d-range strictly contains it)")
    p.add_argument("--no-exclude", action="store_true", help="keep the full --d-range")
    p.add_argument("--C", type=float, default=2.0, dest="C")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate-pv", help="write a synthetic photovoltaic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--noise-columns", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="sparsification training")
    p.add_argument("--out", required=True)
    _add_train_flags(p)

    for name, text in (("prune", "remove unimportant hidden nodes"),
                       ("symbolify", "snap spline edges to library functions"),
                       ("refine", "fine-tune symbolic parameters")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--out", required=True)
        p.add_argument("--model", help="input model (default: previous stage in --out)")
        p.add_argument("--config")
        if name == "prune":
            p.add_argument("--threshold", type=float)
        if name == "symbolify":
            p.add_argument("--override", action="append",
                           help="edge=l/i/j:basis (layer/in/out); repeatable")
            p.add_argument("--precision", type=int)
        if name == "refine":
            p.add_argument("--refine-steps", type=int)
            p.add_argument("--precision", type=int)

    p = sub.add_parser("eval", help="RMSE/EE on train and test splits")
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="default: <out>/model.json")
    p.add_argument("--config")
    p.add_argument("--data", help="input CSV (default: the data recorded in <out>)")
    p.add_argument("--features", help="comma-separated feature columns")
    p.add_argument("--target", help="target column")
    _add_eval_flags(p)

    p = sub.add_parser("pipeline", help="train, prune, symbolify, refine and eval in one go")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    _add_eval_flags(p)
    p.add_argument("--override", action="append")
    p.add_argument("--refine-steps", type=int)
    p.add_argument("--precision", type=int)

    p = sub.add_parser("unsup-select", help="contrastive dependency discovery")
    p.add_argument("--data", required=True)
    p.add_argument("--columns", help="comma-separated columns (default: all)")
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, default=1)
    p.add_argument("--lam", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sensitivity", help="Morris screening of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trajectories", type=int, default=50)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("correlate", help="Pearson/Spearman/Kendall of features vs target")
    p.add_argument("--data", required=True)
    p.add_argument("--features")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    return parser


def _simulate_dab(args):
    lo, hi = _floats(args.d_range, 2, "--d-range")
    if args.exclude_range and args.no_exclude:
        raise ConfigError("--exclude-range and --no-exclude contradict each other")
    if args.exclude_range:
        exclude = tuple(_floats(args.exclude_range, 2, "--exclude-range"))
    else:
        a, b = datasets.TRAIN_D_RANGE
        wider = lo <= a and b <= hi and (lo, hi) != (a, b)
        exclude = (a, b) if wider and not args.no_exclude else None
    ds = datasets.generate_dab(datasets.DabParams.with_constant(args.C), args.count, lo, hi,
                               args.seed, exclude)
    _write_dataset(ds, args.out)


def _simulate_pv(args):
    _write_dataset(datasets.generate_pv(args.count, args.seed, args.noise_columns), args.out)


def _write_dataset(ds, path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    datasets.write_csv(ds, path)
    datasets.write_sidecar(ds, os.path.splitext(path)[0] + ".json")
    print(f"wrote {len(ds)} rows to {path}")


def run(args):
    cmd = args.command
    if cmd == "simulate-dab":
        return _simulate_dab(args)
    if cmd == "simulate-pv":
        return _simulate_pv(args)
    if cmd == "unsup-select":
        return stage_unsup(args)
    if cmd == "sensitivity":
        return stage_sensitivity(args)
    if cmd == "correlate":
        return stage_correlate(args)
    cfg = build_config(args)
    if cmd != "train" and cfg.data is None:
        raise ConfigError(f"{cmd}: no data source; run train first or pass --config")
    model = getattr(args, "model", None)
    if getattr(args, "config", None) and cmd != "train":
        _save_pipeline(cfg)
    if cmd == "train":
        return stage_train(cfg)
    if cmd == "prune":
        return stage_prune(cfg, model, getattr(args, "threshold", None))
    if cmd == "symbolify":
        return stage_symbolify(cfg, model)
    if cmd == "refine":
        return stage_refine(cfg, model)
    if cmd == "eval":
        return stage_eval(cfg, model)
    if cmd == "pipeline":
        t0 = time.perf_counter()
        stage_train(cfg)
        stage_prune(cfg)
        stage_symbolify(cfg)
        stage_refine(cfg)
        stage_eval(cfg)
        print(f"pipeline finished in {time.perf_counter() - t0:.1f} s")
        return None
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        run(args)
    except (ConfigError, UnsnappedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
