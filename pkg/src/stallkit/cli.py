"""``stallkit`` command-line interface.

Exit status: 0 on success, 2 for usage or configuration problems, 1 when a
computation stage fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import model as mg
from . import pipeline, rom, sindy
from .errors import ConfigError, StallkitError
from .snapshots import SnapshotMatrix
from .spectral import SimConfig, integrate

log = logging.getLogger("stallkit")

BUNDLED = ("stall", "stable", "surge", "exp")


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def read_config(source):
    """Load a JSON document from a path or a bundled config name."""
    if source is None:
        return None
    path = Path(source)
    if not path.exists() and source.removesuffix(".json") in BUNDLED:
        text = resources.files("stallkit.configs").joinpath(source.removesuffix(".json") + ".json").read_text()
    else:
        try:
            text = path.read_text()
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {source}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {source}: {exc}") from exc


def apply_overrides(doc, assignments):
    """Apply ``a.b.c=value`` assignments; values are parsed as JSON when possible."""
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"--set path {key!r} does not name a config block")
            node = node[p]
        leaf = parts[-1]
        if leaf in node and node[leaf] is not None and not _same_kind(node[leaf], value):
            raise ConfigError(f"--set {key}: expected {type(node[leaf]).__name__}, got {raw!r}")
        node[leaf] = value
    return doc


def _same_kind(old, new):
    """Loose schema check: numbers stay numbers, strings stay strings, and so on."""
    if isinstance(old, bool) or isinstance(new, bool):
        return isinstance(old, bool) and isinstance(new, bool)
    if isinstance(old, (int, float)):
        return isinstance(new, (int, float))
    if isinstance(old, (list, dict)):
        # alpha_grid may be given either as a list or as a {min, max, num} block
        return isinstance(new, (list, dict))
    return isinstance(new, type(old))


def _sim_doc(args):
    doc = read_config(args.config or "stall")
    if "sim" in doc:
        doc = doc["sim"]
    doc = apply_overrides(doc, args.set)
    if args.seed is not None:
        doc["seed"] = args.seed
    return doc


def _datasets(src):
    src = Path(src)
    if src.is_dir():
        files = sorted(src.glob("*.mgss")) or sorted(src.glob("*.csv"))
    else:
        files = [src]
    if not files:
        raise ConfigError(f"no snapshot files found in {src}")
    out = []
    for f in files:
        if not f.exists():
            raise ConfigError(f"input not found: {f}")
        out.append(SnapshotMatrix.from_csv(f) if f.suffix == ".csv" else SnapshotMatrix.load(f))
    return out


def _emit(args, text):
    if not args.quiet:
        print(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = SimConfig.from_dict(_sim_doc(args))
    out = Path(args.out or "runs")
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.runs):
        snap = integrate(cfg, i)
        stem = out / f"run_{i:02d}"
        if args.format in ("mgss", "both"):
            snap.save(stem.with_suffix(".mgss"))
        if args.format in ("csv", "both"):
            snap.to_csv(stem.with_suffix(".csv"))
        g = snap.g
        _emit(args, f"run {i}: {snap.shape[0]} rows, mean Phi {snap.phi.mean():.5f}, "
                    f"mean Psi {snap.psi.mean():.5f}, final max|g| {np.abs(g[-1]).max():.4f}")
    return 0


def _train_config(args, kind):
    doc = read_config(args.config) if args.config else {}
    if "train" in doc:
        doc = doc["train"].get(kind, {})
    doc = apply_overrides(dict(doc), args.set)
    for key in ("epochs", "learning_rate", "batch_size"):
        if getattr(args, key, None) is not None:
            doc[key] = getattr(args, key)
    if args.seed is not None:
        doc["seed"] = args.seed
    base = rom.TrainConfig.default(kind).to_dict()
    base.update(doc)
    return rom.TrainConfig.from_dict(base)


def cmd_reduce(args):
    kind = {"nlpca": "nlpca_ae", "linear": "linear_ae"}.get(args.kind, args.kind)
    data = _datasets(args.inp)
    cfg = None if kind == "pca" else _train_config(args, kind)
    if args.k and args.k >= 2 and len(data) >= args.k:
        if kind == "pca":
            trainer, cands = rom.pca_trainer(args.latent), (None,)
        elif kind == "linear_ae":
            trainer, cands = rom.linear_ae_trainer(cfg, args.latent), rom.LAMBDA_FACTORS
        else:
            trainer, cands = rom.nlpca_trainer(cfg, args.latent), (None,)
        res = rom.kfold_select(data, args.k, trainer, cands)
        model = res.model
        for c, s in res.mean_scores().items():
            _emit(args, f"candidate {c}: mean held-out R2 {s:.6f}")
    else:
        model = rom.train(kind, data, cfg, args.latent)
    out = Path(args.out or "model.json")
    rom.save_model(model, out)
    _emit(args, f"{kind}: training R2 {model.score(data):.6f} -> {out}")
    return 0


def _alpha_grid(spec):
    if spec is None:
        return pipeline.DEFAULT_ALPHAS
    parts = [float(v) for v in spec.split(",")]
    if len(parts) == 3 and parts[2] >= 2 and parts[2] == int(parts[2]) and parts[0] < parts[1]:
        return tuple(np.logspace(np.log10(parts[0]), np.log10(parts[1]), int(parts[2])))
    return tuple(parts)


def cmd_discover(args):
    reducer = rom.load_model(args.model)
    data = _datasets(args.inp)
    latents = [reducer.encode(d.data) for d in data]
    dt = args.dt or float(data[0].times[1] - data[0].times[0])
    if args.alpha is not None:
        thetas, targets = sindy.derivative_data(latents, dt, args.window)
        model = sindy.lasso_fit(sindy.FeatureLibrary(np.vstack(thetas)), np.vstack(targets), args.alpha)
        model.normal_form = sindy.normal_form_project(model)
    else:
        k = min(args.k, len(latents)) if len(latents) > 1 else args.k
        model = sindy.discover(latents, dt, _alpha_grid(args.alphas), k=k, window=args.window)
    out = Path(args.out or "sindy.json")
    model.save(out)
    _emit(args, f"alpha {model.alpha:.6g}, {model.nnz} terms, fit R2 "
                f"{model.fit_r2[0]:.6f} / {model.fit_r2[1]:.6f} -> {out}")
    if args.print_equations:
        print(model.equations())
        nf = model.normal_form
        if nf is not None:
            print(f"normal form: mu={nf.mu:.6g} omega={nf.omega:.6g} b1={nf.b1:.6g} b2={nf.b2:.6g} "
                  f"residual={nf.residual:.3g}")
    return 0


def cmd_reconstruct(args):
    reducer = rom.load_model(args.model)
    model = sindy.SindyModel.load(args.sindy)
    data = _datasets(args.inp)
    out = Path(args.out) if args.out else None
    for i, ref in enumerate(data):
        Yhat, r2 = pipeline.reconstruct(model, reducer, ref, horizon=args.horizon, richardson=args.richardson)
        _emit(args, f"dataset {i}: reconstruction R2 {r2:.6f}")
        if out is not None:
            snap = SnapshotMatrix(Yhat, ref.times[:Yhat.shape[0]])
            target = out if len(data) == 1 else out.with_name(f"{out.stem}_{i:02d}{out.suffix}")
            if target.suffix == ".csv":
                snap.to_csv(target)
            else:
                snap.save(target)
    return 0


def cmd_experiment(args):
    doc = apply_overrides(read_config(args.config or "exp"), args.set)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = pipeline.ExperimentConfig.from_dict(doc)
    report = pipeline.run_experiment(cfg, out=args.out or "experiment")
    _emit(args, report.table())
    return 0 if not any(r.error for r in report.rows.values()) else 1


def cmd_sweep(args):
    doc = _sim_doc(args)
    p = mg.ModelParams.from_dict(doc["params"])
    gammas = np.linspace(args.gamma_min, args.gamma_max, args.steps)
    if not (0 < gammas.min() and gammas.max() <= 2.0):
        raise ConfigError("gamma range must lie within (0, 2]")
    rows = mg.sweep(p, gammas)
    crit = mg.critical_gammas(p)
    header = ["gamma", "phi_e", "psi_e", "re_lambda1", "re_mu1", "class"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(r[h]) if h == "class" else f"{r[h]:.8g}" for h in header))
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    if not args.quiet:
        print(f"{'gamma':>8} {'phi_e':>9} {'psi_e':>9} {'Re lam1':>10} {'Re mu1':>10}  class")
        for r in rows:
            print(f"{r['gamma']:8.4f} {r['phi_e']:9.5f} {r['psi_e']:9.5f} {r['re_lambda1']:10.5f} "
                  f"{r['re_mu1']:10.5f}  {r['class']}")
        fmt = lambda v: "none" if v is None else f"{v:.6f}"
        print(f"critical gamma: surge {fmt(crit.surge)}, stall {fmt(crit.stall)}, combination {fmt(crit.combo)}")
    return 0


def cmd_report(args):
    report = pipeline.ExperimentReport.load(args.inp)
    if args.format == "json":
        print(report.to_json())
    else:
        print(report.table())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config path or bundled name (stall, stable, surge, exp)")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set params.gamma=0.6")

    ap = argparse.ArgumentParser(prog="stallkit", description="Moore-Greitzer stall simulation and reduced-order modeling")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="integrate the PDE model")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--format", choices=("mgss", "csv", "both"), default="mgss")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reduce", parents=[common], help="fit a PCA or autoencoder reducer")
    p.add_argument("--kind", required=True, choices=("pca", "linear", "linear_ae", "nlpca", "nlpca_ae"))
    p.add_argument("--in", dest="inp", required=True, help="snapshot file or directory")
    p.add_argument("--latent", type=int, default=2)
    p.add_argument("--k", type=int, default=0, help="k-fold selection over input files (0: train on all)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("discover", parents=[common], help="sparse regression of the reduced dynamics")
    p.add_argument("--model", required=True, help="reducer model JSON")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--alphas", help="comma list, or min,max,num for a log grid")
    p.add_argument("--alpha", type=float, help="fixed alpha (skips the grid search)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--dt", type=float)
    p.add_argument("--print-equations", action="store_true")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("reconstruct", parents=[common], help="roll out a discovered model and decode")
    p.add_argument("--model", required=True, help="reducer model JSON")
    p.add_argument("--sindy", required=True, help="discovered model JSON")
    p.add_argument("--in", dest="inp", required=True, help="reference snapshots")
    p.add_argument("--horizon", type=int)
    p.add_argument("--richardson", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("experiment", parents=[common], help="run the full pipeline")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", parents=[common], help="classify equilibria over a gamma range")
    p.add_argument("--gamma-min", type=float, default=0.4)
    p.add_argument("--gamma-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=25)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="render a saved experiment report")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"stallkit: configuration error: {exc}", file=sys.stderr)
        return 2
    except (StallkitError, ValueError, OSError) as exc:
        print(f"stallkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
