"""End-to-end experiment: simulate, reduce, discover, re-simulate, score.

Each stage writes its artifacts under the output directory together with a
small ``<stage>.json`` holding the hash of the inputs it was computed from.  A rerun
reuses any stage whose hash still matches, so deleting a downstream file
and rerunning only recomputes from the cached upstream artifacts.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import rom, sindy
from ._accel import backend_name
from .errors import ConfigError, StageError
from .snapshots import SnapshotMatrix
from .spectral import SimConfig, integrate, theta_grid

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = tuple(float(a) for a in np.logspace(-4, 0, 25))
PLOT_TIMES = (0.0, 100.0, 200.0, 300.0)


def derive_seed(seed, stage, index=0):
    """Per-stage seed: the first 8 bytes of sha256("seed/stage/index")."""
    digest = hashlib.sha256(f"{int(seed)}/{stage}/{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig
    runs: int = 10
    reducers: tuple = ("pca",)
    train: dict = field(default_factory=dict)  # kind -> TrainConfig
    alpha_grid: tuple = DEFAULT_ALPHAS
    alpha_tol: float = 1e-4
    k: int = 5
    latent: int = 2
    window: int = 5
    seed: int = 0
    report_path: Optional[str] = None
    on_error: str = "raise"
    richardson: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "reducers", tuple(self.reducers))
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        if not self.runs >= self.k >= 2:
            raise ConfigError(f"require runs >= k >= 2 (runs={self.runs}, k={self.k})")
        bad = [r for r in self.reducers if r not in rom.KINDS]
        if bad or not self.reducers:
            raise ConfigError(f"reducers must be a nonempty subset of {rom.KINDS}, got {list(self.reducers)}")
        if not self.alpha_grid or min(self.alpha_grid) < 0:
            raise ConfigError("alpha grid must be nonempty and nonnegative")
        if self.on_error not in ("raise", "record"):
            raise ConfigError("on_error must be 'raise' or 'record'")

    def train_config(self, kind):
        cfg = self.train.get(kind) or rom.TrainConfig.default(kind)
        return replace(cfg, seed=derive_seed(self.seed, f"train/{kind}"))

    def to_dict(self):
        return {
            "sim": self.sim.to_dict(),
            "runs": self.runs,
            "reducers": list(self.reducers),
            "train": {k: v.to_dict() for k, v in sorted(self.train.items())},
            "alpha_grid": list(self.alpha_grid),
            "alpha_tol": self.alpha_tol,
            "k": self.k,
            "latent": self.latent,
            "window": self.window,
            "seed": self.seed,
            "report_path": self.report_path,
            "on_error": self.on_error,
            "richardson": self.richardson,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = sorted(set(doc) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {unknown}")
        if "sim" not in doc:
            raise ConfigError("experiment config requires 'sim'")
        kw = dict(doc)
        kw["sim"] = SimConfig.from_dict(doc["sim"])
        try:
            kw["train"] = {k: rom.TrainConfig.from_dict(v) for k, v in doc.get("train", {}).items()}
        except TypeError as exc:
            raise ConfigError(f"bad training block: {exc}") from exc
        if "alpha_grid" in kw and isinstance(kw["alpha_grid"], dict):
            g = kw["alpha_grid"]
            kw["alpha_grid"] = tuple(np.logspace(np.log10(g["min"]), np.log10(g["max"]), int(g["num"])))
        return cls(**kw)

    @classmethod
    def from_json(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def config_hash(self):
        d = self.to_dict()
        d.pop("report_path")
        d.pop("workers")
        d.pop("on_error")
        return _hash(d)

    def sim_for_runs(self):
        return replace(self.sim, seed=derive_seed(self.seed, "simulate"))


@dataclass
class ReducerRow:
    kind: str
    train_seconds: float = float("nan")
    train_r2: float = float("nan")
    sindy_r2: float = float("nan")
    sindy_r2_runs: list = field(default_factory=list)
    nnz: int = 0
    alpha: float = float("nan")
    fit_r2: list = field(default_factory=list)
    normal_form: Optional[dict] = None
    kfold: list = field(default_factory=list)
    candidate: object = None
    error: Optional[str] = None

    def __post_init__(self):
        # JSON stores non-finite scores as null
        for name in ("train_seconds", "train_r2", "sindy_r2", "alpha"):
            if getattr(self, name) is None:
                setattr(self, name, float("nan"))

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class ExperimentReport:
    rows: dict
    provenance: dict

    def to_dict(self, wall_times=True):
        rows = {}
        for k, r in self.rows.items():
            d = r.to_dict()
            if not wall_times:
                d.pop("train_seconds")
            rows[k] = d
        return {"rows": rows, "provenance": self.provenance}

    def to_json(self, wall_times=True):
        return json.dumps(_jsonable(self.to_dict(wall_times)), indent=2, sort_keys=True)

    def table(self):
        kinds = list(self.rows)
        labels = {"pca": "PCA", "linear_ae": "Linear AE", "nlpca_ae": "NLPCA AE"}
        lines = [
            ("", [labels.get(k, k) for k in kinds]),
            ("Training time", [f"{self.rows[k].train_seconds:.1f} s" for k in kinds]),
            ("Training-data reconstruction R2", [f"{self.rows[k].train_r2:.4f}" for k in kinds]),
            ("SINDy reconstruction R2", [f"{self.rows[k].sindy_r2:.4f}" for k in kinds]),
            ("Number of RHS terms", [str(self.rows[k].nnz) for k in kinds]),
            ("Selected alpha", [f"{self.rows[k].alpha:.4g}" for k in kinds]),
        ]
        if any(r.error for r in self.rows.values()):
            lines.append(("Error", [self.rows[k].error or "-" for k in kinds]))
        w0 = max(len(l) for l, _ in lines)
        widths = [max(len(vals[i]) for _, vals in lines) for i in range(len(kinds))]
        out = []
        for label, vals in lines:
            cells = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
            out.append(f"{label.ljust(w0)}  {cells}")
        return "\n".join(out)

    def save(self, path):
        path = Path(path)
        path.write_text(self.to_json())
        path.with_suffix(".txt").write_text(self.table() + "\n")
        return path

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        rows = {k: ReducerRow(**v) for k, v in doc["rows"].items()}
        return cls(rows=rows, provenance=doc["provenance"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

class _Stage:
    """Directory-backed cache entry keyed by an input hash."""

    def __init__(self, root, name, key, tag="stage"):
        self.dir = None if root is None else Path(root) / name
        self.key = key
        self.meta = f"{tag}.json"

    def valid(self, *files):
        if self.dir is None:
            return False
        meta = self.dir / self.meta
        if not meta.exists():
            return False
        if json.loads(meta.read_text()).get("key") != self.key:
            return False
        return all((self.dir / f).exists() for f in files)

    def path(self, name):
        return self.dir / name

    def open(self):
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def seal(self, **extra):
        if self.dir is not None:
            (self.dir / self.meta).write_text(json.dumps({"key": self.key, **extra}, indent=1))


def _run(stage, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:  # tagged and re-raised
        raise StageError(stage, exc) from exc


def simulate_stage(cfg: ExperimentConfig, out=None):
    sim = cfg.sim_for_runs()
    key = _hash({"sim": sim.to_dict(), "runs": cfg.runs})
    st = _Stage(out, "runs", key, tag="simulate")
    files = [f"run_{i:02d}.mgss" for i in range(cfg.runs)]
    if st.valid(*files):
        log.info("simulate: reusing %d cached runs", cfg.runs)
        return [SnapshotMatrix.load(st.path(f)) for f in files]
    st.open()
    if cfg.workers > 1:
        from .spectral import simulate_runs

        runs = _run("simulate", simulate_runs, sim, cfg.runs, cfg.workers)
    else:
        runs = []
        for i in range(cfg.runs):
            log.info("simulate: run %d/%d", i + 1, cfg.runs)
            runs.append(_run("simulate", integrate, sim, i))
    if st.dir is not None:
        for f, r in zip(files, runs):
            r.save(st.path(f))
        st.seal(ics=[r.meta.get("ic") for r in runs])
    return runs


def _trainer(cfg, kind):
    if kind == "pca":
        return rom.pca_trainer(cfg.latent), (None,)
    tc = cfg.train_config(kind)
    if kind == "linear_ae":
        return rom.linear_ae_trainer(tc, cfg.latent), rom.LAMBDA_FACTORS
    return rom.nlpca_trainer(tc, cfg.latent), (None,)


def reduce_stage(cfg, kind, runs, upstream_key, out=None):
    tc = None if kind == "pca" else cfg.train_config(kind).to_dict()
    key = _hash({"up": upstream_key, "kind": kind, "k": cfg.k, "latent": cfg.latent, "train": tc})
    st = _Stage(out, kind, key, tag="reduce")
    if st.valid("model.json", "kfold.json"):
        log.info("reduce[%s]: reusing cached model", kind)
        info = json.loads(st.path("kfold.json").read_text())
        return rom.load_model(st.path("model.json")), info, key
    st.open()
    trainer, candidates = _trainer(cfg, kind)
    t0 = time.perf_counter()
    res = _run(f"reduce/{kind}", rom.kfold_select, runs, cfg.k, trainer, candidates)
    seconds = time.perf_counter() - t0
    info = {"scores": res.scores, "candidate": res.candidate, "fold": res.fold, "train_seconds": seconds}
    if st.dir is not None:
        rom.save_model(res.model, st.path("model.json"))
        st.path("kfold.json").write_text(json.dumps(_jsonable(info), indent=1))
        st.seal()
    return res.model, info, key


def discover_stage(cfg, kind, latents, upstream_key, out=None):
    dt = cfg.sim.dt_out
    key = _hash({"up": upstream_key, "alphas": list(cfg.alpha_grid), "tol": cfg.alpha_tol,
                 "k": cfg.k, "window": cfg.window})
    st = _Stage(out, kind, key, tag="discover")
    if st.valid("sindy.json"):
        log.info("discover[%s]: reusing cached model", kind)
        return sindy.SindyModel.load(st.path("sindy.json")), key
    model = _run(f"discover/{kind}", sindy.discover, latents, dt, cfg.alpha_grid,
                 k=cfg.k, window=cfg.window, tol_score=cfg.alpha_tol)
    if st.dir is not None:
        st.open()
        model.save(st.path("sindy.json"))
        st.seal()
    return model, key


def reconstruct(model, reducer, reference, horizon=None, dt=None, richardson=False):
    """Roll the SINDy model forward from the encoded first row and decode.

    ``model=None`` skips the rollout and decodes the reference encodings
    themselves.  Returns ``(Y_hat, r2)`` over the first ``horizon`` rows.
    """
    Y = reference.data if isinstance(reference, SnapshotMatrix) else np.asarray(reference, dtype=float)
    if horizon is None:
        horizon = Y.shape[0]
    Y = Y[:horizon]
    if dt is None:
        if isinstance(reference, SnapshotMatrix) and reference.times.size > 1:
            dt = float(reference.times[1] - reference.times[0])
        else:
            raise ValueError("dt is required when the reference carries no time stamps")
    if model is None:
        X = reducer.encode(Y)
    else:
        x0 = reducer.encode(Y[:1])[0]
        X = sindy.simulate_model(model, x0, dt, Y.shape[0] - 1, richardson=richardson)
    Yhat = reducer.decode(X)
    return Yhat, rom.r2_score(Y, Yhat)


def _write_plots(directory, ref, Yhat, X, Xhat, n_grid, dt):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    t = ref.times - ref.times[0]
    ts = np.column_stack([t, ref.phi, Yhat[:, -2], ref.psi, Yhat[:, -1]])
    np.savetxt(directory / "timeseries.csv", ts, delimiter=",", fmt="%.10g", comments="",
               header="t,phi,phi_hat,psi,psi_hat")
    ph = np.column_stack([t, X, Xhat])
    np.savetxt(directory / "phase.csv", ph, delimiter=",", fmt="%.10g", comments="",
               header="t,x1,x2,x1_hat,x2_hat")
    cols = [theta_grid(n_grid)]
    head = ["theta"]
    for tp in PLOT_TIMES:
        i = int(round(tp / dt))
        if i < ref.data.shape[0]:
            cols += [ref.data[i, :n_grid], Yhat[i, :n_grid]]
            head += [f"g_t{tp:g}", f"g_hat_t{tp:g}"]
    np.savetxt(directory / "snapshots.csv", np.column_stack(cols), delimiter=",", fmt="%.10g",
               comments="", header=",".join(head))


def _reducer_row(cfg, kind, runs, sim_key, out, row):
    """Fill ``row`` stage by stage so a late failure keeps the earlier metrics."""
    reducer, info, rkey = reduce_stage(cfg, kind, runs, sim_key, out)
    row.train_seconds = float(info.get("train_seconds", float("nan")))
    row.kfold = info["scores"]
    row.candidate = info["candidate"]
    row.train_r2 = _run(f"score/{kind}", reducer.score, runs)
    latents = [reducer.encode(r.data) for r in runs]
    model, _ = discover_stage(cfg, kind, latents, rkey, out)
    row.alpha = model.alpha
    row.nnz = model.nnz
    row.fit_r2 = list(model.fit_r2)
    row.normal_form = None if model.normal_form is None else model.normal_form.to_dict()
    scores = []
    for i, r in enumerate(runs):
        Yhat, r2 = _run(f"reconstruct/{kind}", reconstruct, model, reducer, r, dt=cfg.sim.dt_out,
                        richardson=cfg.richardson)
        scores.append(r2)
        if i == 0 and out is not None:
            X = latents[0]
            Xhat = reducer.encode(Yhat)
            _write_plots(Path(out) / kind / "plots", r, Yhat, X, Xhat, cfg.sim.n_grid, cfg.sim.dt_out)
    row.sindy_r2_runs = scores
    row.sindy_r2 = float(np.mean(scores))
    return row


def run_experiment(cfg: ExperimentConfig, out=None) -> ExperimentReport:
    """Simulate the runs, then reduce, discover and reconstruct for each reducer kind."""
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    runs = simulate_stage(cfg, out)
    sim_key = _hash({"sim": cfg.sim_for_runs().to_dict(), "runs": cfg.runs})
    rows = {}
    for kind in cfg.reducers:
        rows[kind] = ReducerRow(kind=kind)
        try:
            _reducer_row(cfg, kind, runs, sim_key, out, rows[kind])
        except StageError as exc:
            if cfg.on_error == "raise":
                raise
            log.warning("%s", exc)
            rows[kind].error = str(exc)
    provenance = {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "sim_seed": cfg.sim_for_runs().seed,
        "train_seeds": {k: cfg.train_config(k).seed for k in cfg.reducers if k != "pca"},
        "backend": backend_name(),
        "fold_rule": "content-hash rank modulo k",
    }
    report = ExperimentReport(rows=rows, provenance=provenance)
    target = cfg.report_path or (None if out is None else Path(out) / "report.json")
    if target is not None:
        report.save(target)
    return report
