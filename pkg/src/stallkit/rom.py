"""Dimensional reduction: PCA, a Frobenius-regularized linear autoencoder and
a tanh (NLPCA) autoencoder, plus k-fold selection and the R² score."""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionMismatch, Diverged, RankDeficient, ZeroVariance
from .snapshots import SnapshotMatrix

KINDS = ("pca", "linear_ae", "nlpca_ae")
HIDDEN = 64


def _matrix(Y):
    if isinstance(Y, SnapshotMatrix):
        return Y.data
    if isinstance(Y, (list, tuple)):
        return np.vstack([_matrix(y) for y in Y])
    Y = np.asarray(Y, dtype=float)
    return Y if Y.ndim == 2 else Y[None, :]


def r2_score(Y, Yhat):
    """``1 - |Y - Yhat|_F^2 / |Y - colmean(Y)|_F^2``."""
    Y = _matrix(Y)
    Yhat = _matrix(Yhat)
    if Y.shape != Yhat.shape:
        raise DimensionMismatch(f"shapes differ: {Y.shape} vs {Yhat.shape}")
    den = np.sum((Y - Y.mean(axis=0)) ** 2)
    num = np.sum((Y - Yhat) ** 2)
    if den == 0.0:
        raise ZeroVariance("reference data has zero variance")
    return float(1.0 - num / den)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    # regularization weight of the linear autoencoder; None means
    # 1e-3 * mean squared entry of the centered data
    lam: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning rate, epochs and batch size must be positive")
        if not all(0.0 <= b < 1.0 for b in self.adam_betas) or self.adam_eps <= 0:
            raise ConfigError("invalid Adam constants")
        if self.lam is not None and self.lam <= 0:
            raise ConfigError("lambda must be positive")

    @classmethod
    def default(cls, kind, **kw):
        return cls(epochs=20 if kind == "nlpca_ae" else 10, **kw)

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# reducers
# ---------------------------------------------------------------------------

class _Reducer:
    kind = ""

    @property
    def n_features(self):
        raise NotImplementedError

    @property
    def latent_dim(self):
        raise NotImplementedError

    def _check(self, Y, width, what):
        if Y.shape[1] != width:
            raise DimensionMismatch(f"{self.kind}: expected {width} {what} columns, got {Y.shape[1]}")

    def encode(self, Y):
        Y = _matrix(Y)
        self._check(Y, self.n_features, "state")
        return self._encode(Y)

    def decode(self, X):
        X = _matrix(X)
        self._check(X, self.latent_dim, "latent")
        return self._decode(X)

    def reconstruct(self, Y):
        return self.decode(self.encode(Y))

    def score(self, Y):
        return r2_score(Y, self.reconstruct(Y))


@dataclass(frozen=True, eq=False)
class PcaModel(_Reducer):
    mean: np.ndarray
    axes: np.ndarray
    singular_values: np.ndarray
    kind = "pca"

    @property
    def n_features(self):
        return self.axes.shape[0]

    @property
    def latent_dim(self):
        return self.axes.shape[1]

    def _encode(self, Y):
        return (Y - self.mean) @ self.axes

    def _decode(self, X):
        return X @ self.axes.T + self.mean

    def arrays(self):
        return {"mean": self.mean, "axes": self.axes, "singular_values": self.singular_values}


def _canonical_signs(axes):
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(axes), axis=0)
    s = np.sign(axes[idx, np.arange(axes.shape[1])])
    s[s == 0] = 1.0
    return axes * s


def fit_pca(Y, m=2) -> PcaModel:
    Y = _matrix(Y)
    N, n = Y.shape
    if N < 2:
        raise ValueError("need at least two samples")
    if not 1 <= m <= min(N, n):
        raise ValueError(f"latent dimension {m} out of range for {N}x{n} data")
    mean = Y.mean(axis=0)
    _, s, Vt = np.linalg.svd(Y - mean, full_matrices=False)
    tol = max(N, n) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if np.count_nonzero(s > tol) < m:
        raise RankDeficient(f"only {np.count_nonzero(s > tol)} nonzero singular values, {m} requested")
    return PcaModel(mean=mean, axes=_canonical_signs(Vt[:m].T.copy()), singular_values=s[:m].copy())


@dataclass(frozen=True, eq=False)
class LinearAutoencoder(_Reducer):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    lam: float
    mean: np.ndarray
    loss_trace: tuple = ()
    config: Optional[TrainConfig] = None
    kind = "linear_ae"

    @property
    def n_features(self):
        return self.W1.shape[1]

    @property
    def latent_dim(self):
        return self.W1.shape[0]

    def _encode(self, Y):
        return (Y - self.mean) @ self.W1.T + self.b1

    def _decode(self, X):
        return X @ self.W2.T + self.b2 + self.mean

    def tie_gap(self):
        """``|W1 - W2^T|_F / |W2|_F``; small at the regularized optimum."""
        return float(np.linalg.norm(self.W1 - self.W2.T) / np.linalg.norm(self.W2))

    def arrays(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2, "mean": self.mean}


@dataclass(frozen=True, eq=False)
class NlpcaAutoencoder(_Reducer):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    b4: np.ndarray
    loss_trace: tuple = ()
    config: Optional[TrainConfig] = None
    kind = "nlpca_ae"

    @property
    def n_features(self):
        return self.W1.shape[1]

    @property
    def latent_dim(self):
        return self.W2.shape[0]

    @property
    def hidden(self):
        return self.W1.shape[0]

    def theta(self):
        return np.concatenate([a.ravel() for a in (self.W1, self.b1, self.W2, self.b2,
                                                   self.W3, self.b3, self.W4, self.b4)])

    def _encode(self, Y):
        return kernels.nlpca_encode(self.theta(), np.ascontiguousarray(Y), self.hidden, self.latent_dim)

    def _decode(self, X):
        return kernels.nlpca_decode(self.theta(), np.ascontiguousarray(X), self.n_features, self.hidden)

    def arrays(self):
        return {k: getattr(self, k) for k in ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _glorot(rng, fan_out, fan_in):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


def _adam_loop(theta, Y, cfg, epoch_fn, loss_fn):
    """Shared epoch loop; returns the per-epoch training-loss trace."""
    rng = np.random.default_rng([cfg.seed, 1])
    mom = np.zeros_like(theta)
    vel = np.zeros_like(theta)
    b1, b2 = cfg.adam_betas
    initial = loss_fn(theta)
    if not np.isfinite(initial):
        raise Diverged("initial loss is not finite")
    trace = []
    t = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(Y.shape[0]).astype(np.int64)
        t = epoch_fn(theta, order, b1, b2, mom, vel, t)
        loss = loss_fn(theta)
        if not np.isfinite(loss) or not np.all(np.isfinite(theta)) or loss > 10.0 * initial:
            raise Diverged(f"loss {loss:.4g} after epoch {epoch + 1} (initial {initial:.4g})")
        trace.append(float(loss))
    return initial, trace


def default_lambda(Y0):
    return 1e-3 * float(np.mean(Y0 ** 2))


def train_linear_ae(Y, cfg: TrainConfig = None, m=2) -> LinearAutoencoder:
    """Mini-batch Adam on ``mean_rows |y0 - W2 W1 y0|^2 + lam (|W1|^2 + |W2|^2)``."""
    cfg = cfg or TrainConfig.default("linear_ae")
    Y = _matrix(Y)
    mean = Y.mean(axis=0)
    Y0 = np.ascontiguousarray(Y - mean)
    N, n = Y0.shape
    lam = cfg.lam if cfg.lam is not None else default_lambda(Y0)
    if lam <= 0:
        # zero-variance data with the automatic lambda
        lam = 1e-12
    rng = np.random.default_rng([cfg.seed, 0])
    W1 = _glorot(rng, m, n)
    W2 = _glorot(rng, n, m)
    theta = np.concatenate([W1.ravel(), np.zeros(m), W2.ravel(), np.zeros(n)])

    def epoch(th, order, b1, b2, mo, ve, t):
        return kernels.linear_ae_epoch(th, Y0, order, m, lam, cfg.batch_size, cfg.learning_rate,
                                       b1, b2, cfg.adam_eps, mo, ve, t)

    initial, trace = _adam_loop(theta, Y0, cfg, epoch, lambda th: kernels.linear_ae_full_loss(th, Y0, m, lam))
    k = m * n
    return LinearAutoencoder(
        W1=theta[:k].reshape(m, n).copy(), b1=theta[k:k + m].copy(),
        W2=theta[k + m:2 * k + m].reshape(n, m).copy(), b2=theta[2 * k + m:].copy(),
        lam=float(lam), mean=mean, loss_trace=tuple([initial] + trace), config=replace(cfg, lam=float(lam)),
    )


def _split_nlpca(theta, n, h, m):
    o = kernels.nlpca_offsets(n, h, m)
    shapes = [(h, n), (h,), (m, h), (m,), (h, m), (h,), (n, h), (n,)]
    return [theta[o[i]:o[i + 1]].reshape(s).copy() for i, s in enumerate(shapes)]


def train_nlpca(Y, cfg: TrainConfig = None, m=2, hidden=HIDDEN) -> NlpcaAutoencoder:
    """Mini-batch Adam on the tanh autoencoder, trained on the raw (uncentered) data."""
    cfg = cfg or TrainConfig.default("nlpca_ae")
    Y = np.ascontiguousarray(_matrix(Y))
    N, n = Y.shape
    h = hidden
    rng = np.random.default_rng([cfg.seed, 0])
    parts = [_glorot(rng, h, n), np.zeros(h), _glorot(rng, m, h), np.zeros(m),
             _glorot(rng, h, m), np.zeros(h), _glorot(rng, n, h), np.zeros(n)]
    theta = np.concatenate([p.ravel() for p in parts])

    def epoch(th, order, b1, b2, mo, ve, t):
        return kernels.nlpca_epoch(th, Y, order, h, m, cfg.batch_size, cfg.learning_rate,
                                   b1, b2, cfg.adam_eps, mo, ve, t)

    initial, trace = _adam_loop(theta, Y, cfg, epoch, lambda th: kernels.nlpca_full_loss(th, Y, h, m))
    return NlpcaAutoencoder(*_split_nlpca(theta, n, h, m), loss_trace=tuple([initial] + trace), config=cfg)


# ---------------------------------------------------------------------------
# module-level helpers
# ---------------------------------------------------------------------------

def encode(model, Y):
    return model.encode(Y)


def decode(model, X):
    return model.decode(X)


def train(kind, Y, cfg: TrainConfig = None, m=2):
    if kind == "pca":
        return fit_pca(Y, m)
    if kind == "linear_ae":
        return train_linear_ae(Y, cfg, m)
    if kind == "nlpca_ae":
        return train_nlpca(Y, cfg, m)
    raise ConfigError(f"unknown reducer kind {kind!r}; expected one of {KINDS}")


# ---------------------------------------------------------------------------
# k-fold selection
# ---------------------------------------------------------------------------

def _digest(Y):
    return hashlib.sha256(np.ascontiguousarray(_matrix(Y), dtype="<f8").tobytes()).hexdigest()


def _content_order(datasets):
    keys = [_digest(d) for d in datasets]
    return sorted(range(len(datasets)), key=lambda i: (keys[i], i))


def fold_labels(datasets, k):
    """Fold index per dataset.

    Datasets are ranked by a hash of their contents and dealt round-robin,
    so the assignment does not depend on the order they are passed in.
    """
    rank = _content_order(datasets)
    labels = [0] * len(datasets)
    for pos, i in enumerate(rank):
        labels[i] = pos % k
    return labels


@dataclass
class KFoldResult:
    model: object
    candidate: object
    fold: int
    scores: list = field(default_factory=list)  # one row per (candidate, fold)

    def mean_scores(self):
        out = {}
        for row in self.scores:
            out.setdefault(repr(row["candidate"]), []).append(row["score"])
        return {c: float(np.mean(v)) for c, v in out.items()}


def kfold_select(datasets: Sequence, k: int, trainer: Callable, candidates=(None,)) -> KFoldResult:
    """Cross-validated model choice.

    ``trainer(Y_train, candidate)`` builds a reducer from the stacked
    training folds.  Each candidate is scored by held-out reconstruction R²
    averaged over folds; the winning candidate's best fold model is returned.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(datasets) < k:
        raise ValueError(f"need at least k={k} datasets, got {len(datasets)}")
    # stack in content order too, so permuted input gives bit-identical sums
    order = _content_order(datasets)
    labels = fold_labels(datasets, k)
    datasets = [datasets[i] for i in order]
    labels = [labels[i] for i in order]
    rows = []
    best = None
    for cand in candidates:
        fold_models = []
        for f in range(k):
            train_set = [d for d, l in zip(datasets, labels) if l != f]
            test_set = [d for d, l in zip(datasets, labels) if l == f]
            model = trainer(_matrix(train_set), cand)
            score = model.score(_matrix(test_set))
            rows.append({"candidate": cand, "fold": f, "score": score})
            fold_models.append((score, f, model))
        mean = float(np.mean([s for s, _, _ in fold_models]))
        top = max(fold_models, key=lambda r: (r[0], -r[1]))
        if best is None or mean > best[0]:
            best = (mean, cand, top)
    _, cand, (score, f, model) = best
    return KFoldResult(model=model, candidate=cand, fold=f, scores=rows)


def pca_trainer(m=2):
    return lambda Y, cand: fit_pca(Y, m)


def linear_ae_trainer(cfg: TrainConfig = None, m=2):
    """Trainer whose candidates are multipliers of the default lambda scale."""
    cfg = cfg or TrainConfig.default("linear_ae")

    def run(Y, factor):
        if factor is None:
            return train_linear_ae(Y, cfg, m)
        Y0 = Y - Y.mean(axis=0)
        return train_linear_ae(Y, replace(cfg, lam=factor * max(float(np.mean(Y0 ** 2)), 1e-300)), m)

    return run


LAMBDA_FACTORS = (1e-4, 1e-3, 1e-2)


def nlpca_trainer(cfg: TrainConfig = None, m=2):
    cfg = cfg or TrainConfig.default("nlpca_ae")
    return lambda Y, cand: train_nlpca(Y, cfg, m)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _blob(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unblob(d):
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def model_to_dict(model):
    dims = {"n": model.n_features, "m": model.latent_dim}
    out = {"kind": model.kind, "dims": dims, "arrays": {k: _blob(v) for k, v in model.arrays().items()}}
    if model.kind == "nlpca_ae":
        dims["hidden"] = model.hidden
    if model.kind != "pca":
        out["train_config"] = model.config.to_dict() if model.config else None
        out["loss_trace"] = list(model.loss_trace)
    if model.kind == "linear_ae":
        out["lambda"] = model.lam
    return out


def model_from_dict(d):
    kind = d.get("kind")
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    arr = {k: _unblob(v) for k, v in d["arrays"].items()}
    cfg = d.get("train_config")
    cfg = TrainConfig.from_dict(cfg) if cfg else None
    if kind == "pca":
        model = PcaModel(**arr)
    elif kind == "linear_ae":
        model = LinearAutoencoder(lam=float(d["lambda"]), loss_trace=tuple(d.get("loss_trace", ())),
                                  config=cfg, **arr)
    else:
        model = NlpcaAutoencoder(loss_trace=tuple(d.get("loss_trace", ())), config=cfg, **arr)
    dims = d.get("dims", {})
    if dims.get("n", model.n_features) != model.n_features or dims.get("m", model.latent_dim) != model.latent_dim:
        raise ValueError("stored dimensions disagree with the weight shapes")
    return model


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))
    return Path(path)


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
