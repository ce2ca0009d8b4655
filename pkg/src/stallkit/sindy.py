"""Sparse identification of the two-dimensional reduced dynamics.

The regression is ``dX ~ Theta(X) Xi`` with the ten cubic monomials in
``(x1, x2)`` as library.  Xi is found column by column with a LASSO solved
by cyclic coordinate descent on ``(1/N)|dX - Theta Xi|^2 + alpha |Xi|_1``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import NotConverged, Overflow, TooShort

TERMS = ("1", "x1", "x2", "x1^2", "x1x2", "x2^2", "x1^3", "x1^2x2", "x1x2^2", "x2^3")
N_TERMS = len(TERMS)
# exponents of (x1, x2) for each library column
POWERS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3))

OVERFLOW_LIMIT = 1e6


@dataclass(frozen=True)
class FeatureLibrary:
    values: np.ndarray
    columns: tuple = TERMS

    @property
    def n_rows(self):
        return self.values.shape[0]


def build_library(X) -> FeatureLibrary:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != 2:
        raise ValueError(f"reduced data must have two columns, got {X.shape[1]}")
    x1, x2 = X[:, 0], X[:, 1]
    cols = [x1 ** i * x2 ** j if (i or j) else np.ones_like(x1) for i, j in POWERS]
    return FeatureLibrary(np.column_stack(cols))


def estimate_derivatives(X, dt, window=5):
    """Smoothed forward differences.

    ``d_i = (x_{i+1} - x_i) / dt`` is averaged over ``window`` consecutive
    values; the average over ``d_i .. d_{i+w-1}`` is attached to sample
    ``x_{i + w//2}``.  Both arrays come back trimmed to the same rows, so the
    estimate stays consistent with a forward-Euler step of size ``dt``.

    Returns ``(X_trimmed, dX)``.
    """
    X = np.asarray(X, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if window < 1 or window % 2 == 0:
        raise ValueError("smoothing window must be a positive odd integer")
    if X.shape[0] < window + 1:
        raise TooShort(f"need at least {window + 1} samples, got {X.shape[0]}")
    d = np.diff(X, axis=0) / dt
    # running mean via cumulative sums
    c = np.cumsum(np.vstack([np.zeros((1, X.shape[1])), d]), axis=0)
    smooth = (c[window:] - c[:-window]) / window
    h = window // 2
    return X[h:h + smooth.shape[0]], smooth


def _r2_columns(y, pred):
    y = np.asarray(y)
    ss_res = np.sum((y - pred) ** 2, axis=0)
    ss_tot = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, np.where(ss_res == 0, 1.0, -np.inf))
    return r2


@dataclass(frozen=True)
class NormalFormFit:
    mu: float
    omega: float
    b1: float
    b2: float
    residual: float
    is_normal_form: bool

    def to_dict(self):
        return dict(mu=self.mu, omega=self.omega, b1=self.b1, b2=self.b2,
                    residual=self.residual, is_normal_form=self.is_normal_form)


@dataclass
class SindyModel:
    xi: np.ndarray
    alpha: float
    fit_r2: tuple = (np.nan, np.nan)
    converged: bool = True
    sweeps: int = 0
    scores: list = field(default_factory=list)  # grid-search table, if any
    normal_form: Optional[NormalFormFit] = None

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float).reshape(N_TERMS, 2)

    @property
    def nnz(self):
        return int(np.count_nonzero(self.xi))

    def rhs(self, X):
        return build_library(X).values @ self.xi

    def equations(self, digits=6):
        lines = []
        for k, lhs in enumerate(("x1'", "x2'")):
            parts = []
            for term, c in zip(TERMS, self.xi[:, k]):
                if c == 0:
                    continue
                mag = f"{abs(c):.{digits}f}"
                body = mag if term == "1" else f"{mag} {term}"
                if not parts:
                    parts.append(("-" if c < 0 else "") + body)
                else:
                    parts.append(("- " if c < 0 else "+ ") + body)
            lines.append(f"{lhs} = " + (" ".join(parts) if parts else "0"))
        return "\n".join(lines)

    def to_dict(self):
        return {
            "library": list(TERMS),
            "xi": {"x1'": self.xi[:, 0].tolist(), "x2'": self.xi[:, 1].tolist()},
            "alpha": self.alpha,
            "fit_r2": [float(v) for v in self.fit_r2],
            "nnz": self.nnz,
            "converged": bool(self.converged),
            "sweeps": int(self.sweeps),
            "scores": self.scores,
            "normal_form": None if self.normal_form is None else self.normal_form.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        if list(d.get("library", [])) != list(TERMS):
            raise ValueError("model library does not match the cubic library")
        xi = np.column_stack([d["xi"]["x1'"], d["xi"]["x2'"]])
        nf = d.get("normal_form")
        return cls(xi=xi, alpha=float(d["alpha"]), fit_r2=tuple(d.get("fit_r2", (np.nan, np.nan))),
                   converged=bool(d.get("converged", True)), sweeps=int(d.get("sweeps", 0)),
                   scores=list(d.get("scores", [])),
                   normal_form=None if nf is None else NormalFormFit(**nf))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
        return Path(path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# LASSO
# ---------------------------------------------------------------------------

def _moments(theta, y):
    N = theta.shape[0]
    return theta.T @ theta / N, theta.T @ y / N


def _objective(gram, c, alpha, xi):
    return xi @ gram @ xi - 2 * c @ xi + alpha * np.abs(xi).sum()


def _polish(gram, c, alpha, xi):
    """Exact solve on the support and signs found by coordinate descent.

    Kept only if the signs survive and the objective does not get worse, so
    an ill-conditioned support falls back to the descent iterate.
    """
    S = np.flatnonzero(xi)
    if S.size == 0:
        return xi
    s = np.sign(xi[S])
    try:
        sol = np.linalg.solve(gram[np.ix_(S, S)], c[S] - alpha / 2 * s)
    except np.linalg.LinAlgError:
        return xi
    if np.any(np.sign(sol) != s):
        return xi
    out = np.zeros_like(xi)
    out[S] = sol
    f_new, f_old = _objective(gram, c, alpha, out), _objective(gram, c, alpha, xi)
    # both are within rounding of the optimum; allow for that in the comparison
    return out if f_new <= f_old + 1e-12 * max(1.0, abs(f_old)) else xi


def _solve(gram, corr, alpha, tol, max_sweeps, xi0=None):
    p, q = corr.shape
    xi = np.zeros((p, q))
    sweeps = 0
    ok = True
    for k in range(q):
        start = np.zeros(p) if xi0 is None else np.ascontiguousarray(xi0[:, k], dtype=float)
        col, s, conv = kernels.lasso_cd(np.ascontiguousarray(gram), np.ascontiguousarray(corr[:, k]),
                                        float(alpha), start, float(tol), int(max_sweeps))
        xi[:, k] = _polish(gram, corr[:, k], alpha, col) if conv else col
        sweeps = max(sweeps, int(s))
        ok = ok and bool(conv)
    return xi, sweeps, ok


def lasso(theta, y, alpha, tol=1e-10, max_sweeps=100_000, xi0=None):
    """Coordinate-descent LASSO on an arbitrary design matrix.

    ``y`` may hold several target columns.  Returns ``(xi, sweeps, converged)``.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if theta.shape[0] != y.shape[0]:
        raise ValueError("library and targets have different row counts")
    gram, corr = _moments(theta, y)
    return _solve(gram, corr, alpha, tol, max_sweeps, xi0)


def lasso_fit(library, dX, alpha, tol=1e-10, max_sweeps=100_000, strict=False, xi0=None) -> SindyModel:
    """Fit one sparse coefficient column per derivative column.

    On hitting ``max_sweeps`` the last iterate is returned with
    ``converged=False`` (and a warning), or ``NotConverged`` is raised when
    ``strict``.
    """
    theta = library.values if isinstance(library, FeatureLibrary) else np.asarray(library, dtype=float)
    if theta.shape[1] != N_TERMS:
        raise ValueError(f"expected the {N_TERMS}-column cubic library")
    dX = np.asarray(dX, dtype=float)
    xi, sweeps, ok = lasso(theta, dX, alpha, tol, max_sweeps, xi0)
    if not ok:
        if strict:
            raise NotConverged(f"coordinate descent did not converge in {max_sweeps} sweeps")
        warnings.warn(f"LASSO stopped after {max_sweeps} sweeps without converging", RuntimeWarning)
    r2 = tuple(float(v) for v in _r2_columns(dX, theta @ xi))
    return SindyModel(xi=xi, alpha=float(alpha), fit_r2=r2, converged=ok, sweeps=sweeps)


def kkt_violation(theta, y, xi, alpha):
    """Largest violation of the LASSO optimality conditions for one column.

    With ``c = Theta^T (y - Theta xi)``: zero entries need ``|c_j| <= alpha N / 2``
    and nonzero entries need ``c_j = alpha N / 2 * sign(xi_j)``.
    """
    N = theta.shape[0]
    c = theta.T @ (y - theta @ xi)
    bound = alpha * N / 2
    zero = xi == 0
    v_zero = np.max(np.abs(c[zero]) - bound, initial=0.0)
    v_nz = np.max(np.abs(c[~zero] - bound * np.sign(xi[~zero])), initial=0.0)
    return max(v_zero, v_nz)


# ---------------------------------------------------------------------------
# alpha selection
# ---------------------------------------------------------------------------

def _as_list(X):
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [X]
    return [np.asarray(x, dtype=float) for x in X]


def _folds(n_sets, n_rows, k):
    """Fold label for each trajectory; a lone trajectory is cut into k blocks."""
    if n_sets >= k:
        return [np.full(n, i % k) for i, n in enumerate(n_rows)]
    if n_sets == 1:
        return [np.minimum(np.arange(n_rows[0]) * k // n_rows[0], k - 1)]
    raise ValueError(f"cannot form {k} folds from {n_sets} trajectories")


def derivative_data(X, dt, window=5):
    """Stack library rows and derivative targets over several trajectories."""
    thetas, targets = [], []
    for x in _as_list(X):
        xs, dx = estimate_derivatives(x, dt, window)
        thetas.append(build_library(xs).values)
        targets.append(dx)
    return thetas, targets


def grid_search_alpha(X, dt, alphas, k=5, window=5, tol_score=1e-4, lasso_tol=1e-10,
                      max_sweeps=100_000):
    """Cross-validated choice of the LASSO weight.

    Every alpha is fitted on k-1 folds and scored by derivative-fit R² on the
    held-out fold (mean over folds and both equations).  The largest alpha
    whose mean score is within ``tol_score`` of the best one wins.

    Returns ``(best_alpha, table)``; each table row holds ``alpha``,
    ``score``, ``fold_scores`` and the ``nnz`` of a fit on all the data.
    """
    alphas = sorted(float(a) for a in alphas)
    if not alphas:
        raise ValueError("alpha grid is empty")
    thetas, targets = derivative_data(X, dt, window)
    k = max(2, int(k))
    labels = _folds(len(thetas), [t.shape[0] for t in thetas], k)
    theta = np.vstack(thetas)
    y = np.vstack(targets)
    lab = np.concatenate(labels)
    used = np.unique(lab)
    moments = []
    for f in used:
        tr = lab != f
        moments.append(_moments(theta[tr], y[tr]))
    g_all, c_all = _moments(theta, y)

    table = []
    for a in alphas:
        fold_scores = []
        for f, (g, c) in zip(used, moments):
            xi, _, _ = _solve(g, c, a, lasso_tol, max_sweeps)
            te = lab == f
            fold_scores.append(float(np.mean(_r2_columns(y[te], theta[te] @ xi))))
        xi_all, _, _ = _solve(g_all, c_all, a, lasso_tol, max_sweeps)
        table.append({"alpha": a, "score": float(np.mean(fold_scores)), "fold_scores": fold_scores,
                      "nnz": int(np.count_nonzero(xi_all))})
    best = max(r["score"] for r in table)
    chosen = max(r["alpha"] for r in table if r["score"] >= best - tol_score)
    return chosen, table


def discover(X, dt, alphas, k=5, window=5, tol_score=1e-4, nf_tol=0.05) -> SindyModel:
    """Grid-search alpha, refit on all trajectories, attach the normal-form projection."""
    alpha, table = grid_search_alpha(X, dt, alphas, k=k, window=window, tol_score=tol_score)
    thetas, targets = derivative_data(X, dt, window)
    model = lasso_fit(FeatureLibrary(np.vstack(thetas)), np.vstack(targets), alpha)
    model.scores = table
    model.normal_form = normal_form_project(model, nf_tol)
    return model


# ---------------------------------------------------------------------------
# normal form
# ---------------------------------------------------------------------------

# (row, column, parameter index, sign) for every entry the template touches;
# parameters are (mu, omega, b1, b2).
_TEMPLATE = (
    (1, 0, 0, 1.0), (2, 1, 0, 1.0),
    (2, 0, 1, -1.0), (1, 1, 1, 1.0),
    (6, 0, 2, 1.0), (8, 0, 2, 1.0), (7, 1, 2, 1.0), (9, 1, 2, 1.0),
    (7, 0, 3, -1.0), (9, 0, 3, -1.0), (6, 1, 3, 1.0), (8, 1, 3, 1.0),
)


def normal_form_matrix(mu, omega, b1, b2):
    """Xi of the Hopf normal form with (x1² + x2²)-weighted cubic terms."""
    xi = np.zeros((N_TERMS, 2))
    params = (mu, omega, b1, b2)
    for r, c, k, s in _TEMPLATE:
        xi[r, c] = s * params[k]
    return xi


def normal_form_project(model, tol=0.05) -> NormalFormFit:
    """Least-squares fit of Xi by the four-parameter normal-form template.

    Each parameter touches its own set of entries, so the fit is the signed
    mean over those entries.
    """
    xi = model.xi if isinstance(model, SindyModel) else np.asarray(model, dtype=float)
    sums = np.zeros(4)
    counts = np.zeros(4)
    for r, c, k, s in _TEMPLATE:
        sums[k] += s * xi[r, c]
        counts[k] += 1
    mu, omega, b1, b2 = (sums / counts).tolist()
    resid = np.linalg.norm(xi - normal_form_matrix(mu, omega, b1, b2)) / max(np.linalg.norm(xi), 1e-15)
    return NormalFormFit(mu, omega, b1, b2, float(resid), bool(resid <= tol))


# ---------------------------------------------------------------------------
# re-simulation
# ---------------------------------------------------------------------------

def _euler(xi, x0, dt, steps):
    traj, bad = kernels.euler_rollout(np.ascontiguousarray(xi, dtype=float),
                                      np.asarray(x0, dtype=float).copy(), float(dt), int(steps),
                                      OVERFLOW_LIMIT)
    if bad >= 0:
        raise Overflow(f"state magnitude exceeded {OVERFLOW_LIMIT:g} at step {bad} (dt={dt})")
    return traj


def simulate_model(model, x0, dt, steps, richardson=False):
    """Forward-Euler rollout returning ``steps + 1`` rows.

    With ``richardson`` the run is repeated at ``dt/2`` and the first-order
    error estimate ``x_dt - x_dt/2`` is subtracted once more, i.e. the
    result is ``2 x_dt/2 - x_dt`` on the coarse grid.
    """
    xi = model.xi if isinstance(model, SindyModel) else np.asarray(model, dtype=float)
    x0 = np.asarray(x0, dtype=float).reshape(2)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state is not finite")
    coarse = _euler(xi, x0, dt, steps)
    if not richardson:
        return coarse
    fine = _euler(xi, x0, dt / 2, 2 * steps)[::2]
    return 2.0 * fine - coarse
