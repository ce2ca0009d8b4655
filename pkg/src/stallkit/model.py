"""Closed-form analysis of the viscous Moore-Greitzer compression system.

Everything here is a pure function of an immutable :class:`ModelParams`:
the cubic compressor characteristic and its derivatives, the throttle
equilibrium, the linear spectra of the disturbance (PDE) and mean-flow
(ODE) subsystems, critical throttle settings and the steady operating
point of a finite-amplitude stall cell.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, DegenerateEquilibrium, NoBracket, NoRealRoot

GAMMA_BRACKET = (0.01, 2.0)
_SCAN_POINTS = 800
_FD_STEP = 1e-4


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of one compressor/plenum/throttle instance.

    ``psi_c0`` is stored as an absolute value; use :meth:`reference` to build the
    reference parameter set where it is tied to ``H``.
    """

    l_c: float
    m: float
    a: float
    nu: float
    psi_c0: float
    H: float
    W: float
    B: float
    gamma: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or isinstance(v, bool):
                raise ConfigError(f"{f.name} must be a real number, got {v!r}")
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{f.name} must be finite and strictly positive, got {v!r}")
        # l_c = l_I + l_E + 1/a with nonnegative duct lengths
        if self.l_c < 1.0 / self.a - 1e-12:
            raise ConfigError(f"l_c={self.l_c} is shorter than the compressor lag length 1/a={1 / self.a}")

    @classmethod
    def reference(cls, B=0.15, gamma=0.57, nu=1.0, **overrides):
        """Reference parameter set with ``psi_c0 = 1.67 H``."""
        H = overrides.pop("H", 0.18)
        base = dict(l_c=8.0, m=1.75, a=1 / 3.5, nu=nu, psi_c0=1.67 * H, H=H, W=0.25, B=B, gamma=gamma)
        base.update(overrides)
        return cls(**base)

    def with_gamma(self, gamma):
        return replace(self, gamma=float(gamma))

    def to_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("model parameters must be a JSON object")
        names = [f.name for f in fields(cls)]
        unknown = sorted(set(doc) - set(names))
        if unknown:
            raise ConfigError(f"unknown parameter keys: {unknown}")
        missing = [n for n in names if n not in doc]
        if missing:
            raise ConfigError(f"missing parameter keys: {missing}")
        return cls(**{n: doc[n] for n in names})

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source):
        """Parse a JSON string or read a JSON file path."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed parameter JSON: {exc}") from exc
        return cls.from_dict(doc)


# --- compressor characteristic -------------------------------------------------

def psi_c(phi, p):
    u = np.asarray(phi) / p.W - 1.0
    return p.psi_c0 + p.H * (1.0 + 1.5 * u - 0.5 * u ** 3)


def psi_c_d1(phi, p):
    u = np.asarray(phi) / p.W - 1.0
    return 1.5 * p.H / p.W * (1.0 - u ** 2)


def psi_c_d2(phi, p):
    u = np.asarray(phi) / p.W - 1.0
    return -3.0 * p.H / p.W ** 2 * u


def psi_c_d3(phi, p):
    return -3.0 * p.H / p.W ** 3 + 0.0 * np.asarray(phi)


# --- equilibrium ---------------------------------------------------------------

@dataclass(frozen=True)
class EquilibriumPoint:
    phi_e: float
    psi_e: float
    X: float
    Y: float


def equilibrium_polynomial(phi, p):
    """Residual of the cubic whose real root is the throttle-line equilibrium."""
    phi = np.asarray(phi, dtype=float)
    return (-p.H / (2 * p.W ** 3) * phi ** 3
            + (3 * p.H / (2 * p.W ** 2) - 1 / p.gamma ** 2) * phi ** 2 + p.psi_c0)


def equilibrium(p):
    """Intersection of the compressor and throttle characteristics (Cardano form)."""
    X = p.W ** 3 / p.H * p.psi_c0
    Y = 2 * p.W ** 3 / (3 * p.H) * (1 / p.gamma ** 2 - 3 * p.H / (2 * p.W ** 2))
    disc = X * (X - 2 * Y ** 3)
    if disc >= 0:
        r = np.sqrt(disc)
        phi = float(np.cbrt(X - Y ** 3 + r) + np.cbrt(X - Y ** 3 - r) - Y)
    else:
        # three real roots: the principal complex cube roots are conjugates
        r = np.sqrt(complex(disc))
        z = (X - Y ** 3 + r) ** (1 / 3) + (X - Y ** 3 - r) ** (1 / 3) - Y
        if abs(z.imag) > 1e-9:
            raise NoRealRoot(f"closed-form equilibrium has imaginary part {z.imag:.3e}")
        phi = float(z.real)
    if not np.isfinite(phi):
        raise NoRealRoot("closed-form equilibrium is not finite")
    # Cardano cancels badly near a double root; two Newton steps restore full precision
    for _ in range(2):
        fp = (-3 * p.H / (2 * p.W ** 3) * phi ** 2
              + 2 * (3 * p.H / (2 * p.W ** 2) - 1 / p.gamma ** 2) * phi)
        if fp != 0:
            phi = phi - float(equilibrium_polynomial(phi, p)) / fp
    return EquilibriumPoint(phi_e=phi, psi_e=phi ** 2 / p.gamma ** 2, X=float(X), Y=float(Y))


# --- spectra -------------------------------------------------------------------

def pde_eigenvalue(n, p, eq=None):
    """Linear growth rate of disturbance mode ``n`` (negative n gives the conjugate)."""
    n = int(n)
    if n == 0:
        raise ValueError("mode index must be nonzero; the mean is not a disturbance mode")
    eq = eq or equilibrium(p)
    k = abs(n)
    pref = p.a * k / (k + p.a * p.m)
    return complex(pref * (psi_c_d1(eq.phi_e, p) - p.nu / (2 * p.a) * n * n - 1j * n / (2 * p.a)))


def ode_jacobian(p, eq=None):
    """2x2 Jacobian of the (Phi, Psi) subsystem at the equilibrium."""
    eq = eq or equilibrium(p)
    c = 1.0 / (4 * p.B ** 2 * p.l_c)
    return np.array([
        [psi_c_d1(eq.phi_e, p) / p.l_c, -1.0 / p.l_c],
        [c, -c * p.gamma ** 2 / (2 * eq.phi_e)],
    ])


def ode_eigenvalues(p, eq=None):
    """Surge-mode eigenvalue pair ``(mu_1, mu_2)``; mu_1 has the larger real part."""
    eq = eq or equilibrium(p)
    if eq.psi_e <= 0:
        raise DegenerateEquilibrium(f"equilibrium pressure {eq.psi_e} is not positive")
    d1 = psi_c_d1(eq.phi_e, p)
    q = p.gamma / (8 * p.B ** 2 * np.sqrt(eq.psi_e))
    root = np.sqrt(complex((d1 + q) ** 2 - 1 / p.B ** 2))
    mu1 = (d1 - q + root) / (2 * p.l_c)
    mu2 = (d1 - q - root) / (2 * p.l_c)
    return complex(mu1), complex(mu2)


class BifurcationClass(str, enum.Enum):
    STABLE = "Stable"
    SURGE = "Surge"
    STALL = "Stall"
    COMBINATION = "Combination"


def classify(p):
    """Which linear instability is present at the parameter point."""
    eq = equilibrium(p)
    stall = pde_eigenvalue(1, p, eq).real > 0
    surge = ode_eigenvalues(p, eq)[0].real > 0
    if stall and surge:
        return BifurcationClass.COMBINATION
    if stall:
        return BifurcationClass.STALL
    if surge:
        return BifurcationClass.SURGE
    return BifurcationClass.STABLE


# --- critical throttle settings -------------------------------------------------

def _stall_margin(gamma, p):
    # proportional to Re(lambda_1)
    q = p.with_gamma(gamma)
    return psi_c_d1(equilibrium(q).phi_e, q) - q.nu / (2 * q.a)


def _surge_margin(gamma, p):
    # proportional to the trace of the ODE Jacobian
    q = p.with_gamma(gamma)
    eq = equilibrium(q)
    return psi_c_d1(eq.phi_e, q) - q.gamma / (8 * q.B ** 2 * np.sqrt(eq.psi_e))


_MARGINS = {"stall": _stall_margin, "surge": _surge_margin}


def re_growth(kind, p):
    """Real part of the critical eigenvalue of the given kind at ``p``."""
    if kind == "stall":
        return pde_eigenvalue(1, p).real
    if kind == "surge":
        return ode_eigenvalues(p)[0].real
    raise ValueError(f"unknown instability kind {kind!r}")


def critical_gamma(p, kind):
    """Throttle value below which the ``kind`` instability sets in.

    The margin is scanned on the bracket; the largest crossing from unstable
    (below) to stable (above) is refined with Brent's method.
    """
    margin = _MARGINS[kind]
    lo, hi = GAMMA_BRACKET
    grid = np.linspace(lo, hi, _SCAN_POINTS)
    vals = np.array([margin(g, p) for g in grid])
    idx = np.nonzero((vals[:-1] > 0) & (vals[1:] <= 0))[0]
    if idx.size == 0:
        raise NoBracket(f"{kind} condition does not change sign on gamma in ({lo}, {hi}]")
    i = idx[-1]
    if vals[i + 1] == 0:
        return float(grid[i + 1])
    return float(brentq(margin, grid[i], grid[i + 1], args=(p,), xtol=1e-15, rtol=4 * np.finfo(float).eps))


def transversality(p, kind, gamma):
    """Central-difference derivative of the critical real part w.r.t. gamma."""
    h = _FD_STEP
    return (re_growth(kind, p.with_gamma(gamma + h)) - re_growth(kind, p.with_gamma(gamma - h))) / (2 * h)


@dataclass(frozen=True)
class CriticalGammas:
    surge: float | None
    stall: float | None
    combo: float | None
    surge_slope: float | None = None
    stall_slope: float | None = None

    @property
    def surge_transversal(self):
        # eigenvalue enters the right half-plane as the throttle closes
        return None if self.surge_slope is None else self.surge_slope < 0

    @property
    def stall_transversal(self):
        return None if self.stall_slope is None else self.stall_slope < 0


def critical_gammas(p, combo_tol=1e-8):
    """Critical throttle values for surge, stall and (if coincident) combination.

    Missing roots are reported as ``None``; use :func:`critical_gamma` to get
    a :class:`NoBracket` error instead.
    """
    out = {}
    for kind in ("surge", "stall"):
        try:
            g = critical_gamma(p, kind)
        except NoBracket:
            out[kind] = (None, None)
        else:
            out[kind] = (g, transversality(p, kind, g))
    combo = None
    gs, gt = out["surge"][0], out["stall"][0]
    if gs is not None and gt is not None and abs(gs - gt) <= combo_tol:
        combo = 0.5 * (gs + gt)
    return CriticalGammas(surge=gs, stall=gt, combo=combo, surge_slope=out["surge"][1], stall_slope=out["stall"][1])


def combo_plenum_ratio(p):
    """Plenum ratio B that makes surge and stall go critical at the same gamma."""
    g = critical_gamma(p, "stall")
    eq = equilibrium(p.with_gamma(g))
    return float(np.sqrt(p.a * g / (4 * p.nu * np.sqrt(eq.psi_e))))


# --- stall operating point ------------------------------------------------------

def stall_steady_state(amplitude, p):
    """Mean-flow operating point ``(Phi_ss, Psi_ss)`` under a standing wave ``A cos(theta)``.

    Averaging the characteristic over one wavelength adds ``psi_c''(Phi) A^2 / 4``;
    the resulting cubic in Phi is solved exactly and the real root nearest the
    clean-flow equilibrium is returned.
    """
    A = float(amplitude)
    if A < 0:
        raise ValueError("stall amplitude must be nonnegative")
    eq = equilibrium(p)
    # in u = Phi/W - 1:  psi_c0 + H(1 + 1.5u - 0.5u^3) - (3 H A^2 / 4 W^2) u - W^2 (u+1)^2 / gamma^2
    k = p.W ** 2 / p.gamma ** 2
    coeffs = [
        p.psi_c0 + p.H - k,
        1.5 * p.H - 3 * p.H * A ** 2 / (4 * p.W ** 2) - 2 * k,
        -k,
        -0.5 * p.H,
    ]
    roots = np.polynomial.polynomial.polyroots(coeffs)
    real = roots[np.abs(roots.imag) <= 1e-9 * max(1.0, np.abs(roots).max())].real
    if real.size == 0:
        raise NoBracket("steady-state cubic has no real root")
    phi = p.W * (real + 1.0)
    phi_ss = float(phi[np.argmin(np.abs(phi - eq.phi_e))])
    return phi_ss, phi_ss ** 2 / p.gamma ** 2


def sweep(p, gammas):
    """Per-gamma table rows for the bifurcation classification sweep."""
    rows = []
    for g in gammas:
        q = p.with_gamma(float(g))
        eq = equilibrium(q)
        rows.append({
            "gamma": float(g),
            "phi_e": eq.phi_e,
            "psi_e": eq.psi_e,
            "re_lambda1": pde_eigenvalue(1, q, eq).real,
            "re_mu1": ode_eigenvalues(q, eq)[0].real,
            "class": classify(q).value,
        })
    return rows
