"""Pseudospectral simulation of the viscous Moore-Greitzer state-space form.

The disturbance ``g(theta)`` is carried as its half spectrum ``g_n``,
``n = 0..N/2``, with ``g_0`` and the Nyquist mode pinned to zero; the mean
flow ``Phi`` and plenum pressure ``Psi`` ride along as two real scalars.

The viscous/convective operator is diagonal in ``n`` and very stiff for the
top modes (``|L_255| ~ 3e4`` at ``nu = 1``), so time stepping uses the
Lawson (integrating-factor) form of the Dormand-Prince 5(4) pair: the
linear part is propagated exactly by ``exp(c h L)`` factors, all with
nonpositive real part, and only the smooth nonlinearity is handled by the
explicit stages.  Steps are clipped to land on the output grid.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NegativePressure, StepSizeUnderflow, ZeroModePresent
from .model import ModelParams, psi_c, psi_c_d1, psi_c_d2, psi_c_d3
from .snapshots import SnapshotMatrix

ZERO_MODE_TOL = 1e-12


def theta_grid(n_grid):
    return -np.pi + 2 * np.pi * np.arange(n_grid) / n_grid


def _mode_sign(n_grid):
    # theta_j = -pi + 2 pi j / N  turns e^{i n theta_j} into (-1)^n e^{2 pi i n j / N}
    return np.where(np.arange(n_grid // 2 + 1) % 2 == 0, 1.0, -1.0)


@dataclass
class SpectralState:
    """Half spectrum ``g_modes[n] = g_n`` (n = 0..N/2) plus ``phi`` and ``psi``."""

    g_modes: np.ndarray
    phi: float
    psi: float

    def __post_init__(self):
        self.g_modes = np.asarray(self.g_modes, dtype=np.complex128)
        self.phi = float(self.phi)
        self.psi = float(self.psi)

    @property
    def n_grid(self):
        return 2 * (self.g_modes.size - 1)

    def to_grid(self):
        """Real samples of ``g`` on ``theta_grid(n_grid)``."""
        N = self.n_grid
        return np.fft.irfft(self.g_modes * _mode_sign(N), N) * N

    @classmethod
    def from_grid(cls, g, phi, psi):
        g = np.asarray(g, dtype=float)
        N = g.size
        if N % 2:
            raise ValueError("grid size must be even")
        modes = np.fft.rfft(g) / N * _mode_sign(N)
        return cls(modes, phi, psi)

    @classmethod
    def zeros(cls, n_grid, phi, psi):
        return cls(np.zeros(n_grid // 2 + 1, dtype=np.complex128), phi, psi)

    def full_modes(self):
        """Modes ``n = -N/2 .. N/2 - 1`` in ascending order (conjugate-symmetric)."""
        N = self.n_grid
        pos = self.g_modes[: N // 2]
        neg = np.conj(self.g_modes[1: N // 2 + 1][::-1])
        return np.concatenate([neg, pos])

    def as_row(self):
        return np.concatenate([self.to_grid(), [self.phi, self.psi]])


# --- operators -----------------------------------------------------------------

def _k_factor(n_modes, p):
    n = np.arange(n_modes, dtype=float)
    k = np.ones(n_modes)
    k[1:] = 1.0 + p.m * p.a / n[1:]
    return k


def _check_zero_mode(modes):
    if abs(modes[0]) > ZERO_MODE_TOL:
        raise ZeroModePresent(f"|g_0| = {abs(modes[0]):.3e}; K acts on zero-mean fields only")


def k_apply(modes, p):
    """Scale mode ``n`` by ``1 + m a / |n|`` (half-spectrum input)."""
    modes = np.asarray(modes, dtype=np.complex128)
    _check_zero_mode(modes)
    out = modes * _k_factor(modes.size, p)
    out[0] = 0.0
    return out


def k_inverse(modes, p):
    modes = np.asarray(modes, dtype=np.complex128)
    _check_zero_mode(modes)
    out = modes / _k_factor(modes.size, p)
    out[0] = 0.0
    return out


def linear_symbol(n_grid, p):
    """Diagonal of ``K^{-1}((nu/2) d^2/dtheta^2 - (1/2) d/dtheta)``, Nyquist mode dropped."""
    n = np.arange(n_grid // 2 + 1, dtype=float)
    L = (-0.5 * p.nu * n ** 2 - 0.5j * n) / _k_factor(n.size, p)
    L[0] = 0.0
    L[-1] = 0.0
    return L


class _System:
    """Right-hand side in internal coordinates ``y = [c_0..c_{N/2}, Phi, Psi]``.

    ``c_n = (-1)^n g_n`` are the plain FFT coefficients of the grid samples;
    the dynamics are rotation invariant, so the sign change commutes with
    every operator.
    """

    def __init__(self, p, n_grid):
        if n_grid < 4 or n_grid & (n_grid - 1):
            raise ConfigError(f"n_grid must be a power of two >= 4, got {n_grid}")
        self.p = p
        self.N = n_grid
        self.nm = n_grid // 2 + 1
        self.L = np.concatenate([linear_symbol(n_grid, p), [0.0, 0.0]])
        kinv = 1.0 / _k_factor(self.nm, p)
        kinv[0] = 0.0
        kinv[-1] = 0.0
        self.aKinv = p.a * kinv
        self.sign = _mode_sign(n_grid)

    def pack(self, state):
        return np.concatenate([state.g_modes * self.sign, [state.phi, state.psi]]).astype(np.complex128)

    def unpack(self, y):
        return SpectralState(y[: self.nm] * self.sign, y[-2].real, y[-1].real)

    def nonlinear(self, y):
        p, N = self.p, self.N
        phi = y[-2].real
        psi = y[-1].real
        if psi < 0:
            raise NegativePressure(f"plenum pressure Psi = {psi:.6g} < 0")
        g = np.fft.irfft(y[: self.nm], N) * N
        nl = psi_c_d1(phi, p) * g + 0.5 * psi_c_d2(phi, p) * g * g + psi_c_d3(phi, p) / 6.0 * g * g * g
        mean = nl.mean()
        out = np.empty_like(y)
        out[: self.nm] = self.aKinv * (np.fft.rfft(nl) / N)
        out[0] = 0.0
        out[-2] = (psi_c(phi, p) + mean - psi) / p.l_c
        out[-1] = (phi - p.gamma * np.sqrt(psi)) / (4 * p.B ** 2 * p.l_c)
        return out

    def full(self, y):
        return self.L * y + self.nonlinear(y)


def rhs(state, p):
    """Time derivative of ``state`` as a :class:`SpectralState`."""
    sys = _System(p, state.n_grid)
    _check_zero_mode(state.g_modes)
    return sys.unpack(sys.full(sys.pack(state)))


# --- Lawson Dormand-Prince 5(4) ------------------------------------------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class _Stepper:
    def __init__(self, sys, rtol, atol):
        self.sys = sys
        self.rtol = rtol
        self.atol = atol
        self._h = None
        self._exp = {}
        self.n_accepted = 0
        self.n_rejected = 0

    def _factors(self, h):
        if h != self._h:
            L = self.sys.L
            self._exp = {d: np.exp(d * h * L) for d in {round(ci - cj, 14) for ci in _C for cj in _C if ci >= cj}}
            self._h = h
        return self._exp

    def attempt(self, y, f0, h):
        """One Lawson-DP5 trial step; returns (y_new, f_new, error_norm)."""
        E = self._factors(h)
        ks = [f0]
        for i in range(1, 7):
            yi = E[round(_C[i], 14)] * y
            for j, aij in enumerate(_A[i]):
                if aij:
                    yi = yi + (h * aij) * E[round(_C[i] - _C[j], 14)] * ks[j]
            ks.append(self.sys.nonlinear(yi))
        y_new = yi  # the 7th stage is the 5th-order solution (FSAL)
        err = np.zeros_like(y)
        for j in range(7):
            if _E[j]:
                err += (h * _E[j]) * E[round(1.0 - _C[j], 14)] * ks[j]
        scale = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y_new))
        e = np.concatenate([(err.real / scale), (err.imag / scale)])
        return y_new, ks[6], float(np.sqrt(np.sum(e * e) / (2 * self.sys.nm - 2)))


def integrate_modes(state, p, t_end, dt_out=0.1, rtol=1e-8, atol=1e-10, h0=None, record_from=0.0):
    """Integrate from ``t = 0`` and sample every ``dt_out``.

    Returns ``(times, modes, phi, psi)`` for samples with ``t >= record_from``;
    ``modes`` holds the true half-spectrum ``g_n`` per row.
    """
    sys = _System(p, state.n_grid)
    _check_zero_mode(state.g_modes)
    stepper = _Stepper(sys, rtol, atol)
    y = sys.pack(state)
    f = sys.nonlinear(y)
    n_out = int(round(t_end / dt_out))
    if n_out < 0 or abs(n_out * dt_out - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError("t_end must be a nonnegative multiple of dt_out")
    times, rows = [], []

    def record(k, y):
        t = k * dt_out
        if t >= record_from - 1e-9 * dt_out:
            times.append(t)
            rows.append(y.copy())

    record(0, y)
    t = 0.0
    h = h0 if h0 is not None else min(dt_out, 0.01)
    for k in range(1, n_out + 1):
        target = k * dt_out
        while target - t > 1e-12 * dt_out:
            step = min(h, target - t)
            if step < 1e-12 * max(1.0, abs(t)):
                raise StepSizeUnderflow(f"step size {step:.3e} underflowed at t = {t:.6g}")
            try:
                y_new, f_new, err = stepper.attempt(y, f, step)
            except NegativePressure:
                stepper.n_rejected += 1
                h = 0.25 * step
                continue
            if err <= 1.0:
                t = target if target - (t + step) <= 1e-12 * dt_out else t + step
                y, f = y_new, f_new
                stepper.n_accepted += 1
                fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                if step == h or fac < 1:
                    h = step * fac
            else:
                stepper.n_rejected += 1
                h = step * max(0.2, 0.9 * err ** -0.2)
        if y[-1].real < 0:
            raise NegativePressure(f"plenum pressure went negative at t = {t:.6g}")
        record(k, y)
    Y = np.array(rows)
    modes = Y[:, : sys.nm] * sys.sign
    return np.array(times), modes, Y[:, -2].real.copy(), Y[:, -1].real.copy()


# --- configuration and drivers ----------------------------------------------------

@dataclass(frozen=True)
class InitialCondition:
    amplitude: float
    phi: float
    psi: float

    def state(self, n_grid):
        """``g = amplitude * cos(theta)``: only modes +-1 are populated."""
        s = SpectralState.zeros(n_grid, self.phi, self.psi)
        s.g_modes[1] = 0.5 * self.amplitude
        return s


def sample_initial_conditions(seed, n_grid=512, mean=0.1, std=0.05):
    """Draw amplitude, Phi(0) and Psi(0) from Normal(mean, std^2).

    ``seed`` may be an int, a sequence of ints (e.g. ``(seed, run_index)``)
    or a ``numpy.random.Generator``.  Psi(0) is redrawn until positive.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    amplitude = rng.normal(mean, std)
    phi = rng.normal(mean, std)
    psi = rng.normal(mean, std)
    while psi <= 0:
        psi = rng.normal(mean, std)
    ic = InitialCondition(float(amplitude), float(phi), float(psi))
    return ic.state(n_grid), ic


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    dt_out: float = 0.1
    t_end: float = 500.0
    t_cut: float = 200.0
    n_grid: int = 512
    rtol: float = 1e-8
    atol: float = 1e-10
    seed: int = 0
    ic: InitialCondition | None = None

    def __post_init__(self):
        if self.dt_out <= 0:
            raise ConfigError("dt_out must be positive")
        if not 0 <= self.t_cut < self.t_end:
            raise ConfigError("require 0 <= t_cut < t_end")
        if self.n_grid < 4 or self.n_grid & (self.n_grid - 1):
            raise ConfigError("n_grid must be a power of two")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("integrator tolerances must be positive")

    def to_dict(self):
        d = asdict(self)
        d["params"] = self.params.to_dict()
        d["ic"] = None if self.ic is None else asdict(self.ic)
        return d

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("simulation config must be a JSON object")
        allowed = {"params", "dt_out", "t_end", "t_cut", "n_grid", "rtol", "atol", "seed", "ic"}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ConfigError(f"unknown simulation config keys: {unknown}")
        if "params" not in doc:
            raise ConfigError("simulation config requires 'params'")
        kw = dict(doc)
        kw["params"] = ModelParams.from_dict(doc["params"])
        if kw.get("ic") is not None:
            try:
                kw["ic"] = InitialCondition(**kw["ic"])
            except TypeError as exc:
                raise ConfigError(f"bad initial condition block: {exc}") from exc
        for key in ("dt_out", "t_end", "t_cut", "rtol", "atol"):
            if key in kw:
                kw[key] = float(kw[key])
        for key in ("n_grid", "seed"):
            if key in kw:
                kw[key] = int(kw[key])
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


def initial_state(config, run_index=0):
    if config.ic is not None:
        return config.ic.state(config.n_grid), config.ic
    return sample_initial_conditions((config.seed, run_index), config.n_grid)


def integrate(config, run_index=0):
    """Simulate one run and return the post-transient grid-space snapshots.

    Columns are ``[g(theta_0) .. g(theta_{N-1}), Phi, Psi]``; rows with
    ``t < t_cut`` are dropped.
    """
    state, ic = initial_state(config, run_index)
    times, modes, phi, psi = integrate_modes(
        state, config.params, config.t_end, config.dt_out, config.rtol, config.atol, record_from=config.t_cut
    )
    N = config.n_grid
    g = np.fft.irfft(modes * _mode_sign(N), N, axis=1) * N
    data = np.column_stack([g, phi, psi])
    meta = {"run_index": run_index, "ic": asdict(ic), "seed": config.seed}
    return SnapshotMatrix(data, times, meta=meta)


def _integrate_job(args):
    config, run_index = args
    return integrate(config, run_index)


def simulate_runs(config, runs, workers=1):
    """Independent runs with initial conditions drawn from ``(seed, run_index)`` streams."""
    jobs = [(config, i) for i in range(runs)]
    if workers <= 1:
        return [_integrate_job(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_integrate_job, jobs))
