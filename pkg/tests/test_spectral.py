import numpy as np
import pytest

from stallkit import model as mg
from stallkit import spectral as sp
from stallkit.errors import ConfigError, NegativePressure, ZeroModePresent


@pytest.fixture
def p():
    return mg.ModelParams.reference(nu=0.1)


def random_modes(rng, n_grid=64):
    g = rng.normal(size=n_grid)
    g -= g.mean()
    return sp.SpectralState.from_grid(g, 0.3, 0.3).g_modes


# --- K operator --------------------------------------------------------------

def test_k_scales_first_mode(p):
    modes = np.zeros(9, complex)
    modes[1] = 1.0
    out = sp.k_apply(modes, p)
    assert out[1] == pytest.approx(1.5, abs=1e-15)
    assert sp.k_inverse(modes, p)[1] == pytest.approx(1 / 1.5, abs=1e-15)


def test_k_zero_vector(p):
    assert np.all(sp.k_apply(np.zeros(17, complex), p) == 0)


@pytest.mark.parametrize("seed", range(5))
def test_k_round_trip(p, seed):
    modes = random_modes(np.random.default_rng(seed))
    back = sp.k_inverse(sp.k_apply(modes, p), p)
    assert np.max(np.abs(back - modes)) <= 1e-13


def test_k_rejects_mean_mode(p):
    modes = np.zeros(9, complex)
    modes[0] = 1e-9
    with pytest.raises(ZeroModePresent):
        sp.k_apply(modes, p)
    with pytest.raises(ZeroModePresent):
        sp.k_inverse(modes, p)


# --- state layout ------------------------------------------------------------

def test_grid_round_trip_and_conjugate_symmetry():
    rng = np.random.default_rng(1)
    g = rng.normal(size=32)
    g -= g.mean()
    s = sp.SpectralState.from_grid(g, 0.1, 0.2)
    assert np.allclose(s.to_grid(), g, atol=1e-14)
    full = s.full_modes()
    n = np.arange(-16, 16)
    for k in range(1, 16):
        assert full[n == -k][0] == pytest.approx(np.conj(full[n == k][0]), abs=1e-14)
    # direct Fourier sum on the theta grid as an independent oracle
    theta = sp.theta_grid(32)
    for k in (1, 3, 7):
        direct = np.mean(g * np.exp(-1j * k * theta))
        assert s.g_modes[k] == pytest.approx(direct, abs=1e-14)


def test_theta_grid_starts_at_minus_pi():
    th = sp.theta_grid(512)
    assert th[0] == -np.pi and th[-1] == pytest.approx(np.pi - 2 * np.pi / 512)


# --- right-hand side ---------------------------------------------------------

def test_rhs_vanishes_at_equilibrium(p):
    eq = mg.equilibrium(p)
    d = sp.rhs(sp.SpectralState.zeros(512, eq.phi_e, eq.psi_e), p)
    assert np.max(np.abs(d.g_modes)) <= 1e-12
    assert abs(d.phi) <= 1e-12 and abs(d.psi) <= 1e-12


@pytest.mark.parametrize("phi,psi", [(0.1, 0.2), (0.5, 0.4), (0.3, 0.01)])
def test_rhs_without_disturbance_is_surge_ode(p, phi, psi):
    d = sp.rhs(sp.SpectralState.zeros(64, phi, psi), p)
    assert np.all(d.g_modes == 0)
    assert d.phi == pytest.approx((mg.psi_c(phi, p) - psi) / p.l_c, abs=1e-15)
    assert d.psi == pytest.approx((phi - p.gamma * np.sqrt(psi)) / (4 * p.B ** 2 * p.l_c), abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_rhs_linearization_matches_mode_eigenvalue(p, n):
    eq = mg.equilibrium(p)
    s = sp.SpectralState.zeros(512, eq.phi_e, eq.psi_e)
    s.g_modes[n] = 0.5e-6
    d = sp.rhs(s, p)
    rate = d.g_modes[n] / s.g_modes[n]
    lam = mg.pde_eigenvalue(n, p)
    assert rate.real == pytest.approx(lam.real, rel=1e-6)
    assert rate.imag == pytest.approx(lam.imag, rel=1e-6)


def test_rhs_rejects_negative_pressure(p):
    with pytest.raises(NegativePressure):
        sp.rhs(sp.SpectralState.zeros(16, 0.3, -0.01), p)


# --- integration -------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 3])
def test_integrated_growth_rate_matches_eigenvalue(p, n):
    eq = mg.equilibrium(p)
    s = sp.SpectralState.zeros(512, eq.phi_e, eq.psi_e)
    s.g_modes[n] = 0.5e-6
    t, modes, _, _ = sp.integrate_modes(s, p, 1.0, dt_out=0.1)
    rate = np.log(abs(modes[-1, n]) / abs(modes[0, n])) / t[-1]
    assert abs(rate - mg.pde_eigenvalue(n, p).real) <= 1e-4


def test_disturbance_free_trajectory_stays_free(p):
    s = sp.SpectralState.zeros(512, 0.2, 0.25)
    _, modes, phi, psi = sp.integrate_modes(s, p, 30.0)
    assert np.max(np.abs(modes)) <= 1e-12
    assert np.all(np.isfinite(phi)) and np.all(psi > 0)


def test_stable_config_decays_to_equilibrium():
    cfg = sp.SimConfig(mg.ModelParams.reference(gamma=0.70, nu=0.1), t_end=300.0, t_cut=200.0,
                       ic=sp.InitialCondition(0.1, 0.3, 0.3))
    snap = sp.integrate(cfg)
    eq = mg.equilibrium(cfg.params)
    assert np.max(np.abs(snap.g[-1])) <= 1e-6
    assert snap.phi[-1] == pytest.approx(eq.phi_e, abs=1e-6)
    assert snap.psi[-1] == pytest.approx(eq.psi_e, abs=1e-6)


def test_snapshot_rows_and_zero_mean(stall_runs, stall_sim):
    for snap in stall_runs:
        assert snap.shape == (3001, 514)
        assert np.all(np.isfinite(snap.data))
        assert np.max(np.abs(snap.g.mean(axis=1))) <= 1e-10
        assert snap.times[0] == pytest.approx(stall_sim.t_cut)
        assert snap.times[-1] == pytest.approx(stall_sim.t_end)


def test_stall_settles_to_travelling_cell(stall_runs, stall_sim):
    eq = mg.equilibrium(stall_sim.params)
    snap = stall_runs[0]
    amp = np.abs(np.fft.rfft(snap.g, axis=1)[:, 1]) * 2 / snap.n_grid
    tail = amp[-500:]
    assert tail.mean() > 0.05
    assert tail.std() / tail.mean() < 1e-3
    assert abs(snap.phi[-500:].mean() - eq.phi_e) > 1e-2
    assert abs(snap.psi[-500:].mean() - eq.psi_e) > 1e-3


def test_halving_tolerances_changes_little(stall_sim):
    base = sp.SimConfig(stall_sim.params, t_end=60.0, t_cut=50.0, n_grid=512)
    fine = sp.SimConfig(stall_sim.params, t_end=60.0, t_cut=50.0, n_grid=512, rtol=5e-9, atol=5e-11)
    a, b = sp.integrate(base), sp.integrate(fine)
    assert np.max(np.abs(a.data[-1] - b.data[-1])) <= 1e-6


def test_integrate_lands_on_output_grid(p):
    s = sp.InitialCondition(0.1, 0.3, 0.3).state(32)
    t, modes, _, _ = sp.integrate_modes(s, p, 2.0, dt_out=0.1)
    assert np.allclose(t, 0.1 * np.arange(21), atol=1e-12)
    assert np.max(np.abs(modes[:, 0])) == 0


def test_bad_output_grid_rejected(p):
    s = sp.SpectralState.zeros(16, 0.3, 0.3)
    with pytest.raises(ConfigError):
        sp.integrate_modes(s, p, 1.05, dt_out=0.1)


# --- initial conditions and config -------------------------------------------

def test_initial_condition_determinism_and_content():
    a, ic_a = sp.sample_initial_conditions(7)
    b, ic_b = sp.sample_initial_conditions(7)
    assert ic_a == ic_b
    assert np.array_equal(a.g_modes, b.g_modes)
    nz = np.nonzero(np.abs(a.g_modes) > 0)[0]
    assert list(nz) == [1]
    assert np.allclose(a.to_grid(), ic_a.amplitude * np.cos(sp.theta_grid(512)), atol=1e-15)


def test_initial_amplitude_law_of_large_numbers():
    rng = np.random.default_rng(123)
    amps = [sp.sample_initial_conditions(rng, n_grid=8)[1].amplitude for _ in range(10_000)]
    assert abs(np.mean(amps) - 0.1) <= 0.002


def test_initial_pressure_always_positive():
    rng = np.random.default_rng(5)
    assert all(sp.sample_initial_conditions(rng, n_grid=8, mean=0.0)[1].psi > 0 for _ in range(500))


def test_runs_use_independent_streams(stall_sim):
    ics = [sp.initial_state(stall_sim, i)[1] for i in range(3)]
    assert len({ic.amplitude for ic in ics}) == 3


@pytest.mark.parametrize("bad", [{"n_grid": 100}, {"t_cut": 600.0}, {"dt_out": 0.0}, {"rtol": -1.0}])
def test_sim_config_validation(stall_sim, bad):
    doc = {**stall_sim.to_dict(), **bad}
    with pytest.raises(ConfigError):
        sp.SimConfig.from_dict(doc)


def test_sim_config_round_trip_and_unknown_keys(stall_sim):
    assert sp.SimConfig.from_dict(stall_sim.to_dict()) == stall_sim
    with pytest.raises(ConfigError):
        sp.SimConfig.from_dict({**stall_sim.to_dict(), "dt": 0.1})
