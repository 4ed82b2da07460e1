import numpy as np
import pytest

from parahom import cell as cl
from parahom import fields as fd
from parahom import presets
from parahom.errors import DataError
from parahom.fields import Truncation
from parahom.lattice import cubic_lattice

import oracles


def test_constant_g_trivial():
    lat = cubic_lattice(2)
    g0 = np.array([[1.5, 0.3], [0.3, 1.2]])
    g = fd.constant_field((12, 12), g0)
    b = np.zeros((2, 2, 1))
    b[0, 0, 0] = 1.0
    b[1, 1, 0] = 1.0
    prob = cl.PeriodicProblem(lat, b, g, lam=1.0)
    sol = cl.solve_cell_problems(prob, Truncation(4, 2))
    assert np.abs(sol.Lambda).max() < 1e-12
    assert np.abs(sol.g0 - g0).max() < 1e-12
    assert np.abs(sol.g_tilde - g0).max() < 1e-12


def test_harmonic_mean_1d():
    prob = presets.osc1d(n_modes=32)
    sol = cl.solve_cell_problems(prob, Truncation(32, 1))
    ref = oracles.harmonic_mean_quad(lambda x: 2.0 + np.cos(2 * np.pi * x))
    assert abs(sol.g0[0, 0] - ref) < 1e-10
    assert abs(sol.g0[0, 0] - np.sqrt(3)) < 1e-10
    # m = n forces the harmonic-mean identity
    g_low, _ = cl.voigt_reuss(prob)
    assert abs(sol.g0[0, 0] - g_low[0, 0]) < 1e-10


def test_constant_a_gives_zero_tilde():
    lat = cubic_lattice(1)
    grid = (32,)
    g = fd.harmonic_field(grid, 1, 1, [((1,), [[0.8]], 0.0)], const=[[2.0]])
    a = np.stack([fd.constant_field(grid, [[0.3 + 0.1j]])])
    prob = cl.PeriodicProblem(lat, np.array([[[1.0]]]), g, a=a, lam=1.0)
    sol = cl.solve_cell_problems(prob, Truncation(8, 1))
    assert np.abs(sol.LambdaTilde).max() < 1e-13
    assert np.abs(sol.V).max() < 1e-13
    assert np.abs(sol.W).max() < 1e-13


def test_zero_means():
    prob = presets.random_fiber_instance(5, d=1, n_modes=12)
    sol = cl.solve_cell_problems(prob, Truncation(12, 1))
    assert np.abs(fd.mean_field(sol.Lambda)).max() < 1e-12
    assert np.abs(fd.mean_field(sol.LambdaTilde)).max() < 1e-12
    gf = prob.G_field()
    assert np.abs(fd.mean_field(gf @ sol.LambdaG)).max() < 1e-12
    assert np.abs(fd.mean_field(gf @ sol.LambdaTildeG)).max() < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_voigt_reuss_bracketing(seed):
    prob = presets.random_scalar_2d(seed, n_modes=8)
    sol = cl.solve_cell_problems(prob, Truncation(8, 2))
    g_low, g_up = cl.voigt_reuss(prob)
    assert np.linalg.eigvalsh(sol.g0 - g_low).min() >= -1e-10
    assert np.linalg.eigvalsh(g_up - sol.g0).min() >= -1e-10


def test_divergence_free_columns_give_mean_g():
    prob = presets.divergence_free_2d(n_modes=8)
    sol = cl.solve_cell_problems(prob, Truncation(8, 2))
    assert np.abs(sol.Lambda).max() < 1e-10
    assert np.abs(sol.LambdaTilde).max() < 1e-12
    g_up = cl.voigt_reuss(prob)[1]
    assert np.abs(sol.g0 - g_up).max() < 1e-8


def test_W_hermitian_psd():
    prob = presets.random_fiber_instance(9, d=1, n_modes=12)
    sol = cl.solve_cell_problems(prob, Truncation(12, 1))
    assert np.abs(sol.W - sol.W.conj().T).max() < 1e-12
    assert np.linalg.eigvalsh(sol.W).min() >= -1e-12


def test_truncation_cauchy_sequence():
    vals = {}
    for n_modes in (8, 16, 32):
        prob = presets.osc1d_full(n_modes=n_modes)
        sol = cl.solve_cell_problems(prob, Truncation(n_modes, 1))
        vals[n_modes] = sol.g0[0, 0]
    assert abs(vals[16] - vals[32]) < 1e-6
    assert abs(vals[16] - vals[32]) <= abs(vals[8] - vals[16]) + 1e-12


def test_grid_too_coarse_raises():
    lat = cubic_lattice(1)
    g = fd.constant_field((8,), [[1.0]])
    prob = cl.PeriodicProblem(lat, np.array([[[1.0]]]), g, lam=1.0)
    with pytest.raises(DataError):
        prob.validate(Truncation(16, 1))


def test_effective_symbol_structure():
    prob = presets.random_fiber_instance(11, d=1, n_modes=12)
    sol = cl.solve_cell_problems(prob, Truncation(12, 1))
    q = np.array([0.37])
    eps = 0.21
    sym = sol.L_hat_symbol(q, eps)
    bq = prob.b_of(q)
    manual = (bq.conj().T @ sol.g0 @ bq
              - eps * (bq.conj().T @ sol.V + sol.V.conj().T @ bq)
              + eps * q[0] * sol.abar_sum[0]
              + eps ** 2 * (sol.Qbar - sol.W + prob.lam * np.eye(1)))
    assert np.abs(sym - manual).max() < 1e-13


def test_ng_symbol_hermitian_and_cubic_bound():
    prob = presets.random_fiber_instance(13, d=2, n_modes=6)
    tr = Truncation(6, 2)
    sol = cl.solve_cell_problems(prob, tr)
    ng = cl.ng_coefficients(prob, sol)
    rng = np.random.default_rng(0)
    ratios = []
    for _ in range(20):
        k = rng.standard_normal(2)
        eps = rng.uniform(0.05, 1.0)
        val = ng.symbol(k, eps)
        assert np.abs(val - val.conj().T).max() < 1e-12
        ratios.append(np.linalg.norm(val, 2)
                      / (k @ k + eps ** 2) ** 1.5)
    assert max(ratios) < 50 * min(r for r in ratios if r > 0) + 1e3


def test_ng_zero_when_correctors_vanish():
    prob = presets.divergence_free_2d(n_modes=8)
    tr = Truncation(8, 2)
    sol = cl.solve_cell_problems(prob, tr)
    ng = cl.ng_coefficients(prob, sol)
    for k in (np.array([0.3, -0.2]), np.array([1.0, 0.5])):
        assert np.abs(ng.symbol(k, 0.7)).max() < 1e-10


def test_ng_only_MG_survives_without_lower_order():
    # a = 0, Q = 0, lam = 0, LambdaTilde = 0: every block except M_G carries
    # a factor that vanishes
    prob = presets.osc1d(n_modes=12, lam=0.0)
    tr = Truncation(12, 1)
    sol = cl.solve_cell_problems(prob, tr)
    ng = cl.ng_coefficients(prob, sol)
    assert np.abs(ng.M_G1_symbols).max() < 1e-13
    assert np.abs(ng.M_G2_symbols).max() < 1e-13
    assert np.abs(ng.T_G0).max() < 1e-13
    assert np.abs(ng.T_G).max() < 1e-13
    assert np.abs(ng.N22).max() < 1e-13
    assert np.abs(ng.M_G_symbols).max() > 0.0
