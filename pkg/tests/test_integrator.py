import numpy as np
import pytest
from scipy.optimize import root

from snls.integrator import (SchemeStepper, StepConfig, StepFailure, linear_gaussian_law,
                             run_trajectory, scheme_stationary_variance, solve_uniqueness_probe,
                             step_exact_linear, step_exponential_euler, step_scheme)
from snls.noise import NoiseSpectrum, NoiseStream, make_power_spectrum
from snls.spectral import (ConfigurationError, GridWorkspace, ModelParams, basis_vector,
                           make_spectrum)


def random_state(rng, n, scale=1.0):
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2 * n)


def test_config_rejects_large_alpha_tau():
    with pytest.raises(ConfigurationError, match="alpha\\*tau"):
        SchemeStepper(ModelParams(1.0, -1, 4), StepConfig(2.0))
    with pytest.raises(ConfigurationError):
        SchemeStepper(ModelParams(1.0, -1, 4), StepConfig(-0.1))
    SchemeStepper(ModelParams(1.0, -1, 4), StepConfig(1.0))


def test_step_matches_root_solver():
    rng = np.random.default_rng(0)
    n, tau = 8, 2.0**-6
    params = ModelParams(1.0, -1, n)
    cfg = StepConfig(tau)
    prev = random_state(rng, n, 2.0)
    dw = random_state(rng, n, 0.2)
    u, rep = step_scheme(prev, dw, params, make_spectrum(params), GridWorkspace(n), cfg)

    ws = GridWorkspace(n, grid_size=3 * n)
    mu = make_spectrum(params).mu
    b = np.exp(-tau) * prev
    rho_b = np.abs(ws.synthesize(b)) ** 2

    def residual(x):
        v = x[:n] + 1j * x[n:]
        r = (1 + 1j * mu * tau) * v - b + 1j * tau * ws.cubic_mix(v, rho_b) - dw
        return np.concatenate([r.real, r.imag])

    sol = root(residual, np.zeros(2 * n), tol=1e-14)
    ref = sol.x[:n] + 1j * sol.x[n:]
    np.testing.assert_allclose(u, ref, atol=1e-10)
    assert rep.residual <= 1e-12 * max(1, np.linalg.norm(u))


def test_residual_after_step_is_small():
    rng = np.random.default_rng(1)
    params = ModelParams(1.0, 1, 16)
    stepper = SchemeStepper(params, StepConfig(2.0**-7))
    prev = np.stack([random_state(rng, 16, 3.0) for _ in range(5)])
    dw = np.stack([random_state(rng, 16, 0.1) for _ in range(5)])
    u, rep = stepper.step(prev, dw)
    assert np.all(stepper.residual(u, prev, dw) < 1e-10)
    assert np.all(rep.iterations >= 2)


def test_linear_step_is_one_solve():
    params = ModelParams(1.0, 0, 4)
    stepper = SchemeStepper(params, StepConfig(0.1))
    prev = basis_vector(2, 4)
    u, rep = stepper.step(prev, np.zeros(4))
    mu2 = (2 * np.pi) ** 2
    assert u[1] == pytest.approx(np.exp(-0.1) / (1 + 1j * mu2 * 0.1), rel=1e-15)
    assert rep.iterations == 1


def test_discrete_mass_identity():
    # ||u^k||^2 - e^{-2 alpha tau} ||u^{k-1}||^2 + ||u^k - b||^2 = 2 Re (u^k, dw)
    rng = np.random.default_rng(2)
    params = ModelParams(0.8, -1, 12)
    stepper = SchemeStepper(params, StepConfig(2.0**-5))
    prev = random_state(rng, 12, 2.0)
    dw = random_state(rng, 12, 0.3)
    u, rep = stepper.step(prev, dw)
    b = stepper.damp * prev
    lhs = np.vdot(u, u).real - np.vdot(b, b).real + np.vdot(u - b, u - b).real
    rhs = 2 * np.vdot(dw, u).real
    assert lhs == pytest.approx(rhs, abs=1e-11)


def test_zero_noise_linear_decay():
    params = ModelParams(1.0, 0, 6)
    stream = NoiseStream(0, 0, 0, 0.1)
    ns = NoiseSpectrum(np.zeros(6))
    out = run_trajectory(basis_vector(1, 6) * 2, 200, stream, params, ns, StepConfig(0.1))
    assert np.linalg.norm(out.final) < 2 * np.exp(-20) + 1e-15


def test_step_failure_reports_step():
    params = ModelParams(1.0, -1, 16)
    cfg = StepConfig(1.0, fp_max_iters=5)
    stream = NoiseStream(0, 0, 0, 1.0)
    with pytest.raises(StepFailure) as info:
        run_trajectory(basis_vector(1, 16) * 20, 3, stream, params,
                       make_power_spectrum(16, 8.0), cfg)
    assert info.value.step == 1


def test_trajectory_batch_matches_hooks_and_checksum():
    params = ModelParams(1.0, -1, 8)
    ns = make_power_spectrum(8, 8.0)
    seen = []
    stream = NoiseStream(4, (0, 1), 0, 2.0**-5)
    out = run_trajectory(np.zeros((2, 8)), 40, stream, params, ns, StepConfig(2.0**-5),
                         hooks=(lambda k, u: seen.append(k) or (k if k % 10 == 0 else None),))
    assert seen == list(range(41))
    assert out.records == [0, 10, 20, 30, 40]
    total = NoiseStream(4, (0, 1), 0, 2.0**-5).next_block(ns, 40).sum(axis=0)
    np.testing.assert_allclose(out.noise_checksum, total, atol=1e-15)


def test_trajectory_is_reproducible():
    params = ModelParams(1.0, -1, 8)
    ns = make_power_spectrum(8, 8.0)
    runs = [run_trajectory(np.zeros((3, 8)), 50, NoiseStream(7, (0, 1, 2), 0, 0.05), params, ns,
                           StepConfig(0.05)).final for _ in range(2)]
    np.testing.assert_array_equal(runs[0], runs[1])


def test_exact_linear_update_variance():
    params = ModelParams(1.0, 0, 2)
    sp = make_spectrum(params)
    rng = np.random.default_rng(3)
    tau = 0.3
    dw = (rng.standard_normal((200000, 2)) + 1j * rng.standard_normal((200000, 2))) * np.sqrt(tau)
    u = step_exact_linear(np.zeros(2), dw, params, sp, tau)
    np.testing.assert_allclose(np.mean(np.abs(u) ** 2, axis=0), (1 - np.exp(-2 * tau)), rtol=0.01)
    with pytest.raises(ValueError):
        step_exact_linear(np.zeros(2), dw[0], ModelParams(1.0, -1, 2), sp, tau)


def test_exponential_euler_conserves_mass_without_noise_and_damping():
    rng = np.random.default_rng(4)
    params = ModelParams(1e-12, -1, 16)
    sp = make_spectrum(params)
    ws = GridWorkspace(16)
    u = random_state(rng, 16, 3.0)
    v = step_exponential_euler(u, np.zeros(16), params, sp, ws, 0.01)
    assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(u), rel=1e-11)


def test_stationary_variance_is_recursion_fixed_point():
    params = ModelParams(1.0, 0, 5)
    eta = np.arange(1, 6.0) ** -8
    tau = 2.0**-7
    v = scheme_stationary_variance(params, eta, tau)
    mu = (np.arange(1, 6) * np.pi) ** 2
    np.testing.assert_allclose((1 + mu**2 * tau**2) * v, np.exp(-2 * tau) * v + 2 * eta * tau,
                               rtol=1e-13)
    # Continuous limit eta / alpha as tau -> 0; leading bias eta (mu^2 - 2 alpha^2) tau / 2.
    np.testing.assert_allclose(scheme_stationary_variance(params, eta, 1e-12), eta, rtol=1e-7)
    t = 1e-9
    bias = (eta - scheme_stationary_variance(params, eta, t)) / t
    np.testing.assert_allclose(bias, eta * (mu**2 - 2) / 2, rtol=1e-4)


def test_linear_law_matches_recursion():
    params = ModelParams(1.0, 0, 3)
    eta = np.array([1.0, 0.1, 0.01])
    u0 = np.array([2.0, 1.0, 0.0], dtype=complex)
    tau = 0.05
    mean, var = linear_gaussian_law(params, eta, u0, 1.0, tau)
    mu = (np.arange(1, 4) * np.pi) ** 2
    m, v = u0.copy(), np.zeros(3)
    for _ in range(20):
        m = np.exp(-tau) * m / (1 + 1j * mu * tau)
        v = (np.exp(-2 * tau) * v + 2 * eta * tau) / (1 + mu**2 * tau**2)
    np.testing.assert_allclose(mean, m, rtol=1e-12)
    np.testing.assert_allclose(var, v, rtol=1e-12)
    mean_c, var_c = linear_gaussian_law(params, eta, u0, 1.0)
    np.testing.assert_allclose(var_c, eta * (1 - np.exp(-2.0)), rtol=1e-14)


def test_uniqueness_probe_true_in_small_step_regime():
    rng = np.random.default_rng(5)
    params = ModelParams(1.0, -1, 16)
    cfg = StepConfig(2.0**-6)
    for _ in range(5):
        assert solve_uniqueness_probe(random_state(rng, 16, 3.0), random_state(rng, 16, 0.2),
                                      params, cfg)
    with pytest.raises(ValueError):
        solve_uniqueness_probe(np.zeros(16), np.zeros(16), params, cfg, n_starts=4)
