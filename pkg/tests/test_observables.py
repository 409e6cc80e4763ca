import numpy as np
import pytest

from snls.observables import (DEFAULT_C0, TimeAverage, accumulate, all_test_functions,
                              calibrate_c0, ensemble_reduce, gaussian_expectation,
                              gn_required_c0, random_states, record, test_function)
from snls.spectral import GridWorkspace, ModelParams, basis_vector, make_spectrum


def setup(n, lam=-1, alpha=1.0):
    params = ModelParams(alpha, lam, n)
    return params, make_spectrum(params), GridWorkspace(n)


def test_record_single_mode_closed_forms():
    params, sp, ws = setup(4)
    rec = record(basis_vector(1, 4), sp, ws, params)
    assert rec.mass == pytest.approx(1.0)
    assert rec.grad_sq == pytest.approx(np.pi**2)
    assert rec.l4_fourth == pytest.approx(1.5)
    assert rec.ham_disc == pytest.approx(np.pi**2 + 0.75)
    assert rec.ham_mod == pytest.approx(np.pi**2 / 2 + 1.5 / 4 + DEFAULT_C0)
    assert rec.h2 == pytest.approx(sp.abs_lambda[0])


def test_record_zero_state():
    params, sp, ws = setup(5)
    rec = record(np.zeros(5, dtype=complex), sp, ws, params)
    for value in rec.as_dict().values():
        assert value == 0


def test_linear_case_ham_disc_is_grad():
    params, sp, ws = setup(8, lam=0)
    rng = np.random.default_rng(0)
    a = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    rec = record(a, sp, ws, params)
    assert rec.ham_disc == rec.grad_sq


def test_f_val_cross_term_against_coefficients():
    # Re int conj(Lap u) |u|^2 u dx = -Re sum mu_m conj(a_m) c_m, c = pi_N(|u|^2 u).
    params, sp, ws = setup(10)
    rng = np.random.default_rng(1)
    a = (rng.standard_normal((6, 10)) + 1j * rng.standard_normal((6, 10))) / 4
    rec = record(a, sp, ws, params)
    c = ws.galerkin_cubic(a)
    cross = -np.sum(sp.mu * np.conj(a) * c, axis=-1).real
    lap_sq = np.sum(sp.mu**2 * np.abs(a) ** 2, axis=-1)
    np.testing.assert_allclose(rec.f_val, lap_sq + params.lam * cross, rtol=1e-12)


def test_ham_nonnegative_for_defocusing_and_linear():
    rng = np.random.default_rng(2)
    for lam in (0, -1):
        params, sp, ws = setup(16, lam=lam)
        states = random_states(10000, 16, rng)
        rec = record(states, sp, ws, params)
        assert np.all(rec.ham_disc >= 0)
        assert np.all(rec.ham_mod >= 0)


def test_modified_hamiltonian_bounded_below_for_focusing():
    # With c0 from the interpolation inequality, H >= grad/8 >= 0 even for lam = +1.
    rng = np.random.default_rng(3)
    params, sp, ws = setup(24, lam=1)
    for scale in (0.1, 1.0, 10.0):
        states = scale * random_states(5000, 24, rng)
        rec = record(states, sp, ws, params)
        assert np.all(rec.ham_mod >= 0)


def test_gn_constant_search_small():
    worst, c0 = calibrate_c0(n_states=20000, n_modes=16, seed=1)
    assert 0.3 < worst <= DEFAULT_C0 / 2
    assert c0 <= DEFAULT_C0


def test_gn_required_is_scale_invariant():
    params, sp, ws = setup(8)
    rng = np.random.default_rng(4)
    a = random_states(3, 8, rng)
    np.testing.assert_allclose(gn_required_c0(a, sp, ws), gn_required_c0(7 * a, sp, ws), rtol=1e-12)


def test_test_functions_bounded_values():
    a = np.array([[0.0, 0.0], [3.0, 4.0j]])
    np.testing.assert_allclose(test_function("exp_neg_mass", a), [1.0, np.exp(-25.0)])
    np.testing.assert_allclose(test_function("inv_mass", a), [1.0, 1 / 26])
    np.testing.assert_allclose(test_function("sin_mode1", a), [0.0, np.sin(3.0)])
    assert set(all_test_functions(a)) == {"exp_neg_mass", "inv_mass", "sin_mode1"}
    with pytest.raises(ValueError):
        test_function("cos", a)


def test_time_average_constant_and_alternating():
    avg = TimeAverage(2)
    for k in range(7):
        accumulate(avg, [3.0, k % 2], k)
    assert avg.mean[0] == 3.0
    avg2 = TimeAverage(1)
    for k in range(1000):
        avg2.accumulate([k % 2], k)
    assert avg2.mean[0] == pytest.approx(0.5)


def test_time_average_burn_in_and_blocks():
    avg = TimeAverage(1, burn_in=5)
    avg.accumulate(np.arange(10.0)[:, None], step=0)
    assert avg.count == 5
    assert avg.mean[0] == pytest.approx(7.0)
    with pytest.raises(ValueError):
        TimeAverage(1).mean


def test_time_average_compensated_stress():
    avg = TimeAverage(1)
    block = np.full((10**6, 1), 0.1)
    for _ in range(10):
        avg.accumulate(block)
    assert avg.count == 10**7
    assert abs(avg.mean[0] - 0.1) < 1e-12
    single = TimeAverage(1)
    for _ in range(10**5):
        single.accumulate(np.array([0.1]))
    assert abs(single.mean[0] - 0.1) < 1e-15


def test_ensemble_reduce_examples():
    s = ensemble_reduce([1, 1, 1, 1])
    assert (s.mean, s.stderr) == (1.0, 0.0)
    s = ensemble_reduce([0, 2])
    assert (s.mean, s.variance, s.stderr) == (1.0, 2.0, 1.0)
    x = np.random.default_rng(5).standard_normal(101)
    a, b = ensemble_reduce(x), ensemble_reduce(x[::-1])
    assert a.mean == pytest.approx(b.mean, abs=1e-15) and a.variance == pytest.approx(b.variance)
    with pytest.raises(ValueError):
        ensemble_reduce([1.0])


def test_gaussian_expectations_against_sampling():
    rng = np.random.default_rng(6)
    mean = np.array([0.8 + 0.3j, -0.2j, 0.1])
    var = np.array([0.5, 0.2, 0.05])
    n = 400000
    z = mean + np.sqrt(var / 2) * (rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3)))
    for kind in ("exp_neg_mass", "inv_mass", "sin_mode1"):
        samples = test_function(kind, z)
        se = samples.std() / np.sqrt(n)
        assert abs(samples.mean() - gaussian_expectation(kind, mean, var)) < 4 * se


def test_gaussian_expectation_degenerate():
    mean = np.array([1.0 + 0j, 2.0])
    assert gaussian_expectation("exp_neg_mass", mean, np.zeros(2)) == pytest.approx(np.exp(-5))
    assert gaussian_expectation("inv_mass", mean, np.zeros(2)) == pytest.approx(1 / 6)
