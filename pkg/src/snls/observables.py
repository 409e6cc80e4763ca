"""Functionals of Galerkin states, time averages and ensemble statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .spectral import GridWorkspace, LinearSpectrum, ModelParams, _abs2

# Smallest power of two passing a 10^6-state search of
# ||u||_L4^4 <= ||grad u||^2 / 4 + c0 ||u||^6 / 2 (see calibrate_c0), doubled.
DEFAULT_C0 = 2.0

TEST_FUNCTIONS = ("exp_neg_mass", "inv_mass", "sin_mode1")

RECORD_FIELDS = ("mass", "grad_sq", "l4_fourth", "ham_disc", "ham_mod", "h1", "h2", "f_val")


@dataclass
class ObservableRecord:
    """Observables of a state (or a batch of states, one entry per replica)."""

    mass: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    grad_sq: np.ndarray
    l4_fourth: np.ndarray
    ham_mod: np.ndarray
    ham_disc: np.ndarray
    f_val: np.ndarray

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def record(state, spectrum: LinearSpectrum, ws: GridWorkspace, params: ModelParams,
           c0: float = DEFAULT_C0) -> ObservableRecord:
    """Evaluate every tracked functional.

    ``ham_mod`` is the modified Hamiltonian
    ``grad_sq/2 - lam/4 * l4_fourth + c0 * mass^3``; ``ham_disc`` is the
    discrete energy ``grad_sq - lam/2 * l4_fourth``; ``f_val`` is
    ``||Lap u||^2 + lam * Re int conj(Lap u) |u|^2 u dx``.
    """
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    a = np.asarray(state)
    lam = params.lam
    p = _abs2(a)
    mass = p.sum(axis=-1)
    grad_sq = (p * spectrum.mu).sum(axis=-1)
    lap_sq = (p * spectrum.mu**2).sum(axis=-1)
    h1 = np.sqrt((p * spectrum.abs_lambda).sum(axis=-1))
    h2 = np.sqrt((p * spectrum.abs_lambda**2).sum(axis=-1))
    u = ws.synthesize(a)
    dens = _abs2(u)
    l4_fourth = ws.integrate(dens**2)
    # Lap u = -sum mu_m a_m e_m; the product with |u|^2 u is band 4N, exact on the grid.
    lap_u = ws.synthesize(-spectrum.mu * a)
    cross = ws.integrate((np.conj(lap_u) * dens * u).real)
    return ObservableRecord(
        mass=mass,
        h1=h1,
        h2=h2,
        grad_sq=grad_sq,
        l4_fourth=l4_fourth,
        ham_mod=0.5 * grad_sq - 0.25 * lam * l4_fourth + c0 * mass**3,
        ham_disc=grad_sq - 0.5 * lam * l4_fourth,
        f_val=lap_sq + lam * cross,
    )


def test_function(kind: str, state) -> np.ndarray:
    """Bounded test functionals with bounded first and second derivatives."""
    a = np.asarray(state)
    if kind == "exp_neg_mass":
        return np.exp(-_abs2(a).sum(axis=-1))
    if kind == "inv_mass":
        return 1.0 / (1.0 + _abs2(a).sum(axis=-1))
    if kind == "sin_mode1":
        return np.sin(a[..., 0].real)
    raise ValueError(f"unknown test function {kind!r}")


test_function.__test__ = False  # not a pytest test


def all_test_functions(state) -> dict:
    return {kind: test_function(kind, state) for kind in TEST_FUNCTIONS}


class TimeAverage:
    """Running means of a fixed vector of observables with Neumaier summation.

    Samples with ``step < burn_in`` are ignored. Accepts single samples
    (shape ``(k,)``) or blocks of consecutive samples (shape ``(n, k)``);
    block sums are computed with :func:`math.fsum`, so the accumulated error
    stays at a few ulps regardless of the sample count.
    """

    def __init__(self, n_observables: int, burn_in: int = 0):
        self.burn_in = int(burn_in)
        self.count = 0
        self._sum = np.zeros(n_observables)
        self._comp = np.zeros(n_observables)

    def _add(self, x):
        s = self._sum + x
        big = np.abs(self._sum) >= np.abs(x)
        self._comp += np.where(big, (self._sum - s) + x, (x - s) + self._sum)
        self._sum = s

    def accumulate(self, values, step: int | None = None) -> "TimeAverage":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            if step is None or step >= self.burn_in:
                self._add(values)
                self.count += 1
            return self
        if step is not None and step < self.burn_in:
            values = values[self.burn_in - step:]
        if values.shape[0]:
            self._add(np.array([math.fsum(col) for col in values.T]))
            self.count += values.shape[0]
        return self

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no samples accumulated")
        return (self._sum + self._comp) / self.count


def accumulate(avg: TimeAverage, values, step: int | None = None) -> TimeAverage:
    return avg.accumulate(values, step)


@dataclass(frozen=True)
class EnsembleStats:
    mean: float
    variance: float
    stderr: float
    n_replicas: int


def ensemble_reduce(values) -> EnsembleStats:
    """Mean, unbiased variance and standard error over replicas."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("ensemble_reduce needs at least two values")
    mean = math.fsum(x) / x.size
    var = math.fsum((x - mean) ** 2) / (x.size - 1)
    return EnsembleStats(mean, var, math.sqrt(var / x.size), x.size)


def gn_required_c0(state, spectrum: LinearSpectrum, ws: GridWorkspace) -> np.ndarray:
    """Smallest ``c0`` making ``L4^4 <= grad/4 + c0 mass^3 / 2`` hold for all
    rescalings ``s * u`` of the given shapes.

    Minimising over ``s`` gives ``c0 = 2 L4^8 / (grad * mass^3)``.
    """
    a = np.asarray(state)
    p = _abs2(a)
    mass = p.sum(axis=-1)
    grad = (p * spectrum.mu).sum(axis=-1)
    l4 = ws.integrate(_abs2(ws.synthesize(a)) ** 2)
    return 2.0 * l4**2 / (grad * mass**3)


def random_states(n_states: int, n_modes: int, rng: np.random.Generator) -> np.ndarray:
    """Random test states mixing smooth, rough and localised profiles."""
    decay = rng.uniform(0.0, 3.0, size=(n_states, 1))
    m = np.arange(1, n_modes + 1)
    a = (rng.standard_normal((n_states, n_modes)) + 1j * rng.standard_normal((n_states, n_modes)))
    a *= m ** (-decay)
    # Localised bumps: Gaussian profiles centred anywhere in (0, 1).
    n_bump = n_states // 4
    if n_bump:
        x = (np.arange(1, 4 * n_modes + 1) / (4 * n_modes + 1))
        centres = rng.uniform(0.05, 0.95, size=(n_bump, 1))
        widths = rng.uniform(0.5, 4.0, size=(n_bump, 1)) / n_modes
        prof = np.exp(-((x - centres) / widths) ** 2) * np.exp(1j * rng.uniform(0, 2 * np.pi, (n_bump, 1)) * x)
        basis = np.sqrt(2) * np.sin(np.pi * np.outer(x, m))
        a[:n_bump] = prof @ basis / (4 * n_modes + 1)
    return a


def calibrate_c0(n_states: int = 10**6, n_modes: int = 32, seed: int = 0,
                 batch: int = 20000) -> tuple[float, float]:
    """Random search for the Gagliardo-Nirenberg constant.

    Returns ``(worst_required, c0)`` where ``c0`` is the smallest power of two
    at least ``worst_required``, doubled.
    """
    from .spectral import make_spectrum

    spectrum = make_spectrum(ModelParams(1.0, 0, n_modes))
    ws = GridWorkspace(n_modes)
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n_states:
        k = min(batch, n_states - done)
        worst = max(worst, float(np.max(gn_required_c0(random_states(k, n_modes, rng), spectrum, ws))))
        done += k
    return worst, 2.0 * 2.0 ** math.ceil(math.log2(worst))


def gaussian_expectation(kind: str, mean, var) -> float:
    """Exact ``E phi(u)`` when the coefficients are independent circular
    complex Gaussians with the given means and variances ``E|a - mean|^2``."""
    mean = np.asarray(mean, dtype=complex)
    var = np.asarray(var, dtype=float)
    m2 = _abs2(mean)
    if kind == "exp_neg_mass":
        return float(np.prod(np.exp(-m2 / (1 + var)) / (1 + var)))
    if kind == "sin_mode1":
        return float(np.sin(mean[0].real) * np.exp(-var[0] / 4))
    if kind == "inv_mass":
        from scipy.integrate import quad

        def laplace(s):
            return np.exp(-s) * np.prod(np.exp(-s * m2 / (1 + s * var)) / (1 + s * var))

        value, _ = quad(laplace, 0.0, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
        return float(value)
    raise ValueError(f"unknown test function {kind!r}")
