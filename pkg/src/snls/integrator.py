"""Modified implicit Euler scheme and its reference integrators.

One step of the scheme solves, mode by mode,

    (1 + i mu_m tau) u_m = b_m + i lam tau [pi_N(((|u|^2 + |b|^2)/2) u)]_m + dw_m,
    b = exp(-alpha tau) u_prev,

by Picard iteration on the diagonal resolvent ``1 / (1 + i mu tau)``.
All routines accept a batch of states with shape ``(R, N)``; each replica
stops iterating on its own residual. Results are reproducible for a fixed
batch shape (the experiments fix the chunk size for that reason).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .noise import PURPOSE_PROBE, NoiseSpectrum, NoiseStream, complex_normals, replica_key
from .spectral import (ConfigurationError, GridWorkspace, LinearSpectrum, ModelParams, _abs2,
                       make_spectrum)


class StepFailure(RuntimeError):
    """The fixed-point iteration did not converge."""

    def __init__(self, message, residual=np.nan, iterations=0, step=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.step = step


@dataclass(frozen=True)
class StepConfig:
    tau: float
    fp_tol: float = 1e-12
    fp_max_iters: int = 200
    solver: str = "fixed_point"

    def validate(self, alpha: float):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if alpha * self.tau > 1:
            raise ConfigurationError(
                f"alpha*tau = {alpha * self.tau:g} > 1; the scheme requires alpha*tau <= 1"
            )
        if self.fp_tol <= 0 or self.fp_max_iters < 1:
            raise ConfigurationError("fp_tol must be > 0 and fp_max_iters >= 1")
        if self.solver not in ("fixed_point", "exact_linear", "exponential_euler"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")


@dataclass
class StepReport:
    iterations: np.ndarray
    residual: np.ndarray
    increment_norm: np.ndarray


def _norm0(a):
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=-1))


def _picard(u, rhs, resolvent, density, coupling, ws, tol, max_iters):
    """Iterate ``u <- resolvent * (rhs + coupling * cubic_mix(u, density))``.

    Works on ``(R, N)`` arrays. The whole batch is evaluated every sweep so
    that the arithmetic depends only on the batch shape, but a row is frozen
    once its own residual passes. Returns the solution, per-row iteration
    counts, final residuals and an all-converged flag.
    """
    R = u.shape[0]
    iters = np.zeros(R, dtype=np.int64)
    resid = np.full(R, np.inf)
    active = np.ones(R, dtype=bool)
    for _ in range(max_iters):
        new = resolvent * (rhs + coupling * ws.cubic_mix(u, density))
        r = _norm0(new - u)
        u[active] = new[active]
        iters[active] += 1
        resid[active] = r[active]
        if not np.all(np.isfinite(r[active])):
            return u, iters, resid, False
        active &= ~(r <= tol * np.maximum(1.0, _norm0(new)))
        if not active.any():
            return u, iters, resid, True
    return u, iters, resid, False


class SchemeStepper:
    """Bundles the per-configuration constants of the modified implicit Euler step."""

    def __init__(self, params: ModelParams, cfg: StepConfig, ws: GridWorkspace | None = None):
        cfg.validate(params.alpha)
        self.params = params
        self.cfg = cfg
        self.spectrum = make_spectrum(params)
        self.ws = ws if ws is not None else GridWorkspace(params.n_modes)
        if self.ws.n_modes < params.n_modes:
            raise ConfigurationError("workspace built for fewer modes than the model")
        self.damp = np.exp(-params.alpha * cfg.tau)
        self.resolvent = 1.0 / (1.0 + 1j * self.spectrum.mu * cfg.tau)
        self.coupling = 1j * params.lam * cfg.tau

    def initial_iterate(self, prev, dw):
        return self.resolvent * (self.damp * prev + dw)

    def step(self, prev, dw):
        """Advance a batch ``(R, N)`` by one step; returns ``(u, StepReport)``."""
        prev = np.asarray(prev, dtype=complex)
        dw = np.asarray(dw, dtype=complex)
        single = prev.ndim == 1
        if single:
            prev, dw = prev[None, :], dw[None, :]
        b = self.damp * prev
        rhs = b + dw
        u = self.resolvent * rhs
        if self.params.lam == 0:
            iters = np.ones(u.shape[0], dtype=np.int64)
            resid = np.zeros(u.shape[0])
        else:
            density = _abs2(self.ws.synthesize(b))
            u, iters, resid, ok = _picard(u, rhs, self.resolvent, density, self.coupling,
                                          self.ws, self.cfg.fp_tol, self.cfg.fp_max_iters)
            if not ok:
                worst = float(np.max(resid))
                raise StepFailure(
                    f"fixed-point iteration failed (residual {worst:.3e} after "
                    f"{int(np.max(iters))} iterations); reduce tau",
                    residual=worst, iterations=int(np.max(iters)),
                )
        report = StepReport(iters, resid, _norm0(u - b))
        if single:
            report = StepReport(iters[0], resid[0], report.increment_norm[0])
            return u[0], report
        return u, report

    def residual(self, u, prev, dw):
        """Equation residual ``||D u - b - i lam tau cubic_mix(u) - dw||_0``."""
        u = np.asarray(u, dtype=complex)
        b = self.damp * np.asarray(prev)
        density = _abs2(self.ws.synthesize(b))
        lhs = (1.0 + 1j * self.spectrum.mu * self.cfg.tau) * u
        return _norm0(lhs - b - self.coupling * self.ws.cubic_mix(u, density) - dw)


def step_scheme(prev, dw, params: ModelParams, spectrum: LinearSpectrum, ws: GridWorkspace,
                cfg: StepConfig):
    """Single step of the modified implicit Euler scheme.

    Thin functional wrapper over :class:`SchemeStepper`; prefer the class in
    loops. ``spectrum`` must match ``params``.
    """
    if spectrum.n_modes != params.n_modes or spectrum.alpha != params.alpha:
        raise ConfigurationError("spectrum does not match params")
    return SchemeStepper(params, cfg, ws).step(prev, dw)


def step_exact_linear(prev, dw, params: ModelParams, spectrum: LinearSpectrum, tau: float):
    """Exact in-law update of the linear (lam = 0) Galerkin SDE.

    The stochastic convolution is drawn from the same Gaussian variates as
    ``dw`` rescaled to variance ``eta (1 - exp(-2 alpha tau)) / alpha``.
    """
    if params.lam != 0:
        raise ValueError("step_exact_linear requires lambda = 0")
    a = params.alpha
    scale = np.sqrt(-np.expm1(-2 * a * tau) / (2 * a * tau))
    return np.exp(-spectrum.lambda_op * tau) * np.asarray(prev) + scale * np.asarray(dw)


def _cubic_midpoint(u, ws: GridWorkspace, coupling: complex, tol: float, max_iters: int):
    """Implicit midpoint step ``v = u + coupling * pi_N(|m|^2 m)``, ``m = (u + v)/2``.

    The Galerkin cubic term is orthogonal to ``i``-rotations of the state, so
    the step conserves the mass up to the solver tolerance.
    """
    v = u.copy()
    scale = np.maximum(1.0, _norm0(u))
    for it in range(1, max_iters + 1):
        new = u + coupling * ws.galerkin_cubic(0.5 * (u + v))
        r = _norm0(new - v)
        v = new
        if not np.all(np.isfinite(r)):
            break
        if np.all(r <= tol * scale):
            return v
    raise StepFailure(f"midpoint iteration failed after {it} iterations; reduce tau",
                      residual=float(np.max(r)), iterations=it)


def step_exponential_euler(prev, dw, params: ModelParams, spectrum: LinearSpectrum,
                           ws: GridWorkspace, tau: float, tol: float = 1e-12,
                           max_iters: int = 200):
    """Exponential (Lawson-split) step of the semi-discrete Galerkin SDE.

    ``u <- S(tau) M_tau(u) + sqrt((1 - e^{-2 alpha tau}) / (2 alpha tau)) dw`` where
    ``M_tau`` is an implicit midpoint step of ``u' = i lam pi_N(|u|^2 u)``.
    The linear flow and the Ornstein-Uhlenbeck noise are exact for every
    mode, so high modes keep their true variance ``eta / alpha``; this is the
    time integrator behind the spatial convergence studies.
    """
    a = params.alpha
    u = np.asarray(prev, dtype=complex)
    if params.lam != 0:
        u = _cubic_midpoint(u, ws, 1j * params.lam * tau, tol, max_iters)
    scale = np.sqrt(-np.expm1(-2 * a * tau) / (2 * a * tau))
    return np.exp(-spectrum.lambda_op * tau) * u + scale * np.asarray(dw)


def scheme_stationary_variance(params: ModelParams, eta, tau: float) -> np.ndarray:
    """Stationary ``E|u_m|^2`` of the scheme for lam = 0.

    Fixed point of ``(1 + mu^2 tau^2) v = exp(-2 alpha tau) v + 2 eta tau``.
    """
    m = np.arange(1, params.n_modes + 1)
    mu = (m * np.pi) ** 2
    return 2 * np.asarray(eta)[: params.n_modes] * tau / (
        (mu * tau) ** 2 - np.expm1(-2 * params.alpha * tau))


def solve_uniqueness_probe(prev, dw, params: ModelParams, cfg: StepConfig,
                           perturbation_scale: float = 1.0, n_starts: int = 8,
                           seed: int = 0, ws: GridWorkspace | None = None) -> bool:
    """Empirical uniqueness check for one step.

    Runs the Picard iteration from ``n_starts`` perturbed initial iterates and
    reports whether every start converges to the same limit (within
    ``10 * fp_tol``). A failure of the reference start raises
    :class:`StepFailure`; a diverging perturbed start returns False.
    """
    if n_starts < 8:
        raise ValueError("n_starts must be at least 8")
    stepper = SchemeStepper(params, cfg, ws)
    prev = np.asarray(prev, dtype=complex).reshape(-1)
    dw = np.asarray(dw, dtype=complex).reshape(-1)
    reference, _ = stepper.step(prev, dw)
    if params.lam == 0:
        return True
    u0 = stepper.initial_iterate(prev, dw)
    key = replica_key(seed, 0)[0]
    xi = complex_normals((key[0], key[1]), np.arange(n_starts, dtype=np.uint64)[:, None], 0,
                         np.arange(1, params.n_modes + 1, dtype=np.uint64)[None, :],
                         PURPOSE_PROBE)
    size = perturbation_scale * max(1.0, float(_norm0(u0)))
    starts = u0[None, :] + size * xi / np.sqrt(2 * params.n_modes)
    b = stepper.damp * prev
    rhs = np.broadcast_to(b + dw, starts.shape).copy()
    density = np.broadcast_to(_abs2(stepper.ws.synthesize(b)),
                              (n_starts, stepper.ws.grid_size)).copy()
    limits, _, resid, ok = _picard(starts.copy(), rhs, stepper.resolvent, density,
                                   stepper.coupling, stepper.ws, cfg.fp_tol, cfg.fp_max_iters)
    if not ok:
        return False
    candidates = np.vstack([reference[None, :], limits])
    tol = 10 * cfg.fp_tol * max(1.0, float(_norm0(reference)))
    spread = _norm0(candidates[:, None, :] - candidates[None, :, :])
    return bool(np.all(spread <= tol))


@dataclass
class TrajectorySummary:
    final: np.ndarray
    n_steps: int
    max_iterations: int = 0
    records: list = field(default_factory=list)
    noise_checksum: np.ndarray | None = None


Hook = Callable[[int, np.ndarray], object]


def run_trajectory(init, n_steps: int, stream: NoiseStream, params: ModelParams,
                   noise: NoiseSpectrum, cfg: StepConfig, hooks: Sequence[Hook] = (),
                   ws: GridWorkspace | None = None, block: int = 512) -> TrajectorySummary:
    """Iterate the scheme ``n_steps`` times from ``init``.

    ``init`` is ``(N,)`` or ``(R, N)`` matching the stream's replica batch.
    Each hook is called as ``hook(k, u_k)`` for ``k = 0..n_steps``; non-None
    return values are collected in ``records``. ``cfg.solver`` may swap in the
    exact linear update (lam = 0 only) or the exponential Euler step of the
    semi-discrete system.
    """
    stream.check_tau(cfg.tau)
    if noise.n_modes < params.n_modes:
        raise ConfigurationError("noise spectrum has fewer modes than the model")
    noise = noise.truncate(params.n_modes)
    stepper = SchemeStepper(params, cfg, ws)
    if cfg.solver == "exact_linear":
        exact = lambda u, dw: step_exact_linear(u, dw, params, stepper.spectrum, cfg.tau)  # noqa: E731
    elif cfg.solver == "exponential_euler":
        exact = lambda u, dw: step_exponential_euler(  # noqa: E731
            u, dw, params, stepper.spectrum, stepper.ws, cfg.tau, cfg.fp_tol, cfg.fp_max_iters)
    u = np.array(init, dtype=complex)
    if u.shape[-1] != params.n_modes:
        raise ConfigurationError("initial state has the wrong number of modes")
    summary = TrajectorySummary(u, n_steps)

    def fire(k, state):
        for hook in hooks:
            out = hook(k, state)
            if out is not None:
                summary.records.append(out)

    fire(0, u)
    checksum = np.zeros(u.shape, dtype=complex)
    k = 0
    while k < n_steps:
        chunk = min(block, n_steps - k)
        dws = stream.next_block(noise, chunk)
        checksum += dws.sum(axis=0)
        for i in range(chunk):
            k += 1
            try:
                if cfg.solver != "fixed_point":
                    u = exact(u, dws[i])
                else:
                    u, rep = stepper.step(u, dws[i])
                    summary.max_iterations = max(summary.max_iterations,
                                                 int(np.max(rep.iterations)))
            except StepFailure as exc:
                raise StepFailure(f"step {k}: {exc}", exc.residual, exc.iterations, k) from exc
            fire(k, u)
    summary.final = u
    summary.noise_checksum = checksum
    return summary


def linear_gaussian_law(params: ModelParams, eta, u0, t: float, tau: float | None = None):
    """Per-mode mean and variance ``E|a_m - mean_m|^2`` for lam = 0.

    With ``tau=None`` this is the exact law of the Galerkin SDE at time ``t``;
    otherwise the law of the scheme after ``round(t / tau)`` steps. Both laws
    are circular complex Gaussians around the mean.
    """
    spectrum = make_spectrum(params)
    eta = np.asarray(eta, dtype=float)[: params.n_modes]
    u0 = np.asarray(u0, dtype=complex)
    a = params.alpha
    if tau is None:
        mean = np.exp(-spectrum.lambda_op * t) * u0
        var = eta * -np.expm1(-2 * a * t) / a
        return mean, var
    k = int(round(t / tau))
    denom = 1 + (spectrum.mu * tau) ** 2
    r = np.exp(-a * tau) / (1 + 1j * spectrum.mu * tau)
    q = np.exp(-2 * a * tau) / denom
    c = 2 * eta * tau / denom
    return r**k * u0, c * (1 - q**k) / (1 - q)
