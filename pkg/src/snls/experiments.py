"""Monte Carlo and exact studies: ergodicity, weak convergence rates, operator bounds.

Every Monte Carlo study splits its replicas into fixed-size chunks. Chunks
run on a thread pool (``SNLS_THREADS``, default: available cores) but each
chunk's arithmetic depends only on its own replica indices, and results are
reduced in chunk order, so outputs do not depend on the thread count.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .integrator import StepConfig, linear_gaussian_law, run_trajectory
from .noise import NoiseSpectrum, NoiseStream, make_power_spectrum
from .observables import (DEFAULT_C0, TEST_FUNCTIONS, EnsembleStats, ensemble_reduce,
                          gaussian_expectation, record, test_function)
from .spectral import ConfigurationError, GridWorkspace, ModelParams, _abs2, make_spectrum

# Accepted slope windows: proven order minus 0.1, with a cap that only
# catches degenerate fits. Spatial errors are dominated by the truncated noise
# tail ~ N^(1-p), so slopes well above 2 are expected for p > 5.
SPATIAL_WINDOW = (1.5, 8.0)
TEMPORAL_WINDOW = (0.4, 2.5)

STUDY_KINDS = ("ergodicity", "spatial_order", "temporal_order", "invariant_error_spatial",
               "invariant_error_temporal", "operator_check")


# -- rate fits -----------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Least-squares fit ``log err = slope * log h + intercept``."""

    slope: float
    intercept: float
    r_squared: float
    ci_low: float
    ci_high: float
    points: tuple  # (log h, log err) pairs actually used

    def as_dict(self):
        return {"slope": self.slope, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "r_squared": self.r_squared, "intercept": self.intercept,
                "points": [list(p) for p in self.points]}


def fit_rate(points) -> RateFit:
    """Fit a convergence rate to ``(h, err)`` pairs.

    Nonpositive errors are dropped with a warning. The 95% interval on the
    slope uses the t distribution with ``n - 2`` degrees of freedom (zero width
    for an exact fit or exactly three points lying on a line).
    """
    pts = [(float(h), float(e)) for h, e in points]
    kept = [(h, e) for h, e in pts if e > 0 and h > 0 and np.isfinite(e)]
    if len(kept) < len(pts):
        warnings.warn(f"fit_rate: dropped {len(pts) - len(kept)} nonpositive point(s)", stacklevel=2)
    if len(kept) < 3:
        raise ValueError(f"fit_rate needs at least 3 positive points, got {len(kept)}")
    x = np.log([h for h, _ in kept])
    y = np.log([e for _, e in kept])
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise ValueError("fit_rate needs at least two distinct resolutions")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    se = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else 0.0
    half = float(stats.t.ppf(0.975, n - 2)) * se
    return RateFit(slope, intercept, r2, slope - half, slope + half,
                   tuple((float(a), float(b)) for a, b in zip(x, y)))


# -- study configuration ----------------------------------------------------------

@dataclass(frozen=True)
class StudySpec:
    """Settings shared by all studies.

    ``resolutions`` are mode counts (spatial kinds) or step sizes (temporal
    kinds) and exclude ``reference``. ``initial_conditions`` lists coefficient
    tuples; ``()`` is the zero state. ``n_steps`` and ``burn_in`` count steps
    of size ``tau`` for ergodicity; temporal long runs use ``t_final`` and
    ``burn_in_time`` instead.
    """

    kind: str
    alpha: float = 1.0
    lam: int = -1
    n_modes: int = 32
    tau: float = 2.0**-7
    noise_p: float = 8.0
    noise_scale: float = 1.0
    noise_etas: tuple = ()
    resolutions: tuple = ()
    reference: float | None = None
    n_replicas: int = 64
    t_final: float = 1.0
    n_steps: int = 0
    burn_in: int = 0
    burn_in_time: float = 0.0
    seed: int = 0
    initial_conditions: tuple = ((), (2.0, 1.0))
    phi: str = "exp_neg_mass"
    method: str = "monte_carlo"
    fp_tol: float = 1e-12
    fp_max_iters: int = 200
    chunk: int = 64
    spatial_solver: str = "exponential_euler"
    c0: float = DEFAULT_C0
    operator_taus: tuple = tuple(2.0**-j for j in range(4, 11))
    operator_max_k: int = 2**12

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ConfigurationError(f"unknown study kind {self.kind!r}")
        object.__setattr__(self, "resolutions", tuple(self.resolutions))
        object.__setattr__(self, "noise_etas", tuple(float(e) for e in self.noise_etas))
        object.__setattr__(self, "initial_conditions",
                           tuple(tuple(ic) for ic in self.initial_conditions))
        ModelParams(self.alpha, self.lam, self.n_modes)
        if self.kind == "operator_check":
            return
        if self.n_replicas < 2:
            raise ConfigurationError("Monte Carlo studies need at least 2 replicas")
        if self.chunk < 1:
            raise ConfigurationError("chunk must be positive")
        if self.phi not in TEST_FUNCTIONS:
            raise ConfigurationError(f"unknown test function {self.phi!r}")
        if self.method not in ("monte_carlo", "analytic"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.spatial_solver not in ("exponential_euler", "fixed_point"):
            raise ConfigurationError(f"unknown spatial solver {self.spatial_solver!r}")
        if self.method == "analytic" and self.lam != 0:
            raise ConfigurationError("the analytic method requires lambda = 0")
        if self.kind == "ergodicity":
            if len(self.initial_conditions) < 2:
                raise ConfigurationError("ergodicity needs at least two initial conditions")
            if self.n_steps <= self.burn_in:
                raise ConfigurationError("n_steps must exceed burn_in")
            StepConfig(self.tau).validate(self.alpha)
            return
        res = self.resolutions
        if not res:
            raise ConfigurationError("resolutions must not be empty")
        if self.reference is None:
            raise ConfigurationError("a reference resolution is required")
        spatial = self.kind in ("spatial_order", "invariant_error_spatial")
        if spatial:
            if any(int(n) != n or n < 1 for n in res + (self.reference,)):
                raise ConfigurationError("spatial resolutions must be positive integers")
            if any(b <= a for a, b in zip(res, res[1:])) or res[-1] >= self.reference:
                raise ConfigurationError("mode counts must increase and stay below the reference")
            StepConfig(self.tau).validate(self.alpha)
        else:
            if any(b >= a for a, b in zip(res, res[1:])) or res[-1] <= self.reference:
                raise ConfigurationError("step sizes must decrease and stay above the reference")
            for t in res + (self.reference,):
                StepConfig(t).validate(self.alpha)
                if _level(res[0], t) is None:
                    raise ConfigurationError(f"tau {t} is not a dyadic refinement of {res[0]}")
            if self.kind == "temporal_order":
                _whole_steps(self.t_final, self.reference)
                _whole_steps(self.t_final, res[0])

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.alpha, self.lam, self.n_modes)

    def noise(self, n_modes: int) -> NoiseSpectrum:
        if self.noise_etas:
            if len(self.noise_etas) < n_modes:
                raise ConfigurationError(f"noise_etas lists {len(self.noise_etas)} modes, "
                                         f"need {n_modes}")
            return NoiseSpectrum(self.noise_etas[:n_modes], kind="explicit")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return make_power_spectrum(n_modes, self.noise_p, self.noise_scale)

    def initial_state(self, index: int, n_modes: int) -> np.ndarray:
        coeffs = np.asarray(self.initial_conditions[index], dtype=complex)
        out = np.zeros(n_modes, dtype=complex)
        k = min(n_modes, coeffs.size)
        out[:k] = coeffs[:k]
        return out

    def default_initial(self, n_modes: int) -> np.ndarray:
        return self.initial_state(len(self.initial_conditions) - 1, n_modes)


def _level(base: float, tau: float):
    ratio = base / tau
    level = int(round(math.log2(ratio)))
    if level < 0 or not math.isclose(2.0**level, ratio, rel_tol=1e-12):
        return None
    return level


def _whole_steps(t: float, tau: float) -> int:
    m = int(round(t / tau))
    if m < 1 or not math.isclose(m * tau, t, rel_tol=1e-12):
        raise ConfigurationError(f"T = {t} is not a whole number of steps of {tau}")
    return m


# -- chunked execution ----------------------------------------------------------

def thread_count() -> int:
    env = os.environ.get("SNLS_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"SNLS_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity")
               else (os.cpu_count() or 1))


def run_chunks(task, replicas, chunk: int, threads: int | None = None) -> list:
    """Apply ``task`` to consecutive fixed-size replica chunks; results in chunk order."""
    replicas = list(replicas)
    chunks = [tuple(replicas[i:i + chunk]) for i in range(0, len(replicas), chunk)]
    threads = thread_count() if threads is None else max(1, int(threads))
    if threads == 1 or len(chunks) == 1:
        return [task(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, chunks))


# -- result containers ------------------------------------------------------------

@dataclass
class Comparison:
    name: str
    means: tuple
    stderrs: tuple
    z_score: float
    passed: bool


@dataclass
class StudyReport:
    """Outcome of a study. ``table`` rows feed the CSV writers."""

    kind: str
    verdict: str
    fit: RateFit | None = None
    table: list = field(default_factory=list)
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RatePoint:
    resolution: float
    error: float
    stderr: float
    resolved: bool


# -- ergodicity -----------------------------------------------------------------------

ERGODIC_OBSERVABLES = ("mass", "ham_disc", "h2_sq") + tuple("phi_" + k for k in TEST_FUNCTIONS)
DRIFT_OBSERVABLES = ("mass", "ham_disc", "h2_sq")


def _ergodic_chunk(spec: StudySpec, ic_index: int, replicas: tuple):
    params = spec.params
    spectrum = make_spectrum(params)
    ws = GridWorkspace(params.n_modes)
    noise = spec.noise(params.n_modes)
    cfg = StepConfig(spec.tau, spec.fp_tol, spec.fp_max_iters)
    stream = NoiseStream(spec.seed, replicas, 0, spec.tau)
    R, n = len(replicas), spec.n_steps
    series = np.empty((n + 1, R, len(ERGODIC_OBSERVABLES)))
    modes = min(params.n_modes, 4)
    mode_sq = np.empty((n + 1, R, modes))

    def hook(k, u):
        rec = record(u, spectrum, ws, params, spec.c0)
        series[k, :, 0] = rec.mass
        series[k, :, 1] = rec.ham_disc
        series[k, :, 2] = rec.h2**2
        for j, kind in enumerate(TEST_FUNCTIONS):
            series[k, :, 3 + j] = test_function(kind, u)
        mode_sq[k] = _abs2(u[:, :modes])

    init = np.tile(spec.initial_state(ic_index, params.n_modes), (R, 1))
    run_trajectory(init, n, stream, params, noise, cfg, hooks=(hook,), ws=ws)
    post = series[spec.burn_in + 1:]
    time_avg = np.array([[math.fsum(post[:, r, j]) / post.shape[0]
                          for j in range(post.shape[2])] for r in range(R)])
    mode_avg = np.array([[math.fsum(mode_sq[spec.burn_in + 1:, r, j]) / post.shape[0]
                          for j in range(modes)] for r in range(R)])
    # Decile sums of the full run (steps 1..n) for the drift check.
    edges = np.linspace(1, n + 1, 11).astype(int)
    deciles = np.array([[series[a:b, :, j].sum() for j in range(len(DRIFT_OBSERVABLES))]
                        for a, b in zip(edges[:-1], edges[1:])])
    counts = np.diff(edges) * R
    return time_avg, mode_avg, deciles, counts


def ergodicity_study(spec: StudySpec, threads: int | None = None) -> StudyReport:
    """Compare long-run time averages started from different initial states.

    Initial condition ``i`` uses replica indices ``i*R .. i*R + R - 1`` so the
    runs are independent. PASS when every observable agrees between every
    pair within three combined standard errors.
    """
    if spec.kind != "ergodicity":
        raise ConfigurationError("spec.kind must be 'ergodicity'")
    R = spec.n_replicas
    per_ic = []
    for i in range(len(spec.initial_conditions)):
        parts = run_chunks(lambda c, i=i: _ergodic_chunk(spec, i, c),
                           range(i * R, (i + 1) * R), spec.chunk, threads)
        time_avg = np.concatenate([p[0] for p in parts])
        mode_avg = np.concatenate([p[1] for p in parts])
        dec = np.sum([p[2] for p in parts], axis=0)
        counts = np.sum([p[3] for p in parts], axis=0)
        per_ic.append((time_avg, mode_avg, dec / counts[:, None]))

    stats_ic = [[ensemble_reduce(t[:, j]) for j in range(len(ERGODIC_OBSERVABLES))]
                for t, _, _ in per_ic]
    comparisons = []
    for j, name in enumerate(ERGODIC_OBSERVABLES):
        for a in range(len(per_ic)):
            for b in range(a + 1, len(per_ic)):
                sa, sb = stats_ic[a][j], stats_ic[b][j]
                comb = math.hypot(sa.stderr, sb.stderr)
                diff = abs(sa.mean - sb.mean)
                z = diff / comb if comb > 0 else (0.0 if diff == 0 else math.inf)
                comparisons.append(Comparison(f"{name}[{a},{b}]", (sa.mean, sb.mean),
                                              (sa.stderr, sb.stderr), z, z <= 3.0))

    drift = []
    for i, (_, _, dec) in enumerate(per_ic):
        for j, name in enumerate(DRIFT_OBSERVABLES):
            middle, last = dec[5, j], dec[9, j]
            rel = abs(last - middle) / abs(middle) if middle != 0 else (0.0 if last == 0 else math.inf)
            drift.append({"ic": i, "observable": name, "middle_decile": float(middle),
                          "last_decile": float(last), "relative_change": float(rel),
                          "passed": bool(rel <= 0.10)})

    table = []
    for i, row in enumerate(stats_ic):
        for j, name in enumerate(ERGODIC_OBSERVABLES):
            table.append({"ic": i, "observable": name, "mean": row[j].mean, "stderr": row[j].stderr})

    details = {"comparisons": comparisons, "drift": drift, "stats": stats_ic}
    passed = all(c.passed for c in comparisons)
    if spec.lam == 0:
        oracle = _stationary_mode_check(spec, [m for _, m, _ in per_ic])
        details["mode_oracle"] = oracle
        passed = passed and all(o["passed"] for o in oracle)
    return StudyReport("ergodicity", "PASS" if passed else "FAIL", None, table, details)


def _stationary_mode_check(spec: StudySpec, mode_avgs):
    from .integrator import scheme_stationary_variance

    noise = spec.noise(spec.n_modes)
    target = scheme_stationary_variance(spec.params, noise.eta, spec.tau)
    out = []
    for i, avg in enumerate(mode_avgs):
        for m in range(avg.shape[1]):
            s = ensemble_reduce(avg[:, m])
            z = abs(s.mean - target[m]) / s.stderr if s.stderr > 0 else math.inf
            out.append({"ic": i, "mode": m + 1, "mean": s.mean, "stderr": s.stderr,
                        "target": float(target[m]), "z_score": z, "passed": bool(z <= 3.0)})
    return out


def stationary_moment_study(spec: StudySpec, threads: int | None = None) -> list:
    """Per-mode time averages of ``|a_m|^2`` (modes 1-4) against the lam = 0 law.

    Uses only the first initial condition and the replicas ``0 .. R-1``.
    """
    if spec.lam != 0:
        raise ConfigurationError("the stationary moment oracle requires lambda = 0")
    parts = run_chunks(lambda c: _ergodic_chunk(spec, 0, c), range(spec.n_replicas),
                       spec.chunk, threads)
    return _stationary_mode_check(spec, [np.concatenate([p[1] for p in parts])])


# -- fixed-time weak errors ------------------------------------------------------------

def _rate_points(diffs: np.ndarray, resolutions) -> list:
    """Paired differences (replicas x resolutions) to error points."""
    points = []
    for j, res in enumerate(resolutions):
        s = ensemble_reduce(diffs[:, j])
        err = abs(s.mean)
        points.append(RatePoint(float(res), err, s.stderr, bool(err > 3 * s.stderr)))
    return points


def _finish_rate_study(kind, points, h_of, require_all=False, extra=None) -> StudyReport:
    used = [p for p in points if p.resolved]
    for p in points:
        if not p.resolved:
            warnings.warn(f"{kind}: error at resolution {p.resolution:g} is below the Monte "
                          "Carlo noise floor; point excluded", stacklevel=3)
    fit = None
    details = dict(extra or {})
    details["excluded"] = [p.resolution for p in points if not p.resolved]
    if len(used) >= 3:
        fit = fit_rate([(h_of(p.resolution), p.error) for p in used])
    else:
        details["fit_error"] = f"only {len(used)} resolved points"
    table = [{"resolution": p.resolution, "error": p.error, "stderr": p.stderr} for p in points]
    verdict = "N/A"
    if "threshold" in details:
        lo, hi = details["threshold"]
        ok = fit is not None and lo <= fit.slope <= hi
        if require_all and details["excluded"]:
            ok = False
        verdict = "PASS" if ok else "FAIL"
    return StudyReport(kind, verdict, fit, table, details)


def _spatial_chunk(spec: StudySpec, sizes, n_steps, replicas):
    finals, sums = [], []
    init_ref = spec.default_initial(max(sizes))
    for n in sizes:
        params = ModelParams(spec.alpha, spec.lam, n)
        cfg = StepConfig(spec.tau, spec.fp_tol, spec.fp_max_iters, spec.spatial_solver)
        stream = NoiseStream(spec.seed, replicas, 0, spec.tau)
        init = np.tile(init_ref[:n], (len(replicas), 1))
        out = run_trajectory(init, n_steps, stream, params, spec.noise(n), cfg)
        finals.append(test_function(spec.phi, out.final))
        sums.append(out.noise_checksum)
    return np.stack(finals, axis=1), sums


def _checksum_deviation(sums_by_chunk) -> float:
    """Largest per-mode disagreement between the noise consumed at different
    resolutions, after weighting out the mode variances."""
    worst = 0.0
    for sums in sums_by_chunk:
        ref = sums[-1]
        for s in sums[:-1]:
            k = min(s.shape[-1], ref.shape[-1])
            worst = max(worst, float(np.max(np.abs(s[..., :k] - ref[..., :k]), initial=0.0)))
    return worst


def spatial_order_study(spec: StudySpec, threads: int | None = None) -> StudyReport:
    """Weak error in the number of modes at fixed ``T``.

    All resolutions share noise: mode ``m`` draws the same variates at every
    ``N >= m``. Errors are paired Monte Carlo estimates of
    ``|E phi(u_N(T)) - E phi(u_Nref(T))|`` (exact Gaussian values for the
    analytic method) and the rate is fitted against ``h = 1/N``.
    """
    if spec.kind != "spatial_order":
        raise ConfigurationError("spec.kind must be 'spatial_order'")
    sizes = tuple(int(n) for n in spec.resolutions) + (int(spec.reference),)
    n_steps = _whole_steps(spec.t_final, spec.tau)
    extra = {"threshold": SPATIAL_WINDOW, "n_steps": n_steps}
    if spec.method == "analytic":
        vals = []
        for n in sizes:
            params = ModelParams(spec.alpha, 0, n)
            # Exponential Euler is exact in law for lam = 0.
            tau = None if spec.spatial_solver == "exponential_euler" else spec.tau
            mean, var = linear_gaussian_law(params, spec.noise(n).eta,
                                            spec.default_initial(n), spec.t_final, tau)
            vals.append(gaussian_expectation(spec.phi, mean, var))
        points = [RatePoint(float(n), abs(v - vals[-1]), 0.0, abs(v - vals[-1]) > 0)
                  for n, v in zip(sizes[:-1], vals[:-1])]
        return _finish_rate_study("spatial_order", points, lambda n: 1.0 / n, extra=extra)
    parts = run_chunks(lambda c: _spatial_chunk(spec, sizes, n_steps, c),
                       range(spec.n_replicas), spec.chunk, threads)
    phis = np.concatenate([p[0] for p in parts])
    extra["crn_checksum_deviation"] = _checksum_deviation([p[1] for p in parts])
    extra["reference_mean"] = ensemble_reduce(phis[:, -1]).mean
    diffs = phis[:, :-1] - phis[:, -1:]
    points = _rate_points(diffs, sizes[:-1])
    return _finish_rate_study("spatial_order", points, lambda n: 1.0 / n, require_all=False,
                              extra=extra)


def _temporal_chunk(spec: StudySpec, taus, replicas):
    base = taus[0]
    params = spec.params
    ws = GridWorkspace(params.n_modes)
    noise = spec.noise(params.n_modes)
    init = np.tile(spec.default_initial(params.n_modes), (len(replicas), 1))
    finals, incs, sums = [], [], []
    for tau in taus:
        cfg = StepConfig(tau, spec.fp_tol, spec.fp_max_iters)
        stream = NoiseStream(spec.seed, replicas, _level(base, tau), base)
        m = _whole_steps(spec.t_final, tau)
        damp = math.exp(-spec.alpha * tau)
        acc = np.zeros(len(replicas))
        prev = [None]

        def hook(k, u, acc=acc, prev=prev, damp=damp):
            if k:
                acc[:] += _abs2(u - damp * prev[0]).sum(axis=-1)
            prev[0] = u

        out = run_trajectory(init, m, stream, params, noise, cfg, hooks=(hook,), ws=ws)
        finals.append(test_function(spec.phi, out.final))
        incs.append(acc / m)
        sums.append(out.noise_checksum)
    return np.stack(finals, axis=1), np.stack(incs, axis=1), sums


def temporal_order_study(spec: StudySpec, threads: int | None = None) -> StudyReport:
    """Weak error in the step size at fixed ``T`` with common random numbers.

    All step sizes are dyadic refinements of the coarsest one and draw their
    increments from one Brownian-bridge hierarchy. Also fits the mean squared
    increment ``E||u^k - exp(-alpha tau) u^{k-1}||^2`` against ``tau``.
    """
    if spec.kind != "temporal_order":
        raise ConfigurationError("spec.kind must be 'temporal_order'")
    taus = tuple(spec.resolutions) + (spec.reference,)
    extra = {"threshold": TEMPORAL_WINDOW}
    if spec.method == "analytic":
        params = spec.params
        eta = spec.noise(params.n_modes).eta
        u0 = spec.default_initial(params.n_modes)
        exact = gaussian_expectation(spec.phi, *linear_gaussian_law(params, eta, u0, spec.t_final))
        points = []
        for tau in spec.resolutions:
            v = gaussian_expectation(spec.phi, *linear_gaussian_law(params, eta, u0,
                                                                    spec.t_final, tau))
            points.append(RatePoint(float(tau), abs(v - exact), 0.0, abs(v - exact) > 0))
        extra["reference"] = "exact law"
        return _finish_rate_study("temporal_order", points, lambda t: t, extra=extra)
    parts = run_chunks(lambda c: _temporal_chunk(spec, taus, c), range(spec.n_replicas),
                       spec.chunk, threads)
    phis = np.concatenate([p[0] for p in parts])
    incs = np.concatenate([p[1] for p in parts])
    # Bridge sums reproduce the coarse Brownian path: compare W(T) across levels.
    extra["crn_checksum_deviation"] = _checksum_deviation([p[2] for p in parts])
    extra["reference_mean"] = ensemble_reduce(phis[:, -1]).mean
    inc_points = [(t, ensemble_reduce(incs[:, j]).mean) for j, t in enumerate(taus)]
    extra["increment_points"] = inc_points
    extra["increment_fit"] = fit_rate(inc_points)
    points = _rate_points(phis[:, :-1] - phis[:, -1:], spec.resolutions)
    return _finish_rate_study("temporal_order", points, lambda t: t, extra=extra)


# -- invariant-measure errors -------------------------------------------------------

def _long_run_chunk(spec: StudySpec, replicas, spatial: bool):
    base = spec.tau if spatial else spec.resolutions[0]
    levels = spec.resolutions + (spec.reference,)
    avgs, sums = [], []
    init_full = spec.default_initial(int(max(levels)) if spatial else spec.n_modes)
    for res in levels:
        n = int(res) if spatial else spec.n_modes
        tau = spec.tau if spatial else res
        params = ModelParams(spec.alpha, spec.lam, n)
        solver = spec.spatial_solver if spatial else "fixed_point"
        cfg = StepConfig(tau, spec.fp_tol, spec.fp_max_iters, solver)
        stream = NoiseStream(spec.seed, replicas, 0 if spatial else _level(base, tau), base)
        m = int(round(spec.t_final / tau))
        burn = int(round(spec.burn_in_time / tau))
        samples = np.empty((m - burn, len(replicas)))

        def hook(k, u, samples=samples, burn=burn):
            if k > burn:
                samples[k - burn - 1] = test_function(spec.phi, u)

        init = np.tile(init_full[:n], (len(replicas), 1))
        out = run_trajectory(init, m, stream, params, spec.noise(n), cfg, hooks=(hook,))
        avgs.append(np.array([math.fsum(col) / col.size for col in samples.T]))
        sums.append(out.noise_checksum)
    return np.stack(avgs, axis=1), sums


def invariant_error_study(spec: StudySpec, threads: int | None = None) -> StudyReport:
    """Invariant-measure error from paired long-run time averages of ``phi``.

    Spatial kind: errors against ``N_ref`` at step ``tau``. Temporal kind:
    errors against ``tau_ref`` with common random numbers; for lam = 0 with
    the analytic method the exact stationary laws are compared instead.
    """
    if spec.kind not in ("invariant_error_spatial", "invariant_error_temporal"):
        raise ConfigurationError("spec.kind must be an invariant_error kind")
    spatial = spec.kind == "invariant_error_spatial"
    h_of = (lambda n: 1.0 / n) if spatial else (lambda t: t)
    extra = {"threshold": SPATIAL_WINDOW if spatial else TEMPORAL_WINDOW}
    if spec.burn_in_time >= spec.t_final:
        raise ConfigurationError("burn_in_time must be below t_final")
    if spec.method == "analytic":
        # Stationary laws: the long-time limit of the finite-time Gaussian law.
        big_t = 1e3 / spec.alpha
        levels = spec.resolutions + (spec.reference,)
        vals = []
        for res in levels:
            n = int(res) if spatial else spec.n_modes
            tau = spec.tau if spatial else res
            if spatial and spec.spatial_solver == "exponential_euler":
                tau = None
            params = ModelParams(spec.alpha, 0, n)
            law = linear_gaussian_law(params, spec.noise(n).eta, np.zeros(n), big_t, tau)
            vals.append(gaussian_expectation(spec.phi, *law))
        if not spatial:
            params = spec.params
            vals[-1] = gaussian_expectation(spec.phi, *linear_gaussian_law(
                params, spec.noise(params.n_modes).eta, np.zeros(params.n_modes), big_t))
            extra["reference"] = "exact stationary law"
        points = [RatePoint(float(r), abs(v - vals[-1]), 0.0, abs(v - vals[-1]) > 0)
                  for r, v in zip(levels[:-1], vals[:-1])]
        return _finish_rate_study(spec.kind, points, h_of, extra=extra)
    parts = run_chunks(lambda c: _long_run_chunk(spec, c, spatial), range(spec.n_replicas),
                       spec.chunk, threads)
    avgs = np.concatenate([p[0] for p in parts])
    extra["crn_checksum_deviation"] = _checksum_deviation([p[1] for p in parts])
    points = _rate_points(avgs[:, :-1] - avgs[:, -1:], spec.resolutions)
    return _finish_rate_study(spec.kind, points, h_of, extra=extra)


# -- exact operator bounds ------------------------------------------------------------

def _sup_modes(fn, tail_bound, start: int = 256, limit: int = 2**22):
    """``sup_m fn(m)`` over all m >= 1, given ``tail_bound(M)`` bounding fn beyond M."""
    m_max = start
    while True:
        m = np.arange(1, m_max + 1, dtype=float)
        vals = fn(m)
        best = float(np.max(vals))
        if tail_bound(m_max) <= best or m_max >= limit:
            return best, int(np.argmax(vals)) + 1
        m_max *= 2


def truncation_norm(alpha: float, n_modes: int, s: int, t: float):
    """``||S(t) - S(t) pi_N||_{L(H^s, L^2)}`` by a supremum over the tail symbols.

    Returns ``(norm, argmax mode)``.
    """
    def fn(m):
        lam_abs = np.hypot((m * np.pi) ** 2, alpha)
        return np.where(m > n_modes, math.exp(-alpha * t) * lam_abs ** (-s / 2), 0.0)

    tail = lambda M: math.exp(-alpha * t) * ((M + 1) * np.pi) ** (-s)  # noqa: E731
    return _sup_modes(fn, tail, start=max(256, 4 * n_modes))


def _sx_difference(alpha, tau, k, m):
    mu = (m * np.pi) ** 2
    r = math.exp(-alpha * tau) / (1 + 1j * mu * tau)
    return np.abs(r**k - np.exp(-(1j * mu + alpha) * k * tau))


def scheme_semigroup_gap(alpha: float, tau: float, k: int, s_from: int = 2):
    """``||S_tau^k - S(t_k)||`` from ``H^{s_from}`` into ``L^2`` (s_from = 2) or
    ``H^1 -> H^1`` (s_from = 0, the symbol itself)."""
    if k == 0:
        return 0.0, 1
    weight = (lambda m: 1.0 / np.hypot((m * np.pi) ** 2, alpha)) if s_from == 2 else \
        (lambda m: np.ones_like(m))
    fn = lambda m: _sx_difference(alpha, tau, k, m) * weight(m)  # noqa: E731
    decay = 2 * math.exp(-alpha * k * tau)
    tail = (lambda M: decay / ((M + 1) * np.pi) ** 2) if s_from == 2 else (lambda M: decay)
    if s_from != 2:
        # Symbol tends to exp(-alpha t_k) for large m; a finite sweep plus that limit is the sup.
        best, arg = _sup_modes(fn, lambda M: 0.0)
        return max(best, math.exp(-alpha * k * tau)), arg
    return _sup_modes(fn, tail, start=64)


def _k_grid(max_k: int):
    ks = set(range(0, min(max_k, 64) + 1))
    v = 64
    while v < max_k:
        v = int(math.ceil(v * 1.25))
        ks.add(min(v, max_k))
    ks.add(max_k)
    return sorted(ks)


def operator_check(alpha: float = 1.0, n_values=(4, 8, 16, 32, 64), s_values=(1, 2),
                   t_values=(0.0, 0.5, 1.0, 2.0), taus=tuple(2.0**-j for j in range(4, 11)),
                   max_k: int = 2**12) -> StudyReport:
    """Exact checks of the truncation and time-discretisation operator bounds.

    (a) the truncation norm equals ``exp(-alpha t) |lambda_{N+1}|^{-s/2}`` and
    ``C = norm * N^s * exp(alpha t)`` stays within a factor 2 over the grid;
    (b) ``C(tau) = sup_k gap / ((t_k + tau)^{1/2} exp(-alpha t_k) tau^{1/2})``
    varies by less than 2x over ``taus``; (c) the ``H^1 -> H^1`` gap is at
    most ``4 exp(-alpha t_k)``.
    """
    rows_a, ok_a = [], True
    consts = {s: [] for s in s_values}
    for s in s_values:
        for n in n_values:
            for t in t_values:
                norm, arg = truncation_norm(alpha, n, s, t)
                exact = math.exp(-alpha * t) * math.hypot(((n + 1) * math.pi) ** 2, alpha) ** (-s / 2)
                err = abs(norm - exact) / exact
                c = norm * n**s * math.exp(alpha * t)
                consts[s].append(c)
                good = err <= 1e-12 and arg == n + 1
                ok_a &= good
                rows_a.append({"s": s, "N": n, "t": t, "norm": norm, "closed_form": exact,
                               "argmax_mode": arg, "C": c, "passed": good})
    spread_a = {s: max(v) / min(v) for s, v in consts.items()}
    ok_a &= all(r < 2.0 for r in spread_a.values())

    rows_b, c_tau, c_h1 = [], [], 0.0
    for tau in taus:
        worst = 0.0
        for k in _k_grid(max_k):
            t = k * tau
            if k == 0:
                gap = scheme_semigroup_gap(alpha, tau, 0)[0]
                if gap != 0.0:
                    ok_a = False
                continue
            gap, _ = scheme_semigroup_gap(alpha, tau, k)
            ratio = gap / (math.sqrt((t + tau) * tau) * math.exp(-alpha * t))
            worst = max(worst, ratio)
            g1, _ = scheme_semigroup_gap(alpha, tau, k, s_from=0)
            c_h1 = max(c_h1, g1 / math.exp(-alpha * t))
        c_tau.append(worst)
        rows_b.append({"tau": tau, "C": worst})
    spread_b = max(c_tau) / min(c_tau)
    ok_b = spread_b < 2.0
    ok_c = c_h1 <= 4.0
    verdict = "PASS" if ok_a and ok_b and ok_c else "FAIL"
    details = {"truncation": rows_a, "truncation_constant_spread": spread_a,
               "truncation_ok": ok_a, "scheme_constants": rows_b, "scheme_constant_spread": spread_b,
               "scheme_ok": ok_b, "h1_constant": c_h1, "h1_ok": ok_c}
    table = [{"resolution": r["tau"], "error": r["C"], "stderr": 0.0} for r in rows_b]
    return StudyReport("operator_check", verdict, None, table, details)


def run_study(spec: StudySpec, threads: int | None = None) -> StudyReport:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "ergodicity":
        return ergodicity_study(spec, threads)
    if spec.kind == "spatial_order":
        return spatial_order_study(spec, threads)
    if spec.kind == "temporal_order":
        return temporal_order_study(spec, threads)
    if spec.kind.startswith("invariant_error"):
        return invariant_error_study(spec, threads)
    return operator_check(spec.alpha, taus=spec.operator_taus, max_k=spec.operator_max_k)


def ensemble_summary(values) -> EnsembleStats:
    return ensemble_reduce(values)
