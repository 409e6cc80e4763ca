"""End-to-end acceptance criteria. Each test prints one PASS/FAIL line."""
import functools
import time

import numpy as np
import pytest

from snls import output
from snls.checks import exactness_suite
from snls.cli import PRESETS
from snls.config import config_from_dict
from snls.experiments import (StudySpec, ergodicity_study, operator_check, spatial_order_study,
                              stationary_moment_study, temporal_order_study)
from snls.integrator import StepConfig, solve_uniqueness_probe
from snls.noise import NoiseStream, make_power_spectrum
from snls.spectral import ModelParams

pytestmark = pytest.mark.slow

STATIONARY = StudySpec("ergodicity", alpha=1.0, lam=0, n_modes=16, tau=2.0**-7, noise_p=8.0,
                       n_replicas=64, burn_in=1280, n_steps=1280 + 15625, chunk=64)
ERGODIC = config_from_dict(PRESETS["ergodicity"]).study_spec()
TEMPORAL = config_from_dict(PRESETS["temporal-order"]).study_spec()
SPATIAL = config_from_dict(PRESETS["spatial-order"]).study_spec()


@functools.lru_cache(maxsize=None)
def run(name: str, threads: int):
    if name == "stationary":
        return stationary_moment_study(STATIONARY, threads)
    if name == "ergodic":
        return ergodicity_study(ERGODIC, threads)
    if name == "temporal":
        return temporal_order_study(TEMPORAL, threads)
    return spatial_order_study(SPATIAL, threads)


def serialize(name: str, result, directory) -> bytes:
    """Bytes of the CSV and JSON files a CLI run would write for ``result``."""
    if name == "stationary":
        header = ("mode", "mean", "stderr", "target", "z_score")
        files = [output.write_csv(directory / "modes.csv", header, result)]
    elif name == "ergodic":
        files = [output.write_csv(directory / "erg.csv", ("ic", "observable", "mean", "stderr"),
                                  result.table),
                 output.write_json(directory / "erg.json", result.details)]
    else:
        files = [output.write_rate_table(directory / "rate.csv", result.table),
                 output.write_fit(directory / "fit.json", result.fit),
                 output.write_json(directory / "details.json", result.details)]
    return b"".join(f.read_bytes() for f in files)


def test_criterion_1_exactness(report):
    t0 = time.perf_counter()
    checks = exactness_suite(seed=0, n_states=1000)
    elapsed = time.perf_counter() - t0
    worst = max(c.value / c.tolerance for c in checks)
    ok = all(c.passed for c in checks) and elapsed < 10
    assert report(1, ok, f"exactness suite, worst error/tolerance {worst:.2e} (<= 1), "
                         f"{elapsed:.1f} s (< 10 s)")


def test_criterion_2_stationary_oracle(report):
    rows = run("stationary", 1)
    zmax = max(r["z_score"] for r in rows)
    ok = [r["mode"] for r in rows] == [1, 2, 3, 4] and all(r["z_score"] <= 3 for r in rows)
    assert report(2, ok, f"lam=0 per-mode |a_m|^2, 64 x 15625 post-burn-in steps, "
                         f"max z-score {zmax:.2f} (<= 3)")


def test_criterion_3_operator_bounds(report):
    t0 = time.perf_counter()
    rep = operator_check(1.0, n_values=(4, 8, 16, 32, 64), s_values=(1, 2),
                         t_values=(0.0, 0.5, 1.0, 2.0))
    elapsed = time.perf_counter() - t0
    d = rep.details
    ok = d["truncation_ok"] and d["scheme_ok"] and d["h1_ok"] and elapsed < 10
    assert report(3, ok, f"truncation closed form {d['truncation_ok']}, scheme constant spread "
                         f"{d['scheme_constant_spread']:.3f} (< 2), H1 constant "
                         f"{d['h1_constant']:.3f} (<= 4), {elapsed:.1f} s (< 10 s)")


def test_criterion_4_ergodicity(report):
    rep = run("ergodic", 1)
    comps = rep.details["comparisons"]
    zmax = max(c.z_score for c in comps)
    ok = len(comps) == 6 and all(c.passed for c in comps)
    assert report(4, ok, f"{len(comps)} observables across two initial conditions, "
                         f"max combined z {zmax:.2f} (<= 3)")


def test_criterion_5_moment_drift(report):
    rep = run("ergodic", 1)
    drift = rep.details["drift"]
    worst = max(d["relative_change"] for d in drift)
    ok = len(drift) == 6 and all(d["passed"] for d in drift)
    assert report(5, ok, f"last vs middle decile of mass, H_k, ||u||_2^2, "
                         f"max relative change {worst:.3f} (<= 0.10)")


def test_criterion_6_temporal_order(report):
    rep = run("temporal", 1)
    inc = rep.details["increment_fit"].slope
    excluded = rep.details["excluded"]
    slope = rep.fit.slope if rep.fit is not None else float("nan")
    ok = (TEMPORAL.n_replicas >= 2000 and rep.fit is not None and not excluded
          and slope >= 0.4 and abs(inc - 1.0) <= 0.2)
    assert report(6, ok, f"weak slope {slope:.3f} (>= 0.4), CI [{rep.fit.ci_low:.2f}, "
                         f"{rep.fit.ci_high:.2f}], unresolved points {len(excluded)} (0), "
                         f"increment slope {inc:.3f} (1.0 +- 0.2), {TEMPORAL.n_replicas} replicas")


def test_criterion_7_spatial_order(report):
    rep = run("spatial", 1)
    excluded = rep.details["excluded"]
    retained = [r for r in rep.table if r["resolution"] not in excluded]
    slope = rep.fit.slope if rep.fit is not None else float("nan")
    ok = (rep.fit is not None and slope >= 1.5 and len(retained) >= 3
          and all(r["error"] > 3 * r["stderr"] for r in retained))
    assert report(7, ok, f"weak slope in N {slope:.3f} (>= 1.5), retained "
                         f"{len(retained)}/{len(rep.table)} points above 3 stderr, "
                         f"{SPATIAL.n_replicas} replicas")


def test_criterion_8_uniqueness_probe(report):
    n, tau = 32, 2.0**-6
    params = ModelParams(1.0, -1, n)
    cfg = StepConfig(tau)
    rng = np.random.default_rng(8)
    dws = NoiseStream(8, tuple(range(100)), 0, tau).next_block(make_power_spectrum(n, 8.0), 1)[0]
    results = []
    for i in range(100):
        prev = 2.0 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2 * n)
        results.append(solve_uniqueness_probe(prev, dws[i], params, cfg, seed=i))
    assert report(8, all(results), f"uniqueness probe true on {sum(results)}/100 random steps "
                                   f"at alpha*tau = 2^-6, lam=-1")


def test_criterion_9_determinism(report, tmp_path):
    mismatched = []
    for name in ("stationary", "ergodic", "temporal", "spatial"):
        a = serialize(name, run(name, 1), tmp_path)
        b = serialize(name, run(name, 3), tmp_path)
        if a != b:
            mismatched.append(name)
    assert report(9, not mismatched, "criteria 2, 4, 6, 7 rerun with 3 threads vs 1 thread: "
                                     f"byte-identical outputs, mismatches {mismatched or 'none'}")
