"""Deterministic exactness checks shared by ``snls selftest`` and the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .experiments import operator_check
from .spectral import GridWorkspace, ModelParams, apply_semigroup, basis_vector, make_spectrum


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)


def _random_states(rng, n_states, n_modes):
    a = rng.standard_normal((n_states, n_modes)) + 1j * rng.standard_normal((n_states, n_modes))
    return a / np.sqrt(2 * n_modes)


def exactness_suite(seed: int = 0, n_states: int = 1000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    worst = 0.0
    for n in (1, 4, 16, 64):
        ws = GridWorkspace(n)
        a = _random_states(rng, 64, n)
        worst = max(worst, float(np.max(np.abs(ws.analyze(ws.synthesize(a)) - a))))
    out.append(CheckResult("transform roundtrip", worst, 1e-12))

    ws = GridWorkspace(3)
    c = ws.galerkin_cubic(basis_vector(1, 3))
    out.append(CheckResult("cubic of e_1 = (3/2, 0, -1/2)",
                           float(np.max(np.abs(c - np.array([1.5, 0.0, -0.5])))), 1e-12))

    ws = GridWorkspace(16)
    u = _random_states(rng, n_states, 16)
    c = ws.galerkin_cubic(u)
    worst = 0.0
    for lam in (-1, 1):
        inner = np.sum(c * np.conj(u), axis=-1)
        worst = max(worst, float(np.max(np.abs((1j * lam * inner).real))))
    out.append(CheckResult("mass identity Re[i lam (c, u)]", worst, 1e-12))

    spectrum = make_spectrum(ModelParams(1.0, 0, 16))
    worst = 0.0
    for t in (0.0, 0.25, 1.0, 2.0):
        s = apply_semigroup(u, spectrum, t)
        lhs = np.linalg.norm(s, axis=-1)
        rhs = np.exp(-t) * np.linalg.norm(u, axis=-1)
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / rhs)))
    out.append(CheckResult("semigroup norm = exp(-alpha t) norm", worst, 1e-12))
    return out


def selftest(alpha: float = 1.0) -> tuple[bool, list[str]]:
    lines, ok = [], True
    for r in exactness_suite():
        ok &= r.passed
        lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value:.3e} (tol {r.tolerance:g})")
    rep = operator_check(alpha)
    d = rep.details
    for label, good, info in (
            ("truncation norm closed form", d["truncation_ok"],
             f"constant spread {max(d['truncation_constant_spread'].values()):.3f}"),
            ("scheme vs semigroup constant stable", d["scheme_ok"],
             f"spread {d['scheme_constant_spread']:.3f}"),
            ("H1 -> H1 gap constant <= 4", d["h1_ok"], f"C = {d['h1_constant']:.3f}")):
        ok &= bool(good)
        lines.append(f"{'PASS' if good else 'FAIL'}  {label}: {info}")
    return ok, lines
