"""Run configuration: TOML files, presets and command-line overrides."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import tomli
import tomli_w

from .experiments import STUDY_KINDS, StudySpec
from .integrator import StepConfig
from .noise import NoiseSpectrum, make_power_spectrum
from .spectral import ConfigurationError, ModelParams


@dataclass(frozen=True)
class ModelSection:
    alpha: float = 1.0
    lam: int = -1
    n_modes: int = 32


@dataclass(frozen=True)
class NoiseSection:
    kind: str = "power"
    p: float = 8.0
    scale: float = 1.0
    etas: tuple = ()


@dataclass(frozen=True)
class StepSection:
    tau: float = 2.0**-7
    fp_tol: float = 1e-12
    fp_max_iters: int = 200


@dataclass(frozen=True)
class StudySection:
    kind: str = "ergodicity"
    resolutions: tuple = ()
    reference: float | None = None
    n_replicas: int = 64
    t_final: float = 1.0
    n_steps: int = 1000
    burn_in: int = 0
    burn_in_time: float = 0.0
    initial_conditions: tuple = ((), (2.0, 1.0))
    phi: str = "exp_neg_mass"
    method: str = "monte_carlo"
    chunk: int = 64
    spatial_solver: str = "exponential_euler"
    c0: float = 2.0
    record_every: int = 1


@dataclass(frozen=True)
class IOSection:
    out: str = "results"
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    step: StepSection = field(default_factory=StepSection)
    study: StudySection = field(default_factory=StudySection)
    io: IOSection = field(default_factory=IOSection)
    seed: int = 0

    def validate(self) -> "RunConfig":
        m, s, st = self.model, self.step, self.study
        ModelParams(m.alpha, m.lam, m.n_modes)
        StepConfig(s.tau, s.fp_tol, s.fp_max_iters).validate(m.alpha)
        if self.noise.kind not in ("power", "explicit"):
            raise ConfigurationError(f"noise.kind must be 'power' or 'explicit', got {self.noise.kind!r}")
        if self.noise.kind == "explicit" and not self.noise.etas:
            raise ConfigurationError("noise.kind = 'explicit' needs noise.etas")
        if any(not (e >= 0 and math.isfinite(e)) for e in self.noise.etas):
            raise ConfigurationError("noise.etas must be finite and nonnegative")
        if st.kind not in STUDY_KINDS:
            raise ConfigurationError(f"unknown study kind {st.kind!r}")
        if st.kind not in ("ergodicity", "operator_check") and not st.resolutions:
            raise ConfigurationError("study.resolutions must not be empty")
        if st.record_every < 1:
            raise ConfigurationError("study.record_every must be >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError("seed must be a nonnegative integer")
        return self

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.model.alpha, self.model.lam, self.model.n_modes)

    @property
    def step_config(self) -> StepConfig:
        s = self.step
        return StepConfig(s.tau, s.fp_tol, s.fp_max_iters)

    def noise_spectrum(self, n_modes: int | None = None) -> NoiseSpectrum:
        n = self.model.n_modes if n_modes is None else n_modes
        if self.noise.kind == "explicit":
            if len(self.noise.etas) < n:
                raise ConfigurationError(f"noise.etas lists {len(self.noise.etas)} modes, need {n}")
            return NoiseSpectrum(self.noise.etas[:n], kind="explicit")
        return make_power_spectrum(n, self.noise.p, self.noise.scale)

    def study_spec(self) -> StudySpec:
        st, m = self.study, self.model
        return StudySpec(
            kind=st.kind, alpha=m.alpha, lam=m.lam, n_modes=m.n_modes, tau=self.step.tau,
            noise_p=self.noise.p, noise_scale=self.noise.scale, noise_etas=self.noise.etas
            if self.noise.kind == "explicit" else (),
            resolutions=st.resolutions, reference=st.reference, n_replicas=st.n_replicas,
            t_final=st.t_final, n_steps=st.n_steps, burn_in=st.burn_in,
            burn_in_time=st.burn_in_time, seed=self.seed,
            initial_conditions=st.initial_conditions, phi=st.phi, method=st.method,
            fp_tol=self.step.fp_tol, fp_max_iters=self.step.fp_max_iters, chunk=st.chunk,
            spatial_solver=st.spatial_solver, c0=st.c0)


_SECTIONS = {"model": ModelSection, "noise": NoiseSection, "step": StepSection,
             "study": StudySection, "io": IOSection}
# TOML spells the nonlinearity sign "lambda".
_RENAME = {("model", "lambda"): "lam"}
_RENAME_OUT = {("model", "lam"): "lambda"}


def _tuplify(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tuplify(v) for v in value)
    return value


def _coerce(cls, name, value):
    default = next(f for f in fields(cls) if f.name == name).default
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, int) and isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, list):
        return _tuplify(value)
    return value


def config_from_dict(data: dict) -> RunConfig:
    """Build and validate a config from nested dicts; unknown keys are errors."""
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            kwargs["seed"] = value
            continue
        if key not in _SECTIONS:
            raise ConfigurationError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigurationError(f"section {key!r} must be a table")
        cls = _SECTIONS[key]
        names = {f.name for f in fields(cls)}
        section = {}
        for k, v in value.items():
            name = _RENAME.get((key, k), k)
            if name not in names:
                raise ConfigurationError(f"unknown key {key}.{k}")
            section[name] = _coerce(cls, name, v)
        try:
            kwargs[key] = cls(**section)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
    return RunConfig(**kwargs).validate()


def config_to_dict(cfg: RunConfig) -> dict:
    """Nested plain dict (lists, no None) suitable for TOML and JSON."""
    out = {"seed": cfg.seed}
    for key in _SECTIONS:
        section = {}
        for name, value in asdict(getattr(cfg, key)).items():
            if value is None:
                continue
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            section[_RENAME_OUT.get((key, name), name)] = value
        out[key] = section
    return out


def loads_config(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML: {exc}") from exc
    return config_from_dict(data)


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def load_config(path) -> dict:
    """Raw nested dict from a TOML file (validated later, after merging)."""
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML in {path}: {exc}") from exc


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins."""
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Replace individual dotted settings, e.g. ``with_overrides(cfg, **{"step.tau": 0.01})``."""
    sections = {}
    top = {}
    for dotted, value in changes.items():
        if "." in dotted:
            sec, name = dotted.split(".", 1)
            sections.setdefault(sec, {})[name] = value
        else:
            top[dotted] = value
    new = {k: replace(getattr(cfg, k), **v) for k, v in sections.items()}
    return replace(cfg, **new, **top).validate()
