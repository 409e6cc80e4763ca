"""Karhunen-Loeve noise spectra and reproducible complex Wiener increments.

Increments come from a counter-based generator (Philox4x32-10) keyed by
``(master_seed, replica)`` with counters built from ``(interval, layer, mode,
purpose)``. Nothing is stateful apart from a cursor, so replicas, modes and
time levels can be generated in any order and still agree bit for bit.

Time levels form a dyadic hierarchy below a base step ``base_dt``: level-0
increments are drawn directly, and each finer layer splits every interval by
a Brownian bridge, so pairs of level-``L+1`` increments sum back to the
level-``L`` increment.

Convention: each of the real and imaginary parts of ``beta_m`` is a standard
real Brownian motion, hence ``E|delta beta_m|^2 = 2 tau``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)

# Counter word 3 separates independent uses of the same key.
PURPOSE_WIENER = 0
PURPOSE_PROBE = 1


def philox4x32(counter, key, rounds: int = 10):
    """Vectorised Philox4x32 block function.

    ``counter`` is a sequence of four integer arrays (broadcastable) and
    ``key`` a sequence of two. Returns four ``uint64`` arrays holding 32-bit
    words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK32 for k in key)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    for r in range(rounds):
        if r:
            k0 = (k0 + _PHILOX_W0) & _MASK32
            k1 = (k1 + _PHILOX_W1) & _MASK32
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> np.uint64(32)) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def _unit_interval(hi, lo):
    # 53-bit uniform in the open interval (0, 1).
    bits = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def complex_normals(key, interval, layer, mode, purpose=PURPOSE_WIENER):
    """Standard complex normals ``xi = xi1 + i xi2`` (each part N(0, 1)).

    One Philox block per ``(key, interval, layer, mode, purpose)``; the two
    halves feed a Box-Muller transform.
    """
    interval = np.asarray(interval, dtype=np.uint64)
    c1 = (interval >> np.uint64(32)) | (np.asarray(layer, dtype=np.uint64) << np.uint64(16))
    x0, x1, x2, x3 = philox4x32((interval, c1, mode, purpose), key)
    u1 = _unit_interval(x0, x1)
    u2 = _unit_interval(x2, x3)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    return radius * np.cos(angle) + 1j * radius * np.sin(angle)


def replica_key(master_seed: int, replica) -> np.ndarray:
    """Two 32-bit key words per replica, hashed from the seed and index."""
    replicas = np.atleast_1d(np.asarray(replica, dtype=np.int64))
    seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
    words = np.empty((replicas.size, 2), dtype=np.uint64)
    for i, r in enumerate(replicas):
        ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, int(r)])
        words[i] = ss.generate_state(2, dtype=np.uint32)
    return words


@dataclass(frozen=True)
class NoiseSpectrum:
    """Per-mode variance rates ``eta_m`` of ``Q^{1/2} dW``."""

    eta: np.ndarray
    kind: str = "custom"
    p: float | None = None
    scale: float = 1.0
    hs2_converges: bool = True

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        if eta.ndim != 1 or np.any(eta < 0) or not np.all(np.isfinite(eta)):
            raise ValueError("eta must be a finite, nonnegative vector")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @property
    def n_modes(self) -> int:
        return self.eta.shape[0]

    @property
    def trace(self) -> float:
        return float(np.sum(self.eta))

    def hs_norm(self, s: int, abs_lambda=None) -> float:
        """``||Q^{1/2}||_{HS(L^2, H^s)}`` restricted to the represented modes."""
        if s == 0:
            return float(np.sqrt(self.trace))
        if abs_lambda is None:
            raise ValueError("abs_lambda required for s > 0")
        return float(np.sqrt(np.sum(np.asarray(abs_lambda) ** s * self.eta)))

    def truncate(self, n_modes: int) -> "NoiseSpectrum":
        return NoiseSpectrum(self.eta[:n_modes], self.kind, self.p, self.scale, self.hs2_converges)


def make_power_spectrum(n_modes: int, p: float, scale: float = 1.0) -> NoiseSpectrum:
    """``eta_m = scale * m^{-p}``.

    The HS(L^2, H^2) norm involves ``sum m^4 eta_m``, so the untruncated tail
    converges only for ``p > 5``; otherwise a warning is issued and
    ``hs2_converges`` is False.
    """
    if p < 0:
        raise ValueError("p must be nonnegative")
    if scale <= 0:
        raise ValueError("scale must be positive")
    m = np.arange(1, n_modes + 1, dtype=float)
    converges = p > 5
    if not converges:
        warnings.warn(
            f"eta_m = m^-{p}: HS(L^2, H^2) norm diverges as N grows (needs p > 5)",
            stacklevel=2,
        )
    return NoiseSpectrum(scale * m**-p, kind="power", p=float(p), scale=float(scale),
                         hs2_converges=converges)


class LevelMismatch(ValueError):
    """Time step does not match the stream's level spacing."""


@dataclass
class NoiseStream:
    """Reproducible Wiener increments for one replica or a batch of replicas.

    ``tau = base_dt / 2**level``. ``cursor`` counts level-``level`` steps
    already consumed. ``replica_index`` may be an int or a 1-D sequence; a
    sequence adds a leading replica axis to every block.
    """

    master_seed: int
    replica_index: int | tuple = 0
    level: int = 0
    base_dt: float = 1.0
    cursor: int = 0
    purpose: int = PURPOSE_WIENER
    _keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.replica_index, (list, np.ndarray, range)):
            self.replica_index = tuple(int(r) for r in self.replica_index)
        if self.level < 0:
            raise ValueError("level must be nonnegative")
        self._keys = replica_key(self.master_seed, self.replica_index)

    @property
    def batched(self) -> bool:
        return isinstance(self.replica_index, tuple)

    @property
    def tau(self) -> float:
        return self.base_dt / 2**self.level

    def sibling(self, replica_index) -> "NoiseStream":
        return NoiseStream(self.master_seed, replica_index, self.level, self.base_dt,
                           self.cursor, self.purpose)

    def standard_increments(self, start: int, stop: int, n_modes: int) -> np.ndarray:
        """Unit-rate complex Brownian increments for steps ``[start, stop)``.

        Shape ``(stop - start, R, n_modes)``; the replica axis is dropped for
        a scalar stream. Does not move the cursor.
        """
        L = self.level
        j0, j1 = start >> L, ((stop - 1) >> L) + 1
        keys = (self._keys[:, 0][None, :, None], self._keys[:, 1][None, :, None])
        modes = np.arange(1, n_modes + 1, dtype=np.uint64)[None, None, :]
        idx = np.arange(j0, j1, dtype=np.uint64)[:, None, None]
        z = np.sqrt(self.base_dt) * complex_normals(keys, idx, 0, modes, self.purpose)
        dt = self.base_dt
        for layer in range(1, L + 1):
            parents = np.arange(j0 << (layer - 1), j1 << (layer - 1), dtype=np.uint64)
            xi = complex_normals(keys, parents[:, None, None], layer, modes, self.purpose)
            half = 0.5 * z
            spread = 0.5 * np.sqrt(dt) * xi
            fine = np.empty((2 * z.shape[0],) + z.shape[1:], dtype=complex)
            fine[0::2] = half + spread
            fine[1::2] = half - spread
            z = fine
            dt *= 0.5
        offset = start - (j0 << L)
        out = z[offset: offset + (stop - start)]
        if not self.batched:
            out = out[:, 0, :]
        return out

    def next_block(self, spectrum: NoiseSpectrum, n_steps: int, tau: float | None = None):
        """``n_steps`` noise increments ``sqrt(eta_m) dbeta_m``; advances the cursor."""
        if tau is not None:
            self.check_tau(tau)
        if n_steps == 0:
            shape = (0,) + ((len(self.replica_index),) if self.batched else ()) + (spectrum.n_modes,)
            return np.zeros(shape, dtype=complex)
        z = self.standard_increments(self.cursor, self.cursor + n_steps, spectrum.n_modes)
        self.cursor += n_steps
        return np.sqrt(spectrum.eta) * z

    def check_tau(self, tau: float):
        if not np.isclose(tau, self.tau, rtol=1e-12, atol=0.0):
            raise LevelMismatch(
                f"tau={tau} does not match stream level {self.level} spacing {self.tau}"
            )


def sample_increment(stream: NoiseStream, spectrum: NoiseSpectrum, tau: float) -> np.ndarray:
    """One increment ``pi_N Q^{1/2} delta W_k``; advances the cursor by one."""
    return stream.next_block(spectrum, 1, tau)[0]


def refine_stream(stream: NoiseStream) -> NoiseStream:
    """Stream at half the step whose pairwise sums reproduce ``stream``."""
    return NoiseStream(stream.master_seed, stream.replica_index, stream.level + 1,
                       stream.base_dt, 2 * stream.cursor, stream.purpose)
