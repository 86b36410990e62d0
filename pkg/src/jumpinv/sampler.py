"""Driving randomness for the schemes: per-annulus jump times, marks, and the Gaussian.

A NoiseRealization carries, for each annulus I_k up to K_max, the jump times
of a Poisson process of intensity mu(I_k) on (0, horizon] and i.i.d. marks
distributed as 1_{I_k} mu / mu(I_k), plus one standard Gaussian vector.  The
realization is truncation-agnostic: schemes retain or discard jumps at
consumption time, so one realization can drive coupled runs with different
truncation levels.

Streams are derived with counter-based splitting (Philox keyed through
SeedSequence spawn keys), so identical SeedSpecs reproduce bit-identical
noise on any machine and any thread count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import JumpModel, annulus_mass

__all__ = [
    "SeedSpec",
    "NoiseRealization",
    "derive_path_seed",
    "sample_noise",
    "dump_noise",
    "load_noise",
]

_STREAM_TIMES = 0x54494D45  # label constants keep streams disjoint
_STREAM_MARKS = 0x4D41524B
_STREAM_GAUSS = 0x47415553


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus path index; identical spec => bit-identical noise."""

    master: int
    path_id: int = 0

    def generator(self, label: int, annulus: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=self.master, spawn_key=(self.path_id, label, annulus)
        )
        return np.random.Generator(np.random.Philox(seq))


def derive_path_seed(master: int, path_id: int) -> SeedSpec:
    """Deterministic, collision-resistant per-path seed derivation."""
    if master < 0 or path_id < 0:
        raise ValueError("seeds and path ids are non-negative integers")
    return SeedSpec(master=int(master), path_id=int(path_id))


@dataclass
class NoiseRealization:
    """Jump times/marks per annulus and the Gaussian vector (immutable)."""

    d: int
    horizon: float
    K_max: int
    times: list  # times[k-1]: increasing (N_k,) array in (0, horizon]
    marks: list  # marks[k-1]: (N_k, d) array with k-1 < |z| <= k (<=1 for k=1)
    delta: np.ndarray  # (d,) standard normal
    seed: SeedSpec

    def n_jumps(self, k: int | None = None) -> int:
        if k is not None:
            return len(self.times[k - 1])
        return sum(len(t) for t in self.times)

    def merged(self, K: int | None = None):
        """All events of annuli <= K merged and sorted by time.

        Returns (times, annuli, within-annulus indices, marks); ties broken
        by annulus then within-annulus order, fixing a deterministic
        convention for the probability-zero event of equal times.
        """
        K = self.K_max if K is None else min(K, self.K_max)
        ts, ks, idxs, zs = [], [], [], []
        for k in range(1, K + 1):
            t = self.times[k - 1]
            if len(t):
                ts.append(t)
                ks.append(np.full(len(t), k, dtype=np.int64))
                idxs.append(np.arange(len(t), dtype=np.int64))
                zs.append(self.marks[k - 1])
        if not ts:
            return (
                np.empty(0),
                np.empty(0, dtype=np.int64),
                np.empty(0, dtype=np.int64),
                np.empty((0, self.d)),
            )
        t = np.concatenate(ts)
        k = np.concatenate(ks)
        i = np.concatenate(idxs)
        z = np.concatenate(zs)
        order = np.lexsort((i, k, t))
        return t[order], k[order], i[order], z[order]


def _annulus_h_sup(model: JumpModel, k: int) -> float:
    """sup of h over I_k, by radial grid scan with a 5% safety factor."""
    if getattr(model.h, "radial", False):
        lo = 0.0 if k == 1 else float(k - 1)
        r = np.linspace(lo, float(k), 513)
        vals = np.asarray(model.h.profile(r), dtype=float)
    else:
        rng = np.random.default_rng(k)
        zs = _uniform_annulus(rng, model.d, k, 4096)
        vals = np.array([float(np.asarray(model.h(z))) for z in zs])
    sup = float(np.max(vals))
    if not np.isfinite(sup):
        raise RuntimeError(f"sup of h over annulus {k} is not finite")
    return 1.05 * sup


def _uniform_annulus(rng: np.random.Generator, d: int, k: int, n: int) -> np.ndarray:
    """n points uniform (by volume) on I_k = {k-1 < |z| <= k} (I_1 = B_1)."""
    lo = 0.0 if k == 1 else float(k - 1)
    u = rng.random(n)
    radii = (lo**d + u * (float(k) ** d - lo**d)) ** (1.0 / d)
    if d == 1:
        signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return (radii * signs)[:, None]
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return radii[:, None] * dirs


def _sample_marks(model: JumpModel, k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n marks from 1_{I_k} mu / mu(I_k) by rejection from the uniform proposal."""
    if n == 0:
        return np.empty((0, model.d))
    if model.d == 1 and getattr(model, "radial_mark_ppf", None):
        r = model.radial_mark_ppf(k, rng.random(n))
        signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return (r * signs)[:, None]
    sup = _annulus_h_sup(model, k)
    out = np.empty((n, model.d))
    got = 0
    while got < n:
        batch = max(2 * (n - got), 16)
        zs = _uniform_annulus(rng, model.d, k, batch)
        if getattr(model.h, "radial", False):
            hv = np.asarray(model.h.profile(np.linalg.norm(zs, axis=1)), dtype=float)
        else:
            hv = np.array([float(np.asarray(model.h(z))) for z in zs])
        acc = rng.random(batch) < hv / sup
        take = zs[acc][: n - got]
        out[got : got + len(take)] = take
        got += len(take)
    return out


def sample_noise(
    model: JumpModel, horizon: float, K_max: int, seed: SeedSpec
) -> NoiseRealization:
    """Sample the driving noise up to annulus K_max on (0, horizon].

    Per annulus: a Poisson(horizon * mu(I_k)) jump count, i.i.d. uniform
    times (sorted), and marks from the normalized restriction of mu.  The
    Gaussian vector is sampled regardless of the horizon.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    masses = _annulus_masses(model, K_max)
    times, marks = [], []
    for k in range(1, K_max + 1):
        lam = horizon * masses[k - 1]
        rng_t = seed.generator(_STREAM_TIMES, k)
        if lam == 0.0:
            times.append(np.empty(0))
            marks.append(np.empty((0, model.d)))
            continue
        n_k = int(rng_t.poisson(lam))
        # (1 - U) maps [0,1) onto (0, horizon]
        t = np.sort((1.0 - rng_t.random(n_k)) * horizon)
        rng_m = seed.generator(_STREAM_MARKS, k)
        z = _sample_marks(model, k, n_k, rng_m)
        times.append(t)
        marks.append(z)
    delta = seed.generator(_STREAM_GAUSS).standard_normal(model.d)
    return NoiseRealization(
        d=model.d,
        horizon=float(horizon),
        K_max=K_max,
        times=times,
        marks=marks,
        delta=delta,
        seed=seed,
    )


def _annulus_masses(model: JumpModel, K: int) -> np.ndarray:
    cache = getattr(model, "_annulus_mass_cache", None)
    if cache is None or len(cache) < K:
        masses = list(cache) if cache is not None else []
        for k in range(len(masses) + 1, K + 1):
            masses.append(annulus_mass(model, k))
        cache = np.asarray(masses)
        model._annulus_mass_cache = cache
    return cache[:K]


# ---------------------------------------------------------------------------
# binary replay format (versioned, little-endian)
# ---------------------------------------------------------------------------
#
# header:  magic  b"JNR1"
#          u32    version (= 1)
#          u32    d
#          u32    K_max
#          f64    horizon
#          u64    master seed
#          u64    path id
#          f64*d  delta
# per annulus k = 1..K_max:
#          u64    N_k
#          f64*N_k        times (increasing)
#          f64*(N_k*d)    marks, row-major
# all integers and floats little-endian.

_MAGIC = b"JNR1"


def dump_noise(noise: NoiseRealization, path) -> None:
    """Write a NoiseRealization to the versioned little-endian replay format."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIId", 1, noise.d, noise.K_max, noise.horizon))
        f.write(struct.pack("<QQ", noise.seed.master, noise.seed.path_id))
        f.write(np.asarray(noise.delta, dtype="<f8").tobytes())
        for k in range(1, noise.K_max + 1):
            t = np.asarray(noise.times[k - 1], dtype="<f8")
            z = np.asarray(noise.marks[k - 1], dtype="<f8")
            f.write(struct.pack("<Q", len(t)))
            f.write(t.tobytes())
            f.write(z.tobytes())


def load_noise(path) -> NoiseRealization:
    """Read a NoiseRealization written by dump_noise."""
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a noise replay file")
        version, d, K, horizon = struct.unpack("<IIId", f.read(20))
        if version != 1:
            raise ValueError(f"{path}: unsupported replay version {version}")
        master, path_id = struct.unpack("<QQ", f.read(16))
        delta = np.frombuffer(f.read(8 * d), dtype="<f8").copy()
        times, marks = [], []
        for _ in range(K):
            (n_k,) = struct.unpack("<Q", f.read(8))
            t = np.frombuffer(f.read(8 * n_k), dtype="<f8").copy()
            z = np.frombuffer(f.read(8 * n_k * d), dtype="<f8").copy().reshape(n_k, d)
            times.append(t)
            marks.append(z)
    return NoiseRealization(
        d=d,
        horizon=horizon,
        K_max=K,
        times=times,
        marks=marks,
        delta=delta,
        seed=SeedSpec(master=master, path_id=path_id),
    )
