"""Decreasing step sequences, the cumulative time grid, and step-sequence checks.

The schemes in this package run on a grid ``Gamma_n = gamma_1 + ... + gamma_n``
built from a non-increasing positive step sequence ``gamma_n`` with divergent
sum.  Two numerical facts about such sequences are needed downstream and are
checked empirically here: a discrete-convolution bound
``u_n = sum_i gamma_i^(1+alpha) exp(-rho (Gamma_n - Gamma_i)) <= C gamma_n^alpha``
and the comparison ``gamma_i <= exp(2 w (Gamma_n - Gamma_i)) gamma_n`` that
holds past some index once the increment quotient settles below ``2 w``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StepSequence",
    "TimeGrid",
    "StepLemmaReport",
    "omega_bar",
    "check_step_lemma",
]

_KINDS = ("harmonic", "power", "explicit")


@dataclass(frozen=True)
class StepSequence:
    """Non-increasing positive step sequence gamma_n.

    kind:
        "harmonic"  gamma_n = s / n
        "power"     gamma_n = s / n**a  with a in (0, 1]
        "explicit"  gamma_n read from a finite list
    An optional cap clips every step at gamma_max (the clipped sequence is
    still non-increasing).
    """

    kind: str = "harmonic"
    scale: float = 1.0
    exponent: float = 1.0
    values: tuple[float, ...] = ()
    gamma_max: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}, expected one of {_KINDS}")
        if self.kind == "explicit":
            vals = tuple(float(v) for v in self.values)
            if not vals:
                raise ValueError("explicit step sequence needs at least one value")
            if any(v <= 0 for v in vals):
                raise ValueError("explicit steps must be positive")
            if any(b > a for a, b in zip(vals, vals[1:])):
                raise ValueError("explicit steps must be non-increasing")
            object.__setattr__(self, "values", vals)
        else:
            if self.scale <= 0:
                raise ValueError("step scale must be positive")
            if self.kind == "power" and not (0.0 < self.exponent <= 1.0):
                raise ValueError("power exponent must lie in (0, 1]")
        if self.gamma_max is not None and self.gamma_max <= 0:
            raise ValueError("gamma_max must be positive")

    @property
    def diverges(self) -> bool:
        """Whether sum(gamma_n) = inf, decided by kind (not numerically)."""
        return self.kind in ("harmonic", "power")

    def __len__(self) -> int:
        if self.kind == "explicit":
            return len(self.values)
        raise TypeError(f"{self.kind} sequence is unbounded")

    def gamma(self, n: int) -> float:
        """Return gamma_n for n >= 1."""
        if n < 1:
            raise ValueError(f"step index must be >= 1, got {n}")
        if self.kind == "explicit":
            if n > len(self.values):
                raise IndexError(
                    f"step index {n} exceeds explicit sequence of length {len(self.values)}"
                )
            g = self.values[n - 1]
        elif self.kind == "harmonic":
            g = self.scale / n
        else:
            g = self.scale / n ** self.exponent
        if self.gamma_max is not None:
            g = min(g, self.gamma_max)
        return g

    def gammas(self, n_max: int) -> np.ndarray:
        """Vector [gamma_1, ..., gamma_n_max]."""
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.kind == "explicit":
            if n_max > len(self.values):
                raise IndexError(
                    f"requested {n_max} steps from explicit sequence of length {len(self.values)}"
                )
            g = np.asarray(self.values[:n_max], dtype=float)
        else:
            n = np.arange(1, n_max + 1, dtype=float)
            if self.kind == "harmonic":
                g = self.scale / n
            else:
                g = self.scale / n ** self.exponent
        if self.gamma_max is not None:
            g = np.minimum(g, self.gamma_max)
        return g


class TimeGrid:
    """Cumulative times Gamma_0 = 0, Gamma_n = sum_{i<=n} gamma_i.

    Prefix sums are accumulated with compensated (Neumaier) summation so that
    locate() sees an exactly monotone grid even after millions of steps.  The
    cache extends lazily under a lock; instances are safe for concurrent reads.
    """

    def __init__(self, sequence: StepSequence, presize: int = 0):
        self.sequence = sequence
        self._lock = threading.Lock()
        self._gamma = [0.0]  # gamma_0 unused placeholder
        self._Gamma = [0.0]
        self._sum = 0.0  # raw running sum
        self._comp = 0.0  # Neumaier compensation term
        if presize > 0:
            self.extend_to(presize)

    @property
    def n_cached(self) -> int:
        return len(self._Gamma) - 1

    def extend_to(self, n: int) -> None:
        """Ensure Gamma_0..Gamma_n are cached (clamped for explicit sequences)."""
        if self.sequence.kind == "explicit":
            n = min(n, len(self.sequence))
        if n <= self.n_cached:
            return
        with self._lock:
            while self.n_cached < n:
                i = self.n_cached + 1
                g = self.sequence.gamma(i)
                if g <= 0:
                    raise ValueError(f"gamma_{i} = {g} is not positive")
                if len(self._gamma) > 1 and g > self._gamma[-1]:
                    raise ValueError(f"gamma_{i} = {g} increases over gamma_{i-1}")
                s = self._sum
                t = s + g
                if abs(s) >= abs(g):
                    self._comp += (s - t) + g
                else:
                    self._comp += (g - t) + s
                self._sum = t
                self._gamma.append(g)
                self._Gamma.append(t + self._comp)

    def gamma(self, n: int) -> float:
        self.extend_to(n)
        if n > self.n_cached:
            raise IndexError(f"step index {n} beyond end of explicit grid")
        return self._gamma[n]

    def Gamma(self, n: int) -> float:
        if n < 0:
            raise ValueError("grid index must be >= 0")
        self.extend_to(n)
        if n > self.n_cached:
            raise IndexError(f"grid index {n} beyond end of explicit grid")
        return self._Gamma[n]

    def Gammas(self, n: int) -> np.ndarray:
        """Array [Gamma_0, ..., Gamma_n]."""
        self.extend_to(n)
        if n > self.n_cached:
            raise IndexError(f"grid index {n} beyond end of explicit grid")
        return np.asarray(self._Gamma[: n + 1])

    def locate(self, t: float) -> tuple[int, float]:
        """Return (N(t), tau(t)) with Gamma_N <= t < Gamma_{N+1} (left-closed)."""
        if t < 0:
            raise ValueError(f"time must be non-negative, got {t}")
        # grow the cache until it brackets t
        while self._Gamma[-1] <= t:
            before = self.n_cached
            self.extend_to(before + max(64, before))
            if self.n_cached == before:  # explicit list exhausted
                raise IndexError(f"time {t} lies beyond the end of the explicit grid")
        i = int(np.searchsorted(self._Gamma, t, side="right")) - 1
        return i, self._Gamma[i]


@dataclass
class StepLemmaReport:
    """Empirical check of the two step-sequence inequalities."""

    rho: float
    alpha: float
    n_max: int
    omega_bar: float
    condition_ok: bool  # rho > alpha * omega_bar, as required by the bound
    u: np.ndarray = field(repr=False)  # u_n, n = 1..n_max
    ratio: np.ndarray = field(repr=False)  # u_n / gamma_n^alpha
    max_ratio: float = 0.0
    ratio_bounded: bool = False  # running max stable between decades
    running_max_mid: float = 0.0
    running_max_last: float = 0.0
    n_star: int | None = None  # smallest index past which the comparison holds
    comparison_ok: bool = False

    def summary(self) -> str:
        lines = [
            f"rho={self.rho} alpha={self.alpha} n_max={self.n_max}",
            f"omega_bar(window)={self.omega_bar:.6g} condition rho>alpha*omega_bar: "
            f"{'ok' if self.condition_ok else 'VIOLATED'}",
            f"max u_n/gamma_n^alpha = {self.max_ratio:.6g} "
            f"(running max mid-decade {self.running_max_mid:.6g}, "
            f"last decade {self.running_max_last:.6g}, "
            f"bounded: {'yes' if self.ratio_bounded else 'no'})",
            f"comparison index n_star = {self.n_star} "
            f"({'holds' if self.comparison_ok else 'fails'} up to n_max)",
        ]
        return "\n".join(lines)


def omega_bar(seq: StepSequence, n_from: int, n_to: int) -> float:
    """Windowed sup of (gamma_n - gamma_{n+1}) / gamma_{n+1}^2.

    Empirical stand-in for the limsup; use a tail window for the supported
    kinds (the quotient sequence converges for harmonic/power steps).
    """
    if n_from < 1 or n_to <= n_from:
        raise ValueError("need 1 <= n_from < n_to")
    g = seq.gammas(n_to + 1)
    gn, gn1 = g[n_from - 1 : n_to], g[n_from : n_to + 1]
    return float(np.max((gn - gn1) / gn1**2))


def check_step_lemma(
    seq: StepSequence, rho: float, alpha: float, n_max: int
) -> StepLemmaReport:
    """Evaluate both step-sequence inequalities up to n_max.

    (i)  u_n = sum_{i<=n} gamma_i^(1+alpha) exp(-rho (Gamma_n - Gamma_i)) and
         the ratio u_n / gamma_n^alpha, whose running max should stabilise
         when rho > alpha * omega_bar;
    (ii) the smallest n_star such that
         gamma_i <= exp(2 omega_bar (Gamma_n - Gamma_i)) gamma_n
         for every n_star <= i <= n <= n_max.

    Violations are reported, never raised.
    """
    if rho <= 0 or alpha <= 0:
        raise ValueError("rho and alpha must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    g = seq.gammas(n_max)

    # u_n satisfies u_{n+1} = u_n * exp(-rho*gamma_{n+1}) + gamma_{n+1}^(1+alpha)
    u = np.empty(n_max)
    u[0] = g[0] ** (1.0 + alpha)
    for n in range(1, n_max):
        u[n] = u[n - 1] * math.exp(-rho * g[n]) + g[n] ** (1.0 + alpha)
    ratio = u / g**alpha

    w_from = max(1, n_max // 10)
    w = omega_bar(seq, w_from, n_max - 1) if n_max > w_from + 1 else 0.0

    run_max = np.maximum.accumulate(ratio)
    mid_idx = max(0, n_max // 10 - 1)
    running_max_mid = float(run_max[mid_idx])
    running_max_last = float(run_max[-1])
    bounded = running_max_last <= 1.05 * running_max_mid if n_max >= 20 else True

    # comparison (ii): gamma_i <= exp(2w(Gamma_n - Gamma_i)) gamma_n for all
    # pairs i <= n past n_star, equivalent to log(gamma_n) + 2w*Gamma_n being
    # non-decreasing from n_star on.
    Gamma = np.cumsum(g)
    v = np.log(g) + 2.0 * w * Gamma
    bad = np.nonzero(v[1:] < v[:-1])[0]  # v decreases between bad and bad+1
    n_star = int(bad[-1] + 2) if bad.size else 1  # 1-based index
    comparison_ok = n_star <= n_max

    return StepLemmaReport(
        rho=rho,
        alpha=alpha,
        n_max=n_max,
        omega_bar=w,
        condition_ok=rho > alpha * w,
        u=u,
        ratio=ratio,
        max_ratio=float(ratio.max()),
        ratio_bounded=bool(bounded),
        running_max_mid=running_max_mid,
        running_max_last=running_max_last,
        n_star=n_star,
        comparison_ok=comparison_ok,
    )
