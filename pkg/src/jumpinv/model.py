"""Jump-SDE model specification, truncation rule, and hypothesis predicates.

A model is the data of the equation
``dX_t = b(X_t) dt + integral c(z, X_{t-}) N(dz, dt)`` where ``N`` has
intensity ``mu(dz) dt = h(z) dz dt``, together with the envelope ``cbar``
dominating ``|c|`` and its derivatives, the ellipticity floor ``cunder``
with ``sum_j <d_{z_j} c, zeta>^2 >= cunder(z) |zeta|^2``, and the drift
dissipativity constant ``bbar``.

The truncation machinery lives here as well: the tail functional
``eps_m = int_{|z|>m} cbar^2 dmu + (int_{|z|>m} cbar dmu)^2``, the level
``M(gamma) = min{m : eps_m <= gamma^2}`` discarding jumps bigger than ``m``,
the per-annulus masses ``mu(I_k)`` (``I_1 = B_1``, ``I_k = B_k \\ B_{k-1}``),
and the magnitude ``a_t`` of the Gaussian compensator that replaces the
discarded jumps in the auxiliary equation.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .steps import TimeGrid

__all__ = [
    "IntegrabilityError",
    "RadialFn",
    "JumpModel",
    "TailTable",
    "HypothesisReport",
    "epsilon_m",
    "truncation_level",
    "theta",
    "check_hyp24a",
    "annulus_mass",
    "gaussian_compensator",
    "check_hypotheses",
    "make_preset",
    "PRESETS",
]


class IntegrabilityError(RuntimeError):
    """A tail integral failed to converge (non-integrable or quadrature failure)."""


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2, 2*pi, 4*pi, ...)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


class RadialFn:
    """Radial function z -> profile(|z|) with a vectorized profile.

    Declaring envelopes and densities radial unlocks the 1-D quadrature fast
    path; ``breakpoints`` lists radii where the profile is not smooth (shell
    windows, support edges) so quadrature can split there.
    """

    radial = True

    def __init__(self, profile: Callable[[np.ndarray], np.ndarray], breakpoints=()):
        self.profile = profile
        self.breakpoints = tuple(breakpoints)

    def __call__(self, z):
        """Evaluate at a single point z (scalar or length-d vector).

        Vectorized evaluation goes through .profile(r) on radius arrays.
        """
        z = np.asarray(z, dtype=float)
        r = np.abs(z) if z.ndim == 0 else float(np.linalg.norm(z.reshape(-1)))
        return self.profile(r)


def _shell_window(r):
    """Indicator of the shells ||z| - (k - 1/2)| <= 1/4, k = 1, 2, ..."""
    r = np.asarray(r, dtype=float)
    frac = r - (np.round(r + 0.5) - 0.5)  # offset from the nearest half-integer
    return ((np.abs(frac) <= 0.25) & (r >= 0.25)).astype(float)


def _segment_quad(f, a, b):
    val, err = integrate.quad(f, a, b, epsabs=1e-300, epsrel=1e-12, limit=200)
    return val, err


def _march_segment(g, a, b):
    """Quadrature over [a, b] split at quarter-integer radii (shell edges)."""
    edges = np.arange(math.ceil(a * 4) / 4.0, b, 0.25)
    sub = sorted({a, b, *edges[(edges > a) & (edges < b)]})
    total, err = 0.0, 0.0
    for aa, bb in zip(sub[:-1], sub[1:]):
        if bb <= aa:
            continue
        v, e = _segment_quad(g, aa, bb)
        total += v
        err += e
    return total, err


def _radial_integral(profile, h_profile, d, lo, hi, tol=1e-10, breaks=()):
    """integral over {lo < |z| < hi} of profile(|z|) h(|z|) dz, radial case.

    The breakpoint region is integrated in quarter-unit segments (shell
    windows are discontinuous at quarter-integer radii).  Beyond it, smooth
    integrands get a single quadrature to infinity; windowed ones keep
    marching until the segments fall below 1e-11 of the running total.
    Relative accuracy ~1e-10 so that squared-threshold comparisons survive.
    """
    area = sphere_area(d)

    def g(r):
        return profile(r) * h_profile(r) * r ** (d - 1)

    if math.isfinite(hi):
        if hi <= lo:
            return 0.0, 0.0
        v, e = _march_segment(g, lo, hi)
        return area * v, area * e

    later_breaks = [p for p in breaks if p > lo]
    windowed = len(later_breaks) > 8
    if not windowed:
        b_cut = max(lo + 4.0, (max(later_breaks) + 1.0) if later_breaks else lo)
        v1, e1 = _march_segment(g, lo, b_cut)
        import warnings as _warnings

        with _warnings.catch_warnings():
            _warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                v2, e2 = integrate.quad(
                    g, b_cut, np.inf, epsabs=1e-300, epsrel=1e-11, limit=200
                )
            except integrate.IntegrationWarning as exc:
                raise IntegrabilityError(
                    f"radial tail integral from {lo} failed to converge: {exc}"
                ) from None
        val = area * (v1 + v2)
        if not math.isfinite(val) or (abs(e2) > 1e-3 * max(abs(v2), 1e-30)):
            raise IntegrabilityError(f"radial tail integral from {lo} diverges")
        return val, area * (e1 + abs(e2))

    # shell-windowed integrand: march with a relative stopping rule
    total, err_total = 0.0, 0.0
    a = lo
    for _ in range(20_000):
        b = math.floor(a) + 1.0 if math.floor(a) + 1.0 > a else a + 1.0
        seg, e = _march_segment(g, a, b)
        total += seg
        err_total += e
        a = b
        if a > lo + 4.0:
            if total == 0.0 and a > lo + 8.0:
                return 0.0, 0.0
            if abs(seg) <= max(1e-300, 1e-11 * abs(total)):
                return area * total, area * err_total
    raise IntegrabilityError(
        f"radial tail integral from {lo} did not converge after 20000 segments "
        f"(last segment {seg:.3g}, total {total:.3g})"
    )


def _general_tail_integral(fn, h, d, m, tol=1e-8, n_mc=2**16, seed=7):
    """integral over {|z| > m} of fn(z) h(z) dz for non-radial data.

    d = 1: two half-line quadratures; d = 2, 3: spherical nquad; d > 3:
    quasi-MC over expanding shells with a reported standard error.
    """
    if d == 1:

        def g(z):
            return fn(np.array([z])) * h(np.array([z]))

        v1, e1 = integrate.quad(lambda z: float(g(z)), m, np.inf, epsabs=tol, limit=200)
        v2, e2 = integrate.quad(lambda z: float(g(-z)), m, np.inf, epsabs=tol, limit=200)
        return v1 + v2, e1 + e2
    if d == 2:

        def g(r, th):
            z = np.array([r * math.cos(th), r * math.sin(th)])
            return float(fn(z) * h(z)) * r

        v, e = integrate.nquad(g, [[m, np.inf], [0, 2 * math.pi]],
                               opts={"epsabs": tol, "limit": 100})
        return v, e
    if d == 3:

        def g(r, th, ph):
            z = np.array(
                [
                    r * math.sin(th) * math.cos(ph),
                    r * math.sin(th) * math.sin(ph),
                    r * math.cos(th),
                ]
            )
            return float(fn(z) * h(z)) * r * r * math.sin(th)

        v, e = integrate.nquad(
            g, [[m, np.inf], [0, math.pi], [0, 2 * math.pi]],
            opts={"epsabs": tol, "limit": 60},
        )
        return v, e
    # d > 3: quasi-MC on shells [m + j, m + j + 1] in radius, importance by volume
    rng_eng = qmc.Sobol(d, scramble=True, seed=seed)
    total, var_total = 0.0, 0.0
    for j in range(200):
        lo, hi = m + j, m + j + 1
        u = rng_eng.random(n_mc)
        radii = (lo**d + u[:, 0] * (hi**d - lo**d)) ** (1.0 / d)
        dirs = np.random.default_rng(seed + j).standard_normal((n_mc, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        zs = radii[:, None] * dirs
        vol = sphere_area(d) / d * (hi**d - lo**d)
        vals = np.array([float(fn(z) * h(z)) for z in zs]) * vol
        total += vals.mean()
        var_total += vals.var() / n_mc
        if vals.mean() < tol and j > 2:
            break
    return total, math.sqrt(var_total)


@dataclass
class SeparableJump:
    """Vectorization contract c(z, x) = g(z) * sigma(x) for d = 1 models.

    Lets ensemble engines aggregate whole intervals of jumps at once; sigma
    is identically 1 for additive models.
    """

    g: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray] | None = None
    additive: bool = False
    linear_drift: float | None = None  # bbar when drift is exactly -bbar*x


@dataclass
class JumpModel:
    """Coefficients and envelopes of a jump SDE (see module docstring)."""

    d: int
    drift: Callable
    jump: Callable  # c(z, x) -> R^d
    cbar: Callable  # envelope, RadialFn preferred
    cunder: Callable  # ellipticity floor, RadialFn preferred
    h: Callable  # Levy density, RadialFn preferred
    bbar: float
    drift_jac: Callable | None = None  # x -> (d, d)
    jump_jac_z: Callable | None = None  # (z, x) -> (d, d), [i, j] = d c_i / d z_j
    jump_jac_x: Callable | None = None  # (z, x) -> (d, d), [i, j] = d c_i / d x_j
    cbar_lip: Callable | None = None  # Lipschitz-in-x envelope; defaults to cbar
    separable: SeparableJump | None = None
    drift_vec: Callable | None = None  # vectorized drift for (n,) states, d = 1
    radial_mark_ppf: Callable | None = None  # (k, u) -> radius, exact mark sampling
    name: str = "custom"
    params: dict = field(default_factory=dict)
    quad_tol: float = 1e-10

    def __post_init__(self):
        if self.cbar_lip is None:
            self.cbar_lip = self.cbar

    # -- derivative fallbacks (finite differences), used when callables absent

    def jac_drift(self, x: np.ndarray) -> np.ndarray:
        if self.drift_jac is not None:
            return np.atleast_2d(np.asarray(self.drift_jac(x), dtype=float))
        return _fd_jac(lambda v: self.drift(v), x)

    def jac_jump_z(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.jump_jac_z is not None:
            return np.atleast_2d(np.asarray(self.jump_jac_z(z, x), dtype=float))
        return _fd_jac(lambda v: self.jump(v, x), z)

    def jac_jump_x(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.jump_jac_x is not None:
            return np.atleast_2d(np.asarray(self.jump_jac_x(z, x), dtype=float))
        return _fd_jac(lambda v: self.jump(z, v), x)

    @property
    def all_radial(self) -> bool:
        return all(getattr(f, "radial", False) for f in (self.cbar, self.cunder, self.h))

    def tail_table(self) -> "TailTable":
        tab = getattr(self, "_tail_table", None)
        if tab is None:
            tab = TailTable(self)
            self._tail_table = tab
        return tab


def _fd_jac(f, v, eps=1e-6):
    v = np.asarray(v, dtype=float)
    f0 = np.asarray(f(v), dtype=float)
    J = np.empty((f0.size, v.size))
    for j in range(v.size):
        vp = v.copy()
        vp[j] += eps
        vm = v.copy()
        vm[j] -= eps
        J[:, j] = (np.asarray(f(vp)) - np.asarray(f(vm))) / (2 * eps)
    return J


# ---------------------------------------------------------------------------
# tail integrals and the truncation rule
# ---------------------------------------------------------------------------


def _tail(model: JumpModel, fn, m: float, power: int = 1) -> float:
    """integral over {|z| > m} of fn(z)^power dmu."""
    if getattr(fn, "radial", False) and getattr(model.h, "radial", False):
        prof = fn.profile
        hprof = model.h.profile
        breaks = set(fn.breakpoints) | set(model.h.breakpoints)
        val, _ = _radial_integral(
            lambda r: prof(r) ** power, hprof, model.d, m, math.inf,
            tol=model.quad_tol, breaks=breaks,
        )
        return val
    val, err = _general_tail_integral(
        lambda z: float(np.asarray(fn(z))) ** power, model.h, model.d, m,
        tol=max(model.quad_tol, 1e-8),
    )
    if not math.isfinite(val):
        raise IntegrabilityError(f"tail integral beyond |z|>{m} diverges")
    return val


def epsilon_m(model: JumpModel, m: int) -> float:
    """Tail functional eps_m = int_{|z|>m} cbar^2 dmu + (int_{|z|>m} cbar dmu)^2."""
    if m < 1:
        raise ValueError("truncation index m must be >= 1")
    sq = _tail(model, model.cbar, float(m), power=2)
    lin = _tail(model, model.cbar, float(m), power=1)
    return sq + lin * lin


class TailTable:
    """Cached map m -> eps_m with monotone extension and M(gamma) lookup."""

    M_CAP = 100_000

    def __init__(self, model: JumpModel):
        self.model = model
        self._eps: list[float] = []  # eps_1 at index 0
        self._cunder_tail: dict[int, float] = {}
        self._lock = threading.Lock()

    def epsilon(self, m: int) -> float:
        if m < 1:
            raise ValueError("m must be >= 1")
        with self._lock:
            while len(self._eps) < m:
                self._eps.append(epsilon_m(self.model, len(self._eps) + 1))
        return self._eps[m - 1]

    def truncation_level(self, gamma: float) -> int:
        """M(gamma): smallest integer m with eps_m <= gamma^2."""
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        g2 = gamma * gamma
        m = 1
        while True:
            if self.epsilon(m) <= g2:
                return m
            m = m + 1 if m < 16 else min(m * 2, self.M_CAP)
            if m >= self.M_CAP:
                raise IntegrabilityError(
                    f"tail table exhausted before eps_m <= {g2:.3g} "
                    f"(eps_{len(self._eps)} = {self._eps[-1]:.3g}); "
                    "needs extension or the tail is too heavy"
                )

    def _scan_down(self, m_hi: int, g2: float) -> int:
        m = m_hi
        while m > 1 and self.epsilon(m - 1) <= g2:
            m -= 1
        return m

    def level(self, gamma: float) -> int:
        """Exact minimal level (binary refinement of the doubling search)."""
        return self._scan_down(self.truncation_level(gamma), gamma * gamma)

    def cunder_tail(self, m: int) -> float:
        """integral over {|z| >= m} of cunder dmu (cached)."""
        if m not in self._cunder_tail:
            with self._lock:
                if m not in self._cunder_tail:
                    self._cunder_tail[m] = _tail(self.model, self.model.cunder, float(m))
        return self._cunder_tail[m]


def truncation_level(table: TailTable, gamma: float) -> int:
    """M(gamma) = min{m : eps_m <= gamma^2}."""
    return table.level(gamma)


def theta(model: JumpModel) -> float:
    """Dissipativity margin 2*bbar - int (2 cbar + cbar^2) dmu (may be <= 0)."""
    lin = _tail(model, model.cbar, 0.0, power=1)
    sq = _tail(model, model.cbar, 0.0, power=2)
    if not (math.isfinite(lin) and math.isfinite(sq)):
        raise IntegrabilityError("int (2 cbar + cbar^2) dmu diverges")
    return 2.0 * model.bbar - (2.0 * lin + sq)


def theta_contraction(model: JumpModel) -> float:
    """Same margin computed with the Lipschitz-in-x envelope.

    For additive jumps the Lipschitz envelope vanishes and the synchronous
    coupling contracts at the full drift rate 2*bbar; this is the rate that
    governs how fast the chain forgets its initial condition.
    """
    lin = _tail(model, model.cbar_lip, 0.0, power=1)
    sq = _tail(model, model.cbar_lip, 0.0, power=2)
    return 2.0 * model.bbar - (2.0 * lin + sq)


def annulus_mass(model: JumpModel, k: int) -> float:
    """mu(I_k) with I_1 = B_1 and I_k = B_k \\ B_{k-1}."""
    if k < 1:
        raise ValueError("annulus index must be >= 1")
    lo = 0.0 if k == 1 else float(k - 1)
    hi = float(k)
    if getattr(model.h, "radial", False):
        val, _ = _radial_integral(
            lambda r: np.ones_like(r), model.h.profile, model.d, lo, hi,
            tol=model.quad_tol, breaks=model.h.breakpoints,
        )
        return val
    d, h = model.d, model.h
    if d == 1:
        v1, _ = integrate.quad(lambda z: float(h(np.array([z]))), lo, hi, limit=200)
        v2, _ = integrate.quad(lambda z: float(h(np.array([-z]))), lo, hi, limit=200)
        return v1 + v2
    if d == 2:
        v, _ = integrate.nquad(
            lambda r, th: float(h(np.array([r * math.cos(th), r * math.sin(th)]))) * r,
            [[lo, hi], [0, 2 * math.pi]],
        )
        return v
    if d == 3:
        v, _ = integrate.nquad(
            lambda r, th, ph: float(
                h(np.array([
                    r * math.sin(th) * math.cos(ph),
                    r * math.sin(th) * math.sin(ph),
                    r * math.cos(th),
                ]))
            ) * r * r * math.sin(th),
            [[lo, hi], [0, math.pi], [0, 2 * math.pi]],
        )
        return v
    raise NotImplementedError("non-radial annulus mass for d > 3")


def gaussian_compensator(
    model: JumpModel, grid: TimeGrid, table: TailTable, t: float
) -> float:
    """Magnitude a_t of the Gaussian replacing the discarded jumps.

    For Gamma_n < t <= Gamma_{n+1}:
    a_t^2 = sum_{i<=n} gamma_i * q(M(gamma_i)) + (t - Gamma_n) * q(M(gamma_{n+1}))
    with q(m) = int_{|z| >= m} cunder dmu.
    """
    if t <= 0:
        if t == 0:
            return 0.0
        raise ValueError("t must be positive")
    N, tau = grid.locate(t)
    n = N - 1 if (tau == t and N >= 1) else N
    acc = 0.0
    for i in range(1, n + 1):
        gi = grid.gamma(i)
        acc += gi * table.cunder_tail(table.level(gi))
    g_next = grid.gamma(n + 1)
    acc += (t - grid.Gamma(n)) * table.cunder_tail(table.level(g_next))
    return math.sqrt(acc)


# ---------------------------------------------------------------------------
# hypothesis predicates
# ---------------------------------------------------------------------------


def check_hyp24a(model: JumpModel, u_grid) -> list[tuple[float, float]]:
    """Growth samples u -> mu_bar{cunder >= 1/u} / ln(u).

    mu_bar restricts mu to the shells union_k {|z| in [k - 3/4, k - 1/4]}.
    The floor must not be too small: an unbounded ratio along u_grid is the
    noise-richness condition behind the covariance lower bounds.
    """
    u_grid = np.asarray(u_grid, dtype=float)
    if np.any(np.diff(u_grid) <= 0) or np.any(u_grid <= 1):
        raise ValueError("u_grid must be increasing with entries > 1")
    if not (getattr(model.cunder, "radial", False) and getattr(model.h, "radial", False)):
        raise NotImplementedError("hyp 2.4 a) growth check requires radial cunder and h")
    cund = model.cunder.profile
    hprof = model.h.profile
    area = sphere_area(model.d)
    out = []
    for u in u_grid:
        thr = 1.0 / u
        mass = 0.0
        empty_run = 0
        for k in range(1, 10_000):
            lo, hi = k - 0.75, k - 0.25
            r = np.linspace(lo, hi, 401)
            vals = np.asarray(cund(r), dtype=float)
            mask = vals >= thr
            if not mask.any():
                empty_run += 1
                if empty_run >= 10:
                    break
                continue
            empty_run = 0
            integrand = np.where(mask, hprof(r) * r ** (model.d - 1), 0.0)
            mass += area * np.trapezoid(integrand, r)
        out.append((float(u), float(mass / math.log(u))))
    return out


@dataclass
class HypothesisReport:
    """Advisory verdicts on the model hypotheses (report, never refuse)."""

    theta: float
    theta_contraction: float
    hyp24a_samples: list[tuple[float, float]]
    growth: str  # "unbounded" | "plateau" | "decaying" | "zero"
    flags: dict
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "theta_contraction": self.theta_contraction,
            "hyp24a_samples": [[u, r] for u, r in self.hyp24a_samples],
            "growth": self.growth,
            "flags": self.flags,
            "diagnostics": self.diagnostics,
        }


def _classify_growth(samples) -> str:
    ratios = np.array([r for _, r in samples])
    if np.all(ratios == 0):
        return "zero"
    mid = max(float(ratios[len(ratios) // 2]), 1e-12)
    last = float(ratios[-1])
    if last >= 1.3 * mid and last >= ratios[-2] * 0.999:
        return "unbounded"
    if last < 0.75 * mid:
        return "decaying"
    return "plateau"


def check_hypotheses(
    model: JumpModel,
    u_grid=None,
    seq=None,
    n_samples: int = 10_000,
    seed: int = 20_240,
) -> HypothesisReport:
    """Spot-check the model hypotheses on quasi-random samples.

    The checks are advisory: the hypotheses are sufficient for the theory,
    not necessary for the simulation, so violations are flagged rather than
    raised.
    """
    d = model.d
    sob = qmc.Sobol(2 * d, scramble=True, seed=seed)
    pts = sob.random(n_samples)
    z_box = 8.0
    x_box = 4.0
    zs = (pts[:, :d] - 0.5) * 2 * z_box
    xs = (pts[:, d:] - 0.5) * 2 * x_box
    rng = np.random.default_rng(seed)

    flags: dict = {}
    diag: dict = {}

    def on_support(z):
        return float(np.asarray(model.h(z))) > 0.0

    # Hyp regularity: |c(z, x)| <= cbar(z), checked on mu-support samples
    # (c outside the support never enters the dynamics)
    worst = 0.0
    for z, x in zip(zs[:2000], xs[:2000]):
        if not on_support(z):
            continue
        cb = float(np.asarray(model.cbar(z)))
        cv = float(np.linalg.norm(np.atleast_1d(model.jump(z, x))))
        if cb > 0:
            worst = max(worst, cv / cb)
        elif cv > 1e-14:
            worst = math.inf
    flags["hyp21_value_bound"] = worst <= 1.0 + 1e-9
    diag["max |c|/cbar"] = worst

    # Hyp ellipticity consistency: cunder <= cbar^2 on samples
    cu = np.array([float(np.asarray(model.cunder(z))) for z in zs])
    cb2 = np.array([float(np.asarray(model.cbar(z))) ** 2 for z in zs])
    flags["cunder_le_cbar_sq"] = bool(np.all(cu <= cb2 * (1 + 1e-9) + 1e-300))
    diag["max cunder - cbar^2"] = float(np.max(cu - cb2))

    # Hyp ellipticity: smallest singular value^2 of d_z c dominates cunder
    bad = 0
    margin = math.inf
    for z, x in zip(zs[:500], xs[:500]):
        J = model.jac_jump_z(np.atleast_1d(z), np.atleast_1d(x))
        smin2 = float(np.linalg.svd(J, compute_uv=False)[-1]) ** 2
        c_floor = float(np.asarray(model.cunder(z)))
        if c_floor > 0:
            margin = min(margin, smin2 / c_floor)
            if smin2 < c_floor * (1 - 1e-6):
                bad += 1
    flags["hyp23_ellipticity"] = bad == 0
    diag["min smin^2/cunder"] = margin if math.isfinite(margin) else None

    # Hyp 2.4 b): h positive, log-derivatives bounded on mu-support samples
    hs = np.array([float(np.asarray(model.h(z))) for z in zs])
    support = hs > 0
    flags["hyp24b_h_positive_somewhere"] = bool(support.any())
    if support.any():
        eps = 1e-5
        grads = []
        for z in zs[support][:500]:
            z = np.atleast_1d(z)
            g = np.zeros(d)
            h0 = float(np.asarray(model.h(z)))
            for j in range(d):
                zp = z.copy()
                zp[j] += eps
                hp = float(np.asarray(model.h(zp)))
                if hp > 0 and h0 > 0:
                    g[j] = (math.log(hp) - math.log(h0)) / eps
                else:
                    g[j] = math.inf
            grads.append(np.linalg.norm(g))
        diag["max |grad ln h|"] = float(np.max(grads))
        flags["hyp24b_lnh_smooth"] = bool(np.max(grads) < 50.0)

    # Hyp dissipativity i): <x - y, b(x) - b(y)> <= -bbar |x - y|^2
    worst_diss = -math.inf
    for _ in range(500):
        x = rng.uniform(-x_box, x_box, d)
        y = rng.uniform(-x_box, x_box, d)
        if np.allclose(x, y):
            continue
        num = float(np.dot(x - y, np.atleast_1d(model.drift(x)) - np.atleast_1d(model.drift(y))))
        worst_diss = max(worst_diss, num / float(np.dot(x - y, x - y)))
    flags["hyp25_dissipative"] = worst_diss <= -model.bbar + 1e-9
    diag["max <x-y,b(x)-b(y)>/|x-y|^2"] = worst_diss

    # Hyp dissipativity ii): |c(z,x) - c(z,y)| <= cbar_lip(z) |x - y|
    worst_lip = 0.0
    for z in zs[:500]:
        if not on_support(z):
            continue
        x = rng.uniform(-x_box, x_box, d)
        y = rng.uniform(-x_box, x_box, d)
        denom = float(np.linalg.norm(x - y))
        if denom < 1e-12:
            continue
        diff = float(
            np.linalg.norm(
                np.atleast_1d(model.jump(z, x)) - np.atleast_1d(model.jump(z, y))
            )
        )
        lip = float(np.asarray(model.cbar_lip(z)))
        if lip > 0:
            worst_lip = max(worst_lip, diff / (lip * denom))
        elif diff > 1e-12 * denom:
            worst_lip = math.inf
    flags["hyp25_jump_lipschitz"] = worst_lip <= 1.0 + 1e-6
    diag["max |c(x)-c(y)|/(cbar_lip |x-y|)"] = worst_lip

    th = theta(model)
    th_c = theta_contraction(model)
    flags["hyp25_theta_positive"] = th > 0

    if u_grid is None:
        u_grid = np.geomspace(4.0, 1e6, 10)
    try:
        samples = check_hyp24a(model, u_grid)
        growth = _classify_growth(samples)
    except NotImplementedError:
        samples, growth = [], "unknown"
    flags["hyp24a_growth_unbounded"] = growth == "unbounded"

    if seq is not None:
        from .steps import omega_bar as _ob

        w = _ob(seq, 100, 10_000) if seq.kind != "explicit" else _ob(
            seq, 1, max(2, len(seq) - 1)
        )
        flags["hyp26_omega_lt_theta_half"] = w < th / 2 if th > 0 else False
        diag["omega_bar"] = w

    return HypothesisReport(
        theta=th,
        theta_contraction=th_c,
        hyp24a_samples=samples,
        growth=growth,
        flags=flags,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _scan_ellipticity_constant(g_prime, floor_profile, r_max=60.0):
    """Largest kappa with g'(r)^2 >= kappa * floor(r) on every shell.

    Scans the shells on a fine grid and keeps a 5% safety margin so the
    declared floor is genuinely dominated at jump marks.
    """
    best = math.inf
    for k in range(1, int(r_max) + 1):
        r = np.linspace(k - 0.75, k - 0.25, 801)
        f = np.asarray(floor_profile(r), dtype=float)
        gp2_pos = np.asarray(g_prime(r), dtype=float) ** 2
        gp2_neg = np.asarray(g_prime(-r), dtype=float) ** 2
        gp2 = np.minimum(gp2_pos, gp2_neg)
        mask = f > 1e-280
        if not mask.any():
            break
        best = min(best, float(np.min(gp2[mask] / f[mask])))
    if not math.isfinite(best) or best <= 0:
        raise ValueError("ellipticity scan failed: derivative vanishes on a shell")
    return 0.95 * best


def _additive_model(
    name, params, g, g_prime, cbar_profile, cbar_breaks, floor_profile, bbar, h_profile=None
):
    """d = 1 model with additive jumps c(z, x) = g(z) and drift -bbar*x."""
    mark_ppf = None
    if h_profile is None:
        h_profile = lambda r: np.ones_like(np.asarray(r, dtype=float))

        def mark_ppf(k, u):  # h == 1 in d = 1: radius uniform on the annulus
            lo = 0.0 if k == 1 else float(k - 1)
            return lo + np.asarray(u, dtype=float) * (k - lo)

    cbar = RadialFn(cbar_profile, breakpoints=cbar_breaks)
    cunder = RadialFn(floor_profile, breakpoints=np.arange(0.25, 80.0, 0.25))
    h = RadialFn(h_profile)
    zero = RadialFn(lambda r: np.zeros_like(np.asarray(r, dtype=float)))
    return JumpModel(
        d=1,
        drift=lambda x: -bbar * np.asarray(x, dtype=float),
        drift_jac=lambda x: np.array([[-bbar]]),
        drift_vec=lambda x: -bbar * x,
        jump=lambda z, x: np.array([float(g(float(np.asarray(z).reshape(-1)[0])))]),
        jump_jac_z=lambda z, x: np.array(
            [[float(g_prime(float(np.asarray(z).reshape(-1)[0])))]]
        ),
        jump_jac_x=lambda z, x: np.array([[0.0]]),
        cbar=cbar,
        cunder=cunder,
        h=h,
        bbar=bbar,
        cbar_lip=zero,
        separable=SeparableJump(
            g=lambda zz: np.asarray(g(np.asarray(zz, dtype=float))),
            sigma=lambda xx: np.ones_like(np.asarray(xx, dtype=float)),
            g_prime=lambda zz: np.asarray(g_prime(np.asarray(zz, dtype=float))),
            additive=True,
            linear_drift=bbar,
        ),
        radial_mark_ppf=mark_ppf,
        name=name,
        params=params,
    )


def preset_additive_linear(bbar: float = 1.0, scale: float = 1.0) -> JumpModel:
    """Linear drift -bbar*x with additive jumps g(z) = scale * exp(-|z|/2).

    The analytic-oracle model: stationary mean int g dmu / bbar, variance
    int g^2 dmu / (2 bbar), and elementary closed-form tails
    eps_m = scale^2 (2/1) e^-m + (4 scale e^{-m/2})^2.  The ellipticity floor
    (g')^2 = (scale/2)^2 e^-|z| holds with equality away from z = 0.
    """

    def g(z):
        z = np.asarray(z, dtype=float)
        return scale * np.exp(-np.abs(z) / 2.0)

    def g_prime(z):
        z = np.asarray(z, dtype=float)
        return -np.sign(z) * (scale / 2.0) * np.exp(-np.abs(z) / 2.0)

    return _additive_model(
        "additive-linear",
        {"bbar": bbar, "scale": scale},
        lambda z: float(g(z)) if np.isscalar(z) else g(z),
        lambda z: float(g_prime(z)) if np.isscalar(z) else g_prime(z),
        cbar_profile=lambda r: scale * np.exp(-np.asarray(r, dtype=float) / 2.0),
        cbar_breaks=(),
        floor_profile=lambda r: (scale * scale / 4.0) * np.exp(-np.asarray(r, dtype=float)),
        bbar=bbar,
    )


def preset_exp_decay(
    a1: float = 1.0, a2: float | None = None, p: float = 1.0,
    scale: float = 1.0, bbar: float = 1.0,
) -> JumpModel:
    """Additive oscillating jumps under the exponential envelope family.

    cbar(z) = scale * exp(-(a1/2) |z|^p) and the declared floor
    cunder(z) = kappa * exp(-a2 |z|^p) restricted to the shells
    ||z| - (k - 1/2)| <= 1/4, with kappa found by scanning so that
    (d_z c)^2 >= cunder holds everywhere.  The cos(pi z) phase puts the
    derivative zeros at the gap centres between shells, which is what makes
    a decaying additive jump compatible with a positive floor on shells.
    """
    if a2 is None:
        a2 = a1
    if not (0 < a1 <= a2):
        raise ValueError("need 0 < a1 <= a2")
    if p <= 0:
        raise ValueError("p must be positive")
    beta = a1 / 2.0

    def rho(z):
        return (1.0 + z * z) ** (p / 2.0)

    def rho_prime(z):
        return p * z * (1.0 + z * z) ** (p / 2.0 - 1.0)

    def g(z):
        z = np.asarray(z, dtype=float)
        return (scale / math.pi) * np.cos(math.pi * z) * np.exp(-beta * rho(z))

    def g_prime(z):
        z = np.asarray(z, dtype=float)
        return (scale / math.pi) * np.exp(-beta * rho(z)) * (
            -math.pi * np.sin(math.pi * z) - beta * rho_prime(z) * np.cos(math.pi * z)
        )

    base_floor = lambda r: np.exp(-a2 * np.asarray(r, dtype=float) ** p)
    kappa = _scan_ellipticity_constant(g_prime, base_floor)

    def floor_profile(r):
        r = np.asarray(r, dtype=float)
        return kappa * np.exp(-a2 * r**p) * _shell_window(r)

    return _additive_model(
        "exp-decay",
        {"a1": a1, "a2": a2, "p": p, "scale": scale, "bbar": bbar, "kappa": kappa},
        lambda z: float(g(z)) if np.isscalar(z) else g(z),
        lambda z: float(g_prime(z)) if np.isscalar(z) else g_prime(z),
        cbar_profile=lambda r: scale * np.exp(-(a1 / 2.0) * np.asarray(r, dtype=float) ** p),
        cbar_breaks=(),
        floor_profile=floor_profile,
        bbar=bbar,
    )


def preset_poly_decay(
    a1: float = 1.0, a2: float | None = None, p: float = 4.0, bbar: float = 1.0
) -> JumpModel:
    """Additive oscillating jumps under the polynomial envelope family.

    cbar(z)^2 = a1 / (1 + |z|^p); needs p > 2d so that cbar itself is
    mu-integrable.  Floor as in the exponential preset, shell-windowed.
    """
    if a2 is None:
        a2 = a1
    if p <= 2.0:
        raise ValueError("polynomial decay needs p > 2 in d = 1 for integrable cbar")
    sq = math.sqrt(a1)

    def q_fac(z):
        return (1.0 + (1.0 + z * z) ** (p / 2.0)) ** (-0.5)

    def q_fac_prime(z):
        rho = (1.0 + z * z) ** (p / 2.0)
        rho_p = p * z * (1.0 + z * z) ** (p / 2.0 - 1.0)
        return -0.5 * rho_p * (1.0 + rho) ** (-1.5)

    def g(z):
        z = np.asarray(z, dtype=float)
        return (sq / math.pi) * np.cos(math.pi * z) * q_fac(z)

    def g_prime(z):
        z = np.asarray(z, dtype=float)
        return (sq / math.pi) * (
            -math.pi * np.sin(math.pi * z) * q_fac(z) + np.cos(math.pi * z) * q_fac_prime(z)
        )

    base_floor = lambda r: 1.0 / (1.0 + np.asarray(r, dtype=float) ** p)
    kappa = min(_scan_ellipticity_constant(g_prime, base_floor), a2)

    def floor_profile(r):
        r = np.asarray(r, dtype=float)
        return kappa / (1.0 + r**p) * _shell_window(r)

    return _additive_model(
        "poly-decay",
        {"a1": a1, "a2": a2, "p": p, "bbar": bbar, "kappa": kappa},
        lambda z: float(g(z)) if np.isscalar(z) else g(z),
        lambda z: float(g_prime(z)) if np.isscalar(z) else g_prime(z),
        cbar_profile=lambda r: sq / np.sqrt(1.0 + np.asarray(r, dtype=float) ** p),
        cbar_breaks=(),
        floor_profile=floor_profile,
        bbar=bbar,
    )


def preset_truncated_alpha_stable(
    alpha: float = 0.5, sigma0: float = 0.05, sigma1: float = 0.5, bbar: float = 1.0
) -> JumpModel:
    """State-dependent multiplicative jumps sigma(x)/z on mu = |z|^(alpha-1) dz, |z| >= 1.

    The image of the truncated alpha-stable equation under z -> 1/z; the
    ellipticity floor sigma_min^2 / z^4 is exact, positive on the whole
    support, and state-independent, which makes this the canonical preset
    for coupling and Malliavin tests.
    """
    if not (0 <= alpha < 1):
        raise ValueError("alpha must lie in [0, 1)")
    if not (0 < sigma1 < 1):
        raise ValueError("sigma1 must lie in (0, 1)")
    sig_min = sigma0 * (1.0 - sigma1)
    sig_max = sigma0 * (1.0 + sigma1)

    def sigma(x):
        return sigma0 * (1.0 + sigma1 * np.sin(np.asarray(x, dtype=float)))

    def sigma_prime(x):
        return sigma0 * sigma1 * np.cos(np.asarray(x, dtype=float))

    def h_profile(r):
        r = np.asarray(r, dtype=float)
        return np.where(r >= 1.0, r ** (alpha - 1.0), 0.0)

    def cbar_profile(r):
        r = np.asarray(r, dtype=float)
        return sig_max / np.maximum(r, 1.0)

    def lip_profile(r):
        r = np.asarray(r, dtype=float)
        return sigma0 * sigma1 / np.maximum(r, 1.0)

    def floor_profile(r):
        r = np.asarray(r, dtype=float)
        return sig_min**2 / np.maximum(r, 1.0) ** 4

    return JumpModel(
        d=1,
        drift=lambda x: -bbar * np.asarray(x, dtype=float),
        drift_jac=lambda x: np.array([[-bbar]]),
        drift_vec=lambda x: -bbar * x,
        jump=lambda z, x: np.array(
            [float(sigma(np.asarray(x).reshape(-1)[0])) / float(np.asarray(z).reshape(-1)[0])]
        ),
        jump_jac_z=lambda z, x: np.array(
            [[-float(sigma(np.asarray(x).reshape(-1)[0]))
              / float(np.asarray(z).reshape(-1)[0]) ** 2]]
        ),
        jump_jac_x=lambda z, x: np.array(
            [[float(sigma_prime(np.asarray(x).reshape(-1)[0]))
              / float(np.asarray(z).reshape(-1)[0])]]
        ),
        cbar=RadialFn(cbar_profile, breakpoints=(1.0,)),
        cunder=RadialFn(floor_profile, breakpoints=(1.0,)),
        h=RadialFn(h_profile, breakpoints=(1.0,)),
        bbar=bbar,
        cbar_lip=RadialFn(lip_profile, breakpoints=(1.0,)),
        separable=SeparableJump(
            g=lambda zz: 1.0 / np.asarray(zz, dtype=float),
            sigma=lambda xx: sigma(xx),
            g_prime=lambda zz: -1.0 / np.asarray(zz, dtype=float) ** 2,
            additive=False,
            linear_drift=bbar,
        ),
        radial_mark_ppf=_alpha_stable_mark_ppf(alpha),
        name="truncated-alpha-stable",
        params={"alpha": alpha, "sigma0": sigma0, "sigma1": sigma1, "bbar": bbar},
    )


def _alpha_stable_mark_ppf(alpha: float):
    """Exact radial inverse CDF for h(r) = r^(alpha-1) on [k-1, k], k >= 2."""

    def ppf(k, u):
        u = np.asarray(u, dtype=float)
        lo = max(float(k - 1), 1.0)
        if alpha == 0.0:
            return lo * (float(k) / lo) ** u  # h = 1/r: log-uniform radius
        return (lo**alpha + u * (float(k) ** alpha - lo**alpha)) ** (1.0 / alpha)

    return ppf


PRESETS = {
    "additive-linear": preset_additive_linear,
    "exp-decay": preset_exp_decay,
    "poly-decay": preset_poly_decay,
    "truncated-alpha-stable": preset_truncated_alpha_stable,
}


def make_preset(name: str, **params) -> JumpModel:
    """Build a named preset model; see PRESETS for the registry."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name](**params)
