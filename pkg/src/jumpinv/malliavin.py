"""Pathwise Malliavin objects for the auxiliary scheme.

Differentiation is with respect to the retained jump amplitudes Z^k_i and
the Gaussian vector, weighted per jump by xi^k_i = Psi_k(Z^k_i) where Psi_k
is a smooth bump equal to 1 on the shell ||z| - (k - 1/2)| <= 1/4 and
supported in annulus k.  The closed forms

    D^Z_(k,i,j) X_t = xi^k_i  Y_t  Ytilde_{T^k_i}  d_{z_j} c(Z^k_i, X_{T-})
    D^Delta_j  X_t = a_t  Y_t  e_j

combine the tangent flow Y and its inverse with the jump-coefficient
derivative; their Gram matrix is the Malliavin covariance, whose smallest
eigenvalue is lower-bounded through the chi-functional
chi_t = sum_retained xi^2 cunder(Z), which in turn has an exactly computable
Laplace transform -- the identity this module exposes as a verifiable
diagnostic of non-degeneracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate

from .integrator import Trajectory, integrate_auxiliary, interval_structure
from .model import JumpModel, sphere_area
from .sampler import NoiseRealization
from .steps import TimeGrid

__all__ = [
    "psi",
    "psi_k",
    "xi_weight",
    "FlowPair",
    "MalliavinState",
    "tangent_flows",
    "derivative_z",
    "derivative_delta",
    "covariance",
    "malliavin_state",
    "chi",
    "step1_bound",
    "laplace_chi_closed_form",
]


def psi(y):
    """Smooth bump: 1 on [-1/4, 1/4], 0 outside (-1/2, 1/2).

    On 1/4 < |y| < 1/2 it equals exp(1 - 1/(1 - (4|y| - 1)^2)); values below
    1e-300 are clamped to 0 to avoid underflow traps at the support edge.
    """
    y = np.asarray(y, dtype=float)
    u = np.abs(y)
    out = np.zeros_like(u)
    out[u <= 0.25] = 1.0
    mid = (u > 0.25) & (u < 0.5)
    if np.any(mid):
        t = 4.0 * u[mid] - 1.0
        denom = 1.0 - t * t
        expo = np.where(denom > 1e-12, 1.0 - 1.0 / np.maximum(denom, 1e-12), -np.inf)
        vals = np.where(expo > -690.0, np.exp(expo), 0.0)
        out[mid] = vals
    return out if out.ndim else float(out)


def psi_k(k: int, y):
    """Psi_k(y) = psi(|y| - (k - 1/2)); supported in k - 1 <= |y| <= k."""
    y = np.asarray(y, dtype=float)
    return psi(np.abs(y) - (k - 0.5))


def xi_weight(k: int, z) -> float:
    """Weight xi^k_i = Psi_k(Z^k_i) for a mark z in R^d."""
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(z, dtype=float))))
    return float(psi_k(k, r))


@dataclass
class FlowPair:
    """Tangent flow Y_t and its inverse at the horizon and at each retained jump."""

    t: float
    Y: np.ndarray  # terminal Y_t
    Yt: np.ndarray  # terminal inverse
    events: dict  # (k, i) -> (Y, Ytilde) immediately after that jump
    max_Y: float  # sup over recorded times of ||Y_s||
    max_Yt: float

    @property
    def inversion_defect(self) -> float:
        d = self.Y.shape[0]
        return float(np.max(np.abs(self.Y @ self.Yt - np.eye(d))))


def tangent_flows(model: JumpModel, noise: NoiseRealization, trajectory: Trajectory) -> FlowPair:
    """Co-integrate the tangent flow and its inverse along an auxiliary path.

    Y is updated multiplicatively by (I + grad_x c) at each retained jump and
    through the drift Jacobian ODE between jumps; the inverse follows its own
    equation so the pair stays consistent to quadrature accuracy.
    """
    if trajectory.scheme != "auxiliary":
        raise ValueError("tangent flows are defined along auxiliary-scheme paths")
    _, flow_data = integrate_auxiliary(
        model,
        trajectory.edges,
        trajectory.levels,
        noise,
        trajectory.x0,
        substeps=trajectory.substeps,
        with_flows=True,
    )
    return FlowPair(
        t=trajectory.horizon,
        Y=flow_data["Y_T"],
        Yt=flow_data["Yt_T"],
        events=flow_data["events"],
        max_Y=flow_data["max_Y"],
        max_Yt=flow_data["max_Yt"],
    )


def derivative_z(
    model: JumpModel,
    noise: NoiseRealization,
    trajectory: Trajectory,
    flows: FlowPair,
    key: tuple[int, int, int],
) -> np.ndarray:
    """D^Z_(k,i,j) X_t; zero vector for jumps the truncation discarded."""
    k, i, j = key
    ev = next((e for e in trajectory.events if e.k == k and e.i == i), None)
    if ev is None:
        return np.zeros(model.d)
    xi = xi_weight(k, ev.z)
    if xi == 0.0:
        return np.zeros(model.d)
    Jz = model.jac_jump_z(ev.z, ev.x_pre)  # [:, j] = d c / d z_j
    _, Yt_T = flows.events[(k, i)]
    return xi * (flows.Y @ (Yt_T @ Jz[:, j]))


def derivative_delta(flows: FlowPair, a_t: float, j: int) -> np.ndarray:
    """D^Delta_j X_t = a_t Y_t e_j (j is 0-based)."""
    return a_t * flows.Y[:, j]


@dataclass
class MalliavinState:
    """Derivatives, covariance, and the non-degeneracy diagnostics of one path."""

    dz: dict = field(repr=False)  # (k, i, j) -> D^Z vector, retained jumps only
    ddelta: np.ndarray = field(repr=False)  # (d, d), column j = D^Delta_j X
    cov: np.ndarray
    lambda_min: float
    chi: float
    a_t: float
    flow_coeff: float  # 1 / (max||Y||^2 max||Ytilde||^2)
    step1_bound: float
    step1_margin: float


def covariance(state: MalliavinState):
    """The Malliavin covariance matrix and its smallest eigenvalue."""
    return state.cov, state.lambda_min


def malliavin_state(
    model: JumpModel,
    noise: NoiseRealization,
    trajectory: Trajectory,
    flows: FlowPair | None = None,
) -> MalliavinState:
    """Assemble all derivative entries, the covariance Gram matrix, and the
    chi-based lower bound with its pathwise margin."""
    if flows is None:
        flows = tangent_flows(model, noise, trajectory)
    d = model.d
    t = trajectory.horizon
    a_t = trajectory.a_of(t)

    dz: dict = {}
    cov = np.zeros((d, d))
    chi_val = 0.0
    for ev in trajectory.events:
        xi = xi_weight(ev.k, ev.z)
        chi_val += xi * xi * float(np.asarray(model.cunder(ev.z)))
        if xi == 0.0:
            continue
        Jz = model.jac_jump_z(ev.z, ev.x_pre)
        _, Yt_T = flows.events[(ev.k, ev.i)]
        base = flows.Y @ Yt_T @ Jz  # column j = D^Z_(k,i,j) / xi
        for j in range(d):
            v = xi * base[:, j]
            dz[(ev.k, ev.i, j)] = v
            cov += np.outer(v, v)
    ddelta = a_t * flows.Y
    cov += ddelta @ ddelta.T
    lam = float(np.linalg.eigvalsh(0.5 * (cov + cov.T))[0])
    coeff = 1.0 / (flows.max_Y**2 * flows.max_Yt**2)
    bound = coeff * (chi_val + a_t * a_t)
    return MalliavinState(
        dz=dz,
        ddelta=ddelta,
        cov=cov,
        lambda_min=lam,
        chi=chi_val,
        a_t=a_t,
        flow_coeff=coeff,
        step1_bound=bound,
        step1_margin=lam - bound,
    )


def chi(model: JumpModel, noise: NoiseRealization, grid: TimeGrid, t: float) -> float:
    """chi_t = sum over retained jumps of xi^2 cunder(Z).

    Retention follows the interval truncation rule; no trajectory is needed
    because the weights depend only on the marks.
    """
    if t <= 0:
        return 0.0
    edges, levels = interval_structure(model, grid, t)
    t_all, k_all, _, z_all = noise.merged(int(levels.max()))
    n_ev = int(np.searchsorted(t_all, t, side="right"))
    total = 0.0
    for m in range(n_ev):
        j = max(int(np.searchsorted(edges, t_all[m], side="left")), 1)
        if k_all[m] <= levels[j - 1]:
            xi = xi_weight(int(k_all[m]), z_all[m])
            total += xi * xi * float(np.asarray(model.cunder(z_all[m])))
    return total


def step1_bound(state: MalliavinState) -> tuple[float, float]:
    """(lower bound for lambda_min, margin) from the chi-functional."""
    return state.step1_bound, state.step1_margin


def chi_ensemble(
    model: JumpModel,
    grid: TimeGrid,
    t: float,
    n_realizations: int,
    master_seed: int,
    chunk: int = 50_000,
) -> np.ndarray:
    """chi_t over many independent noise realizations, vectorized.

    Pools the per-annulus Poisson jumps of a whole chunk of realizations and
    reduces xi^2 cunder(Z) by realization; radial marks only (chi never sees
    the direction of the mark).  Deterministic for fixed (master_seed, t).
    """
    if not (getattr(model.cunder, "radial", False) and getattr(model.h, "radial", False)):
        raise NotImplementedError("vectorized chi needs radial cunder and h")
    from .model import annulus_mass

    edges, levels = interval_structure(model, grid, t)
    K = int(levels.max())
    masses = np.array([annulus_mass(model, k) for k in range(1, K + 1)])
    cund = model.cunder.profile
    out = np.empty(n_realizations)
    n_chunks = (n_realizations + chunk - 1) // chunk
    for ci in range(n_chunks):
        lo, hi = ci * chunk, min((ci + 1) * chunk, n_realizations)
        m = hi - lo
        seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(0x434849, ci))
        rng = np.random.Generator(np.random.Philox(seq))
        acc = np.zeros(m)
        for k in range(1, K + 1):
            lam = t * masses[k - 1]
            if lam == 0.0:
                continue
            counts = rng.poisson(lam, m)
            tot = int(counts.sum())
            if tot == 0:
                continue
            real_id = np.repeat(np.arange(m), counts)
            tj = (1.0 - rng.random(tot)) * t
            if model.radial_mark_ppf is not None:
                r = np.asarray(model.radial_mark_ppf(k, rng.random(tot)))
            else:
                from .sampler import _sample_marks

                r = np.abs(_sample_marks(model, k, tot, rng)[:, 0])
            j = np.maximum(np.searchsorted(edges, tj, side="left"), 1)
            keep = k <= levels[j - 1]
            w = psi_k(k, r)
            vals = np.where(keep, w * w * cund(r), 0.0)
            acc += np.bincount(real_id, weights=vals, minlength=m)
        out[lo:hi] = acc
    return out


def _annulus_laplace_integral(model: JumpModel, k: int, s: float) -> float:
    """integral over I_k of (1 - exp(-s Psi_k(z)^2 cunder(z))) dmu, radial case."""
    if not (getattr(model.cunder, "radial", False) and getattr(model.h, "radial", False)):
        raise NotImplementedError("closed-form Laplace transform needs radial cunder, h")
    cund = model.cunder.profile
    hprof = model.h.profile
    area = sphere_area(model.d)
    lo = 0.0 if k == 1 else float(k - 1)
    pieces = sorted({lo, k - 0.75, k - 0.5, k - 0.25, float(k)})
    pieces = [p for p in pieces if lo <= p <= k]
    total = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        if b <= a:
            continue

        def f(r):
            w = psi_k(k, r)
            return (
                -np.expm1(-s * w * w * cund(np.asarray(r, dtype=float)))
                * hprof(np.asarray(r, dtype=float))
                * np.asarray(r, dtype=float) ** (model.d - 1)
            )

        v, _ = sp_integrate.quad(lambda r: float(f(r)), a, b, epsabs=1e-13, limit=200)
        total += v
    return area * total


def laplace_chi_closed_form(model: JumpModel, grid: TimeGrid, t: float, s: float) -> float:
    """E exp(-s chi_t) in closed form (quadrature over annuli).

    equals exp(- sum_n ((Gamma_{n+1} ^ t) - Gamma_n)
                 sum_{k <= M(gamma_{n+1})} int_{I_k} (1 - e^{-s Psi_k^2 cunder}) dmu).
    """
    if s < 0:
        raise ValueError("s must be non-negative")
    if s == 0 or t <= 0:
        return 1.0
    edges, levels = interval_structure(model, grid, t)
    cache: dict[int, float] = {}

    def annulus_val(k: int) -> float:
        if k not in cache:
            cache[k] = _annulus_laplace_integral(model, k, s)
        return cache[k]

    expo = 0.0
    for j in range(1, len(edges)):
        dt = edges[j] - edges[j - 1]
        M_j = int(levels[j - 1])
        expo += dt * sum(annulus_val(k) for k in range(1, M_j + 1))
    return math.exp(-expo)
