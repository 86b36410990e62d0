"""Truncated decreasing-step Euler scheme, the Gaussian-compensated auxiliary
scheme, constant-step references, synchronous coupling, and ensembles.

Scheme semantics.  With grid times Gamma_0 < Gamma_1 < ... the interval
(Gamma_{n-1}, Gamma_n] carries the truncation level M(gamma_n): a jump at
T in that interval is retained iff its annulus k satisfies k <= M(gamma_n).

* truncated-euler: within an interval every retained jump and the drift see
  the frozen pre-interval state, so one interval is the explicit update
  X <- X + gamma b(X) + sum_retained c(Z, X).
* auxiliary: drift is integrated continuously (RK4 sub-stepping), retained
  jumps apply at their exact times to the left-limit state, and the shift
  a_t * Delta is carried additively with a_t the Gaussian-compensator
  magnitude (the drift sees the shifted state).
* constant-ref: the truncated-euler code path on a constant grid with the
  truncation level frozen at M(step); used as the fine reference in
  weak-error and invariant-measure studies.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import JumpModel
from .sampler import NoiseRealization, derive_path_seed, sample_noise
from .steps import StepSequence, TimeGrid

__all__ = [
    "CoverageError",
    "SchemeConfig",
    "JumpEvent",
    "Trajectory",
    "EnsembleResult",
    "interval_structure",
    "required_annuli",
    "simulate_truncated_euler",
    "simulate_auxiliary",
    "simulate_coupled",
    "simulate",
    "ensemble_terminal",
]


class CoverageError(RuntimeError):
    """The noise realization does not cover the annuli the scheme retains."""


@dataclass(frozen=True)
class SchemeConfig:
    """What to simulate: scheme kind, grid, horizon, start point."""

    scheme: str = "truncated-euler"  # | "auxiliary" | "constant-ref"
    sequence: StepSequence | None = None
    step: float | None = None  # constant-ref only
    horizon: float = 1.0
    x0: float | np.ndarray = 0.0
    substeps: int = 8  # auxiliary drift sub-steps per interval

    def __post_init__(self):
        if self.scheme not in ("truncated-euler", "auxiliary", "constant-ref"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.scheme == "constant-ref":
            if self.step is None or self.step <= 0:
                raise ValueError("constant-ref needs a positive step")
        elif self.sequence is None:
            raise ValueError(f"{self.scheme} needs a step sequence")

    def make_grid(self) -> TimeGrid:
        if self.scheme == "constant-ref":
            n = int(math.ceil(self.horizon / self.step - 1e-12))
            return TimeGrid(StepSequence("explicit", values=(self.step,) * n))
        return TimeGrid(self.sequence)


@dataclass
class JumpEvent:
    """A retained jump: identity (k, i), mark, time, and pre-jump state."""

    t: float
    k: int
    i: int
    z: np.ndarray
    x_pre: np.ndarray
    interval: int  # 1-based interval index j with Gamma_{j-1} < t <= Gamma_j


@dataclass
class Trajectory:
    """Path values at grid/event times plus the scheme bookkeeping.

    edges/levels describe the intervals and their truncation levels; for the
    auxiliary scheme q and a2_edges encode the compensator magnitude
    a(t)^2 = a2_edges[j-1] + (t - edges[j-1]) * q[j-1] on interval j.
    """

    scheme: str
    x0: np.ndarray
    horizon: float
    times: np.ndarray
    states: np.ndarray
    events: list = field(default_factory=list)
    edges: np.ndarray | None = None
    levels: np.ndarray | None = None
    substeps: int = 8
    q: np.ndarray | None = None
    a2_edges: np.ndarray | None = None

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def a_of(self, t: float) -> float:
        """Compensator magnitude a_t (0 for the truncated-euler scheme)."""
        if self.q is None:
            return 0.0
        if t <= 0:
            return 0.0
        j = int(np.searchsorted(self.edges, t, side="left"))
        j = max(j, 1)
        j = min(j, len(self.q))
        return math.sqrt(self.a2_edges[j - 1] + (t - self.edges[j - 1]) * self.q[j - 1])

    def interval_of(self, t: float) -> int:
        """1-based interval index j with edges[j-1] < t <= edges[j]."""
        j = int(np.searchsorted(self.edges, t, side="left"))
        return max(j, 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            d = self.states.shape[1]
            w.writerow(["time"] + [f"x{i}" for i in range(d)])
            for t, s in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in s])


def interval_structure(model: JumpModel, grid: TimeGrid, horizon: float,
                       fixed_level: int | None = None):
    """Interval edges clipped at the horizon and per-interval truncation levels."""
    table = model.tail_table()
    edges = [0.0]
    levels = []
    j = 1
    while True:
        gj = grid.gamma(j)
        Gj = grid.Gamma(j)
        t1 = min(Gj, horizon)
        levels.append(fixed_level if fixed_level is not None else table.level(gj))
        edges.append(t1)
        if Gj >= horizon:
            break
        j += 1
    return np.asarray(edges), np.asarray(levels, dtype=int)


def required_annuli(model: JumpModel, grid: TimeGrid, horizon: float,
                    fixed_level: int | None = None) -> int:
    """Largest annulus any interval retains; the K_max to sample noise with."""
    _, levels = interval_structure(model, grid, horizon, fixed_level)
    return int(levels.max())


def _check_coverage(noise: NoiseRealization, levels: np.ndarray) -> None:
    need = int(levels.max())
    if noise.K_max < need:
        raise CoverageError(
            f"noise covers annuli up to {noise.K_max} but the scheme retains up to {need}"
        )


def _as_state(x0, d: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.shape != (d,):
        raise ValueError(f"initial state has shape {x.shape}, expected ({d},)")
    return x.copy()


def simulate_truncated_euler(
    model: JumpModel,
    grid: TimeGrid,
    horizon: float,
    noise: NoiseRealization,
    x0,
    fixed_level: int | None = None,
) -> Trajectory:
    """Run the truncated decreasing-step Euler scheme on a given noise."""
    edges, levels = interval_structure(model, grid, horizon, fixed_level)
    _check_coverage(noise, levels)
    t_all, k_all, i_all, z_all = noise.merged(int(levels.max()))
    X = _as_state(x0, model.d)
    times = [0.0]
    states = [X.copy()]
    events: list[JumpEvent] = []
    ptr = 0
    # skip any events beyond the horizon up front
    n_ev = int(np.searchsorted(t_all, horizon, side="right"))
    for j in range(1, len(edges)):
        t0, t1 = edges[j - 1], edges[j]
        M_j = int(levels[j - 1])
        frozen = X
        delta = (t1 - t0) * np.atleast_1d(np.asarray(model.drift(frozen), dtype=float))
        while ptr < n_ev and t_all[ptr] <= t1:
            if k_all[ptr] <= M_j:
                z = z_all[ptr]
                events.append(
                    JumpEvent(
                        t=float(t_all[ptr]),
                        k=int(k_all[ptr]),
                        i=int(i_all[ptr]),
                        z=z.copy(),
                        x_pre=frozen.copy(),
                        interval=j,
                    )
                )
                delta = delta + np.atleast_1d(np.asarray(model.jump(z, frozen), dtype=float))
            ptr += 1
        X = frozen + delta
        times.append(float(t1))
        states.append(X.copy())
    return Trajectory(
        scheme="truncated-euler",
        x0=_as_state(x0, model.d),
        horizon=float(horizon),
        times=np.asarray(times),
        states=np.asarray(states),
        events=events,
        edges=edges,
        levels=levels,
    )


# ---------------------------------------------------------------------------
# auxiliary scheme (continuous drift + Gaussian compensator shift)
# ---------------------------------------------------------------------------


def _rk4(f, y, t0, t1, n_sub):
    h = (t1 - t0) / n_sub
    t = t0
    for _ in range(n_sub):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + (h / 2) * k1)
        k3 = f(t + h / 2, y + (h / 2) * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


class _AuxState:
    """Augmented state for the auxiliary integration: shifted path + flows."""

    def __init__(self, x, with_flows, d):
        self.y = x.copy()  # X_t - a(t) * Delta
        self.with_flows = with_flows
        if with_flows:
            self.Y = np.eye(d)
            self.Yt = np.eye(d)
            self.max_Y = 1.0
            self.max_Yt = 1.0

    def pack(self):
        if not self.with_flows:
            return self.y.copy()
        return np.concatenate([self.y, self.Y.ravel(), self.Yt.ravel()])

    def unpack(self, v, d):
        self.y = v[:d].copy()
        if self.with_flows:
            self.Y = v[d : d + d * d].reshape(d, d).copy()
            self.Yt = v[d + d * d :].reshape(d, d).copy()

    def track_norms(self):
        if self.with_flows:
            self.max_Y = max(self.max_Y, float(np.linalg.norm(self.Y, 2)))
            self.max_Yt = max(self.max_Yt, float(np.linalg.norm(self.Yt, 2)))


def simulate_auxiliary(
    model: JumpModel,
    grid: TimeGrid,
    horizon: float,
    noise: NoiseRealization,
    x0,
    substeps: int = 8,
    with_flows: bool = False,
):
    """Run the Gaussian-compensated auxiliary scheme.

    Returns a Trajectory; with_flows=True additionally co-integrates the
    tangent flow Y and its inverse and returns (trajectory, flow_data) where
    flow_data carries terminal/event flow matrices and running sup norms.
    """
    edges, levels = interval_structure(model, grid, horizon)
    return integrate_auxiliary(
        model, edges, levels, noise, x0, substeps=substeps, with_flows=with_flows
    )


def integrate_auxiliary(
    model: JumpModel,
    edges: np.ndarray,
    levels: np.ndarray,
    noise: NoiseRealization,
    x0,
    substeps: int = 8,
    with_flows: bool = False,
):
    """Auxiliary-scheme core on a fixed interval structure (exact replay)."""
    d = model.d
    horizon = float(edges[-1])
    _check_coverage(noise, levels)
    table = model.tail_table()
    q = np.array([table.cunder_tail(int(m)) for m in levels])
    a2_edges = np.concatenate([[0.0], np.cumsum(np.diff(edges) * q)])

    def a_of(t):
        if t <= 0:
            return 0.0
        j = max(int(np.searchsorted(edges, t, side="left")), 1)
        j = min(j, len(q))
        return math.sqrt(a2_edges[j - 1] + (t - edges[j - 1]) * q[j - 1])

    delta_vec = noise.delta

    def rhs(t, v):
        y = v[:d]
        x = y + a_of(t) * delta_vec
        dy = np.atleast_1d(np.asarray(model.drift(x), dtype=float))
        if not with_flows:
            return dy
        A = model.jac_drift(x)
        Y = v[d : d + d * d].reshape(d, d)
        Yt = v[d + d * d :].reshape(d, d)
        return np.concatenate([dy, (A @ Y).ravel(), (-Yt @ A).ravel()])

    t_all, k_all, i_all, z_all = noise.merged(int(levels.max()))
    n_ev = int(np.searchsorted(t_all, horizon, side="right"))
    # retained events, with their interval index
    ev_interval = np.maximum(np.searchsorted(edges, t_all[:n_ev], side="left"), 1)
    retained = k_all[:n_ev] <= levels[ev_interval - 1]

    st = _AuxState(_as_state(x0, d), with_flows, d)
    times = [0.0]
    states = [st.y + a_of(0.0) * delta_vec]
    events: list[JumpEvent] = []
    event_flows: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    # integration breakpoints: interval edges and retained event times
    bps: list[tuple[float, int]] = [(float(t), -1) for t in edges[1:]]
    bps += [(float(t_all[m]), m) for m in range(n_ev) if retained[m]]
    bps.sort(key=lambda p: (p[0], p[1]))

    t_cur = 0.0
    for t_next, ev_idx in bps:
        if t_next > t_cur:
            j = max(int(np.searchsorted(edges, t_next, side="left")), 1)
            h_target = (edges[j] - edges[j - 1]) / substeps
            n_sub = max(1, int(math.ceil((t_next - t_cur) / h_target - 1e-12)))
            v = _rk4(rhs, st.pack(), t_cur, t_next, n_sub)
            st.unpack(v, d)
            st.track_norms()
            t_cur = t_next
        if ev_idx >= 0:
            z = z_all[ev_idx]
            x_pre = st.y + a_of(t_cur) * delta_vec
            events.append(
                JumpEvent(
                    t=t_cur,
                    k=int(k_all[ev_idx]),
                    i=int(i_all[ev_idx]),
                    z=z.copy(),
                    x_pre=x_pre.copy(),
                    interval=int(ev_interval[ev_idx]),
                )
            )
            st.y = st.y + np.atleast_1d(np.asarray(model.jump(z, x_pre), dtype=float))
            if with_flows:
                G = model.jac_jump_x(z, x_pre)
                Mjump = np.eye(d) + G
                cond_ok = np.linalg.cond(Mjump) < 1e12
                if not cond_ok:
                    raise np.linalg.LinAlgError(
                        f"I + grad_x c singular at jump (k={int(k_all[ev_idx])}, "
                        f"i={int(i_all[ev_idx])}, t={t_cur})"
                    )
                st.Y = Mjump @ st.Y
                st.Yt = np.linalg.solve(Mjump.T, st.Yt.T).T  # Yt (I+G)^-1
                st.track_norms()
                event_flows[(int(k_all[ev_idx]), int(i_all[ev_idx]))] = (
                    st.Y.copy(),
                    st.Yt.copy(),
                )
        times.append(t_cur)
        states.append(st.y + a_of(t_cur) * delta_vec)

    traj = Trajectory(
        scheme="auxiliary",
        x0=_as_state(x0, d),
        horizon=float(horizon),
        times=np.asarray(times),
        states=np.asarray(states),
        events=events,
        edges=edges,
        levels=levels,
        substeps=substeps,
        q=q,
        a2_edges=a2_edges,
    )
    if not with_flows:
        return traj
    flow_data = {
        "Y_T": st.Y.copy(),
        "Yt_T": st.Yt.copy(),
        "events": event_flows,
        "max_Y": st.max_Y,
        "max_Yt": st.max_Yt,
    }
    return traj, flow_data


def simulate_coupled(
    model: JumpModel,
    grid: TimeGrid,
    horizon: float,
    noise: NoiseRealization,
    x0,
    y0,
    scheme: str = "truncated-euler",
    substeps: int = 8,
):
    """Two trajectories driven by the identical noise (synchronous coupling)."""
    if scheme == "truncated-euler":
        a = simulate_truncated_euler(model, grid, horizon, noise, x0)
        b = simulate_truncated_euler(model, grid, horizon, noise, y0)
    elif scheme == "auxiliary":
        a = simulate_auxiliary(model, grid, horizon, noise, x0, substeps=substeps)
        b = simulate_auxiliary(model, grid, horizon, noise, y0, substeps=substeps)
    else:
        raise ValueError(f"unsupported coupled scheme {scheme!r}")
    return a, b


def simulate(model: JumpModel, config: SchemeConfig, noise: NoiseRealization | None = None,
             seed=None) -> Trajectory:
    """Dispatch a single run per the scheme config; samples noise if not given."""
    grid = config.make_grid()
    fixed = None
    if config.scheme == "constant-ref":
        fixed = model.tail_table().level(config.step)
    if noise is None:
        if seed is None:
            raise ValueError("need either a noise realization or a seed")
        spec = seed if not isinstance(seed, int) else derive_path_seed(seed, 0)
        K = required_annuli(model, grid, config.horizon, fixed)
        noise = sample_noise(model, config.horizon, K, spec)
    if config.scheme == "auxiliary":
        return simulate_auxiliary(
            model, grid, config.horizon, noise, config.x0, substeps=config.substeps
        )
    return simulate_truncated_euler(
        model, grid, config.horizon, noise, config.x0, fixed_level=fixed
    )


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Terminal samples keyed by path id plus the seed audit."""

    samples: np.ndarray  # (n_paths, d), row p from path id p
    master_seed: int
    path_ids: np.ndarray
    config: SchemeConfig

    def seed_audit(self) -> list[dict]:
        return [
            {"path_id": int(p), "master": int(self.master_seed)} for p in self.path_ids
        ]

    def to_csv(self, path) -> None:
        d = self.samples.shape[1]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["path_id", "master_seed"] + [f"x{i}" for i in range(d)])
            for p, row in zip(self.path_ids, self.samples):
                w.writerow([int(p), int(self.master_seed)] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# vectorized ensembles for separable models c(z, x) = g(z) sigma(x), d = 1
# ---------------------------------------------------------------------------


def _pooled_jumps(model: JumpModel, T: float, K: int, rng: np.random.Generator, m: int):
    """All jumps of m paths over (0, T], pooled: (path, time, annulus, z)."""
    from .sampler import _annulus_masses, _sample_marks

    masses = _annulus_masses(model, K)
    paths, times, anns, zs = [], [], [], []
    for k in range(1, K + 1):
        lam = T * masses[k - 1]
        if lam == 0.0:
            continue
        counts = rng.poisson(lam, m)
        tot = int(counts.sum())
        if tot == 0:
            continue
        paths.append(np.repeat(np.arange(m), counts))
        times.append((1.0 - rng.random(tot)) * T)
        if model.radial_mark_ppf is not None:
            r = model.radial_mark_ppf(k, rng.random(tot))
            sign = np.where(rng.random(tot) < 0.5, -1.0, 1.0)
            zs.append(r * sign)
        else:
            zk = _sample_marks(model, k, tot, rng)
            zs.append(zk[:, 0])
        anns.append(np.full(tot, k, dtype=np.int64))
    if not paths:
        empty = np.empty(0)
        return np.empty(0, dtype=np.int64), empty, np.empty(0, dtype=np.int64), empty
    return (
        np.concatenate(paths),
        np.concatenate(times),
        np.concatenate(anns),
        np.concatenate(zs),
    )


def separable_terminal_kernel(
    model: JumpModel,
    edges: np.ndarray,
    levels: np.ndarray,
    x0: float,
    m: int,
    path: np.ndarray,
    times: np.ndarray,
    anns: np.ndarray,
    zvals: np.ndarray,
) -> np.ndarray:
    """Terminal states of m paths of the truncated Euler scheme, given pooled jumps.

    Same per-interval update as simulate_truncated_euler (frozen state within
    each interval), vectorized across paths for c(z, x) = g(z) sigma(x).
    """
    sep = model.separable
    if sep is None or model.d != 1:
        raise ValueError("separable kernel needs a separable d = 1 model")
    N = len(edges) - 1
    gam = np.diff(edges)
    j = np.maximum(np.searchsorted(edges, times, side="left"), 1)
    keep = anns <= levels[j - 1]
    gj = np.zeros(len(times))
    gj[keep] = sep.g(zvals[keep])
    if sep.additive and sep.linear_drift is not None:
        # linear recursion solved in closed form:
        # X_N = x0 prod fac_i + sum_jumps g(Z) prod_{i > j} fac_i
        fac = 1.0 - gam * sep.linear_drift
        W = np.ones(N + 1)
        W[:-1] = np.cumprod(fac[::-1])[::-1]  # W[n] = prod_{i>n} fac_i, W[N] = 1
        contrib = gj * W[j]
        X = W[0] * x0 + np.bincount(path, weights=contrib, minlength=m)
        return X
    # general separable: dense per-interval jump sums + explicit recursion
    S = np.zeros((m, N))
    np.add.at(S, (path[keep], j[keep] - 1), gj[keep])
    X = np.full(m, float(x0))
    drift = model.drift_vec
    if drift is None:
        raise ValueError("separable kernel needs a vectorized drift")
    for n in range(N):
        X = X + gam[n] * drift(X) + sep.sigma(X) * S[:, n]
    return X


def ensemble_terminal_separable(
    model: JumpModel,
    edges: np.ndarray,
    levels: np.ndarray,
    x0: float,
    n_paths: int,
    master_seed: int,
    tag: int = 0,
    chunk: int = 50_000,
) -> np.ndarray:
    """Vectorized terminal ensemble for separable d = 1 models.

    Seeding is per (master_seed, tag, chunk index), single-threaded, so the
    result is deterministic and independent of any thread configuration.
    Used by the experiment harness for large Monte-Carlo studies; the
    general ensemble_terminal below keeps the per-path seed contract.
    """
    T = float(edges[-1])
    K = int(levels.max())
    out = np.empty(n_paths)
    # bound pooled-array memory: ~1e7 jumps per chunk
    from .sampler import _annulus_masses

    rate = float(np.sum(_annulus_masses(model, K)))
    per_path = max(T * rate, 1.0)
    chunk = max(256, min(chunk, int(1e7 / per_path)))
    n_chunks = (n_paths + chunk - 1) // chunk
    for ci in range(n_chunks):
        lo, hi = ci * chunk, min((ci + 1) * chunk, n_paths)
        m = hi - lo
        seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(0x534550, tag, ci))
        rng = np.random.Generator(np.random.Philox(seq))
        path, times, anns, zvals = _pooled_jumps(model, T, K, rng, m)
        out[lo:hi] = separable_terminal_kernel(
            model, edges, levels, float(x0), m, path, times, anns, zvals
        )
    return out


def ensemble_terminal(
    model: JumpModel,
    config: SchemeConfig,
    n_paths: int,
    master_seed: int,
    threads: int = 1,
) -> EnsembleResult:
    """n_paths independent terminal states with per-path derived seeds.

    Deterministic for a fixed master seed regardless of thread count or
    execution order: path p always consumes the stream derived from
    (master_seed, p), and results are keyed by path id.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    grid = config.make_grid()
    fixed = model.tail_table().level(config.step) if config.scheme == "constant-ref" else None
    # required_annuli extends the shared grid past the horizon, so the cache
    # is fully built before any worker thread reads it
    K = required_annuli(model, grid, config.horizon, fixed)

    def one(pid: int):
        spec = derive_path_seed(master_seed, pid)
        noise = sample_noise(model, config.horizon, K, spec)
        if config.scheme == "auxiliary":
            traj = simulate_auxiliary(
                model, grid, config.horizon, noise, config.x0, substeps=config.substeps
            )
        else:
            traj = simulate_truncated_euler(
                model, grid, config.horizon, noise, config.x0, fixed_level=fixed
            )
        return pid, traj.terminal

    out = np.empty((n_paths, model.d))
    if threads <= 1:
        for pid in range(n_paths):
            _, term = one(pid)
            out[pid] = term
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for pid, term in pool.map(one, range(n_paths)):
                out[pid] = term
    return EnsembleResult(
        samples=out,
        master_seed=master_seed,
        path_ids=np.arange(n_paths),
        config=config,
    )
