import math

import numpy as np
import pytest

from jumpinv import integrator as I
from jumpinv import model as M
from jumpinv.sampler import derive_path_seed, sample_noise
from jumpinv.steps import StepSequence, TimeGrid


def no_jump_model(d=1, bbar=1.0):
    zero = M.RadialFn(lambda r: np.zeros_like(np.asarray(r, dtype=float)))
    return M.JumpModel(
        d=d,
        drift=lambda x: -bbar * np.asarray(x, dtype=float),
        drift_jac=lambda x: -bbar * np.eye(d),
        jump=lambda z, x: np.zeros(d),
        jump_jac_z=lambda z, x: np.zeros((d, d)),
        jump_jac_x=lambda z, x: np.zeros((d, d)),
        cbar=zero,
        cunder=zero,
        h=M.RadialFn(lambda r: np.ones_like(np.asarray(r, dtype=float))),
        bbar=bbar,
    )


@pytest.fixture(scope="module")
def additive():
    return M.preset_additive_linear()


@pytest.fixture(scope="module")
def alphastable():
    return M.preset_truncated_alpha_stable()


class TestTruncatedEuler:
    def test_identity_dynamics(self):
        model = no_jump_model(bbar=0.0)
        grid = TimeGrid(StepSequence("harmonic"))
        noise = sample_noise(model, 2.0, 1, derive_path_seed(1, 0))
        traj = I.simulate_truncated_euler(model, grid, 2.0, noise, 1.3)
        assert np.all(traj.states == 1.3)

    def test_explicit_euler_step(self):
        model = no_jump_model()
        grid = TimeGrid(StepSequence("explicit", values=(0.25,)))
        noise = sample_noise(model, 0.25, 1, derive_path_seed(1, 0))
        traj = I.simulate_truncated_euler(model, grid, 0.25, noise, 2.0)
        assert traj.terminal[0] == pytest.approx(2.0 * 0.75)

    def test_partial_final_interval(self):
        model = no_jump_model()
        grid = TimeGrid(StepSequence("explicit", values=(0.5, 0.5)))
        noise = sample_noise(model, 0.75, 1, derive_path_seed(1, 0))
        traj = I.simulate_truncated_euler(model, grid, 0.75, noise, 1.0)
        # one full step of 0.5 then a partial 0.25 step
        assert traj.terminal[0] == pytest.approx(1.0 * 0.5 * 0.75)
        assert traj.times[-1] == 0.75

    def test_frozen_state_convention(self, additive):
        # all retained jumps in an interval see the pre-interval state
        grid = TimeGrid(StepSequence("harmonic"))
        hor = grid.Gamma(3)
        K = I.required_annuli(additive, grid, hor)
        noise = sample_noise(additive, hor, K, derive_path_seed(3, 5))
        traj = I.simulate_truncated_euler(additive, grid, hor, noise, 0.4)
        for ev in traj.events:
            j = ev.interval
            idx = int(np.where(traj.times == traj.edges[j - 1])[0][0])
            np.testing.assert_array_equal(ev.x_pre, traj.states[idx])

    def test_retention_rule(self, additive):
        grid = TimeGrid(StepSequence("harmonic"))
        hor = grid.Gamma(4)
        K = I.required_annuli(additive, grid, hor)
        noise = sample_noise(additive, hor, K, derive_path_seed(4, 2))
        traj = I.simulate_truncated_euler(additive, grid, hor, noise, 0.0)
        edges, levels = traj.edges, traj.levels
        retained = {(e.k, e.i) for e in traj.events}
        t_all, k_all, i_all, _ = noise.merged()
        for t, k, i in zip(t_all, k_all, i_all):
            if t > hor:
                continue
            j = max(int(np.searchsorted(edges, t, side="left")), 1)
            assert ((k, i) in retained) == (k <= levels[j - 1])

    def test_coverage_error(self, additive):
        grid = TimeGrid(StepSequence("harmonic"))
        hor = grid.Gamma(6)
        noise = sample_noise(additive, hor, 1, derive_path_seed(5, 0))
        with pytest.raises(I.CoverageError):
            I.simulate_truncated_euler(additive, grid, hor, noise, 0.0)

    def test_stationary_mean(self, additive):
        # long-run mean ~ int cbar dmu / bbar = 4 for the additive preset
        grid = TimeGrid(StepSequence("harmonic"))
        hor = grid.Gamma(2000)
        edges, levels = I.interval_structure(additive, grid, hor)
        n = 4000
        term = I.ensemble_terminal_separable(additive, edges, levels, 0.0, n, 909)
        se = term.std(ddof=1) / math.sqrt(n)
        assert abs(term.mean() - 4.0) <= 3.5 * se


class TestAuxiliary:
    def test_linear_ode(self):
        model = no_jump_model()
        grid = TimeGrid(StepSequence("explicit", values=(0.25,) * 8))
        noise = sample_noise(model, 2.0, 1, derive_path_seed(2, 0))
        traj = I.simulate_auxiliary(model, grid, 2.0, noise, 1.0)
        assert traj.terminal[0] == pytest.approx(math.exp(-2.0), abs=1e-7)

    def test_degenerate_model_constant(self):
        model = no_jump_model(bbar=0.0)
        grid = TimeGrid(StepSequence("harmonic"))
        noise = sample_noise(model, 1.5, 1, derive_path_seed(2, 1))
        traj = I.simulate_auxiliary(model, grid, 1.5, noise, 0.7)
        # cunder = 0 so a_t = 0; no drift, no jumps: X stays put
        assert np.allclose(traj.states, 0.7)
        assert traj.a_of(1.5) == 0.0

    def test_shift_enters_state(self, alphastable):
        # with positive cunder tail the compensator magnitude is positive
        grid = TimeGrid(StepSequence("harmonic"))
        hor = 1.4
        K = I.required_annuli(alphastable, grid, hor)
        noise = sample_noise(alphastable, hor, K, derive_path_seed(6, 3))
        traj = I.simulate_auxiliary(alphastable, grid, hor, noise, 0.0)
        assert traj.a_of(hor) > 0
        from jumpinv.model import gaussian_compensator

        tab = alphastable.tail_table()
        assert traj.a_of(hor) == pytest.approx(
            gaussian_compensator(alphastable, grid, tab, hor), rel=1e-12
        )

    def test_aux_vs_euler_self_convergence(self, additive):
        # same noise, decreasing-step euler vs auxiliary: E|difference| at t=1
        # shrinks as the partition refines (slope >= 0.4 on dyadic refinement)
        diffs = []
        hs = [0.25, 0.125, 0.0625, 0.03125]
        for h in hs:
            n = int(round(1.0 / h))
            grid = TimeGrid(StepSequence("explicit", values=(h,) * n))
            acc = 0.0
            n_paths = 60
            K = I.required_annuli(additive, grid, 1.0)
            for p in range(n_paths):
                noise = sample_noise(additive, 1.0, K, derive_path_seed(1234, p))
                a = I.simulate_truncated_euler(additive, grid, 1.0, noise, 0.5)
                b = I.simulate_auxiliary(additive, grid, 1.0, noise, 0.5)
                acc += abs(a.terminal[0] - b.terminal[0])
            diffs.append(acc / n_paths)
        slope = np.polyfit(np.log(hs), np.log(diffs), 1)[0]
        assert slope >= 0.4

    def test_trajectory_csv(self, tmp_path, additive):
        grid = TimeGrid(StepSequence("harmonic"))
        noise = sample_noise(additive, 1.0, I.required_annuli(additive, grid, 1.0),
                             derive_path_seed(7, 0))
        traj = I.simulate_truncated_euler(additive, grid, 1.0, noise, 0.0)
        p = tmp_path / "traj.csv"
        traj.to_csv(p)
        rows = p.read_text().strip().splitlines()
        assert rows[0] == "time,x0"
        assert len(rows) == len(traj.times) + 1


class TestCoupled:
    def test_same_start_identical(self, alphastable):
        grid = TimeGrid(StepSequence("harmonic"))
        hor = 1.2
        K = I.required_annuli(alphastable, grid, hor)
        noise = sample_noise(alphastable, hor, K, derive_path_seed(8, 1))
        a, b = I.simulate_coupled(alphastable, grid, hor, noise, 0.3, 0.3)
        np.testing.assert_array_equal(a.states, b.states)

    def test_additive_difference_recursion(self, additive):
        # additive jumps cancel: |X - Y|(Gamma_n) = |x - y| prod(1 - gamma_i bbar)
        seq = StepSequence("harmonic", scale=1.0, gamma_max=0.5)
        grid = TimeGrid(seq)
        hor = grid.Gamma(6)
        K = I.required_annuli(additive, grid, hor)
        noise = sample_noise(additive, hor, K, derive_path_seed(9, 4))
        a, b = I.simulate_coupled(additive, grid, hor, noise, 0.0, 1.0)
        pred = np.prod(1.0 - seq.gammas(6))
        assert abs(a.terminal[0] - b.terminal[0]) == pytest.approx(pred, rel=1e-12)

    def test_contraction_bound_small(self, alphastable):
        # E|X_t(x) - X_t(y)|^2 <= e^{-theta t}|x - y|^2 within MC error
        from jumpinv.model import theta

        th = theta(alphastable)
        seq = StepSequence("harmonic", scale=1.0, gamma_max=0.5)
        grid = TimeGrid(seq)
        t = 1.0
        K = I.required_annuli(alphastable, grid, t)
        n = 2000
        vals = np.empty(n)
        for p in range(n):
            noise = sample_noise(alphastable, t, K, derive_path_seed(321, p))
            a, b = I.simulate_coupled(alphastable, grid, t, noise, 0.0, 1.0)
            vals[p] = (a.terminal[0] - b.terminal[0]) ** 2
        bound = math.exp(-th * t)
        se = vals.std(ddof=1) / math.sqrt(n)
        assert vals.mean() <= bound + 3 * se


class TestEnsembles:
    def test_singleton_matches_simulate(self, additive):
        cfg = I.SchemeConfig(sequence=StepSequence("harmonic"), horizon=1.5, x0=0.5)
        res = I.ensemble_terminal(additive, cfg, 1, 77)
        traj = I.simulate(additive, cfg, seed=derive_path_seed(77, 0))
        np.testing.assert_array_equal(res.samples[0], traj.terminal)

    def test_thread_count_invariance(self, additive):
        cfg = I.SchemeConfig(sequence=StepSequence("harmonic"), horizon=1.2, x0=0.0)
        r1 = I.ensemble_terminal(additive, cfg, 24, 55, threads=1)
        r8 = I.ensemble_terminal(additive, cfg, 24, 55, threads=8)
        np.testing.assert_array_equal(r1.samples, r8.samples)

    def test_ensemble_csv_and_audit(self, tmp_path, additive):
        cfg = I.SchemeConfig(sequence=StepSequence("harmonic"), horizon=0.8, x0=0.0)
        res = I.ensemble_terminal(additive, cfg, 5, 99)
        audit = res.seed_audit()
        assert [a["path_id"] for a in audit] == [0, 1, 2, 3, 4]
        p = tmp_path / "ens.csv"
        res.to_csv(p)
        assert len(p.read_text().strip().splitlines()) == 6

    def test_separable_kernel_matches_general(self, additive, alphastable):
        # dual route: the vectorized kernel must reproduce the event-driven
        # engine exactly on identical jumps
        grid = TimeGrid(StepSequence("harmonic"))
        for model, x0 in ((additive, 0.7), (alphastable, -0.4)):
            hor = grid.Gamma(6)
            edges, levels = I.interval_structure(model, grid, hor)
            K = int(levels.max())
            noise = sample_noise(model, hor, K, derive_path_seed(31, 4))
            traj = I.simulate_truncated_euler(model, grid, hor, noise, x0)
            t_all, k_all, _, z_all = noise.merged(K)
            fast = I.separable_terminal_kernel(
                model, edges, levels, x0, 1,
                np.zeros(len(t_all), dtype=np.int64), t_all, k_all, z_all[:, 0],
            )
            assert fast[0] == pytest.approx(traj.terminal[0], rel=1e-12, abs=1e-14)

    def test_separable_ensemble_deterministic(self, additive):
        grid = TimeGrid(StepSequence("harmonic"))
        edges, levels = I.interval_structure(additive, grid, grid.Gamma(50))
        a = I.ensemble_terminal_separable(additive, edges, levels, 0.0, 500, 7)
        b = I.ensemble_terminal_separable(additive, edges, levels, 0.0, 500, 7)
        np.testing.assert_array_equal(a, b)

    def test_stationary_variance(self, additive):
        # sample variance ~ int cbar^2 dmu / (2 bbar) = 1
        grid = TimeGrid(StepSequence("harmonic"))
        edges, levels = I.interval_structure(additive, grid, grid.Gamma(3000))
        n = 20_000
        term = I.ensemble_terminal_separable(additive, edges, levels, 0.0, n, 2024)
        var = term.var(ddof=1)
        # stderr of the variance estimator via the fourth moment
        m4 = np.mean((term - term.mean()) ** 4)
        se = math.sqrt(max(m4 - var**2, 0.0) / n)
        assert abs(var - 1.0) <= 3.5 * se


class TestTruncationMonotonicity:
    def test_extra_annuli_no_op_when_c_vanishes(self):
        # enlarging the retained annuli only adds the new jumps; with c = 0
        # on the added annuli the path is unchanged
        def g(z):
            z = np.asarray(z, dtype=float)
            return np.where(np.abs(z) <= 2.0, np.exp(-np.abs(z) / 2.0), 0.0)

        zero = M.RadialFn(lambda r: np.zeros_like(np.asarray(r, dtype=float)))
        model = M.JumpModel(
            d=1,
            drift=lambda x: -np.asarray(x, dtype=float),
            drift_vec=lambda x: -x,
            jump=lambda z, x: np.array([float(g(np.asarray(z).reshape(-1)[0]))]),
            cbar=M.RadialFn(lambda r: np.exp(-np.asarray(r, dtype=float) / 2.0)),
            cunder=zero,
            h=M.RadialFn(lambda r: np.ones_like(np.asarray(r, dtype=float))),
            bbar=1.0,
            separable=M.SeparableJump(
                g=lambda zz: np.asarray(g(zz)),
                sigma=lambda xx: np.ones_like(np.asarray(xx, dtype=float)),
                additive=True,
                linear_drift=1.0,
            ),
            radial_mark_ppf=lambda k, u: (0.0 if k == 1 else float(k - 1))
            + np.asarray(u) * (k - (0.0 if k == 1 else float(k - 1))),
        )
        grid = TimeGrid(StepSequence("harmonic"))
        hor = grid.Gamma(4)
        noise = sample_noise(model, hor, 8, derive_path_seed(61, 0))
        lo = I.simulate_truncated_euler(model, grid, hor, noise, 0.2, fixed_level=2)
        hi = I.simulate_truncated_euler(model, grid, hor, noise, 0.2, fixed_level=8)
        np.testing.assert_allclose(lo.terminal, hi.terminal, rtol=0, atol=1e-15)
        assert len(hi.events) >= len(lo.events)
