import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpinv.steps import StepSequence, TimeGrid, check_step_lemma, omega_bar


def brute_force_u(gammas, rho, alpha):
    """Independent oracle: direct double-loop summation of u_n."""
    Gamma = np.cumsum(gammas)
    u = np.zeros(len(gammas))
    for n in range(len(gammas)):
        for i in range(n + 1):
            u[n] += gammas[i] ** (1 + alpha) * math.exp(-rho * (Gamma[n] - Gamma[i]))
    return u


class TestGamma:
    def test_harmonic(self):
        seq = StepSequence("harmonic", scale=1.0)
        assert seq.gamma(3) == pytest.approx(1.0 / 3.0)

    def test_power_half(self):
        seq = StepSequence("power", scale=1.0, exponent=0.5)
        assert seq.gamma(4) == pytest.approx(0.5)

    def test_explicit_lookup(self):
        seq = StepSequence("explicit", values=(0.5, 0.25))
        assert seq.gamma(2) == 0.25

    def test_explicit_out_of_range(self):
        seq = StepSequence("explicit", values=(0.5, 0.25))
        with pytest.raises(IndexError):
            seq.gamma(3)

    def test_bad_index(self):
        with pytest.raises(ValueError):
            StepSequence("harmonic").gamma(0)

    def test_increasing_explicit_rejected(self):
        with pytest.raises(ValueError):
            StepSequence("explicit", values=(0.25, 0.5))

    def test_cap(self):
        seq = StepSequence("harmonic", scale=4.0, gamma_max=1.0)
        assert seq.gamma(1) == 1.0
        assert seq.gamma(8) == 0.5

    @given(st.integers(min_value=1, max_value=10_000))
    def test_monotone_harmonic(self, n):
        seq = StepSequence("harmonic", scale=2.0)
        assert seq.gamma(n + 1) <= seq.gamma(n)

    @given(
        st.integers(min_value=1, max_value=10_000),
        st.floats(min_value=0.05, max_value=1.0),
    )
    def test_monotone_power(self, n, a):
        seq = StepSequence("power", scale=1.5, exponent=a)
        assert seq.gamma(n + 1) <= seq.gamma(n)


class TestTimeGrid:
    def test_locate_harmonic(self):
        grid = TimeGrid(StepSequence("harmonic", scale=1.0))
        # Gamma_1 = 1, Gamma_2 = 1.5
        assert grid.locate(1.4) == (1, 1.0)

    def test_locate_zero(self):
        grid = TimeGrid(StepSequence("harmonic"))
        assert grid.locate(0.0) == (0, 0.0)

    def test_locate_left_closed(self):
        grid = TimeGrid(StepSequence("harmonic"))
        g3 = grid.Gamma(3)
        n, tau = grid.locate(g3)
        assert n == 3 and tau == g3

    def test_locate_negative(self):
        grid = TimeGrid(StepSequence("harmonic"))
        with pytest.raises(ValueError):
            grid.locate(-0.1)

    def test_increments_exact(self):
        grid = TimeGrid(StepSequence("harmonic"))
        G = grid.Gammas(5000)
        g = StepSequence("harmonic").gammas(5000)
        # differences of compensated sums are exact up to ~1 ulp of Gamma itself
        np.testing.assert_allclose(np.diff(G), g, rtol=0, atol=4 * np.spacing(G[-1]))
        assert np.all(np.diff(G) > 0)

    def test_grid_consistency_epsilon(self):
        grid = TimeGrid(StepSequence("harmonic"))
        for n in (1, 2, 17, 100):
            Gn = grid.Gamma(n)
            gnext = grid.gamma(n + 1)
            for eps in (0.0, 0.25 * gnext, 0.999 * gnext):
                N, tau = grid.locate(Gn + eps)
                assert (N, tau) == (n, Gn)

    def test_explicit_grid_exhaustion(self):
        grid = TimeGrid(StepSequence("explicit", values=(0.5, 0.25)))
        assert grid.locate(0.6) == (1, 0.5)
        with pytest.raises(IndexError):
            grid.locate(2.0)

    def test_compensated_accuracy(self):
        # sum of 1e6 harmonic steps stays within 1 ulp of a high-precision sum
        n = 1_000_000
        grid = TimeGrid(StepSequence("harmonic"))
        val = grid.Gamma(n)
        import mpmath

        mpmath.mp.dps = 30
        exact = mpmath.nsum(lambda i: 1 / i, [1, n])
        assert abs(val - float(exact)) <= abs(float(exact)) * 1e-15


class TestOmegaBar:
    def test_harmonic_window(self):
        seq = StepSequence("harmonic", scale=1.0)
        w = omega_bar(seq, 100, 10_000)
        assert 1.0 <= w <= 1.03

    def test_constant_steps(self):
        seq = StepSequence("explicit", values=(0.1,) * 50)
        assert omega_bar(seq, 1, 49) == 0.0

    def test_power_half_direct_evaluation(self):
        seq = StepSequence("power", scale=1.0, exponent=0.5)
        # oracle: direct evaluation of the quotient sequence on the window
        lo, hi = 1000, 50_000
        g = seq.gammas(hi + 1)
        q = (g[lo - 1 : hi] - g[lo : hi + 1]) / g[lo : hi + 1] ** 2
        assert omega_bar(seq, lo, hi) == pytest.approx(float(q.max()), rel=1e-12)
        # the quotient (n^-1/2 - (n+1)^-1/2) (n+1) -> 1/2 * n^1/2 * ... decays to 0
        assert omega_bar(seq, lo, hi) < 0.02

    def test_bad_window(self):
        with pytest.raises(ValueError):
            omega_bar(StepSequence("harmonic"), 10, 10)


class TestStepLemma:
    def test_u_matches_brute_force(self):
        seq = StepSequence("harmonic")
        rep = check_step_lemma(seq, rho=1.5, alpha=1.0, n_max=300)
        oracle = brute_force_u(seq.gammas(300), 1.5, 1.0)
        np.testing.assert_allclose(rep.u, oracle, rtol=1e-10)

    def test_harmonic_ratio_bounded(self):
        rep = check_step_lemma(StepSequence("harmonic"), rho=1.5, alpha=1.0, n_max=2000)
        assert rep.condition_ok
        assert rep.max_ratio < 10.0
        assert rep.ratio_bounded

    def test_constant_steps_geometric_oracle(self):
        gamma = 0.1
        n = 400
        seq = StepSequence("explicit", values=(gamma,) * n)
        rho, alpha = 0.8, 1.0
        rep = check_step_lemma(seq, rho=rho, alpha=alpha, n_max=n)
        # geometric series oracle: u_n = gamma^2 * (1 - r^n) / (1 - r), r = exp(-rho*gamma)
        r = math.exp(-rho * gamma)
        u_inf = gamma**2 / (1 - r)
        assert rep.u[-1] == pytest.approx(u_inf * (1 - r**n), rel=1e-12)
        assert rep.max_ratio <= u_inf / gamma**alpha + 1e-12

    def test_single_term(self):
        seq = StepSequence("harmonic")
        rep = check_step_lemma(seq, rho=1.0, alpha=1.0, n_max=1)
        assert rep.u[0] == pytest.approx(1.0)  # gamma_1^(1+alpha) = 1
        assert rep.ratio[0] == pytest.approx(1.0)  # = gamma_1

    def test_comparison_inequality_holds_from_n_star(self):
        seq = StepSequence("harmonic")
        n_max = 2000
        rep = check_step_lemma(seq, rho=1.5, alpha=1.0, n_max=n_max)
        assert rep.comparison_ok
        g = seq.gammas(n_max)
        Gamma = np.cumsum(g)
        w = rep.omega_bar
        # brute-force pairwise verification on a thinned index set
        idx = np.unique(np.concatenate([np.arange(rep.n_star, min(rep.n_star + 50, n_max + 1)),
                                        np.geomspace(rep.n_star, n_max, 60).astype(int)]))
        for i in idx:
            n_arr = idx[idx >= i]
            lhs = g[i - 1]
            rhs = np.exp(2 * w * (Gamma[n_arr - 1] - Gamma[i - 1])) * g[n_arr - 1]
            assert np.all(lhs <= rhs * (1 + 1e-12))

    def test_summary_runs(self):
        rep = check_step_lemma(StepSequence("harmonic"), 1.5, 1.0, 200)
        assert "rho=1.5" in rep.summary()


@settings(max_examples=25)
@given(st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=3, max_size=30))
def test_explicit_sequences_sorted_always_accepted(vals):
    vals = sorted(vals, reverse=True)
    seq = StepSequence("explicit", values=tuple(vals))
    grid = TimeGrid(seq)
    G = grid.Gammas(len(vals))
    assert np.all(np.diff(G) > 0)
