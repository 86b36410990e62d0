import math

import numpy as np
import pytest
from scipy import stats

from jumpinv import model as M
from jumpinv.sampler import (
    SeedSpec,
    derive_path_seed,
    dump_noise,
    load_noise,
    sample_noise,
)


@pytest.fixture(scope="module")
def additive():
    return M.preset_additive_linear()


@pytest.fixture(scope="module")
def alphastable():
    return M.preset_truncated_alpha_stable()


class TestSeeds:
    def test_deterministic(self):
        a = derive_path_seed(42, 7)
        b = derive_path_seed(42, 7)
        assert a == b

    def test_distinct_paths_differ(self):
        g0 = derive_path_seed(42, 0).generator(1)
        g1 = derive_path_seed(42, 1).generator(1)
        x0, x1 = g0.random(1_000_000), g1.random(1_000_000)
        corr = np.corrcoef(x0, x1)[0, 1]
        assert abs(corr) < 4 / math.sqrt(1_000_000)

    def test_master_zero_valid(self, additive):
        noise = sample_noise(additive, 1.0, 2, derive_path_seed(0, 0))
        assert noise.seed.master == 0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            derive_path_seed(-1, 0)


class TestSampleNoise:
    def test_reproducible_bitwise(self, additive):
        s = derive_path_seed(99, 3)
        a = sample_noise(additive, 2.0, 4, s)
        b = sample_noise(additive, 2.0, 4, s)
        assert np.array_equal(a.delta, b.delta)
        for k in range(4):
            assert np.array_equal(a.times[k], b.times[k])
            assert np.array_equal(a.marks[k], b.marks[k])

    def test_poisson_mean_count(self, additive):
        # mu(I_k) = 2 for h = 1, d = 1; mean count over n realizations = 2 +- 3 sigma
        n = 20_000
        counts = np.fromiter(
            (
                sample_noise(additive, 1.0, 1, derive_path_seed(5, i)).n_jumps(1)
                for i in range(n)
            ),
            dtype=float,
        )
        lam = 2.0
        assert abs(counts.mean() - lam) <= 3 * math.sqrt(lam / n)

    def test_zero_horizon(self, additive):
        noise = sample_noise(additive, 0.0, 3, derive_path_seed(1, 0))
        assert noise.n_jumps() == 0
        assert noise.delta.shape == (1,)

    def test_times_in_window_sorted(self, additive):
        noise = sample_noise(additive, 3.0, 3, derive_path_seed(2, 0))
        for k in range(1, 4):
            t = noise.times[k - 1]
            assert np.all((t > 0) & (t <= 3.0))
            assert np.all(np.diff(t) > 0)

    def test_marks_in_annulus(self, additive):
        noise = sample_noise(additive, 50.0, 4, derive_path_seed(3, 1))
        for k in range(1, 5):
            r = np.abs(noise.marks[k - 1][:, 0])
            if k == 1:
                assert np.all(r <= 1.0)
            else:
                assert np.all((r > k - 1) & (r <= k))

    def test_marks_uniform_annulus2(self, additive):
        # h = 1, k = 2: |Z| uniform on [1, 2], mean 1.5 within MC error; KS test
        rs = []
        for i in range(300):
            noise = sample_noise(additive, 40.0, 2, derive_path_seed(11, i))
            rs.append(np.abs(noise.marks[1][:, 0]))
        r = np.concatenate(rs)
        n = len(r)
        assert abs(r.mean() - 1.5) <= 3 * (1 / math.sqrt(12)) / math.sqrt(n)
        d_ks = stats.kstest(r, lambda x: np.clip(x - 1.0, 0, 1)).statistic
        assert d_ks < 1.63 / math.sqrt(n)  # 1% level

    def test_alpha_stable_mark_law(self, alphastable):
        # radial CDF on [1, 2] is (r^a - 1)/(2^a - 1); ppf path must match it
        a = alphastable.params["alpha"]
        rs = []
        for i in range(400):
            noise = sample_noise(alphastable, 60.0, 2, derive_path_seed(13, i))
            rs.append(np.abs(noise.marks[1][:, 0]))
        r = np.concatenate(rs)
        cdf = lambda x: np.clip((x**a - 1.0) / (2.0**a - 1.0), 0, 1)
        assert stats.kstest(r, cdf).statistic < 1.63 / math.sqrt(len(r))

    def test_rejection_matches_ppf_law(self, alphastable):
        # dual route: disable the exact inverse-CDF and compare laws
        import dataclasses

        no_ppf = dataclasses.replace(alphastable, radial_mark_ppf=None)
        rs_rej, rs_ppf = [], []
        for i in range(200):
            n1 = sample_noise(no_ppf, 50.0, 3, derive_path_seed(17, i))
            n2 = sample_noise(alphastable, 50.0, 3, derive_path_seed(917, i))
            rs_rej.append(np.abs(n1.marks[2][:, 0]))
            rs_ppf.append(np.abs(n2.marks[2][:, 0]))
        a_r, b_r = np.concatenate(rs_rej), np.concatenate(rs_ppf)
        stat = stats.ks_2samp(a_r, b_r).statistic
        n_eff = len(a_r) * len(b_r) / (len(a_r) + len(b_r))
        assert stat < 1.95 / math.sqrt(n_eff)

    def test_empty_annulus_alpha_stable(self, alphastable):
        # mu(I_1) = 0: annulus 1 never jumps
        noise = sample_noise(alphastable, 100.0, 2, derive_path_seed(4, 0))
        assert noise.n_jumps(1) == 0

    def test_superposition_counts(self, additive):
        # total count over B_3 is Poisson(horizon * mu(B_3)); check the mean
        n = 4000
        tot = np.fromiter(
            (
                sample_noise(additive, 1.0, 3, derive_path_seed(21, i)).n_jumps()
                for i in range(n)
            ),
            dtype=float,
        )
        lam = 6.0
        assert abs(tot.mean() - lam) <= 3 * math.sqrt(lam / n)

    def test_merged_sorted(self, additive):
        noise = sample_noise(additive, 5.0, 3, derive_path_seed(8, 0))
        t, k, i, z = noise.merged()
        assert np.all(np.diff(t) >= 0)
        assert len(t) == noise.n_jumps()
        # (annulus, index) pairs identify the original jump
        for tt, kk, ii in zip(t[:10], k[:10], i[:10]):
            assert noise.times[kk - 1][ii] == tt
        t2, _, _, _ = noise.merged(K=2)
        assert len(t2) == noise.n_jumps(1) + noise.n_jumps(2)


class TestReplayFormat:
    def test_roundtrip(self, tmp_path, alphastable):
        noise = sample_noise(alphastable, 7.0, 4, derive_path_seed(123, 45))
        p = tmp_path / "noise.bin"
        dump_noise(noise, p)
        back = load_noise(p)
        assert back.d == noise.d
        assert back.horizon == noise.horizon
        assert back.seed == noise.seed
        assert np.array_equal(back.delta, noise.delta)
        for k in range(noise.K_max):
            assert np.array_equal(back.times[k], noise.times[k])
            assert np.array_equal(back.marks[k], noise.marks[k])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_noise(p)
