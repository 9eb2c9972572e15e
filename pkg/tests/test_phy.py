import numpy as np
import pytest

from rankcoord import phy
from rankcoord.phy import (LinkState, ReceiveFilter, achievable_rate,
                           build_codebook, dump_codebook, interference_covariance,
                           inv_hermitian, load_codebook, mmse_filter,
                           per_stream_sinr, rates_from_sinr, sinr_mismatched,
                           sinr_mmse_exact)


def randc(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


class TestCodebook:
    def test_entry_count_and_shape(self):
        book = build_codebook(4, bits_per_rank=4)
        for r in range(1, 5):
            assert book[r].shape == (16, 4, r)

    def test_full_rank_entries_unitary(self):
        book = build_codebook(4, bits_per_rank=4)
        for f in book[4]:
            np.testing.assert_allclose(f.conj().T @ f, np.eye(4), atol=1e-9)

    def test_frobenius_norm_equals_rank(self):
        book = build_codebook(4, bits_per_rank=3)
        for r, mats in book.items():
            norms = np.linalg.norm(mats, axis=(1, 2)) ** 2
            np.testing.assert_allclose(norms, r, atol=1e-9)

    def test_columns_orthonormal_all_ranks(self):
        for n_tx in (2, 4, 8):
            book = build_codebook(n_tx, bits_per_rank=2)
            for r, mats in book.items():
                prod = mats.conj().transpose(0, 2, 1) @ mats
                np.testing.assert_allclose(prod, np.broadcast_to(np.eye(r), prod.shape),
                                           atol=1e-9)

    def test_unsupported_n_tx(self):
        with pytest.raises(ValueError):
            build_codebook(3)

    def test_dump_load_roundtrip(self, tmp_path):
        book = build_codebook(4, bits_per_rank=2)
        path = tmp_path / "book.txt"
        dump_codebook(book, path)
        loaded = load_codebook(path)
        for r in book:
            np.testing.assert_array_equal(book[r], loaded[r])


class TestMmseFilter:
    def test_noiseless_limit_inverts_channel(self):
        rng = np.random.default_rng(0)
        h = randc(rng, 4, 4)
        f = build_codebook(4, 2)[2][1]
        link = LinkState(precoder=f, alpha=1.0, es=2.0, noise_power=1e-9)
        filt = mmse_filter(link, h, [], "mmse_irc_ideal")
        np.testing.assert_allclose(filt.G @ (h @ f), np.eye(2), atol=1e-6)

    def test_siso_closed_form(self):
        # N_r = 1, L = 1, one interferer: SINR matches the scalar formula
        rng = np.random.default_rng(1)
        h = randc(rng, 1, 2)
        hj = randc(rng, 1, 2)
        f = build_codebook(2, 1)[1][0]
        fj = build_codebook(2, 1)[1][1]
        link = LinkState(precoder=f, alpha=0.8, es=1.5, noise_power=0.3,
                         interferers=[(0.4, 1.5, fj)])
        filt = mmse_filter(link, h, [hj], "mmse_irc_ideal")
        rho = per_stream_sinr(link, filt, h, [hj])
        expected = (0.8 * abs((h @ f)[0, 0]) ** 2 * 1.5
                    / (0.4 * abs((hj @ fj)[0, 0]) ** 2 * 1.5 + 0.3))
        np.testing.assert_allclose(rho, [expected], rtol=1e-10)

    def test_ideal_equals_simplified_for_full_rank_interferer(self):
        # a rank-n_tx unitary interferer precoder gives F F^H = I: the two
        # covariance models coincide
        rng = np.random.default_rng(2)
        h = randc(rng, 4, 4)
        hj = randc(rng, 4, 4)
        book = build_codebook(4, 2)
        link = LinkState(precoder=book[2][0], alpha=1.0, es=1.0, noise_power=0.1,
                         interferers=[(0.5, 1.0, book[4][3])])
        gi = mmse_filter(link, h, [hj], "mmse_irc_ideal").G
        gs = mmse_filter(link, h, [hj], "mmse_irc_simplified").G
        np.testing.assert_allclose(gi, gs, atol=1e-10)

    def test_mmse_beats_random_filters(self):
        # optimality property, also exercised by the acceptance suite
        rng = np.random.default_rng(3)
        book = build_codebook(4, 2)
        for trial in range(20):
            h = randc(rng, 4, 4)
            hj = randc(rng, 4, 4)
            link = LinkState(precoder=book[2][trial % 4], alpha=1.0, es=1.0,
                             noise_power=0.2, interferers=[(0.7, 1.0, book[1][1])])
            filt = mmse_filter(link, h, [hj], "mmse_irc_ideal")
            rho_opt = per_stream_sinr(link, filt, h, [hj])
            for _ in range(100):
                g = randc(rng, 2, 4)
                g /= np.linalg.norm(g, axis=1, keepdims=True)
                rho = per_stream_sinr(link, ReceiveFilter(g, "random"), h, [hj])
                assert np.all(rho <= rho_opt + 1e-9)


class TestPerStreamSinr:
    def test_unit_gain_case(self):
        # identity H, F = e1, G = e1^T, one unit interferer, unit noise -> 1/2
        h = np.eye(2).astype(complex)
        f = np.array([[1.0], [0.0]], dtype=complex)
        hj = np.eye(2).astype(complex)
        link = LinkState(precoder=f, alpha=1.0, es=1.0, noise_power=1.0,
                         interferers=[(1.0, 1.0, f)])
        filt = ReceiveFilter(np.array([[1.0, 0.0]], dtype=complex), "manual")
        rho = per_stream_sinr(link, filt, h, [hj])
        np.testing.assert_allclose(rho, [0.5], rtol=1e-12)

    def test_matched_filter_siso(self):
        rng = np.random.default_rng(4)
        h = randc(rng, 3, 2)
        f = build_codebook(2, 1)[1][0]
        heff = (h @ f)[:, 0]
        g = (heff.conj() / np.linalg.norm(heff))[None, :]
        link = LinkState(precoder=f, alpha=1.0, es=1.0, noise_power=0.25)
        rho = per_stream_sinr(link, ReceiveFilter(g, "matched"), h, [])
        np.testing.assert_allclose(rho, [np.linalg.norm(heff) ** 2 / 0.25], rtol=1e-10)

    def test_random_case_matches_scalar_recomputation(self):
        rng = np.random.default_rng(5)
        book = build_codebook(2, 2)
        h = randc(rng, 2, 2)
        hj = randc(rng, 2, 2)
        f = book[2][1]
        fj = book[1][2]
        link = LinkState(precoder=f, alpha=0.9, es=2.0, noise_power=0.4,
                         interferers=[(0.3, 1.0, fj)])
        filt = mmse_filter(link, h, [hj], "mmse_irc_ideal")
        rho = per_stream_sinr(link, filt, h, [hj])
        # independent scalar-by-scalar evaluation of the definition
        for m in range(2):
            g = filt.G[m]
            num = 0.9 * abs(g @ h @ f[:, m]) ** 2 * (2.0 / 2)
            den = 0.3 * (1.0 / 1) * np.sum(np.abs(g @ hj @ fj) ** 2)
            den += 0.4 * np.sum(np.abs(g) ** 2)
            den += 0.9 * (2.0 / 2) * sum(abs(g @ h @ f[:, n]) ** 2
                                         for n in range(2) if n != m)
            np.testing.assert_allclose(rho[m], num / den, rtol=1e-10)

    def test_interference_monotonicity_fixed_filter(self):
        rng = np.random.default_rng(6)
        book = build_codebook(4, 2)
        h = randc(rng, 4, 4)
        hj = randc(rng, 4, 4)
        f = book[2][0]
        base = LinkState(precoder=f, alpha=1.0, es=1.0, noise_power=0.2)
        filt = mmse_filter(base, h, [], "mmse_irc_ideal")
        rho0 = per_stream_sinr(base, filt, h, [])
        more = LinkState(precoder=f, alpha=1.0, es=1.0, noise_power=0.2,
                         interferers=[(0.5, 1.0, book[1][0])])
        rho1 = per_stream_sinr(more, filt, h, [hj])
        assert np.all(rho1 <= rho0 + 1e-12)

    def test_equal_power_capacity_oracle(self):
        # F = top-L right singular vectors: linear MMSE sum rate equals the
        # equal-power capacity over the top eigenmodes
        rng = np.random.default_rng(7)
        h = randc(rng, 4, 4)
        sigma2, es = 0.5, 2.0
        _, s, vh = np.linalg.svd(h)
        for l in range(1, 5):
            f = vh.conj().T[:, :l]
            link = LinkState(precoder=f, alpha=1.0, es=es, noise_power=sigma2)
            filt = mmse_filter(link, h, [], "mmse_irc_ideal")
            rho = per_stream_sinr(link, filt, h, [])
            rate = achievable_rate(rho, cap=np.inf)
            expected = np.sum(np.log2(1.0 + s[:l] ** 2 * (es / l) / sigma2))
            np.testing.assert_allclose(rate, expected, rtol=1e-8)


class TestAchievableRate:
    def test_log2_of_two(self):
        assert achievable_rate([1.0]) == 1.0

    def test_zero_sinr(self):
        assert achievable_rate([0.0, 0.0]) == 0.0

    def test_cap_binding(self):
        assert achievable_rate([1e6], cap=6.0) == 6.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            achievable_rate([-0.1])


class TestBatchedKernels:
    def test_inv_hermitian_matches_lapack(self):
        rng = np.random.default_rng(8)
        for n in (1, 2, 3, 4):
            x = randc(rng, 50, n, n)
            m = x @ x.conj().transpose(0, 2, 1) + 0.5 * np.eye(n)
            np.testing.assert_allclose(inv_hermitian(m), np.linalg.inv(m),
                                       rtol=1e-9, atol=1e-12)

    def test_exact_kernel_matches_contract_ops(self):
        rng = np.random.default_rng(9)
        book = build_codebook(4, 2)
        for trial in range(10):
            h = randc(rng, 4, 4)
            hj = randc(rng, 4, 4)
            l = 1 + trial % 4
            f = book[l][trial % 4]
            link = LinkState(precoder=f, alpha=0.8, es=1.0, noise_power=0.3,
                             interferers=[(0.6, 1.0, book[2][1])])
            filt = mmse_filter(link, h, [hj], "mmse_irc_ideal")
            rho_ref = per_stream_sinr(link, filt, h, [hj])
            a = np.sqrt(0.8 * 1.0 / l) * (h @ f)
            s = interference_covariance(link, [hj], "mmse_irc_ideal") \
                + 0.3 * np.eye(4)
            rho_fast = sinr_mmse_exact(a[None], inv_hermitian(s[None]))[0]
            np.testing.assert_allclose(rho_fast, rho_ref, rtol=1e-8)

    def test_mismatched_kernel_matches_contract_ops(self):
        rng = np.random.default_rng(10)
        book = build_codebook(4, 2)
        h = randc(rng, 4, 4)
        hj = randc(rng, 4, 4)
        f = book[3][2]
        link = LinkState(precoder=f, alpha=1.0, es=1.0, noise_power=0.2,
                         interferers=[(0.5, 1.0, book[2][3])])
        filt = mmse_filter(link, h, [hj], "mmse_irc_simplified")
        rho_ref = per_stream_sinr(link, filt, h, [hj])
        a = np.sqrt(1.0 / 3) * (h @ f)
        s_act = interference_covariance(link, [hj], "mmse_irc_ideal") + 0.2 * np.eye(4)
        s_design = interference_covariance(link, [hj], "mmse_irc_simplified") \
            + 0.2 * np.eye(4)
        r_design = a @ a.conj().T + s_design
        rho_fast = sinr_mismatched(a[None], inv_hermitian(r_design[None]), s_act[None])[0]
        np.testing.assert_allclose(rho_fast, rho_ref, rtol=1e-8)

    def test_exact_equals_mismatched_with_true_design(self):
        rng = np.random.default_rng(11)
        a = randc(rng, 5, 4, 2)
        x = randc(rng, 5, 4, 6)
        s = x @ x.conj().transpose(0, 2, 1) + 0.3 * np.eye(4)
        r = a @ a.conj().transpose(0, 2, 1) + s
        rho1 = sinr_mmse_exact(a, inv_hermitian(s))
        rho2 = sinr_mismatched(a, inv_hermitian(r), s)
        np.testing.assert_allclose(rho1, rho2, rtol=1e-8)

    def test_rates_from_sinr_matches_scalar(self):
        rho = np.array([[0.5, 3.0], [1e9, 0.0]])
        np.testing.assert_allclose(
            rates_from_sinr(rho, cap=6.0),
            [achievable_rate(rho[0], 6.0), achievable_rate(rho[1], 6.0)])
