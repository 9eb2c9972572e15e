import itertools

import numpy as np
import pytest

from rankcoord import phy
from rankcoord.feedback import (FeedbackReport, Quantizer, TerminalLink,
                                expected_rate, quantize_cqi,
                                select_ranks_and_precoders)
from rankcoord.phy import build_codebook


def randc(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


QC = Quantizer(4, 0.0, 30.0)
QD = Quantizer(3, 0.0, 8.0)
CAP = 6.0


# ---------------------------------------------------------------------------
# Independent oracle: naive loops, explicit inverses, scalar SINR formula
# ---------------------------------------------------------------------------

def oracle_link_rate(h_s, f, s_s, interferers, noise, strategy, cap=CAP):
    """One draw: explicit MMSE filter and scalar per-stream SINR evaluation.

    interferers: list of (scale_j, h_j, f_j).
    """
    l = f.shape[1]
    n_rx = h_s.shape[0]
    a = np.sqrt(s_s / l) * (h_s @ f)
    s_act = noise * np.eye(n_rx, dtype=complex)
    for scale_j, h_j, f_j in interferers:
        hf = h_j @ f_j
        s_act = s_act + (scale_j / f_j.shape[1]) * (hf @ hf.conj().T)
    if strategy == "mmse_irc_ideal":
        r = a @ a.conj().T + s_act
    else:
        r = a @ a.conj().T + noise * np.eye(n_rx, dtype=complex)
        for scale_j, h_j, _ in interferers:
            r = r + (scale_j / h_j.shape[1]) * (h_j @ h_j.conj().T)
    g = a.conj().T @ np.linalg.inv(r)
    total = 0.0
    for m in range(l):
        gm = g[m]
        num = abs(gm @ a[:, m]) ** 2
        den = float(noise * np.sum(np.abs(gm) ** 2))
        for scale_j, h_j, f_j in interferers:
            den += (scale_j / f_j.shape[1]) * np.sum(np.abs(gm @ (h_j @ f_j)) ** 2)
        for n in range(l):
            if n != m:
                den += abs(gm @ a[:, n]) ** 2
        total += min(np.log2(1.0 + num / den), cap)
    return total


def oracle_tilde(link: TerminalLink, codebook, l, i_ranks, strategy, cap=CAP):
    """Draw-averaged rate per (subband, precoder index) with exhaustive
    enumeration of the interferer precoder product codebook."""
    n_sub = link.n_subbands
    n_f = codebook[l].shape[0]
    blocks_per = np.bincount(link.block_subband, minlength=n_sub)
    out = np.zeros((n_sub, n_f))
    j_books = [codebook[i_ranks[j]] for j in range(len(link.interferers))]
    combos = list(itertools.product(*[range(b.shape[0]) for b in j_books])) or [()]
    for b, k in enumerate(link.block_subband):
        for fi in range(n_f):
            rates = []
            for combo in combos:
                interferers = [(link.interferers[j][1], link.interferers[j][2][b],
                                j_books[j][combo[j]])
                               for j in range(len(link.interferers))]
                rates.append(oracle_link_rate(link.h_serving[b], codebook[l][fi],
                                              link.signal_scale, interferers,
                                              link.noise_power, strategy, cap))
            out[k, fi] += np.mean(rates) / blocks_per[k]
    return out


def oracle_select(link: TerminalLink, codebook, strategy, mode="coordinated",
                  cap=CAP):
    """Full enumeration of the joint (serving rank, interference rank,
    precoder) selection with the spec tie-breaks."""
    lo, hi = link.serving_rank_bounds
    has_interf = len(link.interferers) > 0
    if has_interf:
        i_lo = max(b[3][0] for b in link.interferers)
        i_hi = min(b[3][1] for b in link.interferers)
        i_values = list(range(i_lo, i_hi + 1))
    else:
        i_values = [None]
    tables, objective = {}, {}
    for l in range(lo, hi + 1):
        for i in i_values:
            ranks = [i] * len(link.interferers) if i else []
            t = oracle_tilde(link, codebook, l, ranks, strategy, cap)
            tables[(l, i)] = t
            objective[(l, i)] = float(np.max(t, axis=1).mean())
    if mode == "baseline" and has_interf:
        tables = {(l, None): np.mean([tables[(l, i)] for i in i_values], axis=0)
                  for l in range(lo, hi + 1)}
        objective = {k: float(np.max(v, axis=1).mean()) for k, v in tables.items()}
        i_values = [None]
    best, best_val = None, -np.inf
    for l in range(lo, hi + 1):
        for i in i_values:
            if objective[(l, i)] > best_val:
                best, best_val = (l, i), objective[(l, i)]
    r_star, i_star = best
    t_star = tables[best]
    pmi = np.argmax(t_star, axis=1)
    cqi = QC.quantize(t_star[np.arange(t_star.shape[0]), pmi])
    delta = None
    if has_interf and mode == "coordinated":
        delta = QD.quantize(np.array(
            [[max(0.0, best_val - objective[(l, i)]) for i in i_values]
             for l in range(lo, hi + 1)]))
    return r_star, i_star, pmi, cqi, delta


def make_link(rng, n_rx=4, n_tx=4, n_subbands=2, n_interf=1, snr_db=12.0,
              inr_db=8.0, bounds=(1, 4)):
    noise = 1.0
    sig = 10.0 ** (snr_db / 10.0)
    inr = 10.0 ** (inr_db / 10.0)
    interferers = [(j + 1, inr, randc(rng, n_subbands, n_rx, n_tx), bounds)
                   for j in range(n_interf)]
    return TerminalLink(h_serving=randc(rng, n_subbands, n_rx, n_tx),
                        signal_scale=sig, noise_power=noise,
                        serving_rank_bounds=bounds, interferers=interferers)


# ---------------------------------------------------------------------------
# Quantizer
# ---------------------------------------------------------------------------

class TestQuantizer:
    def test_range_max_saturates_to_top_level(self):
        assert quantize_cqi(30.0, 4, (0.0, 30.0)) == 15
        assert quantize_cqi(99.0, 4, (0.0, 30.0)) == 15

    def test_zero_maps_to_level_zero(self):
        assert quantize_cqi(0.0, 4, (0.0, 30.0)) == 0
        assert quantize_cqi(-5.0, 4, (0.0, 30.0)) == 0

    def test_midrange_recovers_within_half_step(self):
        q = Quantizer(4, 0.0, 30.0)
        value = 13.7
        back = q.dequantize(q.quantize(value))
        assert abs(back - value) <= q.step / 2 + 1e-12

    def test_passthrough_mode(self):
        q = Quantizer(0, 0.0, 30.0)
        assert q.quantize(13.77) == 13.77
        assert q.dequantize(13.77) == 13.77

    def test_negative_bits_rejected(self):
        with pytest.raises(ValueError):
            quantize_cqi(1.0, -1, (0.0, 30.0))


# ---------------------------------------------------------------------------
# expected_rate
# ---------------------------------------------------------------------------

class TestExpectedRate:
    def test_no_interferers_equals_single_shot(self):
        rng = np.random.default_rng(0)
        book = build_codebook(4, 2)
        link = make_link(rng, n_interf=0)
        f = book[2][1]
        got = expected_rate(link, book, f, 2, [], "mmse_irc_ideal")
        for k in range(2):
            want = oracle_link_rate(link.h_serving[k], f, link.signal_scale,
                                    [], 1.0, "mmse_irc_ideal")
            np.testing.assert_allclose(got[k], want, rtol=1e-9)

    def test_single_entry_codebook_degenerate_average(self):
        rng = np.random.default_rng(1)
        book = build_codebook(4, 0)                 # one entry per rank
        link = make_link(rng, n_interf=1)
        f = book[1][0]
        got = expected_rate(link, book, f, 1, [2], "mmse_irc_ideal")
        for k in range(2):
            want = oracle_link_rate(link.h_serving[k], f, link.signal_scale,
                                    [(link.interferers[0][1],
                                      link.interferers[0][2][k], book[2][0])],
                                    1.0, "mmse_irc_ideal")
            np.testing.assert_allclose(got[k], want, rtol=1e-9)

    def test_four_entry_codebook_hand_enumerated_mean(self):
        rng = np.random.default_rng(2)
        book = build_codebook(4, 2)                 # 4 entries per rank
        link = make_link(rng, n_interf=1)
        f = book[2][3]
        got = expected_rate(link, book, f, 2, [1], "mmse_irc_ideal",
                            sampling="exhaustive")
        for k in range(2):
            rates = [oracle_link_rate(link.h_serving[k], f, link.signal_scale,
                                      [(link.interferers[0][1],
                                        link.interferers[0][2][k], book[1][d])],
                                      1.0, "mmse_irc_ideal")
                     for d in range(4)]
            np.testing.assert_allclose(got[k], np.mean(rates), rtol=1e-9)

    def test_wrong_precoder_rank_rejected(self):
        rng = np.random.default_rng(3)
        book = build_codebook(4, 1)
        link = make_link(rng, n_interf=0)
        with pytest.raises(ValueError):
            expected_rate(link, book, book[2][0], 3, [], "mmse_irc_ideal")

    def test_monte_carlo_deterministic_given_rng(self):
        rng = np.random.default_rng(4)
        book = build_codebook(4, 2)
        link = make_link(rng, n_interf=2)
        a = expected_rate(link, book, book[1][0], 1, [2, 2], "mmse_irc_ideal",
                          sampling="monte_carlo", mc_draws=5,
                          rng=np.random.default_rng(77))
        b = expected_rate(link, book, book[1][0], 1, [2, 2], "mmse_irc_ideal",
                          sampling="monte_carlo", mc_draws=5,
                          rng=np.random.default_rng(77))
        np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# Joint selection
# ---------------------------------------------------------------------------

class TestSelectRanks:
    def test_high_snr_full_rank_channel_selects_max_rank(self):
        # identity channel at high SNR: rank 4 maximizes the rate, which the
        # direct evaluation confirms before the assertion on the module
        book = build_codebook(4, 2)
        h = np.tile(np.eye(4, dtype=complex), (2, 1, 1))
        link = TerminalLink(h_serving=h, signal_scale=1e4, noise_power=1.0,
                            serving_rank_bounds=(1, 4))
        direct = {l: oracle_tilde(link, book, l, [], "mmse_irc_ideal").max(axis=1).mean()
                  for l in range(1, 5)}
        assert max(direct, key=direct.get) == 4
        rep = select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal")
        assert rep.serving_ri == 4

    @pytest.mark.parametrize("strategy", ["mmse_irc_ideal", "mmse_irc_simplified"])
    @pytest.mark.parametrize("n_interf", [1, 2])
    def test_matches_exhaustive_oracle(self, strategy, n_interf):
        book = build_codebook(4, 2)
        rng = np.random.default_rng(10 + n_interf)
        for trial in range(6):
            link = make_link(rng, n_interf=n_interf, inr_db=float(5 + 3 * trial % 12))
            rep = select_ranks_and_precoders(link, book, QC, QD, strategy,
                                             sampling="exhaustive")
            r_star, i_star, pmi, cqi, delta = oracle_select(link, book, strategy)
            assert rep.serving_ri == r_star
            assert rep.recommended_iri == i_star
            np.testing.assert_array_equal(rep.pmi, pmi)
            np.testing.assert_array_equal(rep.cqi, cqi)
            np.testing.assert_array_equal(rep.delta_cqi, delta)

    def test_baseline_mode_matches_oracle(self):
        book = build_codebook(4, 2)
        rng = np.random.default_rng(20)
        for _ in range(4):
            link = make_link(rng, n_interf=1)
            rep = select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal",
                                             mode="baseline", sampling="exhaustive")
            r_star, i_star, pmi, cqi, _ = oracle_select(link, book, "mmse_irc_ideal",
                                                        mode="baseline")
            assert rep.serving_ri == r_star
            assert rep.recommended_iri is None
            np.testing.assert_array_equal(rep.pmi, pmi)
            np.testing.assert_array_equal(rep.cqi, cqi)

    def test_reduction_empty_set_reports_identical(self):
        book = build_codebook(4, 2)
        rng = np.random.default_rng(30)
        link = make_link(rng, n_interf=0)
        coord = select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal",
                                           mode="coordinated")
        base = select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal",
                                          mode="baseline")
        assert coord.serving_ri == base.serving_ri
        assert coord.recommended_iri is None and base.recommended_iri is None
        np.testing.assert_array_equal(coord.pmi, base.pmi)
        np.testing.assert_array_equal(coord.cqi, base.cqi)
        assert coord.wideband_rate == base.wideband_rate

    def test_zero_channel_tie_breaks_to_lowest_tuple(self):
        book = build_codebook(4, 2)
        h = np.zeros((2, 4, 4), dtype=complex)
        hj = np.zeros((2, 4, 4), dtype=complex)
        link = TerminalLink(h_serving=h, signal_scale=1.0, noise_power=1.0,
                            serving_rank_bounds=(1, 4),
                            interferers=[(1, 1.0, hj, (1, 4))])
        rep = select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal")
        assert rep.serving_ri == 1
        assert rep.recommended_iri == 1
        np.testing.assert_array_equal(rep.pmi, [0, 0])

    def test_duplicate_codebook_entries_tie_break_to_lowest_pmi(self):
        rng = np.random.default_rng(40)
        base = build_codebook(4, 0)
        book = {r: np.repeat(base[r], 2, axis=0) for r in base}   # pairs of twins
        link = make_link(rng, n_interf=0, bounds=(1, 2))
        rep = select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal")
        assert np.all(rep.pmi % 2 == 0)

    def test_delta_table_invariants(self):
        book = build_codebook(4, 2)
        rng = np.random.default_rng(50)
        link = make_link(rng, n_interf=1)
        rep = select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal",
                                         sampling="exhaustive")
        assert rep.delta_at(rep.serving_ri, rep.recommended_iri) == 0
        assert np.all(np.asarray(rep.delta_cqi) >= 0)

    def test_per_cell_iri_mode(self):
        book = build_codebook(4, 1)
        rng = np.random.default_rng(60)
        link = make_link(rng, n_interf=2, bounds=(1, 2))
        rep = select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal",
                                         per_cell_iri=True, sampling="exhaustive")
        assert isinstance(rep.recommended_iri, dict)
        assert set(rep.recommended_iri) == {1, 2}
        # brute force over per-cell rank tuples
        best, best_val = None, -np.inf
        for l in range(1, 3):
            for tup in itertools.product(range(1, 3), repeat=2):
                t = oracle_tilde(link, book, l, list(tup), "mmse_irc_ideal")
                val = t.max(axis=1).mean()
                if val > best_val:
                    best, best_val = (l, tup), val
        assert rep.serving_ri == best[0]
        assert tuple(rep.recommended_iri[c] for c in (1, 2)) == best[1]

    def test_empty_codebook_rejected(self):
        rng = np.random.default_rng(70)
        link = make_link(rng, n_interf=1)
        book = {r: np.empty((0, 4, r), dtype=complex) for r in range(1, 5)}
        with pytest.raises(ValueError):
            select_ranks_and_precoders(link, book, QC, QD, "mmse_irc_ideal")
