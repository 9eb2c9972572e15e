"""Terminal-side report computation.

A terminal measures its serving channel and the channels of the cells in its
measurement set, then evaluates hypothetical links: for each candidate
serving rank, serving precoder and interference-rank hypothesis it averages
the achievable rate over the unknown interferer precoders (drawn from the
shared codebook) and recomputes its receive filter per draw according to its
own strategy.

Two reporting modes share one code path:

* ``coordinated``: jointly picks the serving rank and a single recommended
  interference rank applied to every cell in the measurement set, assuming
  the network will honor the recommendation.
* ``baseline``: no coordination hypothesis; the terminal averages uniformly
  over the interferers' possible ranks and reports serving rank, PMI and CQI
  only.

With an empty measurement set the two modes run the identical computation,
so their reports agree bit for bit.

Tie-breaks everywhere go to the lowest rank tuple and then the lowest
codebook index (first-maximum semantics of argmax over ascending grids).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import phy


# ---------------------------------------------------------------------------
# Quantizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quantizer:
    """Uniform round-to-nearest saturating quantizer.

    ``n_bits = 0`` disables quantization: levels are the values themselves.
    """

    n_bits: int
    lo: float
    hi: float

    @property
    def n_levels(self):
        return 2 ** self.n_bits

    @property
    def step(self):
        return (self.hi - self.lo) / (self.n_levels - 1)

    def quantize(self, value):
        if self.n_bits == 0:
            return np.asarray(value, dtype=float)
        lvl = np.rint((np.asarray(value, dtype=float) - self.lo) / self.step)
        return np.clip(lvl, 0, self.n_levels - 1).astype(int)

    def dequantize(self, level):
        if self.n_bits == 0:
            return np.asarray(level, dtype=float)
        return self.lo + np.asarray(level, dtype=float) * self.step


def quantize_cqi(value, n_bits, value_range):
    """Quantizer level for a rate value over the configured range."""
    if n_bits < 0:
        raise ValueError("n_bits must be >= 0")
    q = Quantizer(n_bits, value_range[0], value_range[1])
    return q.quantize(value)


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------

@dataclass
class FeedbackReport:
    user: int
    serving_ri: int
    recommended_iri: object            # int, None, or {cell: int} in per-cell mode
    pmi: np.ndarray                    # (n_subbands,) codebook index
    cqi: np.ndarray                    # (n_subbands,) quantizer level
    delta_cqi: object = None           # (n_L, n_I) levels, indexed from L_min
    rank_offset: int = 1               # delta table index offset (serving L_min)
    iri_offset: int = 1                # delta table index offset (interference I_lo)
    price_sensitivity: float = 0.0     # dequantized throughput loss per unit rank step
    wideband_rate: float = 0.0         # unquantized objective at the optimum

    def delta_at(self, l_serving, l_interf):
        if self.delta_cqi is None:
            return 0
        return self.delta_cqi[l_serving - self.rank_offset,
                              l_interf - self.iri_offset]


# ---------------------------------------------------------------------------
# Terminal view of its links
# ---------------------------------------------------------------------------

@dataclass
class TerminalLink:
    """Measured channels and scales a terminal uses to build its report.

    ``signal_scale`` is alpha_s * Es of the serving cell; each interferer
    entry is (cell_id, scale_j, h_j blocks, (I_lo, I_hi)).  ``h_serving`` has
    shape (n_blocks, n_rx, n_tx); ``block_subband`` maps blocks to subbands.
    """

    h_serving: np.ndarray
    signal_scale: float
    noise_power: float
    serving_rank_bounds: tuple
    interferers: list = field(default_factory=list)
    block_subband: np.ndarray = None

    def __post_init__(self):
        if self.block_subband is None:
            self.block_subband = np.arange(self.h_serving.shape[0])

    @property
    def n_subbands(self):
        return int(self.block_subband.max()) + 1


def _draw_indices(n_entries, n_interferers, sampling, mc_draws, rng):
    """Precoder indices per (interferer, draw); exhaustive enumerates the
    product codebook when small enough, otherwise falls back to Monte-Carlo."""
    if n_entries == 0:
        raise ValueError("empty codebook")
    if sampling == "exhaustive" and n_interferers <= 2 and n_entries <= 16:
        combos = np.array(list(itertools.product(range(n_entries),
                                                 repeat=n_interferers)), dtype=int)
        return combos.T                      # (J, n_entries**J)
    return rng.integers(0, n_entries, size=(n_interferers, mc_draws))


def _interference_cov(link: TerminalLink, codebook, ranks, draw_idx):
    """sigma^2 I plus each interferer's covariance over the drawn precoders.

    ``ranks[j]`` is the hypothesized rank of interferer j; returns
    (n_blocks, n_draws, n_rx, n_rx).
    """
    n_blocks, n_rx = link.h_serving.shape[0], link.h_serving.shape[1]
    n_draws = draw_idx.shape[1] if len(link.interferers) else 1
    s = np.zeros((n_blocks, n_draws, n_rx, n_rx), dtype=complex)
    for j, (_, scale_j, h_j, _) in enumerate(link.interferers):
        f_j = codebook[ranks[j]][draw_idx[j]]            # (D, n_tx, r)
        hf = h_j[:, None] @ f_j[None]                    # (B, D, n_rx, r)
        s += (scale_j / ranks[j]) * (hf @ hf.conj().transpose(0, 1, 3, 2))
    s[..., np.arange(n_rx), np.arange(n_rx)] += link.noise_power
    return s


def _simplified_cov(link: TerminalLink, n_tx):
    """Identity-precoder interference covariance (draw independent)."""
    n_blocks, n_rx = link.h_serving.shape[0], link.h_serving.shape[1]
    s = np.zeros((n_blocks, n_rx, n_rx), dtype=complex)
    for _, scale_j, h_j, _ in link.interferers:
        s += (scale_j / n_tx) * (h_j @ h_j.conj().transpose(0, 2, 1))
    s[..., np.arange(n_rx), np.arange(n_rx)] += link.noise_power
    return s


def _rate_grid(link: TerminalLink, precoders, l_serving, s_act, strategy,
               s_simple=None, cap=phy.RATE_CAP_PER_STREAM):
    """Draw-averaged rate for every precoder: (n_blocks, n_precoders).

    ``precoders`` is (nF, n_tx, L); ``s_act`` the actual covariances
    (n_blocks, n_draws, n_rx, n_rx).  For the simplified strategy the filter
    is designed on ``s_simple`` and evaluated against ``s_act``.
    """
    a = np.sqrt(link.signal_scale / l_serving) * (link.h_serving[:, None] @ precoders[None])
    if strategy == "mmse_irc_ideal":
        s_inv = phy.inv_hermitian(s_act)
        rho = phy.sinr_mmse_exact(a[:, None], s_inv[:, :, None])   # (B, D, nF, L)
    elif strategy == "mmse_irc_simplified":
        r_design = a @ a.conj().transpose(0, 1, 3, 2) + s_simple[:, None]
        rho = phy.sinr_mismatched(a[:, None], phy.inv_hermitian(r_design)[:, None],
                                  s_act[:, :, None])
    else:
        raise ValueError(f"unknown receiver strategy {strategy!r}")
    return phy.rates_from_sinr(rho, cap).mean(axis=1)              # avg over draws


def _subband_mean(values, block_subband, n_subbands):
    """Average block values into their subbands: (B, ...) -> (K, ...)."""
    out = np.zeros((n_subbands,) + values.shape[1:])
    counts = np.bincount(block_subband, minlength=n_subbands)
    np.add.at(out, block_subband, values)
    return out / counts.reshape((-1,) + (1,) * (values.ndim - 1))


def expected_rate(link: TerminalLink, codebook, precoder, l_serving,
                  interferer_ranks, strategy, sampling="exhaustive",
                  mc_draws=16, rng=None, cap=phy.RATE_CAP_PER_STREAM):
    """Per-subband expected rate of one hypothesis.

    Averages the achievable rate over interferer precoders drawn from the
    rank-``interferer_ranks[j]`` codebooks, recomputing the receive filter
    per draw according to ``strategy``.  With an empty measurement set this
    is a single-shot rate.
    """
    if precoder.shape[1] != l_serving:
        raise ValueError("precoder column count must equal l_serving")
    n_entries = codebook[l_serving].shape[0]
    if n_entries == 0:
        raise ValueError("empty codebook")
    rng = rng or np.random.default_rng(0)
    draw_idx = _draw_indices(n_entries, len(link.interferers), sampling, mc_draws, rng)
    s_act = _interference_cov(link, codebook, interferer_ranks, draw_idx)
    s_simple = _simplified_cov(link, precoder.shape[0]) \
        if strategy == "mmse_irc_simplified" else None
    t_bf = _rate_grid(link, precoder[None], l_serving, s_act, strategy, s_simple, cap)
    return _subband_mean(t_bf, link.block_subband, link.n_subbands)[:, 0]


def select_ranks_and_precoders(link: TerminalLink, codebook, quant_cqi: Quantizer,
                               quant_delta: Quantizer, strategy,
                               mode="coordinated", sampling="exhaustive",
                               mc_draws=16, rng=None, user=0,
                               report_delta=True, per_cell_iri=False,
                               cap=phy.RATE_CAP_PER_STREAM) -> FeedbackReport:
    """Joint selection of (serving RI, recommended interference RI, per
    subband PMI and CQI) plus the delta-CQI table.

    The objective of a rank tuple is the subband average of the
    max-over-precoder draw-averaged rate; the argmax scans ascending rank
    tuples and keeps strict improvements only, so ties resolve to the lowest
    serving rank, then the lowest interference rank, then the lowest
    codebook index.
    """
    rng = rng or np.random.default_rng(0)
    l_lo, l_hi = link.serving_rank_bounds
    serv_ranks = list(range(l_lo, l_hi + 1))
    n_sub = link.n_subbands
    n_tx = link.h_serving.shape[2]
    has_interf = len(link.interferers) > 0
    s_simple = _simplified_cov(link, n_tx) if strategy == "mmse_irc_simplified" else None

    if has_interf:
        i_lo = max(b[3][0] for b in link.interferers)
        i_hi = min(b[3][1] for b in link.interferers)
        if per_cell_iri:
            hypotheses = [tuple(c) for c in itertools.product(
                *[range(b[3][0], b[3][1] + 1) for b in link.interferers])]
        else:
            hypotheses = [(i,) * len(link.interferers) for i in range(i_lo, i_hi + 1)]
        n_entries = codebook[serv_ranks[0]].shape[0]
        draw_idx = {}
        for hyp in hypotheses:
            # one index table per distinct rank tuple; shared across serving
            # ranks (common random numbers across the grid)
            draw_idx[hyp] = _draw_indices(n_entries, len(link.interferers),
                                          sampling, mc_draws, rng)
    else:
        i_lo, i_hi = 1, 1
        hypotheses = [()]
        draw_idx = {(): np.zeros((0, 1), dtype=int)}

    # rate tables per (serving rank, hypothesis): (n_subbands, nF)
    tkf = {}
    for hyp in hypotheses:
        s_act = _interference_cov(link, codebook, hyp, draw_idx[hyp])
        for l in serv_ranks:
            t_bf = _rate_grid(link, codebook[l], l, s_act, strategy, s_simple, cap)
            tkf[(l, hyp)] = _subband_mean(t_bf, link.block_subband, n_sub)

    if mode == "baseline" and has_interf:
        # no coordination hypothesis: average over the interferers' ranks
        tkf = {(l, ()): np.mean([tkf[(l, hyp)] for hyp in hypotheses], axis=0)
               for l in serv_ranks}
        hypotheses = [()]

    objective = {key: float(np.max(val, axis=1).mean()) for key, val in tkf.items()}

    best_key, best_val = None, -np.inf
    for l in serv_ranks:
        for hyp in hypotheses:
            if objective[(l, hyp)] > best_val:
                best_key, best_val = (l, hyp), objective[(l, hyp)]
    r_star, hyp_star = best_key

    t_star = tkf[best_key]
    pmi = np.argmax(t_star, axis=1)
    cqi = quant_cqi.quantize(t_star[np.arange(n_sub), pmi])

    if has_interf and mode == "coordinated":
        if per_cell_iri:
            iri = {link.interferers[j][0]: hyp_star[j]
                   for j in range(len(link.interferers))}
            i_star_common = min(hyp_star)
        else:
            iri = int(hyp_star[0])
            i_star_common = iri
    else:
        iri = None
        i_star_common = None

    delta = None
    sensitivity = 0.0
    if report_delta and has_interf and mode == "coordinated" and not per_cell_iri:
        i_ranks = list(range(i_lo, i_hi + 1))
        loss = np.zeros((len(serv_ranks), len(i_ranks)))
        for a, l in enumerate(serv_ranks):
            for b, i in enumerate(i_ranks):
                loss[a, b] = max(0.0, best_val - objective[(l, (i,) * len(link.interferers))])
        delta = quant_delta.quantize(loss)
        row = serv_ranks.index(r_star)
        col = i_ranks.index(i_star_common)
        neighbor = col + 1 if col + 1 < len(i_ranks) else col - 1
        if 0 <= neighbor < len(i_ranks):
            sensitivity = float(quant_delta.dequantize(delta[row, neighbor]))

    return FeedbackReport(user=user, serving_ri=r_star, recommended_iri=iri,
                          pmi=pmi, cqi=cqi, delta_cqi=delta,
                          rank_offset=l_lo, iri_offset=i_lo,
                          price_sensitivity=sensitivity,
                          wideband_rate=best_val)
