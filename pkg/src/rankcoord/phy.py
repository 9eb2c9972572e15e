"""Precoding codebooks, MMSE-IRC receive filters, per-stream SINR and rate.

The per-stream SINR convention: the denominator carries inter-cell
interference, filtered noise, and intra-cell inter-stream leakage, so the
value is self-consistent for any receive filter, not only the exact MMSE one.

Two receiver strategies are supported.  ``mmse_irc_ideal`` whitens the actual
interference (interferer precoders known at demodulation time);
``mmse_irc_simplified`` builds the interference covariance assuming identity
precoders at the interferers.

Batched kernels at the bottom operate on stacked arrays with arbitrary
leading axes; they are the single numeric path shared by terminal-side rate
estimation and network-side realization, which keeps the two bit-identical
in degenerate setups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RATE_CAP_PER_STREAM = 6.0   # 64-QAM ceiling proxy, bits/s/Hz per stream


# ---------------------------------------------------------------------------
# Codebook
# ---------------------------------------------------------------------------

def build_codebook(n_tx, bits_per_rank=4):
    """Deterministic DFT-subset codebook: 2**bits matrices per rank.

    Entry ``i`` of rank ``r`` takes ``r`` maximally spread columns of the
    phase-rotated DFT basis B_i[n, k] = exp(j 2 pi n (k + i / 2**bits) / n_tx)
    / sqrt(n_tx).  Columns are orthonormal, so each matrix has squared
    Frobenius norm r.  Returns {rank: array (2**bits, n_tx, r)}.
    """
    if n_tx not in (2, 4, 8):
        raise ValueError(f"unsupported n_tx {n_tx} (expected 2, 4 or 8)")
    if bits_per_rank < 0:
        raise ValueError("bits_per_rank must be >= 0")
    n_entries = 2 ** bits_per_rank
    n = np.arange(n_tx)[:, None]
    book = {}
    for r in range(1, n_tx + 1):
        cols = np.floor(np.arange(r) * n_tx / r).astype(int)
        mats = np.empty((n_entries, n_tx, r), dtype=complex)
        for i in range(n_entries):
            k = cols[None, :] + i / n_entries
            mats[i] = np.exp(2j * np.pi * n * k / n_tx) / np.sqrt(n_tx)
        book[r] = mats
    return book


def dump_codebook(book, path):
    """Write a codebook as plain text, complex entries as decimal pairs."""
    ranks = sorted(book)
    n_tx = book[ranks[0]].shape[1]
    with open(path, "w") as fh:
        fh.write("rankcoord-codebook v1\n")
        fh.write(f"n_tx {n_tx}\n")
        for r in ranks:
            mats = book[r]
            fh.write(f"rank {r} count {mats.shape[0]}\n")
            for i, mat in enumerate(mats):
                fh.write(f"entry {i}\n")
                for row in mat:
                    fh.write(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row) + "\n")


def load_codebook(path):
    """Inverse of :func:`dump_codebook`."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines[0] != "rankcoord-codebook v1":
        raise ValueError(f"{path}: not a rankcoord codebook file")
    n_tx = int(lines[1].split()[1])
    book = {}
    pos = 2
    while pos < len(lines):
        _, r, _, count = lines[pos].split()
        r, count = int(r), int(count)
        pos += 1
        mats = np.empty((count, n_tx, r), dtype=complex)
        for i in range(count):
            assert lines[pos] == f"entry {i}", f"{path}: malformed entry header"
            pos += 1
            for row in range(n_tx):
                vals = np.array(lines[pos].split(), dtype=float)
                mats[i, row] = vals[0::2] + 1j * vals[1::2]
                pos += 1
        book[r] = mats
    return book


# ---------------------------------------------------------------------------
# Link state and receive filters
# ---------------------------------------------------------------------------

@dataclass
class LinkState:
    """One user's link on one frequency resource.

    Interferer list entries are (alpha_j, es_j, F_j) with F_j an
    (n_tx, L_j) precoder; per-stream power is es_j / L_j at each cell.
    """

    precoder: np.ndarray            # serving F, (n_tx, L)
    alpha: float                    # serving large-scale gain
    es: float                       # serving cell total power
    noise_power: float
    interferers: list = field(default_factory=list)

    @property
    def rank(self):
        return self.precoder.shape[1]


@dataclass
class ReceiveFilter:
    G: np.ndarray                   # (L, n_rx), rows g_m
    strategy: str


def interference_covariance(link: LinkState, h_interferers, strategy, n_tx=None):
    """Sum of interferer covariances seen at the receiver.

    ``mmse_irc_ideal`` uses the actual precoders; ``mmse_irc_simplified``
    replaces each F_j F_j^H / L_j by I / n_tx (identity-precoder assumption).
    """
    first = h_interferers[0] if len(h_interferers) else None
    n_rx = first.shape[0] if first is not None else link.precoder.shape[0]
    r = np.zeros((n_rx, n_rx), dtype=complex)
    for (alpha_j, es_j, f_j), h_j in zip(link.interferers, h_interferers):
        if strategy == "mmse_irc_ideal":
            hf = h_j @ f_j
            r += alpha_j * (es_j / f_j.shape[1]) * (hf @ hf.conj().T)
        elif strategy == "mmse_irc_simplified":
            nt = n_tx or h_j.shape[1]
            r += alpha_j * (es_j / nt) * (h_j @ h_j.conj().T)
        else:
            raise ValueError(f"unknown receiver strategy {strategy!r}")
    return r


def mmse_filter(link: LinkState, h_serving, h_interferers, strategy) -> ReceiveFilter:
    """MMSE receive filter G = sqrt(a Es/L) F^H H^H R^-1.

    R adds the serving signal covariance, the strategy-dependent interference
    covariance and the noise floor.  Diagonal loading keeps the inversion
    safe when noise_power is vanishingly small relative to trace(R).
    """
    n_rx = h_serving.shape[0]
    a = np.sqrt(link.alpha * link.es / link.rank) * (h_serving @ link.precoder)
    r = a @ a.conj().T
    r += interference_covariance(link, h_interferers, strategy)
    floor = max(link.noise_power, 1e-12 * np.trace(r).real / n_rx)
    r += floor * np.eye(n_rx)
    g = np.linalg.solve(r.conj().T, a).conj().T
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("MMSE filter inversion produced non-finite values")
    return ReceiveFilter(G=g, strategy=strategy)


def per_stream_sinr(link: LinkState, filt: ReceiveFilter, h_serving, h_interferers):
    """SINR of each stream for an arbitrary filter.

    numerator_m   = a |g_m H f_m|^2 Es/L
    denominator_m = sum_j a_j ||g_m H_j F_j||^2 Es_j/L_j
                    + sigma^2 ||g_m||^2
                    + a (Es/L) sum_{n != m} |g_m H f_n|^2
    """
    g = filt.G
    if g.shape[0] != link.rank:
        raise ValueError("filter row count must equal the transmission rank")
    hf = h_serving @ link.precoder                       # (n_rx, L)
    cross = g @ hf                                       # (L, L): [m, n] = g_m H f_n
    p_serv = link.alpha * (link.es / link.rank) * np.abs(cross) ** 2
    num = np.diag(p_serv).copy()
    leak = p_serv.sum(axis=1) - np.diag(p_serv)
    inter = np.zeros(link.rank)
    for (alpha_j, es_j, f_j), h_j in zip(link.interferers, h_interferers):
        gh = g @ (h_j @ f_j)                             # (L, L_j)
        inter += alpha_j * (es_j / f_j.shape[1]) * (np.abs(gh) ** 2).sum(axis=1)
    noise = link.noise_power * (np.abs(g) ** 2).sum(axis=1)
    return num / (inter + noise + leak)


def achievable_rate(rho, cap=RATE_CAP_PER_STREAM):
    """Capped sum rate over streams, bits/s/Hz."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("per-stream SINR must be nonnegative")
    return float(np.minimum(np.log2(1.0 + rho), cap).sum())


# ---------------------------------------------------------------------------
# Batched kernels (arbitrary leading axes)
# ---------------------------------------------------------------------------

def inv_hermitian(m):
    """Closed-form inverse of stacked Hermitian matrices, n in {1, 2, 3, 4}.

    Avoids per-matrix LAPACK dispatch on huge stacks of tiny matrices.
    """
    n = m.shape[-1]
    if n == 1:
        return 1.0 / m
    if n == 2:
        det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
        out = np.empty_like(m)
        out[..., 0, 0] = m[..., 1, 1]
        out[..., 1, 1] = m[..., 0, 0]
        out[..., 0, 1] = -m[..., 0, 1]
        out[..., 1, 0] = -m[..., 1, 0]
        return out / det[..., None, None]
    if n == 3:
        a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
        d, e, f = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
        g, h, i = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
        co_a = e * i - f * h
        co_b = f * g - d * i
        co_c = d * h - e * g
        det = a * co_a + b * co_b + c * co_c
        out = np.empty_like(m)
        out[..., 0, 0] = co_a
        out[..., 0, 1] = c * h - b * i
        out[..., 0, 2] = b * f - c * e
        out[..., 1, 0] = co_b
        out[..., 1, 1] = a * i - c * g
        out[..., 1, 2] = c * d - a * f
        out[..., 2, 0] = co_c
        out[..., 2, 1] = b * g - a * h
        out[..., 2, 2] = a * e - b * d
        return out / det[..., None, None]
    if n == 4:
        # 2x2 block inversion; principal blocks of HPD matrices are HPD
        a = m[..., :2, :2]
        b = m[..., :2, 2:]
        c = m[..., 2:, :2]
        d = m[..., 2:, 2:]
        ainv = inv_hermitian(a)
        ainv_b = ainv @ b
        schur = d - c @ ainv_b
        sinv = inv_hermitian(schur)
        out = np.empty_like(m)
        out[..., :2, 2:] = -ainv_b @ sinv
        out[..., 2:, :2] = -sinv @ (c @ ainv)
        out[..., :2, :2] = ainv - ainv_b @ out[..., 2:, :2]
        out[..., 2:, 2:] = sinv
        return out
    return np.linalg.inv(m)


def sinr_mmse_exact(a, s_inv):
    """Per-stream SINR of the exact MMSE filter against covariance S.

    ``a`` is the scaled serving matrix sqrt(alpha Es/L) H F with shape
    (..., n_rx, L); ``s_inv`` the inverse of the interference-plus-noise
    covariance (..., n_rx, n_rx).  Uses rho_m = 1 / diag((I + A^H S^-1 A)^-1)
    - 1, the MMSE error-matrix identity.
    """
    w = np.einsum("...am,...ab,...bn->...mn", a.conj(), s_inv, a, optimize=True)
    ell = w.shape[-1]
    w[..., np.arange(ell), np.arange(ell)] += 1.0
    e = inv_hermitian(w)
    diag = np.clip(e[..., np.arange(ell), np.arange(ell)].real, 1e-300, None)
    return np.clip(1.0 / diag - 1.0, 0.0, None)


def sinr_mismatched(a, r_design_inv, s_actual):
    """Per-stream SINR of G = A^H R_design^-1 against the actual covariance.

    ``r_design_inv`` inverts the covariance the receiver believes in
    (serving part included); ``s_actual`` is the true interference-plus-noise
    covariance without the serving part.  Shapes broadcast.
    """
    y = r_design_inv @ a                                     # (..., n_rx, L)
    p = np.einsum("...am,...an->...mn", a.conj(), y, optimize=True)
    ell = p.shape[-1]
    idx = np.arange(ell)
    pdiag = p[..., idx, idx]
    num = np.abs(pdiag) ** 2
    serv = (np.abs(p) ** 2).sum(axis=-1)                     # sum_n |P_mn|^2
    noise = np.einsum("...am,...ab,...bm->...m", y.conj(), s_actual, y,
                      optimize=True).real
    den = np.clip(serv + noise - num, 1e-300, None)
    return np.clip(num / den, 0.0, None)


def rates_from_sinr(rho, cap=RATE_CAP_PER_STREAM):
    """Capped sum rate along the last (stream) axis, batched."""
    return np.minimum(np.log2(1.0 + rho), cap).sum(axis=-1)
