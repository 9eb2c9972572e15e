"""Small-scale MIMO channel generation and terminal measurement error.

Frequency selectivity is block fading: ``coherence`` adjacent subcarriers
share one realization.  Time evolution is first-order autoregressive with a
coefficient derived from the Doppler spread, which keeps entries unit
variance.  Measurement error perturbs the terminal's copy of the channel
only; realized SINRs are always computed from the true channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import j0


@dataclass
class ChannelRealization:
    blocks: np.ndarray          # (n_users, n_cells, n_blocks, n_rx, n_tx)
    coherence: int              # subcarriers per independent block
    n_subcarriers: int
    subframe: int = 0

    def h(self, user, cell, subcarrier):
        """Per-subcarrier view (subcarriers inside a block share a matrix)."""
        if not 0 <= subcarrier < self.n_subcarriers:
            raise IndexError(f"subcarrier {subcarrier} out of range")
        return self.blocks[user, cell, subcarrier // self.coherence]

    @property
    def n_blocks(self):
        return self.blocks.shape[2]


@dataclass
class MeasurementErrorModel:
    """Per-entry additive error with variance interpolated from a
    (wideband SINR dB -> variance) table; ``ideal`` is a no-op."""

    mode: str = "ideal"
    mse_table: list = None

    def variance(self, wideband_sinr_db):
        if self.mode == "ideal":
            return np.zeros_like(np.asarray(wideband_sinr_db, dtype=float))
        table = np.asarray(self.mse_table, dtype=float)
        return np.interp(wideband_sinr_db, table[:, 0], table[:, 1])


def _corr_sqrt(spec, n):
    """Square root of a correlation matrix given a scalar exponential
    coefficient or an explicit matrix.  Rejects non-PSD input."""
    if spec is None or np.isscalar(spec):
        rho = float(spec or 0.0)
        if rho == 0.0:
            return None
        mat = rho ** np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    else:
        mat = np.asarray(spec, dtype=complex)
        if mat.shape != (n, n):
            raise ValueError(f"correlation matrix must be {n}x{n}")
    vals, vecs = np.linalg.eigh(mat)
    if np.any(vals < -1e-9):
        raise ValueError("correlation matrix is not positive semidefinite")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def _white(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _correlated(rng, shape, rx_sqrt, tx_sqrt):
    w = _white(rng, shape)
    if rx_sqrt is not None:
        w = rx_sqrt @ w
    if tx_sqrt is not None:
        w = w @ tx_sqrt
    return w


def sample_channel(n_users, n_cells, n_rx, n_tx, n_subcarriers, coherence,
                   seed, corr_tx=0.0, corr_rx=0.0):
    """Draw one subframe of i.i.d. CN(0,1) block-fading channels.

    Entries are optionally Kronecker-correlated (R_rx^1/2 H R_tx^1/2).
    Deterministic given seed; ``coherence`` must divide ``n_subcarriers``.
    """
    if n_subcarriers < 1:
        raise ValueError("n_subcarriers must be >= 1")
    if n_subcarriers % coherence != 0:
        raise ValueError("coherence must divide n_subcarriers")
    rng = np.random.default_rng(seed)
    n_blocks = n_subcarriers // coherence
    shape = (n_users, n_cells, n_blocks, n_rx, n_tx)
    rx_sqrt = _corr_sqrt(corr_rx, n_rx)
    tx_sqrt = _corr_sqrt(corr_tx, n_tx)
    return ChannelRealization(_correlated(rng, shape, rx_sqrt, tx_sqrt),
                              coherence, n_subcarriers, subframe=0)


class ChannelProcess:
    """Sequential AR(1) evolution of a channel realization.

    H(t+1) = a H(t) + sqrt(1 - a^2) W(t), W i.i.d. with the same spatial
    correlation.  a = 1 freezes the channel.  Innovations come from a
    dedicated generator, so stepping one subframe at a time is reproducible.
    """

    def __init__(self, realization: ChannelRealization, ar_coeff, seed,
                 corr_tx=0.0, corr_rx=0.0):
        if not 0.0 <= ar_coeff <= 1.0:
            raise ValueError("ar coefficient must lie in [0, 1]")
        self.current = realization
        self.ar = float(ar_coeff)
        self._rng = np.random.default_rng(seed)
        n_rx, n_tx = realization.blocks.shape[-2:]
        self._rx_sqrt = _corr_sqrt(corr_rx, n_rx)
        self._tx_sqrt = _corr_sqrt(corr_tx, n_tx)

    def step(self):
        old = self.current
        if self.ar == 1.0:
            blocks = old.blocks
        else:
            w = _correlated(self._rng, old.blocks.shape, self._rx_sqrt, self._tx_sqrt)
            blocks = self.ar * old.blocks + np.sqrt(1.0 - self.ar ** 2) * w
        self.current = ChannelRealization(blocks, old.coherence,
                                          old.n_subcarriers, old.subframe + 1)
        return self.current


def ar_coefficient(doppler_hz, subframe_duration):
    """Jakes autocorrelation at one subframe lag, clipped to [0, 1]."""
    return float(np.clip(j0(2.0 * np.pi * doppler_hz * subframe_duration), 0.0, 1.0))


def apply_measurement_error(h_true: ChannelRealization, model: MeasurementErrorModel,
                            wideband_sinr_db, seed):
    """Terminal-side channel estimate: H + E, E i.i.d. CN(0, v) per entry
    with v looked up from the user's wideband SINR.  ``ideal`` returns the
    input unchanged (same object, zero copies)."""
    if model.mode == "ideal":
        return h_true
    var = model.variance(wideband_sinr_db)        # (n_users,)
    rng = np.random.default_rng(seed)
    noise = _white(rng, h_true.blocks.shape)
    scale = np.sqrt(var)[:, None, None, None, None]
    return ChannelRealization(h_true.blocks + scale * noise,
                              h_true.coherence, h_true.n_subcarriers,
                              h_true.subframe)
