"""Proportional-fair baseline scheduler, Master-Slave coordinated scheduler
and the inter-cell coordination messages.

Master-Slave operation: within a cluster, masterhood rotates round-robin,
one master per subframe.  The master fixes its transmission rank for the
subframe to the current entry of its cycling pattern and schedules only the
own users whose preferred serving rank matches it (falling back to everyone
else when no user matches).  Slaves give strict priority to the victims
whose recommendation the master is honoring this subframe, then to their
non-cooperating users, and schedule the remaining cooperating users only
when nothing else is eligible.

A cell with no pending rank requests has nothing to honor: its cluster
subframe degenerates to plain proportional fairness, which makes the
coordinated scheduler bit-identical to the baseline when every measurement
set is empty.

Scheduling metrics come from dequantized CQI; realized rates always come
from the true channels with the actually scheduled co-channel precoders,
and a scheduled allocation whose true rate falls short of its scheduled
rate is counted as outage and delivers nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import phy

PATTERN_TEMPLATES = {"A": [0, 1, 0, 1, 2], "B": [0, 1, 0, 1, 0]}


# ---------------------------------------------------------------------------
# Proportional-fair state
# ---------------------------------------------------------------------------

@dataclass
class PfState:
    avg: np.ndarray                 # exponentially smoothed user throughput
    t_c: float = 100.0

    @classmethod
    def init(cls, n_users, t_c=100.0, eps=0.01):
        return cls(np.full(n_users, float(eps)), float(t_c))

    @property
    def weights(self):
        return 1.0 / self.avg

    def update(self, realized_user_rates):
        beta = 1.0 / self.t_c
        self.avg = (1.0 - beta) * self.avg + beta * realized_user_rates


# ---------------------------------------------------------------------------
# Cycling pattern and master rotation
# ---------------------------------------------------------------------------

@dataclass
class CyclingPattern:
    priority: list                  # ranks by decreasing request priority
    sequence: list                  # repeating master-rank sequence
    mode: str = "dynamic"


def derive_cycling_pattern(request_counts, rank_bounds, mode="dynamic",
                           template="A", static_sequence=None) -> CyclingPattern:
    """Build the master-rank cycling pattern for one cell.

    ``request_counts`` maps rank -> number of pending recommendations (may be
    fractional when priorities are QoS weighted).  Dynamic mode sorts ranks
    by descending count with ties toward the lower rank, so with no requests
    the priority is simply ascending rank order.  The sequence instantiates
    the template (A = [I1, I2, I1, I2, I3]) on the priority vector, clipping
    template slots past the number of available ranks.
    """
    lo, hi = int(rank_bounds[0]), int(rank_bounds[1])
    ranks = list(range(lo, hi + 1))
    if mode == "static":
        seq = [int(np.clip(r, lo, hi)) for r in (static_sequence or [1, 2, 1, 2, 3])]
        seen = list(dict.fromkeys(seq))
        priority = seen + [r for r in ranks if r not in seen]
        return CyclingPattern(priority, seq, "static")
    counts = {r: float(request_counts.get(r, 0)) for r in ranks}
    priority = sorted(ranks, key=lambda r: (-counts[r], r))
    idx = PATTERN_TEMPLATES[template]
    seq = [priority[min(i, len(priority) - 1)] for i in idx]
    return CyclingPattern(priority, seq, "dynamic")


@dataclass
class MasterSchedule:
    """Round-robin master rotation over the cells of one cluster."""

    cluster_cells: tuple

    def master_at(self, t):
        return self.cluster_cells[t % len(self.cluster_cells)]

    def turn_index(self, t):
        return t // len(self.cluster_cells)

    def master_rank(self, t, pattern: CyclingPattern):
        seq = pattern.sequence
        return seq[self.turn_index(t) % len(seq)]


# ---------------------------------------------------------------------------
# Coordination messages
# ---------------------------------------------------------------------------

@dataclass
class CoordinationMessage:
    kind: str                       # rank_request | pattern_broadcast | master_state
    send: int
    delivery: int
    payload: dict


class MessageBus:
    """Append-only message log; consumers only see delivered messages."""

    def __init__(self):
        self.messages = []

    def post(self, kind, send, delivery, **payload):
        if delivery < send:
            raise ValueError("delivery must not precede send")
        self.messages.append(CoordinationMessage(kind, send, delivery, payload))

    def delivered(self, t, kind=None):
        return [m for m in self.messages
                if m.delivery <= t and (kind is None or m.kind == kind)]


# ---------------------------------------------------------------------------
# User partitions
# ---------------------------------------------------------------------------

def partition_master_users(users, l_m, reports):
    """Split the master's reported users by whether their preferred serving
    rank equals the master rank."""
    u1 = [q for q in users if q in reports and reports[q].serving_ri == l_m]
    u2 = [q for q in users if q in reports and reports[q].serving_ri != l_m]
    return u1, u2


def _recommends(report, cell):
    iri = report.recommended_iri
    if iri is None:
        return None
    if isinstance(iri, dict):
        return iri.get(cell)
    return iri


def partition_slave_users(users, master_cell, l_m, reports, comp):
    """Slave-side groups: honored victims, other cooperating users,
    non-cooperating users."""
    u1, u2, u3 = [], [], []
    for q in users:
        if q not in reports:
            continue
        mset = comp.measurement[q]
        if not mset:
            u3.append(q)
        elif master_cell in mset and _recommends(reports[q], master_cell) == l_m:
            u1.append(q)
        else:
            u2.append(q)
    return u1, u2, u3


# ---------------------------------------------------------------------------
# Grids and scheduling
# ---------------------------------------------------------------------------

@dataclass
class CellGrid:
    cell: int
    user: np.ndarray                # (n_subbands,) user id or -1
    rank: np.ndarray
    pmi: np.ndarray
    sched_rate: np.ndarray
    group: list                     # per subband: M1/M2/S1/S2/S3/PF/''
    realized_rate: np.ndarray = None
    outage: np.ndarray = None

    @classmethod
    def empty(cls, cell, n_subbands):
        return cls(cell, np.full(n_subbands, -1), np.zeros(n_subbands, dtype=int),
                   np.zeros(n_subbands, dtype=int), np.zeros(n_subbands),
                   [""] * n_subbands)


def _place(grid: CellGrid, k, user, reports, rate_table, label):
    rep = reports[user]
    grid.user[k] = user
    grid.rank[k] = rep.serving_ri
    grid.pmi[k] = rep.pmi[k]
    grid.sched_rate[k] = rate_table[user, k]
    grid.group[k] = label


def _pf_fill(grid: CellGrid, candidates, labels, reports, rate_table, pf: PfState):
    """Per-subband argmax of rate/average over the candidates, for every
    still-unassigned subband.  First maximum wins, so ties break to the
    lowest user id."""
    if not candidates:
        return
    cand = np.asarray(candidates)
    metric = rate_table[cand] / pf.avg[cand, None]       # (n_cand, K)
    for k in range(grid.user.size):
        if grid.user[k] >= 0:
            continue
        best = int(np.argmax(metric[:, k]))
        _place(grid, k, int(cand[best]), reports, rate_table, labels[best])


def schedule_subframe_baseline(cell, users, reports, pf: PfState, rate_table,
                               n_subbands) -> CellGrid:
    """Plain frequency-domain PF: each subband goes to the served user with
    the best dequantized-CQI rate over smoothed average throughput."""
    grid = CellGrid.empty(cell, n_subbands)
    cands = [q for q in users if q in reports]
    _pf_fill(grid, cands, ["PF"] * len(cands), reports, rate_table, pf)
    return grid


def _schedule_master(grid, users, l_m, reports, rate_table, pf):
    u1, u2 = partition_master_users(users, l_m, reports)
    if u1:
        _pf_fill(grid, u1, ["M1"] * len(u1), reports, rate_table, pf)
        return True
    _pf_fill(grid, u2, ["M2"] * len(u2), reports, rate_table, pf)
    return False


def _schedule_slave(grid, users, master_cell, l_m, honoring, reports, comp,
                    rate_table, pf):
    if not honoring:
        cands = [q for q in users if q in reports]
        _pf_fill(grid, cands, ["PF"] * len(cands), reports, rate_table, pf)
        return
    u1, u2, u3 = partition_slave_users(users, master_cell, l_m, reports, comp)
    if u1:
        # every honored victim first claims its single best subband
        order = sorted(u1, key=lambda q: (-np.max(rate_table[q]) / pf.avg[q], q))
        for q in order:
            free = np.flatnonzero(grid.user < 0)
            if free.size == 0:
                break
            k = free[np.argmax(rate_table[q, free] / pf.avg[q])]
            _place(grid, k, q, reports, rate_table, "S1")
    pool = u1 + u3
    if pool:
        _pf_fill(grid, pool, ["S1"] * len(u1) + ["S3"] * len(u3),
                 reports, rate_table, pf)
    elif u2:
        _pf_fill(grid, u2, ["S2"] * len(u2), reports, rate_table, pf)


def schedule_subframe_ms(cluster, t, pattern, reports, comp, pf: PfState,
                         rate_table, users_of, n_subbands,
                         master_has_requests, slave_honoring_belief):
    """Schedule one cluster for one subframe under Master-Slave rules.

    ``pattern`` is the master's active cycling pattern, ``users_of`` maps a
    cell to its served users.  ``master_has_requests`` reflects the rank
    requests actually pending at the master; without any, the whole cluster
    falls back to plain PF.  ``slave_honoring_belief`` is the delivered
    binary master-state flag the slaves act upon (the master itself acts on
    its true partition).  Returns ({cell: CellGrid}, info dict).
    """
    ms = MasterSchedule(tuple(cluster))
    master = ms.master_at(t)
    l_m = ms.master_rank(t, pattern)
    grids = {}
    info = {"master": master, "l_m": l_m, "engaged": bool(master_has_requests),
            "honoring": False}
    for cell in cluster:
        grid = CellGrid.empty(cell, n_subbands)
        users = users_of(cell)
        if not master_has_requests:
            cands = [q for q in users if q in reports]
            _pf_fill(grid, cands, ["PF"] * len(cands), reports, rate_table, pf)
        elif cell == master:
            info["honoring"] = _schedule_master(grid, users, l_m, reports,
                                                rate_table, pf)
        else:
            _schedule_slave(grid, users, master, l_m, slave_honoring_belief,
                            reports, comp, rate_table, pf)
        grids[cell] = grid
    return grids, info


# ---------------------------------------------------------------------------
# Realization
# ---------------------------------------------------------------------------

def realized_link_rate(h_blocks_serving, precoder, signal_scale, interferers,
                       noise_power, strategy, cap=phy.RATE_CAP_PER_STREAM):
    """True rate of one scheduled link averaged over its subband blocks.

    ``interferers`` holds (scale_j, h_j blocks, F_j) of every co-scheduled
    cell.  The serving filter follows ``strategy``: exact MMSE against the
    actual interference, or the identity-precoder design evaluated against
    the actual interference.
    """
    n_blocks, n_rx = h_blocks_serving.shape[0], h_blocks_serving.shape[1]
    l = precoder.shape[1]
    a = np.sqrt(signal_scale / l) * (h_blocks_serving @ precoder)
    s_act = np.zeros((n_blocks, n_rx, n_rx), dtype=complex)
    for scale_j, h_j, f_j in interferers:
        hf = h_j @ f_j
        s_act += (scale_j / f_j.shape[1]) * (hf @ hf.conj().transpose(0, 2, 1))
    s_act[..., np.arange(n_rx), np.arange(n_rx)] += noise_power
    if strategy == "mmse_irc_ideal":
        rho = phy.sinr_mmse_exact(a, phy.inv_hermitian(s_act))
    else:
        n_tx = precoder.shape[0]
        s_design = np.zeros_like(s_act)
        for scale_j, h_j, _ in interferers:
            s_design += (scale_j / n_tx) * (h_j @ h_j.conj().transpose(0, 2, 1))
        s_design[..., np.arange(n_rx), np.arange(n_rx)] += noise_power
        r_design = a @ a.conj().transpose(0, 2, 1) + s_design
        rho = phy.sinr_mismatched(a, phy.inv_hermitian(r_design), s_act)
    return float(phy.rates_from_sinr(rho, cap).mean())


def realize_and_update(grids, env, pf: PfState):
    """Fill realized rates into the grids, apply the outage rule and update
    the PF averages.

    ``env`` provides the true channel view of the subframe: ``h_blocks(u, c,
    k)`` (blocks of subband k), ``scale(u, c)`` = alpha * Es, codebook,
    noise_power, receiver strategy and n_subbands.  Realized rate equals the
    scheduled rate when the true rate supports it, zero otherwise.
    """
    n_subbands = env.n_subbands
    user_rates = np.zeros(pf.avg.shape[0])
    for cell, grid in grids.items():
        grid.realized_rate = np.zeros(n_subbands)
        grid.outage = np.zeros(n_subbands, dtype=bool)
    for k in range(n_subbands):
        active = [(cell, g) for cell, g in grids.items() if g.user[k] >= 0]
        for cell, grid in active:
            u = int(grid.user[k])
            f = env.codebook[int(grid.rank[k])][int(grid.pmi[k])]
            interferers = []
            for other, og in active:
                if other == cell:
                    continue
                fo = env.codebook[int(og.rank[k])][int(og.pmi[k])]
                interferers.append((env.scale(u, other), env.h_blocks(u, other, k), fo))
            true_rate = realized_link_rate(env.h_blocks(u, cell, k), f,
                                           env.scale(u, cell), interferers,
                                           env.noise_power, env.receiver,
                                           env.rate_cap)
            sched = grid.sched_rate[k]
            if true_rate >= sched:
                grid.realized_rate[k] = sched
            else:
                grid.realized_rate[k] = 0.0
                grid.outage[k] = sched > 0
            user_rates[u] += grid.realized_rate[k]
    pf.update(user_rates / n_subbands)
    return user_rates / n_subbands
