"""Interference pricing over the discrete rank grid.

A victim's price for an interferer rank L is the finite difference
(T(I*) - T(L)) / (L - I*), zero at L = I*: the per-rank-step throughput
sensitivity.  A cell's payment on a resource is the weighted throughput loss
it inflicts on the victims scheduled in the other cells, and its surplus is
its own weighted rate minus that payment.  These quantities audit the
coordinated scheduler (an honored recommendation must cost nothing) and, on
small instances, an exhaustive search over user and rank assignments gives
the exact network optimum to compare against.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


@dataclass
class VictimPrice:
    """Loss table of one (victim, interfering cell) pair.

    ``losses[L - rank_lo]`` is the victim's throughput loss when the
    interferer transmits rank L instead of the preferred ``i_star``; it is
    zero at ``i_star`` by construction.
    """

    victim: int
    target: int
    i_star: int
    losses: np.ndarray
    rank_lo: int

    def loss(self, l_interf):
        # outside the reported grid the nearest entry applies
        idx = int(np.clip(int(l_interf) - self.rank_lo, 0, self.losses.size - 1))
        return float(self.losses[idx])

    def price(self, l_interf):
        if int(l_interf) == self.i_star:
            return 0.0
        return self.loss(l_interf) / (int(l_interf) - self.i_star)


@dataclass
class PriceTable:
    entries: dict = field(default_factory=dict)   # (victim, target) -> VictimPrice
    violations: list = field(default_factory=list)

    def get(self, victim, target):
        return self.entries.get((victim, target))

    def victims_of(self, target):
        return [vp for (v, tgt), vp in self.entries.items() if tgt == target]


def compute_prices(reports, comp, delta_quantizer, rank_bounds) -> PriceTable:
    """Prices from the delta-CQI tables of the currently reported victims.

    Each victim's loss row is its dequantized delta-CQI at its own serving
    rank, as a function of the interferer rank.  Victims reporting no delta
    table get an all-zero row (price-insensitive).
    """
    lo, hi = int(rank_bounds[0]), int(rank_bounds[1])
    table = PriceTable()
    for q, rep in reports.items():
        if rep.recommended_iri is None:
            continue
        for cell in comp.measurement[q]:
            iri = rep.recommended_iri if not isinstance(rep.recommended_iri, dict) \
                else rep.recommended_iri.get(cell)
            losses = np.zeros(hi - lo + 1)
            if rep.delta_cqi is not None:
                for l in range(lo, hi + 1):
                    losses[l - lo] = delta_quantizer.dequantize(rep.delta_at(rep.serving_ri, l))
            table.entries[(q, cell)] = VictimPrice(q, cell, int(iri), losses, lo)
    return table


def compute_prices_from_rates(rate_fn, victims, targets, rank_bounds) -> PriceTable:
    """Oracle-mode prices from true rate evaluations.

    ``rate_fn(victim, target, l)`` returns the victim's true rate when the
    target cell transmits rank l (everything else held fixed).  Negative
    losses (rate not maximized at the argmax, e.g. sampling noise upstream)
    are recorded in ``violations`` and clamped for use.
    """
    lo, hi = int(rank_bounds[0]), int(rank_bounds[1])
    table = PriceTable()
    for q in victims:
        for cell in targets(q) if callable(targets) else targets:
            rates = np.array([rate_fn(q, cell, l) for l in range(lo, hi + 1)])
            i_star = lo + int(np.argmax(rates))
            losses = rates[i_star - lo] - rates
            if np.any(losses < -1e-12):
                table.violations.append((q, cell, losses.min()))
            table.entries[(q, cell)] = VictimPrice(q, cell, i_star,
                                                   np.clip(losses, 0.0, None), lo)
    return table


def payment(cell, l_cell, victims_scheduled, weights, table: PriceTable):
    """Payment of ``cell`` transmitting rank ``l_cell`` given the victims
    scheduled in the other cells: sum of (L - I*) * w_s * price = w_s * loss."""
    total = 0.0
    for s in victims_scheduled:
        vp = table.get(s, cell)
        if vp is not None:
            total += weights[s] * vp.loss(l_cell)
    return total


def surplus(cell, subband, user, rank, table: PriceTable, co_schedule,
            rate_table, weights, comp):
    """Weighted rate of scheduling (user, rank) in ``cell`` on ``subband``
    minus the payment to the victims currently scheduled elsewhere.

    ``co_schedule`` maps the other cells to their scheduled user (or None).
    """
    t = weights[user] * rate_table[user, subband]
    victims = [s for other, s in co_schedule.items()
               if other != cell and s is not None and cell in comp.measurement[s]]
    return t - payment(cell, rank, victims, weights, table)


# ---------------------------------------------------------------------------
# Centralized exhaustive oracle
# ---------------------------------------------------------------------------

MAX_ORACLE_COMBOS = 200_000


def centralized_exhaustive(users_per_cell, rank_bounds, n_subbands, rate_fn,
                           weights):
    """Exact maximizer of the network weighted sum-rate by enumeration.

    ``users_per_cell`` maps cell -> candidate users; ``rate_fn(k, assign)``
    returns {cell: user rate} for a full assignment {cell: (user, rank)} on
    subband k.  Subbands are separable, so each is enumerated on its own.
    Ties break lexicographically (first maximum over the ascending
    enumeration order).  Guarded against combinatorial blow-up.
    """
    cells = sorted(users_per_cell)
    lo, hi = int(rank_bounds[0]), int(rank_bounds[1])
    options = {c: [(u, l) for u in users_per_cell[c] for l in range(lo, hi + 1)]
               for c in cells}
    n_combos = int(np.prod([len(options[c]) for c in cells]))
    if n_combos * n_subbands > MAX_ORACLE_COMBOS:
        raise ValueError(f"instance too large for exhaustive search "
                         f"({n_combos} combos x {n_subbands} subbands)")
    best_assign, best_total = [], 0.0
    for k in range(n_subbands):
        best_val, best = -np.inf, None
        for combo in itertools.product(*(options[c] for c in cells)):
            assign = dict(zip(cells, combo))
            rates = rate_fn(k, assign)
            val = sum(weights[assign[c][0]] * rates[c] for c in cells)
            if val > best_val:
                best_val, best = val, assign
        best_assign.append(best)
        best_total += best_val
    return best_assign, best_total


# ---------------------------------------------------------------------------
# Schedule audit
# ---------------------------------------------------------------------------

def audit_subframe(grids, reports, weights, comp, table: PriceTable,
                   master_cell=None):
    """Per (cell, subband) surplus accounting of one scheduled subframe.

    Returns (rows, violations).  Each row is (cell, subband, weighted rate,
    payment, surplus, honored).  ``honored`` marks subbands where the master
    transmits exactly the recommended rank of a victim scheduled elsewhere;
    a nonzero payment contribution from such a victim is a violation.
    """
    rows, violations = [], 0
    cells = sorted(grids)
    n_subbands = grids[cells[0]].user.size
    for i in cells:
        gi = grids[i]
        for k in range(n_subbands):
            u = int(gi.user[k])
            t = weights[u] * gi.sched_rate[k] if u >= 0 else 0.0
            pay, honored = 0.0, False
            if u >= 0:
                for m in cells:
                    if m == i:
                        continue
                    s = int(grids[m].user[k])
                    if s < 0 or i not in comp.measurement[s]:
                        continue
                    vp = table.get(s, i)
                    if vp is None:
                        continue
                    contrib = weights[s] * vp.loss(gi.rank[k])
                    pay += contrib
                    if i == master_cell and int(gi.rank[k]) == vp.i_star:
                        honored = True
                        if contrib != 0.0:
                            violations += 1
            rows.append((i, k, t, pay, t - pay, honored))
    return rows, violations
