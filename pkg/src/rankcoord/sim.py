"""Simulation engine: drops, subframe loop, feedback timing, metrics.

Seed discipline: every random stream is keyed by purpose through
``np.random.SeedSequence(master_seed, spawn_key=...)``:

* ``(drop, 0)`` topology (user drop positions and shadowing),
* ``(drop, 1)`` channel initialization,
* ``(drop, 2)`` channel time evolution,
* ``(drop, 3, t)`` measurement error at feedback instant t,
* ``(drop, 4, t, u)`` interferer precoder draws of user u at instant t.

Streams never depend on scheduler decisions, so two runs differing only in
scheduler, receiver or cycling configuration consume identical randomness:
paired comparisons use common random numbers by construction (verified via
stream checksums).

Data flow per subframe: evolve the true channel, compute reports from the
measured channel on feedback instants, deliver delayed reports and
inter-cell messages, schedule, realize rates from the true channel, update
the PF averages.  The first max(feedback delay, PF time constant) subframes
are warmup and excluded from metrics.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import channel, feedback, phy, pricing, scheduler, topology
from .config import ConfigError, SimConfig, validate


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class MetricsSummary:
    scheduler: str
    receiver: str
    seed: int
    n_drops: int
    cell_avg_se: float               # bits/s/Hz/cell
    cell_edge: float                 # 5th percentile user throughput
    rank_hist: list                  # fraction of allocations per rank 1..n_tx
    rank_hist_comp: list             # same, CoMP users only
    iri_hist: list                   # reported I* histogram (CoMP reports)
    outage_rate: float
    payment_total: float
    honored_subbands: int
    payment_violations: int
    per_user_throughput: list        # drops x users, flattened
    checksum_channel: float
    checksum_alpha: float
    n_measured_subframes: int

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class _DropLogs:
    users: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    reports: list = field(default_factory=list)


def _seed(cfg_seed, *key):
    return np.random.SeedSequence(cfg_seed, spawn_key=tuple(key))


def _wideband_sinr_db(scale, serving):
    n_users = scale.shape[0]
    sig = scale[np.arange(n_users), serving]
    tot = scale.sum(axis=1)
    return 10.0 * np.log10(sig / (tot - sig + 1e-300))


def _sched_rates(cqi_rates, rank, backoff_db):
    """Backed-off scheduling rate: the CQI rate's implied per-stream SINR is
    reduced by backoff_db.  Zero backoff is an exact pass-through."""
    if backoff_db == 0.0:
        return cqi_rates
    rho = np.exp2(cqi_rates / rank) - 1.0
    rho *= 10.0 ** (-backoff_db / 10.0)
    return rank * np.log2(1.0 + rho)


class _SubframeEnv:
    """True-channel view handed to the realization step."""

    def __init__(self, h_true, scale, codebook, cfg: SimConfig, blocks_per_subband):
        self._h = h_true
        self._scale = scale
        self.codebook = codebook
        self.noise_power = cfg.network.noise_power
        self.receiver = cfg.receiver
        self.n_subbands = cfg.n_subbands
        self.rate_cap = cfg.rate_cap_per_stream
        self._bps = blocks_per_subband

    def h_blocks(self, user, cell, subband):
        lo = subband * self._bps
        return self._h.blocks[user, cell, lo:lo + self._bps]

    def scale(self, user, cell):
        return self._scale[user, cell]


# ---------------------------------------------------------------------------
# One drop
# ---------------------------------------------------------------------------

def _run_drop(cfg: SimConfig, codebook, drop, collect):
    net = cfg.network
    n_users = net.n_cells * net.users_per_cell
    rank_bounds = net.rank_bounds_array()
    global_bounds = (int(rank_bounds[:, 0].max()), int(rank_bounds[:, 1].min()))

    layout = topology.build_layout(net, _seed(cfg.seed, drop, 0))
    comp = topology.derive_comp_sets(layout.alpha, layout.serving, net.delta_db)
    scale = layout.alpha * net.tx_power
    wideband_db = _wideband_sinr_db(scale, layout.serving)
    clusters = [tuple(range(i, i + net.cluster_size))
                for i in range(0, net.n_cells, net.cluster_size)]

    h = channel.sample_channel(n_users, net.n_cells, net.n_rx, net.n_tx,
                               cfg.n_subcarriers, cfg.coherence_subcarriers,
                               _seed(cfg.seed, drop, 1), cfg.corr_tx, cfg.corr_rx)
    ar = channel.ar_coefficient(cfg.doppler_hz, cfg.subframe_duration)
    proc = channel.ChannelProcess(h, ar, _seed(cfg.seed, drop, 2),
                                  cfg.corr_tx, cfg.corr_rx)
    err_model = channel.MeasurementErrorModel(cfg.error_model.mode,
                                              cfg.error_model.mse_table)
    checksum_channel = float(np.abs(h.blocks).sum())
    checksum_alpha = float(layout.alpha.sum())

    quant_cqi = feedback.Quantizer(cfg.cqi_bits, *cfg.cqi_range)
    quant_delta = feedback.Quantizer(cfg.delta_cqi_bits, *cfg.delta_cqi_range)
    fb_mode = "baseline" if cfg.scheduler == "baseline" else "coordinated"
    coordinated = cfg.scheduler == "master_slave"

    blocks_per_subband = cfg.subcarriers_per_subband // cfg.coherence_subcarriers
    block_subband = np.repeat(np.arange(cfg.n_subbands), blocks_per_subband)

    pf = scheduler.PfState.init(n_users, cfg.pf_time_constant, cfg.pf_init)
    olla_offset = np.zeros(n_users)
    bus = scheduler.MessageBus()
    reports = {}
    pending = []                     # (delivery_t, {user: report})
    requests = {}                    # (victim, target) -> (iri, weight)
    default_pattern = scheduler.derive_cycling_pattern(
        {}, global_bounds, cfg.cycling.mode, cfg.cycling.template,
        cfg.cycling.static_sequence)
    pattern_timeline = {c: [(0, default_pattern)] for c in range(net.n_cells)}
    state_belief = {}                # (cluster_index, t) -> honoring bool
    prices = pricing.PriceTable()

    warmup = cfg.warmup()
    logs = _DropLogs()
    user_tput = np.zeros(n_users)
    rank_counts = np.zeros(net.n_tx + 1)
    rank_counts_comp = np.zeros(net.n_tx + 1)
    iri_counts = np.zeros(net.n_tx + 1)
    outages = 0
    scheduled_allocs = 0
    payment_total = 0.0
    honored_subbands = 0
    violations = 0
    n_measured = 0

    def active_pattern(cell, t):
        entries = [p for t0, p in pattern_timeline[cell] if t0 <= t]
        return entries[-1]

    def rank_request_counts(cell):
        counts = {}
        for (victim, target), (iri, weight) in requests.items():
            if target == cell:
                inc = weight if cfg.cycling.priority_weighting == "qos" else 1.0
                counts[iri] = counts.get(iri, 0.0) + inc
        return counts

    for t in range(cfg.n_subframes):
        h_true = proc.current

        # --- terminal reports on feedback instants -----------------------
        if t % cfg.feedback_period == 0:
            h_meas = channel.apply_measurement_error(h_true, err_model,
                                                     wideband_db,
                                                     _seed(cfg.seed, drop, 3, t))
            new_reports = {}
            for u in range(n_users):
                sc = int(layout.serving[u])
                interferers = [(j, scale[u, j], h_meas.blocks[u, j],
                                (int(rank_bounds[j, 0]), int(rank_bounds[j, 1])))
                               for j in comp.measurement[u]]
                link = feedback.TerminalLink(
                    h_serving=h_meas.blocks[u, sc],
                    signal_scale=scale[u, sc],
                    noise_power=net.noise_power,
                    serving_rank_bounds=(int(rank_bounds[sc, 0]), int(rank_bounds[sc, 1])),
                    interferers=interferers,
                    block_subband=block_subband)
                rep = feedback.select_ranks_and_precoders(
                    link, codebook, quant_cqi, quant_delta, cfg.receiver,
                    mode=fb_mode, sampling=cfg.sampling, mc_draws=cfg.mc_draws,
                    rng=np.random.default_rng(_seed(cfg.seed, drop, 4, t, u)),
                    user=u, report_delta=cfg.report_delta_cqi,
                    per_cell_iri=cfg.per_cell_iri, cap=cfg.rate_cap_per_stream)
                new_reports[u] = rep
                iri_val = rep.recommended_iri
                if isinstance(iri_val, dict):
                    iri_val = min(iri_val.values())
                if iri_val is not None:
                    iri_counts[int(iri_val)] += 1
                if collect:
                    logs.reports.append((drop, t, u, rep.serving_ri,
                                         -1 if iri_val is None else int(iri_val),
                                         "|".join(str(int(p)) for p in rep.pmi),
                                         "|".join(f"{c:.10g}" for c in np.atleast_1d(rep.cqi))))
            pending.append((t + cfg.feedback_delay, new_reports))

        # --- deliveries ---------------------------------------------------
        for delivery, batch in [p for p in pending if p[0] == t]:
            reports.update(batch)
            if coordinated:
                for u, rep in batch.items():
                    if rep.recommended_iri is None:
                        continue
                    w = pf.weights[u] * rep.price_sensitivity
                    for j in comp.measurement[u]:
                        iri = rep.recommended_iri if not isinstance(rep.recommended_iri, dict) \
                            else rep.recommended_iri[j]
                        bus.post("rank_request", t, t + cfg.backhaul_fast,
                                 victim=u, target=j, iri=int(iri), weight=float(w))
            prices = pricing.compute_prices(reports, comp, quant_delta, global_bounds)
        pending = [p for p in pending if p[0] > t]

        for m in bus.delivered(t):
            if m.kind == "rank_request" and m.delivery == t:
                requests[(m.payload["victim"], m.payload["target"])] = \
                    (m.payload["iri"], m.payload["weight"])
            elif m.kind == "pattern_broadcast" and m.delivery == t:
                pattern_timeline[m.payload["cell"]].append((t, m.payload["pattern"]))
            elif m.kind == "master_state" and m.delivery == t:
                state_belief[(m.payload["cluster"], t)] = m.payload["honoring"]

        # --- pattern rederivation and master-state prediction -------------
        if coordinated and cfg.cycling.mode == "dynamic" \
                and t > 0 and t % cfg.cycling.update_period == 0:
            for c in range(net.n_cells):
                pat = scheduler.derive_cycling_pattern(
                    rank_request_counts(c), global_bounds, "dynamic",
                    cfg.cycling.template)
                bus.post("pattern_broadcast", t, t + cfg.backhaul_slow,
                         cell=c, pattern=pat)
        if coordinated:
            t_target = t + cfg.backhaul_fast
            for ci, cluster in enumerate(clusters):
                ms = scheduler.MasterSchedule(cluster)
                m_future = ms.master_at(t_target)
                pat = active_pattern(m_future, t_target)
                l_m = ms.master_rank(t_target, pat)
                engaged = any(tgt == m_future for (_, tgt) in requests)
                u1, _ = scheduler.partition_master_users(
                    [int(q) for q in layout.users_of(m_future)], l_m, reports)
                bus.post("master_state", t, t_target, cluster=ci,
                         master=m_future, honoring=bool(engaged and u1))

        # --- scheduling ----------------------------------------------------
        rate_table = np.zeros((n_users, cfg.n_subbands))
        for u, rep in reports.items():
            vals = quant_cqi.dequantize(rep.cqi)
            rate_table[u] = _sched_rates(vals, rep.serving_ri,
                                         cfg.cqi_backoff_db + olla_offset[u])

        grids = {}
        subframe_info = {}
        if coordinated:
            for ci, cluster in enumerate(clusters):
                ms = scheduler.MasterSchedule(cluster)
                master = ms.master_at(t)
                pat = active_pattern(master, t)
                engaged = any(tgt == master for (_, tgt) in requests)
                belief = state_belief.get((ci, t), False)
                cluster_grids, info = scheduler.schedule_subframe_ms(
                    cluster, t, pat, reports, comp, pf, rate_table,
                    lambda c: [int(q) for q in layout.users_of(c)],
                    cfg.n_subbands, engaged, belief)
                grids.update(cluster_grids)
                subframe_info[ci] = info
        else:
            for c in range(net.n_cells):
                grids[c] = scheduler.schedule_subframe_baseline(
                    c, [int(q) for q in layout.users_of(c)], reports, pf,
                    rate_table, cfg.n_subbands)

        # --- realization ----------------------------------------------------
        env = _SubframeEnv(h_true, scale, codebook, cfg, blocks_per_subband)
        user_rates = scheduler.realize_and_update(grids, env, pf)

        if cfg.olla:
            up = cfg.olla_step_db
            down = up * cfg.olla_bler_target / (1.0 - cfg.olla_bler_target)
            for grid in grids.values():
                for k in range(cfg.n_subbands):
                    u = int(grid.user[k])
                    if u < 0 or grid.sched_rate[k] <= 0:
                        continue
                    if grid.outage[k]:
                        olla_offset[u] = min(olla_offset[u] + up, 20.0)
                    else:
                        olla_offset[u] = max(olla_offset[u] - down, 0.0)

        # --- audit -----------------------------------------------------------
        if coordinated:
            for ci, cluster in enumerate(clusters):
                cluster_grids = {c: grids[c] for c in cluster}
                rows, v = pricing.audit_subframe(
                    cluster_grids, reports, pf.weights, comp, prices,
                    master_cell=subframe_info[ci]["master"])
                violations += v
                for (cell_, k_, t_w, pay, sur, hon) in rows:
                    payment_total += pay
                    honored_subbands += int(hon)
                    if collect:
                        logs.audit.append((drop, t, cell_, k_, t_w, pay, sur, int(hon)))

        # --- metrics and traces ----------------------------------------------
        measured = t >= warmup
        if measured:
            n_measured += 1
            user_tput += user_rates
        for c, grid in grids.items():
            if coordinated:
                ci = c // net.cluster_size
                master = subframe_info[ci]["master"]
                role = "M" if c == master else \
                    f"S{(c - master) % net.cluster_size}"
            else:
                role = "-"
            for k in range(cfg.n_subbands):
                u = int(grid.user[k])
                if u >= 0 and measured:
                    scheduled_allocs += 1
                    outages += int(grid.outage[k])
                    rank_counts[int(grid.rank[k])] += 1
                    if comp.is_comp_user(u):
                        rank_counts_comp[int(grid.rank[k])] += 1
                if collect:
                    logs.trace.append((drop, t, c, role, grid.group[k], k, u,
                                       int(grid.rank[k]) if u >= 0 else 0,
                                       int(comp.is_comp_user(u)) if u >= 0 else 0,
                                       grid.sched_rate[k], grid.realized_rate[k],
                                       int(grid.outage[k])))
        proc.step()

    if collect:
        for m in bus.messages:
            detail = ";".join(f"{k}={_fmt_payload(v)}" for k, v in sorted(m.payload.items()))
            logs.messages.append((drop, m.kind, m.send, m.delivery, detail))
        for u in range(n_users):
            logs.users.append((drop, u, int(layout.serving[u]),
                               int(comp.is_comp_user(u)),
                               user_tput[u] / max(n_measured, 1)))

    return {
        "user_tput": user_tput / max(n_measured, 1),
        "comp_flags": np.array([comp.is_comp_user(u) for u in range(n_users)]),
        "serving": layout.serving,
        "rank_counts": rank_counts,
        "rank_counts_comp": rank_counts_comp,
        "iri_counts": iri_counts,
        "outages": outages,
        "scheduled_allocs": scheduled_allocs,
        "payment_total": payment_total,
        "honored": honored_subbands,
        "violations": violations,
        "checksum_channel": checksum_channel,
        "checksum_alpha": checksum_alpha,
        "n_measured": n_measured,
        "logs": logs,
    }


def _fmt_payload(v):
    if isinstance(v, scheduler.CyclingPattern):
        return "[" + ",".join(str(r) for r in v.sequence) + "]"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


# ---------------------------------------------------------------------------
# Run and compare
# ---------------------------------------------------------------------------

def run(cfg: SimConfig, out_dir=None) -> MetricsSummary:
    """Simulate all drops and aggregate metrics; optionally write the output
    files (metrics.json, users.csv, sched_trace.csv, audit.csv, rank_hist.csv,
    messages.csv, reports.csv) into ``out_dir``."""
    validate(cfg)
    if cfg.n_subframes <= cfg.warmup():
        raise ConfigError("n_subframes must exceed warmup "
                          f"({cfg.warmup()} = max(feedback_delay, pf_time_constant))")
    codebook = phy.build_codebook(cfg.network.n_tx, cfg.pmi_bits)
    collect = out_dir is not None
    drops = [_run_drop(cfg, codebook, d, collect) for d in range(cfg.n_drops)]

    tput = np.concatenate([d["user_tput"] for d in drops])
    rank_counts = sum(d["rank_counts"] for d in drops)
    rank_counts_comp = sum(d["rank_counts_comp"] for d in drops)
    iri_counts = sum(d["iri_counts"] for d in drops)
    scheduled = sum(d["scheduled_allocs"] for d in drops)
    n_cells = cfg.network.n_cells

    summary = MetricsSummary(
        scheduler=cfg.scheduler,
        receiver=cfg.receiver,
        seed=cfg.seed,
        n_drops=cfg.n_drops,
        cell_avg_se=float(np.mean([d["user_tput"].sum() / n_cells for d in drops])),
        cell_edge=float(np.percentile(tput, 5.0)),
        rank_hist=_normalized(rank_counts[1:]),
        rank_hist_comp=_normalized(rank_counts_comp[1:]),
        iri_hist=_normalized(iri_counts[1:]),
        outage_rate=float(sum(d["outages"] for d in drops) / max(scheduled, 1)),
        payment_total=float(sum(d["payment_total"] for d in drops)),
        honored_subbands=int(sum(d["honored"] for d in drops)),
        payment_violations=int(sum(d["violations"] for d in drops)),
        per_user_throughput=[float(x) for x in tput],
        checksum_channel=float(sum(d["checksum_channel"] for d in drops)),
        checksum_alpha=float(sum(d["checksum_alpha"] for d in drops)),
        n_measured_subframes=int(sum(d["n_measured"] for d in drops)),
    )
    if out_dir is not None:
        _write_outputs(out_dir, summary, drops)
    return summary


def _normalized(counts):
    total = counts.sum()
    if total == 0:
        return [0.0] * len(counts)
    return [float(c / total) for c in counts]


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(c) for c in row) + "\n")


def _fmt_cell(c):
    if isinstance(c, (float, np.floating)):
        return f"{c:.10g}"
    return str(c)


def _write_outputs(out_dir, summary: MetricsSummary, drops):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_csv(os.path.join(out_dir, "users.csv"),
               ["drop", "user", "serving_cell", "comp", "throughput"],
               [r for d in drops for r in d["logs"].users])
    _write_csv(os.path.join(out_dir, "sched_trace.csv"),
               ["drop", "subframe", "cell", "role", "group", "subband", "user",
                "rank", "comp", "sched_rate", "realized_rate", "outage"],
               [r for d in drops for r in d["logs"].trace])
    _write_csv(os.path.join(out_dir, "audit.csv"),
               ["drop", "subframe", "cell", "subband", "weighted_rate",
                "payment", "surplus", "honored"],
               [r for d in drops for r in d["logs"].audit])
    _write_csv(os.path.join(out_dir, "messages.csv"),
               ["drop", "kind", "send", "delivery", "detail"],
               [r for d in drops for r in d["logs"].messages])
    _write_csv(os.path.join(out_dir, "reports.csv"),
               ["drop", "subframe", "user", "serving_ri", "recommended_iri",
                "pmi", "cqi"],
               [r for d in drops for r in d["logs"].reports])
    ranks = list(range(1, len(summary.rank_hist) + 1))
    _write_csv(os.path.join(out_dir, "rank_hist.csv"),
               ["rank", "fraction_all", "fraction_comp"],
               [(r, summary.rank_hist[r - 1], summary.rank_hist_comp[r - 1])
                for r in ranks])


_COMPARE_FIELDS = ("scheduler", "receiver", "cycling", "cqi_backoff_db", "olla")


def compare(cfg_a: SimConfig, cfg_b: SimConfig, seed=None, out_dir=None):
    """Run two configurations on identical drops and channels.

    The configs may differ only in scheduler, receiver, cycling and link
    adaptation fields; anything touching topology, channel or feedback
    randomness must match, which is also verified post hoc through the
    stream checksums.  Returns (summary_a, summary_b, ratio dict).
    """
    import copy as _copy
    cfg_a, cfg_b = _copy.deepcopy(cfg_a), _copy.deepcopy(cfg_b)
    if seed is not None:
        cfg_a.seed = cfg_b.seed = int(seed)
    da, db = dataclasses.asdict(cfg_a), dataclasses.asdict(cfg_b)
    for f in _COMPARE_FIELDS:
        da.pop(f, None)
        db.pop(f, None)
    if da != db:
        diff = [k for k in da if da[k] != db[k]]
        raise ConfigError(f"compare() configs differ outside scheduler/receiver/"
                          f"pattern fields: {diff}")
    sub_a = os.path.join(out_dir, "a") if out_dir else None
    sub_b = os.path.join(out_dir, "b") if out_dir else None
    ma = run(cfg_a, sub_a)
    mb = run(cfg_b, sub_b)
    if ma.checksum_channel != mb.checksum_channel or ma.checksum_alpha != mb.checksum_alpha:
        raise RuntimeError("common-random-number pairing broken: stream checksums differ")
    ratios = {
        "cell_avg_ratio": ma.cell_avg_se / mb.cell_avg_se if mb.cell_avg_se else np.nan,
        "cell_edge_ratio": ma.cell_edge / mb.cell_edge if mb.cell_edge else np.nan,
        "outage_a": ma.outage_rate,
        "outage_b": mb.outage_rate,
        "rank_hist_delta": [a - b for a, b in zip(ma.rank_hist, mb.rank_hist)],
        "rank_hist_comp_delta": [a - b for a, b in zip(ma.rank_hist_comp,
                                                       mb.rank_hist_comp)],
    }
    if out_dir is not None:
        with open(os.path.join(out_dir, "ratios.json"), "w") as fh:
            json.dump(ratios, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return ma, mb, ratios
