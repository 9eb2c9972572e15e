"""Cell layout, user drops, large-scale fading and CoMP set derivation.

Everything here is a pure function of (config, seed).  Large-scale gain is
log-distance path loss times lognormal shadowing; the cooperation trigger
compares the serving gain against each interferer gain with a dB threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, NetworkConfig


@dataclass
class Layout:
    cell_positions: np.ndarray     # (n_cells, 2)
    boresight_deg: np.ndarray      # (n_cells,)
    user_positions: np.ndarray     # (n_users, 2)
    serving: np.ndarray            # (n_users,) cell index with strongest alpha
    alpha: np.ndarray              # (n_users, n_cells) linear large-scale gain

    @property
    def n_cells(self):
        return self.cell_positions.shape[0]

    @property
    def n_users(self):
        return self.user_positions.shape[0]

    def users_of(self, cell):
        return np.flatnonzero(self.serving == cell)


@dataclass
class CompSets:
    """Measurement sets and the derived per-cell user sets.

    measurement[q] lists the interfering cells whose large-scale gain is
    within delta of the serving one.  comp_users[i] are the served users of i
    with a nonempty measurement set; comp_requested[i] are the users anywhere
    in the network that listed cell i (the victim set of cell i).
    """

    measurement: list              # per user: sorted list of cell ids
    comp_users: list               # per cell: sorted array of user ids
    comp_requested: list           # per cell: sorted array of user ids

    def is_comp_user(self, q):
        return len(self.measurement[q]) > 0


def _hex_sites(n_rings, isd):
    a1 = np.array([isd, 0.0])
    a2 = np.array([isd * 0.5, isd * np.sqrt(3.0) / 2.0])
    sites = []
    for i in range(-n_rings, n_rings + 1):
        for j in range(-n_rings, n_rings + 1):
            if abs(i + j) > n_rings:
                continue
            sites.append(i * a1 + j * a2)
    sites = np.array(sites)
    order = np.lexsort((sites[:, 0], sites[:, 1], np.round(np.hypot(*sites.T), 6)))
    return sites[order]


def _wrap_translations(net: NetworkConfig):
    """Mirror translations for hex wrap-around (cluster shift i=r+1, j=r)."""
    if not net.wraparound or net.layout_kind != "hex_grid":
        return np.zeros((1, 2))
    isd = net.inter_site_distance
    r = net.hex_rings
    a1 = np.array([isd, 0.0])
    a2 = np.array([isd * 0.5, isd * np.sqrt(3.0) / 2.0])
    t = (r + 1) * a1 + r * a2
    angles = np.deg2rad(60.0 * np.arange(6))
    rots = np.stack([np.cos(angles) * t[0] - np.sin(angles) * t[1],
                     np.sin(angles) * t[0] + np.cos(angles) * t[1]], axis=1)
    return np.vstack([np.zeros((1, 2)), rots])


def cell_sites(net: NetworkConfig):
    """Cell centers and boresight angles for the configured layout."""
    if net.layout_kind == "ring":
        n = net.n_cells
        if n == 1:
            centers = np.zeros((1, 2))
        else:
            radius = net.inter_site_distance / (2.0 * np.sin(np.pi / n))
            ang = 2.0 * np.pi * np.arange(n) / n
            centers = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        bores = np.degrees(np.arctan2(-centers[:, 1], -centers[:, 0]))  # face inward
        return centers, bores
    if net.layout_kind == "hex_grid":
        sites = _hex_sites(net.hex_rings, net.inter_site_distance)
        n_expected = sites.shape[0] * net.sectors_per_site
        if net.n_cells != n_expected:
            raise ConfigError(
                f"hex_grid with {sites.shape[0]} sites x {net.sectors_per_site} sectors "
                f"has {n_expected} cells, config says {net.n_cells}")
        centers = np.repeat(sites, net.sectors_per_site, axis=0)
        bores = np.tile(360.0 * np.arange(net.sectors_per_site) / max(net.sectors_per_site, 1),
                        sites.shape[0])
        return centers, bores
    if net.layout_kind == "explicit_positions":
        centers = np.asarray(net.cell_positions, dtype=float).reshape(-1, 2)
        if centers.shape[0] != net.n_cells:
            raise ConfigError("cell_positions length must equal n_cells")
        return centers, np.zeros(centers.shape[0])
    raise ConfigError(f"unknown layout_kind {net.layout_kind!r}")


def _drop_users(net: NetworkConfig, centers, bores, rng):
    radius = net.drop_radius or net.inter_site_distance / np.sqrt(3.0)
    if radius <= net.min_distance:
        raise ConfigError("drop radius must exceed min_distance")
    sectored = net.layout_kind == "hex_grid" and net.sectors_per_site > 1
    span = 2.0 * np.pi / net.sectors_per_site if sectored else 2.0 * np.pi
    users = []
    for c in range(net.n_cells):
        r = np.sqrt(rng.uniform(net.min_distance ** 2, radius ** 2, net.users_per_cell))
        theta = np.deg2rad(bores[c]) + rng.uniform(-span / 2, span / 2, net.users_per_cell)
        users.append(centers[c] + r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1))
    return np.vstack(users)


def sector_gain_db(net: NetworkConfig, offset_deg):
    """Parabolic sector attenuation; zero everywhere for omni patterns."""
    if net.sector_pattern == "omni":
        return np.zeros_like(np.asarray(offset_deg, dtype=float))
    off = (np.asarray(offset_deg, dtype=float) + 180.0) % 360.0 - 180.0
    att = 12.0 * (off / net.sector_beamwidth_deg) ** 2
    return -np.minimum(att, net.sector_max_atten_db)


def compute_large_scale(positions, net: NetworkConfig, seed):
    """Path loss times lognormal shadowing for every (user, cell) pair.

    ``positions`` is (cell_positions, boresight_deg, user_positions).
    Distances below ``min_distance`` are clamped.  Deterministic given seed.
    """
    centers, bores, users = positions
    rng = np.random.default_rng(seed)
    trans = _wrap_translations(net)
    diff = users[:, None, None, :] - centers[None, :, None, :] - trans[None, None, :, :]
    dist_all = np.hypot(diff[..., 0], diff[..., 1])
    k_best = np.argmin(dist_all, axis=2)
    dist = np.take_along_axis(dist_all, k_best[..., None], axis=2)[..., 0]
    dist = np.maximum(dist, net.min_distance)
    pl_db = -10.0 * net.pathloss_exponent * np.log10(dist)
    shadow_db = rng.normal(0.0, net.shadowing_std_db, size=dist.shape) \
        if net.shadowing_std_db > 0 else np.zeros_like(dist)
    best = np.take_along_axis(diff, k_best[..., None, None], axis=2)[:, :, 0, :]
    angle = np.degrees(np.arctan2(best[..., 1], best[..., 0]))
    ant_db = sector_gain_db(net, angle - bores[None, :])
    alpha = 10.0 ** ((pl_db + shadow_db + ant_db) / 10.0)
    return alpha


def build_layout(net: NetworkConfig, seed) -> Layout:
    """Place cells, drop users, compute alpha and attach each user to the
    cell with the strongest large-scale gain."""
    if net.n_cells * net.users_per_cell == 0:
        raise ConfigError("layout needs at least one cell and one user")
    ss = np.random.SeedSequence(seed)
    pos_seed, shadow_seed = ss.spawn(2)
    centers, bores = cell_sites(net)
    users = _drop_users(net, centers, bores, np.random.default_rng(pos_seed))
    alpha = compute_large_scale((centers, bores, users), net, shadow_seed)
    serving = np.argmax(alpha, axis=1)
    return Layout(centers, bores, users, serving, alpha)


def derive_comp_sets(alpha, serving, delta_db) -> CompSets:
    """Measurement set per Eq-style threshold: j is measured when the serving
    gain exceeds the gain of cell j by less than delta (linear)."""
    delta = 10.0 ** (delta_db / 10.0)
    n_users, n_cells = alpha.shape
    serving_alpha = alpha[np.arange(n_users), serving]
    ratio = serving_alpha[:, None] / alpha
    inset = ratio < delta
    inset[np.arange(n_users), serving] = False
    measurement = [list(np.flatnonzero(inset[q])) for q in range(n_users)]
    comp_users = [np.array([q for q in range(n_users)
                            if serving[q] == i and measurement[q]], dtype=int)
                  for i in range(n_cells)]
    comp_requested = [np.flatnonzero(inset[:, i]) for i in range(n_cells)]
    return CompSets(measurement, comp_users, comp_requested)
