"""Network geometry, large-scale fading, and channel realizations.

Path-loss model (three-slope, distances in km inside the formula):

    PL(d) = -L_FIX - 35 log10(d)                      d  > 50 m
    PL(d) = -L_FIX - 15 log10(0.05) - 20 log10(d)     10 m < d <= 50 m
    PL(d) = -L_FIX - 15 log10(0.05) - 20 log10(0.01)  d <= 10 m

with the COST231-Hata fixed offset L_FIX evaluated at 1.9 GHz, 15 m AP
height, and 1.65 m UE height (about 140.72 dB). The constants below are
module configuration, not physical truth; adjust them for other bands.

Large-scale gains are beta = 10^((PL(d) + shadow_std * z) / 10) with
independent standard-normal z per link. The AP-to-AP loop (self-interference)
channel is Rician with a configured K-factor, unit large-scale gain, and is
scaled by sqrt(rsi); all other channels are Rayleigh with per-entry
variance beta.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

# Path-loss constants (see module docstring).
CARRIER_FREQ_MHZ = 1900.0
AP_HEIGHT_M = 15.0
UE_HEIGHT_M = 1.65
BREAKPOINT_NEAR_M = 10.0   # below: constant loss
BREAKPOINT_FAR_M = 50.0    # above: -35 dB/decade
MIN_DISTANCE_M = 1.0       # clamp for (near-)coincident nodes


def _fixed_offset_db() -> float:
    f = np.log10(CARRIER_FREQ_MHZ)
    return (
        46.3
        + 33.9 * f
        - 13.82 * np.log10(AP_HEIGHT_M)
        - (1.1 * f - 0.7) * UE_HEIGHT_M
        + (1.56 * f - 0.8)
    )


FIXED_OFFSET_DB = float(_fixed_offset_db())


@dataclass(frozen=True)
class Topology:
    """Node coordinates in meters, all inside the deployment disc."""

    ap_pos: np.ndarray  # (M, 2)
    dl_pos: np.ndarray  # (K, 2)
    ul_pos: np.ndarray  # (L, 2)


@dataclass(frozen=True)
class LargeScale:
    """Linear large-scale power gains per link family."""

    beta_dl: np.ndarray   # (K, M)
    beta_ul: np.ndarray   # (M, L)
    beta_cci: np.ndarray  # (K, L)
    beta_aa: np.ndarray   # (M, M), diagonal entries unused (SI handled separately)


@dataclass(frozen=True)
class ChannelSet:
    """One small-scale realization.

    h_dl row k stacks the 1 x N_m per-AP row channels of DL UE k; h_ul column l
    stacks the N_m x 1 per-AP columns of UL UE l. g_aa block (m, m') is the
    AP m' -> AP m channel; diagonal blocks are the residual loop channels.
    """

    h_dl: np.ndarray   # (K, N)
    h_ul: np.ndarray   # (N, L)
    g_cci: np.ndarray  # (K, L)
    g_aa: np.ndarray   # (N, N)


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def path_loss_db(d_m):
    """Three-slope path loss in dB (non-positive) at distance d_m meters.

    Accepts scalars or arrays; raises ValueError for any d <= 0.
    """
    d = np.asarray(d_m, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("path_loss_db requires strictly positive distances")
    d_km = d / 1000.0
    d0 = BREAKPOINT_NEAR_M / 1000.0
    d1 = BREAKPOINT_FAR_M / 1000.0
    mid_offset = FIXED_OFFSET_DB + 15.0 * np.log10(d1)
    far = -FIXED_OFFSET_DB - 35.0 * np.log10(np.maximum(d_km, d1))
    mid = -mid_offset - 20.0 * np.log10(np.clip(d_km, d0, d1))
    out = np.where(d_km > d1, far, np.where(d_km > d0, mid, -mid_offset - 20.0 * np.log10(d0)))
    if np.ndim(d_m) == 0:
        return float(out)
    return out


def sample_topology(cfg: SystemConfig, rng: np.random.Generator) -> Topology:
    """Drop APs and UEs uniformly inside the disc of cfg.radius_m."""

    def disc(n):
        r = cfg.radius_m * np.sqrt(rng.random(n))
        theta = 2.0 * np.pi * rng.random(n)
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)])

    return Topology(ap_pos=disc(cfg.num_aps), dl_pos=disc(cfg.num_dl), ul_pos=disc(cfg.num_ul))


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return np.maximum(d, MIN_DISTANCE_M)


def _beta(d: np.ndarray, cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(d.shape)
    return 10.0 ** ((path_loss_db(d) + cfg.shadow_std_db * z) / 10.0)


def large_scale(topo: Topology, cfg: SystemConfig, rng: np.random.Generator) -> LargeScale:
    """Path loss plus i.i.d. log-normal shadowing for every link.

    Draw order is fixed (DL, UL, CCI, AP-AP) so results are reproducible for
    a given generator state. Distances are clamped to MIN_DISTANCE_M.
    """
    return LargeScale(
        beta_dl=_beta(_distances(topo.dl_pos, topo.ap_pos), cfg, rng),
        beta_ul=_beta(_distances(topo.ap_pos, topo.ul_pos), cfg, rng),
        beta_cci=_beta(_distances(topo.dl_pos, topo.ul_pos), cfg, rng),
        beta_aa=_beta(_distances(topo.ap_pos, topo.ap_pos), cfg, rng),
    )


def rician_moments(k_factor_db: float) -> tuple[float, float]:
    """(mean amplitude, scatter std) of a unit-power Rician entry."""
    if np.isinf(k_factor_db):
        return 1.0, 0.0
    kappa = 10.0 ** (k_factor_db / 10.0)
    return float(np.sqrt(kappa / (1.0 + kappa))), float(np.sqrt(1.0 / (1.0 + kappa)))


def sample_channels(ls: LargeScale, cfg: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    """Draw one small-scale realization for all link families.

    Rayleigh blocks carry per-entry variance beta. The diagonal (loop) blocks
    of g_aa are sqrt(rsi) times a unit-power Rician sample whose deterministic
    part is an all-ones matrix scaled to the configured K-factor.
    """
    n = cfg.antennas_per_ap
    big_n = cfg.n_total
    h_dl = np.sqrt(np.repeat(ls.beta_dl, n, axis=1)) * crandn(rng, (cfg.num_dl, big_n))
    h_ul = np.sqrt(np.repeat(ls.beta_ul, n, axis=0)) * crandn(rng, (big_n, cfg.num_ul))
    g_cci = np.sqrt(ls.beta_cci) * crandn(rng, (cfg.num_dl, cfg.num_ul))

    g_aa = np.sqrt(np.repeat(np.repeat(ls.beta_aa, n, axis=0), n, axis=1)) * crandn(rng, (big_n, big_n))
    mu, scatter = rician_moments(cfg.rician_factor_db)
    for m in range(cfg.num_aps):
        block = slice(m * n, (m + 1) * n)
        loop = mu * np.ones((n, n)) + scatter * crandn(rng, (n, n))
        g_aa[block, block] = np.sqrt(cfg.rsi) * loop
    return ChannelSet(h_dl=h_dl, h_ul=h_ul, g_cci=g_cci, g_aa=g_aa)


def write_links_csv(topo: Topology, ls: LargeScale, cfg: SystemConfig, path: str) -> None:
    """Export one row per link: family, endpoint indices, distance, beta."""
    dists = {
        "dl": _distances(topo.dl_pos, topo.ap_pos),
        "ul": _distances(topo.ap_pos, topo.ul_pos),
        "cci": _distances(topo.dl_pos, topo.ul_pos),
        "aa": _distances(topo.ap_pos, topo.ap_pos),
    }
    betas = {"dl": ls.beta_dl, "ul": ls.beta_ul, "cci": ls.beta_cci, "aa": ls.beta_aa}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg.config_hash()} kind=links\n")
        writer = csv.writer(fh)
        writer.writerow(["link_type", "i", "j", "distance_m", "beta"])
        for kind in ("dl", "ul", "cci", "aa"):
            d, b = dists[kind], betas[kind]
            for i in range(d.shape[0]):
                for j in range(d.shape[1]):
                    if kind == "aa" and i == j:
                        continue
                    writer.writerow([kind, i, j, format(d[i, j], ".6f"), format(b[i, j], ".12g")])
