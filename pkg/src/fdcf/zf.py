"""Zero-forcing transmission: operators, power accounting, and SINRs.

The DL precoder basis is the right pseudo-inverse of the estimated DL channel
matrix and the UL receiver is the left pseudo-inverse of the estimated UL
matrix, both computed through an SVD so rank problems surface as a
conditioning error rather than a silent blow-up.

When an AP-to-DL-UE association mask is given, the DL basis is rebuilt on the
masked estimates with each UE's column supported only on its serving APs'
antennas (solved against the masked rows that are visible there). Pruned
blocks are then exactly zero while the unit-gain identity on the masked
matrix still holds.

SINRs follow the worst-case robust convention: estimation errors enter as
additional noise-like powers with the interfering UE's error variance, the
AP loop/cross channels are treated as known, and multi-user terms use the
coherent sums across APs (they vanish under ZF on the estimates).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .estimation import EstimateSet
from .scenario import ChannelSet


class ZfConditioningError(RuntimeError):
    """Raised when a (masked) estimate matrix is too ill-conditioned to invert."""

    def __init__(self, message: str, cond: float):
        super().__init__(f"{message} (condition number {cond:.3e})")
        self.cond = cond


_RCOND = 1e-10


def _svd_pinv(mat: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Moore-Penrose inverse via SVD; errors if effectively rank deficient."""
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0:
        return mat.conj().T, 1.0
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    if s[-1] <= s[0] * _RCOND:
        raise ZfConditioningError(f"rank-deficient {what} matrix", cond)
    return (vh.conj().T * (1.0 / s)) @ u.conj().T, cond


def _right_pinv(rows: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Right inverse of a (U, N) row system, U <= N.

    Rows are equilibrated to unit norm first: link gains spread the row norms
    over many orders of magnitude, which would otherwise masquerade as rank
    deficiency (and lose precision). The min-norm solution is unchanged.
    """
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise ZfConditioningError(f"zero row in {what} matrix", np.inf)
    pinv_n, cond = _svd_pinv(rows / norms[:, None], what)
    return pinv_n / norms[None, :], cond


def _left_pinv(cols: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Left inverse of an (N, U) column system, U <= N, column-equilibrated."""
    norms = np.linalg.norm(cols, axis=0)
    if np.any(norms == 0.0):
        raise ZfConditioningError(f"zero column in {what} matrix", np.inf)
    pinv_n, cond = _svd_pinv(cols / norms[None, :], what)
    return pinv_n / norms[:, None], cond


def block_norms(columns: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Per-AP squared norms of stacked columns: (M, C) from (N, C)."""
    c = columns.shape[1]
    blocks = np.abs(columns.reshape(cfg.num_aps, cfg.antennas_per_ap, c)) ** 2
    return blocks.sum(axis=1)


@dataclass
class ZfOperators:
    """Pseudo-inverse transmit basis, receive rows, and cached geometry."""

    h_zf: np.ndarray            # (N, K) DL basis columns
    a_zf: np.ndarray            # (L, N) UL receiver rows
    dl_block_norms: np.ndarray  # (M, K) ||block_m of h_zf[:,k]||^2
    ul_block_norms: np.ndarray  # (M, L) ||block_m of a_zf[l]||^2
    dl_gain: np.ndarray         # (K,) |hhat_k . h_zf_k|^2 (1 up to fp)
    ul_gain: np.ndarray         # (L,)
    h_dl_rows: np.ndarray       # the (possibly masked) DL rows the basis inverts
    h_ul_cols: np.ndarray       # UL estimate columns
    cond_dl: float
    cond_ul: float
    alpha: np.ndarray | None = None  # (K, M) mask used for the DL basis, if any


def _masked_dl_basis(h_rows: np.ndarray, alpha: np.ndarray, cfg: SystemConfig) -> tuple[np.ndarray, float]:
    """Support-restricted ZF columns on the masked estimate rows.

    UE k's column lives on its serving APs' antennas and nulls the masked
    rows visible there. When more UEs are visible than k has antennas, only
    the strongest fit; the remainder leak and are charged in the evaluated
    multi-user terms.
    """
    num_dl, big_n = h_rows.shape
    n = cfg.antennas_per_ap
    masked = h_rows * np.repeat(alpha, n, axis=1)
    h_zf = np.zeros((big_n, num_dl), dtype=complex)
    worst_cond = 1.0
    for k in range(num_dl):
        cols = np.flatnonzero(np.repeat(alpha[k], n))
        if cols.size == 0:
            raise ZfConditioningError(f"DL UE {k} has no serving antennas", np.inf)
        sub = masked[:, cols]
        norms = np.linalg.norm(sub, axis=1)
        if norms[k] == 0.0:
            raise ZfConditioningError(f"DL UE {k} invisible on its own serving APs", np.inf)
        visible = np.flatnonzero(norms > norms.max() * 1e-14)
        if visible.size > cols.size:  # keep own row plus the strongest others
            order = visible[np.lexsort((visible, -norms[visible]))]
            kept = [k] + [j for j in order.tolist() if j != k][: cols.size - 1]
            visible = np.array(sorted(kept))
        elif k not in visible:
            visible = np.sort(np.append(visible, k))
        while True:
            # Nulls toward UEs sharing few antennas with this serving set can
            # be mutually inconsistent; shed the weakest until solvable.
            try:
                pinv, cond = _right_pinv(sub[visible], f"masked DL (UE {k})")
                break
            except ZfConditioningError:
                others = visible[visible != k]
                if others.size == 0:
                    raise
                weakest = others[np.argmin(norms[others])]
                visible = visible[visible != weakest]
        worst_cond = max(worst_cond, cond)
        target = np.zeros(visible.size)
        target[int(np.searchsorted(visible, k))] = 1.0
        h_zf[cols, k] = pinv @ target
    return h_zf, worst_cond


def zf_operators(es: EstimateSet, cfg: SystemConfig, alpha: np.ndarray | None = None) -> ZfOperators:
    """Build the ZF basis/receiver from the estimates.

    Requires K <= N and L <= N with well-conditioned Gram matrices; a mask
    alpha restricts each DL UE's column to its serving APs (see module doc).
    """
    h_rows = es.h_dl_hat
    h_cols = es.h_ul_hat
    num_dl = h_rows.shape[0]
    num_ul = h_cols.shape[1]
    if num_dl > cfg.n_total or num_ul > cfg.n_total:
        raise ZfConditioningError("more UEs than antennas", np.inf)

    if alpha is not None and np.all(alpha == 1):
        alpha = None
    if num_dl == 0:
        h_zf = np.zeros((cfg.n_total, 0), dtype=complex)
        cond_dl = 1.0
    elif alpha is None:
        h_zf, cond_dl = _right_pinv(h_rows, "DL estimate")
    else:
        h_zf, cond_dl = _masked_dl_basis(h_rows, alpha, cfg)

    if num_ul == 0:
        a_zf = np.zeros((0, cfg.n_total), dtype=complex)
        cond_ul = 1.0
    else:
        a_zf, cond_ul = _left_pinv(h_cols, "UL estimate")

    rows_used = h_rows if alpha is None else h_rows * np.repeat(alpha, cfg.antennas_per_ap, axis=1)
    return ZfOperators(
        h_zf=h_zf,
        a_zf=a_zf,
        dl_block_norms=block_norms(h_zf, cfg),
        ul_block_norms=block_norms(a_zf.conj().T, cfg),
        dl_gain=np.abs(np.einsum("kn,nk->k", rows_used, h_zf)) ** 2,
        ul_gain=np.abs(np.einsum("ln,nl->l", a_zf, h_cols)) ** 2,
        h_dl_rows=rows_used,
        h_ul_cols=h_cols,
        cond_dl=cond_dl,
        cond_ul=cond_ul,
        alpha=None if alpha is None else alpha.copy(),
    )


def per_ap_power(omega: np.ndarray, zf: ZfOperators, m: int) -> float:
    """Transmit power spent by AP m: sum_k omega_k ||block_m of h_zf_k||^2."""
    return float(zf.dl_block_norms[m] @ np.asarray(omega, float))


def per_ap_powers(omega: np.ndarray, zf: ZfOperators) -> np.ndarray:
    return zf.dl_block_norms @ np.asarray(omega, float)


@dataclass
class SinrCoefficients:
    """Everything the ZF SINRs (and their convex restrictions) depend on.

    DL UE k:  gamma = omega_k dl_gain_k / (dl_err_w . omega + cci[k] . p + sigma2)
    UL UE l:  gamma = p_l ul_gain_l / (ul_err[l] . p + t_aa[l] . omega
                                       + sigma2 * ul_norm2_l)
    """

    dl_gain: np.ndarray    # (K,)
    ul_gain: np.ndarray    # (L,)
    dl_err_w: np.ndarray   # (K,) coefficient of omega_k in the shared DL error power
    cci: np.ndarray        # (K, L) |ghat|^2 + eps_cci
    ul_err: np.ndarray     # (L, L) coefficient of p_l' in UE l's UL error power
    t_aa: np.ndarray       # (L, K) loop/cross-AP leakage per unit omega_k
    ul_norm2: np.ndarray   # (L,)
    ap_norms: np.ndarray   # (M, K)
    sigma2: float


def compute_sinr_coefficients(zf: ZfOperators, es: EstimateSet, ch: ChannelSet | None,
                              cfg: SystemConfig) -> SinrCoefficients:
    num_ul = zf.a_zf.shape[0]
    num_dl = zf.h_zf.shape[1]
    if ch is not None and num_ul and num_dl:
        t_aa = np.abs(zf.a_zf @ ch.g_aa @ zf.h_zf) ** 2
    else:
        t_aa = np.zeros((num_ul, num_dl))
    ghat = es.g_cci_hat if es.g_cci_hat is not None else np.zeros_like(es.eps_cci, dtype=complex)
    return SinrCoefficients(
        dl_gain=zf.dl_gain,
        ul_gain=zf.ul_gain,
        dl_err_w=np.einsum("km,mk->k", es.eps_dl, zf.dl_block_norms),
        cci=np.abs(ghat) ** 2 + es.eps_cci,
        ul_err=zf.ul_block_norms.T @ es.eps_ul,
        t_aa=t_aa,
        ul_norm2=(np.abs(zf.a_zf) ** 2).sum(axis=1),
        ap_norms=zf.dl_block_norms,
        sigma2=cfg.noise_power_w,
    )


def dl_sinr_from_coeffs(co: SinrCoefficients, omega: np.ndarray, p: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, float)
    p = np.asarray(p, float)
    den = float(co.dl_err_w @ omega) + co.cci @ p + co.sigma2
    return co.dl_gain * omega / den


def ul_sinr_from_coeffs(co: SinrCoefficients, omega: np.ndarray, p: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, float)
    p = np.asarray(p, float)
    den = co.ul_err @ p + co.t_aa @ omega + co.sigma2 * co.ul_norm2
    return co.ul_gain * p / den


def dl_sinr_zf(omega, p, es: EstimateSet, zf: ZfOperators, cfg: SystemConfig) -> np.ndarray:
    """DL SINRs in the ZF-reduced form (weights omega, UL powers p)."""
    return dl_sinr_from_coeffs(compute_sinr_coefficients(zf, es, None, cfg), omega, p)


def ul_sinr_zf(omega, p, es: EstimateSet, zf: ZfOperators, ch: ChannelSet,
               cfg: SystemConfig) -> np.ndarray:
    """UL SINRs in the ZF-reduced form, including loop/cross-AP leakage."""
    return ul_sinr_from_coeffs(compute_sinr_coefficients(zf, es, ch, cfg), omega, p)


def _mask_beams(w: np.ndarray, alpha: np.ndarray | None, cfg: SystemConfig) -> np.ndarray:
    if alpha is None:
        return w
    return w * np.repeat(alpha, cfg.antennas_per_ap, axis=1).T


def dl_sinr_general(w: np.ndarray, p, alpha, es: EstimateSet, cfg: SystemConfig,
                    ch: ChannelSet | None = None, use_true_channels: bool = False) -> np.ndarray:
    """DL SINRs for arbitrary precoders w (N, K) under association alpha.

    Keeps the multi-user terms. By default signal/interference use the
    estimates with the error variances added as noise (robust convention);
    with use_true_channels=True the true channels are used and the error
    terms dropped (genie evaluation).
    """
    p = np.asarray(p, float)
    w_eff = _mask_beams(w, alpha, cfg)
    num_dl = w.shape[1]
    if num_dl == 0:
        return np.zeros(0)
    if use_true_channels:
        if ch is None:
            raise ValueError("true-channel evaluation needs the channel set")
        rows = ch.h_dl
        cci_gain = np.abs(ch.g_cci) ** 2
        err = 0.0
    else:
        rows = es.h_dl_hat
        ghat = es.g_cci_hat if es.g_cci_hat is not None else np.zeros_like(es.eps_cci, dtype=complex)
        cci_gain = np.abs(ghat) ** 2 + es.eps_cci
        wnorm = block_norms(w_eff, cfg)  # (M, K)
        err = float(np.einsum("km,mk->", es.eps_dl, wnorm))
    cross = rows @ w_eff  # (K, K): [k, k'] = hhat_k . w_k'
    signal = np.abs(np.diag(cross)) ** 2
    mui = (np.abs(cross) ** 2).sum(axis=1) - signal
    den = mui + err + cci_gain @ p + cfg.noise_power_w
    return signal / den


def ul_sinr_general(w: np.ndarray, p, alpha, a: np.ndarray, es: EstimateSet,
                    ch: ChannelSet, cfg: SystemConfig,
                    use_true_channels: bool = False) -> np.ndarray:
    """UL SINRs for arbitrary combiner rows a (L, N) and precoders w."""
    p = np.asarray(p, float)
    num_ul = a.shape[0]
    if num_ul == 0:
        return np.zeros(0)
    w_eff = _mask_beams(w, alpha, cfg)
    cols = ch.h_ul if use_true_channels else es.h_ul_hat
    cross = a @ cols  # (L, L): [l, l'] = a_l . h_l'
    signal = np.abs(np.diag(cross)) ** 2 * p
    mui = (np.abs(cross) ** 2 * p[None, :]).sum(axis=1) - signal
    if use_true_channels:
        err = np.zeros(num_ul)
    else:
        a_norms = block_norms(a.conj().T, cfg)  # (M, L)
        err = (a_norms.T @ es.eps_ul) @ p
    leak = (np.abs(a @ ch.g_aa @ w_eff) ** 2).sum(axis=1) if w.shape[1] else np.zeros(num_ul)
    noise = cfg.noise_power_w * (np.abs(a) ** 2).sum(axis=1)
    return signal / (mui + err + leak + noise)


@dataclass
class BeamformerSet:
    """Concrete transmit/receive vectors with the powers that drive them."""

    w: np.ndarray               # (N, K) DL precoders
    a: np.ndarray               # (L, N) UL combiner rows
    p: np.ndarray               # (L,) UL transmit powers
    omega: np.ndarray | None = None  # (K,) DL weights when ZF-derived


def mrt_mrc_beams(es: EstimateSet, cfg: SystemConfig) -> BeamformerSet:
    """Matched-filter baseline: per-AP conjugate beams with an equal per-UE
    power split of the AP budget; UL combiners are the conjugate estimates at
    full UE power."""
    num_dl = es.h_dl_hat.shape[0]
    num_ul = es.h_ul_hat.shape[1]
    n = cfg.antennas_per_ap
    w = np.zeros((cfg.n_total, num_dl), dtype=complex)
    if num_dl:
        share = cfg.ap_power_max_w / num_dl
        for m in range(cfg.num_aps):
            block = slice(m * n, (m + 1) * n)
            h_blk = es.h_dl_hat[:, block]  # (K, n)
            norms = np.linalg.norm(h_blk, axis=1)
            scale = np.where(norms > 0, np.sqrt(share) / np.maximum(norms, 1e-300), 0.0)
            w[block, :] = (h_blk.conj() * scale[:, None]).T
    a = es.h_ul_hat.conj().T
    p = np.full(num_ul, cfg.ul_power_max_w)
    return BeamformerSet(w=w, a=a, p=p, omega=None)
