"""LMMSE channel estimation under pilot contamination.

Training uses an orthonormal pilot book (identity columns; only the 0/1 pilot
inner products matter). For a link with large-scale gain beta whose UE shares
a pilot with UEs j', the per-antenna estimation-error variance is

    eps = beta * (1 - tau p beta / (tau p sum_{j' co-pilot} beta_{j'} + sigma^2))

so eps <= beta always, eps -> beta without training power, and eps -> 0 for a
collision-free pilot at high power. Full-duplex training runs two phases
(UL UEs first, then DL UEs, with DL UEs estimating their co-channel
interference links during phase one); half-duplex training is one joint phase
over all UEs and estimates no CCI.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import SystemConfig
from .pilots import PilotAssignment
from .scenario import ChannelSet, LargeScale, crandn


@dataclass
class EstimateSet:
    """Channel estimates plus per-link error variances.

    Closed-form-only sets (error variances without realizations) carry None
    in the estimate fields.
    """

    eps_dl: np.ndarray    # (K, M)
    eps_ul: np.ndarray    # (M, L)
    eps_cci: np.ndarray   # (K, L)
    h_dl_hat: np.ndarray | None = None  # (K, N)
    h_ul_hat: np.ndarray | None = None  # (N, L)
    g_cci_hat: np.ndarray | None = None  # (K, L)


def pilot_book(tau: int) -> np.ndarray:
    """Orthonormal pilot columns (identity realization)."""
    return np.eye(tau, dtype=complex)


def _copilot_beta_sums(beta_rows: np.ndarray, pilot_of: np.ndarray, tau: int) -> np.ndarray:
    """(tau, M) summed beta over the UEs assigned to each pilot."""
    onehot = np.zeros((tau, beta_rows.shape[0]))
    onehot[pilot_of, np.arange(beta_rows.shape[0])] = 1.0
    return onehot @ beta_rows


def received_training(row_channels: np.ndarray, assignment: PilotAssignment,
                      cfg: SystemConfig, rng) -> np.ndarray:
    """Stacked per-AP training observations, shape (tau, N).

    row_channels[j] is UE j's stacked 1 x N row channel; block m of row i
    collects sqrt(tau p) times the channels of the UEs on pilot i plus noise.
    """
    if not assignment.is_complete():
        raise ValueError("assignment is incomplete")
    tau = assignment.num_pilots
    amp = np.sqrt(cfg.pilot_len * cfg.train_power_w)
    y = np.zeros((tau, row_channels.shape[1]), dtype=complex)
    np.add.at(y, assignment.pilot_of, amp * row_channels)
    return y + np.sqrt(cfg.noise_power_w) * crandn(rng, y.shape)


def received_training_cci(g_cci: np.ndarray, ul_assignment: PilotAssignment,
                          cfg: SystemConfig, rng) -> np.ndarray:
    """Per-DL-UE training observations of the UL UEs' pilots, shape (K, tau)."""
    tau = ul_assignment.num_pilots
    amp = np.sqrt(cfg.pilot_len * cfg.train_power_w)
    onehot = np.zeros((g_cci.shape[1], tau))
    onehot[np.arange(g_cci.shape[1]), ul_assignment.pilot_of] = 1.0
    y = amp * (g_cci @ onehot)
    return y + np.sqrt(cfg.noise_power_w) * crandn(rng, y.shape)


def _lmmse_coefficients(beta_rows: np.ndarray, pilot_of: np.ndarray, tau: int,
                        cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """(coef, denom), both (U, M): scaling of the pilot-matched observation."""
    tp = cfg.pilot_len * cfg.train_power_w
    denom = tp * _copilot_beta_sums(beta_rows, pilot_of, tau)[pilot_of] + cfg.noise_power_w
    coef = np.sqrt(tp) * beta_rows / denom
    return coef, denom


def lmmse_rows(y: np.ndarray, assignment: PilotAssignment, beta_rows: np.ndarray,
               cfg: SystemConfig) -> np.ndarray:
    """LMMSE estimates of the stacked row channels, shape (U, N)."""
    coef, _ = _lmmse_coefficients(beta_rows, assignment.pilot_of, assignment.num_pilots, cfg)
    return np.repeat(coef, cfg.antennas_per_ap, axis=1) * y[assignment.pilot_of]


def error_variance_rows(beta_rows: np.ndarray, assignment: PilotAssignment,
                        cfg: SystemConfig) -> np.ndarray:
    """Closed-form per-link error variances for AP-side links, shape (U, M)."""
    tp = cfg.pilot_len * cfg.train_power_w
    _, denom = _lmmse_coefficients(beta_rows, assignment.pilot_of, assignment.num_pilots, cfg)
    return beta_rows * (1.0 - tp * beta_rows / denom)


def lmmse_cci(y_cci: np.ndarray, ul_assignment: PilotAssignment, beta_cci: np.ndarray,
              cfg: SystemConfig) -> np.ndarray:
    """LMMSE estimates of the CCI scalars at the DL UEs, shape (K, L)."""
    tp = cfg.pilot_len * cfg.train_power_w
    denom = _cci_denominator(beta_cci, ul_assignment, cfg)
    coef = np.sqrt(tp) * beta_cci / denom
    return coef * y_cci[:, ul_assignment.pilot_of]


def _cci_denominator(beta_cci: np.ndarray, ul_assignment: PilotAssignment,
                     cfg: SystemConfig) -> np.ndarray:
    tp = cfg.pilot_len * cfg.train_power_w
    tau = ul_assignment.num_pilots
    onehot = np.zeros((tau, beta_cci.shape[1]))
    onehot[ul_assignment.pilot_of, np.arange(beta_cci.shape[1])] = 1.0
    copilot = beta_cci @ onehot.T  # (K, tau)
    return tp * copilot[:, ul_assignment.pilot_of] + cfg.noise_power_w


def error_variance_cci(beta_cci: np.ndarray, ul_assignment: PilotAssignment,
                       cfg: SystemConfig) -> np.ndarray:
    tp = cfg.pilot_len * cfg.train_power_w
    denom = _cci_denominator(beta_cci, ul_assignment, cfg)
    return beta_cci * (1.0 - tp * beta_cci / denom)


def error_variances_fd(ls: LargeScale, a_ul: PilotAssignment, a_dl: PilotAssignment,
                       cfg: SystemConfig) -> EstimateSet:
    """Closed-form error variances only (no realizations), FD training."""
    return EstimateSet(
        eps_dl=error_variance_rows(ls.beta_dl, a_dl, cfg),
        eps_ul=error_variance_rows(ls.beta_ul.T, a_ul, cfg).T,
        eps_cci=error_variance_cci(ls.beta_cci, a_ul, cfg),
    )


def error_variances_hd(ls: LargeScale, a_joint: PilotAssignment, cfg: SystemConfig) -> EstimateSet:
    """Closed-form error variances for one joint training phase (UL UEs first)."""
    num_ul = ls.beta_ul.shape[1]
    beta_rows = np.vstack([ls.beta_ul.T, ls.beta_dl])
    eps_rows = error_variance_rows(beta_rows, a_joint, cfg)
    return EstimateSet(
        eps_dl=eps_rows[num_ul:],
        eps_ul=eps_rows[:num_ul].T,
        eps_cci=ls.beta_cci.copy(),  # untrained in HD (and unused there)
    )


def estimate_fd(ch: ChannelSet, ls: LargeScale, a_ul: PilotAssignment, a_dl: PilotAssignment,
                cfg: SystemConfig, rng) -> EstimateSet:
    """Two-phase FD training: UL channels + CCI first, DL channels second."""
    rows_ul = ch.h_ul.conj().T  # (L, N)
    y_ul = received_training(rows_ul, a_ul, cfg, rng)
    h_ul_hat = lmmse_rows(y_ul, a_ul, ls.beta_ul.T, cfg).conj().T

    y_cci = received_training_cci(ch.g_cci, a_ul, cfg, rng)
    g_cci_hat = lmmse_cci(y_cci, a_ul, ls.beta_cci, cfg)

    y_dl = received_training(ch.h_dl, a_dl, cfg, rng)
    h_dl_hat = lmmse_rows(y_dl, a_dl, ls.beta_dl, cfg)

    eps = error_variances_fd(ls, a_ul, a_dl, cfg)
    return replace(eps, h_dl_hat=h_dl_hat, h_ul_hat=h_ul_hat, g_cci_hat=g_cci_hat)


def estimate_hd(ch: ChannelSet, ls: LargeScale, a_joint: PilotAssignment,
                cfg: SystemConfig, rng) -> EstimateSet:
    """One joint training phase over all UEs (UL indices first), no CCI."""
    rows = np.vstack([ch.h_ul.conj().T, ch.h_dl])
    beta_rows = np.vstack([ls.beta_ul.T, ls.beta_dl])
    y = received_training(rows, a_joint, cfg, rng)
    hat_rows = lmmse_rows(y, a_joint, beta_rows, cfg)
    num_ul = ch.h_ul.shape[1]
    eps = error_variances_hd(ls, a_joint, cfg)
    return replace(
        eps,
        h_ul_hat=hat_rows[:num_ul].conj().T,
        h_dl_hat=hat_rows[num_ul:],
        g_cci_hat=np.zeros_like(ls.beta_cci, dtype=complex),
    )


def perfect_estimates(ch: ChannelSet, ls: LargeScale) -> EstimateSet:
    """Genie estimates: true channels, zero error variances."""
    return EstimateSet(
        eps_dl=np.zeros_like(ls.beta_dl),
        eps_ul=np.zeros_like(ls.beta_ul),
        eps_cci=np.zeros_like(ls.beta_cci),
        h_dl_hat=ch.h_dl.copy(),
        h_ul_hat=ch.h_ul.copy(),
        g_cci_hat=ch.g_cci.copy(),
    )


def without_errors(es: EstimateSet) -> EstimateSet:
    """Same estimates with all error variances zeroed (non-robust design)."""
    return replace(
        es,
        eps_dl=np.zeros_like(es.eps_dl),
        eps_ul=np.zeros_like(es.eps_ul),
        eps_cci=np.zeros_like(es.eps_cci),
    )


def nmse_per_ue(es: EstimateSet, ls: LargeScale) -> np.ndarray:
    """Per-UE normalized MSE (linear) at the UE's dominant AP, DL UEs first.

    The dominant link (largest large-scale gain) is the one whose estimate
    carries the UE's service; summing the error over all APs instead buries
    the contamination structure under far links that always estimate poorly
    (their eps ~ beta regardless of the pilot assignment).
    """
    dl_idx = np.argmax(ls.beta_dl, axis=1)
    dl_r = np.arange(ls.beta_dl.shape[0])
    ul_idx = np.argmax(ls.beta_ul, axis=0)
    ul_r = np.arange(ls.beta_ul.shape[1])
    dl = es.eps_dl[dl_r, dl_idx] / ls.beta_dl[dl_r, dl_idx]
    ul = es.eps_ul[ul_idx, ul_r] / ls.beta_ul[ul_idx, ul_r]
    return np.concatenate([dl, ul])


def nmse_db(per_ue_linear) -> float:
    """Aggregate NMSE: mean of the per-UE dB values.

    Averaging in dB keeps collision-free UEs visible next to contaminated
    ones; aggregate across trials by averaging these per-trial dB values.
    """
    vals = np.maximum(np.asarray(per_ue_linear, dtype=float), 1e-300)
    return float(np.mean(10.0 * np.log10(vals)))


def nmse(es: EstimateSet, ls: LargeScale, cfg: SystemConfig) -> tuple[np.ndarray, float]:
    per_ue = nmse_per_ue(es, ls)
    return per_ue, nmse_db(per_ue)
