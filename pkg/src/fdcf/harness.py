"""Seeded Monte Carlo experiment drivers and CSV emission.

A scheme is "<pilot_strategy>+<transmission>", e.g. "heap_fd+zf_rd". The
duplex mode follows the strategy suffix: FD trains in two phases (overhead
2*tau symbols) and serves DL and UL simultaneously; HD trains one joint phase
(overhead tau) and serves DL and UL in orthogonal halves, so its sum SE is
(F_dl + F_ul)/2 with no loop/cross-AP or UE-to-UE interference terms. The
perfect-CSI baseline still runs the configured training (its NMSE columns
describe the pilots) but transmits on the true channels with zero error
variances.

`feasible` records whether the scheme's own optimization succeeded; the
non-robust design may miss floors under the robust evaluation, reported
separately as `floors_met_eval`. Infeasible trials keep their row with empty
SE fields and are excluded from summary means.

Every record is a pure function of (config, scheme, trial index): each trial
gets its own generator spawned from (rng_seed, trial).
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .estimation import (
    EstimateSet,
    estimate_fd,
    estimate_hd,
    nmse_db,
    nmse_per_ue,
    perfect_estimates,
    without_errors,
)
from .optimizer import (
    Association,
    InitializationError,
    RefineResult,
    associate,
    effective_se,
    initialize_feasible,
    recover_precoders,
    refine_with_association,
    run_sca,
    spectral_efficiency,
)
from .pilots import heap_fd_strategy, heap_hd_strategy, rand_fd_strategy, rand_hd_strategy
from .scenario import ChannelSet, LargeScale, sample_channels, sample_topology, large_scale
from .solver import InfeasibleProgramError, SolverNumericsError
from .zf import BeamformerSet, ZfConditioningError, block_norms, mrt_mrc_beams, zf_operators

PILOT_STRATEGIES = ("heap_fd", "heap_hd", "rand_fd", "rand_hd")
TRANSMISSIONS = ("zf_rd", "zf_nrd", "mrt_mrc_rd", "perfect_csi_zf")


@dataclass(frozen=True)
class Scheme:
    pilot_strategy: str
    transmission: str = "zf_rd"

    def __post_init__(self):
        if self.pilot_strategy not in PILOT_STRATEGIES:
            raise ValueError(f"unknown pilot strategy {self.pilot_strategy!r}")
        if self.transmission not in TRANSMISSIONS:
            raise ValueError(f"unknown transmission {self.transmission!r}")
        if self.duplex == "hd" and self.transmission in ("mrt_mrc_rd", "perfect_csi_zf"):
            raise ValueError(f"{self.transmission} is only defined for FD operation")

    @property
    def duplex(self) -> str:
        return "hd" if self.pilot_strategy.endswith("_hd") else "fd"

    @property
    def id(self) -> str:
        return f"{self.pilot_strategy}+{self.transmission}"

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        parts = text.strip().split("+")
        if len(parts) == 1:
            return cls(pilot_strategy=parts[0])
        if len(parts) == 2:
            return cls(pilot_strategy=parts[0], transmission=parts[1])
        raise ValueError(f"cannot parse scheme {text!r}")


@dataclass
class TrialRecord:
    scheme: str
    num_dl: int
    num_ul: int
    pilot_len: int
    trial: int
    feasible: bool
    nmse_db: float | None
    nmse_per_ue: np.ndarray | None = None   # linear, DL UEs then UL UEs
    f_se_bits: float | None = None          # robust evaluation
    f_se_true_bits: float | None = None     # genie (true-channel) evaluation
    effective_se_bits: float | None = None
    floors_met_eval: bool | None = None
    rates_dl_bits: np.ndarray | None = None
    rates_ul_bits: np.ndarray | None = None
    per_ap_power_w: np.ndarray | None = None
    assoc_density: float | None = None
    overhead: float | None = None
    sca_iterations: int = 0
    infeasible_reason: str = ""


def trial_rng(cfg: SystemConfig, trial: int) -> np.random.Generator:
    """Independent per-trial stream derived from (rng_seed, trial)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=cfg.rng_seed, spawn_key=(trial,)))


def _assignments(ls: LargeScale, cfg: SystemConfig, rng, strategy: str):
    if strategy == "heap_fd":
        return heap_fd_strategy(ls, cfg, rng)
    if strategy == "rand_fd":
        return rand_fd_strategy(ls, cfg, rng)
    if strategy == "heap_hd":
        return heap_hd_strategy(ls, cfg, rng)
    if strategy == "rand_hd":
        return rand_hd_strategy(ls, cfg, rng)
    raise ValueError(f"unknown pilot strategy {strategy!r}")


@dataclass
class _ZfOutcome:
    refine: RefineResult
    first_iterations: int

    @property
    def total_iterations(self) -> int:
        return self.first_iterations + self.refine.state.iteration


def _run_zf_design(es_opt: EstimateSet, ch: ChannelSet, cfg: SystemConfig) -> _ZfOutcome:
    """First pass with every AP active, association, masked refinement."""
    zf0 = zf_operators(es_opt, cfg)
    init = initialize_feasible(zf0, es_opt, ch, cfg)
    state = run_sca(init, zf0, es_opt, ch, cfg)
    w = recover_precoders(zf0, state.omega)
    beams = BeamformerSet(w=w, a=zf0.a_zf, p=state.p, omega=state.omega)
    if es_opt.h_dl_hat.shape[0] == 0:
        empty = Association(alpha=np.zeros((0, cfg.num_aps), dtype=np.int8),
                            r_sp=np.zeros((0, cfg.num_aps)))
        return _ZfOutcome(RefineResult(beams, state, empty, True, False), state.iteration)
    assoc = associate(w, es_opt, cfg)
    refined = refine_with_association(assoc, es_opt, ch, cfg, prior=state)
    return _ZfOutcome(refined, state.iteration)


def _phase_views(es: EstimateSet, ch: ChannelSet, cfg: SystemConfig, phase: str):
    """DL-only or UL-only views for the orthogonal HD halves."""
    n = cfg.n_total
    num_dl, num_ul, num_aps = cfg.num_dl, cfg.num_ul, cfg.num_aps
    if phase == "dl":
        es_v = EstimateSet(
            eps_dl=es.eps_dl, eps_ul=np.zeros((num_aps, 0)), eps_cci=np.zeros((num_dl, 0)),
            h_dl_hat=es.h_dl_hat, h_ul_hat=np.zeros((n, 0), dtype=complex),
            g_cci_hat=np.zeros((num_dl, 0), dtype=complex),
        )
        ch_v = ChannelSet(h_dl=ch.h_dl, h_ul=np.zeros((n, 0), dtype=complex),
                          g_cci=np.zeros((num_dl, 0), dtype=complex), g_aa=ch.g_aa)
        return es_v, ch_v, cfg.replace(num_ul=0)
    es_v = EstimateSet(
        eps_dl=np.zeros((0, num_aps)), eps_ul=es.eps_ul, eps_cci=np.zeros((0, num_ul)),
        h_dl_hat=np.zeros((0, n), dtype=complex), h_ul_hat=es.h_ul_hat,
        g_cci_hat=np.zeros((0, num_ul), dtype=complex),
    )
    ch_v = ChannelSet(h_dl=np.zeros((0, n), dtype=complex), h_ul=ch.h_ul,
                      g_cci=np.zeros((0, num_ul), dtype=complex), g_aa=ch.g_aa)
    return es_v, ch_v, cfg.replace(num_dl=0)


def _floors_met(se, cfg: SystemConfig, slack: float = 1e-9) -> bool:
    ok_dl = bool(np.all(se.rates_dl_bits >= cfg.rate_floor_dl - slack)) if se.rates_dl_bits.size else True
    ok_ul = bool(np.all(se.rates_ul_bits >= cfg.rate_floor_ul - slack)) if se.rates_ul_bits.size else True
    return ok_dl and ok_ul


def run_trial(cfg: SystemConfig, scheme: Scheme, trial: int) -> TrialRecord:
    """One seeded end-to-end trial: drop, train, design, evaluate."""
    if cfg.num_dl == 0 and cfg.num_ul == 0:
        return TrialRecord(
            scheme=scheme.id, num_dl=0, num_ul=0, pilot_len=cfg.pilot_len, trial=trial,
            feasible=True, nmse_db=None, f_se_bits=0.0, f_se_true_bits=0.0,
            effective_se_bits=0.0, floors_met_eval=True,
            overhead=(cfg.coherence_symbols - cfg.training_symbols_for(scheme.duplex))
            / cfg.coherence_symbols,
        )
    rng = trial_rng(cfg, trial)
    topo = sample_topology(cfg, rng)
    ls = large_scale(topo, cfg, rng)
    ch = sample_channels(ls, cfg, rng)

    if scheme.duplex == "fd":
        a_ul, a_dl = _assignments(ls, cfg, rng, scheme.pilot_strategy)
        es = estimate_fd(ch, ls, a_ul, a_dl, cfg, rng)
    else:
        a_joint = _assignments(ls, cfg, rng, scheme.pilot_strategy)
        es = estimate_hd(ch, ls, a_joint, cfg, rng)
    per_ue = nmse_per_ue(es, ls)

    record = TrialRecord(
        scheme=scheme.id, num_dl=cfg.num_dl, num_ul=cfg.num_ul, pilot_len=cfg.pilot_len,
        trial=trial, feasible=True, nmse_db=nmse_db(per_ue), nmse_per_ue=per_ue,
        overhead=(cfg.coherence_symbols - cfg.training_symbols_for(scheme.duplex))
        / cfg.coherence_symbols,
    )
    try:
        if scheme.transmission == "mrt_mrc_rd":
            _evaluate_mrt(record, es, ch, cfg)
        elif scheme.duplex == "fd":
            _evaluate_fd_zf(record, scheme, es, ch, ls, cfg)
        else:
            _evaluate_hd_zf(record, scheme, es, ch, ls, cfg)
    except (InitializationError, InfeasibleProgramError, ZfConditioningError,
            SolverNumericsError) as exc:
        record.feasible = False
        record.infeasible_reason = f"{type(exc).__name__}: {exc}"
    return record


def _evaluate_mrt(record: TrialRecord, es: EstimateSet, ch: ChannelSet, cfg: SystemConfig) -> None:
    beams = mrt_mrc_beams(es, cfg)
    alpha = np.ones((cfg.num_dl, cfg.num_aps), dtype=np.int8)
    se = spectral_efficiency(beams.w, beams.p, alpha, beams.a, es, ch, cfg)
    se_true = spectral_efficiency(beams.w, beams.p, alpha, beams.a, es, ch, cfg,
                                  use_true_channels=True)
    record.f_se_bits = se.bits
    record.f_se_true_bits = se_true.bits
    record.effective_se_bits = effective_se(se.bits, cfg, "fd")
    record.rates_dl_bits, record.rates_ul_bits = se.rates_dl_bits, se.rates_ul_bits
    record.floors_met_eval = _floors_met(se, cfg)
    record.per_ap_power_w = block_norms(beams.w, cfg).sum(axis=1)
    record.assoc_density = 1.0


def _scheme_estimates(scheme: Scheme, es: EstimateSet, ch: ChannelSet, ls: LargeScale):
    """(estimates used by the optimizer, estimates used for evaluation)."""
    if scheme.transmission == "zf_rd":
        return es, es
    if scheme.transmission == "zf_nrd":
        return without_errors(es), es
    if scheme.transmission == "perfect_csi_zf":
        genie = perfect_estimates(ch, ls)
        return genie, genie
    raise ValueError(f"no ZF estimate rule for {scheme.transmission!r}")


def _evaluate_fd_zf(record: TrialRecord, scheme: Scheme, es: EstimateSet, ch: ChannelSet,
                    ls: LargeScale, cfg: SystemConfig) -> None:
    es_opt, es_eval = _scheme_estimates(scheme, es, ch, ls)
    outcome = _run_zf_design(es_opt, ch, cfg)
    rr = outcome.refine
    se = spectral_efficiency(rr.beams.w, rr.beams.p, rr.association.alpha, rr.beams.a,
                             es_eval, ch, cfg)
    se_true = spectral_efficiency(rr.beams.w, rr.beams.p, rr.association.alpha, rr.beams.a,
                                  es_eval, ch, cfg, use_true_channels=True)
    record.f_se_bits = se.bits
    record.f_se_true_bits = se_true.bits
    record.effective_se_bits = effective_se(se.bits, cfg, "fd")
    record.rates_dl_bits, record.rates_ul_bits = se.rates_dl_bits, se.rates_ul_bits
    record.floors_met_eval = _floors_met(se, cfg)
    record.per_ap_power_w = block_norms(rr.beams.w, cfg).sum(axis=1)
    record.assoc_density = rr.association.density
    record.sca_iterations = outcome.total_iterations


def _evaluate_hd_zf(record: TrialRecord, scheme: Scheme, es: EstimateSet, ch: ChannelSet,
                    ls: LargeScale, cfg: SystemConfig) -> None:
    es_opt, es_eval = _scheme_estimates(scheme, es, ch, ls)
    nats = 0.0
    nats_true = 0.0
    floors_ok = True
    iterations = 0
    for phase in ("dl", "ul"):
        opt_v, ch_v, cfg_v = _phase_views(es_opt, ch, cfg, phase)
        eval_v, _, _ = _phase_views(es_eval, ch, cfg, phase)
        outcome = _run_zf_design(opt_v, ch_v, cfg_v)
        rr = outcome.refine
        se = spectral_efficiency(rr.beams.w, rr.beams.p, rr.association.alpha, rr.beams.a,
                                 eval_v, ch_v, cfg_v)
        se_true = spectral_efficiency(rr.beams.w, rr.beams.p, rr.association.alpha,
                                      rr.beams.a, eval_v, ch_v, cfg_v, use_true_channels=True)
        nats += se.nats
        nats_true += se_true.nats
        floors_ok = floors_ok and _floors_met(se, cfg_v)
        iterations += outcome.total_iterations
        if phase == "dl":
            record.per_ap_power_w = block_norms(rr.beams.w, cfg).sum(axis=1)
            record.assoc_density = rr.association.density
            record.rates_dl_bits = se.rates_dl_bits
        else:
            record.rates_ul_bits = se.rates_ul_bits
    ln2 = math.log(2.0)
    record.f_se_bits = nats / ln2 / 2.0          # orthogonal halves share the data time
    record.f_se_true_bits = nats_true / ln2 / 2.0
    record.effective_se_bits = effective_se(record.f_se_bits, cfg, "hd")
    record.floors_met_eval = floors_ok
    record.sca_iterations = iterations


# --- sweeps -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _write_csv(path: str, comment: str, header: list[str], rows: list[list]) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(comment.rstrip("\n") + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _nmse_task(args) -> list:
    cfg, strategy, trial = args
    rng = trial_rng(cfg, trial)
    topo = sample_topology(cfg, rng)
    ls = large_scale(topo, cfg, rng)
    if strategy.endswith("_fd"):
        from .estimation import error_variances_fd

        a_ul, a_dl = _assignments(ls, cfg, rng, strategy)
        es = error_variances_fd(ls, a_ul, a_dl, cfg)
    else:
        from .estimation import error_variances_hd

        a_joint = _assignments(ls, cfg, rng, strategy)
        es = error_variances_hd(ls, a_joint, cfg)
    return [strategy, cfg.num_dl, cfg.num_ul, cfg.pilot_len, trial,
            nmse_db(nmse_per_ue(es, ls))]


def _map_tasks(task_fn, tasks, jobs: int):
    if jobs <= 1:
        return [task_fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task_fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


NMSE_HEADER = ["scheme", "K", "L", "tau", "trial", "nmse_db"]


def nmse_sweep(cfg: SystemConfig, ue_counts, tau_list, strategies, n_trials: int,
               out_path: str | None = None, jobs: int = 1) -> list[list]:
    """Closed-form NMSE grid over K = L and tau; one row per (scheme, point,
    trial) with nmse_db = dB of that trial's UE-mean linear NMSE. Aggregate
    across trials by averaging in linear units."""
    tasks = []
    for tau in tau_list:
        for count in ue_counts:
            point_cfg = cfg.replace(num_dl=int(count), num_ul=int(count), pilot_len=int(tau))
            for strategy in strategies:
                for trial in range(n_trials):
                    tasks.append((point_cfg, strategy, trial))
    rows = _map_tasks(_nmse_task, tasks, jobs)
    rows.sort(key=lambda r: (r[0], r[3], r[1], r[4]))
    if out_path:
        comment = (f"# config_hash={cfg.config_hash()} kind=nmse trials={n_trials} "
                   "note=nmse_db_is_per_trial_mean_over_ue_dB;average_across_trials_in_dB")
        _write_csv(out_path, comment, NMSE_HEADER, rows)
    return rows


SE_HEADER = ["scheme", "K", "L", "tau", "trial", "feasible", "floors_met_eval",
             "f_se_bits", "f_se_true_bits", "effective_se_bits", "nmse_db",
             "assoc_density", "overhead", "sca_iterations", "infeasible_reason"]


def record_row(record: TrialRecord) -> list:
    return [record.scheme, record.num_dl, record.num_ul, record.pilot_len, record.trial,
            record.feasible, record.floors_met_eval, record.f_se_bits,
            record.f_se_true_bits, record.effective_se_bits, record.nmse_db,
            record.assoc_density, record.overhead, record.sca_iterations,
            record.infeasible_reason]


def _se_task(args) -> TrialRecord:
    cfg, scheme, trial = args
    return run_trial(cfg, scheme, trial)


def se_sweep(cfg: SystemConfig, ue_counts, schemes, n_trials: int,
             out_path: str | None = None, jobs: int = 1) -> list[TrialRecord]:
    """Full-pipeline SE grid over K = L; per-trial rows plus a summary CSV
    (infeasible trials excluded from means, their fraction reported)."""
    tasks = []
    for count in ue_counts:
        point_cfg = cfg.replace(num_dl=int(count), num_ul=int(count))
        for scheme in schemes:
            for trial in range(n_trials):
                tasks.append((point_cfg, scheme, trial))
    records = _map_tasks(_se_task, tasks, jobs)
    records.sort(key=lambda r: (r.scheme, r.num_dl, r.trial))
    if out_path:
        comment = (f"# config_hash={cfg.config_hash()} kind=se trials={n_trials} "
                   "note=hd_f_se_is_half_sum_of_phase_SEs;feasible=scheme_own_model")
        _write_csv(out_path, comment, SE_HEADER, [record_row(r) for r in records])
        _write_csv(_summary_path(out_path), comment.replace("kind=se", "kind=se_summary"),
                   SUMMARY_HEADER, summarize_se(records))
    return records


SUMMARY_HEADER = ["scheme", "K", "L", "tau", "n_trials", "n_feasible", "infeasible_frac",
                  "mean_f_se_bits", "mean_effective_se_bits", "std_effective_se_bits"]


def _summary_path(out_path: str) -> str:
    stem, ext = os.path.splitext(out_path)
    return f"{stem}_summary{ext or '.csv'}"


def summarize_se(records: list[TrialRecord]) -> list[list]:
    groups: dict[tuple, list[TrialRecord]] = {}
    for rec in records:
        groups.setdefault((rec.scheme, rec.num_dl, rec.num_ul, rec.pilot_len), []).append(rec)
    rows = []
    for (scheme, k, l, tau), recs in sorted(groups.items()):
        ok = [r for r in recs if r.feasible]
        eff = np.array([r.effective_se_bits for r in ok], dtype=float)
        fse = np.array([r.f_se_bits for r in ok], dtype=float)
        rows.append([
            scheme, k, l, tau, len(recs), len(ok), 1.0 - len(ok) / len(recs),
            float(fse.mean()) if ok else None,
            float(eff.mean()) if ok else None,
            float(eff.std(ddof=1)) if len(ok) > 1 else None,
        ])
    return rows


MAP_HEADER = ["row_type", "ap_index", "ue_index", "x_m", "y_m", "served_count", "r_sp", "alpha"]


def service_map(cfg: SystemConfig, trial: int = 0, out_path: str | None = None,
                scheme: Scheme | None = None) -> list[list]:
    """AP positions with served-DL-UE counts, DL UE positions, and the full
    signal-power-ratio table from one converged robust ZF run."""
    scheme = scheme or Scheme("heap_fd", "zf_rd")
    if scheme.duplex != "fd" or scheme.transmission == "mrt_mrc_rd":
        raise ValueError("service map needs an FD ZF scheme")
    rng = trial_rng(cfg, trial)
    topo = sample_topology(cfg, rng)
    ls = large_scale(topo, cfg, rng)
    ch = sample_channels(ls, cfg, rng)
    a_ul, a_dl = _assignments(ls, cfg, rng, scheme.pilot_strategy)
    es = estimate_fd(ch, ls, a_ul, a_dl, cfg, rng)
    es_opt, _ = _scheme_estimates(scheme, es, ch, ls)
    outcome = _run_zf_design(es_opt, ch, cfg)
    assoc = outcome.refine.association
    served = assoc.alpha.sum(axis=0)
    rows: list[list] = []
    for m in range(cfg.num_aps):
        rows.append(["ap", m, None, float(topo.ap_pos[m, 0]), float(topo.ap_pos[m, 1]),
                     int(served[m]), None, None])
    for k in range(cfg.num_dl):
        rows.append(["ue", None, k, float(topo.dl_pos[k, 0]), float(topo.dl_pos[k, 1]),
                     None, None, None])
    for k in range(cfg.num_dl):
        for m in range(cfg.num_aps):
            rows.append(["edge", m, k, None, None, None, float(assoc.r_sp[k, m]),
                         int(assoc.alpha[k, m])])
    if out_path:
        comment = (f"# config_hash={cfg.config_hash()} kind=service_map trial={trial} "
                   f"scheme={scheme.id} threshold={cfg.assoc_threshold_value:.6g}")
        _write_csv(out_path, comment, MAP_HEADER, rows)
    return rows
