"""Joint power control and AP association by successive inner approximation.

Each outer iteration linearizes the two SINR constraints around the current
point with the x^2/y minorant

    h_fr(x, y | x0, y0) = (2 x0/y0) x - (x0/y0)^2 y  <=  x^2/y,

introduces denominator proxies psi (lower-bounded by the exact interference
power over the beamforming gain), and solves the resulting concave-maximize
program in (s, q, lambda, psi) with s = sqrt(omega), q = sqrt(p). Feasible
iterates of the restriction are feasible for the original problem, and the
objective sum ln(1+lambda) is non-decreasing across iterations.

Subproblems are nondimensionalized with the expansion-point magnitudes
(raw omega/psi live twenty orders of magnitude apart in watts) before they
reach the interior-point solver.

After convergence the precoders are recovered, APs whose signal-power ratio
falls below the association threshold are pruned, and the design is re-run on
the masked estimates until the association is a fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .estimation import EstimateSet
from .scenario import ChannelSet
from .solver import ConvexProgram, InfeasibleProgramError, SolverResult, solve
from .zf import (
    BeamformerSet,
    SinrCoefficients,
    ZfConditioningError,
    ZfOperators,
    compute_sinr_coefficients,
    dl_sinr_from_coeffs,
    dl_sinr_general,
    ul_sinr_from_coeffs,
    ul_sinr_general,
    zf_operators,
)

R_SP_EPS = 1e-6  # absolute regularizer inside the signal-power ratio


class InitializationError(RuntimeError):
    """No strictly feasible starting point exists for the given floors."""

    def __init__(self, message: str, dl_shortfall=None, ul_shortfall=None):
        super().__init__(message)
        self.dl_shortfall = dl_shortfall
        self.ul_shortfall = ul_shortfall


def surrogate_fr(x, y, x0, y0):
    """Affine minorant of x^2/y at (x0, y0); exact at the expansion point."""
    if np.any(np.asarray(y0) <= 0):
        raise ValueError("expansion denominator must be positive")
    return (2.0 * x0 / y0) * x - (x0 / y0) ** 2 * y


def surrogate_qu(x, x0):
    """Affine minorant of x^2 at x0 (kept as a tested utility)."""
    return 2.0 * x0 * x - x0**2


@dataclass
class TraceEntry:
    iteration: int
    objective_nats: float
    max_residual: float
    newton_steps: int


@dataclass
class SolveState:
    """Optimizer iterate: powers, SINR proxies, and the objective trace."""

    omega: np.ndarray      # (K,) DL weights, >= 0
    p: np.ndarray          # (L,) UL powers in [0, P_max]
    lambda_dl: np.ndarray  # (K,)
    lambda_ul: np.ndarray  # (L,)
    psi_dl: np.ndarray     # (K,) > 0
    psi_ul: np.ndarray     # (L,) > 0
    objective: float       # sum ln(1 + lambda), nats
    iteration: int = 0
    converged: bool = False
    trace: list[TraceEntry] = field(default_factory=list)


@dataclass
class Association:
    """AP-to-DL-UE service map derived from the signal-power ratios."""

    alpha: np.ndarray  # (K, M) binary
    r_sp: np.ndarray   # (K, M) in [0, 1)

    @property
    def density(self) -> float:
        return float(self.alpha.mean()) if self.alpha.size else 1.0


@dataclass
class _Layout:
    num_dl: int
    num_ul: int

    def __post_init__(self):
        k, l = self.num_dl, self.num_ul
        self.s = slice(0, k)
        self.q = slice(k, k + l)
        self.lam_d = slice(k + l, 2 * k + l)
        self.lam_u = slice(2 * k + l, 2 * k + 2 * l)
        self.psi_d = slice(2 * k + 2 * l, 3 * k + 2 * l)
        self.psi_u = slice(3 * k + 2 * l, 3 * k + 3 * l)
        self.n = 3 * (k + l)


@dataclass
class Subproblem:
    """Scaled convex restriction at one expansion point."""

    prog: ConvexProgram
    layout: _Layout
    var_scale: np.ndarray   # (n,) x_raw = var_scale * x_scaled
    slope_d: np.ndarray     # surrogate slope/curvature for interior starts
    curv_d: np.ndarray
    slope_u: np.ndarray
    curv_u: np.ndarray

    def encode(self, omega, p, lam_d, lam_u, psi_d, psi_u) -> np.ndarray:
        lay = self.layout
        x = np.zeros(lay.n)
        x[lay.s] = np.sqrt(np.maximum(omega, 0.0))
        x[lay.q] = np.sqrt(np.maximum(p, 0.0))
        x[lay.lam_d] = lam_d
        x[lay.lam_u] = lam_u
        x[lay.psi_d] = psi_d
        x[lay.psi_u] = psi_u
        return x / self.var_scale

    def decode(self, x_scaled: np.ndarray):
        x = self.var_scale * x_scaled
        lay = self.layout
        return (
            x[lay.s] ** 2,
            x[lay.q] ** 2,
            x[lay.lam_d].copy(),
            x[lay.lam_u].copy(),
            x[lay.psi_d].copy(),
            x[lay.psi_u].copy(),
        )


def rate_floor_lin(rate_bits: float) -> float:
    """SINR floor implied by a rate floor in bits/s/Hz."""
    return math.expm1(rate_bits * math.log(2.0))


def _psi_required(co: SinrCoefficients, omega, p):
    """Exact interference-plus-noise over gain: the psi lower bounds."""
    psi_d = (float(co.dl_err_w @ omega) + co.cci @ p + co.sigma2) / np.maximum(co.dl_gain, 1e-300)
    psi_u = (co.ul_err @ p + co.t_aa @ omega + co.sigma2 * co.ul_norm2) / np.maximum(co.ul_gain, 1e-300)
    return psi_d, psi_u


def _build_subproblem(state: SolveState, co: SinrCoefficients, cfg: SystemConfig) -> Subproblem:
    num_dl, num_ul = co.dl_gain.size, co.ul_gain.size
    num_aps = co.ap_norms.shape[0]
    lay = _Layout(num_dl, num_ul)

    s0 = np.sqrt(np.maximum(state.omega, 1e-30))
    q0 = np.sqrt(np.maximum(state.p, 1e-30))
    psi_d0 = np.maximum(state.psi_dl, 1e-300)
    psi_u0 = np.maximum(state.psi_ul, 1e-300)
    slope_d, curv_d = 2.0 * s0 / psi_d0, (s0 / psi_d0) ** 2
    slope_u, curv_u = 2.0 * q0 / psi_u0, (q0 / psi_u0) ** 2

    scale = np.ones(lay.n)
    scale[lay.s] = np.maximum(s0, max(s0.max(initial=0.0), 1e-30) * 1e-3)
    scale[lay.q] = np.maximum(q0, math.sqrt(cfg.ul_power_max_w) * 1e-3)
    scale[lay.lam_d] = np.maximum(state.lambda_dl, 1.0)
    scale[lay.lam_u] = np.maximum(state.lambda_ul, 1.0)
    scale[lay.psi_d] = psi_d0
    scale[lay.psi_u] = psi_u0

    quad_rows, lin_rows, offs, names = [], [], [], []

    def add(quad, lin, off, name):
        quad_rows.append(quad)
        lin_rows.append(lin)
        offs.append(off)
        names.append(name)

    zq = np.zeros(lay.n)
    floor_d = rate_floor_lin(cfg.rate_floor_dl)
    floor_u = rate_floor_lin(cfg.rate_floor_ul)

    for k in range(num_dl):
        # lambda <= h_fr(s_k, psi_k)
        lin = np.zeros(lay.n)
        lin[lay.lam_d.start + k] = 1.0
        lin[lay.s.start + k] = -slope_d[k]
        lin[lay.psi_d.start + k] = curv_d[k]
        add(zq, lin, 0.0, f"dl-sinr-sur[{k}]")
        # psi_k >= (error + cci + noise) / gain, quadratic in (s, q)
        quad = np.zeros(lay.n)
        quad[lay.s] = co.dl_err_w / co.dl_gain[k]
        quad[lay.q] = co.cci[k] / co.dl_gain[k]
        lin = np.zeros(lay.n)
        lin[lay.psi_d.start + k] = -1.0
        add(quad, lin, co.sigma2 / co.dl_gain[k], f"dl-denom[{k}]")
        # rate floor and sign
        lin = np.zeros(lay.n)
        lin[lay.lam_d.start + k] = -1.0
        add(zq, lin, floor_d, f"dl-floor[{k}]")
        lin = np.zeros(lay.n)
        lin[lay.s.start + k] = -1.0
        add(zq, lin, 0.0, f"s-lb[{k}]")

    for l in range(num_ul):
        lin = np.zeros(lay.n)
        lin[lay.lam_u.start + l] = 1.0
        lin[lay.q.start + l] = -slope_u[l]
        lin[lay.psi_u.start + l] = curv_u[l]
        add(zq, lin, 0.0, f"ul-sinr-sur[{l}]")
        quad = np.zeros(lay.n)
        quad[lay.q] = co.ul_err[l] / co.ul_gain[l]
        quad[lay.s] = co.t_aa[l] / co.ul_gain[l]
        lin = np.zeros(lay.n)
        lin[lay.psi_u.start + l] = -1.0
        add(quad, lin, co.sigma2 * co.ul_norm2[l] / co.ul_gain[l], f"ul-denom[{l}]")
        lin = np.zeros(lay.n)
        lin[lay.lam_u.start + l] = -1.0
        add(zq, lin, floor_u, f"ul-floor[{l}]")
        lin = np.zeros(lay.n)
        lin[lay.q.start + l] = -1.0
        add(zq, lin, 0.0, f"q-lb[{l}]")
        lin = np.zeros(lay.n)
        lin[lay.q.start + l] = 1.0
        add(zq, lin, -math.sqrt(cfg.ul_power_max_w), f"q-ub[{l}]")

    if num_dl:
        for m in range(num_aps):
            quad = np.zeros(lay.n)
            quad[lay.s] = co.ap_norms[m]
            add(quad, zq, -cfg.ap_power_max_w, f"ap-power[{m}]")

    quad = np.array(quad_rows) * scale[None, :] ** 2
    lin = np.array(lin_rows) * scale[None, :]
    offs = np.array(offs)
    row_scale = np.maximum.reduce([np.abs(quad).max(axis=1), np.abs(lin).max(axis=1), np.abs(offs)])
    row_scale = np.maximum(row_scale, 1e-300)
    prog = ConvexProgram(
        quad=quad / row_scale[:, None],
        lin=lin / row_scale[:, None],
        offs=offs / row_scale,
        log_idx=np.arange(lay.lam_d.start, lay.lam_u.stop),
        log_a=np.ones(num_dl + num_ul),
        log_b=scale[lay.lam_d.start:lay.lam_u.stop],
        names=names,
    )
    return Subproblem(
        prog=prog, layout=lay, var_scale=scale,
        slope_d=slope_d, curv_d=curv_d, slope_u=slope_u, curv_u=curv_u,
    )


def build_subproblem(state: SolveState, zf: ZfOperators, es: EstimateSet,
                     ch: ChannelSet | None, cfg: SystemConfig) -> Subproblem:
    """Convex restriction of the design problem at the state's expansion point."""
    return _build_subproblem(state, compute_sinr_coefficients(zf, es, ch, cfg), cfg)


def solve_subproblem(sub: Subproblem, x0: np.ndarray | None = None,
                     gap_tol: float = 1e-10) -> SolverResult:
    """Solve one restriction with the interior-point method."""
    return solve(sub.prog, x0=x0, gap_tol=gap_tol)


def _interior_start(sub: Subproblem, co: SinrCoefficients, cfg: SystemConfig,
                    state: SolveState) -> np.ndarray | None:
    """Strictly interior start built from the expansion point, else None."""
    omega = state.omega.copy()
    p = state.p.copy()
    if omega.size:
        loads = co.ap_norms @ omega
        ratio = float(loads.max()) / cfg.ap_power_max_w if loads.size else 0.0
        if ratio > 1.0 - 1e-9:
            omega *= (1.0 - 1e-8) / max(ratio, 1e-300)
    if p.size:
        p = np.clip(p, cfg.ul_power_max_w * 1e-12, cfg.ul_power_max_w * (1.0 - 1e-9))
    floor_d = rate_floor_lin(cfg.rate_floor_dl)
    floor_u = rate_floor_lin(cfg.rate_floor_ul)
    psi_d, psi_u = _psi_required(co, omega, p)
    s = np.sqrt(np.maximum(omega, 0.0))
    q = np.sqrt(np.maximum(p, 0.0))

    def inflate(psi, hfr_tight, floor):
        # h_fr falls linearly as psi grows; spend at most half the slack on it
        slack = hfr_tight / np.maximum(floor, 1e-300) - 1.0
        return psi * (1.0 + np.minimum(0.01, np.maximum(0.5 * slack, 0.0)))

    psi_d = inflate(psi_d, sub.slope_d * s - sub.curv_d * psi_d, floor_d)
    psi_u = inflate(psi_u, sub.slope_u * q - sub.curv_u * psi_u, floor_u)
    hfr_d = sub.slope_d * s - sub.curv_d * psi_d
    hfr_u = sub.slope_u * q - sub.curv_u * psi_u
    if np.any(hfr_d <= floor_d) or np.any(hfr_u <= floor_u):
        return None
    lam_d = floor_d + 0.98 * (hfr_d - floor_d)
    lam_u = floor_u + 0.98 * (hfr_u - floor_u)
    x0 = sub.encode(omega, p, lam_d, lam_u, psi_d, psi_u)
    if np.all(sub.prog.residuals(x0) < -1e-12):
        return x0
    return None


def _start_point(sub: Subproblem, co: SinrCoefficients, cfg: SystemConfig,
                 state: SolveState) -> np.ndarray:
    """Interior start when constructible, else the encoded expansion point
    (the solver treats a boundary-tight start as the Phase-I hint)."""
    x0 = _interior_start(sub, co, cfg, state)
    if x0 is not None:
        return x0
    return sub.encode(state.omega, state.p, state.lambda_dl, state.lambda_ul,
                      state.psi_dl, state.psi_ul)


def initialize_feasible(zf: ZfOperators, es: EstimateSet, ch: ChannelSet | None,
                        cfg: SystemConfig) -> SolveState:
    """Feasible starting point: uniform powers, else the exact power LP.

    The fast path puts DL weights at 90% of the tightest per-AP budget and UL
    powers at half budget; when that misses a floor, the max-min-slack LP
    settles feasibility exactly. Raises InitializationError with the per-UE
    shortfalls when no power allocation clears the floors.
    """
    co = compute_sinr_coefficients(zf, es, ch, cfg)
    num_dl, num_ul = co.dl_gain.size, co.ul_gain.size
    if num_dl:
        budgets = cfg.ap_power_max_w / np.maximum(co.ap_norms.sum(axis=1), 1e-300)
        omega = np.full(num_dl, 0.9 * float(budgets.min()))
    else:
        omega = np.zeros(0)
    p = np.full(num_ul, cfg.ul_power_max_w / 2.0)
    floor_d = rate_floor_lin(cfg.rate_floor_dl) * (1.0 + 1e-6) + 1e-12
    floor_u = rate_floor_lin(cfg.rate_floor_ul) * (1.0 + 1e-6) + 1e-12

    def floors_hold(om, pw):
        ok_d = not num_dl or bool(np.all(dl_sinr_from_coeffs(co, om, pw) >= floor_d))
        ok_u = not num_ul or bool(np.all(ul_sinr_from_coeffs(co, om, pw) >= floor_u))
        return ok_d and ok_u

    if not floors_hold(omega, p):
        # Uniform powers rarely clear the floors jointly (DL power is the UL
        # side's cross-AP leakage, UL power is the DL side's co-channel
        # interference). The floor set is a polyhedron in (omega, p), so
        # solve the max-min-slack LP exactly instead of scaling blindly.
        try:
            omega, p = _feasibility_lp(co, cfg)
        except InfeasibleProgramError as exc:
            raise InitializationError(
                f"rate floors unattainable: feasibility LP has no solution ({exc})",
                dl_shortfall=np.maximum(floor_d - dl_sinr_from_coeffs(co, omega, p), 0.0),
                ul_shortfall=np.maximum(floor_u - ul_sinr_from_coeffs(co, omega, p), 0.0),
            ) from exc
        if not floors_hold(omega, p):
            gamma_d = dl_sinr_from_coeffs(co, omega, p)
            gamma_u = ul_sinr_from_coeffs(co, omega, p)
            raise InitializationError(
                "rate floors unattainable: max-min-slack power LP leaves shortfalls",
                dl_shortfall=np.maximum(floor_d - gamma_d, 0.0),
                ul_shortfall=np.maximum(floor_u - gamma_u, 0.0),
            )
    psi_d, psi_u = _psi_required(co, omega, p)
    lam_d = omega / np.maximum(psi_d, 1e-300) if num_dl else np.zeros(0)
    lam_u = p / np.maximum(psi_u, 1e-300) if num_ul else np.zeros(0)
    obj = float(np.sum(np.log1p(lam_d)) + np.sum(np.log1p(lam_u)))
    return SolveState(
        omega=omega, p=p, lambda_dl=lam_d, lambda_ul=lam_u,
        psi_dl=psi_d, psi_ul=psi_u, objective=obj,
    )


def _feasibility_lp(co: SinrCoefficients, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Maximize the worst additive floor slack (in local noise units) over the
    power polyhedron; the SINR floors are linear in (omega, p) at fixed floor.

    Floors enter 1% inflated so a success leaves relative headroom for the
    restriction's interior (razor-thin feasible sets stall the barrier)."""
    num_dl, num_ul = co.dl_gain.size, co.ul_gain.size
    num_aps = co.ap_norms.shape[0]
    floor_d = 1.01 * rate_floor_lin(cfg.rate_floor_dl)
    floor_u = 1.01 * rate_floor_lin(cfg.rate_floor_ul)
    n = num_dl + num_ul + 1  # [omega-hat, p-hat, slack]
    sl_o, sl_p, idx_t = slice(0, num_dl), slice(num_dl, num_dl + num_ul), n - 1
    if num_dl:
        budgets = cfg.ap_power_max_w / np.maximum(co.ap_norms.sum(axis=1), 1e-300)
        omega_unit = float(budgets.min())
    else:
        omega_unit = 1.0
    p_unit = cfg.ul_power_max_w

    lin_rows, offs, names = [], [], []

    def add(row, off, name):
        lin_rows.append(row)
        offs.append(off)
        names.append(name)

    for k in range(num_dl):
        # floor*(den) - gain*omega_k + slack*sigma2 <= 0
        row = np.zeros(n)
        row[sl_o] = floor_d * co.dl_err_w * omega_unit
        row[sl_o.start + k] -= co.dl_gain[k] * omega_unit
        row[sl_p] = floor_d * co.cci[k] * p_unit
        row[idx_t] = co.sigma2
        add(row, floor_d * co.sigma2, f"dl-margin[{k}]")
    for l in range(num_ul):
        noise_ref = max(co.sigma2 * co.ul_norm2[l], 1e-300)
        row = np.zeros(n)
        row[sl_p] = floor_u * co.ul_err[l] * p_unit
        row[sl_p.start + l] -= co.ul_gain[l] * p_unit
        row[sl_o] = floor_u * co.t_aa[l] * omega_unit
        row[idx_t] = noise_ref
        add(row, floor_u * noise_ref, f"ul-margin[{l}]")
    if num_dl:
        for m in range(num_aps):
            row = np.zeros(n)
            row[sl_o] = co.ap_norms[m] * omega_unit
            add(row, -cfg.ap_power_max_w, f"ap-power[{m}]")
        for k in range(num_dl):
            row = np.zeros(n)
            row[sl_o.start + k] = -1.0
            add(row, 0.0, f"omega-lb[{k}]")
    for l in range(num_ul):
        row = np.zeros(n)
        row[sl_p.start + l] = -1.0
        add(row, 0.0, f"p-lb[{l}]")
        row = np.zeros(n)
        row[sl_p.start + l] = 1.0
        add(row, -1.0, f"p-ub[{l}]")
    row = np.zeros(n)
    row[idx_t] = 1.0
    add(row, -1e6, "slack-cap")

    lin = np.array(lin_rows)
    offs = np.array(offs)
    row_scale = np.maximum(np.abs(lin).max(axis=1), np.abs(offs))
    row_scale = np.maximum(row_scale, 1e-300)
    prog = ConvexProgram(
        quad=np.zeros_like(lin),
        lin=lin / row_scale[:, None],
        offs=offs / row_scale,
        log_idx=np.array([idx_t]),
        log_a=np.array([16.0]),  # keeps ln defined for slack > -16
        log_b=np.array([1.0]),
        names=names,
    )
    res = solve(prog, gap_tol=1e-9)
    x = res.x
    return np.maximum(x[sl_o], 0.0) * omega_unit, np.clip(x[sl_p], 0.0, 1.0) * p_unit


def _original_violation(co: SinrCoefficients, cfg: SystemConfig, omega, p,
                        lam_d, lam_u) -> float:
    """Worst residual of the unapproximated constraints (relative for powers)."""
    viol = 0.0
    if lam_d.size:
        viol = max(viol, float(np.max(lam_d - dl_sinr_from_coeffs(co, omega, p))))
        viol = max(viol, float(np.max(rate_floor_lin(cfg.rate_floor_dl) - lam_d)))
        loads = co.ap_norms @ omega
        viol = max(viol, float(np.max(loads / cfg.ap_power_max_w - 1.0)))
    if lam_u.size:
        viol = max(viol, float(np.max(lam_u - ul_sinr_from_coeffs(co, omega, p))))
        viol = max(viol, float(np.max(rate_floor_lin(cfg.rate_floor_ul) - lam_u)))
        viol = max(viol, float(np.max(p / cfg.ul_power_max_w - 1.0)))
    return viol


def run_sca(init: SolveState, zf: ZfOperators, es: EstimateSet, ch: ChannelSet | None,
            cfg: SystemConfig, max_iter: int = 200) -> SolveState:
    """Iterate convex restrictions until the objective gain drops below
    cfg.sca_tol (or the iteration cap is hit, flagged via `converged`)."""
    co = compute_sinr_coefficients(zf, es, ch, cfg)
    state = init
    f_prev = init.objective
    trace = list(init.trace)
    converged = False
    gap_hint = None
    for it in range(1, max_iter + 1):
        sub = _build_subproblem(state, co, cfg)
        x0 = _start_point(sub, co, cfg, state)
        res = solve(sub.prog, x0=x0, gap_tol=min(1e-10, cfg.solver_tol),
                    gap_hint=gap_hint)
        omega, p, lam_d, lam_u, psi_d, psi_u = sub.decode(res.x)
        viol = _original_violation(co, cfg, omega, p, lam_d, lam_u)
        trace.append(TraceEntry(it, res.objective, viol, res.newton_steps))
        state = SolveState(
            omega=omega, p=p, lambda_dl=lam_d, lambda_ul=lam_u,
            psi_dl=psi_d, psi_ul=psi_u, objective=res.objective,
            iteration=it, trace=trace,
        )
        diff = res.objective - f_prev
        if diff < cfg.sca_tol:
            converged = True
            break
        gap_hint = max(3.0 * diff, 10.0 * cfg.sca_tol)
        f_prev = res.objective
    state.converged = converged
    return state


def recover_precoders(zf: ZfOperators, omega: np.ndarray) -> np.ndarray:
    """W = basis * diag(sqrt(omega)): column k is UE k's stacked precoder."""
    return zf.h_zf * np.sqrt(np.maximum(np.asarray(omega, float), 0.0))[None, :]


def signal_power_ratio(w: np.ndarray, es: EstimateSet, cfg: SystemConfig) -> np.ndarray:
    """Per-(UE, AP) share of the UE's beamformed signal power, in [0, 1).

    Powers enter noise-normalized, so the absolute regularizer (there to keep
    the ratio finite as w -> 0) stays negligible against any real signal.
    """
    h = es.h_dl_hat
    num_dl = w.shape[1]
    n = cfg.antennas_per_ap
    contrib = np.zeros((num_dl, cfg.num_aps), dtype=complex)
    for m in range(cfg.num_aps):
        block = slice(m * n, (m + 1) * n)
        contrib[:, m] = np.einsum("kn,nk->k", h[:, block], w[block, :])
    total = np.abs(contrib.sum(axis=1)) ** 2 / cfg.noise_power_w
    per_ap = np.abs(contrib) ** 2 / cfg.noise_power_w
    return per_ap / (total[:, None] + R_SP_EPS)


def associate(w: np.ndarray, es: EstimateSet, cfg: SystemConfig) -> Association:
    """Threshold the signal-power ratios into the binary service map."""
    r_sp = signal_power_ratio(w, es, cfg)
    return Association(alpha=(r_sp > cfg.assoc_threshold_value).astype(np.int8), r_sp=r_sp)


def _warm_state(co: SinrCoefficients, cfg: SystemConfig, prior: SolveState) -> SolveState | None:
    """Re-seat a previous iterate on new coefficients if the floors still hold."""
    omega = prior.omega.copy()
    p = prior.p.copy()
    if omega.size:
        loads = co.ap_norms @ omega
        over = float(loads.max()) / cfg.ap_power_max_w if loads.size else 0.0
        if over >= 1.0:
            omega *= 0.999 / over
    floor_d = rate_floor_lin(cfg.rate_floor_dl)
    floor_u = rate_floor_lin(cfg.rate_floor_ul)
    gamma_d = dl_sinr_from_coeffs(co, omega, p)
    gamma_u = ul_sinr_from_coeffs(co, omega, p)
    # tolerate solver-level slack on re-seated floors; the restriction treats
    # a boundary-tight start as a Phase-I hint
    if (np.any(gamma_d < floor_d * (1.0 - 1e-9) - 1e-15)
            or np.any(gamma_u < floor_u * (1.0 - 1e-9) - 1e-15)):
        return None
    psi_d, psi_u = _psi_required(co, omega, p)
    lam_d = np.maximum(omega / np.maximum(psi_d, 1e-300), floor_d) if omega.size else np.zeros(0)
    lam_u = np.maximum(p / np.maximum(psi_u, 1e-300), floor_u) if p.size else np.zeros(0)
    obj = float(np.sum(np.log1p(lam_d)) + np.sum(np.log1p(lam_u)))
    return SolveState(omega=omega, p=p, lambda_dl=lam_d, lambda_ul=lam_u,
                      psi_dl=psi_d, psi_ul=psi_u, objective=obj)


@dataclass
class RefineResult:
    beams: BeamformerSet
    state: SolveState
    association: Association
    idempotent: bool
    fell_back: bool  # masking was rank-deficient; unmasked design kept


def refine_with_association(assoc: Association, es: EstimateSet, ch: ChannelSet | None,
                            cfg: SystemConfig, max_rounds: int = 4,
                            prior: SolveState | None = None) -> RefineResult:
    """Re-run the design with pruned APs' estimate blocks masked out.

    Iterates to an association fixed point so pruned pairs carry exactly zero
    precoder blocks and re-association reproduces the same map. A prior state
    (typically the unmasked first pass) seeds each round when it still clears
    the floors.
    """
    alpha = assoc.alpha
    result = None
    for _ in range(max_rounds):
        fell_back = False
        try:
            zf_m = zf_operators(es, cfg, alpha=alpha)
        except ZfConditioningError:
            zf_m = zf_operators(es, cfg)
            alpha = np.ones_like(alpha)
            fell_back = True
        init = None
        if prior is not None:
            init = _warm_state(compute_sinr_coefficients(zf_m, es, ch, cfg), cfg, prior)
        if init is None:
            init = initialize_feasible(zf_m, es, ch, cfg)
        state = run_sca(init, zf_m, es, ch, cfg)
        prior = state
        w = recover_precoders(zf_m, state.omega)
        new_assoc = associate(w, es, cfg)
        beams = BeamformerSet(w=w, a=zf_m.a_zf, p=state.p, omega=state.omega)
        idempotent = bool(np.array_equal(new_assoc.alpha, alpha))
        result = RefineResult(beams, state, Association(alpha=alpha, r_sp=new_assoc.r_sp),
                              idempotent, fell_back)
        if idempotent or fell_back:
            return result
        alpha = new_assoc.alpha
    return result


@dataclass
class SpectralEfficiency:
    nats: float
    rates_dl_bits: np.ndarray
    rates_ul_bits: np.ndarray

    @property
    def bits(self) -> float:
        return self.nats / math.log(2.0)


def spectral_efficiency(w: np.ndarray, p, alpha, a: np.ndarray, es: EstimateSet,
                        ch: ChannelSet, cfg: SystemConfig,
                        use_true_channels: bool = False) -> SpectralEfficiency:
    """Sum rate from the general (beamformer-level) SINRs.

    Robust by default (estimates with error-variance noise); the true-channel
    variant is the logged genie evaluation.
    """
    gd = dl_sinr_general(w, p, alpha, es, cfg, ch=ch, use_true_channels=use_true_channels)
    gu = ul_sinr_general(w, p, alpha, a, es, ch, cfg, use_true_channels=use_true_channels)
    nats = float(np.sum(np.log1p(gd)) + np.sum(np.log1p(gu)))
    ln2 = math.log(2.0)
    return SpectralEfficiency(nats=nats, rates_dl_bits=np.log1p(gd) / ln2,
                              rates_ul_bits=np.log1p(gu) / ln2)


def effective_se(f_se: float, cfg: SystemConfig, duplex: str = "fd") -> float:
    """Training-overhead-adjusted SE: (coherence - training)/coherence * f_se."""
    tau_t = cfg.training_symbols_for(duplex)
    if tau_t >= cfg.coherence_symbols:
        raise ValueError("training time must be shorter than the coherence time")
    return (cfg.coherence_symbols - tau_t) / cfg.coherence_symbols * f_se


def write_sca_trace_csv(state: SolveState, path: str) -> None:
    """Per-iteration trace: objective, worst original-constraint residual,
    Newton step count."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective_nats", "max_constraint_residual", "solver_newton_steps"])
        for entry in state.trace:
            writer.writerow([
                entry.iteration,
                format(entry.objective_nats, ".12g"),
                format(entry.max_residual, ".6g"),
                entry.newton_steps,
            ])
