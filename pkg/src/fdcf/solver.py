"""Dense primal log-barrier interior-point method for small convex programs.

Problem form:

    maximize    sum_i ln(log_a_i + log_b_i * x[log_idx_i])
    subject to  g_j(x) = sum_k quad_jk x_k^2 + lin_j . x + offs_j <= 0

with quad >= 0 elementwise, so every constraint is convex (linear when its
quad row is zero). Newton systems are solved densely; the intended sizes are
a few hundred variables and constraints. Phase I minimizes the worst
constraint violation to find a strictly interior point or an infeasibility
certificate; Phase II follows the central path until the duality gap m/t
drops below gap_tol.

Callers are expected to pre-scale variables and rows to order one. The
reported kkt_residual is the epsilon-KKT certificate in objective units:
max(duality-gap bound m/t, final centering suboptimality dec/2t).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class InfeasibleProgramError(RuntimeError):
    """Phase I certified (approximate) infeasibility."""

    def __init__(self, violation: float, worst: str):
        super().__init__(
            f"program infeasible: minimal worst violation {violation:.3e} (constraint {worst!r})"
        )
        self.violation = violation
        self.worst = worst


class SolverNumericsError(RuntimeError):
    """Newton iteration stalled or factorization failed beyond repair."""


@dataclass
class ConvexProgram:
    quad: np.ndarray          # (m, n) nonnegative
    lin: np.ndarray           # (m, n)
    offs: np.ndarray          # (m,)
    log_idx: np.ndarray       # (r,) variable indices in the objective
    log_a: np.ndarray         # (r,)
    log_b: np.ndarray         # (r,) positive
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.quad = np.atleast_2d(np.asarray(self.quad, float))
        self.lin = np.atleast_2d(np.asarray(self.lin, float))
        self.offs = np.asarray(self.offs, float)
        self.log_idx = np.asarray(self.log_idx, int)
        self.log_a = np.asarray(self.log_a, float)
        self.log_b = np.asarray(self.log_b, float)
        if np.any(self.quad < 0):
            raise ValueError("quadratic coefficients must be nonnegative")
        if not self.names:
            self.names = [f"g[{j}]" for j in range(self.offs.size)]

    @property
    def n(self) -> int:
        return self.lin.shape[1]

    @property
    def m(self) -> int:
        return self.offs.size

    def residuals(self, x: np.ndarray) -> np.ndarray:
        return self.quad @ (x * x) + self.lin @ x + self.offs

    def objective(self, x: np.ndarray) -> float:
        return float(np.sum(np.log(self.log_a + self.log_b * x[self.log_idx])))


@dataclass
class SolverResult:
    x: np.ndarray
    objective: float          # maximized sum of logs
    gap: float                # duality-gap bound m/t at termination
    kkt_residual: float
    newton_steps: int
    t_final: float
    duals: np.ndarray         # barrier multipliers 1/(t * -g)
    status: str = "optimal"


def _with_domain_rows(prog: ConvexProgram) -> ConvexProgram:
    """Append -(log_a + log_b x) + margin <= 0 so both phases respect the
    objective's domain."""
    if prog.log_idx.size == 0:
        return prog
    rows = np.zeros((prog.log_idx.size, prog.n))
    rows[np.arange(prog.log_idx.size), prog.log_idx] = -prog.log_b
    offs = -prog.log_a + 1e-12
    return ConvexProgram(
        quad=np.vstack([prog.quad, np.zeros_like(rows)]),
        lin=np.vstack([prog.lin, rows]),
        offs=np.concatenate([prog.offs, offs]),
        log_idx=prog.log_idx,
        log_a=prog.log_a,
        log_b=prog.log_b,
        names=prog.names + [f"log-domain[{i}]" for i in range(prog.log_idx.size)],
    )


def _solve_newton(h: np.ndarray, grad: np.ndarray) -> np.ndarray:
    jitter = 0.0
    scale = max(np.trace(h) / h.shape[0], 1e-30)
    for _ in range(6):
        try:
            c, low = scipy.linalg.cho_factor(
                h + jitter * np.eye(h.shape[0]), lower=True, check_finite=False
            )
            return scipy.linalg.cho_solve((c, low), -grad, check_finite=False)
        except scipy.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-14 * scale)
    raise SolverNumericsError("Newton system factorization failed")


def _max_step(prog: ConvexProgram, x: np.ndarray, dx: np.ndarray, g: np.ndarray) -> float:
    """Largest step keeping every residual negative (exact quadratic roots)."""
    a = prog.quad @ (dx * dx)
    b = 2.0 * (prog.quad @ (x * dx)) + prog.lin @ dx
    alpha = np.inf
    lin_mask = (a <= 0.0) & (b > 0.0)
    if np.any(lin_mask):
        alpha = float(np.min(-g[lin_mask] / b[lin_mask]))
    quad_mask = a > 0.0
    if np.any(quad_mask):
        disc = b[quad_mask] ** 2 - 4.0 * a[quad_mask] * g[quad_mask]
        roots = (-b[quad_mask] + np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a[quad_mask])
        alpha = min(alpha, float(roots.min()))
    return alpha


def _center(prog: ConvexProgram, x: np.ndarray, t: float, obj_grad, obj_hess_diag,
            obj_value, early_stop=None, center_tol: float = 1e-11,
            max_steps: int = 60) -> tuple[np.ndarray, int, float]:
    """Damped Newton minimization of t*f(x) - sum ln(-g(x)).

    Returns (x, steps, last Newton decrement); the decrement bounds the
    centering suboptimality by dec/2."""
    steps = 0
    dec = 0.0
    for _ in range(max_steps):
        g = prog.residuals(x)
        inv_ng = 1.0 / (-g)
        grads = 2.0 * prog.quad * x[None, :] + prog.lin  # (m, n)
        grad = t * obj_grad(x) + grads.T @ inv_ng
        w = grads * inv_ng[:, None]
        h = w.T @ w
        diag = t * obj_hess_diag(x) + 2.0 * (prog.quad.T @ inv_ng)
        h[np.diag_indices_from(h)] += diag
        dx = _solve_newton(h, grad)
        dec = float(-grad @ dx)
        if dec <= 2.0 * center_tol:
            break
        alpha = min(1.0, 0.99 * _max_step(prog, x, dx, g))
        if dec <= 0.0625:
            # quadratic-convergence region of the self-concordant barrier:
            # take the (feasibility-capped) full step without a merit test,
            # which cancellation makes meaningless once t is astronomically
            # large (improvements of dec/2 against |phi| ~ t).
            xn = x + alpha * dx
            if np.all(prog.residuals(xn) < 0.0):
                x = xn
                steps += 1
                if early_stop is not None and early_stop(x):
                    break
                continue
        phi0 = t * obj_value(x) - np.sum(np.log(-g))
        slack = 4.0 * np.finfo(float).eps * abs(phi0)
        accepted = False
        while alpha > 1e-18:
            xn = x + alpha * dx
            gn = prog.residuals(xn)
            if np.all(gn < 0.0):
                phin = t * obj_value(xn) - np.sum(np.log(-gn))
                if phin <= phi0 - 0.01 * alpha * dec + slack:
                    x = xn
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break  # stalled at numerical precision
        steps += 1
        if early_stop is not None and early_stop(x):
            break
    return x, steps, dec


def _phase1(prog: ConvexProgram, x_hint: np.ndarray, feas_margin: float,
            mu: float) -> tuple[np.ndarray, int]:
    """Find a strictly interior point or raise InfeasibleProgramError."""
    n, m = prog.n, prog.m
    res0 = prog.residuals(x_hint)
    v0 = float(max(res0.max(), 0.0) + 1.0)
    aug = ConvexProgram(
        quad=np.hstack([prog.quad, np.zeros((m, 1))]),
        lin=np.hstack([prog.lin, -np.ones((m, 1))]),
        offs=prog.offs,
        log_idx=np.zeros(0, dtype=int),
        log_a=np.zeros(0),
        log_b=np.zeros(0),
        names=list(prog.names),
    )
    y = np.concatenate([x_hint, [v0]])
    e_last = np.zeros(n + 1)
    e_last[-1] = 1.0
    zeros = np.zeros(n + 1)

    def strictly_feasible(yy):
        return prog.residuals(yy[:-1]).max() < -feas_margin

    total = 0
    t = 10.0
    stalled = 0
    for _ in range(64):
        y, steps, _ = _center(
            aug, y, t,
            obj_grad=lambda _y: e_last,
            obj_hess_diag=lambda _y: zeros,
            obj_value=lambda _y: _y[-1],
            early_stop=strictly_feasible,
        )
        total += steps
        if strictly_feasible(y):
            return y[:-1], total
        stalled = stalled + 1 if steps == 0 else 0
        gap = m / t
        if gap < max(1e-9, 0.1 * feas_margin):
            if stalled:
                # Never certify infeasibility off a stalled centering.
                raise SolverNumericsError("phase I stalled before certification")
            res = prog.residuals(y[:-1])
            worst = prog.names[int(np.argmax(res))]
            raise InfeasibleProgramError(float(y[-1] - gap), worst)
        t *= mu
    raise SolverNumericsError("phase I did not terminate")


def solve(prog: ConvexProgram, x0: np.ndarray | None = None, gap_tol: float = 1e-10,
          feas_margin: float = 1e-10, mu: float = 50.0,
          gap_hint: float | None = None) -> SolverResult:
    """Maximize the log objective over the constraint set.

    A strictly feasible x0 skips Phase I. gap_hint, when given, estimates the
    objective gap of x0 and sets the initial barrier weight accordingly (warm
    starts near the optimum then skip the early centering rounds). Raises
    InfeasibleProgramError when no feasible point exists.
    """
    full = _with_domain_rows(prog)
    newton = 0
    if x0 is not None and np.all(full.residuals(np.asarray(x0, float)) < 0.0):
        x = np.asarray(x0, float).copy()
    else:
        hint = np.zeros(full.n) if x0 is None else np.asarray(x0, float)
        x, newton = _phase1(full, hint, feas_margin, mu)

    idx, a, b = full.log_idx, full.log_a, full.log_b

    def obj_value(xx):
        return -np.sum(np.log(a + b * xx[idx]))

    def obj_grad(xx):
        g = np.zeros(full.n)
        np.add.at(g, idx, -b / (a + b * xx[idx]))
        return g

    def obj_hess_diag(xx):
        d = np.zeros(full.n)
        np.add.at(d, idx, (b / (a + b * xx[idx])) ** 2)
        return d

    m = full.m
    if gap_hint is not None and gap_hint > 0:
        t = min(max(1.0, m / gap_hint), m / gap_tol)
    else:
        t = max(1.0, m / max(10.0 * gap_tol, abs(obj_value(x)) + 1.0))
    while True:
        final = m / t <= gap_tol
        x, steps, dec = _center(full, x, t, obj_grad, obj_hess_diag, obj_value,
                                center_tol=1e-11 if final else 1e-7)
        newton += steps
        if final:
            break
        t = min(t * mu, m / gap_tol)

    g = full.residuals(x)
    duals = 1.0 / (t * (-g))
    # epsilon-KKT certificate in objective units: duality-gap bound plus the
    # centering suboptimality dec/(2t)
    kkt = max(m / t, dec / (2.0 * t))
    return SolverResult(
        x=x,
        objective=prog.objective(x),
        gap=m / t,
        kkt_residual=kkt,
        newton_steps=newton,
        t_final=t,
        duals=duals[: prog.m],
    )
