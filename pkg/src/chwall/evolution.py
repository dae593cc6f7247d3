"""Time stepping for the permeable-wall flow U_t = -A mu(U).

Two schemes: a stabilized semi-implicit step (one reusable sparse solve per
step; the nonlinearity is lagged with a convex-stabilization shift S) and a
fully implicit backward-Euler step solved by Newton.  Both honor the energy
guard: a step that raises the discrete energy beyond rounding is redone as
two half steps, recursively, down to dt_min; the Lyapunov structure is never
silently violated.

The stabilized system solved each step is

    (W + dt K_A W^-1 (K_lin + S M_bulk)) u_new
        = W u_old + dt K_A W^-1 (S M_bulk u_old - M_bulk f(u_old))

with W the product-space mass, K_A the wall-coupled stiffness, K_lin the
linear part of the energy Hessian and M_bulk the lumped bulk mass.  The
matrix is assembled and factorized once per (dt, S) and reused.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import energy_value, state_report
from .grid import PairField, _as_values
from .operators import v_norm, x_norm


class GuardAbort(RuntimeError):
    """Energy guard exhausted: dt fell below dt_min without a decaying step."""


class NewtonSingular(RuntimeError):
    pass


class _RetryHalved(Exception):
    """Internal: the step wants to be retried at half the time step."""


class EvolutionAbort(RuntimeError):
    """Carries the partial trajectory and last valid state of an aborted run."""

    def __init__(self, message, record, state):
        super().__init__(message)
        self.record = record
        self.state = state


@dataclass
class StepperConfig:
    scheme: str = "semi_implicit"  # or "newton"
    dt: float = 1e-3
    stabilization_S: float | None = None  # None: max |f'| over the state range
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    energy_guard: bool = True
    dt_min: float = 1e-8
    series_stride: int = 1
    snapshot_stride: int = 0


@dataclass
class TrajectoryRecord:
    """Scalar time series plus sparse field checkpoints of one run.

    ledger_defect[k] is the mass-flux ledger residual over the interval
    (times[k], times[k+1]): d(mass_total)/dt plus the wall outflow
    (c/b) * integral of mu over the wall, evaluated at the interval start.
    """

    times: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    ut_xnorm: list = field(default_factory=list)
    ledger_defect: list = field(default_factory=list)
    x_dist_to_ref: list | None = None
    v_dist_to_ref: list | None = None
    snapshots: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    def final_state(self):
        return self.snapshots[-1][1] if self.snapshots else None


def auto_stabilization(pot, lo, hi):
    """Sampled max |f'| over [lo, hi]; the sufficient shift for decay."""
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise ValueError("state range is not finite")
    s = np.linspace(lo - 1e-12, hi + 1e-12, 257)
    return float(np.max(np.abs(pot.f_prime(s))))


def _linear_part(grid, op):
    cache = op._step_cache
    if "K_lin" not in cache:
        forms = grid.forms
        K = forms.k_grad + op.beta * sp.diags(forms.bdry_mass)
        if grid.mode.value == "strip2d" and op.alpha != 0.0:
            K = K + op.alpha * forms.k_par
        cache["K_lin"] = K.tocsr()
        cache["P"] = (op.K_A @ sp.diags(1.0 / op.mass_weights)).tocsr()
    return cache["K_lin"], cache["P"]


def _semi_system(grid, op, dt, S):
    cache = op._step_cache
    key = ("semi", dt, S)
    if key not in cache:
        K_lin, P = _linear_part(grid, op)
        forms = grid.forms
        B = K_lin + S * sp.diags(forms.bulk_mass)
        M = sp.diags(op.mass_weights) + dt * (P @ B)
        if len(cache) > 16:
            for k in [k for k in cache if isinstance(k, tuple)][:-4]:
                del cache[k]
        cache[key] = spla.splu(M.tocsc())
    return cache[key]


def _semi_step_once(grid, op, pot, u_vals, dt, S):
    _, P = _linear_part(grid, op)
    lu = _semi_system(grid, op, dt, S)
    m_bulk = grid.forms.bulk_mass
    rhs = op.mass_weights * u_vals + dt * (
        P @ (S * (m_bulk * u_vals) - m_bulk * pot.f(u_vals))
    )
    return lu.solve(rhs)


def _newton_step_once(grid, op, pot, u_old, dt, cfg):
    K_lin, P = _linear_part(grid, op)
    m_bulk = grid.forms.bulk_mass
    W = op.mass_weights
    u = u_old.copy()
    for _ in range(cfg.newton_max_iter):
        g = K_lin @ u + m_bulk * pot.f(u)
        R = W * (u - u_old) + dt * (op.K_A @ (g / W))
        rnorm = np.sqrt(float(np.sum(R * R / W)))
        if rnorm <= cfg.newton_tol:
            return u
        J = sp.diags(W) + dt * (P @ (K_lin + sp.diags(m_bulk * pot.f_prime(u))))
        try:
            delta = spla.splu(J.tocsc()).solve(-R)
        except RuntimeError as exc:
            raise NewtonSingular(f"singular Jacobian in implicit step: {exc}")
        if not np.all(np.isfinite(delta)):
            raise _RetryHalved
        u = u + delta
    raise _RetryHalved  # no convergence at this dt


def _advance(grid, op, pot, u_vals, dt, cfg, S, e_old):
    """Advance exactly dt, honoring the energy guard by recursive halving."""
    try:
        if cfg.scheme == "semi_implicit":
            u_new = _semi_step_once(grid, op, pot, u_vals, dt, S)
        elif cfg.scheme == "newton":
            u_new = _newton_step_once(grid, op, pot, u_vals, dt, cfg)
        else:
            raise ValueError(f"unknown scheme {cfg.scheme!r}")
    except _RetryHalved:
        u_new = None
    if u_new is not None:
        if not cfg.energy_guard:
            return u_new, energy_value(grid, pot, u_new, op.alpha, op.beta)
        e_new = energy_value(grid, pot, u_new, op.alpha, op.beta)
        if e_new <= e_old + 1e-12 * (1.0 + abs(e_old)):
            return u_new, e_new
    # reject: redo as two guarded half steps
    if dt / 2.0 < cfg.dt_min:
        raise GuardAbort(
            f"energy guard exhausted: retry step {dt / 2.0:.3e} fell below "
            f"dt_min={cfg.dt_min:.3e}"
        )
    u_half, e_half = _advance(grid, op, pot, u_vals, dt / 2.0, cfg, S, e_old)
    return _advance(grid, op, pot, u_half, dt / 2.0, cfg, S, e_half)


def _prepare_S(pot, cfg, u_vals):
    if cfg.stabilization_S is not None:
        return cfg.stabilization_S
    return auto_stabilization(pot, float(np.min(u_vals)), float(np.max(u_vals)))


def step_semi_implicit(grid, op, pot, u_n, cfg):
    """One energy-guarded stabilized semi-implicit step of length cfg.dt."""
    vals = _as_values(u_n)
    S = _prepare_S(pot, cfg, vals)
    e_old = energy_value(grid, pot, vals, op.alpha, op.beta)
    cfg_semi = cfg if cfg.scheme == "semi_implicit" else _with_scheme(cfg, "semi_implicit")
    out, _ = _advance(grid, op, pot, vals, cfg.dt, cfg_semi, S, e_old)
    return PairField(grid, out)


def step_newton(grid, op, pot, u_n, cfg):
    """One energy-guarded fully implicit step of length cfg.dt."""
    vals = _as_values(u_n)
    e_old = energy_value(grid, pot, vals, op.alpha, op.beta)
    cfg_newton = cfg if cfg.scheme == "newton" else _with_scheme(cfg, "newton")
    out, _ = _advance(grid, op, pot, vals, cfg.dt, cfg_newton, 0.0, e_old)
    return PairField(grid, out)


def _with_scheme(cfg, scheme):
    from dataclasses import replace

    return replace(cfg, scheme=scheme)


def evolve(grid, op, pot, u0, cfg, t_end, ref=None):
    """March to t_end recording the diagnostics ledger each stride.

    When a reference equilibrium is supplied, the distances |U - psi| in the
    weak and energy norms and the flow speed |u_t|_X (computed from the
    exact identity u_t = -A mu, i.e. as sqrt(a(mu, mu))) are recorded too.
    On a guard abort the partial record and last valid state are attached
    to the raised EvolutionAbort.
    """
    if t_end <= 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    rec = TrajectoryRecord()
    if ref is not None:
        rec.x_dist_to_ref = []
        rec.v_dist_to_ref = []
    u = _as_values(u0).copy()
    t = 0.0
    lo, hi = float(np.min(u)), float(np.max(u))

    def record_row(t_now, u_vals):
        U = PairField(grid, u_vals.copy())
        report, mu = state_report(
            grid, pot, U, alpha=op.alpha, beta=op.beta, b=op.b, c=op.c
        )
        rec.times.append(t_now)
        rec.reports.append(report)
        rec.ut_xnorm.append(np.sqrt(max(op.a_form(mu, mu), 0.0)))
        if ref is not None:
            diff = U - ref
            rec.x_dist_to_ref.append(x_norm(op, diff))
            rec.v_dist_to_ref.append(v_norm(grid, diff))
        return U

    record_row(0.0, u)
    if cfg.snapshot_stride:
        rec.snapshots.append((0.0, PairField(grid, u.copy())))

    step_idx = 0
    eps_t = 1e-6 * cfg.dt  # sub-resolution remainders are time-grid residue
    try:
        while t < t_end - eps_t:
            dt = min(cfg.dt, t_end - t)
            lo = min(lo, float(np.min(u)))
            hi = max(hi, float(np.max(u)))
            S = cfg.stabilization_S
            if S is None and cfg.scheme == "semi_implicit":
                S = auto_stabilization(pot, lo, hi)
            elif S is None:
                S = 0.0
            e_old = energy_value(grid, pot, u, op.alpha, op.beta)
            u, _ = _advance(grid, op, pot, u, dt, cfg, S, e_old)
            t += dt
            step_idx += 1
            if step_idx % cfg.series_stride == 0 or t >= t_end - eps_t:
                prev_report = rec.reports[-1]
                prev_t = rec.times[-1]
                record_row(t, u)
                new_report = rec.reports[-1]
                dmass = (new_report.mass_total - prev_report.mass_total) / (t - prev_t)
                outflow = -(op.c / op.b) * prev_report.flux
                rec.ledger_defect.append(dmass + outflow)
            if cfg.snapshot_stride and step_idx % cfg.snapshot_stride == 0:
                rec.snapshots.append((t, PairField(grid, u.copy())))
    except (GuardAbort, NewtonSingular) as exc:
        rec.aborted = True
        rec.abort_reason = str(exc)
        rec.snapshots.append((t, PairField(grid, u.copy())))
        raise EvolutionAbort(str(exc), rec, PairField(grid, u.copy()))

    if not rec.snapshots or rec.snapshots[-1][0] < t - 1e-15:
        rec.snapshots.append((t, PairField(grid, u.copy())))
    return rec
