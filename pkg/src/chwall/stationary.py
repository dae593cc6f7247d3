"""Stationary states: energy minimization, Newton refinement, omega-limits.

A stationary state makes the chemical potential vanish identically, which
is the discrete critical-point condition for the free energy.  The robust
path is minimize-then-refine: limited-memory quasi-Newton descent on E
(with an optional spectral kick off saddles, since an exactly critical
start has zero gradient and plain descent would sit still), followed by a
full Newton iteration on mu(U) = 0 with the energy Hessian as Jacobian.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize as _lbfgs

from .energy import energy_gradient_raw, energy_value, stationary_residual
from .grid import PairField, _as_values, load_field, save_field
from .operators import x_norm


class SolveMethod(Enum):
    MINIMIZE_THEN_NEWTON = "minimize_then_newton"
    NEWTON_ONLY = "newton_only"
    TRAJECTORY_LIMIT = "trajectory_limit"


@dataclass
class MinimizeResult:
    field: PairField
    converged: bool
    iterations: int
    grad_norm: float
    escapes: int


@dataclass
class EquilibriumSolution:
    psi: PairField
    energy: float
    bulk_res: float
    bdry_res: float
    method: SolveMethod
    newton_iters: int
    converged: bool = True
    residual_history: list = field(default_factory=list)
    kernel_dim: int | None = None


def _mu_h_norm(grid, g_raw):
    # |mu|_H with mu = g/W collapses to sqrt(sum g^2 / W)
    w = grid.h_weights(1.0)
    return float(np.sqrt(np.sum(g_raw * g_raw / w)))


def _hessian_matrix(grid, pot, vals, alpha, beta):
    forms = grid.forms
    K = forms.k_grad + beta * sp.diags(forms.bdry_mass)
    if grid.mode.value == "strip2d" and alpha != 0.0:
        K = K + alpha * forms.k_par
    return (K + sp.diags(forms.bulk_mass * pot.f_prime(vals))).tocsr()


def _most_negative_direction(grid, pot, vals, alpha, beta):
    """Smallest eigenpair of the energy Hessian in the weighted metric."""
    K = _hessian_matrix(grid, pot, vals, alpha, beta)
    w = grid.h_weights(1.0)
    rw = 1.0 / np.sqrt(w)
    A_t = sp.diags(rw) @ K @ sp.diags(rw)
    n = grid.n_nodes
    if n <= 4096:
        import scipy.linalg as la

        lam, vec = la.eigh(A_t.toarray(), subset_by_index=[0, 0])
        lam0, v0 = float(lam[0]), vec[:, 0]
    else:
        lam, vec = spla.eigsh(A_t, k=1, which="SA", v0=np.ones(n))
        lam0, v0 = float(lam[0]), vec[:, 0]
    phi = rw * v0
    phi /= np.sqrt(float(np.sum(w * phi * phi)))
    return lam0, phi


def minimize_energy(grid, pot, u_init, tol=1e-8, alpha=1.0, beta=1.0,
                    max_outer=30, chunk=400, escape_saddles=True):
    """Descend the free energy until the gradient norm drops below tol.

    Returns a MinimizeResult; .converged is False when the iteration cap
    was reached first (the best iterate is still returned).  Every accepted
    iterate has energy no greater than the previous one, so
    E(result) <= E(u_init) always.
    """
    x = _as_values(u_init).copy()

    def fun(v):
        return energy_value(grid, pot, v, alpha, beta)

    def jac(v):
        return energy_gradient_raw(grid, pot, v, alpha, beta)

    total_iters = 0
    escapes = 0
    stalls = 0
    for _ in range(max_outer):
        gn = _mu_h_norm(grid, jac(x))
        if gn <= tol:
            if not escape_saddles:
                break
            lam0, phi = _most_negative_direction(grid, pot, x, alpha, beta)
            if lam0 >= -1e-10 * (1.0 + abs(lam0)):
                break  # genuine (local) minimum
            kicked = _kick_off_saddle(fun, x, phi)
            if kicked is None:
                break
            x = kicked
            escapes += 1
        res = _lbfgs(
            fun, x, jac=jac, method="L-BFGS-B",
            options={"maxiter": chunk, "ftol": 1e-300, "gtol": 1e-300},
        )
        if res.fun <= fun(x):
            x = res.x
        total_iters += int(res.nit)
        stalls = stalls + 1 if int(res.nit) == 0 else 0
        if stalls >= 2 and _mu_h_norm(grid, jac(x)) > tol:
            break  # line search cannot move; report unconverged
    gn = _mu_h_norm(grid, jac(x))
    return MinimizeResult(
        field=PairField(grid, x),
        converged=bool(gn <= tol),
        iterations=total_iters,
        grad_norm=gn,
        escapes=escapes,
    )


def _kick_off_saddle(fun, x, phi):
    """Line search along the negative-curvature direction; None if no gain."""
    e0 = fun(x)
    best = None
    best_e = e0 - 1e-14 * (1.0 + abs(e0))
    for amp in (0.5, 0.2, 0.05, 0.01, 1e-3):
        for sgn in (1.0, -1.0):
            trial = x + sgn * amp * phi
            e = fun(trial)
            if e < best_e:
                best, best_e = trial, e
    return best


def newton_refine(grid, pot, u_init, tol=1e-8, basin_threshold=1e-2,
                  max_iter=50, alpha=1.0, beta=1.0,
                  method=SolveMethod.NEWTON_ONLY):
    """Newton iteration on the critical-point system mu(U) = 0.

    Requires the start to be inside a Newton basin (gradient norm below
    basin_threshold).  The Jacobian is the energy Hessian: bulk rows
    -Lap + f'(u), wall rows the discrete trace operator.  The residual
    history is recorded so quadratic convergence can be checked.
    """
    x = _as_values(u_init).copy()
    g = energy_gradient_raw(grid, pot, x, alpha, beta)
    res = _mu_h_norm(grid, g)
    if res > basin_threshold:
        raise ValueError(
            f"newton_refine start residual {res:.3e} above basin threshold "
            f"{basin_threshold:.1e}; minimize first"
        )
    hist = [res]
    iters = 0
    converged = res <= tol
    kernel_dim = None
    while not converged and iters < max_iter:
        K = _hessian_matrix(grid, pot, x, alpha, beta)
        try:
            delta = spla.splu(K.tocsc()).solve(-g)
        except RuntimeError:
            kernel_dim = _numerical_kernel_dim(grid, pot, x, alpha, beta)
            break
        if not np.all(np.isfinite(delta)):
            kernel_dim = _numerical_kernel_dim(grid, pot, x, alpha, beta)
            break
        x = x + delta
        g = energy_gradient_raw(grid, pot, x, alpha, beta)
        res = _mu_h_norm(grid, g)
        hist.append(res)
        iters += 1
        converged = res <= tol
        if res > 1e3 * (hist[0] + 1.0):
            break  # diverging; caller should descend first
    bulk_res, bdry_res = stationary_residual(grid, pot, PairField(grid, x))
    return EquilibriumSolution(
        psi=PairField(grid, x),
        energy=energy_value(grid, pot, x, alpha, beta),
        bulk_res=bulk_res,
        bdry_res=bdry_res,
        method=method,
        newton_iters=iters,
        converged=converged,
        residual_history=hist,
        kernel_dim=kernel_dim,
    )


def _numerical_kernel_dim(grid, pot, vals, alpha, beta):
    from .analysis import assemble_linearized, spectrum

    linop = assemble_linearized(
        grid, pot, PairField(grid, vals), None, alpha=alpha, beta=beta
    )
    rep = spectrum(linop, k=6)
    return rep.kernel_dim


def find_equilibrium(grid, pot, u_init, tol=1e-8, alpha=1.0, beta=1.0,
                     basin_threshold=1e-2):
    """Minimize-then-refine pipeline; the robust path from generic data.

    The descent phase always runs: for a start already inside a Newton
    basin it costs one gradient and one spectral check, but it is what
    lets an exactly-critical saddle start (zero gradient, negative
    curvature) escape to a lower state instead of being reported as the
    equilibrium.
    """
    mr = minimize_energy(grid, pot, u_init, tol=max(tol, basin_threshold / 10),
                         alpha=alpha, beta=beta)
    method = (
        SolveMethod.MINIMIZE_THEN_NEWTON
        if (mr.iterations > 0 or mr.escapes > 0)
        else SolveMethod.NEWTON_ONLY
    )
    sol = newton_refine(grid, pot, mr.field, tol=tol, alpha=alpha, beta=beta,
                        basin_threshold=max(basin_threshold, 10 * tol),
                        method=method)
    return sol


def omega_limit(grid, op, pot, traj_final, tol=1e-8, x_dist_max=0.5):
    """Identify the equilibrium a long trajectory has settled onto.

    Refines the final state by Newton and checks that the starting point
    was already close in the weak norm; failure means the run was too
    short, and the distance is reported to guide a longer one.
    """
    try:
        sol = newton_refine(grid, pot, traj_final, tol=tol,
                            basin_threshold=1e-1,
                            alpha=op.alpha, beta=op.beta,
                            method=SolveMethod.TRAJECTORY_LIMIT)
    except ValueError as exc:
        raise RuntimeError(
            f"trajectory not yet near an equilibrium ({exc}); run longer"
        )
    dist = x_norm(op, traj_final - sol.psi)
    if not sol.converged or dist > x_dist_max:
        raise RuntimeError(
            f"omega-limit identification failed: final state is {dist:.3e} "
            f"away from the refined equilibrium in the weak norm; run longer"
        )
    return sol


def save_equilibrium(sol, prefix):
    """Write <prefix>.csv (field) and <prefix>.meta (solution metadata)."""
    save_field(sol.psi, f"{prefix}.csv")
    with open(f"{prefix}.meta", "w") as fh:
        fh.write(f"energy={sol.energy:.17g}\n")
        fh.write(f"bulk_res={sol.bulk_res:.17g}\n")
        fh.write(f"bdry_res={sol.bdry_res:.17g}\n")
        fh.write(f"method={sol.method.value}\n")
        fh.write(f"newton_iters={sol.newton_iters}\n")
        fh.write(f"converged={int(sol.converged)}\n")
        if sol.kernel_dim is not None:
            fh.write(f"kernel_dim={sol.kernel_dim}\n")


def load_equilibrium(prefix, grid=None):
    """Read a saved equilibrium; returns (PairField, metadata dict)."""
    psi = load_field(f"{prefix}.csv", grid=grid)
    meta = {}
    with open(f"{prefix}.meta") as fh:
        for line in fh:
            key, _, val = line.strip().partition("=")
            meta[key] = val
    return psi, meta
