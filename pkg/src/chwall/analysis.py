"""Linearization, spectra, solvability and the energy-gap exponent probe.

The linearized operator at a stationary state psi (optionally displaced by a
perturbation v) acts as -Lap(h) + f'(psi+v) h on bulk rows while the wall
rows impose the discrete trace condition -Lap_par(h) + normal_flux(h) + h.
It is represented weakly, exactly like the elliptic operator: a symmetric
matrix K paired with the diagonal product-space weights W, so weighted
self-adjointness holds to rounding and spectra are computed from the
symmetric pencil (K, W).

The probe fits the exponent theta in  residual >= |E(u) - E(psi)|^(1-theta)
from trajectory samples by regressing log(residual) on log(gap); near a
nondegenerate minimum the slope is 1/2, i.e. theta = 1/2.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import energy_value, stationary_residual
from .grid import PairField, _as_values
from .operators import v_norm

DENSE_EIG_LIMIT = 4096


@dataclass
class LinearizedOperator:
    """Weighted-symmetric realization of the linearization at a base state.

    When augmentation is set, the operator represents the kernel projector
    plus the bare linearization (the bijective variant used for the
    bounded-inverse solves); the projector's basis rows are H-orthonormal.
    """

    grid: object
    K: sp.csr_matrix
    h_weights: np.ndarray
    base_point: PairField
    perturbation: PairField | None
    alpha: float
    beta: float
    augmentation: np.ndarray | None = None

    def apply(self, h):
        vals = _as_values(h)
        out = (self.K @ vals) / self.h_weights
        if self.augmentation is not None and self.augmentation.shape[0]:
            coeffs = self.augmentation @ (self.h_weights * vals)
            out = out + self.augmentation.T @ coeffs
        return PairField(self.grid, out)

    def as_matrix(self):
        """The operator as applied (W^-1 K, plus any projector), sparse."""
        mat = (sp.diags(1.0 / self.h_weights) @ self.K).tocsr()
        if self.augmentation is not None and self.augmentation.shape[0]:
            u = self.augmentation.T * self.h_weights[:, None]
            mat = mat + sp.csr_matrix(self.augmentation.T @ u.T)
        return mat

    def symmetry_residual(self):
        diff = (self.K - self.K.T).tocoo()
        num = np.max(np.abs(diff.data)) if diff.nnz else 0.0
        return num / np.max(np.abs(self.K.data))


def assemble_linearized(grid, pot, psi, v=None, alpha=1.0, beta=1.0,
                        augment_kernel=False, kernel_tol=1e-8):
    """Assemble the linearization at psi + v (v defaults to zero).

    With augment_kernel the numerical kernel of the bare operator is
    computed and its H-orthogonal projector added, making the operator
    bijective; at a kernel-free point the augmentation is empty and the
    operator is unchanged.
    """
    base = _as_values(psi)
    vals = base + _as_values(v) if v is not None else base
    forms = grid.forms
    K = forms.k_grad + beta * sp.diags(forms.bdry_mass)
    if grid.mode.value == "strip2d" and alpha != 0.0:
        K = K + alpha * forms.k_par
    K = (K + sp.diags(forms.bulk_mass * pot.f_prime(vals))).tocsr()
    linop = LinearizedOperator(
        grid=grid,
        K=K,
        h_weights=grid.h_weights(1.0),
        base_point=psi if isinstance(psi, PairField) else PairField(grid, base),
        perturbation=v if (v is None or isinstance(v, PairField)) else PairField(grid, _as_values(v)),
        alpha=alpha,
        beta=beta,
    )
    if augment_kernel:
        rep = spectrum(linop, k=min(6, grid.n_nodes), kernel_tol=kernel_tol)
        linop.augmentation = rep.kernel_basis
    return linop


@dataclass
class SpectralReport:
    """Smallest part of the spectrum in the weighted inner product.

    kernel_basis rows are H-orthonormal fields spanning the numerical
    kernel; eigenvalues are ascending.  For dense solves (dimension at
    most 4096) the counts refer to the full spectrum, otherwise to the
    computed window.
    """

    eigenvalues: np.ndarray
    kernel_dim: int
    kernel_basis: np.ndarray
    n_negative: int
    max_abs_eig: float
    kernel_tol: float
    dense: bool


def spectrum(linop, k=6, kernel_tol=1e-8):
    """Lowest eigenpairs of the pencil (K, W).

    Dense path (dimension <= 4096): full spectrum, reported eigenvalues are
    the union of the k smallest-algebraic and k smallest-magnitude ones.
    Sparse path: shift-invert iterations; reports the k smallest-algebraic
    eigenvalues, with the near-zero window probed separately for the
    kernel.  Deterministic start vectors in both cases.
    """
    n = linop.grid.n_nodes
    if k > n:
        raise ValueError(f"k={k} exceeds dimension {n}")
    w = linop.h_weights
    rw = 1.0 / np.sqrt(w)
    At = (sp.diags(rw) @ linop.K @ sp.diags(rw)).tocsr()
    if linop.augmentation is not None and linop.augmentation.shape[0]:
        if n > DENSE_EIG_LIMIT:
            raise NotImplementedError(
                "spectrum of the projector-augmented operator needs the "
                f"dense path (dimension {n} > {DENSE_EIG_LIMIT})"
            )
        B = linop.augmentation * np.sqrt(w)[None, :]
        At = sp.csr_matrix(At.toarray() + B.T @ B)
    if n <= DENSE_EIG_LIMIT:
        lam, vec = la.eigh(At.toarray())
        max_abs = float(np.max(np.abs(lam)))
        tol_abs = kernel_tol * max_abs
        kernel_mask = np.abs(lam) <= tol_abs
        n_negative = int(np.sum(lam < -tol_abs))
        order = np.argsort(np.abs(lam))
        keep = np.unique(np.concatenate([np.arange(min(k, n)), order[: min(k, n)]]))
        eigs = np.sort(lam[keep])
        basis = (rw[None, :] * vec[:, kernel_mask].T).copy()
        dense = True
    else:
        max_abs = float(np.abs(At).sum(axis=1).max())  # Gershgorin bound
        tol_abs = kernel_tol * max_abs
        sigma_lo = float(At.diagonal().min()) - max_abs
        lam_sa, _ = spla.eigsh(At, k=k, sigma=sigma_lo, which="LM",
                               v0=np.ones(n))
        # shift slightly off zero so the factorization cannot hit an exact
        # kernel; eigenvalues nearest the shift are still those nearest zero
        lam_lm, vec_lm = spla.eigsh(At, k=k, sigma=-10.0 * tol_abs, which="LM",
                                    v0=np.ones(n))
        # kernel vectors come from the shift-invert-near-zero set only; the
        # smallest-algebraic set would duplicate them up to solver noise
        kernel_mask = np.abs(lam_lm) <= tol_abs
        basis = (rw[None, :] * vec_lm[:, kernel_mask].T).copy()
        eigs = np.sort(lam_sa)
        n_negative = int(np.sum(eigs < -tol_abs))
        dense = False
    if basis.shape[0] > 1:
        # multiple kernel vectors: enforce H-orthonormality exactly
        q, _ = np.linalg.qr((np.sqrt(w)[None, :] * basis).T)
        basis = (q.T * rw[None, :]).copy()
    return SpectralReport(
        eigenvalues=np.asarray(eigs, dtype=float),
        kernel_dim=int(basis.shape[0]),
        kernel_basis=basis,
        n_negative=n_negative,
        max_abs_eig=max_abs,
        kernel_tol=kernel_tol,
        dense=dense,
    )


def project_kernel(rep, w, u):
    """H-orthogonal projection onto the numerical kernel."""
    vals = _as_values(u)
    if rep.kernel_dim == 0:
        return np.zeros_like(vals)
    coeffs = rep.kernel_basis @ (w * vals)
    return rep.kernel_basis.T @ coeffs


def project_range(rep, w, u):
    return _as_values(u) - project_kernel(rep, w, u)


@dataclass
class AugmentedSolveResult:
    w: PairField
    c_bound: float
    projected_residual: float
    kernel_dim: int


def solve_augmented(linop, f_rhs, use_projection, kernel_report=None,
                    range_tol=1e-8, cond_warn=1e6):
    """Solve L w = f (or the kernel-augmented system when a kernel exists).

    Without projection the right side must lie in the range: its kernel
    component must vanish to range_tol relative.  With projection the
    bijective augmented operator (kernel projector plus L) is solved
    instead.  The returned bound constant is |w|_H / |f|_H.  A warning is
    emitted when the solve is badly conditioned (an eigenvalue crossing
    zero, e.g. for large perturbations of the base state).

    Pass the bare operator: the projector is applied here from the kernel
    report, not from any augmentation stored on the operator itself.
    """
    grid = linop.grid
    w = linop.h_weights
    rep = kernel_report or spectrum(linop, k=min(6, grid.n_nodes))
    f = _as_values(f_rhs)
    fn = np.sqrt(float(np.sum(w * f * f)))
    ker_part = project_kernel(rep, w, f)
    proj_res = np.sqrt(float(np.sum(w * ker_part * ker_part)))
    if not use_projection and proj_res > range_tol * max(fn, 1e-300):
        raise ValueError(
            f"rhs has kernel component {proj_res:.3e} (relative "
            f"{proj_res / max(fn, 1e-300):.3e}); not in the range of L"
        )
    finite = rep.eigenvalues[np.abs(rep.eigenvalues) > rep.kernel_tol * rep.max_abs_eig]
    if finite.size and rep.max_abs_eig / np.min(np.abs(finite)) > cond_warn:
        warnings.warn(
            f"augmented solve badly conditioned: |lambda|_min/max ratio "
            f"{np.min(np.abs(finite)) / rep.max_abs_eig:.3e}",
            RuntimeWarning,
        )
    rhs = w * f
    if rep.kernel_dim == 0:
        x = spla.splu(linop.K.tocsc()).solve(rhs)
    else:
        U = (w[:, None] * rep.kernel_basis.T)  # n x m
        m = rep.kernel_dim
        M = sp.bmat(
            [[linop.K, sp.csc_matrix(U)],
             [sp.csc_matrix(U.T), -sp.identity(m, format="csc")]],
            format="csc",
        )
        sol = spla.splu(M).solve(np.concatenate([rhs, np.zeros(m)]))
        x = sol[: grid.n_nodes]
    if not use_projection and rep.kernel_dim > 0:
        x = project_range(rep, w, x)
    xn = np.sqrt(float(np.sum(w * x * x)))
    return AugmentedSolveResult(
        w=PairField(grid, x),
        c_bound=xn / max(fn, 1e-300),
        projected_residual=proj_res,
        kernel_dim=rep.kernel_dim,
    )


# ---------------------------------------------------------------------------
# energy-gap exponent probe and convergence-rate fitting
# ---------------------------------------------------------------------------

@dataclass
class LSProbeReport:
    samples: list  # (t, gap, lhs)
    fitted_theta: float
    calibration_c: float
    residual_rms: float
    valid_window: tuple
    inequality_violations: int
    insufficient: bool
    note: str = ""


def fit_gap_exponent(gaps, lhss):
    """Regress log(lhs) on log(gap); the slope is 1 - theta.

    Returns (theta, logC, rms of log residuals).
    """
    lg = np.log(np.asarray(gaps, dtype=float))
    ll = np.log(np.asarray(lhss, dtype=float))
    slope, intercept = np.polyfit(lg, ll, 1)
    resid = ll - (intercept + slope * lg)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    theta = 1.0 - float(slope)
    return theta, float(intercept), rms


def ls_probe(grid, op, pot, traj, psi, window=0.5, min_samples=5,
             gap_floor=None):
    """Probe the energy-gap inequality along a converging trajectory.

    Snapshots inside the energy-norm window around psi contribute a sample
    (t, gap, lhs) with gap = E(u)-E(psi) and lhs the summed stationary
    residuals.  theta is fitted from the log-log slope; violations count
    samples falling below the calibrated power law by more than three
    regression RMS widths.
    """
    psi_vals = _as_values(psi)
    e_psi = energy_value(grid, pot, psi_vals, op.alpha, op.beta)
    if gap_floor is None:
        gap_floor = 1e-13 * (1.0 + abs(e_psi))
    samples = []
    for t, snap in traj.snapshots:
        diff = _as_values(snap) - psi_vals
        if v_norm(grid, diff) > window:
            continue
        gap = energy_value(grid, pot, snap, op.alpha, op.beta) - e_psi
        if gap <= gap_floor:
            continue
        bulk, bdry = stationary_residual(grid, pot, snap)
        lhs = bulk + bdry
        if lhs <= 0.0:
            continue
        samples.append((t, gap, lhs))
    if len(samples) < min_samples:
        return LSProbeReport(
            samples=samples,
            fitted_theta=float("nan"),
            calibration_c=float("nan"),
            residual_rms=float("nan"),
            valid_window=(float("nan"), float("nan")),
            inequality_violations=0,
            insufficient=True,
            note=f"only {len(samples)} usable samples (need {min_samples})",
        )
    gaps = np.array([s[1] for s in samples])
    lhss = np.array([s[2] for s in samples])
    theta, logc, rms = fit_gap_exponent(gaps, lhss)
    note = ""
    if not 0.0 < theta <= 1.0:
        note = f"raw fitted exponent {theta:.3g} clipped into (0, 1]"
        theta = min(max(theta, 1e-6), 1.0)
    margin = 3.0 * max(rms, 1e-12)
    lower = logc + (1.0 - theta) * np.log(gaps) - margin - 1e-12
    violations = int(np.sum(np.log(lhss) < lower))
    return LSProbeReport(
        samples=samples,
        fitted_theta=float(theta),
        calibration_c=float(np.exp(logc)),
        residual_rms=rms,
        valid_window=(float(np.min(gaps)), float(np.max(gaps))),
        inequality_violations=violations,
        insufficient=False,
        note=note,
    )


@dataclass
class RateReport:
    model: str  # "algebraic" or "exponential"
    q: float
    c_alg: float
    gamma: float
    c_exp: float
    resid_alg: float
    resid_exp: float
    theta: float
    bound_required_q: float
    bound_ok: bool
    monotone_ok: bool


def rate_fit(traj, theta, fit_tol=0.1, monotone_tol=1e-6, t_min=None):
    """Fit algebraic C(1+t)^-q and exponential C e^(-gamma t) decay models.

    The selected model is the one with smaller RMS residual in log space
    (scale-invariant: rescaling the series shifts only C).  The rate-bound
    check passes when the measured decay is dominated by
    (1+t)^(-theta/(1-2 theta)): immediately for the exponential branch,
    via q >= theta/(1-2 theta) - fit_tol for the algebraic one.
    """
    times = np.asarray(traj.times, dtype=float)
    if traj.x_dist_to_ref is None:
        raise ValueError("trajectory has no reference distances recorded")
    dist = np.asarray(traj.x_dist_to_ref, dtype=float)
    mask = np.isfinite(dist) & (dist > 0)
    if t_min is not None:
        mask &= times >= t_min
    times, dist = times[mask], dist[mask]
    if times.size < 5:
        raise ValueError(f"need at least 5 positive samples, got {times.size}")
    if (1.0 + times.max()) / (1.0 + times.min()) < 10.0:
        raise ValueError("distance series does not span a decade of time")
    growth = np.diff(dist) > monotone_tol * dist[:-1]
    monotone_ok = not bool(np.any(growth))

    ld = np.log(dist)
    qa, ca = np.polyfit(np.log1p(times), ld, 1)
    resid_alg = float(np.sqrt(np.mean((ld - (ca + qa * np.log1p(times))) ** 2)))
    ge, ce = np.polyfit(times, ld, 1)
    resid_exp = float(np.sqrt(np.mean((ld - (ce + ge * times)) ** 2)))
    q = -float(qa)
    gamma = -float(ge)
    model = "exponential" if resid_exp < resid_alg else "algebraic"
    if theta < 0.5 - 1e-9:
        required = theta / (1.0 - 2.0 * theta)
    else:
        required = float("inf")
    bound_ok = model == "exponential" or q >= required - fit_tol
    return RateReport(
        model=model,
        q=q,
        c_alg=float(np.exp(ca)),
        gamma=gamma,
        c_exp=float(np.exp(ce)),
        resid_alg=resid_alg,
        resid_exp=resid_exp,
        theta=float(theta),
        bound_required_q=required,
        bound_ok=bool(bound_ok),
        monotone_ok=monotone_ok,
    )
