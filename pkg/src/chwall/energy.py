"""Free energy, chemical potential and the dissipation functional.

The total free energy is

    E(u) = int_bulk ( |grad u|^2 / 2 + F(u) ) dx
         + int_wall ( alpha |grad_par u|^2 / 2 + beta u^2 / 2 ) dS

evaluated with the same discrete forms the operator module assembles, so
that the chemical potential returned here is the exact gradient of this
exact discrete E in the (1/b-weighted) product inner product.  Interior
rows of the gradient read -Lap(u) + f(u); wall rows read
b*(-alpha*Lap_par(u) + normal_flux(u) + beta*u) in their discrete form.
"""

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .grid import GridMode, PairField, _as_values
from .operators import grad_form


class PotentialKind(Enum):
    DOUBLE_WELL = "double_well"
    POLYNOMIAL_CUSTOM = "polynomial_custom"


@dataclass(frozen=True)
class Potential:
    """Analytic nonlinearity bundle (f, f', f'', F) with validation data.

    dissipativity_margin is the sampled minimum of f' over the far-field
    band |s| in [tail_lo, tail_hi]; it must be positive (the mixture has to
    push back at large concentration for the energy to be coercive).
    growth_p is the polynomial growth exponent used by the advisory
    subcritical-growth check.
    """

    f: callable
    f_prime: callable
    f_double_prime: callable
    F: callable
    kind: PotentialKind
    growth_p: float
    dissipativity_margin: float
    tail_lo: float = 2.0
    tail_hi: float = 10.0


def _validate(f, f_prime, F, kind, growth_p, tail_lo, tail_hi):
    s = np.linspace(-tail_hi, tail_hi, 4001)
    # antiderivative / derivative consistency via central differences
    eps = 1e-5
    fd_F = (F(s + eps) - F(s - eps)) / (2 * eps)
    scale = 1.0 + np.abs(f(s))
    if np.max(np.abs(fd_F - f(s)) / scale) > 1e-6:
        raise ValueError(f"{kind.value}: F' does not match f (sampled check)")
    fd_f = (f(s + eps) - f(s - eps)) / (2 * eps)
    scale = 1.0 + np.abs(f_prime(s))
    if np.max(np.abs(fd_f - f_prime(s)) / scale) > 1e-6:
        raise ValueError(f"{kind.value}: f' does not match derivative of f")
    tail = np.concatenate([
        np.linspace(tail_lo, tail_hi, 500),
        np.linspace(-tail_hi, -tail_lo, 500),
    ])
    margin = float(np.min(f_prime(tail)))
    if margin <= 0:
        raise ValueError(
            f"{kind.value}: dissipativity violated, min f' = {margin:.3g} "
            f"on {tail_lo} <= |s| <= {tail_hi}"
        )
    if growth_p >= 5:
        warnings.warn(
            f"{kind.value}: growth exponent p={growth_p} is supercritical for "
            "3-D theory (advisory only at desk scale)",
            RuntimeWarning,
        )
    return margin


def double_well():
    """The standard double-well: f(s) = s^3 - s, F(s) = (s^2-1)^2 / 4.

    Note F(0) = 1/4 with this closed form; the constant-zero field on the
    unit strip therefore has energy exactly 0.25.
    """
    f = lambda s: s ** 3 - s
    fp = lambda s: 3.0 * s ** 2 - 1.0
    fpp = lambda s: 6.0 * s
    F = lambda s: 0.25 * (s ** 2 - 1.0) ** 2
    margin = _validate(f, fp, F, PotentialKind.DOUBLE_WELL, 3.0, 2.0, 10.0)
    return Potential(f, fp, fpp, F, PotentialKind.DOUBLE_WELL, 3.0, margin)


def polynomial_potential(coeffs, tail_lo=2.0, tail_hi=10.0):
    """Potential from polynomial f given highest-order-first coefficients.

    F is the antiderivative with F(0) = 0.  The dissipativity check
    rejects polynomials whose f' is not eventually positive.
    """
    cf = np.asarray(coeffs, dtype=float)
    if cf.ndim != 1 or cf.size < 2:
        raise ValueError("need at least a linear polynomial for f")
    dcf = np.polyder(cf)
    ddcf = np.polyder(dcf)
    Fcf = np.polyint(cf)
    f = lambda s: np.polyval(cf, s)
    fp = lambda s: np.polyval(dcf, s)
    fpp = lambda s: np.polyval(ddcf, s)
    F = lambda s: np.polyval(Fcf, s)
    p = float(cf.size - 1)
    margin = _validate(f, fp, F, PotentialKind.POLYNOMIAL_CUSTOM, p, tail_lo, tail_hi)
    return Potential(
        f, fp, fpp, F, PotentialKind.POLYNOMIAL_CUSTOM, p, margin,
        tail_lo, tail_hi,
    )


def make_potential(kind, coeffs=None):
    if isinstance(kind, str):
        kind = PotentialKind(kind.lower())
    if kind is PotentialKind.DOUBLE_WELL:
        return double_well()
    if coeffs is None:
        raise ValueError("polynomial_custom requires coefficients")
    return polynomial_potential(coeffs)


def energy_lower_bound_constant(grid, pot):
    """C_f = |bulk| * min F over the sampled band; E >= v_norm^2/2 + C_f."""
    s = np.linspace(-pot.tail_hi, pot.tail_hi, 4001)
    return grid.area * float(np.min(pot.F(s)))


@dataclass(frozen=True)
class EnergyReport:
    """One row of the run diagnostics ledger."""

    e_bulk: float
    e_surf: float
    e_total: float
    dissipation: float
    mass_bulk: float
    mass_total: float
    flux: float
    bulk_res: float
    bdry_res: float

    CSV_COLUMNS = (
        "t,e_bulk,e_surf,e_total,dissipation,mass_bulk,mass_total,flux,"
        "bulk_res,bdry_res"
    )

    def csv_row(self, t):
        vals = (
            t, self.e_bulk, self.e_surf, self.e_total, self.dissipation,
            self.mass_bulk, self.mass_total, self.flux, self.bulk_res,
            self.bdry_res,
        )
        return ",".join(f"{v:.17g}" for v in vals)


def _surface_energy_parts(grid, vals, alpha, beta):
    tr = vals[grid.bdry_idx]
    m = float(np.dot(grid.bdry_weights, tr * tr))
    if grid.mode is GridMode.INTERVAL1D:
        par = 0.0
    else:
        t2 = tr.reshape(2, grid.nx)
        par = kernels.par_form(t2, t2, grid.hx)
    return 0.5 * alpha * par + 0.5 * beta * m


def state_report(grid, pot, u, alpha=1.0, beta=1.0, b=1.0, c=1.0):
    """(EnergyReport, chemical potential) for one state.

    The dissipation, flux and residual entries are derived from the
    chemical potential of the same state, so a single call yields one
    complete ledger row; the chemical potential is returned for reuse.
    """
    vals = _as_values(u)
    e_bulk = 0.5 * grad_form(grid, vals, vals)
    e_bulk += float(np.dot(grid.bulk_weights, pot.F(vals)))
    e_surf = _surface_energy_parts(grid, vals, alpha, beta)
    mu = chemical_potential(grid, pot, u, alpha=alpha, beta=beta, b=b)
    dis = dissipation(grid, mu, b=b, c=c)
    mass_bulk = float(np.dot(grid.bulk_weights, vals))
    mass_total = mass_bulk + float(np.dot(grid.bdry_weights, vals[grid.bdry_idx]))
    flux = -float(np.dot(grid.bdry_weights, mu.values[grid.bdry_idx]))
    if (alpha, beta, b) == (1.0, 1.0, 1.0):
        bulk_res, bdry_res = _residual_norms(grid, mu)
    else:
        bulk_res, bdry_res = stationary_residual(grid, pot, u)
    report = EnergyReport(
        e_bulk=e_bulk,
        e_surf=e_surf,
        e_total=e_bulk + e_surf,
        dissipation=dis,
        mass_bulk=mass_bulk,
        mass_total=mass_total,
        flux=flux,
        bulk_res=bulk_res,
        bdry_res=bdry_res,
    )
    return report, mu


def energy(grid, pot, u, alpha=1.0, beta=1.0, b=1.0, c=1.0):
    """Full energy/mass/dissipation report for a state."""
    report, _ = state_report(grid, pot, u, alpha=alpha, beta=beta, b=b, c=c)
    return report


def energy_value(grid, pot, u, alpha=1.0, beta=1.0):
    """Just E(u); the cheap path used inside steppers and minimizers."""
    vals = _as_values(u)
    e = 0.5 * grad_form(grid, vals, vals)
    e += float(np.dot(grid.bulk_weights, pot.F(vals)))
    return e + _surface_energy_parts(grid, vals, alpha, beta)


def energy_gradient_raw(grid, pot, u, alpha=1.0, beta=1.0):
    """Euclidean gradient of the discrete energy (before mass weighting)."""
    vals = _as_values(u)
    forms = grid.forms
    g = forms.k_grad @ vals
    if alpha != 0.0 and grid.mode is GridMode.STRIP2D:
        g = g + alpha * (forms.k_par @ vals)
    g = g + beta * (forms.bdry_mass * vals)
    g = g + forms.bulk_mass * pot.f(vals)
    return g


def chemical_potential(grid, pot, u, alpha=1.0, beta=1.0, b=1.0):
    """The chemical potential as the exact gradient of the discrete energy.

    Interior rows evaluate to -Lap(u) + f(u) with the scheme's Laplacian;
    wall rows evaluate to b*(-alpha*Lap_par u + normal_flux u + beta*u),
    i.e. the trace relation of the permeable-wall model.  For every
    direction W, <mu, W>_H equals the directional derivative of E.
    """
    g = energy_gradient_raw(grid, pot, u, alpha=alpha, beta=beta)
    return PairField(grid, g / grid.h_weights(b))


def _residual_norms(grid, mu):
    bulk = np.sqrt(max(float(np.dot(grid.bulk_weights, mu.values ** 2)), 0.0))
    tr = mu.values[grid.bdry_idx]
    bdry = np.sqrt(max(float(np.dot(grid.bdry_weights, tr * tr)), 0.0))
    return bulk, bdry


def stationary_residual(grid, pot, u):
    """(bulk, wall) L2 residuals of the stationary system, normalized constants.

    These are the two terms on the left of the energy-gap inequality: the
    bulk norm of -Lap(u) + f(u) and the wall norm of
    -Lap_par(u) + normal_flux(u) + u, both in the scheme's discrete form
    (so an exact discrete critical point reports exactly zero).
    """
    mu = chemical_potential(grid, pot, u, alpha=1.0, beta=1.0, b=1.0)
    return _residual_norms(grid, mu)


def dissipation(grid, mu, b=1.0, c=1.0):
    """Energy dissipation rate of a chemical potential field.

    Equals the operator form a(mu, mu) when b = c = 1.
    """
    vals = _as_values(mu)
    tr = vals[grid.bdry_idx]
    return grad_form(grid, vals, vals) + (c / b) * float(
        np.dot(grid.bdry_weights, tr * tr)
    )
