"""Discrete geometry: periodic strip / interval with wall nodes.

The computational domain is either a 2-D strip, periodic in x with two flat
walls at y=0 and y=Ly, or a 1-D interval [0, Ly] whose boundary is the two
endpoints.  Fields live on a single node set covering the closure of the
domain: interior nodes sit at cell centers in y and carry the bulk
quadrature weight, wall nodes sit exactly on the boundary and carry the
surface quadrature weight (their bulk weight is zero).  This split makes
the discrete pairing of a field with its boundary trace exact: constants,
surface masses and wall fluxes come out with no O(h) contamination.

Node ordering (stable across runs): flat index = j*nx + i, where j=0 is the
wall y=0, j=1..ny-2 are interior rows at y=(j-1/2)*hy with hy=Ly/(ny-2),
and j=ny-1 is the wall y=Ly.  For the interval, the index is j directly.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import kernels


class GridMode(Enum):
    STRIP2D = "strip2d"
    INTERVAL1D = "interval1d"


@dataclass(frozen=True)
class GridForms:
    """Geometry-only quadratic forms, assembled once per grid.

    k_grad : sparse matrix of the bulk Dirichlet form, u.(K v) = discrete
        integral of grad(u).grad(v) over the bulk.
    k_par : sparse matrix of the surface Dirichlet form along the walls
        (zero for the interval).
    bulk_mass : diagonal of the lumped bulk mass, per node (zero on walls).
    bdry_mass : diagonal of the surface mass, per node (zero off walls).
    """

    k_grad: sp.csr_matrix
    k_par: sp.csr_matrix
    bulk_mass: np.ndarray
    bdry_mass: np.ndarray


class StripGrid:
    """Immutable grid: geometry, weights and boundary indexing.

    Safe to share read-only across threads once built; field arithmetic
    creates new values or mutates an exclusively held field.

    Attributes
    ----------
    mode : GridMode
    Lx, Ly : float
        Domain lengths (Lx is 0.0 in interval mode).
    nx, ny : int
        Node counts; ny includes the two wall rows.
    hx, hy : float
        Spacings. hy is the interior cell height Ly/(ny-2); the gap between
        a wall and the first interior row is hy/2.
    bulk_weights : ndarray, shape (n_nodes,)
        Bulk quadrature weight per node; sums to the domain area exactly.
    bdry_weights : ndarray, shape (n_bdry,)
        Surface quadrature weight per wall node; sums to the wall length
        (interval mode: two endpoint weights of 1, so the surface measure
        is 2).
    bdry_idx : ndarray of int
        Flat indices of the wall nodes, bottom wall first.
    """

    def __init__(self, mode, Lx, Ly, nx, ny):
        if Ly <= 0:
            raise ValueError(f"Ly must be positive, got {Ly}")
        if ny < 4:
            raise ValueError(f"ny must be at least 4 (stencil width), got {ny}")
        self.mode = mode
        self.Ly = float(Ly)
        self.ny = int(ny)
        self.hy = self.Ly / (self.ny - 2)

        if mode is GridMode.STRIP2D:
            if Lx <= 0:
                raise ValueError(f"Lx must be positive, got {Lx}")
            if nx < 4:
                raise ValueError(f"nx must be at least 4 (stencil width), got {nx}")
            self.Lx = float(Lx)
            self.nx = int(nx)
            self.hx = self.Lx / self.nx
        else:
            self.Lx = 0.0
            self.nx = 1
            self.hx = 0.0

        self.n_nodes = self.nx * self.ny
        ys = np.empty(self.ny)
        ys[0] = 0.0
        ys[1:-1] = (np.arange(1, self.ny - 1) - 0.5) * self.hy
        ys[-1] = self.Ly
        xs = np.arange(self.nx) * self.hx if mode is GridMode.STRIP2D else np.zeros(1)
        self.x = np.tile(xs, self.ny)
        self.y = np.repeat(ys, self.nx)

        self.bdry_idx = np.concatenate(
            [np.arange(self.nx), np.arange(self.nx) + (self.ny - 1) * self.nx]
        )
        on_wall = np.zeros(self.n_nodes, dtype=bool)
        on_wall[self.bdry_idx] = True
        self.on_gamma = on_wall
        self.interior_idx = np.nonzero(~on_wall)[0]

        wb = self.hx * self.hy if mode is GridMode.STRIP2D else self.hy
        self.bulk_weights = np.where(on_wall, 0.0, wb)
        self.bdry_weights = (
            np.full(2 * self.nx, self.hx)
            if mode is GridMode.STRIP2D
            else np.ones(2)
        )
        self._forms = None

    @property
    def area(self):
        return self.Lx * self.Ly if self.mode is GridMode.STRIP2D else self.Ly

    @property
    def surface(self):
        return 2.0 * self.Lx if self.mode is GridMode.STRIP2D else 2.0

    def h_weights(self, b=1.0):
        """Diagonal of the product-space inner product, boundary part scaled 1/b."""
        w = self.bulk_weights.copy()
        w[self.bdry_idx] += self.bdry_weights / b
        return w

    @property
    def forms(self):
        if self._forms is None:
            self._forms = _assemble_forms(self)
        return self._forms

    def params(self):
        return (self.mode, self.Lx, self.Ly, self.nx, self.ny)

    def __eq__(self, other):
        return isinstance(other, StripGrid) and self.params() == other.params()

    def __hash__(self):
        return hash(self.params())

    def __repr__(self):
        return (
            f"StripGrid({self.mode.value}, Lx={self.Lx}, Ly={self.Ly}, "
            f"nx={self.nx}, ny={self.ny})"
        )


def build_grid(mode, Lx=None, Ly=None, nx=None, ny=None):
    """Construct a grid; see StripGrid for the node layout and invariants."""
    if isinstance(mode, str):
        mode = GridMode(mode.lower())
    if Ly is None or ny is None:
        raise ValueError("Ly and ny are required")
    if mode is GridMode.STRIP2D:
        if Lx is None or nx is None:
            raise ValueError("Strip2D requires Lx and nx")
        return StripGrid(mode, Lx, Ly, nx, ny)
    return StripGrid(mode, 0.0, Ly, 1, ny)


def _assemble_forms(grid):
    n = grid.n_nodes
    nx, ny = grid.nx, grid.ny
    rows, cols, vals = [], [], []

    def add_edges(a, b, coeff):
        rows.extend([a, b, a, b])
        cols.extend([a, b, b, a])
        vals.extend([coeff, coeff, -coeff, -coeff])

    if grid.mode is GridMode.STRIP2D:
        cx = grid.hy / grid.hx
        cy = grid.hx / grid.hy
        cols_i = np.arange(nx)
        right = (cols_i + 1) % nx
        for j in range(1, ny - 1):
            base = j * nx
            add_edges(base + cols_i, base + right, np.full(nx, cx))
        # wall-adjacent half cells, then uniform interior edges
        add_edges(cols_i, nx + cols_i, np.full(nx, 2.0 * cy))
        add_edges((ny - 2) * nx + cols_i, (ny - 1) * nx + cols_i, np.full(nx, 2.0 * cy))
        for j in range(1, ny - 2):
            add_edges(j * nx + cols_i, (j + 1) * nx + cols_i, np.full(nx, cy))
    else:
        cy = 1.0 / grid.hy
        add_edges(np.array([0]), np.array([1]), np.array([2.0 * cy]))
        add_edges(np.array([ny - 2]), np.array([ny - 1]), np.array([2.0 * cy]))
        for j in range(1, ny - 2):
            add_edges(np.array([j]), np.array([j + 1]), np.array([cy]))

    rows = np.concatenate([np.atleast_1d(r) for r in rows])
    cols = np.concatenate([np.atleast_1d(c) for c in cols])
    vals = np.concatenate([np.atleast_1d(v) for v in vals])
    k_grad = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    if grid.mode is GridMode.STRIP2D:
        prow, pcol, pval = [], [], []
        cp = 1.0 / grid.hx
        cols_i = np.arange(nx)
        right = (cols_i + 1) % nx
        for base in (0, (ny - 1) * nx):
            a, b = base + cols_i, base + right
            prow.extend([a, b, a, b])
            pcol.extend([a, b, b, a])
            pval.extend([np.full(nx, cp), np.full(nx, cp),
                         np.full(nx, -cp), np.full(nx, -cp)])
        prow = np.concatenate(prow)
        pcol = np.concatenate(pcol)
        pval = np.concatenate(pval)
        k_par = sp.coo_matrix((pval, (prow, pcol)), shape=(n, n)).tocsr()
    else:
        k_par = sp.csr_matrix((n, n))

    bdry_mass = np.zeros(n)
    bdry_mass[grid.bdry_idx] = grid.bdry_weights
    return GridForms(k_grad, k_par, grid.bulk_weights.copy(), bdry_mass)


class PairField:
    """A field on the closed domain together with its boundary trace.

    Storage is a single flat vector over all nodes; the trace is an index
    view into it (wall nodes), never a second copy, so bulk and trace can
    not drift apart.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_nodes,):
            raise ValueError(
                f"field has {values.shape} values, grid has {grid.n_nodes} nodes"
            )
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n_nodes))

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.n_nodes, float(value)))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample fn(x, y) at the grid nodes."""
        return cls(grid, np.asarray(fn(grid.x, grid.y), dtype=float))

    @property
    def trace(self):
        """Boundary values, bottom wall first (read as an index view)."""
        return self.values[self.grid.bdry_idx]

    def set_trace(self, tr):
        self.values[self.grid.bdry_idx] = tr

    def values2d(self):
        """(ny, nx) view for Strip2D stencils; (ny, 1) for the interval."""
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def copy(self):
        return PairField(self.grid, self.values.copy())

    def __add__(self, other):
        _check_same_grid(self, other)
        return PairField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return PairField(self.grid, self.values - other.values)

    def __mul__(self, a):
        return PairField(self.grid, self.values * float(a))

    __rmul__ = __mul__

    def __neg__(self):
        return PairField(self.grid, -self.values)


def _check_same_grid(u, v):
    if u.grid != v.grid:
        raise ValueError(f"grid mismatch: {u.grid!r} vs {v.grid!r}")


def _as_values(u):
    return u.values if isinstance(u, PairField) else np.asarray(u, dtype=float)


def h_inner(grid, u, v, b=1.0):
    """Product-space inner product: bulk quadrature plus wall quadrature.

    With b=1 this is the geometric pairing (bulk L2 plus surface L2); the
    optional b rescales the surface part by 1/b, matching the metric in
    which the permeable-wall flow is a gradient flow.
    """
    if isinstance(u, PairField) and isinstance(v, PairField):
        _check_same_grid(u, v)
    uv = _as_values(u) * _as_values(v)
    s = float(np.dot(grid.bulk_weights, uv))
    s += float(np.dot(grid.bdry_weights, uv[grid.bdry_idx])) / b
    return s


def h_norm(grid, u, b=1.0):
    return np.sqrt(max(h_inner(grid, u, u, b=b), 0.0))


def laplacian(grid, u):
    """Pointwise finite-difference Laplacian at every node.

    Interior rows use centered stencils that are exact on quadratics
    (including the wall-adjacent rows, where the spacing is non-uniform);
    wall rows carry the one-sided value, used only where a formula
    explicitly needs the bulk Laplacian on the boundary.
    """
    vals = _as_values(u)
    if grid.mode is GridMode.STRIP2D:
        out = kernels.lap_strip(vals.reshape(grid.ny, grid.nx), grid.hx, grid.hy)
        return out.reshape(-1)
    return kernels.lap_interval(vals, grid.hy)


def laplace_beltrami(grid, trace):
    """Surface Laplacian along each wall; identically zero for the interval."""
    tr = np.asarray(trace, dtype=float)
    if grid.mode is GridMode.INTERVAL1D:
        return np.zeros_like(tr)
    return kernels.beltrami(tr.reshape(2, grid.nx), grid.hx).reshape(-1)


def normal_derivative(grid, u):
    """Outward normal derivative on the walls, 3-point one-sided stencil.

    Second order; exact for fields quadratic in y.  Returned in trace
    layout (bottom wall first).
    """
    vals = _as_values(u)
    if grid.mode is GridMode.STRIP2D:
        out = kernels.normal_derivative_strip(
            vals.reshape(grid.ny, grid.nx), grid.hy
        )
        return out.reshape(-1)
    return kernels.normal_derivative_interval(vals, grid.hy)


# ---------------------------------------------------------------------------
# field snapshots
# ---------------------------------------------------------------------------

FIELD_HEADER = "# mode,Lx,Ly,nx,ny"


def save_field(field, path):
    """Write a field snapshot as CSV with a grid-identifying header."""
    g = field.grid
    vals = field.values
    with open(path, "w") as fh:
        fh.write(FIELD_HEADER + "\n")
        fh.write(f"# {g.mode.value},{g.Lx:.17g},{g.Ly:.17g},{g.nx},{g.ny}\n")
        fh.write("i,j,x,y,u,on_gamma\n")
        for k in range(g.n_nodes):
            i = k % g.nx
            j = k // g.nx
            fh.write(
                f"{i},{j},{g.x[k]:.17g},{g.y[k]:.17g},{vals[k]:.17g},"
                f"{int(g.on_gamma[k])}\n"
            )


def load_field(path, grid=None):
    """Read a snapshot; rebuilds the grid from the header unless one is given."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != FIELD_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        meta = fh.readline().strip().lstrip("# ").split(",")
        mode, Lx, Ly, nx, ny = (
            meta[0], float(meta[1]), float(meta[2]), int(meta[3]), int(meta[4])
        )
        file_grid = build_grid(mode, Lx=Lx if Lx > 0 else None, Ly=Ly, nx=nx, ny=ny)
        if grid is not None and grid != file_grid:
            raise ValueError(
                f"{path}: snapshot grid {file_grid!r} does not match {grid!r}"
            )
        g = grid or file_grid
        fh.readline()  # column header
        vals = np.empty(g.n_nodes)
        for line in fh:
            parts = line.split(",")
            k = int(parts[1]) * g.nx + int(parts[0])
            vals[k] = float(parts[4])
    return PairField(g, vals)
