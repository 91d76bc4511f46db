"""Uniform space-time grids, field containers, and finite-difference operators.

The domain is a node-centered rectangle [0,lx] x [0,ly] sampled at nx x ny
nodes, with nt time levels after t = 0 (level 0 holds initial data).  All
spatial derivatives are second-order: centered three-point stencils at
interior nodes, one-sided second-order stencils at boundary nodes.  The time
derivative is the first-order backward difference.

Derivative operators along each axis are dense 1D matrices applied by
matmul, so operators acting on different axes commute exactly.  That makes
the discrete divergence of a stream-function curl vanish to round-off,
which is what keeps the velocity parametrization exactly solenoidal.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, InvalidFieldError


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time sampling of the domain rectangle.

    nx, ny   node counts per spatial axis (>= 5, centered stencils need two
             interior layers)
    nt       number of time levels strictly after t = 0 (>= 2)
    lx, ly   domain side lengths
    t_end    final time
    """

    nx: int
    ny: int
    nt: int
    lx: float = 1.0
    ly: float = 1.0
    t_end: float = 1.0

    def __post_init__(self):
        if self.nx < 5 or self.ny < 5:
            raise ConfigurationError(f"nx, ny must be >= 5, got {self.nx}, {self.ny}")
        if self.nt < 2:
            raise ConfigurationError(f"nt must be >= 2, got {self.nt}")
        for name in ("lx", "ly", "t_end"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0.0:
                raise ConfigurationError(f"{name} must be positive and finite, got {v}")

    @property
    def hx(self):
        return self.lx / (self.nx - 1)

    @property
    def hy(self):
        return self.ly / (self.ny - 1)

    @property
    def dt(self):
        return self.t_end / self.nt

    def x_nodes(self):
        return np.linspace(0.0, self.lx, self.nx)

    def y_nodes(self):
        return np.linspace(0.0, self.ly, self.ny)

    def t_nodes(self):
        return np.linspace(0.0, self.t_end, self.nt + 1)

    def mesh(self):
        """Spatial meshgrid (X, Y), each of shape (ny, nx)."""
        return np.meshgrid(self.x_nodes(), self.y_nodes(), indexing="xy")

    @property
    def n_interior(self):
        """Number of interior spatial nodes."""
        return (self.ny - 2) * (self.nx - 2)

    def interior_weight(self):
        """Uniform quadrature weight over interior nodes x levels 1..nt.

        The space-time quadrature is the normalized counting measure on
        interior nodes at time levels 1..nt (sum of weights is one), matching
        the averaged-norm convention used throughout.
        """
        return 1.0 / (self.nt * self.n_interior)

    # 1D derivative matrices, cached per (n, h)
    def d1x(self):
        return _d1_matrix(self.nx, self.hx)

    def d1y(self):
        return _d1_matrix(self.ny, self.hy)

    def d2x(self):
        return _d2_matrix(self.nx, self.hx)

    def d2y(self):
        return _d2_matrix(self.ny, self.hy)


@lru_cache(maxsize=None)
def _d1_matrix(n, h):
    """Dense first-derivative matrix: centered interior, one-sided ends."""
    d = np.zeros((n, n))
    for i in range(1, n - 1):
        d[i, i - 1] = -0.5 / h
        d[i, i + 1] = 0.5 / h
    d[0, 0], d[0, 1], d[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    d[n - 1, n - 1], d[n - 1, n - 2], d[n - 1, n - 3] = 1.5 / h, -2.0 / h, 0.5 / h
    d.setflags(write=False)
    return d


@lru_cache(maxsize=None)
def _d2_matrix(n, h):
    """Dense second-derivative matrix: 3-point interior, one-sided ends."""
    d = np.zeros((n, n))
    h2 = h * h
    for i in range(1, n - 1):
        d[i, i - 1] = 1.0 / h2
        d[i, i] = -2.0 / h2
        d[i, i + 1] = 1.0 / h2
    d[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / h2
    d[n - 1, n - 4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / h2
    d.setflags(write=False)
    return d


def apply_x(a, m):
    """Apply 1D matrix m along the last (x) axis of a."""
    return a @ m.T


def apply_y(a, m):
    """Apply 1D matrix m along the second-to-last (y) axis of a."""
    return np.swapaxes(np.swapaxes(a, -1, -2) @ m.T, -1, -2)


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise InvalidFieldError(f"{what} contains non-finite values")


@dataclass
class ScalarField:
    """Scalar samples over all time levels, values shaped (nt+1, ny, nx)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.grid.nt + 1, self.grid.ny, self.grid.nx)
        if self.values.shape != expected:
            raise ConfigurationError(
                f"scalar field shape {self.values.shape} != {expected}")
        _check_finite(self.values, "scalar field")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.nt + 1, grid.ny, grid.nx)))

    @classmethod
    def sample(cls, grid, fn):
        """Sample fn(x, y, t) on the grid."""
        xx, yy = grid.mesh()
        vals = np.stack([fn(xx, yy, t) * np.ones_like(xx) for t in grid.t_nodes()])
        return cls(grid, vals)


@dataclass
class VectorField:
    """Two-component field, values shaped (nt+1, ny, nx, 2).

    Component 0 is the x-velocity u1, component 1 the y-velocity u2.  Time
    level 0 houses initial data.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.grid.nt + 1, self.grid.ny, self.grid.nx, 2)
        if self.values.shape != expected:
            raise ConfigurationError(
                f"vector field shape {self.values.shape} != {expected}")
        _check_finite(self.values, "vector field")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.nt + 1, grid.ny, grid.nx, 2)))

    @classmethod
    def sample(cls, grid, fn):
        """Sample fn(x, y, t) -> (u1, u2) on the grid."""
        xx, yy = grid.mesh()
        levels = []
        for t in grid.t_nodes():
            u1, u2 = fn(xx, yy, t)
            levels.append(np.stack([u1 * np.ones_like(xx), u2 * np.ones_like(xx)], axis=-1))
        return cls(grid, np.stack(levels))


@dataclass
class TensorField:
    """Spatial-gradient field, values shaped (nt+1, ny, nx, 4).

    Component ordering is (du1/dx, du1/dy, du2/dx, du2/dy), i.e. entry i*2+j
    holds the derivative of component i along axis j.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.grid.nt + 1, self.grid.ny, self.grid.nx, 4)
        if self.values.shape != expected:
            raise ConfigurationError(
                f"tensor field shape {self.values.shape} != {expected}")
        _check_finite(self.values, "tensor field")


# ---------------------------------------------------------------------------
# raw-array kernels (used directly by the misfit chain and its adjoint)

def curl_kernel(psi, grid):
    """(d psi/dy, -d psi/dx) for psi shaped (..., ny, nx)."""
    return np.stack([apply_y(psi, grid.d1y()), -apply_x(psi, grid.d1x())], axis=-1)


def curl_transpose_kernel(ubar, grid):
    """Transpose of curl_kernel: cotangent (..., ny, nx, 2) -> (..., ny, nx)."""
    return apply_y(ubar[..., 0], grid.d1y().T) - apply_x(ubar[..., 1], grid.d1x().T)


def gradient_kernel(u, grid):
    """Spatial gradient of (..., ny, nx, 2) -> (..., ny, nx, 4)."""
    d1x, d1y = grid.d1x(), grid.d1y()
    u1, u2 = u[..., 0], u[..., 1]
    return np.stack(
        [apply_x(u1, d1x), apply_y(u1, d1y), apply_x(u2, d1x), apply_y(u2, d1y)],
        axis=-1)


def gradient_transpose_kernel(gbar, grid):
    """Transpose of gradient_kernel: (..., ny, nx, 4) -> (..., ny, nx, 2)."""
    d1xt, d1yt = grid.d1x().T, grid.d1y().T
    u1 = apply_x(gbar[..., 0], d1xt) + apply_y(gbar[..., 1], d1yt)
    u2 = apply_x(gbar[..., 2], d1xt) + apply_y(gbar[..., 3], d1yt)
    return np.stack([u1, u2], axis=-1)


def laplacian_kernel(a, grid):
    """Scalar Laplacian along the trailing (ny, nx) axes."""
    return apply_x(a, grid.d2x()) + apply_y(a, grid.d2y())


def laplacian_transpose_kernel(a, grid):
    return apply_x(a, grid.d2x().T) + apply_y(a, grid.d2y().T)


def scalar_gradient_kernel(p, grid):
    """(dp/dx, dp/dy) for p shaped (..., ny, nx)."""
    return np.stack([apply_x(p, grid.d1x()), apply_y(p, grid.d1y())], axis=-1)


def scalar_gradient_transpose_kernel(gbar, grid):
    return apply_x(gbar[..., 0], grid.d1x().T) + apply_y(gbar[..., 1], grid.d1y().T)


def divergence_kernel(u, grid):
    """du1/dx + du2/dy for u shaped (..., ny, nx, 2)."""
    return apply_x(u[..., 0], grid.d1x()) + apply_y(u[..., 1], grid.d1y())


def vorticity_kernel(u, grid):
    """du2/dx - du1/dy for u shaped (..., ny, nx, 2)."""
    return apply_x(u[..., 1], grid.d1x()) - apply_y(u[..., 0], grid.d1y())


def advection_kernel(u, grad_u):
    """(u . D)u from a velocity array and its gradient array."""
    u1, u2 = u[..., 0], u[..., 1]
    a1 = u1 * grad_u[..., 0] + u2 * grad_u[..., 1]
    a2 = u1 * grad_u[..., 2] + u2 * grad_u[..., 3]
    return np.stack([a1, a2], axis=-1)


def zero_boundary_ring(u):
    """Zero the boundary-node ring of (..., ny, nx, ncomp) in place-free form."""
    out = u.copy()
    out[..., 0, :, :] = 0.0
    out[..., -1, :, :] = 0.0
    out[..., :, 0, :] = 0.0
    out[..., :, -1, :] = 0.0
    return out


# ---------------------------------------------------------------------------
# field-level operations

def curl_stream(psi):
    """Velocity (d psi/dy, -d psi/dx) from a stream function.

    Centered differences at interior nodes, one-sided second-order at the
    boundary.  Because the x- and y-derivative matrices act on different
    axes they commute exactly, so the centered discrete divergence of the
    result vanishes to round-off at interior nodes for any psi.  When psi
    vanishes on the spatial boundary the normal velocity component is
    exactly zero there as well.
    """
    _check_finite(psi.values, "stream function")
    return VectorField(psi.grid, curl_kernel(psi.values, psi.grid))


def spatial_gradient(u):
    """Gradient tensor of a velocity field, second-order stencils."""
    return TensorField(u.grid, gradient_kernel(u.values, u.grid))


def laplacian(u):
    """Componentwise Laplacian: 5-point stencil interior, one-sided at edges."""
    g = u.grid
    vals = np.stack(
        [laplacian_kernel(u.values[..., 0], g), laplacian_kernel(u.values[..., 1], g)],
        axis=-1)
    return VectorField(g, vals)


def advection(u):
    """(u . D)u computed pointwise from the spatial gradient."""
    return VectorField(u.grid, advection_kernel(u.values, gradient_kernel(u.values, u.grid)))


def divergence(u):
    return ScalarField(u.grid, divergence_kernel(u.values, u.grid))


def vorticity(u):
    return ScalarField(u.grid, vorticity_kernel(u.values, u.grid))


def time_derivative(u, u0):
    """Backward difference (u^k - u^(k-1))/dt at levels 1..nt with u^0 := u0.

    u0 is the initial spatial slice, shaped (ny, nx, 2).  Level 0 of the
    output is zero and unused by the residual.
    """
    g = u.grid
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (g.ny, g.nx, 2):
        raise ConfigurationError(
            f"initial slice shape {u0.shape} != {(g.ny, g.nx, 2)}")
    out = np.zeros_like(u.values)
    prev = np.concatenate([u0[None], u.values[1:-1]], axis=0)
    out[1:] = (u.values[1:] - prev) / g.dt
    return VectorField(g, out)


def trapezoid_weights_2d(grid):
    """Normalized trapezoidal quadrature weights over the full spatial grid."""
    wx = np.ones(grid.nx)
    wx[0] = wx[-1] = 0.5
    wy = np.ones(grid.ny)
    wy[0] = wy[-1] = 0.5
    w = np.outer(wy, wx)
    return w / w.sum()


def zero_mean_project(p):
    """Subtract the trapezoidal-weighted spatial mean at every time level."""
    w = trapezoid_weights_2d(p.grid)
    means = np.einsum("yx,tyx->t", w, p.values)
    return ScalarField(p.grid, p.values - means[:, None, None])
