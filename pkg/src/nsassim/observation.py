"""Observation operators, measured data, and the misfit map with derivatives.

Three built-in observation kinds are provided:

* ``masked-velocity``: the velocity itself, observed at a sparse set of
  spatial nodes; misfit is (u - q) on masked nodes, zero elsewhere.
* ``vorticity``: the scalar curl du2/dx - du1/dy.
* ``speed-squared``: |u|^2.

All built-ins depend only on the state and its spatial gradient, never on
the time derivative or the pressure, so every diagnostic that requires that
restriction applies.  Observation-space fields live on interior nodes at
time levels 1..nt, sharing the residual quadrature.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidFieldError
from .grid import GridSpec, gradient_kernel

KINDS = ("masked-velocity", "vorticity", "speed-squared")

_N_COMPONENTS = {"masked-velocity": 2, "vorticity": 1, "speed-squared": 1}


def n_components(kind):
    if kind not in KINDS:
        raise ConfigurationError(f"unknown observation kind {kind!r}")
    return _N_COMPONENTS[kind]


def default_mask(grid, stride=4):
    """Observe every stride-th node in each direction."""
    if stride < 1:
        raise ConfigurationError(f"mask stride must be >= 1, got {stride}")
    mask = np.zeros((grid.ny, grid.nx), dtype=bool)
    mask[::stride, ::stride] = True
    return mask


@dataclass
class ObservationModel:
    """An observation kind, its data q, and (for masked kinds) the mask.

    data_q is shaped (nt, ny-2, nx-2, N) over interior nodes and time levels
    1..nt.  Built-in kinds never observe the time derivative or the
    pressure, recorded structurally in depends_on_time_derivative_or_pressure.
    """

    kind: str
    grid: GridSpec
    data_q: np.ndarray
    mask: np.ndarray = None
    depends_on_time_derivative_or_pressure: bool = field(default=False, init=False)

    def __post_init__(self):
        n = n_components(self.kind)
        expected = (self.grid.nt, self.grid.ny - 2, self.grid.nx - 2, n)
        self.data_q = np.asarray(self.data_q, dtype=np.float64)
        if self.data_q.shape != expected:
            raise ConfigurationError(
                f"data_q shape {self.data_q.shape} != {expected} for kind {self.kind!r}")
        if not np.all(np.isfinite(self.data_q)):
            raise InvalidFieldError("observation data contains non-finite values")
        if self.kind == "masked-velocity":
            if self.mask is None:
                raise ConfigurationError("masked-velocity requires a mask")
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (self.grid.ny, self.grid.nx):
                raise ConfigurationError(
                    f"mask shape {self.mask.shape} != {(self.grid.ny, self.grid.nx)}")
            if not self.mask[1:-1, 1:-1].any():
                raise ConfigurationError("mask selects no interior node")

    @property
    def n(self):
        return n_components(self.kind)

    def interior_mask(self):
        return self.mask[1:-1, 1:-1]


@dataclass
class ObsField:
    """Observation-space samples on interior nodes, levels 1..nt."""

    grid: GridSpec
    values: np.ndarray  # (nt, ny-2, nx-2, N)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4 or self.values.shape[:3] != (
                self.grid.nt, self.grid.ny - 2, self.grid.nx - 2):
            raise ConfigurationError(
                f"observation field shape {self.values.shape} does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise InvalidFieldError("observation field contains non-finite values")


def _interior(values):
    """Restrict (nt+1, ny, nx, c) to interior nodes, levels 1..nt."""
    return values[1:, 1:-1, 1:-1]


def eval_Q_kernel(u_int, du_int, model):
    """Predicted observations from interior state/gradient arrays."""
    kind = model.kind
    if kind == "masked-velocity":
        m = model.interior_mask()[None, :, :, None]
        return u_int * m
    if kind == "vorticity":
        return (du_int[..., 2] - du_int[..., 1])[..., None]
    if kind == "speed-squared":
        return (u_int[..., 0] ** 2 + u_int[..., 1] ** 2)[..., None]
    raise ConfigurationError(f"unknown observation kind {kind!r}")


def eval_K_kernel(u_int, du_int, model):
    kind = model.kind
    if kind == "masked-velocity":
        m = model.interior_mask()[None, :, :, None]
        return (u_int - model.data_q) * m
    return eval_Q_kernel(u_int, du_int, model) - model.data_q


def eval_K(u, du, model):
    """Misfit K = Q(state) - q on interior nodes, levels 1..nt."""
    if u.grid != model.grid:
        raise ConfigurationError("state grid does not match observation grid")
    return ObsField(model.grid, eval_K_kernel(_interior(u.values), _interior(du.values), model))


def eval_K_eta_kernel(u_int, model):
    """dK/d(state): array (nt, niy, nix, N, 2)."""
    nt, niy, nix = u_int.shape[:3]
    kind = model.kind
    out = np.zeros((nt, niy, nix, model.n, 2))
    if kind == "masked-velocity":
        m = model.interior_mask().astype(np.float64)
        out[..., 0, 0] = m
        out[..., 1, 1] = m
    elif kind == "speed-squared":
        out[..., 0, 0] = 2.0 * u_int[..., 0]
        out[..., 0, 1] = 2.0 * u_int[..., 1]
    return out


def eval_K_A_kernel(u_int, model):
    """dK/d(spatial gradient): array (nt, niy, nix, N, 4)."""
    nt, niy, nix = u_int.shape[:3]
    out = np.zeros((nt, niy, nix, model.n, 4))
    if model.kind == "vorticity":
        out[..., 0, 1] = -1.0
        out[..., 0, 2] = 1.0
    return out


def eval_K_eta(u, du, model):
    if u.grid != model.grid:
        raise ConfigurationError("state grid does not match observation grid")
    return eval_K_eta_kernel(_interior(u.values), model)


def eval_K_A(u, du, model):
    if u.grid != model.grid:
        raise ConfigurationError("state grid does not match observation grid")
    return eval_K_A_kernel(_interior(u.values), model)


def synth_data(u_truth, kind, noise_amplitude, seed, mask=None, mask_stride=4):
    """Twin-experiment data: q = Q(truth) + noise_amplitude * xi.

    xi is i.i.d. uniform on [-1, 1] from a generator seeded with `seed`, so
    the data is deterministic given the seed and bounded by the amplitude.
    With zero amplitude the misfit of the truth state vanishes identically.
    """
    if noise_amplitude < 0.0:
        raise ConfigurationError(f"noise amplitude must be >= 0, got {noise_amplitude}")
    grid = u_truth.grid
    if kind == "masked-velocity" and mask is None:
        mask = default_mask(grid, mask_stride)
    u_int = _interior(u_truth.values)
    du_int = _interior(gradient_kernel(u_truth.values, grid))
    probe = ObservationModel(
        kind, grid, np.zeros((grid.nt, grid.ny - 2, grid.nx - 2, n_components(kind))),
        mask=mask)
    q = eval_Q_kernel(u_int, du_int, probe)
    if noise_amplitude > 0.0:
        rng = np.random.default_rng(seed)
        q = q + noise_amplitude * rng.uniform(-1.0, 1.0, size=q.shape)
    return ObservationModel(kind, grid, q, mask=mask)
