"""Dual-weighted measures, concentration metrics, and stationarity checks.

At a computed minimizer the dual-weight map of the residual and of the
observation misfit define cell-weighted vector measures over the space-time
quadrature.  Their total-variation mass never exceeds one (the dual-weight
unit-ball bound), and as the exponent grows they concentrate on the cells
where the underlying field magnitude is close to its maximum.  This module
builds those measures, quantifies the concentration, evaluates the
closed-form density bound, and pairs the stationarity relations against a
fixed bank of admissible test directions.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import (
    curl_kernel, gradient_kernel, laplacian_kernel, scalar_gradient_kernel,
    zero_boundary_ring,
)
from .misfit import assemble_state
from .norms import PExponent, WeightedSamples, dual_weight
from .nse import extend_interior, interior_trapezoid_weights
from .observation import eval_K_A_kernel, eval_K_eta_kernel


@dataclass
class DiscreteMeasure:
    """Cell-weighted vector measure over the interior quadrature.

    The measure of a cell is vector_weights[i] * cell_volumes[i]; the mass
    is the total variation sum(cell_volumes * |vector_weights|).  The
    magnitudes of the field the measure was built from are retained for
    sub-level-set queries.
    """

    vector_weights: np.ndarray   # (n, m)
    cell_volumes: np.ndarray     # (n,), normalized to sum 1
    field_magnitudes: np.ndarray  # (n,)

    def __post_init__(self):
        n = self.vector_weights.shape[0]
        if self.cell_volumes.shape != (n,) or self.field_magnitudes.shape != (n,):
            raise ConfigurationError("measure component shapes disagree")

    @property
    def weight_magnitudes(self):
        return np.sqrt(np.einsum("ij,ij->i", self.vector_weights, self.vector_weights))

    @property
    def mass(self):
        return float(np.sum(self.cell_volumes * self.weight_magnitudes))

    def mass_on(self, cells):
        """Total variation restricted to a boolean cell selection."""
        return float(np.sum(self.cell_volumes[cells] * self.weight_magnitudes[cells]))

    def volume_on(self, cells):
        return float(np.sum(self.cell_volumes[cells]))


def _measure_from_values(values, weight, p):
    flat = values.reshape(-1, values.shape[-1])
    vols = np.full(flat.shape[0], weight)
    dw = dual_weight(WeightedSamples(flat, vols), p)
    mags = np.sqrt(np.einsum("ij,ij->i", flat, flat))
    return DiscreteMeasure(dw.values, vols, mags)


def build_sigma(y_field, p, weight=None):
    """Dual-weighted measure of the residual field at exponent p.

    Accepts the full-grid residual VectorField (interior levels extracted)
    or a raw (nt, ny-2, nx-2, 2) array with an explicit cell weight.
    """
    if hasattr(y_field, "grid"):
        vals = y_field.values[1:, 1:-1, 1:-1]
        weight = y_field.grid.interior_weight()
    else:
        vals = np.asarray(y_field)
        if weight is None:
            weight = 1.0 / (vals.size // vals.shape[-1])
    return _measure_from_values(vals, weight, p)


def build_Sigma(k_field, p, weight=None):
    """Dual-weighted measure of the observation misfit at exponent p."""
    if hasattr(k_field, "grid"):
        vals = k_field.values
        weight = k_field.grid.interior_weight()
    else:
        vals = np.asarray(k_field)
        if weight is None:
            weight = 1.0 / (vals.size // vals.shape[-1])
    return _measure_from_values(vals, weight, p)


def concentration_mass(measure, eps):
    """Mass on the strict sub-level set {|field| < max|field| - eps}.

    Nonincreasing in eps: a larger eps shrinks the set.
    """
    peak = float(measure.field_magnitudes.max())
    if not (0.0 < eps < peak):
        raise ConfigurationError(f"need 0 < eps < max|field|={peak}, got {eps}")
    return measure.mass_on(measure.field_magnitudes < peak - eps)


def density_bound_check(y_field, p, eps, cells=None, sup_proxy=None, weight=None):
    """Closed-form density estimate for the residual measure.

    With M the sup-norm stand-in (by default the field's own maximum), the
    sub-level set A = {|y| <= M - eps} must satisfy

        mass(A & B) / volume(A & B)  <=  (1 - eps/(2M - eps))^(p-1).

    Returns (lhs, rhs, passed) with passed allowing 1e-8 relative slack.
    """
    p = p if isinstance(p, PExponent) else PExponent(float(p))
    measure = build_sigma(y_field, p, weight=weight)
    m_sup = float(measure.field_magnitudes.max()) if sup_proxy is None else float(sup_proxy)
    if not (0.0 < eps < m_sup):
        raise ConfigurationError(f"need 0 < eps < M={m_sup}, got {eps}")
    sub = measure.field_magnitudes <= m_sup - eps
    if cells is not None:
        sub = sub & np.asarray(cells).ravel()
    vol = measure.volume_on(sub)
    if vol == 0.0:
        raise ConfigurationError("sub-level set is empty; nothing to check")
    lhs = measure.mass_on(sub) / vol
    rhs = (1.0 - eps / (2.0 * m_sup - eps)) ** (p.value - 1.0)
    return lhs, rhs, bool(lhs <= rhs * (1.0 + 1e-8))


def sigma_infty_support_check(measure, tol, magnitudes=None):
    """Fraction of mass carried by cells within tol of the peak magnitude.

    A measure with zero mass is supported nowhere in particular; the
    fraction is reported as 1.
    """
    mags = measure.field_magnitudes if magnitudes is None else np.asarray(magnitudes).ravel()
    total = measure.mass
    if total == 0.0:
        return 1.0
    near = mags >= mags.max() - tol
    return measure.mass_on(near) / total


# ---------------------------------------------------------------------------
# stationarity-relation residuals against a fixed test bank

@dataclass
class TestPair:
    """One admissible test direction: a stream-function block, a pressure
    block, or both.  Arrays are DOF-shaped like ControlVector blocks."""

    __test__ = False  # domain object, not a pytest case

    label: str
    psi: np.ndarray = None   # (nt, ny-4, nx-4) or None
    pr: np.ndarray = None    # (nt, ny-2, nx-2) or None


def default_test_bank(grid):
    """Twelve fixed test pairs: eight solenoidal bumps, four pressures.

    Velocity-type pairs are tensor-product sine bumps at several spatial
    scales crossed with two temporal profiles vanishing at t = 0; pressure
    pairs are smooth zero-mean cosines.  Everything is generated from fixed
    closed-form formulas, so the bank is reproducible by construction.
    """
    xs = grid.x_nodes()[2:-2] / grid.lx
    ys = grid.y_nodes()[2:-2] / grid.ly
    ts = grid.t_nodes()[1:] / grid.t_end
    xi = grid.x_nodes()[1:-1] / grid.lx
    yi = grid.y_nodes()[1:-1] / grid.ly

    ramp = ts
    swell = np.sin(0.5 * np.pi * ts)
    bank = []
    shapes = [
        ("b1", np.outer(np.sin(np.pi * ys), np.sin(np.pi * xs))),
        ("b2", np.outer(np.sin(2 * np.pi * ys), np.sin(np.pi * xs))),
        ("b3", np.outer(np.sin(np.pi * ys), np.sin(2 * np.pi * xs))),
        ("b4", np.outer(np.sin(2 * np.pi * ys) ** 2, np.sin(2 * np.pi * xs) ** 2)),
    ]
    for name, shape in shapes:
        for tname, prof in (("ramp", ramp), ("swell", swell)):
            psi = prof[:, None, None] * shape[None]
            bank.append(TestPair(label=f"{name}-{tname}", psi=psi))

    wi = interior_trapezoid_weights(grid)
    press_shapes = [
        ("p1", np.cos(np.pi * xi)[None, :] * np.ones((yi.size, 1))),
        ("p2", np.cos(np.pi * yi)[:, None] * np.ones((1, xi.size))),
        ("p3", np.outer(np.cos(np.pi * yi), np.cos(np.pi * xi))),
        ("p4", np.outer(np.cos(2 * np.pi * yi), np.cos(np.pi * xi))),
    ]
    for name, shape in press_shapes:
        pr = (1.0 + 0.5 * ts)[:, None, None] * shape[None]
        means = np.einsum("yx,tyx->t", wi, pr)
        bank.append(TestPair(label=name, pr=pr - means[:, None, None]))
    return bank


def _velocity_direction(psi_dofs, grid):
    """State-map linearization of a stream-function direction."""
    psi_full = np.zeros((grid.nt, grid.ny, grid.nx))
    psi_full[:, 2:-2, 2:-2] = psi_dofs
    return zero_boundary_ring(curl_kernel(psi_full, grid))


def el_residual(c_star, p, setup, model, test_bank=None):
    """Stationarity defect paired against the test bank.

    For every velocity-type pair the defect is the observation-channel
    pairing plus the residual-channel pairing of the linearized momentum
    operator (time difference with zero initial slice, implicit diffusion,
    advection linearized around the minimizer); for pressure-type pairs it
    is the pairing of the test pressure gradient against the residual dual
    weights.  Both are normalized by the quadrature norm of the test
    direction's fields, so they shrink proportionally with the optimizer
    tolerance at a computed minimizer.
    """
    g = setup.grid
    if test_bank is None:
        test_bank = default_test_bank(g)
    if len(test_bank) == 0:
        raise ConfigurationError("empty test bank")
    p = p if isinstance(p, PExponent) else PExponent(float(p))
    state = assemble_state(c_star, setup, model)
    w = state.weight
    m_y = dual_weight(
        WeightedSamples(state.y_int.reshape(-1, 2), np.full(state.y_int.size // 2, w)), p
    ).values.reshape(state.y_int.shape)
    m_k = dual_weight(
        WeightedSamples(state.K.values.reshape(-1, model.n),
                        np.full(state.K.values.size // model.n, w)), p
    ).values.reshape(state.K.values.shape)

    u_star = state.u.values[1:]
    gu_star = state.grad_u
    u_int = u_star[:, 1:-1, 1:-1]
    k_eta = eval_K_eta_kernel(u_int, model)
    k_a = eval_K_A_kernel(u_int, model)
    lam = setup.lam

    r_momentum = 0.0
    r_pressure = 0.0
    for pair in test_bank:
        if pair.psi is not None:
            u_t = _velocity_direction(pair.psi, g)
            du_t = gradient_kernel(u_t, g)
            k_dir = (np.einsum("...nc,...c->...n", k_eta, u_t[:, 1:-1, 1:-1])
                     + np.einsum("...nj,...j->...n", k_a, du_t[:, 1:-1, 1:-1]))
            obs_side = (1.0 - lam) * w * float(np.sum(k_dir * m_k))

            prev = np.concatenate([np.zeros_like(u_t[:1]), u_t[:-1]], axis=0)
            lin = (u_t - prev) / g.dt
            lin = lin - setup.nu * np.stack(
                [laplacian_kernel(u_t[..., 0], g), laplacian_kernel(u_t[..., 1], g)],
                axis=-1)
            if setup.include_advection:
                adv = np.stack([
                    u_t[..., 0] * gu_star[..., 0] + u_t[..., 1] * gu_star[..., 1],
                    u_t[..., 0] * gu_star[..., 2] + u_t[..., 1] * gu_star[..., 3]],
                    axis=-1)
                adv += np.stack([
                    u_star[..., 0] * du_t[..., 0] + u_star[..., 1] * du_t[..., 1],
                    u_star[..., 0] * du_t[..., 2] + u_star[..., 1] * du_t[..., 3]],
                    axis=-1)
                lin = lin + adv
            lin_int = lin[:, 1:-1, 1:-1]
            model_side = -lam * w * float(np.sum(lin_int * m_y))

            scale = math.sqrt(w * float(
                np.sum(u_t[:, 1:-1, 1:-1] ** 2)
                + np.sum(du_t[:, 1:-1, 1:-1] ** 2)
                + np.sum(lin_int ** 2)))
            r_momentum = max(r_momentum, abs(obs_side - model_side) / max(scale, 1e-30))
        if pair.pr is not None:
            p_full = extend_interior(pair.pr, g)
            dp = scalar_gradient_kernel(p_full, g)[:, 1:-1, 1:-1]
            pairing = w * float(np.sum(dp * m_y))
            scale = math.sqrt(w * float(np.sum(dp ** 2)))
            r_pressure = max(r_pressure, abs(pairing) / max(scale, 1e-30))
    return r_momentum, r_pressure


def bank_pairings(c_star, p, setup, model, test_bank=None):
    """Raw measure pairings against the bank, for weak*-Cauchy tables.

    Returns rows (label, sigma_pairing, Sigma_pairing) where the residual
    measure pairs against the test velocity and the misfit measure against
    the observation-channel direction; pressure-type pairs report the
    pressure-gradient pairing in the sigma column.
    """
    g = setup.grid
    if test_bank is None:
        test_bank = default_test_bank(g)
    p = p if isinstance(p, PExponent) else PExponent(float(p))
    state = assemble_state(c_star, setup, model)
    w = state.weight
    m_y = dual_weight(
        WeightedSamples(state.y_int.reshape(-1, 2), np.full(state.y_int.size // 2, w)), p
    ).values.reshape(state.y_int.shape)
    m_k = dual_weight(
        WeightedSamples(state.K.values.reshape(-1, model.n),
                        np.full(state.K.values.size // model.n, w)), p
    ).values.reshape(state.K.values.shape)
    u_int = state.u.values[1:, 1:-1, 1:-1]
    k_eta = eval_K_eta_kernel(u_int, model)
    k_a = eval_K_A_kernel(u_int, model)

    rows = []
    for pair in test_bank:
        sig = 0.0
        big = 0.0
        if pair.psi is not None:
            u_t = _velocity_direction(pair.psi, g)
            du_t = gradient_kernel(u_t, g)
            sig = w * float(np.sum(u_t[:, 1:-1, 1:-1] * m_y))
            k_dir = (np.einsum("...nc,...c->...n", k_eta, u_t[:, 1:-1, 1:-1])
                     + np.einsum("...nj,...j->...n", k_a, du_t[:, 1:-1, 1:-1]))
            big = w * float(np.sum(k_dir * m_k))
        if pair.pr is not None:
            p_full = extend_interior(pair.pr, g)
            dp = scalar_gradient_kernel(p_full, g)[:, 1:-1, 1:-1]
            sig = w * float(np.sum(dp * m_y))
        rows.append((pair.label, sig, big))
    return rows
