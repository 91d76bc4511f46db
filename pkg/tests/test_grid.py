import numpy as np
import pytest

from nsassim.errors import ConfigurationError, InvalidFieldError
from nsassim.grid import (
    GridSpec, ScalarField, VectorField, advection, curl_stream, divergence,
    laplacian, spatial_gradient, time_derivative, trapezoid_weights_2d,
    vorticity, zero_boundary_ring, zero_mean_project,
)


def grid(nx=17, ny=17, nt=4, t_end=0.4):
    return GridSpec(nx=nx, ny=ny, nt=nt, t_end=t_end)


class TestGridSpec:
    def test_spacings(self):
        g = GridSpec(nx=11, ny=21, nt=5, lx=2.0, ly=1.0, t_end=0.5)
        assert g.hx == pytest.approx(0.2)
        assert g.hy == pytest.approx(0.05)
        assert g.dt == pytest.approx(0.1)

    @pytest.mark.parametrize("kwargs", [
        dict(nx=4, ny=8, nt=2),
        dict(nx=8, ny=4, nt=2),
        dict(nx=8, ny=8, nt=1),
        dict(nx=8, ny=8, nt=2, lx=-1.0),
        dict(nx=8, ny=8, nt=2, t_end=0.0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            GridSpec(**kwargs)

    def test_interior_weight_sums_to_one(self):
        g = grid()
        total = g.interior_weight() * g.nt * g.n_interior
        assert total == pytest.approx(1.0, abs=1e-15)


class TestCurlStream:
    def test_zero(self):
        g = grid()
        u = curl_stream(ScalarField.zeros(g))
        assert np.all(u.values == 0.0)

    def test_linear_stream(self):
        # psi = y gives u = (1, 0); exact for second-order stencils
        g = grid()
        psi = ScalarField.sample(g, lambda x, y, t: y)
        u = curl_stream(psi)
        assert np.allclose(u.values[..., 0], 1.0, atol=1e-13)
        assert np.allclose(u.values[..., 1], 0.0, atol=1e-13)

    def test_divergence_free_sine_bump(self):
        g = GridSpec(nx=65, ny=65, nt=2, t_end=0.1)
        psi = ScalarField.sample(
            g, lambda x, y, t: np.sin(np.pi * x) * np.sin(np.pi * y))
        u = curl_stream(psi)
        div = divergence(u).values[:, 1:-1, 1:-1]
        assert np.abs(div).max() <= 1e-12 * np.abs(u.values).max()

    def test_divergence_free_random(self):
        # commuting 1D stencils cancel for any stream function
        g = grid()
        rng = np.random.default_rng(0)
        psi = ScalarField(g, rng.standard_normal((g.nt + 1, g.ny, g.nx)))
        u = curl_stream(psi)
        grad = spatial_gradient(u).values
        div = divergence(u).values[:, 1:-1, 1:-1]
        assert np.abs(div).max() <= 1e-12 * (1.0 + np.abs(grad).max())

    def test_non_finite_rejected(self):
        g = grid()
        vals = np.zeros((g.nt + 1, g.ny, g.nx))
        vals[0, 3, 3] = np.nan
        with pytest.raises(InvalidFieldError):
            ScalarField(g, vals)


class TestSpatialGradient:
    def test_constant(self):
        g = grid()
        u = VectorField.sample(g, lambda x, y, t: (3.0, -2.0))
        assert np.abs(spatial_gradient(u).values).max() <= 1e-13

    def test_linear_exact(self):
        g = grid()
        u = VectorField.sample(g, lambda x, y, t: (x, -y))
        dv = spatial_gradient(u).values
        assert np.allclose(dv[..., 0], 1.0, atol=1e-12)
        assert np.allclose(dv[..., 1], 0.0, atol=1e-12)
        assert np.allclose(dv[..., 2], 0.0, atol=1e-12)
        assert np.allclose(dv[..., 3], -1.0, atol=1e-12)

    def test_second_order_convergence(self):
        def err(n):
            g = GridSpec(nx=n, ny=n, nt=2, t_end=0.1)
            u = VectorField.sample(g, lambda x, y, t: (np.sin(y), np.cos(x)))
            dv = spatial_gradient(u).values[0]
            xx, yy = g.mesh()
            exact = np.stack(
                [np.zeros_like(xx), np.cos(yy), -np.sin(xx), np.zeros_like(xx)],
                axis=-1)
            return np.abs(dv - exact).max()

        ratio = err(33) / err(65)
        assert 3.5 <= ratio <= 4.5

    def test_vorticity_of_rotation(self):
        g = grid()
        u = VectorField.sample(g, lambda x, y, t: (y, -x))
        assert np.allclose(vorticity(u).values, -2.0, atol=1e-12)


class TestLaplacian:
    def test_linear_is_zero(self):
        g = grid()
        u = VectorField.sample(g, lambda x, y, t: (2 * x + y, x - y))
        assert np.abs(laplacian(u).values).max() <= 1e-11

    def test_quadratic_exact(self):
        g = grid()
        u = VectorField.sample(g, lambda x, y, t: (x ** 2 + y ** 2, 0.0))
        lap = laplacian(u).values
        assert np.allclose(lap[:, 1:-1, 1:-1, 0], 4.0, atol=1e-10)
        assert np.abs(lap[..., 1]).max() <= 1e-10

    def test_second_order_convergence(self):
        def err(n):
            g = GridSpec(nx=n, ny=n, nt=2, t_end=0.1)
            u = VectorField.sample(
                g, lambda x, y, t: (np.sin(np.pi * x) * np.sin(np.pi * y), 0.0))
            lap = laplacian(u).values[0, 1:-1, 1:-1, 0]
            exact = -2 * np.pi ** 2 * u.values[0, 1:-1, 1:-1, 0]
            return np.abs(lap - exact).max()

        ratio = err(33) / err(65)
        assert 3.5 <= ratio <= 4.5


class TestAdvection:
    def test_zero_and_constant(self):
        g = grid()
        assert np.all(advection(VectorField.zeros(g)).values == 0.0)
        u = VectorField.sample(g, lambda x, y, t: (1.5, -0.5))
        assert np.abs(advection(u).values).max() <= 1e-13

    def test_bilinear_hand_value(self):
        # u = (y, x): (u.D)u = (x, y), exact for linear fields
        g = grid()
        u = VectorField.sample(g, lambda x, y, t: (y, x))
        adv = advection(u).values
        xx, yy = g.mesh()
        assert np.allclose(adv[0, ..., 0], xx, atol=1e-12)
        assert np.allclose(adv[0, ..., 1], yy, atol=1e-12)


class TestTimeDerivative:
    def test_constant_in_time(self):
        g = grid()
        u0 = np.ones((g.ny, g.nx, 2))
        u = VectorField(g, np.ones((g.nt + 1, g.ny, g.nx, 2)))
        assert np.abs(time_derivative(u, u0).values).max() <= 1e-14

    def test_linear_in_time_exact(self):
        g = grid()
        c = np.array([0.7, -0.3])
        vals = np.stack([k * g.dt * np.ones((g.ny, g.nx, 2)) * c
                         for k in range(g.nt + 1)])
        dt_u = time_derivative(VectorField(g, vals), np.zeros((g.ny, g.nx, 2)))
        assert np.allclose(dt_u.values[1:], c, atol=1e-12)

    def test_first_order_convergence(self):
        def err(nt):
            g = GridSpec(nx=6, ny=6, nt=nt, t_end=1.0)
            ts = g.t_nodes()
            vals = np.stack([np.sin(t) * np.ones((g.ny, g.nx, 2)) for t in ts])
            du = time_derivative(VectorField(g, vals), vals[0]).values
            exact = np.stack([np.cos(t) * np.ones((g.ny, g.nx, 2)) for t in ts])
            return np.abs(du[1:] - exact[1:]).max()

        ratio = err(16) / err(32)
        assert 1.7 <= ratio <= 2.3

    def test_shape_mismatch(self):
        g = grid()
        with pytest.raises(ConfigurationError):
            time_derivative(VectorField.zeros(g), np.zeros((3, 3, 2)))


class TestZeroMeanProject:
    def test_constant_killed(self):
        g = grid()
        p = ScalarField(g, 7.0 * np.ones((g.nt + 1, g.ny, g.nx)))
        assert np.abs(zero_mean_project(p).values).max() <= 1e-13

    def test_idempotent_projection(self):
        g = grid()
        rng = np.random.default_rng(1)
        p = ScalarField(g, rng.standard_normal((g.nt + 1, g.ny, g.nx)))
        once = zero_mean_project(p)
        twice = zero_mean_project(once)
        assert np.abs(twice.values - once.values).max() <= 1e-14 * np.abs(p.values).max()
        w = trapezoid_weights_2d(g)
        means = np.einsum("yx,tyx->t", w, once.values)
        assert np.abs(means).max() <= 1e-14 * max(1.0, np.abs(p.values).max())

    def test_linear_field_mean(self):
        # trapezoidal mean of x over the unit square is exactly 1/2
        g = grid()
        p = ScalarField.sample(g, lambda x, y, t: x)
        out = zero_mean_project(p).values
        xx, _ = g.mesh()
        assert np.allclose(out, xx - 0.5, atol=1e-14)

    def test_linearity(self):
        g = grid()
        rng = np.random.default_rng(2)
        a = rng.standard_normal((g.nt + 1, g.ny, g.nx))
        b = rng.standard_normal((g.nt + 1, g.ny, g.nx))
        lhs = zero_mean_project(ScalarField(g, 2.0 * a - 3.0 * b)).values
        rhs = (2.0 * zero_mean_project(ScalarField(g, a)).values
               - 3.0 * zero_mean_project(ScalarField(g, b)).values)
        assert np.abs(lhs - rhs).max() <= 1e-13


def test_operator_linearity_on_random_fields():
    g = grid(nx=9, ny=9, nt=3, t_end=0.3)
    rng = np.random.default_rng(3)
    a = rng.standard_normal((g.nt + 1, g.ny, g.nx, 2))
    b = rng.standard_normal((g.nt + 1, g.ny, g.nx, 2))
    for op in (spatial_gradient, laplacian, divergence):
        lhs = op(VectorField(g, 1.3 * a + 0.7 * b)).values
        rhs = 1.3 * op(VectorField(g, a)).values + 0.7 * op(VectorField(g, b)).values
        scale = max(np.abs(lhs).max(), 1.0)
        assert np.abs(lhs - rhs).max() <= 1e-12 * scale


def test_zero_boundary_ring():
    rng = np.random.default_rng(4)
    u = rng.standard_normal((3, 6, 7, 2))
    z = zero_boundary_ring(u)
    assert np.all(z[:, 0] == 0.0) and np.all(z[:, -1] == 0.0)
    assert np.all(z[:, :, 0] == 0.0) and np.all(z[:, :, -1] == 0.0)
    assert np.array_equal(z[:, 1:-1, 1:-1], u[:, 1:-1, 1:-1])
