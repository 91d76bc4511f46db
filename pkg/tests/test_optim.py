import numpy as np
import pytest

from nsassim.errors import ConfigurationError
from nsassim.grid import GridSpec, VectorField
from nsassim.misfit import assemble_E_p, assemble_state
from nsassim.nse import (
    ControlVector, PhysicsSetup, forcing_preset, initial_velocity_preset,
    reference_solve,
)
from nsassim.observation import ObservationModel, default_mask, synth_data
from nsassim.optim import (
    ContinuationSchedule, MinimizeResult, OptimOptions, minimize_E_p,
    run_continuation, stage_tolerance,
)


def small_problem(noise=0.25, lam=0.5, advection=True, seed=3):
    g = GridSpec(nx=8, ny=8, nt=6, t_end=0.3)
    setup = PhysicsSetup(grid=g, nu=0.02, lam=lam,
                         f=forcing_preset(g, "none", 0.0),
                         u0=initial_velocity_preset(g, "vortex", 0.1),
                         include_advection=advection)
    model = synth_data(VectorField.zeros(g), "masked-velocity", noise,
                       seed=seed, mask_stride=2)
    return g, setup, model


class TestOptions:
    def test_defaults(self):
        opts = OptimOptions()
        assert opts.max_iters == 500
        assert opts.grad_tol == 1e-6
        assert opts.memory == 10
        assert opts.armijo_factor == 0.5
        assert opts.armijo_slope == 1e-4

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            OptimOptions(memory=0)
        with pytest.raises(ConfigurationError):
            OptimOptions(grad_tol=0.0)
        with pytest.raises(ConfigurationError):
            OptimOptions(armijo_factor=1.5)

    def test_schedule_validation(self):
        assert ContinuationSchedule().p_list == (2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
        with pytest.raises(ConfigurationError):
            ContinuationSchedule(p_list=())
        with pytest.raises(ConfigurationError):
            ContinuationSchedule(p_list=(2.0, 2.0))
        with pytest.raises(ConfigurationError):
            ContinuationSchedule(p_list=(1.5, 4.0))
        with pytest.raises(ConfigurationError):
            ContinuationSchedule(p_list=(2.0, float("inf")))

    def test_stage_tolerance_tightens(self):
        opts = OptimOptions(grad_tol=1e-6)
        tols = [stage_tolerance(opts, 2.0, p) for p in (2.0, 8.0, 128.0)]
        assert tols[0] == pytest.approx(1e-6)
        assert tols[1] == pytest.approx(1e-6 / 2.0)
        assert tols[2] == pytest.approx(1e-6 / 8.0)
        assert tols[0] > tols[1] > tols[2]


class TestMinimize:
    def test_stationary_start_returns_immediately(self):
        # zero-everything configuration: the zero control is stationary
        g = GridSpec(nx=8, ny=8, nt=6, t_end=0.3)
        setup = PhysicsSetup(grid=g, nu=0.05, lam=0.5,
                             f=forcing_preset(g, "none", 0.0),
                             u0=initial_velocity_preset(g, "zero", 0.0))
        q = np.zeros((g.nt, g.ny - 2, g.nx - 2, 2))
        model = ObservationModel("masked-velocity", g, q, mask=default_mask(g, 2))
        res = minimize_E_p(ControlVector.zeros(g), setup, model, 4.0)
        assert res.converged
        assert res.iterations <= 1
        assert res.report.e_p == pytest.approx(0.25, abs=1e-15)

    def test_monotone_descent_on_random_starts(self):
        g, setup, model = small_problem()
        rng = np.random.default_rng(5)
        for trial in range(3):
            c0 = ControlVector(g, 0.5 * rng.standard_normal((g.nt, g.ny - 4, g.nx - 4)),
                               0.5 * rng.standard_normal((g.nt, g.ny - 2, g.nx - 2)))
            res = minimize_E_p(c0, setup, model, 4.0,
                               OptimOptions(max_iters=40, grad_tol=1e-10))
            values = [row[1] for row in res.trace]
            assert all(b < a for a, b in zip(values, values[1:]))

    def test_converged_gradient_below_tolerance(self):
        g, setup, model = small_problem()
        res = minimize_E_p(ControlVector.zeros(g), setup, model, 2.0,
                           OptimOptions(max_iters=2000, grad_tol=1e-6))
        assert res.converged and not res.stalled
        assert res.grad_norm <= 1e-6 * max(1.0, res.trace[0][2])

    def test_quadratic_sanity_matches_dense_oracle(self):
        # advection off makes the control-to-fields map affine; the scaled
        # normal equations iterated to a fixed point are the oracle
        g, setup, model = small_problem(noise=0.2, advection=False)
        n = ControlVector.zeros(g).to_flat().size
        s0 = assemble_state(ControlVector.zeros(g), setup, model)
        k0 = s0.K.values.reshape(-1)
        y0 = s0.y_int.reshape(-1)
        a = np.empty((k0.size, n))
        b = np.empty((y0.size, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            sj = assemble_state(ControlVector.from_flat(g, e), setup, model)
            a[:, j] = sj.K.values.reshape(-1) - k0
            b[:, j] = sj.y_int.reshape(-1) - y0
        w = g.interior_weight()
        lam = setup.lam
        ata, btb = a.T @ a, b.T @ b
        atb, btd = a.T @ k0, b.T @ y0
        c = np.zeros(n)
        for _ in range(80):
            s_k = np.sqrt(w * np.sum((a @ c + k0) ** 2) + 0.25)
            s_y = np.sqrt(w * np.sum((b @ c + y0) ** 2) + 0.25)
            m = (1 - lam) / s_k * ata + lam / s_y * btb
            rhs = -((1 - lam) / s_k * atb + lam / s_y * btd)
            c_new = np.linalg.lstsq(m, rhs, rcond=None)[0]
            if np.linalg.norm(c_new - c) <= 1e-14 * max(1.0, np.linalg.norm(c)):
                c = c_new
                break
            c = c_new
        oracle_e = (1 - lam) * s_k + lam * s_y

        res = minimize_E_p(ControlVector.zeros(g), setup, model, 2.0,
                           OptimOptions(max_iters=2000, grad_tol=1e-9))
        assert abs(res.report.e_p - oracle_e) <= 1e-8

    def test_zero_noise_twin_beats_truth(self):
        g = GridSpec(nx=8, ny=8, nt=6, t_end=0.3)
        setup = PhysicsSetup(grid=g, nu=0.005, lam=0.5,
                             f=forcing_preset(g, "none", 0.0),
                             u0=initial_velocity_preset(g, "vortex", 0.1))
        ref = reference_solve(setup)
        model = synth_data(ref.u, "masked-velocity", 0.0, seed=21, mask_stride=2)
        res = minimize_E_p(ControlVector.zeros(g), setup, model, 2.0,
                           OptimOptions(max_iters=2000, grad_tol=1e-7))
        truth_rep = assemble_E_p(ref.control, setup, model, 2.0)
        assert res.report.e_p <= truth_rep.e_p + 1e-6


class TestContinuation:
    def test_single_entry_equals_minimize(self):
        g, setup, model = small_problem()
        c0 = ControlVector.zeros(g)
        opts = OptimOptions(max_iters=300, grad_tol=1e-6)
        stages = run_continuation(c0, setup, model,
                                  ContinuationSchedule(p_list=(4.0,)), opts)
        direct = minimize_E_p(c0, setup, model, 4.0, opts)
        assert len(stages) == 1
        assert stages[0].report.e_p == direct.report.e_p
        assert stages[0].result.iterations == direct.iterations

    def test_stage_records_and_running_min(self):
        g, setup, model = small_problem(noise=0.3)
        stages = run_continuation(ControlVector.zeros(g), setup, model,
                                  ContinuationSchedule(p_list=(2.0, 4.0, 8.0)),
                                  OptimOptions(max_iters=400, grad_tol=1e-6))
        assert [st.p for st in stages] == [2.0, 4.0, 8.0]
        e_inf = [st.report_inf.e_p for st in stages]
        running = np.minimum.accumulate(e_inf)
        assert all(b <= a + 1e-15 for a, b in zip(running, running[1:]))
        for st in stages:
            assert isinstance(st.result, MinimizeResult)
            assert st.wall_ms >= 0.0

    def test_warm_start_iteration_report(self):
        # statistical comparison, reported rather than asserted hard
        g, setup, model = small_problem(noise=0.3)
        opts = OptimOptions(max_iters=400, grad_tol=1e-5)
        sched = ContinuationSchedule(p_list=(2.0, 4.0, 8.0))
        warm = run_continuation(ControlVector.zeros(g), setup, model, sched, opts)
        cold = run_continuation(ControlVector.zeros(g), setup, model,
                                ContinuationSchedule(p_list=sched.p_list,
                                                     warm_start=False), opts)
        warm_total = sum(st.result.iterations for st in warm)
        cold_total = sum(st.result.iterations for st in cold)
        print(f"warm-start iterations {warm_total} vs cold {cold_total}")
        assert warm_total > 0 and cold_total > 0
