import numpy as np
import pytest

from conftest import make_lq_problem, random_interior_trajectory
from pdenmpc.bench import BenchConfig, HeatBench
from pdenmpc.errors import SingularStageError
from pdenmpc.lower import StageSolveConfig
from pdenmpc.newton import (
    assemble_kkt,
    elimination_fill_fraction,
    newton_solve,
    newton_step,
    solve_block_tridiagonal,
)
from pdenmpc.ocp import default_initial_trajectory, evaluate_iterate
from pdenmpc.upper import UpperMethod, _direction, solve as upper_solve


class TestNewtonStep:
    def test_multiply_back_random_instances(self, heat_params):
        rng = np.random.default_rng(0)
        for pts, acts, N in [(4, (1, 2), 3), (5, (1, 3), 6)]:
            cfg = BenchConfig(grid_points=pts, actuator_axes=acts,
                              n_stages=N, horizon=5.0 * N)
            bench = HeatBench(heat_params, cfg)
            prob = bench.make_problem(bench.x0_ambient, 0.0)
            traj = random_interior_trajectory(bench, rng, N)
            prob.u_reg_ref[:] = traj.U
            itd = evaluate_iterate(prob, traj)
            kkt = assemble_kkt(prob, traj, itd=itd)
            rhs = itd.resid.as_matrix()
            dS = solve_block_tridiagonal(kkt, rhs)
            err = np.max(np.abs(kkt.matvec(dS) - rhs))
            assert err <= 1e-9 * (1 + itd.resid.inf_norm())

    def test_lq_single_step_solves(self):
        prob = make_lq_problem(np.diag([-0.2, 0.3]), [[1.0], [0.7]],
                               [1.0, 1.0], [0.8], [2.0, -1.0], N=4, T=2.0)
        traj = default_initial_trajectory(prob)
        sol, rep = newton_solve(prob, traj, tol=1e-10, max_iters=1)
        assert rep.termination == "converged"
        assert rep.iterations == 1

    def test_n1_direction_equals_jacobi(self, heat_params):
        cfg = BenchConfig(grid_points=5, actuator_axes=(1, 3), n_stages=1,
                          horizon=5.0)
        bench = HeatBench(heat_params, cfg)
        prob = bench.make_problem(bench.x0_ambient, 0.0)
        traj = default_initial_trajectory(prob)
        dN, _ = newton_step(prob, traj)
        prob.u_reg_ref[:] = traj.U
        itd = evaluate_iterate(prob, traj)
        dJ = _direction(itd, UpperMethod("jacobi"),
                        StageSolveConfig(mode="exact"), 0)
        assert np.max(np.abs(dN - dJ)) <= 1e-12 * (1 + np.max(np.abs(dJ)))

    def test_singular_stage_is_named(self):
        # input enters neither dynamics nor cost: the stationarity row is zero
        prob = make_lq_problem([[0.0]], [[0.0]], [1.0], [0.0], [1.0],
                               N=2, T=2.0, gamma=0.0)
        traj = default_initial_trajectory(prob)
        with pytest.raises(SingularStageError):
            newton_step(prob, traj)


class TestNewtonSolve:
    def test_agreement_with_sgs(self, small_bench):
        prob = small_bench.make_problem(small_bench.x0_ambient, 0.0)
        traj = default_initial_trajectory(prob)
        sol_n, rep_n = newton_solve(prob, traj, tol=1e-8, max_iters=3000)
        sol_s, rep_s = upper_solve(prob, UpperMethod("sgs"), traj, tol=1e-8,
                                   max_iters=20000)
        assert rep_n.termination == rep_s.termination == "converged"
        scale = 1 + max(np.max(np.abs(sol_n.X)), np.max(np.abs(sol_n.U)),
                        np.max(np.abs(sol_n.LAM)))
        assert sol_n.inf_norm_diff(sol_s) / scale <= 1e-6

    def test_report_shapes(self, small_bench):
        prob = small_bench.make_problem(small_bench.x0_ambient, 0.0)
        traj = default_initial_trajectory(prob)
        sol, rep = newton_solve(prob, traj, tol=1.0, max_iters=200)
        assert rep.termination == "converged"
        assert len(rep.residual_history) == rep.iterations + 1
        assert len(rep.step_sizes) == rep.iterations
        assert all(0 < a <= 1 for a in rep.step_sizes)

    def test_elimination_fills_in(self, heat_params):
        # backward elimination densifies the updated coupling block: the
        # spatial sparsity the lower layer exploits does not survive
        bench = HeatBench(heat_params, BenchConfig())
        prob = bench.make_problem(bench.x0_ambient, 0.0)
        traj = default_initial_trajectory(prob)
        frac = elimination_fill_fraction(prob, traj)
        assert frac > 0.5
        itd = evaluate_iterate(prob, traj)
        d0 = itd.dense_stage(0)
        n_x, n_u = prob.n_x, prob.n_u
        orig = np.mean(np.abs(d0[n_x + n_u:, :n_x]) > 1e-14)
        assert orig < 0.05  # the same block starts out stencil-sparse
