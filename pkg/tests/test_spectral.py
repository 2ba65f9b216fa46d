import numpy as np
import pytest

from conftest import make_lq_problem, random_interior_trajectory
from pdenmpc.bench import BenchConfig, HeatBench
from pdenmpc.newton import newton_solve
from pdenmpc.ocp import default_initial_trajectory
from pdenmpc.spectral import (
    IterationMatrixOperator,
    convergence_factor,
    verify_gs_squared,
    verify_lemma_nilpotent,
)


@pytest.fixture(scope="module")
def tiny_solution(heat_params):
    cfg = BenchConfig(grid_points=4, actuator_axes=(1, 2), n_stages=4,
                      horizon=20.0)
    bench = HeatBench(heat_params, cfg)
    prob = bench.make_problem(bench.x0_ambient, 0.0)
    sol, rep = newton_solve(prob, default_initial_trajectory(prob),
                            tol=1e-9, max_iters=600)
    assert rep.termination == "converged"
    return bench, prob, sol


class TestOperator:
    def test_linearity(self, tiny_solution):
        _, prob, sol = tiny_solution
        rng = np.random.default_rng(0)
        for kind in ("jacobi", "fgs", "bgs", "sor", "sgs"):
            op = IterationMatrixOperator(prob, sol, kind=kind, omega=1.3)
            v = rng.standard_normal((prob.N, prob.stage_dim))
            w = rng.standard_normal((prob.N, prob.stage_dim))
            a, b = 0.7, -1.9
            lhs = op.apply(a * v + b * w)
            rhs = a * op.apply(v) + b * op.apply(w)
            assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))

    def test_apply_matches_dense_matrix(self, tiny_solution):
        _, prob, sol = tiny_solution
        rng = np.random.default_rng(1)
        for kind in ("jacobi", "fgs", "bgs", "sor", "sgs"):
            op = IterationMatrixOperator(prob, sol, kind=kind, omega=1.2)
            M = op.dense_matrix()
            v = rng.standard_normal(op.dim)
            got = op.apply_flat(v)
            np.testing.assert_allclose(got, M @ v, rtol=0,
                                       atol=1e-10 * (1 + np.max(np.abs(M @ v))))

    def test_multivector_apply(self, tiny_solution):
        _, prob, sol = tiny_solution
        rng = np.random.default_rng(2)
        op = IterationMatrixOperator(prob, sol, kind="sgs")
        V = rng.standard_normal((prob.N, prob.stage_dim, 3))
        out = op.apply(V)
        for k in range(3):
            np.testing.assert_allclose(out[..., k], op.apply(V[..., k]),
                                       atol=1e-13)


class TestConvergenceFactor:
    def test_n1_everything_is_zero(self, heat_params):
        cfg = BenchConfig(grid_points=4, actuator_axes=(1, 2), n_stages=1,
                          horizon=5.0)
        bench = HeatBench(heat_params, cfg)
        prob = bench.make_problem(bench.x0_ambient, 0.0)
        traj = default_initial_trajectory(prob)
        for kind in ("jacobi", "fgs", "bgs", "sgs"):
            op = IterationMatrixOperator(prob, traj, kind=kind)
            res = convergence_factor(op, iters=10, seeds=3,
                                     rng=np.random.default_rng(0))
            assert res.estimate == 0.0
            assert res.oracle <= 1e-14

    def test_power_matches_dense_oracle_on_lq(self):
        prob = make_lq_problem(np.diag([-0.3, 0.15]), [[1.0], [0.6]],
                               [1.0, 1.5], [0.7], [1.0, -1.0], N=3, T=1.5,
                               gamma=0.2)
        sol, rep = newton_solve(prob, default_initial_trajectory(prob),
                                tol=1e-12, max_iters=50)
        assert rep.termination == "converged"
        op = IterationMatrixOperator(prob, sol, kind="jacobi")
        res = convergence_factor(op, iters=4000, seeds=5,
                                 rng=np.random.default_rng(3))
        assert res.oracle is not None
        assert abs(res.estimate - res.oracle) <= 1e-6

    def test_estimator_tracks_oracle_on_heat(self, tiny_solution):
        _, prob, sol = tiny_solution
        for kind in ("jacobi", "fgs", "sgs"):
            op = IterationMatrixOperator(prob, sol, kind=kind)
            res = convergence_factor(op, iters=200, seeds=5,
                                     rng=np.random.default_rng(4))
            assert res.oracle is not None
            assert abs(res.estimate - res.oracle) <= 0.02 * max(res.oracle, 0.05)


class TestGsSquared:
    def test_square_law_tiny_heat(self, heat_params):
        cfg = BenchConfig(grid_points=3, actuator_axes=(1,), n_stages=3,
                          horizon=15.0)
        bench = HeatBench(heat_params, cfg)
        prob = bench.make_problem(bench.x0_ambient, 0.0)
        sol, rep = newton_solve(prob, default_initial_trajectory(prob),
                                tol=1e-9, max_iters=400)
        assert rep.termination == "converged"
        rho_j, rho_f, rho_b = verify_gs_squared(prob, sol)
        assert abs(rho_f - rho_j ** 2) <= 1e-8
        assert abs(rho_b - rho_j ** 2) <= 1e-8

    def test_square_law_at_interior_point(self, tiny_solution):
        bench, prob, _ = tiny_solution
        rng = np.random.default_rng(5)
        traj = random_interior_trajectory(bench, rng, prob.N)
        rho_j, rho_f, rho_b = verify_gs_squared(prob, traj)
        assert abs(rho_f - rho_j ** 2) <= 1e-8
        assert abs(rho_b - rho_j ** 2) <= 1e-8


class TestNilpotency:
    def test_split_matrix_annihilates_at_structural_index(self, heat_params):
        rng = np.random.default_rng(6)
        for N in (2, 3, 5):
            cfg = BenchConfig(grid_points=4, actuator_axes=(1, 2),
                              n_stages=N, horizon=5.0 * N)
            bench = HeatBench(heat_params, cfg)
            prob = bench.make_problem(bench.x0_ambient, 0.0)
            traj = random_interior_trajectory(bench, rng, N)
            amp = verify_lemma_nilpotent(prob, traj,
                                         applications=2 * N - 1, rng=rng)
            assert amp <= 1e-8
            if N >= 2:
                # one application fewer leaves mass: index is exactly 2N-1
                amp_prev = verify_lemma_nilpotent(prob, traj,
                                                  applications=2 * N - 2,
                                                  rng=rng)
                assert amp_prev > 1e-8

    def test_stage_count_applications_do_not_annihilate(self, tiny_solution):
        # the N-fold product keeps the up-then-down sweep paths alive
        _, prob, sol = tiny_solution
        amp = verify_lemma_nilpotent(prob, sol, applications=prob.N,
                                     rng=np.random.default_rng(7))
        assert amp > 1e-8

    def test_full_split_is_not_nilpotent(self, tiny_solution):
        _, prob, sol = tiny_solution
        amp = verify_lemma_nilpotent(prob, sol, applications=2 * prob.N - 1,
                                     rng=np.random.default_rng(8),
                                     use_decoupled_split=False)
        assert amp > 1e-8

    def test_n1_single_application_annihilates(self, heat_params):
        cfg = BenchConfig(grid_points=4, actuator_axes=(1, 2), n_stages=1,
                          horizon=5.0)
        bench = HeatBench(heat_params, cfg)
        prob = bench.make_problem(bench.x0_ambient, 0.0)
        traj = default_initial_trajectory(prob)
        amp = verify_lemma_nilpotent(prob, traj, applications=1,
                                     rng=np.random.default_rng(9))
        assert amp <= 1e-14


@pytest.mark.slow
class TestHorizonTrend:
    def test_jacobi_factor_grows_with_horizon(self, heat_params):
        rhos = []
        for T in (10.0, 20.0, 50.0, 100.0, 200.0):
            cfg = BenchConfig(horizon=T)
            bench = HeatBench(heat_params, cfg)
            prob = bench.make_problem(bench.x0_ambient, 0.0)
            sol, rep = newton_solve(prob, default_initial_trajectory(prob),
                                    tol=1e-3, max_iters=600)
            assert rep.termination == "converged", T
            op = IterationMatrixOperator(prob, sol, kind="jacobi")
            rhos.append(convergence_factor(
                op, iters=60, seeds=4, rng=np.random.default_rng(10)).estimate)
        assert all(rhos[k + 1] >= rhos[k] - 1e-3 for k in range(len(rhos) - 1))
        assert rhos[0] < 1.0