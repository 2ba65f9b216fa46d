import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_lq_problem
from pdenmpc.costs import CallableConstraints, CallableCost, NoConstraints
from pdenmpc.errors import BarrierDomainError
from pdenmpc.newton import newton_solve
from pdenmpc.ocp import (
    OcpProblem,
    Trajectory,
    default_initial_trajectory,
    evaluate_iterate,
    hamiltonian,
    kkt_residual,
    kkt_stage_residual,
    stage_jacobian,
)


def bench_point(bench, rng, spread=5.0):
    prob = bench.make_problem(bench.x0_ambient, 0.0)
    n_x, n_u = prob.n_x, prob.n_u
    x = bench.x0_ambient + spread * rng.standard_normal(n_x)
    u = 500.0 + 4 * spread * rng.standard_normal(n_u)
    lam = rng.standard_normal(n_x)
    return prob, x, u, lam


class TestHamiltonian:
    def test_unit_barrier_argument(self, scalar_lq):
        # l = 0, tau = 1, G = (u,), u = 1, lam = 0 -> H = -ln 1 = 0
        prob, _ = scalar_lq
        zero_cost = CallableCost(
            value=lambda u, x: 0.0,
            grad_x=lambda u, x: np.zeros_like(x),
            grad_u=lambda u, x: np.zeros_like(u),
            hess_xx=lambda u, x: np.zeros((1, 1)),
            hess_uu=lambda u, x: np.zeros((1, 1)),
        )
        con = CallableConstraints(
            n_g=1,
            g=lambda u, x: np.array([u[0]]),
            jac_u=lambda u, x: np.array([[1.0]]),
        )
        p2 = OcpProblem(sys=prob.sys, N=1, T=1.0, cost=zero_cost,
                        constraints=con, tau=1.0, gamma=0.0,
                        x0=np.array([1.0]))
        h = hamiltonian(p2, 0, np.array([3.0]), np.array([1.0]),
                        np.array([0.0]))
        assert h == pytest.approx(0.0, abs=1e-15)

    def test_heat_bench_direct_evaluation(self, small_bench):
        prob = small_bench.make_problem(small_bench.x0_ambient, 0.0)
        n_x, n_u = prob.n_x, prob.n_u
        x = np.full(n_x, 500.0)
        u = np.full(n_u, 500.0)
        lam = np.zeros(n_x)
        got = hamiltonian(prob, 0, x, u, lam)
        xr, ur = small_bench.reference_vectors(0.0)
        q = prob.cost.q_diag[0]
        r = prob.cost.r_diag[0]
        expect = 0.5 * (q * np.sum((x - xr) ** 2) + r * np.sum((u - ur) ** 2))
        expect += -prob.tau * 2 * n_u * np.log(200.0)
        assert got == pytest.approx(expect, rel=1e-12)

    def test_zero_constraint_raises_with_index(self, small_bench):
        prob = small_bench.make_problem(small_bench.x0_ambient, 0.0)
        u = np.full(prob.n_u, 450.0)
        u[2] = 300.0  # sits exactly on the lower bound: G_2 = 0
        with pytest.raises(BarrierDomainError) as err:
            hamiltonian(prob, 1, np.full(prob.n_x, 400.0), u,
                        np.zeros(prob.n_x))
        assert err.value.index == 2
        assert err.value.stage == 1


class TestStageResidual:
    def test_scalar_lq_closed_form(self, scalar_lq):
        prob, sol = scalar_lq
        r = kkt_stage_residual(prob, 0, prob.x0, sol.X[0], sol.U[0],
                               sol.LAM[0], np.zeros(1))
        np.testing.assert_allclose(r, 0.0, atol=1e-14)

    def test_zero_at_newton_solution(self, small_bench):
        prob = small_bench.make_problem(small_bench.x0_ambient, 0.0)
        sol, rep = newton_solve(prob, default_initial_trajectory(prob),
                                tol=1e-9, max_iters=400)
        assert rep.termination == "converged"
        resid = kkt_residual(prob, sol)
        assert resid.inf_norm() <= 1e-8

    def test_current_iterate_mode_drops_gamma_term(self, small_bench):
        rng = np.random.default_rng(0)
        prob, x, u, lam = bench_point(small_bench, rng)
        prob.u_reg_ref[:] = u  # what the solver does in current mode
        r_cur = kkt_stage_residual(prob, 0, prob.x0, x, u, lam,
                                   np.zeros(prob.n_x))
        prob0 = small_bench.make_problem(small_bench.x0_ambient, 0.0,
                                         gamma=0.0)
        r_0 = kkt_stage_residual(prob0, 0, prob0.x0, x, u, lam,
                                 np.zeros(prob.n_x))
        np.testing.assert_array_equal(r_cur, r_0)

    def test_coupling_blocks_are_identities(self, tiny_bench):
        rng = np.random.default_rng(1)
        prob, x, u, lam = bench_point(tiny_bench, rng)
        n_x = prob.n_x
        x_prev = tiny_bench.x0_ambient.copy()
        lam_next = rng.standard_normal(n_x)
        base = kkt_stage_residual(prob, 0, x_prev, x, u, lam, lam_next)
        for j in rng.choice(n_x, size=4, replace=False):
            e = np.zeros(n_x)
            e[j] = 1e-4
            dp = (kkt_stage_residual(prob, 0, x_prev + e, x, u, lam, lam_next)
                  - base) / 1e-4
            expect = np.zeros_like(dp)
            expect[j] = 1.0  # state-equation rows read x_{i-1} through I
            np.testing.assert_allclose(dp, expect, atol=1e-9)
            dl = (kkt_stage_residual(prob, 0, x_prev, x, u, lam, lam_next + e)
                  - base) / 1e-4
            expect = np.zeros_like(dl)
            expect[n_x + prob.n_u + j] = 1.0   # costate rows read lam_{i+1}
            np.testing.assert_allclose(dl, expect, atol=1e-9)

    @given(tau=st.floats(min_value=0.1, max_value=50.0),
           factor=st.floats(min_value=1.05, max_value=4.0))
    @settings(max_examples=20, deadline=None)
    def test_barrier_monotone_in_tau(self, small_bench, tau, factor):
        prob = small_bench.make_problem(small_bench.x0_ambient, 0.0)
        u = np.full(prob.n_u, 420.0)
        x = np.full(prob.n_x, 390.0)
        phi1 = prob.constraints.barrier_value(u, x, tau)
        phi2 = prob.constraints.barrier_value(u, x, tau * factor)
        # G > 1 everywhere here, so the barrier term is negative and scales with tau
        assert phi2 == pytest.approx(factor * phi1, rel=1e-12)
        assert phi2 < phi1 < 0


class TestStageJacobian:
    def test_dense_matches_finite_differences(self, tiny_bench):
        rng = np.random.default_rng(2)
        prob, x, u, lam = bench_point(tiny_bench, rng)
        blk = stage_jacobian(prob, 1, u, x, lam)
        D = blk.dense()
        n_x, n_u = prob.n_x, prob.n_u
        s0 = np.concatenate([x, u, lam])
        x_prev = tiny_bench.x0_ambient.copy()
        lam_next = np.zeros(n_x)

        def kres(s):
            return kkt_stage_residual(prob, 1, x_prev, s[:n_x],
                                      s[n_x:n_x + n_u], s[n_x + n_u:],
                                      lam_next)

        m = D.shape[0]
        fd = np.empty_like(D)
        for j in range(m):
            e = np.zeros(m)
            step = 1e-6 * (1 + abs(s0[j]))
            e[j] = step
            fd[:, j] = (kres(s0 + e) - kres(s0 - e)) / (2 * step)
        assert np.max(np.abs(D - fd)) / (1 + np.max(np.abs(fd))) <= 1e-5

    def test_gamma_shifts_uu_diagonal_exactly(self, tiny_bench):
        rng = np.random.default_rng(3)
        prob, x, u, lam = bench_point(tiny_bench, rng)
        blk = stage_jacobian(prob, 0, u, x, lam)
        d0 = blk.dense(gamma=0.0)
        d5 = blk.dense(gamma=0.5)
        diff = d5 - d0
        n_x, n_u = prob.n_x, prob.n_u
        uu = np.s_[n_x:n_x + n_u, n_x:n_x + n_u]
        np.testing.assert_allclose(diff[uu], 0.5 * np.eye(n_u), rtol=0,
                                   atol=1e-15)
        diff[uu] = 0.0
        assert np.all(diff == 0.0)  # gamma touches nothing else, bitwise

    def test_lq_jacobian_constant_in_iterate(self):
        prob = make_lq_problem(np.diag([-0.5, 0.2]), [[1.0], [0.3]],
                               [1.0, 2.0], [0.5], [1.0, -1.0], N=3, T=3.0)
        rng = np.random.default_rng(4)
        blocks = []
        for _ in range(2):
            x = rng.standard_normal(2)
            u = rng.standard_normal(1)
            lam = rng.standard_normal(2)
            blocks.append(stage_jacobian(prob, 0, u, x, lam).dense())
        np.testing.assert_array_equal(blocks[0], blocks[1])

    def test_hessian_block_symmetry(self, tiny_bench):
        rng = np.random.default_rng(5)
        prob, x, u, lam = bench_point(tiny_bench, rng)
        blk = stage_jacobian(prob, 0, u, x, lam)
        hxx, hxu, huu = blk.hess_blocks_dense()
        assert np.max(np.abs(hxx - hxx.T)) <= 1e-12
        assert np.max(np.abs(huu - huu.T)) <= 1e-12

    def test_matrix_free_apply_matches_dense(self, tiny_bench):
        rng = np.random.default_rng(6)
        prob, x, u, lam = bench_point(tiny_bench, rng)
        blk = stage_jacobian(prob, 0, u, x, lam)
        D = blk.dense()
        for _ in range(5):
            v = rng.standard_normal(D.shape[0])
            np.testing.assert_allclose(blk.apply(v), D @ v, rtol=0,
                                       atol=1e-12 * (1 + np.max(np.abs(D @ v))))

    def test_split_reassembles_exactly(self, tiny_bench):
        rng = np.random.default_rng(7)
        prob, x, u, lam = bench_point(tiny_bench, rng)
        blk = stage_jacobian(prob, 0, u, x, lam)
        Dbar, Dtilde = blk.bar_tilde_split()
        np.testing.assert_array_equal(Dbar + prob.h * Dtilde, blk.dense())
        # the split part carries only the input-coupling blocks
        n_x, n_u = prob.n_x, prob.n_u
        mask = np.zeros_like(Dtilde, dtype=bool)
        mask[:n_x, n_x:n_x + n_u] = True
        mask[n_x:n_x + n_u, n_x + n_u:] = True
        assert np.all(Dtilde[~mask] == 0.0)


class TestIterateEvaluation:
    def test_fast_path_matches_generic(self, small_bench):
        rng = np.random.default_rng(8)
        prob = small_bench.make_problem(small_bench.x0_ambient, 0.0)
        N, n_x, n_u = prob.N, prob.n_x, prob.n_u
        traj = Trajectory(
            small_bench.x0_ambient + 10 * rng.standard_normal((N, n_x)),
            500.0 + 30 * rng.standard_normal((N, n_u)),
            rng.standard_normal((N, n_x)),
        )
        itd = evaluate_iterate(prob, traj)
        assert itd.fast is not None
        resid_generic = kkt_residual(prob, traj)
        np.testing.assert_allclose(itd.resid.as_matrix(),
                                   resid_generic.as_matrix(),
                                   rtol=1e-13, atol=1e-11)

    def test_dense_stage_fast_matches_reference(self, small_bench):
        rng = np.random.default_rng(9)
        prob = small_bench.make_problem(small_bench.x0_ambient, 0.0)
        traj = default_initial_trajectory(prob)
        traj.X += 5 * rng.standard_normal(traj.X.shape)
        traj.LAM += rng.standard_normal(traj.LAM.shape)
        itd = evaluate_iterate(prob, traj)
        for i in (0, prob.N - 1):
            np.testing.assert_allclose(itd.dense_stage(i),
                                       itd.block(i).dense(), atol=1e-12)
            np.testing.assert_allclose(
                itd.dense_stage(i, include_input_coupling=False, gamma=0.0),
                itd.block(i).dense(include_input_coupling=False, gamma=0.0),
                atol=1e-12)
