import numpy as np
import pytest

from pdenmpc.bench import BenchConfig, HeatBench, HeatPlateParams
from pdenmpc.coefficients import ConstantCoefficient, GeneralCoefficient, ZERO
from pdenmpc.costs import CallableCost, NoConstraints
from pdenmpc.lower import StageSolveConfig
from pdenmpc.ocp import OcpProblem, Trajectory, default_initial_trajectory
from pdenmpc.pde import PointData
from pdenmpc.upper import UpperMethod, solve as upper_solve


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the JIT kernels once so timed tests see steady-state speed."""
    params = HeatPlateParams()
    cfg = BenchConfig(grid_points=4, actuator_axes=(1, 2), n_stages=2,
                      horizon=10.0)
    bench = HeatBench(params, cfg)
    prob = bench.make_problem(bench.x0_ambient, 0.0)
    traj = default_initial_trajectory(prob)
    for kind in ("jacobi", "sgs"):
        upper_solve(prob, UpperMethod(kind), traj, tol=1e9, max_iters=1,
                    cfg=StageSolveConfig())
        upper_solve(prob, UpperMethod(kind), traj, tol=0.0, max_iters=1,
                    cfg=StageSolveConfig())


@pytest.fixture(scope="session")
def heat_params():
    return HeatPlateParams()


@pytest.fixture(scope="session")
def small_bench(heat_params):
    """5x5-grid plate, 4 actuators, N = 5 at the benchmark step size."""
    cfg = BenchConfig(grid_points=5, actuator_axes=(1, 3), n_stages=5,
                      horizon=25.0)
    return HeatBench(heat_params, cfg)


@pytest.fixture(scope="session")
def tiny_bench(heat_params):
    """4x4 grid, 2 actuators, N = 4: small enough for dense oracles."""
    cfg = BenchConfig(grid_points=4, actuator_axes=(1, 2), n_stages=4,
                      horizon=20.0)
    return HeatBench(heat_params, cfg)


class LinearTestSystem:
    """Duck-typed linear dynamics f = A x + B u for oracle problems."""

    time_order = 1
    u_dependent = True   # keeps the generic (non-batched) evaluation path

    def __init__(self, A, B):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.n_x = self.A.shape[0]
        self.n_u = self.B.shape[1]
        self.n_w = self.n_x

    def eval_f(self, u, x):
        return self.A @ x + self.B @ u

    def point_data(self, u, x):
        z = np.zeros(self.n_x)
        return PointData(f=self.eval_f(u, x), g=z, jdiag=z, fgh=z,
                         psi_ww=z, psi_wg=z)

    def apply_dfdx(self, u, x, v, pd=None):
        return self.A @ v

    def apply_dfdx_T(self, u, x, v, pd=None):
        return self.A.T @ v

    def apply_dfdu(self, u, x, v, pd=None):
        return self.B @ v

    def apply_dfdu_T(self, u, x, v, pd=None):
        return self.B.T @ v

    def apply_hess_lambda(self, u, x, lam, v, block, pd=None):
        if block in ("xx", "xu"):
            return np.zeros(self.n_x) if block == "xx" else np.zeros(self.n_x)
        return np.zeros(self.n_u)

    def diag_dfdx(self, u, x, pd=None):
        return np.diag(self.A).copy()

    def dense_jacobians(self, u, x):
        return self.A.copy(), self.B.copy()

    def dense_hessian_lambda(self, u, x, lam):
        return (np.zeros((self.n_x, self.n_x)),
                np.zeros((self.n_x, self.n_u)),
                np.zeros((self.n_u, self.n_u)))


def make_lq_problem(A, B, q, r, x0, N=1, T=1.0, gamma=0.0,
                    reg_mode="fixed") -> OcpProblem:
    """Unconstrained LQ instance on the linear test system."""
    sys = LinearTestSystem(A, B)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    cost = CallableCost(
        value=lambda u, x: 0.5 * float(x @ (q * x) + u @ (r * u)),
        grad_x=lambda u, x: q * x,
        grad_u=lambda u, x: r * u,
        hess_xx=lambda u, x: np.diag(q),
        hess_uu=lambda u, x: np.diag(r),
    )
    return OcpProblem(sys=sys, N=N, T=T, cost=cost,
                      constraints=NoConstraints(), tau=1.0, gamma=gamma,
                      x0=np.asarray(x0, dtype=float), reg_mode=reg_mode)


@pytest.fixture
def scalar_lq():
    """f = u, l = x^2/2 + u^2/2, N = 1, h = 1, x0 = 1; solution by hand."""
    prob = make_lq_problem([[0.0]], [[1.0]], [1.0], [1.0], [1.0],
                           N=1, T=1.0)
    solution = Trajectory(np.array([[0.5]]), np.array([[-0.5]]),
                          np.array([[0.5]]))
    return prob, solution


def random_interior_trajectory(bench, rng, N):
    """Strictly interior iterate with sizeable costates (not a solution)."""
    n_x, n_u = bench.sys.n_x, bench.sys.n_u
    lb, ub = bench.params.u_min, bench.params.u_max
    X = bench.params.t_ambient + 150.0 * rng.random((N, n_x))
    U = lb + (ub - lb) * (0.1 + 0.8 * rng.random((N, n_u)))
    LAM = 50.0 * rng.standard_normal((N, n_x))
    return Trajectory(X, U, LAM)
