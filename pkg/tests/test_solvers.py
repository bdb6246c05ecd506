import numpy as np
import pytest
import scipy.sparse as sp

from westervelt_mh import fem
from westervelt_mh.mesh import generate_disk_mesh
from westervelt_mh.solvers import (BreakdownError, LinearSolver, SolverError, SolverOptions, bicgstab,
                                   ilu0, prepare, solve)


@pytest.fixture(scope="module")
def op(water_module):
    mesh = generate_disk_mesh(0.05, (0, 0), 0.003)
    return fem.build_helmholtz(mesh, water_module, 1)


@pytest.fixture(scope="module")
def water_module():
    from westervelt_mh.medium import MediumParams
    return MediumParams.uniform(1480, 1e-9, 5, rho0=1000, omega=2 * np.pi * 1e5)


@pytest.mark.parametrize("opts", [
    SolverOptions(),
    SolverOptions(method="direct"),
    SolverOptions(method="dense"),
    SolverOptions(preconditioner="diagonal", fallback=False, max_iterations=20000),
])
def test_recovers_known_solution(op, opts):
    rng = np.random.default_rng(3)
    n = op.shape[0]
    x_known = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    res = solve(op, op.matrix @ x_known, opts)
    assert np.linalg.norm(res.x - x_known) <= 1e-8 * np.linalg.norm(x_known)
    # residual is recomputed, not taken from the iteration
    b = op.matrix @ x_known
    assert res.residual == pytest.approx(np.linalg.norm(b - op.matrix @ res.x) / np.linalg.norm(b), rel=1e-6)
    assert res.residual <= opts.tol


def test_zero_rhs(op):
    res = solve(op, np.zeros(op.shape[0], complex))
    assert res.iterations == 0 and not np.any(res.x)


def test_diagonal_system_fast():
    d = np.linspace(1, 3, 50) * (1 + 0.5j)
    A = sp.diags(d).tocsr()
    for pc in ("diagonal", "ilu0"):
        res = LinearSolver(A, SolverOptions(preconditioner=pc)).solve(np.ones(50))
        assert res.iterations <= 2
        np.testing.assert_allclose(res.x, 1 / d, rtol=1e-10)


def test_ilu0_exact_for_tridiagonal():
    n = 30
    A = sp.diags([-1.0, 2.5 + 0.1j, -1.2], [-1, 0, 1], shape=(n, n)).tocsr()
    L, U = ilu0(A)
    LU = (sp.identity(n) + L) @ U
    assert abs(LU - A).max() <= 1e-13


def test_ilu0_matches_on_pattern(op):
    L, U = ilu0(op.matrix)
    n = op.shape[0]
    R = ((sp.identity(n) + L) @ U - op.matrix).tocsr()
    pattern = (abs(op.matrix) > 0).astype(float)
    on_pattern = R.multiply(pattern)
    assert abs(on_pattern).max() <= 1e-9 * abs(op.matrix).max()


def test_shifted_preconditioner_converges_where_plain_ilu_stalls():
    from westervelt_mh.medium import MediumParams
    mesh = generate_disk_mesh(0.1, (0, 0), 0.004)
    med = MediumParams.uniform(1480, 1e-9, 5, rho0=1000, omega=2 * np.pi * 1e5)
    A = fem.build_helmholtz(mesh, med, 1)
    b = np.zeros(mesh.n_vertices, complex)
    b[0] = 1.0
    res = prepare(A, SolverOptions(fallback=False)).solve(b)
    assert res.residual <= 1e-10
    with pytest.raises(SolverError):
        prepare(A, SolverOptions(shift=0.0, fallback=False, max_iterations=300)).solve(b)


def test_non_convergence_carries_best_iterate(op):
    rng = np.random.default_rng(0)
    b = rng.standard_normal(op.shape[0]) + 0j
    with pytest.raises(SolverError) as err:
        LinearSolver(op.matrix, SolverOptions(preconditioner="none", max_iterations=3, fallback=False)).solve(b)
    assert err.value.x is not None and err.value.x.shape == b.shape
    assert 0 < err.value.residual < np.inf


def test_fallback_to_direct(op):
    rng = np.random.default_rng(1)
    b = rng.standard_normal(op.shape[0]) + 0j
    res = LinearSolver(op.matrix, SolverOptions(preconditioner="none", max_iterations=3)).solve(b)
    assert res.residual <= 1e-10


def test_breakdown_signalled():
    # r_hat orthogonal to A r: the first step direction vanishes under the shadow residual
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex))
    with pytest.raises(BreakdownError):
        bicgstab(A, np.array([1.0, 0.0], dtype=complex), tol=1e-12, maxiter=10)


def test_singular_direct():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex))
    with pytest.raises(SolverError):
        LinearSolver(A, SolverOptions(method="direct")).solve(np.array([1.0, 0.0]))


@pytest.mark.parametrize("kw", [dict(method="cg"), dict(tol=0.0), dict(tol=1.0), dict(max_iterations=0),
                                dict(preconditioner="amg"), dict(shift=-1.0)])
def test_options_validated(kw):
    with pytest.raises(ValueError):
        SolverOptions(**kw)


def test_dense_limit():
    with pytest.raises(ValueError):
        LinearSolver(sp.identity(2001, format="csr"), SolverOptions(method="dense"))
