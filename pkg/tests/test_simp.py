"""FEA solver and SIMP optimizer against quadrature / dense-algebra oracles."""

import numpy as np
import pytest

from topogan import simp

from conftest import rel_err


# --- independent oracles ------------------------------------------------------

def element_stiffness_gauss(nu: float) -> np.ndarray:
    """2x2 Gauss integration of B^T D B over a unit plane-stress quad,
    nodes counterclockwise from the origin: (0,0),(1,0),(1,1),(0,1)."""
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    d_mat = 1.0 / (1 - nu ** 2) * np.array([
        [1.0, nu, 0.0],
        [nu, 1.0, 0.0],
        [0.0, 0.0, (1 - nu) / 2],
    ])
    gp = [-1 / np.sqrt(3), 1 / np.sqrt(3)]
    ke = np.zeros((8, 8))
    for xi in gp:
        for eta in gp:
            dshape = 0.25 * np.array([
                [-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
                [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)],
            ])
            jac = dshape @ nodes
            dxy = np.linalg.solve(jac, dshape)
            b_mat = np.zeros((3, 8))
            for a in range(4):
                b_mat[0, 2 * a] = dxy[0, a]
                b_mat[1, 2 * a + 1] = dxy[1, a]
                b_mat[2, 2 * a] = dxy[1, a]
                b_mat[2, 2 * a + 1] = dxy[0, a]
            ke += b_mat.T @ d_mat @ b_mat * np.linalg.det(jac)
    return ke


def dense_solve_compliance(domain, material, bcs, rho):
    """Assemble the full dense stiffness matrix and solve directly."""
    ke = simp.element_stiffness(material.nu)
    edof = simp.element_dof_map(domain)
    scale = material.stiffness_of(np.asarray(rho)).ravel()
    k_full = np.zeros((domain.ndof, domain.ndof))
    for e in range(domain.nel):
        idx = edof[e]
        k_full[np.ix_(idx, idx)] += scale[e] * ke
    free = np.setdiff1d(np.arange(domain.ndof), bcs.fixed_dofs)
    f = bcs.force_vector(domain.ndof)
    u_free = np.linalg.solve(k_full[np.ix_(free, free)], f[free])
    u = np.zeros(domain.ndof)
    u[free] = u_free
    return float(f @ u), u


def filter_loops(rho, rmin):
    """Direct double-loop weighted average with conic weights."""
    nelx, nely = rho.shape
    out = np.zeros_like(rho)
    for i in range(nelx):
        for j in range(nely):
            total = weight_sum = 0.0
            for a in range(nelx):
                for b in range(nely):
                    w = rmin - np.hypot(i - a, j - b)
                    if w > 0:
                        total += w * rho[a, b]
                        weight_sum += w
            out[i, j] = total / weight_sum
    return out


# --- boundary conditions ---------------------------------------------------------

def test_cantilever_bcs_2x2_by_hand():
    # node grid 3x3, node (ix,iy) = 3*ix + iy; left edge nodes 0,1,2
    dom = simp.Domain2D(2, 2)
    bcs = simp.cantilever_bcs(dom)
    np.testing.assert_array_equal(bcs.fixed_dofs, [0, 1, 2, 3, 4, 5])
    assert dom.node(2, 2) == 8
    np.testing.assert_array_equal(bcs.load_dofs, [2 * 8 + 1])
    np.testing.assert_array_equal(bcs.load_values, [-1.0])


def test_cantilever_bcs_1x1():
    dom = simp.Domain2D(1, 1)
    bcs = simp.cantilever_bcs(dom)
    assert bcs.fixed_dofs.size == 4
    assert bcs.load_dofs[0] == 2 * dom.node(1, 1) + 1


@pytest.mark.parametrize("nelx,nely", [(n, m) for n in range(1, 9) for m in range(1, 9)])
def test_cantilever_fixed_and_load_disjoint(nelx, nely):
    bcs = simp.cantilever_bcs(simp.Domain2D(nelx, nely))
    assert np.intersect1d(bcs.fixed_dofs, bcs.load_dofs).size == 0


def test_bcs_reject_too_few_fixed_dofs():
    with pytest.raises(ValueError, match="fixed"):
        simp.BoundaryConditions(fixed_dofs=np.array([0, 1]),
                                load_dofs=np.array([5]), load_values=np.array([1.0]))


# --- element stiffness -------------------------------------------------------------

def test_element_stiffness_symmetric():
    ke = simp.element_stiffness(0.3)
    assert np.abs(ke - ke.T).max() < 1e-14


def test_element_stiffness_rigid_translation():
    ke = simp.element_stiffness(0.25)
    np.testing.assert_allclose(ke @ np.array([1, 0, 1, 0, 1, 0, 1, 0], float),
                               0.0, atol=1e-12)
    np.testing.assert_allclose(ke @ np.array([0, 1, 0, 1, 0, 1, 0, 1], float),
                               0.0, atol=1e-12)


def test_element_stiffness_three_rigid_modes():
    eigs = np.sort(np.linalg.eigvalsh(simp.element_stiffness(0.3)))
    assert np.abs(eigs[:3]).max() < 1e-12
    assert eigs[3] > 1e-3


@pytest.mark.parametrize("nu", [0.2, 0.3, 0.4, 0.5])
def test_element_stiffness_matches_gauss_quadrature(nu):
    ke = simp.element_stiffness(nu)
    np.testing.assert_allclose(ke, element_stiffness_gauss(nu), atol=1e-10)


def test_element_stiffness_rejects_bad_nu():
    with pytest.raises(ValueError):
        simp.element_stiffness(0.0)
    with pytest.raises(ValueError):
        simp.element_stiffness(0.6)


# --- equilibrium -----------------------------------------------------------------

def test_solve_1x1_matches_dense_oracle():
    dom = simp.Domain2D(1, 1)
    mat = simp.MaterialParams(nu=0.3)
    bcs = simp.cantilever_bcs(dom)
    rho = np.ones((1, 1))
    sol = simp.solve_equilibrium(dom, mat, bcs, rho)
    c_ref, u_ref = dense_solve_compliance(dom, mat, bcs, rho)
    assert abs(sol.compliance - c_ref) / c_ref < 1e-12
    np.testing.assert_allclose(sol.u, u_ref, atol=1e-12)


def test_compliance_scales_inversely_with_density():
    # with emin = 0, K(s*rho) = s*K(rho) at penal=1, so C scales by 1/s
    dom = simp.Domain2D(4, 2)
    mat = simp.MaterialParams(nu=0.3, emin=1e-300, penal=1.0)
    bcs = simp.cantilever_bcs(dom)
    base = np.full((4, 2), 0.4)
    c1 = simp.compliance_of(dom, mat, bcs, base)
    c2 = simp.compliance_of(dom, mat, bcs, 2.0 * base)
    assert abs(c2 - c1 / 2.0) / c1 < 1e-9


def test_compliance_work_identity(rng):
    dom = simp.Domain2D(5, 3)
    mat = simp.MaterialParams(nu=0.4)
    bcs = simp.cantilever_bcs(dom)
    rho = rng.uniform(0.2, 1.0, size=(5, 3))
    sol = simp.solve_equilibrium(dom, mat, bcs, rho)
    work = float(bcs.force_vector(dom.ndof) @ sol.u)
    assert abs(sol.compliance - work) / abs(work) < 1e-10


def test_equilibrium_residual_invariant(rng):
    dom = simp.Domain2D(8, 4)
    mat = simp.MaterialParams(nu=0.3)
    bcs = simp.cantilever_bcs(dom)
    rho = rng.uniform(0.05, 1.0, size=(8, 4))
    sol = simp.solve_equilibrium(dom, mat, bcs, rho)
    # reassemble and check the residual independently
    ke = simp.element_stiffness(mat.nu)
    edof = simp.element_dof_map(dom)
    scale = mat.stiffness_of(rho).ravel()
    k_full = np.zeros((dom.ndof, dom.ndof))
    for e in range(dom.nel):
        idx = edof[e]
        k_full[np.ix_(idx, idx)] += scale[e] * ke
    f = bcs.force_vector(dom.ndof)
    free = np.setdiff1d(np.arange(dom.ndof), bcs.fixed_dofs)
    residual = np.abs(k_full[np.ix_(free, free)] @ sol.u[free] - f[free]).max()
    assert residual / np.abs(f).max() < 1e-8


def test_reduced_stiffness_is_positive_definite(rng):
    dom = simp.Domain2D(4, 3)
    mat = simp.MaterialParams(nu=0.3)
    bcs = simp.cantilever_bcs(dom)
    rho = rng.uniform(0.1, 1.0, size=(4, 3))
    ke = simp.element_stiffness(mat.nu)
    edof = simp.element_dof_map(dom)
    scale = mat.stiffness_of(rho).ravel()
    k_full = np.zeros((dom.ndof, dom.ndof))
    for e in range(dom.nel):
        idx = edof[e]
        k_full[np.ix_(idx, idx)] += scale[e] * ke
    free = np.setdiff1d(np.arange(dom.ndof), bcs.fixed_dofs)
    np.linalg.cholesky(k_full[np.ix_(free, free)])  # raises if not SPD


def test_cg_matches_direct(rng):
    dom = simp.Domain2D(6, 4)
    mat = simp.MaterialParams(nu=0.3)
    bcs = simp.cantilever_bcs(dom)
    rho = rng.uniform(0.3, 1.0, size=(6, 4))
    c_direct = simp.compliance_of(dom, mat, bcs, rho, method="direct")
    c_cg = simp.compliance_of(dom, mat, bcs, rho, method="cg")
    assert abs(c_direct - c_cg) / c_direct < 1e-8


def test_singular_system_reports_insufficient_constraints():
    dom = simp.Domain2D(2, 2)
    mat = simp.MaterialParams(nu=0.3)
    # fix only x-components along the left edge: vertical translation stays free
    bcs = simp.BoundaryConditions(fixed_dofs=np.array([0, 2, 4]),
                                  load_dofs=np.array([17]),
                                  load_values=np.array([-1.0]))
    with pytest.raises(simp.SingularSystemError, match="constraints"):
        simp.solve_equilibrium(dom, mat, bcs, np.ones((2, 2)))


# --- sensitivities ------------------------------------------------------------------

def test_sensitivities_match_finite_differences_4x3(rng):
    dom = simp.Domain2D(4, 3)
    mat = simp.MaterialParams(nu=0.3)
    bcs = simp.cantilever_bcs(dom)
    xphys = rng.uniform(0.2, 0.9, size=(4, 3))
    _, dc = simp.compliance_sensitivities(dom, mat, bcs, xphys)
    h = 1e-6
    worst = 0.0
    for i in range(4):
        for j in range(3):
            xp = xphys.copy()
            xp[i, j] += h
            xm = xphys.copy()
            xm[i, j] -= h
            fd = (simp.compliance_of(dom, mat, bcs, xp)
                  - simp.compliance_of(dom, mat, bcs, xm)) / (2 * h)
            worst = max(worst, abs(fd - dc[i, j]) / max(abs(fd), 1e-12))
    assert worst < 1e-5


# --- density filter -----------------------------------------------------------------

def test_filter_uniform_field_unchanged():
    filt = simp.DensityFilter(simp.Domain2D(6, 5), rmin=2.4)
    rho = np.full((6, 5), 0.37)
    np.testing.assert_allclose(filt.apply(rho), rho, atol=1e-12)


def test_filter_rmin_1_is_identity(rng):
    filt = simp.DensityFilter(simp.Domain2D(5, 4), rmin=1.0)
    rho = rng.uniform(size=(5, 4))
    np.testing.assert_allclose(filt.apply(rho), rho, atol=1e-15)


def test_filter_spike_matches_double_loop_oracle():
    dom = simp.Domain2D(5, 5)
    filt = simp.DensityFilter(dom, rmin=2.4)
    rho = np.zeros((5, 5))
    rho[2, 2] = 1.0
    np.testing.assert_allclose(filt.apply(rho), filter_loops(rho, 2.4), atol=1e-12)


def test_filter_random_matches_double_loop_oracle(rng):
    dom = simp.Domain2D(6, 4)
    filt = simp.DensityFilter(dom, rmin=1.8)
    rho = rng.uniform(size=(6, 4))
    np.testing.assert_allclose(filt.apply(rho), filter_loops(rho, 1.8), atol=1e-12)


def test_filter_rows_sum_to_one():
    filt = simp.DensityFilter(simp.Domain2D(7, 3), rmin=2.4)
    np.testing.assert_allclose(filt.apply(np.ones((7, 3))), 1.0, atol=1e-12)


def test_filter_preserves_interior_mean(rng):
    # constant plus a perturbation whose support stays far enough from the
    # boundary that every touched row has a full symmetric neighborhood
    dom = simp.Domain2D(16, 12)
    rmin = 2.4
    filt = simp.DensityFilter(dom, rmin)
    margin = 2 * int(np.ceil(rmin))
    rho = np.full((16, 12), 0.5)
    inner = rng.uniform(-0.3, 0.3, size=(16 - 2 * margin, 12 - 2 * margin))
    rho[margin:-margin, margin:-margin] += inner
    assert abs(filt.apply(rho).mean() - rho.mean()) < 1e-12


def test_filter_stays_in_unit_interval(rng):
    filt = simp.DensityFilter(simp.Domain2D(9, 6), rmin=3.1)
    rho = (rng.uniform(size=(9, 6)) > 0.5).astype(float)
    out = filt.apply(rho)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_filter_adjoint_is_transpose(rng):
    # <apply(x), y> == <x, adjoint(y)> for the normalized filter pair
    dom = simp.Domain2D(6, 5)
    filt = simp.DensityFilter(dom, rmin=2.0)
    x = rng.uniform(size=(6, 5))
    y = rng.normal(size=(6, 5))
    lhs = float((filt.apply(x) * y).sum())
    rhs = float((x * filt.adjoint(y)).sum())
    assert abs(lhs - rhs) < 1e-10


# --- OC update --------------------------------------------------------------------

def test_oc_uniform_sensitivities_stay_uniform():
    rho = np.full((4, 4), 0.5)
    sens = np.full((4, 4), -2.0)
    out = simp.oc_update(rho, sens, vstar=0.5)
    np.testing.assert_allclose(out, 0.5, atol=1e-9)


def test_oc_mean_hits_target(rng):
    for _ in range(5):
        rho = rng.uniform(0.3, 0.7, size=(6, 6))
        sens = -rng.uniform(0.1, 3.0, size=(6, 6))
        out = simp.oc_update(rho, sens, vstar=0.5)
        assert abs(out.mean() - 0.5) < 1e-4
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_oc_two_element_bisection_oracle():
    # scalar bisection by hand: x_e = clip(rho_e * sqrt(-s_e / lmid), bounds)
    rho = np.array([[0.5], [0.5]])
    sens = np.array([[-2.0], [-1.0]])
    out = simp.oc_update(rho, sens, vstar=0.5, move=0.2)

    def mean_at(lmid):
        x = np.clip(0.5 * np.sqrt(-sens / lmid), 0.3, 0.7)
        return x.mean()

    lo, hi = 0.0, 1e9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_at(mid) > 0.5:
            lo = mid
        else:
            hi = mid
    expected = np.clip(0.5 * np.sqrt(-sens / (0.5 * (lo + hi))), 0.3, 0.7)
    np.testing.assert_allclose(out, expected, atol=1e-6)
    assert abs(out.mean() - 0.5) < 1e-4


def test_oc_rejects_positive_sensitivities():
    with pytest.raises(ValueError, match="non-positive"):
        simp.oc_update(np.full((2, 2), 0.5), np.full((2, 2), 0.1), vstar=0.5)


# --- optimize ----------------------------------------------------------------------

def test_optimize_vstar_one_immediate_all_solid():
    dom = simp.Domain2D(8, 4)
    result = simp.optimize(dom, simp.MaterialParams(nu=0.3),
                           simp.cantilever_bcs(dom), vstar=1.0, rmin=2.0)
    assert result.converged
    assert result.n_updates <= 2
    np.testing.assert_allclose(result.xphys, 1.0, atol=1e-12)


def test_optimize_rejects_bad_vstar():
    dom = simp.Domain2D(4, 2)
    with pytest.raises(ValueError):
        simp.optimize(dom, simp.MaterialParams(nu=0.3), simp.cantilever_bcs(dom),
                      vstar=0.0)


@pytest.fixture(scope="module")
def cantilever_60x20():
    dom = simp.Domain2D(60, 20)
    mat = simp.MaterialParams(nu=0.3)
    bcs = simp.cantilever_bcs(dom)
    return dom, mat, bcs, simp.optimize(dom, mat, bcs, vstar=0.5, rmin=2.4)


def test_optimize_60x20_improves_and_meets_volume(cantilever_60x20):
    _, _, _, result = cantilever_60x20
    assert result.converged
    assert result.n_updates <= 200
    assert abs(result.xphys.mean() - 0.5) < 1e-4
    assert result.compliance_history[-1] < result.compliance_history[0]


def test_optimize_60x20_compliance_settles(cantilever_60x20):
    _, _, _, result = cantilever_60x20
    tail = result.compliance_history[-50:]
    upticks = np.diff(tail) / tail[:-1]
    assert upticks.max() < 0.01  # oscillation within 1%


def test_optimize_deterministic(cantilever_60x20):
    dom, mat, bcs, result = cantilever_60x20
    rerun = simp.optimize(dom, mat, bcs, vstar=0.5, rmin=2.4)
    assert np.array_equal(result.xphys, rerun.xphys)


def test_compliance_of_consistent_with_optimize(cantilever_60x20):
    dom, mat, bcs, result = cantilever_60x20
    c = simp.compliance_of(dom, mat, bcs, result.xphys)
    assert abs(c - result.compliance_history[-1]) / c < 1e-12


def test_compliance_of_all_void_finite():
    dom = simp.Domain2D(4, 2)
    mat = simp.MaterialParams(nu=0.3)
    c = simp.compliance_of(dom, mat, simp.cantilever_bcs(dom), np.zeros((4, 2)))
    assert np.isfinite(c)
    assert c > 1e6  # emin keeps it finite but enormous


def test_compliance_of_2x1_matches_dense_oracle():
    dom = simp.Domain2D(2, 1)
    mat = simp.MaterialParams(nu=0.35)
    bcs = simp.cantilever_bcs(dom)
    rho = np.array([[0.8], [0.3]])
    c = simp.compliance_of(dom, mat, bcs, rho)
    c_ref, _ = dense_solve_compliance(dom, mat, bcs, rho)
    assert abs(c - c_ref) / c_ref < 1e-12


def test_density_validation():
    dom = simp.Domain2D(2, 2)
    mat = simp.MaterialParams(nu=0.3)
    bcs = simp.cantilever_bcs(dom)
    with pytest.raises(ValueError, match="outside"):
        simp.compliance_of(dom, mat, bcs, np.full((2, 2), 1.5))
    with pytest.raises(ValueError, match="shape"):
        simp.compliance_of(dom, mat, bcs, np.ones((3, 2)))
