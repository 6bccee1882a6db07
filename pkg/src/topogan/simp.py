"""2-D linear-elasticity FEA and modified-SIMP compliance minimization.

Structured grid of unit-square bilinear quadrilaterals (plane stress, unit
thickness). Elements are indexed x-major: element (elx, ely) is flat index
elx*nely + ely, so a density field is an (nelx, nely) array whose C-order
ravel matches the classic 88-line element ordering. Node (ix, iy) has index
(nely+1)*ix + iy with iy increasing downward; each node carries dofs
(2n, 2n+1) for its x and y displacement.

Used both to generate ground-truth optimized designs and as the physics
oracle that scores arbitrary density fields by compliance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix
from scipy.sparse.linalg import cg, splu


class SingularSystemError(RuntimeError):
    """The reduced stiffness system could not be solved."""


class OcBisectionError(RuntimeError):
    """The OC volume bisection failed to meet its tolerance."""


@dataclass(frozen=True)
class Domain2D:
    nelx: int
    nely: int

    def __post_init__(self):
        if self.nelx < 1 or self.nely < 1:
            raise ValueError(f"domain needs at least 1x1 elements, got "
                             f"{self.nelx}x{self.nely}")

    @property
    def nel(self) -> int:
        return self.nelx * self.nely

    @property
    def nnodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def ndof(self) -> int:
        return 2 * self.nnodes

    def node(self, ix: int, iy: int) -> int:
        return (self.nely + 1) * ix + iy


@dataclass(frozen=True)
class MaterialParams:
    """Modified-SIMP material: E(rho) = emin + rho^penal * (e0 - emin)."""

    nu: float
    e0: float = 1.0
    emin: float = 1e-9
    penal: float = 3.0

    def __post_init__(self):
        if not 0.2 <= self.nu <= 0.5:
            raise ValueError(f"Poisson's ratio {self.nu} outside accepted range [0.2, 0.5]")
        if not 0 < self.emin < self.e0:
            raise ValueError(f"need 0 < emin < e0, got emin={self.emin}, e0={self.e0}")
        if self.penal < 1:
            raise ValueError(f"SIMP exponent must be >= 1, got {self.penal}")

    def stiffness_of(self, rho: np.ndarray) -> np.ndarray:
        return self.emin + rho ** self.penal * (self.e0 - self.emin)


@dataclass(frozen=True)
class BoundaryConditions:
    fixed_dofs: np.ndarray
    load_dofs: np.ndarray
    load_values: np.ndarray

    def __post_init__(self):
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.intp))
        object.__setattr__(self, "fixed_dofs", fixed)
        object.__setattr__(self, "load_dofs", np.asarray(self.load_dofs, dtype=np.intp))
        object.__setattr__(self, "load_values", np.asarray(self.load_values, dtype=np.float64))
        if fixed.size < 3:
            raise ValueError(f"need at least 3 fixed dofs to remove rigid-body modes, "
                             f"got {fixed.size}")
        if np.intersect1d(fixed, self.load_dofs).size:
            raise ValueError("fixed and loaded dof sets must be disjoint")

    def force_vector(self, ndof: int) -> np.ndarray:
        f = np.zeros(ndof)
        np.add.at(f, self.load_dofs, self.load_values)
        return f


@dataclass
class FeaSolution:
    u: np.ndarray
    compliance: float
    element_energies: np.ndarray  # u_e^T KE u_e per element, unscaled by E(rho)


def cantilever_bcs(domain: Domain2D, load_magnitude: float = 1.0) -> BoundaryConditions:
    """Clamp every dof on the left edge; point load pulling the bottom-right
    corner node downward."""
    fixed = np.arange(2 * (domain.nely + 1))
    load_node = domain.node(domain.nelx, domain.nely)
    return BoundaryConditions(fixed_dofs=fixed,
                              load_dofs=np.array([2 * load_node + 1]),
                              load_values=np.array([-load_magnitude]))


def element_stiffness(nu: float) -> np.ndarray:
    """Closed-form 8x8 stiffness of a unit plane-stress bilinear quad, E=1."""
    if not 0 < nu <= 0.5:
        raise ValueError(f"Poisson's ratio out of range (0, 0.5], got {nu}")
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    idx = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return k[idx] / (1 - nu ** 2)


def element_dof_map(domain: Domain2D) -> np.ndarray:
    """Per-element global dof indices, rows in element flat order."""
    nely = domain.nely
    elx = np.repeat(np.arange(domain.nelx), nely)
    ely = np.tile(np.arange(nely), domain.nelx)
    n1 = (nely + 1) * elx + ely
    n2 = (nely + 1) * (elx + 1) + ely
    return np.column_stack([2 * n1 + 2, 2 * n1 + 3, 2 * n2 + 2, 2 * n2 + 3,
                            2 * n2, 2 * n2 + 1, 2 * n1, 2 * n1 + 1])


_ASSEMBLY_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _assembly_indices(domain: Domain2D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cached (edof, row, col) index arrays for stiffness assembly."""
    key = (domain.nelx, domain.nely)
    hit = _ASSEMBLY_CACHE.get(key)
    if hit is None:
        edof = element_dof_map(domain)
        i_idx = np.repeat(edof, 8, axis=1).ravel()
        j_idx = np.tile(edof, (1, 8)).ravel()
        hit = (edof, i_idx, j_idx)
        _ASSEMBLY_CACHE[key] = hit
    return hit


def _validate_density(domain: Domain2D, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (domain.nelx, domain.nely):
        raise ValueError(f"density field shape {rho.shape} does not match domain "
                         f"({domain.nelx}, {domain.nely})")
    if rho.min() < 0.0 or rho.max() > 1.0:
        raise ValueError(f"density values outside [0, 1]: min={rho.min()}, max={rho.max()}")
    return rho


def solve_equilibrium(domain: Domain2D, material: MaterialParams,
                      bcs: BoundaryConditions, rho: np.ndarray,
                      method: str = "auto") -> FeaSolution:
    """Solve K(rho) u = F on the free dofs and evaluate compliance.

    method: 'direct' (sparse LU), 'cg' (Jacobi-preconditioned conjugate
    gradients, tol 1e-10), or 'auto' (direct below 300k dofs).
    """
    rho = _validate_density(domain, rho)
    ke = element_stiffness(material.nu)
    edof, i_idx, j_idx = _assembly_indices(domain)
    e_scale = material.stiffness_of(rho).ravel()

    ndof = domain.ndof
    values = (e_scale[:, None] * ke.ravel()[None, :]).ravel()
    k_full = coo_matrix((values, (i_idx, j_idx)), shape=(ndof, ndof)).tocsc()

    free = np.setdiff1d(np.arange(ndof), bcs.fixed_dofs, assume_unique=False)
    f = bcs.force_vector(ndof)
    k_red: csc_matrix = k_full[free][:, free]
    f_red = f[free]

    if method == "auto":
        method = "direct" if ndof <= 300_000 else "cg"
    if method == "direct":
        try:
            lu = splu(k_red)
        except RuntimeError as exc:
            raise SingularSystemError(
                f"stiffness matrix factorization failed ({exc}); the boundary "
                "conditions leave insufficient constraints") from exc
        udiag = np.abs(lu.U.diagonal())
        if udiag.min() <= 1e-14 * udiag.max():
            raise SingularSystemError(
                "stiffness matrix is rank deficient (a rigid-body mode remains); "
                "the boundary conditions leave insufficient constraints")
        u_red = lu.solve(f_red)
        # iterative refinement: void/solid contrast reaches emin/e0 = 1e-9,
        # and one LU solve can leave a residual above the 1e-8 contract
        f_scale = np.abs(f_red).max()
        for _ in range(3):
            r = f_red - k_red @ u_red
            if np.abs(r).max() / f_scale < 1e-12:
                break
            u_red = u_red + lu.solve(r)
    elif method == "cg":
        precond = 1.0 / k_red.diagonal()
        from scipy.sparse.linalg import LinearOperator
        m_op = LinearOperator(k_red.shape, matvec=lambda r: precond * r)
        u_red, info = cg(k_red, f_red, rtol=1e-10, atol=0.0, M=m_op, maxiter=20 * ndof)
        if info != 0:
            raise SingularSystemError(
                f"conjugate gradient did not converge (info={info}); the boundary "
                "conditions may leave insufficient constraints")
    else:
        raise ValueError(f"unknown solve method {method!r}")

    f_scale = np.abs(f_red).max()
    residual = np.abs(k_red @ u_red - f_red).max() / f_scale
    # near-void fields drive ||u|| ~ 1/emin, where float64 cannot measure a
    # 1e-8 relative residual; a tight backward error certifies those solves
    backward_error = residual * f_scale / max(
        np.abs(k_red.data).max() * np.abs(u_red).max(), f_scale)
    if not np.isfinite(u_red).all() or (residual > 1e-8 and backward_error > 1e-12):
        raise SingularSystemError(
            f"equilibrium residual {residual:.3e} exceeds 1e-8; the boundary "
            "conditions leave insufficient constraints")

    u = np.zeros(ndof)
    u[free] = u_red
    ue = u[edof]
    element_energies = np.einsum("ei,ij,ej->e", ue, ke, ue)
    compliance = float(e_scale @ element_energies)
    return FeaSolution(u=u, compliance=compliance, element_energies=element_energies)


def compliance_of(domain: Domain2D, material: MaterialParams,
                  bcs: BoundaryConditions, xphys: np.ndarray,
                  method: str = "auto") -> float:
    """Single FEA evaluation of C(xphys); no optimization involved."""
    return solve_equilibrium(domain, material, bcs, xphys, method=method).compliance


def compliance_sensitivities(domain: Domain2D, material: MaterialParams,
                             bcs: BoundaryConditions, xphys: np.ndarray,
                             method: str = "auto") -> tuple[float, np.ndarray]:
    """Compliance and its adjoint gradient dC/drho_e = -p rho^(p-1) (e0-emin) ce."""
    xphys = _validate_density(domain, xphys)
    sol = solve_equilibrium(domain, material, bcs, xphys, method=method)
    ce = sol.element_energies.reshape(domain.nelx, domain.nely)
    dc = -material.penal * xphys ** (material.penal - 1) * (material.e0 - material.emin) * ce
    return sol.compliance, dc


class DensityFilter:
    """Linear density filter with conic weights max(0, rmin - dist).

    apply() averages with row-normalized weights (rows sum to 1, so a uniform
    field is unchanged and outputs stay inside the input range); adjoint()
    maps sensitivities back through the chain rule.
    """

    def __init__(self, domain: Domain2D, rmin: float):
        if rmin < 1:
            raise ValueError(f"filter radius must be >= 1 element, got {rmin}")
        self.domain = domain
        self.rmin = float(rmin)
        self._h = self._build(domain, self.rmin)
        self._hs = np.asarray(self._h.sum(axis=1)).ravel()

    @staticmethod
    def _build(domain: Domain2D, rmin: float):
        nelx, nely = domain.nelx, domain.nely
        reach = int(np.ceil(rmin)) - 1
        rows, cols, weights = [], [], []
        for di in range(-reach, reach + 1):
            for dj in range(-reach, reach + 1):
                weight = rmin - np.hypot(di, dj)
                if weight <= 0:
                    continue
                i = np.arange(max(0, -di), nelx - max(0, di))
                j = np.arange(max(0, -dj), nely - max(0, dj))
                ii, jj = np.meshgrid(i, j, indexing="ij")
                rows.append((ii * nely + jj).ravel())
                cols.append(((ii + di) * nely + (jj + dj)).ravel())
                weights.append(np.full(ii.size, weight))
        h = coo_matrix((np.concatenate(weights),
                        (np.concatenate(rows), np.concatenate(cols))),
                       shape=(domain.nel, domain.nel))
        return h.tocsr()

    def apply(self, rho: np.ndarray) -> np.ndarray:
        flat = (self._h @ rho.ravel()) / self._hs
        # convex combination per row; clip float roundoff at the bounds
        np.clip(flat, 0.0, 1.0, out=flat)
        return flat.reshape(self.domain.nelx, self.domain.nely)

    def adjoint(self, sens: np.ndarray) -> np.ndarray:
        flat = self._h @ (sens.ravel() / self._hs)
        return flat.reshape(self.domain.nelx, self.domain.nely)


def oc_update(rho: np.ndarray, sens: np.ndarray, vstar: float, *,
              dv: np.ndarray | None = None, move: float = 0.2, eta: float = 0.5,
              volume_tol: float = 1e-4, max_bisect: int = 200,
              project=None) -> np.ndarray:
    """Optimality-criteria density update with bisected volume multiplier.

    The Lagrange multiplier is bisected until mean(project(xnew)) matches
    vstar within volume_tol; project defaults to identity (pass the density
    filter when the volume constraint acts on physical densities).
    """
    if np.any(sens > 0):
        raise ValueError("OC update expects non-positive compliance sensitivities "
                         f"(max is {sens.max():.3e})")
    if dv is None:
        dv = np.ones_like(rho)
    if project is None:
        project = lambda x: x

    lower = np.maximum(rho - move, 0.0)
    upper = np.minimum(rho + move, 1.0)
    ratio = -sens / dv

    l1, l2 = 0.0, 1e9
    xnew, vol = rho, np.inf
    for _ in range(max_bisect):
        lmid = 0.5 * (l1 + l2)
        xnew = np.clip(rho * (ratio / lmid) ** eta, lower, upper)
        vol = project(xnew).mean()
        if vol > vstar:
            l1 = lmid
        else:
            l2 = lmid
        # resolve the multiplier fully before accepting, so elements with
        # near-zero sensitivity settle instead of stalling at the tolerance
        if (l2 - l1) <= 1e-12 * (l1 + l2) and abs(vol - vstar) <= volume_tol:
            return xnew
    if abs(vol - vstar) <= volume_tol:
        return xnew
    raise OcBisectionError(f"volume bisection did not reach |mean - {vstar}| <= "
                           f"{volume_tol} within {max_bisect} iterations")


@dataclass
class OptimizeResult:
    xphys: np.ndarray
    compliance_history: np.ndarray
    converged: bool
    n_updates: int
    domain: Domain2D = field(repr=False, default=None)


def optimize(domain: Domain2D, material: MaterialParams, bcs: BoundaryConditions,
             vstar: float, rmin: float = 2.4, max_iters: int = 200,
             tol: float = 0.01, method: str = "auto") -> OptimizeResult:
    """Modified-SIMP compliance minimization with density filtering and OC.

    Iterates FEA -> adjoint sensitivities -> filter chain rule -> OC update
    until the max design-density change drops below tol or the update budget
    runs out. Returns the physical (filtered) densities; the last compliance
    history entry is the compliance of exactly the returned field.
    """
    if not 0 < vstar <= 1:
        raise ValueError(f"volume fraction must be in (0, 1], got {vstar}")
    filt = DensityFilter(domain, rmin)
    x = np.full((domain.nelx, domain.nely), vstar)
    ones = np.ones_like(x)
    history: list[float] = []
    change = np.inf
    converged = False
    n_updates = 0

    for step in range(max_iters + 1):
        xphys = filt.apply(x)
        c, dc = compliance_sensitivities(domain, material, bcs, xphys, method=method)
        history.append(c)
        if change < tol:
            converged = True
            break
        if step == max_iters:
            break
        dc_design = filt.adjoint(dc)
        dv_design = filt.adjoint(ones)
        xnew = oc_update(x, dc_design, vstar, dv=dv_design, project=filt.apply)
        change = np.abs(xnew - x).max()
        x = xnew
        n_updates += 1

    return OptimizeResult(xphys=xphys, compliance_history=np.array(history),
                          converged=converged, n_updates=n_updates, domain=domain)
