"""Superharmonic barrier ``phi = exp(eps * psi)`` with ``Delta_g psi = -m``, ``psi = log r + v``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spilu, spsolve, spsolve_triangular

from .errors import BarrierCertificationError, SolverDivergenceError
from .geometry import MetricSpec, eval_metric_jet
from .grid import SlabGrid
from .tension import Stencil


def _coefficients(spec: MetricSpec, grid: SlabGrid):
    """g^{ij} and the first-order coefficients -g^{ij} Gamma^k_ij at every node."""
    x, r = grid.node_coords()
    jet = eval_metric_jet(spec, x, r)
    G = jet.g_inv
    B = -np.einsum("...ij,...kij->...k", G, jet.christoffel_g)
    return G, B


def laplacian_g(spec: MetricSpec, field, grid: SlabGrid, basis: str = "log"):
    """Delta_g f = g^{ij}(d_i d_j f - Gamma^k_ij d_k f), nonpositive convention.

    The default radial stencil is exact on span{1, r, log r}.
    """
    G, B = _coefficients(spec, grid)
    d1, d2 = Stencil(grid, basis).jet(np.asarray(field, dtype=float)[None])
    return np.einsum("...ij,ij...->...", G, d2[0]) + np.einsum("...k,k...->...", B, d1[0])


def gradient_norm_sq(spec: MetricSpec, field, grid: SlabGrid, basis: str = "log"):
    """|grad f|_g^2."""
    x, r = grid.node_coords()
    G = eval_metric_jet(spec, x, r).g_inv
    d1 = Stencil(grid, basis).first(np.asarray(field, dtype=float)[None])
    return np.einsum("...ij,i...,j...->...", G, d1[0], d1[0])


def assemble_dirichlet(spec: MetricSpec, grid: SlabGrid, basis: str = "log"):
    """Sparse matrix of Delta_g on interior radial levels, zero Dirichlet walls.

    Unknowns are ordered as ``field[..., 1:-1].ravel()``.
    """
    G, B = _coefficients(spec, grid)
    st = Stencil(grid, basis)
    m, shape, K = grid.m, grid.shape, grid.K
    h = grid.spacing
    grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    idx = [gi.ravel() for gi in grids]
    G = G.reshape(-1, m + 1, m + 1)
    B = B.reshape(-1, m + 1)
    rows, cols, vals = [], [], []

    def add(offsets, radial_cols, coef):
        tgt = [(idx[a] + offsets[a]) % shape[a] for a in range(m)] + [radial_cols]
        rows.append(np.arange(len(idx[0])))
        cols.append(np.ravel_multi_index(tgt, shape))
        vals.append(coef)

    kk = idx[m]
    zero = [0] * m
    for a in range(m):
        e = [0] * m
        for s in (1, -1):
            e[a] = s
            add(list(e), kk, G[:, a, a] / h[a] ** 2 + s * B[:, a] / (2 * h[a]))
        add(zero, kk, -2 * G[:, a, a] / h[a] ** 2)
    for j in range(3):
        rk = st.idx[kk, j]
        add(zero, rk, G[:, m, m] * st.w2[kk, j] + B[:, m] * st.w1[kk, j])
        for a in range(m):
            e = [0] * m
            for s in (1, -1):
                e[a] = s
                add(list(e), rk, 2 * G[:, a, m] * st.w1[kk, j] * s / (2 * h[a]))
    for a in range(m):
        for b in range(a + 1, m):
            for sa in (1, -1):
                for sb in (1, -1):
                    e = [0] * m
                    e[a], e[b] = sa, sb
                    add(e, kk, 2 * G[:, a, b] * sa * sb / (4 * h[a] * h[b]))
    n = int(np.prod(shape))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    inner = np.zeros(shape, dtype=bool)
    inner[..., 1:K] = True
    sel = np.flatnonzero(inner.ravel())
    return A[sel][:, sel].tocsr()


def _gauss_seidel(A, b, tol, max_sweeps, omega=1.0):
    """SOR sweeps; raises on stagnation (residual ratio > 0.999 over 100 sweeps)."""
    D = sp.diags(A.diagonal())
    L = sp.tril(A, k=-1)
    U = sp.triu(A, k=1)
    M = (D / omega + L).tocsr()
    N = (D * (1 / omega - 1) - U).tocsr()
    x = np.zeros_like(b)
    res = np.max(np.abs(b))
    ref = res
    for sweep in range(1, max_sweeps + 1):
        x = spsolve_triangular(M, N @ x + b, lower=True)
        res = np.max(np.abs(A @ x - b))
        if res <= tol:
            return x, sweep
        if sweep % 100 == 0:
            if res > 0.999 * ref:
                raise SolverDivergenceError(f"Gauss-Seidel stagnated at residual {res:.3e} after {sweep} sweeps")
            ref = res
    raise SolverDivergenceError(f"Gauss-Seidel did not reach {tol:g} in {max_sweeps} sweeps (residual {res:.3e})")


@dataclass
class BarrierFunction:
    grid: SlabGrid
    v_corr: np.ndarray
    epsilon: float
    phi: np.ndarray
    grad_psi_sq: np.ndarray
    lap_phi: np.ndarray
    residual: float
    sweeps: int = 0

    columns = ("node_count", "epsilon", "sup_v_corr", "max_interior_lap_phi", "residual")

    @property
    def psi(self):
        return np.log(self.grid.radii) + self.v_corr

    @property
    def max_interior_lap_phi(self) -> float:
        return float(np.max(self.lap_phi[..., 1:-1]))

    def margin(self, m: int) -> float:
        """Required negativity: 0.1 * eps * min(phi) * m / 2 over interior nodes."""
        return 0.1 * self.epsilon * float(np.min(self.phi[..., 1:-1])) * m / 2

    def certificate_row(self):
        return (int(self.phi.size), float(self.epsilon), float(np.max(np.abs(self.v_corr))),
                self.max_interior_lap_phi, float(self.residual))


DIRECT_LIMIT = 20000


def _krylov(A, b, tol):
    A = A.tocsc()
    ilu = spilu(A, drop_tol=1e-2, fill_factor=10)
    x, info = gmres(A, b, M=LinearOperator(A.shape, ilu.solve), rtol=1e-13,
                    atol=0.1 * tol, restart=100, maxiter=500)
    if info != 0:
        raise SolverDivergenceError(f"GMRES did not converge (info={info})")
    return x


def solve_barrier(spec: MetricSpec, grid: SlabGrid, epsilon=None, method: str = "auto",
                  tol: float = 1e-8, max_sweeps: int = 200000, omega: float = 1.0) -> BarrierFunction:
    """Solve ``-Delta_g v = m + Delta_g log r`` with ``v = 0`` on both walls and assemble phi.

    ``epsilon=None`` applies ``eps = min(m / (2 sup|grad psi|^2), 0.9 m)``.
    ``method``: "direct" (sparse LU), "krylov" (ILU-preconditioned GMRES),
    "gauss-seidel"/"sor", or "auto" (direct below DIRECT_LIMIT unknowns).
    """
    m = spec.dim
    logr = np.broadcast_to(np.log(grid.radii), grid.shape)
    rhs_full = m + laplacian_g(spec, logr, grid)
    A = assemble_dirichlet(spec, grid)
    b = -rhs_full[..., 1:-1].ravel()
    sweeps = 0
    if np.max(np.abs(b)) <= tol:
        sol = np.zeros_like(b)
    elif method == "direct" or (method == "auto" and len(b) <= DIRECT_LIMIT):
        sol = spsolve(A.tocsc(), b)
    elif method in ("krylov", "auto"):
        sol = _krylov(A, b, tol)
    elif method in ("gauss-seidel", "sor"):
        sol, sweeps = _gauss_seidel(A, b, tol, max_sweeps, omega)
    else:
        raise ValueError(f"unknown method {method!r}")
    v = np.zeros(grid.shape)
    v[..., 1:-1] = sol.reshape(grid.shape[:-1] + (grid.K - 1,))
    psi = logr + v
    residual = float(np.max(np.abs(laplacian_g(spec, psi, grid)[..., 1:-1] + m)))
    grad = gradient_norm_sq(spec, psi, grid)
    if epsilon is None:
        epsilon = min(m / (2 * float(np.max(grad))), 0.9 * m)
    phi = np.exp(epsilon * psi)
    lap_phi = laplacian_g(spec, phi, grid)
    out = BarrierFunction(grid, v, float(epsilon), phi, grad, lap_phi, residual, sweeps)
    worst = out.max_interior_lap_phi
    if worst >= 0:
        inner = lap_phi[..., 1:-1]
        node = np.unravel_index(np.argmax(inner), inner.shape)
        node = node[:-1] + (node[-1] + 1,)
        raise BarrierCertificationError(f"Delta_g phi = {worst:.3e} >= 0", tuple(int(i) for i in node))
    return out
