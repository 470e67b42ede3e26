"""Approximate Poisson kernel on torus boundaries and the boundary extension operator.

The kernel is the half-space Poisson kernel with the squared Euclidean
distance replaced by a smooth modified squared distance ``D`` that equals
``d^2`` near the diagonal and plateaus at ``delta^2`` far from it:

    K(x, r; x') = c_m r / (D(x, x') + r^2)^((m+1)/2).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gamma, pi

import numpy as np

from .errors import DomainError, ResolutionError
from .geometry import MetricSpec, eval_metric_jet
from .grid import SlabGrid

# entries of a (chunk x quadrature) block kept in memory at once
_BLOCK = 2_000_000


def sphere_area(m: int) -> float:
    """Euclidean volume of the unit sphere in R^(m+1)."""
    return 2 * pi ** ((m + 1) / 2) / gamma((m + 1) / 2)


def kernel_constant(m: int) -> float:
    return 2.0 / sphere_area(m)


def smooth_step(t):
    """C-infinity step built from exp(-1/t); returns (S, S', S'')."""
    t = np.asarray(t, dtype=float)
    S = np.where(t >= 1, 1.0, 0.0)
    dS = np.zeros_like(t)
    d2S = np.zeros_like(t)
    inner = (t > 0) & (t < 1)
    if np.any(inner):
        ti = t[inner]
        u = 1.0 / (1.0 - ti) - 1.0 / ti
        du = 1.0 / ti ** 2 + 1.0 / (1.0 - ti) ** 2
        d2u = -2.0 / ti ** 3 + 2.0 / (1.0 - ti) ** 3
        sig = 0.5 * (1.0 + np.tanh(0.5 * u))
        s1 = sig * (1.0 - sig)
        S[inner] = sig
        dS[inner] = s1 * du
        d2S[inner] = s1 * (1.0 - 2.0 * sig) * du ** 2 + s1 * d2u
    return S, dS, d2S


def wrap(delta, lattice):
    """Periodic difference mapped into [-L/2, L/2)."""
    L = np.asarray(lattice, dtype=float)
    return (delta + 0.5 * L) % L - 0.5 * L


@dataclass(frozen=True)
class ModifiedDistance:
    spec: MetricSpec
    injectivity_radius: float
    blend_width: float

    @classmethod
    def for_spec(cls, spec: MetricSpec, blend_width: float | None = None):
        lam_min = -abs(spec.conformal_amp)
        delta = 0.5 * min(spec.lattice) * np.exp(lam_min)
        return cls(spec, float(delta), float(delta / 4 if blend_width is None else blend_width))

    def squared_distance(self, x, xp):
        """Conformal-factor-weighted periodic squared distance and its x-derivatives."""
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        delta = wrap(xp - x, self.spec.lattice)
        l2 = np.sum(delta ** 2, axis=-1)
        lam, dlam, d2lam = self.spec.conformal_exponent(x)
        lamp, _, _ = self.spec.conformal_exponent(xp)
        E = np.exp(lam + lamp)
        dE = E[..., None] * dlam
        d2E = E[..., None, None] * (dlam[..., :, None] * dlam[..., None, :] + d2lam)
        dl2 = -2.0 * delta
        m = x.shape[-1]
        s = E * l2
        ds = dE * l2[..., None] + E[..., None] * dl2
        d2s = (d2E * l2[..., None, None] + dE[..., :, None] * dl2[..., None, :]
               + dl2[..., :, None] * dE[..., None, :] + 2.0 * E[..., None, None] * np.eye(m))
        return s, ds, d2s

    def _profile(self, s):
        """Phi(s) with D = Phi(d^2); returns (Phi, Phi', Phi'')."""
        delta, bw = self.injectivity_radius, self.blend_width
        a = delta - bw
        # the blend only acts on root in [a, delta]; clamp keeps the unused branch finite
        root = np.sqrt(np.maximum(s, (1e-6 * delta) ** 2))
        t = (root - a) / bw
        S, dS, d2S = smooth_step(t)
        dt = 1.0 / (2 * bw * root)
        d2t = -1.0 / (4 * bw * root ** 3)
        gap = delta ** 2 - s
        phi = (1 - S) * s + S * delta ** 2
        dphi = 1 - S + gap * dS * dt
        d2phi = -2 * dS * dt + gap * (d2S * dt ** 2 + dS * d2t)
        far = s >= delta ** 2
        near = root <= a
        phi = np.where(far, delta ** 2, np.where(near, s, phi))
        dphi = np.where(far, 0.0, np.where(near, 1.0, dphi))
        d2phi = np.where(far | near, 0.0, d2phi)
        return phi, dphi, d2phi

    def __call__(self, x, xp):
        s, _, _ = self.squared_distance(x, xp)
        return self._profile(s)[0]

    def jet(self, x, xp):
        """D with gradient and Hessian in the first argument."""
        s, ds, d2s = self.squared_distance(x, xp)
        phi, dphi, d2phi = self._profile(s)
        dD = dphi[..., None] * ds
        d2D = d2phi[..., None, None] * ds[..., :, None] * ds[..., None, :] + dphi[..., None, None] * d2s
        return phi, dD, d2D


@dataclass(frozen=True)
class KernelContext:
    spec: MetricSpec
    distance: ModifiedDistance
    quad_n: tuple
    c_m: float

    @property
    def m(self) -> int:
        return self.spec.dim

    def quadrature(self):
        """Nodes (P, m) and weights (P,) of the periodic trapezoid rule."""
        axes = [np.arange(N) * L / N for N, L in zip(self.quad_n, self.spec.lattice)]
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.m)
        cell = np.prod([L / N for N, L in zip(self.quad_n, self.spec.lattice)])
        return nodes, cell * self.spec.volume_density(nodes)

    def refined(self, factor: int = 2) -> "KernelContext":
        return KernelContext(self.spec, self.distance, tuple(factor * N for N in self.quad_n), self.c_m)

    def check_resolution(self, r_min: float):
        """Near-diagonal peak needs at least 8 nodes per kernel width."""
        for N, L in zip(self.quad_n, self.spec.lattice):
            if N < 8 * L / r_min:
                raise ResolutionError(
                    f"quadrature N={N} below 8 L / r_min = {8 * L / r_min:.1f} at r_min={r_min:g}")


def make_kernel_context(spec: MetricSpec, quad_n, blend_width: float | None = None) -> KernelContext:
    quad_n = tuple(int(v) for v in np.broadcast_to(np.atleast_1d(quad_n), (spec.dim,)))
    return KernelContext(spec, ModifiedDistance.for_spec(spec, blend_width), quad_n,
                         kernel_constant(spec.dim))


def _check_r(r):
    if np.any(np.asarray(r) <= 0):
        raise DomainError("kernel needs r > 0")


def eval_kernel(ctx: KernelContext, x, r, xp):
    _check_r(r)
    D = ctx.distance(x, xp)
    r = np.asarray(r, dtype=float)
    return ctx.c_m * r / (D + r * r) ** ((ctx.m + 1) / 2)


def _kernel_from_D(c, m, r, D, dD=None, d2D=None):
    """K and its (x, r) derivatives from a D-jet; derivative arrays have a
    trailing axis of length m+1 with the radial slot last."""
    M = m + 1
    P = D + r * r
    p0 = P ** (-M / 2)
    p1 = p0 / P
    K = c * r * p0
    if dD is None:
        return K, c * (p0 - M * r * r * p1)
    p2 = p1 / P
    r = np.broadcast_to(r, D.shape)
    shape = D.shape
    grad = np.empty(shape + (M,))
    grad[..., :m] = -(M / 2) * c * (r * p1)[..., None] * dD
    grad[..., m] = c * (p0 - M * r * r * p1)
    hess = np.empty(shape + (M, M))
    hess[..., :m, :m] = c * r[..., None, None] * (-(M / 2) * p1[..., None, None] * d2D
                                 + (M / 2) * (M / 2 + 1) * p2[..., None, None]
                                 * dD[..., :, None] * dD[..., None, :])
    mixed = -(M / 2) * c * dD * (p1 - (M + 2) * r * r * p2)[..., None]
    hess[..., :m, m] = mixed
    hess[..., m, :m] = mixed
    hess[..., m, m] = c * (-3 * M * r * p1 + M * (M + 2) * r ** 3 * p2)
    return K, grad, hess


def kernel_jet(ctx: KernelContext, x, r, xp):
    """K, its gradient and Hessian in the (x, r) variables."""
    _check_r(r)
    D, dD, d2D = ctx.distance.jet(x, xp)
    return _kernel_from_D(ctx.c_m, ctx.m, np.asarray(r, dtype=float), D, dD, d2D)


def contract(jet, grad, hess):
    """(|grad f|^2_gbar, Laplacian_gbar f) from coordinate derivatives."""
    gi = jet.gbar_inv
    g2 = np.einsum("...ij,...i,...j->...", gi, grad, grad)
    lap = np.einsum("...ij,...ij->...", gi, hess) - np.einsum(
        "...ij,...kij,...k->...", gi, jet.christoffel_gbar, grad)
    return g2, lap


def _i0(ctx, x, r):
    nodes, w = ctx.quadrature()
    return float(np.sum(eval_kernel(ctx, np.broadcast_to(x, nodes.shape), r, nodes) * w))


def kernel_moments(ctx: KernelContext, x, r: float, check: bool = True):
    """(I0, I1, I2): mass, r-scaled gradient norm and r-scaled Laplacian of the kernel integral."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not 0 < r <= ctx.spec.r_star:
        raise DomainError(f"r={r} outside (0, r_star]")
    nodes, w = ctx.quadrature()
    K, grad, hess = kernel_jet(ctx, np.broadcast_to(x, nodes.shape), r, nodes)
    I0 = float(np.sum(K * w))
    if check:
        I0_fine = _i0(ctx.refined(2), x, r)
        if abs(I0_fine - I0) > 1e-3:
            raise ResolutionError(f"I0 changes by {abs(I0_fine - I0):.2e} under quadrature doubling")
    G = np.einsum("p,pi->i", w, grad)
    H = np.einsum("p,pij->ij", w, hess)
    jet = eval_metric_jet(ctx.spec, x, np.float64(r))
    g2, lap = contract(jet, G, H)
    return I0, r * float(np.sqrt(g2)), r * float(lap)


def kernel_bounds_check(ctx: KernelContext, xs, rs, xps):
    """Empirical sup of r|grad K|/K and |Laplacian K|/K over sample triples."""
    xs = np.asarray(xs, dtype=float).reshape(-1, ctx.m)
    xps = np.asarray(xps, dtype=float).reshape(-1, ctx.m)
    rs = np.asarray(rs, dtype=float).ravel()
    K, grad, hess = kernel_jet(ctx, xs, rs, xps)
    jet = eval_metric_jet(ctx.spec, xs, rs)
    g2, lap = contract(jet, grad, hess)
    return float(np.max(rs * np.sqrt(g2) / K)), float(np.max(np.abs(lap) / K))


@dataclass
class Extension:
    """Kernel extension of boundary data on a slab grid.

    Arrays carry the field axis first: ``w`` and ``dw_dr`` have shape
    ``(F,) + grid.shape``; ``grad``/``hess`` (when requested) append one or
    two derivative axes of length m+1 (radial slot last).
    """

    grid: SlabGrid
    w: np.ndarray
    dw_dr: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None

    def boundary_value(self):
        return richardson_to_zero(self.grid.radii, self.w)

    def boundary_dr(self):
        return richardson_to_zero(self.grid.radii, self.dw_dr)

    def scaled_grad_norm(self, spec: MetricSpec):
        """r |grad_gbar w|_gbar at every node."""
        g2, _ = contract(_grid_jet(spec, self.grid), self.grad, self.hess)
        return self.grid.radii * np.sqrt(g2)

    def scaled_laplacian(self, spec: MetricSpec):
        """r * Laplacian_gbar w at every node."""
        _, lap = contract(_grid_jet(spec, self.grid), self.grad, self.hess)
        return self.grid.radii * lap


def _grid_jet(spec: MetricSpec, grid: SlabGrid):
    x, r = grid.node_coords()
    return eval_metric_jet(spec, x, r)


def richardson_to_zero(radii, values):
    """Linear extrapolation to r = 0 from the two smallest ladder levels (last axis)."""
    r1, r2 = radii[-1], radii[-2]
    return (r2 * values[..., -1] - r1 * values[..., -2]) / (r2 - r1)


def _phi_values(phi, nodes):
    vals = phi(nodes) if callable(phi) else np.asarray(phi, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != len(nodes):
        raise ValueError("boundary data does not match quadrature nodes")
    return vals


def extend(ctx: KernelContext, phi, grid: SlabGrid, derivatives: bool = False,
           check: bool = True) -> Extension:
    """w(x, r) = integral of K(x, r; x') phi(x') dV(x') at every grid node.

    ``phi`` is a callable on quadrature nodes ``(P, m)`` returning ``(P,)`` or
    ``(P, F)``, or the array of those values.
    """
    if tuple(grid.lattice) != tuple(ctx.spec.lattice):
        raise ValueError("grid lattice differs from the source metric lattice")
    if grid.r_max > ctx.spec.r_star * (1 + 1e-12):
        raise DomainError("grid extends beyond r_star")
    nodes, wq = ctx.quadrature()
    vals = _phi_values(phi, nodes)
    if check:
        ctx.check_resolution(grid.r_min)
        x0 = np.zeros(ctx.m)
        I0, I0f = _i0(ctx, x0, grid.r_min), _i0(ctx.refined(2), x0, grid.r_min)
        if abs(I0 - I0f) > 1e-3:
            raise ResolutionError(f"I0 changes by {abs(I0 - I0f):.2e} under quadrature doubling")
    weighted = vals * wq[:, None]
    F = vals.shape[1]
    m, M = ctx.m, ctx.m + 1
    ex = grid.x_nodes().reshape(-1, m)
    radii = grid.radii
    nE, nQ, nK = len(ex), len(nodes), len(radii)
    w = np.empty((F, nE, nK))
    dw = np.empty((F, nE, nK))
    grad = np.empty((F, nE, nK, M)) if derivatives else None
    hess = np.empty((F, nE, nK, M, M)) if derivatives else None
    per_row = nQ * ((1 + m + m * m) * 3 if derivatives else 3)
    chunk = max(1, _BLOCK // per_row)
    for start in range(0, nE, chunk):
        sl = slice(start, min(start + chunk, nE))
        xa = ex[sl, None, :]
        if derivatives:
            D, dD, d2D = ctx.distance.jet(np.broadcast_to(xa, (xa.shape[0], nQ, m)), nodes[None])
        else:
            D = ctx.distance(np.broadcast_to(xa, (xa.shape[0], nQ, m)), nodes[None])
        for k, r in enumerate(radii):
            if derivatives:
                K, gK, hK = _kernel_from_D(ctx.c_m, m, r, D, dD, d2D)
                grad[:, sl, k] = np.einsum("eqi,qf->fei", gK, weighted)
                hess[:, sl, k] = np.einsum("eqij,qf->feij", hK, weighted)
                dK = gK[..., m]
            else:
                K, dK = _kernel_from_D(ctx.c_m, m, r, D)
            w[:, sl, k] = (K @ weighted).T
            dw[:, sl, k] = (dK @ weighted).T
    shape = (F,) + grid.shape
    return Extension(
        grid, w.reshape(shape), dw.reshape(shape),
        None if grad is None else grad.reshape(shape + (M,)),
        None if hess is None else hess.reshape(shape + (M, M)),
    )
