"""Tension field, energy density and Neumann data of maps on a slab grid.

Tangential derivatives are periodic central differences (seam jumps of the
unwrapped components are added back); radial derivatives use 3-point
stencils with exact Taylor weights on the geometric ladder, one-sided at
the two walls.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .approx import MapField
from .errors import ChartOverflowError, ResolutionError
from .geometry import MetricSpec, christoffel_g, eval_metric_jet
from .grid import SlabGrid


def taylor_weights(nodes, x0):
    """Weights of f'(x0) and f''(x0) from values at three nodes."""
    nodes = np.asarray(nodes, dtype=float) - x0
    V = np.vander(nodes, 3, increasing=True).T  # rows: 1, h, h^2
    w1 = np.linalg.solve(V, [0.0, 1.0, 0.0])
    w2 = np.linalg.solve(V, [0.0, 0.0, 2.0])
    return w1, w2


def log_weights(nodes, x0):
    """Like :func:`taylor_weights` but exact on span{1, r, log r} instead of quadratics."""
    nodes = np.asarray(nodes, dtype=float)
    V = np.stack([np.ones_like(nodes), nodes / x0, np.log(nodes / x0)])
    w1 = np.linalg.solve(V, [0.0, 1.0 / x0, 1.0 / x0])
    w2 = np.linalg.solve(V, [0.0, 0.0, -1.0 / x0 ** 2])
    return w1, w2


@lru_cache(maxsize=32)
def _radial_stencil(radii: tuple, basis: str = "poly"):
    weights = {"poly": taylor_weights, "log": log_weights}[basis]
    radii = np.asarray(radii)
    n = len(radii)
    idx = np.empty((n, 3), dtype=int)
    for k in range(n):
        if k == 0:
            idx[k] = (0, 1, 2)
        elif k == n - 1:
            idx[k] = (n - 3, n - 2, n - 1)
        else:
            idx[k] = (k - 1, k, k + 1)
    w1 = np.empty((n, 3))
    w2 = np.empty((n, 3))
    for k in range(n):
        w1[k], w2[k] = weights(radii[idx[k]], radii[k])
    return idx, w1, w2


class Stencil:
    """Finite-difference derivatives of stacked fields ``(C,) + grid.shape``."""

    def __init__(self, grid: SlabGrid, basis: str = "poly"):
        self.grid = grid
        self.idx, self.w1, self.w2 = _radial_stencil(tuple(grid.radii), basis)

    def _roll(self, f, axis, step, shift):
        """Neighbor values along a periodic axis with seam jumps restored."""
        out = np.roll(f, -step, axis=axis + 1)
        if shift is not None and np.any(shift):
            sl = [slice(None)] * f.ndim
            sl[axis + 1] = -1 if step > 0 else 0
            out[tuple(sl)] += (step * np.asarray(shift)).reshape((-1,) + (1,) * (f.ndim - 2))
        return out

    def d_tangential(self, f, axis, shift=None):
        h = self.grid.spacing[axis]
        return (self._roll(f, axis, 1, shift) - self._roll(f, axis, -1, shift)) / (2 * h)

    def d2_tangential(self, f, axis, shift=None):
        h = self.grid.spacing[axis]
        return (self._roll(f, axis, 1, shift) - 2 * f + self._roll(f, axis, -1, shift)) / (h * h)

    def d_radial(self, f):
        return np.einsum("...kj,kj->...k", f[..., self.idx], self.w1)

    def d2_radial(self, f):
        return np.einsum("...kj,kj->...k", f[..., self.idx], self.w2)

    def jet(self, f, shifts=None):
        """First and second derivatives of stacked fields ``f`` of shape ``(C,) + grid.shape``.

        Returns ``d1`` of shape ``(C, M) + grid.shape`` and ``d2`` of shape
        ``(C, M, M) + grid.shape``; ``shifts[a]`` is the per-component seam
        jump along tangential axis ``a``.
        """
        m = self.grid.m
        M = m + 1
        C = f.shape[0]
        d1 = np.empty((C, M) + f.shape[1:])
        d2 = np.empty((C, M, M) + f.shape[1:])
        for a in range(m):
            s = None if shifts is None else shifts[a]
            d1[:, a] = self.d_tangential(f, a, s)
            d2[:, a, a] = self.d2_tangential(f, a, s)
        d1[:, m] = self.d_radial(f)
        d2[:, m, m] = self.d2_radial(f)
        for a in range(m):
            mixed = self.d_radial(d1[:, a])
            d2[:, a, m] = mixed
            d2[:, m, a] = mixed
            for b in range(a + 1, m):
                mixed = self.d_tangential(d1[:, a], b)
                d2[:, a, b] = mixed
                d2[:, b, a] = mixed
        return d1, d2

    def first(self, f, shifts=None):
        m = self.grid.m
        d1 = np.empty((f.shape[0], m + 1) + f.shape[1:])
        for a in range(m):
            d1[:, a] = self.d_tangential(f, a, None if shifts is None else shifts[a])
        d1[:, m] = self.d_radial(f)
        return d1


def _front(a, k=2):
    """Move the trailing ``k`` index axes to the front (contiguous copy)."""
    return np.ascontiguousarray(np.moveaxis(a, tuple(range(-k, 0)), tuple(range(k))))


@dataclass
class TensionField:
    components: np.ndarray   # (n+1,) + grid.shape
    norm: np.ndarray         # |tau|_h
    grid: SlabGrid

    @property
    def rescaled(self) -> np.ndarray:
        """r^-1 tau^gamma."""
        return self.components / self.grid.radii

    @property
    def rescaled_tangential(self):
        return self.rescaled[:-1]

    @property
    def rescaled_normal(self):
        return self.rescaled[-1]


@dataclass
class EnergyDensity:
    e_g_h: np.ndarray
    e_bar: np.ndarray


class MapOperator:
    """Tension and energy of maps between two fixed metrics on one grid.

    Internally arrays are index-first: ``G[i, j]`` is ``g^{ij}`` over the grid.
    """

    def __init__(self, grid: SlabGrid, source: MetricSpec, target: MetricSpec):
        self.grid, self.source, self.target = grid, source, target
        self.stencil = Stencil(grid)
        x, r = grid.node_coords()
        jet = eval_metric_jet(source, x, r)
        self.G = _front(jet.g_inv)
        self.Gbar = _front(jet.gbar_inv)
        self.B = _front(-np.einsum("...ij,...kij->...k", jet.g_inv, jet.christoffel_g), 1)
        self.M = grid.m + 1

    def _shifts(self, u: MapField):
        zero = np.zeros(1)
        return [np.concatenate([u.seam_shift(a), zero]) for a in range(self.grid.m)]

    def derivatives(self, u: MapField):
        """(d1, d2) with shapes ``(C, M) + grid.shape`` and ``(C, M, M) + grid.shape``."""
        return self.stencil.jet(u.components, self._shifts(u))

    def _target_points(self, u: MapField, check: bool = True):
        rho = u.rho
        if check:
            bad = rho >= self.target.r_star
            if np.any(bad):
                node = tuple(int(i) for i in np.argwhere(bad)[0])
                raise ChartOverflowError(node, f"rho={rho[node]:.4g} >= rho*={self.target.r_star}")
            if np.any(rho <= 0):
                node = tuple(int(i) for i in np.argwhere(rho <= 0)[0])
                raise ChartOverflowError(node, "rho <= 0")
        return np.moveaxis(u.tangential, 0, -1), rho

    def target_metric(self, u: MapField):
        """h_{ab} at the image points, index-first."""
        y, rho = self._target_points(u, check=False)
        if self.target.is_flat:
            C = u.components.shape[0]
            return np.eye(C).reshape((C, C) + (1,) * rho.ndim) / rho ** 2
        return _front(self.target.gbar(y, rho)) / rho ** 2

    def _pullback(self, d1, G=None):
        """P[a, b] = g^{ij} d_i u^a d_j u^b (or with the given inverse metric)."""
        C, M = d1.shape[:2]
        G = self.G if G is None else G
        Q = np.empty_like(d1)
        for b in range(C):
            for i in range(M):
                Q[b, i] = sum(G[i, j] * d1[b, j] for j in range(M))
        P = np.empty((C, C) + d1.shape[2:])
        for a in range(C):
            for b in range(a, C):
                P[a, b] = sum(d1[a, i] * Q[b, i] for i in range(M))
                P[b, a] = P[a, b]
        return P

    def _trace(self, h, P):
        C = P.shape[0]
        if self.target.is_flat:
            return sum(h[a, a] * P[a, a] for a in range(C))
        return sum(h[a, b] * P[a, b] for a in range(C) for b in range(C))

    def tension(self, u: MapField, check: bool = True) -> TensionField:
        y, rho = self._target_points(u, check)
        d1, d2 = self.derivatives(u)
        C, M = d1.shape[:2]
        G, B = self.G, self.B
        P = self._pullback(d1)
        tau = np.empty(u.components.shape)
        for c in range(C):
            acc = B[0] * d1[c, 0]
            for k in range(1, M):
                acc += B[k] * d1[c, k]
            for i in range(M):
                acc += G[i, i] * d2[c, i, i]
                for j in range(i + 1, M):
                    acc += 2 * G[i, j] * d2[c, i, j]
            tau[c] = acc
        if self.target.is_flat:
            # Gamma_h = X(rho): tau^a -= 2 P[a, rho] / rho, tau^rho += (sum_a P[a, a] - P[rho, rho]) / rho
            inv = 1.0 / rho
            for a in range(C - 1):
                tau[a] -= 2 * P[a, -1] * inv
            tau[-1] += (sum(P[a, a] for a in range(C - 1)) - P[-1, -1]) * inv
            norm = np.sqrt(np.sum(tau * tau, axis=0)) * inv
        else:
            gam = _front(christoffel_g(self.target, y, rho), 3)
            for c in range(C):
                for a in range(C):
                    for b in range(C):
                        tau[c] += gam[c, a, b] * P[a, b]
            h = self.target_metric(u)
            norm = np.sqrt(np.maximum(sum(h[a, b] * tau[a] * tau[b] for a in range(C) for b in range(C)), 0.0))
        return TensionField(tau, norm, self.grid)

    def energy(self, u: MapField, check: bool = True) -> EnergyDensity:
        """``e_g_h`` w.r.t. (g, h); ``e_bar`` w.r.t. the compactified metrics (gbar, hbar)."""
        self._target_points(u, check)
        d1 = self.stencil.first(u.components, self._shifts(u))
        h = self.target_metric(u)
        e = self._trace(h, self._pullback(d1))
        hbar = h * u.rho ** 2
        e_bar = self._trace(hbar, self._pullback(d1, self.Gbar))
        return EnergyDensity(e, e_bar)


@lru_cache(maxsize=8)
def map_operator(grid: SlabGrid, source: MetricSpec, target: MetricSpec) -> MapOperator:
    return MapOperator(grid, source, target)


def tension(u: MapField, source: MetricSpec, target: MetricSpec) -> TensionField:
    return map_operator(u.grid, source, target).tension(u)


def energy_density(u: MapField, source: MetricSpec, target: MetricSpec) -> EnergyDensity:
    return map_operator(u.grid, source, target).energy(u)


def interior(arr):
    """Drop the two wall rows along the radial (last) axis."""
    return arr[..., 1:-1]


def level_sup(field, grid: SlabGrid, r: float) -> float:
    return float(np.max(np.abs(field[..., grid.level_index(r)])))


@dataclass
class TensionReport:
    radii: np.ndarray
    sup_tension_h: np.ndarray
    sup_rescaled_tan: np.ndarray
    sup_rescaled_nor: np.ndarray
    sup_energy_minus_m1: np.ndarray

    columns = ("r_level", "sup_tension_h", "sup_rescaled_tan", "sup_rescaled_nor", "sup_energy_minus_m1")

    def rows(self):
        return [tuple(float(v) for v in row) for row in zip(
            self.radii, self.sup_tension_h, self.sup_rescaled_tan,
            self.sup_rescaled_nor, self.sup_energy_minus_m1)]

    def at(self, r: float):
        k = int(np.argmin(np.abs(self.radii - r)))
        if abs(self.radii[k] - r) > 1e-6 * r:
            raise KeyError(f"level {r} not in report")
        return dict(zip(self.columns, self.rows()[k]))


def rescaled_tension_report(u: MapField, source: MetricSpec, target: MetricSpec) -> TensionReport:
    """Per-level sup norms over interior levels (wall rows excluded)."""
    op = map_operator(u.grid, source, target)
    tf = op.tension(u)
    en = op.energy(u)
    m = source.dim
    axes = tuple(range(u.grid.m))
    tan = tf.rescaled_tangential
    sup_tan = np.max(np.abs(tan), axis=(0,) + tuple(a + 1 for a in axes)) if len(tan) else np.zeros(u.grid.K + 1)
    sup_nor = np.max(np.abs(tf.rescaled_normal), axis=axes)
    sup_h = np.max(tf.norm, axis=axes)
    sup_e = np.max(np.abs(en.e_g_h - (m + 1)), axis=axes)
    inner = slice(1, -1)
    return TensionReport(u.grid.radii[inner], sup_h[inner], sup_tan[inner], sup_nor[inner], sup_e[inner])


def neumann_extract(u: MapField, min_levels_below: float = 0.1):
    """Boundary normal derivatives (du^alpha/dr, drho/dr) at r = 0.

    One-sided difference quotients at the two innermost ladder intervals are
    extrapolated linearly to r = 0.
    """
    radii = u.grid.radii
    if np.sum(radii < min_levels_below) < 3:
        raise ResolutionError(f"need at least 3 radial levels below r={min_levels_below}")
    c = u.components
    q1 = (c[..., -2] - c[..., -1]) / (radii[-2] - radii[-1])
    q2 = (c[..., -3] - c[..., -2]) / (radii[-3] - radii[-2])
    m1 = 0.5 * (radii[-2] + radii[-1])
    m2 = 0.5 * (radii[-3] + radii[-2])
    d0 = (m2 * q1 - m1 * q2) / (m2 - m1)
    return d0[:-1], d0[-1]
