"""Boundary maps, discretized map fields and the kernel-built approximate harmonic map."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BuildError, ConfigError, DegenerateDataError, HomotopyError
from .geometry import MetricSpec
from .grid import SlabGrid
from .kernel import Extension, KernelContext, extend

__all__ = ["BoundaryMap", "MapField", "SlabGrid", "boundary_energy_density",
           "build_approximate_solution", "blend_maps"]


@dataclass(frozen=True)
class BoundaryMap:
    """Torus map ``x -> A x + b + eps * s(x)`` (mod the target lattice).

    The perturbation ``s`` acts on the first target component only:
    ``s(x) = (L_1 / 2 pi) sin(2 pi x^1 / L_1)``, which is ``sin x`` on the
    standard circle.
    """

    A: np.ndarray
    b: np.ndarray
    source_lattice: tuple
    target_lattice: tuple
    eps: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.int64))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", np.broadcast_to(np.asarray(self.b, dtype=float), (A.shape[0],)).copy())
        src = tuple(float(v) for v in np.atleast_1d(self.source_lattice))
        tgt = tuple(float(v) for v in np.atleast_1d(self.target_lattice))
        object.__setattr__(self, "source_lattice", src)
        object.__setattr__(self, "target_lattice", tgt)
        if A.shape != (len(tgt), len(src)):
            raise ConfigError(f"matrix shape {A.shape} does not match dims ({len(tgt)}, {len(src)})")
        # A must carry source periods to target lattice vectors
        ratio = A * np.asarray(src)[None, :] / np.asarray(tgt)[:, None]
        if not np.allclose(ratio, np.round(ratio), atol=1e-9):
            raise ConfigError("A does not map the source lattice into the target lattice")

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def periodic_part(self, x):
        """Lift minus its linear part: ``b + eps * s(x)``, shape (..., n)."""
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(self.b, x.shape[:-1] + (self.n,)).copy()
        if self.eps:
            L = self.source_lattice[0]
            out[..., 0] += self.eps * L / (2 * np.pi) * np.sin(2 * np.pi * x[..., 0] / L)
        return out

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("am,...m->...a", self.A, x) + self.periodic_part(x)

    def differential(self, x):
        x = np.asarray(x, dtype=float)
        df = np.broadcast_to(self.A.astype(float), x.shape[:-1] + (self.n, self.m)).copy()
        if self.eps:
            L = self.source_lattice[0]
            df[..., 0, 0] += self.eps * np.cos(2 * np.pi * x[..., 0] / L)
        return df

    def check_rank(self, x, tol: float = 1e-3):
        """Raise unless df has rank m with smallest singular value >= tol at every sample."""
        sv = np.linalg.svd(self.differential(x), compute_uv=False)
        k = min(self.m, self.n)
        smin = sv[..., k - 1] if k == self.m else np.zeros(sv.shape[:-1])
        if np.min(smin) < tol:
            raise DegenerateDataError(
                f"boundary map differential degenerate (min singular value {np.min(smin):.2e})")


def boundary_energy_density(f: BoundaryMap, source: MetricSpec, target: MetricSpec, x):
    """ghat^{ab}(x) hhat_{ab}(f(x)) d_a f^alpha d_b f^beta."""
    x = np.asarray(x, dtype=float)
    f.check_rank(x.reshape(-1, f.m))
    gi = np.linalg.inv(source.ghat(x))
    hh = target.ghat(f.lift(x))
    df = f.differential(x)
    return np.einsum("...ab,...uv,...ua,...vb->...", gi, hh, df, df)


@dataclass
class MapField:
    """Map ``u = (u^1..u^n, rho)`` on a slab grid.

    ``components`` has shape ``(n + 1,) + grid.shape`` with the radial target
    component last. Tangential components are unwrapped lifts: across the
    seam of source axis ``a`` they jump by ``A[:, a] * L_a``.
    """

    grid: SlabGrid
    components: np.ndarray
    homotopy_tag: np.ndarray
    target_lattice: tuple = field(default=())

    def __post_init__(self):
        self.homotopy_tag = np.atleast_2d(np.asarray(self.homotopy_tag, dtype=np.int64))
        self.components = np.asarray(self.components, dtype=float)
        if self.components.shape != (self.n + 1,) + self.grid.shape:
            raise ValueError(f"components shape {self.components.shape} does not match grid")
        if not self.target_lattice:
            self.target_lattice = tuple(self.grid.lattice[:self.n])
        if np.any(self.components[-1] <= 0):
            raise BuildError("radial component must be positive at every node")

    @property
    def n(self) -> int:
        return self.homotopy_tag.shape[0]

    @property
    def tangential(self) -> np.ndarray:
        return self.components[:-1]

    @property
    def rho(self) -> np.ndarray:
        return self.components[-1]

    def seam_shift(self, axis: int) -> np.ndarray:
        return self.homotopy_tag[:, axis] * self.grid.lattice[axis]

    def wrapped(self) -> np.ndarray:
        """Tangential components reduced modulo the target lattice."""
        L = np.asarray(self.target_lattice).reshape((-1,) + (1,) * len(self.grid.shape))
        return np.mod(self.tangential, L)

    def replace(self, components) -> "MapField":
        return MapField(self.grid, components, self.homotopy_tag, self.target_lattice)

    def copy(self) -> "MapField":
        return self.replace(self.components.copy())


def build_approximate_solution(f: BoundaryMap, ctx: KernelContext, grid: SlabGrid,
                               target: MetricSpec, return_extension: bool = False):
    """Approximate harmonic map from kernel extensions of the boundary data.

    Tangential components are ``A x + w - r dw/dr`` where ``w`` extends the
    periodic part of the lift; the radial one is ``r * w`` with ``w`` the
    extension of ``sqrt(ehat(f) / m)``.
    """
    if f.m != ctx.m:
        raise ConfigError("boundary map source dimension differs from the source metric")
    m = ctx.m

    def data(nodes):
        e = boundary_energy_density(f, ctx.spec, target, nodes)
        return np.concatenate([f.periodic_part(nodes), np.sqrt(e / m)[:, None]], axis=1)

    ext = extend(ctx, data, grid)
    x, r = grid.node_coords()
    comps = np.empty((f.n + 1,) + grid.shape)
    affine = np.einsum("am,...m->a...", f.A, x)
    comps[:-1] = affine + ext.w[:-1] - r * ext.dw_dr[:-1]
    comps[-1] = r * ext.w[-1]
    if np.any(comps[-1] <= 0):
        bad = np.unravel_index(np.argmin(comps[-1]), grid.shape)
        raise BuildError(f"non-positive radial component at node {bad}")
    v = MapField(grid, comps, f.A, f.target_lattice)
    return (v, ext) if return_extension else v


def blend_maps(v1: MapField, v2: MapField, psi) -> MapField:
    """Convex combination ``(1 - psi) v1 + psi v2`` in target chart coordinates."""
    if v1.grid != v2.grid:
        raise ValueError("maps live on different grids")
    if not np.array_equal(v1.homotopy_tag, v2.homotopy_tag):
        raise HomotopyError("maps carry different homotopy tags")
    psi = np.broadcast_to(np.asarray(psi, dtype=float), v1.grid.shape)
    if psi.min() < 0 or psi.max() > 1:
        raise ValueError("cutoff must take values in [0, 1]")
    a, b = v1.components, v2.components
    # written as a + psi (b - a) so that equal inputs come back bit-identical
    return v1.replace(np.where(psi == 1, b, a + psi * (b - a)))
