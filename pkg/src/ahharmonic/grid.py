"""Tensor-product slab grid: periodic boundary lattice times a geometric radial ladder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SlabGrid:
    """Nodes ``(x, r_k)`` with ``r_k = r_max * q**k``, ``k = 0..K``.

    Field arrays have shape ``(N_1, ..., N_m, K + 1)``; radial index 0 is the
    outer wall ``r_max`` and index ``K`` the inner wall ``r_min``.
    """

    n: tuple
    lattice: tuple
    r_max: float
    q: float
    K: int

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        lattice = tuple(float(v) for v in np.atleast_1d(self.lattice))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "lattice", lattice)
        if len(n) != len(lattice):
            raise ConfigError("grid N per axis does not match lattice dimension")
        if min(n) < 4:
            raise ConfigError("need at least 4 lattice nodes per axis")
        if not 0.5 < self.q < 1:
            raise ConfigError(f"ladder ratio q={self.q} outside (0.5, 1)")
        if self.K < 2:
            raise ConfigError("need at least 3 radial levels")
        if not self.r_max > 0:
            raise ConfigError("r_max must be positive")

    @classmethod
    def geometric(cls, n, lattice, r_min, r_max, K):
        if not 0 < r_min < r_max:
            raise ConfigError("need 0 < r_min < r_max")
        return cls(n, lattice, r_max, (r_min / r_max) ** (1.0 / K), K)

    @classmethod
    def octaves(cls, n, lattice, r_min, levels_per_octave, K):
        """Ladder with ``q = 2**(-1/levels_per_octave)`` ending exactly at ``r_min``."""
        q = 2.0 ** (-1.0 / levels_per_octave)
        return cls(n, lattice, r_min * q ** (-K), q, K)

    @property
    def m(self) -> int:
        return len(self.n)

    @property
    def radii(self) -> np.ndarray:
        return self.r_max * self.q ** np.arange(self.K + 1)

    @property
    def r_min(self) -> float:
        return float(self.radii[-1])

    @property
    def log_step(self) -> float:
        return -np.log(self.q)

    @property
    def spacing(self) -> tuple:
        return tuple(L / N for L, N in zip(self.lattice, self.n))

    @property
    def shape(self) -> tuple:
        return self.n + (self.K + 1,)

    def x_axes(self):
        return [np.arange(N) * L / N for N, L in zip(self.n, self.lattice)]

    def x_nodes(self) -> np.ndarray:
        """Boundary lattice nodes, shape ``(N_1, ..., N_m, m)``."""
        return np.stack(np.meshgrid(*self.x_axes(), indexing="ij"), axis=-1)

    def node_coords(self):
        """(x, r) broadcast to full field shape: x ``(..., K+1, m)``, r ``(..., K+1)``."""
        x = self.x_nodes()
        x = np.broadcast_to(x[..., None, :], self.n + (self.K + 1, self.m))
        r = np.broadcast_to(self.radii, self.shape)
        return x, r

    def level_index(self, r: float, rtol: float = 1e-6) -> int:
        k = int(np.argmin(np.abs(self.radii - r)))
        if abs(self.radii[k] - r) > rtol * r:
            raise ConfigError(f"radius {r} is not a ladder level")
        return k

    def restrict(self, r_lo: float, r_hi: float | None = None) -> "SlabGrid":
        """Sub-slab between two existing levels (inclusive)."""
        k_lo = self.level_index(r_lo)
        k_hi = 0 if r_hi is None else self.level_index(r_hi)
        return SlabGrid(self.n, self.lattice, float(self.radii[k_hi]), self.q, k_lo - k_hi)

    def level_slice(self, r_lo: float, r_hi: float | None = None) -> slice:
        k_lo = self.level_index(r_lo)
        k_hi = 0 if r_hi is None else self.level_index(r_hi)
        return slice(k_hi, k_lo + 1)
