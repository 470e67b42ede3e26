"""Conformally compact metrics in normal boundary coordinates.

Coordinates are ``(x^1, ..., x^m, r)``; array index ``m`` is the radial
("infinity") direction. The compactified metric is

    gbar = dr^2 + ghat(x) + r^p k(x),     g = r^{-2} gbar,

on the torus ``T^m`` with side lengths ``lattice``. All routines accept
batched points: ``x`` has shape ``(..., m)`` and ``r`` shape ``(...)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMetricError, DegeneratePlaneError, DomainError, ConfigError


def _parse_amp(text: str, prefix: str) -> float:
    try:
        return float(text[len(prefix):])
    except ValueError as exc:
        raise ConfigError(f"bad amplitude in {text!r}") from exc


@dataclass(frozen=True)
class MetricSpec:
    dim: int
    lattice: tuple
    boundary_metric: str = "flat"
    correction: str = "none"
    r_star: float = 1.0
    fd_step: float | None = None
    # derived
    conformal_amp: float = field(init=False, default=0.0)
    correction_amp: float = field(init=False, default=0.0)
    p: int = field(init=False, default=2)

    def __post_init__(self):
        lattice = tuple(float(v) for v in np.atleast_1d(self.lattice))
        object.__setattr__(self, "lattice", lattice)
        if self.dim < 1 or len(lattice) != self.dim:
            raise ConfigError(f"lattice {lattice} does not match dim={self.dim}")
        if min(lattice) <= 0:
            raise ConfigError("lattice side lengths must be positive")
        if self.r_star <= 0:
            raise ConfigError("r_star must be positive")

        bm = self.boundary_metric.strip()
        if bm == "flat":
            amp = 0.0
        elif bm.startswith("conformal:"):
            amp = _parse_amp(bm, "conformal:")
        else:
            raise ConfigError(f"unknown boundary_metric {bm!r}")
        object.__setattr__(self, "conformal_amp", amp)

        corr = self.correction.strip()
        if corr == "none":
            camp, p = 0.0, 2
        elif corr.startswith("quadratic:"):
            camp, p = _parse_amp(corr, "quadratic:"), 2
        elif corr.startswith("linear:"):
            camp, p = _parse_amp(corr, "linear:"), 1
        else:
            raise ConfigError(f"unknown correction {corr!r}")
        object.__setattr__(self, "correction_amp", camp)
        object.__setattr__(self, "p", p)

        if self.fd_step is None:
            # sampling lattice of 64 nodes per axis, step = spacing / 8
            object.__setattr__(self, "fd_step", min(lattice) / 64 / 8)
        self._check_positive()

    # -- closed-form fields ------------------------------------------------

    @property
    def is_flat(self) -> bool:
        return self.conformal_amp == 0.0 and self.correction_amp == 0.0

    @property
    def ndim(self) -> int:
        return self.dim + 1

    def _phase(self, x):
        return 2 * np.pi * x[..., 0] / self.lattice[0]

    def conformal_exponent(self, x):
        """lambda(x) with ghat = exp(2 lambda) delta; returns (lam, dlam, d2lam)."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        m = self.dim
        lam = np.zeros(shape)
        dlam = np.zeros(shape + (m,))
        d2lam = np.zeros(shape + (m, m))
        if self.conformal_amp:
            k = 2 * np.pi / self.lattice[0]
            th = self._phase(x)
            a = self.conformal_amp
            lam = a * np.sin(th)
            dlam[..., 0] = a * k * np.cos(th)
            d2lam[..., 0, 0] = -a * k * k * np.sin(th)
        return lam, dlam, d2lam

    def ghat(self, x):
        lam, _, _ = self.conformal_exponent(x)
        return np.exp(2 * lam)[..., None, None] * np.eye(self.dim)

    def volume_density(self, x):
        """sqrt(det ghat)."""
        lam, _, _ = self.conformal_exponent(x)
        return np.exp(self.dim * lam)

    def correction_field(self, x):
        """Scalar profile c(x) with k_ab = c(x) delta_ab (tangential only)."""
        x = np.asarray(x, dtype=float)
        if not self.correction_amp:
            return np.zeros(x.shape[:-1])
        return self.correction_amp * np.cos(self._phase(x))

    def gbar(self, x, r):
        x = np.asarray(x, dtype=float)
        r = np.asarray(r, dtype=float)
        m = self.dim
        lam, _, _ = self.conformal_exponent(x)
        tang = np.exp(2 * lam) + self.correction_field(x) * r ** self.p
        out = np.zeros(np.broadcast_shapes(x.shape[:-1], r.shape) + (m + 1, m + 1))
        idx = np.arange(m)
        out[..., idx, idx] = tang[..., None]
        out[..., m, m] = 1.0
        return out

    def dgbar(self, x, r):
        """d[..., l, i, j] = d_l gbar_ij by 4th-order central differences."""
        x = np.asarray(x, dtype=float)
        r = np.asarray(r, dtype=float)
        n = self.ndim
        shape = np.broadcast_shapes(x.shape[:-1], r.shape)
        out = np.zeros(shape + (n, n, n))
        if self.is_flat:
            return out
        h = self.fd_step
        for l in range(n):
            def ev(s):
                return self.gbar(*_shift(x, r, l, s, self.dim))
            out[..., l, :, :] = (-ev(2 * h) + 8 * ev(h) - 8 * ev(-h) + ev(-2 * h)) / (12 * h)
        return out

    def _check_positive(self, samples: int = 16):
        m = self.dim
        axes = [np.arange(samples) * L / samples for L in self.lattice]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        ev = np.linalg.eigvalsh(self.ghat(pts))
        if ev.min() <= 0:
            raise DegenerateMetricError(pts[np.argmin(ev.min(axis=-1))], "ghat not positive definite")
        for r in np.linspace(self.r_star / samples, self.r_star, samples):
            ev = np.linalg.eigvalsh(self.gbar(pts, np.full(len(pts), r)))
            if ev.min() <= 0:
                i = np.argmin(ev.min(axis=-1))
                raise DegenerateMetricError((tuple(pts[i]), r), "gbar not positive definite")

    def sampling_lattice(self, samples: int = 16):
        axes = [np.arange(samples) * L / samples for L in self.lattice]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)


# -- Christoffel symbols ---------------------------------------------------

def levi_civita(ginv, dg):
    """Gamma[..., k, i, j] from the inverse metric and d[..., l, i, j] = d_l g_ij."""
    # Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)
    t = (np.einsum("...ijl->...ijl", dg)
         + np.einsum("...jil->...ijl", dg)
         - np.einsum("...lij->...ijl", dg))
    return 0.5 * np.einsum("...kl,...ijl->...kij", ginv, t)


def x_tensor(gbar, gbar_inv, r):
    """The conformal correction X^k_ij between Christoffels of g = r^-2 gbar and gbar."""
    n = gbar.shape[-1]
    inf = n - 1
    eye = np.eye(n)
    e_inf = eye[inf]
    term = (np.einsum("ki,j->kij", eye, e_inf) + np.einsum("kj,i->kij", eye, e_inf))
    gk = gbar_inv[..., :, inf]
    full = term - np.einsum("...ij,...k->...kij", gbar, gk)
    return -full / np.asarray(r)[..., None, None, None]


@dataclass
class MetricJet:
    gbar: np.ndarray
    gbar_inv: np.ndarray
    christoffel_gbar: np.ndarray
    christoffel_g: np.ndarray
    x: np.ndarray
    r: np.ndarray

    @property
    def X(self):
        return self.christoffel_g - self.christoffel_gbar

    @property
    def g(self):
        return self.gbar / np.asarray(self.r)[..., None, None] ** 2

    @property
    def g_inv(self):
        return self.gbar_inv * np.asarray(self.r)[..., None, None] ** 2


def eval_metric_jet(spec: MetricSpec, x, r, check: bool = True) -> MetricJet:
    """Metric, inverse and both Christoffel arrays at (batched) points."""
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if check:
        if np.any(r <= 0) or np.any(r > spec.r_star * (1 + 1e-12)):
            raise DomainError(f"r must lie in (0, r_star={spec.r_star}]")
    gb = spec.gbar(x, r)
    if check:
        ev = np.linalg.eigvalsh(gb)
        if np.any(ev[..., 0] <= 0):
            bad = np.unravel_index(np.argmin(ev[..., 0]), ev.shape[:-1])
            raise DegenerateMetricError((x[bad] if x.ndim > 1 else x, r[bad] if r.ndim else r))
    n = spec.ndim
    if spec.is_flat:
        gi = np.broadcast_to(np.eye(n), gb.shape).copy()
        cb = np.zeros(gb.shape[:-2] + (n, n, n))
    else:
        gi = np.linalg.inv(gb)
        cb = levi_civita(gi, spec.dgbar(x, r))
    cg = cb + x_tensor(gb, gi, r)
    return MetricJet(gb, gi, cb, cg, x, r)


def christoffel_g(spec: MetricSpec, x, r):
    """Christoffels of g = r^-2 gbar, no domain checks (hot path)."""
    return eval_metric_jet(spec, x, r, check=False).christoffel_g


# -- curvature ---------------------------------------------------------------

def _shift(x, r, l, s, m):
    if l < m:
        xs = np.array(x, dtype=float, copy=True)
        xs[..., l] += s
        return xs, r
    return x, r + s


def _dchristoffel_bar(spec: MetricSpec, x, r):
    """dG[..., l, k, i, j] = d_l (gbar Gamma)^k_ij by central differences."""
    n = spec.ndim
    shape = np.broadcast_shapes(np.asarray(x).shape[:-1], np.asarray(r).shape)
    out = np.zeros(shape + (n, n, n, n))
    if spec.is_flat:
        return out
    h = spec.fd_step
    for l in range(n):
        def cb(s):
            xs, rs = _shift(x, r, l, s, spec.dim)
            gb = spec.gbar(xs, rs)
            return levi_civita(np.linalg.inv(gb), spec.dgbar(xs, rs))
        out[..., l, :, :, :] = (-cb(2 * h) + 8 * cb(h) - 8 * cb(-h) + cb(-2 * h)) / (12 * h)
    return out


def riemann_g(spec: MetricSpec, x, r):
    """R[..., a, b, c, d] = R^a_bcd of g.

    Derivatives of the X part are taken analytically so no 1/r factor is
    ever differenced.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    jet = eval_metric_jet(spec, x, r)
    n = spec.ndim
    inf = n - 1
    gb, gi = jet.gbar, jet.gbar_inv
    dg = spec.dgbar(x, r)
    eye = np.eye(n)
    e_inf = eye[inf]
    gk = gi[..., :, inf]
    # d_l gbar^{k inf} = -gbar^{ka} d_l gbar_ab gbar^{b inf}
    dgk = -np.einsum("...ka,...lab,...b->...lk", gi, dg, gk)
    base = np.einsum("ki,j->kij", eye, e_inf) + np.einsum("kj,i->kij", eye, e_inf)
    base = base - np.einsum("...ij,...k->...kij", gb, gk)
    rr = r[..., None, None, None, None]
    dX = (np.einsum("l,...kij->...lkij", e_inf, base) / rr ** 2
          + (np.einsum("...lij,...k->...lkij", dg, gk) + np.einsum("...ij,...lk->...lkij", gb, dgk)) / rr)
    dG = _dchristoffel_bar(spec, x, r) + dX
    G = jet.christoffel_g
    # R^a_bcd = d_c G^a_db - d_d G^a_cb + G^a_ce G^e_db - G^a_de G^e_cb
    R = (np.einsum("...cadb->...abcd", dG) - np.einsum("...dacb->...abcd", dG)
         + np.einsum("...ace,...edb->...abcd", G, G) - np.einsum("...ade,...ecb->...abcd", G, G))
    return R, jet


def sectional_curvature_probe(spec: MetricSpec, x, r, plane) -> float:
    """Sectional curvature of g on the plane spanned by two tangent vectors."""
    X, Y = (np.asarray(v, dtype=float) for v in plane)
    R, jet = riemann_g(spec, np.asarray(x, dtype=float), np.asarray(r, dtype=float))
    g = jet.g
    gb = jet.gbar
    # degeneracy judged on gbar-normalized vectors (scale free)
    nx = X / np.sqrt(X @ gb @ X)
    ny = Y / np.sqrt(Y @ gb @ Y)
    gram = (nx @ gb @ nx) * (ny @ gb @ ny) - (nx @ gb @ ny) ** 2
    if gram < 1e-10:
        raise DegeneratePlaneError(f"plane is degenerate (Gram determinant {gram:.3e})")
    RXYY = np.einsum("abcd,b,c,d->a", R, Y, X, Y)
    num = X @ g @ RXYY
    den = (X @ g @ X) * (Y @ g @ Y) - (X @ g @ Y) ** 2
    return float(num / den)


def ricci_g(spec: MetricSpec, x, r):
    R, jet = riemann_g(spec, x, r)
    return np.einsum("...abad->...bd", R), jet


def asymptotic_einstein_residual(spec: MetricSpec, r: float, samples: int = 16) -> float:
    """sup over the boundary sampling lattice of |Ric(g) + m g|_g at radius r."""
    pts = spec.sampling_lattice(samples)
    rr = np.full(len(pts), float(r))
    ric, jet = ricci_g(spec, pts, rr)
    T = ric + spec.dim * jet.g
    gi = jet.g_inv
    norm2 = np.einsum("...ac,...bd,...ab,...cd->...", gi, gi, T, T)
    return float(np.sqrt(np.max(np.abs(norm2))))
