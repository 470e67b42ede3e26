"""Target distances, the comparison ODE ``s'' + mu s = 0`` and distance-Hessian bounds."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import bisect, root

from .errors import ComparisonCertificateError, DomainError, GeodesicError, HomotopyError
from .geometry import MetricSpec, christoffel_g

# ---------------------------------------------------------------- distances


def hyperbolic_distance(y1, rho1, y2, rho2):
    """Closed-form distance of the upper half-space model; ``y`` has the tangential axis last."""
    dy2 = np.sum((np.asarray(y1) - np.asarray(y2)) ** 2, axis=-1)
    arg = 1 + (dy2 + (rho1 - rho2) ** 2) / (2 * rho1 * rho2)
    return np.arccosh(np.maximum(arg, 1.0))


def _nearest_translate(dy, lattice):
    L = np.asarray(lattice)
    return dy - L * np.round(dy / L)


@dataclass(frozen=True)
class TargetDistance:
    """Distance on the target; ``mode`` is "exact" (flat boundary model) or "numeric"."""

    target: MetricSpec
    mode: str = "auto"
    steps: int = 50

    def __post_init__(self):
        if self.mode == "auto":
            object.__setattr__(self, "mode", "exact" if self.target.is_flat else "numeric")
        if self.mode not in ("exact", "numeric"):
            raise ValueError(f"unknown distance mode {self.mode!r}")
        if self.mode == "exact" and not self.target.is_flat:
            raise ValueError("closed-form distance needs the flat boundary model")

    def _pair(self, y1, r1, y2, r2):
        if self.mode == "exact":
            return float(hyperbolic_distance(y1, r1, y2, r2))
        a, b = np.append(y1, r1), np.append(y2, r2)
        if tuple(b) < tuple(a):  # canonical order makes the numeric distance exactly symmetric
            a, b = b, a
        return geodesic_distance(self.target, a, b, self.steps)

    def __call__(self, p, q, unwrapped: bool = True) -> float:
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p[-1] <= 0 or q[-1] <= 0:
            raise DomainError("radial components must be positive")
        y1, y2 = p[:-1], q[:-1]
        if unwrapped:
            return self._pair(y1, p[-1], y2, q[-1])
        dy = _nearest_translate(y2 - y1, self.target.lattice)
        if self.mode == "exact":
            return self._pair(y1, p[-1], y1 + dy, q[-1])
        # off-model the nearest translate need not minimize; shoot to the neighbours
        # whose flat-model distance is within 1 of the best one
        L = np.asarray(self.target.lattice)
        cands = [y1 + dy + (np.asarray(shift) - 1) * L for shift in np.ndindex(*(3,) * len(L))]
        proxy = np.array([hyperbolic_distance(y1, p[-1], c, q[-1]) for c in cands])
        return min(self._pair(y1, p[-1], c, q[-1]) for c, d in zip(cands, proxy) if d <= proxy.min() + 1.0)


def distance(td: TargetDistance, p, q, unwrapped: bool = True) -> float:
    return td(p, q, unwrapped)


def distance_field(td: TargetDistance, u, v, unwrapped: bool = True, check_homotopy: bool = True):
    """Pointwise distance between two map fields (MapField or component arrays).

    The unwrapped distance assumes the lifts stay within half the shortest
    target period of each other; this is asserted.
    """
    cu = np.asarray(getattr(u, "components", u), dtype=float)
    cv = np.asarray(getattr(v, "components", v), dtype=float)
    yu, yv = np.moveaxis(cu[:-1], 0, -1), np.moveaxis(cv[:-1], 0, -1)
    if not unwrapped:
        yv = yu + _nearest_translate(yv - yu, td.target.lattice)
    if td.mode == "exact":
        d = hyperbolic_distance(yu, cu[-1], yv, cv[-1])
    else:
        d = np.empty(cu.shape[1:])
        for idx in np.ndindex(*d.shape):
            d[idx] = td._pair(yu[idx], cu[-1][idx], yv[idx], cv[-1][idx])
    if unwrapped and check_homotopy and d.size and np.max(d) >= 0.5 * min(td.target.lattice):
        raise HomotopyError(f"sup of unwrapped distance {np.max(d):.3g} reaches half the shortest target period")
    return d


def _geodesic_rhs(spec, z, w):
    gam = christoffel_g(spec, z[None, :-1], z[None, -1])[0]
    return -np.einsum("kij,i,j->k", gam, w, w)


def _shoot(spec, p, w0, steps, track=False):
    z, w = p.copy(), w0.copy()
    h = 1.0 / steps
    lo, hi = z[-1], z[-1]
    for _ in range(steps):
        k1z, k1w = w, _geodesic_rhs(spec, z, w)
        k2z, k2w = w + 0.5 * h * k1w, _geodesic_rhs(spec, z + 0.5 * h * k1z, w + 0.5 * h * k1w)
        k3z, k3w = w + 0.5 * h * k2w, _geodesic_rhs(spec, z + 0.5 * h * k2z, w + 0.5 * h * k2w)
        k4z, k4w = w + h * k3w, _geodesic_rhs(spec, z + h * k3z, w + h * k3w)
        z = z + h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z)
        w = w + h / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
        lo, hi = min(lo, z[-1]), max(hi, z[-1])
    return (z, lo, hi) if track else z


def _model_velocity(p, q):
    """Initial velocity (unit-time parametrization) of the half-space model geodesic from p to q."""
    P = to_hyperboloid(p[:-1], np.asarray(p[-1]))
    Q = to_hyperboloid(q[:-1], np.asarray(q[-1]))
    c = max(-_minkowski(P, Q), 1.0)
    d = np.arccosh(c)
    if d < 1e-12:
        return q - p
    log = (Q - c * P) * d / np.sinh(d)
    n = len(p)
    J = np.stack([to_hyperboloid_tangent(p[:-1], np.asarray(p[-1]), e[:-1], np.asarray(e[-1]))
                  for e in np.eye(n)], axis=1)
    return np.linalg.lstsq(J, log, rcond=None)[0]


def geodesic_distance(spec: MetricSpec, p, q, steps: int = 50, tol: float = 1e-10) -> float:
    """Length of the chart geodesic from p to q found by Newton shooting on the initial velocity.

    Newton starts from the model geodesic's velocity, which is exact for the flat boundary model.
    """
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if np.allclose(p, q, rtol=0, atol=1e-14):
        return 0.0
    with np.errstate(all="ignore"):
        sol = root(lambda w: _shoot(spec, p, w, steps) - q, _model_velocity(p, q), method="hybr", tol=tol)
        end, lo, hi = _shoot(spec, p, sol.x, steps, track=True)
    if not sol.success or not np.all(np.isfinite(end)) or np.max(np.abs(end - q)) > 1e-8 * (1 + np.max(np.abs(q))):
        raise GeodesicError(f"shooting did not converge: {sol.message}")
    if lo <= 0 or hi >= spec.r_star:
        raise GeodesicError("geodesic leaves the target chart")
    h = spec.gbar(p[None, :-1], p[None, -1])[0] / p[-1] ** 2
    return float(np.sqrt(sol.x @ h @ sol.x))


# ---------------------------------------------------------------- comparison ODE


def _rk4_system(f, y0, t):
    y = np.empty((len(t),) + np.shape(y0))
    y[0] = y0
    for i in range(len(t) - 1):
        h = t[i + 1] - t[i]
        a, tm = t[i], t[i] + 0.5 * h
        k1 = f(a, y[i])
        k2 = f(tm, y[i] + 0.5 * h * k1)
        k3 = f(tm, y[i] + 0.5 * h * k2)
        k4 = f(t[i + 1], y[i] + h * k3)
        y[i + 1] = y[i] + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


@dataclass
class ComparisonODE:
    t: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    ds: np.ndarray
    q_riccati: np.ndarray   # Riccati solution, nan at t = 0

    @property
    def L(self) -> float:
        return float(self.t[-1])

    @property
    def q(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.t > 0, self.ds / self.s, np.inf)


def _as_profile(mu) -> Callable:
    if callable(mu):
        return lambda t: np.broadcast_to(np.asarray(mu(t), dtype=float), np.shape(t))
    value = float(mu)
    return lambda t: np.full(np.shape(t), value)


def piecewise_mu(L: float, tail: float = 2.0, value: float = -0.5):
    """mu = 0 on [0, L - tail], ``value`` on [L - tail, L]."""
    return lambda t: np.where(np.asarray(t) >= L - tail, value, 0.0)


def solve_comparison_ode(mu, L: float, steps: int = 2000) -> ComparisonODE:
    """RK4 solution of s'' + mu s = 0, s(0)=0, s'(0)=1, with the Riccati form q' = -mu - q^2 as a cross-check."""
    if not L > 0:
        raise DomainError("L must be positive")
    prof = _as_profile(mu)
    t = np.linspace(0.0, L, steps + 1)
    fine = np.linspace(0.0, L, 2 * steps + 1)
    if np.any(prof(fine) > 0):
        raise DomainError("comparison function mu must be nonpositive")
    mu_t = prof(t)

    def rhs(tt, y):
        return np.array([y[1], -float(prof(tt)) * y[0]])

    y = _rk4_system(rhs, np.array([0.0, 1.0]), t)
    s, ds = y[:, 0], y[:, 1]
    if np.any(s[1:] <= 0) or np.any(ds[1:] <= 0):
        raise DomainError("comparison solution lost positivity")
    # Riccati started off the singularity with q ~ 1/t - mu t/3 - mu^2 t^3/45
    q = np.full(len(t), np.nan)
    i0 = max(1, int(np.searchsorted(t, min(0.05, L / 10))))
    t0, m0 = t[i0], mu_t[0]
    qr = _rk4_system(lambda tt, v: np.array([-float(prof(tt)) - v[0] ** 2]),
                     np.array([1.0 / t0 - m0 * t0 / 3 - m0 ** 2 * t0 ** 3 / 45]), t[i0:])
    q[i0:] = qr[:, 0]
    return ComparisonODE(t, mu_t, s, ds, q)


@dataclass
class ComparisonCertificate:
    worst_first: float    # min over t of |Y(t)|/s(t) - |Y|'(0)
    worst_second: float   # min over t of <Y,Y'> - (s'/s)|Y|^2
    worst_t: float
    samples: int


def comparison_bounds(ode: ComparisonODE, Y_norm, Y_dot, dY0: float, rtol: float = 1e-8) -> ComparisonCertificate:
    """Check |Y|'(0) <= |Y(t)|/s(t) and <Y,Y'>(t) >= (s'/s)|Y|^2 on t > 0.

    ``Y_norm`` and ``Y_dot`` (= <Y, Y'>) are sampled on ``ode.t``.
    """
    Y_norm = np.asarray(Y_norm, dtype=float)
    Y_dot = np.asarray(Y_dot, dtype=float)
    sl = slice(1, None)
    first = Y_norm[sl] / ode.s[sl] - dY0
    second = Y_dot[sl] - ode.q[sl] * Y_norm[sl] ** 2
    scale1 = rtol * np.maximum(1.0, np.abs(dY0))
    scale2 = rtol * np.maximum(1.0, np.abs(Y_dot[sl]))
    bad = (first < -scale1) | (second < -scale2)
    k = int(np.argmin(np.minimum(first / scale1, second / scale2)))
    cert = ComparisonCertificate(float(first.min()), float(second.min()), float(ode.t[sl][k]), len(first))
    if np.any(bad):
        tb = float(ode.t[sl][np.argmax(bad)])
        raise ComparisonCertificateError(f"comparison inequality violated at t={tb:.4g}", tb)
    return cert


def jacobi_field_constant_curvature(kappa_sq: float, t, E: float = 1.0):
    """|Y| and <Y,Y'> for the normal Jacobi field with Y(0)=0, |Y'(0)|=E under curvature -kappa_sq."""
    t = np.asarray(t, dtype=float)
    if kappa_sq > 0:
        k = np.sqrt(kappa_sq)
        y, dy = np.sinh(k * t) / k, np.cosh(k * t)
    elif kappa_sq == 0:
        y, dy = t, np.ones_like(t)
    else:
        k = np.sqrt(-kappa_sq)
        y, dy = np.sin(k * t) / k, np.cos(k * t)
    return E * y, E * E * y * dy


# ---------------------------------------------------------------- Hessian bounds


def hessian_lower_bound_constants():
    """(c, l(diam)) with c = 1/4 and l = diam K + 4."""
    return 0.25, (lambda diam: diam + 4.0)


def _minkowski(a, b):
    return -a[..., 0] * b[..., 0] + np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def to_hyperboloid(y, rho):
    """Upper half-space point -> hyperboloid point (time coordinate first)."""
    y = np.asarray(y, dtype=float)
    s = np.sum(y * y, axis=-1) + rho ** 2
    x0 = (1 + s) / (2 * rho)
    xl = (1 - s) / (2 * rho)
    return np.concatenate([x0[..., None], y / rho[..., None], xl[..., None]], axis=-1)


def to_hyperboloid_tangent(y, rho, dy, drho):
    """Pushforward of a half-space tangent vector (dy, drho) to the hyperboloid."""
    y = np.asarray(y, dtype=float)
    s = np.sum(y * y, axis=-1) + rho ** 2
    ds = 2 * np.sum(y * dy, axis=-1) + 2 * rho * drho
    d0 = ds / (2 * rho) - (1 + s) * drho / (2 * rho ** 2)
    dl = -ds / (2 * rho) - (1 - s) * drho / (2 * rho ** 2)
    dmid = dy / rho[..., None] - y * (drho / rho ** 2)[..., None]
    return np.concatenate([d0[..., None], dmid, dl[..., None]], axis=-1)


def hyperbolic_distance_hessian(P, Q, a, b):
    """Hessian of d on H x H at (P, Q) applied to (a, b) twice; hyperboloid model, curvature -1.

    Uses (s'/s)(|a_n|^2 + |b_n|^2) - 2 <a_n, T b_n> / s with s = sinh, where
    ``_n`` denotes the part normal to the geodesic and T is parallel transport.
    """
    c = -_minkowski(P, Q)
    L = np.arccosh(np.maximum(c, 1.0))
    sh = np.sinh(L)
    # unit tangents of the geodesic at P (outgoing) and at Q (incoming)
    TP = (Q - c[..., None] * P) / sh[..., None]
    TQ = (c[..., None] * Q - P) / sh[..., None]
    an = a - _minkowski(a, TP)[..., None] * TP
    bn = b - _minkowski(b, TQ)[..., None] * TQ
    # parallel transport Q -> P along the geodesic
    Tb = bn + (_minkowski(bn, P) / (1 + c))[..., None] * (P + Q)
    return (np.cosh(L) / sh) * (_minkowski(an, an) + _minkowski(bn, bn)) - 2 * _minkowski(an, Tb) / sh


def hyperbolic_hessian_fd(P, Q, a, b, h: float = 1e-4):
    """Finite-difference oracle: second derivative of d along the geodesics through P, Q."""
    def geo(X, v, t):
        nv = np.sqrt(np.maximum(_minkowski(v, v), 0))[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            dirn = np.where(nv > 0, v / np.where(nv > 0, nv, 1), 0)
        return np.cosh(t * nv) * X + np.sinh(t * nv) * dirn

    def d(t):
        return np.arccosh(np.maximum(-_minkowski(geo(P, a, t), geo(Q, b, t)), 1.0))

    return (d(h) - 2 * d(0.0) + d(-h)) / (h * h)


def hessian_trace_bound_check(rng, samples: int = 1000, m: int = 1, min_distance: float = 4.0,
                              conformal_noise: float = 0.05):
    """Check tr(psi^* Hess d) >= c e(v) on random configurations of the exact model.

    ``v`` gets a near-conformal differential (scaled orthogonal plus noise);
    ``u`` gets an arbitrary one.  Returns (min ratio tr / e(v), min distance sampled).
    """
    n = m
    c, _ = hessian_lower_bound_constants()
    ratios, dists = [], []
    while len(ratios) < samples:
        y1 = rng.uniform(-3, 3, n)
        y2 = rng.uniform(-3, 3, n)
        r1, r2 = np.exp(rng.uniform(-6, 1, 2))
        P = to_hyperboloid(y1, np.asarray(r1))
        Q = to_hyperboloid(y2, np.asarray(r2))
        dist = float(np.arccosh(max(-_minkowski(P, Q), 1.0)))
        if dist < min_distance:
            continue
        lam = rng.uniform(0.2, 3.0)
        O, _ = np.linalg.qr(rng.normal(size=(n + 1, m + 1)))
        dv = lam * (O + conformal_noise * rng.normal(size=O.shape))
        du = rng.normal(size=(n + 1, m + 1)) * rng.uniform(0, 3)
        tr = 0.0
        ev = 0.0
        for i in range(m + 1):
            # half-space vectors are h-orthonormal frames scaled by rho
            a = to_hyperboloid_tangent(y1, np.asarray(r1), r1 * du[:-1, i], np.asarray(r1 * du[-1, i]))
            b = to_hyperboloid_tangent(y2, np.asarray(r2), r2 * dv[:-1, i], np.asarray(r2 * dv[-1, i]))
            tr += float(hyperbolic_distance_hessian(P, Q, a, b))
            ev += float(_minkowski(b, b))
        ratios.append(tr / (c * ev))
        dists.append(dist)
    return float(np.min(ratios)), float(np.min(dists))


# ---------------------------------------------------------------- final-proof scalars


def laplacian_bound_f(x):
    """f(x) = (cosh(x/2) - 1) / (2 sinh(x/2)) = tanh(x/4) / 2, with f(0) = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("f is defined for x >= 0")
    out = 0.5 * np.tanh(x / 4)
    return float(out) if out.ndim == 0 else out


def d_epsilon(eps: float, m: int, xtol: float = 1e-14) -> float:
    """Root of f(d) = 2 eps / m by bisection; +inf when 2 eps / m >= 1/2 (f < 1/2 everywhere)."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    target = 2 * eps / m
    if target >= 0.5:
        return float("inf")
    hi = 1.0
    while laplacian_bound_f(hi) < target:
        hi *= 2
    return float(bisect(lambda x: laplacian_bound_f(x) - target, 0.0, hi, xtol=xtol, rtol=4 * np.finfo(float).eps,
                        maxiter=500))


def kappa_bound(kappa: float, L: float) -> float:
    """kappa (cosh kappa L - 1) / sinh kappa L = kappa tanh(kappa L / 2)."""
    if not (kappa > 0 and L > 0):
        raise DomainError("kappa and L must be positive")
    return float(kappa * np.tanh(kappa * L / 2))
