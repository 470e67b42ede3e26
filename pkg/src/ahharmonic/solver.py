"""Dirichlet problem for harmonic maps on truncated slabs by damped heat flow, and the exhaustion study."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .approx import BoundaryMap, MapField, build_approximate_solution
from .comparison import TargetDistance, distance_field
from .errors import AHError, ConfigError, FlowDivergenceError, HomotopyError
from .geometry import MetricSpec
from .grid import SlabGrid
from .kernel import KernelContext
from .tension import map_operator

log = logging.getLogger(__name__)

HISTORY = 1000


@dataclass
class FlowState:
    u: MapField
    step: int = 0
    dt: float = 0.0
    tension_sup: float = np.inf
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY))
    clamp_events: int = 0
    rejected: int = 0
    converged: bool = False


def stable_dt(grid: SlabGrid, source: MetricSpec, sigma: float = 0.2) -> float:
    """sigma / max over nodes of sum_i g^{ii} / spacing_i^2 (explicit-step bound)."""
    x, r = grid.node_coords()
    from .geometry import eval_metric_jet
    gi = eval_metric_jet(source, x, r).g_inv
    radii = grid.radii
    dr = np.abs(np.diff(radii))
    local = np.minimum(np.concatenate([dr, dr[-1:]]), np.concatenate([dr[:1], dr]))
    scale = gi[..., -1, -1] / local ** 2
    for a, h in enumerate(grid.spacing):
        scale = scale + gi[..., a, a] / h ** 2
    return sigma / float(np.max(scale))


def restrict_map(v: MapField, delta: float) -> MapField:
    """Restrict a map to the sub-slab ``delta <= r <= r_max``; ``delta`` must be a ladder level."""
    sl = v.grid.level_slice(delta)
    grid = v.grid.restrict(delta)
    return MapField(grid, v.components[..., sl].copy(), v.homotopy_tag, v.target_lattice)


def _interior_sup(op, u):
    tf = op.tension(u)
    en = op.energy(u, check=False)
    return tf, float(np.max(tf.norm[..., 1:-1])), float(np.max(en.e_g_h[..., 1:-1]))


def flow_to_harmonic(v: MapField, source: MetricSpec, target: MetricSpec, delta: float | None = None,
                     tol: float = 1e-6, max_steps: int = 200000, sigma: float = 0.2,
                     state: FlowState | None = None, checkpoint=None, checkpoint_every: int = 0) -> FlowState:
    """Explicit heat flow ``u <- u + dt tau(u)`` with walls held at v's values.

    The radial component is updated as ``rho * exp(dt tau^rho / rho)``.  A step
    that raises the interior sup of |tau|_h is rejected and dt is halved.
    ``state`` resumes a previous run; ``checkpoint(state)`` is called every
    ``checkpoint_every`` accepted steps.
    """
    if delta is not None and v.grid.r_min < delta * (1 - 1e-9):
        v = restrict_map(v, delta)
    elif delta is not None and v.grid.r_min > delta * (1 + 1e-9):
        raise ConfigError(f"slab inner wall {v.grid.r_min:.4g} lies above delta={delta:.4g}")
    if state is None:
        state = FlowState(v.copy(), dt=stable_dt(v.grid, source, sigma))
    if not np.isfinite(tol):
        state.converged = True
        return state
    op = map_operator(state.u.grid, source, target)
    u = state.u
    tf, sup, esup = _interior_sup(op, u)
    state.tension_sup = sup
    dt_floor = 1e-12 * state.dt
    while sup > tol:
        if state.step >= max_steps:
            raise FlowDivergenceError(f"no convergence in {max_steps} steps (sup|tau|={sup:.3e})",
                                      list(state.history))
        tau = tf.components[..., 1:-1]
        comps = u.components.copy()
        comps[:-1, ..., 1:-1] += state.dt * tau[:-1]
        rho = comps[-1, ..., 1:-1]
        comps[-1, ..., 1:-1] = rho * np.exp(state.dt * tau[-1] / rho)
        trial = u.replace(comps)
        tf_new, sup_new, esup_new = _interior_sup(op, trial)
        if not np.isfinite(sup_new):
            raise FlowDivergenceError("tension became non-finite", list(state.history))
        if sup_new > sup:
            state.dt *= 0.5
            state.rejected += 1
            if state.dt < dt_floor:
                raise FlowDivergenceError("step size collapsed", list(state.history))
            continue
        u, tf, sup, esup = trial, tf_new, sup_new, esup_new
        state.u, state.tension_sup = u, sup
        state.step += 1
        state.history.append((state.step, sup, esup))
        if checkpoint is not None and checkpoint_every and state.step % checkpoint_every == 0:
            checkpoint(state)
    state.converged = True
    log.info("flow converged in %d steps (sup|tau|=%.3e, %d rejected)", state.step, sup, state.rejected)
    return state


def level_profile(field_values, grid: SlabGrid):
    """Per-level sup over the tangential axes."""
    return np.max(np.abs(field_values), axis=tuple(range(grid.m)))


@dataclass
class ExhaustionRecord:
    delta: float
    iterations: int
    tension_sup: float
    sup_d: float
    sup_d_tilde: float
    energy_profile: np.ndarray
    d_tilde_profile: np.ndarray
    radii: np.ndarray
    failed: bool = False
    message: str = ""
    u: MapField | None = None


@dataclass
class ExhaustionReport:
    records: list

    columns = ("delta", "iterations", "tension_sup", "sup_d", "sup_d_tilde", "failed")

    @property
    def deltas(self):
        return [r.delta for r in self.records]

    @property
    def bound(self) -> float:
        vals = [r.sup_d_tilde for r in self.records if not r.failed]
        return max(vals) if vals else np.inf

    @property
    def stability(self) -> float:
        """Relative change of sup d~ over the last two deltas."""
        ok = [r.sup_d_tilde for r in self.records if not r.failed]
        if len(ok) < 2:
            return np.inf
        return abs(ok[-1] - ok[-2]) / max(abs(ok[-2]), 1e-300)

    def rows(self):
        return [(r.delta, r.iterations, r.tension_sup, r.sup_d, r.sup_d_tilde, int(r.failed)) for r in self.records]


def run_exhaustion(f: BoundaryMap, source: MetricSpec, target: MetricSpec, delta_list, tol: float,
                   grid: SlabGrid, ctx: KernelContext | None = None, v: MapField | None = None,
                   max_steps: int = 200000, sigma: float = 0.2, keep_maps: bool = False) -> ExhaustionReport:
    """Flow on B_delta for each delta in a strictly decreasing list and record distances to v."""
    deltas = [float(d) for d in delta_list]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError("delta list must be strictly decreasing")
    if grid.r_min > deltas[-1] * (1 + 1e-9):
        raise ConfigError("grid does not reach the smallest delta")
    if v is None:
        if ctx is None:
            raise ConfigError("need a kernel context or a prebuilt approximate map")
        v = build_approximate_solution(f, ctx, grid, target)
    td = TargetDistance(target)
    records = []
    for d in deltas:
        vd = restrict_map(v, d)
        try:
            st = flow_to_harmonic(vd, source, target, tol=tol, max_steps=max_steps, sigma=sigma)
        except AHError as exc:
            log.warning("delta=%g failed: %s", d, exc)
            records.append(ExhaustionRecord(d, -1, np.nan, np.nan, np.nan, np.array([]), np.array([]),
                                            vd.grid.radii, True, str(exc)))
            continue
        dq = distance_field(td, st.u, vd, unwrapped=False)
        du = distance_field(td, st.u, vd, unwrapped=True)
        en = map_operator(vd.grid, source, target).energy(st.u)
        m = source.dim
        records.append(ExhaustionRecord(
            d, st.step, st.tension_sup, float(dq.max()), float(du.max()),
            level_profile(en.e_g_h - (m + 1), vd.grid), level_profile(du, vd.grid), vd.grid.radii,
            u=st.u if keep_maps else None))
    return ExhaustionReport(records)


@dataclass
class UniquenessReport:
    pairwise: np.ndarray
    states: list

    @property
    def max_distance(self) -> float:
        return float(self.pairwise.max()) if self.pairwise.size else 0.0

    def within(self, threshold: float) -> bool:
        return self.max_distance <= threshold


def uniqueness_probe(source: MetricSpec, target: MetricSpec, seeds, tol: float = 1e-6,
                     max_steps: int = 200000, sigma: float = 0.2) -> UniquenessReport:
    """Flow every seed to tolerance and report pairwise sup d~ between the limits."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    ref = seeds[0]
    for s in seeds[1:]:
        if s.grid != ref.grid:
            raise ConfigError("seeds live on different grids")
        if not np.array_equal(s.homotopy_tag, ref.homotopy_tag):
            raise HomotopyError("seeds carry different homotopy classes")
        walls = (0, -1)
        if not all(np.allclose(s.components[..., w], ref.components[..., w], rtol=0, atol=1e-12) for w in walls):
            raise ConfigError("seeds carry different boundary data")
    states = [flow_to_harmonic(s, source, target, tol=tol, max_steps=max_steps, sigma=sigma) for s in seeds]
    td = TargetDistance(target)
    k = len(states)
    pw = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            pw[i, j] = pw[j, i] = float(distance_field(td, states[i].u, states[j].u).max())
    return UniquenessReport(pw, states)
