import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from ahharmonic.approx import BoundaryMap, MapField, build_approximate_solution
from ahharmonic.errors import ChartOverflowError, ResolutionError
from ahharmonic.geometry import MetricSpec
from ahharmonic.grid import SlabGrid
from ahharmonic.kernel import make_kernel_context
from ahharmonic.tension import (Stencil, energy_density, log_weights, neumann_extract, rescaled_tension_report,
                                taylor_weights, tension)

TWO_PI = 2 * np.pi
S1 = MetricSpec(1, (TWO_PI,))
S2 = MetricSpec(2, (TWO_PI,) * 2)


def identity(grid):
    x, r = grid.node_coords()
    comps = np.concatenate([np.moveaxis(x, -1, 0), r[None]])
    return MapField(grid, comps, np.eye(grid.m, dtype=int))


def hyperbolic_tension_oracle(U, P):
    """Symbolic tension of (x, r) -> (U, P) between half-plane models, radial slot last."""
    x, r = sp.symbols("x r")
    y, rho = sp.symbols("y rho")
    src = [x, r]
    tgt = [y, rho]

    def christoffel(coords, g):
        gi = g.inv()
        return [[[sp.simplify(sum(gi[k, l] * (sp.diff(g[j, l], coords[i]) + sp.diff(g[i, l], coords[j])
                                              - sp.diff(g[i, j], coords[l])) for l in range(2)) / 2)
                  for j in range(2)] for i in range(2)] for k in range(2)]
    g = sp.diag(1 / r ** 2, 1 / r ** 2)
    h = sp.diag(1 / rho ** 2, 1 / rho ** 2)
    Gg, Gh = christoffel(src, g), christoffel(tgt, h)
    gi = g.inv()
    u = [U, P]
    du = [[sp.diff(u[a], c) for c in src] for a in range(2)]
    out = []
    for c in range(2):
        t = 0
        for i in range(2):
            for j in range(2):
                term = sp.diff(u[c], src[i], src[j]) - sum(Gg[k][i][j] * du[c][k] for k in range(2))
                term += sum(Gh[c][a][b].subs({y: U, rho: P}) * du[a][i] * du[b][j]
                            for a in range(2) for b in range(2))
                t += gi[i, j] * term
        out.append(sp.lambdify((x, r), sp.simplify(t), "numpy"))
    return out


def test_taylor_weights_exact_on_quadratics():
    nodes = np.array([0.3, 0.5, 0.8])
    w1, w2 = taylor_weights(nodes, 0.5)
    for p, d1, d2 in [(lambda t: 1 + 0 * t, 0, 0), (lambda t: t, 1, 0), (lambda t: t ** 2, 1.0, 2.0)]:
        assert w1 @ p(nodes) == pytest.approx(d1, abs=1e-12)
        assert w2 @ p(nodes) == pytest.approx(d2, abs=1e-12)


def test_log_weights_exact_on_log():
    nodes = np.array([0.3, 0.5, 0.8])
    w1, w2 = log_weights(nodes, 0.5)
    assert w1 @ np.log(nodes) == pytest.approx(2.0)
    assert w2 @ np.log(nodes) == pytest.approx(-4.0)
    assert w1 @ nodes == pytest.approx(1.0) and w2 @ nodes == pytest.approx(0.0, abs=1e-12)


def test_stencil_seam_shift():
    grid = SlabGrid.geometric(32, (TWO_PI,), 0.1, 0.5, 6)
    x, r = grid.node_coords()
    f = (x[..., 0] + np.sin(x[..., 0]))[None]
    d1, d2 = Stencil(grid).jet(f, [np.array([TWO_PI])])
    assert np.max(np.abs(d1[0, 0] - (1 + np.cos(x[..., 0])))) < 0.01
    assert np.max(np.abs(d2[0, 0, 0] + np.sin(x[..., 0]))) < 0.01


@pytest.mark.parametrize("spec", [S1, S2])
def test_identity_is_harmonic(spec):
    grid = SlabGrid.geometric((16,) * spec.dim, spec.lattice, 0.01, 0.5, 20)
    u = identity(grid)
    tf = tension(u, spec, spec)
    assert np.max(tf.norm[..., 1:-1]) <= 1e-6
    e = energy_density(u, spec, spec).e_g_h
    np.testing.assert_allclose(e, spec.dim + 1, atol=1e-8)
    rep = rescaled_tension_report(u, spec, spec)
    assert max(rep.sup_rescaled_tan.max(), rep.sup_rescaled_nor.max()) <= 1e-6


def test_identity_neumann():
    grid = SlabGrid.geometric(16, (TWO_PI,), 0.01, 0.5, 20)
    du, drho = neumann_extract(identity(grid))
    np.testing.assert_allclose(du, 0, atol=1e-12)
    np.testing.assert_allclose(drho, 1, atol=1e-12)
    with pytest.raises(ResolutionError):
        neumann_extract(identity(SlabGrid.geometric(16, (TWO_PI,), 0.05, 0.5, 4)))


@pytest.mark.parametrize("c", [0.5, 0.8, 1.5, 2.0])
def test_radial_scaling_sign(c):
    T = MetricSpec(1, (TWO_PI,), r_star=10.0)
    grid = SlabGrid.geometric(16, (TWO_PI,), 0.01, 0.4, 20)
    u = identity(grid)
    u = u.replace(np.stack([u.components[0], c * u.components[1]]))
    tau = tension(u, S1, T).components[1][..., 1:-1]
    assert np.all(np.sign(tau) == np.sign((1 - c * c) * c))


def test_chart_overflow():
    grid = SlabGrid.geometric(16, (TWO_PI,), 0.01, 0.5, 10)
    u = identity(grid)
    u = u.replace(np.stack([u.components[0], 3 * u.components[1]]))
    with pytest.raises(ChartOverflowError):
        tension(u, S1, S1)


def test_constant_map_energy_zero():
    grid = SlabGrid.geometric(16, (TWO_PI,), 0.01, 0.5, 10)
    comps = np.stack([np.full(grid.shape, 1.0), np.full(grid.shape, 0.3)])
    u = MapField(grid, comps, [[0]])
    np.testing.assert_allclose(energy_density(u, S1, S1).e_g_h, 0, atol=1e-14)


def _test_map(grid):
    x, r = grid.node_coords()
    x = x[..., 0]
    return MapField(grid, np.stack([x + 0.2 * r * np.sin(x), r * (1 + 0.1 * np.cos(x) + 0.3 * r)]), [[1]])


def test_tension_second_order_against_symbolic_oracle():
    xs, rs = sp.symbols("x r")
    oracle = hyperbolic_tension_oracle(xs + 0.2 * rs * sp.sin(xs), rs * (1 + 0.1 * sp.cos(xs) + 0.3 * rs))
    errs = []
    for N, K in ((32, 16), (64, 32)):
        grid = SlabGrid.geometric(N, (TWO_PI,), 0.1, 0.4, K)
        tf = tension(_test_map(grid), S1, MetricSpec(1, (TWO_PI,), r_star=10.0))
        x, r = grid.node_coords()
        step = N // 32
        sl = (slice(None, None, step), slice(step, -1, step))
        err = max(np.max(np.abs(tf.components[c][sl] - oracle[c](x[..., 0], r)[sl])) for c in range(2))
        errs.append(err)
    assert 3.0 <= errs[0] / errs[1] <= 5.0


@given(seed=st.integers(0, 2 ** 16))
@settings(max_examples=10, deadline=None)
def test_norm_and_energy_consistency(seed):
    rng = np.random.default_rng(seed)
    grid = SlabGrid.geometric(16, (TWO_PI,), 0.05, 0.4, 8)
    x, r = grid.node_coords()
    a, b = rng.uniform(-0.2, 0.2, 2)
    u = MapField(grid, np.stack([x[..., 0] + a * r * np.sin(x[..., 0]), r * (1 + b * np.cos(x[..., 0]))]), [[1]])
    T = MetricSpec(1, (TWO_PI,), r_star=10.0)
    tf = tension(u, S1, T)
    hn = (tf.components[0] ** 2 + tf.components[1] ** 2) / u.rho ** 2
    np.testing.assert_allclose(tf.norm ** 2, hn, rtol=1e-10, atol=1e-14)
    en = energy_density(u, S1, T)
    assert np.all(en.e_g_h >= 0) and np.all(en.e_bar >= 0)
    np.testing.assert_allclose(en.e_g_h, (r / u.rho) ** 2 * en.e_bar, rtol=1e-8)


@pytest.fixture(scope="module")
def built_v():
    grid = SlabGrid.octaves(128, (TWO_PI,), 0.0125, 4, 16)
    ctx = make_kernel_context(S1, 4096)
    f = BoundaryMap([[1]], [0.0], (TWO_PI,), (TWO_PI,), eps=0.2)
    return build_approximate_solution(f, ctx, grid, S1, return_extension=True)


def test_built_v_profiles_decrease(built_v):
    v, _ = built_v
    rep = rescaled_tension_report(v, S1, S1)
    levels = (0.1, 0.05, 0.025)
    for col in ("sup_tension_h", "sup_energy_minus_m1"):
        vals = [rep.at(r)[col] for r in levels]
        assert vals[0] > vals[1] > vals[2], col


def test_neumann_violation_is_detected(built_v):
    v, ext = built_v
    x, r = v.grid.node_coords()
    bad = v.replace(np.stack([v.components[0], r * (ext.w[-1] + 0.3)]))
    good = rescaled_tension_report(v, S1, S1)
    rep = rescaled_tension_report(bad, S1, S1)
    vals = [rep.at(rr)["sup_rescaled_nor"] for rr in (0.1, 0.05, 0.025)]
    assert not (vals[0] > vals[1] > vals[2])
    assert rep.at(0.025)["sup_rescaled_nor"] > 10 * good.at(0.025)["sup_rescaled_nor"]
