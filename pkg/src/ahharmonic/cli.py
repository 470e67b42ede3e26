"""Config-driven experiment runner.

Usage: ``ahharmonic {kernel-check,build-approx,solve,exhaust,barrier,compare} --config PATH [--out DIR]``
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import AHError, ConfigError, ResolutionError

log = logging.getLogger("ahharmonic")

# Single source of truth for the physical/numerical defaults.
DEFAULTS = {
    "sigma": 0.2,            # explicit flow step safety factor
    "tol": 1e-6,             # sup |tau|_h stopping tolerance
    "q": 0.85,               # radial ladder ratio
    "blend_fraction": 0.25,  # blend width as a fraction of the injectivity radius
    "max_steps": 200000,
    "r_star": 1.0,
    "seed": 0,
}

SCHEMA = "ahharmonic/1"


def _floats(text):
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def _matrix(text):
    rows = [r for r in str(text).split(";") if r.strip()]
    return [[int(v) for v in r.split(",")] for r in rows]


@dataclass
class ExperimentConfig:
    source: object
    target: object
    boundary: object
    grid: object
    quad_n: int
    blend_width: float | None
    tol: float
    max_steps: int
    sigma: float
    delta_list: list
    seed: int
    out: str
    kernel_radii: list
    checkpoint_every: int
    text: str

    @property
    def hash(self) -> str:
        from .mapio import config_hash
        return config_hash(self.text)


def _metric(cp, section):
    from .geometry import MetricSpec
    if not cp.has_section(section):
        raise ConfigError(f"missing [{section}] section")
    sec = cp[section]
    if "lattice" not in sec:
        raise ConfigError(f"[{section}] needs a lattice")
    lattice = tuple(_floats(sec["lattice"]))
    dim = sec.getint("dim", len(lattice))
    return MetricSpec(dim, lattice, sec.get("boundary_metric", "flat"), sec.get("correction", "none"),
                      sec.getfloat("r_star", DEFAULTS["r_star"]))


def load_config(path) -> ExperimentConfig:
    """Parse and validate an INI experiment file; raises ConfigError / ResolutionError."""
    import numpy as np
    from .approx import BoundaryMap
    from .grid import SlabGrid

    text = Path(path).read_text()
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    try:
        source = _metric(cp, "source")
        target = _metric(cp, "target")
        if source.p < 2:
            raise ConfigError("source metrics need a correction of order r^2 or higher")
        mp = cp["map"] if cp.has_section("map") else {}
        A = _matrix(mp.get("A", ";".join(",".join("1" if i == j else "0" for j in range(source.dim))
                                          for i in range(target.dim))))
        b = _floats(mp.get("b", "0")) or [0.0]
        kind = mp.get("perturbation", "none")
        if kind not in ("none", "sin"):
            raise ConfigError(f"unknown perturbation {kind!r}")
        eps = float(mp.get("amplitude", 0.0)) if kind == "sin" else 0.0
        f = BoundaryMap(A, b, source.lattice, target.lattice, eps)
        f.check_rank(source.sampling_lattice())

        gs = cp["grid"] if cp.has_section("grid") else {}
        n = [int(v) for v in _floats(gs.get("n", "256"))]
        n = n * source.dim if len(n) == 1 else n
        r_min = float(gs.get("r_min", 0.0125))
        r_max = float(gs.get("r_max", 0.2))
        q = float(gs.get("q", DEFAULTS["q"]))
        if "levels" in gs:
            K = int(gs["levels"])
        else:
            K = max(2, int(round(np.log(r_min / r_max) / np.log(q))))
        grid = SlabGrid.geometric(n, source.lattice, r_min, r_max, K)
        need = max(8 * L / r_min for L in source.lattice)
        quad_n = int(gs.get("quad_n", 0)) or int(2 ** np.ceil(np.log2(need)))
        if quad_n < need:
            raise ResolutionError(f"quad_n={quad_n} below 8 L / r_min = {need:.1f}")
        bw = gs.get("blend_width")

        sv = cp["solver"] if cp.has_section("solver") else {}
        run = cp["run"] if cp.has_section("run") else {}
        deltas = _floats(run.get("delta_list", str(r_min)))
        if any(b2 >= a2 for a2, b2 in zip(deltas, deltas[1:])):
            raise ConfigError("delta_list must be strictly decreasing")
        if deltas and (deltas[-1] < r_min * (1 - 1e-9) or deltas[0] > r_max):
            raise ConfigError("delta_list outside the grid range")
        return ExperimentConfig(
            source, target, f, grid, quad_n, float(bw) if bw else None,
            float(sv.get("tol", DEFAULTS["tol"])), int(sv.get("max_steps", DEFAULTS["max_steps"])),
            float(sv.get("sigma", DEFAULTS["sigma"])), deltas, int(run.get("seed", DEFAULTS["seed"])),
            run.get("out", "out"), _floats(run.get("kernel_radii", "0.1,0.05,0.025")),
            int(run.get("checkpoint_every", 0)), text)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, AHError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc


def _ctx(cfg):
    from .kernel import ModifiedDistance, make_kernel_context
    bw = cfg.blend_width
    if bw is None:
        bw = DEFAULTS["blend_fraction"] * ModifiedDistance.for_spec(cfg.source).injectivity_radius
    return make_kernel_context(cfg.source, cfg.quad_n, bw)


def _grid_for_delta(cfg, delta):
    """Snap delta to the nearest ladder level."""
    import numpy as np
    radii = cfg.grid.radii
    k = int(np.argmin(np.abs(radii - delta)))
    return float(radii[k])


def cmd_kernel_check(cfg, out: Path):
    import numpy as np
    from .kernel import kernel_bounds_check, kernel_moments
    from .mapio import write_csv
    ctx = _ctx(cfg)
    ctx.check_resolution(min(cfg.kernel_radii))
    rng = np.random.default_rng(cfg.seed)
    m = cfg.source.dim
    L = np.asarray(cfg.source.lattice)
    rows = []
    for r in cfg.kernel_radii:
        x = np.zeros(m)
        I0, I1, I2 = kernel_moments(ctx, x, r)
        xs = rng.uniform(0, 1, (256, m)) * L
        xps = xs + rng.normal(0, 3 * r, (256, m))
        cg, cl = kernel_bounds_check(ctx, xs, np.full(256, r), xps)
        rows.append((r, I0, I1, I2, cg, cl))
    write_csv(out / "kernel_check.csv", SCHEMA + "/kernel", ("r", "I0", "I1", "I2", "C_grad", "C_lap"), rows, cfg.hash)
    return rows


def _build(cfg):
    from .approx import build_approximate_solution
    return build_approximate_solution(cfg.boundary, _ctx(cfg), cfg.grid, cfg.target)


def cmd_build_approx(cfg, out: Path):
    import numpy as np
    from .approx import boundary_energy_density
    from .mapio import write_csv, write_map
    from .tension import TensionReport, neumann_extract, rescaled_tension_report
    v = _build(cfg)
    write_map(out / "approx.ahhm", v)
    rep = rescaled_tension_report(v, cfg.source, cfg.target)
    write_csv(out / "tension_report.csv", SCHEMA + "/tension", TensionReport.columns, rep.rows(), cfg.hash)
    du, drho = neumann_extract(v)
    xs = cfg.grid.x_nodes().reshape(-1, cfg.source.dim)
    expect = np.sqrt(boundary_energy_density(cfg.boundary, cfg.source, cfg.target, xs) / cfg.source.dim)
    cols = tuple(f"x{i + 1}" for i in range(cfg.source.dim)) + tuple(
        f"du{a + 1}_dr" for a in range(du.shape[0])) + ("drho_dr", "sqrt_e_over_m")
    rows = [tuple(xs[k]) + tuple(du.reshape(du.shape[0], -1)[:, k]) + (drho.ravel()[k], expect[k])
            for k in range(xs.shape[0])]
    write_csv(out / "neumann.csv", SCHEMA + "/neumann", cols, rows, cfg.hash)
    return v, rep


def cmd_solve(cfg, out: Path, resume: str | None = None):
    from .mapio import read_map, write_csv, write_map
    from .solver import FlowState, flow_to_harmonic, restrict_map
    delta = _grid_for_delta(cfg, cfg.delta_list[-1])
    state = None
    if resume:
        u, meta = read_map(resume)
        if meta is None:
            raise ConfigError(f"{resume} carries no flow state")
        v = u
        state = FlowState(u, step=meta["step"], dt=meta["dt"], tension_sup=meta["tension_sup"],
                          rejected=meta["rejected"])
    else:
        v = restrict_map(_build(cfg), delta)
    ck = out / "checkpoint.ahhm"
    st = flow_to_harmonic(v, cfg.source, cfg.target, tol=cfg.tol, max_steps=cfg.max_steps, sigma=cfg.sigma,
                          state=state, checkpoint=lambda s: write_map(ck, s.u, s),
                          checkpoint_every=cfg.checkpoint_every)
    write_map(out / "solution.ahhm", st.u, st)
    write_csv(out / "flow_history.csv", SCHEMA + "/flow", ("step", "tension_sup", "energy_sup"),
              list(st.history), cfg.hash)
    return st


def cmd_exhaust(cfg, out: Path):
    from .mapio import write_csv
    from .solver import ExhaustionReport, run_exhaustion
    deltas = [_grid_for_delta(cfg, d) for d in cfg.delta_list]
    rep = run_exhaustion(cfg.boundary, cfg.source, cfg.target, deltas, cfg.tol, cfg.grid, ctx=_ctx(cfg),
                         max_steps=cfg.max_steps, sigma=cfg.sigma)
    write_csv(out / "exhaustion.csv", SCHEMA + "/exhaustion", ExhaustionReport.columns, rep.rows(), cfg.hash)
    rows = [(r.delta, float(rad), float(dt), float(e)) for r in rep.records if not r.failed
            for rad, dt, e in zip(r.radii, r.d_tilde_profile, r.energy_profile)]
    write_csv(out / "exhaustion_profiles.csv", SCHEMA + "/exhaustion-profile",
              ("delta", "r_level", "sup_d_tilde", "sup_energy_minus_m1"), rows, cfg.hash)
    return rep


def cmd_barrier(cfg, out: Path):
    from .barrier import BarrierFunction, solve_barrier
    from .mapio import write_csv
    b = solve_barrier(cfg.source, cfg.grid)
    write_csv(out / "barrier_certificate.csv", SCHEMA + "/barrier", BarrierFunction.columns,
              [b.certificate_row()], cfg.hash)
    return b


def cmd_compare(cfg, out: Path):
    import numpy as np
    from . import comparison as cmp
    from .mapio import write_csv
    rng = np.random.default_rng(cfg.seed)
    m = cfg.source.dim
    rows = []
    c, lfun = cmp.hessian_lower_bound_constants()
    rows += [("c", c), ("l_exact_model", lfun(0.0)), ("kappa_bound_half_L4", cmp.kappa_bound(0.5, 4.0))]
    for em in (1e-3, 1e-2, 0.1):
        rows.append((f"d_epsilon_eps_over_m_{em:g}", cmp.d_epsilon(em * m, m)))
    L = 6.0
    ode = cmp.solve_comparison_ode(cmp.piecewise_mu(L), L)
    rows += [("piecewise_q_L", float(ode.q[-1])), ("piecewise_s_L", float(ode.s[-1]))]
    ratio, dmin = cmp.hessian_trace_bound_check(rng, 1000, m=m)
    rows += [("hessian_trace_min_ratio", ratio), ("hessian_min_distance", dmin)]
    write_csv(out / "comparison.csv", SCHEMA + "/compare", ("quantity", "value"), rows, cfg.hash)
    return rows


COMMANDS = {
    "kernel-check": cmd_kernel_check,
    "build-approx": cmd_build_approx,
    "solve": cmd_solve,
    "exhaust": cmd_exhaust,
    "barrier": cmd_barrier,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="ahharmonic", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint file (solve only)")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            cmd_solve(cfg, out, args.resume)
        else:
            COMMANDS[args.command](cfg, out)
    except AHError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
