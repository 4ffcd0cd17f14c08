"""Forward solves, reconstruction pipeline, stability experiment and
random-matrix suites from one TOML configuration.

Usage::

    bcmtor {forward,pipeline,stability,lemmas} [--config PATH] [--out DIR]
           [--seed N] [--threads N] [--svg]

Exit codes: 0 success, 1 numerical or suite failure, 2 configuration error.
The environment variable ``BCMTOR_OUT`` overrides ``--out``.  ``--threads``
sets the worker pool for independent stability levels; BLAS always runs
single-threaded so that outputs are byte-identical for any thread count.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .config import RunConfig, load_config
from .errors import ConfigError, GridMismatchError, NumericalError
from .stability import (StabilityConfig, cholesky_agreement, lemma_polar_suite,
                        lemma_regularity_suite, run_stability_experiment,
                        theorem_tf_stability_suite)
from .tor import ControlFamily, run_pipeline
from .wavesim import (TimeSignal, assemble_response, discrete_energy, flux_trace,
                      neumann_trace, solve_wave)

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


def _control(kind, T):
    """Named control and its analytic derivative."""
    if kind == "sin2":
        w = np.pi / T
        return (lambda t: np.sin(w * t) ** 2), (lambda t: w * np.sin(2 * w * t))
    if kind == "sin2_half":
        w = np.pi / (2 * T)
        return (lambda t: np.sin(w * t) ** 2), (lambda t: w * np.sin(2 * w * t))
    return (lambda t: t**2), (lambda t: 2 * t)


def cmd_forward(cfg: RunConfig, out: Path, svg=False, workers=1):
    grid = cfg.make_grid()
    q = cfg.potential.build(grid)
    horizon = cfg.forward.windows * grid.horizon
    fn, dfn = _control(cfg.forward.control, grid.horizon)
    f = TimeSignal.from_function(fn, grid, horizon)
    u = solve_wave(q, f, grid, horizon)
    t = f.t
    io.write_table(out / "trace.csv", {
        "t": t, "f": f.samples, "f_prime": dfn(t),
        "neumann": neumann_trace(u).samples, "flux": flux_trace(u).samples,
    })
    io.write_table(out / "snapshot.csv", {"x": grid.x, "u": u.final})
    summary = {
        "control": cfg.forward.control,
        "horizon": horizon,
        "n_x": grid.n_x,
        "max_abs_u": float(np.max(np.abs(u.u))),
        "energy_final": discrete_energy(u, q, u.u.shape[0] - 2),
        "potential_smoothness_proxy": q.smoothness_proxy,
    }
    io.write_json(out / "forward.json", summary)
    if svg:
        io.atomic_write(out / "snapshot.svg", io.svg_line_plot(
            [("u(x, t_end)", grid.x, u.final)], "final wave", "x", "u"))
        io.atomic_write(out / "trace.svg", io.svg_line_plot(
            [("neumann", t, neumann_trace(u).samples), ("f'", t, dfn(t))],
            "boundary trace", "t", ""))
    return EXIT_OK


def cmd_pipeline(cfg: RunConfig, out: Path, svg=False, workers=1):
    grid = cfg.make_grid()
    q = cfg.potential.build(grid)
    R = assemble_response(q, grid)
    family = ControlFamily(grid.horizon, cfg.family.m)
    res = run_pipeline(R, family, cfg.pipeline)
    fact = res.factorization
    for name, A in (("R2T", R), ("C", res.C), ("sqrtC", fact.sqrtC),
                    ("F", fact.F), ("V", res.V)):
        io.write_matrix(out / f"{name}.csv", A)
    q_true = np.interp(res.q_hat.x, grid.x, q.values)
    io.write_table(out / "q_hat.csv",
                   {"x": res.q_hat.x, "q_hat": res.q_hat.values, "q_true": q_true})
    nrm = np.linalg.norm(q_true)
    err = np.linalg.norm(res.q_hat.values - q_true)
    diag = dict(res.diagnostics)
    diag.update({
        "q_max_abs_error": float(np.max(np.abs(res.q_hat.values - q_true))),
        "q_rel_l2_error": float(err / nrm) if nrm > 0 else None,
        "diagonal_converged": fact.diagonal.converged,
        "n_x": grid.n_x,
        "horizon": grid.horizon,
    })
    io.write_json(out / "diagnostics.json", diag)
    if svg:
        io.atomic_write(out / "q.svg", io.svg_line_plot(
            [("q", res.q_hat.x, q_true), ("q_hat", res.q_hat.x, res.q_hat.values)],
            "potential", "x", "q"))
        t = np.arange(1, grid.n_t + 1) * grid.dt
        x = np.arange(grid.n_t) * grid.h
        waves = family.values(t)
        series = [(f"V f_{i + 1}", x, res.V.matrix @ waves[i])
                  for i in range(min(3, family.m))]
        io.atomic_write(out / "waves.svg", io.svg_line_plot(
            series, "wave images on the screen", "tau", ""))
    return EXIT_OK


def cmd_stability(cfg: RunConfig, out: Path, svg=False, workers=1):
    grid = cfg.make_grid()
    scfg = StabilityConfig(
        grid=grid,
        base=cfg.potential.build(grid),
        perturbation=cfg.perturbation.build(grid),
        levels=cfg.stability.levels,
        decay=cfg.stability.decay,
        options=cfg.pipeline,
        family=ControlFamily(grid.horizon, cfg.family.m),
        seed=cfg.seed,
        inject_irregularity=cfg.stability.inject_irregularity,
    )
    rep = run_stability_experiment(scfg, workers)
    io.atomic_write(out / "stability.csv", rep.to_csv())
    io.write_json(out / "stability_diagnostics.json", {
        "branch": rep.branch,
        "checks": rep.checks,
        "failures": rep.failures,
        "smoothness_proxy": rep.smoothness,
        "levels": rep.diagnostics,
    })
    if svg:
        j = rep.column("j")
        series = [(c, j, np.log10(np.maximum(rep.column(c), 1e-300)))
                  for c in ("C_diff_norm", "rho", "q_diff_hm2")]
        io.atomic_write(out / "stability.svg", io.svg_line_plot(
            series, "convergence along q_j", "j", "log10"))
    return EXIT_OK


CLOSED_FORM_TOL = 1e-12
CHOLESKY_TOL = 1e-8


def cmd_lemmas(cfg: RunConfig, out: Path, svg=False, workers=1):
    lc = cfg.lemmas
    suites = [
        lemma_polar_suite(lc.dim, lc.levels, cfg.seed, zero_e=lc.zero_e),
        lemma_regularity_suite(lc.dim, lc.levels, cfg.seed),
        theorem_tf_stability_suite(lc.dim, lc.levels, cfg.seed),
    ]
    for s in suites:
        io.atomic_write(out / f"{s.name}.csv", s.to_csv())
    chol = cholesky_agreement(lc.cholesky_n, lc.cholesky_count, cfg.seed)
    closed = suites[0].checks["closed_form_2x2_error"]
    summary = {s.name: {"passed": s.passed, **s.checks} for s in suites}
    summary["cholesky_agreement"] = {"max_rel_error": chol, "passed": chol <= CHOLESKY_TOL}
    summary["closed_form_2x2"] = {"error": closed, "passed": closed <= CLOSED_FORM_TOL}
    io.write_json(out / "lemmas.json", summary)
    ok = all(s.passed for s in suites) and chol <= CHOLESKY_TOL and closed <= CLOSED_FORM_TOL
    for s in suites:
        print(f"{s.name}: {'PASS' if s.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {
    "forward": cmd_forward,
    "pipeline": cmd_pipeline,
    "stability": cmd_stability,
    "lemmas": cmd_lemmas,
}


def build_parser():
    p = argparse.ArgumentParser(prog="bcmtor", description=" ".join(__doc__.split("\n\n")[0].split()))
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, default=0,
                   help="worker threads for independent levels (0 = one per CPU)")
    p.add_argument("--svg", action="store_true", help="also write SVG plots")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads < 0:
            raise ConfigError("--threads must be >= 0")
        out = os.environ.get("BCMTOR_OUT") or args.out or cfg.output.dir
        out = Path(out)
        svg = args.svg or cfg.output.svg
        workers = args.threads or os.cpu_count() or 1
        # BLAS is pinned to one thread: blocked multithreaded kernels change
        # the summation order, and outputs must not depend on --threads
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](cfg, out, svg, workers)
    except (ConfigError, GridMismatchError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
