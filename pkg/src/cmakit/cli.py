"""Command-line front end.

Every command prints one JSON object on stdout and writes its artifacts
(``report.json``, field files, JSON-lines records, plot-data CSV) into the
configured output directory.

Exit codes: 0 success, 1 a verification or certificate check failed,
2 a solver did not converge, 3 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .expr import Expression
from .geometry import (DensitySpec, build_reference_forms, blowup_matrix, klt_discrepancy,
                       lp_norm_check, regularized_density)
from .grid import BoundaryData, GridSpec, build_domain, inward_band, load_field, save_field
from .pluripotential import (CapacityQuery, ConvergenceError, c0_certificate, capacity,
                             check_comparison, check_kolodziej_inequalities, degiorgi_bound,
                             extremal_function, sublevel_stats)
from .reports import dumps, emit_plot_data, write_json, write_jsonl
from .singular import PoleSpec, fit_pole_weight, solve_log_pole, verify_asymptotics
from .solver import (RightHandSide, SolveConfig, SolverError, continuity_path, newton_solve,
                     s_family_limit)

EXIT_OK, EXIT_CHECK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3

COMMANDS = {
    "solve": "Newton solve of the regularised equation at the last s of the schedule.",
    "continuation": "Continuity path in t at the last s of the schedule (zero boundary data).",
    "sfamily": "Continuity paths along the whole s schedule; sup|phi_s| uniformity check.",
    "capacity": "Capacity of K = {capacity.K <= 0} (envelope or brute force).",
    "extremal": "Relative extremal function of K and its support defect.",
    "compare": "Comparison principle check for the pair (compare.u, compare.v).",
    "stats": "Sublevel capacities and masses of the solution; Kolodziej inequalities.",
    "degiorgi": "Iteration-lemma certificate for sampled F(l).",
    "c0cert": "Uniform lower-bound certificate for every s in the schedule.",
    "poles": "Solutions with prescribed logarithmic poles over the delta schedule.",
    "asymptotics": "Pole asymptotics of stored fields (poles.fields).",
    "klt": "Discrepancy of the cone over the Fermat hypersurface {sum z_i^m = 0} in C^n.",
    "blowup-check": "Random semipositivity and Schur-determinant check of the blow-up matrix.",
}


class CheckFailed(Exception):
    pass


# -- construction from the configuration ------------------------------------------------

class Context:
    """Lazily built grid objects for one run."""

    def __init__(self, cfg: RunConfig, outdir: Path):
        self.cfg, self.outdir = cfg, outdir
        self._mask = self._forms = None

    def require(self, *sections):
        for sec in sections:
            if getattr(self.cfg, sec) is None:
                raise ConfigError(f"section [{sec}] is required for this command",
                                  {"error": "config", "field": sec, "message": "missing section"})

    @property
    def n(self) -> int:
        self.require("domain")
        return self.cfg.domain.n

    def expr(self, src: str) -> Expression:
        return Expression(src, self.n)

    @property
    def mask(self):
        if self._mask is None:
            d = self.cfg.domain
            self.require("domain")
            spec = GridSpec(d.n, d.N, d.L)
            band = inward_band(spec) if d.band == "inward" else float(d.band)
            self._mask = build_domain(spec, a=d.a, band=band)
        return self._mask

    @property
    def forms(self):
        if self._forms is None:
            f = self.cfg.forms
            psi1 = None if f.psi1 is None else self.mask.evaluate(self.expr(f.psi1))
            self._forms = build_reference_forms(self.mask, f.A, psi1)
        return self._forms

    def interior(self, src: Optional[str]):
        if src is None:
            return None
        return self.expr(src)(self.mask.interior_coords())

    def density(self) -> DensitySpec:
        d = self.cfg.density
        base = self.interior(d.base)
        if d.f is not None:
            base = base * np.exp(self.interior(d.f))
        return DensitySpec(base=base, w_E=self.interior(d.w_E), w_F=self.interior(d.w_F),
                           lam=float(d.lam), p=d.p, Q=d.Q)

    def solve_config(self) -> SolveConfig:
        return SolveConfig(**self.cfg.solver.model_dump())

    def zero_boundary(self):
        psi = self.mask.on_boundary(self.mask.evaluate(self.expr(self.cfg.boundary.psi)))
        if np.any(psi != 0):
            raise ConfigError("this command solves with zero boundary data; set boundary.psi = \"0\"")
        if self.cfg.density.lam:
            raise ConfigError("density.lam = 1 is supported by solve and poles only")

    def theta(self, which: str):
        if which == "zero":
            return None
        if which == "fs":
            return self.forms.theta
        if which == "omega":
            return self.forms.omega
        return self.forms.with_s(self.cfg.forms.s[-1]).theta_s

    def scrub(self, records):
        if not self.cfg.report.timing:
            for r in records:
                if "wall_ms" in r:
                    r["wall_ms"] = 0.0
        return records

    def field(self, name: str, values) -> str:
        path = self.outdir / name
        save_field(path, self.mask.spec, values, labels=self.mask.labels)
        return name

    def lp_summary(self, dens: DensitySpec, s: float) -> dict:
        val = lp_norm_check(regularized_density(dens, s), dens.p, self.mask)
        return {"p": dens.p, "integral": val, "Q": dens.Q, "ok": bool(val <= dens.Q)}


# -- commands -------------------------------------------------------------------------------

def cmd_solve(ctx: Context) -> dict:
    cfg = ctx.cfg
    s = cfg.forms.s[-1]
    forms = ctx.forms.with_s(s)
    dens = ctx.density()
    g = regularized_density(dens, s)
    psi = ctx.expr(cfg.boundary.psi)
    bc = BoundaryData.from_function(ctx.mask, psi)
    phi, rep = newton_solve(forms, RightHandSide(np.log(g), float(cfg.density.lam)), bc,
                            cfg=ctx.solve_config())
    vals = ctx.mask.on_interior(phi)
    rec = ctx.scrub([{"s": s, "t": 1.0, "iterations": rep.iterations, "residual": rep.residual,
                      "sup_phi": float(np.max(np.abs(vals))), "inf_phi": float(vals.min()),
                      "lambda_min": rep.lambda_min, "wall_ms": 1e3 * rep.wall_time}])
    write_jsonl(ctx.outdir / "records.jsonl", rec)
    out = {"record": rec[0], "converged": rep.converged, "message": rep.message,
           "field": ctx.field("phi.field", phi)}
    if not rep.converged:
        raise SolverError(f"Newton did not converge: {rep.message}")
    return out


def cmd_continuation(ctx: Context) -> dict:
    ctx.zero_boundary()
    s = ctx.cfg.forms.s[-1]
    state = continuity_path(ctx.forms, ctx.density(), s, ctx.cfg.forms.t, ctx.solve_config())
    recs = ctx.scrub(state.history)
    write_jsonl(ctx.outdir / "records.jsonl", recs)
    emit_plot_data(recs, "sfamily", ctx.outdir / "sfamily.csv")
    return {"s": s, "t": state.t, "records": recs, "field": ctx.field("phi.field", state.phi)}


def cmd_sfamily(ctx: Context) -> dict:
    ctx.zero_boundary()
    dens = ctx.density()
    phi, state, rep = s_family_limit(ctx.forms, dens, ctx.cfg.forms.s, ctx.solve_config(),
                                     ctx.cfg.forms.t)
    recs = ctx.scrub(state.history)
    write_jsonl(ctx.outdir / "records.jsonl", recs)
    emit_plot_data(recs, "sfamily", ctx.outdir / "sfamily.csv")
    lp = ctx.lp_summary(dens, ctx.cfg.forms.s[-1])
    out = {"s_values": rep.s_values, "sup_phi": rep.sup_phi, "inf_phi": rep.inf_phi,
           "differences": rep.differences, "uniform": rep.uniform,
           "growth_factor": rep.growth_factor, "lp": lp, "field": ctx.field("phi.field", phi)}
    out["passed"] = rep.uniform and lp["ok"]
    return out


def _K(ctx: Context):
    ctx.require("capacity")
    q = ctx.cfg.capacity
    K = ctx.mask.interior[ctx.interior(q.K) <= 0]
    return CapacityQuery(K, ctx.theta(q.theta), method=q.method), q


def cmd_capacity(ctx: Context) -> dict:
    query, q = _K(ctx)
    query.nodes(ctx.mask)
    if q.method == "bruteforce":
        val = capacity(query, ctx.mask, np.random.default_rng(ctx.cfg.seed), starts=q.starts)
    else:
        val = capacity(query, ctx.mask, tol=q.tol)
    return {"capacity": val, "method": q.method, "K_nodes": int(query.K.size)}


def cmd_extremal(ctx: Context) -> dict:
    query, q = _K(ctx)
    res = extremal_function(query, ctx.mask, tol=q.tol)
    bound = 20 * ctx.mask.h * res.capacity
    return {"capacity": res.capacity, "support_defect": res.support_defect,
            "support_bound": bound, "sweeps": res.sweeps, "psh_worst": res.psh_worst,
            "passed": bool(res.support_defect <= bound), "field": ctx.field("extremal.field", res.U)}


def cmd_compare(ctx: Context) -> dict:
    ctx.require("compare")
    c = ctx.cfg.compare
    u = ctx.mask.evaluate(ctx.expr(c.u))
    v = ctx.mask.evaluate(ctx.expr(c.v))
    theta = ctx.theta(c.theta)
    if theta is None:
        theta = np.zeros((ctx.mask.n_interior, ctx.n, ctx.n), dtype=complex)
    rep = check_comparison(u, v, theta, ctx.mask)
    out = rep.to_dict()
    return out


def _solution_stats(ctx: Context, phi, s):
    st = ctx.cfg.stats
    theta_s = ctx.forms.with_s(s).theta_s
    stats = sublevel_stats(phi, theta_s, st.levels.values(), ctx.mask)
    kol = check_kolodziej_inequalities(stats, st.t)
    return stats, kol


def cmd_stats(ctx: Context) -> dict:
    ctx.zero_boundary()
    s = ctx.cfg.forms.s[-1]
    state = continuity_path(ctx.forms, ctx.density(), s, ctx.cfg.forms.t, ctx.solve_config())
    stats, kol = _solution_stats(ctx, state.phi, s)
    emit_plot_data(stats, "sublevel", ctx.outdir / "sublevel.csv")
    write_json(ctx.outdir / "level_sets.json",
               {format(float(l), ".17g"): S for l, S in zip(stats.levels, stats.sets)})
    return {"s": s, "levels": len(stats.levels), "skipped": stats.skipped,
            "inf_phi": stats.inf_phi, "kolodziej": kol.to_dict(), "passed": kol.sublevel_ok,
            "field": ctx.field("phi.field", state.phi)}


def _samples(cfg) -> np.ndarray:
    d = cfg.degiorgi
    if d.samples is not None:
        return np.asarray(d.samples, dtype=float)
    l = d.levels.values()
    F = Expression(d.F, 1)(np.zeros((l.size, 1)), l=l)
    return np.column_stack([l, F])


def cmd_degiorgi(ctx: Context) -> dict:
    ctx.require("degiorgi")
    d = ctx.cfg.degiorgi
    try:
        cert = degiorgi_bound(_samples(ctx.cfg), d.A, d.alpha)
    except ValueError as exc:
        raise ConfigError(f"degiorgi: {exc}") from None
    out = cert.to_dict()
    out["passed"] = cert.certified
    return out


def cmd_c0cert(ctx: Context) -> dict:
    ctx.zero_boundary()
    dens = ctx.density()
    st = ctx.cfg.stats
    rows, prev, ok = [], None, True
    for s in ctx.cfg.forms.s:
        state = continuity_path(ctx.forms, dens, s, ctx.cfg.forms.t, ctx.solve_config(),
                                warm_start=prev)
        prev = state.phi
        stats, kol = _solution_stats(ctx, state.phi, s)
        A_fit = st.A_fit if st.A_fit is not None else max(kol.C_fit, 1e-300) ** (1.0 / ctx.n)
        cert = c0_certificate(stats, A_fit, st.alpha)
        emit_plot_data(stats, "sublevel", ctx.outdir / f"sublevel_s{format(s, '.6g')}.csv")
        rows.append({"s": s, "A_fit": A_fit, "certificate": cert.to_dict(),
                     "kolodziej_ok": kol.sublevel_ok})
        ok &= cert.bound_holds
    lp = ctx.lp_summary(dens, ctx.cfg.forms.s[-1])
    return {"certificates": rows, "lp": lp, "passed": bool(ok and lp["ok"])}


def _pole_spec(ctx: Context) -> PoleSpec:
    ctx.require("poles")
    p = ctx.cfg.poles
    n = ctx.n
    pts = np.array([[c[2 * k] + 1j * c[2 * k + 1] for k in range(n)] for c in p.points])
    psi = ctx.expr(p.psi)
    logd = ctx.expr(p.log_density)
    return PoleSpec(poles=pts, weights=p.weights, psi=psi,
                    log_density=lambda z, delta: logd(z, delta=delta), deltas=p.deltas,
                    lam=float(p.lam), density_exponent=p.density_exponent)


def _asym_output(ctx, spec, phis, asym) -> dict:
    emit_plot_data(asym, "annulus", ctx.outdir / "annulus.csv")
    weights = {format(d, ".6g"): [fit_pole_weight(phis[d], spec, ctx.mask, d, pole=j)
                                  for j in range(len(spec.poles))] for d in asym.deltas}
    return {"asymptotics": asym.to_dict(), "fitted_weights": weights,
            "passed": bool(asym.bounded)}


def cmd_poles(ctx: Context) -> dict:
    spec = _pole_spec(ctx)
    p = ctx.cfg.poles
    sol = solve_log_pole(ctx.mask, spec, ctx.solve_config(), osc_bound=p.osc_bound,
                         growth_const=p.growth_const)
    out = _asym_output(ctx, spec, sol.phi, sol.asymptotics)
    out["fields"] = {format(d, ".6g"): ctx.field(f"phi_delta{format(d, '.6g')}.field", f)
                     for d, f in sol.phi.items()}
    out["solves"] = ctx.scrub([{"delta": d, **r.to_dict()} for d, r in sol.reports.items()])
    return out


def cmd_asymptotics(ctx: Context) -> dict:
    spec = _pole_spec(ctx)
    p = ctx.cfg.poles
    if not p.fields or len(p.fields) != len(p.deltas):
        raise ConfigError("poles.fields must list one field file per delta")
    phis = {}
    for d, name in zip(p.deltas, p.fields):
        try:
            gs, vals, _ = load_field(name)
        except OSError as exc:
            raise ConfigError(f"cannot read field file {name}: {exc}") from None
        if gs != ctx.mask.spec:
            raise ConfigError(f"field file {name} does not match the configured grid")
        phis[d] = vals
    asym = verify_asymptotics(phis, spec, ctx.mask, osc_bound=p.osc_bound,
                              growth_const=p.growth_const)
    return _asym_output(ctx, spec, phis, asym)


def run_klt(n: int, m: int) -> dict:
    data = klt_discrepancy(n, m)
    return {"a": data.a, "klt": data.is_klt}


def run_blowup_check(samples: int, n: int, seed: int) -> dict:
    if n < 2:
        raise ConfigError("blow-up check needs n >= 2")
    rng = np.random.default_rng(seed)
    worst, worst_rel = np.inf, 0.0
    for _ in range(samples):
        z = complex(*rng.standard_normal(2))
        u = rng.standard_normal(n - 1) + 1j * rng.standard_normal(n - 1)
        M = blowup_matrix(z, u)
        worst = min(worst, float(np.linalg.eigvalsh(M)[0]))
        expected = 0.5 * abs(z) ** (2 * (n - 1))
        worst_rel = max(worst_rel, abs(np.linalg.det(M).real - expected) / expected)
    return {"samples": samples, "n": n, "seed": seed, "lambda_min": worst,
            "schur_rel_error": worst_rel,
            "passed": bool(worst >= -1e-12 and worst_rel <= 1e-12)}


HANDLERS = {
    "solve": cmd_solve, "continuation": cmd_continuation, "sfamily": cmd_sfamily,
    "capacity": cmd_capacity, "extremal": cmd_extremal, "compare": cmd_compare,
    "stats": cmd_stats, "degiorgi": cmd_degiorgi, "c0cert": cmd_c0cert,
    "poles": cmd_poles, "asymptotics": cmd_asymptotics,
}


def run(config_path, command: str, output: Optional[str] = None) -> tuple:
    """Run a configured command; returns ``(exit_code, result_dict)``."""
    try:
        cfg = load_config(config_path)
        if cfg.command is not None and cfg.command != command:
            raise ConfigError(f"config is for command {cfg.command!r}, not {command!r}")
        outdir = Path(output or cfg.output)
        outdir.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg, outdir)
        result = HANDLERS[command](ctx)
    except ConfigError as exc:
        return EXIT_CONFIG, {**exc.diagnostic, "exit_code": EXIT_CONFIG}
    except (SolverError, ConvergenceError) as exc:
        return EXIT_SOLVER, {"error": "solver", "type": type(exc).__name__,
                             "message": str(exc), "exit_code": EXIT_SOLVER}
    except ValueError as exc:
        return EXIT_CONFIG, {"error": "config", "type": type(exc).__name__,
                             "message": str(exc), "exit_code": EXIT_CONFIG}
    code = EXIT_OK if result.get("passed", True) else EXIT_CHECK
    report = {"command": command, "seed": cfg.seed, "exit_code": code, "result": result}
    write_json(outdir / "report.json", report)
    return code, report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cmakit",
        description="Dirichlet problems for the complex Monge-Ampere equation on grids. "
                    "Exit codes: 0 success, 1 check failed, 2 solver non-convergence, 3 config error.")
    p.add_argument("--version", action="version", version=f"cmakit {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="log progress to stderr (-v info, -vv debug)")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name, doc in COMMANDS.items():
        sp = sub.add_parser(name, help=doc, description=doc)
        if name == "klt":
            sp.add_argument("--n", type=int, required=True, help="ambient dimension n >= 2")
            sp.add_argument("--m", type=int, required=True, help="degree m >= 2")
        elif name == "blowup-check":
            sp.add_argument("--samples", type=int, default=10_000, help="number of random samples")
            sp.add_argument("--n", type=int, default=2, help="complex dimension n >= 2")
            sp.add_argument("--seed", type=int, default=0, help="random seed")
        else:
            sp.add_argument("config", help="TOML configuration file")
            sp.add_argument("-o", "--output", help="output directory (overrides the config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "klt":
        try:
            code, out = EXIT_OK, run_klt(args.n, args.m)
        except ValueError as exc:
            code, out = EXIT_CONFIG, {"error": "config", "message": str(exc), "exit_code": EXIT_CONFIG}
    elif args.command == "blowup-check":
        try:
            out = run_blowup_check(args.samples, args.n, args.seed)
            code = EXIT_OK if out["passed"] else EXIT_CHECK
        except ValueError as exc:
            code, out = EXIT_CONFIG, {"error": "config", "message": str(exc), "exit_code": EXIT_CONFIG}
    else:
        code, out = run(args.config, args.command, args.output)
    print(dumps(out))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
