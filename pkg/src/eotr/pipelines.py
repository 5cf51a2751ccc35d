"""Named experiment pipelines run by the command line tool.

Every pipeline takes an :class:`ExperimentConfig` and an output directory,
writes its CSV files there and returns a :class:`PipelineOutcome` whose
``metrics`` dictionary is what ``[[assert]]`` entries refer to.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .blocks import (alexandrov_scaling_check, block_approximation, block_bound_check,
                     entropy_dimension_fit, grid_entropy, grid_partition)
from .costs import lipschitz_estimate
from .exact_ot import brute_force_oracle, min_entropy_optimal_plan, solve_exact
from .gap import (_golden, brenier_map_1d, gap_field, gap_inequality_check, laplace_floor,
                  laplace_log_integral, laplace_slope_fit, map_lipschitz_estimate,
                  resolvent_detachment_check, stability_metrics)
from .rates import (Instance, SweepTable, debiased_sweep, default_config,
                    fit_rate, shape_violations, sweep)
from .sinkhorn import SinkhornConfig, derivative_check, entropic_cost_sweep, solve_sinkhorn

__all__ = ["PipelineOutcome", "run_pipeline", "RUNNERS"]


@dataclass
class PipelineOutcome:
    metrics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    converged: bool = True


def _map(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _solver(cfg, eps=1.0) -> SinkhornConfig:
    return replace(default_config(eps), **cfg.solver)


def _instance(cfg) -> Instance:
    tgt = cfg.target
    return Instance(cfg.cost, cfg.source.density, cfg.source.n,
                    None if tgt is None else tgt.density,
                    None if tgt is None else tgt.n, name=cfg.name)


def _box(mu):
    return mu.points.min(axis=0), mu.points.max(axis=0)


def _sweep_metrics(table: SweepTable, out: PipelineOutcome):
    dec, dd = shape_violations(table)
    eps = table.epsilon
    out.metrics.update({
        "sweep.rows": float(len(table)),
        "sweep.all_converged": float(table.all_converged),
        "sweep.min_gap": float(np.min(table.gap)),
        "sweep.max_decrease": dec,
        "sweep.max_second_difference": dd,
        "sweep.min_excess_over_log2eps": float(np.min(table.v_eps + eps * np.log(2 * eps))),
    })
    out.converged = out.converged and table.all_converged


def _fit_metrics(fit, out: PipelineOutcome, out_dir: Path):
    _write_rows(out_dir / "fit.csv",
                ["a", "b", "r_squared", "window_lo", "window_hi", "residual_max", "n_points"],
                [[fit.a, fit.b, fit.r_squared, fit.window[0], fit.window[1], fit.residual_max,
                  fit.n_points]])
    out.files.append("fit.csv")
    out.metrics.update({"fit.a": fit.a, "fit.b": fit.b, "fit.abs_a": abs(fit.a),
                        "fit.r_squared": fit.r_squared, "fit.residual_max": fit.residual_max})


def run_sweep(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    table = sweep(_instance(cfg), cfg.epsilon, _solver(cfg))
    table.to_csv(out_dir / "results.csv")
    out.files.append("results.csv")
    _sweep_metrics(table, out)
    return out, table


def run_fit(cfg, out_dir, jobs=1):
    out, table = run_sweep(cfg, out_dir, jobs)
    window = cfg.options.get("window")
    _fit_metrics(fit_rate(table, window), out, out_dir)
    return out


def run_debiased(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    table = debiased_sweep(_instance(cfg), cfg.epsilon, _solver(cfg), jobs=jobs)
    table.to_csv(out_dir / "results.csv")
    out.files.append("results.csv")
    _sweep_metrics(table, out)
    _fit_metrics(fit_rate(table, cfg.options.get("window")), out, out_dir)
    return out


def run_gap_audit(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    opt = cfg.options
    inst = _instance(cfg)
    mu, nu = inst.measures()
    C = inst.cost_matrix()
    sol = solve_exact(C, mu, nu)
    gap = gap_field(C, sol.duals)
    audit = []
    c = cfg.cost
    if c.is_c2:
        rep = gap_inequality_check(gap, c, mu, nu, r=float(opt.get("r", 0.2)),
                                   trials=int(opt.get("trials", 10000)), rng_seed=cfg.seed,
                                   base_points=int(opt.get("base_points", 8)),
                                   box_minus=_box(mu), box_plus=_box(nu))
        audit.append(["gap_inequality", rep.trials, rep.violations, rep.worst_margin,
                      f"kappa={rep.kappa!r} r={rep.r!r}"])
        audit.append(["graph_bound", rep.graph_pairs, rep.graph_violations, math.nan, ""])
        out.metrics.update({"gap.violations": float(rep.violations),
                            "gap.worst_margin": rep.worst_margin, "gap.kappa": rep.kappa,
                            "gap.graph_violations": float(rep.graph_violations)})
    floor = float(opt.get("laplace_floor", max(laplace_floor(c, mu), laplace_floor(c, nu))))
    lap_eps = np.geomspace(float(opt.get("laplace_min", max(floor, 1e-4))),
                           float(opt.get("laplace_max", 0.1)), int(opt.get("laplace_count", 12)))
    lap = laplace_slope_fit(gap, mu, nu, lap_eps, floor=floor)
    _write_rows(out_dir / "laplace.csv", ["epsilon", "log_integral"],
                [[float(e), float(v)] for e, v in zip(lap.epsilons, lap.log_values)])
    _write_rows(out_dir / "fit.csv", ["slope", "intercept", "window_lo", "window_hi",
                                      "residual_max"],
                [[lap.slope, lap.intercept, lap.window[0], lap.window[1], lap.residual_max]])
    out.files += ["laplace.csv", "fit.csv"]
    out.metrics.update({"laplace.slope": lap.slope, "laplace.intercept": lap.intercept,
                        "laplace.empirical_m": max(lap.intercept, 0.0)})
    if cfg.epsilon is not None:
        table = _table(_entropic_results(cfg, C, mu, nu), sol.v0)
        table.to_csv(out_dir / "results.csv")
        out.files.append("results.csv")
        _sweep_metrics(table, out)
        margins = [v - (sol.v0 - e * laplace_log_integral(gap, mu, nu, e))
                   for e, v in zip(table.epsilon, table.v_eps)]
        worst = float(min(margins))
        audit.append(["dual_lower_bound", len(margins), int(sum(m < -1e-6 for m in margins)),
                      worst, ""])
        out.metrics["chain.worst_margin"] = worst
    if c.kind == "quadratic" and c.dim == 1:
        rep = resolvent_detachment_check(gap, mu, nu, int(opt.get("resolvent_samples", 1000)),
                                         rng_seed=cfg.seed)
        audit.append(["resolvent_detachment", rep.samples, rep.violations, rep.worst_margin, ""])
        out.metrics["resolvent.violations"] = float(rep.violations)
    _write_rows(out_dir / "audit.csv", ["check", "samples", "violations", "worst_margin", "note"],
                audit)
    out.files.append("audit.csv")
    return out


def _entropic_results(cfg, C, mu, nu):
    """Warm-started solves along the configured ladder, largest temperature first."""
    ladder = np.sort(cfg.epsilon)[::-1]
    return entropic_cost_sweep(C, mu, nu, ladder, _solver(cfg, float(ladder[0])))


def _table(results, v0):
    return SweepTable(np.array([r.epsilon for r in results]),
                      np.array([r.v_eps for r in results]), float(v0),
                      np.array([r.entropy for r in results]),
                      np.array([r.iterations for r in results], dtype=int),
                      np.array([r.residual for r in results]),
                      np.array([r.converged for r in results], dtype=bool))


def run_dim(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    opt = cfg.options
    ladder = np.geomspace(float(opt.get("max", 0.5)), float(opt.get("min", 0.01)),
                          int(opt.get("count", 12)))
    labels = list(cfg.marginals)
    profiles = _map(lambda lab: entropy_dimension_fit(cfg.marginals[lab].build(), ladder),
                    labels, jobs)
    rows, fits = [], []
    for lab, prof in zip(labels, profiles):
        lo, hi = prof.fit_window
        for k, (d, h) in enumerate(zip(prof.deltas, prof.H_values)):
            rows.append([lab, float(d), float(h), int(lo <= k < hi)])
        fits.append([lab, prof.fitted_dim, prof.intercept, float(prof.deltas[hi - 1]),
                     float(prof.deltas[lo]), prof.residual])
        out.metrics[f"dim.{lab}"] = prof.fitted_dim
    _write_rows(out_dir / "profile.csv", ["measure", "delta", "H", "in_window"], rows)
    _write_rows(out_dir / "fit.csv", ["measure", "fitted_dim", "intercept", "window_lo",
                                      "window_hi", "residual"], fits)
    out.files += ["profile.csv", "fit.csv"]
    return out


def run_blocks_audit(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    inst = _instance(cfg)
    mu, nu = inst.measures()
    C = inst.cost_matrix()
    sol = solve_exact(C, mu, nu)
    gamma0 = sol.coupling
    c_lip = lipschitz_estimate(cfg.cost, _box(mu), _box(nu))
    results = _entropic_results(cfg, C, mu, nu)
    table = _table(results, sol.v0)
    table.to_csv(out_dir / "results.csv")
    out.files.append("results.csv")
    _sweep_metrics(table, out)

    def audit_one(res):
        delta = eps = res.epsilon
        pm, pp = grid_partition(mu, delta), grid_partition(nu, delta)
        gd = block_approximation(gamma0, pm, pp)
        rep = block_bound_check(C, gamma0, gd, c_lip, delta, eps, v_eps=res.v_eps)
        H = grid_entropy(nu, delta)
        return [eps, delta, rep.marginal_error, rep.entropy_delta, H,
                rep.entropy_delta - H, rep.cost0, rep.cost_delta, rep.cost_slack,
                rep.v_eps, rep.entropic_slack]

    rows = _map(audit_one, results, jobs)
    _write_rows(out_dir / "audit.csv",
                ["epsilon", "delta", "marginal_error", "entropy_block", "H_delta",
                 "entropy_excess", "cost0", "cost_block", "cost_slack", "v_eps",
                 "entropic_slack"], rows)
    out.files.append("audit.csv")
    R = np.array(rows, dtype=float)
    out.metrics.update({"blocks.lipschitz": c_lip,
                        "blocks.max_marginal_error": float(R[:, 2].max()),
                        "blocks.max_entropy_excess": float(R[:, 5].max()),
                        "blocks.min_cost_slack": float(R[:, 8].min()),
                        "blocks.min_entropic_slack": float(R[:, 10].min())})
    return out


def run_stability(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    opt = cfg.options
    inst = _instance(cfg)
    mu, nu = inst.measures()
    if cfg.cost.kind != "quadratic" or cfg.cost.dim != 1:
        raise ValueError("the stability pipeline needs the quadratic cost on the line")
    C = inst.cost_matrix()
    sol = solve_exact(C, mu, nu)
    T = brenier_map_1d(mu, nu)
    M = float(opt.get("M", map_lipschitz_estimate(T)))
    K = float(opt.get("K", 5.0))
    results = _entropic_results(cfg, C, mu, nu)
    table = _table(results, sol.v0)
    table.to_csv(out_dir / "results.csv")
    out.files.append("results.csv")
    _sweep_metrics(table, out)
    rows = []
    for res in results:
        e = res.epsilon
        m = stability_metrics(res.plan, T, mu)
        ratio = m.map_mse / (M * (e * math.log(1 / e) + K * e))
        rows.append([e, m.map_mse, m.bary_mse, ratio, int(m.jensen_holds)])
    rep = resolvent_detachment_check(gap_field(C, sol.duals), mu, nu,
                                     int(opt.get("resolvent_samples", 1000)), rng_seed=cfg.seed)
    _write_rows(out_dir / "audit.csv", ["epsilon", "map_mse", "bary_mse", "ratio", "jensen"],
                rows)
    out.files.append("audit.csv")
    R = np.array(rows, dtype=float)
    out.metrics.update({"stability.M": M, "stability.max_ratio": float(R[:, 3].max()),
                        "stability.jensen_failures": float(np.sum(R[:, 4] == 0)),
                        "resolvent.violations": float(rep.violations),
                        "resolvent.worst_margin": rep.worst_margin})
    return out


def random_instance(rng, n, m=None):
    """Cost matrix with U(0, 1) entries and random positive weights."""
    m = n if m is None else m
    C = rng.random((n, m))
    a = rng.random(n) + 0.1
    b = rng.random(m) + 0.1
    return C, a / a.sum(), b / b.sum()


def run_derivative(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    opt = cfg.options
    rng = np.random.default_rng(cfg.seed)
    size = int(opt.get("size", 6))
    instances = [random_instance(rng, size) for _ in range(int(opt.get("instances", 5)))]
    eps_list = [float(e) for e in opt.get("eps", [0.2, 0.5, 1.0])]
    h = float(opt.get("h", 1e-3))
    small = float(opt.get("small_eps", 1e-4))

    def one(k):
        C, a, b = instances[k]
        rows = []
        for e in eps_list:
            chk = derivative_check(C, a, b, e, h)
            rows.append([k, "derivative", e, chk.fd, chk.ent, chk.gap / (1 + chk.ent)])
        v0 = solve_exact(C, a, b).v0
        star = min_entropy_optimal_plan(C, a, b, v0=v0)
        res = solve_sinkhorn(C, a, b, SinkhornConfig(small, tol=1e-14, max_iter=200000,
                                                      eps_scaling=0.5))
        slope = (res.v_eps - v0) / small
        ent = star.entropy()
        rows.append([k, "taylor", small, slope, ent, abs(slope - ent) / max(ent, 1e-300)])
        return rows

    rows = [r for block in _map(one, range(len(instances)), jobs) for r in block]
    _write_rows(out_dir / "audit.csv", ["instance", "check", "epsilon", "observed", "expected",
                                        "scaled_error"], rows)
    out.files.append("audit.csv")
    d = [r[5] for r in rows if r[1] == "derivative"]
    t = [r[5] for r in rows if r[1] == "taylor"]
    out.metrics.update({"derivative.max_scaled_gap": float(max(d)),
                        "derivative.max_taylor_rel_error": float(max(t))})
    return out


def two_point_plan(C, a, b, eps, tol=1e-13):
    """Entropic plan of a 2 x 2 problem by golden-section search on its free entry."""
    C = np.asarray(C, dtype=float)

    def plan(t):
        return np.array([[t, a[0] - t], [b[0] - t, 1 - a[0] - b[0] + t]])

    def objective(t):
        P = plan(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(P > 0, P * np.log(P / np.outer(a, b)), 0.0)
        return float(np.sum(C * P) + eps * np.sum(ent))

    lo, hi = max(0.0, a[0] + b[0] - 1), min(a[0], b[0])
    t = _golden(objective, lo, hi, tol)
    return plan(t), objective(t)


def run_oracle(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    opt = cfg.options
    rng = np.random.default_rng(cfg.seed)
    rows = []
    worst_exact = 0.0
    for k in range(int(opt.get("instances", 50))):
        n = int(rng.integers(int(opt.get("min_n", 2)), int(opt.get("max_n", 6)) + 1))
        C = rng.random((n, n))
        w = np.full(n, 1.0 / n)
        v = solve_exact(C, w, w).v0
        ref = brute_force_oracle(C)
        worst_exact = max(worst_exact, abs(v - ref))
        rows.append([k, "exact", n, v, ref, abs(v - ref)])
    worst_sk = 0.0
    C2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    half = np.array([0.5, 0.5])
    for e in [float(x) for x in opt.get("eps", [0.1, 0.5, 1.0])]:
        P, val = two_point_plan(C2, half, half, e)
        res = solve_sinkhorn(C2, half, half, SinkhornConfig(e, tol=1e-14, max_iter=100000))
        err = max(float(np.max(np.abs(res.plan.matrix - P))), abs(res.v_eps - val))
        worst_sk = max(worst_sk, err)
        rows.append([len(rows), "sinkhorn-2x2", e, res.v_eps, val, err])
    _write_rows(out_dir / "audit.csv", ["case", "check", "size_or_eps", "observed", "oracle",
                                        "error"], rows)
    out.files.append("audit.csv")
    out.metrics.update({"oracle.max_exact_error": worst_exact,
                        "oracle.max_sinkhorn_error": worst_sk})
    return out


_FUNCTIONS = {
    "abs": (np.abs, np.sign),
    "half-square": (lambda x: 0.5 * x * x, lambda x: x),
    "affine": (lambda x: 2.0 * x + 1.0, lambda x: np.full_like(x, 2.0)),
}


def run_alexandrov(cfg, out_dir, jobs=1):
    out = PipelineOutcome()
    opt = cfg.options
    N = int(opt.get("points", 10000))
    h = 2.0 / N
    x = -1.0 + (np.arange(N) + 0.5) * h
    radii = np.geomspace(float(opt.get("r_min", 4 * h)), float(opt.get("r_max", 0.1)),
                         int(opt.get("count", 8)))
    rows = []
    for name in opt.get("functions", ["abs", "half-square"]):
        if name not in _FUNCTIONS:
            raise ValueError(f"unknown function {name!r}; expected one of {sorted(_FUNCTIONS)}")
        f, df = _FUNCTIONS[name]
        fit = alexandrov_scaling_check(x, f(x), radii, slopes=df(x))
        for r, L in zip(fit.radii, fit.L):
            rows.append([name, float(r), float(L), fit.exponent, int(fit.exact_zero)])
        out.metrics[f"alexandrov.{name}.exponent"] = fit.exponent
        out.metrics[f"alexandrov.{name}.exact_zero"] = float(fit.exact_zero)
    _write_rows(out_dir / "audit.csv", ["function", "r", "L", "exponent", "exact_zero"], rows)
    out.files.append("audit.csv")
    return out


RUNNERS = {
    "sweep": lambda cfg, d, jobs: run_sweep(cfg, d, jobs)[0],
    "fit": run_fit,
    "debiased": run_debiased,
    "gap-audit": run_gap_audit,
    "dim": run_dim,
    "blocks-audit": run_blocks_audit,
    "stability": run_stability,
    "derivative": run_derivative,
    "oracle": run_oracle,
    "alexandrov": run_alexandrov,
}


def run_pipeline(cfg, out_dir, jobs: int = 1) -> PipelineOutcome:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.pipeline](cfg, out_dir, jobs)
