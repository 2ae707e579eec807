"""Command-line harness.

Three subcommands:

    poisonlab validate  --config cfg.json
    poisonlab run       --config cfg.json --out DIR
    poisonlab decompose --config cfg.json [--out DIR]

``run`` dispatches on the config's mode (theory, erm, eigen_sweep,
population) and writes CSV results plus a JSON manifest into the
output directory.  Sweep CSVs share one fixed schema (CSV_COLUMNS);
population mode has its own documented schema.  Exit codes: 0 success,
2 configuration or validation error, 3 runtime or numerical failure.
A failed run removes whatever partial output files it created.

CSV floats are written with repr-faithful precision (%.17g), so two
runs of the same config produce byte-identical CSVs.
"""

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy

from . import covariance as cov
from . import metrics, population, simulate
from .config import ConfigError, build_covariance, build_problem, load_config
from .fixed_point import SolverConfig, solve_self_consistent, theory_predictions

try:
    from importlib.metadata import version as _pkg_version

    _VERSION = _pkg_version("poisonlab")
except Exception:  # pragma: no cover - metadata missing in odd installs
    _VERSION = "unknown"

CSV_COLUMNS = [
    "alpha", "phi", "kappa", "rep",
    "h_mu_theory", "h_v_theory", "sigma_sq", "zeta",
    "clean_acc_theory", "asr_theory",
    "h_mu_emp", "h_v_emp", "clean_acc_emp", "asr_emp",
    "converged", "iters",
]

POPULATION_COLUMNS = [
    "alpha", "a", "b", "grad_norm", "iters", "converged",
    "a_benign", "distance_to_benign", "one_step_gradient",
]

DECOMPOSE_COLUMNS = ["component", "description", "value", "share_percent"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def _write_csv(path: str, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


class _RunStats:
    """Convergence and geometry diagnostics accumulated over a run."""

    def __init__(self):
        self.all_converged = True
        self.max_residual = 0.0
        self.max_iters = 0
        self.max_abs_v_r_mu = 0.0

    def record_state(self, state, spec):
        self.all_converged = self.all_converged and state.converged
        self.max_residual = max(self.max_residual, state.residual)
        self.max_iters = max(self.max_iters, state.iters)
        params = cov.ResolventParams(spec.lam, state.tau)
        overlap = abs(cov.resolvent_quad(spec.cov, params, spec.v, spec.mu))
        self.max_abs_v_r_mu = max(self.max_abs_v_r_mu, overlap)

    def as_dict(self):
        return {
            "all_converged": self.all_converged,
            "max_residual": self.max_residual,
            "max_iters": self.max_iters,
            "max_abs_v_R_mu": self.max_abs_v_r_mu,
        }


def _solver_config(cfg) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(
        gh_nodes=s["gh_nodes"], tol=s["tol"], damping=s["damping"], max_iter=s["max_iter"]
    )


def _theory_rows(cfg, stats, covariance_override=None):
    solver_cfg = _solver_config(cfg)
    rows = []
    for alpha in cfg["alpha_grid"]:
        spec = build_problem(cfg, alpha)
        if covariance_override is not None:
            import dataclasses

            spec = dataclasses.replace(spec, cov=covariance_override)
        state = solve_self_consistent(spec, cfg["loss"], solver_cfg)
        stats.record_state(state, spec)
        pred = theory_predictions(state, spec, cfg["alpha_test"])
        rows.append({
            "alpha": alpha, "phi": spec.phi, "kappa": spec.kappa, "rep": "theory",
            "h_mu_theory": pred.h_mu, "h_v_theory": pred.h_v,
            "sigma_sq": pred.sigma_sq, "zeta": pred.zeta,
            "clean_acc_theory": pred.clean_acc, "asr_theory": pred.asr,
            "converged": state.converged, "iters": state.iters,
        })
    return rows


def _run_theory(cfg, out_dir, stats):
    rows = _theory_rows(cfg, stats)
    path = os.path.join(out_dir, "results.csv")
    _write_csv(path, CSV_COLUMNS, rows)
    return [path]


def _run_erm(cfg, out_dir, stats):
    theory = {row["alpha"]: row for row in _theory_rows(cfg, stats)}
    reps = cfg["reps"]
    tasks = []
    for alpha in cfg["alpha_grid"]:
        spec = build_problem(cfg, alpha)
        for rep in range(reps):
            tasks.append((alpha, spec, rep))

    def fit_one(task):
        alpha, spec, rep = task
        return alpha, simulate.run_replicate(
            spec, cfg["loss"], rep, cfg["seed"], cfg["alpha_test"]
        )

    if cfg["workers"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
            fitted = list(pool.map(fit_one, tasks))
    else:
        fitted = [fit_one(t) for t in tasks]

    rows = []
    for alpha in cfg["alpha_grid"]:
        trow = theory[alpha]
        rows.append(trow)
        results = [r for a, r in fitted if a == alpha]
        results.sort(key=lambda r: r.rep)
        emp = {
            "h_mu_emp": [r.theta_mu for r in results],
            "h_v_emp": [r.theta_v for r in results],
            "clean_acc_emp": [r.clean_acc for r in results],
            "asr_emp": [r.asr for r in results],
        }
        for r in results:
            rows.append({
                "alpha": alpha, "phi": trow["phi"], "kappa": trow["kappa"], "rep": r.rep,
                "h_mu_theory": trow["h_mu_theory"], "h_v_theory": trow["h_v_theory"],
                "sigma_sq": trow["sigma_sq"], "zeta": trow["zeta"],
                "clean_acc_theory": trow["clean_acc_theory"],
                "asr_theory": trow["asr_theory"],
                "h_mu_emp": r.theta_mu, "h_v_emp": r.theta_v,
                "clean_acc_emp": r.clean_acc, "asr_emp": r.asr,
                "converged": r.converged, "iters": r.solver_iters,
            })
        mean_row = {
            "alpha": alpha, "phi": trow["phi"], "kappa": trow["kappa"], "rep": "mean",
            "h_mu_theory": trow["h_mu_theory"], "h_v_theory": trow["h_v_theory"],
            "sigma_sq": trow["sigma_sq"], "zeta": trow["zeta"],
            "clean_acc_theory": trow["clean_acc_theory"],
            "asr_theory": trow["asr_theory"],
        }
        se_row = {"alpha": alpha, "phi": trow["phi"], "kappa": trow["kappa"], "rep": "se"}
        for key, vals in emp.items():
            arr = np.asarray(vals)
            mean_row[key] = float(arr.mean())
            se_row[key] = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        rows.append(mean_row)
        rows.append(se_row)

    path = os.path.join(out_dir, "results.csv")
    _write_csv(path, CSV_COLUMNS, rows)
    return [path]


def _run_eigen_sweep(cfg, out_dir, stats):
    paths = []
    base_cov = cfg["problem"]["covariance"]
    for s_v_sq in cfg["sweep"]["s_v_sq_values"]:
        cov_cfg = dict(base_cov, s_v_sq=s_v_sq)
        model = build_covariance(cov_cfg, cfg["problem"]["p"])
        rows = _theory_rows(cfg, stats, covariance_override=model)
        path = os.path.join(out_dir, f"results_sv_{s_v_sq:g}.csv")
        _write_csv(path, CSV_COLUMNS, rows)
        paths.append(path)
    return paths


def _run_population(cfg, out_dir, stats):
    pop = cfg["population"]
    params0 = population.PopulationParams(
        norm_mu=pop["norm_mu"], s_mu_sq=pop["s_mu_sq"], s_v_sq=pop["s_v_sq"],
        lam=pop["lam"], phi=pop["phi"], alpha=0.0, loss=cfg["loss"],
    )
    a_ben = population.benign_minimizer_eigen(params0)
    pull = population.one_step_gradient(params0)
    rows = []
    for alpha in cfg["alpha_grid"]:
        params = params0.with_alpha(alpha)
        rs = population.minimize_population_eigen(params)
        stats.all_converged = stats.all_converged and rs.converged
        stats.max_residual = max(stats.max_residual, rs.grad_norm)
        stats.max_iters = max(stats.max_iters, rs.iters)
        rows.append({
            "alpha": alpha, "a": rs.a, "b": rs.b,
            "grad_norm": rs.grad_norm, "iters": rs.iters, "converged": rs.converged,
            "a_benign": a_ben,
            "distance_to_benign": math.hypot(rs.a - a_ben, rs.b),
            "one_step_gradient": pull,
        })
    path = os.path.join(out_dir, "population.csv")
    _write_csv(path, POPULATION_COLUMNS, rows)
    return [path]


_MODE_RUNNERS = {
    "theory": _run_theory,
    "erm": _run_erm,
    "eigen_sweep": _run_eigen_sweep,
    "population": _run_population,
}


def _decompose(cfg, out_dir):
    spec = build_problem(cfg, cfg["alpha"])
    state = solve_self_consistent(spec, cfg["loss"], _solver_config(cfg))
    if not state.converged:
        raise ArithmeticError("fixed-point solver did not converge; cannot decompose")
    decomp = metrics.variance_decomposition(state, spec)
    gap = abs(decomp.total - state.sigma_sq)
    if gap > 1e-10 * max(1.0, state.sigma_sq):
        raise ArithmeticError(f"variance decomposition mismatch: {gap:.3e}")
    print(decomp.table())
    paths = []
    if out_dir is not None:
        rows = [
            {"component": key, "description": label, "value": val, "share_percent": pct}
            for key, label, val, pct in decomp.rows()
        ]
        path = os.path.join(out_dir, "decomposition.csv")
        _write_csv(path, DECOMPOSE_COLUMNS, rows)
        paths.append(path)
    return paths, state, spec


def _write_manifest(out_dir, cfg, argv, stats, outputs, started):
    manifest = {
        "command": "poisonlab " + " ".join(argv),
        "mode": cfg["mode"],
        "loss": cfg["loss"],
        "seed": cfg["seed"],
        "alpha_test": cfg.get("alpha_test"),
        "versions": {
            "poisonlab": _VERSION,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "walltime_sec": time.monotonic() - started,
        "convergence": stats.as_dict(),
        "outputs": [os.path.basename(p) for p in outputs],
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _cmd_validate(args) -> int:
    load_config(args.config)
    print(f"config OK: {args.config}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if cfg["mode"] == "decompose":
        raise ConfigError("mode 'decompose' runs through the decompose subcommand")
    started = time.monotonic()
    os.makedirs(args.out, exist_ok=True)
    stats = _RunStats()
    created = []
    try:
        created = _MODE_RUNNERS[cfg["mode"]](cfg, args.out, stats)
        created.append(
            _write_manifest(args.out, cfg, sys.argv[1:], stats, created, started)
        )
    except BaseException:
        for path in created:
            if os.path.exists(path):
                os.remove(path)
        raise
    for path in created:
        print(f"wrote {path}")
    return 0


def _cmd_decompose(args) -> int:
    cfg = load_config(args.config)
    if cfg["mode"] != "decompose":
        raise ConfigError("decompose subcommand requires mode 'decompose'")
    started = time.monotonic()
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
    created = []
    try:
        created, state, spec = _decompose(cfg, args.out)
        if args.out is not None:
            stats = _RunStats()
            stats.record_state(state, spec)
            created.append(
                _write_manifest(args.out, cfg, sys.argv[1:], stats, created, started)
            )
    except BaseException:
        for path in created:
            if os.path.exists(path):
                os.remove(path)
        raise
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisonlab",
        description="Backdoor-poisoning asymptotics for regularized linear classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a config file and exit")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_run = sub.add_parser("run", help="execute a sweep and write CSV + manifest")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.set_defaults(func=_cmd_run)

    p_dec = sub.add_parser("decompose", help="print the margin-variance decomposition")
    p_dec.add_argument("--config", required=True)
    p_dec.add_argument("--out", default=None)
    p_dec.set_defaults(func=_cmd_decompose)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
