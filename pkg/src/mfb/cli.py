"""``mfb`` command-line front end.

Each subcommand runs a prefix-closed set of pipeline stages on a scenario
config and writes ``report.json`` plus CSV artifacts into the output
directory. Exit codes: 0 all checks pass, 1 a check failed, 2 usage or
config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .analysis import (
    ValueFunction,
    dpp_residuals,
    lipschitz_estimate,
    sample_measures,
    semiconcavity_test,
)
from .config import ConfigError, ScenarioConfig, load_config, stage_rng
from .errors import AnalysisError, BlowUpError, DomainError, SelectionError
from .feedback import closed_loop_simulate, feedback_set, verify_optimality_via_feedback
from .pmp import check_maximization, check_sensitivity, forward_backward_sweep, random_directions
from .problem import ControlSignal, check_derivatives, evaluate_cost, validate_hypotheses
from .solver import SolveReport, solve

__all__ = ["main", "run_scenario", "SUBCOMMANDS"]

log = logging.getLogger("mfb")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

STAGE_ORDER = ["validate", "solve", "pmp-check", "value", "sensitivity", "semiconcavity", "feedback", "simulate"]
# Stages each subcommand runs (dependencies first).
SUBCOMMANDS: dict[str, list[str]] = {
    "validate": ["validate"],
    "solve": ["solve"],
    "value": ["solve", "value"],
    "pmp-check": ["solve", "pmp-check"],
    "sensitivity": ["solve", "sensitivity"],
    "semiconcavity": ["semiconcavity"],
    "feedback": ["solve", "feedback"],
    "simulate": ["solve", "simulate"],
    "all": STAGE_ORDER,
}


def _check(statistic: float, tolerance: float, passed: bool | None = None, **extra: Any) -> dict[str, Any]:
    ok = bool(np.isfinite(statistic) and statistic <= tolerance) if passed is None else bool(passed)
    out = {"statistic": float(statistic), "tolerance": float(tolerance), "passed": ok}
    out.update(extra)
    return out


class Pipeline:
    """Shared state of one run: config, value cache, solved pair and outputs."""

    def __init__(self, cfg: ScenarioConfig, out: Path, jobs: int = 1):
        self.cfg = cfg
        self.out = out
        self.spec = cfg.spec
        self.vf = ValueFunction(cfg.spec, cfg.solver, jobs=jobs)
        self.report: SolveReport | None = None
        self.sweep = None
        self.stages: dict[str, dict[str, Any]] = {}

    def write(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)

    # -- stages --------------------------------------------------------------

    def stage_validate(self) -> dict[str, Any]:
        hyp = self.cfg.analysis["hypotheses"]
        rng_seed = int(stage_rng(self.cfg.seed, "validate").integers(2**63))
        rep = validate_hypotheses(self.spec, self.cfg.analysis["radius"], hyp["samples"], rng_seed)
        deriv = check_derivatives(self.spec, seed=rng_seed)
        return {
            "hypotheses": rep.to_dict(),
            "checks": {
                "hypotheses": _check(float(len(rep.violations)), 0.0, passed=rep.ok),
                "derivatives": _check(deriv, hyp["derivative_tol"]),
            },
        }

    def stage_solve(self) -> dict[str, Any]:
        rep = solve(self.spec, self.cfg.mu0, 0.0, self.cfg.solver)
        self.report = rep
        self.write("solve.json", rep.to_json() + "\n")
        self.write("trajectory.csv", rep.trajectory.to_csv())
        checks = {"converged": _check(rep.grad_norms[-1], self.cfg.solver.grad_tol, passed=rep.converged)}
        checks["monotone"] = _check(
            max((b - a for a, b in zip(rep.costs, rep.costs[1:])), default=0.0), 1e-12
        )
        g = self.cfg.analysis["gradient"]
        if g["probes"] > 0:
            checks["gradient"] = _check(self._gradient_check(g), g["tol"])
        return {"cost": rep.cost, "iterations": rep.iterations, "checks": checks}

    def _gradient_check(self, g: dict[str, Any]) -> float:
        # Adjoint gradient against central differences at random admissible controls.
        rng = stage_rng(self.cfg.seed, "gradient")
        spec, mu0, opts = self.spec, self.cfg.mu0, self.cfg.solver
        K = opts.intervals or max(1, int(np.ceil(40 * spec.T - 1e-9)))
        lo, hi = spec.U[:, 0], spec.U[:, 1]
        span = np.minimum(hi - lo, 2.0)
        worst = 0.0
        for _ in range(g["probes"]):
            centre = spec.default_control()
            vals = np.clip(centre + rng.uniform(-0.5, 0.5, size=(K, spec.control_dim)) * span, lo, hi)
            u = ControlSignal(vals, spec.T)
            grad = forward_backward_sweep(spec, mu0, u, substeps=opts.substeps).gradient
            k = int(rng.integers(K))
            for a in range(spec.control_dim):
                e = g["fd_step"]
                vp, vm = vals.copy(), vals.copy()
                vp[k, a] = min(vp[k, a] + e, hi[a])
                vm[k, a] = max(vm[k, a] - e, lo[a])
                steps = K * opts.substeps
                fp = evaluate_cost(spec, mu0, u.with_values(vp), steps=steps).total
                fm = evaluate_cost(spec, mu0, u.with_values(vm), steps=steps).total
                fd = (fp - fm) / ((vp[k, a] - vm[k, a]) * u.dt)
                worst = max(worst, abs(grad[k, a] - fd) / max(1.0, abs(fd)))
        return worst

    def _need_pair(self) -> SolveReport:
        if self.report is None:
            self.stage_solve()
        assert self.report is not None
        return self.report

    def _sweep(self):
        if self.sweep is None:
            rep = self._need_pair()
            self.sweep = forward_backward_sweep(
                self.spec, self.cfg.mu0, rep.control, substeps=self.cfg.solver.substeps, trajectory=rep.trajectory
            )
        return self.sweep

    def stage_pmp_check(self) -> dict[str, Any]:
        sw = self._sweep()
        m = self.cfg.analysis["maximization"]
        gap = check_maximization(self.spec, sw, u_grid=m["u_grid"])
        self.write("sweep.csv", sw.to_csv())
        tr = sw.trajectory
        term = float(np.max(np.abs(sw.costates[-1] + self.spec.terminal_grad(tr.positions[-1], tr.weights))))
        H = [
            self.spec.hamiltonian(float(tr.times[k]), sw.node_control(k), tr.positions[k], sw.costates[k], tr.weights)
            for k in range(len(sw))
        ]
        return {
            "hamiltonian_spread": float(max(H) - min(H)),
            "checks": {
                "maximization": _check(gap, m["tol"]),
                "terminal_costate": _check(term, 1e-8),
            },
        }

    def stage_value(self) -> dict[str, Any]:
        rep = self._need_pair()
        an = self.cfg.analysis
        res = self.vf.evaluate(0.0, self.cfg.mu0)
        out: dict[str, Any] = {"value": res.value, "checks": {}}
        checks = out["checks"]
        checks["value_converged"] = _check(0.0, 1.0, passed=res.converged)
        ref = an["reference_value"]
        if ref is not None:
            checks["reference_value"] = _check(abs(res.value - float(ref["value"])), float(ref["tol"]))
        if "dpp" in an["checks"]:
            d = an["dpp"]
            idx = np.linspace(0, rep.trajectory.n_nodes - 1, d["times"]).round().astype(int)
            vals = dpp_residuals(self.spec, rep, rep.trajectory.times[idx], self.vf)
            spread = max(vals.values()) - min(vals.values())
            out["dpp"] = {repr(k): v for k, v in vals.items()}
            checks["dpp"] = _check(spread, d["tol"])
        if "lipschitz" in an["checks"]:
            lp = an["lipschitz"]
            rng = stage_rng(self.cfg.seed, "lipschitz")
            ms = sample_measures(rng, lp["measures"], self.spec.dim, an["radius"])
            taus = [min(max(float(t), 0.0), self.spec.T) for t in lp["times"]]
            caps = [np.inf if c is None else float(c) for c in (lp["spatial_cap"], lp["time_cap"])]
            lr = lipschitz_estimate(self.spec, taus, ms, caps[0], caps[1], self.vf)
            out["lipschitz"] = lr.to_dict()
            checks["lipschitz"] = _check(lr.statistic, lr.tolerance)
        return out

    def stage_sensitivity(self) -> dict[str, Any]:
        an = self.cfg.analysis
        if "sensitivity" not in an["checks"]:
            return {"skipped": True, "checks": {}}
        sw = self._sweep()
        s = an["sensitivity"]
        rng = stage_rng(self.cfg.seed, "sensitivity")
        dirs = random_directions(rng, s["directions"], self.cfg.mu0.n, self.spec.dim, s["h"])
        tr = sw.trajectory
        idx = np.unique(np.linspace(0, tr.n_nodes - 1, s["times"], endpoint=False).round().astype(int))
        res = check_sensitivity(self.spec, sw, dirs, an["eps_grid"], tr.times[idx], self.vf)
        return {"sensitivity": res.to_dict(), "checks": {"sensitivity": _check(res.worst_slack, s["tol"])}}

    def stage_semiconcavity(self) -> dict[str, Any]:
        an = self.cfg.analysis
        if "semiconcavity" not in an["checks"]:
            return {"skipped": True, "checks": {}}
        sc = an["semiconcavity"]
        rng = stage_rng(self.cfg.seed, "semiconcavity")
        ms = sample_measures(rng, 2 * sc["pairs"], self.spec.dim, an["radius"])
        pairs = list(zip(ms[::2], ms[1::2]))
        taus = []
        for _ in pairs:
            t1 = float(rng.uniform(0.0, self.spec.T))
            t2 = t1 if sc["equal_times"] else float(rng.uniform(0.0, self.spec.T))
            taus.append((t1, t2))
        lam = np.linspace(0.0, 1.0, sc["lambda_points"])
        rep = semiconcavity_test(
            self.spec, taus, pairs, sc["plans"], lam, sc["C_r"], sc["tol"], int(rng.integers(2**63)), self.vf
        )
        return {"semiconcavity": rep.to_dict(), "checks": {"semiconcavity": _check(rep.statistic, rep.tolerance)}}

    def stage_feedback(self) -> dict[str, Any]:
        rep = self._need_pair()
        fb = self.cfg.feedback
        tr = rep.trajectory
        idx = np.unique(np.linspace(0, tr.n_nodes - 1, fb["verify_times"], endpoint=False).round().astype(int))
        ver = verify_optimality_via_feedback(
            self.spec, tr, rep.control, tr.times[idx], fb["verify_tol"], self.cfg.analysis["eps_grid"], self.vf
        )
        fs = feedback_set(
            self.spec, 0.0, self.cfg.mu0, fb["u_grid"], fb["tol"],
            refine=fb["refine"], eps_grid=self.cfg.analysis["eps_grid"], value_fn=self.vf,
        )
        return {
            "verification": ver.to_dict(),
            "feedback_set_t0": fs.to_dict(),
            "checks": {
                "feedback_verification": _check(ver.worst, fb["verify_tol"], passed=ver.passed),
                "feedback_set_nonempty": _check(0.0, 1.0, passed=not fs.empty),
            },
        }

    def stage_simulate(self) -> dict[str, Any]:
        fb = self.cfg.feedback
        if not fb["simulate"]:
            return {"skipped": True, "checks": {}}
        rep = self._need_pair()
        cl = closed_loop_simulate(
            self.spec, self.cfg.mu0, 0.0, fb["selection"], fb["steps"],
            u_grid=fb["u_grid"], refine=fb["refine"], tol=fb["tol"], substeps=self.cfg.solver.substeps,
            eps_grid=self.cfg.analysis["eps_grid"], value_fn=self.vf,
        )
        self.write("feedback_trace.csv", cl.to_csv())
        self.write("closed_loop_trajectory.csv", cl.trajectory.to_csv())
        gap = abs(cl.cost - rep.cost)
        return {
            "closed_loop_cost": cl.cost,
            "control": cl.control.to_dict(),
            "checks": {"open_loop_consistency": _check(gap, fb["consistency_tol"])},
        }

    def run(self, stages: list[str]) -> None:
        table: dict[str, Callable[[], dict[str, Any]]] = {
            "validate": self.stage_validate,
            "solve": self.stage_solve,
            "pmp-check": self.stage_pmp_check,
            "value": self.stage_value,
            "sensitivity": self.stage_sensitivity,
            "semiconcavity": self.stage_semiconcavity,
            "feedback": self.stage_feedback,
            "simulate": self.stage_simulate,
        }
        for name in stages:
            log.info("stage %s", name)
            self.stages[name] = table[name]()

    def bundle(self, command: str, error: str | None = None) -> dict[str, Any]:
        passed = error is None and all(
            c["passed"] for st in self.stages.values() for c in st.get("checks", {}).values()
        )
        out = {
            "toolkit": {"name": "mfb", "version": __version__},
            "command": command,
            "scenario": self.cfg.name,
            "seed": self.cfg.seed,
            "config_digest": self.cfg.digest,
            "stages": self.stages,
            "passed": passed,
            "value_solves": len(self.vf),
        }
        if error is not None:
            out["error"] = error
        return out


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def run_scenario(config: str | Path, command: str = "all", out: str | Path | None = None, jobs: int = 1) -> tuple[int, dict[str, Any]]:
    """Run ``command`` on the config file; returns the exit code and the report."""
    cfg = load_config(config)
    out_dir = Path(out if out is not None else cfg.output)
    pipe = Pipeline(cfg, out_dir, jobs)
    try:
        pipe.run(SUBCOMMANDS[command])
    except (BlowUpError, FloatingPointError, AnalysisError, SelectionError, DomainError, RuntimeError) as exc:
        report = pipe.bundle(command, f"{type(exc).__name__}: {exc}")
        pipe.write("report.json", _dump(report))
        return EXIT_NUMERIC, report
    report = pipe.bundle(command)
    pipe.write("report.json", _dump(report))
    return (EXIT_PASS if report["passed"] else EXIT_FAIL), report


def _configure_logging() -> None:
    level = os.environ.get("MFB_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfb", description="Mean-field Bolza control toolkit")
    parser.add_argument("--version", action="version", version=f"mfb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for value probes")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    if args.jobs < 1:
        print("mfb: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        code, report = run_scenario(args.config, args.command, args.out, args.jobs)
    except ConfigError as exc:
        print(f"mfb: config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    summary = {
        name: {k: v["passed"] for k, v in st.get("checks", {}).items()} for name, st in report["stages"].items()
    }
    print(json.dumps({"passed": report["passed"], "checks": summary}, sort_keys=True))
    if "error" in report:
        print(f"mfb: {report['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
