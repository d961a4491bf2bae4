"""Scenario configuration files.

A scenario is a JSON object with the stanzas ``problem``, ``initial_measure``,
``discretization``, ``solver``, ``analysis`` and ``feedback`` plus a
mandatory integer ``seed``. Unknown keys are rejected and every tolerance
must be positive. Errors carry the line of the offending entry.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import MFBError
from .measure import DiscreteMeasure
from .problem import ProblemSpec
from .solver import SolverOptions

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "parse_config", "stage_rng", "DEFAULTS"]


class ConfigError(MFBError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


DEFAULTS: dict[str, Any] = {
    "discretization": {"control_intervals": None, "substeps": 5},
    "solver": {
        "max_iters": 500,
        "grad_tol": 1e-6,
        "initial_step": 1.0,
        "shrink": 0.5,
        "armijo": 1e-4,
        "max_backtracks": 40,
        "bb_steps": True,
    },
    "analysis": {
        "checks": ["value", "dpp", "lipschitz", "sensitivity", "semiconcavity"],
        "radius": 5.0,
        "eps_grid": [1e-2 * 2.0**-k for k in range(7)],
        "hypotheses": {"samples": 200, "derivative_tol": 1e-6},
        "gradient": {"probes": 3, "fd_step": 1e-6, "tol": 1e-4},
        "reference_value": None,
        "maximization": {"u_grid": 401, "tol": 1e-3},
        "dpp": {"times": 11, "tol": 5e-3},
        "lipschitz": {"measures": 5, "times": [0.0, 0.5, 1.0], "spatial_cap": None, "time_cap": None},
        "sensitivity": {"directions": 8, "h": [-1.0, 0.0, 1.0], "times": 10, "tol": 5e-3},
        "semiconcavity": {
            "pairs": 20,
            "C_r": 2.0,
            "tol": 1e-6,
            "lambda_points": 11,
            "plans": ["product", "optimal", "random"],
            "equal_times": True,
        },
    },
    "feedback": {
        "u_grid": 9,
        "refine": 4,
        "tol": 1e-3,
        "verify_tol": 5e-3,
        "verify_times": 10,
        "selection": "min_norm",
        "steps": 10,
        "consistency_tol": 1e-2,
        "simulate": True,
    },
}

TOP_LEVEL = {"name", "seed", "output", "problem", "initial_measure", "discretization", "solver", "analysis", "feedback"}
SELECTION_RULES = {"min_norm", "first", "closest_to_previous"}
ANALYSIS_CHECKS = {"value", "dpp", "lipschitz", "sensitivity", "semiconcavity"}
PLAN_KINDS = {"product", "optimal", "random"}


def _key_line(text: str, path: tuple[str, ...]) -> int | None:
    """Best-effort line of the last key in ``path``, scanning nested keys in order."""
    lines = text.splitlines()
    start = 0
    found = None
    for key in path:
        # Object keys only: the same string may appear as a list value.
        needle = re.compile(re.escape(json.dumps(key)) + r"\s*:")
        for i in range(start, len(lines)):
            if needle.search(lines[i]):
                found = i + 1
                start = i
                break
        else:
            return found
    return found


def _merge(defaults: dict[str, Any], given: dict[str, Any], path: tuple[str, ...], text: str) -> dict[str, Any]:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {'.'.join(path + (key,))!r}", _key_line(text, path + (key,)))
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(val, dict):
                raise ConfigError(f"{'.'.join(path + (key,))} must be an object", _key_line(text, path + (key,)))
            out[key] = _merge(defaults[key], val, path + (key,), text)
        else:
            out[key] = val
    return out


def _check_tolerances(tree: Any, path: tuple[str, ...], text: str) -> None:
    if isinstance(tree, dict):
        for key, val in tree.items():
            here = path + (key,)
            if key == "tol" or key.endswith("_tol") or key == "tolerance":
                if val is None and key != "tol":
                    continue
                if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0:
                    raise ConfigError(f"{'.'.join(here)} must be a positive number, got {val!r}", _key_line(text, here))
            else:
                _check_tolerances(val, here, text)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    output: str
    spec: ProblemSpec
    mu0: DiscreteMeasure
    discretization: dict[str, Any]
    solver: SolverOptions
    analysis: dict[str, Any]
    feedback: dict[str, Any]
    digest: str
    raw: dict[str, Any]


def stage_rng(seed: int, name: str) -> np.random.Generator:
    """Philox stream for the named stage; independent of the order stages run in."""
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed % 2**64, key])))


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", 1)
    unknown = sorted(set(data) - TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", _key_line(text, (unknown[0],)))
    for req in ("seed", "problem"):
        if req not in data:
            raise ConfigError(f"missing mandatory key {req!r}", 1)
    if not isinstance(data["problem"], dict):
        raise ConfigError("problem must be an object", _key_line(text, ("problem",)))
    problem = dict(data["problem"])
    # The initial measure may sit inside the problem object or next to it.
    if ("mu0" in problem) == ("initial_measure" in data):
        raise ConfigError("give exactly one of problem.mu0 and initial_measure", _key_line(text, ("problem",)))
    measure_data = problem.pop("mu0") if "mu0" in problem else data["initial_measure"]
    measure_path = ("problem", "mu0") if "mu0" in data["problem"] else ("initial_measure",)
    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)", _key_line(text, ("seed",)))

    stanzas = {k: _merge(DEFAULTS[k], data.get(k, {}) or {}, (k,), text) for k in DEFAULTS}
    _check_tolerances(stanzas, (), text)

    try:
        spec = ProblemSpec.from_dict(problem)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem stanza: {exc}", _key_line(text, ("problem",))) from None
    try:
        mu0 = DiscreteMeasure.from_dict(measure_data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid initial measure: {exc}", _key_line(text, measure_path)) from None
    if mu0.dim != spec.dim:
        raise ConfigError("initial measure dimension differs from problem.dim", _key_line(text, measure_path))

    disc = stanzas["discretization"]
    sol = dict(stanzas["solver"])
    sol["intervals"] = disc["control_intervals"]
    sol["substeps"] = disc["substeps"]
    try:
        solver = SolverOptions.from_dict(sol)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver stanza: {exc}", _key_line(text, ("solver",))) from None

    an = stanzas["analysis"]
    bad = set(an["checks"]) - ANALYSIS_CHECKS
    if bad:
        raise ConfigError(f"unknown analysis check(s) {sorted(bad)}", _key_line(text, ("analysis", "checks")))
    if not an["radius"] > 0:
        raise ConfigError("analysis.radius must be positive", _key_line(text, ("analysis", "radius")))
    if set(an["semiconcavity"]["plans"]) - PLAN_KINDS:
        raise ConfigError("unknown plan kind", _key_line(text, ("analysis", "semiconcavity", "plans")))
    eps = an["eps_grid"]
    if not eps or any(not e > 0 for e in eps):
        raise ConfigError("analysis.eps_grid must be a nonempty list of positive steps", _key_line(text, ("analysis", "eps_grid")))
    fb = stanzas["feedback"]
    if fb["selection"] not in SELECTION_RULES:
        raise ConfigError(f"unknown selection rule {fb['selection']!r}", _key_line(text, ("feedback", "selection")))

    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return ScenarioConfig(
        name=str(data.get("name", spec.name)),
        seed=int(seed),
        output=str(data.get("output", "mfb-out")),
        spec=spec,
        mu0=mu0,
        discretization=disc,
        solver=solver,
        analysis=an,
        feedback=fb,
        digest=hashlib.sha256(canonical.encode()).hexdigest(),
        raw=data,
    )


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
