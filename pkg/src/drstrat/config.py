"""Experiment configuration: JSON files validated against ``config.schema.json``.

Loading is two-stage.  The schema pass catches structural mistakes and
reports the JSON path plus the line it sits on; the build pass constructs the
:class:`~drstrat.problem.Problem` and ambiguity sets and turns any domain
validation error (zero reference mass, bad strata, infeasible theta) into a
:class:`ConfigError` naming the offending section.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from .ambiguity import ambiguity_from_json
from .bo import BOConfig
from .discrete import (
    Grid,
    Pmf,
    Stratification,
    discretized_rayleigh_pmf,
    reference_from_nominals,
    scaled_binomial_pmf,
)
from .errors import ConfigError, DrStratError
from .problem import WIND_SIGMOID, Problem, windcase_synthetic_means
from .simulation import TableBernoulli, ToyNormal, pilot_estimate_cond_means, toy_conditional_mean


def load_schema() -> dict:
    return json.loads(resources.files("drstrat").joinpath("config.schema.json").read_text())


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    raw: dict
    text: str
    problem: Problem
    sets: tuple
    bo: BOConfig
    seed: int
    output_dir: str | None
    simulator: object

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    @property
    def name(self) -> str:
        return self.raw.get("name", self.problem.name)


def _line_of(text: str, path) -> int | None:
    """Best-effort line of a JSON path: follow the object keys through the text in order."""
    pos = 0
    found = None
    for part in path:
        if isinstance(part, str):
            m = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
            if m is None:
                break
            pos = m.end()
            found = m.start()
    return None if found is None else text.count("\n", 0, found) + 1


def _where(text: str, path) -> str:
    p = "$" + "".join(f"[{x}]" if isinstance(x, int) else f".{x}" for x in path)
    line = _line_of(text, path)
    return f"{p} (line {line})" if line else p


def parse_config_text(text: str) -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = jsonschema.exceptions.best_match(errors)
        raise ConfigError(f"{_where(text, list(e.absolute_path))}: {e.message}")
    return obj


def _grid(spec) -> Grid:
    t = spec["type"]
    if t == "scaled_integers":
        return Grid.scaled_integers(spec["first"], spec["last"], spec["shift"], spec["scale"])
    if t == "uniform":
        return Grid.uniform(spec["start"], spec["step"], spec["count"])
    return Grid(spec["points"])


def _nominal(spec, grid: Grid) -> Pmf:
    t = spec["type"]
    if t == "binomial":
        return scaled_binomial_pmf(grid, spec["n_trials"], spec["p_success"], spec["shift"], spec["scale"])
    if t == "rayleigh":
        return discretized_rayleigh_pmf(grid, spec["sigma"], spec["delta"])
    return Pmf(grid, spec["mass"])


def _default_theta(nominal_spec, set_spec):
    if "nominal_theta" in set_spec:
        return set_spec
    t = nominal_spec["type"]
    if set_spec["type"] == "binomial" and t == "binomial":
        return {**set_spec, "nominal_theta": [nominal_spec["n_trials"], nominal_spec["p_success"]]}
    if set_spec["type"] == "rayleigh_shift" and t == "rayleigh":
        return {**set_spec, "nominal_theta": [nominal_spec["sigma"], nominal_spec["delta"]]}
    return set_spec


def _simulator_and_means(spec, grid: Grid, seed: int):
    preset = spec["preset"]
    if preset == "toy":
        if "threshold" not in spec:
            raise ConfigError("simulator.threshold is required for the toy preset")
        sim = ToyNormal(float(spec["threshold"]))
        sim.check_grid(grid)
        means = toy_conditional_mean(grid.points, sim.threshold)
    elif preset == "windcase-synthetic":
        means = windcase_synthetic_means(grid.points, spec.get("center", WIND_SIGMOID[0]),
                                         spec.get("width", WIND_SIGMOID[1]))
        sim = TableBernoulli(grid, means)
    else:
        if "means" not in spec:
            raise ConfigError("simulator.means is required for the table preset")
        sim = TableBernoulli(grid, spec["means"])
        means = sim.means
    if "pilot_per_point" in spec:
        means = pilot_estimate_cond_means(sim, grid, spec["pilot_per_point"],
                                          np.random.SeedSequence((seed, 0x9170)))
    return sim, np.asarray(means, dtype=float)


def build_config(obj: dict, text: str = "") -> ExperimentConfig:
    section = "grid"
    try:
        grid = _grid(obj["grid"])
        section = "strata"
        st = obj["strata"]
        if "equal_contiguous" in st:
            strat = Stratification.equal_contiguous(len(grid), st["equal_contiguous"])
        else:
            strat = Stratification(tuple(st["index_sets"]), len(grid))
        seed = int(obj.get("seed", 0))
        noms, sets = [], []
        for m, model in enumerate(obj["models"]):
            section = f"models[{m}].nominal"
            nominal = _nominal(model["nominal"], grid)
            section = f"models[{m}].ambiguity"
            aset = ambiguity_from_json(_default_theta(model["nominal"], model["ambiguity"]), nominal, grid)
            if aset.parametric and not np.allclose(aset.nominal.mass, nominal.mass, atol=1e-9):
                raise ConfigError("nominal_theta does not reproduce the model's nominal pmf")
            noms.append(nominal)
            sets.append(aset)
        section = "reference"
        ref_spec = obj.get("reference", "average_of_nominals")
        ref = reference_from_nominals(noms) if ref_spec == "average_of_nominals" else Pmf(grid, ref_spec["mass"])
        section = "simulator"
        sim, means = _simulator_and_means(obj["simulator"], grid, seed)
        section = "total_budget"
        problem = Problem(grid, strat, obj["total_budget"], tuple(noms), ref, means,
                          obj["simulator"].get("threshold"), obj.get("name", "custom"),
                          {"simulator": obj["simulator"]["preset"]})
        section = "bo"
        bo = BOConfig(seed=seed, **obj.get("bo", {}))
        bo.validate(problem.K, problem.total)
    except ConfigError as exc:
        raise ConfigError(f"{_where(text, _path(section))}: {exc}") from exc
    except (DrStratError, ValueError) as exc:
        raise ConfigError(f"{_where(text, _path(section))}: {type(exc).__name__}: {exc}") from exc
    return ExperimentConfig(obj, text, problem, tuple(sets), bo, seed, obj.get("output_dir"), sim)


def _path(section: str) -> list:
    out = []
    for tok in re.findall(r"[A-Za-z_]+|\[\d+\]", section):
        out.append(int(tok[1:-1]) if tok.startswith("[") else tok)
    return out


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return build_config(parse_config_text(text), text)


def loads_config(text: str) -> ExperimentConfig:
    return build_config(parse_config_text(text), text)


def preset_config(preset: str, family: str, **bo) -> dict:
    """Config dict for a shipped preset and set family (what ``configs/*.json`` hold)."""
    from .problem import (
        TOY_NOMINALS, TOY_SCALE, TOY_SHIFT, TOY_THRESHOLD, WIND_NOMINALS, WIND_THRESHOLD,
        rayleigh_theta_grid, toy_binomial_theta_grid,
    )

    def aset(theta_grid):
        if family == "parametric":
            return theta_grid
        if family in ("l2", "wasserstein1", "moment"):
            return {"type": family}
        raise ConfigError(f"unknown set family {family!r}")

    if preset == "toy":
        models = [
            {
                "nominal": {"type": "binomial", "n_trials": n, "p_success": p,
                            "shift": TOY_SHIFT, "scale": TOY_SCALE},
                "ambiguity": aset({"type": "binomial", "shift": TOY_SHIFT, "scale": TOY_SCALE,
                                   "theta_grid": [list(t) for t in toy_binomial_theta_grid(n, p)]}),
            }
            for n, p in TOY_NOMINALS
        ]
        return {
            "name": f"toy-{family}",
            "grid": {"type": "scaled_integers", "first": 23, "last": 57, "shift": TOY_SHIFT, "scale": TOY_SCALE},
            "strata": {"equal_contiguous": 7},
            "total_budget": 100,
            "reference": "average_of_nominals",
            "models": models,
            "simulator": {"preset": "toy", "threshold": TOY_THRESHOLD},
            "bo": dict(bo),
            "seed": 0,
        }
    if preset == "windcase-synthetic":
        models = [
            {
                "nominal": {"type": "rayleigh", "sigma": s, "delta": d},
                "ambiguity": aset({"type": "rayleigh_shift",
                                   "theta_grid": [list(t) for t in rayleigh_theta_grid(s, d)]}),
            }
            for s, d in WIND_NOMINALS
        ]
        return {
            "name": f"windcase-synthetic-{family}",
            "description": "synthetic conditional means; not the aeroelastic simulator",
            "grid": {"type": "uniform", "start": 3.0, "step": 0.1, "count": 220},
            "strata": {"equal_contiguous": 22},
            "total_budget": 1000,
            "reference": "average_of_nominals",
            "models": models,
            "simulator": {"preset": "windcase-synthetic", "threshold": WIND_THRESHOLD},
            "bo": dict(bo),
            "seed": 0,
        }
    raise ConfigError(f"unknown preset {preset!r}")
