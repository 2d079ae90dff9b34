"""``drstrat`` command line: solve, evaluate, replicate, compare.

Outputs are staged in memory and written only after a command succeeds, so a
failed run leaves no partial files behind.  Exit codes: 0 success, 2
configuration or input error, 3 numerical or solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bo import SolveReport, dr_strat_objective, solve_dr_strat, solve_str_m
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DrStratError, NumericalError, ValidationError
from .estimators import dr_strat_variance
from .simulation import replicate_experiment

log = logging.getLogger("drstrat")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
METHODS = {"dr-strat": "DR-Str", "str-m": "Str-M"}


class Outputs:
    """Files to write once the command has finished without error."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def add_json(self, name: str, obj) -> None:
        self.files[name] = json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def commit(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            tmp = out / (name + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, out / name)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def read_allocation(path, total: int, K: int) -> np.ndarray:
    """Integer allocation from an ``allocation.csv`` (column ``n_k``) or a ``report.json``."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read allocation file: {exc}") from exc
    try:
        if p.suffix == ".json":
            vals = json.loads(text)["best_allocation"]
        else:
            rows = list(csv.DictReader(io.StringIO(text)))
            vals = [r["n_k"] for r in rows]
        n = np.array([float(v) for v in vals])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"unreadable allocation file {path}: {exc}") from exc
    if n.shape != (K,):
        raise ConfigError(f"allocation has {n.size} entries, the config has {K} strata")
    if np.any(n != np.rint(n)) or np.any(n < 1):
        raise ConfigError("allocation entries must be positive integers")
    if int(n.sum()) != total:
        raise ConfigError(f"allocation sums to {int(n.sum())}, budget is {total}")
    return n.astype(int)


def _manifest(cfg: ExperimentConfig, args, started: float) -> dict:
    return {
        "command": args.command,
        "config": os.path.abspath(args.config),
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "threads": args.threads,
        "versions": {
            "drstrat": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_seconds": round(time.perf_counter() - started, 3),
    }


def _solve(cfg: ExperimentConfig, method: str, verbose: bool) -> SolveReport:
    if method == "str-m":
        return solve_str_m(cfg.problem, [s.nominal for s in cfg.sets], cfg.bo)
    return solve_dr_strat(cfg.problem, list(cfg.sets), cfg.bo, trace=verbose)


def _write_report(outs: Outputs, rep: SolveReport, cfg: ExperimentConfig, prefix: str = "") -> None:
    outs.add(prefix + "report.json", rep.dumps() + "\n")
    outs.add(prefix + "allocation.csv", rep.allocation_csv(cfg.problem.omega_ref))
    outs.add(prefix + "trace.csv", rep.trace_csv())
    outs.add(prefix + "timing.csv", rep.timing_csv())


def _variance_table(cfg: ExperimentConfig, n, tag: str, outs: Outputs):
    """Nominal and worst-case variance per model at allocation ``n``."""
    prob = cfg.problem
    res = dr_strat_objective(prob, list(cfg.sets), cfg.bo)(np.asarray(n, dtype=float))
    rows = []
    for m, aset in enumerate(cfg.sets):
        nom = dr_strat_variance(n, aset.nominal, prob.reference, prob.strat, prob.means)
        fname = f"{tag}worst_case_pmf_{m}.csv"
        outs.add(fname, _csv(["x", "nominal", "worst_case"],
                             zip(prob.grid.points, aset.nominal.mass, res.per_model_pmfs[m].mass)))
        rows.append([m, nom, res.per_model_values[m], fname])
    noms = [r[1] for r in rows]
    rows.append(["max", max(noms), res.value, f"{tag}worst_case_pmf_{res.argmax_model}.csv"])
    return res, rows


EVAL_HEADER = ["model", "nominal_variance", "worst_case_variance", "worst_case_pmf_file"]


def cmd_solve(cfg: ExperimentConfig, args, outs: Outputs) -> None:
    rep = _solve(cfg, args.method, args.verbose)
    _write_report(outs, rep, cfg)
    print(f"{rep.method}: allocation {' '.join(map(str, rep.best_allocation))}  v = {rep.best_value:.6g}")


def cmd_evaluate(cfg: ExperimentConfig, args, outs: Outputs) -> None:
    if not args.allocation:
        raise ConfigError("--allocation is required")
    n = read_allocation(args.allocation, cfg.problem.total, cfg.problem.K)
    _, rows = _variance_table(cfg, n, "", outs)
    outs.add("evaluate.csv", _csv(EVAL_HEADER, rows))
    print(f"max worst-case variance {rows[-1][2]:.6g}")


def cmd_replicate(cfg: ExperimentConfig, args, outs: Outputs) -> None:
    if not args.allocation:
        raise ConfigError("--allocation is required")
    if args.replications < 2:
        raise ConfigError("--replications must be at least 2")
    n = read_allocation(args.allocation, cfg.problem.total, cfg.problem.K)
    res = replicate_experiment(cfg.problem, n, [s.nominal for s in cfg.sets], args.replications,
                               cfg.seed, simulator=cfg.simulator, threads=args.threads,
                               labels=[f"nominal_{m}" for m in range(len(cfg.sets))])
    outs.add("replication.csv", res.to_csv())
    outs.add_json("replication.json", res.to_json())
    print(res.to_csv(), end="")


def cmd_compare(cfg: ExperimentConfig, args, outs: Outputs) -> None:
    strm = solve_str_m(cfg.problem, [s.nominal for s in cfg.sets], cfg.bo)
    dr = solve_dr_strat(cfg.problem, list(cfg.sets), cfg.bo, str_m_allocation=strm.best_allocation,
                        trace=args.verbose)
    _write_report(outs, strm, cfg, "str_m_")
    _write_report(outs, dr, cfg, "dr_str_")
    res_s, rows_s = _variance_table(cfg, strm.best_allocation, "str_m_", outs)
    res_d, rows_d = _variance_table(cfg, dr.best_allocation, "dr_str_", outs)
    outs.add("str_m_evaluate.csv", _csv(EVAL_HEADER, rows_s))
    outs.add("dr_str_evaluate.csv", _csv(EVAL_HEADER, rows_d))
    ratio = res_s.value / res_d.value if res_d.value > 0 else float("inf")
    omega = cfg.problem.omega_ref
    outs.add("allocation_bars.csv", _csv(
        ["stratum", "omega_ref_k", "n_str_m", "n_dr_str"],
        zip(range(cfg.problem.K), omega, strm.best_allocation, dr.best_allocation)))
    curves = [cfg.problem.grid.points]
    header = ["x"]
    for m, aset in enumerate(cfg.sets):
        curves += [aset.nominal.mass, res_s.per_model_pmfs[m].mass, res_d.per_model_pmfs[m].mass]
        header += [f"nominal_{m}", f"worst_str_m_{m}", f"worst_dr_str_{m}"]
    outs.add("worst_case_curves.csv", _csv(header, zip(*curves)))
    outs.add_json("compare.json", {
        "ratio": ratio,
        "max_worst_case_str_m": res_s.value,
        "max_worst_case_dr_str": res_d.value,
        "allocation_str_m": [int(v) for v in strm.best_allocation],
        "allocation_dr_str": [int(v) for v in dr.best_allocation],
    })
    print(f"ratio maxWC(Str-M)/maxWC(DR-Str) = {ratio:.6g}")


COMMANDS = {"solve": cmd_solve, "evaluate": cmd_evaluate, "replicate": cmd_replicate, "compare": cmd_compare}


def _default_threads() -> int:
    env = os.environ.get("DRSTRAT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drstrat", description="Distributionally robust stratified sampling budgets.")
    p.add_argument("--version", action="version", version=f"drstrat {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--method", choices=sorted(METHODS), default="dr-strat")
        s.add_argument("--allocation")
        s.add_argument("--replications", type=int, default=10_000)
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, default=None)
        s.add_argument("--out")
        s.add_argument("--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is None:
        args.threads = _default_threads()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed, bo=replace(cfg.bo, seed=args.seed))
        cfg = replace(cfg, bo=replace(cfg.bo, threads=max(1, args.threads)))
        out = Path(args.out or cfg.output_dir or "drstrat-out")
        outs = Outputs()
        COMMANDS[args.command](cfg, args, outs)
        outs.add_json("manifest.json", _manifest(cfg, args, started))
        outs.commit(out)
    except (ConfigError, ValidationError) as exc:
        print(f"drstrat: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DrStratError) as exc:
        print(f"drstrat: solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
