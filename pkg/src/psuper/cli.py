"""Batch front-end: ``psuper <command> [--config FILE] [--key value ...] --out DIR``.

Each command validates its parameter block against a JSON schema, calls
into the library and writes its artifacts plus ``manifest.json`` under
``--out``. Exit codes: 0 success, 1 acceptance failure (verify-all only),
2 invalid input, 3 solver failure, 4 indeterminate verdict when one was
required.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from psuper import __version__

FORMATS = """\
file formats:
  .fld   plain-text field: '# psuper field 1', then 'dim', 'origin', 'extent',
         'cells', optional 'time t0 t1 steps', 'extended 0|1', 'values N' and
         N values one per line (row-major, time slowest, 'inf' for +inf).
  .json  sorted keys, two-space indent, shortest round-trip floats;
         non-finite numbers are written as the strings "inf", "-inf", "nan".
  .csv   header row, comma separated, floats as shortest round-trip reprs:
         measure.csv      step,time,node,x0[,x1,x2],mass
         probe.csv        q,level_h,integral,slope,verdict
         levelsets.csv    height,measure
         acceptance.csv   number,name,passed,summary
  manifest.json  command, validated config, sha256 of the config and of every
         input file, package versions, outputs and wall time.

Relative input paths are resolved against the working directory.
PSUPER_THREADS caps the thread pools of the numerical libraries.
"""

# ----------------------------------------------------------------------------
# schemas

NUM = {"type": "number"}
POS = {"type": "number", "exclusiveMinimum": 0}
P = {"type": "number", "minimum": 2}
VEC = {"type": "array", "items": NUM, "minItems": 1, "maxItems": 3}
CELLS = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1, "maxItems": 3}
BOX = {"type": "array", "items": {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2},
       "minItems": 1, "maxItems": 3}
RANGE = {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2}
PATH = {"type": "string"}
FORM_OR_DATA = {"type": ["number", "string", "object"]}
TOL = {"tol": POS, "cap": {"type": "integer", "minimum": 1}}
GRID = {"origin": VEC, "extent": VEC, "cells": CELLS}

FORM = {
    "form": {"enum": ["barenblatt", "fundamental", "crandall_zhang", "separable",
                      "monotone_time", "bump"]},
    "p": {"type": "number", "minimum": 1},
    "n": {"type": "integer", "minimum": 1},
    "C": POS, "c": NUM, "U": PATH, "t0": NUM,
    "centers": {"type": "array"}, "coeffs": {"type": "array"},
    "count": {"type": "integer", "minimum": 1}, "box": BOX, "decay": POS,
    "kind": {"enum": ["linear", "step"]}, "slope": NUM, "t_jump": NUM, "height": NUM,
    "support": BOX, "time_support": RANGE, "amplitude": POS,
}


def _schema(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMAS = {
    "sample": _schema(FORM | GRID | {"t_range": RANGE, "steps": {"type": "integer", "minimum": 1},
                                     "cap": NUM, "extended": {"type": "boolean"}},
                      ["form", "origin", "extent", "cells"]),
    "envelope": _schema({"input": PATH, "epsilon": POS}, ["input", "epsilon"]),
    "mollify-time": _schema({"input": PATH, "sigma": POS}, ["input", "sigma"]),
    "dirichlet": _schema(GRID | TOL | {"p": P, "boundary": FORM_OR_DATA},
                         ["origin", "extent", "cells", "p", "boundary"]),
    "obstacle": _schema(GRID | TOL | {"p": P, "boundary": FORM_OR_DATA, "obstacle": FORM_OR_DATA,
                                      "max_outer": {"type": "integer", "minimum": 1}},
                        ["origin", "extent", "cells", "p", "boundary", "obstacle"]),
    "eigen": _schema(GRID | TOL | {"p": P}, ["origin", "extent", "cells", "p"]),
    "evolve": _schema(GRID | TOL | {"p": P, "initial": FORM_OR_DATA, "t_range": RANGE,
                                    "steps": {"type": "integer", "minimum": 1},
                                    "lateral": FORM_OR_DATA},
                      ["p", "initial", "t_range", "steps"]),
    "classify": _schema({"input": PATH, "p": {"type": "number", "exclusiveMinimum": 2},
                         "margin": POS, "slab": {"type": "integer", "minimum": 4},
                         "require_verdict": {"type": "boolean"}}, ["input", "p"]),
    "measure": _schema({"input": PATH, "p": {"type": "number", "exclusiveMinimum": 2}},
                       ["input", "p"]),
    "probe": _schema(FORM | {"target": {"enum": ["function", "gradient"]},
                             "q": {"type": ["number", "array"], "items": POS},
                             "region": BOX, "base_h": POS,
                             "levels": {"type": "integer", "minimum": 3},
                             "factor": {"type": "integer", "minimum": 2},
                             "time_range": RANGE, "dt_exponent": POS,
                             "require_verdict": {"type": "boolean"}},
                     ["form", "target", "q", "region", "base_h"]),
    "levelsets": _schema({"input": PATH, "heights": {"type": "array", "items": POS, "minItems": 4},
                          "min_ratio": POS}, ["input", "heights"]),
    "caccioppoli": _schema({"input": PATH, "p": P,
                            "variant": {"enum": ["elliptic_bounded", "elliptic_log", "parabolic"]},
                            "support": BOX, "time_support": RANGE, "amplitude": POS, "L": POS},
                           ["input", "p", "variant", "support"]),
    "harnack": _schema({"input": PATH, "x0": VEC, "t0": NUM, "R": POS, "Cwait": POS,
                        "p": {"type": "number", "exclusiveMinimum": 2}},
                       ["input", "x0", "t0", "R", "Cwait", "p"]),
    "verify-all": _schema({"preset": {"enum": ["desk"]},
                           "only": {"type": ["array", "string", "integer"]}}),
}

HELP = {
    "sample": "sample a closed form on a grid (space-time when t_range is given)",
    "envelope": "infimal convolution of a field",
    "mollify-time": "exponential time mollifier of a space-time field",
    "dirichlet": "p-harmonic function with given boundary values",
    "obstacle": "obstacle problem by primal-dual active sets",
    "eigen": "ground state U of the separable decay profile",
    "evolve": "implicit Euler evolution of the parabolic p-Laplacian",
    "classify": "class B / class M verdict for a space-time field",
    "measure": "discrete Riesz measure of a class B field",
    "probe": "summability probe on a refinement ladder",
    "levelsets": "level-set measure scaling fit",
    "caccioppoli": "Caccioppoli ratio for one bump cutoff",
    "harnack": "intrinsic Harnack ratio",
    "verify-all": "run the acceptance suite",
}


class Indeterminate(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    params: dict
    out: Path
    deterministic: bool = True


# ----------------------------------------------------------------------------
# argument handling


def _flag_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="psuper", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog=FORMATS)
    ap.add_argument("--version", action="version", version=f"psuper {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name, help=HELP[name], description=HELP[name], epilog=FORMATS,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="JSON file with the parameter block")
        sp.add_argument("--out", default="psuper-out", help="output directory (default psuper-out)")
        sp.add_argument("--no-deterministic", dest="deterministic", action="store_false",
                        help="allow multi-threaded numerics (default: one thread)")
        for key in schema["properties"]:
            req = " (required)" if key in schema["required"] else ""
            sp.add_argument(f"--{key}", dest=f"key_{key}", type=_flag_value, metavar="VALUE",
                            help=f"config key '{key}'{req}; JSON or plain string")
    return ap


def _key_path(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(x) for x in err.absolute_path)
    return path or "<config>"


def resolve_config(args) -> RunConfig:
    params = {}
    if args.config:
        try:
            params = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ValueError(f"config: cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ValueError(f"config: {args.config} is not valid JSON ({exc.msg})") from None
        if not isinstance(params, dict):
            raise ValueError("config: top level must be an object")
    for k, v in vars(args).items():
        if k.startswith("key_") and v is not None:
            params[k[4:]] = v
    schema = SCHEMAS[args.command]
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(params),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ValueError(f"config key '{_key_path(e)}': {e.message}")
    return RunConfig(args.command, params, Path(args.out), args.deterministic)


# ----------------------------------------------------------------------------
# run context


class Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.inputs = {}
        self.outputs = []
        self.extra = {}
        cfg.out.mkdir(parents=True, exist_ok=True)

    def read(self, path: str):
        from psuper.formats import read_field
        data = Path(path).read_bytes() if Path(path).is_file() else b""
        self.inputs[path] = hashlib.sha256(data).hexdigest()
        return read_field(path)

    def _target(self, name: str) -> Path:
        self.outputs.append(name)
        return self.cfg.out / name

    def field(self, name: str, f) -> None:
        from psuper.formats import write_field
        write_field(self._target(name), f)

    def json(self, name: str, obj) -> None:
        from psuper.formats import write_json
        write_json(self._target(name), obj)

    def csv(self, name: str, header, rows) -> None:
        from psuper.formats import write_csv
        write_csv(self._target(name), header, rows)

    def manifest(self, status: int, seconds: float, message: str | None = None) -> None:
        from importlib.metadata import PackageNotFoundError, version
        from psuper.formats import dumps

        def ver(name):
            try:
                return version(name)
            except PackageNotFoundError:
                return "unknown"

        cfg_text = json.dumps(self.cfg.params, sort_keys=True)
        man = {"command": self.cfg.command, "config": self.cfg.params,
               "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
               "inputs_sha256": self.inputs, "outputs": self.outputs, "exit_code": status,
               "deterministic": self.cfg.deterministic, "wall_time_seconds": seconds,
               "versions": {"psuper": __version__, "python": platform.python_version(),
                            **{m: ver(m) for m in ("numpy", "scipy", "jsonschema",
                                                   "threadpoolctl")}}}
        if message:
            man["message"] = message
        man.update(self.extra)
        (self.cfg.out / "manifest.json").write_text(dumps(man))


def _like(f, values):
    from psuper.grid import ScalarField, SpaceTimeField
    if isinstance(f, SpaceTimeField):
        return SpaceTimeField(f.stgrid, values)
    return ScalarField(f.grid, values)


def _grid(c: dict):
    from psuper.grid import Grid
    return Grid(c["origin"], c["extent"], c["cells"])


def _form(c: dict, keys=FORM):
    from psuper.closed_forms import from_config
    return from_config({k: v for k, v in c.items() if k in keys})


def _data_on(run: Run, spec, grid, key: str, time=None):
    """Number, .fld path or closed-form block, as an array on ``grid``."""
    import numpy as np
    from psuper.closed_forms import from_config, sample, sample_at
    if isinstance(spec, (int, float)):
        return np.full(grid.shape, float(spec))
    if isinstance(spec, str):
        f = run.read(spec)
        if f.values.shape != grid.shape:
            raise ValueError(f"config key '{key}': field shape {f.values.shape} does not match "
                             f"the grid {grid.shape}")
        return f.values
    cf = from_config(spec)
    if cf.stationary:
        return sample(cf, grid).values
    if time is None:
        raise ValueError(f"config key '{key}': form {cf.name} needs a time")
    return sample_at(cf, grid, time).values


# ----------------------------------------------------------------------------
# commands


def cmd_sample(run: Run, c: dict) -> int:
    from psuper.closed_forms import sample
    from psuper.grid import SpaceTimeGrid
    cf = _form(c)
    grid = _grid(c)
    if "t_range" in c:
        a, b = c["t_range"]
        grid = SpaceTimeGrid(grid, a, b, c.get("steps", 16))
    elif not cf.stationary:
        raise ValueError(f"config key 't_range': form {c['form']} is time dependent")
    f = sample(cf, grid, c.get("cap"), c.get("extended", False))
    run.field("field.fld", f)
    run.json("report.json", {"form": cf.to_config(), "min": f.values.min(), "max": f.values.max(),
                             "nodes": f.values.size})
    return 0


def cmd_envelope(run: Run, c: dict) -> int:
    from psuper.mollify import inf_convolution
    r = inf_convolution(run.read(c["input"]), c["epsilon"])
    run.field("envelope.fld", r.field)
    run.field("valid.fld", _like(r.field, r.valid_mask.astype(float)))
    run.json("report.json", {"epsilon": r.epsilon, "shrink_margin": r.shrink_margin,
                             "valid_nodes": int(r.valid_mask.sum()), "nodes": r.valid_mask.size})
    return 0


def cmd_mollify_time(run: Run, c: dict) -> int:
    from psuper.grid import SpaceTimeField
    from psuper.mollify import mollifier_defect, time_mollify
    u = run.read(c["input"])
    if not isinstance(u, SpaceTimeField):
        raise ValueError("config key 'input': needs a space-time field")
    us = time_mollify(u, c["sigma"])
    run.field("mollified.fld", us)
    run.json("report.json", {"sigma": c["sigma"], "defect": mollifier_defect(u, us, c["sigma"])})
    return 0


def _solver_kwargs(c: dict) -> dict:
    return {k: c[k] for k in ("tol", "cap") if k in c}


def cmd_dirichlet(run: Run, c: dict) -> int:
    from psuper.variational import DirichletProblem, solve_dirichlet
    g = _grid(c)
    prob = DirichletProblem(g, c["p"], _data_on(run, c["boundary"], g, "boundary"))
    u, rep = solve_dirichlet(prob, **_solver_kwargs(c))
    run.field("solution.fld", u)
    run.json("report.json", rep.to_dict())
    return 0


def cmd_obstacle(run: Run, c: dict) -> int:
    from psuper.grid import ScalarField
    from psuper.variational import DirichletProblem, ObstacleProblem, solve_obstacle
    g = _grid(c)
    base = DirichletProblem(g, c["p"], _data_on(run, c["boundary"], g, "boundary"))
    psi = ScalarField(g, _data_on(run, c["obstacle"], g, "obstacle"))
    kw = _solver_kwargs(c) | ({"max_outer": c["max_outer"]} if "max_outer" in c else {})
    u, rep = solve_obstacle(ObstacleProblem(base, psi), **kw)
    active = rep.extra.pop("active_set")
    mask = u.values * 0.0
    for idx in active:
        mask[tuple(idx)] = 1.0
    run.field("solution.fld", u)
    run.field("active.fld", _like(u, mask))
    run.json("report.json", rep.to_dict())
    return 0


def cmd_eigen(run: Run, c: dict) -> int:
    from psuper.variational import eigenfunction_U
    r = eigenfunction_U(_grid(c), c["p"], **_solver_kwargs(c))
    run.field("U.fld", r.U)
    run.field("w.fld", r.w)
    run.json("report.json", r.report())
    return 0


def cmd_evolve(run: Run, c: dict) -> int:
    import numpy as np
    from psuper.closed_forms import from_config, sample
    from psuper.evolution import EvolutionProblem, evolve
    from psuper.grid import ScalarField, SpaceTimeGrid
    a, b = c["t_range"]
    init = c["initial"]
    if isinstance(init, str):
        u0 = run.read(init)
        if not isinstance(u0, ScalarField) or hasattr(u0, "stgrid"):
            raise ValueError("config key 'initial': needs a spatial field")
        g = u0.grid
    else:
        if "cells" not in c:
            raise ValueError("config key 'cells': required when 'initial' is not a field file")
        g = _grid(c)
        u0 = ScalarField(g, _data_on(run, init, g, "initial", time=a))
    st = SpaceTimeGrid(g, a, b, c["steps"])
    lat = c.get("lateral", "zero")
    if lat == "zero":
        lateral = None
    elif lat == "hold":
        lateral = np.broadcast_to(u0.values, st.shape)
    elif isinstance(lat, str):
        f = run.read(lat)
        if f.values.shape != st.shape:
            raise ValueError(f"config key 'lateral': shape {f.values.shape} does not match {st.shape}")
        lateral = f.values
    elif isinstance(lat, dict):
        lateral = sample(from_config(lat), st).values
    else:
        lateral = np.full(st.shape, float(lat))
    u, rep = evolve(EvolutionProblem(st, c["p"], u0, lateral), **_solver_kwargs(c))
    run.field("solution.fld", u)
    run.json("report.json", rep.to_dict())
    return 0


def _spacetime_input(run: Run, c: dict):
    from psuper.grid import SpaceTimeField
    v = run.read(c["input"])
    if not isinstance(v, SpaceTimeField):
        raise ValueError("config key 'input': needs a space-time field")
    return v


def cmd_classify(run: Run, c: dict) -> int:
    from psuper.evolution import classify
    kw = {k: c[k] for k in ("margin", "slab") if k in c}
    v = classify(_spacetime_input(run, c), c["p"], **kw)
    run.json("verdict.json", v.to_dict())
    if c.get("require_verdict") and v.tag == "indeterminate":
        raise Indeterminate(f"classify: indeterminate verdict ({v.evidence.get('reason', 'no reason')})")
    return 0


def cmd_measure(run: Run, c: dict) -> int:
    from psuper.evolution import riesz_measure
    v = _spacetime_input(run, c)
    mu = riesz_measure(v, c["p"])
    grid = v.stgrid.space
    axes = grid.axes()
    run.json("measure.json", mu.report())
    head = ["step", "time", "node"] + [f"x{i}" for i in range(grid.dim)] + ["mass"]
    rows = ([k, float(v.stgrid.times[k]), ",".join(map(str, idx))]
            + [float(axes[i][j]) for i, j in enumerate(idx)] + [m]
            for k, idx, m in mu.rows())
    run.csv("measure.csv", head, rows)
    return 0


def cmd_probe(run: Run, c: dict) -> int:
    from psuper.regularity import RefinementLadder, summability_sweep
    qs = c["q"] if isinstance(c["q"], list) else [c["q"]]
    kw = {k: c[k] for k in ("levels", "factor", "dt_exponent") if k in c}
    tr = tuple(c["time_range"]) if "time_range" in c else None
    ladder = RefinementLadder(tuple(map(tuple, c["region"])), c["base_h"], time_range=tr, **kw)
    reps = summability_sweep(_form(c), c["target"], qs, ladder)
    run.json("probe.json", {"probes": [r.to_dict() for r in reps]})
    run.csv("probe.csv", ["q", "level_h", "integral", "slope", "verdict"],
            ([r.q, row["level_h"], row["integral"], row["slope"], r.verdict]
             for r in reps for row in r.csv_rows()))
    undecided = [r.q for r in reps if r.verdict not in ("convergent", "divergent")]
    if c.get("require_verdict") and undecided:
        raise Indeterminate(f"probe: indeterminate at q = {undecided}")
    return 0


def cmd_levelsets(run: Run, c: dict) -> int:
    from psuper.regularity import level_set_scaling
    kw = {"min_ratio": c["min_ratio"]} if "min_ratio" in c else {}
    fit = level_set_scaling(run.read(c["input"]), c["heights"], **kw)
    run.json("levelsets.json", fit.to_dict())
    run.csv("levelsets.csv", ["height", "measure"], zip(fit.heights, fit.measures))
    return 0


def cmd_caccioppoli(run: Run, c: dict) -> int:
    from psuper.grid import TestFunction
    from psuper.regularity import caccioppoli_check
    ts = tuple(c["time_support"]) if "time_support" in c else None
    z = TestFunction(tuple(map(tuple, c["support"])), ts, c.get("amplitude", 1.0))
    r = caccioppoli_check(run.read(c["input"]), z, c["p"], c["variant"], c.get("L"))
    run.json("caccioppoli.json", r.to_dict())
    return 0


def cmd_harnack(run: Run, c: dict) -> int:
    from psuper.regularity import harnack_report
    r = harnack_report(_spacetime_input(run, c), c["x0"], c["t0"], c["R"], c["Cwait"], c["p"])
    run.json("harnack.json", r)
    return 0


def _only(spec) -> list[int] | None:
    if spec is None:
        return None
    items = [spec] if isinstance(spec, int) else spec
    if isinstance(spec, str):
        items = [s for s in spec.split(",") if s.strip()]
    try:
        nums = [int(s) for s in items]
    except (TypeError, ValueError):
        raise ValueError(f"config key 'only': expected criterion numbers, got {spec!r}") from None
    bad = [n for n in nums if not 1 <= n <= 14]
    if bad:
        raise ValueError(f"config key 'only': no criterion {bad[0]} (valid 1-14)")
    return nums


def cmd_verify_all(run: Run, c: dict) -> int:
    from psuper.acceptance import run_all
    results = run_all(_only(c.get("only")), echo=lambda s: print(s, flush=True))
    body = []
    for r in results:
        d = r.to_dict()
        d.pop("seconds")  # timings go to the manifest, keeping the report reproducible
        body.append(d)
    run.json("acceptance.json", {"preset": c.get("preset", "desk"), "criteria": body})
    run.csv("acceptance.csv", ["number", "name", "passed", "summary"],
            ([r.number, r.name, r.passed, r.summary] for r in results))
    run.extra["criterion_seconds"] = {str(r.number): r.seconds for r in results}
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {failed}" if failed else ""))
    return 1 if failed else 0


COMMANDS = {name: globals()["cmd_" + name.replace("-", "_")] for name in SCHEMAS}


# ----------------------------------------------------------------------------
# entry point


def _threads(cfg: RunConfig):
    from threadpoolctl import threadpool_limits
    env = os.environ.get("PSUPER_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"PSUPER_THREADS must be an integer, got {env!r}") from None
        return threadpool_limits(max(1, n))
    return threadpool_limits(1) if cfg.deterministic else threadpool_limits(None)


def main(argv: list[str] | None = None) -> int:
    from psuper.variational import SolverFailure
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ValueError as exc:
        print(f"psuper {args.command}: {exc}", file=sys.stderr)
        return 2
    run = Run(cfg)
    t = time.perf_counter()
    message = None
    try:
        with _threads(cfg):
            status = COMMANDS[cfg.command](run, cfg.params)
    except SolverFailure as exc:
        run.json("report.json", exc.report.to_dict())
        message, status = f"{cfg.command}: solver failure: {exc}", 3
    except Indeterminate as exc:
        message, status = str(exc), 4
    except ValueError as exc:
        message, status = f"{cfg.command}: {exc}", 2
    if message:
        print(f"psuper {message}", file=sys.stderr)
    run.manifest(status, time.perf_counter() - t, message)
    return status


if __name__ == "__main__":
    sys.exit(main())
