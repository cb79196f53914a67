"""Command line front end.

    neckflow <command> [--config PATH] [--jobs N] [--seed U64] [--out DIR]

Commands: simulate, spectrum, classify, escape, barrier-check, sweep, audit.
One JSON config schema serves all of them; missing sections take the
defaults in ``DEFAULTS``.  Exit status: 0 success, 2 hypothesis failure
(reported in the artifacts), 1 error.  NECKFLOW_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import HypothesisFailed, NeckflowError, ParseError, ValidationError

log = logging.getLogger("neckflow")

COMMANDS = ("simulate", "spectrum", "classify", "escape", "barrier-check", "sweep", "audit")
EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESIS = 0, 1, 2

DEFAULTS = {
    "initial": {"family": "cylinder"},
    "grid": {"y_max": 16.0, "n_y": 321, "n_theta": 1},
    "frame": {"kind": "rescaled", "center_t": 0.0},
    "schedule": {"kappa": 0.5, "R0": 10.0, "c1": 1.0, "eta0": 0.01, "lam1": 0.45, "lam2": 0.47},
    "step": {"dt_safety": 0.25, "scheme": "rk4"},
    "stop": {"tau_max": 5.0},
    "options": {},
}

# allowed keys per section, with a type check and an optional range check
_NUM = (int, float)
SCHEMA = {
    "initial": {
        "family": (str, lambda v: v in ("cylinder", "dumbbell", "synthetic", "csv")),
        "offset": (_NUM, None), "neck": (_NUM, lambda v: v > 0), "bulb": (_NUM, lambda v: v > 0),
        "outer": (_NUM, lambda v: v > 0), "a": (_NUM, lambda v: v > 0), "c": (_NUM, lambda v: v > 0),
        "width": (_NUM, lambda v: v > 0), "eta": (_NUM, None), "mode": (int, lambda v: v >= 0),
        "path": (str, None),
    },
    "grid": {"y_max": (_NUM, lambda v: v > 0), "n_y": (int, lambda v: v >= 5), "n_theta": (int, lambda v: v >= 1)},
    "frame": {"kind": (str, lambda v: v in ("rescaled", "unrescaled")), "center_t": (_NUM, None)},
    "schedule": {
        "kappa": (_NUM, lambda v: 0 < v < 1), "kappa2": (_NUM, lambda v: 0 < v < 1),
        "R0": (_NUM, lambda v: v > 0), "c1": (_NUM, lambda v: v > 0), "eta0": (_NUM, lambda v: v > 0),
        "lam1": (_NUM, lambda v: 0 < v < 0.5), "lam2": (_NUM, lambda v: 0 < v < 0.5),
    },
    "step": {"dt_safety": (_NUM, lambda v: 0 < v <= 0.25), "scheme": (str, lambda v: v in ("rk4", "imex")),
             "dt_init": (_NUM, lambda v: v > 0)},
    "stop": {"tau_max": (_NUM, None), "min_radius_floor": (_NUM, lambda v: v > 0),
             "max_steps": (int, lambda v: v >= 0), "max_radius": (_NUM, lambda v: v > 0),
             "graph_delta": (_NUM, lambda v: v > 0), "graph_radius": (_NUM, lambda v: v > 0)},
    "options": {
        "shoot": (bool, None), "sample_dt": (_NUM, lambda v: v > 0), "cutoff": (list, lambda v: len(v) == 2),
        "trace": (str, None), "a": (_NUM, None), "a_grid": (str, None), "a_values": (list, None),
        "eps": (_NUM, lambda v: v >= 0), "eps_list": (list, None), "regions": (list, lambda v: len(v) == 2),
        "trials": (int, lambda v: v >= 0), "dt": (_NUM, lambda v: v > 0), "lattice": (dict, None),
        "pairs": (list, None), "tau_max": (_NUM, lambda v: v > 0),
    },
}
TOP_KEYS = {"command", "seed", "out"} | set(SCHEMA)


@dataclass
class ExperimentConfig:
    command: str
    initial: dict
    grid: dict
    frame: dict
    schedule: dict
    step: dict
    stop: dict
    options: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0

    def to_dict(self):
        return dict(self.__dict__)

    def schedule_params(self):
        from .metrics import ScheduleParams
        s = dict(self.schedule)
        if "kappa2" in s:
            s["kappa"] = math.sqrt(s.pop("kappa2"))
        return ScheduleParams(**s)

    def step_params(self):
        from .flow import StepParams
        return StepParams(**self.step)

    def stop_condition(self):
        from .flow import StopCondition
        return StopCondition(**self.stop)


def _load_json(text, source="<config>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: {exc.msg} at line {exc.lineno} column {exc.colno}", line=exc.lineno) from None


def parse_config(path=None, command: Optional[str] = None, data: Optional[dict] = None) -> ExperimentConfig:
    """Read and validate a config; every problem is collected before raising."""
    if data is None:
        if path is None:
            data = {}
        else:
            try:
                with open(path) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ParseError(f"cannot read {path}: {exc}") from None
            data = _load_json(text, str(path))
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object", field="<root>")
    problems = []
    for key in data:
        if key not in TOP_KEYS:
            problems.append(f"{key}: unknown key")
    cmd = data.get("command", command)
    if command is not None and cmd != command:
        problems.append(f"command: config says {cmd!r} but {command!r} was requested")
    if cmd not in COMMANDS:
        problems.append(f"command: must be one of {', '.join(COMMANDS)}")
    merged = {}
    for sec, spec in SCHEMA.items():
        given = data.get(sec, {})
        if not isinstance(given, dict):
            problems.append(f"{sec}: must be an object")
            given = {}
        base = copy.deepcopy(DEFAULTS[sec])
        if sec in ("initial", "stop") and given:
            base = {}
        for k, v in given.items():
            if k not in spec:
                problems.append(f"{sec}.{k}: unknown key")
                continue
            typ, check = spec[k]
            if isinstance(v, bool) and typ is not bool:
                problems.append(f"{sec}.{k}: expected a number, got a boolean")
                continue
            if not isinstance(v, typ):
                problems.append(f"{sec}.{k}: wrong type {type(v).__name__}")
                continue
            if check is not None and not check(v):
                problems.append(f"{sec}.{k}: value {v!r} out of range")
                continue
            base[k] = v
        merged[sec] = base
    sched = merged["schedule"]
    if "kappa2" in sched and "kappa" in data.get("schedule", {}):
        problems.append("schedule.kappa2: give kappa or kappa2, not both")
    elif "kappa2" in sched:
        sched.pop("kappa", None)
    lam1, lam2 = sched.get("lam1", 0.45), sched.get("lam2", 0.47)
    if isinstance(lam1, _NUM) and isinstance(lam2, _NUM) and not lam1 < lam2:
        problems.append("schedule.lam2: must exceed lam1")
    init = merged["initial"]
    if init.get("family") == "csv":
        p = init.get("path")
        if p is None:
            problems.append("initial.path: required for the csv family")
        elif not os.path.exists(f"{p}.csv") and not os.path.exists(p):
            problems.append(f"initial.path: {p} does not exist")
    tr = merged["options"].get("trace")
    if tr is not None and not os.path.exists(tr):
        problems.append(f"options.trace: {tr} does not exist")
    if cmd == "classify" and tr is None:
        problems.append("options.trace: required for classify")
    if merged["frame"].get("kind") == "unrescaled" and init.get("family") == "synthetic":
        problems.append("initial.family: synthetic bases are rescaled")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        problems.append("seed: must be an unsigned 64-bit integer")
    out = data.get("out", "out")
    if not isinstance(out, str):
        problems.append("out: must be a string")
    if problems:
        raise ValidationError(problems)
    return ExperimentConfig(cmd, merged["initial"], merged["grid"], merged["frame"], merged["schedule"],
                            merged["step"], merged["stop"], merged["options"], out, seed)


# -- building blocks -------------------------------------------------------


def initial_state(cfg: ExperimentConfig):
    from .flow import dumbbell
    from .geometry import CylinderGraph, FlowState, FrameTag, read_snapshot
    from .perturb import synthetic_base

    init, grid = cfg.initial, cfg.grid
    fam = init.get("family", "cylinder")
    L, ny, nt = float(grid["y_max"]), int(grid["n_y"]), int(grid["n_theta"])
    frame = FrameTag(cfg.frame["kind"], ((0.0, 0.0, 0.0), float(cfg.frame.get("center_t", 0.0))))
    if fam == "csv":
        st = read_snapshot(init["path"][:-4] if init["path"].endswith(".csv") else init["path"])
        st.params = cfg.step_params()
        return st
    if fam == "synthetic":
        st = synthetic_base(eta=init.get("eta", 1e-4), y_max=L, n_y=ny, m=init.get("mode", 3))
    elif fam == "dumbbell":
        y = np.linspace(-L, L, ny)
        kw = {k: init[k] for k in ("neck", "bulb", "outer", "a", "c", "width") if k in init}
        r = dumbbell(y, **kw)
        st = FlowState(CylinderGraph.from_radius(np.repeat(r[:, None], nt, axis=1), -L, L), frame, 0.0)
    else:
        st = FlowState(CylinderGraph.cylinder(-L, L, ny, nt, init.get("offset", 0.0)), frame, 0.0)
    st.params = cfg.step_params()
    return st


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(type(x).__name__)


class RunLog:
    """JSON-lines log of events for one run."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def event(self, kind, **payload):
        rec = {"event": kind}
        rec.update(payload)
        self._fh.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")
        self._fh.flush()
        log.info("%s %s", kind, payload)

    def close(self):
        self._fh.close()


# -- commands --------------------------------------------------------------


def cmd_simulate(cfg, out, runlog, **_):
    from .classify import classify_dichotomy
    from .flow import evolve, shoot_rescaled
    from .geometry import write_snapshot
    from .metrics import DistanceTrace, trace_row

    st = initial_state(cfg)
    sched = cfg.schedule_params()
    opts = cfg.options
    shoot = opts.get("shoot", cfg.initial.get("family") == "dumbbell" and st.rescaled)
    if shoot:
        tau_end = float(cfg.stop.get("tau_max", 5.0))
        run = shoot_rescaled(st, tau_end, sample_dt=opts.get("sample_dt", 0.5))
        trace = DistanceTrace(schedule=sched)
        for s in run.states:
            trace.append(trace_row(s, sched))
        trace.stop_reason = run.stop_reason
        trace.finalize()
        final = run.final
        snaps = [(s.time, s.graph) for s in run.states]
    else:
        res = evolve(st, cfg.stop_condition(), sample_dt=opts.get("sample_dt", 0.5), keep_snapshots=True)
        trace, final = res.trace, res.state
        snaps = [(s.time, s.graph) for s in res.snapshots] if res.snapshots else []
    trace.to_csv(os.path.join(out, "trace.csv"))
    write_snapshot(final, os.path.join(out, "final"))
    runlog.event("simulated", rows=len(trace), stop_reason=trace.stop_reason)
    try:
        verdict = classify_dichotomy(trace, snaps).to_dict()
    except NeckflowError as exc:
        verdict = {"kind": "Inconclusive", "error": exc.record()}
    _write_json(os.path.join(out, "verdict.json"), verdict)
    return EXIT_OK


def cmd_spectrum(cfg, out, runlog, **_):
    from .spectral import EigenIndex, basis, discrete_eigenvalue, eigenvalue, project

    st = initial_state(cfg)
    cutoff = tuple(cfg.options.get("cutoff", (8, 4)))
    coeffs = project(st.graph.values, st.graph.grid, cutoff)
    coeffs.to_csv(os.path.join(out, "spectrum.csv"))
    g = st.graph.grid
    from .geometry import StripGrid
    fd_grid = StripGrid(g.y_min, g.y_max, g.n_y, max(g.n_theta, 64))
    rows = []
    for k in basis((min(cutoff[0], 4), min(cutoff[1], 2))):
        if k.parity == "sin":
            continue
        d = discrete_eigenvalue(fd_grid, k)
        rows.append((k.m, k.n, float(eigenvalue(k)), d))
    with open(os.path.join(out, "eigenvalues.csv"), "w") as fh:
        fh.write("m,n,exact,discrete,error\n")
        for m, n, ex, d in rows:
            fh.write(f"{m},{n},{ex:.17g},{d:.17g},{d - ex:.17g}\n")
    runlog.event("spectrum", modes=len(coeffs.coeffs), residual=coeffs.residual_norm)
    return EXIT_OK


def cmd_classify(cfg, out, runlog, **_):
    from .classify import classify_dichotomy
    from .metrics import DistanceTrace

    trace = DistanceTrace.from_csv(cfg.options["trace"])
    verdict = classify_dichotomy(trace)
    verdict.to_json(os.path.join(out, "verdict.json"))
    runlog.event("classified", verdict=verdict.kind, rate=verdict.fitted_rate)
    return EXIT_OK


def _escape_job(args):
    cfg_dict, a = args
    from .perturb import run_escape_experiment
    cfg = ExperimentConfig(**cfg_dict)
    base = initial_state(cfg)
    try:
        rep = run_escape_experiment(base, a, cfg.schedule_params(),
                                    tau_max=float(cfg.options.get("tau_max", 30.0)))
    except HypothesisFailed as exc:
        return {"a": a, "T_eps": None, "growth_exponent": None, "verdict": f"hypothesis:{exc.condition}",
                "error": exc.record()}
    d = rep.to_dict()
    d["verdict"] = "escaped" if rep.escaped else "no-escape"
    return d


def cmd_escape(cfg, out, runlog, a=None, **_):
    from .perturb import param_hash

    a = cfg.options.get("a", 1e-3) if a is None else a
    d = _escape_job((cfg.to_dict(), float(a)))
    name = "escape_report.json"
    _write_json(os.path.join(out, name), d)
    runlog.event("escape", a=a, T_eps=d.get("T_eps"), verdict=d["verdict"])
    return EXIT_HYPOTHESIS if d["verdict"].startswith("hypothesis") else EXIT_OK


def cmd_sweep(cfg, out, runlog, jobs=1, a_grid=None, **_):
    from .perturb import param_hash, parse_a_grid, write_aggregate

    if a_grid is not None:
        values = parse_a_grid(a_grid)
    elif "a_values" in cfg.options:
        values = [float(v) for v in cfg.options["a_values"]]
    else:
        values = parse_a_grid(cfg.options.get("a_grid", "1e-4:1e-2:log10"))
    manifest = {"a_values": values, "schedule": cfg.schedule, "base": cfg.initial, "grid": cfg.grid}
    _write_json(os.path.join(out, "manifest.json"), manifest)
    args = [(cfg.to_dict(), a) for a in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_escape_job, args))
    else:
        reports = [_escape_job(x) for x in args]
    for rep in reports:
        h = param_hash({"a": rep["a"], "schedule": cfg.schedule, "base": cfg.initial, "grid": cfg.grid})
        _write_json(os.path.join(out, f"escape_{h}.json"), rep)
    write_aggregate(reports, os.path.join(out, "aggregate.csv"))
    runlog.event("sweep", runs=len(reports))
    return EXIT_HYPOTHESIS if any(r["verdict"].startswith("hypothesis") for r in reports) else EXIT_OK


def cmd_barrier(cfg, out, runlog, seed=0, **_):
    from .barriers import build_barrier_pair, continue_history, random_perturbation, record_history, sandwich_monitor
    from .geometry import StripGrid

    opts = cfg.options
    init = dict(cfg.initial)
    L, ny = float(cfg.grid["y_max"]), int(cfg.grid["n_y"])
    grid = StripGrid(-L, L, ny)
    from .flow import dumbbell
    if init.get("family") == "dumbbell":
        kw = {k: init[k] for k in ("neck", "bulb", "outer", "a", "c", "width") if k in init}
        r0 = dumbbell(grid.y, **kw)
    else:
        r0 = np.full(grid.n_y, math.sqrt(2.0) + init.get("offset", 0.0))
    dt = float(opts.get("dt", 5e-4))
    hist = record_history(r0, grid, dt=dt, t_end=float(cfg.stop.get("tau_max", math.inf)),
                          r_floor=float(cfg.stop.get("min_radius_floor", 0.05)))
    eps = float(opts.get("eps", 10 * dt))
    pair = build_barrier_pair(hist, eps, regions=tuple(opts.get("regions", (1.0, 2.0))))
    pair.to_csv(os.path.join(out, "barrier"))
    rng = np.random.default_rng(seed)
    k0 = hist.index(pair.t0)
    results = []
    for _ in range(int(opts.get("trials", 50))):
        amp = rng.uniform(0.2, 1.0) * pair.eps / (2.0 * pair.C1)
        p = random_perturbation(rng, grid.y, amp)
        test = continue_history(hist.radii[k0] + p, hist, pair.t0, pair.t_end)
        res = sandwich_monitor(test, pair)
        results.append({"amplitude": amp, "violated_at": res.violated_at, "max_excess": res.max_excess})
    cert = pair.certificate
    report = {
        "eps": pair.eps, "C1": pair.C1, "K": pair.K, "t0": pair.t0, "t_end": pair.t_end,
        "pinch_time": hist.pinch_time, "regions": list(pair.regions),
        "certificate": None if cert is None else {"min_margin": cert.min_margin,
                                                  "min_margin_scaled": cert.min_margin_scaled,
                                                  "points": cert.points},
        "trials": results, "violations": sum(r["violated_at"] is not None for r in results),
    }
    _write_json(os.path.join(out, "barrier_report.json"), report)
    runlog.event("barrier", violations=report["violations"], C1=pair.C1, K=pair.K)
    ok = report["violations"] == 0 and (cert is None or cert.holds)
    return EXIT_OK if ok else EXIT_HYPOTHESIS


def cmd_audit(cfg, out, runlog, **_):
    from .perturb import lattice_pairs, separation_audit

    opts = cfg.options
    eps_list = opts.get("eps_list", [opts.get("eps", 1e-2)])
    if "pairs" in opts:
        pairs = [tuple(p) for p in opts["pairs"]]
    else:
        lat = {"t": 1e-3, "s": 0.015, "n": 60}
        lat.update(opts.get("lattice", {}))
        pairs = lattice_pairs(lat["t"], lat["s"], int(lat["n"]))
    reports = [separation_audit(pairs, float(e)).to_dict() for e in eps_list]
    _write_json(os.path.join(out, "audit.json"), reports)
    runlog.event("audit", ok=all(r["ok"] for r in reports))
    return EXIT_OK if all(r["ok"] for r in reports) else EXIT_HYPOTHESIS


HANDLERS = {
    "simulate": cmd_simulate, "spectrum": cmd_spectrum, "classify": cmd_classify, "escape": cmd_escape,
    "barrier-check": cmd_barrier, "sweep": cmd_sweep, "audit": cmd_audit,
}


def execute(cfg: ExperimentConfig, out: Optional[str] = None, jobs: int = 1, seed: Optional[int] = None,
            **extra) -> int:
    """Run one command; artifacts and ``run.log`` go to ``out``."""
    out = out or cfg.out
    os.makedirs(out, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    runlog = RunLog(os.path.join(out, "run.log"))
    runlog.event("start", command=cfg.command, seed=seed)
    try:
        status = HANDLERS[cfg.command](cfg, out, runlog, jobs=jobs, seed=seed, **extra)
    except HypothesisFailed as exc:
        runlog.event("hypothesis_failed", **exc.record())
        status = EXIT_HYPOTHESIS
    except NeckflowError as exc:
        runlog.event("error", **exc.record())
        status = EXIT_ERROR
    except Exception as exc:  # keep every failure structured
        runlog.event("error", error=type(exc).__name__, message=str(exc))
        status = EXIT_ERROR
    runlog.event("finish", status=status)
    runlog.close()
    return status


def _setup_logging():
    level = os.environ.get("NECKFLOW_LOG", "WARNING").upper()
    level = {"0": "WARNING", "1": "INFO", "2": "DEBUG"}.get(level, level)
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser():
    p = argparse.ArgumentParser(prog="neckflow", description="Mean curvature flow near the shrinking cylinder.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--jobs", type=int, default=1, metavar="N")
    p.add_argument("--seed", type=int, default=None, metavar="U64")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--a", type=float, default=None, help="seed amplitude for escape")
    p.add_argument("--a-grid", default=None, metavar="LO:HI:STEP", help="amplitude grid for sweep")
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = parse_config(args.config, command=args.command)
    except (ParseError, ValidationError) as exc:
        print(json.dumps(exc.record(), indent=2), file=sys.stderr)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "run.log"), "w") as fh:
                fh.write(json.dumps({"event": "error", **exc.record()}) + "\n")
        return EXIT_ERROR
    return execute(cfg, out=args.out, jobs=args.jobs, seed=args.seed, a=args.a, a_grid=args.a_grid)


if __name__ == "__main__":
    sys.exit(main())
