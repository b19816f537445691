"""
Scenario-driven command line front end.

    chemostat-deadbeat {simulate,observe,closed-loop,analyze,singular} CONFIG
        [--out DIR] [--h STEP] [--seed N]

CONFIG is a JSON document (schema in docs/scenario-schema.md).  Each run
writes ``report.json`` and, for time-domain runs, ``trajectory.csv`` into
``--out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .control import FeedbackParams, closed_loop_simulate
from .dynamics import (
    DEFAULT_H,
    BoundedByInflow,
    ChemostatModel,
    InputSignal,
    OpenHalfLine,
    State,
    integrate,
)
from .exceptions import DomainError, IntegrationDomainError, UnsupportedModelError
from .kinetics import SpeciesParams
from .numerics import steps_in
from .observability import (
    check_batch_identifiability,
    check_conditions,
    find_coexistence,
    singular_trajectory,
)
from .observer import run_observer

log = logging.getLogger(__name__)

__all__ = ["Scenario", "ScenarioError", "parse_scenario", "run_scenario", "main"]

KINDS = ("simulate", "observe", "closed_loop", "analyze", "singular")
EXIT_OK, EXIT_PARSE, EXIT_SINGULAR, EXIT_DOMAIN, EXIT_IO = 0, 2, 3, 4, 5


class ScenarioError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class Scenario:
    kind: str
    species: list[SpeciesParams]
    raw: dict
    domain_bounded: bool = False
    h: float = DEFAULT_H
    t_span: float | None = None
    inputs: dict = field(default_factory=dict)
    initial: State | None = None
    observer: dict | None = None
    feedback: dict | None = None
    analysis: dict | None = None
    singular: dict | None = None

    @property
    def n(self):
        return len(self.species)


# -- parsing ---------------------------------------------------------------


def _get(d, key, path, kind=None, default=..., required=True):
    """Fetch ``d[key]`` with type checking; errors name the dotted field path."""
    full = f"{path}.{key}" if path else key
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected an object")
    v = d.get(key)
    if v is None:
        if default is not ...:
            return default
        if required:
            raise ScenarioError(full, "missing required field")
        return None
    if kind == "number":
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ScenarioError(full, f"expected a finite number, got {v!r}")
        return float(v)
    if kind == "numbers":
        if not isinstance(v, list) or not v:
            raise ScenarioError(full, f"expected a non-empty list of numbers, got {v!r}")
        return [_get({"v": e}, "v", f"{full}[{i}]", "number") for i, e in enumerate(v)]
    if kind is not None and not isinstance(v, kind):
        raise ScenarioError(full, f"expected {kind.__name__}, got {type(v).__name__}")
    return v


def _positive(v, path, strict=True):
    if (strict and not v > 0) or (not strict and not v >= 0):
        raise ScenarioError(path, f"must be {'>' if strict else '>='} 0, got {v}")
    return v


def _multiple(value, h, path):
    try:
        return steps_in(value, h, path)
    except ValueError:
        raise ScenarioError(path, f"{value} is not an integer multiple of h={h}") from None


def _parse_species(model):
    species_raw = _get(model, "species", "model", list)
    if not species_raw:
        raise ScenarioError("model.species", "need at least one species")
    g_mode = _get(model, "g_mode", "model", str, default="mu")
    if g_mode not in ("mu", "K_mu"):
        raise ScenarioError("model.g_mode", f"expected 'mu' or 'K_mu', got {g_mode!r}")
    K = _get(model, "K", "model", "number", default=1.0) if g_mode == "K_mu" else 1.0
    _positive(K, "model.K")
    out = []
    for i, sp in enumerate(species_raw):
        path = f"model.species[{i}]"
        a = _positive(_get(sp, "a", path, "number"), f"{path}.a")
        k = _positive(_get(sp, "k", path, "number"), f"{path}.k")
        b = _positive(_get(sp, "b", path, "number", default=0.0), f"{path}.b", strict=False)
        out.append(SpeciesParams.monod(a, k, b, K))
    return out


def _load_json(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError("", f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"{path}, line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("", "top level must be an object")
    return doc


def parse_scenario(path, kind=None, h=None, seed=None) -> Scenario:
    """Load and validate a JSON scenario.

    ``kind`` (from the subcommand) overrides/validates the document's
    ``kind``; ``h`` and ``seed`` override the numerics step and noise seed.
    """
    doc = _load_json(path) if not isinstance(path, dict) else path
    doc_kind = _get(doc, "kind", "", str, required=False)
    if doc_kind is not None:
        doc_kind = doc_kind.replace("-", "_")
        if doc_kind not in KINDS:
            raise ScenarioError("kind", f"unknown kind {doc_kind!r}")
    if kind is not None and doc_kind is not None and kind != doc_kind:
        raise ScenarioError("kind", f"config is {doc_kind!r} but subcommand is {kind!r}")
    kind = kind or doc_kind
    if kind is None:
        raise ScenarioError("kind", "missing required field")

    model = _get(doc, "model", "", dict)
    species = _parse_species(model)
    domain = _get(model, "domain", "model", str, default="half_line")
    if domain not in ("half_line", "bounded"):
        raise ScenarioError("model.domain", f"expected 'half_line' or 'bounded', got {domain!r}")

    numerics = _get(doc, "numerics", "", dict, default={})
    step = h if h is not None else _get(numerics, "h", "numerics", "number", default=DEFAULT_H)
    _positive(step, "numerics.h")
    scn = Scenario(kind, species, doc, domain == "bounded", step)

    if kind in ("simulate", "observe", "closed_loop"):
        scn.t_span = _get(numerics, "t_span", "numerics", "number")
        _positive(scn.t_span, "numerics.t_span")
        _multiple(scn.t_span, step, "numerics.t_span")
        scn.inputs = _parse_inputs(_get(doc, "inputs", "", dict), kind)
        init = _get(doc, "initial", "", dict)
        x0 = _get(init, "x", "initial", "numbers")
        s0 = _get(init, "s", "initial", "number")
        if len(x0) != scn.n:
            raise ScenarioError("initial.x", f"expected {scn.n} entries, got {len(x0)}")
        for i, v in enumerate(x0):
            _positive(v, f"initial.x[{i}]")
        _positive(s0, "initial.s")
        scn.initial = State(np.array(x0), s0)
        if scn.domain_bounded:
            s_in = scn.inputs.get("s_in")
            if s_in is None:
                raise ScenarioError("model.domain", "bounded domain requires constant inputs.s_in")
            if not s0 < s_in:
                raise ScenarioError("initial.s", f"must lie in (0, s_in={s_in})")

    if kind in ("observe", "closed_loop"):
        obs = _get(doc, "observer", "", dict)
        r = _positive(_get(obs, "r", "observer", "number"), "observer.r")
        _multiple(r, step, "observer.r")
        z0 = _get(obs, "z0", "observer", "numbers", default=[1.0] * scn.n)
        if len(z0) != scn.n:
            raise ScenarioError("observer.z0", f"expected {scn.n} entries, got {len(z0)}")
        for i, v in enumerate(z0):
            _positive(v, f"observer.z0[{i}]")
        noise = _get(obs, "noise_std", "observer", "number", default=0.0)
        _positive(noise, "observer.noise_std", strict=False)
        obs_seed = seed if seed is not None else _get(obs, "seed", "observer", int, required=False)
        if noise > 0 and obs_seed is None:
            raise ScenarioError("observer.seed", "required when noise_std > 0")
        scn.observer = {"r": r, "z0": z0, "noise_std": noise, "seed": obs_seed}

    if kind == "closed_loop":
        if scn.n != 1:
            raise ScenarioError("model.species", "closed_loop needs exactly one species")
        if scn.inputs.get("s_in") is None:
            raise ScenarioError("inputs.s_in", "closed_loop needs a constant inflow concentration")
        fb = _get(doc, "feedback", "", dict)
        scn.feedback = {
            key: _positive(_get(fb, key, "feedback", "number"), f"feedback.{key}")
            for key in ("D_star", "s_star", "x_star", "L")
        }
        sp = species[0]
        fp = FeedbackParams(**scn.feedback, b=sp.b, K=sp.g.a / sp.mu.a)
        try:
            fp.check_equilibrium(species[0], scn.inputs["s_in"], tol=1e-6)
        except DomainError as exc:
            raise ScenarioError("feedback", str(exc)) from None
        if not scn.initial.s < scn.inputs["s_in"]:
            raise ScenarioError("initial.s", "must lie in (0, s_in)")

    if kind in ("analyze", "singular") and scn.n != 2:
        raise ScenarioError("model.species", f"{kind} needs exactly two species")

    if kind == "analyze":
        an = _get(doc, "analysis", "", dict, default={})
        s_in = _get(an, "s_in", "analysis", "number", required=False)
        if s_in is not None:
            _positive(s_in, "analysis.s_in")
        D_max = _get(an, "D_max", "analysis", "number", required=False)
        if D_max is not None:
            _positive(D_max, "analysis.D_max", strict=False)
        s_max = _get(an, "s_max", "analysis", "number", default=s_in if s_in is not None else 100.0)
        _positive(s_max, "analysis.s_max")
        scn.analysis = {"s_in": s_in, "D_max": D_max, "s_max": s_max}

    if kind == "singular":
        sg = _get(doc, "singular", "", dict)
        s0 = _positive(_get(sg, "s0", "singular", "number"), "singular.s0")
        t_max = _positive(_get(sg, "t_max", "singular", "number"), "singular.t_max")
        s_in = _get(sg, "s_in", "singular", "number", required=False)
        if s_in is not None and not s0 < s_in:
            raise ScenarioError("singular.s0", f"must lie in (0, s_in={s_in})")
        scn.singular = {"s0": s0, "t_max": t_max, "s_in": s_in, "h": _get(sg, "h", "singular", "number", default=1e-3)}
    return scn


def _parse_inputs(inp, kind):
    if "piecewise" in inp:
        rows = _get(inp, "piecewise", "inputs", list)
        table = []
        for i, row in enumerate(rows):
            path = f"inputs.piecewise[{i}]"
            if not isinstance(row, list) or len(row) != 3:
                raise ScenarioError(path, "expected [t_start, D, s_in]")
            t, D, s_in = (_get({"v": v}, "v", path, "number") for v in row)
            _positive(D, path + "[1]", strict=False)
            _positive(s_in, path + "[2]", strict=False)
            table.append((t, D, s_in))
        if not table or min(r[0] for r in table) != 0:
            raise ScenarioError("inputs.piecewise", "first row must start at t = 0")
        s_ins = {r[2] for r in table}
        return {"piecewise": table, "s_in": s_ins.pop() if len(s_ins) == 1 else None}
    s_in = _positive(_get(inp, "s_in", "inputs", "number"), "inputs.s_in", strict=False)
    if kind == "closed_loop":
        return {"s_in": s_in}
    D = _positive(_get(inp, "D", "inputs", "number"), "inputs.D", strict=False)
    return {"D": D, "s_in": s_in}


# -- running ---------------------------------------------------------------


def _finite(obj, path="", bad=None):
    """Copy of ``obj`` with non-finite floats replaced by None (paths recorded)."""
    if isinstance(obj, dict):
        return {k: _finite(v, f"{path}.{k}" if path else k, bad) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v, f"{path}[{i}]", bad) for i, v in enumerate(obj)]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            if bad is not None:
                bad.append(path)
            return None
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist(), path, bad)
    return obj


def _fmt(v):
    return repr(float(v))


def _write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def _model(scn):
    domain = BoundedByInflow(scn.inputs["s_in"]) if scn.domain_bounded else OpenHalfLine()
    return ChemostatModel(scn.species, domain)


def _input_signal(scn, n_steps):
    if "piecewise" in scn.inputs:
        return InputSignal.piecewise(scn.inputs["piecewise"], scn.h, n_steps)
    return InputSignal.constant(scn.inputs["D"], scn.inputs["s_in"], scn.h, n_steps)


def _trajectory_columns(traj):
    n = traj.x.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + ["s", "D", "s_in"]
    cols = [traj.t] + [traj.x[:, i] for i in range(n)] + [traj.s, traj.D, traj.s_in]
    return header, cols


def _terminal(traj):
    return {"t": traj.t[-1], "x": traj.x[-1], "s": traj.s[-1]}


def _species_echo(scn):
    return [{"a": p.mu.a, "k": p.mu.k, "b": p.b, "g_a": p.g.a} for p in scn.species]


def _run_simulate(scn, out_dir, report):
    n_steps = steps_in(scn.t_span, scn.h)
    traj = integrate(_model(scn), scn.initial, _input_signal(scn, n_steps), scn.t_span)
    _write_csv(os.path.join(out_dir, "trajectory.csv"), *_trajectory_columns(traj))
    report["terminal_state"] = _terminal(traj)
    report["clamp_count"] = traj.clamp_count
    return EXIT_OK


def _run_observe(scn, out_dir, report):
    obs = scn.observer
    n_steps = steps_in(scn.t_span, scn.h)
    noisy = obs["noise_std"] > 0
    traj = integrate(
        _model(scn), scn.initial, _input_signal(scn, n_steps), scn.t_span,
        noise_std=obs["noise_std"] or None, seed=obs["seed"],
    )
    run = run_observer(traj, scn.species, obs["r"], obs["z0"], noisy=noisy)
    header, cols = _trajectory_columns(traj)
    header += [f"z{i + 1}" for i in range(scn.n)]
    cols += [run.z[:, i] for i in range(scn.n)]
    if noisy:
        header.append("s_measured")
        cols.append(traj.s_noisy)
    _write_csv(os.path.join(out_dir, "trajectory.csv"), header, cols)

    k = steps_in(obs["r"], scn.h)
    err = np.abs(run.z[k:] - traj.x[k:])
    report["terminal_state"] = _terminal(traj)
    report["observer"] = {
        "windows": [
            {"t": rec.t, "det_normalized": rec.det_normalized, "skipped": rec.skipped, "clamped": rec.clamped}
            for rec in run.resets
        ],
        "skipped_resets": run.skipped_resets,
        "max_est_error_after_r": float(err.max()) if err.size else None,
        "max_rel_est_error_after_r": float((err / (1 + traj.x[k:])).max()) if err.size else None,
        "terminal_estimate": run.z[-1],
    }
    if run.resets and all(rec.skipped for rec in run.resets):
        report["error"] = {"type": "SingularGram", "message": "every observer window was singular"}
        return EXIT_SINGULAR
    return EXIT_OK


def _run_closed_loop(scn, out_dir, report):
    fb, obs = scn.feedback, scn.observer
    sp = scn.species[0]
    K = sp.g.a / sp.mu.a
    fp = FeedbackParams(fb["D_star"], fb["s_star"], fb["x_star"], fb["L"], sp.b, K)
    s_in = scn.inputs["s_in"]
    model = ChemostatModel([sp], BoundedByInflow(s_in))
    x0, s0 = scn.initial.x[0], scn.initial.s
    run = closed_loop_simulate(model, fp, s_in, obs["r"], (x0, s0, obs["z0"][0]), scn.t_span, scn.h)
    traj = run.trajectory
    header, cols = _trajectory_columns(traj)
    header += ["z1", "D_applied"]
    cols += [run.z, run.D_applied]
    _write_csv(os.path.join(out_dir, "trajectory.csv"), header, cols)
    k = steps_in(obs["r"], scn.h)
    err = np.abs(run.z[k:] - run.x[k:])
    target_err = np.max(np.abs(np.c_[run.s - fb["s_star"], run.x - fb["x_star"], run.z - fb["x_star"]]), axis=1)
    report["terminal_state"] = {**_terminal(traj), "z": run.z[-1]}
    report["observer"] = {
        "windows": [{"t": rec.t, "det_normalized": rec.det_normalized, "skipped": rec.skipped} for rec in run.resets],
        "skipped_resets": sum(rec.skipped for rec in run.resets),
        "max_est_error_after_r": float(err.max()) if err.size else None,
    }
    report["closed_loop"] = {"terminal_error_inf": float(target_err[-1]), "clamp_count": traj.clamp_count}
    return EXIT_OK


def _entry_json(e):
    return {"holds": e.holds, "best_c": e.best_c, "best_a": e.best_a, "r_min": e.r_min, "reason": e.reason}


def _run_analyze(scn, out_dir, report):
    p1, p2 = scn.species
    an = scn.analysis
    coex = find_coexistence(p1, p2, an["s_max"])
    out = {
        "coexistence": {
            "kind": coex.kind,
            "s_max": an["s_max"],
            "points": [
                {"s_star": pt.s_star, "D": pt.D, "g1": pt.g1, "g2": pt.g2, "line": pt.describe()}
                for pt in coex.points
            ],
        }
    }
    try:
        v = check_batch_identifiability(p1, p2)
        out["batch"] = {"strongly_observable": v.strongly_observable, "reason": v.reason}
    except UnsupportedModelError as exc:
        out["batch"] = {"error": str(exc)}
    rep = check_conditions(p1, p2, an["s_in"], an["D_max"])
    out["conditions"] = {
        "method": rep.method,
        "s_in": rep.s_in,
        "D_max": rep.D_max,
        "quadratic": None if rep.quadratic is None else dict(rep.quadratic._asdict()),
        "entries": {name: _entry_json(e) for name, e in rep.entries.items()},
    }
    report["analysis"] = out
    return EXIT_OK


def _run_singular(scn, out_dir, report):
    p1, p2 = scn.species
    sg = scn.singular
    st = singular_trajectory(p1, p2, sg["s0"], sg["t_max"], sg["s_in"], h=sg["h"])
    _write_csv(os.path.join(out_dir, "trajectory.csv"), ["t", "s"], [st.t, st.s])
    report["singular"] = {
        "s0": sg["s0"],
        "domain": [0.0, sg["s_in"]] if sg["s_in"] is not None else [0.0, "inf"],
        "exit_time": st.exit_time,
        "exit_kind": st.exit_kind,
        "final_s": st.s[-1],
    }
    return EXIT_OK


_RUNNERS = {
    "simulate": _run_simulate,
    "observe": _run_observe,
    "closed_loop": _run_closed_loop,
    "analyze": _run_analyze,
    "singular": _run_singular,
}


def _scenario_echo(scn):
    return {
        "kind": scn.kind,
        "h": scn.h,
        "t_span": scn.t_span,
        "species": _species_echo(scn),
        "domain": "bounded" if scn.domain_bounded else "half_line",
        "inputs": scn.inputs,
        "initial": None if scn.initial is None else {"x": scn.initial.x, "s": scn.initial.s},
        "observer": scn.observer,
        "feedback": scn.feedback,
        "analysis": scn.analysis,
        "singular": scn.singular,
    }


def run_scenario(scn: Scenario, out_dir) -> int:
    """Run one scenario, write its artifacts and return the exit code."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        log.error("output directory %s not writable: %s", out_dir, exc)
        return EXIT_IO

    report: dict[str, Any] = {"scenario": _scenario_echo(scn)}
    try:
        code = _RUNNERS[scn.kind](scn, out_dir, report)
    except IntegrationDomainError as exc:
        report["error"] = {"type": "IntegrationDomainError", "t": exc.t, "message": str(exc)}
        code = EXIT_DOMAIN
    except OSError as exc:
        log.error("writing artifacts failed: %s", exc)
        return EXIT_IO
    report["exit_code"] = code
    bad = []
    clean = _finite(report, bad=bad)
    if bad:
        clean["nonfinite_fields"] = bad
    try:
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(clean, fh, indent=2, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        log.error("writing report failed: %s", exc)
        return EXIT_IO
    return code


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chemostat-deadbeat",
        description="Chemostat simulation, dead-beat observation and observability analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "observe", "closed-loop", "analyze", "singular"):
        p = sub.add_parser(name)
        p.add_argument("config", help="scenario JSON file")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--h", type=float, default=None, help="override the integration step")
        p.add_argument("--seed", type=int, default=None, help="noise seed (overrides the config)")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    kind = args.command.replace("-", "_")
    try:
        scn = parse_scenario(args.config, kind=kind, h=args.h, seed=args.seed)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    return run_scenario(scn, args.out)


if __name__ == "__main__":
    sys.exit(main())
