"""Experiment front end: forward solves, zero search, reconstruction, sweeps, bounds.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from artifact.bounds import BoundBreakdown, theorem2_bound, theorem3_bound
from artifact.inverse import ReconstructionConfig, primitive_of, reconstruct
from artifact.jost import jost_function
from artifact.kernels import solve_K0
from artifact.potential import (FAMILIES, AprioriParams, Potential, from_spec,
                                validate_apriori)
from artifact.resonances import (ResonanceSearchConfig, ResonanceSet, find_resonances,
                                 pair_resonances, perturb_resonances)

log = logging.getLogger("artifact")

SCHEMA_VERSION = 1

_POTENTIAL_SCHEMA = {
    "oneOf": [
        {"type": "string"},
        {"type": "object", "required": ["family"],
         "properties": {"family": {"enum": sorted(FAMILIES)},
                        "params": {"type": "array", "items": {"type": "number"}}}},
    ]
}
_EXPONENT = {"oneOf": [{"type": "number", "exclusiveMinimum": 1}, {"enum": ["inf", "Infinity"]}]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "q1"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "a": {"type": "number", "exclusiveMinimum": 0},
        "n_grid": {"type": "integer", "minimum": 4},
        "q1": _POTENTIAL_SCHEMA,
        "q2": _POTENTIAL_SCHEMA,
        "params": {
            "type": "object",
            "required": ["Q1", "p", "Dp", "delta"],
            "properties": {
                "a": {"type": "number"}, "Q1": {"type": "number"}, "p": _EXPONENT,
                "Dp": {"type": "number"}, "delta": {"type": "number"},
                "r": {"oneOf": [_EXPONENT, {"type": "null"}]},
                "Dr_prime": {"type": ["number", "null"]}, "A_inf": {"type": ["number", "null"]},
            },
        },
        "R": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "eps": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "tolerances": {
            "type": "object",
            "properties": {"resonance": {"type": "number"}, "outer": {"type": "number"},
                           "stage_budget": {"type": "number"}},
        },
        "reconstruction": {
            "type": "object",
            "properties": {"alpha": {"type": ["number", "null"]},
                           "cutoff_A": {"type": ["number", "null"]},
                           "quad_points": {"type": "integer"}, "outer_iters": {"type": "integer"},
                           "outer_damping": {"type": "number"},
                           "path": {"enum": ["real", "contour"]}},
        },
        "forward": {
            "type": "object",
            "properties": {"circle_radii": {"type": "array", "items": {"type": "number"}},
                           "samples": {"type": "integer", "minimum": 8},
                           "real_segment": {"type": "number"}},
        },
    },
}

BREAKDOWN_SCHEMA = {
    "type": "object",
    "required": ["kind", "in_force", "flags", "values"],
    "properties": {
        "kind": {"enum": ["theorem2", "theorem3"]},
        "in_force": {"type": "boolean"},
        "flags": {"type": "array", "items": {"type": "string"}},
        "values": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}


class UsageError(Exception):
    pass


# -- canonical serialization ----------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _encode(obj, out: list):
    if isinstance(obj, dict):
        out.append("{")
        for i, k in enumerate(sorted(obj)):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _encode(obj[k], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _encode(v, out)
        out.append("]")
    elif isinstance(obj, (bool, np.bool_)) or obj is None:
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, (complex, np.complexfloating)):
        _encode({"re": obj.real, "im": obj.imag}, out)
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), out)
    else:
        out.append(json.dumps(str(obj)))


def canonical_json(obj) -> str:
    """Sorted keys, floats with 17 significant digits, trailing newline."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    if v is None:
        return ""
    return str(v)


def canonical_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def write_atomic(path: Path, text: str):
    """Write text to path through a temporary file and rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- configuration -------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    q1: Potential
    q2: Potential | None
    params: AprioriParams | None
    R: list[float] = field(default_factory=lambda: [20.0])
    eps: list[float] = field(default_factory=lambda: [0.0])
    seeds: list[int] = field(default_factory=lambda: [0])
    resonance_tol: float = 1e-8
    stage_budget: float = 1e-4
    recon: dict = field(default_factory=dict)
    forward: dict = field(default_factory=dict)

    def reconstruction_config(self, R: float) -> ReconstructionConfig:
        kw = {k: v for k, v in self.recon.items() if v is not None}
        return ReconstructionConfig(R=R, search=ResonanceSearchConfig(tol=self.resonance_tol), **kw)

    def search_config(self) -> ResonanceSearchConfig:
        return ResonanceSearchConfig(tol=self.resonance_tol)


def _potential(spec, a: float, n: int) -> Potential:
    if isinstance(spec, str):
        return from_spec(spec, a, n)
    fn, nargs = FAMILIES[spec["family"]]
    args = spec.get("params", [])
    if len(args) != nargs:
        raise UsageError(f"{spec['family']} takes {nargs} parameters, got {len(args)}")
    return fn(*args, a=a, n_grid=n)


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"invalid config: {exc.message}") from None
    a = float(raw.get("a", 1.0))
    n = int(raw.get("n_grid", 200))
    try:
        q1 = _potential(raw["q1"], a, n)
        q2 = _potential(raw["q2"], a, n) if "q2" in raw else None
        params = None
        if "params" in raw:
            params = AprioriParams.from_dict({"a": a, **raw["params"]})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    tol = raw.get("tolerances", {})
    return ExperimentConfig(
        q1, q2, params,
        R=[float(r) for r in raw.get("R", [20.0])],
        eps=[float(e) for e in raw.get("eps", [0.0])],
        seeds=[int(s) for s in raw.get("seeds", [0])],
        resonance_tol=float(tol.get("resonance", 1e-8)),
        stage_budget=float(tol.get("stage_budget", 1e-4)),
        recon=dict(raw.get("reconstruction", {})) | (
            {"outer_tol": float(tol["outer"])} if "outer" in tol else {}),
        forward=dict(raw.get("forward", {})),
    )


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        raise UsageError("--config is required")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(raw)


def _need_params(cfg: ExperimentConfig) -> AprioriParams:
    if cfg.params is None:
        raise UsageError("config needs a 'params' block")
    return cfg.params


# -- subcommands ---------------------------------------------------------------------------

def _labelled(cfg: ExperimentConfig):
    out = [("q1", cfg.q1)]
    if cfg.q2 is not None:
        out.append(("q2", cfg.q2))
    return out


def cmd_forward(cfg: ExperimentConfig, out: Path, fmt: str) -> list[Path]:
    """psi samples on circles and a real segment, K0 snapshot and zero sets."""
    written = []
    radii = cfg.forward.get("circle_radii", [1.0, 5.0])
    m = int(cfg.forward.get("samples", 64))
    seg = float(cfg.forward.get("real_segment", 10.0))
    R = max(cfg.R)
    for label, q in _labelled(cfg):
        rows = []
        for rad in radii:
            th = 2 * np.pi * np.arange(m) / m
            z = rad * np.exp(1j * th)
            psi = jost_function(q, z, route="ode")
            rows += [{"contour": f"circle{_fmt_float(rad)}", "z_re": v.real, "z_im": v.imag,
                      "psi_re": p.real, "psi_im": p.imag} for v, p in zip(z, psi)]
        z = np.linspace(-seg, seg, 2 * m + 1).astype(complex)
        psi = jost_function(q, z, route="ode")
        rows += [{"contour": "real", "z_re": v.real, "z_im": v.imag,
                  "psi_re": p.real, "psi_im": p.imag} for v, p in zip(z, psi)]
        cols = ["contour", "z_re", "z_im", "psi_re", "psi_im"]
        path = out / f"{label}_psi.{fmt}"
        write_atomic(path, canonical_csv(rows, cols) if fmt == "csv" else canonical_json(rows))
        written.append(path)
        K = solve_K0(q)
        path = out / f"{label}_kernel.json"
        write_atomic(path, canonical_json({"potential": q.to_dict(), "K0": K.to_dict()}))
        written.append(path)
        res = find_resonances(q, R, cfg=cfg.search_config())
        path = out / f"{label}_resonances.json"
        write_atomic(path, canonical_json(res.to_dict()))
        written.append(path)
    return written


def cmd_find_resonances(cfg: ExperimentConfig, out: Path, fmt: str) -> list[Path]:
    written = []
    for label, q in _labelled(cfg):
        for R in cfg.R:
            res = find_resonances(q, R, cfg=cfg.search_config())
            stem = f"{label}_resonances_R{_fmt_float(R)}"
            if fmt == "csv":
                rows = [{"re": z.real, "im": z.imag, "mult": m} for z, m in res.zeros]
                path = out / f"{stem}.csv"
                write_atomic(path, canonical_csv(rows, ["re", "im", "mult"]))
            else:
                path = out / f"{stem}.json"
                write_atomic(path, canonical_json(res.to_dict()))
            written.append(path)
    return written


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, fmt: str,
                    resonance_file: str | None = None) -> list[Path]:
    params = _need_params(cfg)
    R = cfg.R[0]
    if resonance_file is not None:
        with open(resonance_file, encoding="utf-8") as fh:
            s2 = ResonanceSet.from_dict(json.load(fh))
        R = s2.R
    elif cfg.q2 is not None:
        s2 = find_resonances(cfg.q2, R, cfg=cfg.search_config())
    else:
        raise UsageError("reconstruct needs q2 in the config or --resonances")
    res = reconstruct(cfg.q1, s2, params, cfg.reconstruction_config(R))
    prim_true = point_true = None
    if cfg.q2 is not None:
        prim_true = primitive_of(cfg.q1, cfg.q2)
        point_true = cfg.q2.values - cfg.q1.values
    diag = dict(res.diagnostics)
    diag.pop("seconds", None)
    written = [out / "reconstruction.json", out / "reconstruction.csv"]
    write_atomic(written[0], canonical_json({**res.to_dict(), "diagnostics": diag}))
    cols = ["x"] + (["primitive_true"] if prim_true is not None else []) + ["primitive_est"]
    if res.pointwise_estimate is not None:
        cols += (["pointwise_true"] if point_true is not None else []) + ["pointwise_est"]
    write_atomic(written[1], canonical_csv(res.table(prim_true, point_true), cols))
    return written


SWEEP_COLUMNS = ["R", "eps", "seed", "status", "eps_measured", "eps_pairing", "n_zeros",
                 "primitive_error", "pointwise_error", "theorem2_total", "theorem2_in_force",
                 "theorem3_total", "theorem3_in_force", "error"]


def _sweep_resonances(args):
    q, R, tol = args
    try:
        return find_resonances(q, R, cfg=ResonanceSearchConfig(tol=tol)), None
    except Exception as exc:  # recorded per row
        return None, f"{type(exc).__name__}: {exc}"


def _sweep_row(args) -> tuple[dict, float]:
    cfg, R, eps, seed, s1, s2, err = args
    t0 = time.perf_counter()
    row = {"R": R, "eps": eps, "seed": seed}
    try:
        if err is not None:
            raise RuntimeError(err)
        params = cfg.params
        s2p = perturb_resonances(s2, eps, seed)
        row["eps_measured"] = pair_resonances(s2, s2p).epsilon if s2.zeros else 0.0
        res = reconstruct(cfg.q1, s2p, params, cfg.reconstruction_config(R), resonances1=s1)
        row["eps_pairing"] = res.diagnostics["epsilon"]
        row["n_zeros"] = s2p.total
        row["primitive_error"] = float(np.max(np.abs(res.primitive_estimate
                                                     - primitive_of(cfg.q1, cfg.q2))))
        if res.pointwise_estimate is not None:
            row["pointwise_error"] = float(np.max(np.abs(
                res.pointwise_estimate - (cfg.q2.values - cfg.q1.values))))
        row["status"] = "ok"
    except Exception as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    b2 = theorem2_bound(R, eps, cfg.params)
    row["theorem2_total"], row["theorem2_in_force"] = b2.total, b2.in_force
    if cfg.params.has_smoothness:
        b3 = theorem3_bound(R, eps, cfg.params)
        row["theorem3_total"], row["theorem3_in_force"] = b3.total, b3.in_force
    return row, time.perf_counter() - t0


def _monotone(seq, increasing: bool) -> bool:
    vals = [v for v in seq if v is not None]
    pairs = zip(vals, vals[1:])
    return all(b >= a for a, b in pairs) if increasing else all(b <= a for a, b in pairs)


def sweep_summary(rows: list[dict], cfg: ExperimentConfig) -> dict:
    def err(R, e, s):
        for r in rows:
            if r["R"] == R and r["eps"] == e and r["seed"] == s and r["status"] == "ok":
                return r["primitive_error"]
        return None
    in_R = {f"eps={_fmt_float(e)},seed={s}": _monotone([err(R, e, s) for R in sorted(cfg.R)], False)
            for e in cfg.eps for s in cfg.seeds}
    in_eps = {f"R={_fmt_float(R)},seed={s}": _monotone([err(R, e, s) for e in sorted(cfg.eps)], True)
              for R in cfg.R for s in cfg.seeds}
    return {
        "n_rows": len(rows),
        "n_failed": sum(r["status"] != "ok" for r in rows),
        "nonincreasing_in_R": in_R,
        "nondecreasing_in_eps": in_eps,
        "fraction_nonincreasing_in_R": sum(in_R.values()) / max(len(in_R), 1),
        "fraction_nondecreasing_in_eps": sum(in_eps.values()) / max(len(in_eps), 1),
    }


def cmd_sweep(cfg: ExperimentConfig, out: Path, fmt: str, threads: int = 1) -> list[Path]:
    _need_params(cfg)
    if cfg.q2 is None:
        raise UsageError("sweep needs q2 (ground truth) in the config")
    Rs = sorted(set(cfg.R))
    jobs = [(q, R, cfg.resonance_tol) for R in Rs for q in (cfg.q1, cfg.q2)]
    pool = ProcessPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        found = list(pool.map(_sweep_resonances, jobs)) if pool else [_sweep_resonances(j) for j in jobs]
        sets = {}
        for i, R in enumerate(Rs):
            (s1, e1), (s2, e2) = found[2 * i], found[2 * i + 1]
            sets[R] = (s1, s2, e1 or e2)
        grid = [(cfg, R, e, s, *sets[R]) for R in Rs for e in sorted(set(cfg.eps))
                for s in sorted(set(cfg.seeds))]
        results = list(pool.map(_sweep_row, grid)) if pool else [_sweep_row(g) for g in grid]
    finally:
        if pool:
            pool.shutdown()
    rows_dir = out / "rows"
    for i, (row, _) in enumerate(results):
        write_atomic(rows_dir / f"row_{i:04d}.json", canonical_json(row))
    rows = [r for r, _ in results]
    timing = [{"R": r["R"], "eps": r["eps"], "seed": r["seed"], "wall_time": t} for r, t in results]
    written = [out / f"sweep.{fmt}", out / "sweep_summary.json", out / "sweep_timing.csv"]
    if fmt == "csv":
        write_atomic(written[0], canonical_csv(rows, SWEEP_COLUMNS))
    else:
        write_atomic(written[0], canonical_json(rows))
    write_atomic(written[1], canonical_json(sweep_summary(rows, cfg)))
    write_atomic(written[2], canonical_csv(timing, ["R", "eps", "seed", "wall_time"]))
    return written


def bounds_breakdown(params: AprioriParams, R: float, eps: float) -> BoundBreakdown:
    if params.has_smoothness:
        return theorem3_bound(R, eps, params)
    return theorem2_bound(R, eps, params)


def cmd_bounds(params: AprioriParams, R: float, eps: float, fmt: str | None) -> str:
    b = bounds_breakdown(params, R, eps)
    if fmt == "json":
        d = b.to_dict()
        jsonschema.validate(json.loads(canonical_json(d)), BREAKDOWN_SCHEMA)
        return canonical_json(d)
    if fmt == "csv":
        rows = [{"name": k, "value": v} for k, v in sorted(b.values.items())]
        return canonical_csv(rows, ["name", "value"])
    return b.format_text() + "\n"


def cmd_validate(cfg: ExperimentConfig) -> tuple[bool, str]:
    params = _need_params(cfg)
    if cfg.q2 is None:
        raise UsageError("validate needs q1 and q2")
    rep = validate_apriori(cfg.q1, cfg.q2, params)
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<24} {c.value:.6g} (limit {c.limit:.6g})"
             for c in rep.checks]
    return rep.all_passed, "\n".join(lines) + "\n"


# -- argument parsing -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON, schema_version 1)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int, help="overrides the config's seed list")
    common.add_argument("--format", choices=["csv", "json"], default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="artifact", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("forward", parents=[common], help="psi samples, K0 snapshot, zero sets")
    sub.add_parser("find-resonances", parents=[common], help="zeros of psi in |z| <= R")
    rc = sub.add_parser("reconstruct", parents=[common], help="estimate q2 - q1")
    rc.add_argument("--resonances", help="resonance-set JSON attributed to q2")
    sub.add_parser("sweep", parents=[common], help="stability sweep over (R, eps, seed)")
    b = sub.add_parser("bounds", parents=[common], help="evaluate the stability constants")
    b.add_argument("--R", type=float, required=True)
    b.add_argument("--eps", type=float, default=0.0)
    b.add_argument("--a", type=float)
    b.add_argument("--Q1", type=float)
    b.add_argument("--p")
    b.add_argument("--Dp", type=float)
    b.add_argument("--delta", type=float)
    b.add_argument("--r")
    b.add_argument("--Dr-prime", dest="Dr_prime", type=float)
    b.add_argument("--A-inf", dest="A_inf", type=float)
    sub.add_parser("validate", parents=[common], help="check the a priori conditions")
    return p


def _bounds_params(args) -> AprioriParams:
    if args.config:
        return _need_params(load_config(args.config))
    missing = [k for k in ("a", "Q1", "p", "Dp", "delta") if getattr(args, k) is None]
    if missing:
        raise UsageError("bounds needs --config or " + ", ".join(f"--{k}" for k in missing))
    try:
        return AprioriParams(args.a, args.Q1, args.p, args.Dp, args.delta, args.r,
                             args.Dr_prime, args.A_inf)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        if args.command == "bounds":
            sys.stdout.write(cmd_bounds(_bounds_params(args), args.R, args.eps, args.format))
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seeds=[args.seed])
        fmt = args.format or "json"
        if args.command == "validate":
            ok, text = cmd_validate(cfg)
            sys.stdout.write(text)
            return 0 if ok else 2
        if args.command == "forward":
            written = cmd_forward(cfg, out, args.format or "csv")
        elif args.command == "find-resonances":
            written = cmd_find_resonances(cfg, out, fmt)
        elif args.command == "reconstruct":
            written = cmd_reconstruct(cfg, out, fmt, args.resonances)
        else:
            written = cmd_sweep(cfg, out, args.format or "csv", args.threads)
        for path in written:
            print(path)
        return 0
    except UsageError as exc:
        print(f"artifact: usage error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"artifact: I/O failure at {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"artifact: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
