"""Scenario configs, seeded runs with failure injection, sweeps and CSV output."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import jsonschema

from . import oracles
from .geometry import GeometryError, GridSpec, RegionParams, build_partition
from .protocol import (ColorSpec, ConfigError, ScenarioConfig, SpawnPolicy,
                       config_violations, fail, initial_state, recover,
                       trace_record, update)

log = logging.getLogger(__name__)

CSV_HEADER = ("param", "value", "seed", "color", "throughput",
              "summed_throughput", "failures", "recoveries")
SWEEP_PARAMS = ("rs", "v", "l", "K", "p_f", "p_r", "turns", "overlap_fraction", "n_colors")

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "l", "rs", "v", "colors"],
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "rows", "cols"],
            "properties": {
                "kind": {"enum": ["square", "triangular", "parallelogram"]},
                "rows": {"type": "integer", "minimum": 1},
                "cols": {"type": "integer", "minimum": 1},
                "side_len": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "l": {"type": "number", "exclusiveMinimum": 0},
        "rs": {"type": "number", "minimum": 0},
        "v": {"type": "number", "exclusiveMinimum": 0},
        "K": {"type": "integer", "minimum": 0},
        "p_f": {"type": "number", "minimum": 0, "maximum": 1},
        "p_r": {"type": "number", "minimum": 0, "maximum": 1},
        "colors": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "source", "target"],
                "properties": {
                    "name": {"type": "string"},
                    "source": {"type": "integer"},
                    "target": {"type": "integer"},
                },
            },
        },
        "spawn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"per_round": {"type": "integer", "minimum": 0}},
        },
        "lock_timeout": {"type": "integer", "minimum": 1},
        "protect_targets": {"type": "boolean"},
        "seed": {"type": "integer"},
    },
}


class InvariantViolation(RuntimeError):
    """A safety check failed during an instrumented run."""

    def __init__(self, report):
        super().__init__(str(report))
        self.report = report


# ---------------------------------------------------------------------------
# config

def _field_path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a JSON scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    errors = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"{_field_path(e)}: {e.message}" for e in errors))
    g = doc["grid"]
    grid = GridSpec(g["kind"], g["rows"], g["cols"], float(g.get("side_len", 1.0)))
    cfg = ScenarioConfig(
        params=RegionParams(float(doc["l"]), float(doc["rs"])),
        v=float(doc["v"]),
        colors=tuple(ColorSpec(c["name"], c["source"], c["target"]) for c in doc["colors"]),
        grid=grid,
        K=doc.get("K", 2500),
        p_f=float(doc.get("p_f", 0.0)),
        p_r=float(doc.get("p_r", 0.0)),
        seed=doc.get("seed", 0),
        spawn=SpawnPolicy(doc.get("spawn", {}).get("per_round", 1)),
        lock_timeout=doc.get("lock_timeout", 8),
        protect_targets=doc.get("protect_targets", True),
    )
    errs = config_violations(cfg, build_partition(grid))
    if errs:
        raise ConfigError("; ".join(errs))
    return cfg


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "grid": {"kind": cfg.grid.kind, "rows": cfg.grid.rows, "cols": cfg.grid.cols,
                 "side_len": cfg.grid.side_len},
        "l": cfg.params.l, "rs": cfg.params.rs, "v": cfg.v, "K": cfg.K,
        "p_f": cfg.p_f, "p_r": cfg.p_r,
        "colors": [{"name": c.name, "source": c.source, "target": c.target} for c in cfg.colors],
        "spawn": {"per_round": cfg.spawn.per_round},
        "lock_timeout": cfg.lock_timeout, "protect_targets": cfg.protect_targets,
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# scenarios

def straight_path(l=0.25, rs=0.05, v=0.2, K=2500, **kw) -> ScenarioConfig:
    """One color up the first column of the 8x8 unit grid, 1 -> 57."""
    return ScenarioConfig(RegionParams(l, rs), v, (ColorSpec("a", 1, 57),),
                          GridSpec("square", 8, 8, 1.0), K=K, **kw)


def corridor_cells(turns: int, length: int = 8, size: int = 8) -> list[int]:
    """Cells of a length-``length`` path on a size x size grid with ``turns`` turns.

    The path starts at cell 1 and alternates up and right runs, spreading
    the moves as evenly as the turn count allows.
    """
    moves = length - 1
    if not 0 <= turns < moves:
        raise ConfigError(f"turns must be in 0..{moves - 1}")
    nseg = turns + 1
    lens = [moves // nseg + (1 if k < moves % nseg else 0) for k in range(nseg)]
    r = c = 0
    out = [1]
    for k, n in enumerate(lens):
        for _ in range(n):
            if k % 2 == 0:
                r += 1
            else:
                c += 1
            if r >= size or c >= size:
                raise ConfigError("corridor leaves the grid")
            out.append(r * size + c + 1)
    return out


def turns_scenario(turns: int, l=0.25, rs=0.05, v=0.2, K=2500, **kw) -> ScenarioConfig:
    """Length-8 corridor with the given number of turns; every other cell is failed."""
    path = corridor_cells(turns)
    blocked = frozenset(range(1, 65)) - set(path)
    return ScenarioConfig(RegionParams(l, rs), v, (ColorSpec("a", path[0], path[-1]),),
                          GridSpec("square", 8, 8, 1.0), K=K, initially_failed=blocked, **kw)


def overlap_scenario(shared: int, l=0.25, rs=0.05, v=0.2, K=2500, **kw) -> ScenarioConfig:
    """Two colors on a 1x16 strip whose 8-cell paths share ``shared`` cells.

    Color a runs 1 -> 8 and color b runs (9 - n) -> (16 - n).
    """
    if not 0 <= shared <= 7:
        raise ConfigError("shared must be in 0..7")
    colors = (ColorSpec("a", 1, 8), ColorSpec("b", 9 - shared, 16 - shared))
    return ScenarioConfig(RegionParams(l, rs), v, colors, GridSpec("square", 1, 16, 1.0),
                          K=K, **kw)


def n_colors_scenario(n: int, l=0.25, rs=0.05, v=0.2, K=2500, **kw) -> ScenarioConfig:
    """``n`` colors over a 1x3 strip, alternating directions 1 -> 3 and 3 -> 1."""
    if not 1 <= n <= 8:
        raise ConfigError("n_colors must be in 1..8")
    colors = tuple(ColorSpec(chr(ord("a") + k), 1 if k % 2 == 0 else 3, 3 if k % 2 == 0 else 1)
                   for k in range(n))
    return ScenarioConfig(RegionParams(l, rs), v, colors, GridSpec("square", 1, 3, 1.0),
                          K=K, **kw)


def crossing_scenario(l=0.25, rs=0.05, v=0.2, K=1000, **kw) -> ScenarioConfig:
    """Row 25 -> 32 crossed by column 4 -> 60 on the 8x8 grid; they meet at 28."""
    colors = (ColorSpec("a", 25, 32), ColorSpec("b", 4, 60))
    return ScenarioConfig(RegionParams(l, rs), v, colors, GridSpec("square", 8, 8, 1.0),
                          K=K, **kw)


# ---------------------------------------------------------------------------
# runs

def inject_failures(s):
    """Fail healthy cells with p_f and recover failed ones with p_r.

    One uniform draw per cell, in id order, every call. Protected targets
    consume their draw but never fail.
    """
    cfg = s.config
    if cfg.p_f == 0.0 and cfg.p_r == 0.0:
        return s
    u = s.rng.random(len(s.cells))
    protected = set(cfg.targets) if cfg.protect_targets else set()
    for k, cell in enumerate(s.cells):
        i = k + 1
        if cell.failed:
            if u[k] < cfg.p_r:
                recover(s, i)
        elif u[k] < cfg.p_f and i not in protected:
            fail(s, i)
    return s


@dataclass
class RunResult:
    config: ScenarioConfig
    seed: int
    consumed: dict
    throughput: dict
    summed_throughput: float
    rounds: int
    failures: int
    recoveries: int
    checked_rounds: int = 0
    trace_path: str | None = None
    state: object = field(default=None, repr=False)


def _check_round(s):
    rep = oracles.check_invariants(s)
    if not rep.ok:
        raise InvariantViolation(rep)


def _check_gate(s):
    rep = oracles.check_signal_gate(s)
    if not rep.ok:
        raise InvariantViolation(rep)


def run(cfg: ScenarioConfig, seed: int | None = None, *, check: bool = False,
        trace: str | None = None, partition=None, on_round=None,
        keep_state: bool = False) -> RunResult:
    """Run ``cfg.K`` rounds of failure injection followed by one update.

    With ``check`` the safety invariants are verified every round and the
    signal gate after every signal phase; the first failure raises
    :class:`InvariantViolation`. ``on_round(s)`` is called after each round.
    """
    seed = cfg.seed if seed is None else seed
    p = partition if partition is not None else build_partition(cfg.grid)
    s = initial_state(p, cfg, seed=seed)
    fh = open(trace, "w") if trace else None
    checked = 0
    try:
        for _ in range(cfg.K):
            inject_failures(s)
            try:
                update(s, _check_gate if check else None)
                if check:
                    _check_round(s)
                    checked += 1
            except InvariantViolation as exc:
                if fh:
                    rec = trace_record(s, locks=True)
                    rec["violations"] = exc.report.to_dict()["violations"]
                    fh.write(json.dumps(rec) + "\n")
                raise
            if fh:
                fh.write(json.dumps(trace_record(s, locks=len(cfg.colors) > 1)) + "\n")
            if on_round is not None:
                on_round(s)
    finally:
        if fh:
            fh.close()
    names = [c.name for c in cfg.colors]
    K = cfg.K
    thr = {names[c]: (s.consumed[c] / K if K else 0.0) for c in range(len(names))}
    return RunResult(cfg, seed, dict(zip(names, s.consumed)), thr,
                     sum(s.consumed) / K if K else 0.0, s.round,
                     s.failures, s.recoveries, checked, trace,
                     s if keep_state else None)


@dataclass
class SweepSpec:
    base: ScenarioConfig
    param: str
    values: list
    reps: int = 1
    seed_policy: str = "offset"   # seed = base.seed + rep

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"unknown sweep parameter {self.param!r}; "
                              f"expected one of {', '.join(SWEEP_PARAMS)}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.seed_policy not in ("offset", "fixed"):
            raise ConfigError("seed_policy must be 'offset' or 'fixed'")


def config_for(base: ScenarioConfig, param: str, value) -> ScenarioConfig:
    """Base config with one experiment axis set to ``value``."""
    keep = dict(l=base.params.l, rs=base.params.rs, v=base.v, K=base.K,
                p_f=base.p_f, p_r=base.p_r, seed=base.seed,
                lock_timeout=base.lock_timeout, spawn=base.spawn,
                protect_targets=base.protect_targets)
    if param == "turns":
        return turns_scenario(int(value), **keep)
    if param == "overlap_fraction":
        # fraction of the 8-cell path shared by the two colors
        return overlap_scenario(int(round(float(value) * 8)) if float(value) <= 1 else int(value), **keep)
    if param == "n_colors":
        return n_colors_scenario(int(value), **keep)
    if param == "K":
        return replace(base, K=int(value))
    return base.with_params(**{param: float(value)})


def _run_row(args):
    cfg, seed, param, value = args
    res = run(cfg, seed)
    return {"param": param, "value": value, "seed": seed, "throughput": res.throughput,
            "summed_throughput": res.summed_throughput, "failures": res.failures,
            "recoveries": res.recoveries}


def sweep(spec: SweepSpec, workers: int = 1) -> list[dict]:
    """One row per (value, repetition), in value-major order.

    Every generated config is validated before the first run starts.
    """
    jobs = []
    errs = []
    for value in spec.values:
        try:
            cfg = config_for(spec.base, spec.param, value)
            bad = config_violations(cfg, build_partition(cfg.grid))
        except (ConfigError, GeometryError) as exc:
            bad = [str(exc)]
            cfg = None
        if bad:
            errs.append(f"{spec.param}={value}: {'; '.join(bad)}")
            continue
        for rep in range(spec.reps):
            seed = spec.base.seed + rep if spec.seed_policy == "offset" else spec.base.seed
            jobs.append((cfg, seed, spec.param, value))
    if errs:
        raise ConfigError("; ".join(errs))
    log.info("sweep %s over %d values x %d reps", spec.param, len(spec.values), spec.reps)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_run_row, jobs))
    return [_run_row(j) for j in jobs]


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def emit_csv(rows) -> str:
    """CSV text with one line per color and a ``__sum__`` line per row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        common = (r["param"], _fmt(r["value"]), r["seed"])
        tail = (_fmt(float(r["summed_throughput"])), r["failures"], r["recoveries"])
        for name, t in r["throughput"].items():
            w.writerow(common + (name, _fmt(float(t))) + tail)
        w.writerow(common + ("__sum__", _fmt(float(r["summed_throughput"]))) + tail)
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    """Parse CSV text from :func:`emit_csv` back into plain dicts."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        rec["seed"] = int(rec["seed"])
        rec["throughput"] = float(rec["throughput"])
        rec["summed_throughput"] = float(rec["summed_throughput"])
        rec["failures"] = int(rec["failures"])
        rec["recoveries"] = int(rec["recoveries"])
        out.append(rec)
    return out


def result_row(res: RunResult, param: str = "", value="") -> dict:
    return {"param": param, "value": value, "seed": res.seed, "throughput": res.throughput,
            "summed_throughput": res.summed_throughput, "failures": res.failures,
            "recoveries": res.recoveries}


def mean_summed(rows, value) -> float:
    xs = [r["summed_throughput"] for r in rows if r["value"] == value]
    return math.fsum(xs) / len(xs)
