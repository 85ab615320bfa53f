"""Experiment configuration: JSON file plus dotted ``--set`` overrides.

Schema (all blocks optional unless a command needs them)::

    {
      "master_seed": 7,                       # required by chaos / simulate
      "workers": 1,
      "output": {"dir": "out"},
      "spec": {"preset": "white", "d": 1}     # or explicit NoiseSpec fields
      "grid": {"d": 1, "L": 8.0, "N": 512, "dt": 0.001, "T": 0.25},
      "u0": {"kind": "constant_one"},
      "chaos": {"levels": [1, 2, 3], "times": [1.0], "samples": 1000000,
                "batch": 32768, "x": 0.0, "c": "fit"},
      "simulate": {"replicas": 100, "snapshots": null, "scheme": "euler",
                   "batch": 16},
      "holder": {"ensemble": null, "p": 2, "k": 6, "t_min": null,
                 "h_min": null, "h_max": null, "diagonals": [1.0, 2.0]},
      "bounds": {"levels": [1, 2, 3, 4, 5, 6], "times": [0.25, 0.5, 1.0],
                 "p": [2, 4, 8], "c": 1.0, "C": 1.0, "specs": null},
      "selftest": {"quick": false},
      "acceptance": {"criteria": null}
    }

``simulate.snapshots`` may be ``null`` (final time only), a list of times,
or ``"holder"`` for the snapshot set of the default lag design.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .chaos import MAX_LEVEL, InitialCondition
from .errors import ConfigError
from .noise import GridSpec, NoiseSpec
from .solver import SCHEMES

COMMANDS = ("selftest", "chaos", "simulate", "holder", "bounds", "report", "acceptance")

DEFAULTS = {
    "workers": 1,
    "output": {"dir": "out"},
    "spec": {"preset": "white", "d": 1},
    "grid": {"d": 1, "L": 8.0, "N": 512, "dt": 1e-3, "T": 0.25},
    "u0": {"kind": "constant_one"},
    "chaos": {"levels": [1, 2, 3], "times": [1.0], "samples": 1_000_000, "batch": 1 << 15,
              "x": 0.0, "c": "fit"},
    "simulate": {"replicas": 100, "snapshots": None, "scheme": "euler", "batch": 16},
    "holder": {"ensemble": None, "p": 2, "k": 6, "t_min": None, "h_min": None, "h_max": None,
               "diagonals": [1.0, 2.0]},
    "bounds": {"levels": [1, 2, 3, 4, 5, 6], "times": [0.25, 0.5, 1.0], "p": [2, 4, 8],
               "c": 1.0, "C": 1.0, "specs": None},
    "selftest": {"quick": False},
    "acceptance": {"criteria": None},
}

NEEDS_SEED = ("chaos", "simulate")
REPLACED = ("spec", "u0")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str):
    """``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value", [text])
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key", [text])
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.split("."), value


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for text in overrides or ():
        path, value = parse_override(text)
        node = cfg
        for p in path[:-1]:
            nxt = node.get(p)
            if not isinstance(nxt, dict):
                nxt = {}
                node[p] = nxt
            node = nxt
        node[path[-1]] = value
    return cfg


def load(path=None, overrides=()) -> dict:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", ["config"]) from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}", ["config"]) from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object", ["config"])
    return canonical(apply_overrides(raw, overrides))


def canonical(cfg: dict) -> dict:
    """Defaults filled in; ``spec``, ``grid`` and ``u0`` normalized through
    their types when they parse (invalid blocks are kept verbatim so that
    :func:`validate` can report them)."""
    out = _merge(DEFAULTS, cfg)
    # a spec or u0 that says more than its dimension replaces the default
    # preset instead of being merged into it
    for key in REPLACED:
        if isinstance(cfg.get(key), dict) and set(cfg[key]) - {"d"}:
            out[key] = copy.deepcopy(cfg[key])
    for key, cls in (("spec", NoiseSpec), ("grid", GridSpec), ("u0", InitialCondition)):
        try:
            out[key] = cls.from_dict(out[key]).to_dict()
        except (ConfigError, TypeError, ValueError):
            pass
    return json.loads(json.dumps(out, sort_keys=True))


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num_list(v):
    return isinstance(v, list) and v and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)


def problems(cfg: dict, command: str) -> list:
    """Every violated precondition as ``(field, message)``."""
    out = []
    if command not in COMMANDS:
        return [("command", f"unknown command {command!r}")]
    unknown = set(cfg) - set(DEFAULTS) - {"master_seed"}
    out += [(k, f"unknown top-level field {k!r}") for k in sorted(unknown)]
    if command in NEEDS_SEED:
        if "master_seed" not in cfg:
            out.append(("master_seed", "master_seed is required (no implicit random seed)"))
        elif not _is_int(cfg["master_seed"]) or cfg["master_seed"] < 0:
            out.append(("master_seed", "master_seed must be a nonnegative integer"))
    if not _is_int(cfg.get("workers")) or cfg["workers"] < 1:
        out.append(("workers", "workers must be a positive integer"))

    spec = grid = None
    if command in ("chaos", "simulate", "bounds"):
        try:
            spec = NoiseSpec.from_dict(cfg["spec"])
        except ConfigError as exc:
            out += [(f if f.startswith("spec") else f"spec.{f}", str(exc)) for f in exc.fields or ("spec",)]
        except (TypeError, ValueError) as exc:
            out.append(("spec", str(exc)))
        try:
            InitialCondition.from_dict(cfg["u0"])
        except (ConfigError, TypeError) as exc:
            out.append(("u0", str(exc)))
    if command == "simulate":
        try:
            grid = GridSpec(**cfg["grid"]) if isinstance(cfg["grid"], dict) else None
            if grid is None:
                out.append(("grid", "grid must be an object"))
        except ConfigError as exc:
            prob = GridSpec.problems(_GridProbe(cfg["grid"]))
            out += prob if prob else [(f, str(exc)) for f in exc.fields]
        except TypeError as exc:
            out.append(("grid", str(exc)))
        if spec is not None:
            if not spec.white:
                out.append(("spec.time_mode", "the solver supports noise white in time only"))
            out += spec.hypothesis_problems()
            if grid is not None and spec.d != grid.d:
                out.append(("grid.d", f"grid dimension {grid.d} differs from spec dimension {spec.d}"))
        sim = cfg["simulate"]
        if not _is_int(sim.get("replicas")) or sim["replicas"] < 2:
            out.append(("simulate.replicas", "replicas must be an integer >= 2"))
        if sim.get("scheme") not in SCHEMES:
            out.append(("simulate.scheme", f"scheme must be one of {SCHEMES}"))
        if not _is_int(sim.get("batch")) or sim["batch"] < 1:
            out.append(("simulate.batch", "batch must be a positive integer"))
        snaps = sim.get("snapshots")
        if snaps not in (None, "holder") and not _num_list(snaps):
            out.append(("simulate.snapshots", "snapshots must be null, 'holder' or a list of times"))
        elif grid is not None and _num_list(snaps):
            for t in snaps:
                try:
                    grid.step_index(t)
                except ConfigError:
                    out.append(("simulate.snapshots", f"time {t} is not on the step lattice"))
    if command == "chaos":
        ch = cfg["chaos"]
        lv = ch.get("levels")
        if not isinstance(lv, list) or not lv or not all(_is_int(n) and 0 <= n <= MAX_LEVEL for n in lv):
            out.append(("chaos.levels", f"levels must be integers in [0, {MAX_LEVEL}]"))
        if not _num_list(ch.get("times")) or any(t <= 0 for t in ch["times"]):
            out.append(("chaos.times", "times must be a list of positive numbers"))
        if not _is_int(ch.get("samples")) or ch["samples"] < 2:
            out.append(("chaos.samples", "samples must be an integer >= 2"))
        if not _is_int(ch.get("batch")) or ch["batch"] < 1:
            out.append(("chaos.batch", "batch must be a positive integer"))
        c = ch.get("c")
        if c != "fit" and not (isinstance(c, (int, float)) and c > 0):
            out.append(("chaos.c", "c must be 'fit' or a positive number"))
        if cfg["u0"].get("kind") == "point_mass":
            out.append(("u0.kind", "chaos variances support constant_one and gaussian_bump"))
        if spec is not None:
            out += spec.hypothesis_problems()
    if command == "holder":
        h = cfg["holder"]
        if h.get("p") not in (2, 4):
            out.append(("holder.p", "moment order must be 2 or 4"))
        if not _is_int(h.get("k")) or h["k"] < 4:
            out.append(("holder.k", "need at least 4 lags per axis"))
        if not _num_list(h.get("diagonals")) or any(c <= 0 for c in h["diagonals"]):
            out.append(("holder.diagonals", "diagonals must be positive numbers"))
    if command == "bounds":
        b = cfg["bounds"]
        if not isinstance(b.get("levels"), list) or not all(_is_int(n) and n >= 0 for n in b["levels"]):
            out.append(("bounds.levels", "levels must be nonnegative integers"))
        if not _num_list(b.get("times")) or any(t <= 0 for t in b["times"]):
            out.append(("bounds.times", "times must be positive"))
        if not _num_list(b.get("p")) or any(p < 2 for p in b["p"]):
            out.append(("bounds.p", "moment orders must be >= 2"))
        for key in ("c", "C"):
            if not (isinstance(b.get(key), (int, float)) and b[key] > 0):
                out.append((f"bounds.{key}", f"{key} must be positive"))
        if b.get("specs") is not None:
            if not isinstance(b["specs"], list):
                out.append(("bounds.specs", "specs must be a list"))
            else:
                for i, s in enumerate(b["specs"]):
                    try:
                        NoiseSpec.from_dict(s)
                    except (ConfigError, TypeError, ValueError) as exc:
                        out.append((f"bounds.specs[{i}]", str(exc)))
    if command == "acceptance":
        cr = cfg["acceptance"].get("criteria")
        if cr is not None and (not isinstance(cr, list) or not all(_is_int(k) and 1 <= k <= 10 for k in cr)):
            out.append(("acceptance.criteria", "criteria must be a list of integers 1..10"))
    return out


class _GridProbe:
    """Attribute view of a raw grid block so ``GridSpec.problems`` can list
    every violation without constructing the frozen dataclass."""

    def __init__(self, data):
        base = {"d": 1, "L": 8.0, "N": 512, "dt": 1e-3, "T": 0.25}
        base.update(data)
        self.__dict__.update(base)


def validate(cfg: dict, command: str) -> dict:
    """Raise one ``ConfigError`` listing every problem, else return ``cfg``."""
    probs = problems(cfg, command)
    if probs:
        seen, uniq = set(), []
        for f, m in probs:
            if (f, m) not in seen:
                seen.add((f, m))
                uniq.append((f, m))
        raise ConfigError("invalid configuration:\n" + "\n".join(f"  {f}: {m}" for f, m in uniq),
                          [f for f, _ in uniq])
    return cfg
