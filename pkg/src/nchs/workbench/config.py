"""Plain-text run configuration: flat ``section.key = value`` lines.

The format is deliberately minimal so files stay diffable and hashable:
one assignment per line, ``#`` comments, bare or quoted strings, booleans
``true``/``false``, and IEEE ``inf``/``-inf`` where bounds need them.  All
problems in a file are collected before reporting, so a bad config fails
with the complete list instead of one error per attempt.  Unknown keys are
kept as warnings rather than errors to let configs carry annotations, but
misspelled known sections still surface loudly in the warning list.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from ..controls import CostWeights
from ..forward import SolverConfig
from ..geometry import Grid, ScalarField, VectorField
from ..kernels import FAMILIES, Kernel
from ..material import MaterialLaws, get_laws
from . import presets


class ConfigError(ValueError):
    """Raised with every collected problem of a config file."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(
            f"  - {p}" for p in self.problems))


_REQUIRED = object()

# key -> (type, default, allowed-choices or None)
_SCHEMA: dict[str, tuple[str, Any, Optional[tuple]]] = {
    "grid.nx": ("int", _REQUIRED, None),
    "grid.ny": ("int", _REQUIRED, None),
    "grid.lx": ("float", 1.0, None),
    "grid.ly": ("float", 1.0, None),
    "time.dt": ("float", _REQUIRED, None),
    "time.steps": ("int", None, None),
    "time.t_final": ("float", None, None),
    "solver.tol_div": ("float", 1e-10, None),
    "solver.tol_bound": ("float", 1e-8, None),
    "solver.tol_poisson": ("float", 1e-10, None),
    "solver.cfl_safety": ("float", 0.5, None),
    "solver.check_admissibility": ("bool", True, None),
    "kernel.family": ("str", "gaussian", FAMILIES),
    "kernel.length_scale": ("float", 0.2, None),
    "kernel.amplitude": ("float", 1.0, None),
    "kernel.core_radius": ("float", None, None),
    "material.law": ("str", "log-degenerate",
                     ("log-degenerate", "constant-mobility-quartic")),
    "material.nu0": ("float", 1.0, None),
    "material.nu_slope": ("float", 0.25, None),
    "material.allow_unsafe": ("bool", False, None),
    "initial.phase": ("str", "stripe", ("stripe", "pure", "random")),
    "initial.amplitude": ("float", 0.9, None),
    "initial.width": ("float", 0.4, None),
    "initial.shift": ("float", 0.0, None),
    "initial.interface": ("float", 0.05, None),
    "initial.sign": ("int", 1, (1, -1)),
    "initial.seed": ("int", 0, None),
    "initial.flow": ("str", "rest", ("rest", "vortex")),
    "initial.flow_amplitude": ("float", 0.0, None),
    "control.lower": ("float", -math.inf, None),
    "control.upper": ("float", math.inf, None),
    "cost.beta_track_u": ("float", 0.0, None),
    "cost.beta_track_phi": ("float", 0.0, None),
    "cost.beta_final_u": ("float", 0.0, None),
    "cost.beta_final_phi": ("float", 0.0, None),
    "cost.gamma": ("float", 0.0, None),
    "target.kind": ("str", "zero", ("zero", "self-run", "shifted-run")),
    "target.shift": ("float", 0.1, None),
    "optimize.max_iterations": ("int", 50, None),
    "optimize.step_init": ("float", 1.0, None),
    "optimize.kkt_tol": ("float", 1e-6, None),
    "optimize.armijo": ("float", 1e-4, None),
    "check.eps": ("float", 1e-5, None),
    "check.directions": ("int", 5, None),
    "check.tol": ("float", 1e-6, None),
    "output.trajectory": ("str", None, None),
    "output.control": ("str", None, None),
    "output.report": ("str", None, None),
    "output.fields_dir": ("str", None, None),
    "output.fields_every": ("int", 1, None),
}


@dataclass
class RunConfig:
    """Validated key/value store plus provenance of the source text."""

    values: dict[str, Any]
    warnings: list[str] = field(default_factory=list)
    digest: str = ""
    source: str = ""

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)


def _parse_scalar(kind: str, raw: str):
    if kind == "str":
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
            return raw[1:-1]
        return raw
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw, 0)
    if kind == "float":
        return float(raw)
    raise AssertionError(kind)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate configuration text.

    Raises ConfigError carrying every problem found; unknown keys become
    warnings on the returned object.
    """
    problems: list[str] = []
    warnings: list[str] = []
    values: dict[str, Any] = {}
    seen: set[str] = set()

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"{source}:{lineno}: expected 'section.key = value'")
            continue
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not key or "." not in key:
            problems.append(f"{source}:{lineno}: key {key!r} must look like section.key")
            continue
        if key in seen:
            problems.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        seen.add(key)
        spec = _SCHEMA.get(key)
        if spec is None:
            warnings.append(f"{source}:{lineno}: unknown key {key!r} ignored")
            continue
        kind, _, choices = spec
        try:
            val = _parse_scalar(kind, raw)
        except ValueError as exc:
            problems.append(f"{source}:{lineno}: {key} = {raw!r}: {exc}")
            continue
        if choices is not None and val not in choices:
            problems.append(
                f"{source}:{lineno}: {key} = {val!r} not in {sorted(map(str, choices))}")
            continue
        values[key] = val

    for key, (kind, default, _) in _SCHEMA.items():
        if key in values:
            continue
        if default is _REQUIRED:
            problems.append(f"{source}: missing required key {key}")
        else:
            values[key] = default

    # cross-field constraints
    if not problems:
        if values.get("time.steps") is None and values.get("time.t_final") is None:
            problems.append(f"{source}: one of time.steps or time.t_final is required")
        if values.get("time.steps") is not None and values.get("time.t_final") is not None:
            problems.append(f"{source}: give only one of time.steps and time.t_final")
        for key in ("grid.nx", "grid.ny"):
            if values.get(key, 2) < 2:
                problems.append(f"{source}: {key} must be at least 2")
        for key in ("grid.lx", "grid.ly", "time.dt", "kernel.length_scale"):
            if values.get(key, 1.0) <= 0.0:
                problems.append(f"{source}: {key} must be positive")
        if values.get("kernel.amplitude", 0.0) < 0.0:
            problems.append(f"{source}: kernel.amplitude must be nonnegative")
        if values.get("control.lower", 0.0) > values.get("control.upper", 0.0):
            problems.append(f"{source}: control.lower exceeds control.upper")
        if not 0.0 < values.get("initial.amplitude", 0.9) <= 1.0:
            problems.append(f"{source}: initial.amplitude must be in (0, 1]")
        if values.get("time.steps") is not None and values["time.steps"] < 1:
            problems.append(f"{source}: time.steps must be at least 1")

    if problems:
        raise ConfigError(problems)

    digest = hashlib.sha256(text.encode()).hexdigest()
    return RunConfig(values, warnings, digest, source)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, source=path)


# ---------------------------------------------------------------------------
# object builders


def make_grid(cfg: RunConfig) -> Grid:
    return Grid(cfg["grid.nx"], cfg["grid.ny"], cfg["grid.lx"], cfg["grid.ly"])


def make_kernel(cfg: RunConfig) -> Kernel:
    return Kernel(
        family=cfg["kernel.family"],
        length_scale=cfg["kernel.length_scale"],
        amplitude=cfg["kernel.amplitude"],
        core_radius=cfg.get("kernel.core_radius"),
    )


def make_laws(cfg: RunConfig) -> MaterialLaws:
    name = cfg["material.law"]
    if name == "log-degenerate":
        return get_laws(name, nu0=cfg["material.nu0"], nu_slope=cfg["material.nu_slope"])
    return get_laws(name)


def make_solver(cfg: RunConfig) -> SolverConfig:
    common = dict(
        tol_div=cfg["solver.tol_div"],
        tol_bound=cfg["solver.tol_bound"],
        tol_poisson=cfg["solver.tol_poisson"],
        cfl_safety=cfg["solver.cfl_safety"],
        check_admissibility=cfg["solver.check_admissibility"],
        allow_unsafe_laws=cfg["material.allow_unsafe"],
    )
    if cfg.get("time.steps") is not None:
        return SolverConfig(dt=cfg["time.dt"], n_steps=cfg["time.steps"], **common)
    return SolverConfig.from_duration(cfg["time.dt"], cfg["time.t_final"], **common)


def make_initial(cfg: RunConfig, grid: Grid,
                 shift_override: Optional[float] = None) -> tuple[ScalarField, VectorField]:
    kind = cfg["initial.phase"]
    shift = cfg["initial.shift"] if shift_override is None else shift_override
    if kind == "stripe":
        phi0 = presets.initial_stripe(
            grid,
            amplitude=cfg["initial.amplitude"],
            width=cfg["initial.width"],
            shift=shift,
            interface=cfg["initial.interface"],
        )
    elif kind == "pure":
        phi0 = presets.initial_pure(grid, sign=cfg["initial.sign"])
    else:
        phi0 = presets.initial_random(
            grid, amplitude=cfg["initial.amplitude"], seed=cfg["initial.seed"])

    if cfg["initial.flow"] == "vortex" and cfg["initial.flow_amplitude"] != 0.0:
        u0 = presets.initial_vortex(grid, cfg["initial.flow_amplitude"])
    else:
        u0 = VectorField.zeros(grid)
    return phi0, u0


def make_weights(cfg: RunConfig) -> CostWeights:
    return CostWeights(
        beta_track_u=cfg["cost.beta_track_u"],
        beta_track_phi=cfg["cost.beta_track_phi"],
        beta_final_u=cfg["cost.beta_final_u"],
        beta_final_phi=cfg["cost.beta_final_phi"],
        gamma=cfg["cost.gamma"],
    )
