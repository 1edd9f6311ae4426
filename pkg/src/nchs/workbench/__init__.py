"""Run configuration, binary storage, reports and the command-line driver."""

from .config import (
    ConfigError,
    RunConfig,
    load_config,
    make_grid,
    make_initial,
    make_kernel,
    make_laws,
    make_solver,
    make_weights,
    parse_config,
)
from .presets import initial_pure, initial_random, initial_stripe, initial_vortex
from .reports import dump_fields, render_report, summarize, write_report
from .storage import (
    StorageError,
    load_control,
    load_snapshot,
    load_trajectory,
    save_control,
    save_snapshot,
    save_trajectory,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "StorageError",
    "dump_fields",
    "initial_pure",
    "initial_random",
    "initial_stripe",
    "initial_vortex",
    "load_config",
    "load_control",
    "load_snapshot",
    "load_trajectory",
    "make_grid",
    "make_initial",
    "make_kernel",
    "make_laws",
    "make_solver",
    "make_weights",
    "parse_config",
    "render_report",
    "save_control",
    "save_snapshot",
    "save_trajectory",
    "summarize",
    "write_report",
]
