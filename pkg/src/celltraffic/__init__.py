"""Self-stabilizing traffic control of colored entities over convex cell partitions."""
from .geometry import (GridSpec, Partition, Point2, RegionParams, build_parallelogram_grid,
                       build_partition, build_snub_square_patch, build_square_grid,
                       build_triangular_grid, validate_partition)
from .harness import RunResult, SweepSpec, emit_csv, parse_config, run, sweep
from .protocol import (ColorSpec, ConfigError, ScenarioConfig, SystemState, fail,
                       initial_state, recover, update)

__all__ = [
    "GridSpec", "Partition", "Point2", "RegionParams", "build_parallelogram_grid",
    "build_partition", "build_snub_square_patch", "build_square_grid", "build_triangular_grid",
    "validate_partition", "RunResult", "SweepSpec", "emit_csv", "parse_config", "run", "sweep",
    "ColorSpec", "ConfigError", "ScenarioConfig", "SystemState", "fail", "initial_state",
    "recover", "update",
]
