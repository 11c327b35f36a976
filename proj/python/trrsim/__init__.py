from ._core import (
    METRIC_COLUMNS,
    ConfigError,
    InvariantError,
    RunReport,
    ScenarioConfig,
    ScenarioError,
    map_address,
    probe_mapping,
    run,
)

__all__ = [
    "METRIC_COLUMNS",
    "ConfigError",
    "InvariantError",
    "RunReport",
    "ScenarioConfig",
    "ScenarioError",
    "map_address",
    "probe_mapping",
    "run",
]
