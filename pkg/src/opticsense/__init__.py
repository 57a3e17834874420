"""Device-to-architecture simulator of a photonic in-sensor DNN accelerator."""
from .config import CoreConfig, TimingEnergyConstants, load_constants, load_core_config
from .errors import ConfigError, FixtureError, GeometryError, InvariantError
from .mapper import LayerSpec, Schedule, macs_per_cycle, plan_layer
from .perf import PerfReport, estimate

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CoreConfig", "FixtureError", "GeometryError", "InvariantError",
    "LayerSpec", "PerfReport", "Schedule", "TimingEnergyConstants", "estimate",
    "load_constants", "load_core_config", "macs_per_cycle", "plan_layer",
]
