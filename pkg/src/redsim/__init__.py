"""Attacker-side network attack simulator.

Simulates networks of thousands of machines at the socket and syscall
level, tracks what an attacker believes about them as probabilistic
assets, and runs attack actions with costs, noise, and probabilistic
exploit outcomes.
"""
from .control import ControlAPI, EngineThread, SocketService, serve, shutdown
from .errors import (ApiError, BusyError, ChainBrokenError, SimError,
                     ValidationError, VulnParseError)
from .exploitdb import VulnDB, outcome_distribution, parse_vulndb, resolve
from .model import (Asset, AssetTemplate, Cost, EnvCondition,
                    EnvironmentKnowledge, NoiseCategory, NoiseEvent, Param,
                    RunTime, estimate_cost)
from .scenario import (benchmark_document, load_scenario, load_scenario_file,
                       load_snapshot_file, restore_snapshot, save_snapshot,
                       scenario_document, take_snapshot)
from .world import World, WorldConfig

__version__ = "0.1.0"

__all__ = [
    "ApiError", "Asset", "AssetTemplate", "BusyError", "ChainBrokenError",
    "ControlAPI", "Cost", "EngineThread", "EnvCondition",
    "EnvironmentKnowledge", "NoiseCategory", "NoiseEvent", "Param", "RunTime",
    "SimError", "SocketService", "ValidationError", "VulnDB",
    "VulnParseError", "World", "WorldConfig", "benchmark_document",
    "estimate_cost", "load_scenario", "load_scenario_file",
    "load_snapshot_file", "outcome_distribution", "parse_vulndb", "resolve",
    "restore_snapshot", "save_snapshot", "scenario_document", "serve",
    "shutdown", "take_snapshot",
]
