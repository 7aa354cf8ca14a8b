"""Behavioral simulator of a 16 Kb SRAM compute-in-memory macro.

The macro computes pulse-width MACs on sign-magnitude weights and reads them
out with a differential SAR embedded in the array; MAC-folding and
boosted-clipping are switchable modes."""

from .analog import AnalogParams, NoiseParams
from .config import Config, emit_config, load_config, parse_config
from .engine import AdcCode, EngineState, ReadoutSchedule
from .errors import CimError
from .macrosys import Macro, MacroConfig, map_matrix, matmul, matvec, run_8bit
from .perf import EnergyParams

__all__ = [
    "AdcCode", "AnalogParams", "CimError", "Config", "EnergyParams", "EngineState", "Macro",
    "MacroConfig", "NoiseParams", "ReadoutSchedule", "emit_config", "load_config", "map_matrix",
    "matmul", "matvec", "parse_config", "run_8bit",
]
__version__ = "0.1.0"
