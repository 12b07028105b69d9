"""Simulated codified-key safety switch for autonomous weapon platforms.

Sensing produces codified keys; fourteen switching rules gate every action a
platform may take; a black box records all of it for replay and audit.
"""

from .codec import decode_key, encode_key, verify_key
from .keys import CodifiedKey, generate_key
from .scenario import SchemaError, load_scenario
from .sim import Simulation, run_scenario
from .switch import collect_invocations, dispatch

__version__ = "0.1.0"

__all__ = ["CodifiedKey", "Simulation", "SchemaError", "collect_invocations", "decode_key", "dispatch",
           "encode_key", "generate_key", "load_scenario", "run_scenario", "verify_key"]
