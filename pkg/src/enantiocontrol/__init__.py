"""Microwave control of molecular rotors: coupling models, Lie-algebraic
controllability, pulse propagation and enantio-selective pulse design."""

from .rotor import (
    AsymTopState,
    ConfigError,
    FieldSpec,
    RotorSpec,
    SubsystemModel,
    build_subsystem,
    enantiomer_pair,
    mirror,
    preset,
)
from .lie import check_controllable, check_enantioselective, check_simultaneous_enantioselective, lie_closure
from .dynamics import PulseSequence, PulseSpec, propagate, selectivity
from .design import run_design, synchronize

__version__ = "0.1.0"
