from resilsim.fb.component import (
    Activation,
    Binding,
    ComponentInstance,
    ComponentSpec,
    SpecError,
    UnknownBehaviour,
    UnknownEvent,
    behaviour_from_dict,
    instantiate,
)
from resilsim.fb.cyclic import CyclicScheduler, cyclic_scan
from resilsim.fb.ecc import ECC, EccAction, EccError, EccTransition, Route, pipeline_ecc
from resilsim.fb.manager import Decision, ResilienceManager, rm_step
from resilsim.fb.runtime import Runtime

__all__ = [
    "Activation",
    "Binding",
    "ComponentInstance",
    "ComponentSpec",
    "CyclicScheduler",
    "Decision",
    "ECC",
    "EccAction",
    "EccError",
    "EccTransition",
    "ResilienceManager",
    "Route",
    "Runtime",
    "SpecError",
    "UnknownBehaviour",
    "UnknownEvent",
    "behaviour_from_dict",
    "cyclic_scan",
    "instantiate",
    "pipeline_ecc",
    "rm_step",
]
