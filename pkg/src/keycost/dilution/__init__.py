from .config import (
    CapacityError,
    DilutionReport,
    ProtocolConfig,
    ResourcePrivateState,
    build_resource_state,
)
from .dense import dense_oracle_run
from .formation import FormationReport, formation_protocol_run
from .protocol import run_protocol
from .symbolic import (
    BranchState,
    Step,
    StructuralError,
    SymbolicEngine,
    compare_to_target,
    exact_distance_closed_form,
    run_symbolic,
)

__all__ = [
    "BranchState",
    "CapacityError",
    "DilutionReport",
    "FormationReport",
    "ProtocolConfig",
    "ResourcePrivateState",
    "Step",
    "StructuralError",
    "SymbolicEngine",
    "build_resource_state",
    "compare_to_target",
    "dense_oracle_run",
    "exact_distance_closed_form",
    "formation_protocol_run",
    "run_protocol",
    "run_symbolic",
]
