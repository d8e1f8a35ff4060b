"""Backend dispatch for a full dilution run."""

from __future__ import annotations

from typing import Callable

from .config import CapacityError, DilutionReport, ProtocolConfig
from .dense import dense_oracle_run
from .symbolic import run_symbolic, report_from

FAULTS = ("label", "ancilla", "pec_label")


def run_protocol(
    cfg: ProtocolConfig,
    inject_fault: str | None = None,
    trace: Callable | None = None,
    stepwise: bool = False,
) -> DilutionReport:
    """Run steps 1-8 and compare the output with gamma(psi)^{(x)n}.

    The symbolic engine always runs; the dense backend adds a gate-level
    end-to-end run whose distance and checks replace the label-level ones.
    """
    if inject_fault is not None and inject_fault not in FAULTS:
        raise ValueError(f"unknown fault {inject_fault!r}")
    state, cmp = run_symbolic(cfg, stepwise=stepwise, inject_fault=inject_fault, trace=trace)
    report = report_from(cfg, state, cmp, backend=cfg.backend)
    if cfg.backend == "dense":
        if inject_fault is not None:
            raise CapacityError("fault injection is symbolic only")
        dense = dense_oracle_run(cfg, "end_to_end")
        report.trace_distance_to_target = dense.d_exact
        report.ancilla_restored = report.ancilla_restored and dense.ancilla_restored
        report.x_independent = report.x_independent and dense.x_independent
        report.notes.append("distance from the dense end-to-end run")
    return report
