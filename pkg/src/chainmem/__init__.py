"""Memory-assisted state transfer through permanently coupled spin chains."""

__version__ = "0.1.0"

from .errors import (
    AnalysisError,
    ChainmemError,
    ConfigError,
    ContractError,
    DomainError,
    NumericalError,
    ResourceError,
)
from .sectors import SectorBasis, SiteLayout, enumerate_sector, split_by_region
from .hamiltonian import ChainSpec, build_chain, diagonalize, mirror_chain, random_chain, uniform_chain
from .propagator import ChainEvolver, build_T, evolve
from .protocol import (
    ProtocolSchedule,
    TrajectoryRecord,
    TransferMap,
    eta_direct,
    recovery_metrics,
    run_protocol,
    simulate,
    steps_to_survival,
    survival_bound,
    survival_curve,
    transfer_map,
)
from .analysis import (
    check_condition,
    condition_report,
    estimate_Te,
    fit_decay,
    optimize_schedule,
    scan_tau,
    spectral_radius,
)

__all__ = [
    "AnalysisError",
    "ChainEvolver",
    "ChainSpec",
    "ChainmemError",
    "ConfigError",
    "ContractError",
    "DomainError",
    "NumericalError",
    "ProtocolSchedule",
    "ResourceError",
    "SectorBasis",
    "SiteLayout",
    "TrajectoryRecord",
    "TransferMap",
    "build_T",
    "build_chain",
    "check_condition",
    "condition_report",
    "diagonalize",
    "enumerate_sector",
    "estimate_Te",
    "eta_direct",
    "evolve",
    "fit_decay",
    "mirror_chain",
    "optimize_schedule",
    "random_chain",
    "recovery_metrics",
    "run_protocol",
    "scan_tau",
    "simulate",
    "spectral_radius",
    "split_by_region",
    "steps_to_survival",
    "survival_bound",
    "survival_curve",
    "transfer_map",
    "uniform_chain",
]
