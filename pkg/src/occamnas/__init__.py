"""Hardware-aware search for lightweight task-specific CNNs on microcontrollers."""
from .archspace import (
    ArchDescriptor,
    InputShape,
    LayerSpec,
    SearchPoint,
    build_architecture,
    kernel_schedule,
    max_cells,
)
from .estimators import CNNClassifier, OccamNASClassifier
from .resmodel import (
    HardwareTarget,
    ResourceReport,
    SizingConfig,
    estimate_flash,
    estimate_macc,
    estimate_peak_ram,
    is_feasible,
    target_preset,
)
from .search import (
    Candidate,
    Evaluator,
    SearchConfig,
    SearchResult,
    SearchTrace,
    TableOracleEvaluator,
    TrainerEvaluator,
    explore_num_cells,
    next_k,
    run_search,
)

__version__ = "0.1.0"

__all__ = [
    "ArchDescriptor",
    "CNNClassifier",
    "Candidate",
    "Evaluator",
    "HardwareTarget",
    "InputShape",
    "LayerSpec",
    "OccamNASClassifier",
    "ResourceReport",
    "SearchConfig",
    "SearchPoint",
    "SearchResult",
    "SearchTrace",
    "SizingConfig",
    "TableOracleEvaluator",
    "TrainerEvaluator",
    "build_architecture",
    "estimate_flash",
    "estimate_macc",
    "estimate_peak_ram",
    "explore_num_cells",
    "is_feasible",
    "kernel_schedule",
    "max_cells",
    "next_k",
    "run_search",
    "target_preset",
]
