"""Decentralized joint learning of personalized stump ensembles and a sparse
collaboration graph, with bit-exact communication accounting."""

from .domain import (
    CollaborationGraph,
    Hyperparams,
    PartitionedDataset,
    SparseModel,
    StumpEnsemble,
    UserData,
    confidences,
    margin_matrix,
)
from .datagen import MoonsConfig, build_stumps, generate_moons, load_csv, oracle_graph
from .boost import FwCertificates, ModelState
from .graphlearn import GraphObjectiveCtx, ShrinkReport
from .netsim import (
    CommLedger,
    MetricsLog,
    ScheduleConfig,
    run_alternating,
    run_fixed_graph,
)
from .evaluation import (
    CvGrid,
    average_accuracy,
    cross_validate,
    predict,
    run_global_boost,
    run_linear_baselines,
    run_local_boost,
    sweep_kappa,
    sweep_lambda,
)

__version__ = "0.1.0"

__all__ = [
    "CollaborationGraph", "Hyperparams", "PartitionedDataset", "SparseModel",
    "StumpEnsemble", "UserData", "confidences", "margin_matrix",
    "MoonsConfig", "build_stumps", "generate_moons", "load_csv", "oracle_graph",
    "FwCertificates", "ModelState", "GraphObjectiveCtx", "ShrinkReport",
    "CommLedger", "MetricsLog", "ScheduleConfig", "run_alternating",
    "run_fixed_graph", "CvGrid", "average_accuracy", "cross_validate",
    "predict", "run_global_boost", "run_linear_baselines", "run_local_boost",
    "sweep_kappa", "sweep_lambda",
]
