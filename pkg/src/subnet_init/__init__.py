"""BLA-based initialization of subspace-encoder neural state-space models."""

from .data import Dataset, WhSystemConfig, default_wh_config, load_dataset, simulate_wh
from .evaluation import EvalReport, nrms
from .linear_id import LinearSS, build_recon_maps, n4sid_estimate
from .subnet import SCHEMES, SubnetModel, TrainConfig, apply_init_scheme, subnet_new, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "WhSystemConfig", "default_wh_config", "load_dataset", "simulate_wh",
    "EvalReport", "nrms",
    "LinearSS", "build_recon_maps", "n4sid_estimate",
    "SCHEMES", "SubnetModel", "TrainConfig", "apply_init_scheme", "subnet_new", "train",
]
