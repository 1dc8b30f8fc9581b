"""Physically recurrent neural networks for path-dependent composite response."""

__version__ = "0.1.0"

from .constitutive import (  # noqa: E402
    BulkProps,
    BulkState,
    CohesiveState,
    CzmProps,
    ReturnMappingError,
    czm_update,
    j2_update,
)
from .loadpaths import GpConfig, ProportionalConfig, StrainPath, gp_sample, gp_samples, proportional_path  # noqa: E402
from .network import LayerSizes, NetworkParams, NetworkState, forward_batch, forward_path, forward_step  # noqa: E402
from .network import init_params  # noqa: E402
from .oracle import Dataset, TeacherConfig, gen_dataset, teacher_build, teacher_respond  # noqa: E402
from .training import TrainConfig, evaluate, grads_bptt, loss, model_select, train  # noqa: E402

__all__ = [
    "BulkProps", "BulkState", "CohesiveState", "CzmProps", "ReturnMappingError", "czm_update", "j2_update",
    "GpConfig", "ProportionalConfig", "StrainPath", "gp_sample", "gp_samples", "proportional_path",
    "LayerSizes", "NetworkParams", "NetworkState", "forward_batch", "forward_path", "forward_step",
    "init_params", "Dataset", "TeacherConfig", "gen_dataset", "teacher_build", "teacher_respond",
    "TrainConfig", "evaluate", "grads_bptt", "loss", "model_select", "train",
]
