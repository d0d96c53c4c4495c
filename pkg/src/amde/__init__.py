"""Memory-fused fast-path depth estimation on synthetic scenes.

The fast path fuses a cached multi-scale feature memory with cheap
per-frame observations through a learned per-pixel trust map. A slow path
refreshes the memory from high-quality features at a lower rate.
"""

from .errors import (
    AmdeError,
    ConfigError,
    DegenerateInputError,
    EmptyInputError,
    FormatError,
    InvalidArgumentError,
    InvariantViolation,
    ShapeError,
    StateError,
    TruncationError,
)
from .losses import LossConfig, grad_loss, mem_loss, ssi_loss, total_loss
from .metrics import LagProfile, absrel, align_lsq, cycle_average, delta1, evaluate, rmse, write_lag_csv
from .modulator import ConvGate, ModulationField, ModulatorConfig, modulate, smooth
from .projector import ProjectorParams, project, project_all
from .runtime import AsyncConfig, FastPath, Model, effective_interval, replay, run_async, run_sync
from .smu import MemoryPyramid, commit, decay_weight, fuse, init_memory, refresh
from .synthworld import SceneConfig, SyntheticWorld, generate_sequence
from .tensorcore import DepthMap, FeatureMap, bilinear_resize, conv2d_small, pointwise_linear, tensor_read, tensor_write

__version__ = "0.1.0"
