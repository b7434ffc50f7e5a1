"""Prior-free non-rigid structure from motion by independent subspace analysis."""

from .errors import (
    ConfigError,
    ConvergenceWarning,
    DegeneracyWarning,
    InputError,
    NrsfmError,
    NumericalError,
    PreconditionError,
    SingularAffinityError,
)
from .evaluation import EvalReport, PipelineConfig, evaluate, inverse_snr, reconstruct
from .factor import center, rigid_factorize, truncate
from .formats import load_model, read_tracks, save_model, write_tracks
from .model import (
    BlockMotion,
    MeasurementSet,
    NonRigidModel,
    RigidFactor,
    SubspaceSeparation,
    reproject,
)
from .synth import SynthScene, generate

__version__ = "0.1.0"

__all__ = [
    "BlockMotion", "ConfigError", "ConvergenceWarning", "DegeneracyWarning", "EvalReport",
    "InputError", "MeasurementSet", "NonRigidModel", "NrsfmError", "NumericalError",
    "PipelineConfig", "PreconditionError", "RigidFactor", "SingularAffinityError",
    "SubspaceSeparation", "SynthScene", "center", "evaluate", "generate", "inverse_snr",
    "load_model", "read_tracks", "reconstruct", "reproject", "rigid_factorize",
    "save_model", "truncate", "write_tracks",
]
