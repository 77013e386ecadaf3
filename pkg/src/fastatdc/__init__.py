"""Two-stage anomalous trajectory detection and classification on gridded data.

The package exposes the exact two-stage detector (``run_atdc``), its
sampling-accelerated variant (``run_fastatdc``), a synthetic dataset
generator, evaluation metrics and class-level score diagnostics.
"""

from fastatdc.errors import (
    AlgorithmError,
    ConfigError,
    DataError,
    DatasetTooSmallError,
    EmptyANTError,
    ZeroDenominatorError,
)
from fastatdc.trajdata import (
    ClassLabel,
    Dataset,
    GeneratorSpec,
    Trajectory,
    generate,
    load_dataset,
    save_dataset,
)
from fastatdc.scoring import (
    DEFAULT_THETA,
    DetectionConfig,
    ScoreRecord,
    Stage,
    classify,
    dis,
)
from fastatdc.pipeline import RunResult, run_atdc, run_fastatdc
from fastatdc.evaluation import MetricsReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "AlgorithmError",
    "ClassLabel",
    "ConfigError",
    "DEFAULT_THETA",
    "DataError",
    "Dataset",
    "DatasetTooSmallError",
    "DetectionConfig",
    "EmptyANTError",
    "GeneratorSpec",
    "MetricsReport",
    "RunResult",
    "ScoreRecord",
    "Stage",
    "Trajectory",
    "ZeroDenominatorError",
    "classify",
    "dis",
    "evaluate",
    "generate",
    "load_dataset",
    "run_atdc",
    "run_fastatdc",
    "save_dataset",
]
