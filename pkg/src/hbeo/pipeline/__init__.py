"""Dataset synthesis, orchestration, metrics, evaluation, and model IO."""

from .shapes import DESK_CLASS_IDS, make_class_mesh
from .dataset import DatasetConfig, DatasetManifest, RenderRecord, generate_dataset, load_manifest, save_manifest
from .metrics import completion_score_edt, completion_score_naive
from .model_io import ModelBundle, ModelFormatError, load_model, save_model
from .evaluate import EvalReport, benchmark_runtime, evaluate

__all__ = [
    "DESK_CLASS_IDS",
    "DatasetConfig",
    "DatasetManifest",
    "EvalReport",
    "ModelBundle",
    "ModelFormatError",
    "RenderRecord",
    "benchmark_runtime",
    "completion_score_edt",
    "completion_score_naive",
    "evaluate",
    "generate_dataset",
    "load_manifest",
    "load_model",
    "make_class_mesh",
    "save_manifest",
    "save_model",
]
